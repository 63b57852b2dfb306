use std::collections::VecDeque;

use crate::data::{Manifest, SynthDataset};
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::video::VideoClip;

#[derive(Debug, Clone)]
pub struct Sample {
    pub clip: VideoClip,
    /// Index into [`Dataset::labels`].
    pub label: usize,
}

/// In-memory clips with a sorted label vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(pairs: Vec<(VideoClip, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let mut labels: Vec<String> = pairs.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        let samples = pairs
            .into_iter()
            .map(|(clip, l)| Sample {
                clip,
                label: labels.binary_search(&l).expect("collected above"),
            })
            .collect();
        Ok(Self { labels, samples })
    }

    pub fn from_synth(ds: &SynthDataset) -> Result<Self> {
        Self::new(
            ds.clips
                .iter()
                .map(|c| (c.clip.clone(), c.class.label()))
                .collect(),
        )
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        Self::new(
            m.rows
                .iter()
                .map(|r| Ok((m.load(r)?, r.label.clone())))
                .collect::<Result<_>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_of(&self, i: usize) -> &str {
        &self.labels[self.samples[i].label]
    }

    /// Keeps only samples whose label is in `keep`.
    pub fn filter_labels(&self, keep: &[String]) -> Result<Self> {
        Self::new(
            self.samples
                .iter()
                .filter(|s| keep.contains(&self.labels[s.label]))
                .map(|s| (s.clip.clone(), self.labels[s.label].clone()))
                .collect(),
        )
    }
}

/// Splits sample indices into batches holding at most one sample per label.
/// Labels with the most remaining samples are served first (ties in a seeded
/// random order), so classes drain evenly. Every index appears exactly once.
pub fn plan_batches(labels: &[usize], batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); classes];
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    rng.shuffle(&mut idx);
    for i in idx {
        queues[labels[i]].push_back(i);
    }
    let mut rank: Vec<usize> = (0..classes).collect();
    rng.shuffle(&mut rank);
    let mut out = Vec::new();
    loop {
        let mut order: Vec<usize> = (0..classes).filter(|&c| !queues[c].is_empty()).collect();
        if order.is_empty() {
            break;
        }
        order.sort_by_key(|&c| (std::cmp::Reverse(queues[c].len()), rank[c]));
        let b: Vec<usize> = order
            .iter()
            .take(batch.max(1))
            .map(|&c| queues[c].pop_front().expect("non-empty"))
            .collect();
        out.push(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_once_with_unique_labels() {
        let labels = [0, 0, 0, 1, 1, 2, 3, 3, 3, 3];
        let plan = plan_batches(&labels, 3, &mut Rng::new(4));
        let mut seen: Vec<usize> = plan.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for b in &plan {
            let mut l: Vec<usize> = b.iter().map(|&i| labels[i]).collect();
            l.sort_unstable();
            l.dedup();
            assert_eq!(l.len(), b.len());
            assert!(b.len() <= 3);
        }
        assert_eq!(plan, plan_batches(&labels, 3, &mut Rng::new(4)));
    }
}
