//! Frame index selection: segment-based sparse sampling and fixed-stride dense
//! windows. Every returned list has length `T`, stays inside `[0, F)` and is
//! non-decreasing.

use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Sparse,
    Dense { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipSpec {
    pub source_frames: usize,
    pub frames: usize,
    pub mode: SamplingMode,
    pub deterministic: bool,
    pub seed: u64,
}

impl ClipSpec {
    pub fn sample(&self) -> Result<Vec<usize>> {
        match self.mode {
            SamplingMode::Sparse => sparse_sample(self),
            SamplingMode::Dense { .. } => dense_sample(self),
        }
    }

    /// Deterministic indices for temporal view `view` of `views`.
    pub fn sample_view(&self, view: usize, views: usize) -> Result<Vec<usize>> {
        if views == 0 || view >= views {
            return Err(Error::invalid(format!("view {view} of {views}")));
        }
        match self.mode {
            SamplingMode::Sparse => sparse_at(
                self.source_frames,
                self.frames,
                (view as f64 + 0.5) / views as f64,
            ),
            SamplingMode::Dense { stride } => {
                check_counts(self.source_frames, self.frames)?;
                let span = dense_span(self.frames, stride)?;
                let room = self.source_frames.saturating_sub(span);
                let start = if views == 1 {
                    room / 2
                } else {
                    ((view * room) as f64 / (views - 1) as f64).round() as usize
                };
                Ok(dense_window(self.source_frames, self.frames, stride, start))
            }
        }
    }
}

fn check_counts(source: usize, frames: usize) -> Result<()> {
    if frames < 1 {
        return Err(Error::invalid("requested frame count must be at least 1"));
    }
    if source < 1 {
        return Err(Error::invalid("source clip has no frames"));
    }
    Ok(())
}

/// Clips shorter than `T` repeat frames: index `k` is `round(k·F/T)` clamped.
fn short_clip(source: usize, frames: usize) -> Vec<usize> {
    (0..frames)
        .map(|k| {
            ((k * source) as f64 / frames as f64)
                .round()
                .min((source - 1) as f64) as usize
        })
        .collect()
}

fn segment_bounds(source: usize, frames: usize, k: usize) -> (usize, usize) {
    let lo = k * source / frames;
    let hi = ((k + 1) * source / frames).max(lo + 1) - 1;
    (lo, hi.min(source - 1))
}

/// Position `frac ∈ (0, 1)` inside each of `T` equal segments.
fn sparse_at(source: usize, frames: usize, frac: f64) -> Result<Vec<usize>> {
    check_counts(source, frames)?;
    if source < frames {
        return Ok(short_clip(source, frames));
    }
    let seg = source as f64 / frames as f64;
    Ok((0..frames)
        .map(|k| {
            let (lo, hi) = segment_bounds(source, frames, k);
            let pos = ((k as f64 + frac) * seg - 0.5).floor().max(0.0) as usize;
            pos.clamp(lo, hi)
        })
        .collect())
}

/// Splits `[0, F)` into `T` equal segments and takes one frame from each: the
/// segment center when deterministic, a uniform draw otherwise.
pub fn sparse_sample(spec: &ClipSpec) -> Result<Vec<usize>> {
    let (source, frames) = (spec.source_frames, spec.frames);
    check_counts(source, frames)?;
    if spec.deterministic || source < frames {
        return sparse_at(source, frames, 0.5);
    }
    let mut rng = Rng::new(spec.seed);
    Ok((0..frames)
        .map(|k| {
            let (lo, hi) = segment_bounds(source, frames, k);
            rng.range_inclusive(lo, hi)
        })
        .collect())
}

fn dense_span(frames: usize, stride: usize) -> Result<usize> {
    if stride < 1 {
        return Err(Error::invalid("dense stride must be at least 1"));
    }
    Ok((frames - 1) * stride + 1)
}

fn dense_window(source: usize, frames: usize, stride: usize, start: usize) -> Vec<usize> {
    (0..frames)
        .map(|k| (start + k * stride).min(source - 1))
        .collect()
}

/// Contiguous window of `T` frames at stride `s`, centered when deterministic
/// and uniformly placed otherwise; indices past the end clamp to `F − 1`.
pub fn dense_sample(spec: &ClipSpec) -> Result<Vec<usize>> {
    let SamplingMode::Dense { stride } = spec.mode else {
        return Err(Error::invalid("dense_sample needs a dense spec"));
    };
    check_counts(spec.source_frames, spec.frames)?;
    let span = dense_span(spec.frames, stride)?;
    let room = spec.source_frames.saturating_sub(span);
    let start = if spec.deterministic {
        room / 2
    } else {
        Rng::new(spec.seed).range_inclusive(0, room)
    };
    Ok(dense_window(spec.source_frames, spec.frames, stride, start))
}

/// Window starting at an explicit frame.
pub fn dense_sample_from(
    source: usize,
    frames: usize,
    stride: usize,
    start: usize,
) -> Result<Vec<usize>> {
    check_counts(source, frames)?;
    dense_span(frames, stride)?;
    Ok(dense_window(source, frames, stride, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(
        source: usize,
        frames: usize,
        mode: SamplingMode,
        deterministic: bool,
        seed: u64,
    ) -> ClipSpec {
        ClipSpec {
            source_frames: source,
            frames,
            mode,
            deterministic,
            seed,
        }
    }

    #[test]
    fn sparse_centers() {
        let idx = sparse_sample(&spec(80, 8, SamplingMode::Sparse, true, 0)).unwrap();
        assert_eq!(idx, vec![4, 14, 24, 34, 44, 54, 64, 74]);
        // seed does not matter in deterministic mode
        assert_eq!(
            idx,
            sparse_sample(&spec(80, 8, SamplingMode::Sparse, true, 99)).unwrap()
        );
    }

    #[test]
    fn sparse_stochastic_within_segments() {
        for seed in 0..50 {
            let idx = sparse_sample(&spec(80, 8, SamplingMode::Sparse, false, seed)).unwrap();
            for (k, &i) in idx.iter().enumerate() {
                assert!((10 * k..=10 * k + 9).contains(&i));
            }
        }
        let a = sparse_sample(&spec(80, 8, SamplingMode::Sparse, false, 5)).unwrap();
        assert_eq!(
            a,
            sparse_sample(&spec(80, 8, SamplingMode::Sparse, false, 5)).unwrap()
        );
    }

    #[test]
    fn sparse_short_clip_repeats() {
        let idx = sparse_sample(&spec(3, 8, SamplingMode::Sparse, true, 0)).unwrap();
        assert_eq!(idx, vec![0, 0, 1, 1, 2, 2, 2, 2]);
        assert!(sparse_sample(&spec(3, 0, SamplingMode::Sparse, true, 0)).is_err());
    }

    #[test]
    fn dense_cases() {
        assert_eq!(
            dense_sample_from(64, 8, 2, 0).unwrap(),
            vec![0, 2, 4, 6, 8, 10, 12, 14]
        );
        let d = dense_sample(&spec(8, 8, SamplingMode::Dense { stride: 1 }, true, 0)).unwrap();
        assert_eq!(d, (0..8).collect::<Vec<_>>());
        let d = dense_sample(&spec(4, 8, SamplingMode::Dense { stride: 2 }, true, 0)).unwrap();
        assert_eq!(d, vec![0, 2, 3, 3, 3, 3, 3, 3]);
        assert!(dense_sample(&spec(8, 8, SamplingMode::Dense { stride: 0 }, true, 0)).is_err());
    }

    #[test]
    fn single_view_is_center() {
        let s = spec(80, 8, SamplingMode::Sparse, true, 0);
        assert_eq!(s.sample_view(0, 1).unwrap(), s.sample().unwrap());
        let views: Vec<_> = (0..4).map(|v| s.sample_view(v, 4).unwrap()).collect();
        assert_eq!(views[0][0], 0);
        assert_eq!(views[3][0], 8);
    }
}
