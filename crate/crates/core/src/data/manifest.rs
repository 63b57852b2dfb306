//! Clip manifests (`path,label` CSV) and the K-shot split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::ppm;
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::video::VideoClip;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// Clip directory, relative to the manifest root unless absolute.
    pub path: PathBuf,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: PathBuf, rows: Vec<ManifestRow>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.label.trim().is_empty()) {
            return Err(Error::Data(format!(
                "empty label for clip {}",
                r.path.display()
            )));
        }
        Ok(Self { root, rows })
    }

    /// Reads a manifest; every listed clip directory must exist.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Data(format!(
                "manifest {} not found",
                path.display()
            )));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(e.to_string()))?
            .clone();
        if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
            return Err(Error::Data(format!(
                "{}: header must be `path,label`",
                path.display()
            )));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let row = ManifestRow {
                path: PathBuf::from(&rec[0]),
                label: rec[1].to_string(),
            };
            let full = root.join(&row.path);
            if !full.is_dir() {
                return Err(Error::Data(format!(
                    "clip directory {} does not exist",
                    full.display()
                )));
            }
            rows.push(row);
        }
        Self::new(root, rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        w.write_record(["path", "label"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for r in &self.rows {
            let p = r.path.to_string_lossy();
            w.write_record([p.as_ref(), r.label.as_str()])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sorted unique labels.
    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.rows.iter().map(|r| r.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clip_dir(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }

    pub fn load(&self, row: &ManifestRow) -> Result<VideoClip> {
        load_clip_dir(&self.clip_dir(row))
    }
}

/// Frames are the `.ppm` files of `dir` in filename order.
pub fn load_clip_dir(dir: &Path) -> Result<VideoClip> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }
    VideoClip::new(files.iter().map(|f| ppm::read(f)).collect::<Result<_>>()?)
}

/// Exactly `k` rows per label, drawn without replacement. Output rows are
/// grouped by sorted label and keep their manifest order within a label.
pub fn few_shot_split(manifest: &Manifest, k: usize, seed: u64) -> Result<Manifest> {
    if k == 0 {
        return Err(Error::invalid("shots per class must be at least 1"));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.rows.iter().enumerate() {
        by_label.entry(&r.label).or_default().push(i);
    }
    let mut rng = Rng::new(seed);
    let mut rows = Vec::with_capacity(k * by_label.len());
    for (label, mut idx) in by_label {
        if idx.len() < k {
            return Err(Error::Data(format!(
                "class `{label}` has {} clips, fewer than K={k}",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let mut pick = idx[..k].to_vec();
        pick.sort_unstable();
        rows.extend(pick.into_iter().map(|i| manifest.rows[i].clone()));
    }
    Manifest::new(manifest.root.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(counts: &[(&str, usize)]) -> Manifest {
        let rows = counts
            .iter()
            .flat_map(|&(l, n)| {
                (0..n).map(move |i| ManifestRow {
                    path: format!("{l}_{i}").into(),
                    label: l.into(),
                })
            })
            .collect();
        Manifest::new(PathBuf::new(), rows).unwrap()
    }

    #[test]
    fn k_per_class() {
        let m = fixture(&[("a", 5), ("b", 2), ("c", 9)]);
        let s = few_shot_split(&m, 2, 7).unwrap();
        assert_eq!(s.len(), 6);
        for l in ["a", "b", "c"] {
            assert_eq!(s.rows.iter().filter(|r| r.label == l).count(), 2);
        }
        // class of exactly K keeps both
        assert!(s.rows.contains(&m.rows[5]) && s.rows.contains(&m.rows[6]));
        assert_eq!(s, few_shot_split(&m, 2, 7).unwrap());
        assert!(few_shot_split(&m, 3, 7).is_err());
    }

    #[test]
    fn labels_sorted_unique() {
        let m = fixture(&[("b", 2), ("a", 1)]);
        assert_eq!(m.labels(), vec!["a", "b"]);
        assert!(Manifest::new(
            PathBuf::new(),
            vec![ManifestRow {
                path: "x".into(),
                label: " ".into()
            }]
        )
        .is_err());
    }
}
