//! Procedural moving-square clips. Classes pair up by motion direction: the
//! left/down member of each pair is rendered as its right/up partner and then
//! played backwards, so the two classes differ only in frame order.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::data::manifest::{Manifest, ManifestRow};
use crate::data::ppm;
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::video::{Frame, VideoClip};

pub const COLORS: [(&str, [f64; 3]); 4] = [
    ("red", [0.95, 0.1, 0.1]),
    ("green", [0.1, 0.95, 0.1]),
    ("blue", [0.1, 0.1, 0.95]),
    ("yellow", [0.95, 0.95, 0.1]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Right,
    Left,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Right,
        Direction::Left,
        Direction::Up,
        Direction::Down,
    ];

    /// The direction whose clips are this one's frame-reversals.
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Right => Direction::Left,
            Direction::Left => Direction::Right,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    /// Left and down are rendered as reversed right and up.
    pub fn is_reversed(self) -> bool {
        matches!(self, Direction::Left | Direction::Down)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Right => "right",
            Direction::Left => "left",
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynthClass {
    pub color: usize,
    pub direction: Direction,
}

impl SynthClass {
    /// Classes enumerate color-major: red×{right,left,up,down}, then green, …
    pub fn from_id(id: usize) -> Result<Self> {
        if id >= COLORS.len() * 4 {
            return Err(Error::invalid(format!(
                "synthetic class id {id} out of range (max {})",
                COLORS.len() * 4 - 1
            )));
        }
        Ok(Self {
            color: id / 4,
            direction: Direction::ALL[id % 4],
        })
    }

    pub fn id(&self) -> usize {
        self.color * 4
            + Direction::ALL
                .iter()
                .position(|&d| d == self.direction)
                .expect("listed")
    }

    pub fn label(&self) -> String {
        format!("{} square moving {}", COLORS[self.color].0, self.direction)
    }

    pub fn partner(&self) -> SynthClass {
        SynthClass {
            color: self.color,
            direction: self.direction.opposite(),
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        (0..COLORS.len() * 4)
            .map(|i| Self::from_id(i).expect("in range"))
            .find(|c| c.label() == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid(format!(
                "synthetic frames must be at least 8×8, got {}×{}",
                self.height, self.width
            )));
        }
        if self.frames < 1 {
            return Err(Error::invalid("synthetic clips need at least one frame"));
        }
        Ok(())
    }

    fn square(&self) -> usize {
        (self.height.min(self.width) / 4).max(2)
    }
}

#[derive(Debug, Clone)]
pub struct SynthClip {
    pub class: SynthClass,
    pub clip: VideoClip,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub classes: Vec<SynthClass>,
    pub clips: Vec<SynthClip>,
}

impl SynthDataset {
    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(SynthClass::label).collect()
    }

    /// Writes one directory of PPM frames per clip plus `manifest.csv`.
    pub fn write_to(&self, root: &Path) -> Result<Manifest> {
        fs::create_dir_all(root)?;
        let mut rows = Vec::with_capacity(self.clips.len());
        for (i, c) in self.clips.iter().enumerate() {
            let name = format!("clip_{i:05}");
            let dir = root.join(&name);
            fs::create_dir_all(&dir)?;
            for (t, f) in c.clip.frames.iter().enumerate() {
                ppm::write(&dir.join(format!("frame_{t:04}.ppm")), f)?;
            }
            rows.push(ManifestRow {
                path: name.into(),
                label: c.class.label(),
            });
        }
        let manifest = Manifest::new(root.to_path_buf(), rows)?;
        manifest.write(&root.join("manifest.csv"))?;
        Ok(manifest)
    }
}

/// Renders a forward-moving (right or up) clip.
fn render_forward(
    spec: &SynthSpec,
    color: [f64; 3],
    vertical: bool,
    rng: &mut Rng,
) -> Result<VideoClip> {
    let s = spec.square();
    let (along, across) = if vertical {
        (spec.height, spec.width)
    } else {
        (spec.width, spec.height)
    };
    let room = along - s;
    let step = if spec.frames > 1 {
        (room / (spec.frames - 1)).max(1)
    } else {
        0
    };
    let travel = (step * spec.frames.saturating_sub(1)).min(room);
    let start = rng.range_inclusive(0, room - travel);
    let offset = rng.range_inclusive(0, across - s);
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut f = Frame::filled(spec.height, spec.width, 0.0);
        for v in f.data.iter_mut() {
            *v = 0.15 + 0.15 * rng.uniform();
        }
        let pos = (start + t * step).min(room);
        // "up" runs from the bottom edge towards the top
        let (top, left) = if vertical {
            (room - pos, offset)
        } else {
            (offset, pos)
        };
        for y in top..top + s {
            for x in left..left + s {
                f.set_pixel(y, x, color);
            }
        }
        frames.push(f);
    }
    VideoClip::new(frames)
}

/// One clip of `class`; the stream `(seed, class, index)` fully determines it.
pub fn render_clip(
    spec: &SynthSpec,
    class: SynthClass,
    index: usize,
    seed: u64,
) -> Result<VideoClip> {
    spec.validate()?;
    let mut rng = Rng::derive(seed, (class.id() as u64) << 32 | index as u64);
    let vertical = matches!(class.direction, Direction::Up | Direction::Down);
    let clip = render_forward(spec, COLORS[class.color].1, vertical, &mut rng)?;
    Ok(if class.direction.is_reversed() {
        clip.reversed()
    } else {
        clip
    })
}

/// `clips_per_class` clips for each listed class, grouped by class.
pub fn generate_classes(
    classes: &[SynthClass],
    clips_per_class: usize,
    spec: &SynthSpec,
    seed: u64,
) -> Result<SynthDataset> {
    spec.validate()?;
    if classes.is_empty() || clips_per_class == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs at least one class and one clip per class",
        ));
    }
    let mut clips = Vec::with_capacity(classes.len() * clips_per_class);
    for &class in classes {
        for j in 0..clips_per_class {
            clips.push(SynthClip {
                class,
                clip: render_clip(spec, class, j, seed)?,
            });
        }
    }
    Ok(SynthDataset {
        classes: classes.to_vec(),
        clips,
    })
}

/// The first `num_classes` classes in color-major order.
pub fn generate_synthetic(
    num_classes: usize,
    clips_per_class: usize,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<SynthDataset> {
    let classes = (0..num_classes)
        .map(SynthClass::from_id)
        .collect::<Result<Vec<_>>>()?;
    generate_classes(
        &classes,
        clips_per_class,
        &SynthSpec {
            frames,
            height,
            width,
        },
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_partners() {
        let c = SynthClass::from_id(1).unwrap();
        assert_eq!(c.label(), "red square moving left");
        assert_eq!(c.partner().label(), "red square moving right");
        assert_eq!(SynthClass::parse("green square moving up").unwrap().id(), 6);
        assert!(SynthClass::from_id(16).is_err());
    }

    #[test]
    fn left_is_reversed_right() {
        let spec = SynthSpec {
            frames: 4,
            height: 16,
            width: 16,
        };
        let right = render_forward(&spec, COLORS[0].1, false, &mut Rng::derive(3, 0)).unwrap();
        let mut rng = Rng::derive(3, 0);
        let left = render_forward(&spec, COLORS[0].1, false, &mut rng)
            .unwrap()
            .reversed();
        assert_eq!(left, right.reversed());
        // square actually moves
        assert_ne!(right.frames[0], right.frames[3]);
    }

    #[test]
    fn degenerate_extents() {
        assert!(generate_synthetic(4, 1, 4, 7, 16, 0).is_err());
        assert!(generate_synthetic(4, 0, 4, 8, 8, 0).is_err());
    }
}
