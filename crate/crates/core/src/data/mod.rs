//! Frame sampling, on-disk clips and the synthetic motion dataset.

pub mod manifest;
pub mod ppm;
pub mod sampling;
pub mod synth;
pub mod views;

pub use manifest::{few_shot_split, load_clip_dir, Manifest, ManifestRow};
pub use sampling::{dense_sample, dense_sample_from, sparse_sample, ClipSpec, SamplingMode};
pub use synth::{
    generate_classes, generate_synthetic, render_clip, Direction, SynthClass, SynthDataset,
    SynthSpec,
};
pub use views::{extract_views, fit_clip, spatial_crops};
