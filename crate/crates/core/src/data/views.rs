//! Frame fitting and eval-time views: temporal clips times spatial crops.

use crate::data::sampling::ClipSpec;
use crate::error::{Error, Result};
use crate::video::{Frame, VideoClip};

/// Scales `frame` so it covers `height × width` (shorter relative side fits),
/// then takes `crops` windows: 1 = center; 3 = start, center and end of the
/// axis with the most slack.
pub fn spatial_crops(
    frame: &Frame,
    height: usize,
    width: usize,
    crops: usize,
) -> Result<Vec<Frame>> {
    if !matches!(crops, 1 | 3) {
        return Err(Error::invalid(format!(
            "spatial crops must be 1 or 3, got {crops}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("crop extents must be positive"));
    }
    let scale = (height as f64 / frame.height as f64).max(width as f64 / frame.width as f64);
    let nh = ((frame.height as f64 * scale).round() as usize).max(height);
    let nw = ((frame.width as f64 * scale).round() as usize).max(width);
    let resized = frame.resize(nh, nw);
    let (sy, sx) = (nh - height, nw - width);
    let offsets: Vec<(usize, usize)> = if crops == 1 {
        vec![(sy / 2, sx / 2)]
    } else if sx >= sy {
        vec![(sy / 2, 0), (sy / 2, sx / 2), (sy / 2, sx)]
    } else {
        vec![(0, sx / 2), (sy / 2, sx / 2), (sy, sx / 2)]
    };
    offsets
        .into_iter()
        .map(|(y, x)| resized.crop(y, x, height, width))
        .collect()
}

/// The frames at `indices`, each fitted to `height × width` by center crop.
pub fn fit_clip(
    clip: &VideoClip,
    indices: &[usize],
    height: usize,
    width: usize,
) -> Result<VideoClip> {
    let frames = indices
        .iter()
        .map(|&i| {
            let f = clip
                .frames
                .get(i)
                .ok_or_else(|| Error::invalid(format!("frame index {i} out of range")))?;
            Ok(spatial_crops(f, height, width, 1)?.remove(0))
        })
        .collect::<Result<_>>()?;
    VideoClip::new(frames)
}

/// `views × crops` clips of `spec.frames` frames each, temporal-major.
pub fn extract_views(
    clip: &VideoClip,
    spec: &ClipSpec,
    views: usize,
    height: usize,
    width: usize,
    crops: usize,
) -> Result<Vec<VideoClip>> {
    let mut out = Vec::with_capacity(views * crops);
    for v in 0..views {
        let idx = spec.sample_view(v, views)?;
        let per_frame: Vec<Vec<Frame>> = idx
            .iter()
            .map(|&i| spatial_crops(&clip.frames[i], height, width, crops))
            .collect::<Result<_>>()?;
        for c in 0..crops {
            out.push(VideoClip::new(
                per_frame.iter().map(|f| f[c].clone()).collect(),
            )?);
        }
    }
    Ok(out)
}
