use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One RGB frame, channel-last, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "frame {height}×{width}×3 with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Window of `height × width` starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {height}×{width} at ({top},{left}) outside {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Frame::new(height, width, data)
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resize(&self, height: usize, width: usize) -> Frame {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Frame::filled(height, width, 0.0);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let (a, b, c, d) = (
                    self.pixel(y0, x0),
                    self.pixel(y0, x1),
                    self.pixel(y1, x0),
                    self.pixel(y1, x1),
                );
                let mut px = [0.0; 3];
                for ch in 0..3 {
                    let top = a[ch] * (1.0 - wx) + b[ch] * wx;
                    let bot = c[ch] * (1.0 - wx) + d[ch] * wx;
                    px[ch] = top * (1.0 - wy) + bot * wy;
                }
                out.set_pixel(y, x, px);
            }
        }
        out
    }
}

/// `T` sampled frames of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::shape("clip with no frames"))?;
        let (h, w) = (first.height, first.width);
        if frames.iter().any(|f| f.height != h || f.width != w) {
            return Err(Error::shape("clip frames differ in size"));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Same frames in the given order.
    pub fn permuted(&self, order: &[usize]) -> VideoClip {
        VideoClip {
            frames: order.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }

    pub fn reversed(&self) -> VideoClip {
        VideoClip {
            frames: self.frames.iter().rev().cloned().collect(),
        }
    }
}

/// Splits a frame into `N = HW/P²` non-overlapping patches in row-major patch
/// order; each row of the result is one patch flattened channel-last
/// (`P·P·3` values).
pub fn patchify(frame: &Frame, patch: usize) -> Result<Tensor> {
    if patch == 0 || !frame.height.is_multiple_of(patch) || !frame.width.is_multiple_of(patch) {
        return Err(Error::shape(format!(
            "{}×{} frame not divisible into {patch}×{patch} patches",
            frame.height, frame.width
        )));
    }
    let (ph, pw) = (frame.height / patch, frame.width / patch);
    let per = patch * patch * 3;
    let mut data = Vec::with_capacity(ph * pw * per);
    for py in 0..ph {
        for px in 0..pw {
            for r in 0..patch {
                let y = py * patch + r;
                let start = (y * frame.width + px * patch) * 3;
                data.extend_from_slice(&frame.data[start..start + patch * 3]);
            }
        }
    }
    Tensor::new(&[ph * pw, per], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Frame {
        Frame::new(h, w, (0..h * w * 3).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn patch_counts() {
        let p = patchify(&Frame::filled(8, 8, 0.0), 4).unwrap();
        assert_eq!(p.shape(), &[4, 48]);
        let p = patchify(&Frame::filled(224, 224, 0.0), 32).unwrap();
        assert_eq!(p.rows(), 49);
    }

    #[test]
    fn non_divisible_frame_rejected() {
        assert!(patchify(&Frame::filled(10, 8, 0.0), 4).is_err());
    }

    #[test]
    fn patch_layout_is_row_major_channel_last() {
        let f = ramp(4, 4);
        let p = patchify(&f, 2).unwrap();
        // second patch (top-right) starts at pixel (0, 2)
        assert_eq!(&p.row_slice(1)[..3], &f.pixel(0, 2));
        // its fourth pixel is (1, 3)
        assert_eq!(&p.row_slice(1)[9..12], &f.pixel(1, 3));
        // third patch is bottom-left
        assert_eq!(&p.row_slice(2)[..3], &f.pixel(2, 0));
    }

    #[test]
    fn crop_and_resize_identity() {
        let f = ramp(6, 6);
        assert_eq!(f.resize(6, 6), f);
        let c = f.crop(1, 2, 3, 3).unwrap();
        assert_eq!(c.pixel(0, 0), f.pixel(1, 2));
        assert!(f.crop(4, 4, 3, 3).is_err());
    }
}
