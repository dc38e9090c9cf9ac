//! RGB image buffer with bicubic affine warping.
//!
//! Pixels are `f64` in `[0, 255]`, interleaved RGB, row-major. Interchange is
//! lossless 8-bit PNG; float precision is kept through the augmentation chain
//! and quantized only at the I/O boundary.

use std::path::Path;

use crate::error::Result;

/// Mean pixel value used both for input normalization and as the constant
/// fill for out-of-frame samples during geometric warps.
pub const PIXEL_MEAN: [f64; 3] = [123.675, 116.28, 103.53];
/// Per-channel standard deviation used for input normalization.
pub const PIXEL_STD: [f64; 3] = [58.395, 57.12, 57.375];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub h: usize,
    pub w: usize,
    /// len = h * w * 3
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            data.extend_from_slice(&rgb);
        }
        Self { h, w, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(h: usize, w: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), h * w * 3, "rgb8 buffer size");
        Self {
            h,
            w,
            data: bytes.iter().map(|b| *b as f64).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::RgbImage::from_raw(self.w as u32, self.h as u32, self.to_rgb8())
            .expect("buffer size matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self::from_rgb8(h, w, img.as_raw()))
    }

    /// Fraction of pixel positions where any channel differs by more than
    /// `tol` (on the 0..255 scale).
    pub fn differing_pixel_fraction(&self, other: &Self, tol: f64) -> f64 {
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut diff = 0usize;
        for p in 0..self.h * self.w {
            let i = p * 3;
            if (0..3).any(|c| (self.data[i + c] - other.data[i + c]).abs() > tol) {
                diff += 1;
            }
        }
        diff as f64 / (self.h * self.w) as f64
    }

    /// Catmull-Rom bicubic sample at continuous coordinates (pixel centers at
    /// integers); taps outside the frame read `fill`.
    pub fn bicubic_sample(&self, x: f64, y: f64, fill: [f64; 3]) -> [f64; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let dx = x - x0;
        let dy = y - y0;
        let mut wx = [0.0; 4];
        let mut wy = [0.0; 4];
        for t in 0..4 {
            wx[t] = catmull_rom(t as f64 - 1.0 - dx);
            wy[t] = catmull_rom(t as f64 - 1.0 - dy);
        }
        let mut out = [0.0; 3];
        for (j, wyj) in wy.iter().enumerate() {
            let sy = y0 as i64 + j as i64 - 1;
            for (i, wxi) in wx.iter().enumerate() {
                let sx = x0 as i64 + i as i64 - 1;
                let px = if sy >= 0 && sy < self.h as i64 && sx >= 0 && sx < self.w as i64 {
                    self.get(sy as usize, sx as usize)
                } else {
                    fill
                };
                let wgt = wyj * wxi;
                for c in 0..3 {
                    out[c] += wgt * px[c];
                }
            }
        }
        out
    }

    /// Resample through the inverse of a forward affine map; `out_hw` is the
    /// destination size and `fill` the constant border color.
    pub fn warp_affine(&self, forward: &Affine, out_hw: (usize, usize), fill: [f64; 3]) -> Self {
        let inv = forward.inverse();
        let mut out = ImageBuf::new(out_hw.0, out_hw.1);
        for oy in 0..out.h {
            for ox in 0..out.w {
                let (sx, sy) = inv.apply(ox as f64, oy as f64);
                let rgb = self.bicubic_sample(sx, sy, fill);
                out.set(oy, ox, [
                    rgb[0].clamp(0.0, 255.0),
                    rgb[1].clamp(0.0, 255.0),
                    rgb[2].clamp(0.0, 255.0),
                ]);
            }
        }
        out
    }
}

fn catmull_rom(t: f64) -> f64 {
    // a = -0.5 cubic interpolation kernel
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t <= 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// 2x3 affine transform over (x, y) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    /// Row-major [[a, b, tx], [c, d, ty]]: x' = a x + b y + tx.
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translate(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Self {
            m: [[sx, 0.0, 0.0], [0.0, sy, 0.0]],
        }
    }

    /// Horizontal mirror of a width-`w` image: x' = (w - 1) - x.
    pub fn flip_x(w: usize) -> Self {
        Self {
            m: [[-1.0, 0.0, w as f64 - 1.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Rotation by `deg` about (cx, cy).
    pub fn rotate_about(deg: f64, cx: f64, cy: f64) -> Self {
        let r = deg.to_radians();
        let (s, c) = r.sin_cos();
        Self {
            m: [
                [c, -s, cx - c * cx + s * cy],
                [s, c, cy - s * cx - c * cy],
            ],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Affine) -> Self {
        let a = self.m;
        let b = other.m;
        let mut m = [[0.0; 3]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for j in 0..2 {
                row[j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
            row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
        }
        Self { m }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    pub fn inverse(&self) -> Self {
        let [[a, b, tx], [c, d, ty]] = self.m;
        let det = a * d - b * c;
        assert!(det.abs() > 1e-12, "singular affine");
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(h: usize, w: usize) -> ImageBuf {
        let mut img = ImageBuf::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 4) % 2 == 0 { 200.0 } else { 30.0 };
                img.set(y, x, [v, v / 2.0, 255.0 - v]);
            }
        }
        img
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = checkerboard(32, 24);
        let out = img.warp_affine(&Affine::identity(), (32, 24), PIXEL_MEAN);
        for (a, b) in img.data.iter().zip(out.data.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rotation_fixed_point_is_center() {
        let rot = Affine::rotate_about(45.0, 10.0, 20.0);
        let (x, y) = rot.apply(10.0, 20.0);
        assert!((x - 10.0).abs() < 1e-12 && (y - 20.0).abs() < 1e-12);
    }

    #[test]
    fn flip_formula_matches() {
        let f = Affine::flip_x(48);
        assert_eq!(f.apply(0.0, 5.0), (47.0, 5.0));
        assert_eq!(f.apply(47.0, 5.0), (0.0, 5.0));
    }

    #[test]
    fn compose_then_inverse_round_trips_points() {
        let t = Affine::rotate_about(30.0, 12.0, 9.0)
            .compose(&Affine::flip_x(24))
            .compose(&Affine::translate(3.0, -2.0));
        let inv = t.inverse();
        for &(x, y) in &[(0.0, 0.0), (5.5, 7.25), (23.0, 31.0)] {
            let (fx, fy) = t.apply(x, y);
            let (bx, by) = inv.apply(fx, fy);
            assert!((bx - x).abs() < 1e-9 && (by - y).abs() < 1e-9);
        }
    }

    #[test]
    fn png_round_trip_is_lossless_for_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = checkerboard(16, 12);
        img.save_png(&path).unwrap();
        let back = ImageBuf::load_png(&path).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
        assert_eq!((back.h, back.w), (16, 12));
    }

    #[test]
    fn differing_fraction_counts_changed_pixels() {
        let a = ImageBuf::filled(10, 10, [0.0, 0.0, 0.0]);
        let mut b = a.clone();
        b.set(0, 0, [255.0, 0.0, 0.0]);
        b.set(5, 5, [0.0, 9.0, 0.0]);
        assert!((a.differing_pixel_fraction(&b, 0.5) - 0.02).abs() < 1e-12);
    }
}
