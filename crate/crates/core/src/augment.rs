//! Data augmentation: appearance transforms drawn independently per image,
//! geometric transforms drawn once per pose group and applied identically to
//! every image in it, with keypoints mapped through the same affine chain.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{Affine, ImageBuf, PIXEL_MEAN};
use crate::pose::{PoseLabel, FLIP_PAIRS, NUM_KEYPOINTS};
use crate::sample::SampleGroup;

/// Crop window in source pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub h: usize,
    pub w: usize,
}

/// One draw of the per-group geometric transform chain:
/// flip -> rotate about center -> crop -> resize to `target_hw`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricParams {
    pub flip: bool,
    pub rotate_deg: f64,
    pub crop: CropBox,
    pub target_hw: (usize, usize),
}

/// Per-image appearance transform draw. `None`/`false` fields were skipped
/// by their probability gate.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceParams {
    /// brightness, contrast, saturation, hue offsets, each in [-0.2, 0.2].
    pub jitter: Option<[f64; 4]>,
    /// Odd Gaussian kernel size in [3, 7].
    pub blur_kernel: Option<usize>,
    pub to_gray: bool,
    pub solarize: bool,
    pub solarize_threshold: f64,
}

impl AppearanceParams {
    pub fn identity() -> Self {
        Self {
            jitter: None,
            blur_kernel: None,
            to_gray: false,
            solarize: false,
            solarize_threshold: 128.0,
        }
    }
}

const ROTATE_LIMIT_DEG: f64 = 45.0;
const CROP_SCALE: (f64, f64) = (0.8, 1.0);
const CROP_RATIO: (f64, f64) = (3.0 / 8.0, 2.0 / 3.0);

fn draw_crop(rng: &mut impl Rng, hw: (usize, usize)) -> CropBox {
    let (h, w) = hw;
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target_area = area * rng.gen_range(CROP_SCALE.0..=CROP_SCALE.1);
        let aspect = rng.gen_range(CROP_RATIO.0.ln()..=CROP_RATIO.1.ln()).exp();
        let cw = (target_area * aspect).sqrt().round() as usize;
        let ch = (target_area / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let ratio = (cw * ch) as f64 / area;
            if ratio < CROP_SCALE.0 || ratio > CROP_SCALE.1 {
                continue; // rounding pushed the realized scale out of range
            }
            let top = rng.gen_range(0..=h - ch);
            let left = rng.gen_range(0..=w - cw);
            return CropBox { top, left, h: ch, w: cw };
        }
    }
    // Fallback: clamp aspect to the allowed range and center the crop.
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < CROP_RATIO.0 {
        let cw = w;
        (((cw as f64 / CROP_RATIO.0).round() as usize).min(h), cw)
    } else if in_ratio > CROP_RATIO.1 {
        let ch = h;
        (ch, ((ch as f64 * CROP_RATIO.1).round() as usize).min(w))
    } else {
        (h, w)
    };
    CropBox {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        h: ch,
        w: cw,
    }
}

/// Draw the per-group geometric parameters. `strong = false` reproduces the
/// weaker flip + crop setting (no rotation).
pub fn draw_geometric(rng: &mut impl Rng, image_hw: (usize, usize), strong: bool) -> GeometricParams {
    let flip = rng.gen_bool(0.5);
    let rotate_deg = if strong {
        rng.gen_range(-ROTATE_LIMIT_DEG..=ROTATE_LIMIT_DEG)
    } else {
        0.0
    };
    let crop = draw_crop(rng, image_hw);
    GeometricParams {
        flip,
        rotate_deg,
        crop,
        target_hw: image_hw,
    }
}

/// Draw the per-image appearance parameters. `strong = false` disables all
/// appearance transforms.
pub fn draw_appearance(rng: &mut impl Rng, strong: bool) -> AppearanceParams {
    if !strong {
        return AppearanceParams::identity();
    }
    let jitter = if rng.gen_bool(0.8) {
        let mut j = [0.0; 4];
        for v in &mut j {
            *v = rng.gen_range(-0.2..=0.2);
        }
        Some(j)
    } else {
        None
    };
    let blur_kernel = if rng.gen_bool(0.8) {
        Some(*[3usize, 5, 7].get(rng.gen_range(0..3)).unwrap())
    } else {
        None
    };
    let to_gray = rng.gen_bool(0.2);
    let solarize = rng.gen_bool(0.2);
    AppearanceParams {
        jitter,
        blur_kernel,
        to_gray,
        solarize,
        solarize_threshold: 128.0,
    }
}

/// Forward pixel-coordinate map of the full geometric chain.
pub fn geometric_affine(params: &GeometricParams, src_hw: (usize, usize)) -> Affine {
    let (h, w) = src_hw;
    let mut a = if params.flip {
        Affine::flip_x(w)
    } else {
        Affine::identity()
    };
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    a = Affine::rotate_about(params.rotate_deg, cx, cy).compose(&a);
    a = Affine::translate(-(params.crop.left as f64), -(params.crop.top as f64)).compose(&a);
    let sx = params.target_hw.1 as f64 / params.crop.w as f64;
    let sy = params.target_hw.0 as f64 / params.crop.h as f64;
    // Pixel-center accurate resize: x' = (x + 0.5) * s - 0.5
    let resize = Affine {
        m: [[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5]],
    };
    resize.compose(&a)
}

/// Apply one geometric draw to a whole group: all images warped identically,
/// keypoints mapped through the same affine, left/right indices swapped on
/// flip, and keypoints leaving the frame marked invisible.
pub fn apply_geometric(group: &SampleGroup, params: &GeometricParams) -> Result<SampleGroup> {
    let src_hw = group.image_hw();
    if params.crop.h == 0 || params.crop.w == 0 {
        return Err(Error::invariant("crop_box", "degenerate crop with zero area"));
    }
    if params.crop.top + params.crop.h > src_hw.0 || params.crop.left + params.crop.w > src_hw.1 {
        return Err(Error::invariant("crop_box", "crop outside the image frame"));
    }
    let affine = geometric_affine(params, src_hw);
    let images: Vec<ImageBuf> = group
        .images
        .iter()
        .map(|img| img.warp_affine(&affine, params.target_hw, PIXEL_MEAN))
        .collect();

    let mut keypoints = [[0.0; 2]; NUM_KEYPOINTS];
    let mut visibility = group.pose.visibility;
    for i in 0..NUM_KEYPOINTS {
        let (x, y) = affine.apply(group.pose.keypoints[i][0], group.pose.keypoints[i][1]);
        keypoints[i] = [x, y];
    }
    if params.flip {
        for &(l, r) in &FLIP_PAIRS {
            keypoints.swap(l, r);
            visibility.swap(l, r);
        }
    }
    let (th, tw) = (params.target_hw.0 as f64, params.target_hw.1 as f64);
    for i in 0..NUM_KEYPOINTS {
        let [x, y] = keypoints[i];
        if !(x >= 0.0 && x <= tw - 1.0 && y >= 0.0 && y <= th - 1.0) {
            visibility[i] = false;
        }
    }
    let pose = PoseLabel::new(keypoints, visibility, group.pose.pose_id.clone());
    SampleGroup::new(pose, images, group.caption.clone())
}

fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let r = rgb[0] / 255.0;
    let g = rgb[1] / 255.0;
    let b = rgb[2] / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / d).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn apply_jitter(img: &mut ImageBuf, j: [f64; 4]) {
    let [b, c, s, hue] = j;
    // brightness
    let fb = 1.0 + b;
    for v in img.data.iter_mut() {
        *v = (*v * fb).clamp(0.0, 255.0);
    }
    // contrast about the mean luma
    let mean: f64 = (0..img.h * img.w)
        .map(|p| luma([img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]]))
        .sum::<f64>()
        / (img.h * img.w) as f64;
    let fc = 1.0 + c;
    for v in img.data.iter_mut() {
        *v = (mean + fc * (*v - mean)).clamp(0.0, 255.0);
    }
    // saturation about per-pixel luma
    let fs = 1.0 + s;
    for p in 0..img.h * img.w {
        let i = p * 3;
        let l = luma([img.data[i], img.data[i + 1], img.data[i + 2]]);
        for k in 0..3 {
            img.data[i + k] = (l + fs * (img.data[i + k] - l)).clamp(0.0, 255.0);
        }
    }
    // hue rotation; the [-0.2, 0.2] factor is a fraction of the color wheel
    if hue != 0.0 {
        for p in 0..img.h * img.w {
            let i = p * 3;
            let mut hsv = rgb_to_hsv([img.data[i], img.data[i + 1], img.data[i + 2]]);
            hsv[0] += hue * 360.0;
            let rgb = hsv_to_rgb(hsv);
            for k in 0..3 {
                img.data[i + k] = rgb[k].clamp(0.0, 255.0);
            }
        }
    }
}

/// Reflect-101 index (no edge duplication), e.g. -1 -> 1, n -> n-2.
fn reflect101(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_blur(img: &ImageBuf, kernel: usize) -> ImageBuf {
    let sigma = 0.3 * ((kernel as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (kernel / 2) as i64;
    let mut weights = Vec::with_capacity(kernel);
    let mut sum = 0.0;
    for t in -half..=half {
        let w = (-(t as f64 * t as f64) / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    for w in &mut weights {
        *w /= sum;
    }
    // horizontal pass
    let mut tmp = ImageBuf::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let mut acc = [0.0; 3];
            for (wi, t) in (-half..=half).enumerate() {
                let sx = reflect101(x as i64 + t, img.w);
                let px = img.get(y, sx);
                for c in 0..3 {
                    acc[c] += weights[wi] * px[c];
                }
            }
            tmp.set(y, x, acc);
        }
    }
    // vertical pass
    let mut out = ImageBuf::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let mut acc = [0.0; 3];
            for (wi, t) in (-half..=half).enumerate() {
                let sy = reflect101(y as i64 + t, img.h);
                let px = tmp.get(sy, x);
                for c in 0..3 {
                    acc[c] += weights[wi] * px[c];
                }
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Pixel-only transform; dimensions and keypoints are untouched.
/// Sub-transform order follows the augmentation table: color jitter,
/// blur, grayscale, solarize.
pub fn apply_appearance(img: &ImageBuf, params: &AppearanceParams) -> ImageBuf {
    let mut out = img.clone();
    if let Some(j) = params.jitter {
        apply_jitter(&mut out, j);
    }
    if let Some(k) = params.blur_kernel {
        assert!(k % 2 == 1 && (3..=7).contains(&k), "blur kernel must be odd in [3, 7]");
        out = gaussian_blur(&out, k);
    }
    if params.to_gray {
        for p in 0..out.h * out.w {
            let i = p * 3;
            let l = luma([out.data[i], out.data[i + 1], out.data[i + 2]]);
            out.data[i] = l;
            out.data[i + 1] = l;
            out.data[i + 2] = l;
        }
    }
    if params.solarize {
        for v in out.data.iter_mut() {
            if *v >= params.solarize_threshold {
                *v = 255.0 - *v;
            }
        }
    }
    out
}
