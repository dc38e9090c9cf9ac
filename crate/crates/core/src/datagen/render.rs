//! Procedural renderer standing in for the diffusion backend: limbs drawn as
//! thick capsules over a random background, appearance varied per image by an
//! independently sampled style while the pose stays fixed.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{Affine, ImageBuf, PIXEL_MEAN};
use crate::pose::{PoseLabel, SKELETON};
use crate::rng::RngStream;
use crate::sample::SampleGroup;

/// Dilation (canvas pixels) applied around the visible-keypoint box so thick
/// limbs and the head disc stay inside the crop. Shared by rendering and
/// filtering so the crop is a pure function of the pose.
pub const BBOX_DILATION: f64 = 10.0;

const THICKNESS_RANGE: (f64, f64) = (2.5, 5.5);
const NOISE_MAX: f64 = 0.1;

/// Per-image appearance parameters of the procedural renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    pub limb_palette: Vec<[f64; 3]>,
    pub background: Background,
    pub limb_thickness: f64,
    /// Uniform pixel noise amplitude as a fraction of full scale, in [0, 0.1].
    pub noise_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Solid([f64; 3]),
    VerticalGradient([f64; 3], [f64; 3]),
}

impl RenderStyle {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let color = |rng: &mut dyn rand::RngCore| -> [f64; 3] {
            [
                rng.gen_range(0.0..=255.0),
                rng.gen_range(0.0..=255.0),
                rng.gen_range(0.0..=255.0),
            ]
        };
        let n_colors = rng.gen_range(2..=4);
        let limb_palette = (0..n_colors).map(|_| color(rng)).collect();
        let background = if rng.gen_bool(0.5) {
            Background::Solid(color(rng))
        } else {
            Background::VerticalGradient(color(rng), color(rng))
        };
        Self {
            limb_palette,
            background,
            limb_thickness: rng.gen_range(THICKNESS_RANGE.0..=THICKNESS_RANGE.1),
            noise_amplitude: rng.gen_range(0.0..=NOISE_MAX),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.limb_palette.is_empty() {
            return Err(Error::invariant("limb_palette", "must be non-empty"));
        }
        if self.limb_thickness < 1.0 {
            return Err(Error::invariant("limb_thickness", "must be >= 1 pixel"));
        }
        if !(0.0..=NOISE_MAX).contains(&self.noise_amplitude) {
            return Err(Error::invariant("noise_amplitude", "must lie in [0, 0.1]"));
        }
        Ok(())
    }
}

/// Boundary to the image generator: pose + caption + randomness in, one
/// canvas-scale image out. A diffusion-model client could implement this.
pub trait GenerationBackend {
    fn canvas_hw(&self) -> (usize, usize);
    fn generate(&self, pose: &PoseLabel, caption: &str, rng: &mut RngStream) -> ImageBuf;
}

/// Capsule renderer over the COCO skeleton.
#[derive(Debug, Clone)]
pub struct ProceduralRenderer {
    pub canvas_hw: (usize, usize),
}

impl ProceduralRenderer {
    pub fn new(canvas_hw: (usize, usize)) -> Self {
        Self { canvas_hw }
    }
}

fn draw_capsule(img: &mut ImageBuf, a: [f64; 2], b: [f64; 2], radius: f64, color: [f64; 3]) {
    let min_x = (a[0].min(b[0]) - radius).floor().max(0.0) as usize;
    let max_x = (a[0].max(b[0]) + radius).ceil().min(img.w as f64 - 1.0) as usize;
    let min_y = (a[1].min(b[1]) - radius).floor().max(0.0) as usize;
    let max_y = (a[1].max(b[1]) + radius).ceil().min(img.h as f64 - 1.0) as usize;
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let p = [x as f64, y as f64];
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2
            }
            .clamp(0.0, 1.0);
            let cx = a[0] + t * ab[0];
            let cy = a[1] + t * ab[1];
            let d2 = (p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy);
            if d2 <= radius * radius {
                img.set(y, x, color);
            }
        }
    }
}

impl GenerationBackend for ProceduralRenderer {
    fn canvas_hw(&self) -> (usize, usize) {
        self.canvas_hw
    }

    /// The caption steers nothing here: appearance comes from the sampled
    /// style, mirroring how varied initial noise drives appearance variation.
    fn generate(&self, pose: &PoseLabel, _caption: &str, rng: &mut RngStream) -> ImageBuf {
        let style = RenderStyle::sample(rng);
        let (h, w) = self.canvas_hw;
        let mut img = match style.background {
            Background::Solid(c) => ImageBuf::filled(h, w, c),
            Background::VerticalGradient(top, bottom) => {
                let mut img = ImageBuf::new(h, w);
                for y in 0..h {
                    let t = y as f64 / (h - 1).max(1) as f64;
                    let c = [
                        top[0] + t * (bottom[0] - top[0]),
                        top[1] + t * (bottom[1] - top[1]),
                        top[2] + t * (bottom[2] - top[2]),
                    ];
                    for x in 0..w {
                        img.set(y, x, c);
                    }
                }
                img
            }
        };
        // Limbs whose endpoints are both visible; occluded joints leave gaps.
        for (ei, &(a, b)) in SKELETON.iter().enumerate() {
            if pose.visibility[a] && pose.visibility[b] {
                let color = style.limb_palette[ei % style.limb_palette.len()];
                draw_capsule(
                    &mut img,
                    pose.keypoints[a],
                    pose.keypoints[b],
                    style.limb_thickness,
                    color,
                );
            }
        }
        if pose.visibility[0] {
            let c = style.limb_palette[0];
            draw_capsule(
                &mut img,
                pose.keypoints[0],
                pose.keypoints[0],
                style.limb_thickness * 1.6,
                c,
            );
        }
        if style.noise_amplitude > 0.0 {
            for v in img.data.iter_mut() {
                let n = rng.gen_range(-1.0..=1.0) * style.noise_amplitude * 255.0;
                *v = (*v + n).clamp(0.0, 255.0);
            }
        }
        img
    }
}

/// The crop window used for every image of a pose's group.
pub fn group_crop_bbox(pose: &PoseLabel, canvas_hw: (usize, usize)) -> Option<(f64, f64, f64, f64)> {
    pose.visible_bbox(BBOX_DILATION, canvas_hw)
}

/// Render `m` appearance-varying images of one pose, crop them identically to
/// the pose's bounding box, resize to `out_hw`, and map the keypoints through
/// the same transform.
pub fn render_group(
    backend: &dyn GenerationBackend,
    pose: &PoseLabel,
    m: usize,
    caption: &str,
    out_hw: (usize, usize),
    rng: &mut RngStream,
) -> Result<SampleGroup> {
    if m < 2 {
        return Err(Error::invariant("m", "must be >= 2"));
    }
    let canvas = backend.canvas_hw();
    let (bx, by, bw, bh) = group_crop_bbox(pose, canvas).ok_or_else(|| {
        Error::Data("cannot render a group for a pose with no visible keypoints".into())
    })?;
    if bw < 1.0 || bh < 1.0 {
        return Err(Error::Data("degenerate pose bounding box".into()));
    }
    let sx = out_hw.1 as f64 / bw;
    let sy = out_hw.0 as f64 / bh;
    let crop = Affine::scale(sx, sy).compose(&Affine::translate(-bx, -by));

    let mut images = Vec::with_capacity(m);
    for _ in 0..m {
        let canvas_img = backend.generate(pose, caption, rng);
        images.push(canvas_img.warp_affine(&crop, out_hw, PIXEL_MEAN));
    }

    let mut keypoints = pose.keypoints;
    for kp in keypoints.iter_mut() {
        let (x, y) = crop.apply(kp[0], kp[1]);
        // Visible keypoints sit strictly inside the dilated box; clamp guards
        // the resize boundary.
        kp[0] = x.clamp(0.0, out_hw.1 as f64 - 1.0);
        kp[1] = y.clamp(0.0, out_hw.0 as f64 - 1.0);
    }
    let out_pose = PoseLabel::new(keypoints, pose.visibility, pose.pose_id.clone());
    out_pose.check_in_bounds(out_hw)?;
    SampleGroup::new(out_pose, images, caption)
}
