//! Synthetic dataset construction: pose sampling, group rendering, caption
//! generation, corpus filtering, and manifest output.

pub mod caption;
pub mod render;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, FORMAT_VERSION};
use crate::pose::{BBox, PoseLabel, NUM_KEYPOINTS};
use crate::rng::{sample_standard_normal, seeded_rng};
use caption::{generate_caption, CaptionGrammar};
use render::{group_crop_bbox, render_group, ProceduralRenderer, BBOX_DILATION};

/// Minimum bounding-box area (pixels) below which a sample is excluded.
pub const MIN_BBOX_AREA: f64 = 4096.0;
/// Minimum visible keypoints for a sample to be kept.
pub const MIN_VISIBLE_KEYPOINTS: usize = 5;

const SAMPLE_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    SmallBbox,
    TooFewKeypoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Accept,
    Reject(RejectReason),
}

/// Apply the corpus filtering rules: boxes smaller than 4,096 pixels are
/// excluded (checked first), then poses with fewer than five visible
/// keypoints. Both thresholds are inclusive on the accept side.
pub fn filter_sample(bbox: BBox, pose: &PoseLabel) -> FilterDecision {
    let (_, _, w, h) = bbox;
    if w * h < MIN_BBOX_AREA {
        return FilterDecision::Reject(RejectReason::SmallBbox);
    }
    if pose.visible_count() < MIN_VISIBLE_KEYPOINTS {
        return FilterDecision::Reject(RejectReason::TooFewKeypoints);
    }
    FilterDecision::Accept
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DatagenConfig {
    /// Generation canvas; poses are sampled and filtered at this scale
    /// before cropping, mirroring generation at native model resolution.
    pub canvas_hw: (usize, usize),
    /// Final training image size after crop + resize.
    pub out_hw: (usize, usize),
    /// Per-keypoint occlusion probability.
    pub occlusion: f64,
    pub variations: usize,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            canvas_hw: (256, 192),
            out_hw: (64, 48),
            occlusion: 0.05,
            variations: 4,
            seed: 0,
        }
    }
}

/// Sample an anatomically ordered 17-keypoint skeleton with plausible limb
/// proportions, fully inside the canvas. Re-draws until constraints are met,
/// with a bounded retry count.
pub fn sample_pose(
    rng: &mut impl Rng,
    canvas_hw: (usize, usize),
    occlusion: f64,
) -> Result<PoseLabel> {
    let (h, w) = (canvas_hw.0 as f64, canvas_hw.1 as f64);
    assert!(canvas_hw.0 >= 32 && canvas_hw.1 >= 32, "canvas must be at least 32x32");
    // A full-keypoint box at least this large guarantees the visible-box
    // filter threshold is reachable on a default canvas.
    let min_area = (MIN_BBOX_AREA * 1.15).min(0.25 * h * w);

    for _ in 0..SAMPLE_RETRIES {
        let unit = h * rng.gen_range(0.085..=0.115); // head unit, body ~7.5 units
        let pelvis = [w * rng.gen_range(0.38..=0.62), h * rng.gen_range(0.46..=0.58)];
        let lean = rng.gen_range(-0.22..=0.22f64); // torso lean from vertical
        let up = [lean.sin(), -lean.cos()];
        let side = [up[1], -up[0]]; // perpendicular, pointing to the figure's left

        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        let at = |base: [f64; 2], along: f64, lateral: f64| {
            [
                base[0] + along * up[0] + lateral * side[0],
                base[1] + along * up[1] + lateral * side[1],
            ]
        };
        let shoulder_c = at(pelvis, 2.7 * unit, 0.0);
        kps[0] = at(shoulder_c, 1.1 * unit, rng.gen_range(-0.2..=0.2) * unit); // nose
        kps[1] = at(kps[0], 0.12 * unit, 0.18 * unit);
        kps[2] = at(kps[0], 0.12 * unit, -0.18 * unit);
        kps[3] = at(kps[0], 0.0, 0.42 * unit);
        kps[4] = at(kps[0], 0.0, -0.42 * unit);
        kps[5] = at(shoulder_c, 0.0, unit); // left shoulder
        kps[6] = at(shoulder_c, 0.0, -unit);
        kps[11] = at(pelvis, 0.0, 0.7 * unit); // left hip
        kps[12] = at(pelvis, 0.0, -0.7 * unit);

        // Arms: angles measured from straight down.
        for (shoulder, elbow, wrist, sign) in [(5usize, 7usize, 9usize, 1.0), (6, 8, 10, -1.0)] {
            let a1: f64 = rng.gen_range(-0.3..=1.5) * sign;
            let dir1 = [a1.sin(), a1.cos()];
            kps[elbow] = [
                kps[shoulder][0] + 1.45 * unit * dir1[0],
                kps[shoulder][1] + 1.45 * unit * dir1[1],
            ];
            let a2: f64 = a1 + rng.gen_range(-1.8..=0.4) * sign;
            let dir2 = [a2.sin(), a2.cos()];
            kps[wrist] = [
                kps[elbow][0] + 1.25 * unit * dir2[0],
                kps[elbow][1] + 1.25 * unit * dir2[1],
            ];
        }
        // Legs.
        for (hip, knee, ankle, sign) in [(11usize, 13usize, 15usize, 1.0), (12, 14, 16, -1.0)] {
            let a1: f64 = rng.gen_range(-0.15..=0.55) * sign;
            let dir1 = [a1.sin(), a1.cos()];
            kps[knee] = [
                kps[hip][0] + 2.0 * unit * dir1[0],
                kps[hip][1] + 2.0 * unit * dir1[1],
            ];
            let a2: f64 = a1 + rng.gen_range(-0.5..=0.25) * sign;
            let dir2 = [a2.sin(), a2.cos()];
            kps[ankle] = [
                kps[knee][0] + 1.9 * unit * dir2[0],
                kps[knee][1] + 1.9 * unit * dir2[1],
            ];
        }
        for kp in kps.iter_mut() {
            kp[0] += 0.04 * unit * sample_standard_normal(rng);
            kp[1] += 0.04 * unit * sample_standard_normal(rng);
        }

        let mut visibility = [false; NUM_KEYPOINTS];
        for v in visibility.iter_mut() {
            *v = !rng.gen_bool(occlusion);
        }

        let margin = BBOX_DILATION + 2.0;
        let inside = kps
            .iter()
            .all(|kp| kp[0] >= margin && kp[0] <= w - 1.0 - margin && kp[1] >= margin && kp[1] <= h - 1.0 - margin);
        if !inside {
            continue;
        }
        let candidate = PoseLabel::new(kps, [true; NUM_KEYPOINTS], "");
        let Some((_, _, bw, bh)) = candidate.visible_bbox(BBOX_DILATION, canvas_hw) else {
            continue;
        };
        if bw * bh < min_area {
            continue;
        }
        return Ok(PoseLabel::new(kps, visibility, ""));
    }
    Err(Error::PoseSampling(SAMPLE_RETRIES))
}

/// Build a dataset: sample `n_poses` candidate poses, filter them, render the
/// survivors as `variations`-image groups, and write images + pose files +
/// manifest under `out_dir`.
///
/// Rendering fans out across workers; each pose owns streams keyed by its
/// index, so output is invariant to worker count.
pub fn build_dataset(
    n_poses: usize,
    cfg: &DatagenConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if n_poses == 0 {
        return Err(Error::invariant("n_poses", "must be >= 1"));
    }
    if cfg.variations < 2 {
        return Err(Error::invariant("variations", "must be >= 2"));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("poses"))?;

    let grammar = CaptionGrammar::truncated();
    let renderer = ProceduralRenderer::new(cfg.canvas_hw);

    let entries: Vec<Option<ManifestEntry>> = (0..n_poses)
        .into_par_iter()
        .map(|i| -> Result<Option<ManifestEntry>> {
            let mut pose_rng = seeded_rng(cfg.seed, &format!("datagen/pose/{i}"));
            let mut pose = sample_pose(&mut pose_rng, cfg.canvas_hw, cfg.occlusion)?;
            pose.pose_id = format!("p{i:06}");
            let bbox = group_crop_bbox(&pose, cfg.canvas_hw).unwrap_or((0.0, 0.0, 0.0, 0.0));
            if filter_sample(bbox, &pose) != FilterDecision::Accept {
                return Ok(None);
            }
            let mut caption_rng = seeded_rng(cfg.seed, &format!("datagen/caption/{i}"));
            let caption = generate_caption(&mut caption_rng, &grammar);
            let mut render_rng = seeded_rng(cfg.seed, &format!("datagen/render/{i}"));
            let group = render_group(
                &renderer,
                &pose,
                cfg.variations,
                &caption,
                cfg.out_hw,
                &mut render_rng,
            )?;

            let pose_path = format!("poses/{}.txt", pose.pose_id);
            std::fs::write(out_dir.join(&pose_path), group.pose.to_text())?;
            let mut image_paths = Vec::with_capacity(cfg.variations);
            for (k, img) in group.images.iter().enumerate() {
                let rel = format!("images/{}_{k}.png", pose.pose_id);
                img.save_png(out_dir.join(&rel))?;
                image_paths.push(rel);
            }
            Ok(Some(ManifestEntry {
                format_version: FORMAT_VERSION,
                pose_id: pose.pose_id.clone(),
                pose_path,
                image_paths,
                caption,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        entries: entries.into_iter().flatten().collect(),
    };
    manifest.write(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
