//! Human-part-guided patch masking: body parts are shuffled and their
//! keypoint-adjacent patches masked until the target count is reached, with
//! uniform random background patches making up any difference.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::TrainConfig;
use crate::pose::PoseLabel;

/// Body part groups over COCO keypoint indices: head, torso, left arm,
/// right arm, legs.
pub const PART_GROUPS: [&[usize]; 5] = [
    &[0, 1, 2, 3, 4],
    &[5, 6, 11, 12],
    &[5, 7, 9],
    &[6, 8, 10],
    &[11, 12, 13, 14, 15, 16],
];

/// Keypoint-to-patch radius in patches: a keypoint claims its own patch plus
/// the 8-neighborhood.
const PATCH_RADIUS: i64 = 1;

/// Boolean patch-grid mask; `true` = masked (dropped from the encoder and
/// reconstructed by the decoder).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub grid: Vec<bool>,
    /// (rows, cols) of the patch grid.
    pub grid_hw: (usize, usize),
    pub ratio_actual: f64,
}

impl PatchMask {
    pub fn total(&self) -> usize {
        self.grid.len()
    }

    pub fn masked_count(&self) -> usize {
        self.grid.iter().filter(|m| **m).count()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|i| !self.grid[*i]).collect()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|i| self.grid[*i]).collect()
    }

    /// Number of patches to mask: `ceil(ratio * total)`, clamped so at least
    /// one patch stays on each side.
    pub fn target_count(mask_ratio: f64, total: usize) -> usize {
        ((mask_ratio * total as f64).ceil() as usize).clamp(1, total - 1)
    }

    fn from_flags(grid: Vec<bool>, grid_hw: (usize, usize)) -> Self {
        let masked = grid.iter().filter(|m| **m).count();
        let ratio_actual = masked as f64 / grid.len() as f64;
        Self {
            grid,
            grid_hw,
            ratio_actual,
        }
    }

    /// Uniform random mask with an exact masked count.
    pub fn uniform_random(target: usize, grid_hw: (usize, usize), rng: &mut impl Rng) -> Self {
        let total = grid_hw.0 * grid_hw.1;
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(rng);
        let mut grid = vec![false; total];
        for &i in idx.iter().take(target) {
            grid[i] = true;
        }
        Self::from_flags(grid, grid_hw)
    }
}

/// Patches within `PATCH_RADIUS` of any visible keypoint of `part`.
fn part_patches(
    pose: &PoseLabel,
    part: &[usize],
    patch_size: usize,
    grid_hw: (usize, usize),
) -> Vec<usize> {
    let (gh, gw) = grid_hw;
    let mut flags = vec![false; gh * gw];
    for &kp in part {
        if !pose.visibility[kp] {
            continue;
        }
        let col = ((pose.keypoints[kp][0] / patch_size as f64).floor() as i64).clamp(0, gw as i64 - 1);
        let row = ((pose.keypoints[kp][1] / patch_size as f64).floor() as i64).clamp(0, gh as i64 - 1);
        for dr in -PATCH_RADIUS..=PATCH_RADIUS {
            for dc in -PATCH_RADIUS..=PATCH_RADIUS {
                let (r, c) = (row + dr, col + dc);
                if r >= 0 && r < gh as i64 && c >= 0 && c < gw as i64 {
                    flags[r as usize * gw + c as usize] = true;
                }
            }
        }
    }
    (0..flags.len()).filter(|i| flags[*i]).collect()
}

/// Generate one pose-guided mask. Falls back to uniform random masking when
/// no keypoint is visible. The masked count is always exactly
/// [`PatchMask::target_count`].
pub fn gen_mask(pose: &PoseLabel, config: &TrainConfig, rng: &mut impl Rng) -> PatchMask {
    let grid_hw = config.patch_grid();
    let total = grid_hw.0 * grid_hw.1;
    let target = PatchMask::target_count(config.mask_ratio, total);
    if pose.visible_count() == 0 {
        return PatchMask::uniform_random(target, grid_hw, rng);
    }

    let mut order: Vec<usize> = (0..PART_GROUPS.len()).collect();
    order.shuffle(rng);
    let mut grid = vec![false; total];
    let mut count = 0usize;
    for pi in order {
        if count >= target {
            break;
        }
        for p in part_patches(pose, PART_GROUPS[pi], config.patch_size, grid_hw) {
            if !grid[p] {
                grid[p] = true;
                count += 1;
            }
        }
    }
    match count.cmp(&target) {
        std::cmp::Ordering::Greater => {
            // Trim the excess: uniformly chosen masked patches revert to
            // background.
            let mut masked: Vec<usize> = (0..total).filter(|i| grid[*i]).collect();
            masked.shuffle(rng);
            for &i in masked.iter().take(count - target) {
                grid[i] = false;
            }
        }
        std::cmp::Ordering::Less => {
            // Fill the deficit with uniform random background patches.
            let mut background: Vec<usize> = (0..total).filter(|i| !grid[*i]).collect();
            background.shuffle(rng);
            for &i in background.iter().take(target - count) {
                grid[i] = true;
            }
        }
        std::cmp::Ordering::Equal => {}
    }
    PatchMask::from_flags(grid, grid_hw)
}
