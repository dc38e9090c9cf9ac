//! COCO 17-keypoint pose labels and skeleton topology.

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 17;

/// COCO keypoint ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum CocoKeypoint {
    Nose = 0,
    LeftEye = 1,
    RightEye = 2,
    LeftEar = 3,
    RightEar = 4,
    LeftShoulder = 5,
    RightShoulder = 6,
    LeftElbow = 7,
    RightElbow = 8,
    LeftWrist = 9,
    RightWrist = 10,
    LeftHip = 11,
    RightHip = 12,
    LeftKnee = 13,
    RightKnee = 14,
    LeftAnkle = 15,
    RightAnkle = 16,
}

/// Limb segments of the COCO skeleton, as keypoint index pairs.
pub const SKELETON: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

/// Left/right symmetric keypoint index pairs, swapped on horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 8] = [
    (1, 2),
    (3, 4),
    (5, 6),
    (7, 8),
    (9, 10),
    (11, 12),
    (13, 14),
    (15, 16),
];

/// A single human pose: 17 COCO-ordered keypoints with visibility flags.
///
/// Coordinates are image pixels, top-left origin, x rightward, y downward.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLabel {
    pub keypoints: [[f64; 2]; NUM_KEYPOINTS],
    pub visibility: [bool; NUM_KEYPOINTS],
    pub pose_id: String,
}

/// Axis-aligned box as (x, y, w, h) in pixels.
pub type BBox = (f64, f64, f64, f64);

impl PoseLabel {
    pub fn new(
        keypoints: [[f64; 2]; NUM_KEYPOINTS],
        visibility: [bool; NUM_KEYPOINTS],
        pose_id: impl Into<String>,
    ) -> Self {
        Self {
            keypoints,
            visibility,
            pose_id: pose_id.into(),
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }

    /// Check that every visible keypoint lies within `[0, w-1] x [0, h-1]`.
    pub fn check_in_bounds(&self, hw: (usize, usize)) -> Result<()> {
        let (h, w) = (hw.0 as f64, hw.1 as f64);
        for (i, kp) in self.keypoints.iter().enumerate() {
            if self.visibility[i]
                && !(kp[0] >= 0.0 && kp[0] <= w - 1.0 && kp[1] >= 0.0 && kp[1] <= h - 1.0)
            {
                return Err(Error::invariant(
                    "keypoints",
                    format!("visible keypoint {i} at ({}, {}) outside {w}x{h}", kp[0], kp[1]),
                ));
            }
        }
        Ok(())
    }

    /// Tight box around visible keypoints, dilated by `dilate` pixels and
    /// clamped to the image. `None` when no keypoint is visible.
    pub fn visible_bbox(&self, dilate: f64, hw: (usize, usize)) -> Option<BBox> {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        let mut any = false;
        for (i, kp) in self.keypoints.iter().enumerate() {
            if self.visibility[i] {
                any = true;
                min_x = min_x.min(kp[0]);
                min_y = min_y.min(kp[1]);
                max_x = max_x.max(kp[0]);
                max_y = max_y.max(kp[1]);
            }
        }
        if !any {
            return None;
        }
        let (h, w) = (hw.0 as f64, hw.1 as f64);
        let x0 = (min_x - dilate).max(0.0);
        let y0 = (min_y - dilate).max(0.0);
        let x1 = (max_x + dilate).min(w - 1.0);
        let y1 = (max_y + dilate).min(h - 1.0);
        Some((x0, y0, x1 - x0, y1 - y0))
    }

    /// Serialize as 17 lines of `x y visibility`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..NUM_KEYPOINTS {
            out.push_str(&format!(
                "{} {} {}\n",
                self.keypoints[i][0],
                self.keypoints[i][1],
                u8::from(self.visibility[i])
            ));
        }
        out
    }

    pub fn from_text(text: &str, pose_id: impl Into<String>) -> Result<Self> {
        let mut keypoints = [[0.0; 2]; NUM_KEYPOINTS];
        let mut visibility = [false; NUM_KEYPOINTS];
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != NUM_KEYPOINTS {
            return Err(Error::Data(format!(
                "pose file has {} records, expected {NUM_KEYPOINTS}",
                lines.len()
            )));
        }
        for (i, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Data(format!("pose line {i}: expected `x y v`")));
            }
            keypoints[i][0] = fields[0]
                .parse()
                .map_err(|_| Error::Data(format!("pose line {i}: bad x")))?;
            keypoints[i][1] = fields[1]
                .parse()
                .map_err(|_| Error::Data(format!("pose line {i}: bad y")))?;
            visibility[i] = match fields[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Data(format!("pose line {i}: bad visibility {other}"))),
            };
        }
        Ok(Self::new(keypoints, visibility, pose_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_pose_label() -> PoseLabel {
        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        for (i, kp) in kps.iter_mut().enumerate() {
            kp[0] = 10.0 + i as f64;
            kp[1] = 20.0 + 2.0 * i as f64;
        }
        let mut vis = [true; NUM_KEYPOINTS];
        vis[3] = false;
        PoseLabel::new(kps, vis, "p0")
    }

    #[test]
    fn text_round_trip() {
        let pose = sample_pose_label();
        let back = PoseLabel::from_text(&pose.to_text(), "p0").unwrap();
        assert_eq!(pose, back);
    }

    #[test]
    fn bounds_check_flags_out_of_frame_visible_keypoint() {
        let mut pose = sample_pose_label();
        assert!(pose.check_in_bounds((64, 48)).is_ok());
        pose.keypoints[16] = [100.0, 10.0];
        assert!(pose.check_in_bounds((64, 48)).is_err());
        // Invisible keypoints may sit anywhere.
        pose.visibility[16] = false;
        assert!(pose.check_in_bounds((64, 48)).is_ok());
    }

    #[test]
    fn bbox_covers_only_visible() {
        let mut pose = sample_pose_label();
        pose.visibility = [false; NUM_KEYPOINTS];
        assert!(pose.visible_bbox(2.0, (64, 48)).is_none());
        pose.visibility[0] = true;
        pose.visibility[1] = true;
        let (x, y, w, h) = pose.visible_bbox(0.0, (256, 192)).unwrap();
        assert_eq!((x, y), (10.0, 20.0));
        assert_eq!((w, h), (1.0, 2.0));
    }
}
