//! The multi-positive unit: one pose paired with appearance-varying images.

use crate::error::{Error, Result};
use crate::imaging::ImageBuf;
use crate::pose::PoseLabel;

/// One pose with `m >= 2` images that share its keypoint geometry exactly,
/// plus the caption the images were generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGroup {
    pub pose: PoseLabel,
    pub images: Vec<ImageBuf>,
    pub caption: String,
}

impl SampleGroup {
    pub fn new(pose: PoseLabel, images: Vec<ImageBuf>, caption: impl Into<String>) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::invariant(
                "images",
                "a sample group needs m >= 2 images to form a positive pair",
            ));
        }
        let (h, w) = (images[0].h, images[0].w);
        if images.iter().any(|img| img.h != h || img.w != w) {
            return Err(Error::invariant("images", "images in a group must share one size"));
        }
        Ok(Self {
            pose,
            images,
            caption: caption.into(),
        })
    }

    pub fn m(&self) -> usize {
        self.images.len()
    }

    pub fn image_hw(&self) -> (usize, usize) {
        (self.images[0].h, self.images[0].w)
    }
}
