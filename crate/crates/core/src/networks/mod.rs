//! Segmentation network and patch discriminators.

pub mod discriminator;
mod layers;
pub mod segnet;
mod widths;

pub use discriminator::Discriminator;
pub use layers::{apply_updates, Mode};
pub use segnet::{SegForwardOutput, SegVars, SegmentationNetwork, GENERATOR_TAG};
pub use widths::{scale_channels, Widths, MIN_CHANNELS};

use crate::rng::streams;

pub const D_IMG_TAG: u32 = 1;
pub const D_FEAT_TAG: u32 = 2;

/// The three networks of one run, initialized deterministically from `seed`.
#[derive(Debug, Clone)]
pub struct Networks {
    pub generator: SegmentationNetwork,
    pub d_img: Discriminator,
    pub d_feat: Discriminator,
}

impl Networks {
    pub fn init(seed: u64, width_scale: f64) -> Self {
        let generator = SegmentationNetwork::new(seed, width_scale);
        let w = generator.widths();
        Networks {
            d_img: Discriminator::new(seed, streams::D_IMG_INIT, D_IMG_TAG, w.ppm_out, width_scale),
            d_feat: Discriminator::new(seed, streams::D_FEAT_INIT, D_FEAT_TAG, w.fused, width_scale),
            generator,
        }
    }
}
