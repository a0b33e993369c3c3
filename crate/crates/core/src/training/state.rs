use crate::config::ExperimentConfig;
use crate::networks::Networks;
use crate::nn::Adam;
use crate::rng::streams;

/// Everything needed to continue a run bit-for-bit.
///
/// The data stream is keyed by `(seed, DATA_BASE + epoch)`, so the seed and the
/// epoch counter are the whole RNG state between epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub nets: Networks,
    pub opt_g: Adam,
    pub opt_d_img: Adam,
    pub opt_d_feat: Adam,
    pub rng_seed: u64,
    pub rng_stream: u64,
    pub config_hash: u64,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let nets = Networks::init(cfg.seed, cfg.channel_width_scale);
        let (g1, g2) = (cfg.adam_beta1_g as f32, cfg.adam_beta2_g as f32);
        let (d1, d2) = (cfg.adam_beta1_d as f32, cfg.adam_beta2_d as f32);
        TrainState {
            epoch: 0,
            global_step: 0,
            opt_g: Adam::new(&nets.generator.params, g1, g2),
            opt_d_img: Adam::new(&nets.d_img.params, d1, d2),
            opt_d_feat: Adam::new(&nets.d_feat.params, d1, d2),
            nets,
            rng_seed: cfg.seed,
            rng_stream: streams::DATA_BASE,
            config_hash: cfg.config_hash(),
        }
    }

    /// Combined checksum over all parameters and buffers of the three networks.
    pub fn params_checksum(&self) -> [u64; 3] {
        [
            self.nets.generator.params.checksum_all(),
            self.nets.d_img.params.checksum_all(),
            self.nets.d_feat.params.checksum_all(),
        ]
    }
}
