/// Channel widths of every internal layer at a given width scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Widths {
    pub stem: usize,
    pub stages: [usize; 4],
    pub ppm_branch: usize,
    /// Width of the pyramid-pooled representation `p`.
    pub ppm_out: usize,
    pub skip2: usize,
    pub up1: usize,
    pub up2: usize,
    /// Width of the fused feature `f`.
    pub fused: usize,
    pub cls_mid: usize,
    pub disc: [usize; 4],
}

pub const MIN_CHANNELS: usize = 8;

/// `max(8, round(c * scale))`.
pub fn scale_channels(c: usize, scale: f64) -> usize {
    ((c as f64 * scale).round() as usize).max(MIN_CHANNELS)
}

impl Widths {
    pub fn scaled(scale: f64) -> Self {
        let s = |c| scale_channels(c, scale);
        Widths {
            stem: s(64),
            stages: [s(64), s(128), s(256), s(512)],
            ppm_branch: s(128),
            ppm_out: s(512),
            skip2: s(64),
            up1: s(256),
            up2: s(128),
            fused: s(512),
            cls_mid: s(128),
            disc: [s(64), s(128), s(256), s(512)],
        }
    }
}
