//! Sliding-window inference over whole images.

use crate::data::{reflect_pad_planes, Domain, DomainSample};
use crate::error::{Error, Result};
use crate::networks::SegmentationNetwork;
use crate::nn::softmax_channels;
use crate::tensor::Tensor;

/// Anything that maps a `B×3×S×S` batch from `domain` to `B×2×S×S` class
/// probabilities.
pub trait WindowModel: Sync {
    fn probabilities(&self, batch: &Tensor, domain: Domain) -> Result<Tensor>;
}

impl WindowModel for SegmentationNetwork {
    fn probabilities(&self, batch: &Tensor, domain: Domain) -> Result<Tensor> {
        Ok(softmax_channels(&self.infer(batch, domain)?.logits))
    }
}

/// Produces an `H×W` foreground probability map for a whole sample.
pub trait Predictor: Sync {
    fn foreground(&self, sample: &DomainSample) -> Result<Vec<f32>>;
}

/// Windows per inference batch. Eval-mode outputs do not depend on batching.
const WINDOW_BATCH: usize = 8;

/// Window origins along one axis: every `stride`, with the last window
/// clamped to the border.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || stride > window {
        return Err(Error::Precondition(format!(
            "stride {stride} must be in 1..={window}"
        )));
    }
    if len <= window {
        return Ok(vec![0]);
    }
    let last = len - window;
    let mut offsets: Vec<usize> = (0..last).step_by(stride).collect();
    offsets.push(last);
    Ok(offsets)
}

#[derive(Debug, Clone, Copy)]
pub struct SlidingWindow<'a, M> {
    pub model: &'a M,
    pub window: usize,
    pub stride: usize,
}

impl<M: WindowModel> Predictor for SlidingWindow<'_, M> {
    fn foreground(&self, sample: &DomainSample) -> Result<Vec<f32>> {
        sliding_window_infer(self.model, &sample.image, sample.domain, self.window, self.stride)
    }
}

/// Averages per-pixel foreground probabilities over every covering window.
/// Images smaller than the window are reflect-padded and cropped back.
pub fn sliding_window_infer<M: WindowModel + ?Sized>(
    model: &M,
    image: &Tensor,
    domain: Domain,
    window: usize,
    stride: usize,
) -> Result<Vec<f32>> {
    if image.shape().len() != 3 || image.shape()[0] != 3 {
        return Err(Error::Shape(format!("expected 3×H×W image, got {:?}", image.shape())));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let ys = window_offsets(h, window, stride)?;
    let xs = window_offsets(w, window, stride)?;
    let (ph, pw) = (h.max(window), w.max(window));
    let padded;
    let src = if (ph, pw) != (h, w) {
        padded = reflect_pad_planes(image.data(), 3, (h, w), (0, ph - h, 0, pw - w));
        &padded[..]
    } else {
        image.data()
    };

    let origins: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect();
    let mut sum = vec![0f32; ph * pw];
    let mut count = vec![0u32; ph * pw];
    for group in origins.chunks(WINDOW_BATCH) {
        let mut data = Vec::with_capacity(group.len() * 3 * window * window);
        for &(y, x) in group {
            for c in 0..3 {
                for r in y..y + window {
                    let row = c * ph * pw + r * pw;
                    data.extend_from_slice(&src[row + x..row + x + window]);
                }
            }
        }
        let batch = Tensor::from_vec(&[group.len(), 3, window, window], data)?;
        let probs = model.probabilities(&batch, domain)?;
        if probs.shape() != [group.len(), 2, window, window] {
            return Err(Error::Shape(format!(
                "model returned {:?} for {:?}",
                probs.shape(),
                batch.shape()
            )));
        }
        let plane = window * window;
        for (k, &(y, x)) in group.iter().enumerate() {
            let fg = &probs.data()[(2 * k + 1) * plane..(2 * k + 2) * plane];
            for r in 0..window {
                let dst = (y + r) * pw + x;
                for c in 0..window {
                    sum[dst + c] += fg[r * window + c];
                    count[dst + c] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * pw + c;
            out.push(sum[i] / count[i] as f32);
        }
    }
    Ok(out)
}
