//! Batch normalization over the (N, H, W) axes of an NCHW tensor.

use crate::exec;
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

pub struct BnTrainOutput {
    pub y: Tensor,
    pub x_hat: Tensor,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    /// Unbiased variance, used for the running estimate.
    pub batch_var: Vec<f32>,
}

fn channel_iter(n: usize, c: usize, hw: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |i| {
        let base = (i * c + ch) * hw;
        base..base + hw
    })
}

pub fn batch_norm_train(x: &Tensor, gamma: &[f32], beta: &[f32]) -> BnTrainOutput {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let m = n * hw;
    let xd = x.data();
    let stats = exec::map_range(c, |ch| {
        let mut sum = 0.0f64;
        for idx in channel_iter(n, c, hw, ch) {
            sum += xd[idx] as f64;
        }
        let mean = sum / m as f64;
        let mut sq = 0.0f64;
        for idx in channel_iter(n, c, hw, ch) {
            let d = xd[idx] as f64 - mean;
            sq += d * d;
        }
        let var = sq / m as f64;
        let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
        (mean as f32, var as f32, unbiased as f32)
    });
    let mut y = Tensor::zeros(x.shape());
    let mut x_hat = Tensor::zeros(x.shape());
    let inv_std: Vec<f32> = stats
        .iter()
        .map(|&(_, var, _)| 1.0 / (var + BN_EPS).sqrt())
        .collect();
    {
        let yd = y.data_mut();
        let xh = x_hat.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (mean, _, _) = stats[ch];
                for j in base..base + hw {
                    let v = (xd[j] - mean) * inv_std[ch];
                    xh[j] = v;
                    yd[j] = gamma[ch] * v + beta[ch];
                }
            }
        }
    }
    BnTrainOutput {
        y,
        x_hat,
        inv_std,
        batch_mean: stats.iter().map(|s| s.0).collect(),
        batch_var: stats.iter().map(|s| s.2).collect(),
    }
}

pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                yd[j] = xd[j] * scale + shift;
            }
        }
    }
    y
}

pub struct BnGrads {
    pub dx: Tensor,
    pub dgamma: Vec<f32>,
    pub dbeta: Vec<f32>,
}

pub fn batch_norm_train_backward(
    dy: &Tensor,
    x_hat: &Tensor,
    inv_std: &[f32],
    gamma: &[f32],
) -> BnGrads {
    let (n, c, h, w) = dy.dims4();
    let hw = h * w;
    let m = (n * hw) as f32;
    let dyd = dy.data();
    let xh = x_hat.data();
    let sums = exec::map_range(c, |ch| {
        let mut sb = 0.0f64;
        let mut sg = 0.0f64;
        for idx in channel_iter(n, c, hw, ch) {
            sb += dyd[idx] as f64;
            sg += (dyd[idx] * xh[idx]) as f64;
        }
        (sg as f32, sb as f32)
    });
    let mut dx = Tensor::zeros(dy.shape());
    let dxd = dx.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let (dg, db) = sums[ch];
            let k = gamma[ch] * inv_std[ch] / m;
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                dxd[j] = k * (m * dyd[j] - db - xh[j] * dg);
            }
        }
    }
    BnGrads {
        dx,
        dgamma: sums.iter().map(|s| s.0).collect(),
        dbeta: sums.iter().map(|s| s.1).collect(),
    }
}

/// `running = (1 - momentum) * running + momentum * batch`.
pub fn update_running(running: &mut [f32], batch: &[f32]) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * *b;
    }
}
