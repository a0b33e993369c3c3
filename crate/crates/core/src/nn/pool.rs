//! Max pooling and adaptive average pooling.

use crate::tensor::Tensor;

pub fn max_pool_forward(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Tensor, Vec<u32>) {
    let (n, c, h, w) = x.dims4();
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        // NaN wins so that it propagates like in the other ops.
                        if src[idx] > best || (src[idx].is_nan() && !best.is_nan()) {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                od[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool_backward(dy: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Tensor {
    let (n, c, oh, ow) = dy.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    let dyd = dy.data();
    for plane in 0..n * c {
        for o in 0..oh * ow {
            let idx = plane * oh * ow + o;
            dxd[plane * h * w + argmax[idx] as usize] += dyd[idx];
        }
    }
    dx
}

/// Bin `i` of `bins` over an axis of length `len`: `[floor(i*len/bins), ceil((i+1)*len/bins))`.
pub fn adaptive_bin(i: usize, bins: usize, len: usize) -> (usize, usize) {
    let start = i * len / bins;
    let end = ((i + 1) * len).div_ceil(bins);
    (start, end)
}

pub fn adaptive_avg_pool_forward(x: &Tensor, bins: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, bins, bins]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        for by in 0..bins {
            let (y0, y1) = adaptive_bin(by, bins, h);
            for bx in 0..bins {
                let (x0, x1) = adaptive_bin(bx, bins, w);
                let mut acc = 0.0f64;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[yy * w + xx] as f64;
                    }
                }
                od[plane * bins * bins + by * bins + bx] =
                    (acc / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward(dy: &Tensor, input_shape: &[usize]) -> Tensor {
    let (n, c, bins, _) = dy.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    let dyd = dy.data();
    for plane in 0..n * c {
        for by in 0..bins {
            let (y0, y1) = adaptive_bin(by, bins, h);
            for bx in 0..bins {
                let (x0, x1) = adaptive_bin(bx, bins, w);
                let g = dyd[plane * bins * bins + by * bins + bx] / ((y1 - y0) * (x1 - x0)) as f32;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        dxd[plane * h * w + yy * w + xx] += g;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_bins_cover_axis() {
        for len in [1, 5, 8, 16, 32] {
            for bins in [1, 2, 3, 6] {
                let mut covered = vec![false; len];
                for i in 0..bins {
                    let (s, e) = adaptive_bin(i, bins, len);
                    assert!(s < e && e <= len);
                    covered[s..e].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let (y, arg) = max_pool_forward(&x, 3, 2, 1);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        let dx = max_pool_backward(&Tensor::full(&[1, 1, 2, 2], 1.0), &arg, x.shape());
        assert_eq!(dx.sum(), 4.0);
        assert_eq!(dx.data()[15], 1.0);
    }
}
