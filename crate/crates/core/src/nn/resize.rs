//! Bilinear resampling with half-pixel centers (`align_corners = false`).

use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f32,
    w1: f32,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
            let l1 = (src - i0 as f64) as f32;
            let l1 = if i1 == i0 { 0.0 } else { l1 };
            Tap {
                i0,
                i1,
                w0: 1.0 - l1,
                w1: l1,
            }
        })
        .collect()
}

pub fn bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    if h == out_h && w == out_w {
        return x.clone();
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut od[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = b.w0 * r0[b.i0] + b.w1 * r0[b.i1];
                let bot = b.w0 * r1[b.i0] + b.w1 * r1[b.i1];
                dst[oy * out_w + ox] = a.w0 * top + a.w1 * bot;
            }
        }
    }
    out
}

pub fn bilinear_backward(dy: &Tensor, input_shape: &[usize]) -> Tensor {
    let (n, c, out_h, out_w) = dy.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    if h == out_h && w == out_w {
        return dy.clone();
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    let dyd = dy.data();
    for plane in 0..n * c {
        let g = &dyd[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let dst = &mut dxd[plane * h * w..(plane + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * out_w + ox];
                dst[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
                dst[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
                dst[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
                dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
            }
        }
    }
    dx
}
