//! 2-D convolution via im2row + SGEMM.
//!
//! For image `n` the patch matrix `rows[P, K]` holds one receptive field per
//! output pixel (`P = out_h * out_w`, `K = c_in * k * k`). With weights stored as
//! `[c_out, K]` the three products are
//!
//! * forward:  `y_n[c_out, P]  = W · rows_nᵀ`
//! * weights:  `dW[c_out, K]  += dy_n · rows_n`
//! * input:    `drows_n[P, K]  = dy_nᵀ · W`, scattered back with row2im.

use crate::exec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` when the input is too small.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

struct Dims {
    c_in: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Dims {
    fn patch_len(&self, g: &ConvGeom) -> usize {
        self.c_in * g.kernel * g.kernel
    }
    fn pixels(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2row(x: &[f32], d: &Dims, g: &ConvGeom, rows: &mut [f32]) {
    let k = g.kernel;
    let kk = d.patch_len(g);
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            let row = &mut rows[(oy * d.ow + ox) * kk..(oy * d.ow + ox + 1) * kk];
            let mut idx = 0;
            for c in 0..d.c_in {
                let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
                for ky in 0..k {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    for kx in 0..k {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        row[idx] = if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w
                        {
                            plane[iy as usize * d.w + ix as usize]
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn row2im(rows: &[f32], d: &Dims, g: &ConvGeom, dx: &mut [f32]) {
    let k = g.kernel;
    let kk = d.patch_len(g);
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            let row = &rows[(oy * d.ow + ox) * kk..(oy * d.ow + ox + 1) * kk];
            let mut idx = 0;
            for c in 0..d.c_in {
                let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
                for ky in 0..k {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    for kx in 0..k {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                            plane[iy as usize * d.w + ix as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: all strides and extents are derived from the slice shapes above,
    // so every index touched by sgemm lies within `a`, `b` and `c`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn dims(x: &Tensor, weight: &Tensor, g: &ConvGeom) -> Dims {
    let (_, c_in, h, w) = x.dims4();
    let (_, wc, wk, _) = weight.dims4();
    assert_eq!(wc, c_in, "conv weight expects {} input channels, got {}", wc, c_in);
    assert_eq!(wk, g.kernel);
    let oh = g.out_len(h).expect("conv input smaller than kernel span");
    let ow = g.out_len(w).expect("conv input smaller than kernel span");
    Dims {
        c_in,
        h,
        w,
        oh,
        ow,
    }
}

pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    let (n, _, _, _) = x.dims4();
    let c_out = weight.shape()[0];
    let d = dims(x, weight, g);
    let kk = d.patch_len(g);
    let p = d.pixels();
    let in_len = d.c_in * d.h * d.w;
    let mut out = Tensor::zeros(&[n, c_out, d.oh, d.ow]);
    let xd = x.data();
    let wd = weight.data();
    exec::for_each_chunk(out.data_mut(), c_out * p, |i, y| {
        let xn = &xd[i * in_len..(i + 1) * in_len];
        if g.is_pointwise() {
            gemm(c_out, kk, p, wd, kk, 1, xn, p, 1, y, p, 1);
        } else {
            let mut rows = vec![0.0f32; p * kk];
            im2row(xn, &d, g, &mut rows);
            gemm(c_out, kk, p, wd, kk, 1, &rows, 1, kk, y, p, 1);
        }
        if let Some(b) = bias {
            for (co, plane) in y.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    out
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    dy: &Tensor,
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads {
    let (n, _, _, _) = x.dims4();
    let c_out = weight.shape()[0];
    let d = dims(x, weight, g);
    let kk = d.patch_len(g);
    let p = d.pixels();
    let in_len = d.c_in * d.h * d.w;
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();

    let dw = want_dw.then(|| {
        let partials = exec::map_range(n, |i| {
            let xn = &xd[i * in_len..(i + 1) * in_len];
            let dyn_ = &dyd[i * c_out * p..(i + 1) * c_out * p];
            let mut part = vec![0.0f32; c_out * kk];
            if g.is_pointwise() {
                gemm(c_out, p, kk, dyn_, p, 1, xn, 1, p, &mut part, kk, 1);
            } else {
                let mut rows = vec![0.0f32; p * kk];
                im2row(xn, &d, g, &mut rows);
                gemm(c_out, p, kk, dyn_, p, 1, &rows, kk, 1, &mut part, kk, 1);
            }
            part
        });
        let mut acc = vec![0.0f32; c_out * kk];
        for part in &partials {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += *b;
            }
        }
        Tensor::from_vec(weight.shape(), acc).expect("weight grad shape")
    });

    let db = want_db.then(|| {
        let mut acc = vec![0.0f32; c_out];
        for i in 0..n {
            for (co, a) in acc.iter_mut().enumerate() {
                let plane = &dyd[(i * c_out + co) * p..(i * c_out + co + 1) * p];
                *a += plane.iter().sum::<f32>();
            }
        }
        Tensor::from_vec(&[c_out], acc).expect("bias grad shape")
    });

    let dx = want_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        exec::for_each_chunk(dx.data_mut(), in_len, |i, dxn| {
            let dyn_ = &dyd[i * c_out * p..(i + 1) * c_out * p];
            if g.is_pointwise() {
                gemm(d.c_in, c_out, p, wd, 1, kk, dyn_, p, 1, dxn, p, 1);
            } else {
                let mut drows = vec![0.0f32; p * kk];
                gemm(p, c_out, kk, dyn_, 1, p, wd, kk, 1, &mut drows, kk, 1);
                row2im(&drows, &d, g, dxn);
            }
        });
        dx
    });

    ConvGrads { dx, dw, db }
}
