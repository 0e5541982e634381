//! 2-d cross-correlation with zero padding, lowered to im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Backward, Scalar, Tape, Tensor, Var};

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dGeometry {
    pub fn new(stride: usize, pad_h: usize, pad_w: usize) -> Self {
        Self {
            stride,
            pad_h,
            pad_w,
        }
    }

    /// Stride 1 with padding that keeps odd-sized kernels shape-preserving.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self::new(1, kh / 2, kw / 2)
    }
}

/// floor((extent + 2·pad − kernel) / stride) + 1, or `None` when the kernel
/// does not fit.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Dims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    g: Conv2dGeometry,
}

impl Dims {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.g.stride == 1 && self.g.pad_h == 0 && self.g.pad_w == 0
    }
}

fn im2col<T: Scalar>(x: &[T], d: &Dims, cols: &mut [T]) {
    let (s, ph, pw) = (d.g.stride as isize, d.g.pad_h as isize, d.g.pad_w as isize);
    let p = d.p();
    for c in 0..d.cin {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = oy as isize * s + ki as isize - ph;
                    let out_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - pw;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Dims, dx: &mut [T]) {
    let (s, ph, pw) = (d.g.stride as isize, d.g.pad_h as isize, d.g.pad_w as isize);
    let p = d.p();
    for c in 0..d.cin {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = oy as isize * s + ki as isize - ph;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = ox as isize * s + kj as isize - pw;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column matrix for one sample, borrowing the input when no lowering is needed.
fn columns<'a, T: Scalar>(x: &'a [T], d: &Dims, buf: &'a mut Vec<T>) -> &'a [T] {
    if d.pointwise() {
        x
    } else {
        buf.resize(d.k() * d.p(), T::zero());
        im2col(x, d, buf);
        buf
    }
}

struct Conv2dBackward {
    d: Dims,
    batch: usize,
    has_bias: bool,
}

impl<T: Scalar> Backward<T> for Conv2dBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let (x, w, dy) = (inputs[0].data(), inputs[1].data(), grad.data());
        let (in_len, out_len, k, p) = (d.cin * d.h * d.w, d.cout * d.p(), d.k(), d.p());
        let (need_x, need_w) = (needs[0], needs[1]);

        // Per-sample partials, reduced in sample order for thread-count
        // independent results.
        let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..self.batch)
            .into_par_iter()
            .map(|n| {
                let dy_n = &dy[n * out_len..(n + 1) * out_len];
                let dw = need_w.then(|| {
                    let mut buf = Vec::new();
                    let cols = columns(&x[n * in_len..(n + 1) * in_len], &d, &mut buf);
                    let mut dw = vec![T::zero(); d.cout * k];
                    gemm(d.cout, p, k, dy_n, false, cols, true, &mut dw, false);
                    dw
                });
                let dx = need_x.then(|| {
                    if d.pointwise() {
                        let mut dx = vec![T::zero(); in_len];
                        gemm(k, d.cout, p, w, true, dy_n, false, &mut dx, false);
                        dx
                    } else {
                        let mut dcols = vec![T::zero(); k * p];
                        gemm(k, d.cout, p, w, true, dy_n, false, &mut dcols, false);
                        let mut dx = vec![T::zero(); in_len];
                        col2im(&dcols, &d, &mut dx);
                        dx
                    }
                });
                (dx, dw)
            })
            .collect();

        let mut gx = need_x.then(|| Vec::with_capacity(self.batch * in_len));
        let mut gw = need_w.then(|| vec![T::zero(); d.cout * k]);
        for (dx, dw) in per_sample {
            if let (Some(gx), Some(dx)) = (gx.as_mut(), dx) {
                gx.extend_from_slice(&dx);
            }
            if let (Some(gw), Some(dw)) = (gw.as_mut(), dw) {
                gw.iter_mut().zip(&dw).for_each(|(a, &b)| *a = *a + b);
            }
        }

        let mut out = vec![gx, gw];
        if self.has_bias {
            out.push(needs[2].then(|| {
                (0..d.cout)
                    .map(|co| {
                        let s: f64 = (0..self.batch)
                            .flat_map(|n| {
                                let off = n * out_len + co * p;
                                dy[off..off + p].iter().map(|v| v.as_f64())
                            })
                            .sum();
                        T::from_f64_lossy(s)
                    })
                    .collect()
            }));
        }
        out
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x: [n, cin, h, w]` with `weight: [cout, cin, kh, kw]`
    /// plus an optional `bias: [cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xv = self.try_value(x)?;
        let wv = self.try_value(weight)?;
        let (n, cin, h, w) = xv.dims4(OP)?;
        let (cout, wcin, kh, kw) = wv.dims4(OP)?;
        if wcin != cin {
            return Err(Error::invalid(
                OP,
                format!("input has {cin} channels but weight expects {wcin} (shapes {:?} and {:?})", xv.shape(), wv.shape()),
            ));
        }
        if geom.stride == 0 {
            return Err(Error::invalid(OP, "stride must be at least 1"));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_extent(h, kh, geom.stride, geom.pad_h),
            conv_output_extent(w, kw, geom.stride, geom.pad_w),
        ) else {
            return Err(Error::invalid(
                OP,
                format!("output size < 1 for input {h}x{w}, kernel {kh}x{kw}, {geom:?}"),
            ));
        };
        let bias_data = match bias {
            Some(b) => {
                let bv = self.try_value(b)?;
                if bv.shape() != [cout] {
                    return Err(Error::shape(OP, bv.shape(), &[cout]));
                }
                Some(bv.data())
            }
            None => None,
        };

        let d = Dims {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho,
            wo,
            g: geom,
        };
        let (in_len, out_len, p) = (cin * h * w, cout * ho * wo, d.p());
        let (xd, wd) = (xv.data(), wv.data());
        let samples: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut buf = Vec::new();
                let cols = columns(&xd[i * in_len..(i + 1) * in_len], &d, &mut buf);
                let mut out = vec![T::zero(); out_len];
                gemm(cout, d.k(), p, wd, false, cols, false, &mut out, false);
                if let Some(b) = bias_data {
                    for (co, &bc) in b.iter().enumerate() {
                        out[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = *v + bc);
                    }
                }
                out
            })
            .collect();
        let out = Tensor::from_parts(vec![n, cout, ho, wo], samples.concat());

        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(
            OP,
            &inputs,
            out,
            Conv2dBackward {
                d,
                batch: n,
                has_bias: bias.is_some(),
            },
        )
    }
}
