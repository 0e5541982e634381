//! Max and average pooling over square windows.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Scalar, Tape, Tensor, Var};

use super::conv::conv_output_extent;

/// Square pooling window with stride and padding.
///
/// Padded positions never contribute: they are skipped by max pooling and
/// excluded from the average's divisor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2d {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool2d {
    pub fn new(window: usize, stride: usize, padding: usize) -> Self {
        Self {
            window,
            stride,
            padding,
        }
    }

    fn out_dims(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::invalid(op, "window and stride must be at least 1"));
        }
        if self.padding >= self.window {
            return Err(Error::invalid(op, "padding must be smaller than the window"));
        }
        match (
            conv_output_extent(h, self.window, self.stride, self.padding),
            conv_output_extent(w, self.window, self.stride, self.padding),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::invalid(
                op,
                format!(
                    "window {} larger than padded input {}x{} (padding {})",
                    self.window,
                    h + 2 * self.padding,
                    w + 2 * self.padding,
                    self.padding
                ),
            )),
        }
    }

    /// Valid (unpadded) index range covered by output position `o`.
    fn span(&self, o: usize, extent: usize) -> std::ops::Range<usize> {
        let start = (o * self.stride) as isize - self.padding as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.window as isize).max(0) as usize).min(extent);
        lo..hi.max(lo)
    }
}

struct MaxPoolBackward {
    /// flat input index of each output's maximum, `usize::MAX` if empty
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPoolBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            if src != usize::MAX {
                dx[src] = dx[src] + g;
            }
        }
        vec![Some(dx)]
    }
}

struct AvgPoolBackward {
    pool: Pool2d,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl<T: Scalar> Backward<T> for AvgPoolBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (h, w, ho, wo) = (self.h, self.w, self.ho, self.wo);
        let mut dx = vec![T::zero(); inputs[0].numel()];
        let planes = inputs[0].numel() / (h * w);
        for pl in 0..planes {
            let dplane = &mut dx[pl * h * w..(pl + 1) * h * w];
            let gplane = &grad.data()[pl * ho * wo..(pl + 1) * ho * wo];
            for oy in 0..ho {
                let ys = self.pool.span(oy, h);
                for ox in 0..wo {
                    let xs = self.pool.span(ox, w);
                    let count = ys.len() * xs.len();
                    if count == 0 {
                        continue;
                    }
                    let share = gplane[oy * wo + ox] / T::from_usize(count).unwrap();
                    for y in ys.clone() {
                        for x in xs.clone() {
                            dplane[y * w + x] = dplane[y * w + x] + share;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Per-window maximum; the gradient goes to the first maximal element in
    /// row-major window order.
    pub fn max_pool2d(&mut self, x: Var, pool: Pool2d) -> Result<Var> {
        const OP: &str = "max_pool2d";
        let xv = self.try_value(x)?;
        let (n, c, h, w) = xv.dims4(OP)?;
        let (ho, wo) = pool.out_dims(OP, h, w)?;
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut argmax = vec![usize::MAX; out.len()];
        let xd = xv.data();
        for pl in 0..n * c {
            let base = pl * h * w;
            for oy in 0..ho {
                let ys = pool.span(oy, h);
                for ox in 0..wo {
                    let xs = pool.span(ox, w);
                    let o = pl * ho * wo + oy * wo + ox;
                    let mut best: Option<(T, usize)> = None;
                    for y in ys.clone() {
                        for xi in xs.clone() {
                            let idx = base + y * w + xi;
                            let v = xd[idx];
                            if best.is_none_or(|(b, _)| v > b) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    if let Some((v, idx)) = best {
                        out[o] = v;
                        argmax[o] = idx;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, ho, wo], out);
        self.record(OP, &[x], out, MaxPoolBackward { argmax })
    }

    /// Per-window mean over the unpadded elements of each window.
    pub fn avg_pool2d(&mut self, x: Var, pool: Pool2d) -> Result<Var> {
        const OP: &str = "avg_pool2d";
        let xv = self.try_value(x)?;
        let (n, c, h, w) = xv.dims4(OP)?;
        let (ho, wo) = pool.out_dims(OP, h, w)?;
        let mut out = vec![T::zero(); n * c * ho * wo];
        let xd = xv.data();
        for pl in 0..n * c {
            let plane = &xd[pl * h * w..(pl + 1) * h * w];
            for oy in 0..ho {
                let ys = pool.span(oy, h);
                for ox in 0..wo {
                    let xs = pool.span(ox, w);
                    let count = ys.len() * xs.len();
                    if count == 0 {
                        continue;
                    }
                    let mut s = 0.0f64;
                    for y in ys.clone() {
                        for xi in xs.clone() {
                            s += plane[y * w + xi].as_f64();
                        }
                    }
                    out[pl * ho * wo + oy * wo + ox] = T::from_f64_lossy(s / count as f64);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, ho, wo], out);
        self.record(
            OP,
            &[x],
            out,
            AvgPoolBackward {
                pool,
                h,
                w,
                ho,
                wo,
            },
        )
    }
}
