//! Nearest-neighbour upsampling and channel concatenation.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Scalar, Tape, Tensor, Var};

struct Upsample2xBackward {
    h: usize,
    w: usize,
}

impl<T: Scalar> Backward<T> for Upsample2xBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (h, w) = (self.h, self.w);
        let g = grad.data();
        let planes = inputs[0].numel() / (h * w);
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for pl in 0..planes {
            let gp = &g[pl * 4 * h * w..(pl + 1) * 4 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let (r0, r1) = (2 * y * 2 * w, (2 * y + 1) * 2 * w);
                    dx[pl * h * w + y * w + x] =
                        gp[r0 + 2 * x] + gp[r0 + 2 * x + 1] + gp[r1 + 2 * x] + gp[r1 + 2 * x + 1];
                }
            }
        }
        vec![Some(dx)]
    }
}

struct ConcatBackward {
    channels: Vec<usize>,
    plane: usize,
    batch: usize,
}

impl<T: Scalar> Backward<T> for ConcatBackward {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let total: usize = self.channels.iter().sum();
        let g = grad.data();
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.channels.len());
        for (&c, &need) in self.channels.iter().zip(needs) {
            out.push(need.then(|| {
                let mut dx = Vec::with_capacity(self.batch * c * self.plane);
                for n in 0..self.batch {
                    let start = (n * total + offset) * self.plane;
                    dx.extend_from_slice(&g[start..start + c * self.plane]);
                }
                dx
            }));
            offset += c;
        }
        out
    }
}

impl<T: Scalar> Tape<T> {
    /// Replicates every pixel into a 2×2 block.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xv = self.try_value(x)?;
        let (n, c, h, w) = xv.dims4("upsample2x")?;
        let xd = xv.data();
        let mut out = Vec::with_capacity(4 * xd.len());
        for pl in 0..n * c {
            for y in 0..h {
                let row = &xd[pl * h * w + y * w..pl * h * w + (y + 1) * w];
                let start = out.len();
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
                out.extend_from_within(start..start + 2 * w);
            }
        }
        let out = Tensor::from_parts(vec![n, c, 2 * h, 2 * w], out);
        self.record("upsample2x", &[x], out, Upsample2xBackward { h, w })
    }

    /// Concatenates along the channel axis in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid(OP, "no inputs"))?;
        if xs.len() == 1 {
            self.check(first)?;
            return Ok(first);
        }
        let (n, _, h, w) = self.try_value(first)?.dims4(OP)?;
        let mut channels = Vec::with_capacity(xs.len());
        for &v in xs {
            let t = self.try_value(v)?;
            let (vn, vc, vh, vw) = t.dims4(OP)?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(OP, self.value(first).shape(), t.shape()));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for (&v, &c) in xs.iter().zip(&channels) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[i * c * plane..(i + 1) * c * plane]);
            }
        }
        let out = Tensor::from_parts(vec![n, total, h, w], out);
        self.record(
            OP,
            xs,
            out,
            ConcatBackward {
                channels,
                plane,
                batch: n,
            },
        )
    }
}
