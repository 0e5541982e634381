//! Group normalization.
//!
//! Channels are split into `num_groups` consecutive blocks of `C / G`
//! channels. For every sample and group the mean and variance are taken over
//! the block's channels and all spatial positions (m = (C/G)·H·W values), the
//! values are normalized with σ = sqrt(var + ε), and a per-channel scale and
//! shift are applied. Nothing is shared across the batch axis, so results do
//! not depend on batch size.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupNormParams {
    pub num_groups: usize,
    pub epsilon: f64,
}

impl Default for GroupNormParams {
    fn default() -> Self {
        Self {
            num_groups: 16,
            epsilon: 1e-5,
        }
    }
}

impl GroupNormParams {
    pub fn new(num_groups: usize, epsilon: f64) -> Self {
        Self {
            num_groups,
            epsilon,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("group_norm", "epsilon must be positive"));
        }
        if self.num_groups == 0 || channels % self.num_groups != 0 {
            return Err(Error::invalid(
                "group_norm",
                format!(
                    "C={channels} channels not divisible into G={} groups",
                    self.num_groups
                ),
            ));
        }
        Ok(())
    }
}

struct GroupNormBackward {
    groups: usize,
    channels: usize,
    plane: usize,
    /// (mean, 1/σ) per (sample, group)
    stats: Vec<(f64, f64)>,
}

impl<T: Scalar> Backward<T> for GroupNormBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (x, gamma) = (inputs[0].data(), inputs[1].data());
        let dy = grad.data();
        let cpg = self.channels / self.groups;
        let group_len = cpg * self.plane;
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dgamma = vec![0.0f64; self.channels];
        let mut dbeta = vec![0.0f64; self.channels];

        for (sg, &(mean, rstd)) in self.stats.iter().enumerate() {
            let g = sg % self.groups;
            let base = sg * group_len;
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for ci in 0..cpg {
                let c = g * cpg + ci;
                let gc = gamma[c].as_f64();
                let off = base + ci * self.plane;
                for i in off..off + self.plane {
                    let xhat = (x[i].as_f64() - mean) * rstd;
                    let d = dy[i].as_f64();
                    dgamma[c] += d * xhat;
                    dbeta[c] += d;
                    sum_dxhat += d * gc;
                    sum_dxhat_xhat += d * gc * xhat;
                }
            }
            if let Some(dx) = dx.as_mut() {
                let m = group_len as f64;
                let (mean_d, mean_dx) = (sum_dxhat / m, sum_dxhat_xhat / m);
                for ci in 0..cpg {
                    let c = g * cpg + ci;
                    let gc = gamma[c].as_f64();
                    let off = base + ci * self.plane;
                    for i in off..off + self.plane {
                        let xhat = (x[i].as_f64() - mean) * rstd;
                        let v = rstd * (dy[i].as_f64() * gc - mean_d - xhat * mean_dx);
                        dx[i] = T::from_f64_lossy(v);
                    }
                }
            }
        }

        let to_t = |v: Vec<f64>| v.into_iter().map(T::from_f64_lossy).collect::<Vec<T>>();
        vec![
            dx,
            needs[1].then(|| to_t(dgamma)),
            needs[2].then(|| to_t(dbeta)),
        ]
    }
}

impl<T: Scalar> Tape<T> {
    /// Group normalization of `x: [n, c, h, w]` with per-channel `gamma` and
    /// `beta` of shape `[c]`.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        params: &GroupNormParams,
    ) -> Result<Var> {
        const OP: &str = "group_norm";
        let xv = self.try_value(x)?;
        let (n, c, h, w) = xv.dims4(OP)?;
        params.validate(c)?;
        for v in [gamma, beta] {
            let t = self.try_value(v)?;
            if t.shape() != [c] {
                return Err(Error::shape(OP, t.shape(), &[c]));
            }
        }
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let xd = xv.data();
        let groups = params.num_groups;
        let cpg = c / groups;
        let plane = h * w;
        let group_len = cpg * plane;

        let mut stats = Vec::with_capacity(n * groups);
        let mut out = vec![T::zero(); xd.len()];
        for sg in 0..n * groups {
            let g = sg % groups;
            let chunk = &xd[sg * group_len..(sg + 1) * group_len];
            let m = group_len as f64;
            let mean = chunk.iter().map(|v| v.as_f64()).sum::<f64>() / m;
            let var = chunk
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / m;
            let rstd = 1.0 / (var + params.epsilon).sqrt();
            stats.push((mean, rstd));
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                let (ga, be) = (gd[ch].as_f64(), bd[ch].as_f64());
                let off = ci * plane;
                for i in off..off + plane {
                    let xhat = (chunk[i].as_f64() - mean) * rstd;
                    out[sg * group_len + i] = T::from_f64_lossy(xhat * ga + be);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, h, w], out);
        self.record(
            OP,
            &[x, gamma, beta],
            out,
            GroupNormBackward {
                groups,
                channels: c,
                plane,
                stats,
            },
        )
    }
}
