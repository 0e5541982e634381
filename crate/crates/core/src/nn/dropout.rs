//! Inverted dropout with an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Backward, Scalar, Tape, Tensor, Var};

struct DropoutBackward<T> {
    /// 0 for dropped elements, 1/(1 − rate) for kept ones
    mask: Vec<T>,
}

impl<T: Scalar> Backward<T> for DropoutBackward<T> {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(
            grad.data()
                .iter()
                .zip(&self.mask)
                .map(|(&g, &m)| g * m)
                .collect(),
        )]
    }
}

impl<T: Scalar> Tape<T> {
    /// Zeroes each element with probability `rate` and rescales survivors by
    /// `1/(1 − rate)` while training; returns `x` unchanged otherwise.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        self.check(x)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.record("dropout", &[x], out, DropoutBackward { mask })
    }
}
