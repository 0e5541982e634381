//! Pointwise activations.

use crate::error::Result;
use crate::tensor::{Backward, Scalar, Tape, Tensor, Var};

struct ReluBackward;

impl<T: Scalar> Backward<T> for ReluBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        // subgradient 0 at the kink
        let g = grad
            .data()
            .iter()
            .zip(inputs[0].data())
            .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(g)]
    }
}

struct SigmoidBackward;

impl<T: Scalar> Backward<T> for SigmoidBackward {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let g = grad
            .data()
            .iter()
            .zip(output.data())
            .map(|(&g, &y)| g * y * (T::one() - y))
            .collect();
        vec![Some(g)]
    }
}

/// Logistic function evaluated without overflow for large |x|.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    /// `max(0, x)` elementwise.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.try_value(x)?.map(|v| v.max(T::zero()));
        self.record("relu", &[x], out, ReluBackward)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.try_value(x)?.map(sigmoid_scalar);
        self.record("sigmoid", &[x], out, SigmoidBackward)
    }
}
