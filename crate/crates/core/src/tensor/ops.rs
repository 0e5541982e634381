//! Elementwise arithmetic and reductions.

use super::{Backward, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

struct BinaryBackward(Binary);

impl<T: Scalar> Backward<T> for BinaryBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (a, b, g) = (inputs[0].data(), inputs[1].data(), grad.data());
        let ga = needs[0].then(|| match self.0 {
            Binary::Add | Binary::Sub => g.to_vec(),
            Binary::Mul => g.iter().zip(b).map(|(&g, &b)| g * b).collect(),
            Binary::Div => g.iter().zip(b).map(|(&g, &b)| g / b).collect(),
        });
        let gb = needs[1].then(|| match self.0 {
            Binary::Add => g.to_vec(),
            Binary::Sub => g.iter().map(|&g| -g).collect(),
            Binary::Mul => g.iter().zip(a).map(|(&g, &a)| g * a).collect(),
            Binary::Div => g
                .iter()
                .zip(a.iter().zip(b))
                .map(|(&g, (&a, &b))| -g * a / (b * b))
                .collect(),
        });
        vec![ga, gb]
    }
}

struct ScaleBackward<T>(T);

impl<T: Scalar> Backward<T> for ScaleBackward<T> {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.data().iter().map(|&g| g * self.0).collect())]
    }
}

struct PassThrough;

impl<T: Scalar> Backward<T> for PassThrough {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.data().to_vec())]
    }
}

/// Broadcasts a scalar gradient back, times a constant factor.
struct SumBackward(f64);

impl<T: Scalar> Backward<T> for SumBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let g = grad.data()[0] * T::from_f64_lossy(self.0);
        vec![Some(vec![g; inputs[0].numel()])]
    }
}

struct LnBackward;

impl<T: Scalar> Backward<T> for LnBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        vec![Some(grad.data().iter().zip(x).map(|(&g, &x)| g / x).collect())]
    }
}

struct ClampBackward<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Backward<T> for ClampBackward<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let g = grad
            .data()
            .iter()
            .zip(x)
            .map(|(&g, &x)| if x >= self.lo && x <= self.hi { g } else { T::zero() })
            .collect();
        vec![Some(g)]
    }
}

fn reduce_sum<T: Scalar>(data: &[T]) -> T {
    T::from_f64_lossy(data.iter().map(|v| v.as_f64()).sum())
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.try_value(a)?, self.try_value(b)?);
        if va.shape() != vb.shape() {
            return Err(Error::shape(kind.name(), va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| kind.apply(x, y))
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.record(kind.name(), &[a, b], out, BinaryBackward(kind))
    }

    /// Elementwise `a + b`; shapes must match.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// `factor · x`.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.try_value(x)?.map(|v| v * factor);
        self.record("scale", &[x], out, ScaleBackward(factor))
    }

    /// `x + c` for a constant `c`.
    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.try_value(x)?.map(|v| v + c);
        self.record("add_scalar", &[x], out, PassThrough)
    }

    /// Sum of all elements as a scalar, accumulated in double precision.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(reduce_sum(self.try_value(x)?.data()));
        self.record("sum", &[x], out, SumBackward(1.0))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.try_value(x)?;
        let n = v.numel() as f64;
        let out = Tensor::scalar(T::from_f64_lossy(
            v.data().iter().map(|v| v.as_f64()).sum::<f64>() / n,
        ));
        self.record("mean", &[x], out, SumBackward(1.0 / n))
    }

    /// Natural logarithm.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out = self.try_value(x)?.map(|v| v.ln());
        self.record("ln", &[x], out, LnBackward)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::invalid("clamp", format!("empty interval [{lo}, {hi}]")));
        }
        let out = self.try_value(x)?.map(|v| v.max(lo).min(hi));
        self.record("clamp", &[x], out, ClampBackward { lo, hi })
    }
}
