//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

const PROJECTION_SEED: u64 = 0x5eed_9c4d;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over elements of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// (input index, element index) of the worst element
    pub worst: Option<(usize, usize)>,
    /// the function produced NaN/Inf somewhere during the check
    pub non_finite: bool,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.non_finite && self.max_rel_error < tol
    }

    fn failed() -> Self {
        Self {
            max_rel_error: f64::INFINITY,
            worst: None,
            non_finite: true,
            checked: 0,
        }
    }
}

/// Evaluates `f` and reduces a non-scalar output to a scalar with a fixed
/// pseudo-random projection so every output element contributes.
fn scalar_output<T: Scalar, F>(f: &F, tape: &mut Tape<T>, vars: &[Var]) -> Result<Var>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let out = f(tape, vars)?;
    let value = tape.try_value(out)?;
    if value.numel() == 1 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let weights = Tensor::from_fn(value.shape().to_vec(), |_| {
        T::from_f64_lossy(rng.random_range(0.5..1.5))
    });
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

enum Eval {
    Value(f64),
    NonFinite,
}

fn evaluate<T: Scalar, F>(f: &F, xs: &[Tensor<T>]) -> Result<Eval>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    match scalar_output(f, &mut tape, &vars) {
        Ok(out) => {
            let v = tape.value(out).data()[0].as_f64();
            Ok(if v.is_finite() { Eval::Value(v) } else { Eval::NonFinite })
        }
        Err(Error::NonFinite { .. }) => Ok(Eval::NonFinite),
        Err(e) => Err(e),
    }
}

/// Compares tape gradients of `f` with respect to every element of every
/// input against central differences with the given step.
///
/// The effective step is measured from the perturbed values actually
/// representable in `T`, which keeps `f32` checks honest.
pub fn finite_diff_check_many<T: Scalar, F>(
    f: F,
    xs: &[Tensor<T>],
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite_diff_check", "step must be positive"));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = match scalar_output(&f, &mut tape, &vars) {
        Ok(out) => out,
        Err(Error::NonFinite { .. }) => return Ok(GradCheckReport::failed()),
        Err(e) => return Err(e),
    };
    if !tape.value(out).is_finite() {
        return Ok(GradCheckReport::failed());
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(xs)
        .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros_like(x)))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        non_finite: false,
        checked: 0,
    };
    let mut probe: Vec<Tensor<T>> = xs.to_vec();
    let h = T::from_f64_lossy(step);
    for (i, x) in xs.iter().enumerate() {
        for j in 0..x.numel() {
            let x0 = x.data()[j];
            let (xp, xm) = (x0 + h, x0 - h);
            probe[i].data_mut()[j] = xp;
            let fp = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = xm;
            let fm = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x0;

            let (Eval::Value(fp), Eval::Value(fm)) = (fp, fm) else {
                return Ok(GradCheckReport::failed());
            };
            let numeric = (fp - fm) / (xp.as_f64() - xm.as_f64());
            let a = analytic[i].data()[j].as_f64();
            if !a.is_finite() {
                return Ok(GradCheckReport::failed());
            }
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check<T: Scalar, F>(f: F, x: &Tensor<T>, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_error() {
        let x = Tensor::<f64>::new([4], vec![0.1, -2.0, 3.5, 7.0]).unwrap();
        let r = finite_diff_check(|_, v| Ok(v), &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // A deliberately broken op: value x², claimed derivative 1.
        struct Bogus;
        impl crate::tensor::Backward<f64> for Bogus {
            fn backward(
                &self,
                _: &[&Tensor<f64>],
                _: &Tensor<f64>,
                g: &Tensor<f64>,
                _: &[bool],
            ) -> Vec<Option<Vec<f64>>> {
                vec![Some(g.data().to_vec())]
            }
        }
        let x = Tensor::<f64>::new([2], vec![2.0, 3.0]).unwrap();
        let r = finite_diff_check(
            |tape, v| {
                let sq = tape.value(v).map(|a| a * a);
                tape.record("bogus", &[v], sq, Bogus)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(!r.passes(1e-3));
    }

    #[test]
    fn nan_output_reports_failure() {
        let x = Tensor::<f64>::new([2], vec![-1.0, 2.0]).unwrap();
        let r = finite_diff_check(|tape, v| tape.ln(v), &x, 1e-3).unwrap();
        assert!(r.non_finite);
        assert!(!r.passes(1.0));
    }
}
