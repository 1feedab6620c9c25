//! Central finite-difference checks of tape gradients.

use super::params::ParameterStore;
use super::tape::{Bound, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Outcome of checking every coordinate of a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval_scalar<T: Real>(tape: &Tape<T>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    let x = v.data()[0].as_f64();
    if !x.is_finite() {
        return Err(Error::NonFinite("gradcheck objective".into()));
    }
    Ok(x)
}

/// Max relative error between the tape gradient of `f` at `point` and central
/// differences with step `eps`.
pub fn gradcheck<T, F>(f: F, point: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !point.is_finite() {
        return Err(Error::NonFinite("gradcheck point".into()));
    }
    let mut tape = Tape::new();
    let x = tape.parameter("x", point.clone(), true);
    let out = f(&mut tape, x)?;
    eval_scalar(&tape, out)?;
    let analytic = tape.backward(out)?;
    let analytic = analytic.get("x").expect("registered").to_f64_vec();

    let eval = |p: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.parameter("x", p, true);
        let out = f(&mut tape, x)?;
        eval_scalar(&tape, out)
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        let mut minus = point.clone();
        let base = point.data()[i].as_f64();
        plus.data_mut()[i] = T::lit(base + eps);
        minus.data_mut()[i] = T::lit(base - eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// Same check over every coordinate of every tensor in `store`.
pub fn gradcheck_store<T, F>(f: F, store: &ParameterStore<T>, eps: f64) -> Result<GradcheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(store, true);
    let out = f(&mut tape, &bound)?;
    eval_scalar(&tape, out)?;
    let grads = tape.backward(out)?;

    let eval = |s: &ParameterStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tape.bind(s, true);
        let out = f(&mut tape, &bound)?;
        eval_scalar(&tape, out)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    let mut probe = store.clone();
    for (name, t) in store.iter() {
        let analytic = grads.get(name).expect("every parameter gets a gradient");
        for i in 0..t.len() {
            let base = t.data()[i];
            probe.get_mut(name)?.data_mut()[i] = T::lit(base.as_f64() + eps);
            let fp = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = T::lit(base.as_f64() - eps);
            let fm = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = base;
            let numeric = (fp - fm) / (2.0 * eps);
            let err = relative_error(analytic.data()[i].as_f64(), numeric);
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_parameter = name.to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let p = Tensor::<f64>::from_f64(&[1], &[3.0]).unwrap();
        let err = gradcheck(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_scalar_objective_rejected() {
        let p = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        assert!(gradcheck(|t, x| t.exp(x), &p, 1e-4).is_err());
    }
}
