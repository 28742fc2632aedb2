//! Central-difference gradient verification.
//!
//! Perturbations are applied to the `f32` inputs, but the step actually taken
//! and the resulting difference quotient are formed in `f64`.

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::Tensor;

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check function must return a scalar"));
    }
    let y = v.data()[0] as f64;
    if !y.is_finite() {
        return Err(Error::numeric("grad_check function is not finite"));
    }
    Ok(y)
}

/// Max over all coordinates of all inputs of
/// `|analytic − central_diff| / max(1, |central_diff|)`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f32) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = true;
            tape.leaf(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for i in 0..input.len() {
            let x0 = input.data()[i];
            let plus = x0 + h;
            let minus = x0 - h;
            probe[k].data_mut()[i] = plus;
            let fp = eval(&f, &probe)?;
            probe[k].data_mut()[i] = minus;
            let fm = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (plus as f64 - minus as f64);
            let a = analytic.map(|g| g[i] as f64).unwrap_or(0.0);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn grad_check<F>(f: F, x: &Tensor, h: f32) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}
