//! Central finite-difference gradient checks in double precision.
//!
//! The numerical side only ever runs forward passes, so it stays
//! independent of the backward rules it checks. Coordinates whose `+h` and
//! `-h` evaluations land on different sides of a kink (ReLU input, L1
//! residual) are skipped, since the central difference is meaningless there.

use crate::dropout::Mode;
use crate::error::Result;
use crate::model::SRNet;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per checked tensor.
    pub rel_errors: Vec<f64>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: GradReport) {
        self.rel_errors.extend(other.rel_errors);
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
    }
}

/// Norm-wise relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Numerical gradient of `eval` at `base` by central differences.
///
/// `eval` returns the scalar value and a kink signature. Returns the
/// gradient with skipped coordinates marked `None`.
pub fn numeric_gradient(
    base: &[f64],
    step: f64,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<i8>)>,
) -> Result<Vec<Option<f64>>> {
    let mut point = base.to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        point[i] = base[i] + step;
        let (fp, sp) = eval(&point)?;
        point[i] = base[i] - step;
        let (fm, sm) = eval(&point)?;
        point[i] = base[i];
        out.push((sp == sm).then(|| (fp - fm) / (2.0 * step)));
    }
    Ok(out)
}

/// Compares analytic and numerical gradients of `f` w.r.t. every input.
///
/// `f` records a graph on the tape from the input leaves and returns a
/// scalar.
pub fn check_op(
    inputs: &[Tensor<f64>],
    step: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut report = GradReport::default();
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(vars[k]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; input.len()],
        };
        let numeric = numeric_gradient(input.data(), step, |point| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, src)| {
                    let value = if j == k {
                        Tensor::new(src.shape().to_vec(), point.to_vec()).expect("same shape")
                    } else {
                        src.clone()
                    };
                    t.constant(value)
                })
                .collect();
            let l = f(&mut t, &vs)?;
            Ok((t.value(l).data()[0], t.kink_signature()))
        })?;
        report.merge(compare(&analytic, &numeric));
    }
    Ok(report)
}

/// Pairs analytic values with the non-skipped numerical ones.
pub fn compare(analytic: &[f64], numeric: &[Option<f64>]) -> GradReport {
    let (mut a, mut n) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for (&av, nv) in analytic.iter().zip(numeric) {
        match nv {
            Some(nv) => {
                a.push(av);
                n.push(*nv);
            }
            None => skipped += 1,
        }
    }
    GradReport { rel_errors: vec![relative_error(&a, &n)], checked: a.len(), skipped_kinks: skipped }
}

fn model_loss(model: &SRNet<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<(Tape<f64>, Var, Vec<Vec<f64>>)> {
    let mut m = model.clone();
    let mut tape = Tape::new();
    let params = m.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let out = m.forward(&mut tape, &params, xv, Mode::Train)?;
    let yv = tape.constant(y.clone());
    let loss = tape.l1_loss(out, yv)?;
    tape.backward(loss)?;
    let grads = model.params().grads(&tape, &params);
    Ok((tape, loss, grads))
}

/// Checks the L1 loss gradient of a Train-mode forward w.r.t. every
/// parameter tensor. Each evaluation clones `model`, so every pass draws
/// the same masks. Returns one report entry per parameter tensor, in order.
pub fn check_model(model: &SRNet<f64>, x: &Tensor<f64>, y: &Tensor<f64>, step: f64) -> Result<GradReport> {
    let (_, _, grads) = model_loss(model, x, y)?;
    let mut report = GradReport::default();
    for (k, base) in model.params().tensors().iter().enumerate() {
        let numeric = numeric_gradient(base.data(), step, |point| {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[k].data_mut().copy_from_slice(point);
            let mut tape = Tape::new();
            let params = m.bind(&mut tape, false);
            let xv = tape.constant(x.clone());
            let out = m.forward(&mut tape, &params, xv, Mode::Train)?;
            let yv = tape.constant(y.clone());
            let loss = tape.l1_loss(out, yv)?;
            Ok((tape.value(loss).data()[0], tape.kink_signature()))
        })?;
        report.merge(compare(&grads[k], &numeric));
    }
    Ok(report)
}
