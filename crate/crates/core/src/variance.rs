//! Train/eval variance shift of (adaptive) channel dropout.
//!
//! For a feature with mean `mu` and variance `sigma2`, inverted channel
//! dropout keeps the mean but inflates the train-time variance. The relative
//! deviation is `p / (1 - p) * (mu^2 / sigma2 + 1)`, and mixing in the clean
//! feature with weight `w` damps it by `(1 - w)^2`.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::dropout::{adaptive_dropout, check_rate, DropWeight, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Shape of one Monte-Carlo sample: a small `[C, H, W]` feature map whose
/// channels each get an independent mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SampleShape {
    fn default() -> Self {
        SampleShape { channels: 8, height: 2, width: 2 }
    }
}

impl SampleShape {
    pub fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }
}

pub const MIN_MONTE_CARLO_SAMPLES: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceShiftReport {
    pub mu: f64,
    pub sigma2: f64,
    pub p: f64,
    pub w: f64,
    pub s_closed: f64,
    pub s_mc: f64,
    pub n_samples: usize,
}

impl VarianceShiftReport {
    pub fn rel_err(&self) -> f64 {
        (self.s_mc - self.s_closed).abs() / self.s_closed.max(1e-9)
    }
}

pub fn variance_shift_closed_form(mu: f64, sigma2: f64, p: f64, w: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("variance_shift", format!("sigma2 = {sigma2} must be positive")));
    }
    check_rate("variance_shift", p)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid("variance_shift", format!("w = {w} must lie in [0, 1]")));
    }
    Ok((1.0 - w).powi(2) * p / (1.0 - p) * (mu * mu / sigma2 + 1.0))
}

/// Running first and second moments in f64.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push_all(&mut self, values: &[f32]) {
        for &v in values {
            let v = v as f64;
            self.sum += v;
            self.sum_sq += v * v;
        }
        self.n += values.len() as f64;
    }

    fn variance(&self) -> f64 {
        let mean = self.sum / self.n;
        self.sum_sq / self.n - mean * mean
    }
}

/// Estimates the variance shift by sampling features `x ~ Normal(mu, sigma2)`
/// and running them through [`adaptive_dropout`] in Train mode.
///
/// `n_samples` feature maps of `shape` are drawn, so the mask count is
/// `n_samples * shape.channels`. The input variance is measured on the same
/// draws, which makes `w == 1` come out exactly 0.
pub fn variance_shift_monte_carlo(
    mu: f64,
    sigma2: f64,
    p: f64,
    w: f64,
    n_samples: usize,
    shape: SampleShape,
    rng: &mut impl RngCore,
) -> Result<VarianceShiftReport> {
    let s_closed = variance_shift_closed_form(mu, sigma2, p, w)?;
    if n_samples < MIN_MONTE_CARLO_SAMPLES {
        return Err(Error::invalid(
            "variance_shift_monte_carlo",
            format!("n_samples = {n_samples} is below the minimum of {MIN_MONTE_CARLO_SAMPLES}"),
        ));
    }
    if shape.elements() == 0 {
        return Err(Error::invalid("variance_shift_monte_carlo", "sample shape is empty"));
    }
    let normal = Normal::new(mu, sigma2.sqrt()).map_err(|e| Error::invalid("variance_shift_monte_carlo", e.to_string()))?;
    const CHUNK: usize = 8192;

    let (mut input, mut output) = (Moments::default(), Moments::default());
    let mut remaining = n_samples;
    while remaining > 0 {
        let batch = remaining.min(CHUNK);
        remaining -= batch;
        let x = Tensor::from_fn([batch, shape.channels, shape.height, shape.width], |_| {
            normal.sample(&mut *rng) as f32
        });
        input.push_all(x.data());
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x);
        let (y, _) = adaptive_dropout(&mut tape, xv, DropWeight::Scalar(w), p, &mut *rng, Mode::Train)?;
        output.push_all(tape.value(y).data());
    }

    Ok(VarianceShiftReport {
        mu,
        sigma2,
        p,
        w,
        s_closed,
        s_mc: output.variance() / input.variance() - 1.0,
        n_samples,
    })
}

/// Grid of `(mu, sigma2)`, `p` and `w` values the verification sweep covers.
pub fn verification_grid() -> Vec<(f64, f64, f64, f64)> {
    let moments = [(0.0, 1.0), (1.0, 1.0), (2.0, 4.0)];
    let rates = [0.1, 0.3, 0.5];
    let weights = [0.0, 0.25, 0.5, 0.75];
    let mut grid = Vec::new();
    for &(mu, sigma2) in &moments {
        for &p in &rates {
            for &w in &weights {
                grid.push((mu, sigma2, p, w));
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(variance_shift_closed_form(1.0, 1.0, 0.5, 0.0).unwrap(), 2.0);
        assert_eq!(variance_shift_closed_form(3.0, 0.2, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(variance_shift_closed_form(0.0, 1.0, 0.5, 0.5).unwrap(), 0.25);
        assert_eq!(variance_shift_closed_form(0.3, 2.0, 0.4, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_rejects_bad_arguments() {
        assert!(variance_shift_closed_form(0.0, 0.0, 0.5, 0.0).is_err());
        assert!(variance_shift_closed_form(0.0, -1.0, 0.5, 0.0).is_err());
        assert!(variance_shift_closed_form(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(variance_shift_closed_form(0.0, 1.0, 0.5, 1.1).is_err());
    }

    #[test]
    fn monte_carlo_identity_branch_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = variance_shift_monte_carlo(1.0, 1.0, 0.5, 1.0, 100_000, SampleShape::default(), &mut rng).unwrap();
        assert_eq!(r.s_mc, 0.0);
        assert_eq!(r.s_closed, 0.0);
    }

    #[test]
    fn monte_carlo_requires_enough_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(variance_shift_monte_carlo(0.0, 1.0, 0.5, 0.0, 10, SampleShape::default(), &mut rng).is_err());
    }

    #[test]
    fn grid_has_thirty_six_cells() {
        assert_eq!(verification_grid().len(), 36);
    }
}
