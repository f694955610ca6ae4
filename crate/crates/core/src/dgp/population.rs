//! Discretized Gaussian populations for population-level checks.
//!
//! The lag is standard normal. Given the lag `l`,
//! `Y1 ~ N(mu1 + s1 r13 l, s1^2 (1 - r13^2))` and
//! `Y0 ~ N(mu0 + s0 r23 l, s0^2 (1 - r23^2))`. Conditionals are replaced by
//! `atoms` equally weighted quantile atoms and the lag distribution by
//! `lags` equally weighted quantile points; the marginals are the exact
//! mixtures of the same atoms, so conditional and unconditional bounds are
//! computed on one common population.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::dist::StepCdf;
use crate::first_step::FnConditional;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPopulation {
    pub mu1: f64,
    pub s1: f64,
    pub r13: f64,
    pub mu0: f64,
    pub s0: f64,
    pub r23: f64,
    pub atoms: usize,
    pub lags: usize,
}

fn normal_atoms(mean: f64, sd: f64, atoms: usize) -> StepCdf {
    if sd <= 0.0 {
        return StepCdf::new(vec![mean], vec![1.0]).expect("single atom");
    }
    let n = Normal::standard();
    let grid: Vec<f64> = (1..=atoms)
        .map(|j| mean + sd * n.inverse_cdf((j as f64 - 0.5) / atoms as f64))
        .collect();
    let probs: Vec<f64> = (1..=atoms).map(|j| j as f64 / atoms as f64).collect();
    StepCdf::new(grid, probs).expect("increasing atoms")
}

impl GaussianPopulation {
    pub fn lag_points(&self) -> Vec<f64> {
        let n = Normal::standard();
        (1..=self.lags)
            .map(|k| n.inverse_cdf((k as f64 - 0.5) / self.lags as f64))
            .collect()
    }

    pub fn slice_y1(&self, lag: f64) -> StepCdf {
        let sd = self.s1 * (1.0 - self.r13 * self.r13).max(0.0).sqrt();
        normal_atoms(self.mu1 + self.s1 * self.r13 * lag, sd, self.atoms)
    }

    pub fn slice_y0(&self, lag: f64) -> StepCdf {
        let sd = self.s0 * (1.0 - self.r23 * self.r23).max(0.0).sqrt();
        normal_atoms(self.mu0 + self.s0 * self.r23 * lag, sd, self.atoms)
    }

    pub fn cond_y1(&self) -> FnConditional<impl Fn(f64, &[f64]) -> StepCdf + Send + Sync> {
        let p = *self;
        FnConditional(move |lag: f64, _: &[f64]| p.slice_y1(lag))
    }

    pub fn cond_y0(&self) -> FnConditional<impl Fn(f64, &[f64]) -> StepCdf + Send + Sync> {
        let p = *self;
        FnConditional(move |lag: f64, _: &[f64]| p.slice_y0(lag))
    }

    fn mixture(&self, slice: impl Fn(f64) -> StepCdf) -> StepCdf {
        let (mut values, mut weights) = (Vec::new(), Vec::new());
        let lags = self.lag_points();
        let w = 1.0 / lags.len() as f64;
        for l in lags {
            for (y, m) in slice(l).atoms() {
                values.push(y);
                weights.push(w * m);
            }
        }
        StepCdf::from_weighted(&values, &weights).expect("nonempty mixture")
    }

    pub fn marginal_y1(&self) -> StepCdf {
        self.mixture(|l| self.slice_y1(l))
    }

    pub fn marginal_y0(&self) -> StepCdf {
        self.mixture(|l| self.slice_y0(l))
    }
}
