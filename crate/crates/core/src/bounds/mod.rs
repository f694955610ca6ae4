//! Bounds on the joint distribution of potential outcomes and on the
//! distribution and quantiles of the treatment effect.

mod fh;
mod makarov;
mod qott;

pub use fh::{fh_conditional_joint_bounds, joint_bounds, JointBoundsSurface};
pub use makarov::{
    dott_bounds, dott_bounds_worst_case, makarov_conditional, makarov_values, Conditioning, SliceSet,
};
pub use qott::{
    qott_bounds, qott_rank_invariance, spearman_rho_bounds, GridFlag, QuantileBoundsCurve, RankPairing,
};

use serde::Serialize;

use crate::dist::StepCdf;
use crate::error::{Error, Result};

/// Lower and upper DoTT bounds on a grid of effect values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsCurve {
    pub delta: Vec<f64>,
    /// Rearranged and clipped to [0, 1].
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Aggregated values before rearrangement.
    pub raw_lower: Vec<f64>,
    pub raw_upper: Vec<f64>,
}

impl BoundsCurve {
    /// Clips to [0, 1], rearranges, and caps `lower` at `upper` (which
    /// only bites through rounding or perturbed inputs).
    pub fn from_raw(delta: Vec<f64>, raw_lower: Vec<f64>, raw_upper: Vec<f64>) -> Self {
        let fix = |v: &[f64]| {
            let mut out: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 1.0)).collect();
            crate::first_step::rearrange(&mut out);
            out
        };
        let upper = fix(&raw_upper);
        let lower = fix(&raw_lower)
            .into_iter()
            .zip(&upper)
            .map(|(l, &u)| l.min(u))
            .collect();
        Self {
            lower,
            upper,
            delta,
            raw_lower,
            raw_upper,
        }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    pub fn mean_width(&self) -> f64 {
        self.widths().iter().sum::<f64>() / self.len() as f64
    }

    /// Whether `values` lie within `[lower - slack, upper + slack]` at every
    /// grid point.
    pub fn contains(&self, values: &[f64], slack: f64) -> bool {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    /// Largest amount by which `self` sticks out of `outer`.
    pub fn excess_over(&self, outer: &BoundsCurve) -> f64 {
        let lo = self
            .lower
            .iter()
            .zip(&outer.lower)
            .map(|(s, o)| o - s)
            .fold(0.0, f64::max);
        let hi = self
            .upper
            .iter()
            .zip(&outer.upper)
            .map(|(s, o)| s - o)
            .fold(0.0, f64::max);
        lo.max(hi)
    }
}

/// Default number of effect grid points.
pub const DEFAULT_DELTA_POINTS: usize = 201;

/// Evenly spaced grid over `[min y1 - max y0, max y1 - min y0]`, widened
/// to unit length around the point when both margins are degenerate.
pub fn default_delta_grid(f1: &StepCdf, f0: &StepCdf, points: usize) -> Vec<f64> {
    let (a, b) = (f1.min() - f0.max(), f1.max() - f0.min());
    if b > a {
        linspace(a, b, points)
    } else {
        linspace(a - 0.5, a + 0.5, points)
    }
}

pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Default quantile levels: 0.05, 0.10, ..., 0.95.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty()
        || grid.iter().any(|v| !v.is_finite())
        || grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::GridCoverage);
    }
    Ok(())
}
