use rayon::prelude::*;
use serde::Serialize;

use super::{check_grid, Conditioning};
use crate::error::Result;
use crate::first_step::ConditionalCdf;

/// Fréchet-Hoeffding bounds on `P(Y1 <= y1, Y0 <= y0)` given the two
/// marginal probabilities.
pub fn fh_conditional_joint_bounds(f1: f64, f0: f64) -> (f64, f64) {
    ((f1 + f0 - 1.0).max(0.0), f1.min(f0))
}

/// Bounds on the joint CDF of `(Y1, Y0)` on the lattice `y1 x y0`;
/// `lower[i][j]` refers to `(y1[i], y0[j])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointBoundsSurface {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl JointBoundsSurface {
    /// Largest amount by which `self` sticks out of `outer`.
    pub fn excess_over(&self, outer: &JointBoundsSurface) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.y1.len() {
            for j in 0..self.y0.len() {
                m = m
                    .max(outer.lower[i][j] - self.lower[i][j])
                    .max(self.upper[i][j] - outer.upper[i][j]);
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &JointBoundsSurface) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.y1.len() {
            for j in 0..self.y0.len() {
                m = m
                    .max((other.lower[i][j] - self.lower[i][j]).abs())
                    .max((other.upper[i][j] - self.upper[i][j]).abs());
            }
        }
        m
    }
}

/// Conditional Fréchet-Hoeffding bounds averaged over the conditioning
/// sample.
pub fn joint_bounds(
    cond_y1: &dyn ConditionalCdf,
    cond_y0: &dyn ConditionalCdf,
    conditioning: &Conditioning<'_>,
    y1_grid: &[f64],
    y0_grid: &[f64],
) -> Result<JointBoundsSurface> {
    check_grid(y1_grid)?;
    check_grid(y0_grid)?;
    let weights = conditioning.normalized_weights()?;
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..conditioning.lags.len())
        .into_par_iter()
        .map(|k| {
            let x = conditioning.x_row(k);
            let s1 = cond_y1.slice(conditioning.lags[k], x);
            let s0 = cond_y0.slice(conditioning.lags[k], x);
            (
                y1_grid.iter().map(|&y| s1.eval(y)).collect(),
                y0_grid.iter().map(|&y| s0.eval(y)).collect(),
            )
        })
        .collect();
    let mut lower = vec![vec![0.0; y0_grid.len()]; y1_grid.len()];
    let mut upper = lower.clone();
    for (k, (a, b)) in per.iter().enumerate() {
        let w = weights[k];
        for (i, &f1) in a.iter().enumerate() {
            for (j, &f0) in b.iter().enumerate() {
                let (l, u) = fh_conditional_joint_bounds(f1, f0);
                lower[i][j] += w * l;
                upper[i][j] += w * u;
            }
        }
    }
    Ok(JointBoundsSurface {
        y1: y1_grid.to_vec(),
        y0: y0_grid.to_vec(),
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::linspace;
    use crate::dist::StepCdf;
    use crate::first_step::FnConditional;

    #[test]
    fn formula() {
        let (l, u) = fh_conditional_joint_bounds(0.3, 0.8);
        assert!((l - 0.1).abs() < 1e-12 && u == 0.3);
        assert_eq!(fh_conditional_joint_bounds(0.5, 0.5), (0.0, 0.5));
        for v in [0.0, 0.2, 0.7, 1.0] {
            let (l, u) = fh_conditional_joint_bounds(1.0, v);
            assert!((l - v).abs() < 1e-15 && u == v);
        }
    }

    #[test]
    fn degenerate_conditionals_collapse() {
        let c1 = FnConditional(|lag: f64, _: &[f64]| StepCdf::new(vec![2.0 * lag], vec![1.0]).unwrap());
        let c0 = FnConditional(|lag: f64, _: &[f64]| StepCdf::new(vec![lag - 1.0], vec![1.0]).unwrap());
        let lags: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let g = linspace(-2.0, 4.0, 25);
        let s = joint_bounds(&c1, &c0, &Conditioning::new(&lags), &g, &g).unwrap();
        assert_eq!(s.lower, s.upper);
    }

    #[test]
    fn conditioning_tightens() {
        // Y1 | lag uniform on lag + [0, 1], Y0 | lag uniform on 2 lag + [0, 1]
        let slice = |shift: f64| {
            let grid: Vec<f64> = (1..=20).map(|k| shift + k as f64 / 20.0).collect();
            let probs: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
            StepCdf::new(grid, probs).unwrap()
        };
        let c1 = FnConditional(move |lag: f64, _: &[f64]| slice(lag));
        let c0 = FnConditional(move |lag: f64, _: &[f64]| slice(2.0 * lag));
        let lags: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let g1 = linspace(-1.0, 5.0, 31);
        let g0 = linspace(-1.0, 8.0, 31);
        let cond = Conditioning::new(&lags);
        let s = joint_bounds(&c1, &c0, &cond, &g1, &g0).unwrap();
        let m1: Vec<f64> = g1
            .iter()
            .map(|&y| lags.iter().map(|&l| c1.eval(y, l, &[])).sum::<f64>() / 10.0)
            .collect();
        let m0: Vec<f64> = g0
            .iter()
            .map(|&y| lags.iter().map(|&l| c0.eval(y, l, &[])).sum::<f64>() / 10.0)
            .collect();
        for i in 0..g1.len() {
            for j in 0..g0.len() {
                let (l, u) = fh_conditional_joint_bounds(m1[i], m0[j]);
                assert!(s.lower[i][j] >= l - 1e-12 && s.upper[i][j] <= u + 1e-12);
                assert!(s.lower[i][j] <= s.upper[i][j] + 1e-12);
            }
        }
    }
}
