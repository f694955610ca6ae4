use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{rearrange, Design};
use crate::dist::StepCdf;
use crate::error::{Error, Result};

/// Linear quantile regression coefficients on a grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QrModel {
    pub tau_grid: Vec<f64>,
    /// One row per level.
    pub coefficients: Vec<Vec<f64>>,
    pub intercept: bool,
}

impl QrModel {
    /// Predicted quantiles at covariates `x`, rearranged to be
    /// nondecreasing in the level.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let row = Design::make_row(self.intercept, x);
        let mut q: Vec<f64> = self
            .coefficients
            .iter()
            .map(|b| b.iter().zip(&row).map(|(b, x)| b * x).sum())
            .collect();
        rearrange(&mut q);
        q
    }

    pub fn cdf_at(&self, x: &[f64]) -> StepCdf {
        invert_qr_to_cdf(self, x)
    }
}

/// `F(y | x)` = share of grid levels whose (rearranged) predicted quantile
/// is `<= y`.
pub fn invert_qr_to_cdf(model: &QrModel, x: &[f64]) -> StepCdf {
    let q = model.predict(x);
    let k = q.len() as f64;
    let mut grid = Vec::with_capacity(q.len());
    let mut probs = Vec::with_capacity(q.len());
    for (i, &v) in q.iter().enumerate() {
        if i + 1 < q.len() && q[i + 1] == v {
            continue;
        }
        grid.push(v);
        probs.push((i + 1) as f64 / k);
    }
    StepCdf::from_fitted(grid, probs)
}

fn check_loss(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Fits `Q_y(tau | x) = x'beta` for each level by minimizing the check
/// loss. An IRLS pass with shrinking smoothing gives a starting point; an
/// exact vertex descent on the piecewise-linear objective then finishes.
pub fn fit_quantile_regression(y: &[f64], design: &Design, tau_grid: &[f64]) -> Result<QrModel> {
    if y.len() != design.n() {
        return Err(Error::LengthMismatch(y.len(), design.n()));
    }
    if tau_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        let bad = tau_grid.iter().find(|&&t| !(t > 0.0 && t < 1.0)).unwrap();
        return Err(Error::TauOutOfRange(*bad));
    }
    design.check_rank()?;
    let fits: Vec<Option<Vec<f64>>> = tau_grid
        .par_iter()
        .map(|&tau| fit_one(y, design, tau))
        .collect();
    let failed: Vec<f64> = tau_grid
        .iter()
        .zip(&fits)
        .filter(|(_, f)| f.is_none())
        .map(|(&t, _)| t)
        .collect();
    if !failed.is_empty() {
        return Err(Error::SolverNonconvergence(failed));
    }
    Ok(QrModel {
        tau_grid: tau_grid.to_vec(),
        coefficients: fits.into_iter().map(Option::unwrap).collect(),
        intercept: design.has_intercept(),
    })
}

fn residuals(y: &[f64], d: &Design, beta: &[f64]) -> Vec<f64> {
    (0..d.n())
        .map(|i| y[i] - d.row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
        .collect()
}

fn irls(y: &[f64], d: &Design, tau: f64) -> Option<Vec<f64>> {
    let g = d.gram(None);
    let mut beta: Vec<f64> = g.cholesky()?.solve(&d.xty(y, None)).iter().copied().collect();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread = (sorted[sorted.len() * 3 / 4] - sorted[sorted.len() / 4]).abs().max(1e-8);
    let mut h = 0.1 * spread;
    for _ in 0..60 {
        let r = residuals(y, d, &beta);
        let w: Vec<f64> = r
            .iter()
            .map(|&ri| (if ri > 0.0 { tau } else { 1.0 - tau }) / ri.abs().max(h))
            .collect();
        let next = match d.gram(Some(&w)).cholesky() {
            Some(c) => c.solve(&d.xty(y, Some(&w))),
            None => break,
        };
        let change: f64 = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).sum();
        beta = next.iter().copied().collect();
        h = (h * 0.5).max(1e-6 * spread);
        if change < 1e-10 * (1.0 + beta.iter().map(|b| b.abs()).sum::<f64>()) && h <= 1e-6 * spread {
            break;
        }
    }
    Some(beta)
}

// Picks p observations with small residuals whose rows are linearly
// independent.
fn initial_basis(d: &Design, r: &[f64]) -> Option<Vec<usize>> {
    let p = d.p();
    let mut order: Vec<usize> = (0..d.n()).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    for &i in &order {
        let row = d.row(i);
        let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = row.to_vec();
        for q in &ortho {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= dot * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            ortho.push(v);
            basis.push(i);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

fn basis_inverse(d: &Design, basis: &[usize]) -> Option<DMatrix<f64>> {
    let p = d.p();
    let xb = DMatrix::from_fn(p, p, |a, b| d.row(basis[a])[b]);
    xb.try_inverse()
}

fn fit_one(y: &[f64], d: &Design, tau: f64) -> Option<Vec<f64>> {
    let n = d.n();
    let p = d.p();
    let start = irls(y, d, tau)?;
    let r0 = residuals(y, d, &start);
    let mut basis = initial_basis(d, &r0)?;
    let mut binv = basis_inverse(d, &basis)?;
    let yb = DVector::from_fn(p, |a, _| y[basis[a]]);
    let mut beta: Vec<f64> = (&binv * yb).iter().copied().collect();
    let mut in_basis = vec![false; n];
    basis.iter().for_each(|&i| in_basis[i] = true);

    let yscale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let zero_tol = 1e-12 * yscale;
    let max_iter = 50 * n + 1000;
    let mut g = vec![0.0; n * p];
    let mut objective = f64::INFINITY;

    for _ in 0..max_iter {
        let mut r = residuals(y, d, &beta);
        for &i in &basis {
            r[i] = 0.0;
        }
        for v in r.iter_mut() {
            if v.abs() <= zero_tol {
                *v = 0.0;
            }
        }
        let obj: f64 = r.iter().map(|&v| check_loss(v, tau)).sum();
        if obj > objective + 1e-9 * objective.abs().max(1.0) {
            // numerical trouble: keep the best vertex found so far
            return None;
        }
        objective = obj;

        // g[i, j] = x_i' d_j where X_B d_j = e_j
        for i in 0..n {
            let row = d.row(i);
            for j in 0..p {
                let mut s = 0.0;
                for a in 0..p {
                    s += row[a] * binv[(a, j)];
                }
                g[i * p + j] = s;
            }
        }

        // Directional derivatives along +/- d_j.
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..p {
            for sigma in [1.0, -1.0] {
                let mut deriv = if sigma > 0.0 { 1.0 - tau } else { tau };
                let mut scale = 1.0;
                for i in 0..n {
                    if in_basis[i] {
                        continue;
                    }
                    let gi = sigma * g[i * p + j];
                    scale += gi.abs();
                    deriv += if r[i] > 0.0 {
                        -tau * gi
                    } else if r[i] < 0.0 {
                        (1.0 - tau) * gi
                    } else {
                        ((1.0 - tau) * gi).max(-tau * gi)
                    };
                }
                if deriv < -1e-11 * scale && best.is_none_or(|(_, _, b)| deriv < b) {
                    best = Some((j, sigma, deriv));
                }
            }
        }
        let Some((j, sigma, deriv)) = best else {
            return Some(beta);
        };

        // Line search over breakpoints where a nonbasic residual hits zero.
        let mut bps: Vec<(f64, usize, f64)> = (0..n)
            .filter(|&i| !in_basis[i] && r[i] != 0.0)
            .filter_map(|i| {
                let gi = sigma * g[i * p + j];
                let t = r[i] / gi;
                (gi != 0.0 && t > 0.0).then_some((t, i, gi.abs()))
            })
            .collect();
        bps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slope = deriv;
        let mut step = None;
        for &(t, i, w) in &bps {
            slope += w;
            if slope >= 0.0 {
                step = Some((t, i));
                break;
            }
        }
        let (t, entering) = step?;
        for a in 0..p {
            beta[a] += t * sigma * binv[(a, j)];
        }
        in_basis[basis[j]] = false;
        basis[j] = entering;
        in_basis[entering] = true;
        binv = basis_inverse(d, &basis)?;
        // re-solve on the basis to stop drift
        let yb = DVector::from_fn(p, |a, _| y[basis[a]]);
        beta = (&binv * yb).iter().copied().collect();
    }
    None
}
