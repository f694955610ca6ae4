use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::Design;
use crate::dist::StepCdf;
use crate::error::{Error, Result};

/// Binary-response link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

const INDEX_CLAMP: f64 = 35.0;
const SEPARATION_CLAMP: f64 = 1e-6;

impl Link {
    /// `(P(z), 1 - P(z))`, each computed without cancellation.
    pub fn probs(self, z: f64) -> (f64, f64) {
        let z = z.clamp(-INDEX_CLAMP, INDEX_CLAMP);
        match self {
            Link::Logit => {
                if z >= 0.0 {
                    let e = (-z).exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                } else {
                    let e = z.exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                }
            }
            Link::Probit => {
                // one tail from erfc, the other by complement (it is >= 1/2)
                let tail = 0.5 * erfc(z.abs() * std::f64::consts::FRAC_1_SQRT_2);
                if z >= 0.0 {
                    (1.0 - tail, tail)
                } else {
                    (tail, 1.0 - tail)
                }
            }
        }
    }

    pub fn cdf(self, z: f64) -> f64 {
        self.probs(z).0
    }

    pub fn pdf(self, z: f64) -> f64 {
        let z = z.clamp(-INDEX_CLAMP, INDEX_CLAMP);
        match self {
            Link::Logit => {
                let (p, q) = self.probs(z);
                p * q
            }
            Link::Probit => (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    pub fn inverse(self, p: f64) -> f64 {
        let p = p.clamp(1e-10, 1.0 - 1e-10);
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Probit => {
                use statrs::distribution::{ContinuousCDF, Normal};
                Normal::standard().inverse_cdf(p)
            }
        }
    }
}

/// Fit at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DrFit {
    /// Degenerate threshold: every indicator equal.
    Constant(f64),
    Index(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrModel {
    pub thresholds: Vec<f64>,
    pub fits: Vec<DrFit>,
    pub separated: Vec<bool>,
    pub link: Link,
}

#[derive(Debug, Clone)]
pub struct DrOptions {
    pub link: Link,
    /// Number of quantile levels for the default threshold grid.
    pub levels: usize,
    /// Explicit thresholds; overrides the default grid.
    pub thresholds: Option<Vec<f64>>,
    /// Stop when the mean score has Euclidean norm below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting coefficients per threshold.
    pub warm_start: Option<Vec<DrFit>>,
}

impl Default for DrOptions {
    fn default() -> Self {
        Self {
            link: Link::Logit,
            levels: 99,
            thresholds: None,
            tol: 1e-8,
            max_iter: 100,
            warm_start: None,
        }
    }
}

/// Empirical quantiles of `y` at `k / (levels + 1)`, `k = 1..=levels`,
/// plus `max(y)`, deduplicated.
pub fn default_thresholds(y: &[f64], levels: usize) -> Result<Vec<f64>> {
    let f = StepCdf::from_sample(y)?;
    let mut t: Vec<f64> = (1..=levels)
        .map(|k| f.quantile_clamped(k as f64 / (levels + 1) as f64))
        .collect();
    t.push(f.max());
    t.dedup();
    Ok(t)
}

impl DrModel {
    fn value(&self, k: usize, row: &[f64]) -> f64 {
        match &self.fits[k] {
            DrFit::Constant(c) => *c,
            DrFit::Index(b) => {
                let z: f64 = b.iter().zip(row).map(|(b, x)| b * x).sum();
                let p = self.link.cdf(z);
                if self.separated[k] {
                    p.clamp(SEPARATION_CLAMP, 1.0 - SEPARATION_CLAMP)
                } else {
                    p
                }
            }
        }
    }

    /// Fitted probabilities at every threshold, before rearrangement.
    pub fn fitted_row(&self, row: &[f64]) -> Vec<f64> {
        (0..self.thresholds.len()).map(|k| self.value(k, row)).collect()
    }

    /// Rearranged conditional CDF for a full regressor row.
    pub fn cdf_at_row(&self, row: &[f64]) -> StepCdf {
        StepCdf::from_fitted(self.thresholds.clone(), self.fitted_row(row))
    }

    pub fn any_separated(&self) -> bool {
        self.separated.iter().any(|&s| s)
    }

    /// Per-threshold z-statistics (coefficient / standard error from the
    /// inverse information). Constant fits are skipped.
    pub fn slope_z_scores(&self, design: &Design) -> Vec<Vec<f64>> {
        self.fits
            .iter()
            .filter_map(|f| match f {
                DrFit::Index(b) => {
                    let w: Vec<f64> = (0..design.n())
                        .map(|i| {
                            let z: f64 = b.iter().zip(design.row(i)).map(|(b, x)| b * x).sum();
                            info_weight(self.link, z)
                        })
                        .collect();
                    let inv = design.gram(Some(&w)).try_inverse()?;
                    Some(
                        b.iter()
                            .enumerate()
                            .map(|(a, v)| v / inv[(a, a)].sqrt())
                            .collect(),
                    )
                }
                DrFit::Constant(_) => None,
            })
            .collect()
    }
}

fn info_weight(link: Link, z: f64) -> f64 {
    let (p, q) = link.probs(z);
    match link {
        Link::Logit => p * q,
        Link::Probit => {
            let f = link.pdf(z);
            if p * q > 0.0 {
                f * f / (p * q)
            } else {
                0.0
            }
        }
    }
}

pub fn fit_distribution_regression(
    y: &[f64],
    design: &Design,
    thresholds: &[f64],
    link: Link,
) -> Result<DrModel> {
    let opts = DrOptions {
        link,
        ..DrOptions::default()
    };
    fit_distribution_regression_with(y, design, thresholds, &opts)
}

/// Distribution regression of `1{y <= q}` for each threshold `q`.
pub fn fit_distribution_regression_with(
    y: &[f64],
    design: &Design,
    thresholds: &[f64],
    opts: &DrOptions,
) -> Result<DrModel> {
    if y.len() != design.n() {
        return Err(Error::LengthMismatch(y.len(), design.n()));
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "thresholds must be nonempty and strictly increasing".into(),
        ));
    }
    fit_indicator_regressions(design, thresholds.to_vec(), |k, i| y[i] <= thresholds[k], opts)
}

/// Binary regressions of `indicator(k, i)` on the design for each `k`.
/// Indicators may depend on the unit (unit-specific thresholds).
///
/// Identical design rows are pooled into binomial counts, which leaves the
/// likelihood unchanged and makes bootstrap resamples cheaper to fit.
pub fn fit_indicator_regressions<F>(
    design: &Design,
    thresholds: Vec<f64>,
    indicator: F,
    opts: &DrOptions,
) -> Result<DrModel>
where
    F: Fn(usize, usize) -> bool + Sync,
{
    design.check_rank()?;
    let n = design.n();
    let (pooled, group) = pool_rows(design)?;
    let results: Vec<Result<(DrFit, bool)>> = (0..thresholds.len())
        .into_par_iter()
        .map(|k| {
            let mut counts = vec![[0.0f64; 2]; pooled.n()];
            let mut ones = 0usize;
            for (i, &g) in group.iter().enumerate() {
                let zi = indicator(k, i);
                ones += zi as usize;
                counts[g][zi as usize] += 1.0;
            }
            if ones == 0 {
                return Ok((DrFit::Constant(0.0), false));
            }
            if ones == n {
                return Ok((DrFit::Constant(1.0), false));
            }
            let start = match opts.warm_start.as_ref().and_then(|w| w.get(k)) {
                Some(DrFit::Index(b)) if b.len() == design.p() => b.clone(),
                _ => {
                    let mut b = vec![0.0; design.p()];
                    if design.has_intercept() {
                        b[0] = opts.link.inverse(ones as f64 / n as f64);
                    }
                    b
                }
            };
            let (beta, converged) = fit_binary(&pooled, &counts, n, opts.link, start, opts.tol, opts.max_iter)?;
            let separated = !converged || completely_separated(&pooled, &counts, &beta);
            Ok((DrFit::Index(beta), separated))
        })
        .collect();
    let mut fits = Vec::with_capacity(results.len());
    let mut separated = Vec::with_capacity(results.len());
    for r in results {
        let (f, s) = r?;
        fits.push(f);
        separated.push(s);
    }
    let flagged = separated.iter().filter(|&&s| s).count();
    if flagged > 0 {
        log::warn!("separation detected at {flagged} thresholds; fitted values clamped");
    }
    Ok(DrModel {
        thresholds,
        fits,
        separated,
        link: opts.link,
    })
}

/// Distinct rows in first-occurrence order, and each unit's row index.
fn pool_rows(design: &Design) -> Result<(Design, Vec<usize>)> {
    let mut seen: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    let mut data = Vec::new();
    let mut group = Vec::with_capacity(design.n());
    for i in 0..design.n() {
        let row = design.row(i);
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let next = seen.len();
        let g = *seen.entry(key).or_insert_with(|| {
            data.extend_from_slice(row);
            next
        });
        group.push(g);
    }
    let pooled = Design::new(seen.len(), design.p(), data, design.has_intercept())?;
    Ok((pooled, group))
}

// The fitted index orders every 1 above every 0: no finite MLE exists.
fn completely_separated(design: &Design, counts: &[[f64; 2]], beta: &[f64]) -> bool {
    let mut min_one = f64::INFINITY;
    let mut max_zero = f64::NEG_INFINITY;
    for (g, c) in counts.iter().enumerate() {
        let idx: f64 = beta.iter().zip(design.row(g)).map(|(b, x)| b * x).sum();
        if c[1] > 0.0 {
            min_one = min_one.min(idx);
        }
        if c[0] > 0.0 {
            max_zero = max_zero.max(idx);
        }
    }
    max_zero < min_one
}

struct Pass {
    score: DVector<f64>,
    weights: Vec<f64>,
}

/// Score and Newton weights (the negative second derivative of the
/// log-likelihood in the index) at `beta`; `counts[g]` holds the number of
/// zeros and ones at row `g`.
fn pass(design: &Design, counts: &[[f64; 2]], link: Link, beta: &[f64]) -> Pass {
    let mut score = DVector::zeros(design.p());
    let mut weights = vec![0.0; design.n()];
    for (g, &[c0, c1]) in counts.iter().enumerate() {
        let row = design.row(g);
        let idx: f64 = beta.iter().zip(row).map(|(b, x)| b * x).sum();
        let (pr, qr) = link.probs(idx);
        let (s, w) = match link {
            Link::Logit => (c1 * qr - c0 * pr, (c0 + c1) * pr * qr),
            Link::Probit => {
                let f = link.pdf(idx);
                let z = idx.clamp(-INDEX_CLAMP, INDEX_CLAMP);
                let s1 = if pr > 0.0 { f / pr } else { 0.0 };
                let s0 = if qr > 0.0 { -f / qr } else { 0.0 };
                // log-concavity makes s (s + z) nonnegative
                let w1 = (s1 * (s1 + z)).max(0.0);
                let w0 = (s0 * (s0 + z)).max(0.0);
                (c1 * s1 + c0 * s0, c1 * w1 + c0 * w0)
            }
        };
        for (a, x) in row.iter().enumerate() {
            score[a] += s * x;
        }
        weights[g] = w;
    }
    Pass { score, weights }
}

fn loglik(design: &Design, counts: &[[f64; 2]], link: Link, beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (g, &[c0, c1]) in counts.iter().enumerate() {
        let idx: f64 = beta.iter().zip(design.row(g)).map(|(b, x)| b * x).sum();
        let (p, q) = link.probs(idx);
        if c1 > 0.0 {
            ll += c1 * p.max(1e-300).ln();
        }
        if c0 > 0.0 {
            ll += c0 * q.max(1e-300).ln();
        }
    }
    ll
}

/// Newton's method with step halving on the pooled rows of `n` units.
/// Returns the coefficients and whether the mean score reached `tol`.
///
/// The log-likelihood is concave, so a full step whose end-point score
/// still points along the step cannot decrease it; the likelihood itself
/// is only evaluated when that check fails.
fn fit_binary(
    design: &Design,
    counts: &[[f64; 2]],
    n: usize,
    link: Link,
    mut beta: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, bool)> {
    let n = n as f64;
    let mut cur = pass(design, counts, link, &beta);
    for _ in 0..max_iter {
        if cur.score.norm() / n < tol {
            return Ok((beta, true));
        }
        let info = design.gram(Some(&cur.weights));
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&cur.score),
            None => match info.lu().solve(&cur.score) {
                Some(s) => s,
                None => return Ok((beta, false)),
            },
        };
        let full: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let next = pass(design, counts, link, &full);
        if next.score.dot(&step) >= 0.0 {
            beta = full;
            cur = next;
        } else {
            let ll = loglik(design, counts, link, &beta);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                if loglik(design, counts, link, &cand) >= ll - 1e-12 * ll.abs().max(1.0) {
                    cur = pass(design, counts, link, &cand);
                    beta = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::SingularDesign);
        }
    }
    Ok((beta, cur.score.norm() / n < tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ecdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn intercept_only_reproduces_ecdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f = ecdf(&y).unwrap();
        let t = default_thresholds(&y, 99).unwrap();
        for link in [Link::Logit, Link::Probit] {
            let m = fit_distribution_regression(&y, &Design::intercept_only(y.len()), &t, link).unwrap();
            let fitted = m.fitted_row(&[1.0]);
            for (q, v) in t.iter().zip(&fitted) {
                assert!((v - f.eval(*q)).abs() < 1e-8, "{link:?} {q}: {v}");
            }
            assert!(!m.any_separated());
        }
    }

    #[test]
    fn threshold_below_support_is_zero() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let d = Design::from_rows(&[[0.5], [0.1], [0.7], [0.2]], true).unwrap();
        let m = fit_distribution_regression(&y, &d, &[0.0, 2.5, 4.0], Link::Logit).unwrap();
        assert_eq!(m.fits[0], DrFit::Constant(0.0));
        assert_eq!(m.fits[2], DrFit::Constant(1.0));
        for x in [-3.0, 0.0, 10.0] {
            assert_eq!(m.cdf_at_row(&[1.0, x]).eval(0.5), 0.0);
        }
    }

    #[test]
    fn probit_recovers_gaussian_conditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| xi + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let rows: Vec<[f64; 1]> = x.iter().map(|&v| [v]).collect();
        let d = Design::from_rows(&rows, true).unwrap();
        let t = default_thresholds(&y, 99).unwrap();
        let m = fit_distribution_regression(&y, &d, &t, Link::Probit).unwrap();
        let nd = Normal::standard();
        for x0 in [-1.0, 0.0, 1.0] {
            let f = m.cdf_at_row(&[1.0, x0]);
            let err = t
                .iter()
                .map(|&q| (f.eval(q) - nd.cdf(q - x0)).abs())
                .fold(0.0, f64::max);
            assert!(err < 0.05, "x = {x0}: {err}");
        }
    }

    #[test]
    fn separation_is_flagged_and_clamped() {
        let y = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let rows: Vec<[f64; 1]> = y.iter().map(|&v| [v]).collect();
        let d = Design::from_rows(&rows, true).unwrap();
        let m = fit_distribution_regression(&y, &d, &[2.5, 5.0], Link::Logit).unwrap();
        assert!(m.separated[0]);
        let v = m.fitted_row(&[1.0, -100.0])[0];
        assert!(v <= 1.0 - SEPARATION_CLAMP && v >= SEPARATION_CLAMP);
    }

    #[test]
    fn singular_design_errors() {
        let y = [0.0, 1.0, 2.0, 3.0];
        let d = Design::from_rows(&[[1.0], [1.0], [1.0], [1.0]], true).unwrap();
        assert!(matches!(
            fit_distribution_regression(&y, &d, &[1.5, 3.0], Link::Logit),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn warm_start_reaches_same_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..800).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|&v| 0.5 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let rows: Vec<[f64; 1]> = x.iter().map(|&v| [v]).collect();
        let d = Design::from_rows(&rows, true).unwrap();
        let t = default_thresholds(&y, 19).unwrap();
        let cold = fit_distribution_regression(&y, &d, &t, Link::Logit).unwrap();
        let opts = DrOptions {
            warm_start: Some(cold.fits.clone()),
            ..DrOptions::default()
        };
        let warm = fit_distribution_regression_with(&y, &d, &t, &opts).unwrap();
        for (a, b) in cold.fits.iter().zip(&warm.fits) {
            if let (DrFit::Index(a), DrFit::Index(b)) = (a, b) {
                for (u, v) in a.iter().zip(b) {
                    assert!((u - v).abs() < 1e-6);
                }
            }
        }
    }
}
