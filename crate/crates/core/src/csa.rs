//! Joint and conditional distributions of `(Y_0t, Y_0t-1)` for the treated
//! group, recovered by transporting the dependence of `(Y_0t-1, Y_0t-2)`
//! one period forward.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::dist::StepCdf;
use crate::error::{Error, Result};
use crate::first_step::{fit_indicator_regressions, ConditionalCdf, Design, DrModel, DrOptions, MarginalFamily};

/// Default floor on treated `(y_tm1, y_tm2)` pairs.
pub const DEFAULT_MIN_PAIRS: usize = 30;

pub struct CsaInputs<'a> {
    /// Counterfactual `F_{Y_0t | D=1}`.
    pub f_t: &'a dyn MarginalFamily,
    pub f_tm1: &'a dyn MarginalFamily,
    pub f_tm2: &'a dyn MarginalFamily,
    pub y_tm1: &'a [f64],
    pub y_tm2: &'a [f64],
    /// Treated covariates (one row per pair), if conditioning on them.
    pub x: Option<&'a [Vec<f64>]>,
    pub min_pairs: usize,
}

impl CsaInputs<'_> {
    fn check(&self) -> Result<()> {
        if self.y_tm1.len() != self.y_tm2.len() {
            return Err(Error::LengthMismatch(self.y_tm1.len(), self.y_tm2.len()));
        }
        if let Some(x) = self.x {
            if x.len() != self.y_tm1.len() {
                return Err(Error::LengthMismatch(x.len(), self.y_tm1.len()));
            }
        }
        if self.y_tm1.len() < self.min_pairs.max(1) {
            return Err(Error::InsufficientPairs {
                found: self.y_tm1.len(),
                required: self.min_pairs.max(1),
            });
        }
        Ok(())
    }

    fn x_row(&self, i: usize) -> &[f64] {
        self.x.map_or(&[], |x| x[i].as_slice())
    }
}

/// Evaluator of the recovered joint CDF of `(Y_0t, Y_0t-1) | D=1`.
#[derive(Debug, Clone)]
pub struct CsaJointCdf {
    f_t: StepCdf,
    f_tm1: StepCdf,
    f_tm2: StepCdf,
    pairs: Vec<(f64, f64)>,
}

impl CsaJointCdf {
    /// `H(F_tm1^{-1}(F_t(y0)), F_tm2^{-1}(F_tm1(y_lag)))` with `H` the
    /// empirical joint CDF of the treated `(y_tm1, y_tm2)` pairs.
    pub fn eval(&self, y0: f64, y_lag: f64) -> f64 {
        let u = self.f_t.eval(y0);
        let v = self.f_tm1.eval(y_lag);
        self.eval_levels(u, v)
    }

    fn eval_levels(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        let a = self.f_tm1.quantile_clamped(u);
        let b = self.f_tm2.quantile_clamped(v);
        let hits = self.pairs.iter().filter(|&&(p, q)| p <= a && q <= b).count();
        hits as f64 / self.pairs.len() as f64
    }

    /// Copula of the recovered joint: `C(u, v) = H~(F_t^{-1}(u), F_tm1^{-1}(v))`.
    pub fn copula(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        self.eval(self.f_t.quantile_clamped(u), self.f_tm1.quantile_clamped(v))
    }

    pub fn f_t(&self) -> &StepCdf {
        &self.f_t
    }

    pub fn f_tm1(&self) -> &StepCdf {
        &self.f_tm1
    }
}

/// Unconditional recovery of the joint CDF. Covariates in the inputs are
/// ignored.
pub fn csa_joint_cdf(inputs: &CsaInputs<'_>) -> Result<CsaJointCdf> {
    inputs.check()?;
    Ok(CsaJointCdf {
        f_t: inputs.f_t.at(&[]).into_owned(),
        f_tm1: inputs.f_tm1.at(&[]).into_owned(),
        f_tm2: inputs.f_tm2.at(&[]).into_owned(),
        pairs: inputs
            .y_tm1
            .iter()
            .copied()
            .zip(inputs.y_tm2.iter().copied())
            .collect(),
    })
}

/// How `P(Y_0t-1 <= a | G = y')` is estimated, where `G` is the
/// margin-adjusted `Y_0t-2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CsaEstimator {
    /// Nearest neighbours in the rank of `G`; `bandwidth` is the window
    /// width as a fraction of the sample.
    Empirical { bandwidth: f64 },
    #[default]
    DistributionRegression,
}

enum Fitted {
    Empirical {
        /// Generated regressor, sorted.
        g_sorted: Vec<f64>,
        /// Indicator rows `1{y_tm1 <= A_k(x)}` in the same order.
        hits: Vec<Vec<bool>>,
        window: usize,
    },
    Dr(DrModel),
}

/// `F_{Y_0t | Y_0t-1, X, D=1}` under copula stability.
pub struct CsaConditional<'a> {
    f_t: &'a dyn MarginalFamily,
    /// Probability levels `p_k`; the slice at `(y', x)` puts
    /// `H(p_k | y', x)` at `F_{t|x}^{-1}(p_k)`.
    levels: Vec<f64>,
    use_x: bool,
    fitted: Fitted,
}

impl CsaConditional<'_> {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn dr_model(&self) -> Option<&DrModel> {
        match &self.fitted {
            Fitted::Dr(m) => Some(m),
            Fitted::Empirical { .. } => None,
        }
    }

    fn level_values(&self, y_lag: f64, x: &[f64]) -> Vec<f64> {
        match &self.fitted {
            Fitted::Dr(m) => {
                let mut row = Vec::with_capacity(2 + x.len());
                row.push(1.0);
                row.push(y_lag);
                if self.use_x {
                    row.extend_from_slice(x);
                }
                m.fitted_row(&row)
            }
            Fitted::Empirical {
                g_sorted,
                hits,
                window,
            } => {
                let n = g_sorted.len();
                let lo = g_sorted.partition_point(|&g| g < y_lag);
                let hi = g_sorted.partition_point(|&g| g <= y_lag);
                let center = (lo + hi) / 2;
                let half = *window / 2;
                let start = center.saturating_sub(half).min(n - *window);
                let rows = &hits[start..start + *window];
                (0..self.levels.len())
                    .map(|k| rows.iter().filter(|r| r[k]).count() as f64 / *window as f64)
                    .collect()
            }
        }
    }
}

impl ConditionalCdf for CsaConditional<'_> {
    fn slice(&self, y_lag: f64, x: &[f64]) -> StepCdf {
        let f_t = self.f_t.at(x);
        let mut h = self.level_values(y_lag, x);
        crate::first_step::rearrange(&mut h);
        let mut grid: Vec<f64> = Vec::with_capacity(h.len());
        let mut vals: Vec<f64> = Vec::with_capacity(h.len());
        for (&p, &v) in self.levels.iter().zip(&h) {
            let y0 = f_t.quantile_clamped(p);
            if grid.last() == Some(&y0) {
                *vals.last_mut().unwrap() = v;
            } else {
                grid.push(y0);
                vals.push(v);
            }
        }
        StepCdf::from_fitted(grid, vals)
    }
}

fn levels_for(f_t: &dyn MarginalFamily, conditional: bool, count: usize) -> Vec<f64> {
    if conditional {
        return (1..=count).map(|k| k as f64 / count as f64).collect();
    }
    let f: Cow<'_, StepCdf> = f_t.at(&[]);
    let mut p: Vec<f64> = (1..=count)
        .map(|k| f.eval(f.quantile_clamped(k as f64 / (count + 1) as f64)))
        .collect();
    p.push(1.0);
    p.sort_by(f64::total_cmp);
    p.dedup();
    p
}

/// Estimates the conditional CDF of `Y_0t` given `Y_0t-1 = y'` (and `x`
/// when covariates are supplied) from the treated pre-period pairs.
///
/// The lag `y_tm2` is mapped to the `t-1` scale, `G = F_tm1^{-1}(F_tm2(y_tm2))`,
/// and the event `{Y_0t <= F_t^{-1}(p)}` is represented by
/// `{y_tm1 <= F_tm1^{-1}(p)}`. `dr.levels` sets the number of levels; the
/// remaining `dr` fields apply to the regression path.
pub fn csa_conditional_cdf<'a>(
    inputs: &CsaInputs<'a>,
    estimator: CsaEstimator,
    dr: &DrOptions,
) -> Result<CsaConditional<'a>> {
    inputs.check()?;
    let n = inputs.y_tm1.len();
    let use_x = inputs.x.is_some_and(|x| x.first().is_some_and(|r| !r.is_empty()));
    let levels = levels_for(inputs.f_t, use_x, dr.levels);

    // per-unit margins (shared when unconditional)
    let shared = (!use_x).then(|| (inputs.f_tm1.at(&[]), inputs.f_tm2.at(&[])));
    let mut g = Vec::with_capacity(n);
    let mut thresholds: Vec<Vec<f64>> = Vec::with_capacity(if use_x { n } else { 1 });
    for i in 0..n {
        let x = inputs.x_row(i);
        let (m1, m2) = match &shared {
            Some((a, b)) => (Cow::Borrowed(a.as_ref()), Cow::Borrowed(b.as_ref())),
            None => (inputs.f_tm1.at(x), inputs.f_tm2.at(x)),
        };
        g.push(m1.quantile_clamped(m2.eval(inputs.y_tm2[i])));
        if use_x || i == 0 {
            thresholds.push(levels.iter().map(|&p| m1.quantile_clamped(p)).collect());
        }
    }
    let thr = |i: usize| if use_x { &thresholds[i] } else { &thresholds[0] };

    let fitted = match estimator {
        CsaEstimator::Empirical { bandwidth } => {
            if !(bandwidth > 0.0 && bandwidth <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth {bandwidth} outside (0, 1]"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
            let hits = order
                .iter()
                .map(|&i| {
                    thr(i)
                        .iter()
                        .map(|&a| inputs.y_tm1[i] <= a)
                        .collect::<Vec<bool>>()
                })
                .collect();
            let window = ((bandwidth * n as f64).ceil() as usize).clamp(1, n);
            Fitted::Empirical {
                g_sorted: order.iter().map(|&i| g[i]).collect(),
                hits,
                window,
            }
        }
        CsaEstimator::DistributionRegression => {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut r = vec![g[i]];
                    if use_x {
                        r.extend_from_slice(inputs.x_row(i));
                    }
                    r
                })
                .collect();
            let design = Design::from_rows(&rows, true)?;
            let model = fit_indicator_regressions(
                &design,
                levels.clone(),
                |k, i| inputs.y_tm1[i] <= thr(i)[k],
                dr,
            )?;
            Fitted::Dr(model)
        }
    };
    Ok(CsaConditional {
        f_t: inputs.f_t,
        levels,
        use_x,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{ecdf, empirical_copula};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn inputs<'a>(
        f_t: &'a StepCdf,
        f1: &'a StepCdf,
        f2: &'a StepCdf,
        y1: &'a [f64],
        y2: &'a [f64],
    ) -> CsaInputs<'a> {
        CsaInputs {
            f_t,
            f_tm1: f1,
            f_tm2: f2,
            y_tm1: y1,
            y_tm2: y2,
            x: None,
            min_pairs: 3,
        }
    }

    #[test]
    fn stationary_margins_reproduce_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y1: Vec<f64> = (0..300).map(|i| i as f64 * 0.5).collect();
        let mut y2 = y1.clone();
        y2.shuffle(&mut rng);
        let f = ecdf(&y1).unwrap();
        let j = csa_joint_cdf(&inputs(&f, &f, &f, &y1, &y2)).unwrap();
        for _ in 0..500 {
            let a = rng.random::<f64>() * 160.0 - 5.0;
            let b = rng.random::<f64>() * 160.0 - 5.0;
            let direct = y1
                .iter()
                .zip(&y2)
                .filter(|(p, q)| **p <= a && **q <= b)
                .count() as f64
                / 300.0;
            assert_eq!(j.eval(a, b), direct);
        }
        assert!((j.eval(1e9, 1e9) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn insufficient_pairs() {
        let f = ecdf(&[1.0, 2.0]).unwrap();
        let e = csa_joint_cdf(&inputs(&f, &f, &f, &[1.0, 2.0], &[1.0, 2.0])).unwrap_err();
        assert!(matches!(e, Error::InsufficientPairs { found: 2, required: 3 }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn margins_and_copula_invariance(seed in 0u64..10_000, n in 20usize..120) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y1 = Vec::new();
            let mut y2 = Vec::new();
            for _ in 0..n {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                y2.push(a);
                y1.push(0.6 * a + 0.8 * b + 1.0);
            }
            let yt: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal) - 1.0).collect();
            let (ft, f1, f2) = (ecdf(&yt).unwrap(), ecdf(&y1).unwrap(), ecdf(&y2).unwrap());
            let j = csa_joint_cdf(&inputs(&ft, &f1, &f2, &y1, &y2)).unwrap();
            let top = 1e9;
            for &y in yt.iter().chain(&y1) {
                prop_assert!((j.eval(y, top) - ft.eval(y)).abs() < 1e-12);
                prop_assert!((j.eval(top, y) - f1.eval(y)).abs() < 1e-12);
            }
            let m = 21;
            let c = empirical_copula(&y1, &y2, m).unwrap();
            for a in 0..m {
                for b in 0..m {
                    let (u, v) = (c.u(a), c.u(b));
                    prop_assert!((j.copula(u, v) - c.get(a, b)).abs() <= 2.0 / n as f64 + 1e-12);
                }
            }
        }
    }

    fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut yt, mut y1, mut y2) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let z2: f64 = rng.sample(StandardNormal);
            let z1 = rho * z2 + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            let z0 = rho * z1 + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            y2.push(z2);
            y1.push(0.5 + z1);
            yt.push(1.0 + 2.0 * z0);
        }
        (yt, y1, y2)
    }

    #[test]
    fn independence_gives_marginal() {
        let (yt, y1, y2) = gaussian_pairs(10_000, 0.0, 5);
        let (ft, f1, f2) = (ecdf(&yt).unwrap(), ecdf(&y1).unwrap(), ecdf(&y2).unwrap());
        let inp = inputs(&ft, &f1, &f2, &y1, &y2);
        for est in [
            CsaEstimator::DistributionRegression,
            CsaEstimator::Empirical { bandwidth: 0.1 },
        ] {
            let c = csa_conditional_cdf(&inp, est, &DrOptions::default()).unwrap();
            for lag in [-1.0, 0.5, 2.0] {
                let s = c.slice(lag, &[]);
                let dev = s.ks_distance_to(|y| ft.eval(y));
                assert!(dev < 0.05, "{est:?} at {lag}: {dev}");
            }
        }
    }

    #[test]
    fn averaging_recovers_marginal() {
        let (yt, y1, y2) = gaussian_pairs(5000, 0.7, 6);
        let (ft, f1, f2) = (ecdf(&yt).unwrap(), ecdf(&y1).unwrap(), ecdf(&y2).unwrap());
        let inp = inputs(&ft, &f1, &f2, &y1, &y2);
        let c = csa_conditional_cdf(&inp, CsaEstimator::DistributionRegression, &DrOptions::default()).unwrap();
        let slices: Vec<StepCdf> = y1.iter().map(|&l| c.slice(l, &[])).collect();
        let grid = slices[0].grid().to_vec();
        let worst = grid
            .iter()
            .map(|&y| {
                let avg = slices.iter().map(|s| s.eval(y)).sum::<f64>() / slices.len() as f64;
                (avg - ft.eval(y)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 0.03, "{worst}");
    }

    #[test]
    fn comonotone_concentrates() {
        let (yt, y1, y2) = gaussian_pairs(10_000, 1.0, 7);
        let (ft, f1, f2) = (ecdf(&yt).unwrap(), ecdf(&y1).unwrap(), ecdf(&y2).unwrap());
        let inp = inputs(&ft, &f1, &f2, &y1, &y2);
        let c = csa_conditional_cdf(&inp, CsaEstimator::Empirical { bandwidth: 0.01 }, &DrOptions::default()).unwrap();
        for lag in [-0.5, 0.5, 1.5] {
            let s = c.slice(lag, &[]);
            let target = ft.quantile(f1.eval(lag)).unwrap();
            let k = s.grid().partition_point(|&g| g < target);
            let lo = k.saturating_sub(2);
            let hi = (k + 2).min(s.len() - 1);
            let below = if lo == 0 { 0.0 } else { s.probs()[lo - 1] };
            let mass = s.probs()[hi] - below;
            assert!(mass >= 0.9, "lag {lag}: {mass}");
        }
    }
}
