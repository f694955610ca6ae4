//! End-to-end estimation: counterfactual, first steps, CSA recovery, and the
//! DoTT/QoTT bounds with their baselines.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    default_delta_grid, default_tau_grid, dott_bounds_worst_case, linspace, qott_bounds,
    qott_rank_invariance, spearman_rho_bounds, BoundsCurve, Conditioning, QuantileBoundsCurve,
    RankPairing, SliceSet, DEFAULT_DELTA_POINTS,
};
use crate::cic::{
    att_qtt, cic_counterfactual_conditional, cic_counterfactual_with_diagnostics, CicDiagnostics,
    ConditionalCounterfactual,
};
use crate::csa::{csa_conditional_cdf, CsaEstimator, CsaInputs, DEFAULT_MIN_PAIRS};
use crate::dist::{spearman_rho, StepCdf, StepFn};
use crate::error::{Error, Result};
use crate::first_step::{
    conditional_cdf_y1, fit_quantile_regression, Design, DrModel, DrOptions, Link, QrModel,
    XOnly, DEFAULT_MIN_TREATED,
};
use crate::inference::{BoundsMap, Endpoints};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationOptions {
    pub link: Link,
    /// Thresholds of each distribution regression.
    pub levels: usize,
    pub csa_estimator: CsaEstimator,
    pub delta_points: usize,
    /// Explicit `[min, max]` for the effect grid; data-driven if absent.
    pub delta_range: Option<[f64; 2]>,
    pub taus: Vec<f64>,
    /// Levels of the covariate quantile regressions.
    pub qr_levels: usize,
    /// Also compute covariate-conditional variants when covariates exist.
    pub covariates: bool,
    pub min_treated: usize,
    pub min_pairs: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            link: Link::Logit,
            levels: 99,
            csa_estimator: CsaEstimator::default(),
            delta_points: DEFAULT_DELTA_POINTS,
            delta_range: None,
            taus: default_tau_grid(),
            qr_levels: 99,
            covariates: true,
            min_treated: DEFAULT_MIN_TREATED,
            min_pairs: DEFAULT_MIN_PAIRS,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

impl EstimationOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.levels < 2 {
            return bad("estimation.levels must be at least 2");
        }
        if self.qr_levels < 2 {
            return bad("estimation.qr_levels must be at least 2");
        }
        if self.delta_points < 2 {
            return bad("estimation.delta_points must be at least 2");
        }
        if let Some([a, b]) = self.delta_range {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return bad("estimation.delta_range must be finite with min < max");
            }
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("estimation.taus must be nonempty and inside (0, 1)");
        }
        if self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return bad("estimation.taus must be strictly increasing");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("estimation.tol and estimation.max_iter must be positive");
        }
        if let CsaEstimator::Empirical { bandwidth } = self.csa_estimator {
            if !(bandwidth > 0.0 && bandwidth <= 1.0) {
                return bad("estimation.csa_estimator.bandwidth must lie in (0, 1]");
            }
        }
        Ok(())
    }

    fn dr(&self) -> DrOptions {
        DrOptions {
            link: self.link,
            levels: self.levels,
            thresholds: None,
            tol: self.tol,
            max_iter: self.max_iter,
            warm_start: None,
        }
    }

    fn qr_taus(&self) -> Vec<f64> {
        let m = self.qr_levels;
        (1..=m).map(|k| k as f64 / (m + 1) as f64).collect()
    }

    pub fn delta_grid(&self, f1: &StepCdf, f0: &StepCdf) -> Vec<f64> {
        match self.delta_range {
            Some([a, b]) => linspace(a, b, self.delta_points),
            None => default_delta_grid(f1, f0, self.delta_points),
        }
    }
}

/// Everything estimated from one dataset.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub n: usize,
    pub n_treated: usize,
    pub att: f64,
    pub taus: Vec<f64>,
    pub qtt: Vec<f64>,
    /// Observed `F_{Y_1t | D=1}`.
    pub f1: StepCdf,
    /// Counterfactual `F_{Y_0t | D=1}`.
    pub counterfactual: StepCdf,
    pub cic: CicDiagnostics,
    pub delta: Vec<f64>,
    pub worst_case: BoundsCurve,
    pub csa: BoundsCurve,
    pub worst_case_cov: Option<BoundsCurve>,
    pub csa_cov: Option<BoundsCurve>,
    pub qott_worst_case: QuantileBoundsCurve,
    pub qott_csa: QuantileBoundsCurve,
    pub qott_csa_cov: Option<QuantileBoundsCurve>,
    pub rank_cross_section: Vec<f64>,
    pub rank_over_time: Vec<f64>,
    /// Treated `rho(Y_t, Y_t-1)`.
    pub rho13: f64,
    /// Treated `rho(Y_t-1, Y_t-2)`, the CSA stand-in for `rho(Y_0t, Y_t-1)`.
    pub rho23: f64,
    pub spearman_bounds: (f64, f64),
}

/// Unconditional margins entering the CSA step.
struct Margins {
    f1: StepCdf,
    f0: StepCdf,
    f_tm1: StepCdf,
    f_tm2: StepCdf,
    diag: CicDiagnostics,
}

fn margins(data: &PanelDataset) -> Result<Margins> {
    data.check_variation()?;
    let (t, c) = data.split_by_group();
    let (f0, diag) = cic_counterfactual_with_diagnostics(&t.y_tm1(), &c.y_tm1(), &c.y_t())?;
    Ok(Margins {
        f1: StepCdf::from_sample(&t.y_t())?,
        f0,
        f_tm1: StepCdf::from_sample(&t.y_tm1())?,
        f_tm2: StepCdf::from_sample(&t.y_tm2())?,
        diag,
    })
}

/// Covariate-conditional margins.
struct CovMargins {
    cf: ConditionalCounterfactual,
    y1: QrModel,
    tm2: QrModel,
}

fn cov_margins(data: &PanelDataset, opts: &EstimationOptions) -> Result<CovMargins> {
    let taus = opts.qr_taus();
    let cf = cic_counterfactual_conditional(data, &taus)?;
    let t = data.treated();
    let design = Design::from_rows(&t.x(), true)?;
    Ok(CovMargins {
        y1: fit_quantile_regression(&t.y_t(), &design, &taus)?,
        tm2: fit_quantile_regression(&t.y_tm2(), &design, &taus)?,
        cf,
    })
}

/// Fitted distribution regressions, reused as warm starts.
#[derive(Debug, Clone)]
struct Fits {
    y1: DrModel,
    y0: Option<DrModel>,
}

fn warm(opts: &DrOptions, base: Option<&DrModel>, fix_thresholds: bool) -> DrOptions {
    let mut o = opts.clone();
    if let Some(m) = base {
        if fix_thresholds {
            o.thresholds = Some(m.thresholds.clone());
        }
        o.warm_start = Some(m.fits.clone());
    }
    o
}

/// Conditional slices under CSA at the conditioning points `at`.
fn csa_slices(
    data: &PanelDataset,
    opts: &EstimationOptions,
    covariates: bool,
    at: &Conditioning<'_>,
    base: Option<&Fits>,
) -> Result<(SliceSet, Fits)> {
    let treated = data.treated();
    let dr = opts.dr();
    let cond_y1 = conditional_cdf_y1(
        &treated,
        covariates,
        &warm(&dr, base.map(|b| &b.y1), true),
        opts.min_treated,
    )?;
    let y_tm1 = treated.y_tm1();
    let y_tm2 = treated.y_tm2();
    let x = treated.x();
    let dr0 = warm(&dr, base.and_then(|b| b.y0.as_ref()), false);
    let (set, y0) = if covariates {
        let m = cov_margins(data, opts)?;
        let inputs = CsaInputs {
            f_t: &m.cf,
            f_tm1: &m.cf.tm1_treated,
            f_tm2: &m.tm2,
            y_tm1: &y_tm1,
            y_tm2: &y_tm2,
            x: Some(&x),
            min_pairs: opts.min_pairs,
        };
        let csa = csa_conditional_cdf(&inputs, opts.csa_estimator, &dr0)?;
        (at.slices(&cond_y1, &csa)?, csa.dr_model().cloned())
    } else {
        let m = margins(data)?;
        let inputs = CsaInputs {
            f_t: &m.f0,
            f_tm1: &m.f_tm1,
            f_tm2: &m.f_tm2,
            y_tm1: &y_tm1,
            y_tm2: &y_tm2,
            x: None,
            min_pairs: opts.min_pairs,
        };
        let csa = csa_conditional_cdf(&inputs, opts.csa_estimator, &dr0)?;
        (at.slices(&cond_y1, &csa)?, csa.dr_model().cloned())
    };
    Ok((set, Fits { y1: cond_y1.model, y0 }))
}

/// Worst-case slices given covariates only.
fn worst_case_cov_slices(data: &PanelDataset, opts: &EstimationOptions, at: &Conditioning<'_>) -> Result<SliceSet> {
    let m = cov_margins(data, opts)?;
    at.slices(&XOnly(&m.y1), &XOnly(&m.cf))
}

fn has_covariates(data: &PanelDataset, opts: &EstimationOptions) -> bool {
    opts.covariates && data.n_covariates() > 0
}

/// Runs the full point-estimation pipeline.
pub fn estimate_bounds(data: &PanelDataset, opts: &EstimationOptions) -> Result<BoundsReport> {
    opts.validate()?;
    let m = margins(data)?;
    let treated = data.treated();
    let y_t = treated.y_t();
    let (att, qtt) = att_qtt(&y_t, &m.f0, &opts.taus)?;
    let delta = opts.delta_grid(&m.f1, &m.f0);

    let worst_case = dott_bounds_worst_case(&m.f1, &m.f0, &delta)?;
    let lags = treated.y_tm1();
    let x = treated.x();
    let (set, _) = csa_slices(data, opts, false, &Conditioning::new(&lags), None)?;
    let (lo, up) = set.makarov(&delta);
    let csa = BoundsCurve::from_raw(delta.clone(), lo, up);

    let (worst_case_cov, csa_cov) = if has_covariates(data, opts) {
        let at = Conditioning {
            lags: &lags,
            x: Some(&x),
            weights: None,
        };
        let (lo, up) = worst_case_cov_slices(data, opts, &at)?.makarov(&delta);
        let wc = BoundsCurve::from_raw(delta.clone(), lo, up);
        let (set, _) = csa_slices(data, opts, true, &at, None)?;
        let (lo, up) = set.makarov(&delta);
        (Some(wc), Some(BoundsCurve::from_raw(delta.clone(), lo, up)))
    } else {
        (None, None)
    };

    let qott_csa_cov = csa_cov.as_ref().map(|c| qott_bounds(c, &opts.taus)).transpose()?;
    let rho13 = spearman_rho(&y_t, &lags)?;
    let rho23 = spearman_rho(&lags, &treated.y_tm2())?;
    Ok(BoundsReport {
        n: data.n(),
        n_treated: data.n_treated(),
        att,
        qtt,
        qott_worst_case: qott_bounds(&worst_case, &opts.taus)?,
        qott_csa: qott_bounds(&csa, &opts.taus)?,
        qott_csa_cov,
        rank_cross_section: qott_rank_invariance(&m.f1, &m.f0, RankPairing::CrossSectional, &treated, &opts.taus)?,
        rank_over_time: qott_rank_invariance(&m.f1, &m.f0, RankPairing::OverTime, &treated, &opts.taus)?,
        taus: opts.taus.clone(),
        f1: m.f1,
        counterfactual: m.f0,
        cic: m.diag,
        delta,
        worst_case,
        csa,
        worst_case_cov,
        csa_cov,
        rho13,
        rho23,
        spearman_bounds: spearman_rho_bounds(rho13, rho23),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DottVariant {
    WorstCase,
    WorstCaseCov,
    Csa,
    CsaCov,
}

impl DottVariant {
    pub const ALL: [DottVariant; 4] = [
        DottVariant::WorstCase,
        DottVariant::Csa,
        DottVariant::WorstCaseCov,
        DottVariant::CsaCov,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DottVariant::WorstCase => "worst_case",
            DottVariant::WorstCaseCov => "worst_case_cov",
            DottVariant::Csa => "csa",
            DottVariant::CsaCov => "csa_cov",
        }
    }

    pub fn uses_covariates(self) -> bool {
        matches!(self, DottVariant::WorstCaseCov | DottVariant::CsaCov)
    }
}

/// DoTT bounds as a function of first-step slices, for the bootstrap.
///
/// The estimate holds one slice pair per original treated unit (a single
/// pair for the plain worst case). A replicate refits every first step on
/// the resample, evaluates it at the original conditioning points and
/// weights each point by its multiplicity in the resample. Distribution
/// regressions in replicates start from the full-sample coefficients.
pub struct DottMap {
    variant: DottVariant,
    opts: EstimationOptions,
    grid: Vec<f64>,
    base: OnceLock<Fits>,
}

impl DottMap {
    pub fn new(variant: DottVariant, opts: EstimationOptions, grid: Vec<f64>) -> Result<Self> {
        opts.validate()?;
        crate::bounds::check_grid(&grid)?;
        Ok(Self {
            variant,
            opts,
            grid,
            base: OnceLock::new(),
        })
    }

    pub fn variant(&self) -> DottVariant {
        self.variant
    }

    fn slices(&self, data: &PanelDataset, points: &PanelDataset, weights: Option<&[f64]>) -> Result<SliceSet> {
        if self.variant.uses_covariates() && data.n_covariates() == 0 {
            return Err(Error::InvalidSpec(format!(
                "{} bounds need covariates",
                self.variant.label()
            )));
        }
        let t = points.treated();
        let lags = t.y_tm1();
        let x = t.x();
        let at = Conditioning {
            lags: &lags,
            x: self.variant.uses_covariates().then_some(x.as_slice()),
            weights,
        };
        match self.variant {
            DottVariant::WorstCase => {
                let m = margins(data)?;
                Ok(SliceSet {
                    s1: vec![StepFn::from(&m.f1)],
                    s0: vec![StepFn::from(&m.f0)],
                    weights: vec![1.0],
                })
            }
            DottVariant::WorstCaseCov => worst_case_cov_slices(data, &self.opts, &at),
            DottVariant::Csa | DottVariant::CsaCov => {
                let base = self.base.get();
                let (set, fits) = csa_slices(data, &self.opts, self.variant.uses_covariates(), &at, base)?;
                if base.is_none() {
                    let _ = self.base.set(fits);
                }
                Ok(set)
            }
        }
    }
}

impl BoundsMap for DottMap {
    type Estimate = SliceSet;

    fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn estimate(&self, data: &PanelDataset) -> Result<SliceSet> {
        self.slices(data, data, None)
    }

    fn replicate(&self, data: &PanelDataset, indices: &[usize], _base: &SliceSet) -> Result<SliceSet> {
        let star = data.resample(indices);
        if self.variant == DottVariant::WorstCase {
            return self.slices(&star, &star, None);
        }
        let mut count = vec![0.0; data.n()];
        for &i in indices {
            count[i] += 1.0;
        }
        let weights: Vec<f64> = data.treated().indices().iter().map(|&i| count[i]).collect();
        self.slices(&star, data, Some(&weights))
    }

    fn evaluate(&self, estimate: &SliceSet) -> Endpoints {
        let (lo, up) = estimate.makarov(&self.grid);
        let c = BoundsCurve::from_raw(self.grid.clone(), lo, up);
        Endpoints {
            lower: c.lower,
            upper: c.upper,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, CovariateSpec, DgpSpec, Model};
    use crate::inference::{numerical_bootstrap, BootConfig};

    fn small(model: Model, n: usize, seed: u64) -> PanelDataset {
        let mut spec = DgpSpec::new(model, n);
        spec.seed = seed;
        spec.covariate = Some(CovariateSpec {
            loading: 1.0,
            selection: 0.5,
        });
        generate(&spec).unwrap().0
    }

    fn quick() -> EstimationOptions {
        EstimationOptions {
            levels: 19,
            qr_levels: 19,
            delta_points: 41,
            taus: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            ..Default::default()
        }
    }

    #[test]
    fn report_is_nested() {
        let data = small(Model::Twfe, 1500, 3);
        let r = estimate_bounds(&data, &quick()).unwrap();
        assert_eq!(r.delta.len(), 41);
        assert!(r.csa.excess_over(&r.worst_case) < 0.05);
        assert!(r.csa.mean_width() < r.worst_case.mean_width());
        let wc = r.worst_case_cov.as_ref().unwrap();
        assert!(wc.excess_over(&r.worst_case) < 0.05);
        assert_eq!(r.qtt.len(), 5);
        let (lo, hi) = r.spearman_bounds;
        assert!(lo <= hi);
    }

    #[test]
    fn no_covariates_skips_cov_variants() {
        let data = small(Model::CicPanel, 800, 1);
        let opts = EstimationOptions {
            covariates: false,
            ..quick()
        };
        let r = estimate_bounds(&data, &opts).unwrap();
        assert!(r.worst_case_cov.is_none() && r.csa_cov.is_none());
    }

    #[test]
    fn map_estimate_matches_report() {
        let data = small(Model::Twfe, 1000, 5);
        let r = estimate_bounds(&data, &quick()).unwrap();
        for (variant, curve) in [(DottVariant::WorstCase, &r.worst_case), (DottVariant::Csa, &r.csa)] {
            let map = DottMap::new(variant, quick(), r.delta.clone()).unwrap();
            let e = map.evaluate(&map.estimate(&data).unwrap());
            for k in 0..r.delta.len() {
                assert!((e.lower[k] - curve.lower[k]).abs() < 1e-12);
                assert!((e.upper[k] - curve.upper[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bootstrap_brackets_estimates() {
        let data = small(Model::Twfe, 600, 8);
        let grid = vec![-1.0, 0.0, 1.0, 2.0, 3.0];
        let map = DottMap::new(DottVariant::Csa, quick(), grid).unwrap();
        let cfg = BootConfig {
            n_boot: 200,
            seed: 1,
            ..Default::default()
        };
        let band = numerical_bootstrap(&map, &data, &cfg, "csa").unwrap();
        assert_eq!(band.grid.len(), 5);
        assert!(band.lower_ci.iter().chain(&band.upper_ci).all(|v| v.is_finite()));
        // at the grid ends the bounds sit at 0 and 1
        assert!(band.upper_estimate[4] > 0.99 && band.lower_estimate[0] < 0.01);
    }

    #[test]
    fn rejects_bad_options() {
        let opts = EstimationOptions {
            taus: vec![0.5, 0.2],
            ..Default::default()
        };
        assert!(matches!(opts.validate(), Err(Error::InvalidSpec(_))));
    }
}
