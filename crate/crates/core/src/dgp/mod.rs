//! Synthetic panels with oracle access to both potential outcomes.
//!
//! Untreated outcomes follow one of three models, for periods `s` (oldest
//! first, the last one being `t`):
//!
//! - `twfe`: `Y0_s = theta_s + eta + b x + V_s`
//! - `cic_panel`: `Y0_s = h_s(eta + b x + V_s)` with increasing `h_s`
//! - `interactive_fe`: `Y0_s = theta_s + eta + b x + lambda F_s + V_s`
//!
//! `V_s = scale * Phi^{-1}(U_s)` where `U` is a stationary Markov chain with
//! the configured adjacent-period copula, so the copula of untreated
//! outcomes in adjacent periods is the same for every pair whenever the
//! copula parameter is constant (and the model is not `interactive_fe`).
//! Treatment is Bernoulli with probability logistic in `eta` (and `x`),
//! calibrated to the target treated share.

mod bvn;
mod copula;
pub mod population;

pub use bvn::{bvn_cdf, gaussian_copula};
pub use copula::{markov_chain, CopulaFamily, ParamPath};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dist::StepCdf;
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, UnitRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Twfe,
    CicPanel,
    InteractiveFe,
}

/// Scalar distribution for unit heterogeneity and factor loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarDist {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Degenerate { value: f64 },
    /// Exponential with the given rate, times `scale`.
    Exponential { rate: f64, #[serde(default = "one")] scale: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for ScalarDist {
    fn default() -> Self {
        ScalarDist::Normal { mean: 0.0, sd: 1.0 }
    }
}

impl ScalarDist {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            ScalarDist::Normal { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
            ScalarDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            ScalarDist::Degenerate { value } => value.is_finite(),
            ScalarDist::Exponential { rate, scale } => rate > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid distribution {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalarDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            ScalarDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            ScalarDist::Degenerate { value } => value,
            ScalarDist::Exponential { rate, scale } => {
                scale * Exp::new(rate).expect("checked rate").sample(rng)
            }
        }
    }
}

/// Adjacent-period copula of the shocks and their scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSpec {
    pub family: CopulaFamily,
    #[serde(default = "zero_param")]
    pub param: ParamPath,
    #[serde(default = "one")]
    pub scale: f64,
}

fn zero_param() -> ParamPath {
    ParamPath::Constant(0.0)
}

impl Default for ShockSpec {
    fn default() -> Self {
        Self {
            family: CopulaFamily::Gaussian,
            param: ParamPath::Constant(0.5),
            scale: 1.0,
        }
    }
}

/// Period map for the `cic_panel` model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HMap {
    Identity,
    /// `a + b u`
    Affine { a: f64, b: f64 },
    /// `a + exp(b u)`
    Exp { a: f64, b: f64 },
}

impl HMap {
    pub fn apply(&self, u: f64) -> f64 {
        match *self {
            HMap::Identity => u,
            HMap::Affine { a, b } => a + b * u,
            HMap::Exp { a, b } => a + (b * u).exp(),
        }
    }

    /// Strictly increasing on a grid over [-10, 10].
    fn check(&self) -> Result<()> {
        let vals: Vec<f64> = (0..=400).map(|k| self.apply(-10.0 + k as f64 * 0.05)).collect();
        if vals.iter().all(|v| v.is_finite()) && vals.windows(2).all(|w| w[0] < w[1]) {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("period map {self:?} is not strictly increasing")))
        }
    }
}

/// Loading distribution and factor path (one value per period, oldest
/// first) for the `interactive_fe` model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub loading: ScalarDist,
    pub path: Vec<f64>,
}

/// Treated outcome rule `Y1_t = g(Y0_t, noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectMap {
    /// `Y0_t + c`
    Constant { c: f64 },
    /// `c + scale Y0_t`; the effect is monotone in `Y0_t`.
    RankPreserving { c: f64, scale: f64 },
    /// `Y0_t + c + N(0, noise_sd^2)`; reshuffles ranks.
    RankSwapping { c: f64, noise_sd: f64 },
}

impl Default for EffectMap {
    fn default() -> Self {
        EffectMap::Constant { c: 1.0 }
    }
}

impl EffectMap {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            EffectMap::Constant { c } => c.is_finite(),
            EffectMap::RankPreserving { c, scale } => c.is_finite() && scale > 0.0,
            EffectMap::RankSwapping { c, noise_sd } => c.is_finite() && noise_sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid effect map {self:?}")))
        }
    }

    fn apply<R: Rng + ?Sized>(&self, y0: f64, rng: &mut R) -> f64 {
        match *self {
            EffectMap::Constant { c } => y0 + c,
            EffectMap::RankPreserving { c, scale } => c + scale * y0,
            EffectMap::RankSwapping { c, noise_sd } => {
                y0 + c + noise_sd * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }
}

/// A single standard normal covariate entering every period with the same
/// loading, and optionally the treatment propensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub loading: f64,
    #[serde(default)]
    pub selection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub model: Model,
    pub n: usize,
    #[serde(default = "half")]
    pub p_treated: f64,
    /// Total number of periods including `t` (at least 3).
    #[serde(default = "three")]
    pub periods: usize,
    /// Time effects, oldest first; empty means zeros.
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub eta: ScalarDist,
    /// Slope of the treatment log-odds in `eta`.
    #[serde(default = "one")]
    pub selection: f64,
    #[serde(default)]
    pub shocks: ShockSpec,
    /// Period maps for `cic_panel`, oldest first; empty means identity.
    #[serde(default)]
    pub h_maps: Vec<HMap>,
    #[serde(default)]
    pub factor: Option<FactorSpec>,
    #[serde(default)]
    pub effect: EffectMap,
    #[serde(default)]
    pub covariate: Option<CovariateSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}

fn three() -> usize {
    3
}

impl DgpSpec {
    /// Defaults for everything but the model and sample size.
    pub fn new(model: Model, n: usize) -> Self {
        Self {
            model,
            n,
            p_treated: 0.5,
            periods: 3,
            theta: Vec::new(),
            eta: ScalarDist::default(),
            selection: 1.0,
            shocks: ShockSpec::default(),
            h_maps: Vec::new(),
            factor: None,
            effect: EffectMap::default(),
            covariate: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n < 2 {
            return bad(format!("n = {} is too small", self.n));
        }
        if !(self.p_treated > 0.0 && self.p_treated < 1.0) {
            return bad(format!("p_treated = {} must lie in (0, 1)", self.p_treated));
        }
        if self.periods < 3 {
            return bad(format!("{} periods; at least 3 are required", self.periods));
        }
        if !self.theta.is_empty() && self.theta.len() != self.periods {
            return bad(format!("{} time effects for {} periods", self.theta.len(), self.periods));
        }
        if !self.selection.is_finite() {
            return bad("selection must be finite".into());
        }
        self.eta.check()?;
        for theta in self.shocks.param.resolve(self.periods - 1)? {
            self.shocks.family.check_param(theta)?;
        }
        if !(self.shocks.scale > 0.0 && self.shocks.scale.is_finite()) {
            return bad("shock scale must be positive".into());
        }
        if !self.h_maps.is_empty() && self.h_maps.len() != self.periods {
            return bad(format!("{} period maps for {} periods", self.h_maps.len(), self.periods));
        }
        for h in &self.h_maps {
            h.check()?;
        }
        match (&self.factor, self.model) {
            (None, Model::InteractiveFe) => return bad("interactive_fe requires a factor section".into()),
            (Some(f), _) => {
                f.loading.check()?;
                if f.path.len() != self.periods {
                    return bad(format!("factor path has {} values for {} periods", f.path.len(), self.periods));
                }
            }
            _ => {}
        }
        self.effect.check()
    }
}

/// Everything drawn for one unit. `y0` and `v` hold all periods, oldest
/// first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpDraw {
    pub y0: Vec<f64>,
    pub y1_t: f64,
    pub treated: bool,
    pub x: Vec<f64>,
    pub eta: f64,
    pub lambda: f64,
    pub v: Vec<f64>,
}

impl DgpDraw {
    pub fn y0_t(&self) -> f64 {
        self.y0[self.y0.len() - 1]
    }

    pub fn effect(&self) -> f64 {
        self.y1_t - self.y0_t()
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Intercept `a` with `mean(logistic(a + s_i)) = p`.
fn calibrate_intercept(scores: &[f64], p: f64) -> f64 {
    let mean = |a: f64| scores.iter().map(|&s| logistic(a + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a panel and its oracle. Identical specs give identical output.
pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, Vec<DgpDraw>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let s = spec.periods;
    let eta: Vec<f64> = (0..n).map(|_| spec.eta.sample(&mut rng)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| match spec.covariate {
            Some(_) => vec![rng.sample(StandardNormal)],
            None => vec![],
        })
        .collect();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            spec.selection * eta[i]
                + spec.covariate.as_ref().map_or(0.0, |c| c.selection * x[i][0])
        })
        .collect();
    let a = calibrate_intercept(&scores, spec.p_treated);
    let params = spec.shocks.param.resolve(s - 1)?;
    let normal = Normal::standard();
    let mut draws = Vec::with_capacity(n);
    for i in 0..n {
        let u = markov_chain(spec.shocks.family, &params, s, &mut rng);
        let v: Vec<f64> = u.iter().map(|&p| spec.shocks.scale * normal.inverse_cdf(p)).collect();
        let lambda = spec.factor.as_ref().map_or(0.0, |f| f.loading.sample(&mut rng));
        let treated = rng.random::<f64>() < logistic(a + scores[i]);
        let base = eta[i] + spec.covariate.as_ref().map_or(0.0, |c| c.loading * x[i][0]);
        let y0: Vec<f64> = (0..s)
            .map(|k| {
                let theta = spec.theta.get(k).copied().unwrap_or(0.0);
                match spec.model {
                    Model::Twfe => theta + base + v[k],
                    Model::CicPanel => spec.h_maps.get(k).unwrap_or(&HMap::Identity).apply(base + v[k]),
                    Model::InteractiveFe => {
                        let f = spec.factor.as_ref().expect("validated").path[k];
                        theta + base + lambda * f + v[k]
                    }
                }
            })
            .collect();
        let y1_t = spec.effect.apply(y0[s - 1], &mut rng);
        draws.push(DgpDraw {
            y0,
            y1_t,
            treated,
            x: x[i].clone(),
            eta: eta[i],
            lambda,
            v,
        });
    }
    let units: Vec<UnitRecord> = draws
        .iter()
        .enumerate()
        .map(|(i, d)| UnitRecord {
            id: i.to_string(),
            y_t: if d.treated { d.y1_t } else { d.y0[s - 1] },
            y_tm1: d.y0[s - 2],
            y_tm2: d.y0[s - 3],
            treated: d.treated,
            x: d.x.clone(),
            earlier: (0..s - 3).rev().map(|k| d.y0[k]).collect(),
        })
        .collect();
    let names = if spec.covariate.is_some() {
        vec!["x1".to_string()]
    } else {
        vec![]
    };
    Ok((PanelDataset::new(units, names)?, draws))
}

fn treated_effects(draws: &[DgpDraw]) -> Result<StepCdf> {
    let e: Vec<f64> = draws.iter().filter(|d| d.treated).map(DgpDraw::effect).collect();
    if e.is_empty() {
        return Err(Error::EmptySample);
    }
    StepCdf::from_sample(&e)
}

/// Empirical `P(Y1_t - Y0_t <= delta | D = 1)` over the treated draws.
pub fn oracle_dott(draws: &[DgpDraw], delta_grid: &[f64]) -> Result<Vec<f64>> {
    let f = treated_effects(draws)?;
    Ok(delta_grid.iter().map(|&d| f.eval(d)).collect())
}

/// Empirical quantiles of the treated effects.
pub fn oracle_qott(draws: &[DgpDraw], tau_grid: &[f64]) -> Result<Vec<f64>> {
    let f = treated_effects(draws)?;
    tau_grid.iter().map(|&t| f.quantile(t)).collect()
}

/// Writes the oracle as CSV: id, treated, x columns, y0 per period (oldest
/// first), y1_t, eta, lambda.
pub fn write_oracle_csv<W: std::io::Write>(draws: &[DgpDraw], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let periods = draws.first().map_or(0, |d| d.y0.len());
    let nx = draws.first().map_or(0, |d| d.x.len());
    let mut header = vec!["id".to_string(), "treated".into()];
    header.extend((1..=nx).map(|k| format!("x{k}")));
    header.extend((0..periods).map(|k| match periods - 1 - k {
        0 => "y0_t".to_string(),
        lag => format!("y0_tm{lag}"),
    }));
    header.extend(["y1_t".to_string(), "eta".into(), "lambda".into()]);
    w.write_record(&header)?;
    for (i, d) in draws.iter().enumerate() {
        let mut rec = vec![i.to_string(), (d.treated as u8).to_string()];
        rec.extend(d.x.iter().map(|v| v.to_string()));
        rec.extend(d.y0.iter().map(|v| v.to_string()));
        rec.extend([d.y1_t.to_string(), d.eta.to_string(), d.lambda.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{empirical_copula, spearman_rho};

    fn treated_pair(draws: &[DgpDraw], later: usize) -> (Vec<f64>, Vec<f64>) {
        draws
            .iter()
            .filter(|d| d.treated)
            .map(|d| (d.y0[later], d.y0[later - 1]))
            .unzip()
    }

    #[test]
    fn seed_determinism() {
        let mut spec = DgpSpec::new(Model::Twfe, 500);
        spec.seed = 42;
        let (a, da) = generate(&spec).unwrap();
        let (b, db) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
        spec.seed = 43;
        assert_ne!(generate(&spec).unwrap().0, a);
    }

    #[test]
    fn treated_share_and_selection() {
        let mut spec = DgpSpec::new(Model::Twfe, 20_000);
        spec.p_treated = 0.3;
        spec.selection = 2.0;
        spec.seed = 1;
        let (data, draws) = generate(&spec).unwrap();
        assert!((data.p_treated() - 0.3).abs() < 0.015);
        let mean_eta = |t: bool| {
            let v: Vec<f64> = draws.iter().filter(|d| d.treated == t).map(|d| d.eta).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_eta(true) > mean_eta(false) + 0.5);
    }

    #[test]
    fn iid_twfe_has_equal_adjacent_rhos() {
        let mut spec = DgpSpec::new(Model::Twfe, 10_000);
        spec.eta = ScalarDist::Degenerate { value: 0.0 };
        spec.shocks = ShockSpec {
            family: CopulaFamily::Independent,
            param: ParamPath::Constant(0.0),
            scale: 1.0,
        };
        spec.seed = 3;
        let (_, draws) = generate(&spec).unwrap();
        let (a, b) = treated_pair(&draws, 2);
        let (c, d) = treated_pair(&draws, 1);
        let r1 = spearman_rho(&a, &b).unwrap();
        let r2 = spearman_rho(&c, &d).unwrap();
        assert!(r1.abs() < 0.05 && r2.abs() < 0.05 && (r1 - r2).abs() < 0.06);
    }

    #[test]
    fn cic_panel_scale_change_keeps_copula() {
        let mut spec = DgpSpec::new(Model::CicPanel, 10_000);
        spec.h_maps = vec![
            HMap::Identity,
            HMap::Identity,
            HMap::Affine { a: 0.0, b: 2.0 },
        ];
        spec.shocks.param = ParamPath::Constant(0.6);
        spec.seed = 5;
        let (_, draws) = generate(&spec).unwrap();
        let (a, b) = treated_pair(&draws, 2);
        let (c, d) = treated_pair(&draws, 1);
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!((sd(&a) / sd(&b) - 2.0).abs() < 0.1);
        let c1 = empirical_copula(&a, &b, 21).unwrap();
        let c2 = empirical_copula(&c, &d, 21).unwrap();
        assert!(c1.max_abs_diff(&c2) < 0.02, "{}", c1.max_abs_diff(&c2));
    }

    #[test]
    fn nonmonotone_factor_breaks_stability() {
        let mut spec = DgpSpec::new(Model::InteractiveFe, 10_000);
        spec.factor = Some(FactorSpec {
            loading: ScalarDist::Exponential { rate: 1.0, scale: 2.0 },
            path: vec![1.0, -1.0, 1.0],
        });
        spec.seed = 8;
        let (_, draws) = generate(&spec).unwrap();
        let (a, b) = treated_pair(&draws, 2);
        let (c, d) = treated_pair(&draws, 1);
        let c1 = empirical_copula(&a, &b, 21).unwrap();
        let c2 = empirical_copula(&c, &d, 21).unwrap();
        assert!(c1.max_abs_diff(&c2) > 0.05, "{}", c1.max_abs_diff(&c2));
    }

    #[test]
    fn oracle_curves() {
        let mut spec = DgpSpec::new(Model::Twfe, 400);
        spec.effect = EffectMap::Constant { c: 1.5 };
        let (_, draws) = generate(&spec).unwrap();
        let d = oracle_dott(&draws, &[1.49, 1.5 - 1e-9, 1.5 + 1e-9, 1.51]).unwrap();
        assert_eq!(d, vec![0.0, 0.0, 1.0, 1.0]);
        let q = oracle_qott(&draws, &[0.1, 0.9]).unwrap();
        assert!(q.iter().all(|v| (v - 1.5).abs() < 1e-9));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = DgpSpec::new(Model::CicPanel, 100);
        spec.h_maps = vec![HMap::Affine { a: 0.0, b: -1.0 }; 3];
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        let mut spec = DgpSpec::new(Model::Twfe, 100);
        spec.shocks.param = ParamPath::Constant(1.0);
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        assert!(generate(&DgpSpec::new(Model::InteractiveFe, 100)).is_err());
    }

    #[test]
    fn extra_periods_fill_earlier() {
        let mut spec = DgpSpec::new(Model::Twfe, 50);
        spec.periods = 5;
        let (data, draws) = generate(&spec).unwrap();
        assert_eq!(data.pre_periods(), 4);
        let u = &data.units()[0];
        assert_eq!(u.earlier, vec![draws[0].y0[1], draws[0].y0[0]]);
        assert_eq!(u.y_tm2, draws[0].y0[2]);
    }
}
