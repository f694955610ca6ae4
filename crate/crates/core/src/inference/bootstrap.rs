use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::SliceSet;
use crate::dist::StepFn;
use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Step size rule for the numerical derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Epsilon {
    /// `n^{-a}` with `a` in (0, 1/2).
    Power { a: f64 },
    Fixed { value: f64 },
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Power { a: 1.0 / 3.0 }
    }
}

impl Epsilon {
    pub fn value(&self, n: usize) -> f64 {
        match *self {
            Epsilon::Power { a } => (n as f64).powf(-a),
            Epsilon::Fixed { value } => value,
        }
    }

    fn check(&self) -> Result<()> {
        match *self {
            Epsilon::Power { a } if a > 0.0 && a < 0.5 => Ok(()),
            Epsilon::Fixed { value } if value > 0.0 && value.is_finite() => Ok(()),
            _ => Err(Error::InvalidSpec(format!(
                "epsilon rule {self:?}: need n^-a with a in (0, 0.5) or a positive constant"
            ))),
        }
    }
}

/// Minimum number of replicates.
pub const MIN_BOOT: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootConfig {
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default)]
    pub epsilon: Epsilon,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_n_boot() -> usize {
    999
}

fn default_alpha() -> f64 {
    0.05
}

impl Default for BootConfig {
    fn default() -> Self {
        Self {
            n_boot: default_n_boot(),
            epsilon: Epsilon::default(),
            seed: 0,
            alpha: default_alpha(),
        }
    }
}

impl BootConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot < MIN_BOOT {
            return Err(Error::InvalidSpec(format!(
                "n_boot = {} is below the minimum of {MIN_BOOT}",
                self.n_boot
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        self.epsilon.check()
    }
}

/// First-step estimates that can be moved along `self + scale (other - self)`.
pub trait Perturb: Sized {
    fn perturb(&self, other: &Self, scale: f64) -> Self;
}

impl Perturb for StepFn {
    fn perturb(&self, other: &Self, scale: f64) -> Self {
        self.perturbed(other, scale)
    }
}

impl Perturb for Vec<f64> {
    fn perturb(&self, other: &Self, scale: f64) -> Self {
        self.iter().zip(other).map(|(a, b)| a + scale * (b - a)).collect()
    }
}

impl<A: Perturb, B: Perturb> Perturb for (A, B) {
    fn perturb(&self, other: &Self, scale: f64) -> Self {
        (self.0.perturb(&other.0, scale), self.1.perturb(&other.1, scale))
    }
}

impl Perturb for SliceSet {
    fn perturb(&self, other: &Self, scale: f64) -> Self {
        let pair = |a: &[StepFn], b: &[StepFn]| -> Vec<StepFn> {
            a.iter().zip(b).map(|(x, y)| x.perturbed(y, scale)).collect()
        };
        SliceSet {
            s1: pair(&self.s1, &other.s1),
            s0: pair(&self.s0, &other.s0),
            weights: self.weights.perturb(&other.weights, scale),
        }
    }
}

/// Lower and upper endpoint values over a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Endpoints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// A bound functional `phi` of first-step estimates.
pub trait BoundsMap: Sync {
    type Estimate: Perturb + Send + Sync;

    fn grid(&self) -> &[f64];

    fn estimate(&self, data: &PanelDataset) -> Result<Self::Estimate>;

    /// First-step estimate on the resample `data[indices]`, aligned with
    /// `base` so that the two can be combined by [`Perturb`].
    fn replicate(&self, data: &PanelDataset, indices: &[usize], base: &Self::Estimate) -> Result<Self::Estimate>;

    fn evaluate(&self, estimate: &Self::Estimate) -> Endpoints;
}

/// One-sided confidence limits for the bound endpoints: `lower_ci` for the
/// lower bound and `upper_ci` for the upper bound, each at level
/// `1 - alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiBand {
    pub label: String,
    pub grid: Vec<f64>,
    pub lower_estimate: Vec<f64>,
    pub upper_estimate: Vec<f64>,
    pub lower_ci: Vec<f64>,
    pub upper_ci: Vec<f64>,
    pub epsilon: f64,
    pub n_boot: usize,
    /// Resamples redrawn for lacking a treated or a control unit.
    pub redraws: usize,
}

impl CiBand {
    pub fn mean_width(&self) -> f64 {
        let n = self.grid.len() as f64;
        self.upper_ci.iter().zip(&self.lower_ci).map(|(u, l)| u - l).sum::<f64>() / n
    }
}

/// Resample of `n` unit indices for replicate `b`: stream `b` of a ChaCha8
/// generator seeded with `seed`. Resamples without treated or without
/// control units are redrawn from the same stream; the second value counts
/// the redraws.
pub fn resample_indices(data: &PanelDataset, seed: u64, b: usize) -> (Vec<usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let n = data.n();
    let mut redraws = 0;
    loop {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let treated = idx.iter().filter(|&&i| data.units()[i].treated).count();
        if treated > 0 && treated < n {
            return (idx, redraws);
        }
        redraws += 1;
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

fn run<M: BoundsMap>(
    map: &M,
    data: &PanelDataset,
    cfg: &BootConfig,
    label: &str,
    epsilon: f64,
) -> Result<CiBand> {
    let n = data.n();
    let sqrt_n = (n as f64).sqrt();
    let scale = epsilon * sqrt_n;
    let base = map.estimate(data)?;
    let phi = map.evaluate(&base);
    let reps: Vec<Result<(Endpoints, usize)>> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|b| {
            let (idx, redraws) = resample_indices(data, cfg.seed, b);
            let star = map.replicate(data, &idx, &base).map_err(|e| Error::PipelineFailure {
                replicate: b,
                source: Box::new(e),
            })?;
            let moved = map.evaluate(&base.perturb(&star, scale));
            let z = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| (x - y) / epsilon).collect()
            };
            Ok((
                Endpoints {
                    lower: z(&moved.lower, &phi.lower),
                    upper: z(&moved.upper, &phi.upper),
                },
                redraws,
            ))
        })
        .collect();
    let mut z = Vec::with_capacity(cfg.n_boot);
    let mut redraws = 0;
    for r in reps {
        let (e, k) = r?;
        redraws += k;
        z.push(e);
    }
    if redraws > 0 {
        log::info!("{label}: {redraws} degenerate resamples redrawn");
    }
    let m = map.grid().len();
    let mut lower_ci = Vec::with_capacity(m);
    let mut upper_ci = Vec::with_capacity(m);
    for g in 0..m {
        let mut zl: Vec<f64> = z.iter().map(|e| e.lower[g]).collect();
        let mut zu: Vec<f64> = z.iter().map(|e| e.upper[g]).collect();
        zl.sort_by(f64::total_cmp);
        zu.sort_by(f64::total_cmp);
        lower_ci.push(phi.lower[g] - quantile(&zl, 1.0 - cfg.alpha) / sqrt_n);
        upper_ci.push(phi.upper[g] - quantile(&zu, cfg.alpha) / sqrt_n);
    }
    Ok(CiBand {
        label: label.to_string(),
        grid: map.grid().to_vec(),
        lower_estimate: phi.lower,
        upper_estimate: phi.upper,
        lower_ci,
        upper_ci,
        epsilon,
        n_boot: cfg.n_boot,
        redraws,
    })
}

/// Numerical bootstrap: replicate `b` perturbs the first step to
/// `F + eps sqrt(n) (F*_b - F)`, and `(phi(perturbed) - phi(F)) / eps`
/// approximates the law of `sqrt(n) (phi(F_hat) - phi(F))`. Replicates run
/// in parallel and are merged by index.
pub fn numerical_bootstrap<M: BoundsMap>(
    map: &M,
    data: &PanelDataset,
    cfg: &BootConfig,
    label: &str,
) -> Result<CiBand> {
    cfg.validate()?;
    run(map, data, cfg, label, cfg.epsilon.value(data.n()))
}

/// The ordinary empirical bootstrap through the same machinery
/// (`eps = n^{-1/2}`, so the perturbed input is the resample itself).
pub fn standard_bootstrap<M: BoundsMap>(
    map: &M,
    data: &PanelDataset,
    cfg: &BootConfig,
    label: &str,
) -> Result<CiBand> {
    cfg.validate()?;
    run(map, data, cfg, label, 1.0 / (data.n() as f64).sqrt())
}

/// Confidence limits at several `epsilon = n^{-a}` side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonDiagnostic {
    pub powers: Vec<f64>,
    pub bands: Vec<CiBand>,
    pub mean_widths: Vec<f64>,
    /// `(max - min) / min` of the mean widths.
    pub relative_spread: f64,
    pub flagged: bool,
}

pub const EPSILON_DIAGNOSTIC_POWERS: [f64; 3] = [0.25, 1.0 / 3.0, 0.4];

pub fn epsilon_sensitivity<M: BoundsMap>(
    map: &M,
    data: &PanelDataset,
    cfg: &BootConfig,
    label: &str,
    powers: &[f64],
) -> Result<EpsilonDiagnostic> {
    let mut bands = Vec::with_capacity(powers.len());
    for &a in powers {
        let c = BootConfig {
            epsilon: Epsilon::Power { a },
            ..cfg.clone()
        };
        bands.push(numerical_bootstrap(map, data, &c, label)?);
    }
    let mean_widths: Vec<f64> = bands.iter().map(CiBand::mean_width).collect();
    let lo = mean_widths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean_widths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let relative_spread = if lo > 0.0 { (hi - lo) / lo } else { 0.0 };
    Ok(EpsilonDiagnostic {
        powers: powers.to_vec(),
        bands,
        mean_widths,
        relative_spread,
        flagged: relative_spread > 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::UnitRecord;
    use rand_distr::StandardNormal;

    /// `phi(F) = g(mean)` through the weights of the empirical measure.
    struct WeightedMean {
        y: Vec<f64>,
        g: fn(f64) -> f64,
    }

    impl BoundsMap for WeightedMean {
        type Estimate = Vec<f64>;

        fn grid(&self) -> &[f64] {
            &[0.0]
        }

        fn estimate(&self, data: &PanelDataset) -> Result<Vec<f64>> {
            Ok(vec![1.0 / data.n() as f64; data.n()])
        }

        fn replicate(&self, data: &PanelDataset, idx: &[usize], _: &Vec<f64>) -> Result<Vec<f64>> {
            let mut w = vec![0.0; data.n()];
            for &i in idx {
                w[i] += 1.0 / idx.len() as f64;
            }
            Ok(w)
        }

        fn evaluate(&self, w: &Vec<f64>) -> Endpoints {
            let m: f64 = w.iter().zip(&self.y).map(|(a, b)| a * b).sum();
            let v = (self.g)(m);
            Endpoints {
                lower: vec![v],
                upper: vec![v],
            }
        }
    }

    fn sample(n: usize) -> (PanelDataset, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y: Vec<f64> = (0..n).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let units = y
            .iter()
            .enumerate()
            .map(|(i, &v)| UnitRecord {
                id: i.to_string(),
                y_t: v,
                y_tm1: 0.0,
                y_tm2: 0.0,
                treated: i % 2 == 0,
                x: vec![],
                earlier: vec![],
            })
            .collect();
        (PanelDataset::new(units, vec![]).unwrap(), y)
    }

    #[test]
    fn epsilon_rule() {
        assert!((Epsilon::Power { a: 1.0 / 3.0 }.value(1000) - 0.1).abs() < 1e-12);
        assert!(Epsilon::Power { a: 0.5 }.check().is_err());
        assert!(BootConfig { n_boot: 50, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn linear_map_matches_standard_bootstrap_exactly() {
        let (data, y) = sample(400);
        let map = WeightedMean { y, g: |m| m };
        let cfg = BootConfig {
            n_boot: 200,
            seed: 5,
            ..Default::default()
        };
        let a = numerical_bootstrap(&map, &data, &cfg, "mean").unwrap();
        let b = standard_bootstrap(&map, &data, &cfg, "mean").unwrap();
        assert!((a.lower_ci[0] - b.lower_ci[0]).abs() < 1e-9);
        assert!((a.upper_ci[0] - b.upper_ci[0]).abs() < 1e-9);
        assert!(a.lower_ci[0] < a.lower_estimate[0] && a.upper_ci[0] > a.upper_estimate[0]);
    }

    #[test]
    fn reproducible() {
        let (data, y) = sample(300);
        let map = WeightedMean { y, g: |m| m.exp() };
        let cfg = BootConfig {
            n_boot: 200,
            seed: 1,
            ..Default::default()
        };
        let a = numerical_bootstrap(&map, &data, &cfg, "exp").unwrap();
        let b = numerical_bootstrap(&map, &data, &cfg, "exp").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resamples_keep_both_groups() {
        let units = (0..3)
            .map(|i| UnitRecord {
                id: i.to_string(),
                y_t: 0.0,
                y_tm1: 0.0,
                y_tm2: 0.0,
                treated: i == 0,
                x: vec![],
                earlier: vec![],
            })
            .collect();
        let data = PanelDataset::new(units, vec![]).unwrap();
        let mut total = 0;
        for b in 0..200 {
            let (idx, r) = resample_indices(&data, 3, b);
            total += r;
            assert_eq!(idx.len(), 3);
            assert!(idx.iter().any(|&i| i == 0) && idx.iter().any(|&i| i != 0));
        }
        // P(no treated) + P(all treated) = 8/27 + 1/27
        assert!(total > 0);
    }
}
