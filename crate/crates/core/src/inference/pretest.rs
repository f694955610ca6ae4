use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::bootstrap::{resample_indices, BootConfig};
use crate::dist::spearman_rho;
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelView};

/// Constancy test of Spearman's rho across adjacent pre-treatment period
/// pairs of the treated group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretestReport {
    /// Pair labels, most recent first: `(t-1,t-2)`, `(t-2,t-3)`, ...
    pub pairs: Vec<String>,
    pub rho: Vec<f64>,
    pub se: Vec<f64>,
    /// Same pairs for controls; descriptive only.
    pub control_rho: Vec<f64>,
    pub control_se: Vec<f64>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_boot: usize,
    pub redraws: usize,
}

fn pair_rhos(view: &PanelView<'_>, pre: usize) -> Result<Vec<f64>> {
    (1..pre)
        .map(|lag| spearman_rho(&view.period(lag), &view.period(lag + 1)))
        .collect()
}

fn diffs(rho: &[f64]) -> DVector<f64> {
    DVector::from_iterator(rho.len() - 1, rho.windows(2).map(|w| w[1] - w[0]))
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Wald statistic `d' S^+ d` on consecutive differences `d` of the treated
/// pair rhos, with `S` the bootstrap covariance of `d`. The p-value is the
/// share of recentered bootstrap statistics `(d* - d)' S^+ (d* - d)` at or
/// above the observed one.
pub fn pretest_csa_rho(data: &PanelDataset, cfg: &BootConfig) -> Result<PretestReport> {
    cfg.validate()?;
    let pre = data.pre_periods();
    if pre < 3 {
        return Err(Error::InsufficientPeriods { found: pre, required: 3 });
    }
    data.check_variation()?;
    let (treated, control) = data.split_by_group();
    let rho = pair_rhos(&treated, pre)?;
    let control_rho = pair_rhos(&control, pre)?;
    let d = diffs(&rho);
    let reps: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|b| {
            let (idx, redraws) = resample_indices(data, cfg.seed, b);
            let star = data.resample(&idx);
            let (t, c) = star.split_by_group();
            let wrap = |e| Error::PipelineFailure {
                replicate: b,
                source: Box::new(e),
            };
            Ok((
                pair_rhos(&t, pre).map_err(wrap)?,
                pair_rhos(&c, pre).map_err(wrap)?,
                redraws,
            ))
        })
        .collect();
    let mut tr = Vec::with_capacity(cfg.n_boot);
    let mut cr = Vec::with_capacity(cfg.n_boot);
    let mut redraws = 0;
    for r in reps {
        let (a, b, k) = r?;
        tr.push(a);
        cr.push(b);
        redraws += k;
    }
    let column = |rows: &[Vec<f64>], j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    let se: Vec<f64> = (0..rho.len()).map(|j| sd(&column(&tr, j))).collect();
    let control_se: Vec<f64> = (0..rho.len()).map(|j| sd(&column(&cr, j))).collect();

    let k = d.len();
    let dstar: Vec<DVector<f64>> = tr.iter().map(|r| diffs(r) - &d).collect();
    let b = dstar.len() as f64;
    let mean = dstar.iter().fold(DVector::zeros(k), |acc, v| acc + v) / b;
    let mut cov = DMatrix::zeros(k, k);
    for v in &dstar {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    cov /= b - 1.0;
    let pinv = cov
        .clone()
        .pseudo_inverse(1e-12 * cov.norm().max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let quad = |v: &DVector<f64>| (v.transpose() * &pinv * v)[(0, 0)];
    let statistic = quad(&d);
    let exceed = dstar.iter().filter(|v| quad(v) >= statistic).count();
    Ok(PretestReport {
        pairs: (1..pre).map(|l| format!("(t-{l},t-{})", l + 1)).collect(),
        rho,
        se,
        control_rho,
        control_se,
        statistic,
        df: k,
        p_value: exceed as f64 / b,
        n_boot: cfg.n_boot,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::UnitRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg() -> BootConfig {
        BootConfig {
            n_boot: 200,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn needs_three_pre_periods() {
        let units = (0..10)
            .map(|i| UnitRecord {
                id: i.to_string(),
                y_t: i as f64,
                y_tm1: i as f64,
                y_tm2: i as f64,
                treated: i % 2 == 0,
                x: vec![],
                earlier: vec![],
            })
            .collect();
        let data = PanelDataset::new(units, vec![]).unwrap();
        assert!(matches!(
            pretest_csa_rho(&data, &cfg()),
            Err(Error::InsufficientPeriods { found: 2, required: 3 })
        ));
    }

    #[test]
    fn duplicated_pairs_give_zero_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let units = (0..300)
            .map(|i| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                UnitRecord {
                    id: i.to_string(),
                    y_t: 0.0,
                    y_tm1: a,
                    y_tm2: b,
                    treated: i % 3 != 0,
                    x: vec![],
                    earlier: vec![a],
                }
            })
            .collect();
        let data = PanelDataset::new(units, vec![]).unwrap();
        let r = pretest_csa_rho(&data, &cfg()).unwrap();
        assert_eq!(r.pairs, vec!["(t-1,t-2)", "(t-2,t-3)"]);
        assert_eq!(r.rho[0], r.rho[1]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.se.iter().all(|&v| v > 0.0));
    }
}
