//! Change-in-Changes counterfactual for the treated group's untreated
//! outcome distribution in the last period.

use std::borrow::Cow;

use serde::Serialize;

use crate::dist::StepCdf;
use crate::error::{Error, Result};
use crate::first_step::{fit_quantile_regression, Design, MarginalFamily, QrModel};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CicDiagnostics {
    /// Treated pre-period mass above the control pre-period support, moved to
    /// the top of the counterfactual support.
    pub clamped_mass: f64,
}

/// `y -> F_{tm1,D=1}(F^{-1}_{tm1,D=0}(F_{t,D=0}(y)))` as a step CDF on the
/// support of the period-`t` control distribution.
pub fn cic_compose(
    f_tm1_treated: &StepCdf,
    f_tm1_control: &StepCdf,
    f_t_control: &StepCdf,
) -> (StepCdf, CicDiagnostics) {
    let grid = f_t_control.grid().to_vec();
    let probs: Vec<f64> = f_t_control
        .probs()
        .iter()
        .map(|&p| {
            if p <= 0.0 {
                0.0
            } else {
                f_tm1_treated.eval(f_tm1_control.quantile_clamped(p))
            }
        })
        .collect();
    let diag = CicDiagnostics {
        clamped_mass: 1.0 - probs.last().copied().unwrap_or(1.0),
    };
    if diag.clamped_mass > 0.0 {
        log::debug!(
            "counterfactual: {:.4} of treated mass lies above the control support",
            diag.clamped_mass
        );
    }
    (StepCdf::from_fitted(grid, probs).compressed(), diag)
}

/// Unconditional Change-in-Changes counterfactual from raw samples.
pub fn cic_counterfactual(
    treated_tm1: &[f64],
    control_tm1: &[f64],
    control_t: &[f64],
) -> Result<StepCdf> {
    Ok(cic_counterfactual_with_diagnostics(treated_tm1, control_tm1, control_t)?.0)
}

pub fn cic_counterfactual_with_diagnostics(
    treated_tm1: &[f64],
    control_tm1: &[f64],
    control_t: &[f64],
) -> Result<(StepCdf, CicDiagnostics)> {
    if treated_tm1.is_empty() || control_tm1.is_empty() || control_t.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(cic_compose(
        &StepCdf::from_sample(treated_tm1)?,
        &StepCdf::from_sample(control_tm1)?,
        &StepCdf::from_sample(control_t)?,
    ))
}

/// Maps each treated pre-period draw to its counterfactual period-`t` value:
/// the smallest control period-`t` support point `g_j` with
/// `F^{-1}_{tm1,D=0}(F_{t,D=0}(g_j)) >= y`. The distribution of the mapped
/// draws is the [`cic_compose`] output.
pub fn cic_transform(draws: &[f64], f_tm1_control: &StepCdf, f_t_control: &StepCdf) -> Vec<f64> {
    let grid = f_t_control.grid();
    let a: Vec<f64> = f_t_control
        .probs()
        .iter()
        .map(|&p| f_tm1_control.quantile_clamped(p))
        .collect();
    draws
        .iter()
        .map(|&y| {
            let j = a.partition_point(|&v| v < y);
            grid[j.min(grid.len() - 1)]
        })
        .collect()
}

/// ATT and the QTT curve of a treated outcome sample against a
/// counterfactual distribution.
pub fn att_qtt(treated_t: &[f64], counterfactual: &StepCdf, taus: &[f64]) -> Result<(f64, Vec<f64>)> {
    let f1 = StepCdf::from_sample(treated_t)?;
    let att = treated_t.iter().sum::<f64>() / treated_t.len() as f64 - counterfactual.mean();
    let qtt = taus
        .iter()
        .map(|&t| Ok(f1.quantile(t)? - counterfactual.quantile(t)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((att, qtt))
}

/// Covariate-conditional counterfactual built from three quantile
/// regressions and composed at each covariate value.
#[derive(Debug, Clone)]
pub struct ConditionalCounterfactual {
    pub tm1_treated: QrModel,
    pub tm1_control: QrModel,
    pub t_control: QrModel,
}

impl ConditionalCounterfactual {
    pub fn cdf_at(&self, x: &[f64]) -> StepCdf {
        cic_compose(
            &self.tm1_treated.cdf_at(x),
            &self.tm1_control.cdf_at(x),
            &self.t_control.cdf_at(x),
        )
        .0
    }
}

impl MarginalFamily for ConditionalCounterfactual {
    fn at(&self, x: &[f64]) -> Cow<'_, StepCdf> {
        Cow::Owned(self.cdf_at(x))
    }
}

/// Default level grid for quantile regressions: 0.01, ..., 0.99.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

fn group_design(data: &PanelDataset, treated: bool) -> Result<(Design, Vec<usize>)> {
    let idx: Vec<usize> = (0..data.n())
        .filter(|&i| data.units()[i].treated == treated)
        .collect();
    let rows: Vec<&[f64]> = idx.iter().map(|&i| data.units()[i].x.as_slice()).collect();
    Ok((Design::from_rows(&rows, true)?, idx))
}

/// Fits the quantile regressions of `y_tm1 | x` (both groups) and
/// `y_t | x` (controls) on `(1, x)`.
pub fn cic_counterfactual_conditional(
    data: &PanelDataset,
    tau_grid: &[f64],
) -> Result<ConditionalCounterfactual> {
    data.check_variation()?;
    let (dt, it) = group_design(data, true)?;
    let (dc, ic) = group_design(data, false)?;
    let pick = |idx: &[usize], f: fn(&crate::panel::UnitRecord) -> f64| -> Vec<f64> {
        idx.iter().map(|&i| f(&data.units()[i])).collect()
    };
    Ok(ConditionalCounterfactual {
        tm1_treated: fit_quantile_regression(&pick(&it, |u| u.y_tm1), &dt, tau_grid)?,
        tm1_control: fit_quantile_regression(&pick(&ic, |u| u.y_tm1), &dc, tau_grid)?,
        t_control: fit_quantile_regression(&pick(&ic, |u| u.y_t), &dc, tau_grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ecdf;
    use proptest::prelude::*;

    #[test]
    fn time_invariant_controls_give_treated_pre_period() {
        let treated = [0.5, 1.0, 1.5, 2.0, 3.0];
        let control = [0.25, 0.5, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0];
        let mut control_t = control.to_vec();
        control_t.reverse();
        let cf = cic_counterfactual(&treated, &control, &control_t).unwrap();
        let ft = ecdf(&treated).unwrap();
        for y in control.iter().chain(&treated) {
            assert_eq!(cf.eval(*y), ft.eval(*y));
        }
    }

    #[test]
    fn location_shift_moves_counterfactual() {
        let a = 2.0;
        let treated: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let control: Vec<f64> = (0..1000).map(|i| 1.4 * (i as f64 + 0.5) / 1000.0 - 0.2).collect();
        let control_t: Vec<f64> = control.iter().map(|v| v + a).collect();
        let cf = cic_counterfactual(&treated, &control, &control_t).unwrap();
        let shifted = ecdf(&treated).unwrap().shifted(a);
        for k in 1..=200 {
            let tau = k as f64 / 200.0;
            let d = (cf.quantile(tau).unwrap() - shifted.quantile(tau).unwrap()).abs();
            assert!(d <= 0.0014 + 1e-12, "tau {tau}: {d}");
        }
    }

    #[test]
    fn empty_sample() {
        assert!(matches!(
            cic_counterfactual(&[], &[1.0], &[1.0]),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn att_qtt_identities() {
        let y = [1.0, 4.0, 2.0, 8.0, 3.0];
        let taus = [0.1, 0.5, 0.9];
        let (att, qtt) = att_qtt(&y, &ecdf(&y).unwrap(), &taus).unwrap();
        assert!(att.abs() < 1e-12);
        assert!(qtt.iter().all(|&v| v == 0.0));
        let shifted: Vec<f64> = y.iter().map(|v| v + 2.0).collect();
        let (att, qtt) = att_qtt(&y, &ecdf(&shifted).unwrap(), &taus).unwrap();
        assert!((att + 2.0).abs() < 1e-12);
        assert!(qtt.iter().all(|&v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn clamped_mass_reported() {
        let (cf, d) = cic_counterfactual_with_diagnostics(&[1.0, 5.0], &[0.0, 2.0], &[0.0, 2.0]).unwrap();
        assert_eq!(d.clamped_mass, 0.5);
        assert_eq!(cf.eval(2.0), 1.0);
    }

    proptest! {
        #[test]
        fn plug_in_mean_matches(
            t in prop::collection::vec(-50i32..50, 1..40),
            c1 in prop::collection::vec(-50i32..50, 1..40),
            c0 in prop::collection::vec(-50i32..50, 1..40),
        ) {
            let f = |v: &Vec<i32>| v.iter().map(|&a| a as f64 * 0.25).collect::<Vec<f64>>();
            let (t, c1, c0) = (f(&t), f(&c1), f(&c0));
            let cf = cic_counterfactual(&t, &c1, &c0).unwrap();
            let mapped = cic_transform(&t, &ecdf(&c1).unwrap(), &ecdf(&c0).unwrap());
            let plug = mapped.iter().sum::<f64>() / mapped.len() as f64;
            prop_assert!((cf.mean() - plug).abs() < 1e-9);
            prop_assert_eq!(ecdf(&mapped).unwrap().compressed(), cf.clone());
        }

        #[test]
        fn equivariant_to_relabeling_period_t(
            t in prop::collection::vec(-50i32..50, 1..40),
            c1 in prop::collection::vec(-50i32..50, 1..40),
            c0 in prop::collection::vec(-50i32..50, 1..40),
        ) {
            let f = |v: &Vec<i32>| v.iter().map(|&a| a as f64 * 0.25).collect::<Vec<f64>>();
            let (t, c1, c0) = (f(&t), f(&c1), f(&c0));
            let h = |y: f64| y * y * y + 2.0 * y + 1.0;
            let cf = cic_counterfactual(&t, &c1, &c0).unwrap();
            let relabeled: Vec<f64> = c0.iter().map(|&y| h(y)).collect();
            let cf2 = cic_counterfactual(&t, &c1, &relabeled).unwrap();
            prop_assert_eq!(cf.probs(), cf2.probs());
            for (a, b) in cf.grid().iter().zip(cf2.grid()) {
                prop_assert_eq!(h(*a), *b);
            }
        }
    }
}
