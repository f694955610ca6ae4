use serde::{Deserialize, Serialize};

use super::BoundsCurve;
use crate::dist::StepCdf;
use crate::error::{Error, Result};
use crate::panel::PanelView;

/// Where an inverted quantile fell relative to the effect grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFlag {
    Interior,
    /// The curve already reaches `tau` at the first grid point, so the true
    /// infimum may lie below the grid; the grid minimum is reported.
    BelowGrid,
    /// The curve never reaches `tau` on the grid; the grid maximum is
    /// reported.
    AboveGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileBoundsCurve {
    pub tau: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_flag: Vec<GridFlag>,
    pub upper_flag: Vec<GridFlag>,
}

fn invert(delta: &[f64], curve: &[f64], tau: f64) -> (f64, GridFlag) {
    let k = curve.partition_point(|&v| v < tau);
    if k == curve.len() {
        (delta[delta.len() - 1], GridFlag::AboveGrid)
    } else if k == 0 && curve[0] > 0.0 {
        (delta[0], GridFlag::BelowGrid)
    } else {
        (delta[k], GridFlag::Interior)
    }
}

/// Inverts the DoTT bounds: the lower quantile bound is
/// `inf{delta : upper(delta) >= tau}` and the upper quantile bound is
/// `inf{delta : lower(delta) >= tau}`, both over the curve's grid.
pub fn qott_bounds(dott: &BoundsCurve, tau_grid: &[f64]) -> Result<QuantileBoundsCurve> {
    super::check_grid(&dott.delta)?;
    let mut out = QuantileBoundsCurve {
        tau: tau_grid.to_vec(),
        lower: Vec::with_capacity(tau_grid.len()),
        upper: Vec::with_capacity(tau_grid.len()),
        lower_flag: Vec::with_capacity(tau_grid.len()),
        upper_flag: Vec::with_capacity(tau_grid.len()),
    };
    for &tau in tau_grid {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::TauOutOfRange(tau));
        }
        let (l, lf) = invert(&dott.delta, &dott.upper, tau);
        let (u, uf) = invert(&dott.delta, &dott.lower, tau);
        out.lower.push(l);
        out.upper.push(u);
        out.lower_flag.push(lf);
        out.upper_flag.push(uf);
    }
    Ok(out)
}

/// Bounds on the Spearman correlation of `(Y_t, Y_tm1)` given its
/// correlations with a third variable, from positive semi-definiteness of
/// the 3x3 correlation matrix.
pub fn spearman_rho_bounds(rho13: f64, rho23: f64) -> (f64, f64) {
    let half = ((1.0 - rho13 * rho13).max(0.0) * (1.0 - rho23 * rho23).max(0.0)).sqrt();
    let c = rho13 * rho23;
    ((c - half).clamp(-1.0, 1.0), (c + half).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPairing {
    CrossSectional,
    OverTime,
}

/// Point-identified QoTT under rank invariance.
///
/// Cross-sectional: the sorted values of `F1^{-1}(tau) - F0^{-1}(tau)`.
/// Over time: quantiles of `y_t - F0^{-1}(F_tm1(y_tm1))` across treated
/// units, with `F_tm1` the treated pre-period ecdf.
pub fn qott_rank_invariance(
    f1: &StepCdf,
    f0: &StepCdf,
    pairing: RankPairing,
    treated: &PanelView<'_>,
    tau_grid: &[f64],
) -> Result<Vec<f64>> {
    match pairing {
        RankPairing::CrossSectional => {
            let mut v = tau_grid
                .iter()
                .map(|&t| Ok(f1.quantile(t)? - f0.quantile(t)?))
                .collect::<Result<Vec<f64>>>()?;
            v.sort_by(f64::total_cmp);
            Ok(v)
        }
        RankPairing::OverTime => {
            let y_tm1 = treated.y_tm1();
            let f_tm1 = StepCdf::from_sample(&y_tm1)?;
            let effects: Vec<f64> = treated
                .iter()
                .map(|u| u.y_t - f0.quantile_clamped(f_tm1.eval(u.y_tm1)))
                .collect();
            let fe = StepCdf::from_sample(&effects)?;
            tau_grid.iter().map(|&t| fe.quantile(t)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{dott_bounds_worst_case, linspace};
    use crate::panel::{PanelDataset, UnitRecord};
    use proptest::prelude::*;

    fn step_curve(delta: Vec<f64>, c: f64) -> BoundsCurve {
        let v: Vec<f64> = delta.iter().map(|&d| if d >= c { 1.0 } else { 0.0 }).collect();
        BoundsCurve::from_raw(delta, v.clone(), v)
    }

    #[test]
    fn step_inverts_to_jump() {
        let c = step_curve(linspace(-1.0, 1.0, 21), 0.3);
        let q = qott_bounds(&c, &[0.01, 0.5, 1.0]).unwrap();
        for k in 0..3 {
            assert!((q.lower[k] - 0.3).abs() < 1e-12);
            assert!((q.upper[k] - 0.3).abs() < 1e-12);
            assert_eq!(q.lower_flag[k], GridFlag::Interior);
        }
    }

    #[test]
    fn tau_checks() {
        let c = step_curve(linspace(-1.0, 1.0, 21), 0.3);
        assert!(matches!(qott_bounds(&c, &[0.0]), Err(Error::TauOutOfRange(_))));
        assert!(matches!(qott_bounds(&c, &[1.5]), Err(Error::TauOutOfRange(_))));
    }

    #[test]
    fn uniform_shift_edge() {
        // F1 = U[0.5, 1.5], F0 = U[0, 1]: the upper DoTT bound is
        // min(1, 0.5 + delta) for delta >= -0.5, so QoTT^L(0.5) = 0 and
        // small tau fall back to the grid minimum when the grid starts late.
        let m = 400;
        let f = |a: f64| {
            let grid: Vec<f64> = (1..=m).map(|k| a + k as f64 / m as f64).collect();
            let probs: Vec<f64> = (1..=m).map(|k| k as f64 / m as f64).collect();
            StepCdf::new(grid, probs).unwrap()
        };
        let (f1, f0) = (f(0.5), f(0.0));
        let grid = linspace(-0.2, 1.5, 171);
        let c = dott_bounds_worst_case(&f1, &f0, &grid).unwrap();
        let q = qott_bounds(&c, &[0.1, 0.5]).unwrap();
        assert_eq!(q.lower_flag[0], GridFlag::BelowGrid);
        assert_eq!(q.lower[0], -0.2);
        assert_eq!(q.lower_flag[1], GridFlag::Interior);
        assert!(q.lower[1].abs() < 0.011, "{}", q.lower[1]);
    }

    #[test]
    fn rho_bounds() {
        assert_eq!(spearman_rho_bounds(0.0, 0.0), (-1.0, 1.0));
        for r in [-0.7, 0.0, 0.4, 1.0] {
            assert_eq!(spearman_rho_bounds(1.0, r), (r, r));
        }
        let (l, u) = spearman_rho_bounds(0.8, 0.8);
        assert!((l - 0.28).abs() < 1e-12 && u == 1.0);
    }

    #[test]
    fn rank_invariance_shift() {
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let f0 = StepCdf::from_sample(&y).unwrap();
        let f1 = f0.shifted(1.5);
        let units: Vec<UnitRecord> = y
            .iter()
            .enumerate()
            .map(|(i, &v)| UnitRecord {
                id: i.to_string(),
                y_t: v + 1.5,
                y_tm1: v * 2.0 - 1.0,
                y_tm2: 0.0,
                treated: true,
                x: vec![],
                earlier: vec![],
            })
            .collect();
        let mut all = units.clone();
        all.push(UnitRecord {
            treated: false,
            ..units[0].clone()
        });
        let data = PanelDataset::new(all, vec![]).unwrap();
        let taus = crate::bounds::default_tau_grid();
        let cs = qott_rank_invariance(&f1, &f0, RankPairing::CrossSectional, &data.treated(), &taus).unwrap();
        assert!(cs.iter().all(|v| (v - 1.5).abs() < 1e-12));
        let ot = qott_rank_invariance(&f1, &f0, RankPairing::OverTime, &data.treated(), &taus).unwrap();
        assert!(ot.iter().all(|v| (v - 1.5).abs() < 1e-12), "{ot:?}");
    }

    proptest! {
        #[test]
        fn galois_and_ordering(
            a in prop::collection::vec(-30i32..30, 1..25),
            b in prop::collection::vec(-30i32..30, 1..25),
            taus in prop::collection::vec(0.001f64..1.0, 1..20),
        ) {
            let f1 = StepCdf::from_sample(&a.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
            let f0 = StepCdf::from_sample(&b.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
            let grid = crate::bounds::default_delta_grid(&f1, &f0, 61);
            let c = dott_bounds_worst_case(&f1, &f0, &grid).unwrap();
            let q = qott_bounds(&c, &taus).unwrap();
            for (k, &t) in taus.iter().enumerate() {
                prop_assert!(q.lower[k] <= q.upper[k]);
                // Galois: q <= d  iff  tau <= curve(d), for every grid point d
                for (m, &d) in grid.iter().enumerate() {
                    if q.lower_flag[k] == GridFlag::Interior {
                        prop_assert_eq!(q.lower[k] <= d, t <= c.upper[m]);
                    }
                    if q.upper_flag[k] == GridFlag::Interior {
                        prop_assert_eq!(q.upper[k] <= d, t <= c.lower[m]);
                    }
                }
            }
        }
    }
}
