use rayon::prelude::*;

use super::{check_grid, BoundsCurve};
use crate::dist::{StepCdf, StepFn};
use crate::error::{Error, Result};
use crate::first_step::ConditionalCdf;

/// Makarov bounds on `P(Y1 - Y0 <= delta)` for step functions `A` (of `Y1`,
/// on grid `g1`) and `B` (of `Y0`, on grid `g0`):
///
/// lower = `sup_y max(A(y) - B((y - delta)-), 0)`,
/// upper = `1 + inf_y min(A(y) - B(y - delta), 0)`.
///
/// The extrema are taken exactly over the merged points `g1` and
/// `g0 + delta`. Inputs need not be monotone.
pub fn makarov_values(g1: &[f64], v1: &[f64], g0: &[f64], v0: &[f64], delta: f64) -> (f64, f64) {
    let (mut i, mut j) = (0, 0);
    let (mut a, mut b) = (0.0, 0.0);
    let mut sup: f64 = 0.0;
    let mut inf: f64 = 0.0;
    while i < g1.len() || j < g0.len() {
        let s = if j < g0.len() { g0[j] + delta } else { f64::INFINITY };
        let p = if i < g1.len() { g1[i].min(s) } else { s };
        let b_left = b;
        while i < g1.len() && g1[i] <= p {
            a = v1[i];
            i += 1;
        }
        while j < g0.len() && g0[j] + delta <= p {
            b = v0[j];
            j += 1;
        }
        sup = sup.max(a - b_left).max(a - b);
        inf = inf.min(a - b);
    }
    (sup.max(0.0), 1.0 + inf.min(0.0))
}

/// Makarov bounds for one pair of conditional slices.
pub fn makarov_conditional(f1: &StepCdf, f0: &StepCdf, delta: f64) -> (f64, f64) {
    makarov_values(f1.grid(), f1.probs(), f0.grid(), f0.probs(), delta)
}

/// Paired slices with aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSet {
    pub s1: Vec<StepFn>,
    pub s0: Vec<StepFn>,
    pub weights: Vec<f64>,
}

impl SliceSet {
    /// Weighted sums of slice-wise Makarov bounds at each `delta`. Slices are
    /// processed in parallel and summed in index order.
    pub fn makarov(&self, deltas: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let per: Vec<Vec<(f64, f64)>> = (0..self.s1.len())
            .into_par_iter()
            .map(|k| {
                let (a, b) = (&self.s1[k], &self.s0[k]);
                deltas
                    .iter()
                    .map(|&d| makarov_values(&a.grid, &a.values, &b.grid, &b.values, d))
                    .collect()
            })
            .collect();
        let mut lo = vec![0.0; deltas.len()];
        let mut up = vec![0.0; deltas.len()];
        for (k, row) in per.iter().enumerate() {
            let w = self.weights[k];
            for (d, &(l, u)) in row.iter().enumerate() {
                lo[d] += w * l;
                up[d] += w * u;
            }
        }
        (lo, up)
    }
}

/// Conditioning sample for aggregation: treated lags, optional covariates
/// and optional weights (normalized internally; equal by default).
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub lags: &'a [f64],
    pub x: Option<&'a [Vec<f64>]>,
    pub weights: Option<&'a [f64]>,
}

impl<'a> Conditioning<'a> {
    pub fn new(lags: &'a [f64]) -> Self {
        Self {
            lags,
            x: None,
            weights: None,
        }
    }

    pub(crate) fn x_row(&self, i: usize) -> &[f64] {
        self.x.map_or(&[], |x| x[i].as_slice())
    }

    pub(crate) fn normalized_weights(&self) -> Result<Vec<f64>> {
        let n = self.lags.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if let Some(x) = self.x {
            if x.len() != n {
                return Err(Error::LengthMismatch(x.len(), n));
            }
        }
        match self.weights {
            None => Ok(vec![1.0 / n as f64; n]),
            Some(w) => {
                if w.len() != n {
                    return Err(Error::LengthMismatch(w.len(), n));
                }
                let total: f64 = w.iter().sum();
                if !(total > 0.0) || w.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidArgument("weights must be nonnegative with positive sum".into()));
                }
                Ok(w.iter().map(|v| v / total).collect())
            }
        }
    }

    /// Slices of both conditionals at every conditioning point.
    pub fn slices(&self, cond_y1: &dyn ConditionalCdf, cond_y0: &dyn ConditionalCdf) -> Result<SliceSet> {
        let weights = self.normalized_weights()?;
        let pairs: Vec<(StepFn, StepFn)> = (0..self.lags.len())
            .into_par_iter()
            .map(|i| {
                let x = self.x_row(i);
                (
                    StepFn::from(&cond_y1.slice(self.lags[i], x)),
                    StepFn::from(&cond_y0.slice(self.lags[i], x)),
                )
            })
            .collect();
        let (s1, s0) = pairs.into_iter().unzip();
        Ok(SliceSet { s1, s0, weights })
    }
}

/// DoTT bounds averaged over the conditioning sample.
pub fn dott_bounds(
    cond_y1: &dyn ConditionalCdf,
    cond_y0: &dyn ConditionalCdf,
    conditioning: &Conditioning<'_>,
    delta_grid: &[f64],
) -> Result<BoundsCurve> {
    check_grid(delta_grid)?;
    let set = conditioning.slices(cond_y1, cond_y0)?;
    let (lo, up) = set.makarov(delta_grid);
    Ok(BoundsCurve::from_raw(delta_grid.to_vec(), lo, up))
}

/// Makarov bounds from the two marginals alone.
pub fn dott_bounds_worst_case(f1: &StepCdf, f0: &StepCdf, delta_grid: &[f64]) -> Result<BoundsCurve> {
    check_grid(delta_grid)?;
    let (lo, up): (Vec<f64>, Vec<f64>) = delta_grid
        .iter()
        .map(|&d| makarov_conditional(f1, f0, d))
        .unzip();
    Ok(BoundsCurve::from_raw(delta_grid.to_vec(), lo, up))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::linspace;
    use crate::first_step::FnConditional;
    use proptest::prelude::*;

    fn uniform(a: f64, b: f64, m: usize) -> StepCdf {
        let grid: Vec<f64> = (1..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect();
        let probs: Vec<f64> = (1..=m).map(|k| k as f64 / m as f64).collect();
        StepCdf::new(grid, probs).unwrap()
    }

    #[test]
    fn identical_slices() {
        // with m atoms the sharp lower bound is 1/m (cyclic shift coupling);
        // it vanishes in the continuous limit
        let f = uniform(0.0, 1.0, 50);
        let (l, u) = makarov_conditional(&f, &f, 0.0);
        assert!((l - 0.02).abs() < 1e-12 && u == 1.0);
        let f = uniform(0.0, 1.0, 100_000);
        assert!(makarov_conditional(&f, &f, 0.0).0 < 1e-4);
    }

    #[test]
    fn uniform_shift_closed_form() {
        let f1 = uniform(0.5, 1.5, 1000);
        let f0 = uniform(0.0, 1.0, 1000);
        let (l, u) = makarov_conditional(&f1, &f0, 0.0);
        assert!(l.abs() < 1e-9);
        assert!((u - 0.5).abs() <= 1e-3 + 1e-12, "{u}");
        let (l, u) = makarov_conditional(&f1, &f0, 0.5);
        assert!(l <= 1e-3 + 1e-12 && u >= 1.0 - 1e-12, "{l} {u}");
    }

    #[test]
    fn degenerate_conditionals_point_identify() {
        // Y1 = lag + 1, Y0 = lag: effect is exactly 1
        let c1 = FnConditional(|lag: f64, _: &[f64]| StepCdf::new(vec![lag + 1.0], vec![1.0]).unwrap());
        let c0 = FnConditional(|lag: f64, _: &[f64]| StepCdf::new(vec![lag], vec![1.0]).unwrap());
        let lags = [0.0, 0.25, 3.0];
        let grid = linspace(-1.0, 3.0, 17);
        let b = dott_bounds(&c1, &c0, &Conditioning::new(&lags), &grid).unwrap();
        for (k, d) in grid.iter().enumerate() {
            let truth = if *d >= 1.0 { 1.0 } else { 0.0 };
            assert_eq!(b.lower[k], truth);
            assert_eq!(b.upper[k], truth);
        }
    }

    #[test]
    fn worst_case_matches_trivial_conditioning() {
        let f1 = uniform(0.5, 1.5, 200);
        let f0 = uniform(0.0, 1.0, 200);
        let grid = linspace(-1.0, 2.0, 31);
        let wc = dott_bounds_worst_case(&f1, &f0, &grid).unwrap();
        let (a, b) = (f1.clone(), f0.clone());
        let c1 = FnConditional(move |_: f64, _: &[f64]| a.clone());
        let c0 = FnConditional(move |_: f64, _: &[f64]| b.clone());
        let cond = dott_bounds(&c1, &c0, &Conditioning::new(&[0.0, 1.0]), &grid).unwrap();
        assert_eq!(wc.lower, cond.lower);
        assert_eq!(wc.upper, cond.upper);
        let same = dott_bounds_worst_case(&f1, &f1, &[0.0]).unwrap();
        assert!((same.lower[0] - 1.0 / 200.0).abs() < 1e-12 && same.upper[0] == 1.0);
    }

    #[test]
    fn bad_grid() {
        let f = uniform(0.0, 1.0, 5);
        assert!(matches!(dott_bounds_worst_case(&f, &f, &[]), Err(Error::GridCoverage)));
        assert!(matches!(
            dott_bounds_worst_case(&f, &f, &[1.0, 0.0]),
            Err(Error::GridCoverage)
        ));
    }

    proptest! {
        #[test]
        fn curve_invariants(
            a in prop::collection::vec(-20i32..20, 1..30),
            b in prop::collection::vec(-20i32..20, 1..30),
        ) {
            let f1 = StepCdf::from_sample(&a.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
            let f0 = StepCdf::from_sample(&b.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
            // one unit beyond the effect support on either side
            let grid = linspace(f1.min() - f0.max() - 1.0, f1.max() - f0.min() + 1.0, 43);
            let c = dott_bounds_worst_case(&f1, &f0, &grid).unwrap();
            for k in 0..c.len() {
                prop_assert!(c.lower[k] <= c.upper[k]);
                prop_assert!(c.raw_lower[k] <= c.raw_upper[k] + 1e-12);
                if k > 0 {
                    prop_assert!(c.raw_lower[k - 1] <= c.raw_lower[k]);
                    prop_assert!(c.raw_upper[k - 1] <= c.raw_upper[k]);
                }
            }
            prop_assert_eq!(c.lower[0], 0.0);
            prop_assert_eq!(c.upper[c.len() - 1], 1.0);
            prop_assert_eq!(c.lower[c.len() - 1], 1.0);
        }
    }
}
