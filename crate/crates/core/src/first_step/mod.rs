//! First-step conditional distribution estimators.

mod dr;
mod qr;

pub use dr::{
    default_thresholds, fit_distribution_regression, fit_distribution_regression_with,
    fit_indicator_regressions, DrFit, DrModel, DrOptions, Link,
};
pub use qr::{fit_quantile_regression, invert_qr_to_cdf, QrModel};

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::dist::StepCdf;
use crate::error::{Error, Result};
use crate::panel::PanelView;

/// Row-major regressor matrix. When `intercept` is set, column 0 is the
/// constant and prediction rows are built by prepending 1 to covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    p: usize,
    intercept: bool,
    data: Vec<f64>,
}

impl Design {
    pub fn new(n: usize, p: usize, data: Vec<f64>, intercept: bool) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::LengthMismatch(data.len(), n * p));
        }
        Ok(Self {
            n,
            p,
            intercept,
            data,
        })
    }

    /// `[1, row...]` for each row (or the rows as given without intercept).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], intercept: bool) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.as_ref().len());
        let p = k + intercept as usize;
        let mut data = Vec::with_capacity(n * p);
        for r in rows {
            let r = r.as_ref();
            if r.len() != k {
                return Err(Error::LengthMismatch(r.len(), k));
            }
            if intercept {
                data.push(1.0);
            }
            data.extend_from_slice(r);
        }
        Self::new(n, p, data, intercept)
    }

    pub fn intercept_only(n: usize) -> Self {
        Self {
            n,
            p: 1,
            intercept: true,
            data: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    /// Full regressor row for covariate values `x`.
    pub fn make_row(intercept: bool, x: &[f64]) -> Vec<f64> {
        let mut r = Vec::with_capacity(x.len() + 1);
        if intercept {
            r.push(1.0);
        }
        r.extend_from_slice(x);
        r
    }

    pub(crate) fn gram(&self, weights: Option<&[f64]>) -> DMatrix<f64> {
        let p = self.p;
        let mut g = DMatrix::zeros(p, p);
        for i in 0..self.n {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let r = self.row(i);
            for a in 0..p {
                let ra = w * r[a];
                for b in a..p {
                    g[(a, b)] += ra * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g
    }

    pub(crate) fn xty(&self, y: &[f64], weights: Option<&[f64]>) -> DVector<f64> {
        let mut v = DVector::zeros(self.p);
        for i in 0..self.n {
            let w = weights.map_or(1.0, |w| w[i]);
            for (a, x) in self.row(i).iter().enumerate() {
                v[a] += w * x * y[i];
            }
        }
        v
    }

    /// Errors with `SingularDesign` unless `X'X` is well conditioned enough
    /// for a Cholesky factorization after column scaling.
    pub(crate) fn check_rank(&self) -> Result<()> {
        if self.n <= self.p {
            return Err(Error::SingularDesign);
        }
        let g = self.gram(None);
        let scale: Vec<f64> = (0..self.p).map(|a| g[(a, a)].sqrt()).collect();
        if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::SingularDesign);
        }
        let mut c = g.clone();
        for a in 0..self.p {
            for b in 0..self.p {
                c[(a, b)] /= scale[a] * scale[b];
            }
        }
        let eig = c.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < 1e-10 {
            return Err(Error::SingularDesign);
        }
        Ok(())
    }
}

/// Monotone rearrangement: sorts fitted values in place.
pub fn rearrange(values: &mut [f64]) {
    values.sort_by(f64::total_cmp);
}

/// Elementwise `F_target^{-1}(F_source(y))`, clamped to the support of the
/// target. A monotone (nondecreasing) transform of the input.
pub fn make_generated_regressor(y_source: &[f64], f_source: &StepCdf, f_target: &StepCdf) -> Vec<f64> {
    y_source
        .iter()
        .map(|&y| f_target.quantile_clamped(f_source.eval(y)))
        .collect()
}

/// A family of distribution functions indexed by a lagged outcome and
/// covariates.
pub trait ConditionalCdf: Send + Sync {
    /// The conditional distribution at `(y_lag, x)` as a step CDF.
    fn slice(&self, y_lag: f64, x: &[f64]) -> StepCdf;

    fn eval(&self, y: f64, y_lag: f64, x: &[f64]) -> f64 {
        self.slice(y_lag, x).eval(y)
    }
}

/// A marginal distribution that may depend on covariates.
pub trait MarginalFamily: Send + Sync {
    fn at(&self, x: &[f64]) -> Cow<'_, StepCdf>;
}

impl MarginalFamily for StepCdf {
    fn at(&self, _x: &[f64]) -> Cow<'_, StepCdf> {
        Cow::Borrowed(self)
    }
}

impl MarginalFamily for QrModel {
    fn at(&self, x: &[f64]) -> Cow<'_, StepCdf> {
        Cow::Owned(self.cdf_at(x))
    }
}

/// Ignores the lag: a conditional CDF given covariates only.
pub struct XOnly<'a, M: MarginalFamily + ?Sized>(pub &'a M);

impl<M: MarginalFamily + ?Sized> ConditionalCdf for XOnly<'_, M> {
    fn slice(&self, _y_lag: f64, x: &[f64]) -> StepCdf {
        self.0.at(x).into_owned()
    }
}

/// Closure-backed conditional CDF, mostly for population-level inputs.
pub struct FnConditional<F>(pub F);

impl<F> ConditionalCdf for FnConditional<F>
where
    F: Fn(f64, &[f64]) -> StepCdf + Send + Sync,
{
    fn slice(&self, y_lag: f64, x: &[f64]) -> StepCdf {
        (self.0)(y_lag, x)
    }
}

/// Distribution regression on `(1, y_lag, x)`.
#[derive(Debug, Clone)]
pub struct DrConditional {
    pub model: DrModel,
    pub use_covariates: bool,
}

impl ConditionalCdf for DrConditional {
    fn slice(&self, y_lag: f64, x: &[f64]) -> StepCdf {
        let mut row = Vec::with_capacity(2 + x.len());
        row.push(1.0);
        row.push(y_lag);
        if self.use_covariates {
            row.extend_from_slice(x);
        }
        self.model.cdf_at_row(&row)
    }
}

/// Minimum number of treated units for conditional estimation.
pub const DEFAULT_MIN_TREATED: usize = 30;

/// `F_{Y_t | Y_{t-1}, X, D=1}` by distribution regression of
/// `1{y_t <= q}` on `(1, y_tm1, x)` among treated units.
pub fn conditional_cdf_y1(
    treated: &PanelView<'_>,
    use_covariates: bool,
    opts: &DrOptions,
    min_treated: usize,
) -> Result<DrConditional> {
    if treated.len() < min_treated {
        return Err(Error::TooFewTreatedUnits {
            found: treated.len(),
            required: min_treated,
        });
    }
    let y = treated.y_t();
    let rows: Vec<Vec<f64>> = treated
        .iter()
        .map(|u| {
            let mut r = vec![u.y_tm1];
            if use_covariates {
                r.extend_from_slice(&u.x);
            }
            r
        })
        .collect();
    let design = Design::from_rows(&rows, true)?;
    let thresholds = match &opts.thresholds {
        Some(t) => t.clone(),
        None => default_thresholds(&y, opts.levels)?,
    };
    let model = fit_distribution_regression_with(&y, &design, &thresholds, opts)?;
    Ok(DrConditional {
        model,
        use_covariates,
    })
}
