//! Markov chains of uniforms with a given adjacent-period copula.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaFamily {
    Independent,
    Gaussian,
    Clayton,
    Frank,
}

impl CopulaFamily {
    pub fn check_param(self, theta: f64) -> Result<()> {
        let ok = match self {
            CopulaFamily::Independent => true,
            CopulaFamily::Gaussian => theta > -1.0 && theta < 1.0,
            CopulaFamily::Clayton => theta > 0.0 && theta.is_finite(),
            CopulaFamily::Frank => theta != 0.0 && theta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "copula parameter {theta} outside the range of {self:?}"
            )))
        }
    }

    /// Draws `V` given `U = u` from the conditional distribution
    /// `dC(u, v)/du`, by inversion of `w`. Gaussian draws use a fresh normal
    /// instead of `w`.
    pub fn conditional<R: Rng + ?Sized>(self, theta: f64, u: f64, rng: &mut R) -> f64 {
        let w: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        match self {
            CopulaFamily::Independent => w,
            CopulaFamily::Gaussian => {
                let n = Normal::standard();
                let z = n.inverse_cdf(u);
                let e: f64 = rng.sample(StandardNormal);
                n.cdf(theta * z + (1.0 - theta * theta).sqrt() * e)
            }
            CopulaFamily::Clayton => {
                ((w.powf(-theta / (1.0 + theta)) - 1.0) * u.powf(-theta) + 1.0).powf(-1.0 / theta)
            }
            CopulaFamily::Frank => {
                let a = (-theta).exp_m1();
                -(1.0 + w * a / (w + (1.0 - w) * (-theta * u).exp())).ln() / theta
            }
        }
    }

    /// `C(u, v)` in closed form, except the Gaussian family.
    pub fn cdf(self, theta: f64, u: f64, v: f64) -> f64 {
        match self {
            CopulaFamily::Independent => u * v,
            CopulaFamily::Gaussian => super::bvn::gaussian_copula(u, v, theta),
            CopulaFamily::Clayton => {
                if u <= 0.0 || v <= 0.0 {
                    0.0
                } else {
                    (u.powf(-theta) + v.powf(-theta) - 1.0).powf(-1.0 / theta)
                }
            }
            CopulaFamily::Frank => {
                let num = (-theta * u).exp_m1() * (-theta * v).exp_m1();
                -(1.0 + num / (-theta).exp_m1()).ln() / theta
            }
        }
    }
}

/// One copula parameter for every adjacent pair, or one per pair (oldest
/// pair first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamPath {
    Constant(f64),
    PerPair(Vec<f64>),
}

impl ParamPath {
    pub fn resolve(&self, pairs: usize) -> Result<Vec<f64>> {
        match self {
            ParamPath::Constant(v) => Ok(vec![*v; pairs]),
            ParamPath::PerPair(v) if v.len() == pairs => Ok(v.clone()),
            ParamPath::PerPair(v) => Err(Error::InvalidSpec(format!(
                "{} copula parameters for {pairs} adjacent period pairs",
                v.len()
            ))),
        }
    }
}

/// A uniform Markov chain of length `len` with adjacent copula parameters
/// `params` (length `len - 1`).
pub fn markov_chain<R: Rng + ?Sized>(
    family: CopulaFamily,
    params: &[f64],
    len: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    out.push(u);
    for &theta in params.iter().take(len.saturating_sub(1)) {
        u = family
            .conditional(theta, u, rng)
            .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        out.push(u);
    }
    out
}
