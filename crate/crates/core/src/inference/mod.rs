//! Numerical-bootstrap confidence limits for bound endpoints and the
//! copula-stability pre-test.

mod bootstrap;
mod pretest;

pub use bootstrap::{
    epsilon_sensitivity, numerical_bootstrap, resample_indices, standard_bootstrap, BootConfig, BoundsMap, CiBand,
    Endpoints, Epsilon, EpsilonDiagnostic, Perturb, EPSILON_DIAGNOSTIC_POWERS, MIN_BOOT,
};
pub use pretest::{pretest_csa_rho, PretestReport};
