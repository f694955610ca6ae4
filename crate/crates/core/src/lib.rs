//! Bounds on the distribution (DoTT) and quantiles (QoTT) of treatment
//! effects on the treated from three-period panel data, under the
//! assumption that the copula of untreated outcomes across adjacent periods
//! is stable over time.
//!
//! The pipeline: [`panel`] ingestion, [`dist`] empirical distributions,
//! [`first_step`] quantile and distribution regressions, [`cic`]
//! Change-in-Changes counterfactuals, [`csa`] joint recovery, [`bounds`]
//! Makarov / Frechet-Hoeffding bounds, [`inference`] numerical bootstrap and
//! pre-tests, and [`dgp`] synthetic generators with oracle access.

pub mod bounds;
pub mod cic;
pub mod csa;
pub mod dgp;
pub mod dist;
pub mod error;
pub mod first_step;
pub mod inference;
pub mod panel;
pub mod pipeline;

pub use bounds::{BoundsCurve, QuantileBoundsCurve};
pub use dist::{CopulaGrid, QuantileFn, StepCdf, StepFn};
pub use error::{Error, ErrorKind, Result};
pub use first_step::{ConditionalCdf, DrModel, Link, QrModel};
pub use panel::{ColumnMap, PanelDataset, PanelView, UnitRecord};
