//! Fixtures shared by the benchmarks in `benches/`.

use panelbounds::dgp::{generate, DgpSpec, EffectMap, Model};
use panelbounds::pipeline::EstimationOptions;
use panelbounds::PanelDataset;

/// Seeded twfe panel with rank-swapping effects.
pub fn panel(n: usize) -> PanelDataset {
    let mut spec = DgpSpec::new(Model::Twfe, n);
    spec.seed = 42;
    spec.effect = EffectMap::RankSwapping { c: 1.0, noise_sd: 0.5 };
    generate(&spec).expect("valid spec").0
}

pub fn options() -> EstimationOptions {
    EstimationOptions {
        covariates: false,
        ..Default::default()
    }
}
