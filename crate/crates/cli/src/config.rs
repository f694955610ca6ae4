//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use panelbounds::dgp::DgpSpec;
use panelbounds::inference::{BootConfig, Epsilon};
use panelbounds::pipeline::{DottVariant, EstimationOptions};
use panelbounds::ColumnMap;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Wide CSV; relative paths resolve against the config file.
    Csv {
        path: PathBuf,
        #[serde(default)]
        columns: ColumnMap,
    },
    /// Draw from a synthetic design. The master seed replaces `dgp.seed`.
    Synthetic { dgp: DgpSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub enabled: bool,
    pub n_boot: usize,
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub variants: Vec<DottVariant>,
    /// Effect grid points carried into the bootstrap (evenly thinned).
    pub grid_points: usize,
    /// Also run the ordinary bootstrap.
    pub standard: bool,
    /// Bands at several step sizes, written to `epsilon_diagnostic.json`.
    pub epsilon_diagnostic: bool,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n_boot: 999,
            epsilon: Epsilon::default(),
            alpha: 0.05,
            variants: vec![DottVariant::WorstCase, DottVariant::Csa],
            grid_points: 21,
            standard: false,
            epsilon_diagnostic: false,
        }
    }
}

impl BootstrapSection {
    pub fn boot_config(&self, seed: u64) -> BootConfig {
        BootConfig {
            n_boot: self.n_boot,
            epsilon: self.epsilon,
            seed,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretestSection {
    pub enabled: bool,
    pub n_boot: usize,
    pub alpha: f64,
}

impl Default for PretestSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n_boot: 499,
            alpha: 0.05,
        }
    }
}

impl PretestSection {
    pub fn boot_config(&self, seed: u64) -> BootConfig {
        BootConfig {
            n_boot: self.n_boot,
            seed,
            alpha: self.alpha,
            ..Default::default()
        }
    }
}

/// Config of `analyze` and `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub estimation: EstimationOptions,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub pretest: PretestSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub name: String,
    pub dgp: DgpSpec,
}

/// Config of `montecarlo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default)]
    pub seed: u64,
    pub repetitions: usize,
    /// Tolerance when checking the oracle DoTT against estimated bounds.
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default)]
    pub estimation: EstimationOptions,
    #[serde(default = "pretest_off")]
    pub pretest: PretestSection,
    pub cells: Vec<Cell>,
}

fn default_slack() -> f64 {
    0.02
}

fn pretest_off() -> PretestSection {
    PretestSection {
        enabled: false,
        ..Default::default()
    }
}

/// Raw config text and where it came from.
pub struct Loaded<T> {
    pub config: T,
    pub raw: String,
    pub dir: PathBuf,
}

fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Loaded<T>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = toml::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, raw, dir })
}

fn spec_err(e: panelbounds::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn check_boot(n_boot: usize, alpha: f64, section: &str) -> Result<(), CliError> {
    if n_boot < panelbounds::inference::MIN_BOOT {
        return Err(CliError::Config(format!(
            "{section}.n_boot = {n_boot}; at least {} replicates are required",
            panelbounds::inference::MIN_BOOT
        )));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(CliError::Config(format!("{section}.alpha = {alpha} must lie in (0, 0.5)")));
    }
    Ok(())
}

impl AnalyzeConfig {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Loaded<Self>, CliError> {
        let mut l: Loaded<Self> = read(path)?;
        if let Some(s) = seed {
            l.config.seed = s;
        }
        if let DataConfig::Synthetic { dgp } = &mut l.config.data {
            dgp.seed = l.config.seed;
        }
        l.config.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.estimation.validate().map_err(spec_err)?;
        if let DataConfig::Synthetic { dgp } = &self.data {
            dgp.validate().map_err(spec_err)?;
        }
        let b = &self.bootstrap;
        if b.enabled {
            check_boot(b.n_boot, b.alpha, "bootstrap")?;
            b.boot_config(self.seed).validate().map_err(spec_err)?;
            if b.grid_points < 2 {
                return Err(CliError::Config("bootstrap.grid_points must be at least 2".into()));
            }
            if b.variants.is_empty() {
                return Err(CliError::Config("bootstrap.variants is empty".into()));
            }
        }
        if self.pretest.enabled {
            check_boot(self.pretest.n_boot, self.pretest.alpha, "pretest")?;
        }
        Ok(())
    }
}

impl MonteCarloConfig {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Loaded<Self>, CliError> {
        let mut l: Loaded<Self> = read(path)?;
        if let Some(s) = seed {
            l.config.seed = s;
        }
        l.config.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.estimation.validate().map_err(spec_err)?;
        if !(self.slack >= 0.0) {
            return Err(CliError::Config("slack must be nonnegative".into()));
        }
        if self.pretest.enabled {
            check_boot(self.pretest.n_boot, self.pretest.alpha, "pretest")?;
        }
        for (k, c) in self.cells.iter().enumerate() {
            c.dgp
                .validate()
                .map_err(|e| CliError::Config(format!("cells[{k}] ({}): {e}", c.name)))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_synthetic() {
        let c: AnalyzeConfig = toml::from_str(
            r#"
            seed = 3
            [data]
            source = "synthetic"
            dgp = { model = "twfe", n = 500 }
            "#,
        )
        .unwrap();
        assert!(c.bootstrap.enabled);
        assert_eq!(c.estimation, EstimationOptions::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_field_is_named() {
        let e = toml::from_str::<AnalyzeConfig>(
            r#"
            [data]
            source = "csv"
            path = "x.csv"
            [estimation]
            levls = 3
            "#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("levls"));
    }

    #[test]
    fn small_n_boot_rejected() {
        let mut c: AnalyzeConfig = toml::from_str(
            r#"
            [data]
            source = "synthetic"
            dgp = { model = "twfe", n = 500 }
            "#,
        )
        .unwrap();
        c.bootstrap.n_boot = 50;
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("bootstrap.n_boot"));
    }
}
