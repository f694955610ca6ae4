//! The three subcommands.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use panelbounds::dgp::{generate, oracle_dott, write_oracle_csv, DgpDraw};
use panelbounds::inference::{
    epsilon_sensitivity, numerical_bootstrap, pretest_csa_rho, standard_bootstrap, PretestReport,
    EPSILON_DIAGNOSTIC_POWERS,
};
use panelbounds::panel::load_panel;
use panelbounds::pipeline::{estimate_bounds, BoundsReport, DottMap, EstimationOptions};
use panelbounds::PanelDataset;

use crate::config::{AnalyzeConfig, Cell, DataConfig, MonteCarloConfig, PretestSection};
use crate::output::{self, sha256_hex, CellSummary, OutDir};
use crate::CliError;

/// Offset between the master seed and the pre-test bootstrap seed.
const PRETEST_SEED_OFFSET: u64 = 1;

fn stage(name: &'static str) -> impl Fn(panelbounds::Error) -> CliError {
    move |source| CliError::Stage { stage: name, source }
}

struct Loaded {
    data: PanelDataset,
    draws: Option<Vec<DgpDraw>>,
    meta: serde_json::Value,
}

fn load_data(c: &AnalyzeConfig, dir: &Path, out: &mut OutDir) -> Result<Loaded, CliError> {
    match &c.data {
        DataConfig::Csv { path, columns } => {
            let p: PathBuf = if path.is_absolute() { path.clone() } else { dir.join(path) };
            let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            let (data, report) = load_panel(&p, columns).map_err(stage("load"))?;
            out.write("rejected_rows.jsonl", report.to_jsonl().as_bytes())?;
            let meta = json!({
                "source": "csv",
                "path": path,
                "sha256": sha256_hex(&bytes),
                "n": data.n(),
                "n_treated": data.n_treated(),
                "rejected_rows": report.rejected.len(),
                "tie_fraction": report.tie_fraction,
            });
            Ok(Loaded { data, draws: None, meta })
        }
        DataConfig::Synthetic { dgp } => {
            let (data, draws) = generate(dgp).map_err(stage("simulate"))?;
            let meta = json!({
                "source": "synthetic",
                "seed": dgp.seed,
                "n": data.n(),
                "n_treated": data.n_treated(),
            });
            Ok(Loaded {
                data,
                draws: Some(draws),
                meta,
            })
        }
    }
}

fn run_pretest(
    data: &PanelDataset,
    p: &PretestSection,
    seed: u64,
) -> Result<(Option<PretestReport>, serde_json::Value), CliError> {
    if !p.enabled {
        return Ok((None, json!({ "status": "skipped", "reason": "disabled" })));
    }
    if data.pre_periods() < 3 {
        log::warn!("pre-test needs at least three pre-treatment periods; skipped");
        return Ok((
            None,
            json!({ "status": "skipped", "reason": "fewer than three pre-treatment periods" }),
        ));
    }
    let r = pretest_csa_rho(data, &p.boot_config(seed.wrapping_add(PRETEST_SEED_OFFSET))).map_err(stage("pretest"))?;
    let v = json!({
        "status": "ok",
        "alpha": p.alpha,
        "reject": r.p_value < p.alpha,
        "report": r,
    });
    Ok((Some(r), v))
}

/// Evenly spaced subset of `grid` with at most `points` entries.
fn thin(grid: &[f64], points: usize) -> Vec<f64> {
    if grid.len() <= points {
        return grid.to_vec();
    }
    let last = grid.len() - 1;
    let mut idx: Vec<usize> = (0..points)
        .map(|k| ((k * last) as f64 / (points - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx.into_iter().map(|i| grid[i]).collect()
}

fn bootstrap(
    c: &AnalyzeConfig,
    data: &PanelDataset,
    report: &BoundsReport,
    out: &mut OutDir,
) -> Result<&'static str, CliError> {
    let b = &c.bootstrap;
    if !b.enabled {
        out.remove("ci_bands.csv")?;
        out.remove("epsilon_diagnostic.json")?;
        return Ok("skipped");
    }
    let grid = thin(&report.delta, b.grid_points);
    let cfg = b.boot_config(c.seed);
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for &variant in &b.variants {
        if variant.uses_covariates() && (data.n_covariates() == 0 || !c.estimation.covariates) {
            log::warn!("{}: no covariates in use; skipped", variant.label());
            continue;
        }
        let map = DottMap::new(variant, c.estimation.clone(), grid.clone()).map_err(stage("bootstrap"))?;
        let band = numerical_bootstrap(&map, data, &cfg, variant.label()).map_err(stage("bootstrap"))?;
        rows.extend(output::ci_rows("numerical", &band));
        if b.standard {
            let band = standard_bootstrap(&map, data, &cfg, variant.label()).map_err(stage("bootstrap"))?;
            rows.extend(output::ci_rows("standard", &band));
        }
        if b.epsilon_diagnostic {
            let d = epsilon_sensitivity(&map, data, &cfg, variant.label(), &EPSILON_DIAGNOSTIC_POWERS)
                .map_err(stage("bootstrap"))?;
            if d.flagged {
                log::warn!(
                    "{}: confidence limits vary by {:.0}% across step sizes",
                    variant.label(),
                    100.0 * d.relative_spread
                );
            }
            diagnostics.push(d);
        }
    }
    out.write_table("ci_bands.csv", &output::CI_HEADER, &rows)?;
    if b.epsilon_diagnostic {
        out.write_json("epsilon_diagnostic.json", &diagnostics)?;
    } else {
        out.remove("epsilon_diagnostic.json")?;
    }
    Ok("numerical_bootstrap")
}

/// `analyze`: estimation, pre-test, inference and all tables.
pub fn analyze(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let l = AnalyzeConfig::load(config, seed)?;
    let c = &l.config;
    let mut out = OutDir::create(out_dir)?;
    let loaded = load_data(c, &l.dir, &mut out)?;
    let data = &loaded.data;
    let report = estimate_bounds(data, &c.estimation).map_err(stage("estimation"))?;

    out.write_table("att_qtt.csv", &output::ATT_QTT_HEADER, &output::att_qtt_rows(&report))?;
    let (h, rows) = output::dott_table(&report);
    out.write_table("dott_bounds.csv", &h, &rows)?;
    let (h, rows) = output::qott_table(&report);
    out.write_table("qott_bounds.csv", &h, &rows)?;

    let (pretest, pretest_json) = run_pretest(data, &c.pretest, c.seed)?;
    out.write_json("pretest.json", &pretest_json)?;
    out.write_table(
        "spearman_path.csv",
        &output::SPEARMAN_HEADER,
        &output::spearman_rows(&report, pretest.as_ref()),
    )?;

    let inference = bootstrap(c, data, &report, &mut out)?;

    if let Some(draws) = &loaded.draws {
        let oracle = oracle_dott(draws, &report.delta).map_err(stage("oracle"))?;
        out.write_table("oracle_report.csv", &output::ORACLE_HEADER, &output::oracle_rows(&report, &oracle, 0.0))?;
    }

    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": "analyze",
        "seed": c.seed,
        "config_sha256": sha256_hex(l.raw.as_bytes()),
        "config": c,
        "data": loaded.meta,
        "inference": inference,
        "pretest": pretest_json["status"],
        "artifacts": out.artifacts,
    });
    out.write_json("run_manifest.json", &manifest)?;
    log::info!("analyze: {} artifacts written to {}", out.artifacts.len(), out_dir.display());
    Ok(())
}

struct RepOutcome {
    widths: [Option<f64>; 4],
    cover_wc: bool,
    cover_csa: bool,
    reject: Option<bool>,
}

fn covered(curve: &panelbounds::BoundsCurve, oracle: &[f64], slack: f64) -> bool {
    curve.contains(oracle, slack)
}

fn one_rep(
    cell: &Cell,
    seed: u64,
    opts: &EstimationOptions,
    pretest: &PretestSection,
    slack: f64,
) -> panelbounds::Result<RepOutcome> {
    let mut spec = cell.dgp.clone();
    spec.seed = seed;
    let (data, draws) = generate(&spec)?;
    let r = estimate_bounds(&data, opts)?;
    let oracle = oracle_dott(&draws, &r.delta)?;
    let reject = if pretest.enabled && data.pre_periods() >= 3 {
        let p = pretest_csa_rho(&data, &pretest.boot_config(seed.wrapping_add(PRETEST_SEED_OFFSET)))?;
        Some(p.p_value < pretest.alpha)
    } else {
        None
    };
    Ok(RepOutcome {
        widths: [
            Some(r.worst_case.mean_width()),
            Some(r.csa.mean_width()),
            r.worst_case_cov.as_ref().map(|c| c.mean_width()),
            r.csa_cov.as_ref().map(|c| c.mean_width()),
        ],
        cover_wc: covered(&r.worst_case, &oracle, slack),
        cover_csa: covered(&r.csa, &oracle, slack),
        reject,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Seeds of the repetitions of cell `k`: stream `k` of the master generator.
pub fn cell_seeds(master: u64, k: usize, repetitions: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k as u64);
    (0..repetitions).map(|_| rng.random()).collect()
}

pub fn summarize_cell(k: usize, cell: &Cell, c: &MonteCarloConfig) -> CellSummary {
    let seeds = cell_seeds(c.seed, k, c.repetitions);
    let results: Vec<panelbounds::Result<RepOutcome>> = seeds
        .par_iter()
        .map(|&s| one_rep(cell, s, &c.estimation, &c.pretest, c.slack))
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::warn!("cell `{}` repetition {r}: {e}", cell.name);
                failed += 1;
            }
        }
    }
    let width = |j: usize| mean(ok.iter().filter_map(|o| o.widths[j]));
    let share = |f: &dyn Fn(&RepOutcome) -> Option<bool>| {
        mean(ok.iter().filter_map(f).map(|b| b as u8 as f64))
    };
    CellSummary {
        cell: cell.name.clone(),
        repetitions: c.repetitions,
        failed,
        mean_width_worst_case: width(0),
        mean_width_csa: width(1),
        mean_width_worst_case_cov: width(2),
        mean_width_csa_cov: width(3),
        coverage_worst_case: share(&|o| Some(o.cover_wc)),
        coverage_csa: share(&|o| Some(o.cover_csa)),
        pretest_rejection_rate: share(&|o| o.reject),
    }
}

/// `montecarlo`: per-cell averages over seeded repetitions.
pub fn montecarlo(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let l = MonteCarloConfig::load(config, seed)?;
    let c = &l.config;
    let mut out = OutDir::create(out_dir)?;
    if c.repetitions == 0 {
        log::warn!("montecarlo: 0 repetitions; the summary has no rows");
    }
    let summaries: Vec<CellSummary> = if c.repetitions == 0 {
        Vec::new()
    } else {
        c.cells.iter().enumerate().map(|(k, cell)| summarize_cell(k, cell, c)).collect()
    };
    let rows: Vec<Vec<String>> = summaries.iter().map(CellSummary::row).collect();
    out.write_table("summary.csv", &output::SUMMARY_HEADER, &rows)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": "montecarlo",
        "seed": c.seed,
        "config_sha256": sha256_hex(l.raw.as_bytes()),
        "config": c,
        "artifacts": out.artifacts,
    });
    out.write_json("run_manifest.json", &manifest)?;
    Ok(())
}

/// `simulate`: writes a synthetic panel and its oracle.
pub fn simulate(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let l = AnalyzeConfig::load(config, seed)?;
    let c = &l.config;
    let DataConfig::Synthetic { dgp } = &c.data else {
        return Err(CliError::Config("simulate needs data.source = \"synthetic\"".into()));
    };
    let mut out = OutDir::create(out_dir)?;
    let (data, draws) = generate(dgp).map_err(stage("simulate"))?;
    let (header, rows) = output::panel_table(&data);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_table("panel.csv", &header, &rows)?;
    let mut buf = Vec::new();
    write_oracle_csv(&draws, &mut buf).map_err(stage("oracle"))?;
    out.write("oracle.csv", &buf)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": "simulate",
        "seed": c.seed,
        "config_sha256": sha256_hex(l.raw.as_bytes()),
        "dgp": dgp,
        "artifacts": out.artifacts,
    });
    out.write_json("run_manifest.json", &manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_keeps_ends() {
        let g: Vec<f64> = (0..201).map(|k| k as f64).collect();
        let t = thin(&g, 21);
        assert_eq!(t.len(), 21);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[20], 200.0);
        assert_eq!(thin(&g[..5], 21).len(), 5);
    }

    #[test]
    fn cell_seeds_are_stable_and_distinct() {
        assert_eq!(cell_seeds(9, 0, 4), cell_seeds(9, 0, 4));
        assert_ne!(cell_seeds(9, 0, 4), cell_seeds(9, 1, 4));
        assert_eq!(cell_seeds(9, 0, 6)[..4], cell_seeds(9, 0, 4)[..]);
    }
}
