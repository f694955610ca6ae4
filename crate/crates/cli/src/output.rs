//! Artifact writers. Every table has a fixed header; floats use the
//! shortest round-trip representation.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use panelbounds::bounds::GridFlag;
use panelbounds::inference::{CiBand, PretestReport};
use panelbounds::pipeline::BoundsReport;
use panelbounds::BoundsCurve;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn fmt(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn flag(f: GridFlag) -> &'static str {
    match f {
        GridFlag::Interior => "interior",
        GridFlag::BelowGrid => "below_grid",
        GridFlag::AboveGrid => "above_grid",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

/// Output directory that remembers what was written.
pub struct OutDir {
    dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.artifacts.push(Artifact {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Config(format!("{name}: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    /// Removes a stale artifact from an earlier run, if any.
    pub fn remove(&self, name: &str) -> Result<(), CliError> {
        let p = self.path(name);
        match std::fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(CliError::io(&p, e)),
            _ => Ok(()),
        }
    }
}

pub fn att_qtt_rows(r: &BoundsReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["att".into(), String::new(), fmt(r.att)]];
    rows.extend(
        r.taus
            .iter()
            .zip(&r.qtt)
            .map(|(t, q)| vec!["qtt".into(), fmt(*t), fmt(*q)]),
    );
    rows
}

pub const ATT_QTT_HEADER: [&str; 3] = ["quantity", "tau", "estimate"];

/// Header and rows of the DoTT table; covariate columns only when present.
pub fn dott_table(r: &BoundsReport) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let mut curves: Vec<(&BoundsCurve, [&'static str; 2])> = vec![
        (&r.worst_case, ["worst_case_lower", "worst_case_upper"]),
        (&r.csa, ["csa_lower", "csa_upper"]),
    ];
    if let (Some(wc), Some(csa)) = (&r.worst_case_cov, &r.csa_cov) {
        curves.push((wc, ["worst_case_cov_lower", "worst_case_cov_upper"]));
        curves.push((csa, ["csa_cov_lower", "csa_cov_upper"]));
    }
    let mut header = vec!["delta"];
    for (_, h) in &curves {
        header.extend(h);
    }
    let rows = (0..r.delta.len())
        .map(|k| {
            let mut row = vec![fmt(r.delta[k])];
            for (c, _) in &curves {
                row.push(fmt(c.lower[k]));
                row.push(fmt(c.upper[k]));
            }
            row
        })
        .collect();
    (header, rows)
}

pub fn qott_table(r: &BoundsReport) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let mut header = vec![
        "tau",
        "worst_case_lower",
        "worst_case_upper",
        "csa_lower",
        "csa_upper",
        "csa_lower_flag",
        "csa_upper_flag",
    ];
    if r.qott_csa_cov.is_some() {
        header.extend(["csa_cov_lower", "csa_cov_upper"]);
    }
    header.extend(["rank_cross_section", "rank_over_time"]);
    let rows = (0..r.taus.len())
        .map(|k| {
            let (w, c) = (&r.qott_worst_case, &r.qott_csa);
            let mut row = vec![
                fmt(r.taus[k]),
                fmt(w.lower[k]),
                fmt(w.upper[k]),
                fmt(c.lower[k]),
                fmt(c.upper[k]),
                flag(c.lower_flag[k]).into(),
                flag(c.upper_flag[k]).into(),
            ];
            if let Some(cc) = &r.qott_csa_cov {
                row.push(fmt(cc.lower[k]));
                row.push(fmt(cc.upper[k]));
            }
            row.push(fmt(r.rank_cross_section[k]));
            row.push(fmt(r.rank_over_time[k]));
            row
        })
        .collect();
    (header, rows)
}

pub const SPEARMAN_HEADER: [&str; 6] = ["pair", "group", "rho", "se", "lower", "upper"];

/// Per-pair Spearman rhos (with bootstrap standard errors when the pre-test
/// ran) followed by the bounds on `rho(Y_1t, Y_0t)`.
pub fn spearman_rows(r: &BoundsReport, pretest: Option<&PretestReport>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    match pretest {
        Some(p) => {
            for (k, pair) in p.pairs.iter().enumerate() {
                rows.push(vec![pair.clone(), "treated".into(), fmt(p.rho[k]), fmt(p.se[k]), String::new(), String::new()]);
            }
            for (k, pair) in p.pairs.iter().enumerate() {
                rows.push(vec![
                    pair.clone(),
                    "control".into(),
                    fmt(p.control_rho[k]),
                    fmt(p.control_se[k]),
                    String::new(),
                    String::new(),
                ]);
            }
        }
        None => rows.push(vec![
            "(t-1,t-2)".into(),
            "treated".into(),
            fmt(r.rho23),
            String::new(),
            String::new(),
            String::new(),
        ]),
    }
    rows.push(vec![
        "(t,t-1)".into(),
        "treated".into(),
        fmt(r.rho13),
        String::new(),
        String::new(),
        String::new(),
    ]);
    rows.push(vec![
        "(y1_t,y0_t)".into(),
        "treated".into(),
        String::new(),
        String::new(),
        fmt(r.spearman_bounds.0),
        fmt(r.spearman_bounds.1),
    ]);
    rows
}

pub const CI_HEADER: [&str; 8] = [
    "variant",
    "method",
    "delta",
    "lower_estimate",
    "upper_estimate",
    "lower_ci",
    "upper_ci",
    "epsilon",
];

pub fn ci_rows(method: &str, band: &CiBand) -> Vec<Vec<String>> {
    (0..band.grid.len())
        .map(|k| {
            vec![
                band.label.clone(),
                method.into(),
                fmt(band.grid[k]),
                fmt(band.lower_estimate[k]),
                fmt(band.upper_estimate[k]),
                fmt(band.lower_ci[k]),
                fmt(band.upper_ci[k]),
                fmt(band.epsilon),
            ]
        })
        .collect()
}

pub const ORACLE_HEADER: [&str; 8] = [
    "delta",
    "oracle_dott",
    "worst_case_lower",
    "worst_case_upper",
    "csa_lower",
    "csa_upper",
    "inside_worst_case",
    "inside_csa",
];

pub fn oracle_rows(r: &BoundsReport, oracle: &[f64], slack: f64) -> Vec<Vec<String>> {
    let inside = |c: &BoundsCurve, k: usize| {
        (c.lower[k] - slack <= oracle[k] && oracle[k] <= c.upper[k] + slack).to_string()
    };
    (0..r.delta.len())
        .map(|k| {
            vec![
                fmt(r.delta[k]),
                fmt(oracle[k]),
                fmt(r.worst_case.lower[k]),
                fmt(r.worst_case.upper[k]),
                fmt(r.csa.lower[k]),
                fmt(r.csa.upper[k]),
                inside(&r.worst_case, k),
                inside(&r.csa, k),
            ]
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "cell",
    "repetitions",
    "failed",
    "mean_width_worst_case",
    "mean_width_csa",
    "mean_width_worst_case_cov",
    "mean_width_csa_cov",
    "coverage_worst_case",
    "coverage_csa",
    "pretest_rejection_rate",
];

/// One Monte Carlo cell, averaged over successful repetitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub repetitions: usize,
    pub failed: usize,
    pub mean_width_worst_case: Option<f64>,
    pub mean_width_csa: Option<f64>,
    pub mean_width_worst_case_cov: Option<f64>,
    pub mean_width_csa_cov: Option<f64>,
    pub coverage_worst_case: Option<f64>,
    pub coverage_csa: Option<f64>,
    pub pretest_rejection_rate: Option<f64>,
}

impl CellSummary {
    pub fn row(&self) -> Vec<String> {
        vec![
            self.cell.clone(),
            self.repetitions.to_string(),
            self.failed.to_string(),
            opt(self.mean_width_worst_case),
            opt(self.mean_width_csa),
            opt(self.mean_width_worst_case_cov),
            opt(self.mean_width_csa_cov),
            opt(self.coverage_worst_case),
            opt(self.coverage_csa),
            opt(self.pretest_rejection_rate),
        ]
    }
}

/// Panel in the default wide layout: `id,y_t,y_tm1,y_tm2,treated`, the
/// covariates, then earlier periods `y_tm3, ...`.
pub fn panel_table(data: &panelbounds::PanelDataset) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["id", "y_t", "y_tm1", "y_tm2", "treated"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(data.covariate_names().iter().cloned());
    let extra = data.pre_periods().saturating_sub(2);
    header.extend((0..extra).map(|k| format!("y_tm{}", k + 3)));
    let rows = data
        .units()
        .iter()
        .map(|u| {
            let mut r = vec![
                u.id.clone(),
                fmt(u.y_t),
                fmt(u.y_tm1),
                fmt(u.y_tm2),
                (u.treated as u8).to_string(),
            ];
            r.extend(u.x.iter().map(|v| fmt(*v)));
            r.extend(u.earlier.iter().map(|v| fmt(*v)));
            r
        })
        .collect();
    (header, rows)
}
