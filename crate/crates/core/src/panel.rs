//! Three-period panel ingestion and indexing.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unit: outcomes in the last three periods, treatment status and
/// covariates. `earlier` holds additional pre-periods, most recent first
/// (`t-3`, `t-4`, ...); it is only used by pre-tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitRecord {
    pub id: String,
    pub y_t: f64,
    pub y_tm1: f64,
    pub y_tm2: f64,
    pub treated: bool,
    pub x: Vec<f64>,
    pub earlier: Vec<f64>,
}

/// Validated, immutable panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelDataset {
    units: Vec<UnitRecord>,
    covariate_names: Vec<String>,
}

impl PanelDataset {
    pub fn new(units: Vec<UnitRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let k = covariate_names.len();
        let extra = units.first().map_or(0, |u| u.earlier.len());
        for u in &units {
            if u.x.len() != k || u.earlier.len() != extra {
                return Err(Error::CovariateLength { id: u.id.clone() });
            }
            let finite = [u.y_t, u.y_tm1, u.y_tm2]
                .iter()
                .chain(&u.x)
                .chain(&u.earlier)
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidArgument(format!(
                    "unit `{}` has non-finite values",
                    u.id
                )));
            }
        }
        Ok(Self {
            units,
            covariate_names,
        })
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.treated).count()
    }

    pub fn p_treated(&self) -> f64 {
        if self.units.is_empty() {
            0.0
        } else {
            self.n_treated() as f64 / self.n() as f64
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Number of observed pre-treatment periods (at least two).
    pub fn pre_periods(&self) -> usize {
        2 + self.units.first().map_or(0, |u| u.earlier.len())
    }

    /// Errors unless both groups are present.
    pub fn check_variation(&self) -> Result<()> {
        let treated = self.n_treated();
        if treated == 0 || treated == self.n() {
            return Err(Error::NoVariationInTreatment {
                treated,
                n: self.n(),
            });
        }
        Ok(())
    }

    pub fn split_by_group(&self) -> (PanelView<'_>, PanelView<'_>) {
        let (t, c): (Vec<usize>, Vec<usize>) =
            (0..self.n()).partition(|&i| self.units[i].treated);
        (
            PanelView { data: self, idx: t },
            PanelView { data: self, idx: c },
        )
    }

    pub fn treated(&self) -> PanelView<'_> {
        self.split_by_group().0
    }

    pub fn control(&self) -> PanelView<'_> {
        self.split_by_group().1
    }

    /// New dataset made of the units at `indices` (repeats allowed).
    pub fn resample(&self, indices: &[usize]) -> PanelDataset {
        PanelDataset {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Fraction of untreated outcomes (both pre-periods, plus controls at
    /// `t`) that share their value with another observation.
    pub fn tie_fraction(&self) -> f64 {
        let mut vals: Vec<f64> = Vec::with_capacity(3 * self.n());
        for u in &self.units {
            vals.push(u.y_tm1);
            vals.push(u.y_tm2);
            if !u.treated {
                vals.push(u.y_t);
            }
        }
        if vals.is_empty() {
            return 0.0;
        }
        vals.sort_by(f64::total_cmp);
        let tied = (0..vals.len())
            .filter(|&i| {
                (i > 0 && vals[i - 1] == vals[i]) || (i + 1 < vals.len() && vals[i + 1] == vals[i])
            })
            .count();
        tied as f64 / vals.len() as f64
    }
}

/// Borrowed subset of a panel, in original order.
#[derive(Debug, Clone)]
pub struct PanelView<'a> {
    data: &'a PanelDataset,
    idx: Vec<usize>,
}

impl<'a> PanelView<'a> {
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn dataset(&self) -> &'a PanelDataset {
        self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a UnitRecord> + '_ {
        self.idx.iter().map(move |&i| &self.data.units[i])
    }

    pub fn y_t(&self) -> Vec<f64> {
        self.iter().map(|u| u.y_t).collect()
    }

    pub fn y_tm1(&self) -> Vec<f64> {
        self.iter().map(|u| u.y_tm1).collect()
    }

    pub fn y_tm2(&self) -> Vec<f64> {
        self.iter().map(|u| u.y_tm2).collect()
    }

    pub fn x(&self) -> Vec<Vec<f64>> {
        self.iter().map(|u| u.x.clone()).collect()
    }

    /// Outcomes `lag` periods before `t` (0 = `t`).
    pub fn period(&self, lag: usize) -> Vec<f64> {
        self.iter()
            .map(|u| match lag {
                0 => u.y_t,
                1 => u.y_tm1,
                2 => u.y_tm2,
                k => u.earlier[k - 3],
            })
            .collect()
    }
}

/// Column names for wide-format input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub id: String,
    pub y_t: String,
    pub y_tm1: String,
    pub y_tm2: String,
    pub treated: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Extra pre-periods, most recent first.
    #[serde(default)]
    pub earlier: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            y_t: "y_t".into(),
            y_tm1: "y_tm1".into(),
            y_tm2: "y_tm2".into(),
            treated: "treated".into(),
            covariates: Vec::new(),
            earlier: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rejected: Vec<RejectedRow>,
    pub tie_fraction: f64,
}

impl LoadReport {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rejected {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

/// Above this tie fraction a continuity warning is logged.
pub const TIE_WARNING_THRESHOLD: f64 = 0.01;

pub fn load_panel(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<(PanelDataset, LoadReport)> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

/// Parses a wide CSV with a header row.
pub fn read_panel<R: Read>(reader: R, schema: &ColumnMap) -> Result<(PanelDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize> {
        pos.get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_id = col(&schema.id)?;
    let c_t = col(&schema.y_t)?;
    let c_tm1 = col(&schema.y_tm1)?;
    let c_tm2 = col(&schema.y_tm2)?;
    let c_d = col(&schema.treated)?;
    let c_x = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let c_e = schema
        .earlier
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut units = Vec::new();
    let mut report = LoadReport::default();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id = field(c_id).to_string();
        let id_opt = (!id.is_empty()).then(|| id.clone());

        let mut required: Vec<(usize, &str)> = vec![
            (c_id, schema.id.as_str()),
            (c_t, schema.y_t.as_str()),
            (c_tm1, schema.y_tm1.as_str()),
            (c_tm2, schema.y_tm2.as_str()),
            (c_d, schema.treated.as_str()),
        ];
        required.extend(c_x.iter().copied().zip(schema.covariates.iter().map(String::as_str)));
        required.extend(c_e.iter().copied().zip(schema.earlier.iter().map(String::as_str)));
        if let Some((_, name)) = required.iter().find(|(i, _)| field(*i).is_empty()) {
            report.rejected.push(RejectedRow {
                row,
                id: id_opt,
                reason: format!("missing value in `{name}`"),
            });
            continue;
        }

        let num = |i: usize, name: &str| -> Result<f64> {
            let raw = field(i);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonNumericOutcome {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        let treated = match field(c_d) {
            "1" | "1.0" | "true" | "TRUE" => true,
            "0" | "0.0" | "false" | "FALSE" => false,
            other => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let x = c_x
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, n)| num(i, n))
            .collect::<Result<Vec<_>>>()?;
        let earlier = c_e
            .iter()
            .zip(&schema.earlier)
            .map(|(&i, n)| num(i, n))
            .collect::<Result<Vec<_>>>()?;
        units.push(UnitRecord {
            id,
            y_t: num(c_t, &schema.y_t)?,
            y_tm1: num(c_tm1, &schema.y_tm1)?,
            y_tm2: num(c_tm2, &schema.y_tm2)?,
            treated,
            x,
            earlier,
        });
    }

    let data = PanelDataset::new(units, schema.covariates.clone())?;
    data.check_variation()?;
    report.tie_fraction = data.tie_fraction();
    if report.tie_fraction > TIE_WARNING_THRESHOLD {
        log::warn!(
            "{:.1}% of untreated outcomes are tied; continuity is assumed by the bounds",
            100.0 * report.tie_fraction
        );
    }
    if !report.rejected.is_empty() {
        log::warn!("{} rows rejected", report.rejected.len());
    }
    Ok((data, report))
}
