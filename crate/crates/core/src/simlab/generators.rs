//! Covariate generators for simulated and resampled units.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CarError, Result};
use crate::rng::RngStream;

/// Level-pair probabilities of the two-factor discrete design, in
/// lexicographic order over `(1,1), (1,2), (1,3), (2,1), (2,2), (2,3)`.
const DISCRETE_WEIGHTS: [f64; 6] = [1.0, 4.0, 1.0, 3.0, 1.0, 3.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-coordinate standard deviation; zero gives a point mass.
    #[serde(default)]
    pub sd: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnScaling {
    None,
    Center,
    UnitVariance,
    /// Center, then divide by the sample standard deviation.
    #[default]
    Standardize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Rows in file order; every replication re-randomizes the same units.
    #[default]
    Fixed,
    /// A fresh random row order per replication.
    Permute,
    /// Rows drawn with replacement.
    Bootstrap,
}

fn no_scaling() -> ColumnScaling {
    ColumnScaling::None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GeneratorSpec {
    /// `X = (A + B, B, C)` with `A, B` standard normal and `C` standard
    /// exponential, all independent.
    #[serde(rename = "table1_continuous")]
    Table1Continuous,
    /// Two categorical covariates with 2 and 3 levels; level pairs drawn
    /// with probabilities proportional to `(1, 4, 1, 3, 1, 3)`.
    #[serde(rename = "appendixB_discrete", alias = "appendix_b_discrete")]
    AppendixBDiscrete,
    #[serde(rename = "csv_resample")]
    CsvResample {
        path: PathBuf,
        /// Columns that form the raw covariate record.
        columns: Vec<String>,
        /// Columns available to additional covariates only.
        #[serde(default)]
        extra_columns: Vec<String>,
        #[serde(default)]
        scaling: ColumnScaling,
        #[serde(default = "no_scaling")]
        extra_scaling: ColumnScaling,
        #[serde(default)]
        mode: ResampleMode,
    },
    #[serde(rename = "custom_mixture")]
    CustomMixture { components: Vec<MixtureComponent> },
}

impl GeneratorSpec {
    pub fn raw_dim(&self) -> usize {
        match self {
            GeneratorSpec::Table1Continuous => 3,
            GeneratorSpec::AppendixBDiscrete => 2,
            GeneratorSpec::CsvResample { columns, .. } => columns.len(),
            GeneratorSpec::CustomMixture { components } => components.first().map_or(0, |c| c.mean.len()),
        }
    }

    pub fn extra_names(&self) -> &[String] {
        match self {
            GeneratorSpec::CsvResample { extra_columns, .. } => extra_columns,
            _ => &[],
        }
    }

    pub fn extra_dim(&self) -> usize {
        self.extra_names().len()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, GeneratorSpec::AppendixBDiscrete)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let GeneratorSpec::CsvResample { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self, at: &str) -> Result<()> {
        match self {
            GeneratorSpec::Table1Continuous | GeneratorSpec::AppendixBDiscrete => Ok(()),
            GeneratorSpec::CsvResample { columns, extra_columns, .. } => {
                if columns.is_empty() {
                    return Err(CarError::config(format!("{at}.columns"), "at least one covariate column is required"));
                }
                let all: Vec<&String> = columns.iter().chain(extra_columns).collect();
                for (i, c) in all.iter().enumerate() {
                    if all[..i].contains(c) {
                        return Err(CarError::config(format!("{at}.columns"), format!("column {c:?} listed twice")));
                    }
                }
                Ok(())
            }
            GeneratorSpec::CustomMixture { components } => {
                if components.is_empty() {
                    return Err(CarError::config(format!("{at}.components"), "at least one mixture component is required"));
                }
                let d = components[0].mean.len();
                if d == 0 {
                    return Err(CarError::config(format!("{at}.components[0].mean"), "mean must be non-empty"));
                }
                for (i, c) in components.iter().enumerate() {
                    let p = format!("{at}.components[{i}]");
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return Err(CarError::config(format!("{p}.weight"), "weight must be positive"));
                    }
                    if c.mean.len() != d || c.mean.iter().any(|v| !v.is_finite()) {
                        return Err(CarError::config(format!("{p}.mean"), format!("mean must have {d} finite entries")));
                    }
                    if !c.sd.is_empty() && (c.sd.len() != d || c.sd.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
                        return Err(CarError::config(format!("{p}.sd"), format!("sd must have {d} finite nonnegative entries")));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Loaded CSV data after column scaling.
#[derive(Clone, Debug)]
struct CsvData {
    rows: Vec<Vec<f64>>,
    extra: Vec<Vec<f64>>,
    mode: ResampleMode,
}

/// A ready-to-sample generator; CSV-backed generators hold their rows.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    csv: Option<CsvData>,
    cumulative: Vec<f64>,
}

/// Per-replication position in a row sequence.
#[derive(Clone, Debug)]
pub struct Cursor {
    order: Option<Vec<usize>>,
    pos: usize,
}

impl Generator {
    pub fn load(spec: &GeneratorSpec) -> Result<Self> {
        spec.validate("generator")?;
        let (csv, cumulative) = match spec {
            GeneratorSpec::CsvResample {
                path,
                columns,
                extra_columns,
                scaling,
                extra_scaling,
                mode,
            } => {
                let (mut rows, mut extra) = read_columns(path, columns, extra_columns)?;
                scale_columns(&mut rows, *scaling, path, columns)?;
                scale_columns(&mut extra, *extra_scaling, path, extra_columns)?;
                (Some(CsvData { rows, extra, mode: *mode }), Vec::new())
            }
            GeneratorSpec::CustomMixture { components } => (None, cumulative(components.iter().map(|c| c.weight))),
            GeneratorSpec::AppendixBDiscrete => (None, cumulative(DISCRETE_WEIGHTS.iter().copied())),
            GeneratorSpec::Table1Continuous => (None, Vec::new()),
        };
        Ok(Generator {
            spec: spec.clone(),
            csv,
            cumulative,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn raw_dim(&self) -> usize {
        self.spec.raw_dim()
    }

    pub fn extra_names(&self) -> &[String] {
        self.spec.extra_names()
    }

    /// Upper bound on units per replication, if any.
    pub fn max_units(&self) -> Option<usize> {
        match &self.csv {
            Some(c) if c.mode != ResampleMode::Bootstrap => Some(c.rows.len()),
            _ => None,
        }
    }

    /// Start a replication. Permuting generators draw their order here.
    pub fn cursor(&self, rng: &mut RngStream) -> Cursor {
        let order = match &self.csv {
            Some(c) if c.mode == ResampleMode::Permute => {
                let mut idx: Vec<usize> = (0..c.rows.len()).collect();
                for i in (1..idx.len()).rev() {
                    idx.swap(i, rng.below(i + 1));
                }
                Some(idx)
            }
            _ => None,
        };
        Cursor { order, pos: 0 }
    }

    /// Draw the next unit into `raw` (and `extra`, for CSV extra columns).
    pub fn draw(&self, cursor: &mut Cursor, rng: &mut RngStream, raw: &mut Vec<f64>, extra: &mut Vec<f64>) -> Result<()> {
        raw.clear();
        extra.clear();
        match &self.spec {
            GeneratorSpec::Table1Continuous => {
                let a = rng.standard_normal();
                let b = rng.standard_normal();
                let c = rng.standard_exponential();
                raw.extend_from_slice(&[a + b, b, c]);
            }
            GeneratorSpec::AppendixBDiscrete => {
                let k = pick(&self.cumulative, rng.uniform());
                raw.extend_from_slice(&[(k / 3 + 1) as f64, (k % 3 + 1) as f64]);
            }
            GeneratorSpec::CustomMixture { components } => {
                let c = &components[pick(&self.cumulative, rng.uniform())];
                for (i, m) in c.mean.iter().enumerate() {
                    let s = c.sd.get(i).copied().unwrap_or(0.0);
                    raw.push(if s == 0.0 { *m } else { m + s * rng.standard_normal() });
                }
            }
            GeneratorSpec::CsvResample { .. } => {
                let data = self.csv.as_ref().expect("loaded with the spec");
                let row = match (data.mode, &cursor.order) {
                    (ResampleMode::Bootstrap, _) => rng.below(data.rows.len()),
                    (_, Some(order)) => *order
                        .get(cursor.pos)
                        .ok_or_else(|| CarError::invalid(format!("csv has only {} rows", data.rows.len())))?,
                    (_, None) if cursor.pos < data.rows.len() => cursor.pos,
                    _ => return Err(CarError::invalid(format!("csv has only {} rows", data.rows.len()))),
                };
                cursor.pos += 1;
                raw.extend_from_slice(&data.rows[row]);
                extra.extend_from_slice(&data.extra[row]);
            }
        }
        Ok(())
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let w: Vec<f64> = weights.collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v / total;
            acc
        })
        .collect()
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

type Rows = Vec<Vec<f64>>;

fn read_columns(path: &Path, columns: &[String], extra: &[String]) -> Result<(Rows, Rows)> {
    let file = std::fs::File::open(path).map_err(|e| CarError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let locate = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| CarError::invalid(format!("{}: missing column {n:?}", path.display())))
            })
            .collect()
    };
    let key_idx = locate(columns)?;
    let extra_idx = locate(extra)?;
    let mut rows = Vec::new();
    let mut extras = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |idx: &[usize], names: &[String]| -> Result<Vec<f64>> {
            idx.iter()
                .zip(names)
                .map(|(&i, n)| {
                    let s = rec.get(i).unwrap_or("");
                    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        CarError::invalid(format!("{}: row {}: column {n:?} value {s:?} is not a finite number", path.display(), line + 2))
                    })
                })
                .collect()
        };
        rows.push(parse(&key_idx, columns)?);
        extras.push(parse(&extra_idx, extra)?);
    }
    if rows.is_empty() {
        return Err(CarError::invalid(format!("{}: no data rows", path.display())));
    }
    Ok((rows, extras))
}

fn scale_columns(rows: &mut [Vec<f64>], scaling: ColumnScaling, path: &Path, names: &[String]) -> Result<()> {
    if scaling == ColumnScaling::None || rows.is_empty() {
        return Ok(());
    }
    let n = rows.len() as f64;
    for (j, name) in names.iter().enumerate() {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let (center, scale) = match scaling {
            ColumnScaling::Center => (mean, 1.0),
            ColumnScaling::UnitVariance | ColumnScaling::Standardize => {
                if rows.len() < 2 {
                    return Err(CarError::invalid(format!("{}: cannot scale column {name:?} with one row", path.display())));
                }
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                if var == 0.0 {
                    return Err(CarError::invalid(format!("{}: column {name:?} is constant and cannot be scaled", path.display())));
                }
                let c = if scaling == ColumnScaling::Standardize { mean } else { 0.0 };
                (c, var.sqrt())
            }
            ColumnScaling::None => unreachable!(),
        };
        for r in rows.iter_mut() {
            r[j] = (r[j] - center) / scale;
        }
    }
    Ok(())
}
