//! Model specification and data compilation.
//!
//! A [`ModelSpec`] declares which columns play which role (fixed effects,
//! random effects, cluster interactions, clustering covariates, outcome)
//! and [`compile`] turns it plus a tabular dataset into the validated
//! design matrices the sampler consumes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionType {
    Linear,
    Probit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intercepts {
    pub fe: bool,
    pub re: bool,
    pub lat: bool,
}

/// Declarative description of covariate roles, outcome family, truncation
/// level, and intercept flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub regression_type: RegressionType,
    #[serde(default)]
    pub fe: Vec<String>,
    #[serde(default)]
    pub re: Vec<String>,
    #[serde(default)]
    pub re_unit: Option<String>,
    #[serde(default)]
    pub lat: Vec<String>,
    #[serde(default)]
    pub assign_cont: Vec<String>,
    #[serde(default)]
    pub assign_cat: Vec<String>,
    pub outcome: String,
    pub n_clusters_max: usize,
    pub intercepts: Intercepts,
    /// When set, non-intercept design columns and continuous clustering
    /// covariates are centered and scaled; the per-column statistics are
    /// recorded for prediction-time reuse. Off by default.
    #[serde(default)]
    pub standardize: bool,
}

impl ModelSpec {
    /// Whether the random-effect block participates in the model.
    pub fn random_effects_enabled(&self) -> bool {
        !self.re.is_empty() || self.intercepts.re
    }

    /// Structural validation: mandatory blocks, intercept reductions,
    /// random-effect unit presence, truncation level.
    pub fn validate(&self) -> Result<()> {
        if self.assign_cont.is_empty() && self.assign_cat.is_empty() {
            return Err(Error::EmptyClusteringBlock);
        }
        if self.fe.is_empty() && !self.intercepts.fe {
            return Err(Error::InvalidSpec(
                "fixed-effect block is mandatory; list covariates or set intercepts.fe".into(),
            ));
        }
        if self.lat.is_empty() && !self.intercepts.lat {
            return Err(Error::InvalidSpec(
                "latent-interaction block is mandatory; list covariates or set intercepts.lat"
                    .into(),
            ));
        }
        if self.random_effects_enabled() && self.re_unit.is_none() {
            return Err(Error::DanglingRandomEffect);
        }
        if self.n_clusters_max < 2 {
            return Err(Error::InvalidSpec(
                "n_clusters_max must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// In-memory column-major table with named columns. Generators produce
/// typed float columns directly; CSV files load as string columns and are
/// parsed per role during compilation.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Float(Vec<f64>),
    Str(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Float(v) => v.len(),
            Column::Str(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Column>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_float(&mut self, name: &str, values: Vec<f64>) {
        self.names.push(name.to_string());
        self.columns.push(Column::Float(values));
    }

    pub fn push_str(&mut self, name: &str, values: Vec<String>) {
        self.names.push(name.to_string());
        self.columns.push(Column::Str(values));
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
    }

    fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Numeric view of a column; string cells must parse as finite floats.
    pub fn float_column(&self, name: &str) -> Result<Vec<f64>> {
        match self.require(name)? {
            Column::Float(v) => {
                for (row, x) in v.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(Error::NonFiniteValue {
                            row,
                            col: name.to_string(),
                        });
                    }
                }
                Ok(v.clone())
            }
            Column::Str(v) => v
                .iter()
                .enumerate()
                .map(|(row, s)| {
                    s.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::NonFiniteValue {
                            row,
                            col: name.to_string(),
                        })
                })
                .collect(),
        }
    }

    /// String view of a column (floats are formatted losslessly).
    pub fn str_column(&self, name: &str) -> Result<Vec<String>> {
        match self.require(name)? {
            Column::Float(v) => Ok(v.iter().map(|x| format!("{x}")).collect()),
            Column::Str(v) => Ok(v.clone()),
        }
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let names: Vec<String> = reader
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let mut columns: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        for record in reader.records() {
            let record = record?;
            if record.len() != names.len() {
                return Err(Error::InvalidArgument(format!(
                    "csv row has {} fields, expected {}",
                    record.len(),
                    names.len()
                )));
            }
            for (i, field) in record.iter().enumerate() {
                columns[i].push(field.to_string());
            }
        }
        Ok(Self {
            names,
            columns: columns.into_iter().map(Column::Str).collect(),
        })
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(&self.names)?;
        let n = self.n_rows();
        for row in 0..n {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c {
                    Column::Float(v) => format!("{}", v[row]),
                    Column::Str(v) => v[row].clone(),
                })
                .collect();
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Per-column standardization statistics recorded at compile time so that
/// prediction applies the identical transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
}

/// Validated design matrices for one compiled model.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    /// Number of random-effect units; 0 when the block is disabled.
    pub m: usize,
    pub y: DVector<f64>,
    pub x_fe: DMatrix<f64>,
    pub x_re: DMatrix<f64>,
    pub x_int: DMatrix<f64>,
    pub u_cont: DMatrix<f64>,
    /// Per categorical clustering covariate: dense 0-based codes.
    pub u_cat: Vec<Vec<u32>>,
    /// Per categorical clustering covariate: labels indexed by code.
    pub cat_levels: Vec<Vec<String>>,
    /// Observation -> unit index; empty when random effects are disabled.
    pub g: Vec<usize>,
    /// Unit labels indexed by unit, in first-appearance order.
    pub unit_labels: Vec<String>,
    /// Column names of the design matrices, intercept first when present.
    pub fe_names: Vec<String>,
    pub re_names: Vec<String>,
    pub int_names: Vec<String>,
    /// Standardization statistics keyed by source column name (only when
    /// the spec requested standardization).
    pub standardization: Option<BTreeMap<String, ColumnStats>>,
}

impl Dataset {
    pub fn q_fe(&self) -> usize {
        self.x_fe.ncols()
    }

    pub fn q_re(&self) -> usize {
        self.x_re.ncols()
    }

    pub fn q_int(&self) -> usize {
        self.x_int.ncols()
    }

    pub fn q_uc(&self) -> usize {
        self.u_cont.ncols()
    }

    /// Category counts K_j per categorical clustering covariate.
    pub fn cat_counts(&self) -> Vec<usize> {
        self.cat_levels.iter().map(Vec::len).collect()
    }

    pub fn random_effects_enabled(&self) -> bool {
        self.m > 0
    }
}

fn standardized(raw: &[f64], name: &str, stats: &mut BTreeMap<String, ColumnStats>) -> Vec<f64> {
    let entry = stats.entry(name.to_string()).or_insert_with(|| {
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        ColumnStats {
            mean,
            // Constant columns are centered only.
            sd: if sd > 0.0 { sd } else { 1.0 },
        }
    });
    raw.iter().map(|x| (x - entry.mean) / entry.sd).collect()
}

/// Assembles a design matrix from named columns, prepending an intercept
/// column of ones when requested. Columns keep declaration order.
fn build_design(
    table: &Table,
    names: &[String],
    intercept: bool,
    n: usize,
    mut stats: Option<&mut BTreeMap<String, ColumnStats>>,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut out_names: Vec<String> = Vec::new();
    if intercept {
        cols.push(vec![1.0; n]);
        out_names.push("Intercept".to_string());
    }
    for name in names {
        let raw = table.float_column(name)?;
        let col = match stats.as_deref_mut() {
            Some(s) => standardized(&raw, name, s),
            None => raw,
        };
        cols.push(col);
        out_names.push(name.clone());
    }
    let q = cols.len();
    let m = DMatrix::from_fn(n, q, |i, j| cols[j][i]);
    Ok((m, out_names))
}

/// Maps a categorical column to dense 0-based codes. Columns whose every
/// value is a non-negative integer are taken as explicit codes (and must
/// be dense from 0); anything else is label-mapped by first appearance.
fn encode_categorical(values: &[String], col: &str) -> Result<(Vec<u32>, Vec<String>)> {
    let as_ints: Option<Vec<u32>> = values
        .iter()
        .map(|s| s.trim().parse::<u32>().ok())
        .collect();
    if let Some(codes) = as_ints {
        if !codes.is_empty() {
            let k = *codes.iter().max().unwrap() as usize + 1;
            let mut seen = vec![false; k];
            for &c in &codes {
                seen[c as usize] = true;
            }
            if seen.iter().all(|&s| s) {
                let levels = (0..k).map(|c| c.to_string()).collect();
                return Ok((codes, levels));
            }
            return Err(Error::InvalidSpec(format!(
                "integer category codes in column '{col}' are not dense from 0"
            )));
        }
    }
    let mut levels: Vec<String> = Vec::new();
    let mut map: HashMap<String, u32> = HashMap::new();
    let mut codes = Vec::with_capacity(values.len());
    for v in values {
        let key = v.trim().to_string();
        let code = *map.entry(key.clone()).or_insert_with(|| {
            levels.push(key);
            (levels.len() - 1) as u32
        });
        codes.push(code);
    }
    Ok((codes, levels))
}

/// Maps unit labels to 0-based indices by first appearance.
fn encode_units(values: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut labels: Vec<String> = Vec::new();
    let mut map: HashMap<String, usize> = HashMap::new();
    let codes = values
        .iter()
        .map(|v| {
            let key = v.trim().to_string();
            *map.entry(key.clone()).or_insert_with(|| {
                labels.push(key);
                labels.len() - 1
            })
        })
        .collect();
    (codes, labels)
}

/// Compiles a model specification and a table into the design matrices the
/// sampler consumes. Unit indices and category codes are assigned by first
/// appearance, so compilation is deterministic and order-stable.
pub fn compile(spec: &ModelSpec, table: &Table) -> Result<Dataset> {
    spec.validate()?;
    let n = table.n_rows();

    let y_raw = table.float_column(&spec.outcome)?;
    if spec.regression_type == RegressionType::Probit {
        for (row, &v) in y_raw.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryOutcome { row, value: v });
            }
        }
    }
    let y = DVector::from_vec(y_raw);

    let mut stats = spec.standardize.then(BTreeMap::new);

    let (x_fe, fe_names) = build_design(table, &spec.fe, spec.intercepts.fe, n, stats.as_mut())?;
    let re_enabled = spec.random_effects_enabled();
    let (x_re, re_names) = if re_enabled {
        build_design(table, &spec.re, spec.intercepts.re, n, stats.as_mut())?
    } else {
        (DMatrix::zeros(n, 0), Vec::new())
    };
    let (x_int, int_names) =
        build_design(table, &spec.lat, spec.intercepts.lat, n, stats.as_mut())?;

    let mut u_cols: Vec<Vec<f64>> = Vec::new();
    for name in &spec.assign_cont {
        let raw = table.float_column(name)?;
        u_cols.push(match stats.as_mut() {
            Some(s) => standardized(&raw, name, s),
            None => raw,
        });
    }
    let u_cont = DMatrix::from_fn(n, u_cols.len(), |i, j| u_cols[j][i]);

    let mut u_cat = Vec::new();
    let mut cat_levels = Vec::new();
    for name in &spec.assign_cat {
        let values = table.str_column(name)?;
        let (codes, levels) = encode_categorical(&values, name)?;
        u_cat.push(codes);
        cat_levels.push(levels);
    }

    let (g, unit_labels, m) = if re_enabled {
        let unit_col = spec.re_unit.as_ref().ok_or(Error::DanglingRandomEffect)?;
        let values = table.str_column(unit_col)?;
        let (codes, labels) = encode_units(&values);
        let m = labels.len();
        (codes, labels, m)
    } else {
        (Vec::new(), Vec::new(), 0)
    };

    Ok(Dataset {
        n,
        m,
        y,
        x_fe,
        x_re,
        x_int,
        u_cont,
        u_cat,
        cat_levels,
        g,
        unit_labels,
        fe_names,
        re_names,
        int_names,
        standardization: stats,
    })
}

/// Human-readable model summary, one line per model component.
pub fn summarize(spec: &ModelSpec, data: &Dataset) -> String {
    let mut out = String::new();
    out.push_str("--- pglmm Data summary ---\n");
    out.push_str(&format!("- Number of observations :  {}\n", data.n));
    out.push('\n');
    out.push_str("-- Clustering model summary --\n");
    if !spec.assign_cont.is_empty() {
        out.push_str(&format!(
            "- Continuous clustering variables : '{}'\n",
            join_quoted(&spec.assign_cont)
        ));
    }
    if !spec.assign_cat.is_empty() {
        out.push_str(&format!(
            "- Categorical clustering variables : '{}'\n",
            join_quoted(&spec.assign_cat)
        ));
    }
    out.push('\n');
    out.push_str("-- Outcome model summary --\n");
    let model_type = match spec.regression_type {
        RegressionType::Linear => "linear mixed model",
        RegressionType::Probit => "probit mixed model",
    };
    out.push_str(&format!("- Model type:  {model_type}\n"));
    out.push_str(&format!("- Outcome  : ' {} '\n", spec.outcome));
    out.push_str(&format!(
        "- Fixed effects  : '{}'\n",
        join_quoted(&data.fe_names)
    ));
    if data.random_effects_enabled() {
        out.push_str(&format!(
            "- ' {} ' level random effects  : '{}'\n",
            spec.re_unit.as_deref().unwrap_or(""),
            join_quoted(&data.re_names)
        ));
    }
    out.push_str(&format!(
        "- Latent clusters interacting with: '{}'\n",
        join_quoted(&data.int_names)
    ));
    out
}

fn join_quoted(names: &[String]) -> String {
    let mut s = String::new();
    for n in names {
        s.push(' ');
        s.push_str(n);
    }
    s.push(' ');
    s
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // Unit remapping groups rows exactly by raw label equality, and
        // every design column equals its source column.
        #[test]
        fn grouping_and_round_trip(labels in proptest::collection::vec(0u8..5, 2..40)) {
            let n = labels.len();
            let mut t = Table::new();
            let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
            t.push_float("x", x.clone());
            t.push_str("unit", labels.iter().map(|l| format!("u{l}")).collect());
            t.push_float("u1", x.iter().map(|v| v * 2.0).collect());
            t.push_float("Y", vec![0.0; n]);
            let spec = ModelSpec {
                regression_type: RegressionType::Linear,
                fe: vec!["x".into()],
                re: vec![],
                re_unit: Some("unit".into()),
                lat: vec![],
                assign_cont: vec!["u1".into()],
                assign_cat: vec![],
                outcome: "Y".into(),
                n_clusters_max: 5,
                intercepts: Intercepts { fe: true, re: true, lat: true },
                standardize: false,
            };
            let data = compile(&spec, &t).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(data.g[i] == data.g[j], labels[i] == labels[j]);
                }
                prop_assert_eq!(data.x_fe[(i, 1)], x[i]);
                prop_assert_eq!(data.u_cont[(i, 0)], x[i] * 2.0);
                prop_assert_eq!(data.x_re[(i, 0)], 1.0);
            }
            prop_assert!(data.m >= 1);
            prop_assert!((0..data.m).all(|u| data.g.contains(&u)));
        }
    }
}
