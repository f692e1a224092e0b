//! Dataset schemas, validated in-memory tables, CSV round-tripping, and
//! report rendering.
//!
//! The observed dataset deliberately carries only what an analyst is
//! allowed to see: the split indicator, the treatment indicator, the
//! privatized response, and covariates. Simulation ground truth lives in a
//! separate sidecar file that estimation code never reads.

mod csvio;
mod report;

pub use csvio::{
    read_dataset, read_sidecar, read_table, write_dataset, write_sidecar, ObservedTable,
    SidecarRow,
};
pub use report::{
    render_report, BalanceRow, DesignEcho, EstimateCell, EstimateReport, OutcomeReport,
    ReportFormat,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names reserved for the simulation truth sidecar. They never
/// appear in an observed dataset.
pub const SIDECAR_COLUMNS: [&str; 7] = ["y1", "y0", "c", "behavior", "p", "prompt", "cheater"];

/// Declared type of a covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// Numeric column restricted to 0/1.
    Binary,
    Numeric,
    /// Unordered labels, expanded to indicators for modeling.
    Categorical,
}

/// Values of one covariate column; `None` marks a missing entry.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl CovariateData {
    pub fn len(&self) -> usize {
        match self {
            CovariateData::Numeric(v) => v.len(),
            CovariateData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        match self {
            CovariateData::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
            CovariateData::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: CovariateKind,
    pub data: CovariateData,
}

impl CovariateColumn {
    pub fn numeric(name: impl Into<String>, kind: CovariateKind, values: Vec<Option<f64>>) -> Result<Self> {
        let name = name.into();
        if kind == CovariateKind::Categorical {
            return Err(Error::Schema(format!(
                "covariate {name}: categorical columns carry labels, not numbers"
            )));
        }
        if kind == CovariateKind::Binary {
            for (i, v) in values.iter().enumerate() {
                if let Some(x) = v {
                    if *x != 0.0 && *x != 1.0 {
                        return Err(Error::Schema(format!(
                            "covariate {name}: binary column has non-0/1 value {x} at row {i}"
                        )));
                    }
                }
            }
        } else {
            for (i, v) in values.iter().enumerate() {
                if let Some(x) = v {
                    if !x.is_finite() {
                        return Err(Error::Schema(format!(
                            "covariate {name}: non-finite value at row {i}"
                        )));
                    }
                }
            }
        }
        Ok(CovariateColumn {
            name,
            kind,
            data: CovariateData::Numeric(values),
        })
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        CovariateColumn {
            name: name.into(),
            kind: CovariateKind::Categorical,
            data: CovariateData::Categorical(values),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Observed trial data: split, treatment, privatized response, covariates.
///
/// Construction validates every field, so downstream estimators can assume
/// well-formed inputs. No field of this type is derivable from the
/// simulation truth sidecar.
#[derive(Debug, Clone)]
pub struct PrivateDataset {
    outcome_name: String,
    s: Vec<u8>,
    a: Vec<u8>,
    y: Vec<u8>,
    covariates: Vec<CovariateColumn>,
}

impl PrivateDataset {
    pub fn new(
        outcome_name: impl Into<String>,
        s: Vec<u8>,
        a: Vec<u8>,
        y: Vec<u8>,
        covariates: Vec<CovariateColumn>,
    ) -> Result<Self> {
        let n = s.len();
        if a.len() != n || y.len() != n {
            return Err(Error::Schema(format!(
                "column lengths differ: s = {}, a = {}, y = {}",
                n,
                a.len(),
                y.len()
            )));
        }
        if n == 0 {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        for (i, &v) in s.iter().enumerate() {
            if v != 1 && v != 2 {
                return Err(Error::Schema(format!(
                    "split indicator must be 1 or 2, got {v} at row {i}"
                )));
            }
        }
        for (name, col) in [("a", &a), ("y_tilde", &y)] {
            for (i, &v) in col.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Schema(format!(
                        "{name} must be 0 or 1, got {v} at row {i}"
                    )));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &covariates {
            if c.len() != n {
                return Err(Error::Schema(format!(
                    "covariate {} has {} rows, expected {n}",
                    c.name,
                    c.len()
                )));
            }
            if SIDECAR_COLUMNS.contains(&c.name.as_str()) {
                return Err(Error::Schema(format!(
                    "column name {} is reserved for the truth sidecar and cannot \
                     enter an observed dataset",
                    c.name
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::Schema(format!("duplicate covariate {}", c.name)));
            }
        }
        Ok(PrivateDataset {
            outcome_name: outcome_name.into(),
            s,
            a,
            y,
            covariates,
        })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn split(&self) -> &[u8] {
        &self.s
    }

    pub fn treatment(&self) -> &[u8] {
        &self.a
    }

    pub fn response(&self) -> &[u8] {
        &self.y
    }

    pub fn covariates(&self) -> &[CovariateColumn] {
        &self.covariates
    }

    /// Same rows, different outcome column. Used for multi-outcome files.
    pub fn with_outcome(&self, outcome_name: impl Into<String>, y: Vec<u8>) -> Result<Self> {
        PrivateDataset::new(
            outcome_name,
            self.s.clone(),
            self.a.clone(),
            y,
            self.covariates.clone(),
        )
    }
}

/// Declared covariate in a dataset schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Schema of an observed-dataset CSV file.
///
/// Required columns are the split `s`, treatment `a`, and one or more
/// outcome columns (default `y_tilde`). Any other column must be declared
/// here or the file is rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    #[serde(default = "default_outcomes")]
    pub outcome_cols: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub id_col: Option<String>,
    /// Cell content treated as missing (exact match). Default: empty cell.
    #[serde(default)]
    pub missing_token: String,
}

fn default_outcomes() -> Vec<String> {
    vec!["y_tilde".to_string()]
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            outcome_cols: default_outcomes(),
            covariates: Vec::new(),
            id_col: None,
            missing_token: String::new(),
        }
    }
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if self.outcome_cols.is_empty() {
            return Err(Error::Schema("schema declares no outcome columns".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        names.insert("s".to_string());
        names.insert("a".to_string());
        if let Some(id) = &self.id_col {
            if !names.insert(id.clone()) {
                return Err(Error::Schema(format!("id column {id} collides with a required column")));
            }
        }
        for c in self.outcome_cols.iter() {
            if !names.insert(c.clone()) {
                return Err(Error::Schema(format!("duplicate column {c} in schema")));
            }
        }
        for c in &self.covariates {
            if !names.insert(c.name.clone()) {
                return Err(Error::Schema(format!("duplicate column {} in schema", c.name)));
            }
        }
        for name in names {
            if SIDECAR_COLUMNS.contains(&name.as_str()) {
                return Err(Error::Schema(format!(
                    "column name {name} is reserved for the truth sidecar"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> PrivateDataset {
        PrivateDataset::new(
            "y_tilde",
            vec![1, 2, 1, 2],
            vec![1, 0, 0, 1],
            vec![1, 0, 1, 0],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(tiny_dataset().n() == 4);
        assert!(PrivateDataset::new("y", vec![1, 3], vec![0, 0], vec![0, 0], vec![]).is_err());
        assert!(PrivateDataset::new("y", vec![1, 2], vec![0, 2], vec![0, 0], vec![]).is_err());
        assert!(PrivateDataset::new("y", vec![1, 2], vec![0, 0], vec![0, 9], vec![]).is_err());
        assert!(PrivateDataset::new("y", vec![], vec![], vec![], vec![]).is_err());
        assert!(PrivateDataset::new("y", vec![1, 2], vec![0, 1], vec![0, 1, 1], vec![]).is_err());
    }

    #[test]
    fn sidecar_columns_are_rejected() {
        for reserved in SIDECAR_COLUMNS {
            let col = CovariateColumn::numeric(
                reserved,
                CovariateKind::Numeric,
                vec![Some(1.0), Some(2.0)],
            )
            .unwrap();
            let err = PrivateDataset::new("y", vec![1, 2], vec![0, 1], vec![0, 1], vec![col]);
            assert!(err.is_err(), "reserved column {reserved} was accepted");
        }
    }

    #[test]
    fn binary_covariates_validated() {
        assert!(CovariateColumn::numeric(
            "x",
            CovariateKind::Binary,
            vec![Some(0.0), Some(2.0)]
        )
        .is_err());
        assert!(CovariateColumn::numeric(
            "x",
            CovariateKind::Numeric,
            vec![Some(f64::NAN)]
        )
        .is_err());
        assert!(CovariateColumn::numeric(
            "x",
            CovariateKind::Binary,
            vec![Some(0.0), None, Some(1.0)]
        )
        .is_ok());
    }

    #[test]
    fn duplicate_covariates_rejected() {
        let col = |name: &str| {
            CovariateColumn::numeric(name, CovariateKind::Numeric, vec![Some(1.0), Some(2.0)])
                .unwrap()
        };
        let err = PrivateDataset::new(
            "y",
            vec![1, 2],
            vec![0, 1],
            vec![0, 1],
            vec![col("x"), col("x")],
        );
        assert!(err.is_err());
    }

    #[test]
    fn schema_validation() {
        let mut schema = DatasetSchema::default();
        assert!(schema.validate().is_ok());
        schema.covariates.push(CovariateSpec {
            name: "y1".into(),
            kind: CovariateKind::Numeric,
        });
        assert!(schema.validate().is_err());

        let clash = DatasetSchema {
            outcome_cols: vec!["s".into()],
            ..DatasetSchema::default()
        };
        assert!(clash.validate().is_err());

        let empty = DatasetSchema {
            outcome_cols: vec![],
            ..DatasetSchema::default()
        };
        assert!(empty.validate().is_err());
    }
}
