//! CSV reading and writing for privatized trial data and simulation
//! truth sidecars.

use std::path::Path;

use crate::dataio::{
    CovariateColumn, CovariateData, CovariateKind, DatasetSchema, PrivateDataset,
    SIDECAR_COLUMNS,
};
use crate::error::{Error, Result};

/// All datasets parsed from one file: same rows, same design columns,
/// one dataset per outcome column.
#[derive(Debug, Clone)]
pub struct ObservedTable {
    datasets: Vec<PrivateDataset>,
}

impl ObservedTable {
    pub fn new(datasets: Vec<PrivateDataset>) -> Result<ObservedTable> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::Schema("a table needs at least one outcome".into()))?;
        for d in &datasets[1..] {
            if d.n() != first.n() || d.split() != first.split() || d.treatment() != first.treatment()
            {
                return Err(Error::Schema(
                    "all outcomes in a table must share rows and design columns".into(),
                ));
            }
        }
        let mut names: Vec<&str> = datasets.iter().map(|d| d.outcome_name()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != datasets.len() {
            return Err(Error::Schema("duplicate outcome name in table".into()));
        }
        Ok(ObservedTable { datasets })
    }

    pub fn outcomes(&self) -> &[PrivateDataset] {
        &self.datasets
    }

    pub fn n(&self) -> usize {
        self.datasets[0].n()
    }

    pub fn into_datasets(self) -> Vec<PrivateDataset> {
        self.datasets
    }
}

fn is_missing(cell: &str, schema: &DatasetSchema) -> bool {
    if cell.is_empty() {
        return true;
    }
    !schema.missing_token.is_empty() && cell == schema.missing_token
}

fn parse_binary(cell: &str, column: &str, row: usize) -> Result<u8> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Schema(format!(
            "column {column}, row {row}: expected 0 or 1, got {other:?}"
        ))),
    }
}

/// Read a privatized dataset file against a declared schema.
///
/// Every header must be accounted for by the schema; unknown columns are
/// an error so that a truth sidecar or mislabeled file cannot slip
/// through as analysis input.
pub fn read_table(path: &Path, schema: &DatasetSchema) -> Result<ObservedTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col_of = |name: &str| -> Option<usize> { headers.iter().position(|h| h == name) };

    for h in &headers {
        let known = h == "s"
            || h == "a"
            || schema.outcome_cols.iter().any(|o| o == h)
            || schema.covariates.iter().any(|c| &c.name == h)
            || schema.id_col.as_deref() == Some(h.as_str());
        if !known {
            let hint = if SIDECAR_COLUMNS.contains(&h.as_str()) {
                " (this looks like a simulation truth column, not analysis input)"
            } else {
                ""
            };
            return Err(Error::Schema(format!(
                "unexpected column {h:?} in {}{hint}",
                path.display()
            )));
        }
    }

    let s_col = col_of("s")
        .ok_or_else(|| Error::Schema(format!("missing column \"s\" in {}", path.display())))?;
    let a_col = col_of("a")
        .ok_or_else(|| Error::Schema(format!("missing column \"a\" in {}", path.display())))?;
    let mut outcome_cols = Vec::new();
    for name in &schema.outcome_cols {
        let idx = col_of(name).ok_or_else(|| {
            Error::Schema(format!("missing outcome column {name:?} in {}", path.display()))
        })?;
        outcome_cols.push((name.clone(), idx));
    }
    let mut covariate_cols = Vec::new();
    for spec in &schema.covariates {
        let idx = col_of(&spec.name).ok_or_else(|| {
            Error::Schema(format!(
                "missing covariate column {:?} in {}",
                spec.name,
                path.display()
            ))
        })?;
        covariate_cols.push((spec.clone(), idx));
    }

    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut ys: Vec<Vec<u8>> = vec![Vec::new(); outcome_cols.len()];
    let mut numeric: Vec<Vec<Option<f64>>> = Vec::new();
    let mut categorical: Vec<Vec<Option<String>>> = Vec::new();
    for (spec, _) in &covariate_cols {
        match spec.kind {
            CovariateKind::Categorical => categorical.push(Vec::new()),
            _ => numeric.push(Vec::new()),
        }
    }

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header line
        let get = |i: usize| record.get(i).unwrap_or("");

        match get(s_col).trim() {
            "1" => s.push(1u8),
            "2" => s.push(2u8),
            other => {
                return Err(Error::Schema(format!(
                    "column s, row {row}: expected 1 or 2, got {other:?}"
                )))
            }
        }
        a.push(parse_binary(get(a_col), "a", row)?);
        for (k, (name, idx)) in outcome_cols.iter().enumerate() {
            ys[k].push(parse_binary(get(*idx), name, row)?);
        }

        let mut num_i = 0;
        let mut cat_i = 0;
        for (spec, idx) in &covariate_cols {
            let cell = get(*idx);
            match spec.kind {
                CovariateKind::Categorical => {
                    categorical[cat_i].push(if is_missing(cell, schema) {
                        None
                    } else {
                        Some(cell.to_string())
                    });
                    cat_i += 1;
                }
                CovariateKind::Binary => {
                    numeric[num_i].push(if is_missing(cell, schema) {
                        None
                    } else {
                        Some(f64::from(parse_binary(cell, &spec.name, row)?))
                    });
                    num_i += 1;
                }
                CovariateKind::Numeric => {
                    numeric[num_i].push(if is_missing(cell, schema) {
                        None
                    } else {
                        let v: f64 = cell.trim().parse().map_err(|_| {
                            Error::Schema(format!(
                                "column {}, row {row}: not a number: {cell:?}",
                                spec.name
                            ))
                        })?;
                        Some(v)
                    });
                    num_i += 1;
                }
            }
        }
    }

    if s.is_empty() {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }

    let mut covariates = Vec::new();
    let mut num_i = 0;
    let mut cat_i = 0;
    for (spec, _) in &covariate_cols {
        match spec.kind {
            CovariateKind::Categorical => {
                covariates.push(CovariateColumn::categorical(
                    &spec.name,
                    std::mem::take(&mut categorical[cat_i]),
                ));
                cat_i += 1;
            }
            kind => {
                covariates.push(CovariateColumn::numeric(
                    &spec.name,
                    kind,
                    std::mem::take(&mut numeric[num_i]),
                )?);
                num_i += 1;
            }
        }
    }

    let mut datasets = Vec::new();
    let (first_name, _) = &outcome_cols[0];
    let first = PrivateDataset::new(
        first_name,
        s,
        a,
        std::mem::take(&mut ys[0]),
        covariates,
    )?;
    for (k, (name, _)) in outcome_cols.iter().enumerate().skip(1) {
        datasets.push(first.with_outcome(name, std::mem::take(&mut ys[k]))?);
    }
    datasets.insert(0, first);
    ObservedTable::new(datasets)
}

/// Read the first (or only) outcome of a dataset file.
pub fn read_dataset(path: &Path, schema: &DatasetSchema) -> Result<PrivateDataset> {
    Ok(read_table(path, schema)?.into_datasets().remove(0))
}

fn format_cell(v: Option<f64>) -> String {
    match v {
        // f64 Display is the shortest representation that round-trips.
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write a table of privatized datasets as CSV: design columns first,
/// then one column per outcome, then covariates.
pub fn write_dataset(path: &Path, table: &ObservedTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let datasets = table.outcomes();
    let first = &datasets[0];

    let mut header = vec!["s".to_string(), "a".to_string()];
    for d in datasets {
        header.push(d.outcome_name().to_string());
    }
    for cov in first.covariates() {
        header.push(cov.name.clone());
    }
    writer.write_record(&header)?;

    for i in 0..first.n() {
        let mut record = vec![first.split()[i].to_string(), first.treatment()[i].to_string()];
        for d in datasets {
            record.push(d.response()[i].to_string());
        }
        for cov in first.covariates() {
            record.push(match &cov.data {
                CovariateData::Numeric(values) => format_cell(values[i]),
                CovariateData::Categorical(values) => {
                    values[i].clone().unwrap_or_default()
                }
            });
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Ground-truth row for one participant of a simulated trial, written to
/// the sidecar file next to the privatized data.
#[derive(Debug, Clone)]
pub struct SidecarRow {
    pub id: usize,
    pub s: u8,
    pub a: u8,
    /// Prompt code: 0 force-zero, 1 force-one, 2 report-truth.
    pub p: u8,
    /// 1 when the participant is a cheater.
    pub c: u8,
    pub behavior: String,
    pub y0: u8,
    pub y1: u8,
}

/// Write simulation ground truth. Kept in a separate file so estimation
/// can refuse to read it.
pub fn write_sidecar(path: &Path, rows: &[SidecarRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["id", "s", "a", "p", "c", "behavior", "y0", "y1"])?;
    for r in rows {
        writer.write_record([
            r.id.to_string(),
            r.s.to_string(),
            r.a.to_string(),
            r.p.to_string(),
            r.c.to_string(),
            r.behavior.clone(),
            r.y0.to_string(),
            r.y1.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a truth sidecar back, for simulation post-processing and tests.
pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let expected = ["id", "s", "a", "p", "c", "behavior", "y0", "y1"];
    if headers != expected {
        return Err(Error::Schema(format!(
            "sidecar {} has columns {headers:?}, expected {expected:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let int = |i: usize| -> Result<u8> {
            field(i)
                .parse()
                .map_err(|_| Error::Schema(format!("bad sidecar cell {:?}", field(i))))
        };
        rows.push(SidecarRow {
            id: field(0)
                .parse()
                .map_err(|_| Error::Schema(format!("bad sidecar id {:?}", field(0))))?,
            s: int(1)?,
            a: int(2)?,
            p: int(3)?,
            c: int(4)?,
            behavior: field(5),
            y0: int(6)?,
            y1: int(7)?,
        });
    }
    Ok(rows)
}
