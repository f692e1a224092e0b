//! Self-contained logistic regression for covariate adjustment: damped
//! iteratively reweighted least squares, AIC-based stepwise covariate
//! selection, and prediction with training-mean imputation.

use serde::Serialize;

use crate::dataio::{CovariateColumn, CovariateData};
use crate::error::{Error, Result};
use crate::stats::expit;

/// Hard cap on a coefficient's magnitude before the fit is declared
/// separated and flagged non-converged.
const SEPARATION_NORM: f64 = 1e3;

/// Fitted probabilities closer to 0 or 1 than this mark a separated fit:
/// under separation the score vanishes numerically even though the
/// likelihood has no interior maximum. Must sit above the score tolerance
/// (one residual of size BOUNDARY_MU already moves the score past it).
const BOUNDARY_MU: f64 = 1e-7;

/// Prediction clamp for converged models (avoid exact 0/1).
const CLAMP_CONVERGED: f64 = 1e-12;
/// Wider clamp for non-converged (typically separated) models.
const CLAMP_FLAGGED: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Convergence threshold on the max-norm of the score vector.
    pub tol: f64,
    pub max_iter: usize,
    /// Drop collinear columns instead of failing.
    pub drop_collinear: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-8,
            max_iter: 100,
            drop_collinear: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionDirection {
    Backward,
    Forward,
}

/// Expanded numeric view of the covariates: one column per numeric or
/// binary covariate, indicator columns per non-reference level of each
/// categorical. `NaN` marks a missing cell.
#[derive(Debug, Clone)]
pub struct Frame {
    n: usize,
    col_names: Vec<String>,
    data: Vec<f64>,
    groups: Vec<Group>,
}

/// Columns belonging to one declared covariate.
#[derive(Debug, Clone)]
pub struct Group {
    pub name: String,
    pub cols: Vec<usize>,
}

impl Frame {
    /// Numbers of rows.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.col_names.len() + col]
    }

    /// Expand covariate columns into a modeling frame. Categorical levels
    /// are discovered from the data, sorted, and the first level is the
    /// reference.
    pub fn from_covariates(covariates: &[CovariateColumn], n: usize) -> Result<Frame> {
        let mut col_names = Vec::new();
        let mut groups = Vec::new();
        let mut builders: Vec<Box<dyn Fn(usize) -> f64>> = Vec::new();

        for cov in covariates {
            if cov.len() != n {
                return Err(Error::Schema(format!(
                    "covariate {} has {} rows, expected {n}",
                    cov.name,
                    cov.len()
                )));
            }
            let mut cols = Vec::new();
            match &cov.data {
                CovariateData::Numeric(values) => {
                    cols.push(col_names.len());
                    col_names.push(cov.name.clone());
                    let values = values.clone();
                    builders.push(Box::new(move |i| values[i].unwrap_or(f64::NAN)));
                }
                CovariateData::Categorical(values) => {
                    let mut levels: Vec<&String> = values.iter().flatten().collect();
                    levels.sort();
                    levels.dedup();
                    if levels.is_empty() {
                        return Err(Error::Schema(format!(
                            "covariate {} has no observed levels",
                            cov.name
                        )));
                    }
                    // Reference level is the first; one indicator per rest.
                    for level in levels.iter().skip(1) {
                        cols.push(col_names.len());
                        col_names.push(format!("{}={}", cov.name, level));
                        let values = values.clone();
                        let level = (*level).clone();
                        builders.push(Box::new(move |i| match &values[i] {
                            Some(v) => f64::from(u8::from(*v == level)),
                            None => f64::NAN,
                        }));
                    }
                }
            }
            groups.push(Group {
                name: cov.name.clone(),
                cols,
            });
        }

        let k = col_names.len();
        let mut data = vec![0.0; n * k];
        for (j, builder) in builders.iter().enumerate() {
            for i in 0..n {
                data[i * k + j] = builder(i);
            }
        }
        Ok(Frame {
            n,
            col_names,
            data,
            groups,
        })
    }

    /// Frame with no covariates, for intercept-only models.
    pub fn empty(n: usize) -> Frame {
        Frame {
            n,
            col_names: Vec::new(),
            data: Vec::new(),
            groups: Vec::new(),
        }
    }
}

/// One accepted or rejected move in a stepwise-selection path.
#[derive(Debug, Clone, Serialize)]
pub struct AicStep {
    pub action: String,
    pub covariate: Option<String>,
    pub aic: f64,
}

/// Fitted logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    /// Intercept followed by one coefficient per kept column.
    coefficients: Vec<f64>,
    /// Frame column indices of the kept columns.
    columns: Vec<usize>,
    column_names: Vec<String>,
    /// Training means of the kept columns, used to impute missing cells.
    col_means: Vec<f64>,
    dropped_collinear: Vec<String>,
    converged: bool,
    iterations: usize,
    log_likelihood: f64,
    ll_trace: Vec<f64>,
    n_obs: usize,
}

/// Serializable summary for reports.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub coefficients: Vec<(String, f64)>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub dropped_collinear: Vec<String>,
}

impl LogisticModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Frame column indices the model was fit on (collinear drops excluded).
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Accepted-step likelihood values, non-decreasing by construction.
    pub fn ll_trace(&self) -> &[f64] {
        &self.ll_trace
    }

    pub fn aic(&self) -> f64 {
        2.0 * self.coefficients.len() as f64 - 2.0 * self.log_likelihood
    }

    pub fn summary(&self) -> ModelSummary {
        let mut coefficients = vec![("(intercept)".to_string(), self.coefficients[0])];
        for (name, b) in self.column_names.iter().zip(&self.coefficients[1..]) {
            coefficients.push((name.clone(), *b));
        }
        ModelSummary {
            coefficients,
            converged: self.converged,
            iterations: self.iterations,
            log_likelihood: self.log_likelihood,
            aic: self.aic(),
            n_obs: self.n_obs,
            dropped_collinear: self.dropped_collinear.clone(),
        }
    }

    fn clamp(&self) -> f64 {
        if self.converged {
            CLAMP_CONVERGED
        } else {
            CLAMP_FLAGGED
        }
    }

    /// Predicted probability for one frame row. Missing cells are imputed
    /// with the training mean; the flag reports whether any were.
    pub fn predict_row(&self, frame: &Frame, row: usize) -> (f64, bool) {
        let mut eta = self.coefficients[0];
        let mut imputed = false;
        for (slot, &col) in self.columns.iter().enumerate() {
            let mut v = frame.value(row, col);
            if v.is_nan() {
                v = self.col_means[slot];
                imputed = true;
            }
            eta += self.coefficients[slot + 1] * v;
        }
        let c = self.clamp();
        (expit(eta).clamp(c, 1.0 - c), imputed)
    }

    /// Predictions for every frame row plus the number of rows that needed
    /// imputation.
    pub fn predict_all(&self, frame: &Frame) -> (Vec<f64>, usize) {
        let mut out = Vec::with_capacity(frame.n());
        let mut imputed_rows = 0;
        for i in 0..frame.n() {
            let (p, imputed) = self.predict_row(frame, i);
            out.push(p);
            imputed_rows += usize::from(imputed);
        }
        (out, imputed_rows)
    }
}

/// ln(1 + e^x) without overflow.
fn ln_1p_exp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_likelihood(x: &[f64], y: &[f64], p_cols: usize, beta: &[f64]) -> f64 {
    let n = y.len();
    let mut ll = 0.0;
    for i in 0..n {
        let row = &x[i * p_cols..(i + 1) * p_cols];
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        ll += y[i] * eta - ln_1p_exp(eta);
    }
    ll
}

/// Cholesky factorization; returns false when the matrix is not positive
/// definite to working precision.
fn cholesky_in_place(a: &mut [f64], p: usize) -> bool {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], b: &mut [f64], p: usize) {
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * p + k] * b[k];
        }
        b[i] = v / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in (i + 1)..p {
            v -= l[k * p + i] * b[k];
        }
        b[i] = v / l[i * p + i];
    }
}

/// Sequentially detect collinear columns of the Gram matrix: a column
/// whose residual variance after projection on earlier columns vanishes.
fn collinear_columns(gram: &[f64], p: usize) -> Vec<usize> {
    let mut l = gram.to_vec();
    let mut dropped = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for j in 0..p {
        let mut d = l[j * p + j];
        for &k in &active {
            d -= l[j * p + k] * l[j * p + k];
        }
        let scale = gram[j * p + j].max(1.0);
        if d <= 1e-10 * scale {
            dropped.push(j);
            continue;
        }
        let dsq = d.sqrt();
        l[j * p + j] = dsq;
        for i in (j + 1)..p {
            let mut v = l[i * p + j];
            for &k in &active {
                v -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = v / dsq;
        }
        active.push(j);
    }
    dropped
}

/// Fit a logistic regression of `y` on the intercept plus the given frame
/// columns, over the given row subset, by damped IRLS.
///
/// Missing cells are imputed with the training (row-subset) mean of their
/// column, and those means are stored in the model so prediction imputes
/// identically.
pub fn fit(
    frame: &Frame,
    y: &[f64],
    rows: &[usize],
    cols: &[usize],
    cfg: &FitConfig,
) -> Result<LogisticModel> {
    if rows.is_empty() {
        return Err(Error::Degenerate("no rows to fit a model on".into()));
    }
    if y.len() != frame.n() {
        return Err(Error::InvalidParameter(format!(
            "response length {} does not match frame rows {}",
            y.len(),
            frame.n()
        )));
    }
    for &i in rows {
        let v = y[i];
        if v != 0.0 && v != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "logistic response must be 0 or 1, got {v} at row {i}"
            )));
        }
    }

    // Training means for imputation.
    let mut means = Vec::with_capacity(cols.len());
    for &c in cols {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &i in rows {
            let v = frame.value(i, c);
            if !v.is_nan() {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Model(format!(
                "column {} has no observed values in the training rows",
                frame.col_names()[c]
            )));
        }
        means.push(sum / count as f64);
    }

    let n = rows.len();
    let build = |kept: &[usize]| -> (Vec<f64>, usize) {
        let p = 1 + kept.len();
        let mut x = vec![0.0; n * p];
        for (ri, &i) in rows.iter().enumerate() {
            x[ri * p] = 1.0;
            for (slot, &ci) in kept.iter().enumerate() {
                let c = cols[ci];
                let mut v = frame.value(i, c);
                if v.is_nan() {
                    v = means[ci];
                }
                x[ri * p + slot + 1] = v;
            }
        }
        (x, p)
    };

    // Collinearity screen on the imputed design.
    let all: Vec<usize> = (0..cols.len()).collect();
    let (x0, p0) = build(&all);
    let mut gram = vec![0.0; p0 * p0];
    for i in 0..n {
        let row = &x0[i * p0..(i + 1) * p0];
        for a in 0..p0 {
            for b in a..p0 {
                gram[a * p0 + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p0 {
        for b in 0..a {
            gram[a * p0 + b] = gram[b * p0 + a];
        }
    }
    let collinear = collinear_columns(&gram, p0);
    let (x, p, kept): (Vec<f64>, usize, Vec<usize>) = if collinear.is_empty() {
        (x0, p0, all.clone())
    } else {
        let names: Vec<String> = collinear
            .iter()
            .map(|&j| {
                if j == 0 {
                    "(intercept)".to_string()
                } else {
                    frame.col_names()[cols[j - 1]].clone()
                }
            })
            .collect();
        if !cfg.drop_collinear {
            return Err(Error::Model(format!(
                "design matrix is rank deficient (collinear: {}); enable \
                 drop_collinear to fit on a maximal independent subset",
                names.join(", ")
            )));
        }
        let kept: Vec<usize> = all
            .iter()
            .copied()
            .filter(|ci| !collinear.contains(&(ci + 1)))
            .collect();
        let (x, p) = build(&kept);
        (x, p, kept)
    };
    let dropped_names: Vec<String> = all
        .iter()
        .filter(|ci| !kept.contains(ci))
        .map(|&ci| frame.col_names()[cols[ci]].clone())
        .collect();

    let yr: Vec<f64> = rows.iter().map(|&i| y[i]).collect();

    let mut beta = vec![0.0; p];
    let mut ll = log_likelihood(&x, &yr, p, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    loop {
        // Score and expected information at the current beta.
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let r = yr[i] - mu;
            for a in 0..p {
                score[a] += row[a] * r;
                for b in a..p {
                    info[a * p + b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[a * p + b] = info[b * p + a];
            }
        }

        if score.iter().map(|s| s.abs()).fold(0.0, f64::max) < cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }

        let mut l = info;
        if !cholesky_in_place(&mut l, p) {
            break;
        }
        let mut dir = score.clone();
        cholesky_solve(&l, &mut dir, p);
        // Largest likelihood gain the full Newton step could deliver.
        let decrement: f64 = score.iter().zip(&dir).map(|(s, d)| s * d).sum();

        // Step halving keeps the likelihood non-decreasing.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            if cand == beta {
                // The scaled step has underflowed against beta; further
                // halving can only reproduce the same point.
                break;
            }
            let cand_ll = log_likelihood(&x, &yr, p, &cand);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t /= 2.0;
        }
        if !accepted {
            // The search cannot move. When even the full step could not
            // have raised the log-likelihood by one unit of rounding
            // noise, the score tolerance is unreachable in floating point
            // and the current point already maximizes the likelihood to
            // machine precision.
            converged = decrement / 2.0 <= (ll.abs() + 1.0) * f64::EPSILON;
            break;
        }
        trace.push(ll);
        iterations += 1;

        if beta.iter().map(|b| b.abs()).fold(0.0, f64::max) > SEPARATION_NORM {
            // Likely separation: coefficients are running away.
            break;
        }
    }

    if converged {
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            if !(BOUNDARY_MU..=1.0 - BOUNDARY_MU).contains(&mu) {
                converged = false;
                break;
            }
        }
    }

    let columns: Vec<usize> = kept.iter().map(|&ci| cols[ci]).collect();
    let column_names: Vec<String> = columns
        .iter()
        .map(|&c| frame.col_names()[c].clone())
        .collect();
    let col_means: Vec<f64> = kept.iter().map(|&ci| means[ci]).collect();

    Ok(LogisticModel {
        coefficients: beta,
        columns,
        column_names,
        col_means,
        dropped_collinear: dropped_names,
        converged,
        iterations,
        log_likelihood: ll,
        ll_trace: trace,
        n_obs: n,
    })
}

/// Result of stepwise selection: the chosen model, which covariates made
/// it in, and the walk that got there.
#[derive(Debug, Clone)]
pub struct Selection {
    pub model: LogisticModel,
    pub included: Vec<String>,
    pub path: Vec<AicStep>,
}

/// Stepwise covariate selection by AIC over whole covariates (a
/// categorical moves with all its indicator columns).
///
/// Backward starts from all covariates and repeatedly drops the one whose
/// removal lowers AIC the most; forward starts from the intercept and
/// adds. Ties are broken by covariate index, so the path is deterministic.
pub fn select_aic(
    frame: &Frame,
    y: &[f64],
    rows: &[usize],
    cfg: &FitConfig,
    direction: SelectionDirection,
) -> Result<Selection> {
    let groups = frame.groups();
    let fit_active = |active: &[bool]| -> Result<LogisticModel> {
        let cols: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(g, _)| active[*g])
            .flat_map(|(_, grp)| grp.cols.iter().copied())
            .collect();
        fit(frame, y, rows, &cols, cfg)
    };

    let mut active = vec![direction == SelectionDirection::Backward; groups.len()];
    let mut current = fit_active(&active)?;
    let mut path = vec![AicStep {
        action: "start".into(),
        covariate: None,
        aic: current.aic(),
    }];

    loop {
        let mut best: Option<(usize, LogisticModel)> = None;
        for g in 0..groups.len() {
            let eligible = match direction {
                SelectionDirection::Backward => active[g],
                SelectionDirection::Forward => !active[g],
            };
            if !eligible || groups[g].cols.is_empty() {
                continue;
            }
            let mut cand_active = active.clone();
            cand_active[g] = !cand_active[g];
            let cand = fit_active(&cand_active)?;
            // Strict inequality: on ties the earliest covariate wins.
            if best.as_ref().map_or(true, |(_, b)| cand.aic() < b.aic()) {
                best = Some((g, cand));
            }
        }
        match best {
            Some((g, model)) if model.aic() < current.aic() => {
                active[g] = !active[g];
                path.push(AicStep {
                    action: match direction {
                        SelectionDirection::Backward => "drop".into(),
                        SelectionDirection::Forward => "add".into(),
                    },
                    covariate: Some(groups[g].name.clone()),
                    aic: model.aic(),
                });
                current = model;
            }
            _ => break,
        }
    }

    let included = groups
        .iter()
        .enumerate()
        .filter(|(g, _)| active[*g])
        .map(|(_, grp)| grp.name.clone())
        .collect();
    Ok(Selection {
        model: current,
        included,
        path,
    })
}
