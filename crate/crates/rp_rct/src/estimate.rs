//! Estimators for privatized trial data: the cheater rate, the
//! cheating-robust treatment effect (unadjusted and covariate-adjusted),
//! the naive difference in privatized means, Wald tests, bootstrap
//! standard errors, and covariate balance checks.

use rand::Rng;
use rayon::prelude::*;

use crate::dataio::{BalanceRow, OutcomeReport, PrivateDataset};
use crate::dataio::EstimateCell;
use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::glm::{self, FitConfig, Frame, LogisticModel, SelectionDirection};
use crate::rng::{substream, StreamKind};
use crate::stats::{quantile_sorted, sample_sd, two_sided_p};

/// Smallest cheater-rate determinant treated as identified.
const MIN_DETERMINANT: f64 = 1e-6;
/// Smallest shrinkage denominator `(1 - lambda) * m` the effect
/// estimators will divide by.
const MIN_SHRINKAGE: f64 = 1e-3;
/// Reported standard errors are floored here; hitting the floor adds a
/// warning because it means the variance estimate collapsed.
const SE_FLOOR: f64 = 1e-8;
/// Grid step for the profile likelihood used at the cheater-rate boundary.
const PROFILE_STEP: f64 = 1e-4;
/// Upper interior endpoint for the corrected cheater rate.
const LAMBDA_MAX: f64 = 1.0 - 1e-6;

/// How the effect estimators obtain the cheater rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Estimated,
    Fixed(f64),
}

/// Estimated fraction of participants who ignore their device prompt.
#[derive(Debug, Clone, Copy)]
pub struct CheaterEstimate {
    /// Final estimate, boundary-corrected into [0, 1) when needed.
    pub lambda_hat: f64,
    pub se: f64,
    /// The uncorrected plug-in value; can leave [0, 1] by sampling noise.
    pub raw_value: f64,
    /// Asymptotic per-observation variance (n times the squared se).
    pub var_asym: f64,
    pub boundary_corrected: bool,
}

impl CheaterEstimate {
    /// A known cheater rate supplied from outside, carrying no noise.
    pub fn fixed(lambda: f64) -> Result<CheaterEstimate> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "fixed cheater rate must be in [0, 1), got {lambda}"
            )));
        }
        Ok(CheaterEstimate {
            lambda_hat: lambda,
            se: 0.0,
            raw_value: lambda,
            var_asym: 0.0,
            boundary_corrected: false,
        })
    }
}

/// Treatment-effect estimate with its analytic standard error.
#[derive(Debug, Clone)]
pub struct TauEstimate {
    pub estimate: f64,
    pub se: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct WaldTest {
    pub z: f64,
    pub p_value: f64,
}

/// Two-sided Wald test of a zero effect.
pub fn wald_test(tau: &TauEstimate) -> WaldTest {
    let z = tau.estimate / tau.se;
    WaldTest {
        z,
        p_value: two_sided_p(z),
    }
}

struct SplitMeans {
    /// Fraction of rows on device 1 and 2.
    f: [f64; 2],
    /// Mean privatized response on device 1 and 2.
    pi: [f64; 2],
    /// Response-one counts and row counts, for likelihood work.
    k: [f64; 2],
    n: [f64; 2],
}

fn split_means(y: &[u8], s: &[u8], rows: &[usize]) -> Result<SplitMeans> {
    let mut k = [0.0; 2];
    let mut n = [0.0; 2];
    for &i in rows {
        let idx = usize::from(s[i]) - 1;
        n[idx] += 1.0;
        k[idx] += f64::from(y[i]);
    }
    if n[0] == 0.0 || n[1] == 0.0 {
        return Err(Error::Degenerate(
            "both device splits need at least one row".into(),
        ));
    }
    let total = n[0] + n[1];
    Ok(SplitMeans {
        f: [n[0] / total, n[1] / total],
        pi: [k[0] / n[0], k[1] / n[1]],
        k,
        n,
    })
}

fn arm_means(y: &[u8], a: &[u8], rows: &[usize]) -> Result<(f64, f64, f64)> {
    let mut k = [0.0; 2];
    let mut n = [0.0; 2];
    for &i in rows {
        let idx = usize::from(a[i]);
        n[idx] += 1.0;
        k[idx] += f64::from(y[i]);
    }
    if n[0] == 0.0 || n[1] == 0.0 {
        return Err(Error::Degenerate(
            "both treatment arms need at least one row".into(),
        ));
    }
    let f_a = n[1] / (n[0] + n[1]);
    Ok((f_a, k[1] / n[1], k[0] / n[0]))
}

/// Per-device response model under prompt-compliant honest participants
/// and cheaters who always submit zero: the response mean on device `s`
/// is `(1 - lambda) * (b_s + a_s * mu)`.
fn device_coefficients(design: &DesignSpec) -> ([f64; 2], [f64; 2]) {
    let d1 = design.device(1);
    let d2 = design.device(2);
    ([d1.truth_mass(), d2.truth_mass()], [d1.r1(), d2.r1()])
}

fn profile_log_likelihood(a: &[f64; 2], b: &[f64; 2], sm: &SplitMeans, lambda: f64) -> f64 {
    let steps = (1.0 / PROFILE_STEP).round() as usize;
    let mut best = f64::NEG_INFINITY;
    for g in 0..=steps {
        let mu = g as f64 * PROFILE_STEP;
        let mut ll = 0.0;
        for s in 0..2 {
            let pi = ((1.0 - lambda) * (b[s] + a[s] * mu)).clamp(1e-12, 1.0 - 1e-12);
            ll += sm.k[s] * pi.ln() + (sm.n[s] - sm.k[s]) * (1.0 - pi).ln();
        }
        best = best.max(ll);
    }
    best
}

/// Cheater-rate estimate over an index multiset.
///
/// Identification needs the two devices to disagree: the determinant
/// `a2*b1 - a1*b2` of the response model must be bounded away from zero.
/// When sampling noise pushes the plug-in value outside [0, 1], the
/// estimate is replaced by the best of the boundary candidates under a
/// profile binomial likelihood and flagged.
pub fn estimate_lambda_rows(
    design: &DesignSpec,
    y: &[u8],
    s: &[u8],
    rows: &[usize],
) -> Result<CheaterEstimate> {
    let (a, b) = device_coefficients(design);
    let d = design.cheater_determinant();
    if d.abs() < MIN_DETERMINANT {
        return Err(Error::Unidentified(format!(
            "devices are too similar to identify the cheater rate \
             (determinant {d:.2e})"
        )));
    }
    let sm = split_means(y, s, rows)?;
    let w1 = a[1] / d;
    let w2 = a[0] / d;
    let raw = 1.0 - w1 * sm.pi[0] + w2 * sm.pi[1];

    let q1 = sm.pi[0] * (1.0 - sm.pi[0]);
    let q2 = sm.pi[1] * (1.0 - sm.pi[1]);
    let var_asym = w1 * w1 * q1 / sm.f[0] + w2 * w2 * q2 / sm.f[1];
    let se = (var_asym / rows.len() as f64).sqrt();

    if (0.0..=1.0).contains(&raw) {
        return Ok(CheaterEstimate {
            lambda_hat: raw,
            se,
            raw_value: raw,
            var_asym,
            boundary_corrected: false,
        });
    }

    let candidates = [raw.clamp(0.0, LAMBDA_MAX), 0.0, LAMBDA_MAX];
    let mut best = candidates[0];
    let mut best_ll = f64::NEG_INFINITY;
    for cand in candidates {
        let ll = profile_log_likelihood(&a, &b, &sm, cand);
        if ll > best_ll {
            best_ll = ll;
            best = cand;
        }
    }
    Ok(CheaterEstimate {
        lambda_hat: best,
        se,
        raw_value: raw,
        var_asym,
        boundary_corrected: true,
    })
}

pub fn estimate_lambda(dataset: &PrivateDataset, design: &DesignSpec) -> Result<CheaterEstimate> {
    let rows: Vec<usize> = (0..dataset.n()).collect();
    estimate_lambda_rows(design, dataset.response(), dataset.split(), &rows)
}

fn shrinkage(design: &DesignSpec, lambda: &CheaterEstimate) -> Result<f64> {
    let denom = (1.0 - lambda.lambda_hat) * design.masking_factor();
    if denom.abs() < MIN_SHRINKAGE {
        return Err(Error::Degenerate(format!(
            "effect is not recoverable: (1 - lambda) * masking = {denom:.2e}"
        )));
    }
    Ok(denom)
}

fn floor_se(vhat: f64, n: f64, warnings: &mut Vec<String>) -> f64 {
    let se = (vhat.max(0.0) / n).sqrt();
    if se < SE_FLOOR {
        warnings.push(format!(
            "variance estimate collapsed; standard error floored at {SE_FLOOR:.0e}"
        ));
        SE_FLOOR
    } else {
        se
    }
}

/// Difference-in-privatized-means effect estimate, rescaled by the
/// cheating and masking shrinkage.
pub fn estimate_tau_h_diff_rows(
    design: &DesignSpec,
    y: &[u8],
    a: &[u8],
    rows: &[usize],
    lambda: &CheaterEstimate,
) -> Result<TauEstimate> {
    let denom = shrinkage(design, lambda)?;
    let (f_a, p1, p0) = arm_means(y, a, rows)?;
    let tau = (p1 - p0) / denom;

    let one_minus = 1.0 - lambda.lambda_hat;
    let first = (p1 * (1.0 - p1) / f_a + p0 * (1.0 - p0) / (1.0 - f_a)) / (denom * denom);
    let vhat = first + tau * tau * (2.0 + lambda.var_asym / (one_minus * one_minus));

    let mut warnings = Vec::new();
    let se = floor_se(vhat, rows.len() as f64, &mut warnings);
    Ok(TauEstimate {
        estimate: tau,
        se,
        warnings,
    })
}

pub fn estimate_tau_h_diff(
    dataset: &PrivateDataset,
    design: &DesignSpec,
    lambda: &CheaterEstimate,
) -> Result<TauEstimate> {
    let rows: Vec<usize> = (0..dataset.n()).collect();
    estimate_tau_h_diff_rows(design, dataset.response(), dataset.treatment(), &rows, lambda)
}

/// Covariate-adjusted effect estimate: an augmented inverse-propensity
/// average of the privatized response against working models `f1`, `f0`
/// (full-length prediction slices indexed by row), rescaled by the same
/// shrinkage. Uses the design assignment probability, which is known
/// exactly in a randomized trial.
pub fn estimate_tau_h_cov_rows(
    design: &DesignSpec,
    y: &[u8],
    a: &[u8],
    rows: &[usize],
    lambda: &CheaterEstimate,
    f1: &[f64],
    f0: &[f64],
) -> Result<TauEstimate> {
    let denom = shrinkage(design, lambda)?;
    let delta = design.delta();
    let n = rows.len() as f64;

    let mut sum1 = 0.0;
    let mut sum0 = 0.0;
    let mut sq_gap = 0.0;
    let mut sq_res1 = 0.0;
    let mut sq_res0 = 0.0;
    let mut n1 = 0.0;
    let mut n0 = 0.0;
    for &i in rows {
        let yi = f64::from(y[i]);
        let ai = f64::from(a[i]);
        sum1 += (yi - f1[i]) * ai / delta + f1[i];
        sum0 += (yi - f0[i]) * (1.0 - ai) / (1.0 - delta) + f0[i];
        let gap = f1[i] - f0[i];
        sq_gap += gap * gap;
        if a[i] == 1 {
            sq_res1 += (yi - f1[i]) * (yi - f1[i]);
            n1 += 1.0;
        } else {
            sq_res0 += (yi - f0[i]) * (yi - f0[i]);
            n0 += 1.0;
        }
    }
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::Degenerate(
            "both treatment arms need at least one row".into(),
        ));
    }
    let tau = (sum1 / n - sum0 / n) / denom;

    let one_minus = 1.0 - lambda.lambda_hat;
    let first =
        (sq_gap / n + (sq_res1 / n1) / delta + (sq_res0 / n0) / (1.0 - delta)) / (denom * denom);
    let vhat = first + tau * tau * (1.0 + lambda.var_asym / (one_minus * one_minus));

    let mut warnings = Vec::new();
    let se = floor_se(vhat, n, &mut warnings);
    Ok(TauEstimate {
        estimate: tau,
        se,
        warnings,
    })
}

/// Plain difference in response means with the classical two-sample
/// standard error. On privatized data this is biased toward zero; it is
/// reported for comparison only.
pub fn estimate_classical_rows(y: &[u8], a: &[u8], rows: &[usize]) -> Result<TauEstimate> {
    let (f_a, p1, p0) = arm_means(y, a, rows)?;
    let n = rows.len() as f64;
    let n1 = f_a * n;
    let n0 = n - n1;
    let vhat = p1 * (1.0 - p1) / n1 + p0 * (1.0 - p0) / n0;
    let mut warnings = Vec::new();
    let se = {
        let se = vhat.max(0.0).sqrt();
        if se < SE_FLOOR {
            warnings.push(format!(
                "variance estimate collapsed; standard error floored at {SE_FLOOR:.0e}"
            ));
            SE_FLOOR
        } else {
            se
        }
    };
    Ok(TauEstimate {
        estimate: p1 - p0,
        se,
        warnings,
    })
}

pub fn estimate_classical(dataset: &PrivateDataset) -> Result<TauEstimate> {
    let rows: Vec<usize> = (0..dataset.n()).collect();
    estimate_classical_rows(dataset.response(), dataset.treatment(), &rows)
}

/// Arm-specific working models of the privatized response, with their
/// full-sample predictions.
#[derive(Debug, Clone)]
pub struct WorkingModels {
    pub treated: LogisticModel,
    pub control: LogisticModel,
    /// Covariates present in either arm's model, sorted.
    pub included: Vec<String>,
    pub f1: Vec<f64>,
    pub f0: Vec<f64>,
    pub imputed_rows: usize,
}

/// Fit the two working models, optionally running stepwise covariate
/// selection per arm.
pub fn fit_working_models(
    dataset: &PrivateDataset,
    frame: &Frame,
    cfg: &FitConfig,
    selection: Option<SelectionDirection>,
) -> Result<WorkingModels> {
    let a = dataset.treatment();
    let yf: Vec<f64> = dataset.response().iter().map(|&v| f64::from(v)).collect();
    let rows_t: Vec<usize> = (0..dataset.n()).filter(|&i| a[i] == 1).collect();
    let rows_c: Vec<usize> = (0..dataset.n()).filter(|&i| a[i] == 0).collect();
    if rows_t.is_empty() || rows_c.is_empty() {
        return Err(Error::Degenerate(
            "both treatment arms need at least one row".into(),
        ));
    }

    let (treated, control, mut included) = match selection {
        Some(direction) => {
            let st = glm::select_aic(frame, &yf, &rows_t, cfg, direction)?;
            let sc = glm::select_aic(frame, &yf, &rows_c, cfg, direction)?;
            let mut inc = st.included;
            inc.extend(sc.included);
            (st.model, sc.model, inc)
        }
        None => {
            let all: Vec<usize> = (0..frame.col_names().len()).collect();
            let mt = glm::fit(frame, &yf, &rows_t, &all, cfg)?;
            let mc = glm::fit(frame, &yf, &rows_c, &all, cfg)?;
            let inc = frame.groups().iter().map(|g| g.name.clone()).collect();
            (mt, mc, inc)
        }
    };
    included.sort();
    included.dedup();

    let (f1, imp1) = treated.predict_all(frame);
    let (f0, imp0) = control.predict_all(frame);
    Ok(WorkingModels {
        treated,
        control,
        included,
        f1,
        f0,
        imputed_rows: imp1.max(imp0),
    })
}

/// Standardized mean differences between arms for every model column.
pub fn covariate_balance(frame: &Frame, a: &[u8]) -> Vec<BalanceRow> {
    let n = frame.n();
    let mut out = Vec::new();
    for (j, name) in frame.col_names().iter().enumerate() {
        let mut vals = [Vec::new(), Vec::new()];
        let mut missing = 0usize;
        for i in 0..n {
            let v = frame.value(i, j);
            if v.is_nan() {
                missing += 1;
            } else {
                vals[usize::from(a[i])].push(v);
            }
        }
        let (mc, mt) = (&vals[0], &vals[1]);
        let mean = |xs: &Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
        let (mean_t, mean_c, smd) = if mt.is_empty() || mc.is_empty() {
            (f64::NAN, f64::NAN, None)
        } else {
            let (mu_t, mu_c) = (mean(mt), mean(mc));
            let var = |xs: &Vec<f64>, mu: f64| {
                if xs.len() < 2 {
                    0.0
                } else {
                    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
                }
            };
            let pooled = ((var(mt, mu_t) + var(mc, mu_c)) / 2.0).sqrt();
            let smd = if pooled > 0.0 {
                Some((mu_t - mu_c) / pooled)
            } else {
                None
            };
            (mu_t, mu_c, smd)
        };
        out.push(BalanceRow {
            column: name.clone(),
            mean_treated: mean_t,
            mean_control: mean_c,
            smd,
            flagged: smd.is_some_and(|v| v.abs() > 0.1),
            missing_rate: missing as f64 / n as f64,
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 400,
            seed: 0x5eed_b007,
            confidence: 0.95,
        }
    }
}

/// Per-statistic bootstrap summary, columns in the caller's layout.
#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    pub replicates_used: usize,
    pub skipped: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

/// Nonparametric bootstrap over row indices.
///
/// `stat` maps a resampled index multiset to a vector of statistics.
/// Resamples on which `stat` fails statistically (empty arm or split,
/// failed fit) are skipped and counted; more than 1% skipped is an error.
/// Resample draws depend only on the seed and replicate number, so runs
/// are reproducible regardless of thread count.
pub fn bootstrap<F>(n: usize, cfg: &BootstrapConfig, stat: F) -> Result<BootstrapSummary>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidParameter("cannot bootstrap zero rows".into()));
    }
    if cfg.replicates < 2 {
        return Err(Error::InvalidParameter(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    if !(0.0 < cfg.confidence && cfg.confidence < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence must be in (0, 1), got {}",
            cfg.confidence
        )));
    }

    let draws: Result<Vec<Option<Vec<f64>>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(cfg.seed, StreamKind::Bootstrap, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            match stat(&idx) {
                Ok(v) => Ok(Some(v)),
                Err(e) if e.is_statistical() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let draws = draws?;

    let used: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let skipped = cfg.replicates - used.len();
    if skipped * 100 > cfg.replicates {
        return Err(Error::Bootstrap(format!(
            "{skipped} of {} bootstrap resamples were degenerate",
            cfg.replicates
        )));
    }
    if used.len() < 2 {
        return Err(Error::Bootstrap(
            "not enough usable bootstrap resamples".into(),
        ));
    }

    let k = used[0].len();
    let alpha = 1.0 - cfg.confidence;
    let mut mean = Vec::with_capacity(k);
    let mut se = Vec::with_capacity(k);
    let mut lo = Vec::with_capacity(k);
    let mut hi = Vec::with_capacity(k);
    for j in 0..k {
        let mut col: Vec<f64> = used.iter().map(|v| v[j]).collect();
        mean.push(col.iter().sum::<f64>() / col.len() as f64);
        se.push(sample_sd(&col));
        col.sort_by(|x, y| x.partial_cmp(y).unwrap());
        lo.push(quantile_sorted(&col, alpha / 2.0));
        hi.push(quantile_sorted(&col, 1.0 - alpha / 2.0));
    }
    Ok(BootstrapSummary {
        replicates_used: used.len(),
        skipped,
        mean,
        se,
        ci_lower: lo,
        ci_upper: hi,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapCell {
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Bootstrap results for the standard estimator set.
#[derive(Debug, Clone)]
pub struct StandardBootstrap {
    pub replicates_used: usize,
    pub skipped: usize,
    pub lambda: BootstrapCell,
    pub tau_diff: BootstrapCell,
    pub tau_cov: Option<BootstrapCell>,
    pub classical: Option<BootstrapCell>,
}

/// Bootstrap the full estimator pipeline on one dataset.
///
/// Working models keep the covariates chosen on the original sample;
/// each resample refits their coefficients only.
pub fn standard_bootstrap(
    dataset: &PrivateDataset,
    design: &DesignSpec,
    lambda_mode: LambdaMode,
    models: Option<(&Frame, &WorkingModels)>,
    include_classical: bool,
    cfg: &BootstrapConfig,
) -> Result<StandardBootstrap> {
    let y = dataset.response();
    let s = dataset.split();
    let a = dataset.treatment();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let fit_cfg = FitConfig {
        drop_collinear: true,
        ..FitConfig::default()
    };

    let stat = |rows: &[usize]| -> Result<Vec<f64>> {
        let lambda = match lambda_mode {
            LambdaMode::Estimated => estimate_lambda_rows(design, y, s, rows)?,
            LambdaMode::Fixed(v) => CheaterEstimate::fixed(v)?,
        };
        let mut out = vec![lambda.lambda_hat];
        out.push(estimate_tau_h_diff_rows(design, y, a, rows, &lambda)?.estimate);
        if let Some((frame, wm)) = models {
            let rows_t: Vec<usize> = rows.iter().copied().filter(|&i| a[i] == 1).collect();
            let rows_c: Vec<usize> = rows.iter().copied().filter(|&i| a[i] == 0).collect();
            let mt = glm::fit(frame, &yf, &rows_t, wm.treated.columns(), &fit_cfg)?;
            let mc = glm::fit(frame, &yf, &rows_c, wm.control.columns(), &fit_cfg)?;
            let (f1, _) = mt.predict_all(frame);
            let (f0, _) = mc.predict_all(frame);
            out.push(
                estimate_tau_h_cov_rows(design, y, a, rows, &lambda, &f1, &f0)?.estimate,
            );
        }
        if include_classical {
            out.push(estimate_classical_rows(y, a, rows)?.estimate);
        }
        Ok(out)
    };

    let summary = bootstrap(dataset.n(), cfg, stat)?;
    let cell = |j: usize| BootstrapCell {
        se: summary.se[j],
        ci_lower: summary.ci_lower[j],
        ci_upper: summary.ci_upper[j],
    };
    let mut next = 2;
    let tau_cov = models.is_some().then(|| {
        let c = cell(next);
        next += 1;
        c
    });
    let classical = include_classical.then(|| cell(next));
    Ok(StandardBootstrap {
        replicates_used: summary.replicates_used,
        skipped: summary.skipped,
        lambda: cell(0),
        tau_diff: cell(1),
        tau_cov,
        classical,
    })
}

/// Options for the one-call outcome analysis used by the command line.
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub lambda_mode: LambdaMode,
    /// Fit covariate-adjusted models when covariates are present.
    pub adjust: bool,
    /// Stepwise selection direction; None fits all covariates.
    pub selection: Option<SelectionDirection>,
    pub fit: FitConfig,
    pub classical: bool,
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            lambda_mode: LambdaMode::Estimated,
            adjust: true,
            selection: Some(SelectionDirection::Backward),
            fit: FitConfig::default(),
            classical: true,
            bootstrap: None,
        }
    }
}

/// Run the full estimator set on one outcome and package the results.
pub fn analyze_outcome(
    dataset: &PrivateDataset,
    design: &DesignSpec,
    opts: &AnalysisOptions,
) -> Result<(OutcomeReport, Option<WorkingModels>)> {
    let mut warnings = Vec::new();

    let lambda = match opts.lambda_mode {
        LambdaMode::Estimated => estimate_lambda(dataset, design)?,
        LambdaMode::Fixed(v) => CheaterEstimate::fixed(v)?,
    };
    let tau_diff = estimate_tau_h_diff(dataset, design, &lambda)?;
    warnings.extend(tau_diff.warnings.iter().cloned());
    let wald = wald_test(&tau_diff);

    let frame = Frame::from_covariates(dataset.covariates(), dataset.n())?;
    let models = if opts.adjust && !dataset.covariates().is_empty() {
        let wm = fit_working_models(dataset, &frame, &opts.fit, opts.selection)?;
        if !wm.treated.converged() || !wm.control.converged() {
            warnings.push("a working model did not converge; predictions are clamped".into());
        }
        if wm.imputed_rows > 0 {
            warnings.push(format!(
                "{} rows had missing covariates imputed with training means",
                wm.imputed_rows
            ));
        }
        Some(wm)
    } else {
        None
    };
    let tau_cov = match &models {
        Some(wm) => {
            let rows: Vec<usize> = (0..dataset.n()).collect();
            let t = estimate_tau_h_cov_rows(
                design,
                dataset.response(),
                dataset.treatment(),
                &rows,
                &lambda,
                &wm.f1,
                &wm.f0,
            )?;
            warnings.extend(t.warnings.iter().cloned());
            Some(t)
        }
        None => None,
    };
    let classical = if opts.classical {
        Some(estimate_classical(dataset)?)
    } else {
        None
    };

    let mut lambda_cell = EstimateCell::new(lambda.lambda_hat, lambda.se);
    let mut diff_cell = EstimateCell::new(tau_diff.estimate, tau_diff.se);
    let mut cov_cell = tau_cov
        .as_ref()
        .map(|t| EstimateCell::new(t.estimate, t.se));

    if let Some(bcfg) = &opts.bootstrap {
        let boot = standard_bootstrap(
            dataset,
            design,
            opts.lambda_mode,
            models.as_ref().map(|wm| (&frame, wm)),
            false,
            bcfg,
        )?;
        if boot.skipped > 0 {
            warnings.push(format!(
                "{} of {} bootstrap resamples were degenerate and skipped",
                boot.skipped,
                boot.skipped + boot.replicates_used
            ));
        }
        if opts.lambda_mode == LambdaMode::Estimated {
            lambda_cell = lambda_cell.with_ci(boot.lambda.ci_lower, boot.lambda.ci_upper);
        }
        diff_cell = diff_cell.with_ci(boot.tau_diff.ci_lower, boot.tau_diff.ci_upper);
        if let (Some(cell), Some(bc)) = (cov_cell.as_mut(), boot.tau_cov) {
            *cell = cell.with_ci(bc.ci_lower, bc.ci_upper);
        }
    }

    let report = OutcomeReport {
        outcome: dataset.outcome_name().to_string(),
        lambda: lambda_cell,
        lambda_boundary_corrected: lambda.boundary_corrected,
        tau_diff: Some(diff_cell),
        tau_cov: cov_cell,
        classical_diff: classical.map(|c| EstimateCell::new(c.estimate, c.se)),
        p_value: Some(wald.p_value),
        selected_covariates: models.as_ref().map(|wm| wm.included.clone()),
        warnings,
    };
    Ok((report, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CovariateColumn, CovariateKind};
    use crate::mechanism::FrrParams;

    fn symmetric_design(r1: f64, r2: f64) -> DesignSpec {
        DesignSpec::new(
            0.5,
            FrrParams::symmetric(r1).unwrap(),
            FrrParams::symmetric(r2).unwrap(),
        )
        .unwrap()
    }

    /// n rows per split, `ones` of them responding 1.
    fn two_split_data(per_split: usize, ones1: usize, ones2: usize) -> (Vec<u8>, Vec<u8>) {
        let mut y = Vec::new();
        let mut s = Vec::new();
        for i in 0..per_split {
            s.push(1);
            y.push(u8::from(i < ones1));
        }
        for i in 0..per_split {
            s.push(2);
            y.push(u8::from(i < ones2));
        }
        (y, s)
    }

    #[test]
    fn lambda_worked_example() {
        // Devices with forcing rates 0.3 and 0.35 give response-model
        // weights -6 and -8; split means of 0.38 on both devices imply a
        // cheater rate of 0.24.
        let design = symmetric_design(0.3, 0.35);
        let (y, s) = two_split_data(50, 19, 19);
        let rows: Vec<usize> = (0..y.len()).collect();
        let est = estimate_lambda_rows(&design, &y, &s, &rows).unwrap();
        assert!(!est.boundary_corrected);
        assert!((est.lambda_hat - 0.24).abs() < 1e-12, "{}", est.lambda_hat);

        // Delta-method variance assembled independently.
        let q = 0.38 * 0.62;
        let var = 36.0 * q / 0.5 + 64.0 * q / 0.5;
        assert!((est.var_asym - var).abs() < 1e-9);
        assert!((est.se - (var / 100.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_when_splits_match_honest_means() {
        // With no cheaters and true outcome mean mu, device s shows
        // r + (1 - 2r) * mu exactly.
        let design = symmetric_design(0.2, 0.3);
        let mu = 0.5_f64;
        let pi1: f64 = 0.2 + 0.6 * mu;
        let pi2: f64 = 0.3 + 0.4 * mu;
        let (y, s) = two_split_data(
            1000,
            (pi1 * 1000.0).round() as usize,
            (pi2 * 1000.0).round() as usize,
        );
        let rows: Vec<usize> = (0..y.len()).collect();
        let est = estimate_lambda_rows(&design, &y, &s, &rows).unwrap();
        assert!(est.lambda_hat.abs() < 1e-10, "{}", est.lambda_hat);
    }

    #[test]
    fn lambda_boundary_correction_picks_nearest_plausible_end() {
        let design = symmetric_design(0.2, 0.3);
        // Split means chosen so the plug-in value dips below zero.
        let (y, s) = two_split_data(200, 165, 145);
        let rows: Vec<usize> = (0..y.len()).collect();
        let est = estimate_lambda_rows(&design, &y, &s, &rows).unwrap();
        assert!(est.raw_value < 0.0);
        assert!(est.boundary_corrected);
        assert_eq!(est.lambda_hat, 0.0);
        assert!(est.se > 0.0);

        // Nearly all zeros pushes the plug-in value above one, and the
        // likelihood agrees a near-total cheater rate fits best.
        let (y, s) = two_split_data(200, 1, 0);
        let est = estimate_lambda_rows(&design, &y, &s, &rows).unwrap();
        assert!(est.raw_value > 1.0, "{}", est.raw_value);
        assert!(est.boundary_corrected);
        assert!(est.lambda_hat > 0.9);
    }

    #[test]
    fn near_identical_devices_are_unidentified() {
        let design = symmetric_design(0.25, 0.25 + 1e-8);
        let (y, s) = two_split_data(50, 20, 20);
        let rows: Vec<usize> = (0..y.len()).collect();
        let err = estimate_lambda_rows(&design, &y, &s, &rows).unwrap_err();
        assert!(matches!(err, Error::Unidentified(_)));
    }

    #[test]
    fn fixed_lambda_validates_range() {
        assert!(CheaterEstimate::fixed(0.0).is_ok());
        assert!(CheaterEstimate::fixed(1.0).is_err());
        assert!(CheaterEstimate::fixed(-0.1).is_err());
    }

    fn arm_data(n1: usize, ones1: usize, n0: usize, ones0: usize) -> (Vec<u8>, Vec<u8>) {
        let mut y = Vec::new();
        let mut a = Vec::new();
        for i in 0..n1 {
            a.push(1);
            y.push(u8::from(i < ones1));
        }
        for i in 0..n0 {
            a.push(0);
            y.push(u8::from(i < ones0));
        }
        (y, a)
    }

    #[test]
    fn tau_diff_worked_example() {
        // Masking factor 0.7 and a fixed cheater rate of 0.2 rescale an
        // observed difference of 0.2 to 0.2 / (0.8 * 0.7).
        let design = symmetric_design(0.2, 0.1);
        assert!((design.masking_factor() - 0.7).abs() < 1e-12);
        let (y, a) = arm_data(100, 60, 100, 40);
        let rows: Vec<usize> = (0..y.len()).collect();
        let lambda = CheaterEstimate::fixed(0.2).unwrap();
        let est = estimate_tau_h_diff_rows(&design, &y, &a, &rows, &lambda).unwrap();
        assert!((est.estimate - 0.2 / 0.56).abs() < 1e-12);

        // Variance assembled by hand from the same inputs.
        let denom2 = 0.56 * 0.56;
        let first = (0.6 * 0.4 / 0.5 + 0.4 * 0.6 / 0.5) / denom2;
        let vhat = first + est.estimate * est.estimate * 2.0;
        assert!((est.se - (vhat / 200.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tau_cov_with_flat_models_matches_diff_at_design_split() {
        let design = symmetric_design(0.2, 0.1);
        let (y, a) = arm_data(150, 90, 150, 45);
        let rows: Vec<usize> = (0..y.len()).collect();
        let lambda = CheaterEstimate::fixed(0.1).unwrap();
        let diff = estimate_tau_h_diff_rows(&design, &y, &a, &rows, &lambda).unwrap();

        // Constant predictions equal to the arm means.
        let f1 = vec![0.6; y.len()];
        let f0 = vec![0.3; y.len()];
        let cov =
            estimate_tau_h_cov_rows(&design, &y, &a, &rows, &lambda, &f1, &f0).unwrap();
        assert!((cov.estimate - diff.estimate).abs() < 1e-12);
    }

    #[test]
    fn shrinkage_denominator_guard() {
        let design = symmetric_design(0.2, 0.1);
        let (y, a) = arm_data(20, 10, 20, 5);
        let rows: Vec<usize> = (0..y.len()).collect();
        let lambda = CheaterEstimate::fixed(0.999).unwrap();
        let err = estimate_tau_h_diff_rows(&design, &y, &a, &rows, &lambda).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn classical_matches_two_sample_formula() {
        let (y, a) = arm_data(80, 48, 120, 36);
        let rows: Vec<usize> = (0..y.len()).collect();
        let est = estimate_classical_rows(&y, &a, &rows).unwrap();
        assert!((est.estimate - 0.3).abs() < 1e-12);
        let vhat: f64 = 0.6 * 0.4 / 80.0 + 0.3 * 0.7 / 120.0;
        assert!((est.se - vhat.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wald_two_sided_p() {
        let tau = TauEstimate {
            estimate: 0.2,
            se: 0.1,
            warnings: Vec::new(),
        };
        let test = wald_test(&tau);
        assert!((test.z - 2.0).abs() < 1e-12);
        // 2 * Phi(-2), within the absolute error of the tail polynomial
        assert!((test.p_value - 0.045_500_263_896_358_44).abs() < 3e-7);
    }

    #[test]
    fn balance_flags_shifted_covariate() {
        let cov = CovariateColumn::numeric(
            "x",
            CovariateKind::Numeric,
            (0..40)
                .map(|i| {
                    if i == 0 {
                        None
                    } else if i < 20 {
                        Some(f64::from(i % 2))
                    } else {
                        Some(f64::from(i % 2) + 1.0)
                    }
                })
                .collect(),
        )
        .unwrap();
        let constant = CovariateColumn::numeric(
            "c",
            CovariateKind::Numeric,
            (0..40).map(|_| Some(3.0)).collect(),
        )
        .unwrap();
        let a: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let frame = Frame::from_covariates(&[cov, constant], 40).unwrap();
        let rows = covariate_balance(&frame, &a);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].flagged);
        assert!(rows[0].smd.unwrap() > 1.0);
        assert!((rows[0].missing_rate - 0.025).abs() < 1e-12);
        assert_eq!(rows[1].smd, None);
        assert!(!rows[1].flagged);
    }

    #[test]
    fn bootstrap_se_of_a_mean_tracks_theory() {
        // 600 fixed Bernoulli outcomes with mean 0.3: the bootstrap se of
        // the mean should sit near sqrt(p q / n).
        let y: Vec<f64> = (0..600).map(|i| f64::from(u8::from(i < 180))).collect();
        let cfg = BootstrapConfig {
            replicates: 800,
            seed: 42,
            confidence: 0.95,
        };
        let summary = bootstrap(600, &cfg, |rows| {
            Ok(vec![rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64])
        })
        .unwrap();
        let theory = (0.3_f64 * 0.7 / 600.0).sqrt();
        assert!((summary.se[0] - theory).abs() / theory < 0.15);
        assert!(summary.ci_lower[0] < 0.3 && 0.3 < summary.ci_upper[0]);
        assert_eq!(summary.skipped, 0);

        // Same seed, same answers.
        let again = bootstrap(600, &cfg, |rows| {
            Ok(vec![rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64])
        })
        .unwrap();
        assert_eq!(summary.se[0].to_bits(), again.se[0].to_bits());
    }

    #[test]
    fn bootstrap_fails_when_too_many_resamples_degenerate() {
        // A tiny stratum that resampling often misses entirely.
        let cfg = BootstrapConfig {
            replicates: 200,
            seed: 7,
            confidence: 0.95,
        };
        let err = bootstrap(8, &cfg, |rows| {
            if rows.contains(&0) {
                Ok(vec![1.0])
            } else {
                Err(Error::Degenerate("stratum lost".into()))
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Bootstrap(_)));
    }

    #[test]
    fn permuting_rows_leaves_estimates_unchanged() {
        let design = symmetric_design(0.25, 0.1);
        let n = 400;
        let mut y = Vec::new();
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut rng = substream(99, StreamKind::Scratch, 3);
        for i in 0..n {
            y.push(u8::from(rng.gen::<f64>() < 0.4));
            s.push(1 + (i % 2) as u8);
            a.push(u8::from(rng.gen::<bool>()));
        }
        let rows: Vec<usize> = (0..n).collect();
        let mut shuffled = rows.clone();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let l1 = estimate_lambda_rows(&design, &y, &s, &rows).unwrap();
        let l2 = estimate_lambda_rows(&design, &y, &s, &shuffled).unwrap();
        assert_eq!(l1.lambda_hat.to_bits(), l2.lambda_hat.to_bits());
        let lam = CheaterEstimate::fixed(0.1).unwrap();
        let t1 = estimate_tau_h_diff_rows(&design, &y, &a, &rows, &lam).unwrap();
        let t2 = estimate_tau_h_diff_rows(&design, &y, &a, &shuffled, &lam).unwrap();
        assert_eq!(t1.estimate.to_bits(), t2.estimate.to_bits());
    }
}
