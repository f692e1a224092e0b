//! Synthetic trial generation: a covariate population, logistic potential
//! outcomes, cheater assignment and behaviors, the two-device reporting
//! protocol, and a replication driver for Monte Carlo studies.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{CovariateColumn, CovariateKind, PrivateDataset, SidecarRow};
use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_classical, estimate_lambda, estimate_tau_h_diff, estimate_tau_h_cov_rows,
    fit_working_models, wald_test, CheaterEstimate, LambdaMode,
};
use crate::glm::{FitConfig, Frame, SelectionDirection};
use crate::mechanism::{privatize, sample_prompt, Prompt};
use crate::rng::{substream, StreamKind};
use crate::stats::expit;

/// What a cheater submits instead of following the device prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheaterBehavior {
    /// Always submits 0.
    AlwaysZero,
    /// Always submits 1.
    AlwaysOne,
    /// Ignores the prompt and submits the opposite of the true outcome.
    TruthFlip,
    /// Ignores the prompt and submits a fair coin flip.
    Random,
    /// Obeys forced prompts but flips the truth when asked to report it.
    ForcedOnly,
    /// Submits 1 when treated and 0 otherwise.
    TreatmentDependent,
}

impl CheaterBehavior {
    pub fn as_str(self) -> &'static str {
        match self {
            CheaterBehavior::AlwaysZero => "always_zero",
            CheaterBehavior::AlwaysOne => "always_one",
            CheaterBehavior::TruthFlip => "truth_flip",
            CheaterBehavior::Random => "random",
            CheaterBehavior::ForcedOnly => "forced_only",
            CheaterBehavior::TreatmentDependent => "treatment_dependent",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Bernoulli { p: f64 },
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, sd: f64 },
    Categorical { levels: Vec<String>, probs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCovariate {
    pub name: String,
    pub generator: Generator,
    /// Log-odds contribution per unit, for the numeric generators.
    #[serde(default)]
    pub coefficient: f64,
    /// Log-odds contribution per non-reference level, for categorical.
    #[serde(default)]
    pub level_coefficients: Vec<f64>,
    /// Fraction of released cells blanked at random.
    #[serde(default)]
    pub missing_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default)]
    pub covariates: Vec<SimCovariate>,
    pub intercept: f64,
    /// Treatment shift of the outcome log-odds.
    pub treatment_log_odds: f64,
}

/// Ties cheating to the outcome model: the cheater propensity is
/// `expit(c0 + strength * g(x))` where `g` is the covariate part of the
/// outcome log-odds and `c0` is solved so the sample-average propensity
/// equals the configured rate exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceConfig {
    pub strength: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheaterConfig {
    pub rate: f64,
    #[serde(default)]
    pub behaviors: Vec<BehaviorWeight>,
    #[serde(default)]
    pub dependence: Option<DependenceConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorWeight {
    pub kind: CheaterBehavior,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub design: DesignSpec,
    pub population: PopulationConfig,
    pub cheaters: CheaterConfig,
    #[serde(default = "default_outcome_name")]
    pub outcome_name: String,
}

fn default_outcome_name() -> String {
    "y_tilde".to_string()
}

fn cfg_err(pointer: &str, message: impl Into<String>) -> Error {
    Error::config(pointer, message.into())
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> Result<SimulationConfig> {
        let config: SimulationConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(cfg_err("/n", "need at least 2 participants"));
        }
        if self.outcome_name.is_empty() {
            return Err(cfg_err("/outcome_name", "outcome name is empty"));
        }
        let p = &self.population;
        if !p.intercept.is_finite() {
            return Err(cfg_err("/population/intercept", "must be finite"));
        }
        if !p.treatment_log_odds.is_finite() {
            return Err(cfg_err("/population/treatment_log_odds", "must be finite"));
        }
        let mut names: Vec<&str> = Vec::new();
        for (i, cov) in p.covariates.iter().enumerate() {
            let at = |field: &str| format!("/population/covariates/{i}/{field}");
            if cov.name.is_empty() {
                return Err(cfg_err(&at("name"), "covariate name is empty"));
            }
            if names.contains(&cov.name.as_str()) {
                return Err(cfg_err(&at("name"), format!("duplicate name {:?}", cov.name)));
            }
            names.push(&cov.name);
            if !cov.coefficient.is_finite() {
                return Err(cfg_err(&at("coefficient"), "must be finite"));
            }
            if !(0.0..1.0).contains(&cov.missing_rate) {
                return Err(cfg_err(&at("missing_rate"), "must be in [0, 1)"));
            }
            match &cov.generator {
                Generator::Bernoulli { p } => {
                    if !(0.0..=1.0).contains(p) {
                        return Err(cfg_err(&at("generator/p"), "must be in [0, 1]"));
                    }
                }
                Generator::Uniform { low, high } => {
                    if !(low.is_finite() && high.is_finite() && low < high) {
                        return Err(cfg_err(&at("generator"), "need low < high, both finite"));
                    }
                }
                Generator::Gaussian { mean, sd } => {
                    if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                        return Err(cfg_err(&at("generator"), "need finite mean and sd > 0"));
                    }
                }
                Generator::Categorical { levels, probs } => {
                    if levels.is_empty() {
                        return Err(cfg_err(&at("generator/levels"), "no levels"));
                    }
                    let mut sorted = levels.clone();
                    sorted.sort();
                    sorted.dedup();
                    if sorted.len() != levels.len() {
                        return Err(cfg_err(&at("generator/levels"), "duplicate level"));
                    }
                    if probs.len() != levels.len() {
                        return Err(cfg_err(
                            &at("generator/probs"),
                            "one probability per level required",
                        ));
                    }
                    if probs.iter().any(|q| !q.is_finite() || *q < 0.0) {
                        return Err(cfg_err(&at("generator/probs"), "negative or non-finite"));
                    }
                    if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return Err(cfg_err(&at("generator/probs"), "must sum to 1"));
                    }
                    if cov.level_coefficients.len() + 1 != levels.len() {
                        return Err(cfg_err(
                            &at("level_coefficients"),
                            "need one coefficient per non-reference level",
                        ));
                    }
                    if cov.level_coefficients.iter().any(|c| !c.is_finite()) {
                        return Err(cfg_err(&at("level_coefficients"), "must be finite"));
                    }
                }
            }
            if !matches!(cov.generator, Generator::Categorical { .. })
                && !cov.level_coefficients.is_empty()
            {
                return Err(cfg_err(
                    &at("level_coefficients"),
                    "only categorical covariates take level coefficients",
                ));
            }
        }
        let c = &self.cheaters;
        if !(0.0..1.0).contains(&c.rate) {
            return Err(cfg_err("/cheaters/rate", "must be in [0, 1)"));
        }
        if c.rate > 0.0 {
            if c.behaviors.is_empty() {
                return Err(cfg_err(
                    "/cheaters/behaviors",
                    "a positive cheater rate needs at least one behavior",
                ));
            }
            let mut total = 0.0;
            for (i, b) in c.behaviors.iter().enumerate() {
                if !b.weight.is_finite() || b.weight < 0.0 {
                    return Err(cfg_err(
                        &format!("/cheaters/behaviors/{i}/weight"),
                        "must be finite and nonnegative",
                    ));
                }
                total += b.weight;
            }
            if total <= 0.0 {
                return Err(cfg_err("/cheaters/behaviors", "weights sum to zero"));
            }
        }
        if let Some(dep) = &c.dependence {
            if !dep.strength.is_finite() {
                return Err(cfg_err("/cheaters/dependence/strength", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Realized ground truth of one simulated trial.
#[derive(Debug, Clone, Copy)]
pub struct TrialTruth {
    /// Mean potential-outcome contrast among honest participants.
    pub tau_h: f64,
    /// Same contrast over everyone.
    pub tau_all: f64,
    /// Realized cheater fraction.
    pub lambda: f64,
    /// Difference in realized true-outcome means between arms, i.e. the
    /// estimate a classical analysis would produce without privatization.
    pub true_outcome_diff: f64,
}

#[derive(Debug, Clone)]
pub struct TrialData {
    pub dataset: PrivateDataset,
    pub sidecar: Vec<SidecarRow>,
    pub truth: TrialTruth,
}

enum Value {
    Num(f64),
    Cat(usize),
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller, cosine branch.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn draw_value<R: Rng + ?Sized>(generator: &Generator, rng: &mut R) -> Value {
    match generator {
        Generator::Bernoulli { p } => Value::Num(f64::from(u8::from(rng.gen::<f64>() < *p))),
        Generator::Uniform { low, high } => Value::Num(rng.gen_range(*low..*high)),
        Generator::Gaussian { mean, sd } => Value::Num(mean + sd * standard_normal(rng)),
        Generator::Categorical { probs, .. } => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (k, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    return Value::Cat(k);
                }
            }
            Value::Cat(probs.len() - 1)
        }
    }
}

fn contribution(cov: &SimCovariate, value: &Value) -> f64 {
    match value {
        Value::Num(v) => cov.coefficient * v,
        Value::Cat(0) => 0.0,
        Value::Cat(k) => cov.level_coefficients[k - 1],
    }
}

/// Solve `mean(expit(c0 + g)) = rate` for the intercept by bisection.
fn calibrate_intercept(g: &[f64], rate: f64) -> f64 {
    let mean_at = |c0: f64| g.iter().map(|&v| expit(c0 + v)).sum::<f64>() / g.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate one complete trial: population, assignment, potential
/// outcomes, cheater mix, device prompts, and submitted responses.
pub fn run_trial<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<TrialData> {
    config.validate()?;
    let n = config.n;
    let design = &config.design;
    let pop = &config.population;

    // Population covariates and their outcome-model contributions.
    let mut values: Vec<Vec<Value>> = Vec::with_capacity(pop.covariates.len());
    for cov in &pop.covariates {
        values.push((0..n).map(|_| draw_value(&cov.generator, rng)).collect());
    }
    let mut g = vec![0.0; n];
    for (cov, col) in pop.covariates.iter().zip(&values) {
        for (gi, v) in g.iter_mut().zip(col) {
            *gi += contribution(cov, v);
        }
    }

    // Assignment and coupled potential outcomes.
    let mut a = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for gi in &g {
        a.push(u8::from(rng.gen::<f64>() < design.delta()));
        let p0 = expit(pop.intercept + gi);
        let p1 = expit(pop.intercept + gi + pop.treatment_log_odds);
        let u: f64 = rng.gen();
        y0.push(u8::from(u < p0));
        y1.push(u8::from(u < p1));
    }

    // Cheater status, optionally tied to the outcome model.
    let rate = config.cheaters.rate;
    let cheater_prob: Vec<f64> = match (&config.cheaters.dependence, rate) {
        (_, 0.0) => vec![0.0; n],
        (None, _) => vec![rate; n],
        (Some(dep), _) => {
            let scaled: Vec<f64> = g.iter().map(|&v| dep.strength * v).collect();
            let c0 = calibrate_intercept(&scaled, rate);
            scaled.iter().map(|&v| expit(c0 + v)).collect()
        }
    };
    let c: Vec<u8> = cheater_prob
        .iter()
        .map(|&p| u8::from(rng.gen::<f64>() < p))
        .collect();

    let weights: Vec<f64> = config.cheaters.behaviors.iter().map(|b| b.weight).collect();
    let weight_sum: f64 = weights.iter().sum();
    let draw_behavior = |rng: &mut R| -> CheaterBehavior {
        let u: f64 = rng.gen::<f64>() * weight_sum;
        let mut acc = 0.0;
        for b in &config.cheaters.behaviors {
            acc += b.weight;
            if u < acc {
                return b.kind;
            }
        }
        config.cheaters.behaviors.last().unwrap().kind
    };

    // Device splits, prompts, and submitted responses.
    let mut s = Vec::with_capacity(n);
    let mut y_tilde = Vec::with_capacity(n);
    let mut sidecar = Vec::with_capacity(n);
    for i in 0..n {
        let split = 1 + u8::from(rng.gen::<bool>());
        let device = design.device(split);
        let prompt = sample_prompt(device, rng);
        let y_true = if a[i] == 1 { y1[i] } else { y0[i] };
        let (report, behavior_label) = if c[i] == 1 {
            let behavior = draw_behavior(rng);
            let report = match behavior {
                CheaterBehavior::AlwaysZero => 0,
                CheaterBehavior::AlwaysOne => 1,
                CheaterBehavior::TruthFlip => 1 - y_true,
                CheaterBehavior::Random => u8::from(rng.gen::<bool>()),
                CheaterBehavior::ForcedOnly => match prompt {
                    Prompt::ReportTruth => 1 - y_true,
                    forced => privatize(y_true, forced),
                },
                CheaterBehavior::TreatmentDependent => a[i],
            };
            (report, behavior.as_str())
        } else {
            (privatize(y_true, prompt), "honest")
        };
        s.push(split);
        y_tilde.push(report);
        sidecar.push(SidecarRow {
            id: i,
            s: split,
            a: a[i],
            p: prompt.code(),
            c: c[i],
            behavior: behavior_label.to_string(),
            y0: y0[i],
            y1: y1[i],
        });
    }

    // Release covariates, blanking cells at the configured rates.
    let mut released = Vec::with_capacity(pop.covariates.len());
    for (cov, col) in pop.covariates.iter().zip(values.iter_mut()) {
        let mut keep = vec![true; n];
        if cov.missing_rate > 0.0 {
            for k in keep.iter_mut() {
                *k = rng.gen::<f64>() >= cov.missing_rate;
            }
        }
        match &cov.generator {
            Generator::Categorical { levels, .. } => {
                let data: Vec<Option<String>> = col
                    .iter()
                    .zip(&keep)
                    .map(|(v, &k)| match v {
                        Value::Cat(idx) if k => Some(levels[*idx].clone()),
                        _ => None,
                    })
                    .collect();
                released.push(CovariateColumn::categorical(&cov.name, data));
            }
            generator => {
                let kind = if matches!(generator, Generator::Bernoulli { .. }) {
                    CovariateKind::Binary
                } else {
                    CovariateKind::Numeric
                };
                let data: Vec<Option<f64>> = col
                    .iter()
                    .zip(&keep)
                    .map(|(v, &k)| match v {
                        Value::Num(x) if k => Some(*x),
                        _ => None,
                    })
                    .collect();
                released.push(CovariateColumn::numeric(&cov.name, kind, data)?);
            }
        }
    }

    let dataset = PrivateDataset::new(&config.outcome_name, s, a.clone(), y_tilde, released)?;

    // Realized truth.
    let mut honest_sum = 0.0;
    let mut honest_n = 0.0;
    let mut all_sum = 0.0;
    let mut arm_sum = [0.0; 2];
    let mut arm_n = [0.0; 2];
    for i in 0..n {
        let contrast = f64::from(y1[i]) - f64::from(y0[i]);
        all_sum += contrast;
        if c[i] == 0 {
            honest_sum += contrast;
            honest_n += 1.0;
        }
        let arm = usize::from(a[i]);
        arm_n[arm] += 1.0;
        arm_sum[arm] += f64::from(if a[i] == 1 { y1[i] } else { y0[i] });
    }
    if honest_n == 0.0 {
        return Err(Error::Degenerate("no honest participants drawn".into()));
    }
    let true_outcome_diff = if arm_n[0] > 0.0 && arm_n[1] > 0.0 {
        arm_sum[1] / arm_n[1] - arm_sum[0] / arm_n[0]
    } else {
        f64::NAN
    };
    let truth = TrialTruth {
        tau_h: honest_sum / honest_n,
        tau_all: all_sum / n as f64,
        lambda: c.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64,
        true_outcome_diff,
    };

    Ok(TrialData {
        dataset,
        sidecar,
        truth,
    })
}

/// Options for the replication driver.
#[derive(Debug, Clone)]
pub struct ReplicationOptions {
    pub replicates: usize,
    pub seed: u64,
    pub lambda_mode: LambdaMode,
    /// Fit covariate-adjusted working models each replicate.
    pub adjust: bool,
    pub selection: Option<SelectionDirection>,
    pub classical: bool,
}

impl Default for ReplicationOptions {
    fn default() -> Self {
        ReplicationOptions {
            replicates: 200,
            seed: 1,
            lambda_mode: LambdaMode::Estimated,
            adjust: false,
            selection: Some(SelectionDirection::Backward),
            classical: false,
        }
    }
}

/// One replicate's estimates next to its realized truth.
#[derive(Debug, Clone)]
pub struct ReplicateRow {
    pub lambda_raw: f64,
    pub lambda_hat: f64,
    pub lambda_se: f64,
    pub boundary_corrected: bool,
    pub tau_diff: f64,
    pub tau_diff_se: f64,
    pub wald_p: f64,
    pub tau_cov: Option<f64>,
    pub tau_cov_se: Option<f64>,
    pub classical: Option<f64>,
    pub classical_se: Option<f64>,
    pub truth: TrialTruth,
}

/// Run `replicates` simulated trials and estimate each one.
///
/// Replicate r draws from an independent substream of the seed, so
/// results do not depend on thread count or scheduling.
pub fn replicate(config: &SimulationConfig, opts: &ReplicationOptions) -> Result<Vec<ReplicateRow>> {
    config.validate()?;
    (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(opts.seed, StreamKind::Replicate, r as u64);
            let trial = run_trial(config, &mut rng)?;
            let dataset = &trial.dataset;
            let design = &config.design;

            let lambda = match opts.lambda_mode {
                LambdaMode::Estimated => estimate_lambda(dataset, design)?,
                LambdaMode::Fixed(v) => CheaterEstimate::fixed(v)?,
            };
            let diff = estimate_tau_h_diff(dataset, design, &lambda)?;
            let wald = wald_test(&diff);

            let (tau_cov, tau_cov_se) = if opts.adjust && !dataset.covariates().is_empty() {
                let frame = Frame::from_covariates(dataset.covariates(), dataset.n())?;
                let wm = fit_working_models(dataset, &frame, &FitConfig::default(), opts.selection)?;
                let rows: Vec<usize> = (0..dataset.n()).collect();
                let cov = estimate_tau_h_cov_rows(
                    design,
                    dataset.response(),
                    dataset.treatment(),
                    &rows,
                    &lambda,
                    &wm.f1,
                    &wm.f0,
                )?;
                (Some(cov.estimate), Some(cov.se))
            } else {
                (None, None)
            };
            let (classical, classical_se) = if opts.classical {
                let c = estimate_classical(dataset)?;
                (Some(c.estimate), Some(c.se))
            } else {
                (None, None)
            };

            Ok(ReplicateRow {
                lambda_raw: lambda.raw_value,
                lambda_hat: lambda.lambda_hat,
                lambda_se: lambda.se,
                boundary_corrected: lambda.boundary_corrected,
                tau_diff: diff.estimate,
                tau_diff_se: diff.se,
                wald_p: wald.p_value,
                tau_cov,
                tau_cov_se,
                classical,
                classical_se,
                truth: trial.truth,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::FrrParams;

    fn base_config(n: usize, rate: f64) -> SimulationConfig {
        SimulationConfig {
            n,
            design: DesignSpec::new(
                0.5,
                FrrParams::symmetric(0.2).unwrap(),
                FrrParams::symmetric(0.1).unwrap(),
            )
            .unwrap(),
            population: PopulationConfig {
                covariates: vec![],
                intercept: 0.0,
                treatment_log_odds: 0.8,
            },
            cheaters: CheaterConfig {
                rate,
                behaviors: vec![BehaviorWeight {
                    kind: CheaterBehavior::AlwaysZero,
                    weight: 1.0,
                }],
                dependence: None,
            },
            outcome_name: "y_tilde".into(),
        }
    }

    #[test]
    fn config_validation_points_at_the_problem() {
        let mut config = base_config(100, 0.2);
        config.cheaters.rate = 1.5;
        let err = config.validate().unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/cheaters/rate"),
            other => panic!("expected config error, got {other:?}"),
        }

        let mut config = base_config(100, 0.0);
        config.population.covariates.push(SimCovariate {
            name: "site".into(),
            generator: Generator::Categorical {
                levels: vec!["a".into(), "b".into(), "c".into()],
                probs: vec![0.5, 0.3, 0.2],
            },
            coefficient: 0.0,
            level_coefficients: vec![0.1],
            missing_rate: 0.0,
        });
        let err = config.validate().unwrap_err();
        match err {
            Error::Config { pointer, .. } => {
                assert_eq!(pointer, "/population/covariates/0/level_coefficients")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "n": 400,
            "design": {
                "delta": 0.5,
                "frr1": {"r0": 0.2, "r1": 0.2},
                "frr2": {"r0": 0.1, "r1": 0.1}
            },
            "population": {
                "covariates": [
                    {"name": "x1", "generator": {"kind": "bernoulli", "p": 0.5},
                     "coefficient": 1.2},
                    {"name": "x2", "generator": {"kind": "gaussian", "mean": 0.0, "sd": 1.0},
                     "coefficient": 0.8, "missing_rate": 0.05}
                ],
                "intercept": -0.2,
                "treatment_log_odds": 0.9
            },
            "cheaters": {
                "rate": 0.2,
                "behaviors": [{"kind": "always_zero", "weight": 1.0}],
                "dependence": {"strength": 0.5}
            }
        }"#;
        let config = SimulationConfig::from_json(text).unwrap();
        assert_eq!(config.outcome_name, "y_tilde");
        assert_eq!(config.population.covariates.len(), 2);
        assert!(config.cheaters.dependence.is_some());

        let bad = text.replace("\"rate\": 0.2", "\"rate\": -0.1");
        assert!(SimulationConfig::from_json(&bad).is_err());
    }

    #[test]
    fn trial_is_deterministic_per_seed() {
        let config = base_config(300, 0.25);
        let mut rng1 = substream(11, StreamKind::Replicate, 0);
        let mut rng2 = substream(11, StreamKind::Replicate, 0);
        let t1 = run_trial(&config, &mut rng1).unwrap();
        let t2 = run_trial(&config, &mut rng2).unwrap();
        assert_eq!(t1.dataset.response(), t2.dataset.response());
        assert_eq!(t1.dataset.split(), t2.dataset.split());
        assert_eq!(t1.truth.lambda, t2.truth.lambda);

        let mut rng3 = substream(11, StreamKind::Replicate, 1);
        let t3 = run_trial(&config, &mut rng3).unwrap();
        assert_ne!(t1.dataset.response(), t3.dataset.response());
    }

    #[test]
    fn honest_reports_respect_prompts() {
        let config = base_config(2000, 0.3);
        let mut rng = substream(12, StreamKind::Replicate, 0);
        let trial = run_trial(&config, &mut rng).unwrap();
        for (i, row) in trial.sidecar.iter().enumerate() {
            let report = trial.dataset.response()[i];
            assert_eq!(row.id, i);
            if row.behavior == "honest" {
                let y_true = if row.a == 1 { row.y1 } else { row.y0 };
                let expected = match row.p {
                    0 => 0,
                    1 => 1,
                    _ => y_true,
                };
                assert_eq!(report, expected);
                assert_eq!(row.c, 0);
            } else {
                assert_eq!(row.c, 1);
                assert_eq!(row.behavior, "always_zero");
                assert_eq!(report, 0);
            }
        }
    }

    #[test]
    fn realized_rates_track_configuration() {
        let mut config = base_config(20000, 0.3);
        config.population.covariates.push(SimCovariate {
            name: "x".into(),
            generator: Generator::Gaussian { mean: 2.0, sd: 0.5 },
            coefficient: 0.4,
            level_coefficients: vec![],
            missing_rate: 0.1,
        });
        let mut rng = substream(13, StreamKind::Replicate, 0);
        let trial = run_trial(&config, &mut rng).unwrap();

        // Cheater rate within 4 standard errors.
        let se = (0.3 * 0.7 / 20000.0_f64).sqrt();
        assert!((trial.truth.lambda - 0.3).abs() < 4.0 * se);

        // Missingness close to its configuration.
        let missing = trial.dataset.covariates()[0].data.missing_count();
        assert!((missing as f64 / 20000.0 - 0.1).abs() < 0.01);

        // Covariate mean near its generator mean.
        match &trial.dataset.covariates()[0].data {
            crate::dataio::CovariateData::Numeric(vals) => {
                let seen: Vec<f64> = vals.iter().flatten().copied().collect();
                let mean = seen.iter().sum::<f64>() / seen.len() as f64;
                assert!((mean - 2.0).abs() < 0.02);
            }
            _ => panic!("expected numeric"),
        }

        // Treatment share near one half.
        let treated: usize = trial.dataset.treatment().iter().map(|&v| usize::from(v)).sum();
        assert!((treated as f64 / 20000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn dependence_calibration_hits_marginal_rate() {
        let mut config = base_config(5000, 0.25);
        config.population.covariates.push(SimCovariate {
            name: "x".into(),
            generator: Generator::Gaussian { mean: 0.0, sd: 1.0 },
            coefficient: 1.0,
            level_coefficients: vec![],
            missing_rate: 0.0,
        });
        config.cheaters.dependence = Some(DependenceConfig { strength: 1.5 });

        // The calibrated propensities average exactly to the rate.
        let mut rng = substream(14, StreamKind::Replicate, 0);
        let g: Vec<f64> = (0..5000).map(|_| 1.5 * standard_normal(&mut rng)).collect();
        let c0 = calibrate_intercept(&g, 0.25);
        let mean = g.iter().map(|&v| expit(c0 + v)).sum::<f64>() / g.len() as f64;
        assert!((mean - 0.25).abs() < 1e-9);

        // And the trial's realized rate lands near it.
        let mut rng = substream(14, StreamKind::Replicate, 1);
        let trial = run_trial(&config, &mut rng).unwrap();
        let se = (0.25 * 0.75 / 5000.0_f64).sqrt();
        assert!((trial.truth.lambda - 0.25).abs() < 4.0 * se);
    }

    #[test]
    fn potential_outcomes_are_monotone_coupled() {
        let config = base_config(3000, 0.0);
        let mut rng = substream(15, StreamKind::Replicate, 0);
        let trial = run_trial(&config, &mut rng).unwrap();
        // Positive log-odds shift: y1 >= y0 row by row.
        for row in &trial.sidecar {
            assert!(row.y1 >= row.y0);
        }
        assert!(trial.truth.tau_h > 0.0);
    }

    #[test]
    fn replicate_rows_are_reproducible_and_estimate_sanely() {
        let config = base_config(4000, 0.2);
        let opts = ReplicationOptions {
            replicates: 24,
            seed: 77,
            classical: true,
            ..ReplicationOptions::default()
        };
        let rows = replicate(&config, &opts).unwrap();
        let again = replicate(&config, &opts).unwrap();
        assert_eq!(rows.len(), 24);
        assert_eq!(rows[5].tau_diff.to_bits(), again[5].tau_diff.to_bits());

        let mean_lambda: f64 =
            rows.iter().map(|r| r.lambda_hat).sum::<f64>() / rows.len() as f64;
        assert!((mean_lambda - 0.2).abs() < 0.1, "{mean_lambda}");

        // The naive estimate shrinks toward zero relative to the robust one.
        let mean_diff: f64 = rows.iter().map(|r| r.tau_diff).sum::<f64>() / rows.len() as f64;
        let mean_classical: f64 =
            rows.iter().map(|r| r.classical.unwrap()).sum::<f64>() / rows.len() as f64;
        assert!(mean_classical < mean_diff);
    }
}
