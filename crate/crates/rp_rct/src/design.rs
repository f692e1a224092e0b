//! Trial design: choosing forcing rates for a privacy budget, quantifying
//! the efficiency cost of privatization, and sizing the sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{epsilon_variants, EpsilonVariants, FrrParams};
use crate::stats::normal_quantile;

/// Complete specification of a privatized trial design: the treatment
/// assignment probability and the two randomizing devices, each given to a
/// random half of the sample.
///
/// The privacy loss is always recomputed from the forcing rates, never
/// stored, so a spec cannot carry a stale budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignSpecRaw")]
pub struct DesignSpec {
    delta: f64,
    frr1: FrrParams,
    frr2: FrrParams,
}

#[derive(Deserialize)]
struct DesignSpecRaw {
    delta: f64,
    frr1: FrrParams,
    frr2: FrrParams,
}

impl TryFrom<DesignSpecRaw> for DesignSpec {
    type Error = Error;

    fn try_from(raw: DesignSpecRaw) -> Result<Self> {
        DesignSpec::new(raw.delta, raw.frr1, raw.frr2)
    }
}

impl DesignSpec {
    pub fn new(delta: f64, frr1: FrrParams, frr2: FrrParams) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "treatment probability must lie in (0, 1), got {delta}"
            )));
        }
        if frr1 == frr2 {
            return Err(Error::InvalidParameter(
                "the two devices must differ; identical forcing rates leave the \
                 cheater rate unidentified"
                    .into(),
            ));
        }
        Ok(DesignSpec { delta, frr1, frr2 })
    }

    /// Symmetric design realizing privacy budget `epsilon` via
    /// [`solve_frr_for_epsilon`].
    pub fn symmetric_for_epsilon(epsilon: f64, gap: f64, delta: f64) -> Result<Self> {
        let (r, r_prime) = solve_frr_for_epsilon(epsilon, gap)?;
        DesignSpec::new(
            delta,
            FrrParams::symmetric(r)?,
            FrrParams::symmetric(r_prime)?,
        )
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn frr1(&self) -> &FrrParams {
        &self.frr1
    }

    pub fn frr2(&self) -> &FrrParams {
        &self.frr2
    }

    pub fn device(&self, split: u8) -> &FrrParams {
        match split {
            1 => &self.frr1,
            2 => &self.frr2,
            _ => panic!("split must be 1 or 2"),
        }
    }

    /// Fraction of the response signal that survives privatization:
    /// `1 - mean(r0) - mean(r1)` across the two devices. Equals
    /// `1 - r - r'` for symmetric devices.
    pub fn masking_factor(&self) -> f64 {
        1.0 - (self.frr1.r0() + self.frr2.r0() + self.frr1.r1() + self.frr2.r1()) / 2.0
    }

    /// Determinant of the moment system identifying the cheater rate.
    /// Zero means unidentified; small magnitudes inflate its variance.
    /// Equals `r - r'` for symmetric devices.
    pub fn cheater_determinant(&self) -> f64 {
        self.frr2.truth_mass() * self.frr1.r1() - self.frr1.truth_mass() * self.frr2.r1()
    }

    pub fn epsilon(&self) -> Result<EpsilonVariants> {
        epsilon_variants(&self.frr1, &self.frr2)
    }
}

/// Solve for symmetric forcing rates `(r, r')` realizing privacy budget
/// `epsilon` with a fixed detection gap `r - r'`.
///
/// The budget pins the total `r + r' = 2 / (e^eps + 1)`; the gap splits it.
pub fn solve_frr_for_epsilon(epsilon: f64, gap: f64) -> Result<(f64, f64)> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "privacy budget must be a positive finite number, got {epsilon}"
        )));
    }
    if !gap.is_finite() || gap <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "detection gap must be positive (equal rates leave the cheater rate \
             unidentified), got {gap}"
        )));
    }
    let sum = 2.0 / (epsilon.exp() + 1.0);
    if gap >= sum {
        return Err(Error::Infeasible(format!(
            "gap {gap} does not fit in the total forcing rate {sum} implied by \
             epsilon = {epsilon}; r' would not be positive"
        )));
    }
    let r = (sum + gap) / 2.0;
    let r_prime = (sum - gap) / 2.0;
    if r >= 0.5 {
        return Err(Error::Infeasible(format!(
            "epsilon = {epsilon} with gap {gap} requires r = {r} >= 0.5"
        )));
    }
    Ok((r, r_prime))
}

/// How much efficiency survives privatization, relative to a classical
/// trial observing true responses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EfficiencyQuote {
    /// Ratio of classical to privatized asymptotic variance, in (0, 1].
    pub relative_efficiency: f64,
    /// Standard-error inflation factor, `relative_efficiency^(-1/2)`.
    pub se_inflation: f64,
    /// Sample-size multiplier to recover classical precision,
    /// `1 / relative_efficiency`.
    pub sample_size_multiplier: f64,
}

/// Asymptotic efficiency of the privatized difference-in-means estimator
/// relative to the classical one, at privacy budget `epsilon`, treatment
/// probability `delta`, and arm response rates `tau0`, `tau1`.
///
/// Assumes everyone complies with the protocol. `epsilon` may be
/// `f64::INFINITY`, in which case the quote is exactly 1.
pub fn relative_efficiency(
    epsilon: f64,
    delta: f64,
    tau0: f64,
    tau1: f64,
) -> Result<EfficiencyQuote> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "privacy budget must be positive, got {epsilon}"
        )));
    }
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "treatment probability must lie in (0, 1), got {delta}"
        )));
    }
    for (name, tau) in [("tau0", tau0), ("tau1", tau1)] {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!(
                "{name} must lie in [0, 1], got {tau}"
            )));
        }
    }
    let a = 1.0 / (epsilon.exp() - 1.0);
    let b = 1.0 / (1.0 - (-epsilon).exp());
    let numerator = (1.0 - delta) * tau1 * (1.0 - tau1) + delta * tau0 * (1.0 - tau0);
    let denominator =
        (1.0 - delta) * (a + tau1) * (b - tau1) + delta * (a + tau0) * (b - tau0);
    if denominator <= 0.0 {
        return Err(Error::InvalidParameter(
            "degenerate efficiency denominator".into(),
        ));
    }
    let re = numerator / denominator;
    Ok(EfficiencyQuote {
        relative_efficiency: re,
        se_inflation: re.powf(-0.5),
        sample_size_multiplier: 1.0 / re,
    })
}

/// Asymptotic variance (times n) of the privatized difference-in-means
/// estimator under full compliance, used for power and sample size.
fn privatized_variance(epsilon: f64, delta: f64, tau0: f64, tau1: f64) -> f64 {
    let sum = 2.0 / (epsilon.exp() + 1.0);
    let rbar = sum / 2.0;
    let mask = 1.0 - sum;
    let q1 = rbar + mask * tau1;
    let q0 = rbar + mask * tau0;
    (q1 * (1.0 - q1) / delta + q0 * (1.0 - q0) / (1.0 - delta)) / (mask * mask)
}

/// Exact normal power of the two-sided Wald test at sample size `n`.
fn wald_power(n: f64, effect: f64, variance: f64, alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let shift = effect.abs() * (n / variance).sqrt();
    crate::stats::normal_cdf(shift - z) + crate::stats::normal_cdf(-shift - z)
}

/// Smallest sample size whose two-sided Wald test attains `power_target`
/// against alternative `effect`, for a symmetric design at budget
/// `epsilon` with arm rates `tau0`, `tau1` and cheater rate `lambda`
/// (pass 0 for a fully compliant population).
pub fn sample_size(
    epsilon: f64,
    delta: f64,
    tau0: f64,
    tau1: f64,
    effect: f64,
    alpha: f64,
    power_target: f64,
    lambda: f64,
) -> Result<u64> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "privacy budget must be a positive finite number, got {epsilon}"
        )));
    }
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "treatment probability must lie in (0, 1), got {delta}"
        )));
    }
    for (name, tau) in [("tau0", tau0), ("tau1", tau1)] {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!(
                "{name} must lie in [0, 1], got {tau}"
            )));
        }
    }
    if !effect.is_finite() || effect == 0.0 {
        return Err(Error::InvalidParameter(
            "effect must be nonzero for a sample-size calculation".into(),
        ));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(alpha < power_target && power_target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "power target must lie in (alpha, 1), got {power_target}"
        )));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "cheater rate must lie in [0, 1), got {lambda}"
        )));
    }

    let honest = 1.0 - lambda;
    let variance = privatized_variance(epsilon, delta, tau0, tau1) / (honest * honest);
    let z_alpha = normal_quantile(1.0 - alpha / 2.0);
    let z_power = normal_quantile(power_target);
    let n0 = variance * (z_alpha + z_power).powi(2) / (effect * effect);
    // The closed form ignores the far tail; scan around it for the exact
    // smallest integer.
    let mut n = (n0.floor() as u64).saturating_sub(2).max(2);
    while wald_power(n as f64, effect, variance, alpha) < power_target {
        n += 1;
    }
    Ok(n)
}

/// Everything a designer needs to review in one serializable bundle.
#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub delta: f64,
    pub frr1: FrrParams,
    pub frr2: FrrParams,
    pub epsilon: EpsilonVariants,
    pub masking_factor: f64,
    pub cheater_determinant: f64,
    /// Outcome rates the efficiency quote was evaluated at.
    pub tau0: f64,
    pub tau1: f64,
    pub efficiency: EfficiencyQuote,
    /// Which privacy-loss convention fed the efficiency quote ("strict"
    /// when finite, otherwise "one_sided").
    pub efficiency_epsilon_basis: String,
    pub warnings: Vec<String>,
}

/// Assemble the design report for a spec at caller-provided outcome rates.
pub fn design_report(spec: &DesignSpec, tau0: f64, tau1: f64) -> Result<DesignReport> {
    let epsilon = spec.epsilon()?;
    let masking = spec.masking_factor();
    let det = spec.cheater_determinant();

    let mut warnings = Vec::new();
    let (basis, eps_for_quote) = if epsilon.strict.is_infinite() {
        warnings.push(
            "strict privacy loss is infinite: some report value is possible under \
             only one truth value; the efficiency quote uses the one-sided loss"
                .to_string(),
        );
        ("one_sided", epsilon.one_sided)
    } else {
        ("strict", epsilon.strict)
    };
    if det.abs() < 0.02 {
        warnings.push(format!(
            "cheater rate is weakly identified (determinant {det:.4}); its \
             variance scales with the inverse square of this value"
        ));
    }
    if masking < 0.1 {
        warnings.push(format!(
            "masking factor {masking:.3} is small; effect estimates divide by it \
             and will be unstable"
        ));
    }

    let efficiency = relative_efficiency(eps_for_quote.value(), spec.delta(), tau0, tau1)?;
    Ok(DesignReport {
        delta: spec.delta(),
        frr1: *spec.frr1(),
        frr2: *spec.frr2(),
        epsilon,
        masking_factor: masking,
        cheater_determinant: det,
        tau0,
        tau1,
        efficiency,
        efficiency_epsilon_basis: basis.to_string(),
        warnings,
    })
}
