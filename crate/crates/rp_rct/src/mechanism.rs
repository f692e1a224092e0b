//! Forced-response privatization of binary outcomes.
//!
//! Each respondent receives a random prompt: with probability `r0` they are
//! forced to report 0, with probability `r1` forced to report 1, and
//! otherwise asked for their true response. The reported value is therefore
//! a randomized-response encoding of the truth, and the forcing rates
//! yield a local differential-privacy guarantee quantified here.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forcing rates of one randomizing device.
///
/// `r0` forces a 0 report, `r1` forces a 1 report, and the remaining mass
/// `1 - r0 - r1` passes the true response through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrrParamsRaw")]
pub struct FrrParams {
    r0: f64,
    r1: f64,
}

#[derive(Deserialize)]
struct FrrParamsRaw {
    r0: f64,
    r1: f64,
}

impl TryFrom<FrrParamsRaw> for FrrParams {
    type Error = Error;

    fn try_from(raw: FrrParamsRaw) -> Result<Self> {
        FrrParams::new(raw.r0, raw.r1)
    }
}

impl FrrParams {
    pub fn new(r0: f64, r1: f64) -> Result<Self> {
        if !r0.is_finite() || !r1.is_finite() || r0 < 0.0 || r1 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "forcing rates must be finite and nonnegative, got r0 = {r0}, r1 = {r1}"
            )));
        }
        if r0 + r1 >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "forcing rates must leave positive truth mass: r0 + r1 = {} >= 1",
                r0 + r1
            )));
        }
        Ok(FrrParams { r0, r1 })
    }

    /// Device forcing 0 and 1 with the same rate `r`.
    pub fn symmetric(r: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&r) {
            return Err(Error::InvalidParameter(format!(
                "symmetric forcing rate must lie in [0, 0.5), got {r}"
            )));
        }
        FrrParams::new(r, r)
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    /// Probability that the true response is passed through.
    pub fn truth_mass(&self) -> f64 {
        1.0 - self.r0 - self.r1
    }

    pub fn is_symmetric(&self) -> bool {
        self.r0 == self.r1
    }
}

/// Instruction drawn by the randomizing device for one respondent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prompt {
    Force0,
    Force1,
    ReportTruth,
}

impl Prompt {
    pub fn code(self) -> u8 {
        match self {
            Prompt::Force0 => 0,
            Prompt::Force1 => 1,
            Prompt::ReportTruth => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Prompt::Force0),
            1 => Ok(Prompt::Force1),
            2 => Ok(Prompt::ReportTruth),
            other => Err(Error::InvalidParameter(format!(
                "prompt code must be 0, 1, or 2, got {other}"
            ))),
        }
    }
}

/// Local privacy loss: a nonnegative extended real.
///
/// Serializes as a JSON number when finite and as the string `"inf"` when
/// infinite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PrivacyLoss(f64);

impl PrivacyLoss {
    pub const INFINITE: PrivacyLoss = PrivacyLoss(f64::INFINITY);

    pub fn finite(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "privacy loss must be a finite nonnegative number, got {value}"
            )));
        }
        Ok(PrivacyLoss(value))
    }

    /// From a raw f64; `f64::INFINITY` maps to the infinite loss.
    pub fn from_value(value: f64) -> Result<Self> {
        if value == f64::INFINITY {
            Ok(PrivacyLoss::INFINITE)
        } else {
            PrivacyLoss::finite(value)
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl std::fmt::Display for PrivacyLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for PrivacyLoss {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for PrivacyLoss {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(x) => PrivacyLoss::finite(x).map_err(serde::de::Error::custom),
            Repr::Text(s) if s == "inf" => Ok(PrivacyLoss::INFINITE),
            Repr::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

/// Draw the device prompt for one respondent.
pub fn sample_prompt<R: Rng + ?Sized>(params: &FrrParams, rng: &mut R) -> Prompt {
    let u: f64 = rng.gen();
    if u < params.r0 {
        Prompt::Force0
    } else if u < params.r0 + params.r1 {
        Prompt::Force1
    } else {
        Prompt::ReportTruth
    }
}

/// Apply a prompt to a true binary response.
pub fn privatize(y: u8, prompt: Prompt) -> u8 {
    debug_assert!(y <= 1, "binary response expected");
    match prompt {
        Prompt::Force0 => 0,
        Prompt::Force1 => 1,
        Prompt::ReportTruth => y,
    }
}

/// Probability that the device reports 1 given the true response `y`.
pub fn response_distribution(params: &FrrParams, y: u8) -> f64 {
    debug_assert!(y <= 1, "binary response expected");
    params.r1 + params.truth_mass() * f64::from(y)
}

/// Privacy loss of a symmetric two-device design with rates `r` and
/// `r_prime`, each device used with probability one half.
///
/// Evaluates `ln(2 / (r + r') - 1)`; returns the infinite loss when both
/// rates are zero (no privatization at all).
pub fn epsilon_symmetric(r: f64, r_prime: f64) -> Result<PrivacyLoss> {
    for rate in [r, r_prime] {
        if !(0.0..0.5).contains(&rate) {
            return Err(Error::InvalidParameter(format!(
                "symmetric forcing rate must lie in [0, 0.5), got {rate}"
            )));
        }
    }
    let sum = r + r_prime;
    if sum == 0.0 {
        return Ok(PrivacyLoss::INFINITE);
    }
    PrivacyLoss::finite((2.0 / sum - 1.0).ln())
}

/// Mixture channel of several devices: `(Pr[report 0 | truth 1],
/// Pr[report 1 | truth 0])`.
fn mixture_channel(maps: &[(FrrParams, f64)]) -> Result<(f64, f64)> {
    if maps.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one device is required".into(),
        ));
    }
    let mut total = 0.0;
    for &(_, w) in maps {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "device weight must be finite and nonnegative, got {w}"
            )));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "device weights must sum to 1, got {total}"
        )));
    }
    let alpha: f64 = maps.iter().map(|(m, w)| w * m.r0()).sum();
    let beta: f64 = maps.iter().map(|(m, w)| w * m.r1()).sum();
    Ok((alpha, beta))
}

/// Strict worst-case privacy loss of a weighted mixture of devices.
///
/// The marginal report distribution is a binary channel; the loss is the
/// largest log-likelihood-ratio over both report values and both truth
/// values, infinite whenever a report is possible under one truth value
/// and impossible under the other.
pub fn epsilon_general(maps: &[(FrrParams, f64)]) -> Result<PrivacyLoss> {
    let (alpha, beta) = mixture_channel(maps)?;
    // Symmetric channel: same closed form (and bit pattern) as
    // `epsilon_symmetric` on the matching rates.
    if alpha == beta {
        if alpha == 0.0 {
            return Ok(PrivacyLoss::INFINITE);
        }
        return PrivacyLoss::finite((2.0 / (2.0 * alpha) - 1.0).ln());
    }
    let mut worst = 0.0f64;
    for (p_truth1, p_truth0) in [(1.0 - alpha, beta), (alpha, 1.0 - beta)] {
        if p_truth1 == 0.0 && p_truth0 == 0.0 {
            continue;
        }
        if p_truth1 == 0.0 || p_truth0 == 0.0 {
            return Ok(PrivacyLoss::INFINITE);
        }
        worst = worst.max((p_truth1 / p_truth0).ln().abs());
    }
    PrivacyLoss::finite(worst)
}

/// The three privacy-loss conventions for a two-device design, reported
/// side by side because they differ on asymmetric devices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpsilonVariants {
    /// Worst case over both report values (`epsilon_general`).
    pub strict: PrivacyLoss,
    /// The symmetric-design closed form evaluated at each device's
    /// dominant forcing rate. Coincides with `strict` for symmetric
    /// devices.
    pub dominant_forced: PrivacyLoss,
    /// Largest log-likelihood-ratio among report values that occur with
    /// positive probability under both truth values.
    pub one_sided: PrivacyLoss,
}

/// Compute all three privacy-loss conventions for an equal-weight
/// two-device design.
pub fn epsilon_variants(frr1: &FrrParams, frr2: &FrrParams) -> Result<EpsilonVariants> {
    let maps = [(*frr1, 0.5), (*frr2, 0.5)];
    let strict = epsilon_general(&maps)?;

    let dominant_sum = frr1.r0().max(frr1.r1()) + frr2.r0().max(frr2.r1());
    let dominant_forced = if dominant_sum == 0.0 {
        PrivacyLoss::INFINITE
    } else {
        PrivacyLoss::finite((2.0 / dominant_sum - 1.0).ln().max(0.0))?
    };

    let (alpha, beta) = mixture_channel(&maps)?;
    let mut one_sided: Option<f64> = None;
    for (p_truth1, p_truth0) in [(1.0 - alpha, beta), (alpha, 1.0 - beta)] {
        if p_truth1 > 0.0 && p_truth0 > 0.0 {
            let ratio = (p_truth1 / p_truth0).ln().abs();
            one_sided = Some(one_sided.map_or(ratio, |cur: f64| cur.max(ratio)));
        }
    }
    let one_sided = match one_sided {
        Some(x) => PrivacyLoss::finite(x)?,
        None => PrivacyLoss::INFINITE,
    };

    Ok(EpsilonVariants {
        strict,
        dominant_forced,
        one_sided,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamKind};

    #[test]
    fn frr_params_validation() {
        assert!(FrrParams::new(0.25, 0.25).is_ok());
        assert!(FrrParams::new(0.0, 0.0).is_ok());
        assert!(FrrParams::new(0.6, 0.4).is_err());
        assert!(FrrParams::new(-0.1, 0.2).is_err());
        assert!(FrrParams::new(0.2, f64::NAN).is_err());
        assert!(FrrParams::symmetric(0.5).is_err());
        assert!(FrrParams::symmetric(0.49).is_ok());
    }

    #[test]
    fn frr_params_serde_roundtrip() {
        let p = FrrParams::new(0.25, 0.15).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"r0":0.25,"r1":0.15}"#);
        let back: FrrParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        // Invalid parameters are rejected at deserialization time.
        assert!(serde_json::from_str::<FrrParams>(r#"{"r0":0.7,"r1":0.4}"#).is_err());
    }

    #[test]
    fn privacy_loss_serde() {
        let finite = PrivacyLoss::finite(1.5).unwrap();
        assert_eq!(serde_json::to_string(&finite).unwrap(), "1.5");
        let inf = PrivacyLoss::INFINITE;
        assert_eq!(serde_json::to_string(&inf).unwrap(), "\"inf\"");
        let back: PrivacyLoss = serde_json::from_str("1.5").unwrap();
        assert_eq!(back.value(), 1.5);
        let back: PrivacyLoss = serde_json::from_str("\"inf\"").unwrap();
        assert!(back.is_infinite());
        assert!(serde_json::from_str::<PrivacyLoss>("-0.5").is_err());
        assert!(serde_json::from_str::<PrivacyLoss>("\"huge\"").is_err());
    }

    #[test]
    fn privatize_obeys_prompts() {
        assert_eq!(privatize(1, Prompt::Force0), 0);
        assert_eq!(privatize(0, Prompt::Force1), 1);
        assert_eq!(privatize(1, Prompt::ReportTruth), 1);
        assert_eq!(privatize(0, Prompt::ReportTruth), 0);
    }

    #[test]
    fn response_distribution_closed_form() {
        let sym = FrrParams::new(0.25, 0.25).unwrap();
        assert!((response_distribution(&sym, 1) - 0.75).abs() < 1e-15);
        assert!((response_distribution(&sym, 0) - 0.25).abs() < 1e-15);
        let gen = FrrParams::new(0.1, 0.3).unwrap();
        assert!((response_distribution(&gen, 0) - 0.3).abs() < 1e-15);
        assert!((response_distribution(&gen, 1) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn epsilon_symmetric_quarter_device_is_ln3() {
        let eps = epsilon_symmetric(0.25, 0.25).unwrap();
        assert!((eps.value() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn epsilon_symmetric_domain() {
        assert!(epsilon_symmetric(0.5, 0.1).is_err());
        assert!(epsilon_symmetric(-0.01, 0.1).is_err());
        assert!(epsilon_symmetric(0.0, 0.0).unwrap().is_infinite());
        // Strictly decreasing in the total forcing rate.
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let r = 0.005 * i as f64 / 2.0;
            let eps = epsilon_symmetric(r, r).unwrap().value();
            assert!(eps < last, "not strictly decreasing at r = {r}");
            last = eps;
        }
    }

    #[test]
    fn epsilon_general_matches_symmetric_exactly() {
        for &(r, rp) in &[(0.25, 0.25), (0.1492, 0.0892), (0.3, 0.05), (0.01, 0.49)] {
            let maps = [
                (FrrParams::symmetric(r).unwrap(), 0.5),
                (FrrParams::symmetric(rp).unwrap(), 0.5),
            ];
            let general = epsilon_general(&maps).unwrap();
            let symmetric = epsilon_symmetric(r, rp).unwrap();
            assert_eq!(general.value().to_bits(), symmetric.value().to_bits());
        }
    }

    #[test]
    fn epsilon_general_weight_validation() {
        let m = FrrParams::symmetric(0.2).unwrap();
        assert!(epsilon_general(&[]).is_err());
        assert!(epsilon_general(&[(m, 0.4), (m, 0.4)]).is_err());
        assert!(epsilon_general(&[(m, 1.5), (m, -0.5)]).is_err());
        assert!(epsilon_general(&[(m, 1.0)]).is_ok());
    }

    #[test]
    fn epsilon_general_identity_device_is_infinite() {
        let identity = FrrParams::new(0.0, 0.0).unwrap();
        assert!(epsilon_general(&[(identity, 1.0)]).unwrap().is_infinite());
    }

    #[test]
    fn variants_on_one_sided_devices() {
        // Devices that only force 1s: reporting 0 reveals the truth was 0,
        // so the strict loss is infinite while the one-sided ratio stays
        // finite. Expected values computed by hand from the channel.
        let frr1 = FrrParams::new(0.0, 0.1040).unwrap();
        let frr2 = FrrParams::new(0.0, 0.1667).unwrap();
        let v = epsilon_variants(&frr1, &frr2).unwrap();
        assert!(v.strict.is_infinite());
        assert!((v.dominant_forced.value() - 1.854_460_6).abs() < 1e-4);
        assert!((v.one_sided.value() - 1.999_891_0).abs() < 1e-4);
    }

    #[test]
    fn variants_coincide_for_symmetric_devices() {
        let frr1 = FrrParams::symmetric(0.1492).unwrap();
        let frr2 = FrrParams::symmetric(0.0892).unwrap();
        let v = epsilon_variants(&frr1, &frr2).unwrap();
        let reference = epsilon_symmetric(0.1492, 0.0892).unwrap().value();
        assert_eq!(v.strict.value().to_bits(), reference.to_bits());
        assert_eq!(v.dominant_forced.value().to_bits(), reference.to_bits());
        assert!((v.one_sided.value() - reference).abs() < 1e-12);
    }

    #[test]
    fn sample_prompt_frequencies() {
        let params = FrrParams::new(0.2, 0.3).unwrap();
        let mut rng = substream(11, StreamKind::Scratch, 0);
        let n = 1_000_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            counts[sample_prompt(&params, &mut rng).code() as usize] += 1;
        }
        let expected = [0.2, 0.3, 0.5];
        for (i, &e) in expected.iter().enumerate() {
            let freq = counts[i] as f64 / n as f64;
            let se = (e * (1.0 - e) / n as f64).sqrt();
            assert!(
                (freq - e).abs() < 4.0 * se,
                "prompt {i}: freq {freq} vs expected {e}"
            );
        }
    }

    #[test]
    fn empirical_channel_matches_closed_form() {
        let params = FrrParams::new(0.15, 0.25).unwrap();
        let mut rng = substream(12, StreamKind::Scratch, 0);
        let n = 200_000;
        for y in [0u8, 1u8] {
            let mut ones = 0u64;
            for _ in 0..n {
                let prompt = sample_prompt(&params, &mut rng);
                ones += u64::from(privatize(y, prompt));
            }
            let freq = ones as f64 / n as f64;
            let expected = response_distribution(&params, y);
            let se = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!(
                (freq - expected).abs() < 4.0 * se,
                "y = {y}: freq {freq} vs expected {expected}"
            );
        }
    }

    #[test]
    fn empirical_ratio_respects_privacy_bound() {
        // Frequencies of each report value under the two truth values stay
        // within exp(epsilon) of each other, up to Monte Carlo noise.
        let (r, rp) = (0.25, 0.15);
        let eps = epsilon_symmetric(r, rp).unwrap().value();
        let maps = [
            FrrParams::symmetric(r).unwrap(),
            FrrParams::symmetric(rp).unwrap(),
        ];
        let mut rng = substream(13, StreamKind::Scratch, 0);
        let n = 500_000;
        let mut ones = [0u64; 2];
        for y in [0usize, 1usize] {
            for _ in 0..n {
                let device = &maps[usize::from(rng.gen::<bool>())];
                let prompt = sample_prompt(device, &mut rng);
                ones[y] += u64::from(privatize(y as u8, prompt));
            }
        }
        let p1 = [ones[0] as f64 / n as f64, ones[1] as f64 / n as f64];
        for (a, b) in [(p1[1], p1[0]), (1.0 - p1[0], 1.0 - p1[1])] {
            let ratio = (a / b).ln().abs();
            assert!(ratio <= eps + 0.02, "ratio {ratio} vs eps {eps}");
        }
    }
}
