//! Rendering of estimation results as Markdown, JSON, or flat CSV.

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::{EpsilonVariants, FrrParams, PrivacyLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown report format {other:?} (expected json, markdown, or csv)"
            ))),
        }
    }
}

/// Point estimate with its standard error and, when a bootstrap ran, a
/// percentile confidence interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimateCell {
    pub estimate: f64,
    pub se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_upper: Option<f64>,
}

impl EstimateCell {
    pub fn new(estimate: f64, se: f64) -> EstimateCell {
        EstimateCell {
            estimate,
            se,
            ci_lower: None,
            ci_upper: None,
        }
    }

    pub fn with_ci(mut self, lower: f64, upper: f64) -> EstimateCell {
        self.ci_lower = Some(lower);
        self.ci_upper = Some(upper);
        self
    }
}

/// The design parameters the estimates were computed under.
#[derive(Debug, Clone, Serialize)]
pub struct DesignEcho {
    pub delta: f64,
    pub frr1: FrrParams,
    pub frr2: FrrParams,
    pub epsilon: EpsilonVariants,
    pub masking_factor: f64,
}

/// Estimates for a single outcome column.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeReport {
    pub outcome: String,
    pub lambda: EstimateCell,
    pub lambda_boundary_corrected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_diff: Option<EstimateCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_cov: Option<EstimateCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical_diff: Option<EstimateCell>,
    /// Two-sided Wald p-value for the difference estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_covariates: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Standardized-mean-difference balance check for one model column.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub column: String,
    pub mean_treated: f64,
    pub mean_control: f64,
    /// None when the pooled standard deviation is zero or an arm has no
    /// observed values.
    pub smd: Option<f64>,
    pub flagged: bool,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub design: DesignEcho,
    pub outcomes: Vec<OutcomeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<Vec<BalanceRow>>,
}

fn fmt_cell(cell: &EstimateCell) -> String {
    format!("{:.3} ({:.3})", cell.estimate, cell.se)
}

fn fmt_opt_cell(cell: &Option<EstimateCell>) -> String {
    match cell {
        Some(c) => fmt_cell(c),
        None => "--".to_string(),
    }
}

fn fmt_eps(pl: &PrivacyLoss) -> String {
    if pl.is_infinite() {
        "inf".to_string()
    } else {
        format!("{:.4}", pl.value())
    }
}

fn render_markdown(report: &EstimateReport) -> String {
    let mut out = String::new();
    let d = &report.design;
    out.push_str("# Privatized trial estimates\n\n");
    out.push_str(&format!("- rows: {}\n", report.n));
    out.push_str(&format!("- treated share (design): {:.3}\n", d.delta));
    out.push_str(&format!(
        "- device 1: force-zero {}, force-one {}; device 2: force-zero {}, force-one {}\n",
        d.frr1.r0(),
        d.frr1.r1(),
        d.frr2.r0(),
        d.frr2.r1()
    ));
    out.push_str(&format!(
        "- privacy loss: strict {}, dominant-forced {}, one-sided {}\n",
        fmt_eps(&d.epsilon.strict),
        fmt_eps(&d.epsilon.dominant_forced),
        fmt_eps(&d.epsilon.one_sided)
    ));
    out.push_str(&format!("- masking factor: {:.4}\n\n", d.masking_factor));

    out.push_str("| Outcome | \u{3bb}\u{302} (se) | \u{3c4}\u{302}_H,Diff (se) | \u{3c4}\u{302}_H,Cov (se) |\n");
    out.push_str("|---|---|---|---|\n");
    for o in &report.outcomes {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            o.outcome,
            fmt_cell(&o.lambda),
            fmt_opt_cell(&o.tau_diff),
            fmt_opt_cell(&o.tau_cov)
        ));
    }

    let mut notes: Vec<String> = Vec::new();
    for o in &report.outcomes {
        if o.lambda_boundary_corrected {
            notes.push(format!(
                "{}: cheater-rate estimate left [0, 1] and was likelihood-corrected",
                o.outcome
            ));
        }
        if let Some(p) = o.p_value {
            notes.push(format!(
                "{}: two-sided Wald p-value (difference estimator) = {:.4}",
                o.outcome, p
            ));
        }
        if let Some(c) = &o.classical_diff {
            notes.push(format!(
                "{}: unadjusted difference in privatized means = {}",
                o.outcome,
                fmt_cell(c)
            ));
        }
        if let Some(sel) = &o.selected_covariates {
            notes.push(format!(
                "{}: adjusted model covariates: {}",
                o.outcome,
                if sel.is_empty() {
                    "(intercept only)".to_string()
                } else {
                    sel.join(", ")
                }
            ));
        }
        for cell in [("difference", &o.tau_diff), ("adjusted", &o.tau_cov)] {
            if let (name, Some(c)) = cell {
                if let (Some(lo), Some(hi)) = (c.ci_lower, c.ci_upper) {
                    notes.push(format!(
                        "{}: 95% bootstrap CI ({name}) = [{lo:.3}, {hi:.3}]",
                        o.outcome
                    ));
                }
            }
        }
        for w in &o.warnings {
            notes.push(format!("{}: {}", o.outcome, w));
        }
    }
    if !notes.is_empty() {
        out.push_str("\nNotes:\n");
        for n in notes {
            out.push_str(&format!("- {n}\n"));
        }
    }

    if let Some(balance) = &report.balance {
        out.push_str("\n## Covariate balance\n\n");
        out.push_str("| Column | Treated mean | Control mean | SMD | Missing |\n");
        out.push_str("|---|---|---|---|---|\n");
        for b in balance {
            let smd = match b.smd {
                Some(v) if b.flagged => format!("{v:.3} (!)"),
                Some(v) => format!("{v:.3}"),
                None => "--".to_string(),
            };
            out.push_str(&format!(
                "| {} | {:.3} | {:.3} | {} | {:.1}% |\n",
                b.column,
                b.mean_treated,
                b.mean_control,
                smd,
                100.0 * b.missing_rate
            ));
        }
    }
    out
}

fn render_csv(report: &EstimateReport) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["outcome", "quantity", "estimate", "se", "ci_lower", "ci_upper"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut push = |outcome: &str, quantity: &str, cell: &EstimateCell| -> Result<()> {
        writer.write_record([
            outcome.to_string(),
            quantity.to_string(),
            cell.estimate.to_string(),
            cell.se.to_string(),
            opt(cell.ci_lower),
            opt(cell.ci_upper),
        ])?;
        Ok(())
    };
    for o in &report.outcomes {
        push(&o.outcome, "lambda_hat", &o.lambda)?;
        if let Some(c) = &o.tau_diff {
            push(&o.outcome, "tau_diff", c)?;
        }
        if let Some(c) = &o.tau_cov {
            push(&o.outcome, "tau_cov", c)?;
        }
        if let Some(c) = &o.classical_diff {
            push(&o.outcome, "classical_diff", c)?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
}

/// Render a report in the requested format.
pub fn render_report(report: &EstimateReport, format: ReportFormat) -> Result<String> {
    if report.outcomes.is_empty() {
        return Err(Error::InvalidParameter("report has no outcomes".into()));
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::Csv => render_csv(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::epsilon_variants;

    fn sample_report() -> EstimateReport {
        let frr1 = FrrParams::new(0.25, 0.15).unwrap();
        let frr2 = FrrParams::new(0.15, 0.05).unwrap();
        let epsilon = epsilon_variants(&frr1, &frr2).unwrap();
        EstimateReport {
            n: 500,
            design: DesignEcho {
                delta: 0.5,
                frr1,
                frr2,
                epsilon,
                masking_factor: 0.7,
            },
            outcomes: vec![OutcomeReport {
                outcome: "y_tilde".into(),
                lambda: EstimateCell::new(0.2398, 0.1291),
                lambda_boundary_corrected: false,
                tau_diff: Some(EstimateCell::new(0.3571, 0.2012).with_ci(-0.04, 0.75)),
                tau_cov: None,
                classical_diff: Some(EstimateCell::new(0.2, 0.1)),
                p_value: Some(0.0760),
                selected_covariates: Some(vec!["age".into()]),
                warnings: vec!["weak identification".into()],
            }],
            balance: Some(vec![BalanceRow {
                column: "age".into(),
                mean_treated: 0.52,
                mean_control: 0.48,
                smd: Some(0.08),
                flagged: false,
                missing_rate: 0.05,
            }]),
        }
    }

    #[test]
    fn markdown_has_table_and_notes() {
        let text = render_report(&sample_report(), ReportFormat::Markdown).unwrap();
        assert!(text.contains("| Outcome |"));
        assert!(text.contains("| y_tilde | 0.240 (0.129) | 0.357 (0.201) | -- |"));
        assert!(text.contains("p-value"));
        assert!(text.contains("[-0.040, 0.750]"));
        assert!(text.contains("weak identification"));
        assert!(text.contains("age"));
    }

    #[test]
    fn json_round_trips_values_losslessly() {
        let report = sample_report();
        let text = render_report(&report, ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["n"], 500);
        assert_eq!(v["outcomes"][0]["lambda"]["estimate"], 0.2398);
        assert_eq!(v["outcomes"][0]["tau_diff"]["ci_upper"], 0.75);
        // Absent estimators are omitted, not null.
        assert!(v["outcomes"][0].get("tau_cov").is_none());
    }

    #[test]
    fn csv_is_flat_and_parseable() {
        let text = render_report(&sample_report(), ReportFormat::Csv).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0][1], "lambda_hat");
        assert_eq!(&rows[1][1], "tau_diff");
        assert_eq!(&rows[1][4], "-0.04");
    }

    #[test]
    fn empty_report_is_an_error() {
        let mut report = sample_report();
        report.outcomes.clear();
        assert!(render_report(&report, ReportFormat::Json).is_err());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }
}
