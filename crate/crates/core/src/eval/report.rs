use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BASELINE_VARIANT: &str = "target_only";
pub const CSV_HEADER: &str = "variant,seed,gauc,auc,improvement_vs_target_only";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "markdown" | "md" => Some(ReportFormat::Markdown),
            _ => None,
        }
    }
}

/// Final-month result of one arm under one seed. `gauc == None` with an
/// `error` marks a failed arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub variant: String,
    pub seed: u64,
    pub gauc: Option<f64>,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyPoint {
    pub variant: String,
    pub seed: u64,
    pub day: u32,
    pub gauc: Option<f64>,
    pub impressions: usize,
}

/// Seed-averaged row.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub seeds: usize,
    pub gauc: Option<f64>,
    pub gauc_std: Option<f64>,
    pub auc: Option<f64>,
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub results: Vec<ArmResult>,
    pub daily: Vec<DailyPoint>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn fmt_signed(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:+.6}"))
}

impl EvalReport {
    pub fn new(config_fingerprint: impl Into<String>) -> Self {
        Self {
            config_fingerprint: config_fingerprint.into(),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.results.extend(other.results);
        self.daily.extend(other.daily);
    }

    /// Variants in first-appearance order.
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.results {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    pub fn baseline_gauc(&self, seed: u64) -> Option<f64> {
        self.results
            .iter()
            .find(|r| r.variant == BASELINE_VARIANT && r.seed == seed)
            .and_then(|r| r.gauc)
    }

    pub fn summaries(&self) -> Vec<VariantSummary> {
        let base = self.summary_of(BASELINE_VARIANT).and_then(|s| s.gauc);
        self.variants()
            .into_iter()
            .filter_map(|v| self.summary_of(&v))
            .map(|mut s| {
                s.improvement = s.gauc.zip(base).map(|(g, b)| g - b);
                s
            })
            .collect()
    }

    fn summary_of(&self, variant: &str) -> Option<VariantSummary> {
        let rows: Vec<&ArmResult> = self.results.iter().filter(|r| r.variant == variant).collect();
        if rows.is_empty() {
            return None;
        }
        let g: Vec<f64> = rows.iter().filter_map(|r| r.gauc).collect();
        let a: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
        let gm = mean(&g);
        let std = gm.filter(|_| g.len() > 1).map(|m| {
            (g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (g.len() - 1) as f64).sqrt()
        });
        Some(VariantSummary {
            variant: variant.to_string(),
            seeds: g.len(),
            gauc: gm,
            gauc_std: std,
            auc: mean(&a),
            improvement: None,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.results {
            let imp = r.gauc.zip(self.baseline_gauc(r.seed)).map(|(g, b)| g - b);
            let gauc = if r.error.is_some() {
                "failed".to_string()
            } else {
                fmt_opt(r.gauc)
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.variant,
                r.seed,
                gauc,
                fmt_opt(r.auc),
                fmt_signed(imp)
            );
        }
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "{},mean,{},{},{}",
                s.variant,
                fmt_opt(s.gauc),
                fmt_opt(s.auc),
                fmt_signed(s.improvement)
            );
        }
        out
    }

    /// Per-seed rows back from [`Self::to_csv`]; `mean` rows are recomputed, not read.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Data("report csv is missing its header".into()));
        }
        let mut report = EvalReport::default();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Data(format!("report line {}: expected 5 columns", n + 2)));
            }
            if cols[1] == "mean" {
                continue;
            }
            let seed = cols[1]
                .parse()
                .map_err(|_| Error::Data(format!("report line {}: bad seed `{}`", n + 2, cols[1])))?;
            let num = |s: &str| -> Result<Option<f64>> {
                match s {
                    "NA" | "failed" => Ok(None),
                    _ => s
                        .parse()
                        .map(Some)
                        .map_err(|_| Error::Data(format!("report line {}: bad number `{s}`", n + 2))),
                }
            };
            report.results.push(ArmResult {
                variant: cols[0].to_string(),
                seed,
                gauc: num(cols[2])?,
                auc: num(cols[3])?,
                error: (cols[2] == "failed").then(|| "failed".to_string()),
            });
        }
        Ok(report)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Variant | GAUC | AUC | Improv. |\n|---|---|---|---|\n");
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.variant,
                fmt_opt(s.gauc),
                fmt_opt(s.auc),
                fmt_signed(s.improvement)
            );
        }
        out
    }

    pub fn daily_csv(&self) -> String {
        let mut out = String::from("variant,seed,day,gauc,impressions\n");
        for p in &self.daily {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.variant,
                p.seed,
                p.day,
                fmt_opt(p.gauc),
                p.impressions
            );
        }
        out
    }
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Markdown => report.to_markdown(),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
