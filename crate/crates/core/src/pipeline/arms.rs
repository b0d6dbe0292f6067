use super::RunConfig;
use crate::error::{Error, Result};

/// Which components a run wires together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Daily ad model from scratch, no history features.
    TargetOnly,
    /// Daily ad model from scratch with tiny-model history features.
    PlusTpm,
    /// Daily ad model transferred from the weekly model, no history features.
    PlusCpm,
    Full,
    /// Weekly model on natural data scored directly on ad traffic.
    SourceOnly,
    /// Weekly model on mixed natural and ad data scored directly on ad traffic.
    SampleMerging,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::TargetOnly,
        Variant::PlusTpm,
        Variant::PlusCpm,
        Variant::Full,
        Variant::SourceOnly,
        Variant::SampleMerging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TargetOnly => "target_only",
            Variant::PlusTpm => "plus_tpm",
            Variant::PlusCpm => "plus_cpm",
            Variant::Full => "full",
            Variant::SourceOnly => "source_only",
            Variant::SampleMerging => "sample_merging",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn uses_history(self) -> bool {
        matches!(self, Variant::PlusTpm | Variant::Full)
    }

    pub fn uses_cpm(self) -> bool {
        !matches!(self, Variant::TargetOnly | Variant::PlusTpm)
    }

    /// Whether the daily ad model is trained (otherwise the weekly model is scored as is).
    pub fn fine_tunes(self) -> bool {
        !matches!(self, Variant::SourceOnly | Variant::SampleMerging)
    }

    pub fn transfers(self) -> bool {
        matches!(self, Variant::PlusCpm | Variant::Full)
    }
}

/// A variant plus config overrides, written `variant[:key=value;key=value]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

impl Arm {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (variant, rest) = text.split_once(':').unwrap_or((text, ""));
        if Variant::parse(variant).is_none() {
            return Err(Error::config(format!("unknown variant `{variant}` in arm `{text}`")));
        }
        let mut overrides = vec![("variant".to_string(), variant.to_string())];
        for kv in rest.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config(format!("arm override `{kv}` is not key=value")))?;
            if matches!(k.trim(), "variant" | "seeds") {
                return Err(Error::config(format!("arm `{text}` may not override `{k}`")));
            }
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let label = if overrides.len() == 1 {
            variant.to_string()
        } else {
            let kv: Vec<String> = overrides[1..].iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("{variant}:{}", kv.join(";"))
        };
        Ok(Self { label, overrides })
    }

    /// `base` with this arm's overrides applied and validated.
    pub fn resolve(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut c = base.clone();
        for (k, v) in &self.overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

pub const PRESETS: &[(&str, &[&str])] = &[
    ("table2", &["target_only", "full"]),
    ("table3", &["target_only", "plus_tpm", "plus_cpm", "full"]),
    ("table4", &["target_only", "source_only", "sample_merging", "full"]),
    (
        "table5",
        &["target_only", "full:history_months=1", "full:history_months=2", "full"],
    ),
    (
        "table6",
        &[
            "target_only",
            "full:transfer=embeddings_only",
            "full:transfer=mlp_wo_bn",
            "full:transfer=all_with_bn",
            "full",
        ],
    ),
    (
        "fig4",
        &["target_only", "full:history_dim=4", "full:history_dim=8", "full", "full:history_dim=32"],
    ),
];

/// Expands preset names (and `grid`, the union of all presets) and arm
/// specs into a de-duplicated arm list, keeping first-appearance order.
pub fn expand_arms(items: &[String]) -> Result<Vec<Arm>> {
    let mut specs: Vec<String> = Vec::new();
    for item in items {
        for part in item.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if part == "grid" {
                specs.extend(PRESETS.iter().flat_map(|(_, a)| a.iter().map(|s| s.to_string())));
            } else if let Some((_, arms)) = PRESETS.iter().find(|(n, _)| *n == part) {
                specs.extend(arms.iter().map(|s| s.to_string()));
            } else {
                specs.push(part.to_string());
            }
        }
    }
    let mut out: Vec<Arm> = Vec::new();
    for s in specs {
        let arm = Arm::parse(&s)?;
        if !out.iter().any(|a| a.label == arm.label) {
            out.push(arm);
        }
    }
    if out.is_empty() {
        return Err(Error::config("no arms selected"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_label_and_overrides() {
        let a = Arm::parse("full:history_months=1").unwrap();
        assert_eq!(a.label, "full:history_months=1");
        let c = a.resolve(&RunConfig::default()).unwrap();
        assert_eq!(c.history_months, 1);
        assert_eq!(c.variant, Variant::Full);
    }

    #[test]
    fn bad_arms_rejected() {
        assert!(Arm::parse("nope").is_err());
        assert!(Arm::parse("full:seeds=4").is_err());
        assert!(Arm::parse("full:foo=1").unwrap().resolve(&RunConfig::default()).is_err());
    }

    #[test]
    fn grid_is_deduplicated() {
        let arms = expand_arms(&["grid".to_string()]).unwrap();
        assert_eq!(arms[0].label, "target_only");
        assert_eq!(arms.len(), 14);
    }
}
