use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{world_key, Arm, Pipeline, RunCache, RunConfig, SimData};
use crate::error::{Error, Result};
use crate::eval::{ArmResult, EvalReport};

/// Directory name for an arm label; keeps letters, digits, `_` and `.`.
pub fn arm_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| match c {
            ':' | ';' => '_',
            '=' => '-',
            c if c.is_ascii_alphanumeric() || c == '_' || c == '.' => c,
            _ => '_',
        })
        .collect()
}

fn failed(label: &str, seed: u64, err: &Error) -> ArmResult {
    ArmResult {
        variant: label.to_string(),
        seed,
        gauc: None,
        auc: None,
        error: Some(err.to_string()),
    }
}

/// Runs every arm for one seed, sharing generated data and trained
/// artifacts between arms. A failing arm yields a failed row.
fn run_seed(base: &RunConfig, arms: &[Arm], seed: u64, out: Option<&Path>) -> EvalReport {
    let mut report = EvalReport::new(base.fingerprint());
    let mut worlds: HashMap<String, Result<SimData>> = HashMap::new();
    let mut cache = RunCache::new();
    for arm in arms {
        let config = match arm.resolve(base) {
            Ok(c) => c,
            Err(e) => {
                report.results.push(failed(&arm.label, seed, &e));
                continue;
            }
        };
        let data = worlds
            .entry(world_key(&config))
            .or_insert_with(|| SimData::generate(&config, seed));
        let data = match data {
            Ok(d) => &*d,
            Err(e) => {
                report.results.push(failed(&arm.label, seed, e));
                continue;
            }
        };
        let dir: Option<PathBuf> = out.map(|o| o.join(arm_dir_name(&arm.label)).join(format!("seed{seed}")));
        let outcome = Pipeline::new(&config, data, dir, Some(&mut cache)).and_then(|p| p.run(&arm.label));
        match outcome {
            Ok(o) => report.extend(o.report),
            Err(e) => report.results.push(failed(&arm.label, seed, &e)),
        }
    }
    report
}

/// Runs `arms × base.seeds`, up to `jobs` seeds at a time, and writes the
/// combined report (`report.csv`, `report.md`, `daily.csv`) under `out`.
pub fn run_ablation(base: &RunConfig, arms: &[Arm], out: Option<&Path>, jobs: usize) -> Result<EvalReport> {
    if arms.is_empty() {
        return Err(Error::config("ablation needs at least one arm"));
    }
    base.validate()?;
    let seeds = base.seeds.clone();
    let parts: Mutex<Vec<(usize, EvalReport)>> = Mutex::new(Vec::new());
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, seeds.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&seed) = seeds.get(i) else { break };
                let r = run_seed(base, arms, seed, out);
                parts.lock().expect("lock").push((i, r));
            });
        }
    });
    let mut parts = parts.into_inner().expect("lock");
    parts.sort_by_key(|(i, _)| *i);

    let mut report = EvalReport::new(base.fingerprint());
    for (_, r) in parts {
        report.extend(r);
    }
    let order: HashMap<&str, usize> = arms.iter().enumerate().map(|(i, a)| (a.label.as_str(), i)).collect();
    report.results.sort_by_key(|r| (order.get(r.variant.as_str()).copied(), r.seed));
    report.daily.sort_by_key(|d| (order.get(d.variant.as_str()).copied(), d.seed, d.day));

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("config.txt", base.to_text())?;
        write("report.csv", report.to_csv())?;
        write("report.md", report.to_markdown())?;
        write("daily.csv", report.daily_csv())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_names_are_path_safe() {
        assert_eq!(arm_dir_name("full"), "full");
        assert_eq!(arm_dir_name("full:history_months=1;dim=8"), "full_history_months-1_dim-8");
        assert_eq!(arm_dir_name("a/b c"), "a_b_c");
    }
}
