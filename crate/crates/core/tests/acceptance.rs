//! Acceptance suite. Prints one PASS/FAIL line per criterion to stderr
//! (uncaptured) and fails if any criterion fails.
//!
//! The criterion bodies reuse the oracle tests of the sibling test files,
//! so those also run a second time inside this target.

#[path = "models.rs"]
mod models;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ecdctr_core::pipeline::{expand_arms, run_ablation, RunConfig};

const GRADIENT_BUDGET: Duration = Duration::from_secs(30);
const METRIC_BUDGET: Duration = Duration::from_secs(30);
const MERGE_BUDGET: Duration = Duration::from_secs(60);
const GRID_BUDGET: Duration = Duration::from_secs(20 * 60);
const MIN_FULL_GAIN: f64 = 0.005;
const HISTORY_SLACK: f64 = 0.002;

fn line(name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let sep = if detail.is_empty() { "" } else { ": " };
    let _ = writeln!(std::io::stderr(), "[acceptance] {verdict} {name}{sep}{detail}");
}

/// Runs `body`, which signals failure by panicking, within a time budget.
fn timed(name: &str, budget: Option<Duration>, body: impl FnOnce()) -> bool {
    let t = Instant::now();
    let ran = catch_unwind(AssertUnwindSafe(body));
    let took = t.elapsed();
    let in_time = budget.is_none_or(|b| took < b);
    let detail = match (&ran, budget) {
        (Err(_), _) => format!("check failed after {:.1}s", took.as_secs_f64()),
        (Ok(()), Some(b)) => format!("{:.1}s (budget {}s)", took.as_secs_f64(), b.as_secs()),
        (Ok(()), None) => format!("{:.1}s", took.as_secs_f64()),
    };
    let ok = ran.is_ok() && in_time;
    line(name, ok, &detail);
    ok
}

fn directional() -> bool {
    let mut base = RunConfig::default();
    base.set("seeds", "1,2,3").unwrap();
    let arms = expand_arms(&["grid".to_string()]).unwrap();
    let t = Instant::now();
    let report = match run_ablation(&base, &arms, None, 1) {
        Ok(r) => r,
        Err(e) => {
            line("directional replication", false, &format!("grid failed: {e}"));
            return false;
        }
    };
    let took = t.elapsed();
    let mean = |label: &str| -> f64 {
        let g: Vec<f64> = report
            .results
            .iter()
            .filter(|r| r.variant == label)
            .map(|r| r.gauc.unwrap_or(f64::NAN))
            .collect();
        assert_eq!(g.len(), 3, "{label}");
        g.iter().sum::<f64>() / 3.0
    };
    let (target, tpm, cpm, full) = (mean("target_only"), mean("plus_tpm"), mean("plus_cpm"), mean("full"));
    let (source, hm1) = (mean("source_only"), mean("full:history_months=1"));
    let failed_arms = report.results.iter().filter(|r| r.error.is_some()).count();
    let checks = [
        ("full > plus_cpm", full > cpm),
        ("plus_cpm > target_only", cpm > target),
        ("full > plus_tpm", full > tpm),
        ("plus_tpm > target_only", tpm > target),
        ("full - target_only >= 0.005", full - target >= MIN_FULL_GAIN),
        ("source_only < target_only", source < target),
        ("history_months=3 >= history_months=1 - 0.002", full >= hm1 - HISTORY_SLACK),
        ("grid < 20 min", took < GRID_BUDGET),
        ("no failed arms", failed_arms == 0),
    ];
    for (name, ok) in checks {
        line(&format!("directional: {name}"), ok, "");
    }
    let detail = format!(
        "target {target:.4} plus_tpm {tpm:.4} plus_cpm {cpm:.4} full {full:.4} source_only {source:.4} \
         hm1 {hm1:.4}; {} arms in {:.0}s",
        arms.len(),
        took.as_secs_f64()
    );
    let ok = checks.iter().all(|c| c.1);
    line("directional replication", ok, &detail);
    ok
}

#[test]
fn acceptance() {
    let results = [
        timed("gradient suite", Some(GRADIENT_BUDGET), || {
            gradients::dense_layer();
            gradients::relu_mlp();
            gradients::batch_norm_mlp();
            gradients::self_attention();
            gradients::batched_pooled_attention();
            gradients::mean_pooling();
            gradients::sigmoid_cross_entropy();
            gradients::embedding_lookup();
            gradients::history_path_end_to_end();
        }),
        timed("metric oracle", Some(METRIC_BUDGET), metrics::auc_and_gauc_match_pairwise_brute_force),
        timed("merge equivalence", Some(MERGE_BUDGET), models::merged_tables_serve_the_same_scores),
        timed("transfer contract", None, || {
            models::all_transfer_resets_bn_and_copies_everything_else_bitwise();
            models::all_with_bn_transfer_reproduces_cpm_outputs();
        }),
        timed("schedule and hygiene", None, || {
            pipeline::full_run_fires_the_expected_schedule();
            pipeline::overlap_guard();
        }),
        timed("determinism", None, pipeline::same_seed_gives_identical_artifacts),
        timed("history triple shape", None, models::history_triple_concatenates_to_forty_eight),
        directional(),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
