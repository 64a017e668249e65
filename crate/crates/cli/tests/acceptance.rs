//! Acceptance run: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Runs with `harness = false` so the lines are always printed. Criteria
//! whose inputs are absent from the machine (the N-MNIST recordings) are
//! reported as failing but do not change the exit code; everything else does.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use eprop_cli::run::{run_scaling_benchmark, scaling_consistency, train, TrainingOutcome};
use eprop_cli::settings::{load_config_file, resolve_partial, Experiment, Overrides, ScalingSpec};
use eprop_core::engine::training::Phase;
use eprop_core::verify::{self, CheckResult};
use eprop_core::{SimMode, Variant};
use eprop_tasks::nmnist::dataset_root;
use serde_json::Value;

const MODE_LOSS_TOL: f64 = 1e-9;
const MODE_ITERATIONS: usize = 4;
const PATTERN_LOSS_RATIO: f64 = 0.5;
const PATTERN_WINDOW: usize = 20;
const EVIDENCE_MAX_ERROR: f64 = 0.35;
const EVIDENCE_SEEDS_NEEDED: usize = 2;
const EVIDENCE_RUN_LIMIT: Duration = Duration::from_secs(10 * 60);
const NMNIST_MAX_ERROR: f64 = 0.4;
const NMNIST_WINDOW: usize = 50;
const SCALING_RATE_HZ: f64 = 5.0;
const SCALING_PLASTIC_WORKERS: usize = 1;

struct Line {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    /// Inputs missing on this machine; reported, not enforced.
    unavailable: bool,
}

impl Line {
    fn print(&self) {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let note = if self.unavailable { " (not enforced: input data absent)" } else { "" };
        println!(
            "[{tag}] {}: {} [{:.1} s]{note}",
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        );
    }
}

fn timed(name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Result<(bool, String), String>) -> Line {
    let clock = Instant::now();
    let (mut passed, mut detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let elapsed = clock.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; runtime over the {} s limit", limit.as_secs()));
        }
    }
    let line = Line {
        name,
        passed,
        detail,
        elapsed,
        unavailable: false,
    };
    line.print();
    line
}

fn from_check(name: &'static str, limit: Option<Duration>, check: impl FnOnce() -> CheckResult) -> Line {
    timed(name, limit, || {
        let c = check();
        Ok((c.passed, c.detail))
    })
}

fn config(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    load_config_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn train_with(exp: Experiment, file: Value, flags: Overrides) -> Result<TrainingOutcome, String> {
    let partial = resolve_partial(exp, file, flags).map_err(|e| e.to_string())?;
    let (outcome, _, _) = train(partial, |_| {}).map_err(|e| e.to_string())?;
    Ok(outcome)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn train_losses(o: &TrainingOutcome) -> Vec<f64> {
    o.rows(Phase::Train).map(|m| m.loss).collect()
}

/// Mean prediction error of the last evaluation phase.
fn final_test_error(o: &TrainingOutcome) -> Option<f64> {
    let last = o.rows(Phase::Test).last()?.iteration;
    let errs: Vec<f64> = o
        .rows(Phase::Test)
        .filter(|m| m.iteration == last)
        .filter_map(|m| m.prediction_error)
        .collect();
    (!errs.is_empty()).then(|| mean(&errs))
}

fn mode_equivalence() -> Result<(bool, String), String> {
    let mut worst = 0.0f64;
    for seed in 1..=3 {
        let run = |mode| {
            let flags = Overrides {
                seed: Some(seed),
                mode: Some(mode),
                iterations: Some(MODE_ITERATIONS),
                ..Default::default()
            };
            train_with(Experiment::PatternGeneration, config("pattern-generation.toml"), flags)
        };
        let ed = train_losses(&run(SimMode::EventDriven)?);
        let td = train_losses(&run(SimMode::TimeDriven)?);
        if ed.len() != MODE_ITERATIONS || td.len() != MODE_ITERATIONS {
            return Err("missing iterations".into());
        }
        for (a, b) in ed.iter().zip(&td) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok((worst < MODE_LOSS_TOL, format!("max |loss_event - loss_time| = {worst:.3e} over seeds 1-3")))
}

fn pattern_learning() -> Result<(bool, String), String> {
    let mut ratios = Vec::new();
    for seed in 1..=3 {
        let flags = Overrides {
            seed: Some(seed),
            ..Default::default()
        };
        let o = train_with(
            Experiment::PatternGeneration,
            config("pattern-generation-output-only.toml"),
            flags,
        )?;
        let l = train_losses(&o);
        if l.len() < 2 * PATTERN_WINDOW {
            return Err(format!("only {} iterations", l.len()));
        }
        ratios.push(mean(&l[l.len() - PATTERN_WINDOW..]) / mean(&l[..PATTERN_WINDOW]));
    }
    let ok = ratios.iter().filter(|&&r| r < PATTERN_LOSS_RATIO).count();
    Ok((
        ok == 3,
        format!("final/initial loss ratios {ratios:.3?}, {ok}/3 below {PATTERN_LOSS_RATIO}"),
    ))
}

fn evidence_learning() -> Result<(bool, String), String> {
    let mut errors = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 1..=3 {
        let flags = Overrides {
            seed: Some(seed),
            ..Default::default()
        };
        let clock = Instant::now();
        let o = train_with(Experiment::EvidenceAccumulation, config("evidence-accumulation.toml"), flags)?;
        slowest = slowest.max(clock.elapsed());
        errors.push(final_test_error(&o).ok_or("no evaluation phase")?);
    }
    let ok = errors.iter().filter(|&&e| e < EVIDENCE_MAX_ERROR).count();
    Ok((
        ok >= EVIDENCE_SEEDS_NEEDED && slowest < EVIDENCE_RUN_LIMIT,
        format!(
            "final test errors {errors:.3?}, {ok}/3 below {EVIDENCE_MAX_ERROR}; slowest run {:.0} s (limit {} s)",
            slowest.as_secs_f64(),
            EVIDENCE_RUN_LIMIT.as_secs()
        ),
    ))
}

fn nmnist_parity() -> Line {
    let name = "e-prop+ parity on N-MNIST 0 vs 1";
    if let Err(e) = dataset_root(None) {
        let line = Line {
            name,
            passed: false,
            detail: format!("{e}; set NMNIST_ROOT to run"),
            elapsed: Duration::ZERO,
            unavailable: true,
        };
        line.print();
        return line;
    }
    timed(name, Some(Duration::from_secs(20 * 60)), || {
        let mut parts = Vec::new();
        let mut ok = true;
        for variant in [Variant::Bsshslm2020, Variant::EpropPlus] {
            let flags = Overrides {
                variant: Some(variant),
                ..Default::default()
            };
            let o = train_with(Experiment::Nmnist, config("nmnist.toml"), flags)?;
            let errs: Vec<f64> = o.rows(Phase::Train).filter_map(|m| m.prediction_error).collect();
            let tail = mean(&errs[errs.len().saturating_sub(NMNIST_WINDOW)..]);
            ok &= tail < NMNIST_MAX_ERROR;
            parts.push(format!("{variant:?} training error {tail:.3}"));
        }
        Ok((ok, parts.join(", ")))
    })
}

fn scaling() -> Result<(bool, String), String> {
    // static runs on every worker count; one plastic run, which takes about
    // twenty minutes on one core
    let spec = ScalingSpec {
        plastic: vec![false],
        ..ScalingSpec::default()
    };
    let plastic_spec = ScalingSpec {
        plastic: vec![true],
        workers: vec![SCALING_PLASTIC_WORKERS],
        ..ScalingSpec::default()
    };
    let mut rows = run_scaling_benchmark(&spec).map_err(|e| e.to_string())?;
    rows.extend(run_scaling_benchmark(&plastic_spec).map_err(|e| e.to_string())?);
    let mut problems = scaling_consistency(&rows);
    for (r, _) in &rows {
        if r.recurrent_rate_hz != SCALING_RATE_HZ {
            problems.push(format!("rate {} Hz with {} workers", r.recurrent_rate_hz, r.workers));
        }
        if !(r.runtime_s > 0.0 && r.real_time_factor > 0.0) {
            problems.push("runtime not reported".into());
        }
    }
    let runtime = |plastic: bool| -> Option<f64> {
        rows.iter()
            .find(|(r, _)| r.plastic == plastic && r.workers == SCALING_PLASTIC_WORKERS)
            .map(|(r, _)| r.runtime_s)
    };
    match (runtime(false), runtime(true)) {
        (Some(fixed), Some(plastic)) if plastic <= fixed => {
            problems.push(format!("plastic run ({plastic:.2} s) not slower than static ({fixed:.2} s)"))
        }
        (Some(_), Some(_)) => {}
        _ => problems.push("missing static or plastic run".into()),
    }
    let rtf: Vec<String> = rows
        .iter()
        .map(|(r, _)| format!("{}w{}:{:.3}", r.workers, if r.plastic { "p" } else { "s" }, r.real_time_factor))
        .collect();
    let detail = if problems.is_empty() {
        format!(
            "{} neurons at {} Hz, identical spikes over workers {:?} and the plastic run; real-time factors {}",
            spec.network.n_rec,
            SCALING_RATE_HZ,
            spec.workers,
            rtf.join(" ")
        )
    } else {
        problems.join("; ")
    };
    Ok((problems.is_empty(), detail))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply here.
    let seed = 1;
    let secs = |s| Some(Duration::from_secs(s));
    let lines = vec![
        timed("mode equivalence", secs(60), mode_equivalence),
        from_check("algorithm equivalence", secs(10), || verify::algorithm_equivalence(seed, 50)),
        from_check("online/offline oracle", secs(30), || verify::online_offline_oracle(seed, 100)),
        from_check("readout finite differences", None, || verify::readout_finite_differences(seed, 20)),
        timed("pattern generation learns", secs(5 * 60), pattern_learning),
        timed("evidence accumulation learns", None, evidence_learning),
        nmnist_parity(),
        from_check("delay alignment", None, || verify::delay_alignment(seed)),
        from_check("history memory bounds", None, || verify::history_memory_bounds(seed, 100_000)),
        from_check("adam unit step", None, verify::adam_unit_step),
        timed("scaling harness", None, scaling),
    ];
    let enforced_failures = lines.iter().filter(|l| !l.passed && !l.unavailable).count();
    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
    if enforced_failures > 0 {
        std::process::exit(1);
    }
}
