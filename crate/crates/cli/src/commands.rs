use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use matchdiag_core::diagnostic::{run_diagnostic, verdict, DiagnosticConfig, Verdict};
use matchdiag_core::infer::{gamma_curve, parse_gamma_grid, Side};
use matchdiag_core::matching::{balance_table, pair_match, parse_cohort_csv, write_balance_csv};
use matchdiag_core::metric::MetricForm;
use matchdiag_core::model::{parse_matched_csv, write_matched_csv, CovariateSelection, MatchedSample, Standardization};
use matchdiag_core::outcome::{outcome_report, AssumptionTest, DiscordantSummary};
use matchdiag_core::simulate::{run_cell, SimCellConfig, SimCellResult};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Command, DiagnosticArgs, MatchArgs, OutcomeArgs, RsvArgs, SimulateArgs, TestArgs};
use crate::error::{CliError, Result};
use crate::manifest::{InputDigest, RunManifest};

/// Result of one subcommand before the manifest is attached.
pub struct Run {
    pub seed: Option<u64>,
    /// The command with every default and the seed filled in.
    pub command: Command,
    pub inputs: Vec<InputDigest>,
    pub flags: BTreeMap<String, Value>,
    pub body: Value,
    pub text: String,
}

pub const ROLLUP_COLUMNS: [&str; 10] = [
    "n", "M", "SMD_X1", "SMD_0.50", "power_met", "power_van", "H-L est", "MSE", "RSV_met", "RSV_van",
];

fn resolve_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or_else(rand::random);
    eprintln!("seed: {seed}");
    seed
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(CliError::io(path))
}

fn selection(patterns: &[String]) -> CovariateSelection {
    CovariateSelection::from_patterns(patterns)
}

pub fn execute(command: &Command) -> Result<Run> {
    match command {
        Command::Test(a) => cmd_test(a),
        Command::Rsv(a) => cmd_rsv(a),
        Command::Match(a) => cmd_match(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Outcome(a) => cmd_outcome(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested".into())),
    }
}

// ---------------------------------------------------------------------------
// test / rsv / outcome
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ClusteringInfo {
    restart: usize,
    iterations: usize,
    converged: bool,
    objective: f64,
    degenerate_fallbacks: usize,
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    t: u64,
    num_sets: u64,
    controls_per_set: u64,
    alpha: f64,
    p_exact: f64,
    p_asymptotic: f64,
    decision: &'static str,
    reject: bool,
    rsv: f64,
    rsv_diagnostic: Option<String>,
    metric: MetricForm,
    dform_weights: Option<Vec<f64>>,
    metric_matrix: Option<Vec<Vec<f64>>>,
    clustering: Option<ClusteringInfo>,
    standardization: Option<Standardization>,
    t_override: bool,
}

struct Diagnosis {
    report: TestReport,
    verdict: Verdict,
    config: DiagnosticConfig,
    sample: Option<MatchedSample>,
    inputs: Vec<InputDigest>,
}

fn diagnostic_config(a: &DiagnosticArgs, seed: u64) -> DiagnosticConfig {
    let mut cfg = DiagnosticConfig::new(a.metric.form(), seed);
    cfg.kmeans.restarts = a.restarts;
    cfg.kmeans.max_iter = a.max_iter;
    cfg.standardize = !a.no_standardize;
    cfg.alpha = a.alpha;
    cfg.decision = a.decision.decision();
    cfg.centering = a.two_sided_centering.centering();
    cfg.mode = a.mode.mode();
    cfg
}

fn check_diagnostic_args(a: &DiagnosticArgs) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    if a.restarts == 0 || a.max_iter == 0 {
        return Err(CliError::Usage("--restarts and --max-iter must be at least 1".into()));
    }
    Ok(())
}

fn diagnose(a: &DiagnosticArgs, seed: u64, flags: &mut BTreeMap<String, Value>) -> Result<Diagnosis> {
    check_diagnostic_args(a)?;
    let cfg = diagnostic_config(a, seed);
    let mut inputs = Vec::new();
    let sample = match &a.input {
        Some(path) => {
            inputs.push(InputDigest::of(path)?);
            Some(parse_matched_csv(path, &selection(&a.covariates)).map_err(CliError::input(path))?)
        }
        None => None,
    };
    let (v, summary) = match (a.t_override, &sample) {
        (Some(t), _) => {
            let (i, k) = match &sample {
                Some(s) => (s.num_sets() as u64, s.controls_per_set() as u64),
                None => (
                    a.num_sets
                        .ok_or_else(|| CliError::Usage("--t-override without --input needs --num-sets".into()))?,
                    a.controls_per_set,
                ),
            };
            if t > i {
                return Err(CliError::Usage(format!("--t-override {t} exceeds the {i} matched sets")));
            }
            flags.insert("infer.t_override".into(), json!(t));
            (verdict(i, k, t, &cfg)?, None)
        }
        (None, Some(s)) => {
            let path = a.input.as_deref().expect("sample comes from --input");
            let (summary, v) = run_diagnostic(s, &cfg).map_err(CliError::input(path))?;
            (v, Some(summary))
        }
        (None, None) => return Err(CliError::Usage("--input is required".into())),
    };
    if let Some(msg) = &v.rsv.diagnostic {
        flags.insert("infer.rsv_grid_scan".into(), json!(msg));
    }
    if let Some(s) = &summary {
        if s.degenerate_fallbacks > 0 {
            flags.insert("metric.degenerate_fallbacks".into(), json!(s.degenerate_fallbacks));
        }
        if let Some(dropped) = s.standardization.as_ref().filter(|st| !st.dropped.is_empty()) {
            flags.insert("model.dropped_zero_variance".into(), json!(dropped.dropped));
        }
        if !s.converged {
            flags.insert("cluster.max_iter_reached".into(), json!(true));
        }
    }
    let metric = summary.as_ref().and_then(|s| s.metric.as_ref());
    let report = TestReport {
        t: v.t,
        num_sets: v.num_sets,
        controls_per_set: v.controls_per_set,
        alpha: cfg.alpha,
        p_exact: v.p_exact,
        p_asymptotic: v.p_asymptotic,
        decision: if v.reject { "reject" } else { "do_not_reject" },
        reject: v.reject,
        rsv: v.rsv.rsv,
        rsv_diagnostic: v.rsv.diagnostic.clone(),
        metric: cfg.form,
        dform_weights: metric.and_then(|m| m.dform_weights.clone()),
        metric_matrix: metric.map(|m| m.a.to_rows()),
        clustering: summary.as_ref().map(|s| ClusteringInfo {
            restart: s.restart,
            iterations: s.iterations,
            converged: s.converged,
            objective: s.objective,
            degenerate_fallbacks: s.degenerate_fallbacks,
        }),
        standardization: summary.and_then(|s| s.standardization),
        t_override: a.t_override.is_some(),
    };
    Ok(Diagnosis {
        report,
        verdict: v,
        config: cfg,
        sample,
        inputs,
    })
}

fn test_text(r: &TestReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "matched sets I = {}, controls per set K = {}", r.num_sets, r.controls_per_set);
    let _ = writeln!(s, "statistic t    = {}", r.t);
    let _ = writeln!(s, "p (exact)      = {:.6}", r.p_exact);
    let _ = writeln!(s, "p (asymptotic) = {:.6}", r.p_asymptotic);
    let _ = writeln!(s, "decision       = {} at alpha = {}", r.decision, r.alpha);
    let _ = writeln!(s, "RSV            = {:.4}", r.rsv);
    if let Some(w) = &r.dform_weights {
        let shown: Vec<String> = w.iter().map(|x| format!("{x:.4}")).collect();
        let _ = writeln!(s, "dform weights  = [{}]", shown.join(", "));
    }
    s
}

fn cmd_test(a: &TestArgs) -> Result<Run> {
    let seed = resolve_seed(a.diag.seed);
    let mut flags = BTreeMap::new();
    let d = diagnose(&a.diag, seed, &mut flags)?;
    let mut resolved = a.clone();
    resolved.diag.seed = Some(seed);
    Ok(Run {
        seed: Some(seed),
        command: Command::Test(resolved),
        inputs: d.inputs,
        flags,
        text: test_text(&d.report),
        body: serde_json::to_value(&d.report)?,
    })
}

fn cmd_rsv(a: &RsvArgs) -> Result<Run> {
    let seed = resolve_seed(a.diag.seed);
    let mut flags = BTreeMap::new();
    let gammas = parse_gamma_grid(&a.gamma_grid)?;
    let d = diagnose(&a.diag, seed, &mut flags)?;
    let v = &d.verdict;
    let curve = gamma_curve(v.num_sets, v.controls_per_set, v.t, &gammas, Side::TwoSided, d.config.centering)?;
    if let Some(path) = &a.curve_out {
        let mut w = create(path)?;
        let mut out = String::from("gamma,p_exact,p_asymptotic\n");
        for p in &curve {
            let _ = writeln!(out, "{},{},{}", p.gamma, p.p_exact, p.p_asymptotic);
        }
        w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(CliError::io(path))?;
    }
    let mut text = test_text(&d.report);
    let _ = writeln!(text, "\n{:>8}  {:>12}  {:>12}", "gamma", "p_exact", "p_asympt");
    for p in &curve {
        let _ = writeln!(text, "{:>8.4}  {:>12.6}  {:>12.6}", p.gamma, p.p_exact, p.p_asymptotic);
    }
    let mut body = serde_json::to_value(&d.report)?;
    body["curve"] = serde_json::to_value(&curve)?;
    body["curve_path"] = serde_json::to_value(&a.curve_out)?;
    let mut resolved = a.clone();
    resolved.diag.seed = Some(seed);
    Ok(Run {
        seed: Some(seed),
        command: Command::Rsv(resolved),
        inputs: d.inputs,
        flags,
        body,
        text,
    })
}

fn cmd_outcome(a: &OutcomeArgs) -> Result<Run> {
    let seed = resolve_seed(a.diag.seed);
    if a.diag.input.is_none() {
        return Err(CliError::Usage("outcome needs --input with an outcome column".into()));
    }
    let mut flags = BTreeMap::new();
    let d = diagnose(&a.diag, seed, &mut flags)?;
    let path = a.diag.input.as_deref().expect("checked above");
    let sample = d.sample.as_ref().expect("input was parsed");
    let summary = DiscordantSummary::from_sample(sample).map_err(CliError::input(path))?;
    let v = &d.verdict;
    let test = AssumptionTest {
        num_sets: v.num_sets,
        controls_per_set: v.controls_per_set,
        t: v.t,
        mode: d.config.mode,
        centering: d.config.centering,
    };
    let rsv = a.rsv.unwrap_or(v.rsv.rsv);
    let report = outcome_report(summary, Some(test), &a.gammas, rsv, a.side.side())?;
    if report.no_discordant_pairs {
        flags.insert("outcome.no_discordant_pairs".into(), json!(true));
    }
    let mut text = test_text(&d.report);
    let _ = writeln!(
        text,
        "\ndiscordant pairs = {}, treated events = {}",
        summary.discordant, summary.treated_events
    );
    let _ = writeln!(text, "{:>8}  {:>16}  {:>16}", "gamma", "assumption test", "outcome");
    for row in &report.rows {
        let mark = if row.highlighted { "  <- RSV" } else { "" };
        let _ = writeln!(
            text,
            "{:>8.4}  {:>16.4}  {:>16.4}{mark}",
            row.gamma, row.p_assumption, row.p_outcome
        );
    }
    let body = json!({ "assumption": d.report, "outcome": report });
    let mut resolved = a.clone();
    resolved.diag.seed = Some(seed);
    Ok(Run {
        seed: Some(seed),
        command: Command::Outcome(resolved),
        inputs: d.inputs,
        flags,
        body,
        text,
    })
}

// ---------------------------------------------------------------------------
// match
// ---------------------------------------------------------------------------

fn cmd_match(a: &MatchArgs) -> Result<Run> {
    if !(a.caliper > 0.0) || !a.caliper.is_finite() {
        return Err(CliError::Usage(format!("--caliper must be positive, got {}", a.caliper)));
    }
    let inputs = vec![InputDigest::of(&a.input)?];
    let cohort = parse_cohort_csv(&a.input, &selection(&a.covariates)).map_err(CliError::input(&a.input))?;
    let options = matchdiag_core::matching::MatchOptions {
        caliper_sd: a.caliper,
        robust: a.robust,
        swap_roles: a.swap_roles,
        ..a.matcher.kind().options()
    };
    let result = pair_match(&cohort, &options).map_err(CliError::input(&a.input))?;
    let balance = balance_table(&cohort, &result.sample)?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        write_matched_csv(&result.sample, &mut w)?;
        w.flush().map_err(CliError::io(path))?;
    }
    if let Some(path) = &a.balance_out {
        let mut w = create(path)?;
        write_balance_csv(&balance, &mut w)?;
        w.flush().map_err(CliError::io(path))?;
    }
    let mut flags = BTreeMap::new();
    if result.roles_swapped {
        flags.insert("matching.roles_swapped".into(), json!(true));
    }
    if result.propensity.as_ref().is_some_and(|p| p.ridge_fallback) {
        flags.insert("matching.propensity_ridge_fallback".into(), json!(true));
    }
    let mut text = format!(
        "matcher {}: {} pairs, total distance {:.6}\n\n{:<16}  {:>10}  {:>10}\n",
        a.matcher.kind().label(),
        result.pairs.len(),
        result.total_distance,
        "covariate",
        "SMD before",
        "SMD after"
    );
    for r in &balance.rows {
        let _ = writeln!(text, "{:<16}  {:>10.4}  {:>10.4}", r.covariate, r.smd_before, r.smd_after);
    }
    let body = json!({
        "matcher": a.matcher.kind(),
        "num_pairs": result.pairs.len(),
        "total_distance": result.total_distance,
        "roles_swapped": result.roles_swapped,
        "propensity": result.propensity,
        "pairs": result.pairs,
        "balance": balance,
    });
    Ok(Run {
        seed: None,
        command: Command::Match(a.clone()),
        inputs,
        flags,
        body,
        text,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cell_config(a: &SimulateArgs, n: usize, d: usize, c: f64, matcher: crate::args::MatcherArg, seed: u64) -> SimCellConfig {
    let mut cfg = SimCellConfig::new(n, d, c, matcher.kind(), seed);
    cfg.clusterer = a.clusterer.kind();
    cfg.metric_form = a.metric.form();
    cfg.reps = a.reps;
    cfg.alpha = a.alpha;
    cfg.restarts = a.restarts;
    cfg.max_iter = a.max_iter;
    cfg.standardize = !a.no_standardize;
    cfg.mode = a.mode.mode();
    cfg.centering = a.two_sided_centering.centering();
    cfg
}

fn cell_summary(result: &SimCellResult) -> Result<Value> {
    let mut v = serde_json::to_value(result)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("records");
    }
    Ok(v)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn rollup_row(result: &SimCellResult) -> [String; 10] {
    [
        result.config.n.to_string(),
        result.config.matcher.label().to_string(),
        result.smd_x1.to_string(),
        result.smd_median.to_string(),
        opt_cell(result.power_met),
        opt_cell(result.power_van),
        result.hl_est.to_string(),
        result.mse.to_string(),
        opt_cell(result.rsv_met),
        opt_cell(result.rsv_van),
    ]
}

fn cell_text(r: &SimCellResult) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    format!(
        "{:>6} {:>6} {:>4} {:>5}  SMD_X1 {:.3}  SMD_0.50 {:.3}  power_met {}  power_van {}  H-L {:.3}  MSE {:.4}  RSV_met {}  RSV_van {}  ({} ok, {} failed)\n",
        r.config.matcher.label(),
        r.config.n,
        r.config.d,
        r.config.c,
        r.smd_x1,
        r.smd_median,
        opt(r.power_met),
        opt(r.power_van),
        r.hl_est,
        r.mse,
        opt(r.rsv_met),
        opt(r.rsv_van),
        r.reps_ok,
        r.reps_failed
    )
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Run> {
    let seed = resolve_seed(a.seed);
    let mut resolved = a.clone();
    resolved.seed = Some(seed);
    let mut flags = BTreeMap::new();
    let (body, text) = if a.grid {
        simulate_grid(a, seed, &mut flags)?
    } else {
        let cfg = cell_config(a, a.n, a.d, a.c, a.matcher, seed);
        let result = run_cell(&cfg)?;
        if result.reps_failed > 0 {
            flags.insert("simulate.reps_failed".into(), json!(result.reps_failed));
        }
        if let Some(path) = &a.jsonl {
            let mut w = create(path)?;
            for r in &result.records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n").map_err(CliError::io(path))?;
            }
            w.flush().map_err(CliError::io(path))?;
        }
        (serde_json::to_value(&result)?, cell_text(&result))
    };
    Ok(Run {
        seed: Some(seed),
        command: Command::Simulate(resolved),
        inputs: Vec::new(),
        flags,
        body,
        text,
    })
}

/// Every cell reuses the master seed, so cells sharing (n, d, c) see the same
/// simulated cohorts and any cell can be rerun alone with the same `--seed`.
fn simulate_grid(a: &SimulateArgs, seed: u64, flags: &mut BTreeMap<String, Value>) -> Result<(Value, String)> {
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut cells = Vec::new();
    let mut rollups: Vec<PathBuf> = Vec::new();
    let mut text = String::new();
    let mut failed = 0;
    for &d in &a.grid_d {
        for &c in &a.grid_c {
            let mut rows = Vec::new();
            for &n in &a.grid_n {
                for &m in &a.grid_matchers {
                    let result = run_cell(&cell_config(a, n, d, c, m, seed))?;
                    failed += result.reps_failed;
                    text.push_str(&cell_text(&result));
                    if let Some(dir) = &a.out_dir {
                        write_json(&dir.join(format!("cell_n{n}_d{d}_c{c}_{}.json", m.kind().label())), &result)?;
                    }
                    rows.push(rollup_row(&result));
                    cells.push(cell_summary(&result)?);
                }
            }
            if let Some(dir) = &a.out_dir {
                let path = dir.join(format!("rollup_d{d}_c{c}.csv"));
                let mut out = ROLLUP_COLUMNS.join(",");
                out.push('\n');
                for row in rows {
                    out.push_str(&row.join(","));
                    out.push('\n');
                }
                let mut w = create(&path)?;
                w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(CliError::io(&path))?;
                rollups.push(path);
            }
        }
    }
    if failed > 0 {
        flags.insert("simulate.reps_failed".into(), json!(failed));
    }
    Ok((json!({ "grid": true, "cells": cells, "rollups": rollups }), text))
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

/// Drops the report destination; artifact paths are kept so a replay also
/// regenerates them.
fn without_report(command: &Command) -> Command {
    let mut c = command.clone();
    match &mut c {
        Command::Test(a) => a.output = Default::default(),
        Command::Rsv(a) => a.output = Default::default(),
        Command::Match(a) => a.output = Default::default(),
        Command::Simulate(a) => {
            a.out = None;
            a.output = Default::default();
        }
        Command::Outcome(a) => a.output = Default::default(),
        Command::Replay(_) => {}
    }
    c
}

/// Report with the manifest removed: the part replay must reproduce.
pub fn numeric_body(report: &Value) -> Value {
    let mut v = report.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("manifest");
    }
    v
}

pub fn load_report(path: &Path) -> Result<(Value, RunManifest)> {
    let data = std::fs::read(path).map_err(CliError::io(path))?;
    let report: Value = serde_json::from_slice(&data)?;
    let manifest = report
        .get("manifest")
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("{}: report has no manifest", path.display())))?;
    Ok((report, serde_json::from_value(manifest)?))
}

/// Re-runs the recorded command after checking input digests. Returns the
/// fresh run and whether its numeric body matches the recorded one.
pub fn replay(path: &Path) -> Result<(Run, Value)> {
    let (report, manifest) = load_report(path)?;
    for input in &manifest.inputs {
        let now = InputDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Usage(format!(
                "{}: input changed since the report was written (sha256 {} != {})",
                input.path.display(),
                now.sha256,
                input.sha256
            )));
        }
    }
    let mut run = execute(&without_report(&manifest.command))?;
    run.command = manifest.command;
    Ok((run, numeric_body(&report)))
}
