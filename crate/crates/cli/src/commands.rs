use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use radar_core::diff::{Diff, LifecycleEvent, SourceVariant};
use radar_core::eligibility::{LedgerKeeper, RunbookLedger};
use radar_core::eventlog::{read_log, replay, LogError, LogPayload, LogWriter};
use radar_core::exec::Exec;
use radar_core::funnel::{Funnel, PauseControl, PipelineDecision};
use radar_core::ingest::{ingest as ingest_text, ledgers_to_jsonl, read_ledgers, read_scores, LineError};
use radar_core::policy::{load_policy, PolicySet, PxThreshold};
use radar_core::review::{BackendKind, ExternalBackend, ReviewBackend, RuleBackend};
use radar_core::risk::{recall_at_flag_rate, CalibrationWindow, RiskScorer};
use radar_core::sim::{
    compare_radar_vs_human, generate_stream, preset, safety_check, simulate as run_simulation, threshold_sweep, Comparison,
    SafetyCheck, ScenarioConfig, SimError, SweepRow,
};
use radar_core::stats::{fisher_exact_two_sided, TwoByTwoTable};
use radar_core::telemetry::{DecisionEvent, MetricSummary, MetricWindow};
use serde::Serialize;

use crate::{
    CliError, EvaluateArgs, Format, Global, IngestArgs, PauseArgs, ReportArgs, ScenarioArgs, SimulateArgs,
    StatsCommand, SweepArgs, ValidateArgs, WindowArg,
};

pub const DEFAULT_CONTROL: &str = ".radar/control.json";

type CliResult = Result<(), CliError>;

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn line_errors(errors: &[LineError]) -> CliError {
    for e in errors {
        eprintln!("{e}");
    }
    CliError::Input(format!("{} invalid line(s)", errors.len()))
}

fn policy(g: &Global) -> Result<PolicySet, CliError> {
    match &g.policy {
        Some(p) => load_policy(&read_input(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => Ok(PolicySet::default()),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

/// Writes `name` under `--out`, creating the directory.
fn write_out(g: &Global, name: &str, content: &str) -> CliResult {
    let dir = g.out.as_ref().expect("caller checked --out");
    fs::create_dir_all(dir).map_err(internal)?;
    fs::write(dir.join(name), content).map_err(internal)
}

/// Writes `name` under `--out` when given; otherwise prints it.
fn emit(g: &Global, name: &str, content: &str) -> CliResult {
    if g.out.is_some() {
        write_out(g, name, content)
    } else {
        print!("{content}");
        Ok(())
    }
}

fn append_lines(path: &Path, content: &str) -> CliResult {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(internal)?;
    f.write_all(content.as_bytes()).map_err(internal)
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Config(_) | SimError::TooFewThresholds => CliError::Input(e.to_string()),
        other => internal(other),
    }
}

// ---------------------------------------------------------------------------

pub fn ingest(g: &Global, a: &IngestArgs) -> CliResult {
    let diffs_text = read_input(&a.diffs)?;
    let events_text = a.events.as_deref().map(read_input).transpose()?;
    let got = ingest_text(&diffs_text, events_text.as_deref());
    if !got.errors.is_empty() {
        return Err(line_errors(&got.errors));
    }

    let mut events: Vec<(&Diff, &LifecycleEvent)> =
        got.diffs.iter().flat_map(|d| d.events.iter().map(move |e| (d, e))).collect();
    events.sort_by_key(|(_, e)| e.at);

    if let Some(path) = &a.ledger {
        let mut ledgers = if path.exists() {
            read_ledgers(&read_input(path)?).map_err(|e| line_errors(&e))?
        } else {
            BTreeMap::new()
        };
        let mut added: BTreeMap<String, RunbookLedger> = BTreeMap::new();
        for (d, e) in &events {
            let Some(rb) = d.source.runbook_name() else { continue };
            if RunbookLedger::new(rb).record_outcome(e).is_err() {
                continue; // not a ledger outcome
            }
            ledgers
                .entry(rb.to_string())
                .or_insert_with(|| RunbookLedger::new(rb))
                .record_outcome(e)
                .map_err(|err| CliError::Input(format!("ledger {rb}: {err}")))?;
            added
                .entry(rb.to_string())
                .or_insert_with(|| RunbookLedger::new(rb))
                .record_outcome(e)
                .map_err(internal)?;
        }
        append_lines(path, &ledgers_to_jsonl(&added))?;
    }
    if let Some(path) = &a.log {
        let mut log = LogWriter::open(path).map_err(internal)?;
        for (d, e) in &events {
            log.append(LogPayload::Lifecycle {
                event: (*e).clone(),
                runbook: d.source.runbook_name().map(str::to_string),
            })
            .map_err(internal)?;
        }
        log.flush().map_err(internal)?;
    }

    emit(g, "diffs.jsonl", &radar_core::ingest::diffs_to_jsonl(&got.diffs))?;
    let summary = IngestSummary {
        diffs: got.diffs.len(),
        lifecycle_events: events.len(),
    };
    if g.out.is_some() {
        match g.format {
            Format::Json => print!("{}", to_json(&summary)),
            Format::Csv => print!("diffs,lifecycle_events\n{},{}\n", summary.diffs, summary.lifecycle_events),
            Format::Text => println!(
                "ingested {} diffs, {} lifecycle events",
                summary.diffs, summary.lifecycle_events
            ),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    diffs: usize,
    lifecycle_events: usize,
}

// ---------------------------------------------------------------------------

pub fn evaluate(g: &Global, a: &EvaluateArgs) -> CliResult {
    let policy = policy(g)?;
    let got = ingest_text(&read_input(&a.diffs)?, None);
    if !got.errors.is_empty() {
        return Err(line_errors(&got.errors));
    }
    let keeper = match &a.ledger {
        Some(p) => LedgerKeeper::from_ledgers(
            read_ledgers(&read_input(p)?)
                .map_err(|e| line_errors(&e))?
                .into_values(),
        ),
        None => LedgerKeeper::new(),
    };
    let scorer = match &a.calibration {
        Some(p) => {
            let scores = read_scores(&read_input(p)?).map_err(|e| line_errors(&e))?;
            let window =
                CalibrationWindow::with_scores(policy.drs.window_capacity, scores.into_iter().map(|(s, _)| s));
            RiskScorer::with_window(&policy.drs, window)
        }
        None => RiskScorer::new(&policy.drs),
    };
    let backend: Box<dyn ReviewBackend> = match policy.acr.backend {
        BackendKind::Rules => Box::new(RuleBackend::new(&policy.acr).map_err(|e| CliError::Input(e.to_string()))?),
        BackendKind::External => Box::new(ExternalBackend::new(
            policy.acr.endpoint.clone().unwrap_or_default(),
            Duration::from_millis(policy.acr.timeout_ms),
            policy.acr.max_in_flight,
        )),
    };
    let pause = PauseControl::load(&a.control).map_err(|e| CliError::Input(format!("{}: {e}", a.control.display())))?;
    let funnel = Funnel {
        policy: &policy,
        scorer: &scorer,
        backend: backend.as_ref(),
        keeper: &keeper,
        pause: &pause,
    };

    let decisions: Vec<PipelineDecision> = got
        .diffs
        .iter()
        .map(|d| funnel.process(d, a.now.unwrap_or(d.created_at)))
        .collect();

    if let Some(path) = &a.log {
        let mut log = LogWriter::open(path).map_err(internal)?;
        for (d, dec) in got.diffs.iter().zip(&decisions) {
            let published = d.event_at(radar_core::diff::LifecycleKind::Published).unwrap_or(d.created_at);
            log.append(LogPayload::Decision(DecisionEvent::from_decision(d, dec, published)))
                .map_err(internal)?;
        }
        log.flush().map_err(internal)?;
    }

    let lines: String = decisions
        .iter()
        .map(|d| serde_json::to_string(d).expect("decisions serialize") + "\n")
        .collect();
    emit(g, "decisions.jsonl", &lines)?;
    if g.out.is_some() {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for d in &decisions {
            let key = serde_json::to_value(d.outcome).expect("outcome serializes");
            *counts.entry(key.as_str().unwrap_or_default().to_string()).or_default() += 1;
        }
        match g.format {
            Format::Json => print!("{}", to_json(&counts)),
            Format::Csv => {
                println!("outcome,count");
                for (k, v) in &counts {
                    println!("{k},{v}");
                }
            }
            Format::Text => {
                println!("evaluated {} diffs", decisions.len());
                for (k, v) in &counts {
                    println!("  {k:<32}{v}");
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn scenario(g: &Global, a: &ScenarioArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match (&a.scenario, &a.preset) {
        (Some(p), _) => {
            ScenarioConfig::from_toml(&read_input(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        (None, Some(name)) => preset(name).ok_or_else(|| CliError::Input(format!("unknown preset `{name}`")))?,
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n_diffs {
        cfg.n_diffs = n;
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SimReport<'a> {
    run: &'a radar_core::sim::RunResult,
    comparison: Option<Comparison>,
    safety: Option<SafetyCheck>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.digits$}"))
}

fn sim_text(r: &SimReport) -> String {
    let mut s = format!(
        "seed {}, {} diffs, terminal outcomes:\n",
        r.run.seed, r.run.n_diffs
    );
    let mut terminals: BTreeMap<String, usize> = BTreeMap::new();
    for t in &r.run.terminals {
        *terminals.entry(format!("{t:?}")).or_default() += 1;
    }
    for (k, v) in terminals {
        s.push_str(&format!("  {k:<32}{v}\n"));
    }
    s.push('\n');
    s.push_str(&r.run.summary.to_text());
    if let Some(did) = r.comparison.as_ref().and_then(|c| c.did.as_ref()) {
        s.push_str(&format!("{:<34}{:.1}\n", "DiD time to close, mean (s)", did.mean_did));
        s.push_str(&format!("{:<34}{:.1}\n", "DiD time to close, median (s)", did.median_did));
    }
    if let Some(sc) = &r.safety {
        s.push_str(&format!(
            "{:<34}{:.4} vs {:.4} (p={})\n",
            "revert rate RADAR vs ungated",
            sc.radar_revert_rate,
            sc.ungated_revert_rate,
            opt(sc.revert_fisher_p, 6)
        ));
        s.push_str(&format!(
            "{:<34}{:.4} vs {:.4} (p={})\n",
            "PI rate RADAR vs ungated",
            sc.radar_pi_rate,
            sc.ungated_pi_rate,
            opt(sc.pi_fisher_p, 6)
        ));
    }
    s
}

pub fn simulate(g: &Global, a: &SimulateArgs) -> CliResult {
    let cfg = scenario(g, &a.scenario)?;
    let policy = policy(g)?;
    let run = run_simulation(&cfg, &policy).map_err(sim_error)?;
    let report = SimReport {
        comparison: compare_radar_vs_human(&run).ok(),
        safety: safety_check(&run).ok(),
        run: &run,
    };
    let text = sim_text(&report);
    let json = to_json(&report);
    if g.out.is_some() {
        let stream = generate_stream(&cfg).map_err(sim_error)?;
        let diffs: Vec<Diff> = stream.diffs.into_iter().map(|s| s.diff).collect();
        write_out(g, "diffs.jsonl", &radar_core::ingest::diffs_to_jsonl(&diffs))?;
        write_out(g, "events.jsonl", &run.log.to_jsonl())?;
        write_out(g, "ledger.jsonl", &ledgers_to_jsonl(&run.ledgers))?;
        write_out(g, "report.json", &json)?;
        write_out(g, "report.txt", &text)?;
    }
    match g.format {
        Format::Json => print!("{json}"),
        Format::Csv => print!("{}", run.summary.to_csv()),
        Format::Text => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "threshold,approve_rate,verification_pass_rate,radar_landed,radar_reverts,radar_pis,revert_rate_ratio,pi_rate_ratio,drs_failures\n",
    );
    let o = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.threshold,
            o(r.approve_rate),
            o(r.verification_pass_rate),
            r.radar_landed,
            r.radar_reverts,
            r.radar_pis,
            o(r.revert_rate_ratio),
            o(r.pi_rate_ratio),
            r.drs_failures
        ));
    }
    s
}

fn sweep_text(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:<6}{:>10}{:>10}{:>8}{:>9}{:>6}{:>11}{:>9}\n",
        "PX", "approve", "verify", "landed", "reverts", "PIs", "rev ratio", "PI ratio"
    );
    let pct = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{:.2}%", v * 100.0));
    for r in rows {
        s.push_str(&format!(
            "{:<6}{:>10}{:>10}{:>8}{:>9}{:>6}{:>11}{:>9}\n",
            r.threshold.to_string(),
            pct(r.approve_rate),
            pct(r.verification_pass_rate),
            r.radar_landed,
            r.radar_reverts,
            r.radar_pis,
            opt(r.revert_rate_ratio, 3),
            opt(r.pi_rate_ratio, 3)
        ));
    }
    s
}

pub fn sweep(g: &Global, a: &SweepArgs) -> CliResult {
    let cfg = scenario(g, &a.scenario)?;
    let policy = policy(g)?;
    let mut thresholds = a
        .thresholds
        .iter()
        .map(|t| t.parse::<PxThreshold>().map_err(CliError::Input))
        .collect::<Result<Vec<_>, _>>()?;
    thresholds.sort();
    thresholds.dedup();
    let exec = if a.sequential { Exec::Sequential } else { Exec::default() };
    let rows = threshold_sweep(&cfg, &policy, &thresholds, exec).map_err(sim_error)?;
    let (json, csv) = (to_json(&rows), sweep_csv(&rows));
    if g.out.is_some() {
        write_out(g, "sweep.json", &json)?;
        write_out(g, "sweep.csv", &csv)?;
    }
    match g.format {
        Format::Json => print!("{json}"),
        Format::Csv => print!("{csv}"),
        Format::Text => print!("{}", sweep_text(&rows)),
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn report(g: &Global, a: &ReportArgs) -> CliResult {
    let records = read_log(&a.log).map_err(|e| match e {
        LogError::Io(e) => CliError::Input(format!("cannot read {}: {e}", a.log.display())),
        other => CliError::Input(other.to_string()),
    })?;
    let state = replay(&records).map_err(|e| CliError::Input(e.to_string()))?;
    let window = match a.window {
        WindowArg::All => MetricWindow::All,
        WindowArg::L7 => MetricWindow::L7 {
            anchor: a
                .anchor
                .or_else(|| state.events.iter().map(|e| e.times.published).max())
                .unwrap_or(0),
        },
    };
    let summary = MetricSummary::compute(&state.events, window);
    let content = match g.format {
        Format::Json => to_json(&summary),
        Format::Csv => summary.to_csv(),
        Format::Text => summary.to_text(),
    };
    let name = match g.format {
        Format::Json => "report.json",
        Format::Csv => "report.csv",
        Format::Text => "report.txt",
    };
    emit(g, name, &content)
}

// ---------------------------------------------------------------------------

/// `p` with six significant digits.
pub fn sig6(p: f64) -> String {
    if p == 0.0 || !p.is_finite() {
        return format!("{p}");
    }
    let magnitude = p.abs().log10().floor() as i32;
    if (-4..6).contains(&magnitude) {
        format!("{:.*}", (5 - magnitude) as usize, p)
    } else {
        format!("{p:.5e}")
    }
}

#[derive(Serialize)]
struct FisherOut {
    table: [u64; 4],
    p_value: f64,
}

#[derive(Serialize)]
struct RecallOut {
    flag_rate: f64,
    diffs: usize,
    incidents: usize,
    recall: f64,
}

pub fn stats(g: &Global, s: &StatsCommand) -> CliResult {
    match *s {
        StatsCommand::Fisher { a, b, c, d } => {
            let p = fisher_exact_two_sided(&TwoByTwoTable::new(a, b, c, d))
                .map_err(|e| CliError::Input(e.to_string()))?;
            match g.format {
                Format::Json => print!("{}", to_json(&FisherOut { table: [a, b, c, d], p_value: p })),
                Format::Csv => print!("a,b,c,d,p_value\n{a},{b},{c},{d},{}\n", sig6(p)),
                Format::Text => println!("{}", sig6(p)),
            }
        }
        StatsCommand::Recall { ref corpus, flag_rate } => {
            let scores = read_scores(&read_input(corpus)?).map_err(|e| line_errors(&e))?;
            let labeled = scores
                .iter()
                .enumerate()
                .map(|(i, (s, label))| {
                    label
                        .map(|l| (*s, l))
                        .ok_or_else(|| CliError::Input(format!("record {} lacks caused_incident", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let recall = recall_at_flag_rate(&labeled, flag_rate).map_err(|e| CliError::Input(e.to_string()))?;
            let out = RecallOut {
                flag_rate,
                diffs: labeled.len(),
                incidents: labeled.iter().filter(|(_, l)| *l).count(),
                recall,
            };
            match g.format {
                Format::Json => print!("{}", to_json(&out)),
                Format::Csv => print!(
                    "flag_rate,diffs,incidents,recall\n{},{},{},{}\n",
                    out.flag_rate, out.diffs, out.incidents, sig6(out.recall)
                ),
                Format::Text => println!("{}", sig6(recall)),
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn pause(g: &Global, a: &PauseArgs, on: bool) -> CliResult {
    if a.runbook.is_empty() && a.kind.is_empty() && a.org.is_empty() {
        return Err(CliError::Input("name at least one --runbook, --kind or --org".into()));
    }
    let kinds = a
        .kind
        .iter()
        .map(|k| SourceVariant::parse(k).ok_or_else(|| CliError::Input(format!("unknown source kind `{k}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut control =
        PauseControl::load(&a.control).map_err(|e| CliError::Input(format!("{}: {e}", a.control.display())))?;
    for k in kinds {
        if on {
            control.kinds.insert(k);
        } else {
            control.kinds.remove(&k);
        }
    }
    for (names, set) in [(&a.runbook, &mut control.runbooks), (&a.org, &mut control.orgs)] {
        for n in names {
            if on {
                set.insert(n.clone());
            } else {
                set.remove(n);
            }
        }
    }
    if let Some(dir) = a.control.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(internal)?;
    }
    control.save(&a.control).map_err(internal)?;
    match g.format {
        Format::Json => print!("{}", to_json(&control)),
        _ => {
            let join = |v: Vec<String>| if v.is_empty() { "-".to_string() } else { v.join(",") };
            println!("kinds    {}", join(control.kinds.iter().map(|k| k.to_string()).collect()));
            println!("runbooks {}", join(control.runbooks.iter().cloned().collect()));
            println!("orgs     {}", join(control.orgs.iter().cloned().collect()));
        }
    }
    Ok(())
}

pub fn validate_config(g: &Global, a: &ValidateArgs) -> CliResult {
    if g.policy.is_none() && a.scenario.is_none() {
        return Err(CliError::Input("pass --policy and/or --scenario".into()));
    }
    let policy = g.policy.as_ref().map(|_| policy(g)).transpose()?;
    if let Some(p) = &a.scenario {
        ScenarioConfig::from_toml(&read_input(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
    }
    match g.format {
        Format::Json => print!(
            "{}",
            to_json(&serde_json::json!({
                "policy": g.policy.as_ref().map(|p| p.display().to_string()),
                "scenario": a.scenario.as_ref().map(|p| p.display().to_string()),
                "valid": true,
            }))
        ),
        _ => {
            if let (Some(path), Some(p)) = (&g.policy, &policy) {
                println!("policy ok: {} ({} orgs, {} runbooks)", path.display(), p.orgs.len(), p.runbooks.len());
            }
            if let Some(path) = &a.scenario {
                println!("scenario ok: {}", path.display());
            }
        }
    }
    Ok(())
}
