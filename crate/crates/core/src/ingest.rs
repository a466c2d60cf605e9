//! JSON Lines readers and writers for diffs, lifecycle events, runbook
//! ledgers and raw-score corpora. Readers collect every bad line with its
//! 1-based line number instead of stopping at the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diff::{validate_record, Diff, DiffRecord, LifecycleEvent, Timestamp};
use crate::eligibility::{LedgerEntry, LedgerOutcome, RunbookLedger};
use crate::risk::RawScore;

/// A problem with one input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub source: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.source, self.line, self.message)
    }
}

/// Non-blank lines with their 1-based numbers.
fn numbered(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_lines<T: for<'de> Deserialize<'de>>(source: &str, text: &str) -> (Vec<(usize, T)>, Vec<LineError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (line, l) in numbered(text) {
        match serde_json::from_str(l) {
            Ok(v) => ok.push((line, v)),
            Err(e) => errors.push(LineError {
                source: source.into(),
                line,
                message: e.to_string(),
            }),
        }
    }
    (ok, errors)
}

/// Result of reading a diff stream: the valid diffs in input order, and every
/// rejected line.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub diffs: Vec<Diff>,
    pub errors: Vec<LineError>,
}

/// Reads `diffs.jsonl` and, optionally, `events.jsonl`. Events are attached
/// to their diff (sorted by time, stable) before validation, so event order
/// and timestamp errors are reported against the diff's line. Events for
/// unknown diffs are errors on the event line.
pub fn ingest(diffs_text: &str, events_text: Option<&str>) -> Ingested {
    let (records, mut errors) = parse_lines::<DiffRecord>("diffs", diffs_text);

    let mut by_diff: BTreeMap<String, Vec<(usize, LifecycleEvent)>> = BTreeMap::new();
    if let Some(text) = events_text {
        let (events, event_errors) = parse_lines::<LifecycleEvent>("events", text);
        errors.extend(event_errors);
        for (line, e) in events {
            by_diff.entry(e.diff_id.clone()).or_default().push((line, e));
        }
    }

    let mut seen = BTreeSet::new();
    let mut diffs = Vec::new();
    for (line, mut rec) in records {
        let id = rec.id.clone().unwrap_or_default();
        if let Some(mut extra) = by_diff.remove(&id) {
            extra.sort_by_key(|(_, e)| e.at);
            rec.events.extend(extra.into_iter().map(|(_, e)| e));
            rec.events.sort_by_key(|e| e.at);
        }
        match validate_record(rec) {
            Ok(d) if !seen.insert(d.id.clone()) => errors.push(LineError {
                source: "diffs".into(),
                line,
                message: format!("duplicate id `{}`", d.id),
            }),
            Ok(d) => diffs.push(d),
            Err(e) => errors.push(LineError {
                source: "diffs".into(),
                line,
                message: e.to_string(),
            }),
        }
    }
    for (id, events) in by_diff {
        for (line, _) in events {
            errors.push(LineError {
                source: "events".into(),
                line,
                message: format!("no diff with id `{id}`"),
            });
        }
    }
    errors.sort_by(|a, b| (&a.source, a.line).cmp(&(&b.source, b.line)));
    Ingested { diffs, errors }
}

/// One diff per line, in the ingestion schema.
pub fn diffs_to_jsonl(diffs: &[Diff]) -> String {
    diffs
        .iter()
        .map(|d| serde_json::to_string(d).expect("diffs serialize") + "\n")
        .collect()
}

/// One line of a ledger file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub runbook: String,
    pub at: Timestamp,
    pub outcome: LedgerOutcome,
    pub diff_id: String,
}

/// Reads an append-only ledger file. Entries for each runbook must be in
/// time order.
pub fn read_ledgers(text: &str) -> Result<BTreeMap<String, RunbookLedger>, Vec<LineError>> {
    let (lines, mut errors) = parse_lines::<LedgerLine>("ledger", text);
    let mut ledgers: BTreeMap<String, RunbookLedger> = BTreeMap::new();
    for (line, l) in lines {
        let ledger = ledgers
            .entry(l.runbook.clone())
            .or_insert_with(|| RunbookLedger::new(l.runbook.clone()));
        if let Err(e) = ledger.push(LedgerEntry {
            at: l.at,
            outcome: l.outcome,
            diff_id: l.diff_id,
        }) {
            errors.push(LineError {
                source: "ledger".into(),
                line,
                message: e.to_string(),
            });
        }
    }
    if errors.is_empty() {
        Ok(ledgers)
    } else {
        errors.sort_by_key(|e| e.line);
        Err(errors)
    }
}

/// Ledger entries ordered by time, then runbook.
pub fn ledgers_to_jsonl(ledgers: &BTreeMap<String, RunbookLedger>) -> String {
    let mut lines: Vec<LedgerLine> = ledgers
        .values()
        .flat_map(|l| {
            l.entries().iter().map(|e| LedgerLine {
                runbook: l.runbook_name().to_string(),
                at: e.at,
                outcome: e.outcome,
                diff_id: e.diff_id.clone(),
            })
        })
        .collect();
    lines.sort_by(|a, b| (a.at, &a.runbook).cmp(&(b.at, &b.runbook)));
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("ledger lines serialize") + "\n")
        .collect()
}

/// One line of a score corpus. `caused_incident` is required for recall
/// evaluation and ignored for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub raw_score: f64,
    #[serde(default)]
    pub caused_incident: Option<bool>,
}

pub fn read_scores(text: &str) -> Result<Vec<(RawScore, Option<bool>)>, Vec<LineError>> {
    let (lines, mut errors) = parse_lines::<ScoreLine>("scores", text);
    let mut out = Vec::with_capacity(lines.len());
    for (line, s) in lines {
        match RawScore::new(s.raw_score) {
            Some(r) => out.push((r, s.caused_incident)),
            None => errors.push(LineError {
                source: "scores".into(),
                line,
                message: "raw_score is not finite".into(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        errors.sort_by_key(|e| e.line);
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::fixtures::{change, diff};
    use crate::diff::{LifecycleKind, SourceKind};

    fn line(d: &Diff) -> String {
        serde_json::to_string(d).unwrap()
    }

    #[test]
    fn round_trip_preserves_diffs() {
        let a = diff("a", SourceKind::Human, vec![change("x.rs", 3, 2)]);
        let b = diff(
            "b",
            SourceKind::RacerRunbook {
                runbook_name: "rb".into(),
            },
            vec![change("y.rs", 1, 0)],
        );
        let got = ingest(&diffs_to_jsonl(&[a.clone(), b.clone()]), None);
        assert!(got.errors.is_empty(), "{:?}", got.errors);
        assert_eq!(got.diffs, vec![a, b]);
    }

    #[test]
    fn errors_carry_line_numbers_and_good_lines_survive() {
        let a = diff("a", SourceKind::Human, vec![change("x.rs", 1, 0)]);
        let text = format!("{}\n{{not json\n\n{}\n", line(&a), line(&a));
        let got = ingest(&text, None);
        assert_eq!(got.diffs.len(), 1);
        let lines: Vec<usize> = got.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 4]);
        assert!(got.errors[1].message.contains("duplicate"));
    }

    #[test]
    fn events_attach_and_are_validated() {
        let a = diff("a", SourceKind::Human, vec![change("x.rs", 1, 0)]);
        let ev = |id: &str, kind, at| {
            serde_json::to_string(&LifecycleEvent {
                diff_id: id.into(),
                kind,
                at,
            })
            .unwrap()
        };
        let t = a.created_at;
        let events = [
            ev("a", LifecycleKind::Landed, t + 20),
            ev("a", LifecycleKind::Published, t + 10),
            ev("zzz", LifecycleKind::Published, t),
        ]
        .join("\n");
        let got = ingest(&line(&a), Some(&events));
        assert_eq!(got.diffs[0].events.len(), 2);
        assert_eq!(got.diffs[0].events[0].kind, LifecycleKind::Published);
        assert_eq!(got.errors.len(), 1);
        assert_eq!((got.errors[0].source.as_str(), got.errors[0].line), ("events", 3));

        let early = ev("a", LifecycleKind::Published, t - 1);
        let got = ingest(&line(&a), Some(&early));
        assert!(got.diffs.is_empty());
        assert!(got.errors[0].message.contains("timestamp"), "{}", got.errors[0]);
    }

    #[test]
    fn ledgers_round_trip() {
        let text = [
            r#"{"runbook":"rb","at":10,"outcome":"LANDED","diff_id":"d1"}"#,
            r#"{"runbook":"other","at":5,"outcome":"LANDED","diff_id":"d0"}"#,
            r#"{"runbook":"rb","at":20,"outcome":"REVERTED","diff_id":"d1"}"#,
        ]
        .join("\n");
        let ledgers = read_ledgers(&text).unwrap();
        assert_eq!(ledgers["rb"].entries().len(), 2);
        assert_eq!(read_ledgers(&ledgers_to_jsonl(&ledgers)).unwrap(), ledgers);

        let bad = r#"{"runbook":"rb","at":10,"outcome":"LANDED","diff_id":"d"}
{"runbook":"rb","at":9,"outcome":"LANDED","diff_id":"e"}"#;
        assert_eq!(read_ledgers(bad).unwrap_err()[0].line, 2);
    }

    #[test]
    fn scores_reject_non_numbers() {
        let ok = read_scores("{\"raw_score\": 1.5, \"caused_incident\": true}\n{\"raw_score\": 2}").unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok[0].1, Some(true));
        assert_eq!(read_scores("{\"raw_score\": \"x\"}").unwrap_err()[0].line, 1);
    }
}
