//! Append-only JSONL event log and replay.
//!
//! Each line is one [`LogRecord`] with a sequence number starting at 0 and
//! increasing by one. Replay rebuilds decision events (with their lifecycle
//! timestamps) and runbook ledgers.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{LifecycleEvent, LifecycleKind};
use crate::eligibility::{LedgerError, RunbookLedger};
use crate::funnel::PipelineOutcome;
use crate::telemetry::DecisionEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogPayload {
    Decision(DecisionEvent),
    Lifecycle {
        #[serde(flatten)]
        event: LifecycleEvent,
        /// Set for runbook diffs; ledger outcomes are applied to this ledger.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        runbook: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub payload: LogPayload,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sequence gap: expected {expected}, found {found}")]
    GapInLog { expected: u64, found: u64 },
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
}

/// In-memory log with contiguous sequence numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, payload: LogPayload) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(LogRecord { seq, payload });
        seq
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), LogError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Parses JSONL records. A trailing line without a newline is treated as an
/// incomplete write and ignored.
pub fn parse_jsonl(text: &str) -> Result<Vec<LogRecord>, LogError> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

/// Single writer appending to a log file, continuing its sequence.
pub struct LogWriter {
    out: BufWriter<File>,
    next_seq: u64,
}

impl LogWriter {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let next_seq = if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut n = 0u64;
            for line in reader.lines() {
                if !line?.trim().is_empty() {
                    n += 1;
                }
            }
            n
        } else {
            0
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            next_seq,
        })
    }

    pub fn append(&mut self, payload: LogPayload) -> Result<u64, LogError> {
        let seq = self.next_seq;
        let line = serde_json::to_string(&LogRecord { seq, payload }).expect("log records serialize");
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }
}

/// State rebuilt from a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayState {
    /// Decision events in first-seen order.
    pub events: Vec<DecisionEvent>,
    pub ledgers: BTreeMap<String, RunbookLedger>,
}

impl ReplayState {
    fn apply(&mut self, index: &mut BTreeMap<String, usize>, payload: &LogPayload) -> Result<(), LogError> {
        match payload {
            LogPayload::Decision(d) => {
                index.insert(d.diff_id.clone(), self.events.len());
                self.events.push(d.clone());
            }
            LogPayload::Lifecycle { event, runbook } => {
                if let Some(&i) = index.get(&event.diff_id) {
                    let e = &mut self.events[i];
                    let at = Some(event.at);
                    match event.kind {
                        LifecycleKind::ReviewStarted => e.times.review_started = at,
                        LifecycleKind::ReviewEnded => e.times.review_ended = at,
                        LifecycleKind::Closed => e.times.closed = at,
                        LifecycleKind::Landed => e.times.landed = at,
                        LifecycleKind::Reverted => e.times.reverted = at,
                        LifecycleKind::PiAttributed => e.times.pi = at,
                        LifecycleKind::HumanRejected => {
                            if e.outcome == PipelineOutcome::RadarLandScheduled && e.times.landed.is_none() {
                                e.overridden = true;
                            }
                        }
                        LifecycleKind::Published | LifecycleKind::Verified | LifecycleKind::Approved => {}
                    }
                }
                if let Some(rb) = runbook {
                    if matches!(
                        event.kind,
                        LifecycleKind::Landed
                            | LifecycleKind::Reverted
                            | LifecycleKind::PiAttributed
                            | LifecycleKind::HumanRejected
                    ) {
                        self.ledgers
                            .entry(rb.clone())
                            .or_insert_with(|| RunbookLedger::new(rb.as_str()))
                            .record_outcome(event)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rebuilds state from records. Sequence numbers must be 0, 1, 2, ...
pub fn replay(records: &[LogRecord]) -> Result<ReplayState, LogError> {
    let mut state = ReplayState::default();
    let mut index = BTreeMap::new();
    for (expected, r) in records.iter().enumerate() {
        if r.seq != expected as u64 {
            return Err(LogError::GapInLog {
                expected: expected as u64,
                found: r.seq,
            });
        }
        state.apply(&mut index, &r.payload)?;
    }
    Ok(state)
}
