//! The review agent: per-change safe/risk signal classification, effort
//! scoring and the auto-accept decision.
//!
//! A diff is auto-accepted only when every change carries at least one safe
//! signal, no risk signal fired anywhere, effort is at most 3 and the backend
//! confidence is at least 8 of 10. Every error path rejects to a human.

mod external;
mod rules;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{diff_size, file_count, Diff};
use crate::policy::{violation, ConfigError};

pub use external::{ExternalBackend, ReviewRequest, ReviewResponse};
pub use rules::{classify_change, RuleBackend, SignalPatterns};

/// Minimum backend confidence for auto-acceptance.
pub const ACCEPT_CONFIDENCE: u8 = 8;
/// Effort at or above this is a risk signal.
pub const HIGH_EFFORT: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SafeSignal {
    RefactorNoBehaviorChange,
    DeadCodeRemoval,
    DefensiveProgramming,
    LoggingAddition,
    PureFormatting,
    DocCommentUpdate,
    ImportHygiene,
    TestAddition,
    StaticResourceUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RiskKind {
    HighReviewEffort,
    SubstantialStructuralChange,
    BugOrLogicError,
    PerformanceRisk,
    SecurityVulnerability,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RiskSignal {
    pub kind: RiskKind,
    pub detail: String,
}

impl RiskSignal {
    pub fn new(kind: RiskKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeClassification {
    pub safe: BTreeSet<SafeSignal>,
    pub risk: BTreeSet<RiskSignal>,
}

impl ChangeClassification {
    pub fn is_unclassified(&self) -> bool {
        self.safe.is_empty() && self.risk.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewDecision {
    AutoAccept,
    RejectToHuman,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub per_change: Vec<ChangeClassification>,
    /// Diff-level risk signals (currently only high review effort).
    pub diff_risks: Vec<RiskSignal>,
    pub confidence: u8,
    pub effort_score: u8,
    pub decision: ReviewDecision,
    pub rationale: String,
}

impl ReviewVerdict {
    pub fn risk_signals(&self) -> impl Iterator<Item = &RiskSignal> {
        self.per_change
            .iter()
            .flat_map(|c| c.risk.iter())
            .chain(self.diff_risks.iter())
    }

    pub fn accepted(&self) -> bool {
        self.decision == ReviewDecision::AutoAccept
    }
}

/// What a backend reports for one diff, before the decision rule runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendAssessment {
    pub per_change: Vec<ChangeClassification>,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("review backend unavailable: {0}")]
    Unavailable(String),
    #[error("review backend timed out")]
    Timeout,
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

/// A source of per-change classifications and a confidence score.
pub trait ReviewBackend: Send + Sync {
    fn assess(&self, diff: &Diff) -> Result<BackendAssessment, BackendError>;
}

impl<B: ReviewBackend + ?Sized> ReviewBackend for &B {
    fn assess(&self, diff: &Diff) -> Result<BackendAssessment, BackendError> {
        (**self).assess(diff)
    }
}

impl<B: ReviewBackend + ?Sized> ReviewBackend for Box<B> {
    fn assess(&self, diff: &Diff) -> Result<BackendAssessment, BackendError> {
        (**self).assess(diff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Rules,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcrConfig {
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Upper bounds (inclusive) of effort buckets 1..4 by total lines.
    pub effort_line_breakpoints: Vec<u64>,
    /// Upper bounds (inclusive) of effort buckets 1..4 by file count.
    pub effort_file_breakpoints: Vec<u64>,
    pub penalty_mixed_safe_kinds: u8,
    pub penalty_many_files: u8,
    pub many_files_threshold: usize,
    pub patterns: SignalPatterns,
}

impl Default for AcrConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Rules,
            endpoint: None,
            timeout_ms: 5000,
            max_in_flight: 8,
            effort_line_breakpoints: vec![10, 50, 200, 1000],
            effort_file_breakpoints: vec![2, 5, 15, 40],
            penalty_mixed_safe_kinds: 1,
            penalty_many_files: 1,
            many_files_threshold: 10,
            patterns: SignalPatterns::default(),
        }
    }
}

fn check_breakpoints(bp: &[u64], key: &str) -> Result<(), ConfigError> {
    if bp.len() != 4 {
        return Err(violation(key, "expected 4 breakpoints"));
    }
    if bp.windows(2).any(|w| w[0] >= w[1]) {
        return Err(violation(key, "breakpoints must be strictly increasing"));
    }
    Ok(())
}

impl AcrConfig {
    pub(crate) fn validate(&self) -> Result<(), ConfigError> {
        check_breakpoints(&self.effort_line_breakpoints, "acr.effort_line_breakpoints")?;
        check_breakpoints(&self.effort_file_breakpoints, "acr.effort_file_breakpoints")?;
        if self.backend == BackendKind::External && self.endpoint.is_none() {
            return Err(violation("acr.endpoint", "required for the external backend"));
        }
        if self.max_in_flight == 0 {
            return Err(violation("acr.max_in_flight", "must be positive"));
        }
        self.patterns.validate()
    }
}

fn bucket(value: u64, breakpoints: &[u64]) -> u8 {
    breakpoints
        .iter()
        .position(|&b| value <= b)
        .map_or(5, |i| i as u8 + 1)
}

/// Effort 1..=5: the larger of the line-count and file-count buckets.
pub fn effort_score(diff: &Diff, config: &AcrConfig) -> u8 {
    let by_lines = bucket(diff_size(diff), &config.effort_line_breakpoints);
    let by_files = bucket(file_count(diff) as u64, &config.effort_file_breakpoints);
    by_lines.max(by_files)
}

/// The auto-accept rule over backend output and effort.
pub fn decide(per_change: &[ChangeClassification], confidence: u8, effort: u8) -> ReviewDecision {
    let all_safe = !per_change.is_empty() && per_change.iter().all(|c| !c.safe.is_empty());
    let no_risk = per_change.iter().all(|c| c.risk.is_empty());
    if all_safe && no_risk && effort < HIGH_EFFORT && confidence >= ACCEPT_CONFIDENCE {
        ReviewDecision::AutoAccept
    } else {
        ReviewDecision::RejectToHuman
    }
}

struct Rationale<'a> {
    per_change: &'a [ChangeClassification],
    confidence: u8,
    effort: u8,
}

impl fmt::Display for Rationale<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let risks: BTreeSet<RiskKind> = self
            .per_change
            .iter()
            .flat_map(|c| c.risk.iter().map(|r| r.kind))
            .collect();
        let unclassified = self.per_change.iter().filter(|c| c.safe.is_empty()).count();
        let mut parts = Vec::new();
        if !risks.is_empty() {
            parts.push(format!("risk signals {risks:?}"));
        }
        if self.effort >= HIGH_EFFORT {
            parts.push(format!("effort {} >= {HIGH_EFFORT}", self.effort));
        }
        if unclassified > 0 {
            parts.push(format!("{unclassified} change(s) without a safe signal"));
        }
        if self.confidence < ACCEPT_CONFIDENCE {
            parts.push(format!("confidence {} < {ACCEPT_CONFIDENCE}", self.confidence));
        }
        if parts.is_empty() {
            write!(f, "all changes safe, confidence {}", self.confidence)
        } else {
            f.write_str(&parts.join("; "))
        }
    }
}

/// Runs `backend` over `diff` and applies the decision rule.
pub fn review(diff: &Diff, backend: &dyn ReviewBackend, config: &AcrConfig) -> ReviewVerdict {
    let effort = effort_score(diff, config);
    let diff_risks = if effort >= HIGH_EFFORT {
        vec![RiskSignal::new(
            RiskKind::HighReviewEffort,
            format!("effort score {effort}"),
        )]
    } else {
        vec![]
    };
    let assessment = backend.assess(diff).and_then(|a| {
        if a.per_change.len() != diff.changes.len() {
            Err(BackendError::Malformed(format!(
                "{} classifications for {} changes",
                a.per_change.len(),
                diff.changes.len()
            )))
        } else if a.confidence > 10 {
            Err(BackendError::Malformed(format!("confidence {}", a.confidence)))
        } else {
            Ok(a)
        }
    });
    match assessment {
        Ok(a) => {
            let decision = decide(&a.per_change, a.confidence, effort);
            let rationale = Rationale {
                per_change: &a.per_change,
                confidence: a.confidence,
                effort,
            }
            .to_string();
            ReviewVerdict {
                per_change: a.per_change,
                diff_risks,
                confidence: a.confidence,
                effort_score: effort,
                decision,
                rationale,
            }
        }
        Err(e) => ReviewVerdict {
            per_change: vec![],
            diff_risks,
            confidence: 0,
            effort_score: effort,
            decision: ReviewDecision::RejectToHuman,
            rationale: e.to_string(),
        },
    }
}

/// Builds the backend selected by `config`.
pub fn build_backend(config: &AcrConfig) -> Result<Box<dyn ReviewBackend>, ConfigError> {
    match config.backend {
        BackendKind::Rules => Ok(Box::new(RuleBackend::new(config)?)),
        BackendKind::External => {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| violation("acr.endpoint", "required for the external backend"))?;
            Ok(Box::new(ExternalBackend::new(
                endpoint,
                std::time::Duration::from_millis(config.timeout_ms),
                config.max_in_flight,
            )))
        }
    }
}
