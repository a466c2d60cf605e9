//! Eligibility: which review path a diff may take.
//!
//! Bot diffs are routed by source type and, for runbooks, by the runbook's
//! recent track record. Human diffs are checked against author, scope, state
//! and content rules. All failing criteria are reported, not just the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{utc_day, Diff, LifecycleEvent, LifecycleKind, Role, SourceKind, Timestamp, SECONDS_PER_DAY};
use crate::policy::{resolve_threshold, ContentBlocklists, PolicySet, RunbookPolicy, ThresholdResolution};

/// Stable reason codes. Serialized names never change; see `docs/reasons.md`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    // Bot routing and runbook track record.
    SourceNotPermitted,
    CodemodNotApproved,
    NoHistory,
    PiInWindow,
    RevertRate,
    RejectionRate,
    MinLanded,
    DailyCap,
    Denylisted,
    KeywordDenylist,
    // Scope.
    OpenSource,
    SoxScope,
    AdditionalReview,
    // Author.
    RoleNotEligible,
    LowDiffHistory,
    InternTenure,
    NoOncall,
    // Diff state.
    Wip,
    Rfc,
    PreviouslyRejected,
    StaleVersion,
    CiState,
    CodeFreeze,
    // Content.
    Phrase,
    PathPrefix,
    PathSuffix,
    // Pipeline gates.
    Paused,
    DrsColdStart,
    DrsAboveThreshold,
    ReviewRejected,
    ApprovalDrs,
    ApprovalConfidence,
    ApprovalEffort,
    DeferredReviewDisabled,
}

impl ReasonCode {
    pub const ALL: [ReasonCode; 34] = [
        ReasonCode::SourceNotPermitted,
        ReasonCode::CodemodNotApproved,
        ReasonCode::NoHistory,
        ReasonCode::PiInWindow,
        ReasonCode::RevertRate,
        ReasonCode::RejectionRate,
        ReasonCode::MinLanded,
        ReasonCode::DailyCap,
        ReasonCode::Denylisted,
        ReasonCode::KeywordDenylist,
        ReasonCode::OpenSource,
        ReasonCode::SoxScope,
        ReasonCode::AdditionalReview,
        ReasonCode::RoleNotEligible,
        ReasonCode::LowDiffHistory,
        ReasonCode::InternTenure,
        ReasonCode::NoOncall,
        ReasonCode::Wip,
        ReasonCode::Rfc,
        ReasonCode::PreviouslyRejected,
        ReasonCode::StaleVersion,
        ReasonCode::CiState,
        ReasonCode::CodeFreeze,
        ReasonCode::Phrase,
        ReasonCode::PathPrefix,
        ReasonCode::PathSuffix,
        ReasonCode::Paused,
        ReasonCode::DrsColdStart,
        ReasonCode::DrsAboveThreshold,
        ReasonCode::ReviewRejected,
        ReasonCode::ApprovalDrs,
        ReasonCode::ApprovalConfidence,
        ReasonCode::ApprovalEffort,
        ReasonCode::DeferredReviewDisabled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::SourceNotPermitted => "SOURCE_NOT_PERMITTED",
            ReasonCode::CodemodNotApproved => "CODEMOD_NOT_APPROVED",
            ReasonCode::NoHistory => "NO_HISTORY",
            ReasonCode::PiInWindow => "PI_IN_WINDOW",
            ReasonCode::RevertRate => "REVERT_RATE",
            ReasonCode::RejectionRate => "REJECTION_RATE",
            ReasonCode::MinLanded => "MIN_LANDED",
            ReasonCode::DailyCap => "DAILY_CAP",
            ReasonCode::Denylisted => "DENYLISTED",
            ReasonCode::KeywordDenylist => "KEYWORD_DENYLIST",
            ReasonCode::OpenSource => "OPEN_SOURCE",
            ReasonCode::SoxScope => "SOX_SCOPE",
            ReasonCode::AdditionalReview => "ADDITIONAL_REVIEW",
            ReasonCode::RoleNotEligible => "ROLE_NOT_ELIGIBLE",
            ReasonCode::LowDiffHistory => "LOW_DIFF_HISTORY",
            ReasonCode::InternTenure => "INTERN_TENURE",
            ReasonCode::NoOncall => "NO_ONCALL",
            ReasonCode::Wip => "WIP",
            ReasonCode::Rfc => "RFC",
            ReasonCode::PreviouslyRejected => "PREVIOUSLY_REJECTED",
            ReasonCode::StaleVersion => "STALE_VERSION",
            ReasonCode::CiState => "CI_STATE",
            ReasonCode::CodeFreeze => "CODE_FREEZE",
            ReasonCode::Phrase => "PHRASE",
            ReasonCode::PathPrefix => "PATH_PREFIX",
            ReasonCode::PathSuffix => "PATH_SUFFIX",
            ReasonCode::Paused => "PAUSED",
            ReasonCode::DrsColdStart => "DRS_COLD_START",
            ReasonCode::DrsAboveThreshold => "DRS_ABOVE_THRESHOLD",
            ReasonCode::ReviewRejected => "REVIEW_REJECTED",
            ReasonCode::ApprovalDrs => "APPROVAL_DRS",
            ReasonCode::ApprovalConfidence => "APPROVAL_CONFIDENCE",
            ReasonCode::ApprovalEffort => "APPROVAL_EFFORT",
            ReasonCode::DeferredReviewDisabled => "DEFERRED_REVIEW_DISABLED",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Runbook ledger

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LedgerOutcome {
    Landed,
    Reverted,
    Pi,
    HumanRejected,
}

impl LedgerOutcome {
    fn from_kind(kind: LifecycleKind) -> Option<Self> {
        match kind {
            LifecycleKind::Landed => Some(LedgerOutcome::Landed),
            LifecycleKind::Reverted => Some(LedgerOutcome::Reverted),
            LifecycleKind::PiAttributed => Some(LedgerOutcome::Pi),
            LifecycleKind::HumanRejected => Some(LedgerOutcome::HumanRejected),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub at: Timestamp,
    pub outcome: LedgerOutcome,
    pub diff_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("event at {at} is older than the last entry at {last}")]
    OutOfOrderEvent { at: Timestamp, last: Timestamp },
    #[error("{0:?} is not a ledger outcome")]
    NotAnOutcome(LifecycleKind),
}

/// Outcome counts inside a lookback window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub landed: u32,
    pub reverted: u32,
    pub pis: u32,
    pub rejected: u32,
}

impl WindowCounts {
    /// reverts / landed; with nothing landed, 1 if anything reverted else 0.
    pub fn revert_rate(&self) -> f64 {
        match (self.landed, self.reverted) {
            (0, 0) => 0.0,
            (0, _) => 1.0,
            (l, r) => f64::from(r) / f64::from(l),
        }
    }

    /// rejections / (landed + rejections); 0 when both are zero.
    pub fn rejection_rate(&self) -> f64 {
        let denom = self.landed + self.rejected;
        if denom == 0 {
            0.0
        } else {
            f64::from(self.rejected) / f64::from(denom)
        }
    }
}

/// Event-sourced track record of one runbook. Entries are time-ordered;
/// prefix sums make window queries logarithmic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LedgerRepr", into = "LedgerRepr")]
pub struct RunbookLedger {
    runbook_name: String,
    entries: Vec<LedgerEntry>,
    /// cumulative[i] = outcome counts over entries[..i].
    cumulative: Vec<[u32; 4]>,
    landed_by_day: BTreeMap<i64, u32>,
}

#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    runbook_name: String,
    entries: Vec<LedgerEntry>,
}

impl From<RunbookLedger> for LedgerRepr {
    fn from(l: RunbookLedger) -> Self {
        Self {
            runbook_name: l.runbook_name,
            entries: l.entries,
        }
    }
}

impl TryFrom<LedgerRepr> for RunbookLedger {
    type Error = LedgerError;

    fn try_from(r: LedgerRepr) -> Result<Self, Self::Error> {
        let mut l = RunbookLedger::new(r.runbook_name);
        for e in r.entries {
            l.push(e)?;
        }
        Ok(l)
    }
}

impl RunbookLedger {
    pub fn new(runbook_name: impl Into<String>) -> Self {
        Self {
            runbook_name: runbook_name.into(),
            entries: Vec::new(),
            cumulative: vec![[0; 4]],
            landed_by_day: BTreeMap::new(),
        }
    }

    pub fn runbook_name(&self) -> &str {
        &self.runbook_name
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn push(&mut self, entry: LedgerEntry) -> Result<(), LedgerError> {
        if let Some(last) = self.entries.last() {
            if entry.at < last.at {
                return Err(LedgerError::OutOfOrderEvent {
                    at: entry.at,
                    last: last.at,
                });
            }
        }
        let mut next = *self.cumulative.last().expect("never empty");
        next[entry.outcome.index()] += 1;
        self.cumulative.push(next);
        if entry.outcome == LedgerOutcome::Landed {
            *self.landed_by_day.entry(utc_day(entry.at)).or_default() += 1;
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Appends the outcome carried by `event`.
    pub fn record_outcome(&mut self, event: &LifecycleEvent) -> Result<(), LedgerError> {
        let outcome =
            LedgerOutcome::from_kind(event.kind).ok_or(LedgerError::NotAnOutcome(event.kind))?;
        self.push(LedgerEntry {
            at: event.at,
            outcome,
            diff_id: event.diff_id.clone(),
        })
    }

    /// Landed count on UTC day `day`.
    pub fn landed_on(&self, day: i64) -> u32 {
        self.landed_by_day.get(&day).copied().unwrap_or(0)
    }

    /// Counts entries with `at <= now` and `at + lookback_days > now`.
    pub fn window_counts(&self, now: Timestamp, lookback_days: u32) -> WindowCounts {
        let start = now - i64::from(lookback_days) * SECONDS_PER_DAY;
        let lo = self.entries.partition_point(|e| e.at <= start);
        let hi = self.entries.partition_point(|e| e.at <= now).max(lo);
        let (a, b) = (self.cumulative[lo], self.cumulative[hi]);
        let d = |o: LedgerOutcome| b[o.index()] - a[o.index()];
        WindowCounts {
            landed: d(LedgerOutcome::Landed),
            reverted: d(LedgerOutcome::Reverted),
            pis: d(LedgerOutcome::Pi),
            rejected: d(LedgerOutcome::HumanRejected),
        }
    }
}

/// Track-record check for one runbook at `now`.
pub fn runbook_eligible(ledger: &RunbookLedger, rp: &RunbookPolicy, now: Timestamp) -> (bool, Vec<ReasonCode>) {
    let w = ledger.window_counts(now, rp.lookback_days);
    let mut reasons = Vec::new();
    if w.pis > 0 {
        reasons.push(ReasonCode::PiInWindow);
    }
    if w.revert_rate() > rp.max_revert_rate {
        reasons.push(ReasonCode::RevertRate);
    }
    if w.rejection_rate() > rp.max_rejection_rate {
        reasons.push(ReasonCode::RejectionRate);
    }
    if w.landed < rp.min_landed_for_eligibility {
        reasons.push(ReasonCode::MinLanded);
    }
    if rp.denylisted {
        reasons.push(ReasonCode::Denylisted);
    }
    if ledger.landed_on(utc_day(now)) >= rp.daily_cap {
        reasons.push(ReasonCode::DailyCap);
    }
    (reasons.is_empty(), reasons)
}

// ---------------------------------------------------------------------------
// Bot routing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", tag = "route")]
pub enum Route {
    BlanketAutoaccept,
    Ace { gate: ThresholdResolution },
    HumanPipeline,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityDecision {
    pub eligible: bool,
    pub route: Route,
    pub reasons: Vec<ReasonCode>,
}

impl EligibilityDecision {
    fn pass(route: Route) -> Self {
        Self {
            eligible: true,
            route,
            reasons: vec![],
        }
    }

    fn fail(route: Route, reasons: Vec<ReasonCode>) -> Self {
        debug_assert!(!reasons.is_empty());
        Self {
            eligible: false,
            route,
            reasons,
        }
    }
}

/// True if `name` contains any denylisted keyword, ignoring ASCII case.
pub fn keyword_denied(name: &str, keywords: &[String]) -> bool {
    let lower = name.to_ascii_lowercase();
    keywords
        .iter()
        .any(|k| !k.is_empty() && lower.contains(&k.to_ascii_lowercase()))
}

/// Routes a bot diff. `ledger` is the runbook's ledger, if one exists.
pub fn route_bot(
    diff: &Diff,
    policy: &PolicySet,
    ledger: Option<&RunbookLedger>,
    now: Timestamp,
) -> EligibilityDecision {
    debug_assert!(diff.is_bot(), "route_bot called on a human diff");
    let org = policy.org(&diff.org);
    if !org.permitted_sources.contains(&diff.source.variant()) {
        return EligibilityDecision::fail(Route::Blocked, vec![ReasonCode::SourceNotPermitted]);
    }
    let ace = || Route::Ace {
        gate: resolve_threshold(policy, &diff.org, &diff.source),
    };
    match &diff.source {
        SourceKind::Human => EligibilityDecision::pass(Route::HumanPipeline),
        SourceKind::DeterministicCodemod { codemod_id } => {
            if policy.approved_codemods.contains(codemod_id) {
                EligibilityDecision::pass(Route::BlanketAutoaccept)
            } else {
                EligibilityDecision::fail(Route::HumanPipeline, vec![ReasonCode::CodemodNotApproved])
            }
        }
        SourceKind::AiCodemod { .. } => EligibilityDecision::pass(ace()),
        SourceKind::RacerRunbook { runbook_name } => {
            let rp = policy.runbook(runbook_name);
            let mut reasons = Vec::new();
            if keyword_denied(runbook_name, &policy.blocklists.runbook_keyword_denylist) {
                reasons.push(ReasonCode::KeywordDenylist);
            }
            match ledger {
                None => {
                    reasons.push(ReasonCode::NoHistory);
                    if rp.denylisted {
                        reasons.push(ReasonCode::Denylisted);
                    }
                }
                Some(l) => reasons.extend(runbook_eligible(l, &rp, now).1),
            }
            if reasons.is_empty() {
                EligibilityDecision::pass(ace())
            } else {
                EligibilityDecision::fail(Route::Blocked, reasons)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Human and scope checks

/// Scope exclusions shared by both pipelines.
pub fn scope_checks(diff: &Diff) -> Vec<ReasonCode> {
    let mut reasons = Vec::new();
    if diff.scope.is_open_source {
        reasons.push(ReasonCode::OpenSource);
    }
    if diff.scope.is_sox {
        reasons.push(ReasonCode::SoxScope);
    }
    if diff.scope.requires_additional_review {
        reasons.push(ReasonCode::AdditionalReview);
    }
    reasons
}

fn author_checks(diff: &Diff, policy: &PolicySet, reasons: &mut Vec<ReasonCode>) {
    let a = &diff.author;
    let cfg = &policy.human;
    let role_ok = matches!(
        a.role,
        Role::Swe | Role::SweManager | Role::DataEngineer | Role::DataScientist | Role::InternSwe
    );
    let history_ok = a.diffs_committed_past_year > cfg.min_diffs_past_year;
    if !role_ok && !history_ok {
        reasons.push(ReasonCode::RoleNotEligible);
        reasons.push(ReasonCode::LowDiffHistory);
    }
    if a.role == Role::InternSwe && a.employment_days < cfg.intern_min_employment_days {
        reasons.push(ReasonCode::InternTenure);
    }
    if !a.has_oncall {
        reasons.push(ReasonCode::NoOncall);
    }
}

fn state_checks(diff: &Diff, policy: &PolicySet, reasons: &mut Vec<ReasonCode>) {
    let s = &diff.state;
    let flags = [
        (s.is_wip, ReasonCode::Wip),
        (s.is_rfc, ReasonCode::Rfc),
        (s.was_rejected, ReasonCode::PreviouslyRejected),
        (!s.is_latest_published, ReasonCode::StaleVersion),
        (!policy.human.allowed_ci_states.contains(&s.ci_state), ReasonCode::CiState),
        (s.in_code_freeze, ReasonCode::CodeFreeze),
    ];
    reasons.extend(flags.into_iter().filter(|(bad, _)| *bad).map(|(_, r)| r));
}

/// Author, scope, state and CI checks for a human diff.
pub fn human_eligible(diff: &Diff, policy: &PolicySet) -> (bool, Vec<ReasonCode>) {
    let mut reasons = Vec::new();
    author_checks(diff, policy, &mut reasons);
    reasons.extend(scope_checks(diff));
    state_checks(diff, policy, &mut reasons);
    (reasons.is_empty(), reasons)
}

/// Phrase and path blocklists. Phrases are case-sensitive substrings of any
/// hunk (or of the content text when no hunks are present).
pub fn content_checks(diff: &Diff, bl: &ContentBlocklists) -> (bool, Vec<ReasonCode>) {
    let mut reasons = BTreeSet::new();
    let phrase_hit = |text: &str| bl.phrase_blocklist.iter().any(|p| !p.is_empty() && text.contains(p.as_str()));
    let any_hunks = diff.changes.iter().any(|c| !c.hunk_texts.is_empty());
    let hit = if any_hunks {
        diff.changes
            .iter()
            .flat_map(|c| c.hunk_texts.iter())
            .any(|h| phrase_hit(h))
    } else {
        phrase_hit(&diff.content_text)
    };
    if hit {
        reasons.insert(ReasonCode::Phrase);
    }
    for c in &diff.changes {
        if bl.path_prefix_blocklist.iter().any(|p| !p.is_empty() && c.path.starts_with(p.as_str())) {
            reasons.insert(ReasonCode::PathPrefix);
        }
        if bl.path_suffix_blocklist.iter().any(|s| !s.is_empty() && c.path.ends_with(s.as_str())) {
            reasons.insert(ReasonCode::PathSuffix);
        }
    }
    let reasons: Vec<_> = reasons.into_iter().collect();
    (reasons.is_empty(), reasons)
}

// ---------------------------------------------------------------------------
// Ledger keeper

#[derive(Debug, Default)]
struct KeeperState {
    ledgers: BTreeMap<String, RunbookLedger>,
    admitted: BTreeMap<(String, i64), u32>,
}

/// Owns all runbook ledgers and the per-day admission counters. The cap
/// check and increment happen under one lock.
#[derive(Debug, Default)]
pub struct LedgerKeeper {
    state: Mutex<KeeperState>,
}

impl LedgerKeeper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ledgers(ledgers: impl IntoIterator<Item = RunbookLedger>) -> Self {
        let state = KeeperState {
            ledgers: ledgers
                .into_iter()
                .map(|l| (l.runbook_name.clone(), l))
                .collect(),
            admitted: BTreeMap::new(),
        };
        Self {
            state: Mutex::new(state),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, KeeperState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs `f` against the current ledger for `runbook`.
    pub fn with_ledger<R>(&self, runbook: &str, f: impl FnOnce(Option<&RunbookLedger>) -> R) -> R {
        f(self.lock().ledgers.get(runbook))
    }

    /// Reserves one admission for `runbook` on `day`. Returns false, and
    /// changes nothing, when `cap` admissions are already granted.
    pub fn try_admit(&self, runbook: &str, day: i64, cap: u32) -> bool {
        let mut st = self.lock();
        let n = st.admitted.entry((runbook.to_string(), day)).or_default();
        if *n >= cap {
            return false;
        }
        *n += 1;
        true
    }

    /// Returns a reservation made by [`try_admit`](Self::try_admit).
    pub fn release(&self, runbook: &str, day: i64) {
        let mut st = self.lock();
        if let Some(n) = st.admitted.get_mut(&(runbook.to_string(), day)) {
            *n = n.saturating_sub(1);
        }
    }

    pub fn admitted(&self, runbook: &str, day: i64) -> u32 {
        self.lock()
            .admitted
            .get(&(runbook.to_string(), day))
            .copied()
            .unwrap_or(0)
    }

    /// Records an outcome, creating the ledger on first use.
    pub fn record(&self, runbook: &str, event: &LifecycleEvent) -> Result<(), LedgerError> {
        let mut st = self.lock();
        st.ledgers
            .entry(runbook.to_string())
            .or_insert_with(|| RunbookLedger::new(runbook))
            .record_outcome(event)
    }

    pub fn snapshot(&self) -> BTreeMap<String, RunbookLedger> {
        self.lock().ledgers.clone()
    }
}
