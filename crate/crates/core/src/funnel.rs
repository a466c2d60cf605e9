//! The review funnel: the bot pipeline (eligibility, static heuristics, DRS,
//! review agent, then a delayed landing) and the human pipeline (three
//! verification groups, then the stricter approval gate).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{utc_day, Diff, SourceVariant, Timestamp};
use crate::eligibility::{
    content_checks, human_eligible, route_bot, scope_checks, LedgerKeeper, ReasonCode, Route,
};
use crate::policy::{PolicySet, PxThreshold, ThresholdResolution};
use crate::review::{review, ReviewBackend, ReviewVerdict};
use crate::risk::{passes_threshold, DrsAssessment, Percentile, RiskScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageKind {
    Eligibility,
    StaticHeuristics,
    Drs,
    ReviewAgent,
    VerificationG1,
    VerificationG2,
    VerificationG3,
    Approval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: StageKind,
    pub passed: bool,
    pub reasons: Vec<ReasonCode>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineOutcome {
    RadarLandScheduled,
    RadarVerifiedDeferredReview,
    RadarApprovedNoReview,
    RoutedToHuman,
    Blocked,
}

impl PipelineOutcome {
    pub fn is_radar(self) -> bool {
        matches!(
            self,
            PipelineOutcome::RadarLandScheduled
                | PipelineOutcome::RadarVerifiedDeferredReview
                | PipelineOutcome::RadarApprovedNoReview
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDecision {
    pub diff_id: String,
    pub org: String,
    pub outcome: PipelineOutcome,
    pub stages: Vec<StageResult>,
    /// Reasons not tied to a stage (currently only `PAUSED`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<ReasonCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drs: Option<DrsAssessment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ReviewVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landing: Option<DeferredLanding>,
}

impl PipelineDecision {
    fn new(diff: &Diff) -> Self {
        Self {
            diff_id: diff.id.clone(),
            org: diff.org.clone(),
            outcome: PipelineOutcome::RoutedToHuman,
            stages: vec![],
            reasons: vec![],
            route: None,
            drs: None,
            verdict: None,
            landing: None,
        }
    }

    /// Every reason from every stage plus decision-level reasons.
    pub fn all_reasons(&self) -> Vec<ReasonCode> {
        self.reasons
            .iter()
            .chain(self.stages.iter().flat_map(|s| s.reasons.iter()))
            .copied()
            .collect()
    }

    /// The first failing stage, if any.
    pub fn failed_stage(&self) -> Option<StageKind> {
        self.stages.iter().find(|s| !s.passed).map(|s| s.stage)
    }

    fn push(&mut self, stage: StageKind, reasons: Vec<ReasonCode>, at: Timestamp) -> bool {
        let passed = reasons.is_empty();
        self.stages.push(StageResult {
            stage,
            passed,
            reasons,
            at,
        });
        passed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FunnelError {
    #[error("decision for `{0}` is not verified")]
    NotVerified(String),
    #[error("action not allowed in state {0:?}")]
    InvalidState(PipelineOutcome),
}

// ---------------------------------------------------------------------------
// Deferred landing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LandingStatus {
    Pending,
    Landed,
    Overridden,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LandingError {
    #[error("landing not due until {land_at}")]
    NotYetDue { land_at: Timestamp },
    #[error("override at or after land_at {land_at}")]
    TooLate { land_at: Timestamp },
    #[error("landing already resolved as {0:?}")]
    AlreadyResolved(LandingStatus),
    #[error("no scheduled landing for `{0}`")]
    Unknown(String),
}

/// A bot diff waiting out its landing delay. Humans may reject it until
/// `land_at` (exclusive); from `land_at` on it may land.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeferredLanding {
    pub diff_id: String,
    pub scheduled_at: Timestamp,
    pub land_at: Timestamp,
    pub status: LandingStatus,
}

impl DeferredLanding {
    pub fn schedule(diff_id: impl Into<String>, scheduled_at: Timestamp, delay_seconds: u64) -> Self {
        Self {
            diff_id: diff_id.into(),
            scheduled_at,
            land_at: scheduled_at.saturating_add(delay_seconds as i64),
            status: LandingStatus::Pending,
        }
    }

    pub fn land(&mut self, now: Timestamp) -> Result<(), LandingError> {
        if self.status != LandingStatus::Pending {
            return Err(LandingError::AlreadyResolved(self.status));
        }
        if now < self.land_at {
            return Err(LandingError::NotYetDue { land_at: self.land_at });
        }
        self.status = LandingStatus::Landed;
        Ok(())
    }

    pub fn process_override(&mut self, rejection_at: Timestamp) -> Result<(), LandingError> {
        if self.status != LandingStatus::Pending {
            return Err(LandingError::AlreadyResolved(self.status));
        }
        if rejection_at >= self.land_at {
            return Err(LandingError::TooLate { land_at: self.land_at });
        }
        self.status = LandingStatus::Overridden;
        Ok(())
    }
}

/// Owns pending landings and fires them in `land_at` order.
#[derive(Debug, Default)]
pub struct LandingScheduler {
    queue: BinaryHeap<Reverse<(Timestamp, u64, String)>>,
    landings: BTreeMap<String, DeferredLanding>,
    seq: u64,
}

impl LandingScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, landing: DeferredLanding) {
        self.queue
            .push(Reverse((landing.land_at, self.seq, landing.diff_id.clone())));
        self.seq += 1;
        self.landings.insert(landing.diff_id.clone(), landing);
    }

    pub fn get(&self, diff_id: &str) -> Option<&DeferredLanding> {
        self.landings.get(diff_id)
    }

    pub fn override_at(&mut self, diff_id: &str, at: Timestamp) -> Result<(), LandingError> {
        self.landings
            .get_mut(diff_id)
            .ok_or_else(|| LandingError::Unknown(diff_id.to_string()))?
            .process_override(at)
    }

    /// Earliest `land_at` among queued landings.
    pub fn next_due(&self) -> Option<Timestamp> {
        self.queue.peek().map(|Reverse((t, _, _))| *t)
    }

    /// Lands everything pending with `land_at <= now`, in order.
    pub fn advance(&mut self, now: Timestamp) -> Vec<DeferredLanding> {
        let mut landed = Vec::new();
        while let Some(Reverse((t, _, _))) = self.queue.peek() {
            if *t > now {
                break;
            }
            let Reverse((_, _, id)) = self.queue.pop().expect("peeked");
            if let Some(l) = self.landings.get_mut(&id) {
                if l.land(now).is_ok() {
                    landed.push(l.clone());
                }
            }
        }
        landed
    }
}

// ---------------------------------------------------------------------------
// Author actions on verified human diffs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuthorAction {
    Ship,
    WaitForHuman,
    ReturnToNeedsReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", tag = "state")]
pub enum AuthorTransition {
    Landed { deferred_review_required: bool },
    AwaitingHumanReview,
    NeedsReview,
}

pub fn author_action(decision: &PipelineDecision, action: AuthorAction) -> Result<AuthorTransition, FunnelError> {
    let verified = match decision.outcome {
        PipelineOutcome::RadarVerifiedDeferredReview => true,
        PipelineOutcome::RadarApprovedNoReview => false,
        other => return Err(FunnelError::InvalidState(other)),
    };
    Ok(match action {
        AuthorAction::Ship => AuthorTransition::Landed {
            deferred_review_required: verified,
        },
        AuthorAction::WaitForHuman => AuthorTransition::AwaitingHumanReview,
        AuthorAction::ReturnToNeedsReview => AuthorTransition::NeedsReview,
    })
}

// ---------------------------------------------------------------------------
// Pause control

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PauseControl {
    pub kinds: BTreeSet<SourceVariant>,
    pub runbooks: BTreeSet<String>,
    pub orgs: BTreeSet<String>,
}

impl PauseControl {
    pub fn is_paused(&self, diff: &Diff) -> bool {
        self.kinds.contains(&diff.source.variant())
            || diff
                .source
                .runbook_name()
                .is_some_and(|r| self.runbooks.contains(r))
            || self.orgs.contains(&diff.org)
    }

    /// Reads a control file; a missing file means nothing is paused.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e),
        }
    }

    /// Writes atomically via a sibling temp file.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(tmp, path)
    }
}

// ---------------------------------------------------------------------------
// Pipelines

/// Everything a pipeline run reads. Each call evaluates one diff; only the
/// cap admission and the calibration update mutate shared state.
pub struct Funnel<'a> {
    pub policy: &'a PolicySet,
    pub scorer: &'a RiskScorer,
    pub backend: &'a dyn ReviewBackend,
    pub keeper: &'a LedgerKeeper,
    pub pause: &'a PauseControl,
}

fn drs_reasons(drs: &DrsAssessment, t: PxThreshold) -> Vec<ReasonCode> {
    match drs.percentile {
        Percentile::ColdStart => vec![ReasonCode::DrsColdStart],
        Percentile::Rank(r) if passes_threshold(r, t) => vec![],
        Percentile::Rank(_) => vec![ReasonCode::DrsAboveThreshold],
    }
}

impl Funnel<'_> {
    /// Routes one diff through the pipeline for its source, then feeds its
    /// raw score to the calibration window. Paused diffs are not evaluated.
    pub fn process(&self, diff: &Diff, now: Timestamp) -> PipelineDecision {
        if self.pause.is_paused(diff) {
            let mut d = PipelineDecision::new(diff);
            d.reasons.push(ReasonCode::Paused);
            return d;
        }
        let drs = self.scorer.assess(diff);
        let decision = if diff.is_bot() {
            self.run_ace(diff, drs, now)
        } else {
            let verified = self.run_verification(diff, drs, now);
            match self.run_approval(&verified, now) {
                Ok(d) => d,
                Err(_) => verified,
            }
        };
        self.scorer.observe(drs.raw);
        decision
    }

    /// Bot pipeline. `drs` is the diff's assessment against the current
    /// calibration window.
    pub fn run_ace(&self, diff: &Diff, drs: DrsAssessment, now: Timestamp) -> PipelineDecision {
        let mut d = PipelineDecision::new(diff);
        let runbook = diff.source.runbook_name();
        let elig = match runbook {
            Some(name) => self.keeper.with_ledger(name, |l| route_bot(diff, self.policy, l, now)),
            None => route_bot(diff, self.policy, None, now),
        };
        d.route = Some(elig.route);
        let mut reasons = elig.reasons;
        // Cap admission is reserved here and released if a later stage fails.
        let mut reserved: Option<(&str, i64)> = None;
        if elig.eligible {
            if let Some(name) = runbook {
                let day = utc_day(now);
                if self.keeper.try_admit(name, day, self.policy.runbook(name).daily_cap) {
                    reserved = Some((name, day));
                } else {
                    reasons.push(ReasonCode::DailyCap);
                }
            }
        }
        let blocked = elig.route == Route::Blocked || reasons.contains(&ReasonCode::DailyCap);
        if !d.push(StageKind::Eligibility, reasons, now) {
            d.outcome = if blocked {
                PipelineOutcome::Blocked
            } else {
                PipelineOutcome::RoutedToHuman
            };
            return d;
        }
        let release = |d: &mut PipelineDecision| {
            if let Some((name, day)) = reserved {
                self.keeper.release(name, day);
            }
            d.outcome = PipelineOutcome::RoutedToHuman;
        };

        if !d.push(StageKind::StaticHeuristics, scope_checks(diff), now) {
            release(&mut d);
            return d;
        }

        let blanket = elig.route == Route::BlanketAutoaccept;
        if let Route::Ace {
            gate: ThresholdResolution::Gate(t),
        } = elig.route
        {
            d.drs = Some(drs);
            if !d.push(StageKind::Drs, drs_reasons(&drs, t), now) {
                release(&mut d);
                return d;
            }
        }

        if !blanket {
            let verdict = review(diff, self.backend, &self.policy.acr);
            let reasons = if verdict.accepted() {
                vec![]
            } else {
                vec![ReasonCode::ReviewRejected]
            };
            d.verdict = Some(verdict);
            if !d.push(StageKind::ReviewAgent, reasons, now) {
                release(&mut d);
                return d;
            }
        }

        let delay = self.policy.org(&diff.org).landing_delay_seconds;
        d.landing = Some(DeferredLanding::schedule(&diff.id, now, delay));
        d.outcome = PipelineOutcome::RadarLandScheduled;
        d
    }

    /// Human pipeline, groups G1 to G3.
    pub fn run_verification(&self, diff: &Diff, drs: DrsAssessment, now: Timestamp) -> PipelineDecision {
        let mut d = PipelineDecision::new(diff);
        d.route = Some(Route::HumanPipeline);
        let org = self.policy.org(&diff.org);
        let (_, mut g1) = human_eligible(diff, self.policy);
        if !org.deferred_review_enabled {
            g1.push(ReasonCode::DeferredReviewDisabled);
        }
        if !d.push(StageKind::VerificationG1, g1, now) {
            return d;
        }
        let (_, g2) = content_checks(diff, &self.policy.blocklists);
        if !d.push(StageKind::VerificationG2, g2, now) {
            return d;
        }
        let verdict = review(diff, self.backend, &self.policy.acr);
        let mut g3 = Vec::new();
        if !verdict.accepted() {
            g3.push(ReasonCode::ReviewRejected);
        }
        g3.extend(drs_reasons(&drs, org.human_drs_threshold));
        d.drs = Some(drs);
        d.verdict = Some(verdict);
        if d.push(StageKind::VerificationG3, g3, now) {
            d.outcome = PipelineOutcome::RadarVerifiedDeferredReview;
        }
        d
    }

    /// The DRS threshold Approval applies for `org`: the configured approval
    /// threshold, never looser than the org's verification threshold.
    pub fn approval_threshold(&self, org: &str) -> PxThreshold {
        self.policy
            .approval
            .drs_threshold
            .min(self.policy.org(org).human_drs_threshold)
    }

    /// Stricter gate over a verified decision, using its recorded DRS rank and
    /// review verdict. A failed gate leaves the diff verified.
    pub fn run_approval(&self, verified: &PipelineDecision, now: Timestamp) -> Result<PipelineDecision, FunnelError> {
        if verified.outcome != PipelineOutcome::RadarVerifiedDeferredReview {
            return Err(FunnelError::NotVerified(verified.diff_id.clone()));
        }
        let (Some(drs), Some(verdict)) = (verified.drs, verified.verdict.as_ref()) else {
            return Err(FunnelError::NotVerified(verified.diff_id.clone()));
        };
        let cfg = &self.policy.approval;
        let mut reasons = Vec::new();
        if !drs_reasons(&drs, self.approval_threshold(&verified.org)).is_empty() {
            reasons.push(ReasonCode::ApprovalDrs);
        }
        if verdict.confidence < cfg.min_confidence {
            reasons.push(ReasonCode::ApprovalConfidence);
        }
        if verdict.effort_score > cfg.max_effort {
            reasons.push(ReasonCode::ApprovalEffort);
        }
        let mut d = verified.clone();
        if d.push(StageKind::Approval, reasons, now) {
            d.outcome = PipelineOutcome::RadarApprovedNoReview;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::fixtures::{change, diff};
    use crate::diff::SourceKind;
    use crate::eligibility::{LedgerEntry, LedgerOutcome, RunbookLedger};
    use crate::review::{BackendAssessment, BackendError, ChangeClassification, SafeSignal};
    use crate::risk::{CalibrationWindow, DrsConfig, RawScore};

    const NOW: Timestamp = 1_700_000_000;

    /// Accepts (or rejects) every diff with a fixed confidence.
    struct Agent {
        accept: bool,
        confidence: u8,
    }

    impl ReviewBackend for Agent {
        fn assess(&self, diff: &Diff) -> Result<BackendAssessment, BackendError> {
            let mut c = ChangeClassification::default();
            if self.accept {
                c.safe.insert(SafeSignal::PureFormatting);
            }
            Ok(BackendAssessment {
                per_change: vec![c; diff.changes.len()],
                confidence: self.confidence,
            })
        }
    }

    const ACCEPT: Agent = Agent {
        accept: true,
        confidence: 10,
    };

    /// Raw score = total lines changed; the window holds 0.5, 1.5, ..., 99.5
    /// so a diff of `n` lines (n <= 100) has rank n / 100.
    fn scorer() -> RiskScorer {
        let cfg = DrsConfig {
            weights: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..DrsConfig::default()
        };
        let w = CalibrationWindow::with_scores(5000, (0..100).map(|i| RawScore::new(i as f64 + 0.5).unwrap()));
        RiskScorer::with_window(&cfg, w)
    }

    fn sized(id: &str, source: SourceKind, lines: u32) -> Diff {
        diff(id, source, vec![change("src/a.rs", lines, 0)])
    }

    fn runbook(name: &str) -> SourceKind {
        SourceKind::RacerRunbook {
            runbook_name: name.into(),
        }
    }

    fn clean_keeper(name: &str) -> LedgerKeeper {
        let mut l = RunbookLedger::new(name);
        for i in 0..100 {
            l.push(LedgerEntry {
                at: NOW - 5 * 86_400 + i,
                outcome: LedgerOutcome::Landed,
                diff_id: format!("h{i}"),
            })
            .unwrap();
        }
        LedgerKeeper::from_ledgers([l])
    }

    struct Fixture {
        policy: PolicySet,
        scorer: RiskScorer,
        keeper: LedgerKeeper,
        pause: PauseControl,
    }

    impl Fixture {
        fn new() -> Self {
            let mut policy = PolicySet::default();
            policy.approved_codemods.insert("fmt".into());
            let mut rp = crate::policy::RunbookPolicy::defaults("rb");
            rp.allowlisted = true;
            policy.runbooks.insert("rb".into(), rp);
            Self {
                policy,
                scorer: scorer(),
                keeper: clean_keeper("rb"),
                pause: PauseControl::default(),
            }
        }

        fn funnel<'a>(&'a self, agent: &'a dyn ReviewBackend) -> Funnel<'a> {
            Funnel {
                policy: &self.policy,
                scorer: &self.scorer,
                backend: agent,
                keeper: &self.keeper,
                pause: &self.pause,
            }
        }
    }

    fn stages(d: &PipelineDecision) -> Vec<StageKind> {
        d.stages.iter().map(|s| s.stage).collect()
    }

    #[test]
    fn blanket_codemod_skips_drs_and_agent() {
        let fx = Fixture::new();
        let reject = Agent {
            accept: false,
            confidence: 0,
        };
        let d = sized(
            "c",
            SourceKind::DeterministicCodemod {
                codemod_id: "fmt".into(),
            },
            99,
        );
        let dec = fx.funnel(&reject).process(&d, NOW);
        assert_eq!(dec.outcome, PipelineOutcome::RadarLandScheduled);
        assert_eq!(stages(&dec), vec![StageKind::Eligibility, StageKind::StaticHeuristics]);
        assert_eq!(dec.landing.unwrap().land_at, NOW + 3600);
    }

    #[test]
    fn blanket_codemod_still_honours_scope() {
        let fx = Fixture::new();
        let mut d = sized(
            "c",
            SourceKind::DeterministicCodemod {
                codemod_id: "fmt".into(),
            },
            1,
        );
        d.scope.is_open_source = true;
        let dec = fx.funnel(&ACCEPT).process(&d, NOW);
        assert_eq!(dec.outcome, PipelineOutcome::RoutedToHuman);
        assert_eq!(dec.failed_stage(), Some(StageKind::StaticHeuristics));
    }

    #[test]
    fn allowlisted_runbook_at_045_lands() {
        let fx = Fixture::new();
        let dec = fx.funnel(&ACCEPT).process(&sized("r", runbook("rb"), 45), NOW);
        assert_eq!(dec.outcome, PipelineOutcome::RadarLandScheduled);
        assert_eq!(
            stages(&dec),
            vec![StageKind::Eligibility, StageKind::StaticHeuristics, StageKind::Drs, StageKind::ReviewAgent]
        );
        assert_eq!(fx.keeper.admitted("rb", utc_day(NOW)), 1);
    }

    #[test]
    fn ai_codemod_at_045_fails_drs() {
        let fx = Fixture::new();
        let d = sized(
            "a",
            SourceKind::AiCodemod {
                codemod_id: "x".into(),
            },
            45,
        );
        let dec = fx.funnel(&ACCEPT).process(&d, NOW);
        assert_eq!(dec.outcome, PipelineOutcome::RoutedToHuman);
        assert_eq!(dec.failed_stage(), Some(StageKind::Drs));
        assert_eq!(dec.stages.len(), 3, "no stage after the failing one");
        assert_eq!(dec.all_reasons(), vec![ReasonCode::DrsAboveThreshold]);
    }

    #[test]
    fn failed_later_stage_releases_cap_reservation() {
        let fx = Fixture::new();
        let reject = Agent {
            accept: false,
            confidence: 10,
        };
        let dec = fx.funnel(&reject).process(&sized("r", runbook("rb"), 10), NOW);
        assert_eq!(dec.failed_stage(), Some(StageKind::ReviewAgent));
        assert_eq!(fx.keeper.admitted("rb", utc_day(NOW)), 0);
    }

    #[test]
    fn cap_exhaustion_blocks() {
        let mut fx = Fixture::new();
        fx.policy.runbooks.get_mut("rb").unwrap().daily_cap = 2;
        let f = fx.funnel(&ACCEPT);
        let outcomes: Vec<_> = (0..4)
            .map(|i| f.process(&sized(&format!("r{i}"), runbook("rb"), 5), NOW + i).outcome)
            .collect();
        assert_eq!(
            outcomes,
            vec![
                PipelineOutcome::RadarLandScheduled,
                PipelineOutcome::RadarLandScheduled,
                PipelineOutcome::Blocked,
                PipelineOutcome::Blocked
            ]
        );
    }

    #[test]
    fn paused_source_is_not_evaluated() {
        let mut fx = Fixture::new();
        fx.pause.runbooks.insert("rb".into());
        let before = fx.scorer.window_snapshot();
        let dec = fx.funnel(&ACCEPT).process(&sized("r", runbook("rb"), 5), NOW);
        assert_eq!(dec.outcome, PipelineOutcome::RoutedToHuman);
        assert!(dec.stages.is_empty());
        assert_eq!(dec.reasons, vec![ReasonCode::Paused]);
        assert_eq!(fx.scorer.window_snapshot(), before);
    }

    #[test]
    fn flipping_any_layer_flips_the_outcome() {
        let base = || sized("r", runbook("rb"), 10);
        let fx = Fixture::new();
        assert!(fx.funnel(&ACCEPT).process(&base(), NOW).outcome == PipelineOutcome::RadarLandScheduled);

        let mut d = base();
        d.source = runbook("rb_test");
        assert_eq!(fx.funnel(&ACCEPT).process(&d, NOW).failed_stage(), Some(StageKind::Eligibility));
        let mut d = base();
        d.scope.is_sox = true;
        assert_eq!(fx.funnel(&ACCEPT).process(&d, NOW).failed_stage(), Some(StageKind::StaticHeuristics));
        let d = sized("r", runbook("rb"), 60);
        assert_eq!(fx.funnel(&ACCEPT).process(&d, NOW).failed_stage(), Some(StageKind::Drs));
        let low = Agent {
            accept: true,
            confidence: 7,
        };
        assert_eq!(fx.funnel(&low).process(&base(), NOW).failed_stage(), Some(StageKind::ReviewAgent));
    }

    #[test]
    fn human_verification_examples() {
        let fx = Fixture::new();
        let f = fx.funnel(&ACCEPT);
        let drs = |lines| fx.scorer.assess(&sized("h", SourceKind::Human, lines));

        let d = sized("h", SourceKind::Human, 3);
        let v = f.run_verification(&d, drs(3), NOW);
        assert_eq!(v.outcome, PipelineOutcome::RadarVerifiedDeferredReview);

        let mut wip = d.clone();
        wip.state.is_wip = true;
        let v = f.run_verification(&wip, drs(3), NOW);
        assert_eq!((v.outcome, v.failed_stage()), (PipelineOutcome::RoutedToHuman, Some(StageKind::VerificationG1)));
        assert_eq!(v.stages.len(), 1);

        let d6 = sized("h", SourceKind::Human, 6);
        let v = f.run_verification(&d6, drs(6), NOW);
        assert_eq!(v.failed_stage(), Some(StageKind::VerificationG3));
    }

    #[test]
    fn approval_examples() {
        let fx = Fixture::new();
        let f = fx.funnel(&ACCEPT);
        let d1 = sized("h", SourceKind::Human, 1);
        let v = f.run_verification(&d1, fx.scorer.assess(&d1), NOW);
        let a = f.run_approval(&v, NOW).unwrap();
        assert_eq!(a.outcome, PipelineOutcome::RadarApprovedNoReview);
        assert!(a.stages.iter().any(|s| s.stage == StageKind::VerificationG3 && s.passed));

        let d4 = sized("h", SourceKind::Human, 4);
        let v = f.run_verification(&d4, fx.scorer.assess(&d4), NOW);
        assert_eq!(v.outcome, PipelineOutcome::RadarVerifiedDeferredReview);
        let a = f.run_approval(&v, NOW).unwrap();
        assert_eq!(a.outcome, PipelineOutcome::RadarVerifiedDeferredReview);
        assert_eq!(a.stages.last().unwrap().reasons, vec![ReasonCode::ApprovalDrs]);

        let mut wip = d1.clone();
        wip.state.is_wip = true;
        let v = f.run_verification(&wip, fx.scorer.assess(&wip), NOW);
        assert_eq!(f.run_approval(&v, NOW), Err(FunnelError::NotVerified("h".into())));
    }

    #[test]
    fn approval_threshold_never_looser_than_verification() {
        let mut fx = Fixture::new();
        fx.policy.global.human_drs_threshold = PxThreshold::p(1);
        assert_eq!(fx.funnel(&ACCEPT).approval_threshold("any"), PxThreshold::p(1));
    }

    #[test]
    fn landing_state_machine() {
        let mut l = DeferredLanding::schedule("d", 100, 50);
        assert_eq!(l.land(149), Err(LandingError::NotYetDue { land_at: 150 }));
        let mut early = l.clone();
        assert_eq!(early.process_override(149), Ok(()));
        assert_eq!(early.status, LandingStatus::Overridden);
        assert_eq!(
            early.process_override(120),
            Err(LandingError::AlreadyResolved(LandingStatus::Overridden))
        );
        assert_eq!(l.process_override(150), Err(LandingError::TooLate { land_at: 150 }));
        assert_eq!(l.land(150), Ok(()));
        assert_eq!(l.land(151), Err(LandingError::AlreadyResolved(LandingStatus::Landed)));
    }

    #[test]
    fn scheduler_fires_in_order_and_skips_overridden() {
        let mut s = LandingScheduler::new();
        s.schedule(DeferredLanding::schedule("b", 10, 20));
        s.schedule(DeferredLanding::schedule("a", 0, 10));
        s.schedule(DeferredLanding::schedule("c", 5, 10));
        s.override_at("c", 14).unwrap();
        assert_eq!(s.next_due(), Some(10));
        assert!(s.advance(9).is_empty());
        let ids: Vec<_> = s.advance(30).into_iter().map(|l| l.diff_id).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(s.get("c").unwrap().status, LandingStatus::Overridden);
    }

    #[test]
    fn author_actions() {
        let mut dec = PipelineDecision::new(&sized("h", SourceKind::Human, 1));
        dec.outcome = PipelineOutcome::RadarVerifiedDeferredReview;
        assert_eq!(
            author_action(&dec, AuthorAction::Ship),
            Ok(AuthorTransition::Landed {
                deferred_review_required: true
            })
        );
        assert_eq!(author_action(&dec, AuthorAction::ReturnToNeedsReview), Ok(AuthorTransition::NeedsReview));
        dec.outcome = PipelineOutcome::RadarApprovedNoReview;
        assert_eq!(
            author_action(&dec, AuthorAction::Ship),
            Ok(AuthorTransition::Landed {
                deferred_review_required: false
            })
        );
        dec.outcome = PipelineOutcome::RoutedToHuman;
        assert_eq!(
            author_action(&dec, AuthorAction::Ship),
            Err(FunnelError::InvalidState(PipelineOutcome::RoutedToHuman))
        );
    }

    #[test]
    fn pause_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pause.json");
        assert_eq!(PauseControl::load(&path).unwrap(), PauseControl::default());
        let mut p = PauseControl::default();
        p.kinds.insert(SourceVariant::AiCodemod);
        p.orgs.insert("o".into());
        p.save(&path).unwrap();
        assert_eq!(PauseControl::load(&path).unwrap(), p);
    }
}
