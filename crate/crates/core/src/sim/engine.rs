use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::generate::{generate_stream, DefectClass, SyntheticDiff, SyntheticStream};
use super::{ScenarioConfig, SimError};
use crate::diff::{LifecycleEvent, LifecycleKind, SourceVariant, Timestamp, SECONDS_PER_DAY};
use crate::eligibility::{LedgerKeeper, ReasonCode, RunbookLedger};
use crate::eventlog::{EventLog, LogPayload};
use crate::funnel::{AuthorAction, Funnel, LandingScheduler, PauseControl, PipelineOutcome};
use crate::policy::PolicySet;
use crate::review::{BackendAssessment, BackendError, ReviewBackend, RiskSignal, RuleBackend};
use crate::risk::{CalibrationWindow, RiskScorer};
use crate::telemetry::{DecisionEvent, EventTimes, MetricSummary, MetricWindow};

/// How a simulated diff ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Terminal {
    RadarLanded,
    Overridden,
    HumanLanded,
    HumanRejected,
    /// Still waiting for a reviewer when the event queue ran dry.
    Unresolved,
}

/// Adverse outcomes if every diff in the stream landed ungated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub diffs: u64,
    pub would_revert: u64,
    pub would_pi: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub n_diffs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_time: Option<Timestamp>,
    pub treated_sources: Vec<SourceVariant>,
    /// One per diff, in stream order.
    pub events: Vec<DecisionEvent>,
    pub terminals: Vec<Terminal>,
    pub counterfactual: Counterfactual,
    /// Human review queue depth at the end of each simulated day.
    pub queue_depth_daily: Vec<usize>,
    pub summary: MetricSummary,
    #[serde(skip)]
    pub log: EventLog,
    #[serde(skip)]
    pub ledgers: BTreeMap<String, RunbookLedger>,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }

    /// Ids of diffs landed through RADAR.
    pub fn radar_landed_ids(&self) -> Vec<&str> {
        self.events
            .iter()
            .zip(&self.terminals)
            .filter(|(_, t)| **t == Terminal::RadarLanded)
            .map(|(e, _)| e.diff_id.as_str())
            .collect()
    }
}

/// Rule classifications plus a risk signal on diffs whose defect the agent
/// catches.
struct SimBackend<'a> {
    rules: RuleBackend,
    catches: HashMap<&'a str, DefectClass>,
}

impl ReviewBackend for SimBackend<'_> {
    fn assess(&self, diff: &crate::diff::Diff) -> Result<BackendAssessment, BackendError> {
        let mut a = self.rules.assess(diff)?;
        if let (Some(class), Some(first)) = (self.catches.get(diff.id.as_str()), a.per_change.first_mut()) {
            first
                .risk
                .insert(RiskSignal::new(class.risk_kind(), "defect flagged by review agent"));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Publish(usize),
    Decide(usize),
    HumanDone(usize),
    Override(usize),
    LandDue(usize),
    Revert(usize),
    Pi(usize),
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    diffs: &'a [SyntheticDiff],
    funnel: Funnel<'a>,
    keeper: &'a LedgerKeeper,
    index: HashMap<&'a str, usize>,
    heap: BinaryHeap<Reverse<(Timestamp, u64, Ev)>>,
    seq: u64,
    scheduler: LandingScheduler,
    log: EventLog,
    events: Vec<Option<DecisionEvent>>,
    terminals: Vec<Terminal>,
    activation: Option<Timestamp>,
    next_free: f64,
    depth: usize,
    depth_daily: Vec<usize>,
    next_boundary: Timestamp,
}

impl<'a> Engine<'a> {
    fn push(&mut self, at: Timestamp, ev: Ev) {
        self.heap.push(Reverse((at, self.seq, ev)));
        self.seq += 1;
    }

    fn runbook(&self, i: usize) -> Option<&'a str> {
        self.diffs[i].diff.source.runbook_name()
    }

    /// Logs a lifecycle event, applies it to the diff's decision event and,
    /// for runbook outcomes, to the ledger.
    fn life(&mut self, i: usize, kind: LifecycleKind, at: Timestamp) -> Result<(), SimError> {
        let event = LifecycleEvent {
            diff_id: self.diffs[i].diff.id.clone(),
            kind,
            at,
        };
        let runbook = self.runbook(i);
        if let Some(e) = self.events[i].as_mut() {
            let t = &mut e.times;
            match kind {
                LifecycleKind::ReviewStarted => t.review_started = Some(at),
                LifecycleKind::ReviewEnded => t.review_ended = Some(at),
                LifecycleKind::Closed => t.closed = Some(at),
                LifecycleKind::Landed => t.landed = Some(at),
                LifecycleKind::Reverted => t.reverted = Some(at),
                LifecycleKind::PiAttributed => t.pi = Some(at),
                LifecycleKind::HumanRejected
                    if e.outcome == PipelineOutcome::RadarLandScheduled && t.landed.is_none() =>
                {
                    e.overridden = true;
                }
                _ => {}
            }
        }
        if let Some(rb) = runbook {
            if matches!(
                kind,
                LifecycleKind::Landed
                    | LifecycleKind::Reverted
                    | LifecycleKind::PiAttributed
                    | LifecycleKind::HumanRejected
            ) {
                self.keeper.record(rb, &event)?;
            }
        }
        self.log.append(LogPayload::Lifecycle {
            event,
            runbook: runbook.map(str::to_string),
        });
        Ok(())
    }

    fn record_decision(&mut self, i: usize, event: DecisionEvent) -> Result<(), SimError> {
        self.log.append(LogPayload::Decision(event.clone()));
        self.events[i] = Some(event);
        self.life(i, LifecycleKind::ReviewStarted, self.diffs[i].diff.created_at)
    }

    fn land(&mut self, i: usize, at: Timestamp, terminal: Terminal) -> Result<(), SimError> {
        self.life(i, LifecycleKind::Landed, at)?;
        self.life(i, LifecycleKind::Closed, at)?;
        self.terminals[i] = terminal;
        let truth = &self.diffs[i].truth;
        let (revert, pi) = (truth.would_revert, truth.would_pi);
        let (rd, pd) = (truth.revert_delay, truth.pi_delay);
        if revert {
            self.push(at + rd, Ev::Revert(i));
        }
        if pi {
            self.push(at + pd, Ev::Pi(i));
        }
        Ok(())
    }

    fn enqueue_human(&mut self, i: usize, at: Timestamp) {
        self.depth += 1;
        let capacity = self.cfg.human_review.capacity_per_day;
        if capacity <= 0.0 {
            return;
        }
        let start = (at as f64).max(self.next_free);
        self.next_free = start + SECONDS_PER_DAY as f64 / capacity;
        let done = start.ceil() as Timestamp + self.diffs[i].truth.human_latency_draw;
        self.push(done, Ev::HumanDone(i));
    }

    fn author_action(&self, i: usize) -> AuthorAction {
        let a = &self.cfg.author_action;
        let u = self.diffs[i].truth.author_action_draw;
        if u < a.ship {
            AuthorAction::Ship
        } else if u < a.ship + a.wait_for_human {
            AuthorAction::WaitForHuman
        } else {
            AuthorAction::ReturnToNeedsReview
        }
    }

    fn step(&mut self, at: Timestamp, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Publish(i) => {
                let diff = &self.diffs[i].diff;
                if self.activation.is_some_and(|a| diff.created_at < a) {
                    let event = DecisionEvent {
                        diff_id: diff.id.clone(),
                        org: diff.org.clone(),
                        source: diff.source.variant(),
                        runbook: diff.source.runbook_name().map(str::to_string),
                        outcome: PipelineOutcome::RoutedToHuman,
                        eligible: false,
                        failed_stage: None,
                        reasons: vec![ReasonCode::Paused],
                        overridden: false,
                        author_action: None,
                        times: EventTimes {
                            published: diff.created_at,
                            ..EventTimes::default()
                        },
                    };
                    self.record_decision(i, event)?;
                    self.enqueue_human(i, at);
                } else {
                    self.push(at + self.cfg.radar_review_seconds, Ev::Decide(i));
                }
            }
            Ev::Decide(i) => {
                let diff = &self.diffs[i].diff;
                let decision = self.funnel.process(diff, at);
                let mut event = DecisionEvent::from_decision(diff, &decision, diff.created_at);
                let action = (decision.outcome == PipelineOutcome::RadarVerifiedDeferredReview)
                    .then(|| self.author_action(i));
                event.author_action = action;
                self.record_decision(i, event)?;
                match decision.outcome {
                    PipelineOutcome::RadarLandScheduled => {
                        self.life(i, LifecycleKind::ReviewEnded, at)?;
                        let landing = decision.landing.expect("scheduled decisions carry a landing");
                        let land_at = landing.land_at;
                        self.scheduler.schedule(landing);
                        self.push(land_at, Ev::LandDue(i));
                        let truth = &self.diffs[i].truth;
                        if truth.override_draw < self.cfg.override_prob && land_at > at {
                            let offset = (truth.override_offset * (land_at - at) as f64).floor() as Timestamp;
                            self.push(at + offset, Ev::Override(i));
                        }
                    }
                    PipelineOutcome::RadarApprovedNoReview => {
                        self.life(i, LifecycleKind::ReviewEnded, at)?;
                        self.land(i, at, Terminal::RadarLanded)?;
                    }
                    PipelineOutcome::RadarVerifiedDeferredReview if action == Some(AuthorAction::Ship) => {
                        self.life(i, LifecycleKind::ReviewEnded, at)?;
                        self.land(i, at, Terminal::RadarLanded)?;
                    }
                    _ => self.enqueue_human(i, at),
                }
            }
            Ev::HumanDone(i) => {
                self.depth -= 1;
                self.life(i, LifecycleKind::ReviewEnded, at)?;
                if self.diffs[i].truth.human_rejects(self.cfg) {
                    self.life(i, LifecycleKind::HumanRejected, at)?;
                    self.life(i, LifecycleKind::Closed, at)?;
                    self.terminals[i] = Terminal::HumanRejected;
                } else {
                    self.land(i, at, Terminal::HumanLanded)?;
                }
            }
            Ev::Override(i) => {
                if self.scheduler.override_at(&self.diffs[i].diff.id, at).is_ok() {
                    self.life(i, LifecycleKind::HumanRejected, at)?;
                    self.life(i, LifecycleKind::Closed, at)?;
                    self.terminals[i] = Terminal::Overridden;
                }
            }
            Ev::LandDue(_) => {
                for landing in self.scheduler.advance(at) {
                    let j = self.index[landing.diff_id.as_str()];
                    self.land(j, at, Terminal::RadarLanded)?;
                }
            }
            Ev::Revert(i) => self.life(i, LifecycleKind::Reverted, at)?,
            Ev::Pi(i) => self.life(i, LifecycleKind::PiAttributed, at)?,
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((at, _, ev))) = self.heap.pop() {
            while at >= self.next_boundary {
                self.depth_daily.push(self.depth);
                self.next_boundary += SECONDS_PER_DAY;
            }
            self.step(at, ev)?;
        }
        self.depth_daily.push(self.depth);
        Ok(())
    }
}

/// Seeds each scenario runbook with clean landings spread over the 30 days
/// before the start, logging them.
fn seed_ledgers(cfg: &ScenarioConfig, log: &mut EventLog) -> Result<LedgerKeeper, SimError> {
    let keeper = LedgerKeeper::new();
    let n = i64::from(cfg.runbook_history_landed);
    let span = 30 * SECONDS_PER_DAY;
    for rb in &cfg.runbooks {
        for k in 0..n {
            let event = LifecycleEvent {
                diff_id: format!("seed:{rb}:{k}"),
                kind: LifecycleKind::Landed,
                at: cfg.start_time - span + k * span / n,
            };
            keeper.record(rb, &event)?;
            log.append(LogPayload::Lifecycle {
                event,
                runbook: Some(rb.clone()),
            });
        }
    }
    Ok(keeper)
}

/// Generates the scenario's stream and simulates it under `policy`.
pub fn simulate(cfg: &ScenarioConfig, policy: &PolicySet) -> Result<RunResult, SimError> {
    let stream = generate_stream(cfg)?;
    run_stream(cfg, policy, &stream, &PauseControl::default())
}

/// Simulates a pre-generated stream. Deterministic in its inputs.
pub fn run_stream(
    cfg: &ScenarioConfig,
    policy: &PolicySet,
    stream: &SyntheticStream,
    pause: &PauseControl,
) -> Result<RunResult, SimError> {
    cfg.validate()?;
    let backend = SimBackend {
        rules: RuleBackend::new(&policy.acr)?,
        catches: stream
            .diffs
            .iter()
            .filter_map(|d| d.truth.agent_catches(cfg).map(|c| (d.diff.id.as_str(), c)))
            .collect(),
    };
    let scorer = {
        let unwindowed = RiskScorer::new(&policy.drs);
        let warm = stream.warmup.iter().map(|d| unwindowed.raw_score(d));
        RiskScorer::with_window(
            &policy.drs,
            CalibrationWindow::with_scores(policy.drs.window_capacity, warm),
        )
    };
    let mut log = EventLog::new();
    let keeper = seed_ledgers(cfg, &mut log)?;
    let n = stream.diffs.len();

    let mut engine = Engine {
        cfg,
        diffs: &stream.diffs,
        funnel: Funnel {
            policy,
            scorer: &scorer,
            backend: &backend,
            keeper: &keeper,
            pause,
        },
        keeper: &keeper,
        index: stream
            .diffs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.diff.id.as_str(), i))
            .collect(),
        heap: BinaryHeap::new(),
        seq: 0,
        scheduler: LandingScheduler::new(),
        log,
        events: vec![None; n],
        terminals: vec![Terminal::Unresolved; n],
        activation: cfg.activation_time(),
        next_free: f64::MIN,
        depth: 0,
        depth_daily: Vec::new(),
        next_boundary: cfg.start_time + SECONDS_PER_DAY,
    };
    for (i, d) in stream.diffs.iter().enumerate() {
        engine.push(d.diff.created_at, Ev::Publish(i));
    }
    engine.run()?;

    let Engine {
        log,
        events,
        terminals,
        depth_daily,
        ..
    } = engine;
    let events: Vec<DecisionEvent> = events
        .into_iter()
        .map(|e| e.expect("every published diff gets a decision event"))
        .collect();
    let counterfactual = Counterfactual {
        diffs: n as u64,
        would_revert: stream.diffs.iter().filter(|d| d.truth.would_revert).count() as u64,
        would_pi: stream.diffs.iter().filter(|d| d.truth.would_pi).count() as u64,
    };
    Ok(RunResult {
        seed: cfg.seed,
        n_diffs: n,
        activation_time: cfg.activation_time(),
        treated_sources: cfg.treated_sources.clone(),
        summary: MetricSummary::compute(&events, MetricWindow::All),
        events,
        terminals,
        counterfactual,
        queue_depth_daily: depth_daily,
        log,
        ledgers: keeper.snapshot(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{parse_jsonl, replay};
    use crate::sim::{preset, SourceMix};

    fn small(n: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_diffs: n,
            calibration_warmup: 500,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn every_diff_reaches_one_terminal_state() {
        let r = simulate(&small(800), &PolicySet::default()).unwrap();
        assert_eq!(r.events.len(), 800);
        assert_eq!(r.terminals.len(), 800);
        assert!(r.terminals.iter().all(|t| *t != Terminal::Unresolved));
        for (e, t) in r.events.iter().zip(&r.terminals) {
            assert!(e.times.is_ordered(), "{e:?}");
            match t {
                Terminal::RadarLanded => assert!(e.times.landed.is_some() && e.outcome.is_radar()),
                Terminal::HumanLanded => assert!(e.times.landed.is_some()),
                Terminal::Overridden => assert!(e.overridden && e.times.landed.is_none()),
                Terminal::HumanRejected => assert!(e.times.landed.is_none() && e.times.closed.is_some()),
                Terminal::Unresolved => unreachable!(),
            }
        }
        let counts = |t: Terminal| r.terminals.iter().filter(|x| **x == t).count();
        assert!(counts(Terminal::RadarLanded) > 0);
        assert!(counts(Terminal::HumanLanded) > 0);
    }

    #[test]
    fn landing_delay_is_honored() {
        let policy = PolicySet::default();
        let r = simulate(&small(600), &policy).unwrap();
        let scheduled: Vec<_> = r
            .events
            .iter()
            .filter(|e| e.outcome == PipelineOutcome::RadarLandScheduled)
            .collect();
        assert!(!scheduled.is_empty());
        for e in scheduled {
            let decided = e.times.review_ended.unwrap();
            let delay = policy.org(&e.org).landing_delay_seconds as i64;
            if let Some(landed) = e.times.landed {
                assert!(landed >= decided + delay);
            } else {
                assert!(e.overridden);
                assert!(e.times.closed.unwrap() < decided + delay);
            }
        }
    }

    #[test]
    fn runs_are_byte_identical() {
        let cfg = small(400);
        let a = simulate(&cfg, &PolicySet::default()).unwrap();
        let b = simulate(&cfg, &PolicySet::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    }

    #[test]
    fn replay_reconstructs_run() {
        let r = simulate(&small(500), &PolicySet::default()).unwrap();
        let state = replay(&parse_jsonl(&r.log.to_jsonl()).unwrap()).unwrap();
        assert_eq!(state.events, r.events);
        assert_eq!(state.ledgers, r.ledgers);
        let seqs: Vec<u64> = r.log.records().iter().map(|x| x.seq).collect();
        assert!(seqs.iter().enumerate().all(|(i, s)| *s == i as u64));
    }

    #[test]
    fn zero_capacity_backlog_only_grows() {
        let cfg = ScenarioConfig {
            n_diffs: 1500,
            calibration_warmup: 200,
            ..preset("backlog").unwrap()
        };
        let r = simulate(&cfg, &PolicySet::default()).unwrap();
        let arrival_days = ((r.events.last().unwrap().times.published - cfg.start_time) / SECONDS_PER_DAY) as usize;
        assert!(arrival_days >= 2);
        let days = &r.queue_depth_daily[..arrival_days];
        assert!(days.windows(2).all(|w| w[1] > w[0]), "{days:?}");
        assert!(r.terminals.contains(&Terminal::Unresolved));
    }

    #[test]
    fn pause_routes_everything_to_humans() {
        let cfg = small(300);
        let stream = generate_stream(&cfg).unwrap();
        let pause = PauseControl {
            kinds: SourceVariant::ALL.into_iter().collect(),
            ..PauseControl::default()
        };
        let r = run_stream(&cfg, &PolicySet::default(), &stream, &pause).unwrap();
        assert!(r.terminals.iter().all(|t| *t != Terminal::RadarLanded));
        assert!(r.events.iter().all(|e| !e.evaluated()));
    }

    #[test]
    fn bot_only_stream_respects_runbook_caps() {
        let cfg = ScenarioConfig {
            source_mix: SourceMix {
                human: 0.0,
                deterministic_codemod: 0.0,
                ai_codemod: 0.0,
                racer_runbook: 1.0,
            },
            ..small(1500)
        };
        let policy = PolicySet::default();
        let r = simulate(&cfg, &policy).unwrap();
        let mut per_day: BTreeMap<(String, i64), u32> = BTreeMap::new();
        for e in r.events.iter().filter(|e| e.outcome == PipelineOutcome::RadarLandScheduled) {
            let day = crate::diff::utc_day(e.times.review_ended.unwrap());
            *per_day.entry((e.runbook.clone().unwrap(), day)).or_default() += 1;
        }
        assert!(!per_day.is_empty());
        for ((rb, _), n) in per_day {
            assert!(n <= policy.runbook(&rb).daily_cap);
        }
    }
}
