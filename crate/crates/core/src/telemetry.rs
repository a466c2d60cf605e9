//! Decision events and the study metrics computed over them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::diff::{utc_day, Diff, SourceVariant, Timestamp, SECONDS_PER_DAY};
use crate::eligibility::ReasonCode;
use crate::funnel::{AuthorAction, PipelineDecision, PipelineOutcome, StageKind};
use crate::stats::{fisher_exact_two_sided, median, rate_ratio, StatsError, TwoByTwoTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTimes {
    pub published: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_started: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_ended: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landed: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverted: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Timestamp>,
}

impl EventTimes {
    /// Lifecycle order: published <= review_started <= review_ended <=
    /// closed, published <= landed <= reverted, landed <= pi.
    pub fn is_ordered(&self) -> bool {
        let le = |a: Option<Timestamp>, b: Option<Timestamp>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        };
        let p = Some(self.published);
        le(p, self.review_started)
            && le(self.review_started, self.review_ended)
            && le(p, self.review_ended)
            && le(self.review_ended, self.closed)
            && le(p, self.closed)
            && le(p, self.landed)
            && le(self.landed, self.reverted)
            && le(self.landed, self.pi)
            && (self.landed.is_some() || (self.reverted.is_none() && self.pi.is_none()))
    }
}

/// Who ended up reviewing a diff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewGroup {
    Radar,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub diff_id: String,
    pub org: String,
    pub source: SourceVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runbook: Option<String>,
    pub outcome: PipelineOutcome,
    /// Passed the first eligibility stage (ELIGIBILITY or VERIFICATION_G1).
    pub eligible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<StageKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<ReasonCode>,
    /// A RADAR landing cancelled by a human during the delay.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub overridden: bool,
    /// Author's choice after a deferred-review verification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_action: Option<AuthorAction>,
    pub times: EventTimes,
}

impl DecisionEvent {
    pub fn from_decision(diff: &Diff, decision: &PipelineDecision, published: Timestamp) -> Self {
        let eligible = decision.stages.first().is_some_and(|s| {
            s.passed && matches!(s.stage, StageKind::Eligibility | StageKind::VerificationG1)
        });
        Self {
            diff_id: diff.id.clone(),
            org: diff.org.clone(),
            source: diff.source.variant(),
            runbook: diff.source.runbook_name().map(str::to_string),
            outcome: decision.outcome,
            eligible,
            failed_stage: decision.failed_stage(),
            reasons: decision.all_reasons(),
            overridden: false,
            author_action: None,
            times: EventTimes {
                published,
                ..EventTimes::default()
            },
        }
    }

    /// Evaluated by the funnel (not skipped by a pause).
    pub fn evaluated(&self) -> bool {
        !self.reasons.contains(&ReasonCode::Paused)
    }

    /// RADAR approved: a scheduled bot landing or a human diff approved
    /// without review.
    pub fn approved(&self) -> bool {
        matches!(
            self.outcome,
            PipelineOutcome::RadarLandScheduled | PipelineOutcome::RadarApprovedNoReview
        )
    }

    pub fn verified(&self) -> bool {
        matches!(
            self.outcome,
            PipelineOutcome::RadarVerifiedDeferredReview | PipelineOutcome::RadarApprovedNoReview
        )
    }

    /// RADAR unless the outcome is a human route or the author of a verified
    /// diff chose to wait for a human.
    pub fn group(&self) -> ReviewGroup {
        let author_deferred = matches!(
            self.author_action,
            Some(AuthorAction::WaitForHuman | AuthorAction::ReturnToNeedsReview)
        );
        if self.outcome.is_radar() && !author_deferred {
            ReviewGroup::Radar
        } else {
            ReviewGroup::Human
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetricWindow {
    /// Trailing seven days ending at `anchor` (inclusive).
    L7 { anchor: Timestamp },
    All,
    /// `[start, end)`.
    Range { start: Timestamp, end: Timestamp },
}

impl MetricWindow {
    pub fn contains(&self, t: Timestamp) -> bool {
        match *self {
            MetricWindow::L7 { anchor } => t <= anchor && t > anchor - 7 * SECONDS_PER_DAY,
            MetricWindow::All => true,
            MetricWindow::Range { start, end } => start <= t && t < end,
        }
    }

    pub fn select<'a>(&self, events: &'a [DecisionEvent]) -> Vec<&'a DecisionEvent> {
        events
            .iter()
            .filter(|e| self.contains(e.times.published))
            .collect()
    }
}

fn fraction(num: usize, den: usize) -> Result<f64, StatsError> {
    if den == 0 {
        Err(StatsError::EmptyWindow)
    } else {
        Ok(num as f64 / den as f64)
    }
}

/// Approved / eligible, over eligible diffs published in `window`.
pub fn approve_rate(events: &[DecisionEvent], window: MetricWindow) -> Result<f64, StatsError> {
    let eligible: Vec<_> = window.select(events).into_iter().filter(|e| e.eligible).collect();
    fraction(eligible.iter().filter(|e| e.approved()).count(), eligible.len())
}

/// Verified / evaluated, over human diffs published in `window`.
pub fn verification_pass_rate(events: &[DecisionEvent], window: MetricWindow) -> Result<f64, StatsError> {
    let human: Vec<_> = window
        .select(events)
        .into_iter()
        .filter(|e| e.source == SourceVariant::Human && e.evaluated())
        .collect();
    fraction(human.iter().filter(|e| e.verified()).count(), human.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LatencyMetric {
    TimeToClose,
    ReviewWallTime,
}

impl LatencyMetric {
    pub fn of(self, e: &DecisionEvent) -> Option<Timestamp> {
        let t = &e.times;
        match self {
            LatencyMetric::TimeToClose => t.closed.map(|c| c - t.published),
            LatencyMetric::ReviewWallTime => t.review_ended.zip(t.review_started).map(|(b, a)| b - a),
        }
    }
}

/// Median latency over `events`; every event must carry the timestamps.
pub fn median_latency<'a>(
    events: impl IntoIterator<Item = &'a DecisionEvent>,
    metric: LatencyMetric,
) -> Result<f64, StatsError> {
    let values = events
        .into_iter()
        .map(|e| {
            metric
                .of(e)
                .map(|v| v as f64)
                .ok_or_else(|| StatsError::MissingTimestamp(e.diff_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    median(&values)
}

/// Adverse-outcome table over landed diffs: rows RADAR / human, columns
/// adverse / not.
pub fn outcome_table(events: &[&DecisionEvent], adverse: impl Fn(&DecisionEvent) -> bool) -> TwoByTwoTable {
    let mut t = TwoByTwoTable::new(0, 0, 0, 0);
    for e in events.iter().filter(|e| e.times.landed.is_some()) {
        match (e.group(), adverse(e)) {
            (ReviewGroup::Radar, true) => t.a += 1,
            (ReviewGroup::Radar, false) => t.b += 1,
            (ReviewGroup::Human, true) => t.c += 1,
            (ReviewGroup::Human, false) => t.d += 1,
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub table: TwoByTwoTable,
    pub rate_ratio: Option<f64>,
    pub fisher_p: Option<f64>,
}

impl GroupOutcome {
    fn new(table: TwoByTwoTable) -> Self {
        Self {
            table,
            rate_ratio: rate_ratio(&table).ok(),
            fisher_p: fisher_exact_two_sided(&table).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyComparison {
    pub radar_median: Option<f64>,
    pub human_median: Option<f64>,
    /// human / RADAR.
    pub ratio: Option<f64>,
    /// (RADAR − human) / human × 100.
    pub percent_change: Option<f64>,
}

impl LatencyComparison {
    fn new(events: &[&DecisionEvent], metric: LatencyMetric) -> Self {
        let med = |g: ReviewGroup| {
            let v: Vec<f64> = events
                .iter()
                .filter(|e| e.group() == g)
                .filter_map(|e| metric.of(e))
                .map(|v| v as f64)
                .collect();
            median(&v).ok()
        };
        let (r, h) = (med(ReviewGroup::Radar), med(ReviewGroup::Human));
        let (ratio, pct) = match (r, h) {
            (Some(r), Some(h)) => (
                (r > 0.0).then(|| h / r),
                (h > 0.0).then(|| (r - h) / h * 100.0),
            ),
            _ => (None, None),
        };
        Self {
            radar_median: r,
            human_median: h,
            ratio,
            percent_change: pct,
        }
    }
}

/// All study metrics over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub window: MetricWindow,
    pub total_diffs: usize,
    pub radar_reviewed: usize,
    pub radar_landed: usize,
    pub human_landed: usize,
    pub peak_daily_reviewed: usize,
    pub orgs_covered: usize,
    pub approve_rate: Option<f64>,
    pub verification_pass_rate: Option<f64>,
    pub radar_reverts: usize,
    pub radar_pis: usize,
    pub human_reverts: usize,
    pub human_pis: usize,
    pub reverts: GroupOutcome,
    pub pis: GroupOutcome,
    pub time_to_close: LatencyComparison,
    pub review_wall_time: LatencyComparison,
}

impl MetricSummary {
    pub fn compute(events: &[DecisionEvent], window: MetricWindow) -> Self {
        let sel = window.select(events);
        let reviewed: Vec<&&DecisionEvent> = sel.iter().filter(|e| e.evaluated()).collect();
        let mut per_day: BTreeMap<i64, usize> = BTreeMap::new();
        for e in &reviewed {
            *per_day.entry(utc_day(e.times.published)).or_default() += 1;
        }
        let orgs: BTreeSet<&str> = reviewed
            .iter()
            .filter(|e| e.outcome.is_radar())
            .map(|e| e.org.as_str())
            .collect();
        let landed = |g: ReviewGroup| sel.iter().filter(move |e| e.group() == g && e.times.landed.is_some());
        let reverts = outcome_table(&sel, |e| e.times.reverted.is_some());
        let pis = outcome_table(&sel, |e| e.times.pi.is_some());
        Self {
            window,
            total_diffs: sel.len(),
            radar_reviewed: reviewed.len(),
            radar_landed: landed(ReviewGroup::Radar).count(),
            human_landed: landed(ReviewGroup::Human).count(),
            peak_daily_reviewed: per_day.values().copied().max().unwrap_or(0),
            orgs_covered: orgs.len(),
            approve_rate: approve_rate(events, window).ok(),
            verification_pass_rate: verification_pass_rate(events, window).ok(),
            radar_reverts: reverts.a as usize,
            radar_pis: pis.a as usize,
            human_reverts: reverts.c as usize,
            human_pis: pis.c as usize,
            reverts: GroupOutcome::new(reverts),
            pis: GroupOutcome::new(pis),
            time_to_close: LatencyComparison::new(&sel, LatencyMetric::TimeToClose),
            review_wall_time: LatencyComparison::new(&sel, LatencyMetric::ReviewWallTime),
        }
    }

    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| match v {
            Some(v) => format!("{v:.digits$}"),
            None => "n/a".to_string(),
        };
        let pct = |v: Option<f64>| match v {
            Some(v) => format!("{:.2}%", v * 100.0),
            None => "n/a".to_string(),
        };
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k:<34}{v}\n"));
        line("window", format!("{:?}", self.window));
        line("diffs", self.total_diffs.to_string());
        line("RADAR reviewed diffs", self.radar_reviewed.to_string());
        line("RADAR landed diffs", self.radar_landed.to_string());
        line("human landed diffs", self.human_landed.to_string());
        line("peak daily reviewed", self.peak_daily_reviewed.to_string());
        line("orgs covered", self.orgs_covered.to_string());
        line("approve rate", pct(self.approve_rate));
        line("verification pass rate", pct(self.verification_pass_rate));
        line("reverts (RADAR / human)", format!("{} / {}", self.radar_reverts, self.human_reverts));
        line("revert rate ratio", opt(self.reverts.rate_ratio, 4));
        line("revert Fisher p", opt(self.reverts.fisher_p, 6));
        line("PIs (RADAR / human)", format!("{} / {}", self.radar_pis, self.human_pis));
        line("PI rate ratio", opt(self.pis.rate_ratio, 4));
        line("PI Fisher p", opt(self.pis.fisher_p, 6));
        line("median time to close RADAR (s)", opt(self.time_to_close.radar_median, 1));
        line("median time to close human (s)", opt(self.time_to_close.human_median, 1));
        line("time to close ratio (human/RADAR)", opt(self.time_to_close.ratio, 3));
        line("median review wall RADAR (s)", opt(self.review_wall_time.radar_median, 1));
        line("median review wall human (s)", opt(self.review_wall_time.human_median, 1));
        line("review wall ratio (human/RADAR)", opt(self.review_wall_time.ratio, 3));
        s
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let v = serde_json::to_value(self).expect("summary serializes");
        let mut rows = vec!["metric,value".to_string()];
        flatten("", &v, &mut rows);
        rows.join("\n") + "\n"
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        serde_json::Value::Null => out.push(format!("{prefix},")),
        serde_json::Value::String(s) => out.push(format!("{prefix},{s}")),
        other => out.push(format!("{prefix},{other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, outcome: PipelineOutcome, eligible: bool, published: Timestamp) -> DecisionEvent {
        DecisionEvent {
            diff_id: id.into(),
            org: "o".into(),
            source: SourceVariant::Human,
            runbook: None,
            outcome,
            eligible,
            failed_stage: None,
            reasons: vec![],
            overridden: false,
            author_action: None,
            times: EventTimes {
                published,
                ..EventTimes::default()
            },
        }
    }

    #[test]
    fn approve_rate_examples() {
        use PipelineOutcome::*;
        let mut events: Vec<_> = (0..3).map(|i| ev(&format!("a{i}"), RadarApprovedNoReview, true, 10)).collect();
        events.extend((0..2).map(|i| ev(&format!("r{i}"), RoutedToHuman, true, 10)));
        events.push(ev("x", RoutedToHuman, false, 10));
        assert_eq!(approve_rate(&events, MetricWindow::All).unwrap(), 0.6);
        let none: Vec<_> = (0..5).map(|i| ev(&format!("r{i}"), RoutedToHuman, true, 10)).collect();
        assert_eq!(approve_rate(&none, MetricWindow::All).unwrap(), 0.0);
        assert_eq!(approve_rate(&[], MetricWindow::All), Err(StatsError::EmptyWindow));
    }

    #[test]
    fn verification_pass_rate_examples() {
        use PipelineOutcome::*;
        let events = vec![
            ev("a", RadarVerifiedDeferredReview, true, 0),
            ev("b", RoutedToHuman, true, 0),
            ev("c", RoutedToHuman, false, 0),
            ev("d", RoutedToHuman, false, 0),
        ];
        assert_eq!(verification_pass_rate(&events, MetricWindow::All).unwrap(), 0.25);
        let failing: Vec<_> = (0..3).map(|i| ev(&i.to_string(), RoutedToHuman, false, 0)).collect();
        assert_eq!(verification_pass_rate(&failing, MetricWindow::All).unwrap(), 0.0);
    }

    #[test]
    fn l7_window_bounds() {
        let w = MetricWindow::L7 { anchor: 1_000_000 };
        assert!(w.contains(1_000_000));
        assert!(!w.contains(1_000_001));
        assert!(w.contains(1_000_000 - 7 * SECONDS_PER_DAY + 1));
        assert!(!w.contains(1_000_000 - 7 * SECONDS_PER_DAY));
    }

    #[test]
    fn latency_medians_and_missing_timestamps() {
        use PipelineOutcome::*;
        let mut events = Vec::new();
        for (i, close) in [10, 20, 30, 40].into_iter().enumerate() {
            let mut e = ev(&i.to_string(), RoutedToHuman, true, 100);
            e.times.closed = Some(100 + close);
            events.push(e);
        }
        assert_eq!(median_latency(&events, LatencyMetric::TimeToClose).unwrap(), 25.0);
        assert_eq!(
            median_latency(&events, LatencyMetric::ReviewWallTime),
            Err(StatsError::MissingTimestamp("0".into()))
        );
    }

    #[test]
    fn summary_tables_and_ratios() {
        use PipelineOutcome::*;
        let mut events = Vec::new();
        for i in 0..100 {
            let mut e = ev(&format!("r{i}"), RadarLandScheduled, true, 0);
            e.times.landed = Some(10);
            e.times.closed = Some(10);
            e.times.reverted = (i < 1).then_some(20);
            events.push(e);
            let mut h = ev(&format!("h{i}"), RoutedToHuman, true, 0);
            h.times.landed = Some(50);
            h.times.closed = Some(50);
            h.times.reverted = (i < 3).then_some(60);
            events.push(h);
        }
        let s = MetricSummary::compute(&events, MetricWindow::All);
        assert_eq!(s.reverts.table, TwoByTwoTable::new(1, 99, 3, 97));
        assert!((s.reverts.rate_ratio.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.time_to_close.ratio, Some(5.0));
        assert_eq!(s.radar_landed, 100);
        assert!(s.to_text().contains("revert rate ratio"));
        assert!(s.to_csv().starts_with("metric,value\n"));
    }

    #[test]
    fn event_time_order() {
        let mut t = EventTimes {
            published: 10,
            ..EventTimes::default()
        };
        assert!(t.is_ordered());
        t.reverted = Some(20);
        assert!(!t.is_ordered(), "revert without landing");
        t.landed = Some(15);
        assert!(t.is_ordered());
        t.closed = Some(5);
        assert!(!t.is_ordered());
    }
}
