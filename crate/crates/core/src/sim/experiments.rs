use serde::Serialize;

use super::engine::{run_stream, RunResult, Terminal};
use super::generate::generate_stream_with;
use super::{ScenarioConfig, SimError};
use crate::eligibility::ReasonCode;
use crate::exec::Exec;
use crate::funnel::PauseControl;
use crate::policy::{PolicySet, PxThreshold};
use crate::stats::{did_estimate, fisher_exact_two_sided, DidGroup, DidPeriod, DidResult, DidSample, TwoByTwoTable};
use crate::telemetry::{DecisionEvent, GroupOutcome, LatencyComparison, LatencyMetric, MetricWindow, ReviewGroup};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: PxThreshold,
    pub approve_rate: Option<f64>,
    pub verification_pass_rate: Option<f64>,
    pub radar_landed: usize,
    pub radar_reverts: usize,
    pub radar_pis: usize,
    pub revert_rate_ratio: Option<f64>,
    pub pi_rate_ratio: Option<f64>,
    /// Diffs with a `DRS_ABOVE_THRESHOLD` reason at any stage.
    pub drs_failures: usize,
    #[serde(skip)]
    pub radar_landed_ids: Vec<String>,
}

impl SweepRow {
    fn from_run(threshold: PxThreshold, r: &RunResult) -> Self {
        let s = &r.summary;
        Self {
            threshold,
            approve_rate: s.approve_rate,
            verification_pass_rate: s.verification_pass_rate,
            radar_landed: s.radar_landed,
            radar_reverts: s.radar_reverts,
            radar_pis: s.radar_pis,
            revert_rate_ratio: s.reverts.rate_ratio,
            pi_rate_ratio: s.pis.rate_ratio,
            drs_failures: r
                .events
                .iter()
                .filter(|e| e.reasons.contains(&ReasonCode::DrsAboveThreshold))
                .count(),
            radar_landed_ids: r.radar_landed_ids().into_iter().map(str::to_string).collect(),
        }
    }
}

/// Simulates the same stream once per threshold, with every DRS threshold
/// in `policy` set to it. Rows come back in input order.
pub fn threshold_sweep(
    cfg: &ScenarioConfig,
    policy: &PolicySet,
    thresholds: &[PxThreshold],
    exec: Exec,
) -> Result<Vec<SweepRow>, SimError> {
    if thresholds.is_empty() {
        return Err(SimError::TooFewThresholds);
    }
    let stream = generate_stream_with(cfg, exec)?;
    let pause = PauseControl::default();
    exec.map(thresholds, |&t| {
        let p = policy.clone().with_all_drs_thresholds(t);
        run_stream(cfg, &p, &stream, &pause).map(|r| SweepRow::from_run(t, &r))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub time_to_close: LatencyComparison,
    pub review_wall_time: LatencyComparison,
    pub reverts: GroupOutcome,
    pub pis: GroupOutcome,
    /// Time-to-close difference-in-differences across RADAR activation,
    /// treated sources against the rest. Absent without an activation time
    /// or when a cell is empty.
    pub did: Option<DidResult>,
}

/// RADAR-reviewed against human-reviewed diffs in one run.
pub fn compare_radar_vs_human(r: &RunResult) -> Result<Comparison, SimError> {
    for g in [ReviewGroup::Radar, ReviewGroup::Human] {
        if !r.events.iter().any(|e| e.group() == g && e.times.closed.is_some()) {
            return Err(SimError::MissingGroup(g));
        }
    }
    let s = &r.summary;
    let did = r.activation_time.and_then(|activation| {
        let samples: Vec<DidSample> = r
            .events
            .iter()
            .filter_map(|e| {
                let value = LatencyMetric::TimeToClose.of(e)? as f64;
                Some(DidSample {
                    group: if r.treated_sources.contains(&e.source) {
                        DidGroup::Treated
                    } else {
                        DidGroup::Control
                    },
                    period: if e.times.published < activation {
                        DidPeriod::Before
                    } else {
                        DidPeriod::After
                    },
                    value,
                })
            })
            .collect();
        did_estimate(&samples).ok()
    });
    debug_assert_eq!(s.window, MetricWindow::All);
    Ok(Comparison {
        time_to_close: s.time_to_close.clone(),
        review_wall_time: s.review_wall_time.clone(),
        reverts: s.reverts.clone(),
        pis: s.pis.clone(),
        did,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyCheck {
    pub radar_landed: u64,
    pub radar_revert_rate: f64,
    pub radar_pi_rate: f64,
    pub ungated_revert_rate: f64,
    pub ungated_pi_rate: f64,
    /// Rows: RADAR-landed / every diff landed ungated.
    pub revert_table: TwoByTwoTable,
    pub pi_table: TwoByTwoTable,
    pub revert_fisher_p: Option<f64>,
    pub pi_fisher_p: Option<f64>,
}

impl SafetyCheck {
    /// RADAR-landed adverse rates do not exceed the ungated rates.
    pub fn holds(&self) -> bool {
        self.radar_revert_rate <= self.ungated_revert_rate && self.radar_pi_rate <= self.ungated_pi_rate
    }
}

/// Adverse rates of RADAR-landed diffs against the counterfactual where
/// every diff in the stream lands without gating.
pub fn safety_check(r: &RunResult) -> Result<SafetyCheck, SimError> {
    let landed: Vec<&DecisionEvent> = r
        .events
        .iter()
        .zip(&r.terminals)
        .filter(|(_, t)| **t == Terminal::RadarLanded)
        .map(|(e, _)| e)
        .collect();
    if landed.is_empty() {
        return Err(SimError::MissingGroup(ReviewGroup::Radar));
    }
    let n = landed.len() as u64;
    let reverted = landed.iter().filter(|e| e.times.reverted.is_some()).count() as u64;
    let pis = landed.iter().filter(|e| e.times.pi.is_some()).count() as u64;
    let cf = r.counterfactual;
    let revert_table = TwoByTwoTable::new(reverted, n - reverted, cf.would_revert, cf.diffs - cf.would_revert);
    let pi_table = TwoByTwoTable::new(pis, n - pis, cf.would_pi, cf.diffs - cf.would_pi);
    Ok(SafetyCheck {
        radar_landed: n,
        radar_revert_rate: reverted as f64 / n as f64,
        radar_pi_rate: pis as f64 / n as f64,
        ungated_revert_rate: cf.would_revert as f64 / cf.diffs as f64,
        ungated_pi_rate: cf.would_pi as f64 / cf.diffs as f64,
        revert_fisher_p: fisher_exact_two_sided(&revert_table).ok(),
        pi_fisher_p: fisher_exact_two_sided(&pi_table).ok(),
        revert_table,
        pi_table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;

    fn cfg(n: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_diffs: n,
            calibration_warmup: 500,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn sweep_modes_agree_and_keep_order() {
        let ts = [PxThreshold::new(50).unwrap(), PxThreshold::new(5).unwrap()];
        let policy = PolicySet::default();
        let par = threshold_sweep(&cfg(400), &policy, &ts, Exec::default()).unwrap();
        let seq = threshold_sweep(&cfg(400), &policy, &ts, Exec::Sequential).unwrap();
        assert_eq!(par, seq);
        assert_eq!(par[0].threshold, ts[0]);
        assert!(matches!(
            threshold_sweep(&cfg(10), &policy, &[], Exec::Sequential),
            Err(SimError::TooFewThresholds)
        ));
    }

    #[test]
    fn p100_has_no_drs_failures() {
        let rows = threshold_sweep(&cfg(400), &PolicySet::default(), &[PxThreshold::new(100).unwrap()], Exec::default())
            .unwrap();
        assert_eq!(rows[0].drs_failures, 0);
    }

    #[test]
    fn comparison_needs_both_groups() {
        let r = simulate(&cfg(600), &PolicySet::default()).unwrap();
        let c = compare_radar_vs_human(&r).unwrap();
        assert!(c.time_to_close.ratio.is_some());
        assert!(c.did.is_none());

        let mut only_human = r.clone();
        only_human.events.retain(|e| e.group() == ReviewGroup::Human);
        assert!(matches!(
            compare_radar_vs_human(&only_human),
            Err(SimError::MissingGroup(ReviewGroup::Radar))
        ));
    }

    #[test]
    fn safety_tables_are_consistent() {
        let r = simulate(&cfg(800), &PolicySet::default()).unwrap();
        let s = safety_check(&r).unwrap();
        assert_eq!(s.revert_table.a + s.revert_table.b, s.radar_landed);
        assert_eq!(s.revert_table.c + s.revert_table.d, 800);
    }
}
