//! Diff Risk Score: features, a linear scorer, rolling empirical-percentile
//! calibration and PX gating.
//!
//! The scorer itself is a stand-in; what the rest of the funnel relies on is
//! the percentile contract. A diff's rank is its mid-rank position within the
//! most recent `capacity` raw scores, and a `PX` gate admits ranks `<= X/100`.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{diff_size, Diff, SECONDS_PER_DAY};
use crate::policy::{violation, ConfigError, PxThreshold};

pub const FEATURE_COUNT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrsConfig {
    /// One weight per feature, in [`FeatureVector`] field order.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub min_calibration: usize,
    pub window_capacity: usize,
    /// Substrings marking a path as configuration.
    pub config_path_patterns: Vec<String>,
}

impl Default for DrsConfig {
    fn default() -> Self {
        Self {
            // lines, files, max file lines, top dirs, author history, bot, config, hour
            weights: vec![0.01, 0.15, 0.004, 0.35, -0.004, -0.25, 1.5, 0.0113],
            bias: 0.0,
            min_calibration: 100,
            window_capacity: 5000,
            config_path_patterns: [
                "config/", ".cfg", ".conf", ".ini", ".yaml", ".yml", ".toml",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl DrsConfig {
    pub(crate) fn validate(&self) -> Result<(), ConfigError> {
        if self.weights.len() != FEATURE_COUNT {
            return Err(violation(
                "drs.weights",
                format!("expected {FEATURE_COUNT} weights, got {}", self.weights.len()),
            ));
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(violation(format!("drs.weights[{i}]"), "not finite"));
        }
        if !self.bias.is_finite() {
            return Err(violation("drs.bias", "not finite"));
        }
        if self.min_calibration == 0 {
            return Err(violation("drs.min_calibration", "must be positive"));
        }
        if self.window_capacity < self.min_calibration {
            return Err(violation(
                "drs.window_capacity",
                "must be at least min_calibration",
            ));
        }
        if let Some(i) = self.config_path_patterns.iter().position(String::is_empty) {
            return Err(violation(format!("drs.config_path_patterns[{i}]"), "empty entry"));
        }
        Ok(())
    }

    pub fn weight_vector(&self) -> WeightVector {
        WeightVector {
            weights: self.weights.clone(),
            bias: self.bias,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub total_lines_changed: u64,
    pub file_count: u64,
    pub max_file_lines: u64,
    pub distinct_top_level_dirs: u64,
    pub author_diffs_past_year: u64,
    pub author_is_bot: u8,
    pub touches_config_path: u8,
    pub hour_of_day: u8,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.total_lines_changed as f64,
            self.file_count as f64,
            self.max_file_lines as f64,
            self.distinct_top_level_dirs as f64,
            self.author_diffs_past_year as f64,
            f64::from(self.author_is_bot),
            f64::from(self.touches_config_path),
            f64::from(self.hour_of_day),
        ]
    }
}

fn top_level_dir(path: &str) -> &str {
    match path.split_once('/') {
        Some((head, _)) => head,
        None => "",
    }
}

pub fn extract_features(diff: &Diff, config_patterns: &[String]) -> FeatureVector {
    let paths: BTreeSet<&str> = diff.changes.iter().map(|c| c.path.as_str()).collect();
    let dirs: BTreeSet<&str> = paths.iter().map(|p| top_level_dir(p)).collect();
    let touches_config = paths
        .iter()
        .any(|p| config_patterns.iter().any(|pat| p.contains(pat.as_str())));
    FeatureVector {
        total_lines_changed: diff_size(diff),
        file_count: paths.len() as u64,
        max_file_lines: diff.changes.iter().map(|c| c.size()).max().unwrap_or(0),
        distinct_top_level_dirs: dirs.len() as u64,
        author_diffs_past_year: u64::from(diff.author.diffs_committed_past_year),
        author_is_bot: u8::from(diff.is_bot()),
        touches_config_path: u8::from(touches_config),
        hour_of_day: (diff.created_at.rem_euclid(SECONDS_PER_DAY) / 3600) as u8,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Unbounded risk value; higher is riskier. Always finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RawScore(f64);

impl RawScore {
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RiskError {
    #[error("expected {expected} weights, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("score is not finite")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("flag rate must be in (0, 1]")]
    BadFlagRate,
}

/// `bias + dot(weights, features)` with features in declared field order.
pub fn score(fv: &FeatureVector, weights: &WeightVector) -> Result<RawScore, RiskError> {
    if weights.weights.len() != FEATURE_COUNT {
        return Err(RiskError::DimensionMismatch {
            expected: FEATURE_COUNT,
            got: weights.weights.len(),
        });
    }
    let dot: f64 = fv
        .to_array()
        .iter()
        .zip(&weights.weights)
        .map(|(x, w)| x * w)
        .sum();
    RawScore::new(weights.bias + dot).ok_or(RiskError::NonFinite)
}

/// Fraction of the calibration population with lower risk, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PercentileScore(f64);

impl PercentileScore {
    pub fn new(rank: f64) -> Option<Self> {
        (0.0..=1.0).contains(&rank).then_some(Self(rank))
    }

    pub fn rank(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "rank")]
pub enum Percentile {
    Rank(PercentileScore),
    ColdStart,
}

/// The most recent `capacity` raw scores, kept both in arrival order (for
/// eviction) and sorted (for rank queries).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationWindow {
    capacity: usize,
    arrivals: VecDeque<f64>,
    sorted: Vec<f64>,
}

impl CalibrationWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "calibration window capacity must be positive");
        Self {
            capacity,
            arrivals: VecDeque::with_capacity(capacity),
            sorted: Vec::with_capacity(capacity),
        }
    }

    pub fn with_scores(capacity: usize, scores: impl IntoIterator<Item = RawScore>) -> Self {
        let mut w = Self::new(capacity);
        for s in scores {
            w.push(s);
        }
        w
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Scores in arrival order, oldest first.
    pub fn scores(&self) -> impl Iterator<Item = RawScore> + '_ {
        self.arrivals.iter().map(|&v| RawScore(v))
    }

    pub fn push(&mut self, raw: RawScore) {
        if self.arrivals.len() == self.capacity {
            let old = self.arrivals.pop_front().expect("window is full");
            let at = self.sorted.partition_point(|&v| v < old);
            self.sorted.remove(at);
        }
        self.arrivals.push_back(raw.0);
        let at = self.sorted.partition_point(|&v| v <= raw.0);
        self.sorted.insert(at, raw.0);
    }

    /// Returns (strictly lower, equal) counts for `raw`.
    fn counts(&self, raw: f64) -> (usize, usize) {
        let lower = self.sorted.partition_point(|&v| v < raw);
        let upto = self.sorted.partition_point(|&v| v <= raw);
        (lower, upto - lower)
    }
}

/// Mid-rank percentile of `raw` within `window`, or `ColdStart` when the
/// window holds fewer than `min_calibration` scores.
pub fn percentile(raw: RawScore, window: &CalibrationWindow, min_calibration: usize) -> Percentile {
    let n = window.len();
    if n < min_calibration.max(1) {
        return Percentile::ColdStart;
    }
    let (lower, equal) = window.counts(raw.0);
    // (lower + equal/2) / n, as one correctly rounded division.
    let rank = (2 * lower + equal) as f64 / (2 * n) as f64;
    Percentile::Rank(PercentileScore(rank))
}

/// True iff `p` is within the lowest-risk `t` percent. `P0` admits nothing.
pub fn passes_threshold(p: PercentileScore, t: PxThreshold) -> bool {
    t.percent() > 0 && p.0 <= t.fraction()
}

/// Recall of incident-causing diffs when the top `ceil(flag_rate * n)` raw
/// scores are flagged. Ties keep input order. With no incidents, returns 1.
pub fn recall_at_flag_rate(labeled: &[(RawScore, bool)], flag_rate: f64) -> Result<f64, RiskError> {
    if labeled.is_empty() {
        return Err(RiskError::EmptyInput);
    }
    if !(flag_rate > 0.0 && flag_rate <= 1.0) {
        return Err(RiskError::BadFlagRate);
    }
    let incidents = labeled.iter().filter(|(_, bad)| *bad).count();
    if incidents == 0 {
        return Ok(1.0);
    }
    let n = labeled.len();
    let k = ((flag_rate * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // sort_by is stable: equal scores keep input order.
    order.sort_by(|&a, &b| labeled[b].0 .0.total_cmp(&labeled[a].0 .0));
    let caught = order[..k].iter().filter(|&&i| labeled[i].1).count();
    Ok(caught as f64 / incidents as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrsAssessment {
    pub raw: RawScore,
    pub percentile: Percentile,
}

/// Scorer plus the calibration window it owns. Reads work on the current
/// window; [`RiskScorer::observe`] is the only writer.
#[derive(Debug)]
pub struct RiskScorer {
    weights: WeightVector,
    patterns: Vec<String>,
    min_calibration: usize,
    window: Mutex<CalibrationWindow>,
}

impl RiskScorer {
    pub fn new(config: &DrsConfig) -> Self {
        Self::with_window(config, CalibrationWindow::new(config.window_capacity))
    }

    pub fn with_window(config: &DrsConfig, window: CalibrationWindow) -> Self {
        Self {
            weights: config.weight_vector(),
            patterns: config.config_path_patterns.clone(),
            min_calibration: config.min_calibration,
            window: Mutex::new(window),
        }
    }

    pub fn features(&self, diff: &Diff) -> FeatureVector {
        extract_features(diff, &self.patterns)
    }

    pub fn raw_score(&self, diff: &Diff) -> RawScore {
        score(&self.features(diff), &self.weights)
            .expect("weights validated at policy load and features are finite")
    }

    pub fn assess(&self, diff: &Diff) -> DrsAssessment {
        let raw = self.raw_score(diff);
        let window = self.window.lock().unwrap_or_else(|e| e.into_inner());
        DrsAssessment {
            raw,
            percentile: percentile(raw, &window, self.min_calibration),
        }
    }

    /// Adds a score to the calibration population. Call after gating.
    pub fn observe(&self, raw: RawScore) {
        self.window
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(raw);
    }

    pub fn window_snapshot(&self) -> CalibrationWindow {
        self.window.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::fixtures::{change, diff};
    use crate::diff::SourceKind;
    use proptest::prelude::*;

    fn rs(v: f64) -> RawScore {
        RawScore::new(v).unwrap()
    }

    fn window(values: &[f64]) -> CalibrationWindow {
        CalibrationWindow::with_scores(values.len().max(1), values.iter().map(|&v| rs(v)))
    }

    fn rank(p: Percentile) -> f64 {
        match p {
            Percentile::Rank(r) => r.rank(),
            Percentile::ColdStart => panic!("cold start"),
        }
    }

    #[test]
    fn features_count_lines_files_dirs() {
        let d = diff("d", SourceKind::Human, vec![change("a/x.c", 3, 2), change("b/y.c", 1, 0)]);
        let fv = extract_features(&d, &[]);
        assert_eq!(fv.total_lines_changed, 6);
        assert_eq!(fv.file_count, 2);
        assert_eq!(fv.max_file_lines, 5);
        assert_eq!(fv.distinct_top_level_dirs, 2);
        assert_eq!(fv.author_is_bot, 0);

        let bot = SourceKind::AiCodemod {
            codemod_id: "c".into(),
        };
        let d = diff("d", bot, vec![change("config/app.yaml", 1, 0)]);
        let fv = extract_features(&d, &DrsConfig::default().config_path_patterns);
        assert_eq!(fv.author_is_bot, 1);
        assert_eq!(fv.touches_config_path, 1);
    }

    #[test]
    fn hour_of_day_is_utc() {
        let mut d = diff("d", SourceKind::Human, vec![change("a", 1, 0)]);
        d.created_at = 3 * 86_400 + 13 * 3600 + 59;
        assert_eq!(extract_features(&d, &[]).hour_of_day, 13);
    }

    #[test]
    fn score_zero_and_unit() {
        let fv = FeatureVector {
            total_lines_changed: 6,
            file_count: 2,
            max_file_lines: 5,
            distinct_top_level_dirs: 2,
            author_diffs_past_year: 40,
            author_is_bot: 0,
            touches_config_path: 1,
            hour_of_day: 9,
        };
        let zero = WeightVector {
            weights: vec![0.0; 8],
            bias: 0.0,
        };
        assert_eq!(score(&fv, &zero).unwrap().value(), 0.0);
        let mut unit = zero.clone();
        unit.weights[0] = 1.0;
        assert_eq!(score(&fv, &unit).unwrap().value(), 6.0);
        let short = WeightVector {
            weights: vec![1.0; 7],
            bias: 0.0,
        };
        assert_eq!(
            score(&fv, &short).unwrap_err(),
            RiskError::DimensionMismatch {
                expected: 8,
                got: 7
            }
        );
    }

    proptest! {
        #[test]
        fn score_matches_straight_dot_product(
            counts in proptest::collection::vec(0u64..10_000, 5),
            flags in (0u8..2, 0u8..2, 0u8..24),
            w in proptest::collection::vec(-3.0f64..3.0, 8),
            bias in -10.0f64..10.0,
        ) {
            let fv = FeatureVector {
                total_lines_changed: counts[0],
                file_count: counts[1],
                max_file_lines: counts[2],
                distinct_top_level_dirs: counts[3],
                author_diffs_past_year: counts[4],
                author_is_bot: flags.0,
                touches_config_path: flags.1,
                hour_of_day: flags.2,
            };
            let got = score(&fv, &WeightVector { weights: w.clone(), bias }).unwrap().value();
            // Independent re-computation with an explicit accumulator.
            let xs = [
                counts[0] as f64, counts[1] as f64, counts[2] as f64, counts[3] as f64,
                counts[4] as f64, flags.0 as f64, flags.1 as f64, flags.2 as f64,
            ];
            let mut acc = bias;
            for i in 0..8 {
                acc += w[i] * xs[i];
            }
            prop_assert!((got - acc).abs() <= 1e-12 * acc.abs().max(1.0));
        }
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(rank(percentile(rs(2.5), &window(&[1.0, 2.0, 3.0, 4.0]), 1)), 0.5);
        assert_eq!(rank(percentile(rs(1.0), &window(&[1.0, 1.0, 1.0, 1.0]), 1)), 0.5);
        assert_eq!(
            percentile(rs(1.0), &window(&[1.0, 2.0, 3.0]), 100),
            Percentile::ColdStart
        );
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = CalibrationWindow::new(3);
        for v in [5.0, 1.0, 2.0, 3.0] {
            w.push(rs(v));
        }
        assert_eq!(w.len(), 3);
        assert_eq!(w.scores().map(RawScore::value).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank(percentile(rs(4.0), &w, 1)), 1.0);
    }

    #[test]
    fn threshold_examples() {
        let p = |r| PercentileScore::new(r).unwrap();
        assert!(passes_threshold(p(0.04), PxThreshold::p(5)));
        assert!(!passes_threshold(p(0.30), PxThreshold::p(20)));
        assert!(passes_threshold(p(0.50), PxThreshold::p(50)));
        assert!(!passes_threshold(p(0.0), PxThreshold::p(0)));
        assert!(passes_threshold(p(1.0), PxThreshold::p(100)));
    }

    #[test]
    fn recall_examples() {
        let labeled = |bad: &[f64]| -> Vec<(RawScore, bool)> {
            (1..=10)
                .map(|i| (rs(i as f64), bad.contains(&(i as f64))))
                .collect()
        };
        assert_eq!(recall_at_flag_rate(&labeled(&[9.0, 10.0]), 0.2).unwrap(), 1.0);
        assert_eq!(recall_at_flag_rate(&labeled(&[1.0, 2.0]), 0.2).unwrap(), 0.0);
        assert_eq!(recall_at_flag_rate(&labeled(&[]), 0.2).unwrap(), 1.0);
        assert_eq!(recall_at_flag_rate(&[], 0.2).unwrap_err(), RiskError::EmptyInput);
        assert_eq!(
            recall_at_flag_rate(&labeled(&[1.0]), 0.0).unwrap_err(),
            RiskError::BadFlagRate
        );
    }

    #[test]
    fn recall_ties_follow_input_order() {
        let l = vec![(rs(1.0), false), (rs(1.0), true)];
        assert_eq!(recall_at_flag_rate(&l, 0.5).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn percentile_monotone(
            values in proptest::collection::vec(-100i32..100, 1..200),
            a in -120i32..120,
            b in -120i32..120,
        ) {
            let w = window(&values.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r1 = rank(percentile(rs(f64::from(lo)), &w, 1));
            let r2 = rank(percentile(rs(f64::from(hi)), &w, 1));
            prop_assert!(r1 <= r2);
        }

        #[test]
        fn self_ranks_near_uniform(values in proptest::collection::vec(-1000i32..1000, 1..300)) {
            let w = window(&values.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            let n = values.len();
            let mut ranks: Vec<f64> = values
                .iter()
                .map(|&v| rank(percentile(rs(f64::from(v)), &w, 1)))
                .collect();
            ranks.sort_by(f64::total_cmp);
            // KS distance between the rank sample and Uniform(0,1), checked at
            // every jump point. Mid-ranks of tied blocks sit in the block centre.
            let mut ks: f64 = 0.0;
            for (i, r) in ranks.iter().enumerate() {
                let below = i as f64 / n as f64;
                let upto = (i + 1) as f64 / n as f64;
                ks = ks.max((r - below).abs()).max((upto - r).abs());
            }
            // Ties widen the gap to half the tie block on each side.
            let max_tie = {
                let mut sorted = values.clone();
                sorted.sort();
                sorted.chunk_by(|a, b| a == b).map(<[i32]>::len).max().unwrap()
            };
            let bound = (max_tie as f64 / 2.0).max(1.0) / n as f64 + 1e-12;
            prop_assert!(ks <= bound, "ks {} > {}", ks, bound);
        }

        #[test]
        fn recall_non_decreasing(
            scores in proptest::collection::vec((0i32..50, any::<bool>()), 1..60),
            f1 in 0.01f64..1.0,
            f2 in 0.01f64..1.0,
        ) {
            let l: Vec<_> = scores.iter().map(|&(s, b)| (rs(f64::from(s)), b)).collect();
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(recall_at_flag_rate(&l, lo).unwrap() <= recall_at_flag_rate(&l, hi).unwrap());
        }
    }
}
