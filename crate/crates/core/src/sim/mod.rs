//! Synthetic diff streams and a discrete-event simulation of the funnel.
//!
//! Every diff draws from its own ChaCha8 stream (`seed`, stream = diff
//! index), so a diff's content and ground truth do not depend on thread
//! count, on other diffs, or on the policy being simulated.

mod engine;
mod experiments;
mod generate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{SourceVariant, Timestamp};
use crate::eligibility::LedgerError;
use crate::policy::{violation, ConfigError};
use crate::telemetry::ReviewGroup;

pub use engine::{run_stream, simulate, Counterfactual, RunResult, Terminal};
pub use experiments::{
    compare_radar_vs_human, safety_check, threshold_sweep, Comparison, SafetyCheck, SweepRow,
};
pub use generate::{
    generate_stream, generate_stream_with, DefectClass, GroundTruth, SyntheticDiff, SyntheticStream,
    WARMUP_STREAM_BASE,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("no {0:?} diffs to compare")]
    MissingGroup(ReviewGroup),
    #[error("a sweep needs at least one threshold")]
    TooFewThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceMix {
    pub human: f64,
    pub deterministic_codemod: f64,
    pub ai_codemod: f64,
    pub racer_runbook: f64,
}

impl Default for SourceMix {
    fn default() -> Self {
        Self {
            human: 0.55,
            deterministic_codemod: 0.10,
            ai_codemod: 0.15,
            racer_runbook: 0.20,
        }
    }
}

impl SourceMix {
    pub fn weights(&self) -> [(SourceVariant, f64); 4] {
        [
            (SourceVariant::Human, self.human),
            (SourceVariant::DeterministicCodemod, self.deterministic_codemod),
            (SourceVariant::AiCodemod, self.ai_codemod),
            (SourceVariant::RacerRunbook, self.racer_runbook),
        ]
    }

    pub fn get(&self, v: SourceVariant) -> f64 {
        self.weights()
            .into_iter()
            .find(|(s, _)| *s == v)
            .map_or(0.0, |(_, w)| w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffShape {
    /// Log-normal total lines: ln-space mean and sd.
    pub size_log_mean: f64,
    pub size_log_sigma: f64,
    /// Files beyond the first, exponential with this mean.
    pub mean_extra_files: f64,
    pub config_touch_prob: f64,
    /// Chance a file's change is of a recognizably safe kind.
    pub safe_change_prob: f64,
}

impl Default for DiffShape {
    fn default() -> Self {
        Self {
            size_log_mean: 3.4,
            size_log_sigma: 1.1,
            mean_extra_files: 1.2,
            config_touch_prob: 0.12,
            safe_change_prob: 0.85,
        }
    }
}

/// Human author population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthorMix {
    pub intern_prob: f64,
    pub other_role_prob: f64,
    pub no_oncall_prob: f64,
    /// Log-normal diffs committed in the past year.
    pub history_log_mean: f64,
    pub history_log_sigma: f64,
}

impl Default for AuthorMix {
    fn default() -> Self {
        Self {
            intern_prob: 0.08,
            other_role_prob: 0.08,
            no_oncall_prob: 0.05,
            history_log_mean: 4.4,
            history_log_sigma: 1.0,
        }
    }
}

/// Per-diff probabilities of state and scope flags that block verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateNoise {
    pub wip: f64,
    pub rfc: f64,
    pub previously_rejected: f64,
    pub stale_version: f64,
    pub ci_failing: f64,
    pub code_freeze: f64,
    pub open_source: f64,
    pub sox: f64,
    pub additional_review: f64,
}

impl Default for StateNoise {
    fn default() -> Self {
        Self {
            wip: 0.04,
            rfc: 0.01,
            previously_rejected: 0.03,
            stale_version: 0.02,
            ci_failing: 0.05,
            code_freeze: 0.01,
            open_source: 0.02,
            sox: 0.02,
            additional_review: 0.02,
        }
    }
}

/// `P(defect) = logistic(alpha + beta * size_z + gamma * touches_config +
/// bot_offset * is_bot)`, where `size_z` is the diff's standardized log size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentRisk {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub bot_offset: f64,
    pub revert_given_defect: f64,
    pub pi_given_defect: f64,
}

impl Default for LatentRisk {
    fn default() -> Self {
        Self {
            alpha: -3.0,
            beta: 1.2,
            gamma: 1.0,
            bot_offset: -2.0,
            revert_given_defect: 0.5,
            pi_given_defect: 0.1,
        }
    }
}

/// One value per defect class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerClass {
    pub logic: f64,
    pub performance: f64,
    pub security: f64,
}

impl PerClass {
    fn fields(&self) -> [(&'static str, f64); 3] {
        [
            ("logic", self.logic),
            ("performance", self.performance),
            ("security", self.security),
        ]
    }
}

impl Default for PerClass {
    fn default() -> Self {
        Self {
            logic: 1.0 / 3.0,
            performance: 1.0 / 3.0,
            security: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanReview {
    /// Log-normal review duration in seconds, once a reviewer picks it up.
    pub latency_mu: f64,
    pub latency_sigma: f64,
    /// Reviews started per day; 0 means no reviewer ever picks one up.
    pub capacity_per_day: f64,
    /// Chance a reviewer catches a defective diff and rejects it.
    pub catch_prob: f64,
    /// Chance a reviewer rejects a clean diff.
    pub reject_prob: f64,
}

impl Default for HumanReview {
    fn default() -> Self {
        Self {
            latency_mu: 9.0,
            latency_sigma: 1.0,
            capacity_per_day: 600.0,
            catch_prob: 0.5,
            reject_prob: 0.03,
        }
    }
}

/// What the author of a verified human diff does next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthorActionMix {
    pub ship: f64,
    pub wait_for_human: f64,
    pub return_to_needs_review: f64,
}

impl Default for AuthorActionMix {
    fn default() -> Self {
        Self {
            ship: 0.85,
            wait_for_human: 0.10,
            return_to_needs_review: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_diffs: usize,
    pub start_time: Timestamp,
    pub arrival_rate_per_day: f64,
    pub orgs: Vec<String>,
    pub runbooks: Vec<String>,
    pub deterministic_codemods: Vec<String>,
    pub ai_codemods: Vec<String>,
    /// Seconds the review agent spends on a diff.
    pub radar_review_seconds: i64,
    /// Extra diffs, on separate streams, scored into the calibration window
    /// before the run starts.
    pub calibration_warmup: usize,
    /// Clean landings seeded into each runbook's ledger over the 30 days
    /// before `start_time`.
    pub runbook_history_landed: u32,
    /// Fraction of the arrival span during which RADAR is off. Diffs
    /// published before the activation time go straight to humans.
    pub activation_fraction: f64,
    /// Sources treated by the activation, for the difference-in-differences.
    pub treated_sources: Vec<SourceVariant>,
    /// Chance a human cancels a scheduled RADAR landing during its delay.
    pub override_prob: f64,
    pub revert_delay_mean_hours: f64,
    pub pi_delay_mean_hours: f64,
    pub source_mix: SourceMix,
    pub diff_shape: DiffShape,
    pub author: AuthorMix,
    pub state_noise: StateNoise,
    pub latent_risk: LatentRisk,
    pub risk_classes: PerClass,
    /// Chance the review agent flags a defect, by defect class.
    pub agent_catch: PerClass,
    pub human_review: HumanReview,
    pub author_action: AuthorActionMix,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_diffs: 2000,
            start_time: 1_700_000_000,
            arrival_rate_per_day: 500.0,
            orgs: vec!["org_a".into(), "org_b".into(), "org_c".into()],
            runbooks: vec!["rb_dependency_bump".into(), "rb_flag_cleanup".into()],
            deterministic_codemods: vec!["cm_format".into()],
            ai_codemods: vec!["ai_migrate".into()],
            radar_review_seconds: 300,
            calibration_warmup: 1000,
            runbook_history_landed: 100,
            activation_fraction: 0.0,
            treated_sources: vec![SourceVariant::AiCodemod, SourceVariant::RacerRunbook],
            override_prob: 0.02,
            revert_delay_mean_hours: 48.0,
            pi_delay_mean_hours: 24.0,
            source_mix: SourceMix::default(),
            diff_shape: DiffShape::default(),
            author: AuthorMix::default(),
            state_noise: StateNoise::default(),
            latent_risk: LatentRisk::default(),
            risk_classes: PerClass {
                logic: 0.6,
                performance: 0.2,
                security: 0.2,
            },
            agent_catch: PerClass {
                logic: 0.6,
                performance: 0.5,
                security: 0.9,
            },
            human_review: HumanReview::default(),
            author_action: AuthorActionMix::default(),
        }
    }
}

fn prob(key: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(violation(key, format!("probability {v} outside [0, 1]")))
    }
}

fn finite(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(violation(key, "not finite"))
    }
}

fn sums_to_one(key: &str, values: &[(&str, f64)]) -> Result<(), ConfigError> {
    for (name, v) in values {
        prob(&format!("{key}.{name}"), *v)?;
    }
    let total: f64 = values.iter().map(|(_, v)| v).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(violation(key, format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mix = &self.source_mix;
        sums_to_one(
            "source_mix",
            &[
                ("human", mix.human),
                ("deterministic_codemod", mix.deterministic_codemod),
                ("ai_codemod", mix.ai_codemod),
                ("racer_runbook", mix.racer_runbook),
            ],
        )?;
        sums_to_one("risk_classes", &self.risk_classes.fields())?;
        let a = &self.author_action;
        sums_to_one(
            "author_action",
            &[
                ("ship", a.ship),
                ("wait_for_human", a.wait_for_human),
                ("return_to_needs_review", a.return_to_needs_review),
            ],
        )?;
        for (name, v) in self.agent_catch.fields() {
            prob(&format!("agent_catch.{name}"), v)?;
        }
        let n = &self.state_noise;
        for (name, v) in [
            ("wip", n.wip),
            ("rfc", n.rfc),
            ("previously_rejected", n.previously_rejected),
            ("stale_version", n.stale_version),
            ("ci_failing", n.ci_failing),
            ("code_freeze", n.code_freeze),
            ("open_source", n.open_source),
            ("sox", n.sox),
            ("additional_review", n.additional_review),
        ] {
            prob(&format!("state_noise.{name}"), v)?;
        }
        prob("author.intern_prob", self.author.intern_prob)?;
        prob("author.other_role_prob", self.author.other_role_prob)?;
        if self.author.intern_prob + self.author.other_role_prob > 1.0 {
            return Err(violation("author", "intern_prob + other_role_prob exceeds 1"));
        }
        prob("author.no_oncall_prob", self.author.no_oncall_prob)?;
        prob("diff_shape.config_touch_prob", self.diff_shape.config_touch_prob)?;
        prob("diff_shape.safe_change_prob", self.diff_shape.safe_change_prob)?;
        prob("latent_risk.revert_given_defect", self.latent_risk.revert_given_defect)?;
        prob("latent_risk.pi_given_defect", self.latent_risk.pi_given_defect)?;
        prob("human_review.catch_prob", self.human_review.catch_prob)?;
        prob("human_review.reject_prob", self.human_review.reject_prob)?;
        prob("override_prob", self.override_prob)?;
        prob("activation_fraction", self.activation_fraction)?;

        for (key, v) in [
            ("diff_shape.size_log_mean", self.diff_shape.size_log_mean),
            ("latent_risk.alpha", self.latent_risk.alpha),
            ("latent_risk.beta", self.latent_risk.beta),
            ("latent_risk.gamma", self.latent_risk.gamma),
            ("latent_risk.bot_offset", self.latent_risk.bot_offset),
            ("human_review.latency_mu", self.human_review.latency_mu),
            ("author.history_log_mean", self.author.history_log_mean),
        ] {
            finite(key, v)?;
        }
        for (key, v) in [
            ("diff_shape.size_log_sigma", self.diff_shape.size_log_sigma),
            ("diff_shape.mean_extra_files", self.diff_shape.mean_extra_files),
            ("human_review.latency_sigma", self.human_review.latency_sigma),
            ("human_review.capacity_per_day", self.human_review.capacity_per_day),
            ("author.history_log_sigma", self.author.history_log_sigma),
            ("revert_delay_mean_hours", self.revert_delay_mean_hours),
            ("pi_delay_mean_hours", self.pi_delay_mean_hours),
        ] {
            finite(key, v)?;
            if v < 0.0 {
                return Err(violation(key, "must be non-negative"));
            }
        }
        if self.diff_shape.size_log_sigma == 0.0 {
            return Err(violation("diff_shape.size_log_sigma", "must be positive"));
        }
        if !(self.arrival_rate_per_day.is_finite() && self.arrival_rate_per_day > 0.0) {
            return Err(violation("arrival_rate_per_day", "must be positive"));
        }
        if self.radar_review_seconds < 0 {
            return Err(violation("radar_review_seconds", "must be non-negative"));
        }
        if self.orgs.is_empty() {
            return Err(violation("orgs", "at least one org is required"));
        }
        for (key, list, weight) in [
            ("runbooks", &self.runbooks, mix.racer_runbook),
            ("deterministic_codemods", &self.deterministic_codemods, mix.deterministic_codemod),
            ("ai_codemods", &self.ai_codemods, mix.ai_codemod),
        ] {
            if weight > 0.0 && list.is_empty() {
                return Err(violation(key, "empty while its source_mix weight is positive"));
            }
            if let Some(i) = list.iter().position(|s| s.trim().is_empty()) {
                return Err(violation(format!("{key}[{i}]"), "empty name"));
            }
        }
        Ok(())
    }

    /// Mean arrival spacing times `n_diffs` times `activation_fraction`.
    pub fn activation_time(&self) -> Option<Timestamp> {
        (self.activation_fraction > 0.0).then(|| {
            let span = self.n_diffs as f64 / self.arrival_rate_per_day * 86_400.0;
            self.start_time + (span * self.activation_fraction).round() as Timestamp
        })
    }
}

/// Named scenario presets used by tests, benches and the CLI.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let base = ScenarioConfig::default();
    let cfg = match name {
        "default" => base,
        // All-human stream with no reviewers: the review backlog only grows.
        "backlog" => ScenarioConfig {
            source_mix: SourceMix {
                human: 1.0,
                deterministic_codemod: 0.0,
                ai_codemod: 0.0,
                racer_runbook: 0.0,
            },
            human_review: HumanReview {
                capacity_per_day: 0.0,
                ..HumanReview::default()
            },
            ..base
        },
        // RADAR switched on halfway through.
        "activation" => ScenarioConfig {
            activation_fraction: 0.5,
            ..base
        },
        // Reviewers start fewer reviews per day than diffs arrive, and RADAR
        // is switched on halfway through.
        "congested" => ScenarioConfig {
            activation_fraction: 0.5,
            human_review: HumanReview {
                capacity_per_day: 420.0,
                ..HumanReview::default()
            },
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}

/// Per-source counts, for reports.
pub fn source_counts(stream: &SyntheticStream) -> BTreeMap<SourceVariant, usize> {
    let mut out = BTreeMap::new();
    for d in &stream.diffs {
        *out.entry(d.diff.source.variant()).or_default() += 1;
    }
    out
}
