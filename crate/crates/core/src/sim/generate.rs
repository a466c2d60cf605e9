use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, SimError};
use crate::diff::{
    AuthorProfile, ChangeUnit, CiState, Diff, DiffStateFlags, Role, ScopeFlags, SourceKind, SourceVariant,
    Timestamp,
};
use crate::exec::Exec;
use crate::review::RiskKind;

/// Warmup diffs use stream indices from here on, clear of any run's diffs.
pub const WARMUP_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Logic,
    Performance,
    Security,
}

impl DefectClass {
    pub fn risk_kind(self) -> RiskKind {
        match self {
            DefectClass::Logic => RiskKind::BugOrLogicError,
            DefectClass::Performance => RiskKind::PerformanceRisk,
            DefectClass::Security => RiskKind::SecurityVulnerability,
        }
    }
}

/// Hidden facts about a synthetic diff plus the uniform draws that decide
/// its fate at each decision point. Reverts and PIs only follow defects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub diff_id: String,
    pub defect_prob: f64,
    pub has_defect: bool,
    pub defect_class: Option<DefectClass>,
    pub would_revert: bool,
    pub would_pi: bool,
    /// Seconds a human reviewer spends once the diff reaches them.
    pub human_latency_draw: i64,
    pub agent_catch_draw: f64,
    pub human_catch_draw: f64,
    pub human_reject_draw: f64,
    pub override_draw: f64,
    /// Where in the landing delay an override lands, in [0, 1).
    pub override_offset: f64,
    pub author_action_draw: f64,
    pub revert_delay: i64,
    pub pi_delay: i64,
}

impl GroundTruth {
    /// The review agent flags this diff's defect.
    pub fn agent_catches(&self, cfg: &ScenarioConfig) -> Option<DefectClass> {
        let class = self.defect_class?;
        let p = match class {
            DefectClass::Logic => cfg.agent_catch.logic,
            DefectClass::Performance => cfg.agent_catch.performance,
            DefectClass::Security => cfg.agent_catch.security,
        };
        (self.agent_catch_draw < p).then_some(class)
    }

    /// A human reviewer rejects this diff.
    pub fn human_rejects(&self, cfg: &ScenarioConfig) -> bool {
        if self.has_defect {
            self.human_catch_draw < cfg.human_review.catch_prob
        } else {
            self.human_reject_draw < cfg.human_review.reject_prob
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDiff {
    pub diff: Diff,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    /// In arrival order; `created_at` is non-decreasing.
    pub diffs: Vec<SyntheticDiff>,
    /// Calibration-only diffs; never simulated.
    pub warmup: Vec<Diff>,
}

#[derive(Clone, Copy)]
enum Style {
    Formatting,
    Logging,
    Import,
    DeadCode,
    Doc,
    TestAddition,
    Defensive,
    Rename,
    Logic,
    Config,
}

const SAFE_STYLES: [Style; 8] = [
    Style::Formatting,
    Style::Logging,
    Style::Import,
    Style::DeadCode,
    Style::Doc,
    Style::TestAddition,
    Style::Defensive,
    Style::Rename,
];

const DIRS: [&str; 6] = ["core", "api", "storage", "ui", "infra", "tools"];

/// A short representative hunk, the path, and the (added, removed) split of
/// `lines` for a change of the given style.
fn change_for(style: Style, dir: &str, k: usize, lines: u32) -> ChangeUnit {
    let half = lines.div_ceil(2);
    let (path, added, removed, hunk) = match style {
        Style::Formatting => (
            format!("{dir}/src/file_{k}.rs"),
            half,
            lines - half,
            "@@ -1,1 +1,1 @@\n-let total=compute(a,b);\n+let total = compute(a, b);".to_string(),
        ),
        Style::Logging => (
            format!("{dir}/src/file_{k}.rs"),
            lines,
            0,
            "@@ -10,0 +10,1 @@\n+    log::info!(\"processed {} items\", count);".to_string(),
        ),
        Style::Import => (
            format!("{dir}/src/file_{k}.rs"),
            half,
            lines - half,
            "@@ -1,1 +1,1 @@\n-use std::collections::HashMap;\n+use std::collections::BTreeMap;".to_string(),
        ),
        Style::DeadCode => (
            format!("{dir}/src/file_{k}.rs"),
            0,
            lines,
            format!("@@ -20,3 +20,0 @@\n-fn unused_helper_{k}() -> u32 {{\n-    42\n-}}"),
        ),
        Style::Doc => (
            format!("docs/{dir}/guide_{k}.md"),
            half,
            lines - half,
            "@@ -3,1 +3,1 @@\n-Run the old setup script.\n+Run the setup script with --verbose.".to_string(),
        ),
        Style::TestAddition => (
            format!("{dir}/tests/test_{k}.rs"),
            lines,
            0,
            format!("@@ -0,0 +1,2 @@\n+#[test]\n+fn checks_case_{k}() {{ assert_eq!(1 + 1, 2); }}"),
        ),
        Style::Defensive => (
            format!("{dir}/src/file_{k}.rs"),
            lines,
            0,
            "@@ -5,0 +5,3 @@\n+    if input.is_empty() {\n+        return None;\n+    }".to_string(),
        ),
        Style::Rename => (
            format!("{dir}/src/file_{k}.rs"),
            half,
            lines - half,
            "@@ -7,2 +7,2 @@\n-    let count = items.len();\n-    report(count);\n+    let item_count = items.len();\n+    report(item_count);"
                .to_string(),
        ),
        Style::Logic => (
            format!("{dir}/src/file_{k}.rs"),
            half,
            lines - half,
            "@@ -12,1 +12,1 @@\n-    if total > limit {\n+    if total >= limit {".to_string(),
        ),
        Style::Config => (
            format!("config/{dir}/service_{k}.yaml"),
            half,
            lines - half,
            "@@ -2,1 +2,1 @@\n-timeout: 30\n+timeout: 45".to_string(),
        ),
    };
    ChangeUnit {
        path,
        lines_added: added,
        lines_removed: removed,
        hunk_texts: vec![hunk],
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [String]) -> &'a str {
    &items[rng.random_range(0..items.len())]
}

fn pick_weighted<T: Copy>(u: f64, items: &[(T, f64)]) -> T {
    let mut acc = 0.0;
    for &(item, w) in items {
        acc += w;
        if u < acc {
            return item;
        }
    }
    // Rounding can leave u just above the total; take the last positive weight.
    items
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map_or(items[items.len() - 1].0, |(i, _)| *i)
}

fn draw_delay(rng: &mut ChaCha8Rng, mean_hours: f64) -> i64 {
    if mean_hours <= 0.0 {
        return 1;
    }
    let d: f64 = Exp::new(1.0 / (mean_hours * 3600.0)).expect("positive rate").sample(rng);
    (d.round() as i64).max(1)
}

/// Draws one diff (with `created_at` left at the scenario start) and the
/// seconds since the previous arrival.
fn draw(cfg: &ScenarioConfig, stream: u64, id: String) -> (SyntheticDiff, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let gap: f64 = Exp::new(cfg.arrival_rate_per_day / 86_400.0)
        .expect("validated rate")
        .sample(&mut rng);
    let variant = pick_weighted(rng.random::<f64>(), &cfg.source_mix.weights());
    let org = pick(&mut rng, &cfg.orgs).to_string();
    let source = match variant {
        SourceVariant::Human => SourceKind::Human,
        SourceVariant::DeterministicCodemod => SourceKind::DeterministicCodemod {
            codemod_id: pick(&mut rng, &cfg.deterministic_codemods).to_string(),
        },
        SourceVariant::AiCodemod => SourceKind::AiCodemod {
            codemod_id: pick(&mut rng, &cfg.ai_codemods).to_string(),
        },
        SourceVariant::RacerRunbook => SourceKind::RacerRunbook {
            runbook_name: pick(&mut rng, &cfg.runbooks).to_string(),
        },
    };

    // Author and flags. Bots get clean state; noise applies to humans.
    let a = &cfg.author;
    let role_u: f64 = rng.random();
    let role = if role_u < a.intern_prob {
        Role::InternSwe
    } else if role_u < a.intern_prob + a.other_role_prob {
        Role::Other
    } else {
        [Role::Swe, Role::Swe, Role::Swe, Role::SweManager, Role::DataEngineer, Role::DataScientist]
            [rng.random_range(0..6)]
    };
    let employment_days = if role == Role::InternSwe {
        rng.random_range(0..120)
    } else {
        rng.random_range(30..3000)
    };
    let history: f64 = LogNormal::new(a.history_log_mean, a.history_log_sigma)
        .expect("validated")
        .sample(&mut rng);
    let has_oncall = rng.random::<f64>() >= a.no_oncall_prob;
    let n = &cfg.state_noise;
    let flags: [bool; 9] = [
        n.wip,
        n.rfc,
        n.previously_rejected,
        n.stale_version,
        n.ci_failing,
        n.code_freeze,
        n.open_source,
        n.sox,
        n.additional_review,
    ]
    .map(|p| rng.random::<f64>() < p);

    let is_human = variant == SourceVariant::Human;
    let author = if is_human {
        AuthorProfile {
            id: format!("user_{}", rng.random_range(0..5000u32)),
            role,
            employment_days,
            diffs_committed_past_year: history.min(1e6) as u32,
            has_oncall,
        }
    } else {
        AuthorProfile {
            id: format!("bot:{}", variant.as_str()),
            role: Role::Other,
            employment_days: 0,
            diffs_committed_past_year: 0,
            has_oncall: true,
        }
    };
    let (state, scope) = if is_human {
        (
            DiffStateFlags {
                is_wip: flags[0],
                is_rfc: flags[1],
                was_rejected: flags[2],
                is_latest_published: !flags[3],
                in_code_freeze: flags[5],
                ci_state: if flags[4] { CiState::Failing } else { CiState::Passing },
            },
            ScopeFlags {
                is_open_source: flags[6],
                is_sox: flags[7],
                requires_additional_review: flags[8],
            },
        )
    } else {
        (DiffStateFlags::default(), ScopeFlags::default())
    };

    // Shape.
    let s = &cfg.diff_shape;
    let total_lines = LogNormal::new(s.size_log_mean, s.size_log_sigma)
        .expect("validated")
        .sample(&mut rng)
        .round()
        .clamp(1.0, 1e6) as u32;
    let extra_files = if s.mean_extra_files > 0.0 {
        Exp::new(1.0 / s.mean_extra_files).expect("positive").sample(&mut rng).floor() as u32
    } else {
        0
    };
    let files = (1 + extra_files.min(200)).min(total_lines);
    let touches_config = rng.random::<f64>() < s.config_touch_prob;
    let base = total_lines / files;
    let remainder = total_lines % files;
    let changes: Vec<ChangeUnit> = (0..files as usize)
        .map(|k| {
            let dir = DIRS[rng.random_range(0..DIRS.len())];
            let style = if k == 0 && touches_config {
                Style::Config
            } else if rng.random::<f64>() < s.safe_change_prob {
                SAFE_STYLES[rng.random_range(0..SAFE_STYLES.len())]
            } else {
                Style::Logic
            };
            let lines = base + u32::from((k as u32) < remainder);
            change_for(style, dir, k, lines)
        })
        .collect();

    // Latent risk.
    let r = &cfg.latent_risk;
    let size_z = ((total_lines as f64).ln() - s.size_log_mean) / s.size_log_sigma;
    let logit = r.alpha
        + r.beta * size_z
        + r.gamma * f64::from(u8::from(touches_config))
        + r.bot_offset * f64::from(u8::from(!is_human));
    let defect_prob = 1.0 / (1.0 + (-logit).exp());
    let has_defect = rng.random::<f64>() < defect_prob;
    let class_u: f64 = rng.random();
    let revert_u: f64 = rng.random();
    let pi_u: f64 = rng.random();
    let defect_class = has_defect.then(|| {
        pick_weighted(
            class_u,
            &[
                (DefectClass::Logic, cfg.risk_classes.logic),
                (DefectClass::Performance, cfg.risk_classes.performance),
                (DefectClass::Security, cfg.risk_classes.security),
            ],
        )
    });
    let h = &cfg.human_review;
    let latency: f64 = LogNormal::new(h.latency_mu, h.latency_sigma)
        .expect("validated")
        .sample(&mut rng);

    let truth = GroundTruth {
        diff_id: id.clone(),
        defect_prob,
        has_defect,
        defect_class,
        would_revert: has_defect && revert_u < r.revert_given_defect,
        would_pi: has_defect && pi_u < r.pi_given_defect,
        human_latency_draw: latency.round().clamp(0.0, 1e9) as i64,
        agent_catch_draw: rng.random(),
        human_catch_draw: rng.random(),
        human_reject_draw: rng.random(),
        override_draw: rng.random(),
        override_offset: rng.random(),
        author_action_draw: rng.random(),
        revert_delay: draw_delay(&mut rng, cfg.revert_delay_mean_hours),
        pi_delay: draw_delay(&mut rng, cfg.pi_delay_mean_hours),
    };
    let diff = Diff {
        id,
        author,
        source,
        org,
        state,
        changes,
        created_at: cfg.start_time,
        scope,
        content_text: String::new(),
        events: Vec::new(),
    };
    (SyntheticDiff { diff, truth }, gap)
}

pub fn generate_stream(cfg: &ScenarioConfig) -> Result<SyntheticStream, SimError> {
    generate_stream_with(cfg, Exec::default())
}

/// Draws `n_diffs` diffs and `calibration_warmup` warmup diffs. Output is
/// identical for every `exec`.
pub fn generate_stream_with(cfg: &ScenarioConfig, exec: Exec) -> Result<SyntheticStream, SimError> {
    cfg.validate()?;
    let drawn = exec.map_range(cfg.n_diffs, |i| draw(cfg, i as u64, format!("D{i:06}")));
    let mut t = cfg.start_time as f64;
    let diffs = drawn
        .into_iter()
        .map(|(mut d, gap)| {
            t += gap;
            d.diff.created_at = t.floor() as Timestamp;
            d
        })
        .collect();
    // Warmup diffs precede the start at the stream's arrival density, so
    // time-of-day features match the run.
    let n_warm = cfg.calibration_warmup;
    let warm_span = n_warm as f64 / cfg.arrival_rate_per_day * 86_400.0;
    let warmup = exec.map_range(n_warm, |k| {
        let (mut d, _) = draw(cfg, WARMUP_STREAM_BASE + k as u64, format!("W{k:06}"));
        let offset = warm_span * (n_warm - k) as f64 / n_warm as f64;
        d.diff.created_at = cfg.start_time - offset.ceil() as Timestamp;
        d.diff
    });
    Ok(SyntheticStream { diffs, warmup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::review::classify_change;
    use crate::review::SafeSignal;

    #[test]
    fn styles_classify_as_intended() {
        let safe = |style| {
            let c = change_for(style, "core", 0, 10);
            classify_change(&c.hunk_texts, &c.path).safe
        };
        assert!(safe(Style::Formatting).contains(&SafeSignal::PureFormatting));
        assert!(safe(Style::Logging).contains(&SafeSignal::LoggingAddition));
        assert!(safe(Style::Import).contains(&SafeSignal::ImportHygiene));
        assert!(safe(Style::DeadCode).contains(&SafeSignal::DeadCodeRemoval));
        assert!(safe(Style::Doc).contains(&SafeSignal::DocCommentUpdate));
        assert!(safe(Style::TestAddition).contains(&SafeSignal::TestAddition));
        assert!(safe(Style::Defensive).contains(&SafeSignal::DefensiveProgramming));
        assert!(safe(Style::Rename).contains(&SafeSignal::RefactorNoBehaviorChange));
        assert!(safe(Style::Logic).is_empty());
        assert!(safe(Style::Config).is_empty());
    }

    #[test]
    fn stream_is_deterministic_and_mode_independent() {
        let cfg = ScenarioConfig {
            n_diffs: 300,
            calibration_warmup: 50,
            ..ScenarioConfig::default()
        };
        let a = generate_stream_with(&cfg, Exec::Sequential).unwrap();
        let b = generate_stream(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.diffs.windows(2).all(|w| w[0].diff.created_at <= w[1].diff.created_at));
        for d in &a.diffs {
            let t = &d.truth;
            assert!(!t.would_revert || t.has_defect);
            assert!(!t.would_pi || t.has_defect);
            assert_eq!(t.has_defect, t.defect_class.is_some());
            assert_eq!(d.diff.id, t.diff_id);
            assert!(!d.diff.changes.is_empty());
        }
        let other = generate_stream(&ScenarioConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(other.diffs[0], a.diffs[0]);
    }

    #[test]
    fn prefix_is_stable_under_longer_runs() {
        let short = ScenarioConfig {
            n_diffs: 20,
            calibration_warmup: 0,
            ..ScenarioConfig::default()
        };
        let long = ScenarioConfig { n_diffs: 40, ..short.clone() };
        let a = generate_stream(&short).unwrap();
        let b = generate_stream(&long).unwrap();
        assert_eq!(a.diffs[..], b.diffs[..20]);
    }

    #[test]
    fn weighted_pick_edges() {
        let items = [('a', 0.5), ('b', 0.5), ('c', 0.0)];
        assert_eq!(pick_weighted(0.0, &items), 'a');
        assert_eq!(pick_weighted(0.5, &items), 'b');
        assert_eq!(pick_weighted(1.0, &items), 'b');
    }
}
