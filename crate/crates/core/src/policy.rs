//! Policy configuration: per-org risk appetite, per-runbook settings,
//! content blocklists and the tunables of the scoring and review stages.
//!
//! A [`PolicySet`] is loaded once from a TOML (or JSON) document and is
//! immutable afterwards. [`PolicyHandle`] swaps whole snapshots for hot
//! reload; evaluations hold the `Arc` they started with.
//!
//! Org sections override `[global]` field by field; `[global]` overrides the
//! built-in defaults. There is no deeper inheritance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{CiState, SourceKind, SourceVariant};
use crate::review::AcrConfig;
use crate::risk::DrsConfig;

/// Upper bound on a runbook's daily landing cap.
pub const MAX_DAILY_CAP: u32 = 2000;

/// Percentile gate: only the lowest-risk `x`% of diffs qualify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PxThreshold(u8);

impl PxThreshold {
    pub const fn new(x: u8) -> Option<Self> {
        if x <= 100 {
            Some(Self(x))
        } else {
            None
        }
    }

    /// Panics if `x > 100`. For constants.
    pub const fn p(x: u8) -> Self {
        match Self::new(x) {
            Some(t) => t,
            None => panic!("PX threshold above 100"),
        }
    }

    pub fn percent(self) -> u8 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for PxThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl Serialize for PxThreshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for PxThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PxSpec::deserialize(d)?;
        let x = raw.percent().map_err(serde::de::Error::custom)?;
        u8::try_from(x)
            .ok()
            .and_then(PxThreshold::new)
            .ok_or_else(|| serde::de::Error::custom(format!("PX threshold {x} outside [0,100]")))
    }
}

impl std::str::FromStr for PxThreshold {
    type Err = String;

    /// Accepts `50`, `P50` or `p50`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let x = PxSpec::Text(s.trim().to_string()).percent()?;
        u8::try_from(x)
            .ok()
            .and_then(PxThreshold::new)
            .ok_or_else(|| format!("PX threshold {x} outside [0,100]"))
    }
}

/// Threshold as written in a config document: `50` or `"P50"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PxSpec {
    Int(i64),
    Text(String),
}

impl PxSpec {
    fn percent(&self) -> Result<i64, String> {
        match self {
            PxSpec::Int(x) => Ok(*x),
            PxSpec::Text(s) => s
                .strip_prefix(['P', 'p'])
                .unwrap_or(s)
                .parse::<i64>()
                .map_err(|_| format!("cannot parse PX threshold `{s}`")),
        }
    }
}

impl From<PxThreshold> for PxSpec {
    fn from(t: PxThreshold) -> Self {
        PxSpec::Int(i64::from(t.0))
    }
}

/// Outcome of threshold resolution for one diff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "threshold")]
pub enum ThresholdResolution {
    Gate(PxThreshold),
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgPolicy {
    pub org_id: String,
    pub human_drs_threshold: PxThreshold,
    pub bot_default_drs_threshold: PxThreshold,
    pub allowlisted_runbook_drs_threshold: PxThreshold,
    pub bot_drs_bypass: bool,
    pub deferred_review_enabled: bool,
    pub permitted_sources: BTreeSet<SourceVariant>,
    pub landing_delay_seconds: u64,
}

impl OrgPolicy {
    pub fn defaults(org_id: &str) -> Self {
        Self {
            org_id: org_id.to_string(),
            human_drs_threshold: PxThreshold::p(5),
            bot_default_drs_threshold: PxThreshold::p(20),
            allowlisted_runbook_drs_threshold: PxThreshold::p(50),
            bot_drs_bypass: false,
            deferred_review_enabled: true,
            permitted_sources: SourceVariant::all(),
            landing_delay_seconds: 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunbookPolicy {
    pub runbook_name: String,
    pub allowlisted: bool,
    pub denylisted: bool,
    pub daily_cap: u32,
    pub min_landed_for_eligibility: u32,
    pub max_revert_rate: f64,
    pub max_rejection_rate: f64,
    pub lookback_days: u32,
    /// Overrides the org-level threshold for this runbook when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drs_threshold: Option<PxThreshold>,
}

impl RunbookPolicy {
    pub fn defaults(name: &str) -> Self {
        Self {
            runbook_name: name.to_string(),
            allowlisted: false,
            denylisted: false,
            daily_cap: 10,
            min_landed_for_eligibility: 50,
            max_revert_rate: 0.01,
            max_rejection_rate: 0.05,
            lookback_days: 60,
            drs_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentBlocklists {
    pub phrase_blocklist: Vec<String>,
    pub path_suffix_blocklist: Vec<String>,
    pub path_prefix_blocklist: Vec<String>,
    pub runbook_keyword_denylist: Vec<String>,
}

impl Default for ContentBlocklists {
    fn default() -> Self {
        Self {
            phrase_blocklist: vec![],
            path_suffix_blocklist: vec![],
            path_prefix_blocklist: vec![],
            runbook_keyword_denylist: vec!["test".into()],
        }
    }
}

/// Stricter gate applied to verified human diffs to waive review entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApprovalConfig {
    pub drs_threshold: PxThreshold,
    pub min_confidence: u8,
    pub max_effort: u8,
}

impl Default for ApprovalConfig {
    fn default() -> Self {
        Self {
            drs_threshold: PxThreshold::p(2),
            min_confidence: 9,
            max_effort: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanEligibilityConfig {
    pub allowed_ci_states: BTreeSet<CiState>,
    /// Authors outside the eligible roles need strictly more than this.
    pub min_diffs_past_year: u32,
    pub intern_min_employment_days: u32,
}

impl Default for HumanEligibilityConfig {
    fn default() -> Self {
        Self {
            allowed_ci_states: [CiState::Passing].into_iter().collect(),
            min_diffs_past_year: 10,
            intern_min_employment_days: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub global: OrgPolicy,
    pub orgs: BTreeMap<String, OrgPolicy>,
    pub runbooks: BTreeMap<String, RunbookPolicy>,
    pub blocklists: ContentBlocklists,
    /// Deterministic codemods cleared for Blanket AutoAccept.
    pub approved_codemods: BTreeSet<String>,
    pub drs: DrsConfig,
    pub acr: AcrConfig,
    pub approval: ApprovalConfig,
    pub human: HumanEligibilityConfig,
}

impl Default for PolicySet {
    fn default() -> Self {
        Self {
            global: OrgPolicy::defaults("global"),
            orgs: BTreeMap::new(),
            runbooks: BTreeMap::new(),
            blocklists: ContentBlocklists::default(),
            approved_codemods: BTreeSet::new(),
            drs: DrsConfig::default(),
            acr: AcrConfig::default(),
            approval: ApprovalConfig::default(),
            human: HumanEligibilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    InvariantViolation { key: String, message: String },
}

pub(crate) fn violation(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::InvariantViolation {
        key: key.into(),
        message: message.into(),
    }
}

impl PolicySet {
    /// Policy for `org`, falling back to the global policy.
    pub fn org(&self, org: &str) -> &OrgPolicy {
        self.orgs.get(org).unwrap_or(&self.global)
    }

    /// Policy for `name`; runbooks without a section get the defaults.
    pub fn runbook(&self, name: &str) -> RunbookPolicy {
        self.runbooks
            .get(name)
            .cloned()
            .unwrap_or_else(|| RunbookPolicy::defaults(name))
    }

    /// Sets every DRS threshold (global and per org) to `t`. Used by sweeps.
    pub fn with_all_drs_thresholds(mut self, t: PxThreshold) -> Self {
        for org in std::iter::once(&mut self.global).chain(self.orgs.values_mut()) {
            org.human_drs_threshold = t;
            org.bot_default_drs_threshold = t;
            org.allowlisted_runbook_drs_threshold = t;
        }
        for rp in self.runbooks.values_mut() {
            rp.drs_threshold = None;
        }
        self
    }

    /// Serializes to the TOML document format accepted by [`load_policy`].
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_document()).expect("policy document is always serializable")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document())
            .expect("policy document is always serializable")
    }

    fn to_document(&self) -> PolicyDoc {
        PolicyDoc {
            global: Some(OrgDoc::from(&self.global)),
            org: self
                .orgs
                .iter()
                .map(|(k, v)| (k.clone(), OrgDoc::from(v)))
                .collect(),
            runbook: self
                .runbooks
                .iter()
                .map(|(k, v)| (k.clone(), RunbookDoc::from(v)))
                .collect(),
            blocklists: Some(self.blocklists.clone()),
            codemods: Some(CodemodsDoc {
                approved: self.approved_codemods.iter().cloned().collect(),
            }),
            drs: Some(self.drs.clone()),
            acr: Some(self.acr.clone()),
            approval: Some(ApprovalDoc {
                drs_threshold: Some(self.approval.drs_threshold.into()),
                min_confidence: Some(i64::from(self.approval.min_confidence)),
                max_effort: Some(i64::from(self.approval.max_effort)),
            }),
            human: Some(self.human.clone()),
        }
    }
}

/// Resolves the DRS gate for a diff from `org` with `source`.
pub fn resolve_threshold(policy: &PolicySet, org: &str, source: &SourceKind) -> ThresholdResolution {
    let op = policy.org(org);
    match source {
        SourceKind::Human => ThresholdResolution::Gate(op.human_drs_threshold),
        _ if op.bot_drs_bypass => ThresholdResolution::Bypass,
        SourceKind::DeterministicCodemod { .. } => ThresholdResolution::Bypass,
        SourceKind::AiCodemod { .. } => ThresholdResolution::Gate(op.bot_default_drs_threshold),
        SourceKind::RacerRunbook { runbook_name } => {
            let rp = policy.runbook(runbook_name);
            match rp.drs_threshold {
                Some(t) => ThresholdResolution::Gate(t),
                None if rp.allowlisted => {
                    ThresholdResolution::Gate(op.allowlisted_runbook_drs_threshold)
                }
                None => ThresholdResolution::Gate(op.bot_default_drs_threshold),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    global: Option<OrgDoc>,
    #[serde(default)]
    org: BTreeMap<String, OrgDoc>,
    #[serde(default)]
    runbook: BTreeMap<String, RunbookDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blocklists: Option<ContentBlocklists>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    codemods: Option<CodemodsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drs: Option<DrsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acr: Option<AcrConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    approval: Option<ApprovalDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    human: Option<HumanEligibilityConfig>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrgDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    human_drs_threshold: Option<PxSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bot_default_drs_threshold: Option<PxSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    allowlisted_runbook_drs_threshold: Option<PxSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bot_drs_bypass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deferred_review_enabled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permitted_sources: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    landing_delay_seconds: Option<i64>,
}

impl From<&OrgPolicy> for OrgDoc {
    fn from(o: &OrgPolicy) -> Self {
        OrgDoc {
            human_drs_threshold: Some(o.human_drs_threshold.into()),
            bot_default_drs_threshold: Some(o.bot_default_drs_threshold.into()),
            allowlisted_runbook_drs_threshold: Some(o.allowlisted_runbook_drs_threshold.into()),
            bot_drs_bypass: Some(o.bot_drs_bypass),
            deferred_review_enabled: Some(o.deferred_review_enabled),
            permitted_sources: Some(
                o.permitted_sources
                    .iter()
                    .map(|v| v.as_str().to_string())
                    .collect(),
            ),
            landing_delay_seconds: Some(o.landing_delay_seconds as i64),
        }
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunbookDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    allowlisted: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    denylisted: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    daily_cap: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_landed_for_eligibility: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_revert_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lookback_days: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    drs_threshold: Option<PxSpec>,
}

impl From<&RunbookPolicy> for RunbookDoc {
    fn from(r: &RunbookPolicy) -> Self {
        RunbookDoc {
            allowlisted: Some(r.allowlisted),
            denylisted: Some(r.denylisted),
            daily_cap: Some(i64::from(r.daily_cap)),
            min_landed_for_eligibility: Some(i64::from(r.min_landed_for_eligibility)),
            max_revert_rate: Some(r.max_revert_rate),
            max_rejection_rate: Some(r.max_rejection_rate),
            lookback_days: Some(i64::from(r.lookback_days)),
            drs_threshold: r.drs_threshold.map(Into::into),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodemodsDoc {
    #[serde(default)]
    approved: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApprovalDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    drs_threshold: Option<PxSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_confidence: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_effort: Option<i64>,
}

fn px(spec: &PxSpec, key: &str) -> Result<PxThreshold, ConfigError> {
    let x = spec.percent().map_err(|m| violation(key, m))?;
    u8::try_from(x)
        .ok()
        .and_then(PxThreshold::new)
        .ok_or_else(|| violation(key, format!("{x} outside [0,100]")))
}

fn int_in(v: i64, lo: i64, hi: i64, key: &str) -> Result<i64, ConfigError> {
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(violation(key, format!("{v} outside [{lo},{hi}]")))
    }
}

fn rate(v: f64, key: &str) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(violation(key, format!("{v} outside [0,1]")))
    }
}

fn merge_org(base: &OrgPolicy, doc: &OrgDoc, org_id: &str, prefix: &str) -> Result<OrgPolicy, ConfigError> {
    let k = |f: &str| format!("{prefix}.{f}");
    let mut o = base.clone();
    o.org_id = org_id.to_string();
    if let Some(s) = &doc.human_drs_threshold {
        o.human_drs_threshold = px(s, &k("human_drs_threshold"))?;
    }
    if let Some(s) = &doc.bot_default_drs_threshold {
        o.bot_default_drs_threshold = px(s, &k("bot_default_drs_threshold"))?;
    }
    if let Some(s) = &doc.allowlisted_runbook_drs_threshold {
        o.allowlisted_runbook_drs_threshold = px(s, &k("allowlisted_runbook_drs_threshold"))?;
    }
    if let Some(b) = doc.bot_drs_bypass {
        o.bot_drs_bypass = b;
    }
    if let Some(b) = doc.deferred_review_enabled {
        o.deferred_review_enabled = b;
    }
    if let Some(list) = &doc.permitted_sources {
        o.permitted_sources = list
            .iter()
            .map(|s| {
                SourceVariant::parse(s)
                    .ok_or_else(|| violation(k("permitted_sources"), format!("unknown source `{s}`")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(d) = doc.landing_delay_seconds {
        o.landing_delay_seconds = int_in(d, 0, i64::MAX, &k("landing_delay_seconds"))? as u64;
    }
    Ok(o)
}

fn build_runbook(name: &str, doc: &RunbookDoc) -> Result<RunbookPolicy, ConfigError> {
    let k = |f: &str| format!("runbook.{name}.{f}");
    let mut r = RunbookPolicy::defaults(name);
    if let Some(b) = doc.allowlisted {
        r.allowlisted = b;
    }
    if let Some(b) = doc.denylisted {
        r.denylisted = b;
    }
    if r.allowlisted && r.denylisted {
        return Err(violation(
            format!("runbook.{name}"),
            "runbook cannot be both allowlisted and denylisted",
        ));
    }
    if let Some(c) = doc.daily_cap {
        r.daily_cap = int_in(c, 1, i64::from(MAX_DAILY_CAP), &k("daily_cap"))? as u32;
    }
    if let Some(m) = doc.min_landed_for_eligibility {
        r.min_landed_for_eligibility =
            int_in(m, 1, i64::from(u32::MAX), &k("min_landed_for_eligibility"))? as u32;
    }
    if let Some(v) = doc.max_revert_rate {
        r.max_revert_rate = rate(v, &k("max_revert_rate"))?;
    }
    if let Some(v) = doc.max_rejection_rate {
        r.max_rejection_rate = rate(v, &k("max_rejection_rate"))?;
    }
    if let Some(d) = doc.lookback_days {
        r.lookback_days = int_in(d, 1, 36_500, &k("lookback_days"))? as u32;
    }
    if let Some(s) = &doc.drs_threshold {
        r.drs_threshold = Some(px(s, &k("drs_threshold"))?);
    }
    Ok(r)
}

fn non_empty_entries(list: &[String], key: &str) -> Result<(), ConfigError> {
    match list.iter().position(String::is_empty) {
        Some(i) => Err(violation(format!("{key}[{i}]"), "empty entry")),
        None => Ok(()),
    }
}

/// Parses and validates a policy document (TOML, or JSON when the text
/// starts with `{`). Unspecified fields take the documented defaults.
pub fn load_policy(text: &str) -> Result<PolicySet, ConfigError> {
    let doc: PolicyDoc = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
    };

    let defaults = OrgPolicy::defaults("global");
    let global = match &doc.global {
        Some(g) => merge_org(&defaults, g, "global", "global")?,
        None => defaults,
    };
    let orgs = doc
        .org
        .iter()
        .map(|(id, o)| Ok((id.clone(), merge_org(&global, o, id, &format!("org.{id}"))?)))
        .collect::<Result<BTreeMap<_, _>, ConfigError>>()?;
    let runbooks = doc
        .runbook
        .iter()
        .map(|(name, r)| Ok((name.clone(), build_runbook(name, r)?)))
        .collect::<Result<BTreeMap<_, _>, ConfigError>>()?;

    let blocklists = doc.blocklists.unwrap_or_default();
    non_empty_entries(&blocklists.phrase_blocklist, "blocklists.phrase_blocklist")?;
    non_empty_entries(&blocklists.path_suffix_blocklist, "blocklists.path_suffix_blocklist")?;
    non_empty_entries(&blocklists.path_prefix_blocklist, "blocklists.path_prefix_blocklist")?;
    non_empty_entries(
        &blocklists.runbook_keyword_denylist,
        "blocklists.runbook_keyword_denylist",
    )?;

    let approved: Vec<String> = doc.codemods.map(|c| c.approved).unwrap_or_default();
    non_empty_entries(&approved, "codemods.approved")?;

    let drs = doc.drs.unwrap_or_default();
    drs.validate()?;
    let acr = doc.acr.unwrap_or_default();
    acr.validate()?;

    let mut approval = ApprovalConfig::default();
    if let Some(a) = &doc.approval {
        if let Some(s) = &a.drs_threshold {
            approval.drs_threshold = px(s, "approval.drs_threshold")?;
        }
        if let Some(c) = a.min_confidence {
            approval.min_confidence = int_in(c, 0, 10, "approval.min_confidence")? as u8;
        }
        if let Some(e) = a.max_effort {
            approval.max_effort = int_in(e, 1, 5, "approval.max_effort")? as u8;
        }
    }

    let human = doc.human.unwrap_or_default();
    if human.allowed_ci_states.is_empty() {
        return Err(violation("human.allowed_ci_states", "must not be empty"));
    }

    Ok(PolicySet {
        global,
        orgs,
        runbooks,
        blocklists,
        approved_codemods: approved.into_iter().collect(),
        drs,
        acr,
        approval,
        human,
    })
}

/// Hot-reloadable holder of the current policy snapshot.
#[derive(Debug)]
pub struct PolicyHandle {
    current: RwLock<Arc<PolicySet>>,
}

impl PolicyHandle {
    pub fn new(policy: PolicySet) -> Self {
        Self {
            current: RwLock::new(Arc::new(policy)),
        }
    }

    pub fn snapshot(&self) -> Arc<PolicySet> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Replaces the whole snapshot. Holders of older snapshots are unaffected.
    pub fn replace(&self, policy: PolicySet) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(policy);
    }
}
