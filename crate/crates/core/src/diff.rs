//! Diff data model, authorship classification and lifecycle events.
//!
//! Every other module consumes [`Diff`]. Values are immutable once built by
//! [`validate_record`], which is the only path from untrusted input.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Unix seconds, UTC.
pub type Timestamp = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// UTC day index (days since the epoch) for a timestamp.
pub fn utc_day(at: Timestamp) -> i64 {
    at.div_euclid(SECONDS_PER_DAY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Swe,
    SweManager,
    DataEngineer,
    DataScientist,
    InternSwe,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Swe => "SWE",
            Role::SweManager => "SWE_MANAGER",
            Role::DataEngineer => "DATA_ENGINEER",
            Role::DataScientist => "DATA_SCIENTIST",
            Role::InternSwe => "INTERN_SWE",
            Role::Other => "OTHER",
        }
    }

    /// Unknown strings map to `Other`; ingestion never fails on a role.
    pub fn parse_lenient(s: &str) -> Role {
        match s {
            "SWE" => Role::Swe,
            "SWE_MANAGER" => Role::SweManager,
            "DATA_ENGINEER" => Role::DataEngineer,
            "DATA_SCIENTIST" => Role::DataScientist,
            "INTERN_SWE" => Role::InternSwe,
            _ => Role::Other,
        }
    }
}

impl Serialize for Role {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Role::parse_lenient(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthorProfile {
    pub id: String,
    pub role: Role,
    pub employment_days: u32,
    pub diffs_committed_past_year: u32,
    pub has_oncall: bool,
}

/// Where a diff came from. Exactly one variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    Human,
    DeterministicCodemod { codemod_id: String },
    AiCodemod { codemod_id: String },
    RacerRunbook { runbook_name: String },
}

/// Variant tag of a [`SourceKind`], without its payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceVariant {
    Human,
    DeterministicCodemod,
    AiCodemod,
    RacerRunbook,
}

impl SourceVariant {
    pub const ALL: [SourceVariant; 4] = [
        SourceVariant::Human,
        SourceVariant::DeterministicCodemod,
        SourceVariant::AiCodemod,
        SourceVariant::RacerRunbook,
    ];

    pub fn all() -> BTreeSet<SourceVariant> {
        Self::ALL.into_iter().collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceVariant::Human => "human",
            SourceVariant::DeterministicCodemod => "deterministic_codemod",
            SourceVariant::AiCodemod => "ai_codemod",
            SourceVariant::RacerRunbook => "racer_runbook",
        }
    }

    pub fn parse(s: &str) -> Option<SourceVariant> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for SourceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl SourceKind {
    pub fn variant(&self) -> SourceVariant {
        match self {
            SourceKind::Human => SourceVariant::Human,
            SourceKind::DeterministicCodemod { .. } => SourceVariant::DeterministicCodemod,
            SourceKind::AiCodemod { .. } => SourceVariant::AiCodemod,
            SourceKind::RacerRunbook { .. } => SourceVariant::RacerRunbook,
        }
    }

    pub fn runbook_name(&self) -> Option<&str> {
        match self {
            SourceKind::RacerRunbook { runbook_name } => Some(runbook_name),
            _ => None,
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceKind::Human => f.write_str("human"),
            SourceKind::DeterministicCodemod { codemod_id } => {
                write!(f, "deterministic_codemod:{codemod_id}")
            }
            SourceKind::AiCodemod { codemod_id } => write!(f, "ai_codemod:{codemod_id}"),
            SourceKind::RacerRunbook { runbook_name } => write!(f, "racer_runbook:{runbook_name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CiState {
    Passing,
    Failing,
    Pending,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiffStateFlags {
    pub is_wip: bool,
    pub is_rfc: bool,
    pub was_rejected: bool,
    pub is_latest_published: bool,
    pub in_code_freeze: bool,
    pub ci_state: CiState,
}

impl Default for DiffStateFlags {
    fn default() -> Self {
        Self {
            is_wip: false,
            is_rfc: false,
            was_rejected: false,
            is_latest_published: true,
            in_code_freeze: false,
            ci_state: CiState::Passing,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScopeFlags {
    pub is_open_source: bool,
    pub is_sox: bool,
    pub requires_additional_review: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChangeUnit {
    pub path: String,
    pub lines_added: u32,
    pub lines_removed: u32,
    pub hunk_texts: Vec<String>,
}

impl ChangeUnit {
    pub fn size(&self) -> u64 {
        u64::from(self.lines_added) + u64::from(self.lines_removed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleKind {
    Published,
    Verified,
    Approved,
    Landed,
    HumanRejected,
    Reverted,
    PiAttributed,
    Closed,
    ReviewStarted,
    ReviewEnded,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub diff_id: String,
    pub kind: LifecycleKind,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diff {
    pub id: String,
    pub author: AuthorProfile,
    pub source: SourceKind,
    pub org: String,
    pub state: DiffStateFlags,
    pub changes: Vec<ChangeUnit>,
    pub created_at: Timestamp,
    pub scope: ScopeFlags,
    pub content_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<LifecycleEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthorshipClass {
    Human,
    Bot(SourceKind),
}

pub fn classify_authorship(diff: &Diff) -> AuthorshipClass {
    match &diff.source {
        SourceKind::Human => AuthorshipClass::Human,
        other => AuthorshipClass::Bot(other.clone()),
    }
}

/// Total lines touched: sum of added and removed lines over all changes.
pub fn diff_size(diff: &Diff) -> u64 {
    diff.changes.iter().map(ChangeUnit::size).sum()
}

/// Number of distinct file paths touched.
pub fn file_count(diff: &Diff) -> usize {
    diff.changes
        .iter()
        .map(|c| c.path.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

impl Diff {
    pub fn is_bot(&self) -> bool {
        !matches!(self.source, SourceKind::Human)
    }

    /// Timestamp of the first event of `kind`, if any.
    pub fn event_at(&self, kind: LifecycleKind) -> Option<Timestamp> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.at)
    }
}

// ---------------------------------------------------------------------------
// Raw records and validation

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuthorRecord {
    pub id: Option<String>,
    pub role: Option<Role>,
    pub employment_days: Option<i64>,
    pub diffs_committed_past_year: Option<i64>,
    pub has_oncall: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub path: Option<String>,
    pub lines_added: Option<i64>,
    pub lines_removed: Option<i64>,
    #[serde(default)]
    pub hunk_texts: Vec<String>,
}

/// A diff as parsed from one ingestion line, before invariants are checked.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiffRecord {
    pub id: Option<String>,
    pub author: Option<AuthorRecord>,
    pub source: Option<SourceKind>,
    pub org: Option<String>,
    pub state: Option<DiffStateFlags>,
    pub changes: Option<Vec<ChangeRecord>>,
    pub created_at: Option<Timestamp>,
    pub scope: Option<ScopeFlags>,
    pub content_text: Option<String>,
    #[serde(default)]
    pub events: Vec<LifecycleEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("diff has no changes")]
    EmptyChanges,
    #[error("negative count in `{0}`")]
    NegativeCount(String),
    #[error("change {0} touches zero lines")]
    ZeroLineChange(usize),
    #[error("bad timestamp order: {0}")]
    BadTimestampOrder(String),
    #[error("bad event sequence: {0}")]
    BadEventSequence(String),
    #[error("parse error: {0}")]
    Parse(String),
}

fn required<T>(v: Option<T>, field: &str) -> Result<T, ValidationError> {
    v.ok_or_else(|| ValidationError::MissingField(field.to_string()))
}

fn count(v: Option<i64>, field: &str) -> Result<u32, ValidationError> {
    let n = required(v, field)?;
    if n < 0 {
        return Err(ValidationError::NegativeCount(field.to_string()));
    }
    u32::try_from(n).map_err(|_| ValidationError::Parse(format!("`{field}` out of range")))
}

fn non_empty(s: Option<String>, field: &str) -> Result<String, ValidationError> {
    match s {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(ValidationError::MissingField(field.to_string())),
    }
}

/// Checks every [`Diff`] invariant and builds the value.
///
/// Errors name the first violated field, in declaration order.
pub fn validate_record(raw: DiffRecord) -> Result<Diff, ValidationError> {
    let id = non_empty(raw.id, "id")?;
    let a = required(raw.author, "author")?;
    let author = AuthorProfile {
        id: non_empty(a.id, "author.id")?,
        role: a.role.unwrap_or(Role::Other),
        employment_days: count(a.employment_days, "author.employment_days")?,
        diffs_committed_past_year: count(
            a.diffs_committed_past_year,
            "author.diffs_committed_past_year",
        )?,
        has_oncall: required(a.has_oncall, "author.has_oncall")?,
    };
    let source = required(raw.source, "source")?;
    match &source {
        SourceKind::RacerRunbook { runbook_name } if runbook_name.is_empty() => {
            return Err(ValidationError::MissingField("source.runbook_name".into()))
        }
        SourceKind::DeterministicCodemod { codemod_id } | SourceKind::AiCodemod { codemod_id }
            if codemod_id.is_empty() =>
        {
            return Err(ValidationError::MissingField("source.codemod_id".into()))
        }
        _ => {}
    }
    let org = non_empty(raw.org, "org")?;
    let state = required(raw.state, "state")?;
    let raw_changes = required(raw.changes, "changes")?;
    if raw_changes.is_empty() {
        return Err(ValidationError::EmptyChanges);
    }
    let mut changes = Vec::with_capacity(raw_changes.len());
    for (i, c) in raw_changes.into_iter().enumerate() {
        let path = non_empty(c.path, &format!("changes[{i}].path"))?;
        let lines_added = count(c.lines_added, &format!("changes[{i}].lines_added"))?;
        let lines_removed = count(c.lines_removed, &format!("changes[{i}].lines_removed"))?;
        if lines_added + lines_removed == 0 {
            return Err(ValidationError::ZeroLineChange(i));
        }
        changes.push(ChangeUnit {
            path,
            lines_added,
            lines_removed,
            hunk_texts: c.hunk_texts,
        });
    }
    let created_at = required(raw.created_at, "created_at")?;
    let scope = required(raw.scope, "scope")?;
    let content_text = raw.content_text.unwrap_or_else(|| {
        changes
            .iter()
            .flat_map(|c| c.hunk_texts.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join("\n")
    });
    check_events(&id, created_at, &raw.events)?;
    Ok(Diff {
        id,
        author,
        source,
        org,
        state,
        changes,
        created_at,
        scope,
        content_text,
        events: raw.events,
    })
}

fn check_events(
    id: &str,
    created_at: Timestamp,
    events: &[LifecycleEvent],
) -> Result<(), ValidationError> {
    let mut prev: Option<Timestamp> = None;
    let mut landed = false;
    for (i, e) in events.iter().enumerate() {
        if e.diff_id != id {
            return Err(ValidationError::BadEventSequence(format!(
                "event {i} belongs to `{}`",
                e.diff_id
            )));
        }
        if e.at < created_at {
            return Err(ValidationError::BadTimestampOrder(format!(
                "{:?} at {} precedes created_at {created_at}",
                e.kind, e.at
            )));
        }
        if prev.is_some_and(|p| e.at < p) {
            return Err(ValidationError::BadTimestampOrder(format!(
                "event {i} ({:?}) is earlier than its predecessor",
                e.kind
            )));
        }
        prev = Some(e.at);
        match e.kind {
            LifecycleKind::Published if i != 0 => {
                return Err(ValidationError::BadEventSequence(
                    "PUBLISHED must be the first event".into(),
                ))
            }
            k if i == 0 && k != LifecycleKind::Published => {
                return Err(ValidationError::BadEventSequence(
                    "first event must be PUBLISHED".into(),
                ))
            }
            LifecycleKind::Landed => landed = true,
            LifecycleKind::Reverted | LifecycleKind::PiAttributed if !landed => {
                return Err(ValidationError::BadEventSequence(format!(
                    "{:?} without a preceding LANDED",
                    e.kind
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

impl From<&Diff> for DiffRecord {
    fn from(d: &Diff) -> Self {
        DiffRecord {
            id: Some(d.id.clone()),
            author: Some(AuthorRecord {
                id: Some(d.author.id.clone()),
                role: Some(d.author.role),
                employment_days: Some(i64::from(d.author.employment_days)),
                diffs_committed_past_year: Some(i64::from(d.author.diffs_committed_past_year)),
                has_oncall: Some(d.author.has_oncall),
            }),
            source: Some(d.source.clone()),
            org: Some(d.org.clone()),
            state: Some(d.state),
            changes: Some(
                d.changes
                    .iter()
                    .map(|c| ChangeRecord {
                        path: Some(c.path.clone()),
                        lines_added: Some(i64::from(c.lines_added)),
                        lines_removed: Some(i64::from(c.lines_removed)),
                        hunk_texts: c.hunk_texts.clone(),
                    })
                    .collect(),
            ),
            created_at: Some(d.created_at),
            scope: Some(d.scope),
            content_text: Some(d.content_text.clone()),
            events: d.events.clone(),
        }
    }
}
