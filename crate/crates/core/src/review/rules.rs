//! Deterministic rule-based review backend.
//!
//! Hunks are read as unified-diff text: `+` lines are additions, `-` lines
//! removals, everything else context. File headers (`+++`/`---`) before the
//! first `@@` are skipped. All matching is textual.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    AcrConfig, BackendAssessment, BackendError, ChangeClassification, ReviewBackend, RiskKind,
    RiskSignal, SafeSignal,
};
use crate::diff::{file_count, Diff};
use crate::policy::{violation, ConfigError};

/// Regex lists per signal. Risk patterns are matched against added lines,
/// path patterns against the file path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalPatterns {
    pub secrets: Vec<String>,
    pub sql_injection: Vec<String>,
    pub auth_bypass: Vec<String>,
    pub performance: Vec<String>,
    pub logic_error: Vec<String>,
    pub structural: Vec<String>,
    pub logging: Vec<String>,
    pub imports: Vec<String>,
    pub comments: Vec<String>,
    pub guards: Vec<String>,
    pub defensive_filler: Vec<String>,
    pub test_paths: Vec<String>,
    pub static_paths: Vec<String>,
    pub doc_paths: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for SignalPatterns {
    fn default() -> Self {
        Self {
            secrets: strings(&[
                r"(?i)\baws_secret\w*\s*[:=]",
                r"\bAKIA[0-9A-Z]{16}\b",
                r"-----BEGIN [A-Z ]*PRIVATE KEY-----",
                r#"(?i)\b(password|passwd|api_key|apikey|secret_key|access_token|auth_token)\s*[:=]\s*["'][^"']+["']"#,
            ]),
            sql_injection: strings(&[
                r#"(?i)\b(select|insert|update|delete)\b[^;]*["']\s*(\+|%\s|\.format\()"#,
                r#"(?i)\bexecute\(\s*f["']"#,
            ]),
            auth_bypass: strings(&[
                r"(?i)\b(skip|bypass|disable)_?(auth|authentication|authz|csrf)\b",
                r"(?i)\bverify\s*=\s*false\b",
            ]),
            performance: strings(&[
                r"\bsleep\s*\(",
                r"(?i)\bwhile\s*\(?\s*true\s*\)?\s*[:{]",
                r"(?i)\bselect\s+\*\s+from\b",
            ]),
            logic_error: strings(&[r"\bFIXME\b", r"\bXXX\b", r"(?i)\bhack\b"]),
            structural: strings(&[
                r"^\s*(pub(\([a-z]+\))?\s+)?(abstract\s+|final\s+)?(class|struct|interface|trait|enum|mod|module|namespace)\s+\w+",
            ]),
            logging: strings(&[
                r"^\s*(log|logger|logging|LOG|tracing|slog)(::|\.)\w+",
                r"^\s*(println|eprintln|print|printf|console\.log|console\.error)\s*!?\(",
                r"^\s*(debug|info|warn|error|trace)!\(",
            ]),
            imports: strings(&[
                r"^\s*use\s+[\w:{}, *]+;\s*$",
                r"^\s*import\s+\S",
                r"^\s*from\s+\S+\s+import\s",
                r"^\s*#include\s",
                r"^\s*(const|let|var)\s+\w+\s*=\s*require\(",
            ]),
            comments: strings(&[r"^\s*(//|/\*|\*|--|<!--)", r#"^\s*""""#, r"^\s*#(\s|$)"]),
            guards: strings(&[
                r"^\s*(if|guard|unless)\b.*(\bnull\b|\bnil\b|\bNone\b|is_none|is_empty|len\(\)\s*==\s*0|<\s*0|is_err|undefined)",
                r"^\s*(assert|debug_assert|require|precondition|check)\w*!?\(",
            ]),
            defensive_filler: strings(&[
                r"^\s*(return|raise|throw)\b",
                r"^\s*[{}()\[\];,]*\s*(else)?\s*[{}]?\s*$",
            ]),
            test_paths: strings(&[
                r"(^|/)tests?/",
                r"_test\.\w+$",
                r"\.test\.\w+$",
                r"(^|/)test_\w+\.py$",
                r"Test\.\w+$",
                r"_spec\.\w+$",
            ]),
            static_paths: strings(&[
                r"(?i)\.(png|jpe?g|gif|svg|ico|webp|css|woff2?|ttf|otf|mp3|wav)$",
            ]),
            doc_paths: strings(&[r"(?i)\.(md|rst|adoc)$", r"(^|/)docs?/"]),
        }
    }
}

impl SignalPatterns {
    fn lists(&self) -> [(&'static str, &Vec<String>); 14] {
        [
            ("secrets", &self.secrets),
            ("sql_injection", &self.sql_injection),
            ("auth_bypass", &self.auth_bypass),
            ("performance", &self.performance),
            ("logic_error", &self.logic_error),
            ("structural", &self.structural),
            ("logging", &self.logging),
            ("imports", &self.imports),
            ("comments", &self.comments),
            ("guards", &self.guards),
            ("defensive_filler", &self.defensive_filler),
            ("test_paths", &self.test_paths),
            ("static_paths", &self.static_paths),
            ("doc_paths", &self.doc_paths),
        ]
    }

    pub(crate) fn validate(&self) -> Result<(), ConfigError> {
        for (name, list) in self.lists() {
            for (i, p) in list.iter().enumerate() {
                Regex::new(p)
                    .map_err(|e| violation(format!("acr.patterns.{name}[{i}]"), e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct RegexSet(Vec<Regex>);

impl RegexSet {
    fn new(patterns: &[String]) -> Result<Self, regex::Error> {
        patterns.iter().map(|p| Regex::new(p)).collect::<Result<_, _>>().map(Self)
    }

    fn first_match(&self, text: &str) -> Option<&Regex> {
        self.0.iter().find(|r| r.is_match(text))
    }

    fn matches(&self, text: &str) -> bool {
        self.first_match(text).is_some()
    }
}

/// Compiled patterns.
#[derive(Debug, Clone)]
pub(crate) struct Rules {
    secrets: RegexSet,
    sql_injection: RegexSet,
    auth_bypass: RegexSet,
    performance: RegexSet,
    logic_error: RegexSet,
    structural: RegexSet,
    logging: RegexSet,
    imports: RegexSet,
    comments: RegexSet,
    guards: RegexSet,
    defensive_filler: RegexSet,
    test_paths: RegexSet,
    static_paths: RegexSet,
    doc_paths: RegexSet,
}

impl Rules {
    pub(crate) fn compile(p: &SignalPatterns) -> Result<Self, ConfigError> {
        p.validate()?;
        let c = |v: &Vec<String>| RegexSet::new(v).expect("validated above");
        Ok(Self {
            secrets: c(&p.secrets),
            sql_injection: c(&p.sql_injection),
            auth_bypass: c(&p.auth_bypass),
            performance: c(&p.performance),
            logic_error: c(&p.logic_error),
            structural: c(&p.structural),
            logging: c(&p.logging),
            imports: c(&p.imports),
            comments: c(&p.comments),
            guards: c(&p.guards),
            defensive_filler: c(&p.defensive_filler),
            test_paths: c(&p.test_paths),
            static_paths: c(&p.static_paths),
            doc_paths: c(&p.doc_paths),
        })
    }
}

#[derive(Debug, Default)]
struct HunkLines<'a> {
    added: Vec<&'a str>,
    removed: Vec<&'a str>,
}

fn split_hunks<'a>(hunk_texts: &'a [String]) -> HunkLines<'a> {
    let mut out = HunkLines::default();
    for text in hunk_texts {
        let mut in_body = false;
        for line in text.lines() {
            if line.starts_with("@@") {
                in_body = true;
                continue;
            }
            if !in_body && (line.starts_with("+++") || line.starts_with("---")) {
                continue;
            }
            if let Some(rest) = line.strip_prefix('+') {
                out.added.push(rest);
            } else if let Some(rest) = line.strip_prefix('-') {
                out.removed.push(rest);
            }
        }
    }
    out
}

fn non_blank<'a>(lines: &[&'a str]) -> Vec<&'a str> {
    lines.iter().copied().filter(|l| !l.trim().is_empty()).collect()
}

fn squash(lines: &[&str]) -> String {
    lines
        .iter()
        .flat_map(|l| l.chars().filter(|c| !c.is_whitespace()))
        .collect()
}

#[derive(Debug, PartialEq, Eq)]
enum Token<'a> {
    Ident(&'a str),
    Punct(char),
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in line.char_indices() {
        let word = ch.is_alphanumeric() || ch == '_';
        match (word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token::Ident(&line[s..i]));
                start = None;
            }
            _ => {}
        }
        if !word && !ch.is_whitespace() {
            out.push(Token::Punct(ch));
        }
    }
    if let Some(s) = start {
        out.push(Token::Ident(&line[s..]));
    }
    out
}

/// Removed and added lines pair up one-to-one and differ only by a
/// consistent identifier renaming.
fn is_consistent_rename(removed: &[&str], added: &[&str]) -> bool {
    if removed.is_empty() || removed.len() != added.len() {
        return false;
    }
    let mut forward: BTreeMap<&str, &str> = BTreeMap::new();
    let mut backward: BTreeMap<&str, &str> = BTreeMap::new();
    let mut renamed = false;
    for (r, a) in removed.iter().zip(added) {
        let (rt, at) = (tokenize(r), tokenize(a));
        if rt.len() != at.len() {
            return false;
        }
        for (x, y) in rt.iter().zip(&at) {
            match (x, y) {
                (Token::Punct(p), Token::Punct(q)) if p == q => {}
                (Token::Ident(old), Token::Ident(new)) => {
                    if old == new {
                        continue;
                    }
                    if old.starts_with(|c: char| c.is_ascii_digit())
                        || new.starts_with(|c: char| c.is_ascii_digit())
                    {
                        return false;
                    }
                    if *forward.entry(old).or_insert(new) != *new
                        || *backward.entry(new).or_insert(old) != *old
                    {
                        return false;
                    }
                    renamed = true;
                }
                _ => return false,
            }
        }
    }
    renamed
}

/// Same multiset of trimmed lines in a different order.
fn is_pure_reorder(removed: &[&str], added: &[&str]) -> bool {
    if removed.is_empty() || removed.len() != added.len() {
        return false;
    }
    let r: Vec<&str> = removed.iter().map(|l| l.trim()).collect();
    let a: Vec<&str> = added.iter().map(|l| l.trim()).collect();
    if r == a {
        return false;
    }
    let (mut rs, mut as_) = (r, a);
    rs.sort_unstable();
    as_.sort_unstable();
    rs == as_
}

fn classify_with(rules: &Rules, hunk_texts: &[String], path: &str) -> ChangeClassification {
    let lines = split_hunks(hunk_texts);
    let added = non_blank(&lines.added);
    let removed = non_blank(&lines.removed);
    let mut out = ChangeClassification::default();

    for line in &added {
        let checks: [(&RegexSet, RiskKind); 6] = [
            (&rules.secrets, RiskKind::SecurityVulnerability),
            (&rules.sql_injection, RiskKind::SecurityVulnerability),
            (&rules.auth_bypass, RiskKind::SecurityVulnerability),
            (&rules.performance, RiskKind::PerformanceRisk),
            (&rules.logic_error, RiskKind::BugOrLogicError),
            (&rules.structural, RiskKind::SubstantialStructuralChange),
        ];
        for (set, kind) in checks {
            if let Some(re) = set.first_match(line) {
                out.risk
                    .insert(RiskSignal::new(kind, format!("{path}: matches `{}`", re.as_str())));
            }
        }
    }

    let changed: Vec<&str> = added.iter().chain(&removed).copied().collect();
    let all = |set: &RegexSet, ls: &[&str]| !ls.is_empty() && ls.iter().all(|l| set.matches(l));

    if rules.static_paths.matches(path) {
        out.safe.insert(SafeSignal::StaticResourceUpdate);
    }
    let doc_change = rules.doc_paths.matches(path) || all(&rules.comments, &changed);
    if doc_change && !changed.is_empty() {
        out.safe.insert(SafeSignal::DocCommentUpdate);
    }
    if !changed.is_empty() && squash(&lines.removed) == squash(&lines.added) && lines.removed != lines.added {
        out.safe.insert(SafeSignal::PureFormatting);
    }
    if added.is_empty()
        && removed
            .iter()
            .any(|l| !rules.comments.matches(l) && !rules.imports.matches(l))
    {
        out.safe.insert(SafeSignal::DeadCodeRemoval);
    }
    if removed.is_empty() && all(&rules.logging, &added) {
        out.safe.insert(SafeSignal::LoggingAddition);
    }
    if all(&rules.imports, &changed) {
        out.safe.insert(SafeSignal::ImportHygiene);
    }
    if removed.is_empty() && !added.is_empty() && rules.test_paths.matches(path) {
        out.safe.insert(SafeSignal::TestAddition);
    }
    let added_trimmed: BTreeSet<&str> = added.iter().map(|l| l.trim()).collect();
    if added.iter().any(|l| rules.guards.matches(l))
        && added
            .iter()
            .all(|l| rules.guards.matches(l) || rules.defensive_filler.matches(l) || rules.logging.matches(l))
        && removed.iter().all(|l| added_trimmed.contains(l.trim()))
    {
        out.safe.insert(SafeSignal::DefensiveProgramming);
    }
    if !out.safe.contains(&SafeSignal::PureFormatting)
        && !all(&rules.comments, &changed)
        && (is_consistent_rename(&removed, &added) || is_pure_reorder(&removed, &added))
    {
        out.safe.insert(SafeSignal::RefactorNoBehaviorChange);
    }
    out
}

/// Classifies one change with the default patterns.
pub fn classify_change(hunk_texts: &[String], path: &str) -> ChangeClassification {
    thread_local! {
        static DEFAULT: Rules = Rules::compile(&SignalPatterns::default()).expect("default patterns compile");
    }
    DEFAULT.with(|r| classify_with(r, hunk_texts, path))
}

/// Rule-based backend. Confidence is 10 minus penalties, floored at 0.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    rules: Rules,
    penalty_mixed: u8,
    penalty_many_files: u8,
    many_files_threshold: usize,
}

impl RuleBackend {
    pub fn new(config: &AcrConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            rules: Rules::compile(&config.patterns)?,
            penalty_mixed: config.penalty_mixed_safe_kinds,
            penalty_many_files: config.penalty_many_files,
            many_files_threshold: config.many_files_threshold,
        })
    }

    pub fn classify(&self, hunk_texts: &[String], path: &str) -> ChangeClassification {
        classify_with(&self.rules, hunk_texts, path)
    }
}

impl ReviewBackend for RuleBackend {
    fn assess(&self, diff: &Diff) -> Result<BackendAssessment, BackendError> {
        let per_change: Vec<ChangeClassification> = diff
            .changes
            .iter()
            .map(|c| self.classify(&c.hunk_texts, &c.path))
            .collect();
        let mut confidence: u8 = 10;
        if per_change.iter().any(|c| c.safe.len() > 1) {
            confidence = confidence.saturating_sub(self.penalty_mixed);
        }
        if file_count(diff) > self.many_files_threshold {
            confidence = confidence.saturating_sub(self.penalty_many_files);
        }
        Ok(BackendAssessment {
            per_change,
            confidence,
        })
    }
}
