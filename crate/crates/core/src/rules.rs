//! Natural-language rules compiled into hard constraints or guidance.
//!
//! The grammar is small: a modal keyword, one or more action verbs, and a
//! target (a quoted path, a token containing `/`, or a category keyword).
//! Anything that does not yield all three is kept as behavioral guidance.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::governance::{compile_glob, Effect, HardConstraint};
use crate::memory::guidance::tokenize;
use crate::memory::{
    EventContext, GuidanceStore, MemoryError, SnippetSource, TraceBody, TraceStore,
};
use crate::types::{ActionKind, ChangeCategory};

pub const RULES_FILE: &str = "rules.json";

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule text is empty")]
    EmptyRule,
    #[error("no rule with id `{0}`")]
    UnknownRule(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    HardConstraint,
    BehavioralGuidance,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::HardConstraint => "hard_constraint",
            Classification::BehavioralGuidance => "behavioral_guidance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "classification", rename_all = "snake_case")]
pub enum Compiled {
    HardConstraint {
        effect: Effect,
        action_filter: BTreeSet<ActionKind>,
        #[serde(default)]
        path_glob: String,
        #[serde(default)]
        category_filter: Option<BTreeSet<ChangeCategory>>,
    },
    BehavioralGuidance {
        topics: BTreeSet<String>,
    },
}

impl Compiled {
    pub fn classification(&self) -> Classification {
        match self {
            Compiled::HardConstraint { .. } => Classification::HardConstraint,
            Compiled::BehavioralGuidance { .. } => Classification::BehavioralGuidance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleInterpretation {
    pub classification: Classification,
    pub source_text: String,
    pub compiled: Compiled,
    /// Human-readable echo shown before confirmation.
    pub rendering: String,
}

impl RuleInterpretation {
    /// The constraint this rule enforces once it has an id.
    pub fn constraint(&self, id: &str) -> Option<HardConstraint> {
        match &self.compiled {
            Compiled::HardConstraint {
                effect,
                action_filter,
                path_glob,
                category_filter,
            } => Some(HardConstraint {
                id: id.to_string(),
                action_filter: action_filter.clone(),
                path_glob: path_glob.clone(),
                category_filter: category_filter.clone(),
                effect: *effect,
                source_text: self.source_text.clone(),
            }),
            Compiled::BehavioralGuidance { .. } => None,
        }
    }
}

/// Replaceable rule classifier, e.g. one backed by a language model.
pub trait ClassifierAdapter {
    fn classify(&self, text: &str) -> Result<RuleInterpretation, RuleError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PatternClassifier;

impl ClassifierAdapter for PatternClassifier {
    fn classify(&self, text: &str) -> Result<RuleInterpretation, RuleError> {
        compile_rule(text)
    }
}

const FORBID_PHRASES: [&str; 5] = ["never", "must not", "do not", "don't", "dont"];
const CHECKIN_PHRASES: [&str; 4] = [
    "always",
    "require approval",
    "requires approval",
    "ask before",
];
const SOFTENERS: [&str; 5] = [
    "without approval",
    "without my approval",
    "without asking",
    "without asking me",
    "without checking in",
];

fn has_phrase(padded: &str, phrase: &str) -> bool {
    padded.contains(&format!(" {phrase} "))
}

fn verb_actions(word: &str) -> Option<&'static [ActionKind]> {
    const WRITE: &[ActionKind] = &[ActionKind::Apply, ActionKind::RunCommand];
    const APPLY: &[ActionKind] = &[ActionKind::Apply];
    const RUN: &[ActionKind] = &[ActionKind::RunCommand];
    const READ: &[ActionKind] = &[ActionKind::Read];
    let actions = match word {
        "write" | "writes" | "writing" | "written" => WRITE,
        "edit" | "edits" | "editing" | "modify" | "modifies" | "modifying" | "delete"
        | "deletes" | "deleting" | "create" | "creates" | "creating" | "touch" | "touches"
        | "touching" => APPLY,
        "run" | "runs" | "running" => RUN,
        "read" | "reads" | "reading" => READ,
        _ => return None,
    };
    Some(actions)
}

fn category_keyword(word: &str) -> Option<ChangeCategory> {
    match word {
        "api" | "apis" => Some(ChangeCategory::Api),
        "schema" | "schemas" => Some(ChangeCategory::DataModel),
        "config" | "configs" | "configuration" => Some(ChangeCategory::Config),
        "security" => Some(ChangeCategory::Security),
        "test" | "tests" => Some(ChangeCategory::Test),
        "doc" | "docs" | "documentation" => Some(ChangeCategory::Doc),
        _ => None,
    }
}

fn is_glob_char(c: char) -> bool {
    matches!(c, '*' | '?' | '[' | '{')
}

/// Repository-relative glob for a path mentioned in a rule.
pub fn normalize_target(raw: &str) -> String {
    let path = raw.trim().trim_start_matches("./");
    if path.chars().any(is_glob_char) {
        return path.to_string();
    }
    if let Some(dir) = path.strip_suffix('/') {
        return format!("{}/**", dir.trim_end_matches('/'));
    }
    let last = path.rsplit('/').next().unwrap_or(path);
    if last.contains('.') {
        path.to_string()
    } else {
        format!("{path}/**")
    }
}

fn quoted_spans(text: &str) -> Vec<String> {
    let mut spans = Vec::new();
    for q in ['"', '`', '\''] {
        let parts: Vec<&str> = text.split(q).collect();
        for inner in parts.iter().skip(1).step_by(2).take((parts.len() - 1) / 2) {
            let inner = inner.trim();
            if !inner.is_empty() && !inner.contains(' ') {
                spans.push(inner.to_string());
            }
        }
    }
    spans
}

fn strip_punct(word: &str) -> &str {
    word.trim_matches(|c: char| {
        matches!(
            c,
            ',' | ';' | ':' | '(' | ')' | '!' | '?' | '"' | '`' | '\''
        )
    })
    .trim_end_matches('.')
}

struct Parsed {
    effect: Option<Effect>,
    actions: BTreeSet<ActionKind>,
    paths: Vec<String>,
    categories: BTreeSet<ChangeCategory>,
}

fn parse(text: &str) -> Parsed {
    let lower = text.to_lowercase();
    let padded = format!(
        " {} ",
        lower
            .split_whitespace()
            .map(strip_punct)
            .collect::<Vec<_>>()
            .join(" ")
    );
    let forbid = FORBID_PHRASES.iter().any(|p| has_phrase(&padded, p));
    let checkin = CHECKIN_PHRASES.iter().any(|p| has_phrase(&padded, p));
    let softened = SOFTENERS.iter().any(|p| has_phrase(&padded, p));
    let effect = match (forbid, checkin) {
        (true, _) if softened => Some(Effect::RequireCheckIn),
        (true, _) => Some(Effect::Forbid),
        (false, true) => Some(Effect::RequireCheckIn),
        (false, false) => None,
    };

    let mut actions = BTreeSet::new();
    let mut paths: Vec<String> = quoted_spans(text)
        .into_iter()
        .filter(|s| s.contains('/') || s.contains('.'))
        .map(|s| normalize_target(&s))
        .collect();
    let mut categories = BTreeSet::new();
    for raw in lower.split_whitespace() {
        let word = strip_punct(raw);
        if word.contains('/') {
            let target = normalize_target(word.trim_matches(|c| c == '"' || c == '`' || c == '\''));
            if !paths.contains(&target) {
                paths.push(target);
            }
            continue;
        }
        if let Some(kinds) = verb_actions(word) {
            actions.extend(kinds.iter().copied());
        }
        if let Some(cat) = category_keyword(word) {
            categories.insert(cat);
        }
    }
    Parsed {
        effect,
        actions,
        paths,
        categories,
    }
}

fn guidance(text: &str, reason: &str) -> RuleInterpretation {
    let topics = tokenize(text);
    let listed: Vec<&str> = topics.iter().map(String::as_str).collect();
    RuleInterpretation {
        classification: Classification::BehavioralGuidance,
        source_text: text.to_string(),
        rendering: format!(
            "behavioral guidance ({reason}); stored for retrieval on topics: {}",
            listed.join(", ")
        ),
        compiled: Compiled::BehavioralGuidance { topics },
    }
}

/// Classifies one rule. Pure: the same text always compiles the same way.
pub fn compile_rule(text: &str) -> Result<RuleInterpretation, RuleError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(RuleError::EmptyRule);
    }
    let parsed = parse(text);
    let Some(effect) = parsed.effect else {
        return Ok(guidance(text, "no enforcement keyword"));
    };
    if parsed.actions.is_empty() {
        return Ok(guidance(
            text,
            "enforcement keyword found but no recognizable action",
        ));
    }
    if parsed.paths.is_empty() && parsed.categories.is_empty() {
        return Ok(guidance(
            text,
            "enforcement keyword found but no path or category target",
        ));
    }
    let path_glob = match parsed.paths.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        many => format!("{{{}}}", many.join(",")),
    };
    if !path_glob.is_empty() && compile_glob(&path_glob).is_err() {
        return Ok(guidance(text, "target path is not a valid glob"));
    }
    let category_filter = (!parsed.categories.is_empty()).then_some(parsed.categories);
    let compiled = Compiled::HardConstraint {
        effect,
        action_filter: parsed.actions,
        path_glob,
        category_filter,
    };
    let mut interp = RuleInterpretation {
        classification: Classification::HardConstraint,
        source_text: text.to_string(),
        compiled,
        rendering: String::new(),
    };
    let described = interp
        .constraint("")
        .map(|c| c.describe())
        .unwrap_or_default();
    interp.rendering = format!("hard constraint: {described}");
    Ok(interp)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRule {
    pub id: String,
    pub source_text: String,
    #[serde(flatten)]
    pub compiled: Compiled,
}

impl StoredRule {
    pub fn classification(&self) -> Classification {
        self.compiled.classification()
    }

    pub fn constraint(&self) -> Option<HardConstraint> {
        RuleInterpretation {
            classification: self.classification(),
            source_text: self.source_text.clone(),
            compiled: self.compiled.clone(),
            rendering: String::new(),
        }
        .constraint(&self.id)
    }
}

/// The rule set persisted in `rules.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleStore {
    rules: Vec<StoredRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PersistOutcome {
    Persisted { id: String },
    Discarded,
}

impl RuleStore {
    pub fn load(dir: &Path) -> Result<Self, RuleError> {
        match fs::read_to_string(dir.join(RULES_FILE)) {
            Ok(text) => Ok(Self {
                rules: serde_json::from_str(&text)?,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), RuleError> {
        let tmp = dir.join(format!("{RULES_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&self.rules)?)?;
        fs::rename(tmp, dir.join(RULES_FILE))?;
        Ok(())
    }

    pub fn rules(&self) -> &[StoredRule] {
        &self.rules
    }

    pub fn constraints(&self) -> Vec<HardConstraint> {
        self.rules
            .iter()
            .filter_map(StoredRule::constraint)
            .collect()
    }

    fn next_id(&self) -> String {
        let max = self
            .rules
            .iter()
            .filter_map(|r| r.id.strip_prefix('r')?.parse::<u32>().ok())
            .max()
            .unwrap_or(0);
        format!("r{}", max + 1)
    }

    pub fn add(&mut self, interp: &RuleInterpretation) -> String {
        let id = self.next_id();
        self.rules.push(StoredRule {
            id: id.clone(),
            source_text: interp.source_text.clone(),
            compiled: interp.compiled.clone(),
        });
        id
    }

    pub fn remove(&mut self, id: &str) -> Result<StoredRule, RuleError> {
        let idx = self
            .rules
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| RuleError::UnknownRule(id.to_string()))?;
        Ok(self.rules.remove(idx))
    }

    /// Pairs of (forbid id, check-in id) whose scopes overlap. Forbid wins
    /// at evaluation time.
    pub fn conflicts(&self) -> Vec<(String, String)> {
        let cs = self.constraints();
        let mut out = Vec::new();
        for f in cs.iter().filter(|c| c.effect == Effect::Forbid) {
            for r in cs.iter().filter(|c| c.effect == Effect::RequireCheckIn) {
                if overlaps(f, r) {
                    out.push((f.id.clone(), r.id.clone()));
                }
            }
        }
        out
    }
}

fn glob_base(glob: &str) -> &str {
    let cut = glob.find(is_glob_char).unwrap_or(glob.len());
    glob[..cut].trim_end_matches('/')
}

fn overlaps(a: &HardConstraint, b: &HardConstraint) -> bool {
    if a.action_filter.is_disjoint(&b.action_filter) {
        return false;
    }
    if let (Some(x), Some(y)) = (&a.category_filter, &b.category_filter) {
        if x.is_disjoint(y) {
            return false;
        }
    }
    if a.path_glob.is_empty() || b.path_glob.is_empty() {
        return true;
    }
    let probe = |g: &str, other: &str| compile_glob(g).is_ok_and(|m| m.is_match(glob_base(other)));
    probe(&a.path_glob, &b.path_glob)
        || probe(&b.path_glob, &a.path_glob)
        || glob_base(&a.path_glob).starts_with(glob_base(&b.path_glob))
        || glob_base(&b.path_glob).starts_with(glob_base(&a.path_glob))
}

/// Persists a confirmed rule and records it in the trace. Guidance rules
/// also become retrievable snippets.
pub fn confirm_and_persist(
    interp: &RuleInterpretation,
    confirmed: bool,
    rules: &mut RuleStore,
    guidance: &mut GuidanceStore,
    trace: &mut TraceStore,
    ctx: &EventContext,
) -> Result<PersistOutcome, RuleError> {
    if !confirmed {
        return Ok(PersistOutcome::Discarded);
    }
    let id = rules.add(interp);
    if interp.classification == Classification::BehavioralGuidance {
        guidance.add(
            &interp.source_text,
            SnippetSource::Rule {
                rule_id: id.clone(),
            },
        )?;
    }
    trace.record(
        ctx,
        TraceBody::RuleAdded {
            rule_id: id.clone(),
            classification: interp.classification.as_str().to_string(),
        },
    )?;
    Ok(PersistOutcome::Persisted { id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActionProposal, Phase};

    fn kinds(ks: &[ActionKind]) -> BTreeSet<ActionKind> {
        ks.iter().copied().collect()
    }

    fn apply_on(path: &str) -> ActionProposal {
        ActionProposal {
            id: 1,
            action_kind: ActionKind::Apply,
            paths: vec![path.to_string()],
            change_category: ChangeCategory::General,
            diff_lines: 5,
            files_touched: 1,
            model_confidence: 0.9,
            phase: Phase::Implementation,
            rationale: String::new(),
        }
    }

    #[test]
    fn prod_config_rule_forbids_writes() {
        let i = compile_rule("never write to files under config/prod/").unwrap();
        assert_eq!(
            i.compiled,
            Compiled::HardConstraint {
                effect: Effect::Forbid,
                action_filter: kinds(&[ActionKind::Apply, ActionKind::RunCommand]),
                path_glob: "config/prod/**".into(),
                category_filter: None,
            }
        );
        let c = i.constraint("r1").unwrap();
        assert!(c.matches(&apply_on("config/prod/db.yaml")));
        assert!(c.matches(&apply_on("config/prod/nested/x.yaml")));
        assert!(!c.matches(&apply_on("config/dev/db.yaml")));
    }

    #[test]
    fn soft_preference_becomes_guidance() {
        let i = compile_rule(
            "for routine backend changes, reuse existing validation helpers and avoid creating new files unless clearly necessary",
        )
        .unwrap();
        assert_eq!(i.classification, Classification::BehavioralGuidance);
        assert!(i.rendering.starts_with("behavioral guidance"));
    }

    #[test]
    fn ask_before_modifying_handler_requires_checkin() {
        let i = compile_rule(
            "always ask before modifying public handler signatures in task_api/api.py",
        )
        .unwrap();
        assert_eq!(
            i.compiled,
            Compiled::HardConstraint {
                effect: Effect::RequireCheckIn,
                action_filter: kinds(&[ActionKind::Apply]),
                path_glob: "task_api/api.py".into(),
                category_filter: None,
            }
        );
        assert!(i
            .constraint("r1")
            .unwrap()
            .matches(&apply_on("task_api/api.py")));
    }

    #[test]
    fn modal_without_target_falls_back_with_reason() {
        let i = compile_rule("never delete anything important").unwrap();
        assert_eq!(i.classification, Classification::BehavioralGuidance);
        assert!(i.rendering.contains("no path or category target"));
    }

    #[test]
    fn category_keyword_target() {
        let i = compile_rule("do not touch schema files").unwrap();
        let c = i.constraint("r1").unwrap();
        assert_eq!(c.category_filter, Some([ChangeCategory::DataModel].into()));
        assert_eq!(c.effect, Effect::Forbid);
    }

    #[test]
    fn without_approval_softens_to_checkin() {
        let i = compile_rule("never edit \"migrations/\" without my approval").unwrap();
        let c = i.constraint("r1").unwrap();
        assert_eq!(c.effect, Effect::RequireCheckIn);
        assert_eq!(c.path_glob, "migrations/**");
    }

    #[test]
    fn empty_rule_is_an_error() {
        assert!(matches!(compile_rule("   "), Err(RuleError::EmptyRule)));
    }

    #[test]
    fn confirmation_controls_persistence() {
        let mut rules = RuleStore::default();
        let mut guidance = GuidanceStore::in_memory();
        let mut trace = TraceStore::in_memory();
        let ctx = EventContext::live("cli", "repo");
        let i = compile_rule("never write to files under config/prod/").unwrap();
        let out =
            confirm_and_persist(&i, false, &mut rules, &mut guidance, &mut trace, &ctx).unwrap();
        assert_eq!(out, PersistOutcome::Discarded);
        assert!(rules.rules().is_empty() && trace.is_empty());

        let a = confirm_and_persist(&i, true, &mut rules, &mut guidance, &mut trace, &ctx).unwrap();
        let b = confirm_and_persist(&i, true, &mut rules, &mut guidance, &mut trace, &ctx).unwrap();
        assert_eq!(a, PersistOutcome::Persisted { id: "r1".into() });
        assert_eq!(b, PersistOutcome::Persisted { id: "r2".into() });
        assert_eq!(rules.constraints().len(), 2);
        assert_eq!(trace.len(), 2);
    }

    #[test]
    fn guidance_rules_are_retrievable() {
        let mut rules = RuleStore::default();
        let mut guidance = GuidanceStore::in_memory();
        let mut trace = TraceStore::in_memory();
        let ctx = EventContext::live("cli", "repo");
        let i = compile_rule("reuse existing validation helpers").unwrap();
        confirm_and_persist(&i, true, &mut rules, &mut guidance, &mut trace, &ctx).unwrap();
        assert_eq!(
            guidance.retrieve("add validation to the handler", 3).len(),
            1
        );
    }

    #[test]
    fn conflicts_are_reported() {
        let mut rules = RuleStore::default();
        rules.add(&compile_rule("never write to files under config/prod/").unwrap());
        rules.add(&compile_rule("always ask before editing config/").unwrap());
        rules.add(&compile_rule("always ask before editing docs/").unwrap());
        assert_eq!(
            rules.conflicts(),
            vec![("r1".to_string(), "r2".to_string())]
        );
    }

    #[test]
    fn store_round_trip_and_remove() {
        let dir = tempfile::tempdir().unwrap();
        let mut rules = RuleStore::default();
        rules.add(&compile_rule("never write to files under config/prod/").unwrap());
        rules.add(&compile_rule("keep handlers thin").unwrap());
        rules.save(dir.path()).unwrap();
        let mut back = RuleStore::load(dir.path()).unwrap();
        assert_eq!(back, rules);
        back.remove("r1").unwrap();
        assert!(matches!(back.remove("r1"), Err(RuleError::UnknownRule(_))));
        assert_eq!(back.rules().len(), 1);
    }

    #[test]
    fn compilation_is_deterministic() {
        for text in [
            "never write to files under config/prod/",
            "always run tests",
            "be nice",
        ] {
            assert_eq!(compile_rule(text).unwrap(), compile_rule(text).unwrap());
        }
    }
}
