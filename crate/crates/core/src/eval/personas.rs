//! Synthetic developer personas and trace seeding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::memory::{record_preference_change, DecisionRecord, EventContext, TraceBody};
use crate::policy::{
    default_state, extract_features, is_security_sensitive, sgd_update, Feature, FeatureVector,
    SessionStats, SimilarityKey,
};
use crate::types::{
    ActionKind, ActionProposal, AutonomyPreference, ChangeCategory, Decision, Initiator, Phase,
    PreferenceName, Verdict,
};
use crate::workspace::Stores;

pub const DECISION_COUNT: usize = 20;
pub const REPLAY_FACTOR: usize = 3;
/// Seed approval rate at or above which relaxing preferences are inferred.
pub const PREFERENCE_RATE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaName {
    Cautious,
    Permissive,
    Mixed,
}

impl PersonaName {
    pub const ALL: [PersonaName; 3] = [
        PersonaName::Cautious,
        PersonaName::Permissive,
        PersonaName::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PersonaName::Cautious => "cautious",
            PersonaName::Permissive => "permissive",
            PersonaName::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for PersonaName {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cautious" => Ok(PersonaName::Cautious),
            "permissive" => Ok(PersonaName::Permissive),
            "mixed" => Ok(PersonaName::Mixed),
            other => Err(EvalError::UnknownPersona(other.to_string())),
        }
    }
}

/// One synthetic action a persona rules on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub action_kind: ActionKind,
    pub category: ChangeCategory,
    pub paths: Vec<String>,
    pub diff_lines: u32,
    pub model_confidence: f64,
}

impl Scenario {
    pub fn apply(
        category: ChangeCategory,
        paths: &[&str],
        diff_lines: u32,
        model_confidence: f64,
    ) -> Self {
        Self {
            action_kind: ActionKind::Apply,
            category,
            paths: paths.iter().map(|p| p.to_string()).collect(),
            diff_lines,
            model_confidence,
        }
    }

    pub fn files(&self) -> u32 {
        let mut p = self.paths.clone();
        p.sort();
        p.dedup();
        p.len() as u32
    }

    pub fn security_sensitive(&self) -> bool {
        is_security_sensitive(self.category, &self.paths)
    }

    pub fn proposal(&self, id: u64) -> ActionProposal {
        let phase = match self.action_kind {
            ActionKind::Read | ActionKind::CheckIn => Phase::Research,
            ActionKind::Plan => Phase::Planning,
            ActionKind::Apply | ActionKind::RunCommand => Phase::Implementation,
        };
        ActionProposal {
            id,
            action_kind: self.action_kind,
            paths: self.paths.clone(),
            change_category: self.category,
            diff_lines: if self.action_kind.is_diffless() {
                0
            } else {
                self.diff_lines
            },
            files_touched: self.files(),
            model_confidence: self.model_confidence,
            phase,
            rationale: String::new(),
        }
    }
}

/// A persona: behavioral rules plus the scenarios they are applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaProfile {
    pub name: PersonaName,
    pub scenarios: Vec<Scenario>,
    pub decision_count: usize,
    pub replay_factor: usize,
}

/// Whether `persona` approves `s`. Total over every scenario.
pub fn approves(persona: PersonaName, s: &Scenario) -> bool {
    let sensitive = s.security_sensitive();
    match persona {
        PersonaName::Cautious => {
            !sensitive
                && !matches!(
                    s.category,
                    ChangeCategory::Api
                        | ChangeCategory::DataModel
                        | ChangeCategory::Config
                        | ChangeCategory::Security
                )
        }
        PersonaName::Permissive => !(sensitive && s.files() >= 6 && s.diff_lines >= 300),
        PersonaName::Mixed => {
            if matches!(s.category, ChangeCategory::Test | ChangeCategory::Doc) && !sensitive {
                true
            } else {
                !(sensitive || (s.files() >= 3 && s.diff_lines >= 120))
            }
        }
    }
}

use ChangeCategory::{Api, Config, DataModel, Doc, General, Security, Test};

fn cautious_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::apply(
            General,
            &["task_api/models.py", "task_api/service.py"],
            210,
            0.6,
        ),
        Scenario::apply(Doc, &["CHANGELOG.md"], 90, 0.7),
        Scenario::apply(Doc, &["README.md"], 3, 0.85),
        Scenario::apply(General, &["tools/lint.py"], 500, 0.6),
        Scenario::apply(Doc, &["docs/architecture.md", "docs/setup.md"], 35, 0.7),
        Scenario::apply(Test, &["tests/test_api.py"], 90, 0.65),
        Scenario::apply(Doc, &["CHANGELOG.md"], 80, 0.8),
        // Large test additions are fine: the pattern is low risk.
        Scenario::apply(Test, &["tests/test_api.py", "tests/conftest.py"], 400, 0.6),
        Scenario::apply(General, &["setup.py"], 460, 0.6),
        Scenario::apply(General, &["Makefile"], 220, 0.8),
        Scenario::apply(
            General,
            &["scripts/export.py", "scripts/seed_db.py"],
            320,
            0.6,
        ),
        Scenario::apply(Api, &["task_api/api.py"], 310, 0.3),
        Scenario::apply(Api, &["task_api/api.py", "task_api/service.py"], 460, 0.3),
        Scenario::apply(Config, &["config/secrets.yaml"], 150, 0.55),
        Scenario::apply(Api, &["task_api/routes.py", "task_api/api.py"], 330, 0.3),
        Scenario::apply(DataModel, &["task_api/schema.py"], 560, 0.3),
        Scenario::apply(
            DataModel,
            &["migrations/0002_priority.py", "migrations/0003_index.py"],
            700,
            0.3,
        ),
        // A small, confident edit that still touches authentication.
        Scenario::apply(
            General,
            &["task_api/auth.py", "task_api/service.py"],
            40,
            0.85,
        ),
        Scenario::apply(
            Config,
            &["config/deploy.yaml", "config/settings.yaml"],
            330,
            0.3,
        ),
        Scenario::apply(Security, &["task_api/auth.py"], 370, 0.3),
    ]
}

fn permissive_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::apply(Api, &["task_api/api.py", "task_api/service.py"], 3, 0.95),
        Scenario::apply(Api, &["task_api/api.py"], 4, 0.95),
        Scenario::apply(General, &["setup.py"], 320, 0.75),
        Scenario::apply(Api, &["task_api/routes.py"], 3, 0.95),
        Scenario::apply(Test, &["tests/test_summary.py"], 300, 0.65),
        Scenario::apply(Api, &["task_api/service.py"], 7, 0.9),
        Scenario::apply(Test, &["tests/test_models.py"], 110, 0.85),
        Scenario::apply(Api, &["task_api/service.py"], 6, 0.95),
        Scenario::apply(Doc, &["docs/setup.md"], 300, 0.6),
        Scenario::apply(
            Test,
            &["tests/test_api.py", "tests/test_service.py"],
            350,
            0.6,
        ),
        Scenario::apply(DataModel, &["task_api/schema.py"], 15, 0.9),
        Scenario::apply(Test, &["tests/test_summary.py"], 290, 0.65),
        Scenario::apply(Doc, &["README.md"], 190, 0.65),
        Scenario::apply(General, &["scripts/export.py"], 200, 0.65),
        Scenario::apply(General, &["Makefile"], 170, 0.65),
        Scenario::apply(Config, &["config/settings.yaml"], 9, 0.95),
        Scenario::apply(General, &["task_api/utils.py"], 150, 0.9),
        Scenario::apply(Test, &["tests/test_api.py"], 180, 0.6),
        Scenario::apply(Api, &["task_api/validation.py"], 7, 0.95),
        // The single denial: an extreme refactor reaching into authentication.
        Scenario::apply(
            Api,
            &[
                "task_api/auth.py",
                "task_api/api.py",
                "task_api/service.py",
                "task_api/models.py",
                "task_api/routes.py",
                "task_api/utils.py",
            ],
            300,
            0.95,
        ),
    ]
}

fn mixed_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::apply(Test, &["tests/test_api.py"], 120, 0.6),
        Scenario::apply(Test, &["tests/test_service.py"], 100, 0.7),
        Scenario::apply(
            Test,
            &[
                "tests/test_summary.py",
                "tests/test_models.py",
                "tests/conftest.py",
            ],
            760,
            0.65,
        ),
        Scenario::apply(Test, &["tests/test_validation.py"], 60, 0.75),
        Scenario::apply(Doc, &["docs/api.md"], 80, 0.6),
        Scenario::apply(Doc, &["README.md"], 20, 0.7),
        Scenario::apply(
            Doc,
            &["docs/architecture.md", "docs/api.md", "docs/setup.md"],
            560,
            0.65,
        ),
        Scenario::apply(Api, &["task_api/api.py"], 80, 0.75),
        Scenario::apply(Api, &["task_api/service.py"], 60, 0.84),
        Scenario::apply(Config, &["config/settings.yaml"], 10, 0.7),
        Scenario::apply(DataModel, &["task_api/models.py"], 100, 0.65),
        Scenario::apply(General, &["scripts/seed_db.py"], 50, 0.75),
        Scenario::apply(
            General,
            &["scripts/export.py", "scripts/seed_db.py"],
            160,
            0.6,
        ),
        Scenario::apply(Api, &["task_api/routes.py"], 30, 0.62),
        Scenario::apply(
            General,
            &[
                "task_api/service.py",
                "task_api/utils.py",
                "task_api/models.py",
                "task_api/validation.py",
            ],
            690,
            0.78,
        ),
        Scenario::apply(
            General,
            &[
                "task_api/api.py",
                "task_api/service.py",
                "task_api/routes.py",
            ],
            640,
            0.3,
        ),
        Scenario::apply(
            DataModel,
            &[
                "migrations/0002_priority.py",
                "migrations/0003_index.py",
                "task_api/schema.py",
            ],
            540,
            0.3,
        ),
        Scenario::apply(
            Config,
            &["deploy/app.yaml", "deploy/worker.yaml", "deploy/db.yaml"],
            340,
            0.3,
        ),
        Scenario::apply(Security, &["task_api/auth.py"], 30, 0.95),
        Scenario::apply(General, &["task_api/token_utils.py"], 3, 0.95),
    ]
}

impl PersonaProfile {
    pub fn new(name: PersonaName) -> Self {
        let scenarios = match name {
            PersonaName::Cautious => cautious_scenarios(),
            PersonaName::Permissive => permissive_scenarios(),
            PersonaName::Mixed => mixed_scenarios(),
        };
        Self {
            name,
            scenarios,
            decision_count: DECISION_COUNT,
            replay_factor: REPLAY_FACTOR,
        }
    }

    /// Scenarios paired with the persona's verdict, in a seed-determined order.
    pub fn labeled(&self, seed: u64) -> Vec<(Scenario, bool)> {
        let mut rows: Vec<(Scenario, bool)> = self
            .scenarios
            .iter()
            .take(self.decision_count)
            .map(|s| (s.clone(), approves(self.name, s)))
            .collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        rows
    }

    pub fn approval_rate(&self) -> f64 {
        let rows = self.labeled(0);
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().filter(|(_, ok)| *ok).count() as f64 / rows.len() as f64
    }
}

/// Appends `decisions` to the trace `replay` times as seed events, training
/// the policy after each one. Features are extracted from the growing trace
/// exactly as a live session would.
pub fn seed_decisions(
    stores: &mut Stores,
    decisions: &[(Scenario, bool)],
    replay: usize,
    session_prefix: &str,
    repo_id: &str,
) -> Result<Vec<(FeatureVector, bool)>, EvalError> {
    let mut trained = Vec::with_capacity(decisions.len() * replay);
    for pass in 1..=replay {
        let ctx = EventContext::seed(format!("{session_prefix}-{pass}"), repo_id);
        let mut stats = SessionStats::default();
        for (i, (scenario, approve)) in decisions.iter().enumerate() {
            let p = scenario.proposal((pass * 1000 + i + 1) as u64);
            let x = extract_features(&p, &stores.trace, &stats);
            let verdict = if *approve {
                Verdict::Approved
            } else {
                Verdict::Denied
            };
            let timestamp = stores.trace.next_timestamp();
            let record = DecisionRecord {
                decision: Decision {
                    proposal_id: p.id,
                    verdict,
                    initiator: Initiator::PolicyInitiated,
                    score: None,
                    timestamp,
                },
                action_kind: p.action_kind,
                key: SimilarityKey::of(&p),
                paths: p.paths,
                change_category: p.change_category,
                phase: p.phase,
                route: None,
                tier: None,
                features: Some(x),
                developer_text: None,
                reason: None,
            };
            stores.trace.record(&ctx, TraceBody::DecisionMade(record))?;
            stores.state = sgd_update(&stores.state, &x, *approve);
            stats.record(*approve);
            trained.push((x, *approve));
        }
    }
    Ok(trained)
}

/// The `(features, label)` pairs of one pass over a fresh history.
pub fn generate_persona_decisions(
    profile: &PersonaProfile,
    seed: u64,
) -> Vec<(FeatureVector, bool)> {
    let mut stores = Stores::in_memory("persona");
    seed_decisions(
        &mut stores,
        &profile.labeled(seed),
        1,
        "generate",
        "persona",
    )
    .expect("in-memory seeding")
}

pub fn infer_preferences(approval_rate: f64) -> Vec<AutonomyPreference> {
    if approval_rate >= PREFERENCE_RATE {
        vec![
            AutonomyPreference::new(PreferenceName::PreferFewerCheckins),
            AutonomyPreference::new(PreferenceName::SkipLowRiskPlanCheckpoint),
        ]
    } else {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub decisions_appended: usize,
    pub approval_rate: f64,
    pub inferred: Vec<AutonomyPreference>,
}

/// Seeds `stores` with the persona's decisions replayed `replay_factor`
/// times and records any inferred preferences.
pub fn seed_repo(
    profile: &PersonaProfile,
    seed: u64,
    stores: &mut Stores,
    repo_id: &str,
) -> Result<SeedOutcome, EvalError> {
    let labeled = profile.labeled(seed);
    let prefix = format!("seed-{}", profile.name.as_str());
    let trained = seed_decisions(stores, &labeled, profile.replay_factor, &prefix, repo_id)?;
    let approval_rate = if labeled.is_empty() {
        0.0
    } else {
        labeled.iter().filter(|(_, ok)| *ok).count() as f64 / labeled.len() as f64
    };
    let inferred = infer_preferences(approval_rate);
    let ctx = EventContext::seed(format!("{prefix}-prefs"), repo_id);
    for pref in &inferred {
        record_preference_change(
            &mut stores.trace,
            &ctx,
            &mut stores.preferences,
            pref.clone(),
        )?;
    }
    Ok(SeedOutcome {
        decisions_appended: trained.len(),
        approval_rate,
        inferred,
    })
}

/// Features reported in the deviation study.
pub const STUDY_FEATURES: [Feature; 4] = [
    Feature::ChangePatternRisk,
    Feature::ModelConfidenceAvg,
    Feature::IsSecuritySensitive,
    Feature::PriorDenialsNorm,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub persona: PersonaName,
    /// Learned minus warm-start, in [`STUDY_FEATURES`] order.
    pub deltas: [f64; 4],
}

impl DeviationRow {
    pub fn delta(&self, f: Feature) -> f64 {
        let i = STUDY_FEATURES
            .iter()
            .position(|g| *g == f)
            .expect("study feature");
        self.deltas[i]
    }
}

pub fn deviation_for(profile: &PersonaProfile, seed: u64) -> Result<DeviationRow, EvalError> {
    let mut stores = Stores::in_memory("study");
    stores.state = default_state("study");
    seed_repo(profile, seed, &mut stores, "study")?;
    let s = &stores.state;
    Ok(DeviationRow {
        persona: profile.name,
        deltas: STUDY_FEATURES.map(|f| s.weight(f) - s.warm_start_weights[f.index()]),
    })
}

pub fn coefficient_deviation_study(seed: u64) -> Result<Vec<DeviationRow>, EvalError> {
    PersonaName::ALL
        .iter()
        .map(|&n| deviation_for(&PersonaProfile::new(n), seed))
        .collect()
}

pub fn render_study(rows: &[DeviationRow]) -> String {
    let mut out = format!("{:<24}", "feature");
    for r in rows {
        out.push_str(&format!(" {:>11}", r.persona.as_str()));
    }
    out.push('\n');
    for (i, f) in STUDY_FEATURES.iter().enumerate() {
        out.push_str(&format!("{:<24}", f.name()));
        for r in rows {
            out.push_str(&format!(" {:>+11.3}", r.deltas[i]));
        }
        out.push('\n');
    }
    out
}
