//! Synthetic warm-start from engineering priors.
//!
//! A small labeled set encodes "large changes to risky categories, and
//! anything security-sensitive, need a check-in". Each example carries the
//! history it would typically arrive with: allowed actions have one earlier
//! approval, held actions one earlier denial and a hesitant model. The
//! classifier is trained on it with a fixed seed before any real developer
//! decision arrives.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::{sgd_update, PolicyState, DEFAULT_LEARNING_RATE};
use super::features::{Feature, FeatureVector, RawSignals, SessionStats};
use super::PolicyError;
use crate::types::{ActionKind, ChangeCategory, Phase};

/// "HE"
pub const DEFAULT_SEED: u64 = 0x4845;

/// Deny iff (pattern risk ≥ `risk_threshold` and diff size ≥ `diff_threshold`)
/// or the action is security-sensitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorRule {
    pub risk_threshold: f64,
    pub diff_threshold: f64,
}

impl Default for PriorRule {
    fn default() -> Self {
        Self {
            risk_threshold: 0.7,
            diff_threshold: 0.5,
        }
    }
}

impl PriorRule {
    /// True when the prior says the action may proceed.
    pub fn label(&self, x: &FeatureVector) -> bool {
        let risky_and_large = x.get(Feature::ChangePatternRisk) >= self.risk_threshold
            && x.get(Feature::DiffSizeNorm) >= self.diff_threshold;
        let sensitive = x.get(Feature::IsSecuritySensitive) >= 1.0;
        !(risky_and_large || sensitive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineeringPriorSet {
    pub examples: Vec<RawSignals>,
    pub rule: PriorRule,
    pub seed: u64,
    /// Passes over the synthetic set.
    pub epochs: usize,
    /// Step size used only while warm-starting.
    pub warm_learning_rate: f64,
    /// Step size the resulting state uses for live updates.
    pub learning_rate: f64,
}

pub const SMALL_DIFF: u32 = 30;
pub const LARGE_DIFF: u32 = 180;
/// Model confidence attached to held examples.
pub const HELD_CONFIDENCE: f64 = 0.56;

fn example(kind: ActionKind, category: ChangeCategory, diff: u32, files: u32) -> RawSignals {
    RawSignals {
        action_kind: kind,
        category,
        diff_lines: diff,
        files_touched: files,
        prior_approvals: 0,
        prior_denials: 0,
        security_sensitive: category == ChangeCategory::Security,
        verification_failures: 0,
        verification_runs: 0,
        model_confidence: 0.75,
        first_touch: true,
        phase: match kind {
            ActionKind::Read | ActionKind::CheckIn => Phase::Research,
            ActionKind::Plan => Phase::Planning,
            ActionKind::Apply | ActionKind::RunCommand => Phase::Implementation,
        },
        session: SessionStats::default(),
    }
}

impl Default for EngineeringPriorSet {
    fn default() -> Self {
        let mut examples = Vec::with_capacity(24);
        // Every category at a small and a large diff.
        for category in ChangeCategory::ALL {
            examples.push(example(ActionKind::Apply, category, SMALL_DIFF, 1));
            examples.push(example(ActionKind::Apply, category, LARGE_DIFF, 4));
        }
        // Security-sensitive paths outside the security category.
        for (category, diff, files) in [
            (ChangeCategory::General, SMALL_DIFF, 1),
            (ChangeCategory::General, LARGE_DIFF, 4),
            (ChangeCategory::Config, SMALL_DIFF, 1),
            (ChangeCategory::Test, SMALL_DIFF, 1),
        ] {
            let mut e = example(ActionKind::Apply, category, diff, files);
            e.security_sensitive = true;
            examples.push(e);
        }
        // Non-writing actions.
        examples.push(example(ActionKind::Read, ChangeCategory::General, 0, 1));
        examples.push(example(ActionKind::Read, ChangeCategory::General, 0, 3));
        examples.push(example(ActionKind::Plan, ChangeCategory::General, 0, 1));
        examples.push(example(ActionKind::Plan, ChangeCategory::Api, 0, 3));
        examples.push(example(ActionKind::RunCommand, ChangeCategory::Test, 0, 0));
        examples.push(example(
            ActionKind::RunCommand,
            ChangeCategory::General,
            0,
            0,
        ));
        let rule = PriorRule::default();
        for e in &mut examples {
            if rule.label(&e.encode()) {
                e.prior_approvals = 1;
            } else {
                e.prior_denials = 1;
                e.model_confidence = HELD_CONFIDENCE;
            }
        }
        Self {
            examples,
            rule,
            seed: DEFAULT_SEED,
            epochs: 300,
            warm_learning_rate: 0.5,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

impl EngineeringPriorSet {
    pub fn labeled(&self) -> Vec<(FeatureVector, bool)> {
        self.examples
            .iter()
            .map(|s| {
                let x = s.encode();
                (x, self.rule.label(&x))
            })
            .collect()
    }
}

/// Trains a fresh state on the prior set and freezes the result as the
/// reference point for later deltas.
pub fn warm_start(priors: &EngineeringPriorSet, repo_id: &str) -> Result<PolicyState, PolicyError> {
    if priors.examples.is_empty() {
        return Err(PolicyError::EmptyPriors);
    }
    let data = priors.labeled();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(priors.seed);
    let mut state = PolicyState::zeroed(repo_id, priors.warm_learning_rate);
    for _ in 0..priors.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, label) = &data[i];
            state = sgd_update(&state, x, *label);
        }
    }
    Ok(PolicyState {
        warm_start_weights: state.weights,
        warm_start_bias: state.bias,
        learning_rate: priors.learning_rate,
        update_count: 0,
        seed: priors.seed,
        ..state
    })
}

pub fn default_state(repo_id: &str) -> PolicyState {
    warm_start(&EngineeringPriorSet::default(), repo_id).expect("default priors are nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::classifier::score;

    fn apply(category: ChangeCategory, diff: u32, files: u32, sensitive: bool) -> FeatureVector {
        let mut s = example(ActionKind::Apply, category, diff, files);
        s.security_sensitive |= sensitive;
        s.encode()
    }

    #[test]
    fn default_priors_place_bands() {
        let state = default_state("repo");
        let risky = apply(ChangeCategory::Security, 220, 5, true);
        let benign = apply(ChangeCategory::Doc, 3, 1, false);
        assert!(
            score(&state, &risky) < 0.20,
            "risky scored {}",
            score(&state, &risky)
        );
        assert!(
            score(&state, &benign) > 0.90,
            "benign scored {}",
            score(&state, &benign)
        );
    }

    #[test]
    fn empty_priors_are_rejected() {
        let priors = EngineeringPriorSet {
            examples: vec![],
            ..Default::default()
        };
        assert!(matches!(
            warm_start(&priors, "r"),
            Err(PolicyError::EmptyPriors)
        ));
    }

    #[test]
    fn warm_start_is_deterministic() {
        let a = default_state("repo");
        let b = default_state("repo");
        assert_eq!(a.weights.map(f64::to_bits), b.weights.map(f64::to_bits));
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
        assert_eq!(a.warm_start_weights, a.weights);
        assert_eq!(a.update_count, 0);
    }

    #[test]
    fn held_examples_carry_a_denial_history() {
        let priors = EngineeringPriorSet::default();
        for e in &priors.examples {
            let allowed = priors.rule.label(&e.encode());
            assert_eq!(
                (e.prior_approvals, e.prior_denials),
                if allowed { (1, 0) } else { (0, 1) }
            );
        }
    }

    #[test]
    fn prior_set_has_24_examples_and_follows_rule() {
        let priors = EngineeringPriorSet::default();
        assert_eq!(priors.examples.len(), 24);
        let labeled = priors.labeled();
        let denied = labeled.iter().filter(|(_, l)| !l).count();
        // Security ×2, Api/DataModel/Config at both sizes ×6, sensitive paths ×4.
        assert_eq!(denied, 12);
    }
}
