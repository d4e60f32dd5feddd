//! Online logistic regression over the standardized feature vector.
//!
//! Score is P(action is safe to proceed). Labels follow the same convention:
//! 1 = the developer approved, 0 = denied.

use serde::{Deserialize, Serialize};

use super::features::{Feature, FeatureVector, FEATURE_COUNT};

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-repository classifier state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub learning_rate: f64,
    /// SGD steps applied since warm-start.
    pub update_count: u64,
    pub warm_start_weights: [f64; FEATURE_COUNT],
    pub warm_start_bias: f64,
    pub repo_id: String,
    /// Seed used to order the warm-start set.
    pub seed: u64,
}

impl PolicyState {
    /// A state with all-zero coefficients. Mostly useful in tests.
    pub fn zeroed(repo_id: impl Into<String>, learning_rate: f64) -> Self {
        Self {
            weights: [0.0; FEATURE_COUNT],
            bias: 0.0,
            learning_rate,
            update_count: 0,
            warm_start_weights: [0.0; FEATURE_COUNT],
            warm_start_bias: 0.0,
            repo_id: repo_id.into(),
            seed: 0,
        }
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(x.as_array())
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    pub fn weight(&self, f: Feature) -> f64 {
        self.weights[f.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// Rebinds the state to a repository, e.g. after loading defaults.
    pub fn with_repo(mut self, repo_id: impl Into<String>) -> Self {
        self.repo_id = repo_id.into();
        self
    }
}

pub fn score(state: &PolicyState, x: &FeatureVector) -> f64 {
    sigmoid(state.logit(x))
}

/// One SGD step on the logistic log-loss.
pub fn sgd_update(state: &PolicyState, x: &FeatureVector, label: bool) -> PolicyState {
    let mut next = state.clone();
    let residual = f64::from(u8::from(label)) - score(state, x);
    let step = state.learning_rate * residual;
    for (w, v) in next.weights.iter_mut().zip(x.as_array()) {
        *w += step * v;
    }
    next.bias += step;
    next.update_count += 1;
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightDelta {
    pub feature: Feature,
    pub prior: f64,
    pub learned: f64,
    pub delta: f64,
}

/// Learned minus warm-start coefficient per feature, largest |Δ| first.
pub fn weight_deltas(state: &PolicyState) -> Vec<WeightDelta> {
    let mut rows: Vec<WeightDelta> = Feature::ALL
        .iter()
        .map(|&feature| {
            let prior = state.warm_start_weights[feature.index()];
            let learned = state.weights[feature.index()];
            WeightDelta {
                feature,
                prior,
                learned,
                delta: learned - prior,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.delta
            .abs()
            .total_cmp(&a.delta.abs())
            .then(a.feature.cmp(&b.feature))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_first() -> FeatureVector {
        FeatureVector::zeros().with(Feature::DiffSizeNorm, 1.0)
    }

    #[test]
    fn zero_model_scores_half() {
        let s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        assert_eq!(score(&s, &FeatureVector::new([0.7; FEATURE_COUNT])), 0.5);
    }

    #[test]
    fn single_unit_weight() {
        let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        s.weights[0] = 1.0;
        assert!((score(&s, &unit_first()) - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn negative_bias_dominates() {
        let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        s.bias = -4.0;
        for x in [
            FeatureVector::zeros(),
            FeatureVector::new([1.0; FEATURE_COUNT]),
        ] {
            assert!((score(&s, &x) - 0.017_986_209_962_091_56).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-40.0) > 0.0);
    }

    #[test]
    fn zero_features_update_only_bias() {
        let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        s.bias = 0.3;
        s.weights[4] = -0.2;
        let next = sgd_update(&s, &FeatureVector::zeros(), true);
        assert_eq!(next.weights, s.weights);
        let expected = 0.3 + 0.05 * (1.0 - sigmoid(0.3));
        assert_eq!(next.bias, expected);
        assert_eq!(next.update_count, 1);
    }

    #[test]
    fn first_step_from_zero() {
        let s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        let up = sgd_update(&s, &unit_first(), true);
        assert!((up.weights[0] - 0.025).abs() < 1e-15);
        assert!((up.bias - 0.025).abs() < 1e-15);
        let down = sgd_update(&s, &unit_first(), false);
        assert!((down.weights[0] + 0.025).abs() < 1e-15);
        assert!((down.bias + 0.025).abs() < 1e-15);
    }

    #[test]
    fn fresh_state_has_zero_deltas() {
        let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        s.weights = [0.4; FEATURE_COUNT];
        s.warm_start_weights = s.weights;
        assert!(weight_deltas(&s).iter().all(|d| d.delta == 0.0));
    }

    #[test]
    fn deltas_are_sorted_by_magnitude() {
        let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
        s.weights[2] = 0.1;
        s.weights[7] = -0.5;
        s.weights[9] = 0.3;
        let rows = weight_deltas(&s);
        assert_eq!(rows[0].feature, Feature::ModelConfidenceAvg);
        assert_eq!(rows[1].feature, Feature::ActionTypeRisk);
        assert_eq!(rows[2].feature, Feature::ChangePatternRisk);
    }

    fn arb_vector() -> impl Strategy<Value = FeatureVector> {
        prop::array::uniform13(0.0f64..=1.0).prop_map(FeatureVector::new)
    }

    proptest! {
        #[test]
        fn repeated_approvals_raise_score(x in arb_vector(), bias in -3.0f64..3.0, n in 1usize..30) {
            let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
            s.bias = bias;
            let mut prev = score(&s, &x);
            for _ in 0..n {
                s = sgd_update(&s, &x, true);
                let now = score(&s, &x);
                prop_assert!(now > prev);
                prev = now;
            }
        }

        #[test]
        fn repeated_denials_lower_score(x in arb_vector(), bias in -3.0f64..3.0, n in 1usize..30) {
            let mut s = PolicyState::zeroed("r", DEFAULT_LEARNING_RATE);
            s.bias = bias;
            let mut prev = score(&s, &x);
            for _ in 0..n {
                s = sgd_update(&s, &x, false);
                let now = score(&s, &x);
                prop_assert!(now < prev);
                prev = now;
            }
        }
    }
}
