//! `policy.json`: lossless, versioned persistence of [`PolicyState`].
//!
//! Coefficients are written as decimal strings with 17 significant digits so
//! that every f64 survives a round trip bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::PolicyState;
use super::features::FEATURE_COUNT;
use super::PolicyError;

pub const POLICY_FILE: &str = "policy.json";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDocument {
    version: u32,
    repo_id: String,
    weights: Vec<String>,
    bias: String,
    learning_rate: String,
    update_count: u64,
    warm_start_weights: Vec<String>,
    warm_start_bias: String,
    seed: u64,
}

fn encode(x: f64) -> String {
    format!("{x:.16e}")
}

fn decode(field: &str, s: &str) -> Result<f64, PolicyError> {
    let v: f64 = s
        .parse()
        .map_err(|_| PolicyError::CorruptState(format!("{field}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(PolicyError::CorruptState(format!(
            "{field}: non-finite value"
        )));
    }
    Ok(v)
}

fn decode_weights(field: &str, v: &[String]) -> Result<[f64; FEATURE_COUNT], PolicyError> {
    if v.len() != FEATURE_COUNT {
        return Err(PolicyError::CorruptState(format!(
            "{field}: expected {FEATURE_COUNT} values, found {}",
            v.len()
        )));
    }
    let mut out = [0.0; FEATURE_COUNT];
    for (slot, s) in out.iter_mut().zip(v) {
        *slot = decode(field, s)?;
    }
    Ok(out)
}

pub fn to_json(state: &PolicyState) -> String {
    let doc = PolicyDocument {
        version: POLICY_VERSION,
        repo_id: state.repo_id.clone(),
        weights: state.weights.iter().copied().map(encode).collect(),
        bias: encode(state.bias),
        learning_rate: encode(state.learning_rate),
        update_count: state.update_count,
        warm_start_weights: state
            .warm_start_weights
            .iter()
            .copied()
            .map(encode)
            .collect(),
        warm_start_bias: encode(state.warm_start_bias),
        seed: state.seed,
    };
    serde_json::to_string_pretty(&doc).expect("policy document serializes")
}

pub fn from_json(text: &str) -> Result<PolicyState, PolicyError> {
    let doc: PolicyDocument =
        serde_json::from_str(text).map_err(|e| PolicyError::CorruptState(e.to_string()))?;
    if doc.version != POLICY_VERSION {
        return Err(PolicyError::CorruptState(format!(
            "unsupported version {}",
            doc.version
        )));
    }
    let learning_rate = decode("learning_rate", &doc.learning_rate)?;
    if learning_rate <= 0.0 {
        return Err(PolicyError::CorruptState(
            "learning_rate must be positive".into(),
        ));
    }
    Ok(PolicyState {
        weights: decode_weights("weights", &doc.weights)?,
        bias: decode("bias", &doc.bias)?,
        learning_rate,
        update_count: doc.update_count,
        warm_start_weights: decode_weights("warm_start_weights", &doc.warm_start_weights)?,
        warm_start_bias: decode("warm_start_bias", &doc.warm_start_bias)?,
        repo_id: doc.repo_id,
        seed: doc.seed,
    })
}

/// Writes via a temp file and rename so readers never see a torn document.
pub fn persist(state: &PolicyState, dir: &Path) -> Result<(), PolicyError> {
    let tmp = dir.join(format!("{POLICY_FILE}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(to_json(state).as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(POLICY_FILE))?;
    Ok(())
}

pub fn load(dir: &Path, repo_id: &str) -> Result<PolicyState, PolicyError> {
    let path = dir.join(POLICY_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(PolicyError::NotFound),
        Err(e) => return Err(e.into()),
    };
    let state = from_json(&text)?;
    if state.repo_id != repo_id {
        return Err(PolicyError::CorruptState(format!(
            "state belongs to repository {}, not {repo_id}",
            state.repo_id
        )));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::warm_start::default_state;
    use proptest::prelude::*;

    #[test]
    fn persist_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let state = default_state("abc");
        persist(&state, dir.path()).unwrap();
        assert_eq!(load(dir.path(), "abc").unwrap(), state);
    }

    #[test]
    fn empty_directory_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load(dir.path(), "abc"),
            Err(PolicyError::NotFound)
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let text = to_json(&default_state("abc"));
        fs::write(dir.path().join(POLICY_FILE), &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load(dir.path(), "abc"),
            Err(PolicyError::CorruptState(_))
        ));
    }

    #[test]
    fn wrong_dimension_is_corrupt() {
        let text =
            to_json(&default_state("abc")).replacen("\"weights\": [", "\"weights\": [\"1.0\",", 1);
        assert!(matches!(
            from_json(&text),
            Err(PolicyError::CorruptState(_))
        ));
    }

    #[test]
    fn foreign_repo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        persist(&default_state("abc"), dir.path()).unwrap();
        assert!(matches!(
            load(dir.path(), "xyz"),
            Err(PolicyError::CorruptState(_))
        ));
    }

    proptest! {
        #[test]
        fn coefficients_round_trip_bit_exact(
            w in prop::array::uniform13(-1e6f64..1e6),
            bias in prop::num::f64::NORMAL,
            count in any::<u64>(),
        ) {
            let mut s = default_state("r");
            s.weights = w;
            s.bias = bias;
            s.update_count = count;
            let back = from_json(&to_json(&s)).unwrap();
            prop_assert_eq!(back.weights.map(f64::to_bits), s.weights.map(f64::to_bits));
            prop_assert_eq!(back.bias.to_bits(), s.bias.to_bits());
            prop_assert_eq!(back, s);
        }
    }
}
