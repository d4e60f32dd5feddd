//! Autonomy preferences and topic revocation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trace::{EventContext, PreferenceDelta, TraceBody, TraceStore};
use super::MemoryError;
use crate::types::{AutonomyPreference, ChangeCategory, PreferenceName};

pub const PREFERENCES_FILE: &str = "preferences.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceSet {
    #[serde(default)]
    pub active: Vec<AutonomyPreference>,
    #[serde(default)]
    pub revoked_topics: BTreeSet<ChangeCategory>,
}

impl PreferenceSet {
    /// Inserts or replaces the preference with the same name.
    pub fn set(&mut self, pref: AutonomyPreference) {
        match self.active.iter_mut().find(|p| p.name == pref.name) {
            Some(slot) => *slot = pref,
            None => self.active.push(pref),
        }
        self.active.sort_by_key(|p| p.name);
    }

    /// Returns false when the topic was already revoked.
    pub fn revoke(&mut self, topic: ChangeCategory) -> bool {
        self.revoked_topics.insert(topic)
    }

    pub fn is_revoked(&self, topic: ChangeCategory) -> bool {
        self.revoked_topics.contains(&topic)
    }

    /// True when an active preference named `name` covers `category` and the
    /// category has not been revoked.
    pub fn applies(&self, name: PreferenceName, category: ChangeCategory) -> bool {
        !self.is_revoked(category)
            && self
                .active
                .iter()
                .any(|p| p.name == name && p.applies_to(category))
    }

    pub fn is_active(&self, name: PreferenceName) -> bool {
        self.active.iter().any(|p| p.name == name && p.active)
    }

    pub fn apply_delta(&mut self, delta: &PreferenceDelta) {
        match delta {
            PreferenceDelta::Set { preference } => self.set(preference.clone()),
            PreferenceDelta::RevokeTopic { topic } => {
                self.revoke(*topic);
            }
        }
    }

    pub fn load(dir: &Path) -> Result<Self, MemoryError> {
        match fs::read_to_string(dir.join(PREFERENCES_FILE)) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), MemoryError> {
        let tmp = dir.join(format!("{PREFERENCES_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, dir.join(PREFERENCES_FILE))?;
        Ok(())
    }
}

pub fn record_preference_change(
    trace: &mut TraceStore,
    ctx: &EventContext,
    prefs: &mut PreferenceSet,
    pref: AutonomyPreference,
) -> Result<(), MemoryError> {
    let delta = PreferenceDelta::Set { preference: pref };
    trace.record(ctx, TraceBody::PreferenceChanged(delta.clone()))?;
    prefs.apply_delta(&delta);
    Ok(())
}

/// Marks `topic` as untrusted. Learned state is not touched.
pub fn revoke_topic(
    trace: &mut TraceStore,
    ctx: &EventContext,
    prefs: &mut PreferenceSet,
    topic: &str,
) -> Result<ChangeCategory, MemoryError> {
    let topic: ChangeCategory = topic.parse()?;
    let delta = PreferenceDelta::RevokeTopic { topic };
    trace.record(ctx, TraceBody::PreferenceChanged(delta.clone()))?;
    prefs.apply_delta(&delta);
    Ok(topic)
}
