//! The `.hedwig/` state directory: configuration, lock and store loading.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::governance::{Mode, Thresholds};
use crate::memory::{GuidanceStore, MemoryError, PreferenceSet, TraceStore};
use crate::policy::{self, PolicyError, PolicyState};
use crate::rules::{RuleError, RuleStore};

pub const STATE_DIR: &str = ".hedwig";
pub const CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = "lock";
pub const CONFIG_VERSION: u32 = 1;
pub const HOME_ENV: &str = "HW_HOME";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("not initialized: {0} does not exist (run `hw init`)")]
    NotInitialized(PathBuf),
    #[error("another command holds {0}")]
    Locked(PathBuf),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub version: u32,
    pub proceed_threshold: f64,
    pub flag_threshold: f64,
    pub mode: Mode,
    pub prefer_fewer_checkins_shift: f64,
    /// Shell command run after executed changes; exit status 0 passes.
    pub verification_command: Option<String>,
    pub require_verification: bool,
    pub retrieval_k: usize,
}

impl Default for Config {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            version: CONFIG_VERSION,
            proceed_threshold: t.proceed,
            flag_threshold: t.flag,
            mode: t.mode,
            prefer_fewer_checkins_shift: t.prefer_fewer_shift,
            verification_command: None,
            require_verification: false,
            retrieval_k: crate::memory::guidance::DEFAULT_K,
        }
    }
}

impl Config {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            proceed: self.proceed_threshold,
            flag: self.flag_threshold,
            mode: self.mode,
            prefer_fewer_shift: self.prefer_fewer_checkins_shift,
        }
    }

    pub fn validate(&self) -> Result<(), WorkspaceError> {
        self.thresholds()
            .validate()
            .map_err(|e| WorkspaceError::InvalidConfig(e.to_string()))?;
        if self.retrieval_k == 0 {
            return Err(WorkspaceError::InvalidConfig(
                "retrieval_k must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, WorkspaceError> {
        let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| WorkspaceError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, dir: &Path) -> Result<(), WorkspaceError> {
        fs::write(
            dir.join(CONFIG_FILE),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// Hex SHA-256 prefix of the canonical repository path.
pub fn repo_id(root: &Path) -> String {
    let canonical = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let digest = Sha256::digest(canonical.to_string_lossy().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
    pub state_dir: PathBuf,
    pub repo_id: String,
}

impl Workspace {
    /// Resolves the state directory for `root`, honoring `HW_HOME`.
    pub fn locate(root: &Path) -> Self {
        let state_dir = std::env::var_os(HOME_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| root.join(STATE_DIR));
        Self::with_state_dir(root, state_dir)
    }

    pub fn with_state_dir(root: &Path, state_dir: PathBuf) -> Self {
        Self {
            root: root.to_path_buf(),
            repo_id: repo_id(root),
            state_dir,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.state_dir.join(CONFIG_FILE).is_file()
    }

    /// Creates the state directory with defaults. Existing files are kept.
    pub fn init(&self) -> Result<bool, WorkspaceError> {
        fs::create_dir_all(&self.state_dir)?;
        let fresh = !self.is_initialized();
        if fresh {
            Config::default().save(&self.state_dir)?;
        }
        if !self.state_dir.join(policy::POLICY_FILE).exists() {
            policy::persist(&policy::default_state(&self.repo_id), &self.state_dir)?;
        }
        Ok(fresh)
    }

    pub fn require_initialized(&self) -> Result<(), WorkspaceError> {
        if self.is_initialized() {
            Ok(())
        } else {
            Err(WorkspaceError::NotInitialized(self.state_dir.clone()))
        }
    }

    pub fn config(&self) -> Result<Config, WorkspaceError> {
        self.require_initialized()?;
        Config::load(&self.state_dir)
    }

    /// Takes the advisory lock held by mutating commands.
    pub fn lock(&self) -> Result<LockGuard, WorkspaceError> {
        self.require_initialized()?;
        let path = self.state_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(WorkspaceError::Locked(path))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn load_stores(&self) -> Result<Stores, WorkspaceError> {
        self.require_initialized()?;
        let dir = &self.state_dir;
        let state = match policy::load(dir, &self.repo_id) {
            Ok(s) => s,
            Err(PolicyError::NotFound) => policy::default_state(&self.repo_id),
            Err(e) => return Err(e.into()),
        };
        Ok(Stores {
            trace: TraceStore::open(dir)?,
            guidance: GuidanceStore::open(dir)?,
            preferences: PreferenceSet::load(dir)?,
            rules: RuleStore::load(dir)?,
            state,
        })
    }

    /// Writes the mutable snapshot files. Trace and guidance are append-only
    /// and already durable.
    pub fn save_stores(&self, stores: &Stores) -> Result<(), WorkspaceError> {
        let dir = &self.state_dir;
        policy::persist(&stores.state, dir)?;
        stores.preferences.save(dir)?;
        stores.rules.save(dir)?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Everything a session or observe command reads.
#[derive(Debug)]
pub struct Stores {
    pub trace: TraceStore,
    pub guidance: GuidanceStore,
    pub preferences: PreferenceSet,
    pub rules: RuleStore,
    pub state: PolicyState,
}

impl Stores {
    /// Fresh in-memory stores around a warm-started policy.
    pub fn in_memory(repo_id: &str) -> Self {
        Self {
            trace: TraceStore::in_memory(),
            guidance: GuidanceStore::in_memory(),
            preferences: PreferenceSet::default(),
            rules: RuleStore::default(),
            state: policy::default_state(repo_id),
        }
    }
}
