//! Dynamic-autonomy governance for a CLI coding agent.

pub mod eval;
pub mod governance;
pub mod memory;
pub mod observe;
pub mod policy;
pub mod rules;
pub mod session;
pub mod types;
pub mod workspace;
