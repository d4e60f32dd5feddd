//! Runs the configured verification command.

use std::path::Path;
use std::process::Command;

use super::SessionError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationOutcome {
    pub passed: bool,
    /// Exit status and captured output tail on failure.
    pub details: Option<String>,
}

const TAIL_BYTES: usize = 2000;

fn tail(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let start = text.len().saturating_sub(TAIL_BYTES);
    let start = (start..=text.len())
        .find(|&i| text.is_char_boundary(i))
        .unwrap_or(0);
    text[start..].trim().to_string()
}

/// Runs `command` through `sh -c` in `workdir`. Exit status 0 passes.
pub fn run_verification(
    command: &str,
    workdir: &Path,
) -> Result<VerificationOutcome, SessionError> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(workdir)
        .output()
        .map_err(|e| SessionError::CommandNotFound(format!("sh: {e}")))?;
    if output.status.code() == Some(127) {
        return Err(SessionError::CommandNotFound(command.to_string()));
    }
    if output.status.success() {
        return Ok(VerificationOutcome {
            passed: true,
            details: None,
        });
    }
    let mut details = format!("`{command}` exited with {}", output.status);
    for stream in [&output.stdout, &output.stderr] {
        let t = tail(stream);
        if !t.is_empty() {
            details.push('\n');
            details.push_str(&t);
        }
    }
    Ok(VerificationOutcome {
        passed: false,
        details: Some(details),
    })
}
