//! Live check-ins: show why, read a/r/d/c, return a verdict.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};

use super::SessionError;
use crate::types::Verdict;

/// What the developer is asked about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckInPrompt {
    /// One-line headline, e.g. the proposed action.
    pub title: String,
    /// Why the check-in fired.
    pub explanation: String,
    pub options: Vec<String>,
    /// Whether `r` (approve and remember) is meaningful.
    pub rememberable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub verdict: Verdict,
    pub text: Option<String>,
}

/// A source of developer answers, one line per prompt.
pub trait Responder {
    /// `None` when no more input is available.
    fn respond(&mut self, prompt: &CheckInPrompt) -> io::Result<Option<String>>;
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    answers: VecDeque<String>,
}

impl ScriptedResponder {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            answers: answers.into_iter().map(Into::into).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let answers: Vec<String> = serde_json::from_str(text)?;
        Ok(Self::new(answers))
    }

    pub fn remaining(&self) -> usize {
        self.answers.len()
    }
}

impl Responder for ScriptedResponder {
    fn respond(&mut self, _prompt: &CheckInPrompt) -> io::Result<Option<String>> {
        Ok(self.answers.pop_front())
    }
}

/// Approves everything. Used for batch replays.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoApprove;

impl Responder for AutoApprove {
    fn respond(&mut self, _prompt: &CheckInPrompt) -> io::Result<Option<String>> {
        Ok(Some("a".into()))
    }
}

/// Reads answers from a buffered reader, normally stdin.
pub struct TerminalResponder<R> {
    input: R,
}

impl<R: BufRead> TerminalResponder<R> {
    pub fn new(input: R) -> Self {
        Self { input }
    }
}

impl<R: BufRead> Responder for TerminalResponder<R> {
    fn respond(&mut self, _prompt: &CheckInPrompt) -> io::Result<Option<String>> {
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim_end_matches(['\r', '\n']).to_string()))
    }
}

/// Parses one answer line; `None` when it is not a valid answer.
pub fn parse_answer(line: &str, rememberable: bool) -> Option<Answer> {
    let line = line.trim();
    let (key, rest) = match line.split_once(char::is_whitespace) {
        Some((k, r)) => (k, r.trim()),
        None => (line, ""),
    };
    let verdict = match key.to_ascii_lowercase().as_str() {
        "a" => Verdict::Approved,
        "r" if rememberable => Verdict::ApprovedRemembered,
        "r" => Verdict::Approved,
        "d" => Verdict::Denied,
        "c" if !rest.is_empty() => Verdict::CorrectedThenApproved,
        _ => return None,
    };
    let text = (!rest.is_empty()).then(|| rest.to_string());
    Some(Answer { verdict, text })
}

const MAX_INVALID: usize = 5;

/// Shows `prompt` and collects a valid answer. Invalid lines are re-asked;
/// exhausted input is [`SessionError::EndOfInput`].
pub fn conduct_checkin(
    prompt: &CheckInPrompt,
    responder: &mut dyn Responder,
    out: &mut dyn Write,
) -> Result<Answer, SessionError> {
    writeln!(out, "? {}", prompt.title)?;
    writeln!(out, "  why: {}", prompt.explanation)?;
    for (i, o) in prompt.options.iter().enumerate() {
        writeln!(out, "  option {}: {o}", i + 1)?;
    }
    let keys = if prompt.rememberable {
        "[a]pprove  approve+[r]emember  [d]eny  [c]orrect <text>"
    } else {
        "[a]pprove  [d]eny  [c]orrect <text>"
    };
    for _ in 0..MAX_INVALID {
        writeln!(out, "  {keys}")?;
        let Some(line) = responder.respond(prompt)? else {
            return Err(SessionError::EndOfInput);
        };
        if let Some(answer) = parse_answer(&line, prompt.rememberable) {
            writeln!(out, "  > {}", line.trim())?;
            return Ok(answer);
        }
        writeln!(out, "  unrecognized answer `{}`", line.trim())?;
    }
    Err(SessionError::EndOfInput)
}
