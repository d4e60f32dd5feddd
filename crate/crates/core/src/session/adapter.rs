//! Agent adapters: the boundary between the governance loop and a model.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::memory::CheckInReason;
use crate::types::{ActionProposal, Phase, Verdict};

/// Everything the agent sees. There is deliberately no field for scores,
/// weights or thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptContext {
    pub task: String,
    #[serde(default)]
    pub spec_digest: Option<String>,
    /// Retrieved guidance snippets, most relevant first.
    #[serde(default)]
    pub guidance: Vec<String>,
    pub phase: Phase,
    #[serde(default)]
    pub approved_plan: Option<String>,
}

impl PromptContext {
    /// Plain-text rendering for text-in, text-out models.
    pub fn render(&self) -> String {
        let mut out = format!("Task: {}\nPhase: {}\n", self.task, self.phase);
        if let Some(d) = &self.spec_digest {
            out.push_str(&format!("Spec digest: {d}\n"));
        }
        if let Some(p) = &self.approved_plan {
            out.push_str(&format!("Approved plan: {p}\n"));
        }
        if !self.guidance.is_empty() {
            out.push_str("Relevant guidance:\n");
            for g in &self.guidance {
                out.push_str(&format!("- {g}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckInRequest {
    pub reason: CheckInReason,
    pub question: String,
    #[serde(default)]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum AgentStep {
    Propose { proposal: ActionProposal },
    CheckIn(AgentCheckInRequest),
    Done,
}

/// What the agent learns about the fate of its last step. Carries no
/// policy numerics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feedback {
    pub proposal_id: Option<u64>,
    pub verdict: Verdict,
    /// A hard constraint refused the action outright.
    pub blocked: bool,
    pub developer_text: Option<String>,
}

pub trait AgentAdapter {
    fn next_action(&mut self, context: &PromptContext) -> Result<AgentStep, AdapterError>;
    fn receive_feedback(&mut self, feedback: &Feedback);
}

/// A recorded agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    #[serde(default)]
    pub task: String,
    pub steps: Vec<AgentStep>,
}

impl AgentScript {
    pub fn from_json(text: &str) -> Result<Self, AdapterError> {
        serde_json::from_str(text).map_err(|e| AdapterError::Fixture(e.to_string()))
    }
}

/// Replays an [`AgentScript`], then reports `Done`.
#[derive(Debug, Clone)]
pub struct ScriptedAgentAdapter {
    steps: VecDeque<AgentStep>,
    pub contexts: Vec<PromptContext>,
    pub feedback: Vec<Feedback>,
}

impl ScriptedAgentAdapter {
    pub fn new(script: AgentScript) -> Self {
        Self {
            steps: script.steps.into(),
            contexts: Vec::new(),
            feedback: Vec::new(),
        }
    }
}

impl AgentAdapter for ScriptedAgentAdapter {
    fn next_action(&mut self, context: &PromptContext) -> Result<AgentStep, AdapterError> {
        self.contexts.push(context.clone());
        Ok(self.steps.pop_front().unwrap_or(AgentStep::Done))
    }

    fn receive_feedback(&mut self, feedback: &Feedback) {
        self.feedback.push(feedback.clone());
    }
}

const SYSTEM_PROMPT: &str = "You are a coding agent working under developer governance. \
Reply with exactly one step using KEY: value lines. \
To propose an action: ACTION (read|plan|apply|run_command), PATHS (comma separated), CATEGORY, \
DIFF_LINES, CONFIDENCE (0-1), PHASE, RATIONALE. \
To ask the developer: CHECKIN (uncertainty|guidance_conflict|plan_deviation|design_tradeoff), QUESTION, \
optional OPTIONS separated by |. When finished reply DONE.";

/// Chat-completion endpoint speaking the OpenAI-style JSON schema.
#[derive(Debug, Clone)]
pub struct RemoteAgentAdapter {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    next_id: u64,
    transcript: Vec<serde_json::Value>,
}

impl RemoteAgentAdapter {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            next_id: 1,
            transcript: Vec::new(),
        }
    }

    fn complete(&self, messages: &[serde_json::Value]) -> Result<String, AdapterError> {
        let body = serde_json::json!({ "model": self.model, "messages": messages });
        let mut req = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| AdapterError::Remote(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| AdapterError::Remote(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AdapterError::Remote("response has no message content".into()))
    }
}

impl AgentAdapter for RemoteAgentAdapter {
    fn next_action(&mut self, context: &PromptContext) -> Result<AgentStep, AdapterError> {
        let mut messages = vec![serde_json::json!({ "role": "system", "content": SYSTEM_PROMPT })];
        messages.extend(self.transcript.iter().cloned());
        messages.push(serde_json::json!({ "role": "user", "content": context.render() }));
        let reply = self.complete(&messages)?;
        let step = parse_agent_reply(&reply, self.next_id)?;
        self.next_id += 1;
        self.transcript
            .push(serde_json::json!({ "role": "assistant", "content": reply }));
        Ok(step)
    }

    fn receive_feedback(&mut self, feedback: &Feedback) {
        let mut note = if feedback.blocked {
            "Blocked by a hard constraint.".to_string()
        } else {
            format!("Developer verdict: {:?}.", feedback.verdict)
        };
        if let Some(t) = &feedback.developer_text {
            note.push_str(&format!(" Developer says: {t}"));
        }
        self.transcript
            .push(serde_json::json!({ "role": "user", "content": note }));
    }
}

fn field<'a>(fields: &'a [(String, String)], key: &str) -> Option<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, AdapterError> {
    let norm = value.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    serde_json::from_value(serde_json::Value::String(norm))
        .map_err(|_| AdapterError::Parse(format!("{key}: unrecognized value `{value}`")))
}

/// Parses the `KEY: value` reply grammar into a step.
pub fn parse_agent_reply(text: &str, id: u64) -> Result<AgentStep, AdapterError> {
    let fields: Vec<(String, String)> = text
        .lines()
        .filter_map(|l| {
            let (k, v) = l.split_once(':')?;
            Some((k.trim().to_ascii_uppercase(), v.trim().to_string()))
        })
        .collect();
    if text.lines().any(|l| l.trim().eq_ignore_ascii_case("done")) && fields.is_empty() {
        return Ok(AgentStep::Done);
    }
    if let Some(reason) = field(&fields, "CHECKIN") {
        let question = field(&fields, "QUESTION")
            .filter(|q| !q.is_empty())
            .ok_or_else(|| AdapterError::Parse("CHECKIN without QUESTION".into()))?;
        let options = field(&fields, "OPTIONS")
            .map(|o| {
                o.split('|')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        return Ok(AgentStep::CheckIn(AgentCheckInRequest {
            reason: parse_enum("CHECKIN", reason)?,
            question: question.to_string(),
            options,
        }));
    }
    let action = field(&fields, "ACTION")
        .ok_or_else(|| AdapterError::Parse("no ACTION, CHECKIN or DONE".into()))?;
    let paths: Vec<String> = field(&fields, "PATHS")
        .map(|p| {
            p.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let number = |key: &str| -> Result<Option<f64>, AdapterError> {
        field(&fields, key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| AdapterError::Parse(format!("{key}: not a number")))
            })
            .transpose()
    };
    let mut files = paths.clone();
    files.sort();
    files.dedup();
    let proposal = ActionProposal {
        id,
        action_kind: parse_enum("ACTION", action)?,
        change_category: parse_enum("CATEGORY", field(&fields, "CATEGORY").unwrap_or("general"))?,
        diff_lines: number("DIFF_LINES")?.unwrap_or(0.0).max(0.0) as u32,
        files_touched: files.len() as u32,
        paths,
        model_confidence: number("CONFIDENCE")?.unwrap_or(0.5).clamp(0.0, 1.0),
        phase: parse_enum("PHASE", field(&fields, "PHASE").unwrap_or("implementation"))?,
        rationale: field(&fields, "RATIONALE").unwrap_or_default().to_string(),
    };
    crate::types::validate_proposal(&proposal).map_err(|e| AdapterError::Parse(e.to_string()))?;
    Ok(AgentStep::Propose { proposal })
}
