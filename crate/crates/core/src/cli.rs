//! Command tree and handlers for `hw`.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hw_core::eval::{
    self, coefficient_deviation_study, render_study, render_table1, replay_fixture_tasks,
    score_against_oracle, seed_repo, table1_row, walkthrough, EvalFixture, PersonaName,
    PersonaProfile,
};
use hw_core::governance::Route;
use hw_core::memory::{EventContext, Origin};
use hw_core::observe::{
    revoke_preference_topic, show_preferences, show_report, show_weights, to_machine,
};
use hw_core::policy::DEFAULT_SEED;
use hw_core::rules::{compile_rule, confirm_and_persist, PersistOutcome};
use hw_core::session::{
    next_session_id, run_session, AgentAdapter, AgentScript, RemoteAgentAdapter, Responder,
    ScriptedAgentAdapter, ScriptedResponder, SessionEnv, SessionSummary, TerminalResponder,
};
use hw_core::workspace::{Config, Workspace, WorkspaceError};

pub const EXIT_USAGE: u8 = 64;
pub const EXIT_NOT_INITIALIZED: u8 = 78;
pub const EXIT_LOCKED: u8 = 75;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_BLOCKED_ONLY: u8 = 2;
pub const EXIT_VERIFICATION_FAILED: u8 = 3;
pub const EXIT_ABORTED: u8 = 4;

/// A usage mistake found after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<WorkspaceError>() {
        Some(WorkspaceError::NotInitialized(_)) => EXIT_NOT_INITIALIZED,
        Some(WorkspaceError::Locked(_)) => EXIT_LOCKED,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hw",
    version,
    about = "Governed autonomy for CLI coding agents"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Repository root (defaults to the current directory).
    #[arg(long, global = true)]
    pub repo: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Machine,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the `.hedwig/` state directory. Safe to re-run.
    Init,
    /// Run one governed agent session.
    Run(RunArgs),
    /// Manage natural-language rules.
    #[command(subcommand)]
    Rules(RulesCommand),
    /// Inspect preferences, weights and the governance report.
    #[command(subcommand)]
    Observe(ObserveCommand),
    /// Seeding, fixture replay and persona studies.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Show or change `.hedwig/config.json`.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task description handed to the agent.
    pub task: String,
    /// `scripted:<fixture>` or `remote`.
    #[arg(long, default_value = "remote")]
    pub adapter: String,
    /// JSON list of scripted developer answers; stdin otherwise.
    #[arg(long)]
    pub respond: Option<PathBuf>,
    /// Task specification file summarized into the agent prompt.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Chat-completion endpoint for the remote adapter.
    #[arg(long, env = "HW_AGENT_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Model name for the remote adapter.
    #[arg(long, env = "HW_AGENT_MODEL")]
    pub model: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum RulesCommand {
    /// Compile a rule, show its interpretation and persist it when confirmed.
    Add {
        text: String,
        /// Confirm without prompting.
        #[arg(long, short = 'y')]
        yes: bool,
    },
    /// List stored rules.
    List,
    /// Remove a rule by id.
    Remove { id: String },
}

#[derive(Debug, Subcommand)]
pub enum ObserveCommand {
    /// Active autonomy preferences and scoring bands.
    Preferences,
    /// Revoke a topic so its changes always check in.
    PreferencesRevoke {
        #[arg(long)]
        topic: String,
    },
    /// Learned coefficients against warm-start priors.
    Weights,
    /// Governance report across sessions.
    Report {
        /// Restrict to one session id.
        #[arg(long)]
        session: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Seed this repository with synthetic developer decisions.
    Seed {
        /// cautious, permissive or mixed.
        #[arg(
            long,
            required_unless_present = "walkthrough",
            conflicts_with = "walkthrough"
        )]
        persona: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Seed the bundled two-session demo history instead of a persona.
        #[arg(long)]
        walkthrough: bool,
    },
    /// Replay a fixture of write operations against this repository.
    Replay {
        #[arg(long)]
        fixture: PathBuf,
        /// Score routes against this persona's oracle labels.
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Seed fresh in-memory repositories per persona and replay the bundled fixture.
    Table1 {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Persona approval rates and the coefficient deviation study.
    Personas {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(subcommand)]
    pub action: Option<ConfigAction>,
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print one value.
    Get { key: String },
    /// Set one value (parsed as JSON, falling back to a string).
    Set { key: String, value: String },
}

struct Out {
    format: Format,
}

impl Out {
    fn emit<T: Serialize>(&self, schema: &'static str, data: &T, text: impl FnOnce() -> String) {
        let body = match self.format {
            Format::Text => ensure_newline(text()),
            Format::Machine => ensure_newline(to_machine(schema, data)),
        };
        // A closed pipe (e.g. `| head`) is not an error worth reporting.
        let _ = io::stdout().lock().write_all(body.as_bytes());
    }
}

fn ensure_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

pub fn dispatch(cli: Cli) -> Result<u8> {
    let root = match &cli.repo {
        Some(p) => p.clone(),
        None => std::env::current_dir().context("reading current directory")?,
    };
    let ws = Workspace::locate(&root);
    let out = Out { format: cli.format };
    match cli.command {
        Command::Init => init(&ws, &out),
        Command::Run(args) => run(&ws, &out, args),
        Command::Rules(cmd) => rules(&ws, &out, cmd),
        Command::Observe(cmd) => observe(&ws, &out, cmd),
        Command::Eval(cmd) => eval_cmd(&ws, &out, cmd),
        Command::Config(args) => config(&ws, &out, args),
    }
}

fn init(ws: &Workspace, out: &Out) -> Result<u8> {
    let fresh = ws.init()?;
    #[derive(Serialize)]
    struct Init<'a> {
        state_dir: &'a Path,
        created: bool,
    }
    out.emit(
        "hw.init",
        &Init {
            state_dir: &ws.state_dir,
            created: fresh,
        },
        || {
            if fresh {
                format!("initialized {}", ws.state_dir.display())
            } else {
                format!("already initialized: {} (kept)", ws.state_dir.display())
            }
        },
    );
    Ok(0)
}

fn adapter_for(args: &RunArgs) -> Result<Box<dyn AgentAdapter>> {
    if let Some(path) = args.adapter.strip_prefix("scripted:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading agent fixture {path}"))?;
        let script = AgentScript::from_json(&text)?;
        return Ok(Box::new(ScriptedAgentAdapter::new(script)));
    }
    if args.adapter == "remote" {
        let endpoint = args
            .endpoint
            .clone()
            .ok_or_else(|| usage("--adapter remote needs --endpoint or HW_AGENT_ENDPOINT"))?;
        let model = args
            .model
            .clone()
            .ok_or_else(|| usage("--adapter remote needs --model or HW_AGENT_MODEL"))?;
        let key = std::env::var("HW_AGENT_API_KEY").ok();
        return Ok(Box::new(RemoteAgentAdapter::new(endpoint, model, key)));
    }
    Err(usage(format!(
        "unknown adapter `{}` (expected scripted:<fixture> or remote)",
        args.adapter
    )))
}

fn run_exit_code(summary: &SessionSummary) -> u8 {
    if !summary.complete {
        EXIT_ABORTED
    } else if !summary.verification_passed() {
        EXIT_VERIFICATION_FAILED
    } else if summary.executed == 0 && summary.blocked > 0 {
        EXIT_BLOCKED_ONLY
    } else {
        0
    }
}

fn run(ws: &Workspace, out: &Out, args: RunArgs) -> Result<u8> {
    let config = ws.config()?;
    let mut adapter = adapter_for(&args)?;
    let mut responder: Box<dyn Responder> = match &args.respond {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading answers {}", path.display()))?;
            Box::new(ScriptedResponder::from_json(&text).context("parsing answers")?)
        }
        None => Box::new(TerminalResponder::new(io::stdin().lock())),
    };
    let spec_digest = match &args.spec {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?,
        ),
        None => None,
    };
    let _lock = ws.lock()?;
    let mut stores = ws.load_stores()?;
    let env = SessionEnv {
        session_id: next_session_id(&stores.trace),
        repo_id: ws.repo_id.clone(),
        workdir: &ws.root,
        origin: Origin::Live,
        spec_digest,
    };
    // Session prompts go to stdout in text mode and stderr in machine mode.
    let summary = match out.format {
        Format::Text => run_session(
            &args.task,
            adapter.as_mut(),
            responder.as_mut(),
            &mut stores,
            &config,
            &env,
            &mut io::stdout(),
        ),
        Format::Machine => run_session(
            &args.task,
            adapter.as_mut(),
            responder.as_mut(),
            &mut stores,
            &config,
            &env,
            &mut io::stderr(),
        ),
    };
    let summary = summary?;
    ws.save_stores(&stores)?;
    out.emit("hw.session_summary", &summary, || {
        format!("\n{}", summary.render())
    });
    Ok(run_exit_code(&summary))
}

fn confirm(prompt: &str) -> Result<bool> {
    print!("{prompt} [y/N] ");
    io::stdout().flush()?;
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line)?;
    Ok(matches!(
        line.trim().to_ascii_lowercase().as_str(),
        "y" | "yes"
    ))
}

fn rules(ws: &Workspace, out: &Out, cmd: RulesCommand) -> Result<u8> {
    match cmd {
        RulesCommand::Add { text, yes } => {
            ws.require_initialized()?;
            let interp = compile_rule(&text).map_err(|e| usage(e.to_string()))?;
            if out.format == Format::Text {
                println!("interpreted as {}", interp.rendering);
            }
            let confirmed = yes || confirm("persist this rule?")?;
            let _lock = ws.lock()?;
            let mut stores = ws.load_stores()?;
            let ctx = EventContext::live(next_session_id(&stores.trace), &ws.repo_id);
            let outcome = confirm_and_persist(
                &interp,
                confirmed,
                &mut stores.rules,
                &mut stores.guidance,
                &mut stores.trace,
                &ctx,
            )?;
            ws.save_stores(&stores)?;
            #[derive(Serialize)]
            struct Added<'a> {
                id: Option<&'a str>,
                classification: &'static str,
                rendering: &'a str,
            }
            let id = match &outcome {
                PersistOutcome::Persisted { id } => Some(id.as_str()),
                PersistOutcome::Discarded => None,
            };
            out.emit(
                "hw.rule_added",
                &Added {
                    id,
                    classification: interp.classification.as_str(),
                    rendering: &interp.rendering,
                },
                || match id {
                    Some(id) => format!("saved rule {id}"),
                    None => "discarded".to_string(),
                },
            );
            Ok(0)
        }
        RulesCommand::List => {
            let stores = ws.load_stores()?;
            let conflicts = stores.rules.conflicts();
            out.emit("hw.rules", &stores.rules.rules(), || {
                let mut s = String::new();
                if stores.rules.rules().is_empty() {
                    s.push_str("no rules\n");
                }
                for r in stores.rules.rules() {
                    s.push_str(&format!(
                        "{}  {:<19} {}\n",
                        r.id,
                        r.classification().as_str(),
                        r.source_text
                    ));
                }
                for (forbid, checkin) in &conflicts {
                    s.push_str(&format!(
                        "conflict: {forbid} forbids what {checkin} asks about; {forbid} wins\n"
                    ));
                }
                s
            });
            Ok(0)
        }
        RulesCommand::Remove { id } => {
            let _lock = ws.lock()?;
            let mut stores = ws.load_stores()?;
            let removed = stores.rules.remove(&id)?;
            ws.save_stores(&stores)?;
            out.emit("hw.rule_removed", &removed, || {
                format!("removed {}: {}", removed.id, removed.source_text)
            });
            Ok(0)
        }
    }
}

fn observe(ws: &Workspace, out: &Out, cmd: ObserveCommand) -> Result<u8> {
    match cmd {
        ObserveCommand::Preferences => {
            let config = ws.config()?;
            let stores = ws.load_stores()?;
            let view = show_preferences(&stores.preferences, &config.thresholds());
            out.emit("hw.preferences", &view, || view.render());
        }
        ObserveCommand::PreferencesRevoke { topic } => {
            let _lock = ws.lock()?;
            let mut stores = ws.load_stores()?;
            let ctx = EventContext::live(next_session_id(&stores.trace), &ws.repo_id);
            let line =
                revoke_preference_topic(&mut stores.trace, &ctx, &mut stores.preferences, &topic)
                    .map_err(|e| match e {
                    hw_core::memory::MemoryError::UnknownTopic(_) => usage(e.to_string()),
                    other => other.into(),
                })?;
            stores.preferences.save(&ws.state_dir)?;
            out.emit("hw.revoked", &topic, || line.clone());
        }
        ObserveCommand::Weights => {
            let stores = ws.load_stores()?;
            let view = show_weights(&stores.state);
            out.emit("hw.weights", &view, || view.render());
        }
        ObserveCommand::Report { session } => {
            let stores = ws.load_stores()?;
            let report = show_report(&stores.trace, session.as_deref());
            out.emit("hw.report", &report, || report.render());
        }
    }
    Ok(0)
}

fn persona(name: &str) -> Result<PersonaName> {
    name.parse()
        .map_err(|e: eval::EvalError| usage(e.to_string()))
}

fn eval_cmd(ws: &Workspace, out: &Out, cmd: EvalCommand) -> Result<u8> {
    match cmd {
        EvalCommand::Seed {
            persona: name,
            seed,
            walkthrough: demo,
        } => {
            let _lock = ws.lock()?;
            let mut stores = ws.load_stores()?;
            #[derive(Serialize)]
            struct Seeded {
                source: String,
                decisions_appended: usize,
                approval_rate: Option<f64>,
                inferred: Vec<String>,
            }
            let seeded = if demo {
                let n = walkthrough::seed_walkthrough(&mut stores, &ws.repo_id)?;
                Seeded {
                    source: "walkthrough".into(),
                    decisions_appended: n,
                    approval_rate: None,
                    inferred: Vec::new(),
                }
            } else {
                let name = persona(name.as_deref().unwrap_or_default())?;
                let o = seed_repo(&PersonaProfile::new(name), seed, &mut stores, &ws.repo_id)?;
                Seeded {
                    source: name.as_str().into(),
                    decisions_appended: o.decisions_appended,
                    approval_rate: Some(o.approval_rate),
                    inferred: o.inferred.iter().map(|p| p.name.as_str().into()).collect(),
                }
            };
            ws.save_stores(&stores)?;
            out.emit("hw.seed", &seeded, || {
                let mut s = format!(
                    "seeded {} decisions ({})",
                    seeded.decisions_appended, seeded.source
                );
                if let Some(rate) = seeded.approval_rate {
                    s.push_str(&format!("; approval rate {rate:.2}"));
                }
                if !seeded.inferred.is_empty() {
                    s.push_str(&format!("; inferred {}", seeded.inferred.join(", ")));
                }
                s
            });
            Ok(0)
        }
        EvalCommand::Replay { fixture, oracle } => {
            let text = std::fs::read_to_string(&fixture)
                .with_context(|| format!("reading fixture {}", fixture.display()))?;
            let fixture = EvalFixture::from_json(&text)?;
            let oracle = oracle.as_deref().map(persona).transpose()?;
            let config = ws.config()?;
            let _lock = ws.lock()?;
            let mut stores = ws.load_stores()?;
            let routes = replay_fixture_tasks(&fixture, &mut stores, &config, &ws.repo_id)?;
            ws.save_stores(&stores)?;
            let score = match oracle {
                Some(p) => {
                    let plain: Vec<Route> = routes.iter().map(|r| r.route).collect();
                    Some(score_against_oracle(&plain, &fixture.oracle(p))?)
                }
                None => None,
            };
            #[derive(Serialize)]
            struct Replayed<'a, R: Serialize, S: Serialize> {
                routes: &'a R,
                score: &'a S,
            }
            out.emit(
                "hw.replay",
                &Replayed {
                    routes: &routes,
                    score: &score,
                },
                || {
                    let mut s = String::new();
                    for r in &routes {
                        s.push_str(&format!("{} #{} {:?}\n", r.task, r.proposal_id, r.route));
                    }
                    let live = routes
                        .iter()
                        .filter(|r| r.route == Route::LiveCheckIn)
                        .count();
                    s.push_str(&format!("check-ins: {live}/{}\n", routes.len()));
                    if let Some(sc) = &score {
                        s.push_str(&format!("{sc:?}\n"));
                    }
                    s
                },
            );
            Ok(0)
        }
        EvalCommand::Table1 { seed } => {
            let fixture = EvalFixture::default_fixture();
            let rows = [PersonaName::Cautious, PersonaName::Permissive]
                .into_iter()
                .map(|p| table1_row(p, seed, &fixture))
                .collect::<Result<Vec<_>, _>>()?;
            out.emit("hw.table1", &rows, || render_table1(&rows));
            Ok(0)
        }
        EvalCommand::Personas { seed } => {
            let study = coefficient_deviation_study(seed)?;
            #[derive(Serialize)]
            struct PersonaLine {
                persona: &'static str,
                decisions: usize,
                replay_factor: usize,
                approval_rate: f64,
            }
            let lines: Vec<PersonaLine> = [
                PersonaName::Cautious,
                PersonaName::Permissive,
                PersonaName::Mixed,
            ]
            .into_iter()
            .map(|p| {
                let prof = PersonaProfile::new(p);
                PersonaLine {
                    persona: p.as_str(),
                    decisions: prof.decision_count,
                    replay_factor: prof.replay_factor,
                    approval_rate: prof.approval_rate(),
                }
            })
            .collect();
            #[derive(Serialize)]
            struct Personas<'a, S: Serialize> {
                personas: &'a [PersonaLine],
                deviation: &'a S,
            }
            out.emit(
                "hw.personas",
                &Personas {
                    personas: &lines,
                    deviation: &study,
                },
                || {
                    let mut s = String::new();
                    for l in &lines {
                        s.push_str(&format!(
                            "{:<11} {} decisions x{}, approval rate {:.2}\n",
                            l.persona, l.decisions, l.replay_factor, l.approval_rate
                        ));
                    }
                    s.push_str("\nlearned - prior after seeding\n");
                    s.push_str(&render_study(&study));
                    s
                },
            );
            Ok(0)
        }
    }
}

fn config(ws: &Workspace, out: &Out, args: ConfigArgs) -> Result<u8> {
    let cfg = ws.config()?;
    match args.action {
        None => {
            out.emit("hw.config", &cfg, || {
                serde_json::to_string_pretty(&cfg).expect("config serializes")
            });
        }
        Some(ConfigAction::Get { key }) => {
            let value = serde_json::to_value(&cfg)?;
            let v = value
                .get(&key)
                .ok_or_else(|| usage(format!("unknown config key `{key}`")))?;
            out.emit("hw.config_value", v, || match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            });
        }
        Some(ConfigAction::Set { key, value }) => {
            let _lock = ws.lock()?;
            let mut doc = serde_json::to_value(&cfg)?;
            let obj = doc.as_object_mut().expect("config is an object");
            if !obj.contains_key(&key) {
                return Err(usage(format!("unknown config key `{key}`")));
            }
            let as_string = serde_json::Value::String(value.clone());
            let parsed = serde_json::from_str(&value).unwrap_or_else(|_| as_string.clone());
            obj.insert(key.clone(), parsed);
            let mut attempt = serde_json::from_value::<Config>(doc.clone());
            if attempt.is_err() {
                doc[&key] = as_string;
                attempt = serde_json::from_value(doc);
            }
            let updated = attempt.map_err(|e| usage(format!("{key}: {e}")))?;
            updated.validate().map_err(|e| usage(e.to_string()))?;
            updated.save(&ws.state_dir)?;
            out.emit("hw.config", &updated, || format!("set {key} = {value}"));
        }
    }
    Ok(0)
}
