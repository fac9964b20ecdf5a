//! `execeval`: command-line front end. Every command talks to the HTTP
//! service; without `--server` one is started in-process on a loopback port.
//!
//! Exit codes: 0 success, 1 invalid input or failed validation, 2 internal
//! error or a run that recorded a fatal error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use execeval_client::{Client, ClientError};
use execeval_core::analytics::{agreement_csv, means_csv, rates_csv, stability_csv, Grouping, Policy};
use execeval_core::api::{AgreeRequest, RunState};
use execeval_core::config::{RunConfig, RunMode, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "execeval", version, about = "Evaluate research bundles against a fixed checklist")]
struct Cli {
    /// Base URL of a running service. Defaults to an in-process server.
    #[arg(long, global = true, env = "EXECEVAL_SERVER")]
    server: Option<String>,
    /// Configuration file. Defaults to ./execeval.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check bundle layout and invariants.
    Validate { bundles: Vec<PathBuf> },
    /// Evaluate bundles and write verdicts under the output directory.
    Run {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        keep_workspaces: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<u32>,
        /// Also aggregate each task with this policy.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Combine the runs of one task directory.
    Aggregate {
        task_dir: PathBuf,
        #[arg(long, value_enum, default_value = "and")]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Compare a verdict document with a human assessment.
    Agree {
        agent: PathBuf,
        human: PathBuf,
        /// JSON list of agent issues; derived from FAIL verdicts when absent.
        #[arg(long)]
        agent_issues: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Failure rates across task directories.
    Rates {
        #[arg(required = true)]
        task_dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "item")]
        by: GroupArg,
        #[arg(long, value_enum, default_value = "and")]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Print the checklist.
    Checklist,
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    DocOnly,
    NoExecution,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    And,
    Majority,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Item,
    Dimension,
    Category,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => RunMode::Full,
            ModeArg::DocOnly => RunMode::DocOnly,
            ModeArg::NoExecution => RunMode::NoExecution,
        }
    }
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::And => Policy::And,
            PolicyArg::Majority => Policy::Majority,
        }
    }
}

impl From<GroupArg> for Grouping {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Item => Grouping::Item,
            GroupArg::Dimension => Grouping::Dimension,
            GroupArg::Category => Grouping::Category,
        }
    }
}

enum Failure {
    User(String),
    Internal(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        if e.is_user_error() {
            Failure::User(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match rt.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

async fn dispatch(cli: Cli) -> Outcome {
    if let Command::Serve { listen } = &cli.command {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| Failure::User(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::Internal(e.to_string()))?;
        eprintln!("listening on http://{addr}");
        return execeval_server::serve(listener).await.map_err(|e| Failure::Internal(e.to_string()));
    }
    let client = connect(cli.server.as_deref()).await?;
    match cli.command {
        Command::Validate { bundles } => validate(&client, bundles).await,
        Command::Run { bundles, mode, repeats, jobs, keep_workspaces, out, run_id, policy } => {
            let mut cfg = load_config(cli.config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(n) = repeats {
                cfg.repeats = n;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(id) = run_id {
                cfg.run_id = id;
            }
            cfg.keep_workspaces |= keep_workspaces;
            cfg.check().map_err(|e| Failure::User(e.to_string()))?;
            absolutize_config(&mut cfg)?;
            let bundles = bundles.iter().map(|b| absolute(b)).collect::<Result<Vec<_>, _>>()?;
            run(&client, bundles, cfg, policy.map(Policy::from)).await
        }
        Command::Aggregate { task_dir, policy, format } => {
            let out = client.aggregate(absolute(&task_dir)?, policy.into()).await?;
            if format == Format::Json {
                return print_json(&out);
            }
            println!("{}", out.path.display());
            print!("{}", stability_csv(&out.stability));
            Ok(())
        }
        Command::Agree { agent, human, agent_issues, format } => {
            let req = AgreeRequest {
                agent: absolute(&agent)?,
                human: absolute(&human)?,
                agent_issues: agent_issues.as_deref().map(absolute).transpose()?,
            };
            let out = client.agree(&req).await?;
            if format == Format::Json {
                return print_json(&out);
            }
            let overall = &out.agreement.overall;
            match overall.percent {
                Some(p) => println!("agreement: {p:.1}% ({}/{})", overall.matched, overall.compared),
                None => println!("agreement: undefined (no comparable items)"),
            }
            print!("{}", agreement_csv(&out.agreement));
            println!("issues: both={} agent_only={} human_only={}", out.venn.both, out.venn.agent_only, out.venn.human_only);
            if !out.rated_quality.is_empty() {
                print!("{}", means_csv(&out.rated_quality));
            }
            Ok(())
        }
        Command::Rates { task_dirs, by, policy, format } => {
            let dirs = task_dirs.iter().map(|d| absolute(d)).collect::<Result<Vec<_>, _>>()?;
            let rows = client.rates(dirs, by.into(), policy.into()).await?;
            if format == Format::Json {
                return print_json(&rows);
            }
            print!("{}", rates_csv(&rows));
            Ok(())
        }
        Command::Checklist => {
            let list = client.checklist().await?;
            println!("checklist version {}", list.version);
            for item in list.items {
                println!("{:<32} {}", item.key, item.text);
            }
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

async fn connect(server: Option<&str>) -> Result<Client, Failure> {
    if let Some(url) = server {
        return Ok(Client::new(url));
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| Failure::Internal(format!("cannot start local server: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Failure::Internal(e.to_string()))?;
    tokio::spawn(execeval_server::serve(listener));
    Ok(Client::new(format!("http://{addr}")))
}

async fn validate(client: &Client, bundles: Vec<PathBuf>) -> Outcome {
    if bundles.is_empty() {
        return Err(Failure::User("no bundles given".into()));
    }
    let mut invalid = 0;
    for b in &bundles {
        let path = absolute(b)?;
        match client.validate(&path).await {
            Ok(resp) => {
                print!("{} ({}): {}", b.display(), resp.task_id, resp.report);
                if !resp.valid {
                    invalid += 1;
                }
            }
            Err(e) if e.is_user_error() => {
                println!("{}: error: {}", b.display(), api_message(&e));
                invalid += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if invalid > 0 {
        return Err(Failure::User(format!("{invalid} of {} bundles invalid", bundles.len())));
    }
    Ok(())
}

async fn run(client: &Client, bundles: Vec<PathBuf>, cfg: RunConfig, policy: Option<Policy>) -> Outcome {
    let status = client.run(bundles, cfg).await?;
    match status.state {
        RunState::Succeeded => {}
        RunState::Failed | RunState::Running => {
            let e = status.error.unwrap_or_else(|| execeval_core::api::ApiError::new("internal", "run did not finish"));
            let msg = format!("{}: {}", e.kind, e.message);
            return Err(if e.is_user_error() { Failure::User(msg) } else { Failure::Internal(msg) });
        }
    }
    let summary = status.summary.unwrap_or_default();
    for task in &summary.tasks {
        println!("{}: {} runs in {}", task.task_id, task.runs.len(), task.dir.display());
        for e in &task.errors {
            println!("  error: {e}");
        }
        if let Some(p) = policy {
            let out = client.aggregate(&task.dir, p).await?;
            println!("  aggregate: {}", out.path.display());
        }
    }
    if summary.has_errors() {
        return Err(Failure::Internal("one or more runs recorded a fatal error".into()));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let path = match path {
        Some(p) => Some(p.to_path_buf()),
        None => Some(PathBuf::from(CONFIG_FILE)).filter(|p| p.is_file()),
    };
    match path {
        Some(p) => RunConfig::load(&absolute(&p)?).map_err(|e| Failure::User(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

/// Paths are resolved by the server, so anything relative is anchored here.
fn absolutize_config(cfg: &mut RunConfig) -> Result<(), Failure> {
    cfg.out = absolute(&cfg.out)?;
    for p in [cfg.workspace_dir.as_mut(), cfg.judge.script.as_mut(), cfg.judge.templates.as_mut()].into_iter().flatten() {
        *p = absolute(p)?;
    }
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| Failure::User(format!("{}: {e}", p.display())))
}

fn api_message(e: &ClientError) -> String {
    match e {
        ClientError::Api { error, .. } => error.message.clone(),
        other => other.to_string(),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Failure::Internal(e.to_string()))
}
