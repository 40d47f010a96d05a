use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use context_kernel::config::{Config, CONFIG_ENV};
use context_kernel::kb::{KnowledgeBase, Pattern, ValidationMode};
use context_kernel::sim::{run_scenario, ScenarioScript, ScenarioTrace};
use context_kernel::stack::Stack;
use context_kernel::time::Timestamp;
use context_kernel_cli::server::Server;

const EXIT_FAILED: u8 = 1;
const EXIT_LOAD: u8 = 2;

#[derive(Parser)]
#[command(name = "context-kernel", version, about = "Activity-aware context kernel")]
struct Cli {
    /// Configuration file (JSON).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Reject facts that fail ontology validation.
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,
    /// Store facts that fail validation, flagged as unvalidated.
    #[arg(long, global = true)]
    lenient: bool,
    /// Append-only KB journal.
    #[arg(long, global = true)]
    journal: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a scenario script and check its expectations.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "human")]
        format: Format,
    },
    /// Print the bindings of a pattern over the journal, one per line.
    Query {
        pattern: String,
        /// Only facts valid at this instant (RFC 3339).
        #[arg(long)]
        at: Option<Timestamp>,
    },
    /// Accept provider and service sessions until interrupted.
    Serve {
        /// Address to bind; defaults to the configured one, else 127.0.0.1:7878.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Compare a JSON trace on stdin with a fresh run of the scenario.
    ReplayCheck {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_LOAD)
        }
    }
}

fn config(cli: &Cli) -> Result<Config, String> {
    let mut cfg = Config::resolve(cli.config.as_deref()).map_err(|e| e.to_string())?;
    if cli.strict {
        cfg.mode = ValidationMode::Strict;
    }
    if cli.lenient {
        cfg.mode = ValidationMode::Lenient;
    }
    if let Some(j) = &cli.journal {
        cfg.journal = Some(j.clone());
    }
    Ok(cfg)
}

fn load_script(path: &Path) -> Result<ScenarioScript, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ScenarioScript::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn dispatch(cli: Cli) -> Result<u8, String> {
    let cfg = config(&cli)?;
    match cli.command {
        Command::Run { scenario, format } => {
            let script = load_script(&scenario)?;
            let trace = run_scenario(&script, &cfg).map_err(|e| e.to_string())?;
            let text = match format {
                Format::Human => trace.render_human(),
                Format::Json => trace.to_json() + "\n",
            };
            io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string())?;
            Ok(if trace.passed { 0 } else { EXIT_FAILED })
        }
        Command::Query { pattern, at } => {
            let mut p = Pattern::parse(&pattern).map_err(|e| e.to_string())?;
            if let Some(t) = at {
                p = p.at(t);
            }
            let path = cfg.journal.as_ref().ok_or("no journal configured; pass --journal")?;
            let kb =
                KnowledgeBase::replay_file(Arc::clone(&cfg.ontology), cfg.mode, path).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut out = io::stdout().lock();
            for b in kb.query(&p) {
                writeln!(out, "{b}").map_err(|e| e.to_string())?;
            }
            Ok(0)
        }
        Command::Serve { listen } => serve(&cfg, listen),
        Command::ReplayCheck { scenario } => {
            let script = load_script(&scenario)?;
            let mut input = String::new();
            io::stdin().read_to_string(&mut input).map_err(|e| e.to_string())?;
            ScenarioTrace::from_json(&input).map_err(|e| format!("stdin: not a trace: {e}"))?;
            let live = run_scenario(&script, &cfg).map_err(|e| e.to_string())?;
            // Compare as JSON documents so both sides go through one float parser.
            let given: serde_json::Value = serde_json::from_str(&input).map_err(|e| e.to_string())?;
            let fresh: serde_json::Value = serde_json::from_str(&live.to_json()).expect("trace is JSON");
            if given == fresh {
                println!("replay matches: {} entries", live.entries.len());
                Ok(0)
            } else {
                let given = ScenarioTrace::from_json(&input).expect("checked above");
                let at = given.entries.iter().zip(&live.entries).position(|(a, b)| a != b);
                match at {
                    Some(i) => println!("replay differs at entry {i}"),
                    None => println!("replay differs: {} entries given, {} replayed", given.entries.len(), live.entries.len()),
                }
                Ok(EXIT_FAILED)
            }
        }
    }
}

fn serve(cfg: &Config, listen: Option<String>) -> Result<u8, String> {
    let addr = listen.or_else(|| cfg.listen.clone()).unwrap_or_else(|| "127.0.0.1:7878".into());
    let mut stack = match &cfg.journal {
        Some(path) if path.exists() => {
            let kb =
                KnowledgeBase::replay_file(Arc::clone(&cfg.ontology), cfg.mode, path).map_err(|e| format!("{}: {e}", path.display()))?;
            Stack::with_kb(cfg, kb).map_err(|e| e.to_string())?
        }
        _ => Stack::new(cfg).map_err(|e| e.to_string())?,
    };
    if let Some(path) = &cfg.journal {
        stack.kb.attach_journal(path).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let server = Server::bind(&addr, stack).map_err(|e| format!("{addr}: {e}"))?;
    let bound = server.local_addr().map_err(|e| e.to_string())?;
    let stop = server.stop_handle().map_err(|e| e.to_string())?;
    ctrlc::set_handler(move || stop.stop()).map_err(|e| e.to_string())?;
    println!("listening on {bound}");
    io::stdout().flush().map_err(|e| e.to_string())?;
    server.run().map_err(|e| e.to_string())?;
    eprintln!("journal flushed, shutting down");
    Ok(0)
}
