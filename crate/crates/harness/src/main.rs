use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use petg_core::tcypher::Engine;
use petg_core::Database;
use petg_harness::config::Config;
use petg_harness::generate::{generate, EDGES_FILE, EVENTS_FILE, NODES_FILE};
use petg_harness::ingest::ingest_csv;
use petg_harness::recover_check::{recover_check, CrashSpec};
use petg_harness::report::report_space;
use petg_harness::workload::run_workload;

const CONFIG_FILE: &str = "petg.conf";

#[derive(Parser)]
#[command(name = "petg", version, about = "Temporal property graph tools")]
struct Cli {
    /// Database directory.
    #[arg(long, global = true, default_value = ".")]
    db: PathBuf,
    /// Config file; defaults to `<db>/petg.conf` when present.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Creates a database directory with a default config file.
    Init { dir: PathBuf },
    /// Loads nodes, edges and events CSV files.
    Ingest {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Writes a synthetic CSV triple.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Also ingest the result into `--db`.
        #[arg(long)]
        ingest: bool,
    },
    /// Runs the configured request mix and prints a JSON report.
    Workload,
    /// Runs one TCypher statement and commits it.
    Query { tcypher: String },
    /// Prints the space report.
    Stats {
        /// Flush and merge everything first.
        #[arg(long)]
        flush: bool,
        #[arg(long)]
        json: bool,
    },
    /// Injects random crash points and verifies recovery.
    RecoverCheck {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 40)]
        txns: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let path = cli.config.clone().or_else(|| {
        let p = cli.db.join(CONFIG_FILE);
        p.exists().then_some(p)
    });
    let mut c = match path {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got `{kv}`"))?;
        c.set(k.trim(), v.trim())?;
    }
    c.workload.validate()?;
    Ok(c)
}

fn open(dir: &Path, c: &Config) -> Result<Database> {
    Database::open(dir, c.db.clone()).with_context(|| format!("opening database in {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Init { dir } => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(CONFIG_FILE);
            if !path.exists() {
                std::fs::write(&path, config.to_text())?;
            }
            drop(open(dir, &config)?);
            println!("initialized {}", dir.display());
        }
        Cmd::Ingest { nodes, edges, events } => {
            let db = open(&cli.db, &config)?;
            let r = ingest_csv(&db, nodes, edges, events.as_deref(), &config.ingest)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Cmd::Generate { out, ingest } => {
            let r = generate(&config.synth, out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            eprintln!("value-change fraction {:.4}", r.change_fraction());
            if *ingest {
                let db = open(&cli.db, &config)?;
                let mut opts = config.ingest.clone();
                opts.chronon_secs = config.synth.chronon_secs;
                let events = out.join(EVENTS_FILE);
                let r = ingest_csv(&db, &out.join(NODES_FILE), &out.join(EDGES_FILE), Some(&events), &opts)?;
                println!("{}", serde_json::to_string_pretty(&r)?);
            }
        }
        Cmd::Workload => {
            let db = open(&cli.db, &config)?;
            let r = run_workload(&db, &config.workload)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Cmd::Query { tcypher } => {
            let db = open(&cli.db, &config)?;
            let mut txn = db.begin();
            let table = Engine::new().run(&mut txn, tcypher)?;
            txn.commit()?;
            if !table.columns.is_empty() {
                println!("{}", table.columns.join("\t"));
                for row in &table.rows {
                    let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
                    println!("{}", cells.join("\t"));
                }
            }
            eprintln!("{} row(s), {} affected", table.rows.len(), table.affected);
        }
        Cmd::Stats { flush, json } => {
            let db = open(&cli.db, &config)?;
            if *flush {
                db.flush_all()?;
            }
            let r = report_space(&db);
            if *json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{r}");
            }
        }
        Cmd::RecoverCheck { trials, txns, seed } => {
            let r = recover_check(&CrashSpec {
                trials: *trials,
                txns_per_trial: *txns,
                seed: *seed,
            })?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if r.violations > 0 {
                return Err(anyhow!("{} recovery violation(s)", r.violations));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
