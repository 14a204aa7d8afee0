use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use textroute::config::Config;
use textroute::eval::{
    metrics, read_trials_jsonl, replay, run_ablation, synth_stream, write_outputs, StubSettings, SynthConfig,
    SynthStream, Variant,
};
use textroute::llm::ScriptedStubLlm;
use textroute::portal::http::serve;
use textroute::portal::Portal;

#[derive(Parser)]
#[command(name = "textroute", version, about = "Routes raw text to the app function it is meant for")]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        /// Answer LLM calls with the offline stub at this accuracy instead
        /// of the configured endpoint.
        #[arg(long)]
        stub_accuracy: Option<f64>,
    },
    /// Generate a synthetic usage stream as JSON.
    Gen {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a stream through one system.
    Replay {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "full")]
        variant: String,
        #[command(flatten)]
        stub: StubArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a stream through several systems.
    Ablate {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated; the full system is always included.
        #[arg(long, default_value = "full,general,nocontext,llm-only,bert-only,mfu,mru,bayes")]
        variants: String,
        #[command(flatten)]
        stub: StubArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics from a JSONL trial log.
    Report {
        trials: PathBuf,
    },
    /// Retrain every saved user under the configured data directory.
    Retrain,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    users: usize,
    #[arg(long, default_value_t = 7)]
    days: usize,
    #[arg(long, default_value_t = 20)]
    functions: usize,
    #[arg(long, default_value_t = 30)]
    queries: usize,
}

impl StreamArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            users: self.users,
            days: self.days,
            functions_per_user: self.functions,
            queries_per_day: self.queries,
            ..SynthConfig::default()
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Stream written by `gen`; generated from the flags below when absent.
    #[arg(long)]
    stream: Option<PathBuf>,
    #[command(flatten)]
    gen: StreamArgs,
}

impl SourceArgs {
    fn load(&self) -> Result<SynthStream> {
        match &self.stream {
            Some(p) => {
                let raw = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(serde_json::from_slice(&raw).with_context(|| format!("parsing {}", p.display()))?)
            }
            None => Ok(synth_stream(&self.gen.config())?),
        }
    }
}

#[derive(Args)]
struct StubArgs {
    #[arg(long, default_value_t = 0.65)]
    accuracy: f64,
    #[arg(long, default_value_t = 200.0)]
    delay_ms: f64,
    #[arg(long, default_value_t = 42)]
    stub_seed: u64,
    /// Stop the stub from copying answers of matching prompt examples.
    #[arg(long)]
    no_recall: bool,
}

impl StubArgs {
    fn settings(&self) -> StubSettings {
        StubSettings {
            seed: self.stub_seed,
            accuracy: self.accuracy,
            delay_ms: self.delay_ms,
            recall: !self.no_recall,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn summarize(outputs: &[textroute::eval::ReplayOutput]) {
    for o in outputs {
        let r = &o.report;
        println!(
            "{:<10} hit1 {:.4}  hit5 {:.4}  mrr {:.4}  local {:.3}  model {:.1} ms  failures {}",
            o.system, r.hit1, r.hit5, r.mrr, r.local_fraction, r.mean_model_ms, r.failures
        );
        for w in o.warnings.iter().take(5) {
            eprintln!("  warning: {w}");
        }
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Serve { bind, stub_accuracy } => {
            let bind = bind.unwrap_or_else(|| cfg.portal.bind.clone());
            let mut portal = Portal::from_config(cfg)?;
            if let Some(p) = stub_accuracy {
                portal = portal.with_llm(Arc::new(ScriptedStubLlm::new(0, p)));
            }
            portal.load_saved()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve(Arc::new(portal), listener).await
            })?;
        }
        Cmd::Gen { stream, out } => {
            let s = synth_stream(&stream.config())?;
            std::fs::write(&out, serde_json::to_vec_pretty(&s)?)?;
            eprintln!("{} queries for {} users written to {}", s.items.len(), s.users.len(), out.display());
        }
        Cmd::Replay {
            source,
            variant,
            stub,
            out,
        } => {
            let stream = source.load()?;
            let v: Variant = variant.parse()?;
            let mut system = v.system(&cfg, &stub.settings(), stream.pool_records())?;
            let output = replay(&stream, system.as_mut())?;
            write_outputs(&out, std::slice::from_ref(&output))?;
            summarize(std::slice::from_ref(&output));
        }
        Cmd::Ablate {
            source,
            variants,
            stub,
            out,
        } => {
            let stream = source.load()?;
            let vs = variants
                .split(',')
                .map(|s| s.trim().parse::<Variant>())
                .collect::<Result<Vec<_>, _>>()?;
            let outputs = run_ablation(&cfg, &stream, &stub.settings(), &vs)?;
            write_outputs(&out, &outputs)?;
            summarize(&outputs);
        }
        Cmd::Report { trials } => {
            let ts = read_trials_jsonl(&trials)?;
            println!("{}", serde_json::to_string_pretty(&metrics(&ts)?)?);
        }
        Cmd::Retrain => {
            if cfg.portal.data_dir.is_none() {
                bail!("retrain needs portal.data_dir in the configuration");
            }
            let portal = Portal::from_config(cfg)?;
            let users = portal.load_saved()?;
            for (key, r) in portal.retrain_all() {
                match r {
                    Ok(rep) => println!("{key}: {} examples in {:.0} ms", rep.examples, rep.wall_ms),
                    Err(e) => eprintln!("{key}: {e}"),
                }
            }
            portal.save_all()?;
            eprintln!("{} users retrained", users.len());
        }
    }
    Ok(())
}
