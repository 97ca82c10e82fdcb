use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use semfact_cli::{
    build_backends, parse_thresholds, run_eval, run_verify, sweep, write_sweep, RunManifest, VerifyRequest,
};
use semfact_core::eval::{compare_report, EvalReport};
use semfact_core::pipeline::{parse_threshold, Mode, PipelineConfig};
use semfact_core::ingest_dataset;

#[derive(Parser)]
#[command(name = "semfact", version, about = "Claim verification over long contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify every record of a dataset and write predictions + manifest.
    Verify(VerifyArgs),
    /// Score a predictions file against gold labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Directory for eval.txt / eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest of the run, used for the time column.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run verify once per TF-IDF threshold and write sweep.csv / sweep.json.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// Comma-separated list; accepts inf and -inf.
        #[arg(long, allow_hyphen_values = true)]
        thresholds: String,
    },
    /// Side-by-side table of eval.json reports, given as NAME=PATH.
    Compare {
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON pipeline config; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// mock, mock-gold or an http(s) base URL.
    #[arg(long)]
    backend: Option<String>,
    /// Extra table entries for the mock backends.
    #[arg(long)]
    mock_spec: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: RunArgs,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_threshold)]
    threshold: Option<f64>,
    /// Repeat the run recorded in a manifest (other flags are ignored
    /// except --out).
    #[arg(long, conflicts_with = "input")]
    replay: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(b) = &self.backend {
            cfg.backend.target = b.clone();
        }
        if let Some(v) = self.token_budget {
            cfg.token_budget = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.timeout_ms {
            cfg.backend.timeout_ms = v;
        }
        if let Some(v) = self.max_retries {
            cfg.backend.max_retries = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn input(&self) -> Result<PathBuf> {
        self.input.clone().context("--input is required")
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let req = match &args.replay {
        Some(path) => VerifyRequest::from_manifest(&RunManifest::load(path)?, args.common.out.clone()),
        None => {
            let mut config = args.common.config()?;
            if let Some(t) = args.threshold {
                config.tfidf_threshold = t;
            }
            VerifyRequest {
                input: args.common.input()?,
                config,
                mock_spec: args.common.mock_spec.clone(),
                jobs: args.common.jobs,
                out_dir: args.common.out.clone(),
            }
        }
    };
    let manifest = run_verify(&req)?;
    let ok = manifest.dataset.records - manifest.failures.len();
    println!(
        "verified {ok}/{} records in {:.1} ms -> {}",
        manifest.dataset.records,
        manifest.timings.wall_ms,
        manifest.outputs.predictions.display()
    );
    for f in &manifest.failures {
        error!("{}: {}", f.id, f.error);
    }
    Ok(if manifest.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Verify(args) => verify(args),
        Command::Eval { pred, gold, out, manifest } => (|| {
            let time = match manifest {
                Some(p) => RunManifest::load(&p)?.timings.wall_ms,
                None => 0.0,
            };
            let (_, text) = run_eval(&pred, &gold, time, out.as_deref())?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Sweep { common, thresholds } => (|| {
            let thresholds = parse_thresholds(&thresholds)?;
            let config = common.config()?;
            let records = ingest_dataset(common.input()?)?;
            let backends = build_backends(&config, &records, common.mock_spec.as_deref())?;
            let points = sweep(&records, &config, &backends, &thresholds, common.jobs)?;
            write_sweep(&common.out, &points)?;
            info!("sweep over {} thresholds written to {}", points.len(), common.out.display());
            print!("{}", semfact_cli::sweep_csv(&points));
            let failed = points.iter().any(|p| p.failed > 0);
            Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
        })(),
        Command::Compare { reports } => (|| {
            let mut rows = Vec::new();
            for item in &reports {
                let (name, path) = item.split_once('=').context("expected NAME=PATH")?;
                let raw = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
                let report: EvalReport = serde_json::from_str(&raw).with_context(|| format!("parsing {path}"))?;
                rows.push((name.to_string(), report));
            }
            print!("{}", compare_report(&rows).0);
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
