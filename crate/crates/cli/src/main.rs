//! `vagree`: annotation agreement pipelines.

mod commands;
mod config;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "vagree",
    version,
    about = "Vessel annotation agreement analysis"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the merged configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,
    /// Format of the report printed on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterChoice {
    Frangi,
    Sato,
    Both,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// First annotation mask.
    #[arg(long, requires = "b", conflicts_with = "dataset")]
    pub a: Option<PathBuf>,
    /// Second annotation mask.
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// Centerline distance field of the first annotation.
    #[arg(long, requires = "a")]
    pub a_udf: Option<PathBuf>,
    /// Centerline distance field of the second annotation.
    #[arg(long, requires = "b")]
    pub b_udf: Option<PathBuf>,
    /// Dataset root with a `dataset.json` index.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Annotator ids compared in dataset mode.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub annotators: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact Euclidean distance to the foreground of a mask.
    Edt {
        #[arg(long)]
        mask: PathBuf,
        /// Signed distance to the mask boundary (negative inside).
        #[arg(long)]
        signed: bool,
    },
    /// Zhang-Suen skeleton of a mask.
    Skeleton {
        #[arg(long)]
        mask: PathBuf,
    },
    /// clDice of two annotations or of every pair in a dataset.
    Cldice {
        #[command(flatten)]
        pair: PairArgs,
        /// Distance threshold in pixels; omit for standard clDice.
        #[arg(long)]
        d: Option<f64>,
    },
    /// Modified clDice over a grid of thresholds.
    CldiceSweep {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        min: Option<f64>,
        #[arg(long)]
        max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Frangi and Sato vesselness, optionally scored against annotations.
    Vesselness {
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        image: Option<PathBuf>,
        #[arg(long, requires = "b", requires = "image")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FilterChoice::Both)]
        filter: FilterChoice,
        /// Comma-separated scales in pixels.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Samples square patches from an annotated dataset.
    Patchgen {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Builds a rating set from a patch set.
    RateBuild {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duplicates: Option<usize>,
        #[arg(long)]
        none: Option<usize>,
        #[arg(long)]
        both: Option<usize>,
        #[arg(long)]
        a1_only: Option<usize>,
        #[arg(long)]
        a2_only: Option<usize>,
    },
    /// Serves a rating set over HTTP.
    RateServe {
        /// Directory written by `rate-build`.
        #[arg(long)]
        rating_dir: PathBuf,
        /// Directory for the append-only response logs.
        #[arg(long)]
        log_dir: PathBuf,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        cors_origin: Option<String>,
    },
    /// Agreement and consistency tables from collected responses.
    RateAnalyze {
        /// `rating_set.json` or the directory holding it.
        #[arg(long)]
        rating_set: PathBuf,
        /// `responses.jsonl` or the log directory holding it.
        #[arg(long)]
        log: PathBuf,
        #[arg(long = "ref", value_parser = parse_reference)]
        reference: Option<vessel_agreement::Reference>,
    },
    /// Writes a seeded synthetic dataset with two annotators.
    Synth {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 1.0)]
        jitter: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_reference(s: &str) -> Result<vessel_agreement::Reference, String> {
    s.parse()
        .map_err(|_| format!("expected A1 or A2, got `{s}`"))
}

fn error_line(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use vessel_agreement::Error as E;
    if let Some(e) = e.downcast_ref::<E>() {
        return match e {
            E::Io { .. } => "io",
            E::Json(_) | E::Format { .. } => "format",
            E::Shortfall(_) => "shortfall",
            E::InvalidParameter { .. } => "invalid_parameter",
            _ => "invalid_input",
        };
    }
    if e.downcast_ref::<vessel_agreement_service::ServiceError>()
        .is_some()
    {
        return "service";
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    if e.downcast_ref::<commands::UsageError>().is_some() {
        return "usage";
    }
    "runtime"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            error_line(
                "usage",
                e.to_string()
                    .lines()
                    .next()
                    .unwrap_or_default()
                    .trim_start_matches("error: "),
            );
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            error_line("usage", "--threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            error_line("runtime", &e.to_string());
            return ExitCode::FAILURE;
        }
    }

    let result = PipelineConfig::load(cli.config.as_deref()).and_then(|mut cfg| {
        if let Some(o) = &cli.out {
            cfg.out = o.clone();
        }
        let ctx = commands::Context {
            format: cli.format,
            show_config: cli.show_config,
        };
        commands::run(cli.command, cfg, &ctx)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = error_kind(&e);
            error_line(kind, &format!("{e:#}"));
            if kind == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
