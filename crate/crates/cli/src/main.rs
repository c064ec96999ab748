mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::config::Config;
use crate::error::{exit_code, CliError};
use crate::manifest::Recorder;

/// Time-aware label weighting experiments on wearable pulse data.
#[derive(Debug, Parser)]
#[command(name = "gapweight", version, about)]
struct Cli {
    /// Print every configuration key with its default and exit.
    #[arg(long)]
    list_keys: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort (feature level or waveform level).
    Synth(SynthArgs),
    /// Segment, quality-gate, filter and normalize raw streams, then attach labels.
    Preprocess(PreprocessArgs),
    /// Extract feature vectors from preprocessed segments.
    Featurize(CommonArgs),
    /// Train one model with a held-out validation fold.
    Train(CommonArgs),
    /// Cross-validate one method.
    Eval(CommonArgs),
    /// Cross-validate the learned-rate method under several decay families.
    CompareDecays(CompareArgs),
    /// Cross-validate the full method and its two ablations.
    Ablate(CommonArgs),
    /// Render report CSVs as an aligned table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (`key=value`); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Rerun with the configuration recorded in a manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    biomarker: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Allow lambda values other than the default.
    #[arg(long)]
    unsafe_tune_lambda: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// `features` or `waveform`.
    #[arg(long)]
    level: Option<String>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    sqi_threshold: Option<String>,
    #[arg(long)]
    window_days: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated decay families.
    #[arg(long)]
    families: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Report CSVs to render.
    paths: Vec<PathBuf>,
}

type Handler = fn(&mut Run) -> anyhow::Result<()>;

/// Command-specific flags as `(config key, value)` pairs.
type Extra = Vec<(&'static str, Option<String>)>;

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs, Extra, Handler) {
        match self {
            Command::Synth(a) => ("synth", &a.common, vec![("level", a.level.clone())], commands::synth),
            Command::Preprocess(a) => (
                "preprocess",
                &a.common,
                vec![
                    ("sqi_threshold", a.sqi_threshold.clone()),
                    ("window_days", a.window_days.clone()),
                ],
                commands::preprocess,
            ),
            Command::Featurize(a) => ("featurize", a, vec![], commands::featurize),
            Command::Train(a) => ("train", a, vec![], commands::train),
            Command::Eval(a) => ("eval", a, vec![], commands::eval),
            Command::CompareDecays(a) => (
                "compare-decays",
                &a.common,
                vec![("families", a.families.clone())],
                commands::compare,
            ),
            Command::Ablate(a) => ("ablate", a, vec![], commands::ablate),
            Command::Report(a) => {
                let joined = (!a.paths.is_empty()).then(|| {
                    a.paths
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                });
                ("report", &a.common, vec![("input", joined)], commands::report)
            }
        }
    }
}

/// Layers manifest snapshot < config file < `--set` < flags.
fn resolve(name: &str, common: &CommonArgs, extra: Extra) -> anyhow::Result<(Config, bool)> {
    let mut unsafe_lambda = common.unsafe_tune_lambda;
    let mut cfg = match &common.from_manifest {
        Some(path) => {
            let m = manifest::load(path)?;
            if m.command != name {
                return Err(CliError::Config(format!(
                    "manifest {} records command '{}', not '{name}'",
                    path.display(),
                    m.command
                ))
                .into());
            }
            for input in &m.inputs {
                match manifest::file_digest(std::path::Path::new(&input.path)) {
                    Ok(now) if now.sha256 == input.sha256 => {}
                    _ => eprintln!("warning: input {} differs from the manifest record", input.path),
                }
            }
            unsafe_lambda |= m.unsafe_tune_lambda;
            Config::from_snapshot(&m.config)?
        }
        None => Config::new(),
    };
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    let flags = [
        ("out_dir", &common.out),
        ("input", &common.input),
        ("seed", &common.seed),
        ("jobs", &common.jobs),
        ("biomarker", &common.biomarker),
        ("family", &common.family),
        ("method", &common.method),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    Ok((cfg, unsafe_lambda))
}

fn execute(command: &Command) -> anyhow::Result<()> {
    let (name, common, extra, handler) = command.parts();
    let (cfg, unsafe_tune_lambda) = resolve(name, common, extra)?;
    let mut run = Run {
        cfg: &cfg,
        unsafe_tune_lambda,
        recorder: Recorder::new(name),
    };
    handler(&mut run)?;
    if let Some(out) = cfg.get_str("out_dir") {
        let path = run.recorder.finish(&cfg, unsafe_tune_lambda, std::path::Path::new(out))?;
        println!("manifest: {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_keys {
        print!("{}", config::describe_keys());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(2);
    };
    match execute(&command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
