use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use envdiff_cli::commands::{self, fold_dir};
use envdiff_cli::config::{DenoiserKind, ExperimentConfig};
use envdiff_cli::{selftest, CliError, Result};
use envdiff_core::metrics::EvalLabels;
use envdiff_core::sampler::SamplerKind;
use envdiff_core::simulate::Condition;

#[derive(Parser)]
#[command(name = "envdiff", version, about = "Diffusion-based environmental noise removal experiments")]
struct Cli {
    /// TOML experiment configuration; flags override its keys.
    #[arg(long, short, global = true, env = "ENVDIFF_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render training and test mixtures for the requested folds.
    Simulate(SimulateArgs),
    /// Fit the linear denoiser on a dataset's training mixtures.
    Fit(FitArgs),
    /// Enhance the test mixtures of a dataset.
    Enhance(EnhanceArgs),
    /// Score enhanced files against the dataset targets.
    Evaluate(EvaluateArgs),
    /// Enhance and score for every sampler and step count.
    Sweep(SweepArgs),
    /// Inspect the noise schedule.
    Schedule {
        #[command(subcommand)]
        action: ScheduleAction,
    },
    /// Run fast built-in consistency checks.
    Selftest,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generate stand-in databases instead of reading manifests.
    #[arg(long)]
    synthetic: bool,
    /// Training hours per fold; test hours default to a tenth of this.
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    test_hours: Option<f64>,
    /// Fold index (1-5); repeat for several folds.
    #[arg(long)]
    fold: Vec<usize>,
    /// Training databases per kind (1 or 4).
    #[arg(long)]
    n: Option<usize>,
    /// Dataset root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Database manifest CSV; repeat for all fifteen databases.
    #[arg(long)]
    manifest: Vec<PathBuf>,
}

#[derive(Args)]
struct DenoiserArgs {
    #[arg(long, value_enum)]
    denoiser: Option<DenoiserKind>,
    /// Linear denoiser model file.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Rendered fold directory containing index.json.
    #[arg(long)]
    dataset: PathBuf,
    /// Model file to write.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    per_frequency: bool,
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Matched,
    Mismatched,
    Train,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Matched => Condition::Matched,
            ConditionArg::Mismatched => Condition::Mismatched,
            ConditionArg::Train => Condition::Train,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Pc,
    Edm,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Pc => SamplerKind::Pc,
            SamplerArg::Edm => SamplerKind::Edm,
        }
    }
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    /// Restrict to one condition; repeatable.
    #[arg(long, value_enum)]
    condition: Vec<ConditionArg>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of enhanced `<id>.wav` files.
    #[arg(long)]
    enhanced: PathBuf,
    /// Output directory for rows.csv and aggregates.csv; defaults to --enhanced.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "enhanced")]
    system: String,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    steps: Option<usize>,
    /// External PESQ command with {ref} and {deg} placeholders.
    #[arg(long)]
    pesq_command: Option<String>,
    #[arg(long, value_enum)]
    condition: Vec<ConditionArg>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated step counts.
    #[arg(long, value_delimiter = ',')]
    steps: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    samplers: Vec<SamplerArg>,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    #[arg(long, value_enum)]
    condition: Vec<ConditionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum ScheduleAction {
    /// Print t, log-SNR, sigma, scale, beta, f and g on an even grid.
    Dump {
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: TableFormat,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_denoiser(cfg: &mut ExperimentConfig, args: &DenoiserArgs) {
    if let Some(k) = args.denoiser {
        cfg.denoiser.kind = k;
    }
    if let Some(m) = &args.model {
        cfg.denoiser.model = Some(m.clone());
        if args.denoiser.is_none() {
            cfg.denoiser.kind = DenoiserKind::Linear;
        }
    }
}

fn apply_conditions(cfg: &mut ExperimentConfig, c: &[ConditionArg]) {
    if !c.is_empty() {
        cfg.evaluate.conditions = c.iter().map(|&c| c.into()).collect();
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Simulate(a) => {
            cfg.dataset.synthetic |= a.synthetic;
            if let Some(h) = a.hours {
                cfg.dataset.train_hours = h;
                cfg.dataset.test_hours = h / 10.0;
            }
            if let Some(h) = a.test_hours {
                cfg.dataset.test_hours = h;
            }
            if !a.fold.is_empty() {
                cfg.dataset.folds = a.fold;
            }
            if let Some(n) = a.n {
                cfg.dataset.n_train = n;
            }
            if let Some(o) = a.out {
                cfg.dataset.root = o;
            }
            if !a.manifest.is_empty() {
                cfg.dataset.manifests = a.manifest;
            }
            let summaries = commands::run_simulate(&cfg)?;
            for s in &summaries {
                log::info!("wrote {}", fold_dir(&cfg.dataset.root, s.n_train, s.fold).display());
            }
            print_json(&summaries)
        }
        Command::Fit(a) => {
            if let Some(b) = a.bins {
                cfg.fit.n_sigma_bins = b;
            }
            if let Some(d) = a.draws {
                cfg.fit.draws_per_pair = d;
            }
            cfg.fit.per_frequency |= a.per_frequency;
            if a.max_pairs.is_some() {
                cfg.fit.max_pairs = a.max_pairs;
            }
            let s = commands::run_fit(&cfg, &a.dataset, &a.out)?;
            print_json(&s)
        }
        Command::Enhance(a) => {
            if let Some(s) = a.sampler {
                cfg.sampler.kind = s.into();
            }
            if let Some(n) = a.steps {
                cfg.sampler.n_steps = n;
            }
            apply_denoiser(&mut cfg, &a.denoiser);
            apply_conditions(&mut cfg, &a.condition);
            let s = commands::run_enhance(&cfg, &a.dataset, &a.out)?;
            eprintln!(
                "enhanced {} mixtures ({} failed), {} denoiser evaluations each",
                s.runs.len() - s.failures,
                s.failures,
                s.expected_evaluations
            );
            if s.failures > 0 && s.failures == s.runs.len() {
                let first = &s.runs[0];
                let msg = format!("every mixture failed, first: {}", first.error.as_deref().unwrap_or(""));
                return Err(match first.error_code {
                    Some(4) => CliError::Numeric(msg),
                    _ => CliError::Data(msg),
                });
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            if a.pesq_command.is_some() {
                cfg.evaluate.pesq_command = a.pesq_command;
            }
            apply_conditions(&mut cfg, &a.condition);
            let labels = EvalLabels {
                system: a.system,
                sampler: a.sampler.map(|s| SamplerKind::from(s).to_string()),
                n_steps: a.steps,
            };
            let out = a.out.unwrap_or_else(|| a.enhanced.clone());
            let r = commands::run_evaluate(&cfg, &a.dataset, &a.enhanced, labels, &out)?;
            let (ok, missing, invalid) = commands::status_counts(&r.rows);
            eprintln!("scored {ok} mixtures, {missing} missing, {invalid} invalid");
            print_json(&r.aggregates)
        }
        Command::Sweep(a) => {
            if !a.steps.is_empty() {
                cfg.sweep.n_steps = a.steps;
            }
            if !a.samplers.is_empty() {
                cfg.sweep.samplers = a.samplers.into_iter().map(Into::into).collect();
            }
            apply_denoiser(&mut cfg, &a.denoiser);
            apply_conditions(&mut cfg, &a.condition);
            let s = commands::run_sweep(&cfg, &a.dataset, &a.out)?;
            eprintln!("wrote {}", a.out.join("sweep.csv").display());
            print_json(&s.rows)
        }
        Command::Schedule { action: ScheduleAction::Dump { points, format } } => {
            let rows = commands::schedule_table(&cfg.schedule, points)?;
            match format {
                TableFormat::Json => print_json(&rows),
                TableFormat::Csv => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
                    }
                    w.flush().map_err(|e| CliError::io(Path::new("<stdout>"), e))
                }
            }
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(CliError::Numeric("selftest failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = envdiff_cli::init_workers().and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
