//! Command-line entry point for crossfuse.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use crossfuse::diagnostics::{run_gradcheck_suite, GRADCHECK_TOLERANCE};
use crossfuse::eval::{render_report, ReportFormat};
use crossfuse::features::load_feature_store;
use crossfuse::features::store::MANIFEST_FILE;
use crossfuse::run::{
    eval_run, read_report, train_run, write_report, EvalRequest, REPORT_JSON_FILE,
};
use crossfuse::synthgen::{describe, generate_to_dir, SynthSpec};
use crossfuse::training::{SplitName, Task};
use crossfuse::{Error, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(
    name = "crossfuse",
    version,
    about = "Contrastive multimodal fusion classifier over precomputed features"
)]
struct Cli {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (store for synth, run directory for train)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Binary,
    Multiclass,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Binary => Task::Binary,
            TaskArg::Multiclass => Task::Multiclass,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature store
    Synth(SynthArgs),
    /// Train the full pipeline and write a run directory
    Train(TrainArgs),
    /// Evaluate a trained run on one split
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences
    Gradcheck {
        /// Deliberately corrupt the ReLU backward pass
        #[arg(long)]
        break_relu_grad: bool,
    },
    /// Render a saved report, or summarize a feature store
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    caption_dim: Option<usize>,
    /// Class-mean separation in noise standard deviations
    #[arg(long)]
    delta: Option<f64>,
    /// Cross-modal noise correlation
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    classifier_epochs: Option<usize>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long)]
    run: PathBuf,
    /// Store to evaluate instead of the one recorded in the run
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory or report JSON file
    path: Option<PathBuf>,
    /// Feature store to summarize
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
}

enum Failure {
    Lib(Error),
    Gradcheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Divergence { .. } | Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io { .. } | Error::Load { .. } | Error::Checkpoint { .. } | Error::Input(_) => {
            EXIT_IO
        }
        _ => EXIT_CONFIG,
    }
}

fn usage_error(msg: &str) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
        .exit()
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, Error> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<(), Failure> {
    let Some(out) = &cli.out else {
        usage_error("synth needs --out <DIR>");
    };
    let mut spec: SynthSpec = load_json_config(cli.config.as_deref())?;
    if args.classes.is_some() || args.per_class.is_some() {
        let c = args.classes.unwrap_or(spec.per_class.len());
        let n = args
            .per_class
            .unwrap_or_else(|| spec.per_class.first().copied().unwrap_or(0));
        spec.per_class = vec![n; c];
    }
    spec.dim = args.dim.unwrap_or(spec.dim);
    spec.caption_dim = args.caption_dim.unwrap_or(spec.caption_dim);
    spec.delta = args.delta.unwrap_or(spec.delta);
    spec.rho = args.rho.unwrap_or(spec.rho);
    spec.noise_std = args.noise_std.unwrap_or(spec.noise_std);
    spec.seed = cli.seed.unwrap_or(spec.seed);
    let manifest = generate_to_dir(&spec, out)?;
    log::info!("wrote {} samples", manifest.samples.len());
    println!("{}", out.display());
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let plan = &mut config.plan;
    plan.seed = cli.seed.unwrap_or(plan.seed);
    plan.task = args.task.map(Task::from).unwrap_or(plan.task);
    plan.learning_rate = args.lr.unwrap_or(plan.learning_rate);
    plan.batch_size = args.batch_size.unwrap_or(plan.batch_size);
    plan.epochs = args.epochs.unwrap_or(plan.epochs);
    plan.stage1_epochs = args.stage1_epochs.unwrap_or(plan.stage1_epochs);
    plan.stage2_epochs = args.stage2_epochs.unwrap_or(plan.stage2_epochs);
    plan.classifier_epochs = args.classifier_epochs.unwrap_or(plan.classifier_epochs);
    config.store = args.store.clone().or(config.store);
    config.lexicon = args.lexicon.clone().or(config.lexicon);
    config.out = cli.out.clone().or(config.out);
    if config.store.is_none() {
        usage_error("train needs --store <DIR> or a config with \"store\"");
    }
    let Some(out) = config.out.clone() else {
        usage_error("train needs --out <DIR> or a config with \"out\"");
    };
    let output = train_run(&config)?;
    print!(
        "{}",
        render_report(&output.test_report, ReportFormat::Text)?
    );
    println!("run directory: {}", out.display());
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    let split = SplitName::from(args.split);
    let req = EvalRequest {
        run_dir: args.run.clone(),
        store: args.store.clone(),
        checkpoint: args.checkpoint.clone(),
        split,
    };
    let (report, ids) = eval_run(&req)?;
    log::info!("evaluated {} samples", ids.len());
    let dir = cli.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    write_report(&dir, &format!("eval_{}", split.as_str()), &report)?;
    print!("{}", render_report(&report, args.format.into())?);
    Ok(())
}

fn gradcheck(cli: &Cli, break_relu_grad: bool) -> Result<(), Failure> {
    let checks = run_gradcheck_suite(cli.seed.unwrap_or(0), break_relu_grad)?;
    let mut offending = None;
    for c in &checks {
        println!(
            "{:<16} max relative error {:.3e} over {} entries",
            c.name, c.report.max_rel_error, c.report.checked
        );
        if !c.passes() && offending.is_none() {
            let param = c
                .report
                .worst
                .as_ref()
                .map(|w| format!("{}[{}]", w.0, w.1))
                .unwrap_or_default();
            offending = Some(format!(
                "{} exceeds {GRADCHECK_TOLERANCE:e} at {param}",
                c.name
            ));
        }
    }
    match offending {
        None => {
            println!("PASS");
            Ok(())
        }
        Some(msg) => {
            println!("FAIL");
            Err(Failure::Gradcheck(msg))
        }
    }
}

fn report(args: &ReportArgs) -> Result<(), Failure> {
    if let Some(store) = &args.store {
        print!("{}", describe(&load_feature_store(store)?)?.render());
    }
    if let Some(path) = &args.path {
        if path.join(MANIFEST_FILE).is_file() {
            print!("{}", describe(&load_feature_store(path)?)?.render());
            return Ok(());
        }
        let file = if path.is_dir() {
            path.join(REPORT_JSON_FILE)
        } else {
            path.to_path_buf()
        };
        print!(
            "{}",
            render_report(&read_report(&file)?, args.format.into())?
        );
    } else if args.store.is_none() {
        usage_error("report needs a run directory, a report file or --store <DIR>");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CROSSFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => synth(&cli, args),
        Command::Train(args) => train(&cli, args),
        Command::Eval(args) => eval(&cli, args),
        Command::Gradcheck { break_relu_grad } => gradcheck(&cli, *break_relu_grad),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Gradcheck(msg)) => {
            eprintln!("gradcheck failed: {msg}");
            ExitCode::from(EXIT_GRADCHECK)
        }
    }
}
