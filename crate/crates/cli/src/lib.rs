//! The `medmus` command line: synthetic data, scan conversion, training,
//! prediction, post-processing, evaluation and statistics, plus an
//! end-to-end chain of all of them.

use std::ffi::OsString;
use std::fmt;

use clap::{Parser, Subcommand};

mod commands;
pub mod layout;
pub mod provenance;

pub use commands::e2e::DEMO_SEED;
pub use commands::train::{curve_path, summary_path, TrainRun, TrainSummary};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "MEDMUS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "medmus", version, about = "Micro-ultrasound lesion segmentation pipeline")]
struct Cli {
    /// Worker threads; 1 gives byte-identical outputs across runs.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sweeps with ground-truth labels.
    Synth(commands::synth::Args),
    /// Resample a frame stack onto a Cartesian grid.
    Reconstruct(commands::scan::ReconstructArgs),
    /// Resample a volume back into the frames of a sweep.
    Project(commands::scan::ProjectArgs),
    /// Train a segmentation network on reconstructed cases.
    Train(commands::train::Args),
    /// Sliding-window prediction on a volume.
    Predict(commands::predict::Args),
    /// Morphological closing and small-component removal.
    Postproc(commands::postproc::Args),
    /// Lesion-, sector- and patient-level metrics.
    Eval(commands::eval::Args),
    /// Rank tests on per-case metric tables.
    Stats(commands::stats::Args),
    /// Synthesize, train, predict and evaluate in one go.
    E2e(commands::e2e::Args),
}

/// A bad flag combination detected after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parse `argv` (program name first) and execute. Returns the exit status:
/// 0 on success, 2 on usage errors, 1 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("medmus: error: {e:#}");
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli, args: Vec<String>) -> anyhow::Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(usage("--threads must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let ctx = provenance::Context::new(args, threads);
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth::run(&ctx, a),
        Command::Reconstruct(a) => commands::scan::reconstruct(&ctx, a),
        Command::Project(a) => commands::scan::project(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Predict(a) => commands::predict::run(&ctx, a),
        Command::Postproc(a) => commands::postproc::run(&ctx, a),
        Command::Eval(a) => commands::eval::run(&ctx, a),
        Command::Stats(a) => commands::stats::run(&ctx, a),
        Command::E2e(a) => commands::e2e::run(&ctx, a),
    })
}
