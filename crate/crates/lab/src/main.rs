use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lle_core::Error;
use lle_lab::report::emit_report;
use lle_lab::scenario::run_dir_name;
use lle_lab::{run_scenario, ExperimentConfig, Scenario, OUT_ENV};

#[derive(Parser)]
#[command(name = "lle-lab", version, about = "Run Lugiato-Lefever wave-train experiments and write artifact directories")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults are used for anything it omits.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a value, e.g. `--set grid.periods=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root (otherwise $LLE_LAB_OUT, then `output_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Steady periodic wave by Newton's method.
    SolveWave(RunArgs),
    /// Bloch spectrum and stability verdict.
    Spectrum(RunArgs),
    /// Localized and nonlocalized simulations with decay fits.
    Evolve(RunArgs),
    /// Damping-inequality feasibility for the three perturbation variables.
    Damping(RunArgs),
    /// Randomized norm-equivalence corpus.
    Equivalence(RunArgs),
    /// Nonlocalized run against the heat approximant.
    WhithamCompare(RunArgs),
    /// Every stage plus the property suites; summary holds all criteria.
    FullPipeline(RunArgs),
    /// Print the default configuration.
    Defaults,
    /// Summary and plot data for a finished artifact directory.
    Report {
        dir: PathBuf,
        /// Output directory (default `<dir>/report`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(lle_lab::pipeline::exit_code(e) as u8)
}

fn run(scenario: Scenario, a: &RunArgs) -> ExitCode {
    let cfg = match ExperimentConfig::load_with_overrides(a.config.as_deref(), &a.overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let root = a
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let dir = root.join(run_dir_name(scenario, &cfg));
    match run_scenario(&cfg, scenario, &dir) {
        Ok(o) => {
            let mut out = std::io::stdout().lock();
            for c in &o.summary.criteria {
                let _ = writeln!(out, "{}", c.line());
            }
            if let Some(g) = &o.summary.gate {
                let _ = writeln!(out, "{}", g.message);
            }
            if let Some((stage, e)) = &o.error {
                eprintln!("error in stage {stage} (config {}): {e}", o.summary.config_hash);
            }
            let _ = writeln!(out, "artifacts: {}", dir.display());
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}

fn report(dir: &Path, out: Option<&Path>) -> ExitCode {
    match emit_report(dir, out) {
        Ok(r) => {
            println!("{}", r.summary.display());
            println!("{} plot-data files", r.plot_data.len());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match &cli.command {
        Command::SolveWave(a) => run(Scenario::SolveWave, a),
        Command::Spectrum(a) => run(Scenario::Spectrum, a),
        Command::Evolve(a) => run(Scenario::Evolve, a),
        Command::Damping(a) => run(Scenario::Damping, a),
        Command::Equivalence(a) => run(Scenario::Equivalence, a),
        Command::WhithamCompare(a) => run(Scenario::WhithamCompare, a),
        Command::FullPipeline(a) => run(Scenario::FullPipeline, a),
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml());
            ExitCode::SUCCESS
        }
        Command::Report { dir, out } => report(dir, out.as_deref()),
    }
}
