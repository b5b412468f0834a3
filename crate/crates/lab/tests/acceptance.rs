//! Full pipeline on the shipped configuration; one PASS/FAIL line per
//! acceptance criterion.

use std::path::PathBuf;
use std::process::ExitCode;

use lle_lab::criteria::Status;
use lle_lab::{run_scenario, ExperimentConfig, Scenario};

fn main() -> ExitCode {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let cfg = match ExperimentConfig::load(&manifest.join("configs/shipped.toml")) {
        Ok(c) => c,
        Err(e) => {
            println!("FAIL shipped config: {e}");
            return ExitCode::FAILURE;
        }
    };
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let out = match run_scenario(&cfg, Scenario::FullPipeline, &dir) {
        Ok(o) => o,
        Err(e) => {
            println!("FAIL full pipeline: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some((stage, e)) = &out.error {
        println!("stage {stage} failed: {e}");
    }
    let mut ok = out.error.is_none();
    for c in &out.summary.criteria {
        let pass = c.status == Status::Pass;
        ok &= pass;
        println!("{} {:>2} {}: {}", if pass { "PASS" } else { "FAIL" }, c.id, c.name, c.detail);
    }
    println!("artifacts: {}", dir.display());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
