use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use lle_core::bloch::Verdict;
use lle_core::wave::WaveDocument;
use lle_lab::criteria::Status;
use lle_lab::persist::{decode_snapshot, read_index};
use lle_lab::report::emit_report;
use lle_lab::{run_scenario, ExperimentConfig, Scenario};

fn small(extra: &[&str]) -> ExperimentConfig {
    let mut ov: Vec<String> = [
        "grid.periods=16",
        "grid.points_per_period=32",
        "integrator.t_final=40",
        "integrator.save_interval=0.5",
        "integrator.snapshot_stride=20",
        "nonlocalized.doubling_time=20",
        "analysis.t_min=2",
        "analysis.family_half=3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ov.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load_with_overrides(None, &ov).unwrap()
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    read_index(root)
        .unwrap()
        .into_iter()
        .map(|(f, _)| {
            let bytes = fs::read(root.join(&f)).unwrap();
            (f, bytes)
        })
        .collect()
}

#[test]
fn constant_state_config_gives_exact_wave() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load_with_overrides(None, &["wave.seed_amplitude=0".into()]).unwrap();
    let out = run_scenario(&cfg, Scenario::SolveWave, dir.path()).unwrap();
    assert_eq!(out.exit_code(), 0);
    let doc: WaveDocument = serde_json::from_str(&fs::read_to_string(dir.path().join("wave.json")).unwrap()).unwrap();
    assert!(doc.residual < 1e-12, "{}", doc.residual);
    // constant profile: only the mean coefficient survives
    assert!(doc.coefficients[2..].iter().all(|c| c.abs() < 1e-12));
}

#[test]
fn unstable_wave_closes_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load_with_overrides(None, &["wave.k=0.12".into(), "spectrum.n_xi=64".into(), "spectrum.n_modes=32".into()]).unwrap();
    let out = run_scenario(&cfg, Scenario::Damping, dir.path()).unwrap();
    let gate = out.summary.gate.as_ref().expect("gate closed");
    assert_eq!(gate.verdict, Verdict::Unstable);
    assert!(gate.message.contains("downstream stages skipped"));
    assert_eq!(out.exit_code(), 1);
    assert!(dir.path().join("gate.json").is_file());
    assert!(!dir.path().join("damping").exists());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    let damping = meta["stages"].as_array().unwrap().iter().find(|s| s["stage"] == "damping").unwrap();
    assert_eq!(damping["status"], "skipped");
    assert_eq!(out.summary.criteria[1].status, Status::Fail);
    assert_eq!(out.summary.criteria[5].status, Status::Skipped);
}

#[test]
fn evolve_is_deterministic_and_reportable() {
    let cfg = small(&[]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = run_scenario(&cfg, Scenario::Evolve, a.path()).unwrap();
    run_scenario(&cfg, Scenario::Evolve, b.path()).unwrap();
    assert!(oa.error.is_none(), "{:?}", oa.error);

    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        if name.ends_with(".csv") || name.ends_with(".bin") {
            assert!(bytes == &fb[name], "{name} differs between runs");
        }
    }
    for f in ["localized/series.csv", "nonlocalized/series.csv", "nonlocalized/doubled_series.csv", "nonlocalized/asymptotics.csv", "contrast.json"] {
        assert!(fa.contains_key(f), "missing {f}");
    }
    let snap = fa.iter().find(|(k, _)| k.ends_with(".bin")).map(|(_, v)| decode_snapshot(v).unwrap()).unwrap();
    assert_eq!(snap.psi.len(), 16 * 32);

    let r = tempfile::tempdir().unwrap();
    let rep = emit_report(a.path(), Some(r.path())).unwrap();
    let md = fs::read_to_string(&rep.summary).unwrap();
    assert!(md.contains("| localized | \\|\\|v\\|\\|_L2 | "));
    assert!(md.contains("vs predicted -0.75"));
    assert!(!rep.plot_data.is_empty());
    assert_eq!(files(a.path()), fa, "report modified its inputs");
}

#[test]
fn report_on_empty_directory_names_the_index() {
    let dir = tempfile::tempdir().unwrap();
    let err = emit_report(dir.path(), None).unwrap_err().to_string();
    assert!(err.contains("index.csv"), "{err}");
}

#[test]
fn cli_exit_codes_and_defaults() {
    let bin = env!("CARGO_BIN_EXE_lle-lab");
    let out = Command::new(bin).arg("defaults").output().unwrap();
    assert!(out.status.success());
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());

    let dir = tempfile::tempdir().unwrap();
    let st = Command::new(bin).args(["solve-wave", "--set", "params.beta=0"]).env("LLE_LAB_OUT", dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(2));

    let st = Command::new(bin).args(["solve-wave"]).env("LLE_LAB_OUT", dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let made: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(made.len(), 1);
    assert!(made[0].starts_with("solve-wave_"));

    let st = Command::new(bin).args(["report"]).arg(dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}
