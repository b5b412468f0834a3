//! Runs a scenario end to end and writes its artifact directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use lle_core::damping::DampingReport;
use lle_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::criteria::{evaluate, CriterionVerdict, Evidence, Status};
use crate::persist::ArtifactDir;
use crate::pipeline::{self, DampingRun, EvolvedRun, GateFailure};
use crate::properties::run_properties;

pub const TOOL: &str = "lle-lab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SolveWave,
    Spectrum,
    Evolve,
    Damping,
    Equivalence,
    WhithamCompare,
    FullPipeline,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::SolveWave,
        Scenario::Spectrum,
        Scenario::Evolve,
        Scenario::Damping,
        Scenario::Equivalence,
        Scenario::WhithamCompare,
        Scenario::FullPipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SolveWave => "solve-wave",
            Scenario::Spectrum => "spectrum",
            Scenario::Evolve => "evolve",
            Scenario::Damping => "damping",
            Scenario::Equivalence => "equivalence",
            Scenario::WhithamCompare => "whitham-compare",
            Scenario::FullPipeline => "full-pipeline",
        }
    }

    fn needs_wave(self) -> bool {
        self != Scenario::Equivalence
    }

    fn needs_gate(self) -> bool {
        !matches!(self, Scenario::SolveWave | Scenario::Equivalence)
    }

    fn has(self, s: Scenario) -> bool {
        self == s || self == Scenario::FullPipeline
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scenario> {
        Scenario::ALL.iter().copied().find(|c| c.name() == s).ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// `done`, `skipped` or `failed`.
    pub status: String,
    pub seconds: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub config_hash: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub scenario: Scenario,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub errors: Vec<StageError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub config_hash: String,
    pub gate: Option<GateFailure>,
    pub criteria: Vec<CriterionVerdict>,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub summary: Summary,
    pub error: Option<(String, Error)>,
}

impl Outcome {
    /// 0 when every evaluated criterion passed, 1 on a failed criterion or a
    /// closed gate, 2 for configuration errors and 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match &self.error {
            Some((_, e)) => pipeline::exit_code(e),
            None if self.summary.failed > 0 || self.summary.gate.is_some() => 1,
            None => 0,
        }
    }
}

struct Runner {
    cfg: ExperimentConfig,
    hash: String,
    out: ArtifactDir,
    stages: Vec<StageRecord>,
}

impl Runner {
    fn done(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageRecord { stage: stage.into(), status: "done".into(), seconds, note: None });
    }

    fn skip(&mut self, stage: &str, why: &str) {
        self.stages.push(StageRecord { stage: stage.into(), status: "skipped".into(), seconds: 0.0, note: Some(why.into()) });
    }
}

/// `tag_hash` directory name used under the output root.
pub fn run_dir_name(scenario: Scenario, cfg: &ExperimentConfig) -> String {
    format!("{}_{}", scenario.name(), cfg.hash())
}

/// Runs `scenario` writing into `dir`. Stage errors are recorded in
/// `metadata.json` and returned in the outcome; artifacts written before the
/// failure are kept.
pub fn run_scenario(cfg: &ExperimentConfig, scenario: Scenario, dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut r = Runner { cfg: cfg.clone(), hash: cfg.hash(), out: ArtifactDir::create(dir)?, stages: Vec::new() };
    r.out.write_text("config.toml", "toml", "resolved configuration", &cfg.to_toml())?;
    let mut state = State::default();
    let error = run_stages(&mut r, scenario, &mut state).err();
    let errors: Vec<StageError> = error
        .iter()
        .map(|(stage, e)| StageError { stage: stage.clone(), config_hash: r.hash.clone(), message: e.to_string() })
        .collect();
    if let Some((stage, _)) = &error {
        r.stages.push(StageRecord { stage: stage.clone(), status: "failed".into(), seconds: 0.0, note: errors.first().map(|e| e.message.clone()) });
    }
    let ev = Evidence {
        wave: state.wave.as_ref(),
        spectrum: state.spectrum.as_ref(),
        linear_rate: state.linear_rate.as_ref(),
        equivalence: state.equivalence.as_ref(),
        damping: state.damping.as_ref(),
        localized: state.localized.as_ref(),
        nonlocalized: state.nonlocalized.as_ref(),
        contrast: state.contrast.as_ref(),
        properties: state.properties.as_ref(),
    };
    let criteria = evaluate(cfg, &ev);
    let count = |s: Status| criteria.iter().filter(|c| c.status == s).count();
    let summary = Summary {
        scenario,
        config_hash: r.hash.clone(),
        gate: state.gate.clone(),
        passed: count(Status::Pass),
        failed: count(Status::Fail),
        skipped: count(Status::Skipped),
        criteria,
    };
    let meta = Metadata {
        tool: TOOL.into(),
        version: VERSION.into(),
        scenario,
        config_hash: r.hash.clone(),
        seed: cfg.seed,
        stages: r.stages.clone(),
        errors,
    };
    r.out.write_json("summary.json", "acceptance-criterion verdicts", &summary)?;
    r.out.write_json("metadata.json", "tool version, config hash, stage log and errors", &meta)?;
    r.out.finish()?;
    Ok(Outcome { dir: dir.to_path_buf(), summary, error })
}

#[derive(Default)]
struct State {
    wave: Option<pipeline::WaveStage>,
    spectrum: Option<pipeline::SpectrumStage>,
    gate: Option<GateFailure>,
    linear_rate: Option<pipeline::LinearRateCheck>,
    equivalence: Option<pipeline::EquivalenceStage>,
    damping: Option<pipeline::DampingStage>,
    localized: Option<EvolvedRun>,
    nonlocalized: Option<pipeline::NonlocalizedStage>,
    contrast: Option<lle_core::whitham::ContrastReport>,
    properties: Option<crate::properties::PropertyReport>,
}

type StageResult = std::result::Result<(), (String, Error)>;

fn at<T>(stage: &str, r: Result<T>) -> std::result::Result<T, (String, Error)> {
    r.map_err(|e| (stage.to_string(), e))
}

fn run_stages(r: &mut Runner, scenario: Scenario, st: &mut State) -> StageResult {
    let cfg = r.cfg.clone();
    if scenario.needs_wave() {
        let w = at("solve-wave", pipeline::solve_wave(&cfg))?;
        at("solve-wave", write_wave(r, &w))?;
        r.done("solve-wave", w.seconds);
        st.wave = Some(w);
    }
    let mut diffusion = None;
    if scenario.needs_gate() {
        let wave = &st.wave.as_ref().expect("wave solved").wave;
        let s = at("spectrum", pipeline::spectrum(&cfg, wave))?;
        at("spectrum", write_spectrum(r, &s))?;
        r.done("spectrum", s.seconds);
        match pipeline::gate(&s) {
            Ok(d) => diffusion = Some(d),
            Err(g) => {
                at("spectrum", r.out.write_json("gate.json", "stability gate refusal", &g))?;
                st.gate = Some(g);
            }
        }
        st.spectrum = Some(s);
    }
    let gated = |r: &mut Runner, stage: &str| -> bool {
        if diffusion.is_none() {
            r.skip(stage, "stability gate closed");
            false
        } else {
            true
        }
    };

    if scenario.has(Scenario::Evolve) && gated(r, "linear-rate") {
        let wave = &st.wave.as_ref().expect("wave").wave;
        let n_modes = st.spectrum.as_ref().map_or(wave.n_points(), |s| s.spectrum.n_modes);
        let t0 = std::time::Instant::now();
        let l = at("linear-rate", pipeline::linear_rate(wave, n_modes))?;
        at("linear-rate", r.out.write_json("linear_rate.json", "linearized Bloch-mode decay against the spectrum", &l))?;
        r.done("linear-rate", t0.elapsed().as_secs_f64());
        st.linear_rate = Some(l);
    }

    if scenario.has(Scenario::Evolve) && gated(r, "evolve-localized") {
        let wave = &st.wave.as_ref().expect("wave").wave;
        let l = at("evolve-localized", pipeline::evolve_localized(&cfg, wave))?;
        at("evolve-localized", write_run(r, "localized", &l))?;
        r.done("evolve-localized", l.seconds);
        st.localized = Some(l);
    }

    if (scenario.has(Scenario::Evolve) || scenario.has(Scenario::WhithamCompare)) && gated(r, "evolve-nonlocalized") {
        let wave = &st.wave.as_ref().expect("wave").wave;
        let n = at("evolve-nonlocalized", pipeline::evolve_nonlocalized(&cfg, wave, diffusion.expect("gate open")))?;
        at("evolve-nonlocalized", write_nonlocalized(r, &n))?;
        r.done("evolve-nonlocalized", n.run.seconds);
        st.nonlocalized = Some(n);
    }

    if let (Some(l), Some(n)) = (&st.localized, &st.nonlocalized) {
        let c = at("contrast", pipeline::contrast(&cfg, l, n))?;
        at("contrast", r.out.write_json("contrast.json", "localized against nonlocalized decay fits", &c))?;
        r.done("contrast", 0.0);
        st.contrast = Some(c);
    }

    if scenario.has(Scenario::Equivalence) {
        let e = at("equivalence", pipeline::equivalence(&cfg))?;
        at("equivalence", write_equivalence(r, &e))?;
        r.done("equivalence", e.seconds);
        st.equivalence = Some(e);
    }

    if scenario.has(Scenario::Damping) && gated(r, "damping") {
        let wave = &st.wave.as_ref().expect("wave").wave;
        let d = at("damping", pipeline::damping(&cfg, wave))?;
        at("damping", write_damping(r, &d))?;
        r.done("damping", d.seconds);
        st.damping = Some(d);
    }

    if scenario == Scenario::FullPipeline {
        let p = run_properties();
        at("properties", r.out.write_json("properties.json", "property-suite checks", &p))?;
        r.done("properties", p.seconds);
        st.properties = Some(p);
    }
    Ok(())
}

fn write_wave(r: &mut Runner, w: &pipeline::WaveStage) -> Result<()> {
    r.out.write_json("wave.json", "steady periodic wave (coefficients, residual, iterations)", &w.wave.to_document())?;
    let g = w.wave.period_grid()?;
    let phi = w.wave.sample_on(&g, 0);
    let mut s = String::from("x,re,im\n");
    for (x, z) in g.points().iter().zip(&phi) {
        let _ = writeln!(s, "{x:.12e},{:.15e},{:.15e}", z.re, z.im);
    }
    r.out.write_csv("wave_profile.csv", "one period of the wave profile", &s)
}

fn write_spectrum(r: &mut Runner, s: &pipeline::SpectrumStage) -> Result<()> {
    let sp = &s.spectrum;
    let mut all = String::from("xi,index,re,im\n");
    let mut crit = String::from("xi,re,im\n");
    for (j, xi) in sp.xi.iter().enumerate() {
        for (i, z) in sp.eigenvalues[j].iter().enumerate() {
            let _ = writeln!(all, "{xi:.12e},{i},{:.12e},{:.12e}", z.re, z.im);
        }
        let z = sp.eigenvalues[j][sp.critical[j]];
        let _ = writeln!(crit, "{xi:.12e},{:.15e},{:.15e}", z.re, z.im);
    }
    r.out.write_csv("spectrum.csv", "Bloch eigenvalues per xi", &all)?;
    r.out.write_csv("critical_curve.csv", "critical eigenvalue curve through the origin", &crit)?;
    r.out.write_json("stability.json", "stability verdict record", &s.record)?;
    if let Some(fit) = &sp.fit {
        r.out.write_json("curvature_fit.json", "small-xi fit of the critical curve", fit)?;
    }
    Ok(())
}

fn write_run(r: &mut Runner, dir: &str, run: &EvolvedRun) -> Result<()> {
    r.out.write_csv(&format!("{dir}/series.csv"), &format!("{dir} run: perturbation and phase norms"), &run.series.to_csv())?;
    r.out.write_snapshots(&format!("{dir}/snapshots"), &format!("{dir} run field snapshots"), &run.snapshots)
}

fn write_nonlocalized(r: &mut Runner, n: &pipeline::NonlocalizedStage) -> Result<()> {
    write_run(r, "nonlocalized", &n.run)?;
    r.out.write_csv("nonlocalized/doubled_series.csv", "nonlocalized run on the doubled domain", &n.doubled.to_csv())?;
    r.out.write_csv("nonlocalized/asymptotics.csv", "profile, wavenumber and phase differences against the heat approximant", &n.asymptotics.to_csv())?;
    let fits: Vec<_> = n.asymptotics.series.iter().map(|s| (format!("{}_{}", s.name, s.p), s.fit.clone(), s.fit_error.clone())).collect();
    r.out.write_json("nonlocalized/asymptotics_fits.json", "decay fits of the asymptotic comparison", &fits)?;
    r.out.write_json("nonlocalized/whitham.json", "heat approximant parameters and phase-data size", &n.summary)
}

fn write_equivalence(r: &mut Runner, e: &pipeline::EquivalenceStage) -> Result<()> {
    let mut s = String::from("id,p,a,b,c,sup_gamma,sup_gamma_x,correction,slack_upper_a,slack_upper_c,slack_lower_a,slack_lower_c,inversion_defect,violation\n");
    for row in &e.lp_rows {
        let q = &row.report;
        let _ = writeln!(
            s,
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e},{}",
            row.id, q.p, q.a, q.b, q.c, q.sup_gamma, q.sup_gamma_x, q.correction, q.slack_upper_a, q.slack_upper_c, q.slack_lower_a, q.slack_lower_c,
            q.inversion_defect, q.violation
        );
    }
    r.out.write_csv("equivalence/lp_corpus.csv", "L^p equivalence checks per sample and exponent", &s)?;
    let mut h = String::from("id,k,b,c,g,sup_gamma_x,c_min\n");
    for (i, q) in e.hk_reports.iter().enumerate() {
        let _ = writeln!(h, "{i},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", q.k, q.b, q.c, q.g, q.sup_gamma_x, q.c_min);
    }
    r.out.write_csv("equivalence/hk_corpus.csv", "H^k equivalence constants per sample", &h)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        lp: &'a lle_core::modulation::CorpusSummary,
        lp_doubled: &'a lle_core::modulation::CorpusSummary,
        hk_constant: f64,
        hk_constant_doubled: f64,
    }
    let doc = Doc { lp: &e.lp_summary, lp_doubled: &e.lp_summary_doubled, hk_constant: e.hk_constant, hk_constant_doubled: e.hk_constant_doubled };
    r.out.write_json("equivalence/summary.json", "corpus maxima, violations and H^k constants", &doc)
}

#[derive(Serialize)]
struct ReportDigest<'a> {
    variable: &'a str,
    points_per_period: usize,
    feasible: bool,
    best_theta: Option<f64>,
    best_c: Option<f64>,
    largest_feasible_theta: Option<f64>,
    at_scan_edge: bool,
    max_hk: f64,
    max_gamma_xt: f64,
    polygon: &'a [[f64; 2]],
    energy_form_best_theta: Option<f64>,
}

fn digest(rep: &DampingReport, ppp: usize) -> ReportDigest<'_> {
    ReportDigest {
        variable: rep.variable.label(),
        points_per_period: ppp,
        feasible: rep.primary.feasible,
        best_theta: rep.primary.best_theta,
        best_c: rep.primary.best_c,
        largest_feasible_theta: rep.primary.largest_feasible_theta,
        at_scan_edge: rep.primary.at_scan_edge,
        max_hk: rep.max_hk,
        max_gamma_xt: rep.max_gamma_xt,
        polygon: &rep.primary.polygon,
        energy_form_best_theta: rep.energy_form.as_ref().and_then(|e| e.best_theta),
    }
}

fn write_damping_run(r: &mut Runner, tag: &str, run: &DampingRun) -> Result<()> {
    for (var, csv) in &run.ledgers_csv {
        r.out.write_csv(&format!("damping/{tag}/ledger_{}.csv", var.label()), "energy ledger along the trajectory", csv)?;
    }
    for rep in &run.reports {
        let v = rep.variable.label();
        r.out.write_csv(&format!("damping/{tag}/scan_{v}.csv"), "minimal C per theta", &rep.scan_csv())?;
        r.out.write_csv(&format!("damping/{tag}/slack_{v}.csv"), "inequality slack at the best (theta, C)", &rep.slack_csv())?;
    }
    Ok(())
}

fn write_damping(r: &mut Runner, d: &pipeline::DampingStage) -> Result<()> {
    write_damping_run(r, "base", &d.base)?;
    write_damping_run(r, "doubled", &d.doubled)?;
    let digests: Vec<ReportDigest> = d
        .base
        .reports
        .iter()
        .map(|x| digest(x, d.base.points_per_period))
        .chain(d.doubled.reports.iter().map(|x| digest(x, d.doubled.points_per_period)))
        .collect();
    r.out.write_json("damping/feasibility.json", "feasible (theta, C) per variable and resolution", &digests)?;
    for dec in &d.residuals.decompositions {
        r.out.write_csv(&format!("damping/residual_{}.csv", dec.variable.label()), "energy residual and its bounds", &dec.to_csv())?;
    }
    #[derive(Serialize)]
    struct Fits<'a> {
        variable: &'a str,
        preferred: &'a str,
        linear: &'a lle_core::damping::ResidualFit,
        quadratic: &'a lle_core::damping::ResidualFit,
        differencing_error: f64,
    }
    let fits: Vec<Fits> = d
        .residuals
        .decompositions
        .iter()
        .map(|x| Fits { variable: x.variable.label(), preferred: &x.preferred, linear: &x.linear_fit, quadratic: &x.quadratic_fit, differencing_error: x.differencing_error })
        .collect();
    r.out.write_json("damping/residual_fits.json", "linear against quadratic envelope of the residual", &fits)?;
    #[derive(Serialize)]
    struct Split {
        amplitude: &'static str,
        nonlinear_share: f64,
        c1_linear: f64,
        c1_quadratic: f64,
        c2: f64,
    }
    let split = |amplitude, s: &lle_core::damping::ResidualSplit| Split {
        amplitude,
        nonlinear_share: s.nonlinear_share,
        c1_linear: s.c1_linear,
        c1_quadratic: s.c1_quadratic,
        c2: s.c2,
    };
    let splits = [split("full", &d.residuals.split), split("half", &d.residuals.split_half_amplitude)];
    r.out.write_json("damping/residual_split.json", "linear and nonlinear parts of the residual at two amplitudes", &splits)
}
