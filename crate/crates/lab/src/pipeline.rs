//! Scenario stages. Each stage takes the resolved configuration and returns
//! its results in memory; `scenario` decides what is written to disk.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use lle_core::bloch::{assess_stability, critical_mode, mode_field, BlochOptions, BlochSpectrum, LinearizedOperator, Verdict, VerdictRecord};
use lle_core::damping::{
    build_ledger, damping_report, residual_decomposition, split_residual, DampingReport, ResidualDecomposition, ResidualSplit, Variable,
};
use lle_core::evolution::{evolve, make_perturbation, EvolveOptions, FieldState, PerturbationSpec, Trajectory};
use lle_core::modulation::{fill_time_derivatives, run_hk_corpus, run_lp_corpus, CorpusRow, CorpusSummary, HkReport, PhaseExtractor, PhaseField};
use lle_core::wave::{solve_steady, turing_seed, PeriodicWave};
use lle_core::whitham::{
    compare_asymptotics, localized_vs_nonlocalized, phase_run_series, solve_heat, AsymptoticsReport, ContrastReport, PhaseRunSeries, WaveFamily,
};
use lle_core::{Error, Grid, Result};

use crate::config::ExperimentConfig;
use crate::persist::Snapshot;

#[derive(Debug, Clone)]
pub struct WaveStage {
    pub wave: PeriodicWave,
    pub seconds: f64,
}

pub fn solve_wave(cfg: &ExperimentConfig) -> Result<WaveStage> {
    let start = Instant::now();
    let p = cfg.lle_params()?;
    let seed = turing_seed(&p, cfg.wave.k, cfg.wave.seed_amplitude, cfg.wave.n_points)?;
    let wave = solve_steady(&p, cfg.wave.k, &seed, cfg.newton())?;
    Ok(WaveStage { wave, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone)]
pub struct SpectrumStage {
    pub spectrum: BlochSpectrum,
    pub record: VerdictRecord,
    pub seconds: f64,
}

pub fn spectrum(cfg: &ExperimentConfig, wave: &PeriodicWave) -> Result<SpectrumStage> {
    let start = Instant::now();
    let op = LinearizedOperator::new(wave);
    let n_modes = if cfg.spectrum.n_modes == 0 { wave.n_points() } else { cfg.spectrum.n_modes };
    let opts = BlochOptions { delta_gap: cfg.spectrum.delta_gap, xi_fit_frac: cfg.spectrum.xi_fit_frac, ..BlochOptions::default() };
    let spectrum = assess_stability(&op, cfg.spectrum.n_xi, n_modes, opts)?;
    let record = spectrum.record();
    Ok(SpectrumStage { spectrum, record, seconds: start.elapsed().as_secs_f64() })
}

/// Refusal to run dynamics against a wave that is not diffusively stable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateFailure {
    pub verdict: Verdict,
    pub message: String,
}

pub fn gate(stage: &SpectrumStage) -> std::result::Result<f64, GateFailure> {
    match (stage.record.verdict, stage.record.curvature) {
        (Verdict::Stable, Some(d)) => Ok(d),
        (v, _) => Err(GateFailure {
            verdict: v,
            message: format!(
                "stability gate closed: verdict {v:?} (max Re lambda off zero {:.3e}, lambda(0) = {:.3e}); downstream stages skipped",
                stage.record.max_re_nonzero, stage.record.lambda0_re
            ),
        }),
    }
}

fn periodic_grid(wave: &PeriodicWave, periods: usize, per_period: usize) -> Result<Grid> {
    Grid::new(periods * per_period, periods as f64 / wave.k)
}

fn sup_abs(f: &[Complex64]) -> f64 {
    f.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRateCheck {
    pub xi: f64,
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub t: f64,
    pub predicted_ratio: f64,
    pub observed_ratio: f64,
    pub relative_error: f64,
}

/// Linearized evolution of the critical Bloch mode at a quarter of the zone.
pub fn linear_rate(wave: &PeriodicWave, n_modes: usize) -> Result<LinearRateCheck> {
    let periods = 16;
    let g = periodic_grid(wave, periods, 64)?;
    let xi = 2.0 * std::f64::consts::PI * (periods / 4) as f64 / g.length();
    let op = LinearizedOperator::new(wave);
    let mode = critical_mode(&op, xi, n_modes)?;
    let field = mode_field(wave, &g, xi, &mode.right)?;
    let phi = wave.sample_on(&g, 0);
    let eps = 1e-6 * sup_abs(&phi) / sup_abs(&field);
    let psi: Vec<Complex64> = phi.iter().zip(&field).map(|(p, f)| p + f * eps).collect();
    let t = 5.0;
    let opts = EvolveOptions { t_final: t, dt: 0.005, save_every: 1000, observe_every: 0, linearized: true };
    let traj = evolve(&FieldState::new(g.clone(), 0.0, psi)?, Some(wave), &wave.params, opts, None)?;
    let dev = |s: &[Complex64]| -> f64 {
        let v: Vec<Complex64> = s.iter().zip(&phi).map(|(a, b)| a - b).collect();
        g.l2_norm(&v)
    };
    let last = traj.states.last().expect("stored final state");
    let observed = dev(last) / dev(&traj.states[0]);
    let predicted = (mode.lambda.re * t).exp();
    Ok(LinearRateCheck {
        xi,
        lambda_re: mode.lambda.re,
        lambda_im: mode.lambda.im,
        t,
        predicted_ratio: predicted,
        observed_ratio: observed,
        relative_error: (observed - predicted).abs() / predicted,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceStage {
    pub lp_rows: Vec<CorpusRow>,
    pub lp_summary: CorpusSummary,
    pub lp_summary_doubled: CorpusSummary,
    pub hk_reports: Vec<HkReport>,
    pub hk_constant: f64,
    pub hk_constant_doubled: f64,
    pub seconds: f64,
}

/// `L^p` corpus at the configured resolution and at twice it, and the `H^k`
/// constant at both resolutions.
pub fn equivalence(cfg: &ExperimentConfig) -> Result<EquivalenceStage> {
    let start = Instant::now();
    let e = &cfg.equivalence;
    let ps = cfg.lp_exponents()?;
    let base = cfg.corpus_options(e.n_points);
    let doubled = cfg.corpus_options(2 * e.n_points);
    let (lp_rows, lp_summary) = run_lp_corpus(&base, e.samples, &ps)?;
    let (_, lp_summary_doubled) = run_lp_corpus(&doubled, e.samples, &ps)?;
    let capped = |mut o: lle_core::modulation::CorpusOptions| {
        o.hk_cap = Some((e.hk_order, e.hk_cap));
        o
    };
    let (hk_reports, hk_constant) = run_hk_corpus(&capped(base), e.hk_samples, e.hk_order)?;
    let (_, hk_constant_doubled) = run_hk_corpus(&capped(doubled), e.hk_samples, e.hk_order)?;
    Ok(EquivalenceStage {
        lp_rows,
        lp_summary,
        lp_summary_doubled,
        hk_reports,
        hk_constant,
        hk_constant_doubled,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn localized_spec(cfg: &ExperimentConfig, wave: &PeriodicWave, g: &Grid, amplitude_frac: f64) -> PerturbationSpec {
    let mut s = PerturbationSpec::localized(amplitude_frac * sup_abs(&wave.sample_on(g, 0)), cfg.localized.width_periods * wave.period());
    s.center_offset = cfg.localized.center_offset_periods * wave.period();
    s
}

fn extract_phases(cfg: &ExperimentConfig, wave: &PeriodicWave, traj: &Trajectory) -> Result<Vec<PhaseField>> {
    let ex = PhaseExtractor::new(wave, &traj.grid, cfg.analysis.phase_method, cfg.phase_options())?;
    let mut phases = traj.states.iter().map(|s| ex.extract(s)).collect::<Result<Vec<_>>>()?;
    fill_time_derivatives(&mut phases, &traj.times)?;
    Ok(phases)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DampingRun {
    pub points_per_period: usize,
    pub reports: Vec<DampingReport>,
    pub ledgers_csv: Vec<(Variable, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualStudy {
    pub decompositions: Vec<ResidualDecomposition>,
    pub split: ResidualSplit,
    pub split_half_amplitude: ResidualSplit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DampingStage {
    pub base: DampingRun,
    pub doubled: DampingRun,
    pub residuals: ResidualStudy,
    pub seconds: f64,
}

fn damping_run(cfg: &ExperimentConfig, wave: &PeriodicWave, per_period: usize) -> Result<DampingRun> {
    let d = &cfg.damping;
    let g = periodic_grid(wave, d.periods, per_period)?;
    let init = make_perturbation(&localized_spec(cfg, wave, &g, d.amplitude_frac), wave, &g)?;
    let opts = EvolveOptions { t_final: d.t_final, dt: d.dt, save_every: cfg.damping_save_every()?, observe_every: 0, linearized: false };
    let traj = evolve(&init.state, Some(wave), &wave.params, opts, None)?;
    let phases = extract_phases(cfg, wave, &traj)?;
    let mut reports = Vec::new();
    let mut ledgers_csv = Vec::new();
    for var in [Variable::Unmodulated, Variable::Forward, Variable::Inverse] {
        let ph = if var == Variable::Unmodulated { None } else { Some(&phases[..]) };
        let ledger = build_ledger(&traj, wave, var, ph, d.j_max)?;
        reports.push(damping_report(&ledger, &cfg.damping_options())?);
        ledgers_csv.push((var, ledger.to_csv()));
    }
    Ok(DampingRun { points_per_period: per_period, reports, ledgers_csv })
}

/// Short, finely sampled runs splitting the energy residual into its linear
/// and nonlinear parts at two amplitudes.
fn residual_study(cfg: &ExperimentConfig, wave: &PeriodicWave) -> Result<ResidualStudy> {
    let g = periodic_grid(wave, 8, cfg.damping.points_per_period)?;
    let j = cfg.damping.j_max;
    let run = |frac: f64, linearized: bool| -> Result<(Trajectory, ResidualDecomposition)> {
        let init = make_perturbation(&localized_spec(cfg, wave, &g, frac), wave, &g)?;
        let opts = EvolveOptions { t_final: 8.0, dt: 0.01, save_every: 2, observe_every: 0, linearized };
        let traj = evolve(&init.state, Some(wave), &wave.params, opts, None)?;
        let dec = residual_decomposition(&build_ledger(&traj, wave, Variable::Unmodulated, None, j)?, j)?;
        Ok((traj, dec))
    };
    let eps = 4.0 * cfg.damping.amplitude_frac;
    let (traj, full) = run(eps, false)?;
    let (_, lin) = run(eps, true)?;
    let (_, full_half) = run(eps / 2.0, false)?;
    let (_, lin_half) = run(eps / 2.0, true)?;
    let split = split_residual(&full, &lin)?;
    let split_half_amplitude = split_residual(&full_half, &lin_half)?;
    let phases = extract_phases(cfg, wave, &traj)?;
    let forward = residual_decomposition(&build_ledger(&traj, wave, Variable::Forward, Some(&phases), j)?, j)?;
    Ok(ResidualStudy { decompositions: vec![full, forward], split, split_half_amplitude })
}

pub fn damping(cfg: &ExperimentConfig, wave: &PeriodicWave) -> Result<DampingStage> {
    let start = Instant::now();
    let base = damping_run(cfg, wave, cfg.damping.points_per_period)?;
    let doubled = damping_run(cfg, wave, 2 * cfg.damping.points_per_period)?;
    let residuals = residual_study(cfg, wave)?;
    Ok(DampingStage { base, doubled, residuals, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone)]
pub struct EvolvedRun {
    pub series: PhaseRunSeries,
    pub snapshots: Vec<Snapshot>,
    pub seconds: f64,
}

fn snapshots(cfg: &ExperimentConfig, traj: &Trajectory) -> Vec<Snapshot> {
    traj.times
        .iter()
        .zip(&traj.states)
        .step_by(cfg.integrator.snapshot_stride)
        .map(|(t, s)| Snapshot { t: *t, length: traj.grid.length(), psi: s.clone() })
        .collect()
}

fn integrate(cfg: &ExperimentConfig, wave: &PeriodicWave, init: &FieldState, t_final: f64) -> Result<Trajectory> {
    let opts = EvolveOptions { t_final, dt: cfg.integrator.dt, save_every: cfg.save_every()?, observe_every: 0, linearized: false };
    Ok(evolve(init, Some(wave), &wave.params, opts, None)?)
}

pub fn evolve_localized(cfg: &ExperimentConfig, wave: &PeriodicWave) -> Result<EvolvedRun> {
    let start = Instant::now();
    let g = periodic_grid(wave, cfg.grid.periods, cfg.grid.points_per_period)?;
    let init = make_perturbation(&localized_spec(cfg, wave, &g, cfg.localized.amplitude_frac), wave, &g)?;
    let traj = integrate(cfg, wave, &init.state, cfg.integrator.t_final)?;
    let phases = extract_phases(cfg, wave, &traj)?;
    let series = phase_run_series("localized", &traj, &phases, wave)?;
    Ok(EvolvedRun { series, snapshots: snapshots(cfg, &traj), seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhithamSummary {
    pub diffusion: f64,
    pub k_star: f64,
    pub family_range: (f64, f64),
    pub family_size: usize,
    /// `sup |h0|`, the size of the phase data.
    pub e0: f64,
    pub max_gamma_linf: f64,
}

#[derive(Debug, Clone)]
pub struct NonlocalizedStage {
    pub run: EvolvedRun,
    pub doubled: PhaseRunSeries,
    pub asymptotics: AsymptoticsReport,
    pub summary: WhithamSummary,
}

pub fn evolve_nonlocalized(cfg: &ExperimentConfig, wave: &PeriodicWave, diffusion: f64) -> Result<NonlocalizedStage> {
    let start = Instant::now();
    let nl = &cfg.nonlocalized;
    let spec = PerturbationSpec::nonlocalized((0.0, nl.jump), nl.front_width);
    let g = periodic_grid(wave, cfg.grid.periods, cfg.grid.points_per_period)?;
    let init = make_perturbation(&spec, wave, &g)?;
    let h0 = init.h0.clone().expect("phase data");
    let traj = integrate(cfg, wave, &init.state, cfg.integrator.t_final)?;
    let phases = extract_phases(cfg, wave, &traj)?;
    let series = phase_run_series("nonlocalized", &traj, &phases, wave)?;

    let k_star = wave.k;
    let k0: Vec<f64> = g.derivative_real(&h0, 1)?.iter().map(|v| k_star * v).collect();
    let h_mean = h0.iter().sum::<f64>() / h0.len() as f64;
    let times: Vec<f64> = traj.times.iter().map(|t| t - traj.times[0]).collect();
    let run = solve_heat(&g, &k0, k_star, diffusion, &times, h_mean)?;
    let max_gx = phases.iter().map(|p| p.sup_gx).fold(0.0, f64::max).max(1e-3);
    let family = WaveFamily::continue_around(wave, k_star * (1.0 - 1.5 * max_gx), k_star * (1.0 + 1.5 * max_gx), cfg.analysis.family_half)?;
    let asymptotics = compare_asymptotics(&traj, &phases, wave, Some(&family), &run, cfg.analysis.eta, cfg.fit_window())?;
    let snaps = snapshots(cfg, &traj);
    drop(traj);

    let g2 = periodic_grid(wave, 2 * cfg.grid.periods, cfg.grid.points_per_period)?;
    let init2 = make_perturbation(&spec, wave, &g2)?;
    let traj2 = integrate(cfg, wave, &init2.state, cfg.doubling_time())?;
    let phases2 = extract_phases(cfg, wave, &traj2)?;
    let doubled = phase_run_series("nonlocalized-doubled", &traj2, &phases2, wave)?;

    let summary = WhithamSummary {
        diffusion,
        k_star,
        family_range: family.k_range(),
        family_size: family.waves.len(),
        e0: h0.iter().map(|v| v.abs()).fold(0.0, f64::max),
        max_gamma_linf: series.gamma_linf.iter().cloned().fold(0.0, f64::max),
    };
    Ok(NonlocalizedStage {
        run: EvolvedRun { series, snapshots: snaps, seconds: start.elapsed().as_secs_f64() },
        doubled,
        asymptotics,
        summary,
    })
}

pub fn contrast(cfg: &ExperimentConfig, loc: &EvolvedRun, non: &NonlocalizedStage) -> Result<ContrastReport> {
    localized_vs_nonlocalized(&loc.series, &non.run.series, Some(&non.doubled), cfg.fit_window(), cfg.doubling_time())
}

/// Maps an error to the exit code of the CLI: 2 for configuration problems,
/// 3 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) | Error::InvalidGrid(_) => 2,
        _ => 3,
    }
}
