//! Exponential time differencing (ETDRK4) for the full equation and for its
//! linearization about a periodic wave.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::LleParams;
use crate::wave::PeriodicWave;

/// Contour points for the phi-function quadrature.
const CONTOUR_POINTS: usize = 32;

#[derive(Debug, Clone)]
pub struct FieldState {
    pub grid: Grid,
    pub t: f64,
    pub psi: Vec<Complex64>,
}

impl FieldState {
    pub fn new(grid: Grid, t: f64, psi: Vec<Complex64>) -> Result<FieldState> {
        grid.check_complex(&psi)?;
        Ok(FieldState { grid, t, psi })
    }

    pub fn max_modulus(&self) -> f64 {
        self.psi.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Right-hand side treated by the stages of the integrator.
#[derive(Debug, Clone)]
pub enum Dynamics {
    /// `i |psi|^2 psi + F`.
    Full,
    /// `i (2 |phi|^2 v + phi^2 conj(v))` for the perturbation `v = psi - phi`.
    Linearized { phi: Vec<Complex64> },
}

/// Precomputed ETDRK4 coefficients (Cox-Matthews, Kassam-Trefethen contour means).
#[derive(Debug, Clone)]
pub struct Etdrk4 {
    grid: Grid,
    params: LleParams,
    dt: f64,
    dynamics: Dynamics,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Etdrk4 {
    pub fn new(grid: &Grid, params: &LleParams, dt: f64, dynamics: Dynamics) -> Result<Etdrk4> {
        params.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::precondition(format!("time step must be positive, got {dt}")));
        }
        if let Dynamics::Linearized { phi } = &dynamics {
            grid.check_complex(phi)?;
        }
        let n = grid.n_points();
        let roots: Vec<Complex64> = (1..=CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 - 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let (mut e, mut e2, mut q, mut f1, mut f2, mut f3) =
            (vec![], vec![], vec![], vec![], vec![], vec![]);
        for i in 0..n {
            let kappa = grid.wavenumbers()[i];
            let l = Complex64::new(-1.0, params.beta * kappa * kappa - params.alpha);
            let h = l * dt;
            e.push(h.exp());
            e2.push((h / 2.0).exp());
            let (mut sq, mut s1, mut s2, mut s3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
            for r in &roots {
                let z = h + r;
                let ez = z.exp();
                let z3 = z * z * z;
                sq += ((z / 2.0).exp() - 1.0) / z;
                s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                s2 += (2.0 + z + ez * (z - 2.0)) / z3;
                s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let m = CONTOUR_POINTS as f64;
            q.push(sq * dt / m);
            f1.push(s1 * dt / m);
            f2.push(s2 * dt / m);
            f3.push(s3 * dt / m);
        }
        Ok(Etdrk4 { grid: grid.clone(), params: *params, dt, dynamics, e, e2, q, f1, f2, f3 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.grid.n_points();
        let z = vec![Complex64::new(0.0, 0.0); n];
        Workspace {
            nu: z.clone(),
            na: z.clone(),
            nb: z.clone(),
            nc: z.clone(),
            a: z.clone(),
            b: z.clone(),
            c: z.clone(),
            phys: z,
            scratch: vec![Complex64::new(0.0, 0.0); self.grid.scratch_len()],
        }
    }

    fn nonlinear(&self, uhat: &[Complex64], out: &mut [Complex64], phys: &mut [Complex64], scratch: &mut [Complex64]) {
        let g = &self.grid;
        phys.copy_from_slice(uhat);
        g.inverse_in_place(phys, scratch);
        match &self.dynamics {
            Dynamics::Full => {
                for c in phys.iter_mut() {
                    *c = Complex64::i() * c.norm_sqr() * *c;
                }
            }
            Dynamics::Linearized { phi } => {
                for (v, p) in phys.iter_mut().zip(phi) {
                    *v = Complex64::i() * (2.0 * p.norm_sqr() * *v + p * p * v.conj());
                }
            }
        }
        g.forward_in_place(phys, scratch);
        g.dealias_in_place(phys);
        if let Dynamics::Full = self.dynamics {
            phys[0] += self.params.f_pump;
        }
        out.copy_from_slice(phys);
    }

    /// One step on Fourier coefficients, in place.
    pub fn step_in_place(&self, uhat: &mut [Complex64], ws: &mut Workspace) {
        let n = uhat.len();
        let Workspace { nu, na, nb, nc, a, b, c, phys, scratch } = ws;
        self.nonlinear(uhat, nu, phys, scratch);
        for i in 0..n {
            a[i] = self.e2[i] * uhat[i] + self.q[i] * nu[i];
        }
        self.nonlinear(a, na, phys, scratch);
        for i in 0..n {
            b[i] = self.e2[i] * uhat[i] + self.q[i] * na[i];
        }
        self.nonlinear(b, nb, phys, scratch);
        for i in 0..n {
            c[i] = self.e2[i] * a[i] + self.q[i] * (2.0 * nb[i] - nu[i]);
        }
        self.nonlinear(c, nc, phys, scratch);
        for i in 0..n {
            uhat[i] = self.e[i] * uhat[i]
                + self.f1[i] * nu[i]
                + self.f2[i] * 2.0 * (na[i] + nb[i])
                + self.f3[i] * nc[i];
        }
    }

    /// One step on Fourier coefficients.
    pub fn step_hat(&self, uhat: &[Complex64]) -> Vec<Complex64> {
        let mut out = uhat.to_vec();
        let mut ws = self.workspace();
        self.step_in_place(&mut out, &mut ws);
        out
    }
}

/// Reusable buffers for [`Etdrk4::step_in_place`].
#[derive(Debug, Clone)]
pub struct Workspace {
    nu: Vec<Complex64>,
    na: Vec<Complex64>,
    nb: Vec<Complex64>,
    nc: Vec<Complex64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
    phys: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

fn check_finite(t: f64, hat: &[Complex64], grid: &Grid) -> Result<()> {
    if hat.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        let u = grid.inverse(hat);
        let m = u.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if m.is_finite() {
            return Ok(());
        }
    }
    Err(Error::BlowUp { time: t, max_modulus: f64::INFINITY })
}

/// One ETDRK4 step of the full equation.
pub fn step(state: &FieldState, dt: f64, params: &LleParams) -> Result<FieldState> {
    let st = Etdrk4::new(&state.grid, params, dt, Dynamics::Full)?;
    state.grid.check_complex(&state.psi)?;
    let out = st.step_hat(&state.grid.forward(&state.psi));
    check_finite(state.t + dt, &out, &state.grid)?;
    Ok(FieldState { grid: state.grid.clone(), t: state.t + dt, psi: state.grid.inverse(&out) })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EvolveOptions {
    pub t_final: f64,
    pub dt: f64,
    /// Steps between stored snapshots.
    pub save_every: usize,
    /// Steps between observer calls (0 disables the observer cadence).
    pub observe_every: usize,
    pub linearized: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { t_final: 100.0, dt: 1e-2, save_every: 100, observe_every: 0, linearized: false }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub params: LleParams,
    pub wave: Option<PeriodicWave>,
    pub linearized: bool,
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> FieldState {
        FieldState { grid: self.grid.clone(), t: self.times[i], psi: self.states[i].clone() }
    }
}

/// Blow-up during [`evolve`], with everything stored up to the failure.
#[derive(Debug)]
pub struct PartialTrajectory {
    pub error: Error,
    pub trajectory: Trajectory,
}

impl From<Box<PartialTrajectory>> for Error {
    fn from(p: Box<PartialTrajectory>) -> Error {
        p.error
    }
}

pub type Observer<'a> = &'a mut dyn FnMut(f64, &[Complex64]) -> Result<()>;

/// Integrates from `initial` to `t_final`, storing `psi` every `save_every`
/// steps (the initial state included). With `linearized` set, the perturbation
/// `psi - phi` follows the linearized flow about `wave` and `phi + v` is stored.
pub fn evolve(
    initial: &FieldState,
    wave: Option<&PeriodicWave>,
    params: &LleParams,
    opts: EvolveOptions,
    mut observer: Option<Observer<'_>>,
) -> std::result::Result<Trajectory, Box<PartialTrajectory>> {
    let grid = initial.grid.clone();
    let empty = |error: Error| {
        Box::new(PartialTrajectory {
            error,
            trajectory: Trajectory {
                grid: grid.clone(),
                params: *params,
                wave: wave.cloned(),
                linearized: opts.linearized,
                times: vec![],
                states: vec![],
            },
        })
    };
    if let Err(e) = grid.check_complex(&initial.psi) {
        return Err(empty(e));
    }
    if !(opts.t_final.is_finite() && opts.t_final > 0.0) || opts.save_every == 0 {
        return Err(empty(Error::precondition("t_final must be positive and save_every nonzero")));
    }
    let phi = match (opts.linearized, wave) {
        (true, Some(w)) => Some(w.sample_on(&grid, 0)),
        (true, None) => return Err(empty(Error::precondition("linearized flow needs a reference wave"))),
        _ => None,
    };
    let dynamics = match &phi {
        Some(p) => Dynamics::Linearized { phi: p.clone() },
        None => Dynamics::Full,
    };
    let stepper = match Etdrk4::new(&grid, params, opts.dt, dynamics) {
        Ok(s) => s,
        Err(e) => return Err(empty(e)),
    };
    let to_psi = |u: Vec<Complex64>| -> Vec<Complex64> {
        match &phi {
            Some(p) => u.iter().zip(p).map(|(v, f)| v + f).collect(),
            None => u,
        }
    };
    let start: Vec<Complex64> = match &phi {
        Some(p) => initial.psi.iter().zip(p).map(|(a, b)| a - b).collect(),
        None => initial.psi.clone(),
    };
    let n_steps = (opts.t_final / opts.dt).round() as usize;
    let mut traj = Trajectory {
        grid: grid.clone(),
        params: *params,
        wave: wave.cloned(),
        linearized: opts.linearized,
        times: vec![initial.t],
        states: vec![initial.psi.clone()],
    };
    if let Some(obs) = observer.as_mut() {
        if let Err(e) = obs(initial.t, &initial.psi) {
            return Err(Box::new(PartialTrajectory { error: e, trajectory: traj }));
        }
    }
    let mut uhat = grid.forward(&start);
    let mut ws = stepper.workspace();
    for s in 1..=n_steps {
        stepper.step_in_place(&mut uhat, &mut ws);
        let t = initial.t + s as f64 * opts.dt;
        let store = s % opts.save_every == 0;
        let observe = opts.observe_every > 0 && s % opts.observe_every == 0 && observer.is_some();
        if !(store || observe || s % 256 == 0) {
            continue;
        }
        let u = grid.inverse(&uhat);
        let max_mod = u.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if !max_mod.is_finite() {
            return Err(Box::new(PartialTrajectory {
                error: Error::BlowUp { time: t, max_modulus: max_mod },
                trajectory: traj,
            }));
        }
        let psi = to_psi(u);
        if observe {
            if let Some(obs) = observer.as_mut() {
                if let Err(e) = obs(t, &psi) {
                    return Err(Box::new(PartialTrajectory { error: e, trajectory: traj }));
                }
            }
        }
        if store {
            traj.times.push(t);
            traj.states.push(psi);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Localized,
    NonlocalizedPhase,
    RandomLocalized,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Bump height for the localized kinds; unused by the phase kind.
    pub amplitude: f64,
    /// Gaussian width (localized kinds) or front width (phase kind), in `x`.
    pub width: f64,
    /// Bump centre as an offset from the domain midpoint, in `x`.
    pub center_offset: f64,
    /// Complex direction of the localized bump.
    pub direction: [f64; 2],
    /// Phase limits `(h_left, h_right)` outside and inside the plateau.
    pub h0_limits: (f64, f64),
    /// Largest admissible `amplitude / sup|phi|`.
    pub max_relative_amplitude: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn localized(amplitude: f64, width: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Localized,
            amplitude,
            width,
            center_offset: 0.0,
            direction: [0.0, 1.0],
            h0_limits: (0.0, 0.0),
            max_relative_amplitude: 1e-2,
            seed: 0,
        }
    }

    pub fn nonlocalized(limits: (f64, f64), width: f64) -> Self {
        PerturbationSpec { kind: PerturbationKind::NonlocalizedPhase, h0_limits: limits, ..Self::localized(0.0, width) }
    }
}

#[derive(Debug, Clone)]
pub struct Perturbed {
    pub state: FieldState,
    /// Initial phase for the phase kind.
    pub h0: Option<Vec<f64>>,
}

fn periodic_gauss(grid: &Grid, center: f64, width: f64) -> Vec<f64> {
    let l = grid.length();
    grid.points()
        .iter()
        .map(|&x| {
            let d = (x - center + 0.5 * l).rem_euclid(l) - 0.5 * l;
            (-0.5 * (d / width).powi(2)).exp()
        })
        .collect()
}

/// Smoothed double step: `h_left` outside `[L/4, 3L/4]`, `h_right` inside,
/// fronts of width `w`.
pub fn smoothed_step(grid: &Grid, limits: (f64, f64), w: f64) -> Vec<f64> {
    let l = grid.length();
    let (a, b) = limits;
    grid.points()
        .iter()
        .map(|&x| {
            let plateau = 0.5 * (((x - 0.25 * l) / w).tanh() - ((x - 0.75 * l) / w).tanh());
            a + (b - a) * plateau
        })
        .collect()
}

/// Initial data about `wave` on `grid`. The phase kind returns
/// `psi(x, 0) = phi(x - h0(x))`.
pub fn make_perturbation(spec: &PerturbationSpec, wave: &PeriodicWave, grid: &Grid) -> Result<Perturbed> {
    let phi = wave.sample_on(grid, 0);
    let sup_phi = phi.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if !(spec.width.is_finite() && spec.width > 0.0) {
        return Err(Error::precondition(format!("width must be positive, got {}", spec.width)));
    }
    let center = 0.5 * grid.length() + spec.center_offset;
    match spec.kind {
        PerturbationKind::Localized | PerturbationKind::RandomLocalized => {
            if !spec.amplitude.is_finite() || spec.amplitude.abs() > spec.max_relative_amplitude * sup_phi {
                return Err(Error::precondition(format!(
                    "amplitude {} exceeds {} * sup|phi| = {}",
                    spec.amplitude,
                    spec.max_relative_amplitude,
                    spec.max_relative_amplitude * sup_phi
                )));
            }
            if spec.amplitude == 0.0 {
                return Ok(Perturbed { state: FieldState::new(grid.clone(), 0.0, phi)?, h0: None });
            }
            let env = periodic_gauss(grid, center, spec.width);
            let bump: Vec<Complex64> = if spec.kind == PerturbationKind::Localized {
                let dir = Complex64::new(spec.direction[0], spec.direction[1]);
                let dir = dir / dir.norm();
                env.iter().map(|&e| dir * e).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                // noise band-limited to wavelengths down to the envelope width
                let mmax = (grid.length() / spec.width).ceil() as i64;
                let mut hat = vec![Complex64::new(0.0, 0.0); grid.n_points()];
                for m in -mmax..=mmax {
                    if m.unsigned_abs() as usize >= grid.n_points() / 3 {
                        continue;
                    }
                    hat[grid.slot(m)] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
                let noise = grid.inverse(&hat);
                let raw: Vec<Complex64> = noise.iter().zip(&env).map(|(n, e)| n * e).collect();
                let s = raw.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
                raw.into_iter().map(|c| c / s).collect()
            };
            let psi = phi.iter().zip(&bump).map(|(p, b)| p + b * spec.amplitude).collect();
            Ok(Perturbed { state: FieldState::new(grid.clone(), 0.0, psi)?, h0: None })
        }
        PerturbationKind::NonlocalizedPhase => {
            let (a, b) = spec.h0_limits;
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::precondition("h0 limits must be finite"));
            }
            let h0 = smoothed_step(grid, spec.h0_limits, spec.width);
            let slope = grid.derivative_real_unchecked(&h0, 1).iter().map(|v| v.abs()).fold(0.0, f64::max);
            if slope >= 1.0 {
                return Err(Error::precondition(format!("sup |h0'| = {slope} must stay below one")));
            }
            let psi = wave.shifted_on(grid, &h0, 0);
            Ok(Perturbed { state: FieldState::new(grid.clone(), 0.0, psi)?, h0: Some(h0) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::tests::stable_wave;

    fn periodic_grid(w: &PeriodicWave, periods: usize) -> Grid {
        Grid::new(64 * periods, periods as f64 / w.k).unwrap()
    }

    #[test]
    fn wave_is_fixed_point() {
        let w = stable_wave();
        let g = periodic_grid(w, 4);
        let s = FieldState::new(g.clone(), 0.0, w.sample_on(&g, 0)).unwrap();
        let dt = 1e-2;
        let next = step(&s, dt, &w.params).unwrap();
        let diff: Vec<Complex64> = next.psi.iter().zip(&s.psi).map(|(a, b)| a - b).collect();
        assert!(g.l2_norm(&diff) < 1e-10 * dt, "drift {}", g.l2_norm(&diff));
    }

    #[test]
    fn steady_state_preserved_long() {
        let w = stable_wave();
        let g = periodic_grid(w, 2);
        let s = FieldState::new(g.clone(), 0.0, w.sample_on(&g, 0)).unwrap();
        let opts = EvolveOptions { t_final: 100.0, dt: 1e-2, save_every: 2000, ..Default::default() };
        let tr = evolve(&s, Some(w), &w.params, opts, None).unwrap();
        for st in &tr.states {
            let e = st.iter().zip(&s.psi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(e < 1e-8, "{e}");
        }
    }

    #[test]
    fn free_damping_without_pump() {
        // F -> 0 limit: small data decays like e^{-t}
        let p = LleParams::new(0.7, -1.0, 1e-300).unwrap();
        let g = Grid::new(64, 20.0).unwrap();
        let eps = 1e-4;
        let psi: Vec<Complex64> = g
            .points()
            .iter()
            .map(|&x| Complex64::new((2.0 * PI * x / 20.0).cos(), 0.3 * (4.0 * PI * x / 20.0).sin()) * eps)
            .collect();
        let s = FieldState::new(g.clone(), 0.0, psi).unwrap();
        let opts = EvolveOptions { t_final: 2.0, dt: 1e-2, save_every: 200, ..Default::default() };
        let tr = evolve(&s, None, &p, opts, None).unwrap();
        let ratio = g.l2_norm(tr.states.last().unwrap()) / g.l2_norm(&s.psi);
        assert!((ratio / (-2.0f64).exp() - 1.0).abs() < 1e-6, "ratio {ratio}");
    }

    #[test]
    fn fourth_order_in_dt() {
        let w = stable_wave();
        let g = periodic_grid(w, 2);
        let psi: Vec<Complex64> = w
            .sample_on(&g, 0)
            .iter()
            .zip(g.points())
            .map(|(p, x)| p + Complex64::new(0.2 * (2.0 * PI * x / g.length()).sin(), 0.1))
            .collect();
        let s = FieldState::new(g.clone(), 0.0, psi).unwrap();
        let run = |dt: f64, steps: usize| {
            let opts = EvolveOptions { t_final: dt * steps as f64, dt, save_every: steps, ..Default::default() };
            evolve(&s, None, &w.params, opts, None).unwrap().states.pop().unwrap()
        };
        let reference = run(0.0125, 64);
        let err = |u: Vec<Complex64>| {
            g.l2_norm(&u.iter().zip(&reference).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let e1 = err(run(0.2, 4));
        let e2 = err(run(0.1, 8));
        let ratio = e1 / e2;
        assert!(ratio > 13.0 && ratio < 19.0, "ratio {ratio}");
    }

    #[test]
    fn zero_amplitude_is_exact_wave() {
        let w = stable_wave();
        let g = periodic_grid(w, 4);
        let p = make_perturbation(&PerturbationSpec::localized(0.0, 1.0), w, &g).unwrap();
        assert_eq!(p.state.psi, w.sample_on(&g, 0));
    }

    #[test]
    fn oversized_amplitude_rejected() {
        let w = stable_wave();
        let g = periodic_grid(w, 4);
        let r = make_perturbation(&PerturbationSpec::localized(1.0, 1.0), w, &g);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn phase_perturbation_obeys_mean_value_bound() {
        let w = stable_wave();
        let g = periodic_grid(w, 32);
        let sup_px = w.sup_derivative(1);
        for c in [1e-2, 5e-3] {
            let spec = PerturbationSpec::nonlocalized((-c, c), w.period());
            let p = make_perturbation(&spec, w, &g).unwrap();
            let phi = w.sample_on(&g, 0);
            let dev = p.state.psi.iter().zip(&phi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(dev <= sup_px * c * 1.01, "{dev} vs {}", sup_px * c);
        }
    }

    #[test]
    fn localized_l1_independent_of_domain() {
        let w = stable_wave();
        let amp = 1e-3;
        let l1 = |periods: usize| {
            let g = periodic_grid(w, periods);
            let p = make_perturbation(&PerturbationSpec::localized(amp, w.period() / 4.0), w, &g).unwrap();
            let phi = w.sample_on(&g, 0);
            let d: Vec<f64> = p.state.psi.iter().zip(&phi).map(|(a, b)| (a - b).norm()).collect();
            g.integral_real(&d)
        };
        let (a, b) = (l1(8), l1(16));
        assert!(((a - b) / a).abs() < 1e-10, "{a} vs {b}");
    }
}
