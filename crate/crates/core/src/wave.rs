//! Steady periodic solutions and their one-parameter family in the wavenumber.
//!
//! A wave is stored through the Fourier coefficients of its period-one profile
//! `P(theta)`, `theta = k x`, so that `phi(x) = P(k x)` and members of the family
//! with different `k` share one coefficient layout.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::LleParams;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Target `L^2` norm of the steady residual over one period.
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iters: 50, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicWave {
    pub params: LleParams,
    /// Wavenumber `1 / period`.
    pub k: f64,
    /// Coefficients of the period-one profile in FFT order.
    pub coeffs: Vec<Complex64>,
    /// `L^2` norm of the steady residual over one period.
    pub residual: f64,
    /// Newton iterations used to produce this wave.
    pub iterations: usize,
}

/// `phi` and its first three `x`-derivatives sampled on a grid.
#[derive(Debug, Clone)]
pub struct WaveProfiles {
    pub phi: Vec<Complex64>,
    pub phi_x: Vec<Complex64>,
    pub phi_xx: Vec<Complex64>,
    pub phi_xxx: Vec<Complex64>,
}

impl PeriodicWave {
    pub fn period(&self) -> f64 {
        1.0 / self.k
    }

    pub fn n_points(&self) -> usize {
        self.coeffs.len()
    }

    /// Angular spatial wavenumber `2 pi k` of the first harmonic.
    pub fn angular_wavenumber(&self) -> f64 {
        2.0 * PI * self.k
    }

    pub fn harmonic(&self, i: usize) -> i64 {
        let n = self.coeffs.len();
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Physical grid covering one period with the wave's own resolution.
    pub fn period_grid(&self) -> Result<Grid> {
        Grid::new(self.n_points(), self.period())
    }

    pub fn profile(&self) -> Vec<Complex64> {
        theta_grid(self.n_points()).inverse(&self.coeffs)
    }

    /// Fourier coefficients of `d^order phi / dx^order` over one period.
    pub fn derivative_coeffs(&self, order: usize) -> Vec<Complex64> {
        let n = self.n_points();
        let q = self.angular_wavenumber();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if order == 0 {
                    *c
                } else if order % 2 == 1 && i == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, q * self.harmonic(i) as f64).powu(order as u32)
                }
            })
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        let scale = self.coeffs[0].norm().max(1e-300);
        self.coeffs.iter().skip(1).all(|c| c.norm() < 1e-12 * scale)
    }

    /// Point evaluation of `d^order phi / dx^order` at physical `x`.
    pub fn eval(&self, x: f64, order: usize) -> Complex64 {
        let n = self.n_points();
        let q = self.angular_wavenumber();
        let e1 = Complex64::from_polar(1.0, q * x);
        let e1c = e1.conj();
        let mut pos = Complex64::new(1.0, 0.0);
        let mut neg = Complex64::new(1.0, 0.0);
        let mut acc = self.coeffs[0] * if order == 0 { 1.0 } else { 0.0 };
        for m in 1..n / 2 {
            pos *= e1;
            neg *= e1c;
            let w = Complex64::new(0.0, q * m as f64).powu(order as u32);
            let wn = Complex64::new(0.0, -q * m as f64).powu(order as u32);
            acc += self.coeffs[m] * pos * w + self.coeffs[n - m] * neg * wn;
        }
        acc
    }

    /// Samples `d^order phi` on an arbitrary periodic grid. Grids holding an
    /// integer number of periods are filled by spectral resampling; anything
    /// else falls back to direct evaluation of the Fourier series.
    pub fn sample_on(&self, grid: &Grid, order: usize) -> Vec<Complex64> {
        let ratio = grid.length() * self.k;
        let periods = ratio.round();
        if periods >= 1.0 && (ratio - periods).abs() < 1e-9 * ratio {
            let np = periods as i64;
            let big = grid.n_points() as i64;
            let dc = self.derivative_coeffs(order);
            let mut fhat = vec![Complex64::new(0.0, 0.0); grid.n_points()];
            for (i, c) in dc.iter().enumerate() {
                let m = self.harmonic(i) * np;
                if m.abs() < big / 2 {
                    fhat[grid.slot(m)] = *c;
                }
            }
            grid.inverse(&fhat)
        } else {
            grid.points().iter().map(|&x| self.eval(x, order)).collect()
        }
    }

    pub fn profiles_on(&self, grid: &Grid) -> WaveProfiles {
        WaveProfiles {
            phi: self.sample_on(grid, 0),
            phi_x: self.sample_on(grid, 1),
            phi_xx: self.sample_on(grid, 2),
            phi_xxx: self.sample_on(grid, 3),
        }
    }

    /// `d^order phi (x_j - gamma_j)` on `grid`.
    pub fn shifted_on(&self, grid: &Grid, gamma: &[f64], order: usize) -> Vec<Complex64> {
        grid.points()
            .iter()
            .zip(gamma)
            .map(|(&x, &g)| self.eval(x - g, order))
            .collect()
    }

    /// `max |d^order phi|` over one period, refined between grid nodes.
    pub fn sup_derivative(&self, order: usize) -> f64 {
        let g = self.period_grid().expect("wave resolution is a valid grid");
        let f = g.inverse(&self.derivative_coeffs(order));
        g.sup_norm_refined(&f)
    }

    /// `W^{m,inf}` norm: maximum over derivative orders `0..=m` of the sup norms.
    pub fn w_inf_norm(&self, m: usize) -> f64 {
        (0..=m).map(|j| self.sup_derivative(j)).fold(0.0, f64::max)
    }

    /// Steady residual on the wave's own period grid.
    pub fn residual_field(&self) -> Vec<Complex64> {
        let tg = theta_grid(self.n_points());
        steady_residual(&tg, &self.params, self.k, &tg.inverse(&self.coeffs))
    }

    /// Coefficients of `d phi^k / d k` in the period-one variable, from the
    /// linear sensitivity system with the translation gauge `<P_theta, dP> = 0`.
    pub fn k_sensitivity(&self) -> Result<Vec<Complex64>> {
        let tg = theta_grid(self.n_points());
        let phi = tg.inverse(&self.coeffs);
        let n = self.n_points();
        let jac = steady_jacobian(&tg, &self.params, self.k, &phi);
        let phi_tt = tg.derivative_unchecked(&phi, 2);
        // dR/dk = -2 i beta k phi_thetatheta
        let rhs: Vec<Complex64> = phi_tt
            .iter()
            .map(|c| Complex64::new(0.0, 2.0 * self.params.beta * self.k) * c)
            .collect();
        let tangent = gauge_vector(&tg, &phi);
        let mut b = DVector::zeros(2 * n + 1);
        for j in 0..n {
            b[j] = rhs[j].re;
            b[n + j] = rhs[j].im;
        }
        let sol = solve_bordered(&jac, tangent.as_ref(), &b).ok_or(Error::SingularJacobian { iteration: 0 })?;
        let dphi: Vec<Complex64> = (0..n).map(|j| Complex64::new(sol[j], sol[n + j])).collect();
        Ok(tg.forward(&dphi))
    }

    pub fn to_document(&self) -> WaveDocument {
        WaveDocument {
            params: self.params,
            k: self.k,
            n_points: self.n_points(),
            coefficients: self.coeffs.iter().flat_map(|c| [c.re, c.im]).collect(),
            residual: self.residual,
            iterations: self.iterations,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn from_document(doc: &WaveDocument) -> Result<PeriodicWave> {
        doc.params.validate()?;
        if doc.coefficients.len() != 2 * doc.n_points {
            return Err(Error::Config(format!(
                "wave document lists {} numbers for {} complex coefficients",
                doc.coefficients.len(),
                doc.n_points
            )));
        }
        if !(doc.k.is_finite() && doc.k > 0.0) {
            return Err(Error::Config(format!("wave document has invalid k = {}", doc.k)));
        }
        let coeffs = doc
            .coefficients
            .chunks(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        Ok(PeriodicWave {
            params: doc.params,
            k: doc.k,
            coeffs,
            residual: doc.residual,
            iterations: doc.iterations,
        })
    }
}

/// JSON form of a wave: coefficients interleaved as `[re0, im0, re1, im1, ...]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WaveDocument {
    pub params: LleParams,
    pub k: f64,
    pub n_points: usize,
    pub coefficients: Vec<f64>,
    pub residual: f64,
    #[serde(default)]
    pub iterations: usize,
    pub tool_version: String,
}

fn theta_grid(n: usize) -> Grid {
    Grid::new(n, 1.0).expect("wave resolution must be a power of two >= 64")
}

/// `-i beta k^2 P'' - (1 + i alpha) P + Pi[i |P|^2 P] + F` on the period-one grid,
/// `Pi` the two-thirds projection used by the time stepper.
fn steady_residual(tg: &Grid, p: &LleParams, k: f64, phi: &[Complex64]) -> Vec<Complex64> {
    let d2 = tg.derivative_unchecked(phi, 2);
    let cubic: Vec<Complex64> = phi.iter().map(|c| Complex64::i() * c.norm_sqr() * c).collect();
    let mut chat = tg.forward(&cubic);
    tg.dealias_in_place(&mut chat);
    let cubic = tg.inverse(&chat);
    let lin = Complex64::new(1.0, p.alpha);
    let disp = Complex64::new(0.0, -p.beta * k * k);
    phi.iter()
        .zip(&d2)
        .zip(&cubic)
        .map(|((f, fxx), c)| disp * fxx - lin * f + c + p.f_pump)
        .collect()
}

fn residual_norm(r: &[Complex64], k: f64) -> f64 {
    let n = r.len() as f64;
    (r.iter().map(|c| c.norm_sqr()).sum::<f64>() / (n * k)).sqrt()
}

fn circulant(tg: &Grid, op: impl Fn(&[Complex64]) -> Vec<Complex64>) -> DMatrix<f64> {
    let n = tg.n_points();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..n {
        e[l] = Complex64::new(1.0, 0.0);
        let col = op(&e);
        for j in 0..n {
            m[(j, l)] = col[j].re;
        }
        e[l] = Complex64::new(0.0, 0.0);
    }
    m
}

/// Real Jacobian of the discrete steady residual in `(Re P, Im P)` unknowns;
/// identical to the discretized operator `-Id + J L[phi]`.
pub fn steady_jacobian(tg: &Grid, p: &LleParams, k: f64, phi: &[Complex64]) -> DMatrix<f64> {
    let n = tg.n_points();
    let d2 = circulant(tg, |e| tg.derivative_unchecked(e, 2)) * (k * k);
    let proj = circulant(tg, |e| {
        let mut h = tg.forward(e);
        tg.dealias_in_place(&mut h);
        tg.inverse(&h)
    });
    let (beta, alpha) = (p.beta, p.alpha);
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for l in 0..n {
            let (u, w) = (phi[l].re, phi[l].im);
            let pj = proj[(j, l)];
            let id = if j == l { 1.0 } else { 0.0 };
            jac[(j, l)] = -id - pj * 2.0 * u * w;
            jac[(j, n + l)] = beta * d2[(j, l)] + alpha * id - pj * (u * u + 3.0 * w * w);
            jac[(n + j, l)] = -beta * d2[(j, l)] - alpha * id + pj * (3.0 * u * u + w * w);
            jac[(n + j, n + l)] = -id + pj * 2.0 * u * w;
        }
    }
    jac
}

/// Gauge direction `P_theta` of a profile, or `None` for (numerically) constant profiles.
fn gauge_vector(tg: &Grid, phi: &[Complex64]) -> Option<DVector<f64>> {
    let n = tg.n_points();
    let dphi = tg.derivative_unchecked(phi, 1);
    let mut t = DVector::zeros(2 * n);
    for j in 0..n {
        t[j] = dphi[j].re;
        t[n + j] = dphi[j].im;
    }
    let scale = phi.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    if t.amax() < 1e-10 * scale {
        None
    } else {
        Some(t)
    }
}

/// Solves `[J t; t^T 0] [x; s] = [b; c]` (or `J x = b` without a gauge row).
/// Returns `None` when the system is numerically singular.
fn solve_bordered(jac: &DMatrix<f64>, tangent: Option<&DVector<f64>>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let m = jac.nrows();
    let system = match tangent {
        Some(t) => {
            let mut a = DMatrix::zeros(m + 1, m + 1);
            a.view_mut((0, 0), (m, m)).copy_from(jac);
            for i in 0..m {
                a[(i, m)] = t[i];
                a[(m, i)] = t[i];
            }
            a
        }
        None => jac.clone(),
    };
    let rhs = if tangent.is_some() { b.clone() } else { b.rows(0, m).into_owned() };
    let lu = system.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
    for v in diag.iter() {
        dmin = dmin.min(v.abs());
        dmax = dmax.max(v.abs());
    }
    if !(dmax > 0.0) || dmin < 1e-13 * dmax {
        return None;
    }
    let mut sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if tangent.is_none() {
        sol = sol.push(0.0);
    }
    Some(sol)
}

/// Newton iteration for `-i beta phi'' - (1 + i alpha) phi + i |phi|^2 phi + F = 0`
/// at wavenumber `k`, starting from `initial_guess` sampled on `n` equispaced
/// points of one period.
///
/// The translation degeneracy is removed by the bordering constraint
/// `<phi_x^guess, phi - phi^guess> = 0`; for a constant guess no constraint is needed.
pub fn solve_steady(
    params: &LleParams,
    k: f64,
    initial_guess: &[Complex64],
    opts: NewtonOptions,
) -> Result<PeriodicWave> {
    params.validate()?;
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidParams(format!("wavenumber must be positive, got {k}")));
    }
    let n = initial_guess.len();
    let tg = Grid::new(n, 1.0)?;
    tg.check_complex(initial_guess)?;
    if initial_guess.iter().all(|c| c.norm() == 0.0) {
        return Err(Error::precondition("initial guess must be nonzero"));
    }
    let guess = initial_guess.to_vec();
    let tangent = gauge_vector(&tg, &guess);
    let mut phi = guess.clone();
    let mut shift = 0.0;
    let mut res = steady_residual(&tg, params, k, &phi);
    let mut rnorm = residual_norm(&res, k);

    for iter in 0..=opts.max_iters {
        let gauge_defect = tangent.as_ref().map_or(0.0, |t| {
            (0..n)
                .map(|j| t[j] * (phi[j].re - guess[j].re) + t[n + j] * (phi[j].im - guess[j].im))
                .sum::<f64>()
        });
        if rnorm < opts.tol && gauge_defect.abs() < 1e-8 {
            let coeffs = tg.forward(&phi);
            return Ok(PeriodicWave { params: *params, k, coeffs, residual: rnorm, iterations: iter });
        }
        if iter == opts.max_iters {
            break;
        }
        let jac = steady_jacobian(&tg, params, k, &phi);
        let mut b = DVector::zeros(2 * n + 1);
        for j in 0..n {
            let t_re = tangent.as_ref().map_or(0.0, |t| t[j]);
            let t_im = tangent.as_ref().map_or(0.0, |t| t[n + j]);
            b[j] = -(res[j].re + shift * t_re);
            b[n + j] = -(res[j].im + shift * t_im);
        }
        b[2 * n] = -gauge_defect;
        let step = solve_bordered(&jac, tangent.as_ref(), &b)
            .ok_or(Error::SingularJacobian { iteration: iter })?;

        // backtracking on the residual norm
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<Complex64> = (0..n)
                .map(|j| phi[j] + Complex64::new(step[j], step[n + j]) * lambda)
                .collect();
            let tres = steady_residual(&tg, params, k, &trial);
            let tnorm = residual_norm(&tres, k);
            if tnorm.is_finite() && (tnorm < rnorm || tnorm < opts.tol) {
                phi = trial;
                res = tres;
                rnorm = tnorm;
                shift += lambda * step[2 * n];
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // take the full step anyway; a stalled backtrack usually means round-off
            for j in 0..n {
                phi[j] += Complex64::new(step[j], step[n + j]);
            }
            shift += step[2 * n];
            res = steady_residual(&tg, params, k, &phi);
            rnorm = residual_norm(&res, k);
            if !rnorm.is_finite() {
                return Err(Error::NoConvergence { iterations: iter + 1, residual: rnorm });
            }
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iters, residual: rnorm })
}

/// Re-solves a wave from its own profile; used to polish or re-gauge.
pub fn refine(wave: &PeriodicWave, opts: NewtonOptions) -> Result<PeriodicWave> {
    solve_steady(&wave.params, wave.k, &wave.profile(), opts)
}

/// Resamples a wave's coefficients to `n` points per period (zero padding or truncation).
pub fn resample_coeffs(coeffs: &[Complex64], n: usize) -> Vec<Complex64> {
    let old = coeffs.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, c) in coeffs.iter().enumerate() {
        let m = if i < old / 2 { i as i64 } else { i as i64 - old as i64 };
        if m.unsigned_abs() < (n / 2) as u64 {
            out[m.rem_euclid(n as i64) as usize] = *c;
        }
    }
    out
}

/// Constant state plus a cosine along the constant state's most unstable
/// direction at the wave's own wavenumber.
pub fn turing_seed(params: &LleParams, k: f64, amplitude: f64, n: usize) -> Result<Vec<Complex64>> {
    let states = params.homogeneous_states();
    let psi_c = *states
        .first()
        .ok_or_else(|| Error::InvalidParams("no homogeneous state".into()))?;
    let (_, dir) = params.constant_state_mode(psi_c, 2.0 * PI * k);
    Ok((0..n)
        .map(|j| psi_c + dir * amplitude * (2.0 * PI * j as f64 / n as f64).cos())
        .collect())
}

#[derive(Debug, Clone)]
pub struct FoldReport {
    pub k_converged: f64,
    pub k_failed: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    /// Starting wave followed by one wave per completed step.
    pub waves: Vec<PeriodicWave>,
    pub fold: Option<FoldReport>,
}

/// First-order (tangent) predictor for the family member at `k_new`.
pub fn predict(wave: &PeriodicWave, k_new: f64) -> Result<Vec<Complex64>> {
    let dk = k_new - wave.k;
    let sens = wave.k_sensitivity()?;
    Ok(wave.coeffs.iter().zip(&sens).map(|(c, s)| c + s * dk).collect())
}

/// Natural-parameter continuation in `k` with a tangent predictor and the
/// gauge-fixed Newton corrector.
pub fn continue_in_k(
    wave: &PeriodicWave,
    k_target: f64,
    steps: usize,
    opts: NewtonOptions,
) -> Result<ContinuationResult> {
    if steps == 0 {
        return Err(Error::precondition("continuation needs at least one step"));
    }
    if !(k_target.is_finite() && k_target > 0.0) {
        return Err(Error::InvalidParams(format!("target wavenumber must be positive, got {k_target}")));
    }
    let mut waves = vec![wave.clone()];
    if k_target == wave.k {
        return Ok(ContinuationResult { waves, fold: None });
    }
    let dk = (k_target - wave.k) / steps as f64;
    let tg = theta_grid(wave.n_points());
    for s in 1..=steps {
        let prev = waves.last().unwrap().clone();
        let k_new = if s == steps { k_target } else { wave.k + dk * s as f64 };
        let outcome = predict(&prev, k_new)
            .and_then(|pred| solve_steady(&prev.params, k_new, &tg.inverse(&pred), opts));
        match outcome {
            Ok(w) => waves.push(w),
            Err(e) => {
                return Ok(ContinuationResult {
                    waves,
                    fold: Some(FoldReport { k_converged: prev.k, k_failed: k_new, reason: e.to_string() }),
                })
            }
        }
    }
    Ok(ContinuationResult { waves, fold: None })
}
