//! Phase modulation: coordinate changes `x -> x -+ gamma(x)`, phase extraction,
//! the inverse/forward modulated perturbations and the norm-equivalence checks.

use std::fmt::Write as _;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{basis_harmonics, continue_branch, nearest_zero, LinearizedOperator};
use crate::eigen::Eigen;
use crate::error::{Error, Result};
use crate::grid::{Grid, Lp};
use crate::wave::PeriodicWave;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `f(x + gamma(x))`.
    Forward,
    /// `f(x - gamma(x))`.
    Backward,
}

/// `f(x +- gamma(x))` by trigonometric interpolation of `f`.
pub fn compose_shift(grid: &Grid, f: &[Complex64], gamma: &[f64], direction: Direction) -> Result<Vec<Complex64>> {
    grid.check_complex(f)?;
    grid.check_real(gamma)?;
    let offsets: Vec<f64> = match direction {
        Direction::Forward => gamma.to_vec(),
        Direction::Backward => gamma.iter().map(|g| -g).collect(),
    };
    Ok(grid.interpolate(f, &offsets))
}

pub fn compose_shift_real(grid: &Grid, f: &[f64], gamma: &[f64], direction: Direction) -> Result<Vec<f64>> {
    grid.check_real(f)?;
    let fc: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(compose_shift(grid, &fc, gamma, direction)?.into_iter().map(|c| c.re).collect())
}

fn sup_gx(grid: &Grid, gamma: &[f64]) -> f64 {
    grid.sup_norm_refined_real(&grid.derivative_real_unchecked(gamma, 1))
}

#[derive(Debug, Clone, Copy)]
pub struct InversionOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions { tol: 1e-12, max_iters: 100 }
    }
}

/// `gamma_tilde` with `(Id - gamma)^{-1} = Id + gamma_tilde`, from the fixed
/// point `gamma_tilde = gamma o (Id + gamma_tilde)`.
pub fn invert_coordinate(grid: &Grid, gamma: &[f64], opts: InversionOptions) -> Result<Vec<f64>> {
    grid.check_real(gamma)?;
    let s = sup_gx(grid, gamma);
    if s >= 1.0 {
        return Err(Error::NonInvertible { sup_gx: s });
    }
    let mut gt = gamma.to_vec();
    let mut defect = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let next = grid.interpolate_real(gamma, &gt);
        defect = next.iter().zip(&gt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        gt = next;
        if defect < opts.tol {
            return Ok(gt);
        }
    }
    Err(Error::FixedPoint { iterations: opts.max_iters, defect })
}

/// `sup |gamma_tilde - gamma o (Id + gamma_tilde)|`.
pub fn inversion_defect(grid: &Grid, gamma: &[f64], gamma_tilde: &[f64]) -> f64 {
    let g = grid.interpolate_real(gamma, gamma_tilde);
    g.iter().zip(gamma_tilde).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub gamma: Vec<f64>,
    pub gamma_x: Vec<f64>,
    pub gamma_t: Option<Vec<f64>>,
    pub sup_gx: f64,
}

impl PhaseField {
    pub fn from_gamma(grid: &Grid, gamma: Vec<f64>) -> Result<PhaseField> {
        grid.check_real(&gamma)?;
        let gamma_x = grid.derivative_real_unchecked(&gamma, 1);
        let sup_gx = grid.sup_norm_refined_real(&gamma_x);
        Ok(PhaseField { gamma, gamma_x, gamma_t: None, sup_gx })
    }

    pub fn zero(grid: &Grid) -> PhaseField {
        let n = grid.n_points();
        PhaseField { gamma: vec![0.0; n], gamma_x: vec![0.0; n], gamma_t: Some(vec![0.0; n]), sup_gx: 0.0 }
    }
}

/// Fills `gamma_t` by second-order differences across snapshots.
pub fn fill_time_derivatives(fields: &mut [PhaseField], times: &[f64]) -> Result<()> {
    let m = fields.len();
    if m != times.len() || m < 3 {
        return Err(Error::precondition("time derivatives need at least three matching snapshots"));
    }
    let n = fields[0].gamma.len();
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        let (a, b, c, ta, tb, tc) = if i == 0 {
            (0, 1, 2, times[0], times[1], times[2])
        } else if i == m - 1 {
            (m - 3, m - 2, m - 1, times[m - 3], times[m - 2], times[m - 1])
        } else {
            (i - 1, i, i + 1, times[i - 1], times[i], times[i + 1])
        };
        // derivative at times[i] of the quadratic through the three samples
        let t = times[i];
        let wa = (2.0 * t - tb - tc) / ((ta - tb) * (ta - tc));
        let wb = (2.0 * t - ta - tc) / ((tb - ta) * (tb - tc));
        let wc = (2.0 * t - ta - tb) / ((tc - ta) * (tc - tb));
        for j in 0..n {
            out[i][j] = wa * fields[a].gamma[j] + wb * fields[b].gamma[j] + wc * fields[c].gamma[j];
        }
    }
    for (f, d) in fields.iter_mut().zip(out) {
        f.gamma_t = Some(d);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMethod {
    BlochProjection,
    WindowedXcorr,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PhaseOptions {
    /// Projection cutoff as a fraction of `k`; `None` keeps the whole zone.
    pub xi_cut_frac: Option<f64>,
    /// Largest admissible `sup|psi - phi| / sup|phi|`.
    pub threshold_frac: f64,
    /// Bloch projection only: Newton corrections driving the projection of
    /// `psi o (Id + gamma) - phi` to zero, stopping once below `1e-13`.
    pub refine_iters: usize,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions { xi_cut_frac: None, threshold_frac: 0.5, refine_iters: 6 }
    }
}

/// Phase extraction against a fixed wave on a grid holding a whole number of periods.
#[derive(Debug, Clone)]
pub struct PhaseExtractor {
    grid: Grid,
    wave: PeriodicWave,
    method: PhaseMethod,
    opts: PhaseOptions,
    periods: usize,
    phi: Vec<Complex64>,
    sup_phi: f64,
    /// Adjoint critical modes for `r = 0..=periods/2`, scaled against the translation mode.
    left: Vec<DVector<Complex64>>,
    /// Response of the projection to a translation mode at each `r`.
    gain: Vec<Complex64>,
    harmonics: Vec<i64>,
}

impl PhaseExtractor {
    pub fn new(wave: &PeriodicWave, grid: &Grid, method: PhaseMethod, opts: PhaseOptions) -> Result<PhaseExtractor> {
        let ratio = grid.length() * wave.k;
        let periods = ratio.round();
        if periods < 1.0 || (ratio - periods).abs() > 1e-9 * ratio {
            return Err(Error::precondition("grid must hold a whole number of wave periods"));
        }
        let periods = periods as usize;
        if !grid.n_points().is_multiple_of(periods) {
            return Err(Error::precondition("grid points must divide evenly into periods"));
        }
        let phi = wave.sample_on(grid, 0);
        let sup_phi = phi.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let n_modes = wave.n_points();
        let harmonics = basis_harmonics(n_modes);
        let mut left = Vec::new();
        let mut gain = Vec::new();
        if method == PhaseMethod::BlochProjection {
            let op = LinearizedOperator::new(wave);
            let q0 = op.translation_vector(n_modes);
            let q0q0 = q0.dotc(&q0);
            let mut prev: Option<(DVector<Complex64>, Complex64)> = None;
            for r in 0..=periods / 2 {
                let xi = 2.0 * std::f64::consts::PI * r as f64 / grid.length();
                let e = Eigen::new(&op.bloch_matrix(xi, n_modes)?)?;
                let c = match &prev {
                    None => nearest_zero(&e.values),
                    Some((v, l)) => continue_branch(&e, v, *l).0,
                };
                let mut rv = e.right(c);
                let scale = q0q0 / q0.dotc(&rv);
                rv *= scale;
                let mut lv = e.left(c);
                let lr = lv.dotc(&rv);
                lv /= lr.conj();
                prev = Some((e.right(c), e.values[c]));
                gain.push(lv.dotc(&q0));
                left.push(lv);
            }
        }
        Ok(PhaseExtractor {
            grid: grid.clone(),
            wave: wave.clone(),
            method,
            opts,
            periods,
            phi,
            sup_phi,
            left,
            gain,
            harmonics,
        })
    }

    pub fn method(&self) -> PhaseMethod {
        self.method
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn phi(&self) -> &[Complex64] {
        &self.phi
    }

    pub fn extract(&self, psi: &[Complex64]) -> Result<PhaseField> {
        self.grid.check_complex(psi)?;
        let dev = psi.iter().zip(&self.phi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let threshold = self.opts.threshold_frac * self.sup_phi;
        if dev > threshold {
            return Err(Error::PhaseUndefined { deviation: dev, threshold });
        }
        let gamma = match self.method {
            PhaseMethod::BlochProjection => {
                let mut gamma = self.project(psi);
                for _ in 0..self.opts.refine_iters {
                    let back = self.grid.interpolate(psi, &gamma);
                    let delta: Vec<f64> =
                        self.grid.inverse(&self.project_hat(&back, true)).into_iter().map(|c| c.re).collect();
                    let size = delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
                    gamma.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
                    if size < 1e-13 {
                        break;
                    }
                }
                gamma
            }
            PhaseMethod::WindowedXcorr => self.xcorr(psi),
        };
        let field = PhaseField::from_gamma(&self.grid, gamma)?;
        if field.sup_gx >= 1.0 {
            return Err(Error::SteepPhase { sup_gx: field.sup_gx });
        }
        Ok(field)
    }

    fn project(&self, psi: &[Complex64]) -> Vec<f64> {
        self.grid.inverse(&self.project_hat(psi, false)).into_iter().map(|c| c.re).collect()
    }

    /// Fourier coefficients of the projected phase; `normalized` divides each
    /// Bloch component by the projection's response to a pure translation.
    fn project_hat(&self, psi: &[Complex64], normalized: bool) -> Vec<Complex64> {
        let g = &self.grid;
        let n = g.n_points() as i64;
        let np = self.periods as i64;
        let (re, im): (Vec<f64>, Vec<f64>) = psi.iter().zip(&self.phi).map(|(a, b)| ((a - b).re, (a - b).im)).unzip();
        let (vr, vi) = (g.forward_real(&re), g.forward_real(&im));
        let nb = self.harmonics.len();
        let cut = self.opts.xi_cut_frac.map(|f| f * self.wave.k);
        let mut ghat = vec![Complex64::new(0.0, 0.0); g.n_points()];
        for r in -(np / 2)..=(np - 1) / 2 {
            let xi = 2.0 * std::f64::consts::PI * r as f64 / g.length();
            if cut.is_some_and(|c| xi.abs() > c) {
                continue;
            }
            // the zone-edge component of a real phase is its own conjugate
            if normalized && np % 2 == 0 && r == -(np / 2) {
                continue;
            }
            let mut vec = DVector::zeros(2 * nb);
            for (i, &h) in self.harmonics.iter().enumerate() {
                let m = h * np + r;
                if m < -n / 2 || m >= n / 2 {
                    continue;
                }
                let s = m.rem_euclid(n) as usize;
                vec[i] = vr[s];
                vec[nb + i] = vi[s];
            }
            let l = &self.left[r.unsigned_abs() as usize];
            let proj = if r >= 0 {
                l.dotc(&vec)
            } else {
                // adjoint mode at -xi is the conjugate of the one at xi with harmonics reversed
                (0..2 * nb)
                    .map(|i| {
                        let (blk, j) = (i / nb, i % nb);
                        l[blk * nb + nb - 1 - j] * vec[i]
                    })
                    .sum()
            };
            let m = self.gain[r.unsigned_abs() as usize];
            let m = if r >= 0 { m } else { m.conj() };
            ghat[r.rem_euclid(n) as usize] = if normalized { -proj / m } else { -proj };
        }
        ghat
    }

    fn xcorr(&self, psi: &[Complex64]) -> Vec<f64> {
        let g = &self.grid;
        let per = g.n_points() / self.periods;
        let h = g.spacing();
        let q = self.wave.angular_wavenumber();
        let x_period = self.wave.period();
        let nw = self.wave.n_points();
        let hs: Vec<i64> = (0..nw).map(|i| self.wave.harmonic(i)).collect();
        let mut shifts = Vec::with_capacity(self.periods);
        for w in 0..self.periods {
            // a_h = sum over the window of psi(x) e^{-i q h x}
            let a: Vec<Complex64> = hs
                .iter()
                .map(|&hh| {
                    (w * per..(w + 1) * per)
                        .map(|j| psi[j] * Complex64::from_polar(1.0, -q * hh as f64 * j as f64 * h))
                        .sum()
                })
                .collect();
            let terms: Vec<Complex64> = a.iter().zip(&self.wave.coeffs).map(|(a, c)| c.conj() * a).collect();
            let eval = |c: f64| {
                let (mut f, mut f1, mut f2) = (0.0, 0.0, 0.0);
                for (t, &hh) in terms.iter().zip(&hs) {
                    let kq = q * hh as f64;
                    let z = t * Complex64::from_polar(1.0, kq * c);
                    f += z.re;
                    f1 += (z * Complex64::new(0.0, kq)).re;
                    f2 -= kq * kq * z.re;
                }
                (f, f1, f2)
            };
            let mut best: (f64, f64) = (0.0, f64::NEG_INFINITY);
            for s in 0..64 {
                let c = (s as f64 / 64.0 - 0.5) * x_period;
                let f = eval(c).0;
                if f > best.1 || (f == best.1 && c.abs() < best.0.abs()) {
                    best = (c, f);
                }
            }
            let mut c = best.0;
            for _ in 0..50 {
                let (_, f1, f2) = eval(c);
                if f2 >= 0.0 {
                    break;
                }
                let step = (-f1 / f2).clamp(-x_period / 64.0, x_period / 64.0);
                c += step;
                if step.abs() < 1e-15 * x_period {
                    break;
                }
            }
            shifts.push(c);
        }
        let centre = |w: usize| (w * per) as f64 * h + 0.5 * (per as f64 - 1.0) * h;
        periodic_spline(&shifts, centre(0), x_period, &g.points())
    }
}

/// Periodic interpolating cubic spline through `values` at nodes
/// `x0 + j * spacing`, evaluated at `xs`.
pub fn periodic_spline(values: &[f64], x0: f64, spacing: f64, xs: &[f64]) -> Vec<f64> {
    let m = values.len();
    let period = m as f64 * spacing;
    if m < 3 {
        let mean = values.iter().sum::<f64>() / m.max(1) as f64;
        return vec![mean; xs.len()];
    }
    // second derivatives from the cyclic (1, 4, 1) system, Gauss-Seidel
    let rhs: Vec<f64> = (0..m)
        .map(|j| 6.0 * (values[(j + 1) % m] - 2.0 * values[j] + values[(j + m - 1) % m]) / (spacing * spacing))
        .collect();
    let mut d2 = vec![0.0; m];
    for _ in 0..200 {
        let mut change: f64 = 0.0;
        for j in 0..m {
            let v = (rhs[j] - d2[(j + 1) % m] - d2[(j + m - 1) % m]) / 4.0;
            change = change.max((v - d2[j]).abs());
            d2[j] = v;
        }
        let scale = d2.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        if change <= 1e-16 * scale {
            break;
        }
    }
    xs.iter()
        .map(|&x| {
            let s = (x - x0).rem_euclid(period) / spacing;
            let j = (s.floor() as usize).min(m - 1);
            let t = s - j as f64;
            let (y0, y1) = (values[j], values[(j + 1) % m]);
            let (m0, m1) = (d2[j], d2[(j + 1) % m]);
            let h2 = spacing * spacing;
            (1.0 - t) * y0 + t * y1 + h2 / 6.0 * (((1.0 - t).powi(3) - (1.0 - t)) * m0 + (t.powi(3) - t) * m1)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ModulatedPair {
    /// `psi(x + gamma) - phi(x)`.
    pub v_inverse: Vec<Complex64>,
    /// `psi(x) - phi(x - gamma)`.
    pub v_forward: Vec<Complex64>,
    /// `psi - phi`.
    pub v_tilde: Vec<Complex64>,
}

pub fn modulated_pair(grid: &Grid, psi: &[Complex64], phi: &[Complex64], phase: &PhaseField) -> Result<ModulatedPair> {
    if phase.sup_gx >= 1.0 {
        return Err(Error::NonInvertible { sup_gx: phase.sup_gx });
    }
    grid.check_complex(phi)?;
    let shifted_psi = compose_shift(grid, psi, &phase.gamma, Direction::Forward)?;
    let shifted_phi = compose_shift(grid, phi, &phase.gamma, Direction::Backward)?;
    Ok(ModulatedPair {
        v_inverse: shifted_psi.iter().zip(phi).map(|(a, b)| a - b).collect(),
        v_forward: psi.iter().zip(&shifted_phi).map(|(a, b)| a - b).collect(),
        v_tilde: psi.iter().zip(phi).map(|(a, b)| a - b).collect(),
    })
}

/// Both displays of the `L^p` switching lemma for one sample. Only norms of
/// `phi_x`, `gamma` and `gamma_x` enter the bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpReport {
    pub p: String,
    /// `||psi - phi o (Id - gamma)^{-1}||_p`.
    pub a: f64,
    /// `||psi o (Id - gamma) - phi||_p`.
    pub b: f64,
    /// `||psi - phi o (Id + gamma)||_p`.
    pub c: f64,
    pub sup_phi_x: f64,
    pub sup_gamma: f64,
    pub sup_gamma_x: f64,
    pub lp_gamma_x: f64,
    /// `||phi_x||_inf (1 + ||gamma_x||_inf)^{1/p} ||gamma||_inf ||gamma_x||_p`.
    pub correction: f64,
    pub slack_upper_a: f64,
    pub slack_upper_c: f64,
    /// Lower bounds with the Jacobian factor `(1 - ||gamma_x||_inf)^{1/p}`.
    pub slack_lower_a: f64,
    pub slack_lower_c: f64,
    /// Lower bounds with the factor `(1 - ||gamma_x||_inf)^{-1/p}` instead.
    pub slack_lower_a_inverse_factor: f64,
    pub slack_lower_c_inverse_factor: f64,
    pub inversion_defect: f64,
    pub violation: bool,
}

pub const VIOLATION_TOL: f64 = 1e-8;

fn lp_of(grid: &Grid, f: &[Complex64], p: Lp) -> f64 {
    match p {
        Lp::Infinity => grid.sup_norm_refined(f),
        _ => grid.lp_norm_unchecked(f, p),
    }
}

fn lp_of_real(grid: &Grid, f: &[f64], p: Lp) -> f64 {
    match p {
        Lp::Infinity => grid.sup_norm_refined_real(f),
        _ => grid.lp_norm_real(f, p),
    }
}

pub fn check_equivalence_lp(grid: &Grid, psi: &[Complex64], phi: &[Complex64], gamma: &[f64], p: Lp) -> Result<LpReport> {
    grid.check_complex(psi)?;
    grid.check_complex(phi)?;
    let gx = grid.derivative_real_unchecked(gamma, 1);
    let g = grid.sup_norm_refined_real(&gx);
    if g >= 1.0 {
        return Err(Error::NonInvertible { sup_gx: g });
    }
    let gt = invert_coordinate(grid, gamma, InversionOptions::default())?;
    let defect = inversion_defect(grid, gamma, &gt);
    let psi_back = compose_shift(grid, psi, gamma, Direction::Backward)?;
    let u: Vec<Complex64> = psi_back.iter().zip(phi).map(|(a, b)| a - b).collect();
    let phi_tilde = grid.interpolate(phi, &gt);
    let phi_fwd = compose_shift(grid, phi, gamma, Direction::Forward)?;
    let da: Vec<Complex64> = psi.iter().zip(&phi_tilde).map(|(a, b)| a - b).collect();
    let dc: Vec<Complex64> = psi.iter().zip(&phi_fwd).map(|(a, b)| a - b).collect();
    let (a, b, c) = (lp_of(grid, &da, p), lp_of(grid, &u, p), lp_of(grid, &dc, p));
    let sup_phi_x = grid.sup_norm_refined(&grid.derivative_unchecked(phi, 1));
    let sup_gamma = grid.sup_norm_refined_real(gamma);
    let lp_gamma_x = lp_of_real(grid, &gx, p);
    let r = p.reciprocal();
    let up = (1.0 + g).powf(r);
    let down = (1.0 - g).powf(r);
    let down_inv = (1.0 - g).powf(-r);
    let correction = sup_phi_x * up * sup_gamma * lp_gamma_x;
    let slack_upper_a = up * b - a;
    let slack_upper_c = up * b + correction - c;
    let slack_lower_a = a - down * b;
    let slack_lower_c = c - (down * b - correction);
    let violation = [slack_upper_a, slack_upper_c, slack_lower_a, slack_lower_c]
        .iter()
        .any(|s| *s < -VIOLATION_TOL || !s.is_finite());
    Ok(LpReport {
        p: p.label(),
        a,
        b,
        c,
        sup_phi_x,
        sup_gamma,
        sup_gamma_x: g,
        lp_gamma_x,
        correction,
        slack_upper_a,
        slack_upper_c,
        slack_lower_a,
        slack_lower_c,
        slack_lower_a_inverse_factor: a - down_inv * b,
        slack_lower_c_inverse_factor: c - (down_inv * b - correction),
        inversion_defect: defect,
        violation,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HkReport {
    pub k: usize,
    /// `||psi o (Id - gamma) - phi||_{H^k}`.
    pub b: f64,
    /// `||psi - phi o (Id + gamma)||_{H^k}`.
    pub c: f64,
    /// `||gamma_x||_{H^{k+1}}`.
    pub g: f64,
    pub sup_gamma_x: f64,
    /// Smallest `C >= 1` for which both sides of the equivalence hold.
    pub c_min: f64,
}

pub fn check_equivalence_hk(grid: &Grid, psi: &[Complex64], phi: &[Complex64], gamma: &[f64], k: usize) -> Result<HkReport> {
    grid.check_complex(psi)?;
    grid.check_complex(phi)?;
    grid.check_real(gamma)?;
    if k + 2 > crate::grid::MAX_ORDER {
        return Err(Error::precondition(format!("k = {k} needs derivatives beyond the supported order")));
    }
    let gx = grid.derivative_real_unchecked(gamma, 1);
    let sg = grid.sup_norm_refined_real(&gx);
    if sg >= 1.0 {
        return Err(Error::NonInvertible { sup_gx: sg });
    }
    let psi_back = compose_shift(grid, psi, gamma, Direction::Backward)?;
    let u: Vec<Complex64> = psi_back.iter().zip(phi).map(|(a, b)| a - b).collect();
    let phi_fwd = compose_shift(grid, phi, gamma, Direction::Forward)?;
    let w: Vec<Complex64> = psi.iter().zip(&phi_fwd).map(|(a, b)| a - b).collect();
    let b = grid.sobolev_norm_unchecked(&u, k);
    let c = grid.sobolev_norm_unchecked(&w, k);
    let g = grid.sobolev_norm_real(&gx, k + 1);
    Ok(HkReport { k, b, c, g, sup_gamma_x: sg, c_min: hk_constant(b, c, g) })
}

/// `max(1, c / (b + g), b / (c + g))`, infinite when a side cannot be met.
pub fn hk_constant(b: f64, c: f64, g: f64) -> f64 {
    let ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    };
    1.0f64.max(ratio(c, b + g)).max(ratio(b, c + g))
}

/// Constant implied at `k = 0` by the `L^2` lemma:
/// `max(1, K, (1 + g)^{1/2}, max(1, K) / (1 - g)^{1/2})` with
/// `K = ||phi_x||_inf (1 + g)^{1/2} ||gamma||_inf`.
pub fn lemma_constant_l2(sup_phi_x: f64, sup_gamma: f64, sup_gx: f64) -> f64 {
    let kk = sup_phi_x * (1.0 + sup_gx).sqrt() * sup_gamma;
    1.0f64
        .max(kk)
        .max((1.0 + sup_gx).sqrt())
        .max(1.0f64.max(kk) / (1.0 - sup_gx).sqrt())
}

/// Randomized `(psi, phi, gamma)` triple for the equivalence corpus.
#[derive(Debug, Clone)]
pub struct CorpusSample {
    pub id: usize,
    pub psi: Vec<Complex64>,
    pub phi: Vec<Complex64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CorpusOptions {
    pub n_points: usize,
    pub length: f64,
    /// Highest Fourier mode of the random fields.
    pub max_mode: i64,
    /// Target `sup |gamma_x|` is drawn uniformly from `(0, max_gx]`.
    pub max_gx: f64,
    /// Optional cap on `||gamma_x||_{H^{k+1}}` (applied by rescaling).
    pub hk_cap: Option<(usize, f64)>,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions { n_points: 256, length: 20.0, max_mode: 6, max_gx: 0.5, hk_cap: None, seed: 1 }
    }
}

fn random_trig(rng: &mut ChaCha8Rng, grid: &Grid, max_mode: i64, decay: f64) -> Vec<Complex64> {
    let mut hat = vec![Complex64::new(0.0, 0.0); grid.n_points()];
    for m in -max_mode..=max_mode {
        let w = (-decay * (m as f64).abs()).exp();
        hat[grid.slot(m)] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
    }
    grid.inverse(&hat)
}

/// Sample `id` of the corpus; the same `(seed, id)` always gives the same
/// sample, and the continuous fields do not depend on `n_points`.
pub fn corpus_sample(opts: &CorpusOptions, id: usize) -> Result<CorpusSample> {
    let grid = Grid::new(opts.n_points, opts.length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64));
    let phi = random_trig(&mut rng, &grid, opts.max_mode, 0.3);
    let graw: Vec<f64> = random_trig(&mut rng, &grid, opts.max_mode.min(4), 0.3).iter().map(|c| c.re).collect();
    let target = opts.max_gx * rng.gen_range(0.05..1.0);
    let s = sup_gx(&grid, &graw).max(1e-300);
    let mut gamma: Vec<f64> = graw.iter().map(|v| v * target / s).collect();
    if let Some((k, cap)) = opts.hk_cap {
        let gx = grid.derivative_real_unchecked(&gamma, 1);
        let h = grid.sobolev_norm_real(&gx, k + 1);
        if h > cap {
            let f = cap * rng.gen_range(0.1..1.0) / h;
            gamma.iter_mut().for_each(|v| *v *= f);
        }
    }
    // psi: an exactly modulated copy of phi plus noise of random size
    let noise = random_trig(&mut rng, &grid, opts.max_mode, 0.3);
    let eps = 10f64.powf(rng.gen_range(-3.0..0.0));
    let factor = rng.gen_range(0.0..1.5);
    let mod_gamma: Vec<f64> = gamma.iter().map(|v| v * factor).collect();
    let base = compose_shift(&grid, &phi, &mod_gamma, Direction::Forward)?;
    let psi = base.iter().zip(&noise).map(|(a, b)| a + b * eps).collect();
    Ok(CorpusSample { id, psi, phi, gamma })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRow {
    pub id: usize,
    pub report: LpReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub samples: usize,
    pub checks: usize,
    pub violations: usize,
    /// Checks that would fail with the `(1 - g)^{-1/p}` lower-bound factor.
    pub inverse_factor_failures: usize,
    pub max_inversion_defect: f64,
    pub max_sup_gamma_x: f64,
    pub min_slack: f64,
}

/// Runs the `L^p` checks on `count` samples for each exponent in `ps`.
pub fn run_lp_corpus(opts: &CorpusOptions, count: usize, ps: &[Lp]) -> Result<(Vec<CorpusRow>, CorpusSummary)> {
    let grid = Grid::new(opts.n_points, opts.length)?;
    let rows: Vec<Vec<CorpusRow>> = (0..count)
        .into_par_iter()
        .map(|id| {
            let s = corpus_sample(opts, id)?;
            ps.iter()
                .map(|&p| Ok(CorpusRow { id, report: check_equivalence_lp(&grid, &s.psi, &s.phi, &s.gamma, p)? }))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<CorpusRow> = rows.into_iter().flatten().collect();
    let summary = CorpusSummary {
        samples: count,
        checks: rows.len() * 4,
        violations: rows.iter().filter(|r| r.report.violation).count(),
        inverse_factor_failures: rows
            .iter()
            .filter(|r| {
                r.report.slack_lower_a_inverse_factor < -VIOLATION_TOL
                    || r.report.slack_lower_c_inverse_factor < -VIOLATION_TOL
            })
            .count(),
        max_inversion_defect: rows.iter().map(|r| r.report.inversion_defect).fold(0.0, f64::max),
        max_sup_gamma_x: rows.iter().map(|r| r.report.sup_gamma_x).fold(0.0, f64::max),
        min_slack: rows
            .iter()
            .flat_map(|r| {
                [r.report.slack_upper_a, r.report.slack_upper_c, r.report.slack_lower_a, r.report.slack_lower_c]
            })
            .fold(f64::INFINITY, f64::min),
    };
    Ok((rows, summary))
}

/// Largest `H^k` equivalence constant over `count` samples.
pub fn run_hk_corpus(opts: &CorpusOptions, count: usize, k: usize) -> Result<(Vec<HkReport>, f64)> {
    let grid = Grid::new(opts.n_points, opts.length)?;
    let reports: Vec<HkReport> = (0..count)
        .into_par_iter()
        .map(|id| {
            let s = corpus_sample(opts, id)?;
            check_equivalence_hk(&grid, &s.psi, &s.phi, &s.gamma, k)
        })
        .collect::<Result<_>>()?;
    let cmax = reports.iter().map(|r| r.c_min).fold(1.0, f64::max);
    Ok((reports, cmax))
}

pub fn lp_rows_csv(rows: &[CorpusRow]) -> String {
    let mut s = String::from(
        "sample,p,a,b,c,sup_phi_x,sup_gamma,sup_gamma_x,lp_gamma_x,correction,slack_upper_a,slack_upper_c,slack_lower_a,slack_lower_c,slack_lower_a_inverse_factor,slack_lower_c_inverse_factor,violation\n",
    );
    for r in rows {
        let q = &r.report;
        let _ = writeln!(
            s,
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            r.id,
            q.p,
            q.a,
            q.b,
            q.c,
            q.sup_phi_x,
            q.sup_gamma,
            q.sup_gamma_x,
            q.lp_gamma_x,
            q.correction,
            q.slack_upper_a,
            q.slack_upper_c,
            q.slack_lower_a,
            q.slack_lower_c,
            q.slack_lower_a_inverse_factor,
            q.slack_lower_c_inverse_factor,
            q.violation
        );
    }
    s
}

pub fn hk_rows_csv(rows: &[HkReport]) -> String {
    let mut s = String::from("sample,k,b,c,g,sup_gamma_x,c_min\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", i, r.k, r.b, r.c, r.g, r.sup_gamma_x, r.c_min);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::tests::stable_wave;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(128, 10.0).unwrap()
    }

    #[test]
    fn zero_shift_is_identity() {
        let g = grid();
        let f: Vec<Complex64> = g.points().iter().map(|x| Complex64::new(x.sin(), x.cos())).collect();
        let out = compose_shift(&g, &f, &vec![0.0; 128], Direction::Forward).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn constant_shift_of_plane_wave() {
        let g = grid();
        let kk = 2.0 * PI / g.length();
        let f: Vec<Complex64> = g.points().iter().map(|x| Complex64::from_polar(1.0, kk * x)).collect();
        let c = 0.37;
        let fw = compose_shift(&g, &f, &vec![c; 128], Direction::Forward).unwrap();
        for (x, v) in g.points().iter().zip(&fw) {
            assert!((v - Complex64::from_polar(1.0, kk * (x + c))).norm() < 1e-10);
        }
    }

    #[test]
    fn shift_matches_polynomial_interpolation_on_finer_grid() {
        let g = grid();
        let l = g.length();
        let func = |x: f64| Complex64::new((2.0 * PI * x / l).sin().exp(), (4.0 * PI * x / l).cos() * 0.3);
        let f: Vec<Complex64> = g.points().iter().map(|&x| func(x)).collect();
        let gamma: Vec<f64> = g.points().iter().map(|x| 0.2 * (2.0 * PI * x / l).cos()).collect();
        let out = compose_shift(&g, &f, &gamma, Direction::Forward).unwrap();
        // 8th-order Lagrange interpolation on a 4x finer grid
        let nf = 512;
        let hf = l / nf as f64;
        let fine: Vec<Complex64> = (0..nf).map(|j| func(j as f64 * hf)).collect();
        for (j, x) in g.points().iter().enumerate() {
            let y = x + gamma[j];
            let base = (y / hf).floor() as i64 - 3;
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..8 {
                let xa = (base + a) as f64 * hf;
                let mut w = 1.0;
                for b in 0..8 {
                    if b != a {
                        w *= (y - (base + b) as f64 * hf) / ((a - b) as f64 * hf);
                    }
                }
                acc += fine[(base + a).rem_euclid(nf as i64) as usize] * w;
                let _ = xa;
            }
            assert!((acc - out[j]).norm() < 1e-7, "at {x}: {}", (acc - out[j]).norm());
        }
    }

    #[test]
    fn inversion_trivial_cases() {
        let g = grid();
        assert!(invert_coordinate(&g, &vec![0.0; 128], InversionOptions::default()).unwrap().iter().all(|v| *v == 0.0));
        let gt = invert_coordinate(&g, &vec![0.4; 128], InversionOptions::default()).unwrap();
        assert!(gt.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn inversion_matches_bisection() {
        let g = grid();
        let l = g.length();
        let amp = 0.3 * l / (2.0 * PI);
        let gamma_fn = |x: f64| amp * (2.0 * PI * x / l).sin();
        let gamma: Vec<f64> = g.points().iter().map(|&x| gamma_fn(x)).collect();
        let gt = invert_coordinate(&g, &gamma, InversionOptions::default()).unwrap();
        for (x, t) in g.points().iter().zip(&gt) {
            // solve y - gamma(y) = x for y by bisection
            let (mut lo, mut hi) = (x - 2.0 * amp - 1.0, x + 2.0 * amp + 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid - gamma_fn(mid) < *x {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let y = 0.5 * (lo + hi);
            assert!((x + t - y).abs() < 1e-9, "x = {x}: {} vs {y}", x + t);
        }
    }

    #[test]
    fn steep_phase_rejected() {
        let g = grid();
        let l = g.length();
        let gamma: Vec<f64> = g.points().iter().map(|x| 1.2 * l / (2.0 * PI) * (2.0 * PI * x / l).sin()).collect();
        assert!(matches!(
            invert_coordinate(&g, &gamma, InversionOptions::default()),
            Err(Error::NonInvertible { .. })
        ));
    }

    #[test]
    fn spline_reproduces_smooth_periodic_data() {
        let m = 32;
        let h = 2.0 * PI / m as f64;
        let vals: Vec<f64> = (0..m).map(|j| (j as f64 * h).sin()).collect();
        let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.0628).collect();
        let out = periodic_spline(&vals, 0.0, h, &xs);
        for (x, v) in xs.iter().zip(out) {
            assert!((v - x.sin()).abs() < 1e-4);
        }
    }

    fn wave_grid(w: &PeriodicWave, periods: usize) -> Grid {
        Grid::new(64 * periods, periods as f64 / w.k).unwrap()
    }

    #[test]
    fn unperturbed_wave_has_zero_phase() {
        let w = stable_wave();
        let g = wave_grid(w, 16);
        let phi = w.sample_on(&g, 0);
        for m in [PhaseMethod::BlochProjection, PhaseMethod::WindowedXcorr] {
            let ex = PhaseExtractor::new(w, &g, m, PhaseOptions::default()).unwrap();
            let p = ex.extract(&phi).unwrap();
            assert!(p.gamma.iter().all(|v| v.abs() < 1e-8), "{m:?}");
        }
    }

    #[test]
    fn constant_shift_recovered() {
        let w = stable_wave();
        let g = wave_grid(w, 16);
        let c = 0.05;
        let psi = w.shifted_on(&g, &vec![c; g.n_points()], 0);
        let xc = PhaseExtractor::new(w, &g, PhaseMethod::WindowedXcorr, PhaseOptions::default()).unwrap();
        let p = xc.extract(&psi).unwrap();
        assert!(p.gamma.iter().all(|v| (v - c).abs() < 1e-6));
        let bp = PhaseExtractor::new(w, &g, PhaseMethod::BlochProjection, PhaseOptions::default()).unwrap();
        let p = bp.extract(&psi).unwrap();
        assert!(p.gamma.iter().all(|v| (v - c).abs() < 1e-8));
        let linear = PhaseOptions { refine_iters: 0, ..PhaseOptions::default() };
        let lp = PhaseExtractor::new(w, &g, PhaseMethod::BlochProjection, linear).unwrap();
        let p = lp.extract(&psi).unwrap();
        let err = p.gamma.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
        assert!(err < 10.0 * c * c, "err {err}");
        let p2 = lp.extract(&w.shifted_on(&g, &vec![c / 2.0; g.n_points()], 0)).unwrap();
        let err2 = p2.gamma.iter().map(|v| (v - c / 2.0).abs()).fold(0.0, f64::max);
        assert!(err2 < 0.3 * err, "not second order: {err} then {err2}");
    }

    #[test]
    fn refined_projection_inverts_exact_modulation() {
        let w = stable_wave();
        let g = wave_grid(w, 32);
        let l = g.length();
        let h0: Vec<f64> = g.points().iter().map(|x| 0.05 * (2.0 * PI * x / l).sin() + 0.03 * (6.0 * PI * x / l).cos()).collect();
        let psi = w.shifted_on(&g, &h0, 0);
        // psi o (Id + gamma) = phi exactly when gamma = h0 o (Id + gamma)
        let exact = invert_coordinate(&g, &h0, InversionOptions::default()).unwrap();
        let ex = PhaseExtractor::new(w, &g, PhaseMethod::BlochProjection, PhaseOptions::default()).unwrap();
        let p = ex.extract(&psi).unwrap();
        let err = p.gamma.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "refined err {err}");
        let lin = PhaseExtractor::new(w, &g, PhaseMethod::BlochProjection, PhaseOptions { refine_iters: 0, ..PhaseOptions::default() }).unwrap();
        let p = lin.extract(&psi).unwrap();
        let err = p.gamma.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err > 1e-6, "linear projection unexpectedly exact: {err}");
    }

    #[test]
    fn slow_phase_methods_agree() {
        let w = stable_wave();
        let g = wave_grid(w, 32);
        let h0 = crate::evolution::smoothed_step(&g, (-0.02, 0.02), 3.0 * w.period());
        let psi = w.shifted_on(&g, &h0, 0);
        let mut fields = Vec::new();
        for m in [PhaseMethod::BlochProjection, PhaseMethod::WindowedXcorr] {
            let ex = PhaseExtractor::new(w, &g, m, PhaseOptions::default()).unwrap();
            let p = ex.extract(&psi).unwrap();
            let err = p.gamma.iter().zip(&h0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let slope = g.derivative_real(&h0, 1).unwrap().iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err <= 2.0 * slope, "{m:?}: err {err}, slope {slope}");
            fields.push(p.gamma);
        }
        let diff: Vec<f64> = fields[0].iter().zip(&fields[1]).map(|(a, b)| a - b).collect();
        let rel = g.l2_norm_real(&diff) / g.l2_norm_real(&fields[1]);
        assert!(rel < 0.05, "methods differ by {rel}");
    }

    #[test]
    fn pair_with_zero_phase_is_unmodulated() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_trig(&mut rng, &g, 5, 0.2);
        let phi = random_trig(&mut rng, &g, 5, 0.2);
        let pair = modulated_pair(&g, &psi, &phi, &PhaseField::zero(&g)).unwrap();
        assert_eq!(pair.v_inverse, pair.v_tilde);
        assert_eq!(pair.v_forward, pair.v_tilde);
    }

    #[test]
    fn exact_modulation_vanishes() {
        let w = stable_wave();
        let g = wave_grid(w, 8);
        let c = 0.3;
        let psi = w.shifted_on(&g, &vec![c; g.n_points()], 0);
        let phase = PhaseField::from_gamma(&g, vec![c; g.n_points()]).unwrap();
        let pair = modulated_pair(&g, &psi, &w.sample_on(&g, 0), &phase).unwrap();
        assert!(pair.v_inverse.iter().all(|v| v.norm() < 1e-9));
        assert!(pair.v_forward.iter().all(|v| v.norm() < 1e-9));
    }

    #[test]
    fn forward_inverse_gap_is_second_order() {
        let w = stable_wave();
        let g = wave_grid(w, 8);
        let phi = w.sample_on(&g, 0);
        let phi_xx = w.sample_on(&g, 2);
        let l = g.length();
        let gap = |amp: f64| {
            let gamma: Vec<f64> = g.points().iter().map(|x| amp * (2.0 * PI * x / l).cos()).collect();
            let phase = PhaseField::from_gamma(&g, gamma.clone()).unwrap();
            let pair = modulated_pair(&g, &phi, &phi, &phase).unwrap();
            let r: Vec<Complex64> = (0..g.n_points())
                .map(|j| pair.v_inverse[j] - pair.v_forward[j] - phi_xx[j] * gamma[j] * gamma[j])
                .collect();
            g.l2_norm(&r)
        };
        let (a, b) = (gap(0.02), gap(0.01));
        let ratio = a / b;
        assert!(ratio > 7.0, "ratio {ratio}");
    }

    #[test]
    fn identity_change_gives_equalities() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = random_trig(&mut rng, &g, 5, 0.2);
        let phi = random_trig(&mut rng, &g, 5, 0.2);
        for p in [Lp::Finite(2.0), Lp::Finite(4.0), Lp::Infinity] {
            let r = check_equivalence_lp(&g, &psi, &phi, &vec![0.0; 128], p).unwrap();
            for s in [r.slack_upper_a, r.slack_upper_c, r.slack_lower_a, r.slack_lower_c] {
                assert!(s.abs() < 1e-10, "{p:?}: slack {s}");
            }
        }
        let h = check_equivalence_hk(&g, &psi, &phi, &vec![0.0; 128], 2).unwrap();
        assert_eq!(h.c_min, 1.0);
    }

    #[test]
    fn infinity_path_has_unit_prefactors() {
        let opts = CorpusOptions::default();
        let s = corpus_sample(&opts, 4).unwrap();
        let g = Grid::new(opts.n_points, opts.length).unwrap();
        let r = check_equivalence_lp(&g, &s.psi, &s.phi, &s.gamma, Lp::Infinity).unwrap();
        // sup norms are invariant under the change of variables
        assert!((r.a - r.b).abs() < 1e-9, "{} vs {}", r.a, r.b);
        assert!((r.correction - r.sup_phi_x * r.sup_gamma * r.sup_gamma_x).abs() < 1e-14);
    }

    #[test]
    fn printed_lower_factor_can_fail() {
        // with gamma_x of one sign over the support of u, the (1-g)^{-1/p} factor is too strong
        let g = grid();
        let l = g.length();
        let amp = 0.4 * l / (2.0 * PI);
        let gamma: Vec<f64> = g.points().iter().map(|x| amp * (2.0 * PI * x / l).sin()).collect();
        let phi = vec![Complex64::new(0.0, 0.0); 128];
        let psi: Vec<Complex64> = g
            .points()
            .iter()
            .map(|x| Complex64::new((-((x - 0.0f64).rem_euclid(l) - l / 2.0).powi(2)).exp(), 0.0))
            .collect();
        let r = check_equivalence_lp(&g, &psi, &phi, &gamma, Lp::Finite(2.0)).unwrap();
        assert!(!r.violation);
        assert!(r.slack_lower_a_inverse_factor < -1e-3, "{}", r.slack_lower_a_inverse_factor);
    }

    #[test]
    fn k_zero_constant_within_lemma_constant() {
        let opts = CorpusOptions::default();
        let g = Grid::new(opts.n_points, opts.length).unwrap();
        for id in 0..20 {
            let s = corpus_sample(&opts, id).unwrap();
            let h = check_equivalence_hk(&g, &s.psi, &s.phi, &s.gamma, 0).unwrap();
            let l = check_equivalence_lp(&g, &s.psi, &s.phi, &s.gamma, Lp::Finite(2.0)).unwrap();
            assert!((h.b - l.b).abs() < 1e-10 && (h.c - l.c).abs() < 1e-10);
            let bound = lemma_constant_l2(l.sup_phi_x, l.sup_gamma, l.sup_gamma_x);
            assert!(h.c_min <= bound * (1.0 + 1e-10), "sample {id}: {} > {bound}", h.c_min);
        }
    }

    #[test]
    fn corpus_is_resolution_independent() {
        let a = CorpusOptions::default();
        let b = CorpusOptions { n_points: 512, ..a };
        let (sa, sb) = (corpus_sample(&a, 9).unwrap(), corpus_sample(&b, 9).unwrap());
        let ga = Grid::new(256, a.length).unwrap();
        let gb = Grid::new(512, a.length).unwrap();
        let ra = check_equivalence_lp(&ga, &sa.psi, &sa.phi, &sa.gamma, Lp::Finite(2.0)).unwrap();
        let rb = check_equivalence_lp(&gb, &sb.psi, &sb.phi, &sb.gamma, Lp::Finite(2.0)).unwrap();
        assert!((ra.b - rb.b).abs() < 1e-8 * ra.b.max(1.0));
    }
}
