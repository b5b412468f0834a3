//! Heat-equation approximant of the Whitham modulation equation, decay-rate
//! fits and comparisons against phases extracted from simulations.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::grid::{Grid, Lp};
use crate::modulation::{compose_shift, Direction, PhaseField};
use crate::wave::{continue_in_k, NewtonOptions, PeriodicWave};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhithamRun {
    pub k_star: f64,
    pub diffusion: f64,
    pub times: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

/// Exact Fourier solution of `k_t = D k_xx` at `times` (measured from zero),
/// with `h_x = k / k_star`. The zero mode of `k` contributes a ramp from the
/// left end; the constant in `h` is chosen so that `mean(h) = h_mean`.
pub fn solve_heat(grid: &Grid, k0: &[f64], k_star: f64, diffusion: f64, times: &[f64], h_mean: f64) -> Result<WhithamRun> {
    grid.check_real(k0)?;
    if !(diffusion.is_finite() && diffusion > 0.0) {
        return Err(Error::precondition(format!("diffusion must be positive, got {diffusion}")));
    }
    if !(k_star.is_finite() && k_star > 0.0) {
        return Err(Error::InvalidParams(format!("k_star must be positive, got {k_star}")));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::precondition("times must be finite and nonnegative"));
    }
    let k0hat = grid.forward_real(k0);
    let kappa = grid.wavenumbers().to_vec();
    let n = grid.n_points();
    let xs = grid.points();
    let l = grid.length();
    let mut ks = Vec::with_capacity(times.len());
    let mut hs = Vec::with_capacity(times.len());
    for &t in times {
        let khat: Vec<Complex64> = k0hat.iter().zip(&kappa).map(|(c, w)| c * (-diffusion * w * w * t).exp()).collect();
        let k = grid.inverse_real(&khat);
        let mut hhat = vec![Complex64::new(0.0, 0.0); n];
        for i in 1..n {
            if kappa[i] != 0.0 && !(n.is_multiple_of(2) && i == n / 2) {
                hhat[i] = khat[i] / (Complex64::new(0.0, kappa[i]) * k_star);
            }
        }
        let mean_k = khat[0].re / k_star;
        let periodic = grid.inverse_real(&hhat);
        // ramp x - L/2 has zero mean over the grid
        let h: Vec<f64> = periodic.iter().zip(&xs).map(|(p, x)| p + mean_k * (x - 0.5 * (l - grid.spacing())) + h_mean).collect();
        ks.push(k);
        hs.push(h);
    }
    Ok(WhithamRun { k_star, diffusion, times: times.to_vec(), k: ks, h: hs })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub name: String,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    pub exponent: f64,
    pub std_error: f64,
    /// Weighted rms of the log-residuals.
    pub residual: f64,
    pub predicted: Option<f64>,
    pub tolerance: f64,
    /// `|exponent - predicted| <= tolerance`.
    pub matches: Option<bool>,
    /// `exponent <= predicted + tolerance`.
    pub bound_holds: Option<bool>,
}

/// Least-squares slope of `log value` against `log(1 + t)` over `t >= t_min`,
/// each sample weighted by its share of the `log(1 + t)` axis.
pub fn fit_decay(name: &str, times: &[f64], values: &[f64], t_min: f64, predicted: Option<f64>, tolerance: f64) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::Fit(format!("{name}: {} times for {} values", times.len(), values.len())));
    }
    let pts: Vec<(f64, f64)> = times.iter().zip(values).filter(|(t, _)| **t >= t_min).map(|(t, v)| (*t, *v)).collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!("{name}: fewer than three samples beyond t = {t_min}")));
    }
    let (t_lo, t_hi) = (pts[0].0, pts[pts.len() - 1].0);
    if (1.0 + t_hi) < 10.0 * (1.0 + t_lo) * (1.0 - 1e-9) {
        return Err(Error::Fit(format!("{name}: window [{t_lo}, {t_hi}] spans less than a decade")));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Fit(format!("{name}: non-positive value {v} at t = {t}")));
    }
    let x: Vec<f64> = pts.iter().map(|(t, _)| (1.0 + t).ln()).collect();
    let y: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
    let m = x.len();
    let w: Vec<f64> = (0..m)
        .map(|i| {
            let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
            let right = if i + 1 < m { x[i + 1] - x[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = (0..m).map(|i| w[i] * (x[i] - xm).powi(2)).sum();
    let sxy: f64 = (0..m).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    let slope = sxy / sxx;
    let icept = ym - slope * xm;
    let rss: f64 = (0..m).map(|i| w[i] * (y[i] - icept - slope * x[i]).powi(2)).sum();
    let sigma2 = rss / sw * m as f64 / (m as f64 - 2.0).max(1.0);
    let std_error = (sigma2 / sxx * sw / m as f64).sqrt();
    Ok(DecayFit {
        name: name.to_string(),
        t_min: t_lo,
        t_max: t_hi,
        samples: m,
        exponent: slope,
        std_error,
        residual: (rss / sw).sqrt(),
        predicted,
        tolerance,
        matches: predicted.map(|p| (slope - p).abs() <= tolerance),
        bound_holds: predicted.map(|p| slope <= p + tolerance),
    })
}

/// Continued family `k -> phi^k` used to evaluate locally stretched profiles.
#[derive(Debug, Clone)]
pub struct WaveFamily {
    pub waves: Vec<PeriodicWave>,
}

impl WaveFamily {
    /// `2 * half + 1` waves evenly spaced over `[k_lo, k_hi]`, continued from `wave`.
    pub fn continue_around(wave: &PeriodicWave, k_lo: f64, k_hi: f64, half: usize) -> Result<WaveFamily> {
        if !(k_lo < wave.k && wave.k < k_hi) || half == 0 {
            return Err(Error::precondition("family range must bracket the base wavenumber"));
        }
        let opts = NewtonOptions::default();
        let down = continue_in_k(wave, k_lo, half, opts)?;
        let up = continue_in_k(wave, k_hi, half, opts)?;
        for r in [&down, &up] {
            if let Some(f) = &r.fold {
                return Err(Error::precondition(format!(
                    "family continuation stopped at k = {} (last converged {}): {}",
                    f.k_failed, f.k_converged, f.reason
                )));
            }
        }
        let mut waves: Vec<PeriodicWave> = down.waves.into_iter().skip(1).rev().collect();
        waves.extend(up.waves);
        Ok(WaveFamily { waves })
    }

    pub fn k_range(&self) -> (f64, f64) {
        (self.waves[0].k, self.waves[self.waves.len() - 1].k)
    }

    /// `P^{kappa_j}(k_ref x_j)` for the period-one profile `P^k` of each member,
    /// by cubic Lagrange interpolation in `k` over the four nearest members.
    /// `grid` must hold a whole number of periods of `k_ref`.
    pub fn stretched_profile(&self, grid: &Grid, k_ref: f64, kappa: &[f64]) -> Result<Vec<Complex64>> {
        grid.check_real(kappa)?;
        if self.waves.len() < 4 {
            return Err(Error::precondition("cubic interpolation needs at least four family members"));
        }
        let (lo, hi) = self.k_range();
        if let Some(bad) = kappa.iter().find(|k| **k < lo || **k > hi) {
            return Err(Error::Extrapolation { requested: *bad, min: lo, max: hi });
        }
        let ratio = grid.length() * k_ref;
        let periods = ratio.round();
        if periods < 1.0 || (ratio - periods).abs() > 1e-9 * ratio || !grid.n_points().is_multiple_of(periods as usize) {
            return Err(Error::precondition("grid must hold a whole number of reference periods"));
        }
        let per = grid.n_points() / periods as usize;
        let h = grid.spacing();
        // values of each member on one reference period
        let table: Vec<Vec<Complex64>> = self
            .waves
            .iter()
            .map(|w| (0..per).map(|j| w.eval(j as f64 * h * k_ref / w.k, 0)).collect())
            .collect();
        let ks: Vec<f64> = self.waves.iter().map(|w| w.k).collect();
        let m = ks.len();
        Ok(kappa
            .iter()
            .enumerate()
            .map(|(j, &kq)| {
                let pos = ks.partition_point(|k| *k <= kq).clamp(1, m - 1);
                let start = (pos as i64 - 2).clamp(0, m as i64 - 4) as usize;
                let mut acc = Complex64::new(0.0, 0.0);
                for a in start..start + 4 {
                    let mut wgt = 1.0;
                    for b in start..start + 4 {
                        if b != a {
                            wgt *= (kq - ks[b]) / (ks[a] - ks[b]);
                        }
                    }
                    acc += table[a][j % per] * wgt;
                }
                acc
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormSeries {
    pub name: String,
    pub p: String,
    pub values: Vec<f64>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub times: Vec<f64>,
    pub eta: f64,
    /// Profile, wavenumber and phase differences, and `||k||` for reference.
    pub series: Vec<NormSeries>,
}

impl AsymptoticsReport {
    pub fn get(&self, name: &str, p: &str) -> Option<&NormSeries> {
        self.series.iter().find(|s| s.name == name && s.p == p)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for c in &self.series {
            let _ = write!(s, ",{}_{}", c.name, c.p);
        }
        s.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(s, "{t:.10e}");
            for c in &self.series {
                let _ = write!(s, ",{:.12e}", c.values[i]);
            }
            s.push('\n');
        }
        s
    }
}

fn norm_p(grid: &Grid, f: &[f64], p: Lp) -> f64 {
    grid.lp_norm_real(f, p)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FitWindow {
    pub t_min: f64,
    pub tolerance: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { t_min: 10.0, tolerance: 0.15 }
    }
}

/// Norms of `psi(x + gamma) - P^{kappa}(k_* x)` with `kappa = k_*(1 - gamma_x)`,
/// `k_* gamma_x - k` and `gamma - h` for `p` in `{2, inf}`, each fitted against
/// its predicted exponent.
pub fn compare_asymptotics(
    traj: &Trajectory,
    phases: &[PhaseField],
    wave: &PeriodicWave,
    family: Option<&WaveFamily>,
    run: &WhithamRun,
    eta: f64,
    window: FitWindow,
) -> Result<AsymptoticsReport> {
    let g = &traj.grid;
    if phases.len() != traj.len() || run.times.len() != traj.len() {
        return Err(Error::precondition("trajectory, phases and Whitham run must share snapshots"));
    }
    if traj.times.iter().zip(&run.times).any(|(a, b)| (a - b - traj.times[0]).abs() > 1e-9 * a.abs().max(1.0)) {
        return Err(Error::precondition("Whitham run times do not match the trajectory"));
    }
    let k_star = wave.k;
    let ps = [(Lp::Finite(2.0), 0.5), (Lp::Infinity, 0.0)];
    let mut cols: Vec<(String, Lp, f64, Vec<f64>)> = Vec::new();
    for &(p, inv_p) in &ps {
        let base = -0.5 * (1.0 - inv_p);
        if family.is_some() {
            cols.push(("profile".into(), p, -0.75, vec![]));
        }
        cols.push(("wavenumber".into(), p, base - 0.5 + eta, vec![]));
        cols.push(("phase".into(), p, base + eta, vec![]));
        cols.push(("k".into(), p, base, vec![]));
    }
    for (i, ph) in phases.iter().enumerate() {
        let psi = &traj.states[i];
        let k = &run.k[i];
        let h = &run.h[i];
        let dk: Vec<f64> = ph.gamma_x.iter().zip(k).map(|(gx, kk)| k_star * gx - kk).collect();
        let dh: Vec<f64> = ph.gamma.iter().zip(h).map(|(a, b)| a - b).collect();
        let profile = match family {
            Some(fam) => {
                let kappa: Vec<f64> = ph.gamma_x.iter().map(|gx| k_star * (1.0 - gx)).collect();
                let stretched = fam.stretched_profile(g, k_star, &kappa)?;
                let back = compose_shift(g, psi, &ph.gamma, Direction::Forward)?;
                Some(back.iter().zip(&stretched).map(|(a, b)| a - b).collect::<Vec<Complex64>>())
            }
            None => None,
        };
        for (name, p, _, vals) in cols.iter_mut() {
            let v = match name.as_str() {
                "profile" => g.lp_norm(profile.as_ref().expect("family present"), *p)?,
                "wavenumber" => norm_p(g, &dk, *p),
                "phase" => norm_p(g, &dh, *p),
                _ => norm_p(g, k, *p),
            };
            vals.push(v);
        }
    }
    let times_rel: Vec<f64> = traj.times.iter().map(|t| t - traj.times[0]).collect();
    let series = cols
        .into_iter()
        .map(|(name, p, predicted, values)| {
            let label = format!("{name}_{}", p.label());
            let (fit, fit_error) = match fit_decay(&label, &times_rel, &values, window.t_min, Some(predicted), window.tolerance) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            NormSeries { name, p: p.label(), values, fit, fit_error }
        })
        .collect();
    Ok(AsymptoticsReport { times: times_rel, eta, series })
}

/// Norm series of one phase-tracked run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRunSeries {
    pub label: String,
    pub wave_k: f64,
    pub domain_length: f64,
    pub times: Vec<f64>,
    /// `||psi(x + gamma) - phi||_{L^2}`.
    pub v_l2: Vec<f64>,
    /// `||psi - phi||_{L^2}`.
    pub v_tilde_l2: Vec<f64>,
    pub gamma_l2: Vec<f64>,
    pub gamma_linf: Vec<f64>,
    pub gamma_x_l2: Vec<f64>,
}

pub fn phase_run_series(label: &str, traj: &Trajectory, phases: &[PhaseField], wave: &PeriodicWave) -> Result<PhaseRunSeries> {
    if phases.len() != traj.len() {
        return Err(Error::precondition("phase series does not match the trajectory"));
    }
    let g = &traj.grid;
    let phi = wave.sample_on(g, 0);
    let mut out = PhaseRunSeries {
        label: label.to_string(),
        wave_k: wave.k,
        domain_length: g.length(),
        times: traj.times.iter().map(|t| t - traj.times[0]).collect(),
        v_l2: vec![],
        v_tilde_l2: vec![],
        gamma_l2: vec![],
        gamma_linf: vec![],
        gamma_x_l2: vec![],
    };
    for (psi, ph) in traj.states.iter().zip(phases) {
        let back = compose_shift(g, psi, &ph.gamma, Direction::Forward)?;
        let v: Vec<Complex64> = back.iter().zip(&phi).map(|(a, b)| a - b).collect();
        let vt: Vec<Complex64> = psi.iter().zip(&phi).map(|(a, b)| a - b).collect();
        out.v_l2.push(g.l2_norm(&v));
        out.v_tilde_l2.push(g.l2_norm(&vt));
        out.gamma_l2.push(g.l2_norm_real(&ph.gamma));
        out.gamma_linf.push(g.sup_norm_refined_real(&ph.gamma));
        out.gamma_x_l2.push(g.l2_norm_real(&ph.gamma_x));
    }
    Ok(out)
}

impl PhaseRunSeries {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,v_l2,v_tilde_l2,gamma_l2,gamma_linf,gamma_x_l2\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:.10e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                self.times[i], self.v_l2[i], self.v_tilde_l2[i], self.gamma_l2[i], self.gamma_linf[i], self.gamma_x_l2[i]
            );
        }
        s
    }

    /// Linear interpolation of a column at time `t`.
    pub fn at(&self, column: &[f64], t: f64) -> Option<f64> {
        let i = self.times.partition_point(|s| *s <= t);
        if i == 0 || i > self.times.len() {
            return None;
        }
        if i == self.times.len() {
            return ((self.times[i - 1] - t).abs() < 1e-9).then(|| column[i - 1]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let a = (t - t0) / (t1 - t0);
        Some(column[i - 1] * (1.0 - a) + column[i] * a)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastRow {
    pub quantity: String,
    pub localized: Option<DecayFit>,
    pub nonlocalized: Option<DecayFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastReport {
    pub rows: Vec<ContrastRow>,
    /// `||gamma||_{L^2}` on the larger domain over the smaller one at `t_compare`.
    pub gamma_l2_growth: Option<f64>,
    pub domain_ratio: Option<f64>,
    pub t_compare: f64,
}

/// Side-by-side decay fits of the localized and nonlocalized runs, with the
/// growth of the nonlocalized `||gamma||_{L^2}` between two domain lengths.
pub fn localized_vs_nonlocalized(
    loc: &PhaseRunSeries,
    nonloc: &PhaseRunSeries,
    nonloc_larger: Option<&PhaseRunSeries>,
    window: FitWindow,
    t_compare: f64,
) -> Result<ContrastReport> {
    let same = |a: &PhaseRunSeries, b: &PhaseRunSeries| (a.wave_k - b.wave_k).abs() <= 1e-12 * a.wave_k;
    if !same(loc, nonloc) || nonloc_larger.is_some_and(|b| !same(nonloc, b)) {
        return Err(Error::Config("runs use different waves".into()));
    }
    let predicted_loc = [("v_l2", -0.75), ("gamma_x_l2", -0.75), ("gamma_l2", -0.25), ("gamma_linf", -0.5)];
    let predicted_non = [("v_l2", -0.25), ("gamma_x_l2", -0.25), ("gamma_l2", 0.0), ("gamma_linf", 0.0)];
    let column = |s: &PhaseRunSeries, q: &str| -> Vec<f64> {
        match q {
            "v_l2" => s.v_l2.clone(),
            "gamma_x_l2" => s.gamma_x_l2.clone(),
            "gamma_l2" => s.gamma_l2.clone(),
            _ => s.gamma_linf.clone(),
        }
    };
    let rows = predicted_loc
        .iter()
        .zip(&predicted_non)
        .map(|(&(q, pl), &(_, pn))| ContrastRow {
            quantity: q.to_string(),
            localized: fit_decay(q, &loc.times, &column(loc, q), window.t_min, Some(pl), window.tolerance).ok(),
            nonlocalized: fit_decay(q, &nonloc.times, &column(nonloc, q), window.t_min, Some(pn), window.tolerance).ok(),
        })
        .collect();
    let (growth, ratio) = match nonloc_larger {
        Some(b) => {
            let a_val = nonloc.at(&nonloc.gamma_l2, t_compare);
            let b_val = b.at(&b.gamma_l2, t_compare);
            match (a_val, b_val) {
                (Some(x), Some(y)) if x > 0.0 => (Some(y / x), Some(b.domain_length / nonloc.domain_length)),
                _ => return Err(Error::precondition(format!("t = {t_compare} not covered by both nonlocalized runs"))),
            }
        }
        None => (None, None),
    };
    Ok(ContrastReport { rows, gamma_l2_growth: growth, domain_ratio: ratio, t_compare })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::tests::stable_wave;
    use std::f64::consts::PI;

    #[test]
    fn single_mode_decays_exactly() {
        let g = Grid::new(128, 50.0).unwrap();
        let q = 2.0 * PI * 3.0 / 50.0;
        let k0: Vec<f64> = g.points().iter().map(|x| 0.01 * (q * x).cos()).collect();
        let run = solve_heat(&g, &k0, 0.2, 1.7, &[0.0, 1.0, 10.0], 0.0).unwrap();
        for (i, t) in run.times.iter().enumerate() {
            let f = (-1.7 * q * q * t).exp();
            for (a, b) in run.k[i].iter().zip(&k0) {
                assert!((a - b * f).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_conserved_and_h_consistent() {
        let g = Grid::new(256, 80.0).unwrap();
        let k0: Vec<f64> = g.points().iter().map(|x| 0.003 * (-(x - 30.0f64).powi(2) / 4.0).exp()).collect();
        let run = solve_heat(&g, &k0, 0.18, 0.9, &[0.0, 5.0, 50.0], 0.0).unwrap();
        let m0 = g.integral_real(&run.k[0]);
        for (k, h) in run.k.iter().zip(&run.h) {
            assert!((g.integral_real(k) - m0).abs() < 1e-10 * m0.abs().max(1e-12) + 1e-16);
            // h_x = k / k_star away from the ramp jump at the boundary
            let hh: Vec<f64> = h.iter().zip(g.points()).map(|(v, x)| v - m0 / (0.18 * 80.0) * (x - 0.5 * (80.0 - g.spacing()))).collect();
            let hx = g.derivative_real(&hh, 1).unwrap();
            for (a, b) in hx.iter().zip(k) {
                assert!((a - (b - m0 / 80.0) / 0.18).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nonpositive_diffusion_rejected() {
        let g = Grid::new(64, 10.0).unwrap();
        assert!(matches!(solve_heat(&g, &vec![0.0; 64], 0.2, 0.0, &[1.0], 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn narrow_gaussian_becomes_heat_kernel() {
        let l = 400.0;
        let g = Grid::new(2048, l).unwrap();
        let d = 0.8;
        let x0 = 200.0;
        let k0: Vec<f64> = g.points().iter().map(|x| (-(x - x0).powi(2) / 0.5).exp()).collect();
        let mass = g.integral_real(&k0);
        let t = 400.0;
        let run = solve_heat(&g, &k0, 1.0, d, &[t], 0.0).unwrap();
        let sd = (2.0 * d * t).sqrt();
        let err = g
            .points()
            .iter()
            .zip(&run.k[0])
            .map(|(x, k)| (k - mass / (sd * (2.0 * PI).sqrt()) * (-(x - x0).powi(2) / (2.0 * sd * sd)).exp()).abs())
            .fold(0.0, f64::max);
        let peak = mass / (sd * (2.0 * PI).sqrt());
        assert!(err * t.sqrt() < 0.01 * peak * t.sqrt(), "scaled error {}", err / peak);
    }

    #[test]
    fn step_profile_approaches_error_function() {
        let l = 600.0;
        let g = Grid::new(2048, l).unwrap();
        let k_star = 0.2;
        // h0 a smoothed step up at L/4 and down at 3L/4
        let h0 = crate::evolution::smoothed_step(&g, (0.0, 0.05), 2.0);
        let k0: Vec<f64> = g.derivative_real(&h0, 1).unwrap().iter().map(|v| k_star * v).collect();
        let mean = h0.iter().sum::<f64>() / h0.len() as f64;
        let t = 500.0;
        let d = 0.5;
        let run = solve_heat(&g, &k0, k_star, d, &[t], mean).unwrap();
        let s = (4.0 * d * t).sqrt();
        let erf_model = |x: f64| 0.025 * (erf((x - 0.25 * l) / s) - erf((x - 0.75 * l) / s));
        let err = g.points().iter().zip(&run.h[0]).map(|(x, h)| (h - erf_model(*x)).abs()).fold(0.0, f64::max);
        assert!(err < 0.02 * 0.05, "distance {err}");
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 is too coarse; integrate the Gaussian instead
        let n = 2000;
        let h = x / n as f64;
        let f = |s: f64| (-s * s).exp();
        let mut acc = f(0.0) + f(x);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0 * 2.0 / PI.sqrt()
    }

    #[test]
    fn fit_exact_power_law() {
        let times: Vec<f64> = (0..=400).map(|i| 10f64.powf(1.0 + 2.0 * i as f64 / 400.0) - 1.0).collect();
        let vals: Vec<f64> = times.iter().map(|t| 3.0 * (1.0 + t).powf(-0.75)).collect();
        let f = fit_decay("v", &times, &vals, 9.0, Some(-0.75), 0.15).unwrap();
        assert!((f.exponent + 0.75).abs() < 1e-6);
        assert_eq!(f.matches, Some(true));
        let scaled: Vec<f64> = vals.iter().map(|v| v * 17.0).collect();
        let g = fit_decay("v", &times, &scaled, 9.0, None, 0.15).unwrap();
        assert!((g.exponent - f.exponent).abs() < 1e-12);
        let flat = fit_decay("c", &times, &vec![2.0; times.len()], 9.0, Some(0.0), 0.1).unwrap();
        assert!(flat.exponent.abs() < 1e-12);
    }

    #[test]
    fn fit_with_log_factor_stays_between_local_slopes() {
        let times: Vec<f64> = (0..=990).map(|i| 10.0 + i as f64).collect();
        let vals: Vec<f64> = times.iter().map(|t| (1.0 + t).powf(-0.75) * (2.0 + t).ln()).collect();
        let f = fit_decay("v", &times, &vals, 10.0, Some(-0.75), 0.15).unwrap();
        // local slope of log v in log(1+t) is -3/4 + (1+t) / ((2+t) ln(2+t))
        let local = |t: f64| -0.75 + (1.0 + t) / ((2.0 + t) * (2.0 + t).ln());
        assert!(f.exponent > local(1000.0) && f.exponent < local(10.0), "{}", f.exponent);
    }

    #[test]
    fn fit_rejects_bad_series() {
        let times: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(fit_decay("a", &times, &vec![1.0; 100], 10.0, None, 0.1).is_err());
        let long: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let mut v = vec![1.0; 1000];
        v[500] = 0.0;
        assert!(matches!(fit_decay("b", &long, &v, 10.0, None, 0.1), Err(Error::Fit(_))));
    }

    #[test]
    fn family_interpolation_reproduces_members() {
        let w = stable_wave();
        let fam = WaveFamily::continue_around(w, w.k * 0.97, w.k * 1.03, 10).unwrap();
        assert_eq!(fam.waves.len(), 21);
        let g = Grid::new(64 * 4, 4.0 / w.k).unwrap();
        let phi = w.sample_on(&g, 0);
        let at_star = fam.stretched_profile(&g, w.k, &vec![w.k; g.n_points()]).unwrap();
        for (a, b) in phi.iter().zip(&at_star) {
            assert!((a - b).norm() < 1e-10);
        }
        // halfway between members: compare with a freshly solved wave
        let kq = 0.5 * (fam.waves[12].k + fam.waves[13].k);
        let fresh = crate::wave::continue_in_k(&fam.waves[12], kq, 1, NewtonOptions::default()).unwrap().waves.pop().unwrap();
        let mid = fam.stretched_profile(&g, w.k, &vec![kq; g.n_points()]).unwrap();
        let h = g.spacing();
        for (j, m) in mid.iter().enumerate().step_by(7) {
            let exact = fresh.eval(j as f64 * h * w.k / kq, 0);
            assert!((m - exact).norm() < 1e-7, "{}", (m - exact).norm());
        }
        assert!(matches!(
            fam.stretched_profile(&g, w.k, &vec![w.k * 1.1; g.n_points()]),
            Err(Error::Extrapolation { .. })
        ));
    }
}
