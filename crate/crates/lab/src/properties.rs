//! Property suites checked against closed-form or independently integrated
//! values: spectral norms and derivatives, the damping energy, the `M` matrix,
//! the heat solver and the decay fit.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use lle_core::damping::{energy, energy_band, m_matrix};
use lle_core::whitham::{fit_decay, solve_heat};
use lle_core::Grid;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    /// Measured error (or statistic) compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
    pub seconds: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, value: f64, tolerance: f64) -> PropertyCheck {
    PropertyCheck { name: name.into(), value, tolerance, passed: value.is_finite() && value <= tolerance }
}

/// Trigonometric polynomial `sum_m c_m e^{i q m x}` with its exact derivatives.
struct TrigPoly {
    q: f64,
    terms: Vec<(i64, Complex64)>,
}

impl TrigPoly {
    fn eval(&self, x: f64, order: u32) -> Complex64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                let w = self.q * *m as f64;
                c * Complex64::new(0.0, w).powu(order) * Complex64::from_polar(1.0, w * x)
            })
            .sum()
    }

    fn sample(&self, g: &Grid, order: u32) -> Vec<Complex64> {
        g.points().iter().map(|x| self.eval(*x, order)).collect()
    }

    fn l2_sq(&self, length: f64, order: u32) -> f64 {
        self.terms.iter().map(|(m, c)| c.norm_sqr() * (self.q * *m as f64).powi(2 * order as i32)).sum::<f64>() * length
    }
}

fn test_poly(length: f64, max_mode: i64, scale: f64, phase: f64) -> TrigPoly {
    let terms = (-max_mode..=max_mode)
        .map(|m| (m, Complex64::from_polar(scale / (1.0 + (m * m) as f64), phase * m as f64 + 0.3)))
        .collect();
    TrigPoly { q: 2.0 * PI / length, terms }
}

/// Composite Simpson rule over one period.
fn simpson(length: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = length / n as f64;
    let mut s = f(0.0) + f(length);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn spectral_checks(out: &mut Vec<PropertyCheck>) {
    let length = 7.3;
    let g = Grid::new(64, length).expect("grid");
    let p = test_poly(length, 5, 0.8, 0.7);
    let f = p.sample(&g, 0);
    out.push(check("parseval: discrete L2 norm equals coefficient sum", rel(g.l2_norm(&f).powi(2), p.l2_sq(length, 0)), 1e-12));
    let h2: f64 = (0..=2).map(|j| p.l2_sq(length, j)).sum::<f64>().sqrt();
    out.push(check("parseval: H2 norm from coefficients", rel(g.sobolev_norm(&f, 2).expect("norm"), h2), 1e-12));
    let mut worst: f64 = 0.0;
    for order in 1..=4u32 {
        let d = g.derivative(&f, order as usize).expect("derivative");
        let exact = p.sample(&g, order);
        let scale = exact.iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(d.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale);
    }
    out.push(check("spectral derivatives of orders 1-4 match exact derivatives", worst, 1e-11));
    let x: Vec<f64> = g.points();
    let real: Vec<f64> = x.iter().map(|x| (2.0 * PI * 3.0 * x / length).sin() + 0.5 * (2.0 * PI * x / length).cos()).collect();
    let dr = g.derivative_real(&real, 2).expect("derivative");
    let w = 2.0 * PI / length;
    let err = x
        .iter()
        .zip(&dr)
        .map(|(x, d)| (d + 9.0 * w * w * (3.0 * w * x).sin() + 0.5 * w * w * (w * x).cos()).abs())
        .fold(0.0, f64::max);
    out.push(check("real second derivative of a trigonometric sum", err / (9.0 * w * w), 1e-12));
}

/// Energy of a trigonometric perturbation against a non-constant profile,
/// compared with Simpson quadrature of the closed-form integrand.
fn energy_checks(out: &mut Vec<PropertyCheck>) {
    let length = 5.5;
    let g = Grid::new(64, length).expect("grid");
    let u = test_poly(length, 4, 0.05, 1.3);
    let phi = TrigPoly {
        q: 2.0 * PI / length,
        terms: vec![(0, Complex64::new(1.1, 0.2)), (1, Complex64::new(0.4, 0.0)), (-2, Complex64::new(0.0, -0.2))],
    };
    let beta = -1.0;
    let us = u.sample(&g, 0);
    let ps = phi.sample(&g, 0);
    let mut worst: f64 = 0.0;
    for j in 1..=3u32 {
        let e = energy(&g, &us, &ps, j as usize, beta).expect("energy");
        let oracle = simpson(length, 6000, |x| {
            let top = u.eval(x, j).norm_sqr();
            let w = u.eval(x, j - 1);
            let p = phi.eval(x, 0);
            let (r, i) = (p.re, p.im);
            let m11 = -4.0 * r * i;
            let m12 = 2.0 * (r * r - i * i);
            // w . (J M w) with J = [[0, -1], [1, 0]]
            let jm = w.re * (-m12 * w.re + m11 * w.im) + w.im * (m11 * w.re + m12 * w.im);
            top - jm / (2.0 * beta)
        });
        worst = worst.max(rel(e, oracle));
    }
    out.push(check("energy E_j (j = 1..3) matches Simpson quadrature", worst, 1e-10));

    let mut band_excess: f64 = 0.0;
    for j in 1..=3u32 {
        let e = energy(&g, &us, &ps, j as usize, beta).expect("energy");
        let top = u.l2_sq(length, j);
        let lower = u.l2_sq(length, j - 1);
        band_excess = band_excess.max((e - top).abs() - energy_band(&ps, beta) * lower);
    }
    out.push(check("energy stays within the M-band of ||d^j u||^2", band_excess.max(0.0), 1e-12));
}

fn m_matrix_checks(out: &mut Vec<PropertyCheck>) {
    let r: Vec<f64> = (0..50).map(|i| (0.37 * i as f64).sin() * 1.3).collect();
    let i: Vec<f64> = (0..50).map(|k| (0.91 * k as f64 + 0.2).cos() * 0.8).collect();
    let m = m_matrix(&r, &i);
    let mut sym: f64 = 0.0;
    let mut trace: f64 = 0.0;
    let mut det: f64 = 0.0;
    let mut jm_sym: f64 = 0.0;
    for k in 0..r.len() {
        let mod2 = r[k] * r[k] + i[k] * i[k];
        sym = sym.max((m[0][1][k] - m[1][0][k]).abs());
        trace = trace.max((m[0][0][k] + m[1][1][k]).abs());
        let d = m[0][0][k] * m[1][1][k] - m[0][1][k] * m[1][0][k];
        det = det.max((d + 4.0 * mod2 * mod2).abs() / (1.0 + mod2 * mod2));
        // J M = [[-m21, -m22], [m11, m12]]
        jm_sym = jm_sym.max((-m[1][1][k] - m[0][0][k]).abs());
    }
    out.push(check("M is symmetric", sym, 1e-15));
    out.push(check("M is trace free", trace, 1e-15));
    out.push(check("det M = -4 |phi|^4", det, 1e-14));
    out.push(check("J M is symmetric", jm_sym, 1e-15));
}

fn heat_checks(out: &mut Vec<PropertyCheck>) {
    let length = 120.0;
    let g = Grid::new(512, length).expect("grid");
    let x = g.points();
    let k0: Vec<f64> = x.iter().map(|x| 0.01 * (-(x - 50.0f64).powi(2) / 9.0).exp() - 0.004 * (-(x - 80.0f64).powi(2) / 2.0).exp()).collect();
    let times = [0.0, 1.0, 10.0, 100.0, 1000.0];
    let run = solve_heat(&g, &k0, 0.18, 2.7, &times, 0.0).expect("heat");
    let m0 = g.integral_real(&k0);
    let drift = run.k.iter().map(|k| (g.integral_real(k) - m0).abs()).fold(0.0, f64::max);
    out.push(check("heat solver conserves the integral of k", drift / k0.iter().map(|v| v.abs()).sum::<f64>(), 1e-14));

    let q = 2.0 * PI * 4.0 / length;
    let mode: Vec<f64> = x.iter().map(|x| (q * x).cos()).collect();
    let run = solve_heat(&g, &mode, 0.18, 2.7, &times, 0.0).expect("heat");
    let err = run
        .k
        .iter()
        .zip(&times)
        .map(|(k, t)| k.iter().zip(&mode).map(|(a, b)| (a - b * (-2.7 * q * q * t).exp()).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    out.push(check("heat solver decays a Fourier mode at exp(-D q^2 t)", err, 1e-14));

    let max_rise = run.k.windows(2).map(|w| w[1].iter().cloned().fold(f64::MIN, f64::max) - w[0].iter().cloned().fold(f64::MIN, f64::max)).fold(f64::MIN, f64::max);
    out.push(check("heat solver obeys the maximum principle", max_rise.max(0.0), 1e-14));
}

fn fit_checks(out: &mut Vec<PropertyCheck>) {
    let times: Vec<f64> = (0..=1000).map(|i| i as f64).collect();
    let law = |c: f64, a: f64| -> Vec<f64> { times.iter().map(|t| c * (1.0 + t).powf(a)).collect() };
    let mut worst: f64 = 0.0;
    for a in [-0.75, -0.25, -0.5, 0.0, 0.3] {
        let f = fit_decay("law", &times, &law(2.5, a), 10.0, Some(a), 0.15).expect("fit");
        worst = worst.max((f.exponent - a).abs());
    }
    out.push(check("fit_decay recovers exact power laws", worst, 1e-10));

    let a = fit_decay("a", &times, &law(1.0, -0.6), 10.0, None, 0.15).expect("fit").exponent;
    let b = fit_decay("b", &times, &law(1e-6, -0.6), 10.0, None, 0.15).expect("fit").exponent;
    out.push(check("fit_decay is invariant under scaling of the series", (a - b).abs(), 1e-12));

    let noisy: Vec<f64> = times.iter().map(|t| (1.0 + t).powf(-0.75) * (0.05 * (17.3 * t).sin()).exp()).collect();
    let f = fit_decay("noisy", &times, &noisy, 10.0, Some(-0.75), 0.15).expect("fit");
    out.push(check("fit_decay tolerates 5% multiplicative oscillation", (f.exponent + 0.75).abs(), 0.02));

    let short = fit_decay("short", &times[..60], &law(1.0, -0.5)[..60], 10.0, None, 0.15);
    out.push(check("fit_decay rejects windows shorter than a decade", if short.is_err() { 0.0 } else { 1.0 }, 0.0));
}

pub fn run_properties() -> PropertyReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    spectral_checks(&mut checks);
    energy_checks(&mut checks);
    m_matrix_checks(&mut checks);
    heat_checks(&mut checks);
    fit_checks(&mut checks);
    PropertyReport { checks, seconds: start.elapsed().as_secs_f64() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_properties_hold() {
        let r = run_properties();
        for c in &r.checks {
            assert!(c.passed, "{}: {:e} > {:e}", c.name, c.value, c.tolerance);
        }
    }
}
