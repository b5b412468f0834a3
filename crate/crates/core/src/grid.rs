//! Uniform periodic grid with Fourier differentiation, interpolation and norms.
//!
//! Fourier coefficients throughout the crate use the normalization
//! `f(x_j) = sum_m fhat_m exp(i kappa_m x_j)`, i.e. `fhat = FFT(f) / n`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Smallest grid size accepted by [`Grid::new`].
pub const MIN_POINTS: usize = 64;

/// Highest derivative order supported by the norm and derivative routines.
pub const MAX_ORDER: usize = 6;

/// Exponent of an `L^p` norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lp {
    Finite(f64),
    Infinity,
}

impl Lp {
    pub fn from_f64(p: f64) -> Result<Lp> {
        if p.is_infinite() && p > 0.0 {
            Ok(Lp::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(Lp::Finite(p))
        } else {
            Err(Error::precondition(format!("L^p exponent must be >= 1, got {p}")))
        }
    }

    /// `1/p`, zero for `p = inf`.
    pub fn reciprocal(self) -> f64 {
        match self {
            Lp::Finite(p) => 1.0 / p,
            Lp::Infinity => 0.0,
        }
    }

    pub fn label(self) -> String {
        match self {
            Lp::Finite(p) => format!("{p}"),
            Lp::Infinity => "inf".to_string(),
        }
    }
}

#[derive(Clone)]
pub struct Grid {
    n: usize,
    length: f64,
    kappa: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.length == other.length
    }
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Grid> {
        if n < MIN_POINTS || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points must be a power of two >= {MIN_POINTS}, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let kappa = (0..n).map(|i| 2.0 * PI * mode_index(i, n) as f64 / length).collect();
        Ok(Grid { n, length, kappa, fwd, inv })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n).map(|j| j as f64 * h).collect()
    }

    /// Angular wavenumbers `2 pi m / length` in FFT storage order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.kappa
    }

    /// Integer mode index of FFT slot `i` (symmetric range, Nyquist stored as `-n/2`).
    pub fn mode(&self, i: usize) -> i64 {
        mode_index(i, self.n)
    }

    /// FFT slot of integer mode `m` (taken modulo `n`).
    pub fn slot(&self, m: i64) -> usize {
        m.rem_euclid(self.n as i64) as usize
    }

    pub fn forward(&self, f: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(f.len(), self.n);
        let mut buf = f.to_vec();
        self.fwd.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        buf
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex64> {
        let buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&buf)
    }

    pub fn inverse(&self, fhat: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(fhat.len(), self.n);
        let mut buf = fhat.to_vec();
        self.inv.process(&mut buf);
        buf
    }

    pub fn inverse_real(&self, fhat: &[Complex64]) -> Vec<f64> {
        self.inverse(fhat).into_iter().map(|c| c.re).collect()
    }

    /// Scratch length needed by the in-place transforms.
    pub(crate) fn scratch_len(&self) -> usize {
        self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())
    }

    pub(crate) fn forward_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fwd.process_with_scratch(buf, scratch);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    pub(crate) fn inverse_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inv.process_with_scratch(buf, scratch);
    }

    /// Fourier symbol `(i kappa)^order`; the Nyquist mode is dropped for odd orders.
    pub fn derivative_symbol(&self, i: usize, order: usize) -> Complex64 {
        if order == 0 {
            return Complex64::new(1.0, 0.0);
        }
        if order % 2 == 1 && self.is_nyquist(i) {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, self.kappa[i]).powu(order as u32)
    }

    fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }

    pub fn derivative(&self, f: &[Complex64], order: usize) -> Result<Vec<Complex64>> {
        self.check_complex(f)?;
        check_order(order)?;
        Ok(self.derivative_unchecked(f, order))
    }

    pub(crate) fn derivative_unchecked(&self, f: &[Complex64], order: usize) -> Vec<Complex64> {
        if order == 0 {
            return f.to_vec();
        }
        let mut fhat = self.forward(f);
        for (i, c) in fhat.iter_mut().enumerate() {
            *c *= self.derivative_symbol(i, order);
        }
        self.inverse(&fhat)
    }

    pub fn derivative_real(&self, f: &[f64], order: usize) -> Result<Vec<f64>> {
        self.check_real(f)?;
        check_order(order)?;
        Ok(self.derivative_real_unchecked(f, order))
    }

    pub(crate) fn derivative_real_unchecked(&self, f: &[f64], order: usize) -> Vec<f64> {
        if order == 0 {
            return f.to_vec();
        }
        let mut fhat = self.forward_real(f);
        for (i, c) in fhat.iter_mut().enumerate() {
            *c *= self.derivative_symbol(i, order);
        }
        self.inverse_real(&fhat)
    }

    /// `(sum_{j<=k} ||d^j f||_{L^2}^2)^{1/2}`.
    pub fn sobolev_norm(&self, f: &[Complex64], k: usize) -> Result<f64> {
        self.check_complex(f)?;
        check_order(k)?;
        Ok(self.sobolev_norm_unchecked(f, k))
    }

    pub(crate) fn sobolev_norm_unchecked(&self, f: &[Complex64], k: usize) -> f64 {
        let fhat = self.forward(f);
        self.sobolev_from_coeffs(&fhat, k)
    }

    /// `H^k` norm from Fourier coefficients (discrete Parseval; identical to the
    /// rectangle rule applied to the spectral derivatives).
    pub fn sobolev_from_coeffs(&self, fhat: &[Complex64], k: usize) -> f64 {
        let mut total = 0.0;
        for (i, c) in fhat.iter().enumerate() {
            let a2 = c.norm_sqr();
            if a2 == 0.0 {
                continue;
            }
            let k2 = self.kappa[i] * self.kappa[i];
            let mut w = 1.0;
            let mut s = 1.0;
            for j in 1..=k {
                w *= k2;
                if !(j % 2 == 1 && self.is_nyquist(i)) {
                    s += w;
                }
            }
            total += s * a2;
        }
        (total * self.length).sqrt()
    }

    pub fn sobolev_norm_real(&self, f: &[f64], k: usize) -> f64 {
        let fhat = self.forward_real(f);
        self.sobolev_from_coeffs(&fhat, k)
    }

    /// `||d^j f||_{L^2}` for a single derivative order.
    pub fn derivative_l2(&self, fhat: &[Complex64], j: usize) -> f64 {
        let mut total = 0.0;
        for (i, c) in fhat.iter().enumerate() {
            if j % 2 == 1 && self.is_nyquist(i) {
                continue;
            }
            total += c.norm_sqr() * self.kappa[i].abs().powi(2 * j as i32);
        }
        (total * self.length).sqrt()
    }

    pub fn lp_norm(&self, f: &[Complex64], p: Lp) -> Result<f64> {
        self.check_complex(f)?;
        Ok(self.lp_norm_unchecked(f, p))
    }

    pub(crate) fn lp_norm_unchecked(&self, f: &[Complex64], p: Lp) -> f64 {
        match p {
            Lp::Infinity => f.iter().map(|c| c.norm()).fold(0.0, f64::max),
            Lp::Finite(p) => {
                let h = self.spacing();
                (f.iter().map(|c| c.norm().powf(p)).sum::<f64>() * h).powf(1.0 / p)
            }
        }
    }

    pub fn lp_norm_real(&self, f: &[f64], p: Lp) -> f64 {
        match p {
            Lp::Infinity => f.iter().map(|v| v.abs()).fold(0.0, f64::max),
            Lp::Finite(p) => {
                let h = self.spacing();
                (f.iter().map(|v| v.abs().powf(p)).sum::<f64>() * h).powf(1.0 / p)
            }
        }
    }

    pub fn l2_norm(&self, f: &[Complex64]) -> f64 {
        self.lp_norm_unchecked(f, Lp::Finite(2.0))
    }

    pub fn l2_norm_real(&self, f: &[f64]) -> f64 {
        (f.iter().map(|v| v * v).sum::<f64>() * self.spacing()).sqrt()
    }

    pub fn integral_real(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.spacing()
    }

    /// Supremum of the trigonometric interpolant of `f`, located on an
    /// 8x oversampled grid and polished by Newton steps on `|f|^2`.
    pub fn sup_norm_refined(&self, f: &[Complex64]) -> f64 {
        let fhat = self.forward(f);
        let n = self.n;
        let up = 8 * n;
        let mut padded = vec![Complex64::new(0.0, 0.0); up];
        for (i, c) in fhat.iter().enumerate() {
            let m = self.mode(i);
            padded[m.rem_euclid(up as i64) as usize] = *c;
        }
        let mut planner = FftPlanner::new();
        planner.plan_fft_inverse(up).process(&mut padded);
        let mut best: Vec<(usize, f64)> = Vec::new();
        for i in 0..up {
            let a = padded[i].norm();
            let l = padded[(i + up - 1) % up].norm();
            let r = padded[(i + 1) % up].norm();
            if a >= l && a >= r {
                best.push((i, a));
            }
        }
        best.sort_by(|a, b| b.1.total_cmp(&a.1));
        let h_up = self.length / up as f64;
        let mut sup = best.first().map(|b| b.1).unwrap_or(0.0);
        for &(i, _) in best.iter().take(4) {
            let mut x = i as f64 * h_up;
            for _ in 0..8 {
                let (v, d1, d2) = self.eval_with_derivatives(&fhat, x);
                // g = |f|^2, g' = 2 Re(conj f f'), g'' = 2 (|f'|^2 + Re(conj f f''))
                let g1 = 2.0 * (v.conj() * d1).re;
                let g2 = 2.0 * (d1.norm_sqr() + (v.conj() * d2).re);
                if g2 >= 0.0 {
                    break;
                }
                let step = -g1 / g2;
                if step.abs() > h_up {
                    break;
                }
                x += step;
                if step.abs() < 1e-15 * self.length {
                    break;
                }
            }
            let (v, _, _) = self.eval_with_derivatives(&fhat, x);
            sup = sup.max(v.norm());
        }
        sup
    }

    pub fn sup_norm_refined_real(&self, f: &[f64]) -> f64 {
        let c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.sup_norm_refined(&c)
    }

    fn eval_with_derivatives(&self, fhat: &[Complex64], x: f64) -> (Complex64, Complex64, Complex64) {
        let mut v = Complex64::new(0.0, 0.0);
        let mut d1 = v;
        let mut d2 = v;
        for (i, c) in fhat.iter().enumerate() {
            if self.is_nyquist(i) {
                // cosine convention for the Nyquist mode
                let k = self.kappa[i];
                v += c * (k * x).cos();
                d1 += c * (-k * (k * x).sin());
                d2 += c * (-k * k * (k * x).cos());
                continue;
            }
            let k = self.kappa[i];
            let e = Complex64::from_polar(1.0, k * x);
            let ce = c * e;
            v += ce;
            d1 += ce * Complex64::new(0.0, k);
            d2 += ce * (-k * k);
        }
        (v, d1, d2)
    }

    /// Evaluates the trigonometric interpolant of `f` at `x_j + offsets_j`.
    ///
    /// Each target is split into the nearest grid node plus a remainder of at
    /// most half a cell, and the interpolant is Taylor-expanded about that node
    /// using spectral derivatives. The expansion converges for every band-limited
    /// field, so the result is exact up to round-off for resolved modes.
    pub fn interpolate(&self, f: &[Complex64], offsets: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(offsets.len(), self.n);
        let n = self.n;
        let h = self.spacing();
        let mut node = Vec::with_capacity(n);
        let mut rem = Vec::with_capacity(n);
        for (j, &d) in offsets.iter().enumerate() {
            let s = (d / h).round();
            node.push((j as i64 + s as i64).rem_euclid(n as i64) as usize);
            rem.push(d - s * h);
        }
        let fhat = self.forward(f);
        let scale = f.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let rmax = rem.iter().map(|r| r.abs()).fold(0.0, f64::max);

        let mut out: Vec<Complex64> = node.iter().map(|&j| f[j]).collect();
        if rmax == 0.0 {
            return out;
        }
        let mut coeff = fhat.clone();
        let mut pow: Vec<f64> = vec![1.0; n];
        let mut factorial = 1.0;
        let mut quiet = 0;
        for p in 1..200 {
            for (i, c) in coeff.iter_mut().enumerate() {
                if self.is_nyquist(i) {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    *c *= Complex64::new(0.0, self.kappa[i]);
                }
            }
            let deriv = self.inverse(&coeff);
            factorial *= p as f64;
            let dmax = deriv.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for j in 0..n {
                pow[j] *= rem[j];
                out[j] += deriv[node[j]] * (pow[j] / factorial);
            }
            let bound = dmax * rmax.powi(p) / factorial;
            if bound < 1e-17 * scale {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        out
    }

    pub fn interpolate_real(&self, f: &[f64], offsets: &[f64]) -> Vec<f64> {
        let c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.interpolate(&c, offsets).into_iter().map(|c| c.re).collect()
    }

    /// Projection onto the lower two thirds of the spectrum (|m| <= n/3).
    pub fn dealias_in_place(&self, fhat: &mut [Complex64]) {
        let cut = (self.n / 3) as i64;
        for (i, c) in fhat.iter_mut().enumerate() {
            if self.mode(i).abs() > cut {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn keeps_mode(&self, i: usize) -> bool {
        self.mode(i).abs() <= (self.n / 3) as i64
    }

    pub fn check_complex(&self, f: &[Complex64]) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::InvalidField(format!(
                "field has {} values, grid has {}",
                f.len(),
                self.n
            )));
        }
        if let Some(j) = f.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidField(format!("non-finite value at index {j}")));
        }
        Ok(())
    }

    pub fn check_real(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::InvalidField(format!(
                "field has {} values, grid has {}",
                f.len(),
                self.n
            )));
        }
        if let Some(j) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at index {j}")));
        }
        Ok(())
    }
}

fn mode_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        return Err(Error::precondition(format!(
            "derivative order {order} exceeds supported maximum {MAX_ORDER}"
        )));
    }
    Ok(())
}

pub fn to_complex(f: &[f64]) -> Vec<Complex64> {
    f.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn split_parts(f: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    (f.iter().map(|c| c.re).collect(), f.iter().map(|c| c.im).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(grid: &Grid) -> Vec<Complex64> {
        let l = grid.length();
        grid.points()
            .iter()
            .map(|&x| Complex64::new((2.0 * PI * x / l).sin(), 0.0))
            .collect()
    }

    fn band_limited(grid: &Grid, modes: i64, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fhat = vec![Complex64::new(0.0, 0.0); grid.n_points()];
        for m in -modes..=modes {
            let decay = 1.0 / (1.0 + (m * m) as f64);
            fhat[grid.slot(m)] =
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
        }
        grid.inverse(&fhat)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(32, 1.0).is_err());
        assert!(Grid::new(96, 1.0).is_err());
        assert!(Grid::new(64, 0.0).is_err());
        assert!(Grid::new(64, 1.0).is_ok());
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = Grid::new(64, 3.0).unwrap();
        let f = vec![Complex64::new(1.0, 0.0); 64];
        let d = g.derivative(&f, 1).unwrap();
        assert!(d.iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn second_derivative_of_sine() {
        let g = Grid::new(128, 7.0).unwrap();
        let f = sine(&g);
        let d = g.derivative(&f, 2).unwrap();
        let w = (2.0 * PI / 7.0).powi(2);
        let err = d.iter().zip(&f).map(|(a, b)| (a + b * w).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn derivative_matches_finite_difference_oracle() {
        // sixth-order centered differences on a 4x finer grid
        let l = 5.0;
        let n = 64;
        let g = Grid::new(n, l).unwrap();
        let f: Vec<Complex64> = g
            .points()
            .iter()
            .map(|&x| Complex64::new((2.0 * PI * x / l).sin().exp(), 0.0))
            .collect();
        let d = g.derivative(&f, 1).unwrap();
        let hf = l / (4 * n) as f64;
        let func = |x: f64| (2.0 * PI * x / l).sin().exp();
        let mut worst: f64 = 0.0;
        for (j, x) in g.points().into_iter().enumerate() {
            let fd = (-func(x - 3.0 * hf) + 9.0 * func(x - 2.0 * hf) - 45.0 * func(x - hf)
                + 45.0 * func(x + hf)
                - 9.0 * func(x + 2.0 * hf)
                + func(x + 3.0 * hf))
                / (60.0 * hf);
            worst = worst.max((d[j].re - fd).abs());
        }
        assert!(worst < 1e-6, "worst = {worst}");
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = Grid::new(64, 1.0).unwrap();
        let mut f = vec![Complex64::new(0.0, 0.0); 64];
        f[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(g.derivative(&f, 1), Err(Error::InvalidField(_))));
        assert!(matches!(g.sobolev_norm(&f, 1), Err(Error::InvalidField(_))));
        assert!(g.derivative(&f[..10], 1).is_err());
    }

    #[test]
    fn order_limit_enforced() {
        let g = Grid::new(64, 1.0).unwrap();
        let f = vec![Complex64::new(0.0, 0.0); 64];
        assert!(g.derivative(&f, 6).is_ok());
        assert!(g.derivative(&f, 7).is_err());
        assert!(g.sobolev_norm(&f, 7).is_err());
    }

    #[test]
    fn sobolev_of_zero_and_sine() {
        let g = Grid::new(64, 2.0 * PI).unwrap();
        let z = vec![Complex64::new(0.0, 0.0); 64];
        for k in 0..=6 {
            assert_eq!(g.sobolev_norm(&z, k).unwrap(), 0.0);
        }
        let s = sine(&g);
        assert!((g.sobolev_norm(&s, 0).unwrap() - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sobolev_matches_direct_quadrature() {
        let g = Grid::new(128, 4.0).unwrap();
        let f = band_limited(&g, 12, 7);
        let d1 = g.derivative(&f, 1).unwrap();
        let d2 = g.derivative(&f, 2).unwrap();
        let h = g.spacing();
        let direct: f64 = (0..128)
            .map(|j| f[j].norm_sqr() + d1[j].norm_sqr() + d2[j].norm_sqr())
            .sum::<f64>()
            * h;
        let s = g.sobolev_norm(&f, 2).unwrap();
        assert!((s - direct.sqrt()).abs() < 1e-10 * direct.sqrt());
    }

    #[test]
    fn lp_examples() {
        let g = Grid::new(256, 3.0).unwrap();
        let c = vec![Complex64::new(-0.7, 0.0); 256];
        assert!((g.lp_norm(&c, Lp::Infinity).unwrap() - 0.7).abs() < 1e-15);
        let s = sine(&g);
        assert!((g.lp_norm(&s, Lp::Infinity).unwrap() - 1.0).abs() < 1.0 / (256.0 * 256.0));
        let f = band_limited(&g, 20, 3);
        assert_eq!(g.lp_norm(&f, Lp::Finite(2.0)).unwrap(), g.lp_norm_unchecked(&f, Lp::Finite(2.0)));
        let a = g.lp_norm(&f, Lp::Finite(2.0)).unwrap();
        let b = g.sobolev_norm(&f, 0).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn refined_sup_of_offgrid_peak() {
        // sin has its peak between grid nodes once shifted by a fraction of a cell
        let g = Grid::new(64, 1.0).unwrap();
        let f: Vec<Complex64> = g
            .points()
            .iter()
            .map(|&x| Complex64::new((2.0 * PI * (x + 0.003)).sin() * 2.0, 0.0))
            .collect();
        assert!((g.sup_norm_refined(&f) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_is_exact_for_band_limited() {
        let g = Grid::new(128, 6.0).unwrap();
        let f = band_limited(&g, 30, 11);
        let fhat = g.forward(&f);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let offs: Vec<f64> = (0..128).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let got = g.interpolate(&f, &offs);
        let xs = g.points();
        let mut worst: f64 = 0.0;
        for j in 0..128 {
            let x = xs[j] + offs[j];
            let mut v = Complex64::new(0.0, 0.0);
            for (i, c) in fhat.iter().enumerate() {
                v += c * Complex64::from_polar(1.0, g.wavenumbers()[i] * x);
            }
            worst = worst.max((v - got[j]).norm());
        }
        assert!(worst < 1e-11, "worst = {worst}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn parseval(seed in 0u64..1000, modes in 1i64..40) {
                let g = Grid::new(128, 2.5).unwrap();
                let f = band_limited(&g, modes, seed);
                let l2 = g.lp_norm(&f, Lp::Finite(2.0)).unwrap();
                let fhat = g.forward(&f);
                let spec: f64 = fhat.iter().map(|c| c.norm_sqr()).sum::<f64>() * g.length();
                prop_assert!((l2 * l2 - spec).abs() <= 1e-10 * spec);
            }

            #[test]
            fn first_derivative_twice_is_second(seed in 0u64..1000, modes in 1i64..40) {
                let g = Grid::new(128, 2.5).unwrap();
                let f = band_limited(&g, modes, seed);
                let dd = g.derivative(&g.derivative(&f, 1).unwrap(), 1).unwrap();
                let d2 = g.derivative(&f, 2).unwrap();
                let scale = g.l2_norm(&d2);
                let diff: Vec<Complex64> = dd.iter().zip(&d2).map(|(a, b)| a - b).collect();
                prop_assert!(g.l2_norm(&diff) <= 1e-10 * scale);
            }

            #[test]
            fn sobolev_monotone(seed in 0u64..1000, modes in 1i64..60, k in 0usize..6) {
                let g = Grid::new(128, 0.7).unwrap();
                let f = band_limited(&g, modes, seed);
                prop_assert!(g.sobolev_norm(&f, k).unwrap() <= g.sobolev_norm(&f, k + 1).unwrap());
            }
        }
    }
}
