use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of `psi_t = -i beta psi_xx - (1 + i alpha) psi + i |psi|^2 psi + F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LleParams {
    /// Detuning.
    pub alpha: f64,
    /// Dispersion; must be nonzero.
    pub beta: f64,
    /// Pump strength `F > 0`.
    pub f_pump: f64,
}

/// Default stable regime: `alpha = 1`, `beta = -1`, `F^2 = 1.3 * 1.09`.
pub fn shipped_params() -> LleParams {
    LleParams { alpha: 1.0, beta: -1.0, f_pump: (1.3f64 * 1.09).sqrt() }
}

/// Wavenumber (periods per unit length) of the default wave: `0.9 sqrt(1.4) / (2 pi)`.
pub fn shipped_wavenumber() -> f64 {
    0.9 * 1.4f64.sqrt() / (2.0 * std::f64::consts::PI)
}

impl LleParams {
    pub fn new(alpha: f64, beta: f64, f_pump: f64) -> Result<Self> {
        let p = LleParams { alpha, beta, f_pump };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.f_pump.is_finite()) {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if self.f_pump <= 0.0 {
            return Err(Error::InvalidParams(format!("F must be positive, got {}", self.f_pump)));
        }
        if self.beta == 0.0 {
            return Err(Error::InvalidParams("beta must be nonzero".into()));
        }
        Ok(())
    }

    /// Spatially constant steady states, ordered by increasing intensity.
    ///
    /// Intensities `I = |psi|^2` are the positive roots of
    /// `I (1 + (alpha - I)^2) = F^2`, and `psi = F / (1 + i (alpha - I))`.
    pub fn homogeneous_states(&self) -> Vec<Complex64> {
        let a = self.alpha;
        let f2 = self.f_pump * self.f_pump;
        let cubic = |i: f64| i * (1.0 + (a - i) * (a - i)) - f2;
        // critical points of the cubic split the positive axis into monotone pieces
        let disc = 4.0 * a * a - 3.0 * (1.0 + a * a);
        let mut breaks = vec![0.0];
        if disc > 0.0 {
            let s = disc.sqrt();
            for c in [(2.0 * a - s) / 3.0, (2.0 * a + s) / 3.0] {
                if c > 0.0 {
                    breaks.push(c);
                }
            }
        }
        let mut upper = 1.0;
        while cubic(upper) <= 0.0 {
            upper *= 2.0;
        }
        breaks.push(upper.max(*breaks.last().unwrap() + 1.0));
        let mut roots = Vec::new();
        for w in breaks.windows(2) {
            let (mut lo, mut hi) = (w[0], w[1]);
            let (flo, fhi) = (cubic(lo), cubic(hi));
            if flo == 0.0 && lo > 0.0 {
                roots.push(lo);
                continue;
            }
            if flo.signum() == fhi.signum() {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cubic(mid).signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        roots
            .into_iter()
            .map(|i| self.f_pump / Complex64::new(1.0, a - i))
            .collect()
    }

    /// Growth rate of the constant state `psi_c` under a perturbation with
    /// spatial angular wavenumber `q`, and the corresponding real eigenvector
    /// `(v_r, v_i)` packed as a complex number.
    pub fn constant_state_mode(&self, psi_c: Complex64, q: f64) -> (Complex64, Complex64) {
        let (a, b) = (psi_c.re, psi_c.im);
        let d = self.beta * q * q - self.alpha;
        let l11 = d + 3.0 * a * a + b * b;
        let l12 = 2.0 * a * b;
        let l22 = d + a * a + 3.0 * b * b;
        // A = -I + J L with J = [[0,-1],[1,0]]
        let m = [[-1.0 - l12, -l22], [l11, -1.0 + l12]];
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
        let lam = Complex64::new(tr / 2.0, 0.0) + disc;
        // eigenvector from the first row: (m00 - lam) x + m01 y = 0
        let v = if m[0][1].abs() > 1e-14 {
            (Complex64::new(m[0][1], 0.0), lam - m[0][0])
        } else {
            (lam - m[1][1], Complex64::new(m[1][0], 0.0))
        };
        let norm = (v.0.norm_sqr() + v.1.norm_sqr()).sqrt();
        // only meaningful as a real direction when lam is real
        (lam, Complex64::new(v.0.re / norm, v.1.re / norm))
    }
}
