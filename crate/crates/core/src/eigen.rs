//! Dense complex eigen-decomposition on top of a complex Schur factorization.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    /// Unit-norm right eigenvectors as columns, same order as `values`.
    pub vectors: DMatrix<Complex64>,
    schur_t: DMatrix<Complex64>,
    schur_q: DMatrix<Complex64>,
}

fn schur(a: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    if a.nrows() != a.ncols() {
        return Err(Error::Backend(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Backend("matrix has non-finite entries".into()));
    }
    let s = Schur::try_new(a.clone(), f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::Backend("complex Schur iteration did not converge".into()))?;
    Ok(s.unpack())
}

/// Eigenvalues only.
pub fn eigenvalues(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let (_, t) = schur(a)?;
    Ok(t.diagonal().iter().copied().collect())
}

fn guard(d: Complex64, floor: f64) -> Complex64 {
    if d.norm() < floor {
        Complex64::new(floor, 0.0)
    } else {
        d
    }
}

impl Eigen {
    pub fn new(a: &DMatrix<Complex64>) -> Result<Eigen> {
        let (q, t) = schur(a)?;
        let n = t.nrows();
        let floor = f64::EPSILON * t.norm().max(1e-300);
        let values: Vec<Complex64> = t.diagonal().iter().copied().collect();
        let mut x = DMatrix::zeros(n, n);
        for k in 0..n {
            let lam = values[k];
            x[(k, k)] = Complex64::new(1.0, 0.0);
            for i in (0..k).rev() {
                let mut s = Complex64::new(0.0, 0.0);
                for j in i + 1..=k {
                    s += t[(i, j)] * x[(j, k)];
                }
                x[(i, k)] = -s / guard(t[(i, i)] - lam, floor);
            }
        }
        let mut vectors = &q * x;
        for mut col in vectors.column_iter_mut() {
            let nrm = col.norm();
            col /= Complex64::new(nrm, 0.0);
        }
        Ok(Eigen { values, vectors, schur_t: t, schur_q: q })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn right(&self, k: usize) -> DVector<Complex64> {
        self.vectors.column(k).into_owned()
    }

    /// Left eigenvector `l` with `l^H A = lambda_k l^H`, unit norm.
    pub fn left(&self, k: usize) -> DVector<Complex64> {
        let t = &self.schur_t;
        let n = t.nrows();
        let floor = f64::EPSILON * t.norm().max(1e-300);
        let lam = self.values[k];
        let mut y = DVector::zeros(n);
        y[k] = Complex64::new(1.0, 0.0);
        for i in k + 1..n {
            let mut s = Complex64::new(0.0, 0.0);
            for j in k..i {
                s += t[(j, i)].conj() * y[j];
            }
            y[i] = s / guard((lam - t[(i, i)]).conj(), floor);
        }
        let l = &self.schur_q * y;
        let nrm = l.norm();
        l / Complex64::new(nrm, 0.0)
    }

    /// Index of the eigenvalue with largest real part.
    pub fn rightmost(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if v.re > self.values[best].re {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn diagonal_matrix() {
        let d = [Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.5), Complex64::new(0.0, 0.0)];
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&d));
        let mut ev = eigenvalues(&a).unwrap();
        ev.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        assert!((ev[0] - d[1]).norm() < 1e-14);
        assert!((ev[2] - d[0]).norm() < 1e-14);
    }

    #[test]
    fn right_and_left_residuals() {
        let a = random_matrix(40, 7);
        let e = Eigen::new(&a).unwrap();
        for k in 0..e.len() {
            let r = e.right(k);
            let res = (&a * &r - &r * e.values[k]).norm();
            assert!(res < 1e-10, "right residual {res}");
            let l = e.left(k);
            let res = (a.adjoint() * &l - &l * e.values[k].conj()).norm();
            assert!(res < 1e-10, "left residual {res}");
        }
    }

    #[test]
    fn trace_matches_eigenvalue_sum() {
        let a = random_matrix(25, 3);
        let s: Complex64 = eigenvalues(&a).unwrap().iter().sum();
        assert!((s - a.trace()).norm() < 1e-10);
    }

    #[test]
    fn non_finite_rejected() {
        let mut a = random_matrix(4, 1);
        a[(1, 2)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(Eigen::new(&a), Err(Error::Backend(_))));
    }
}
