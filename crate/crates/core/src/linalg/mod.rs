//! Dense linear-algebra support shared by the higher-level modules.
//!
//! Everything here operates on small-to-moderate dense matrices. Standard
//! factorizations come from nalgebra; this module adds the pieces it lacks:
//! a 1-norm condition estimator, principal matrix exponential/logarithm,
//! and a complex Schur eigensolver for nonsymmetric matrices.

mod expm;
mod logm;
mod schur;

pub use expm::matrix_exp;
pub use logm::{matrix_log, MAX_SQRT_STAGES};
pub use schur::{complex_eigen, complex_schur, real_eigen, ComplexEigen, ComplexSchur};

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular or numerically rank-deficient (condition estimate {cond:.3e})")]
    Singular { cond: f64 },
    #[error("matrix of size {0}x{1} is not square")]
    NotSquare(usize, usize),
    #[error("eigenvalue iteration failed to converge after {0} sweeps")]
    EigNonConvergence(usize),
    #[error("principal logarithm undefined: eigenvalue {re:.3e}{im:+.3e}i lies on the closed negative real axis")]
    LogDomain { re: f64, im: f64 },
    #[error("matrix is not symmetric positive definite: eigenvalue {0:.3e}")]
    NotSpd(f64),
    #[error("decomposition failed: {0}")]
    DecompositionFailed(&'static str),
}

/// Solves `A x = b` by LU with partial pivoting, rejecting numerically
/// singular systems. Returns the solution and a 1-norm condition estimate.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64), LinalgError> {
    let f = LuFactors::new(a)?;
    Ok((f.solve(b), f.cond_estimate()))
}

/// LU factorization with partial pivoting plus cached data for condition
/// estimation, reusable across multiple right-hand sides.
#[derive(Debug)]
pub struct LuFactors {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    norm1_a: f64,
    n: usize,
}

impl LuFactors {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
        }
        let n = a.nrows();
        let norm1_a = norm1(a);
        let lu = a.clone().lu();
        // Relative pivot test: a pivot tiny against the matrix scale means the
        // factorization is unusable even if no pivot is exactly zero.
        let scale = norm1_a.max(f64::MIN_POSITIVE);
        for i in 0..n {
            if lu.u()[(i, i)].abs() < 1e-300 * scale.max(1.0) {
                return Err(LinalgError::Singular { cond: f64::INFINITY });
            }
        }
        Ok(Self { lu, norm1_a, n })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("pivots were checked at construction")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("pivots were checked at construction")
    }

    /// Solves `A^T x = b` reusing the factorization of `A`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        // A = P^T L U  =>  A^T = U^T L^T P: solve U^T y = b, L^T z = y, x = P^T z.
        let n = self.n;
        let u = self.lu.u();
        let l = self.lu.l();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= u[(k, i)] * y[k];
            }
            y[i] = s / u[(i, i)];
        }
        let mut z = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * z[k];
            }
            z[i] = s; // L has unit diagonal
        }
        let mut x = DVector::zeros(n);
        self.lu.p().inv_permute_rows(&mut z);
        x.copy_from(&z);
        x
    }

    /// Estimates the 1-norm condition number via Hager's method applied to
    /// `A^{-1}`, using a handful of solves with the cached factorization.
    pub fn cond_estimate(&self) -> f64 {
        let inv_norm = self.estimate_inverse_norm1();
        self.norm1_a * inv_norm
    }

    fn estimate_inverse_norm1(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut best: f64 = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let norm_y = y.iter().map(|v| v.abs()).sum::<f64>();
            best = best.max(norm_y);
            let xi = DVector::from_iterator(n, y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }));
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.abs()))
                .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
            let ztx: f64 = z.dot(&x);
            if zmax <= ztx {
                break;
            }
            x = DVector::zeros(n);
            x[jmax] = 1.0;
        }
        best
    }
}

/// 1-norm (maximum absolute column sum).
pub fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Thin SVD sorted by descending singular value with a deterministic sign
/// convention: the largest-magnitude entry of each left singular vector is
/// made positive (ties broken by lowest row index).
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub vt: DMatrix<f64>,
}

pub fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd, LinalgError> {
    let svd = a
        .clone()
        .svd_unordered(true, true);
    let u = svd.u.ok_or(LinalgError::DecompositionFailed("SVD left vectors"))?;
    let vt = svd.v_t.ok_or(LinalgError::DecompositionFailed("SVD right vectors"))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap().then(i.cmp(&j)));
    let m = u.nrows();
    let n = vt.ncols();
    let k = order.len();
    let mut u_s = DMatrix::zeros(m, k);
    let mut vt_s = DMatrix::zeros(k, n);
    let mut sv = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u.column(src).clone_owned();
        let mut vrow = vt.row(src).clone_owned();
        let mut imax = 0;
        let mut vmax = 0.0;
        for (i, v) in ucol.iter().enumerate() {
            if v.abs() > vmax {
                vmax = v.abs();
                imax = i;
            }
        }
        if ucol[imax] < 0.0 {
            ucol.neg_mut();
            vrow.neg_mut();
        }
        u_s.set_column(dst, &ucol);
        vt_s.set_row(dst, &vrow);
        sv[dst] = s[src];
    }
    Ok(ThinSvd { u: u_s, singular_values: sv, vt: vt_s })
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending and the
/// same deterministic sign convention as [`thin_svd`].
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEig, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let n = a.nrows();
    let se = nalgebra::SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[i]
            .partial_cmp(&se.eigenvalues[j])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = se.eigenvalues[src];
        let mut col = se.eigenvectors.column(src).clone_owned();
        let mut imax = 0;
        let mut vmax = 0.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > vmax {
                vmax = v.abs();
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymEig { values, vectors })
}

/// Principal square root of a symmetric positive semidefinite matrix through
/// its eigendecomposition. Eigenvalues below `floor` are clamped to `floor`
/// and reported through the returned flag so callers can warn.
pub fn spd_sqrt_clamped(a: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, bool), LinalgError> {
    let eig = sym_eig(&symmetrize(a))?;
    let mut clamped = false;
    let roots: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            if l < floor {
                clamped = true;
                floor.sqrt()
            } else {
                l.sqrt()
            }
        })
        .collect();
    Ok((scaled_congruence(&eig.vectors, &roots), clamped))
}

/// Inverse principal square root of an SPD matrix, with the same clamping
/// policy as [`spd_sqrt_clamped`].
pub fn spd_inv_sqrt_clamped(
    a: &DMatrix<f64>,
    floor: f64,
) -> Result<(DMatrix<f64>, bool), LinalgError> {
    let eig = sym_eig(&symmetrize(a))?;
    let mut clamped = false;
    let roots: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            if l < floor {
                clamped = true;
                1.0 / floor.sqrt()
            } else {
                1.0 / l.sqrt()
            }
        })
        .collect();
    Ok((scaled_congruence(&eig.vectors, &roots), clamped))
}

/// Logarithm of an SPD matrix through its eigendecomposition. Fails when an
/// eigenvalue is not strictly positive.
pub fn spd_log(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let eig = sym_eig(&symmetrize(a))?;
    if let Some(&l) = eig.values.iter().find(|&&l| l <= 0.0) {
        return Err(LinalgError::NotSpd(l));
    }
    let logs: Vec<f64> = eig.values.iter().map(|l| l.ln()).collect();
    Ok(scaled_congruence(&eig.vectors, &logs))
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// True when a Cholesky factorization succeeds on the symmetrized input.
pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.is_square() && Cholesky::new(symmetrize(a)).is_some()
}

pub(crate) fn scaled_congruence(q: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
    let mut scaled = q.clone();
    for (j, &d) in diag.iter().enumerate() {
        scaled.column_mut(j).scale_mut(d);
    }
    scaled * q.transpose()
}
