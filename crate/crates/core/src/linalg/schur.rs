//! Complex Schur decomposition and eigenpair extraction for dense
//! nonsymmetric matrices, via Householder Hessenberg reduction and
//! single-shift QR iteration with Wilkinson shifts.
//!
//! Sized for the small operators that appear in reduced models; no blocking
//! or balancing is attempted.

use super::LinalgError;
use nalgebra::{Complex, DMatrix, DVector};

type CMatrix = DMatrix<Complex<f64>>;
type CVector = DVector<Complex<f64>>;

/// Unitary `q` and upper-triangular `t` with `a = q t q^H`.
pub struct ComplexSchur {
    pub q: CMatrix,
    pub t: CMatrix,
}

/// Eigenvalues with matching right and left eigenvectors (unit 2-norm,
/// largest-magnitude entry rotated to the positive real axis).
///
/// Right vectors satisfy `a v = lambda v`; left vectors `p^H a = lambda p^H`.
pub struct ComplexEigen {
    pub values: Vec<Complex<f64>>,
    pub right: Vec<CVector>,
    pub left: Vec<CVector>,
}

const MAX_SWEEPS_PER_EIGENVALUE: usize = 40;

/// Schur decomposition of a square complex matrix.
pub fn complex_schur(a: &CMatrix) -> Result<ComplexSchur, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let n = a.nrows();
    let mut t = a.clone();
    let mut q = CMatrix::identity(n, n);
    if n <= 1 {
        return Ok(ComplexSchur { q, t });
    }
    hessenberg_in_place(&mut t, &mut q);
    qr_iterate(&mut t, &mut q)?;
    Ok(ComplexSchur { q, t })
}

/// Full eigendecomposition (values plus right and left eigenvectors) of a
/// square complex matrix. Pairs are sorted by eigenvalue real part, then
/// imaginary part, for deterministic output.
pub fn complex_eigen(a: &CMatrix) -> Result<ComplexEigen, LinalgError> {
    let schur = complex_schur(a)?;
    let n = schur.t.nrows();
    let t_norm = (0..n)
        .map(|j| schur.t.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * t_norm;

    let mut items: Vec<(Complex<f64>, CVector, CVector)> = (0..n)
        .map(|j| {
            let lambda = schur.t[(j, j)];
            let right = normalize_phase(&schur.q * right_null_vector(&schur.t, j, tiny));
            let left = normalize_phase(&schur.q * left_null_vector(&schur.t, j, tiny));
            (lambda, right, left)
        })
        .collect();
    items.sort_by(|a, b| {
        (a.0.re, a.0.im)
            .partial_cmp(&(b.0.re, b.0.im))
            .expect("eigenvalues are finite")
    });
    let mut out = ComplexEigen { values: Vec::new(), right: Vec::new(), left: Vec::new() };
    for (l, r, p) in items {
        out.values.push(l);
        out.right.push(r);
        out.left.push(p);
    }
    Ok(out)
}

/// Convenience eigendecomposition for a real matrix.
pub fn real_eigen(a: &DMatrix<f64>) -> Result<ComplexEigen, LinalgError> {
    complex_eigen(&to_complex(a))
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|v| Complex::new(v, 0.0))
}

fn hessenberg_in_place(h: &mut CMatrix, q: &mut CMatrix) {
    let n = h.nrows();
    for k in 0..n.saturating_sub(2) {
        // Householder vector annihilating h[k+2.., k].
        let x = h.view((k + 1, k), (n - k - 1, 1)).clone_owned();
        let xnorm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let x0 = x[0];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { Complex::new(1.0, 0.0) };
        let alpha = -phase * xnorm;
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if vnorm < f64::EPSILON * xnorm {
            continue;
        }
        v /= Complex::new(vnorm, 0.0);

        // Left: rows k+1.., all columns. h <- (I - 2vv^H) h on that block.
        for j in 0..n {
            let mut dot = Complex::new(0.0, 0.0);
            for i in 0..v.len() {
                dot += v[i].conj() * h[(k + 1 + i, j)];
            }
            let dot = dot * 2.0;
            for i in 0..v.len() {
                let upd = dot * v[i];
                h[(k + 1 + i, j)] -= upd;
            }
        }
        // Right: columns k+1.., all rows. h <- h (I - 2vv^H).
        for i in 0..n {
            let mut dot = Complex::new(0.0, 0.0);
            for j in 0..v.len() {
                dot += h[(i, k + 1 + j)] * v[j];
            }
            let dot = dot * 2.0;
            for j in 0..v.len() {
                let upd = dot * v[j].conj();
                h[(i, k + 1 + j)] -= upd;
            }
        }
        // Accumulate q <- q (I - 2vv^H).
        for i in 0..n {
            let mut dot = Complex::new(0.0, 0.0);
            for j in 0..v.len() {
                dot += q[(i, k + 1 + j)] * v[j];
            }
            let dot = dot * 2.0;
            for j in 0..v.len() {
                let upd = dot * v[j].conj();
                q[(i, k + 1 + j)] -= upd;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = Complex::new(0.0, 0.0);
        }
    }
}

struct Givens {
    c: f64,
    s: Complex<f64>,
    k: usize,
}

impl Givens {
    /// Rotation with [c, s; -conj(s), c] [a; b] = [r; 0].
    fn annihilate(a: Complex<f64>, b: Complex<f64>, k: usize) -> Self {
        let na = a.norm();
        let nb = b.norm();
        if nb == 0.0 {
            return Self { c: 1.0, s: Complex::new(0.0, 0.0), k };
        }
        if na == 0.0 {
            return Self { c: 0.0, s: b.conj() / nb, k };
        }
        let r = (na * na + nb * nb).sqrt();
        Self { c: na / r, s: (a / na) * b.conj() / r, k }
    }

    fn apply_rows(&self, m: &mut CMatrix, col_start: usize) {
        let (c, s, k) = (self.c, self.s, self.k);
        for j in col_start..m.ncols() {
            let x = m[(k, j)];
            let y = m[(k + 1, j)];
            m[(k, j)] = x * c + s * y;
            m[(k + 1, j)] = -s.conj() * x + y * c;
        }
    }

    /// Right-multiplication by the adjoint rotation.
    fn apply_cols(&self, m: &mut CMatrix, row_end: usize) {
        let (c, s, k) = (self.c, self.s, self.k);
        for i in 0..row_end {
            let x = m[(i, k)];
            let y = m[(i, k + 1)];
            m[(i, k)] = x * c + s.conj() * y;
            m[(i, k + 1)] = -s * x + y * c;
        }
    }
}

fn qr_iterate(h: &mut CMatrix, q: &mut CMatrix) -> Result<(), LinalgError> {
    let n = h.nrows();
    let norm_h = (0..n)
        .map(|j| h.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut hi = n - 1;
    let mut stagnation = 0usize;
    let mut total_sweeps = 0usize;
    let max_total = MAX_SWEEPS_PER_EIGENVALUE * n;

    loop {
        // Deflate converged subdiagonals above `hi`.
        while hi > 0 {
            let tol = deflation_threshold(h, hi - 1, norm_h);
            if h[(hi, hi - 1)].norm() <= tol {
                h[(hi, hi - 1)] = Complex::new(0.0, 0.0);
                hi -= 1;
                stagnation = 0;
            } else {
                break;
            }
        }
        if hi == 0 {
            return Ok(());
        }
        // Active block [lo, hi]: walk up while subdiagonals stay significant.
        let mut lo = hi;
        while lo > 0 {
            let tol = deflation_threshold(h, lo - 1, norm_h);
            if h[(lo, lo - 1)].norm() <= tol {
                h[(lo, lo - 1)] = Complex::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }

        total_sweeps += 1;
        stagnation += 1;
        if total_sweeps > max_total {
            return Err(LinalgError::EigNonConvergence(total_sweeps));
        }

        let sigma = if stagnation.is_multiple_of(12) {
            // Exceptional shift to break symmetry-induced stalls.
            h[(hi, hi)] + Complex::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(h, hi)
        };

        // Implicit single-shift QR sweep on the active block: seed a bulge
        // with a rotation built from the first column of (H - sigma I), then
        // chase it down the subdiagonal. Equivalent to the explicit shifted
        // step by the implicit-Q argument, and keeps H exactly Hessenberg.
        let g0 = Givens::annihilate(h[(lo, lo)] - sigma, h[(lo + 1, lo)], lo);
        g0.apply_rows(h, lo);
        g0.apply_cols(h, (lo + 3).min(n));
        g0.apply_cols(q, n);
        for k in lo + 1..hi {
            let g = Givens::annihilate(h[(k, k - 1)], h[(k + 1, k - 1)], k);
            g.apply_rows(h, k - 1);
            h[(k + 1, k - 1)] = Complex::new(0.0, 0.0);
            g.apply_cols(h, (k + 3).min(n));
            g.apply_cols(q, n);
        }
    }
}

fn deflation_threshold(h: &CMatrix, i: usize, norm_h: f64) -> f64 {
    let local = h[(i, i)].norm() + h[(i + 1, i + 1)].norm();
    if local > 0.0 {
        f64::EPSILON * local
    } else {
        f64::EPSILON * norm_h
    }
}

fn wilkinson_shift(h: &CMatrix, hi: usize) -> Complex<f64> {
    let a = h[(hi - 1, hi - 1)];
    let b = h[(hi - 1, hi)];
    let c = h[(hi, hi - 1)];
    let d = h[(hi, hi)];
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr - det * 4.0).sqrt();
    let l1 = (tr + disc) * 0.5;
    let l2 = (tr - disc) * 0.5;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Null vector of `t - lambda_j I` by back substitution on the triangle.
fn right_null_vector(t: &CMatrix, j: usize, tiny: f64) -> CVector {
    let n = t.nrows();
    let lambda = t[(j, j)];
    let mut z = CVector::zeros(n);
    z[j] = Complex::new(1.0, 0.0);
    for i in (0..j).rev() {
        let mut s = Complex::new(0.0, 0.0);
        for k in i + 1..=j {
            s += t[(i, k)] * z[k];
        }
        let mut den = t[(i, i)] - lambda;
        if den.norm() < tiny {
            den = Complex::new(tiny, 0.0);
        }
        z[i] = -s / den;
    }
    z
}

/// Row null vector `u (t - lambda_j I) = 0`, returned conjugated as a column
/// so that `q * result` is the left eigenvector.
fn left_null_vector(t: &CMatrix, j: usize, tiny: f64) -> CVector {
    let n = t.nrows();
    let lambda = t[(j, j)];
    let mut u = CVector::zeros(n);
    u[j] = Complex::new(1.0, 0.0);
    for k in j + 1..n {
        let mut s = Complex::new(0.0, 0.0);
        for i in j..k {
            s += u[i] * t[(i, k)];
        }
        let mut den = t[(k, k)] - lambda;
        if den.norm() < tiny {
            den = Complex::new(tiny, 0.0);
        }
        u[k] = -s / den;
    }
    u.map(|v| v.conj())
}

fn normalize_phase(v: CVector) -> CVector {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let mut imax = 0;
    let mut vmax = 0.0;
    for (i, c) in v.iter().enumerate() {
        if c.norm() > vmax {
            vmax = c.norm();
            imax = i;
        }
    }
    let phase = v[imax] / v[imax].norm();
    v.map(|c| c / (phase * norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_complex(rng: &mut impl Rng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn mat_norm(a: &CMatrix) -> f64 {
        a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check_schur(a: &CMatrix) {
        let n = a.nrows();
        let s = complex_schur(a).unwrap();
        // T strictly upper triangular below the diagonal.
        for i in 0..n {
            for j in 0..i {
                assert!(s.t[(i, j)].norm() <= 1e-10 * mat_norm(a).max(1.0), "t not triangular");
            }
        }
        // Q unitary.
        let qhq = s.q.adjoint() * &s.q;
        assert!(mat_norm(&(&qhq - CMatrix::identity(n, n))) < 1e-12 * n as f64);
        // Reconstruction.
        let rebuilt = &s.q * &s.t * s.q.adjoint();
        assert!(mat_norm(&(&rebuilt - a)) <= 1e-11 * mat_norm(a).max(1.0));
    }

    #[test]
    fn schur_on_random_complex_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for n in [1usize, 2, 3, 5, 8, 13, 20] {
            check_schur(&random_complex(&mut rng, n));
        }
    }

    #[test]
    fn schur_on_real_and_structured_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        for n in [2usize, 4, 7, 12] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
            check_schur(&to_complex(&a));
        }
        // Already triangular, diagonal, and defective-ish inputs.
        check_schur(&to_complex(&DMatrix::from_row_slice(3, 3, &[1., 2., 3., 0., 4., 5., 0., 0., 6.])));
        check_schur(&to_complex(&DMatrix::identity(5, 5)));
        check_schur(&to_complex(&DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.])));
        // Rotation-like: eigenvalues on the unit circle.
        check_schur(&to_complex(&DMatrix::from_row_slice(2, 2, &[0., -1., 1., 0.])));
    }

    #[test]
    fn eigenpairs_satisfy_definitions() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for n in [2usize, 3, 6, 10, 16] {
            let a = random_complex(&mut rng, n);
            let e = complex_eigen(&a).unwrap();
            let scale = mat_norm(&a).max(1.0);
            for j in 0..n {
                let r = &a * &e.right[j] - &e.right[j] * e.values[j];
                assert!(r.norm() <= 1e-9 * scale, "right residual {} at n={n}", r.norm());
                let l = e.left[j].adjoint() * &a - e.left[j].adjoint() * e.values[j];
                assert!(l.norm() <= 1e-9 * scale, "left residual {} at n={n}", l.norm());
            }
        }
    }

    #[test]
    fn real_matrix_eigenvalues_come_in_conjugate_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let a = DMatrix::from_fn(9, 9, |_, _| rng.gen_range(-1.0..1.0f64));
        let e = real_eigen(&a).unwrap();
        let mut values = e.values.clone();
        // Pair each eigenvalue with its conjugate.
        while let Some(l) = values.pop() {
            if l.im.abs() < 1e-9 {
                continue;
            }
            let idx = values
                .iter()
                .position(|m| (m - l.conj()).norm() < 1e-8)
                .expect("conjugate partner exists");
            values.remove(idx);
        }
    }

    #[test]
    fn eigenvalues_of_diagonal_are_exact() {
        let d = to_complex(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 0.5])));
        let e = complex_eigen(&d).unwrap();
        let mut got: Vec<f64> = e.values.iter().map(|v| v.re).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![-1.0, 0.5, 3.0]);
    }
}
