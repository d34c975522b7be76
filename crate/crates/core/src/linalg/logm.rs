//! Principal matrix logarithm by inverse scaling and squaring: Schur
//! triangularization, repeated triangular square roots until the spectrum
//! sits near 1, then a diagonal Padé approximant of log(I + X) in
//! partial-fraction form.

use super::schur::{complex_schur, to_complex};
use super::LinalgError;
use nalgebra::{Complex, DMatrix};

type CMatrix = DMatrix<Complex<f64>>;

/// Cap on square-root stages; reached only for spectra spread over hundreds
/// of orders of magnitude.
pub const MAX_SQRT_STAGES: usize = 100;

// Padé degree 7 applies once ||T - I|| is below this.
const PADE_THRESHOLD: f64 = 0.25;

// 7-point Gauss-Legendre nodes and weights on [0, 1]; log(I+X) is
// approximated by sum_j w_j X (I + x_j X)^{-1}.
// The digits are copied verbatim from the published tables.
#[allow(clippy::excessive_precision)]
const GL_NODES: [f64; 7] = [
    0.025446043828620738,
    0.12923440720030278,
    0.29707742431130142,
    0.5,
    0.70292257568869858,
    0.87076559279969722,
    0.97455395617137926,
];
#[allow(clippy::excessive_precision)]
const GL_WEIGHTS: [f64; 7] = [
    0.064742483084434847,
    0.13985269574463833,
    0.19091502525255947,
    0.20897959183673469,
    0.19091502525255947,
    0.13985269574463833,
    0.064742483084434847,
];

/// Principal logarithm of a real square matrix with no eigenvalue on the
/// closed negative real axis. The result is real for such inputs.
pub fn matrix_log(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let schur = complex_schur(&to_complex(a))?;
    let mut t = schur.t;
    let q = schur.q;

    let t_scale = (0..n)
        .map(|j| t.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for i in 0..n {
        let lambda = t[(i, i)];
        let on_axis = lambda.re <= 0.0 && lambda.im.abs() <= 100.0 * f64::EPSILON * t_scale;
        if lambda.norm() <= 100.0 * f64::EPSILON * t_scale || on_axis {
            return Err(LinalgError::LogDomain { re: lambda.re, im: lambda.im });
        }
    }

    let mut stages = 0usize;
    while offdiag_distance_from_identity(&t) > PADE_THRESHOLD {
        if stages >= MAX_SQRT_STAGES {
            return Err(LinalgError::DecompositionFailed("square-root stages exhausted in matrix log"));
        }
        t = triangular_sqrt(&t);
        stages += 1;
    }

    let x = &t - CMatrix::identity(n, n);
    let mut l = CMatrix::zeros(n, n);
    for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        let lhs = CMatrix::identity(n, n) + &x * Complex::new(*node, 0.0);
        let solved = lhs
            .lu()
            .solve(&x)
            .ok_or(LinalgError::DecompositionFailed("Padé denominator singular in matrix log"))?;
        l += solved * Complex::new(*weight, 0.0);
    }
    l *= Complex::new(2f64.powi(stages as i32), 0.0);

    let full = &q * l * q.adjoint();
    let re_norm: f64 = full.iter().map(|v| v.re * v.re).sum::<f64>().sqrt();
    let im_norm: f64 = full.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
    if im_norm > 1e-8 * re_norm.max(1.0) {
        return Err(LinalgError::DecompositionFailed("matrix log of a real matrix has a complex residue"));
    }
    Ok(full.map(|v| v.re))
}

fn offdiag_distance_from_identity(t: &CMatrix) -> f64 {
    let n = t.nrows();
    (0..n)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let v = t[(i, j)];
                    if i == j {
                        (v - Complex::new(1.0, 0.0)).norm()
                    } else {
                        v.norm()
                    }
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Principal square root of an upper-triangular matrix by the standard
/// recurrence on superdiagonals.
fn triangular_sqrt(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let mut r = CMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = t[(i, i)].sqrt();
    }
    for d in 1..n {
        for i in 0..n - d {
            let j = i + d;
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}
