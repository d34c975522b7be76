//! Tangent-space charts on three matrix sets: the full linear space, the
//! group of nonsingular matrices, and the SPD cone. A chart anchored at a
//! reference point maps nearby matrices to a flat tangent representation
//! (where entrywise interpolation is safe) and back, preserving membership
//! in the set on the way back.

use crate::linalg::{self, LinalgError, LuFactors};
use nalgebra::DMatrix;
use thiserror::Error;

/// Relative eigenvalue floor applied when factoring an SPD reference.
pub const SPD_CLAMP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix is {got_rows}x{got_cols}, chart dimension is {n}")]
    ShapeMismatch { n: usize, got_rows: usize, got_cols: usize },
    #[error("reference matrix is not positive definite (eigenvalue {0:.3e})")]
    ReferenceNotSpd(f64),
    #[error("mapped point is not positive definite (eigenvalue {0:.3e})")]
    PointNotSpd(f64),
    #[error("reference matrix is singular")]
    ReferenceSingular,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The matrix set a chart lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ManifoldKind {
    /// All real matrices; the chart is a plain translation.
    #[default]
    Real,
    /// Invertible matrices.
    Nonsingular,
    /// Symmetric positive definite matrices.
    Spd,
}

impl ManifoldKind {
    /// Membership test, used to assert that mapped-back points stay on the set.
    pub fn contains(&self, m: &DMatrix<f64>) -> bool {
        if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            ManifoldKind::Real => true,
            ManifoldKind::Nonsingular => LuFactors::new(m).is_ok(),
            ManifoldKind::Spd => {
                let asym = (m - m.transpose()).norm();
                asym <= 1e-8 * m.norm().max(1.0) && linalg::is_spd(m)
            }
        }
    }
}

/// Chart anchored at one reference matrix. Construction factors the
/// reference once; `log`, `exp`, and `exp_derivative` then reuse it.
#[derive(Debug, Clone)]
pub struct Chart {
    kind: ManifoldKind,
    x_ref: DMatrix<f64>,
    /// SPD only: `X^{1/2}` and `X^{-1/2}`.
    sqrt_pair: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Chart {
    pub fn new(kind: ManifoldKind, x_ref: DMatrix<f64>) -> Result<Self, ManifoldError> {
        if !x_ref.is_square() {
            return Err(ManifoldError::NotSquare(x_ref.nrows(), x_ref.ncols()));
        }
        let sqrt_pair = match kind {
            ManifoldKind::Real => None,
            ManifoldKind::Nonsingular => {
                if LuFactors::new(&x_ref).is_err() {
                    return Err(ManifoldError::ReferenceSingular);
                }
                None
            }
            ManifoldKind::Spd => Some(spd_sqrt_pair(&x_ref)?),
        };
        Ok(Self { kind, x_ref, sqrt_pair })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn reference(&self) -> &DMatrix<f64> {
        &self.x_ref
    }

    pub fn n(&self) -> usize {
        self.x_ref.nrows()
    }

    fn check_shape(&self, m: &DMatrix<f64>) -> Result<(), ManifoldError> {
        if m.nrows() != self.n() || m.ncols() != self.n() {
            return Err(ManifoldError::ShapeMismatch {
                n: self.n(),
                got_rows: m.nrows(),
                got_cols: m.ncols(),
            });
        }
        Ok(())
    }

    /// Tangent representation of `y`:
    /// Real `Y - X`; nonsingular `log(Y X^{-1})`; SPD `log(X^{-1/2} Y X^{-1/2})`.
    pub fn log(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>, ManifoldError> {
        self.check_shape(y)?;
        match self.kind {
            ManifoldKind::Real => Ok(y - &self.x_ref),
            ManifoldKind::Nonsingular => {
                // Y X^{-1} as (X^{-T} Y^T)^T.
                let lu = LuFactors::new(&self.x_ref.transpose())
                    .map_err(|_| ManifoldError::ReferenceSingular)?;
                let z = lu.solve_matrix(&y.transpose()).transpose();
                Ok(linalg::matrix_log(&z)?)
            }
            ManifoldKind::Spd => {
                let (_, inv_sqrt) = self.sqrt_pair.as_ref().expect("SPD chart has factors");
                let inner = linalg::symmetrize(&(inv_sqrt * linalg::symmetrize(y) * inv_sqrt));
                let eig = linalg::sym_eig(&inner)?;
                if let Some(&l) = eig.values.iter().find(|&&l| l <= 0.0) {
                    return Err(ManifoldError::PointNotSpd(l));
                }
                let logs: Vec<f64> = eig.values.iter().map(|l| l.ln()).collect();
                Ok(linalg::scaled_congruence(&eig.vectors, &logs))
            }
        }
    }

    /// Maps a tangent representation back onto the set:
    /// Real `X + G`; nonsingular `exp(G) X`; SPD `X^{1/2} exp(G) X^{1/2}`.
    pub fn exp(&self, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>, ManifoldError> {
        self.check_shape(gamma)?;
        match self.kind {
            ManifoldKind::Real => Ok(&self.x_ref + gamma),
            ManifoldKind::Nonsingular => Ok(linalg::matrix_exp(gamma) * &self.x_ref),
            ManifoldKind::Spd => {
                let (sqrt, _) = self.sqrt_pair.as_ref().expect("SPD chart has factors");
                let e = sym_exp(gamma)?;
                Ok(linalg::symmetrize(&(sqrt * e * sqrt)))
            }
        }
    }

    /// Derivative of the mapped-back point along a tangent perturbation:
    /// with `G(t) = gamma + t dgamma`, returns `d/dt exp-map(G(t))` at `t = 0`.
    pub fn exp_derivative(
        &self,
        gamma: &DMatrix<f64>,
        dgamma: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>, ManifoldError> {
        self.check_shape(gamma)?;
        self.check_shape(dgamma)?;
        match self.kind {
            ManifoldKind::Real => Ok(dgamma.clone()),
            ManifoldKind::Nonsingular => {
                let (_, dexp) = matrix_exp_derivative(gamma, dgamma);
                Ok(dexp * &self.x_ref)
            }
            ManifoldKind::Spd => {
                let (sqrt, _) = self.sqrt_pair.as_ref().expect("SPD chart has factors");
                let (_, dexp) = matrix_exp_derivative(gamma, dgamma);
                Ok(sqrt * dexp * sqrt)
            }
        }
    }
}

/// `exp(gamma)` and its directional derivative along `dgamma`, read off the
/// exponential of the block matrix `[[gamma, dgamma], [0, gamma]]`: the
/// diagonal blocks are `exp(gamma)` and the off-diagonal block is the
/// derivative.
pub fn matrix_exp_derivative(
    gamma: &DMatrix<f64>,
    dgamma: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = gamma.nrows();
    let mut block = DMatrix::zeros(2 * k, 2 * k);
    block.view_mut((0, 0), (k, k)).copy_from(gamma);
    block.view_mut((0, k), (k, k)).copy_from(dgamma);
    block.view_mut((k, k), (k, k)).copy_from(gamma);
    let e = linalg::matrix_exp(&block);
    (
        e.view((0, 0), (k, k)).clone_owned(),
        e.view((0, k), (k, k)).clone_owned(),
    )
}

/// Exponential of a symmetric matrix through its eigendecomposition, so the
/// result is symmetric to round-off.
fn sym_exp(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let eig = linalg::sym_eig(&linalg::symmetrize(gamma))?;
    let exps: Vec<f64> = eig.values.iter().map(|l| l.exp()).collect();
    Ok(linalg::scaled_congruence(&eig.vectors, &exps))
}

fn spd_sqrt_pair(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), ManifoldError> {
    let eig = linalg::sym_eig(&linalg::symmetrize(x))?;
    let max = eig.values[eig.values.len() - 1];
    if max <= 0.0 || max.is_nan() {
        return Err(ManifoldError::ReferenceNotSpd(max));
    }
    let min = eig.values[0];
    if min < -1e-10 * max {
        return Err(ManifoldError::ReferenceNotSpd(min));
    }
    let floor = SPD_CLAMP * max;
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
    if clamped {
        log::warn!("SPD chart reference has near-zero eigenvalues; clamped at {floor:.3e}");
    }
    let inv_roots: Vec<f64> = roots.iter().map(|r| 1.0 / r).collect();
    Ok((
        linalg::scaled_congruence(&eig.vectors, &roots),
        linalg::scaled_congruence(&eig.vectors, &inv_roots),
    ))
}
