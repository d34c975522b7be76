//! Projection-based model reduction: orthogonal snapshot compression and
//! Petrov-Galerkin reduced operators `W^T A V`, `W^T b`.

use crate::linalg::{self, LinalgError, LuFactors};
use crate::model::{AffineParametricSystem, ModelError, QuantityOfInterest};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Singular values this far below the largest one mark the numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("no snapshots provided")]
    EmptySnapshots,
    #[error("snapshot {index} has length {got}, expected {expected}")]
    SnapshotLength { index: usize, expected: usize, got: usize },
    #[error("requested rank {k} exceeds the {max} available directions")]
    RankTooLarge { k: usize, max: usize },
    #[error("snapshots are rank deficient at k = {k}: sigma_k/sigma_max = {ratio:.3e}")]
    RankDeficient { k: usize, ratio: f64 },
    #[error("inner-product weight is not positive definite")]
    WeightNotSpd,
    #[error("basis has {got} rows, expected {expected}")]
    BasisRows { expected: usize, got: usize },
    #[error("test and trial bases disagree in column count: {test} vs {trial}")]
    BasisColumns { test: usize, trial: usize },
    #[error("reduced operator is singular at this parameter (condition estimate {cond:.3e})")]
    SingularReducedSystem { cond: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Orthogonal compression of a snapshot set.
#[derive(Debug, Clone)]
pub struct Pod {
    /// Basis, one column per retained direction. Orthonormal in the chosen
    /// inner product: `V^T V = I`, or `V^T M V = I` when a weight was given.
    pub basis: DMatrix<f64>,
    /// All singular values of the (weighted) snapshot matrix, descending.
    pub singular_values: DVector<f64>,
}

/// Compresses `snapshots` to the `k` dominant directions. With `weight`
/// (an SPD matrix `M`), directions are principal in the `M` inner product
/// and the basis satisfies `V^T M V = I`. Each basis column has its
/// largest-magnitude entry positive, so the output is deterministic.
pub fn pod_basis(
    snapshots: &[DVector<f64>],
    k: usize,
    weight: Option<&DMatrix<f64>>,
) -> Result<Pod, ReductionError> {
    let n_w = snapshots.first().ok_or(ReductionError::EmptySnapshots)?.len();
    for (index, s) in snapshots.iter().enumerate() {
        if s.len() != n_w {
            return Err(ReductionError::SnapshotLength { index, expected: n_w, got: s.len() });
        }
    }
    let max = n_w.min(snapshots.len());
    if k == 0 || k > max {
        return Err(ReductionError::RankTooLarge { k, max });
    }
    let mut s = DMatrix::zeros(n_w, snapshots.len());
    for (j, snap) in snapshots.iter().enumerate() {
        s.set_column(j, snap);
    }

    let inv_sqrt = match weight {
        Some(m) => {
            if !linalg::is_spd(m) {
                return Err(ReductionError::WeightNotSpd);
            }
            let (sqrt, clamped) = linalg::spd_sqrt_clamped(m, 0.0)?;
            if clamped {
                return Err(ReductionError::WeightNotSpd);
            }
            let (inv_sqrt, _) = linalg::spd_inv_sqrt_clamped(m, 0.0)?;
            s = sqrt * s;
            Some(inv_sqrt)
        }
        None => None,
    };

    let svd = linalg::thin_svd(&s)?;
    let sigma_max = svd.singular_values[0];
    let ratio = svd.singular_values[k - 1] / sigma_max;
    if ratio <= RANK_TOLERANCE || ratio.is_nan() {
        return Err(ReductionError::RankDeficient { k, ratio });
    }
    let mut basis = svd.u.columns(0, k).clone_owned();
    if let Some(inv_sqrt) = inv_sqrt {
        basis = inv_sqrt * basis;
        orient_columns(&mut basis);
    }
    Ok(Pod { basis, singular_values: svd.singular_values })
}

/// Smallest rank whose leading singular values capture `fraction` of the
/// total snapshot energy (sum of squared singular values).
pub fn rank_for_energy(singular_values: &DVector<f64>, fraction: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    singular_values.len()
}

fn orient_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut imax = 0;
        let mut vmax = 0.0;
        for (i, v) in m.column(j).iter().enumerate() {
            if v.abs() > vmax {
                vmax = v.abs();
                imax = i;
            }
        }
        if m[(imax, j)] < 0.0 {
            let mut col = m.column_mut(j);
            col.neg_mut();
        }
    }
}

/// Reduced counterpart of an affine-parametric system: every operator block
/// is projected once offline, so assembling at a parameter point costs only
/// `k x k` work. Solves here never touch the full-order counter.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    operators: AffineParametricSystem,
    trial_basis: DMatrix<f64>,
    test_basis: DMatrix<f64>,
}

impl ReducedSystem {
    /// Galerkin projection (`W = V`).
    pub fn galerkin(sys: &AffineParametricSystem, basis: &DMatrix<f64>) -> Result<Self, ReductionError> {
        Self::petrov_galerkin(sys, basis, basis)
    }

    /// Petrov-Galerkin projection with distinct test and trial bases.
    pub fn petrov_galerkin(
        sys: &AffineParametricSystem,
        test_basis: &DMatrix<f64>,
        trial_basis: &DMatrix<f64>,
    ) -> Result<Self, ReductionError> {
        if test_basis.nrows() != sys.n_w() {
            return Err(ReductionError::BasisRows { expected: sys.n_w(), got: test_basis.nrows() });
        }
        if trial_basis.nrows() != sys.n_w() {
            return Err(ReductionError::BasisRows { expected: sys.n_w(), got: trial_basis.nrows() });
        }
        if test_basis.ncols() != trial_basis.ncols() {
            return Err(ReductionError::BasisColumns {
                test: test_basis.ncols(),
                trial: trial_basis.ncols(),
            });
        }
        let wt = test_basis.transpose();
        let project_m = |m: &DMatrix<f64>| &wt * m * trial_basis;
        let project_v = |v: &DVector<f64>| &wt * v;
        let operators = AffineParametricSystem::new(
            sys.bounds().clone(),
            project_m(sys.base_matrix()),
            sys.matrix_terms().iter().map(|(p, m)| (p.clone(), project_m(m))).collect(),
            project_v(sys.base_rhs()),
            sys.rhs_terms().iter().map(|(p, v)| (p.clone(), project_v(v))).collect(),
        )?;
        Ok(Self {
            operators,
            trial_basis: trial_basis.clone(),
            test_basis: test_basis.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.trial_basis.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.trial_basis.nrows()
    }

    /// The projected operators as an affine system over the reduced state.
    pub fn operators(&self) -> &AffineParametricSystem {
        &self.operators
    }

    pub fn trial_basis(&self) -> &DMatrix<f64> {
        &self.trial_basis
    }

    pub fn test_basis(&self) -> &DMatrix<f64> {
        &self.test_basis
    }

    /// Reduced operator and right-hand side at a parameter point.
    pub fn assemble(&self, mu: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>), ReductionError> {
        Ok(self.operators.assemble(mu)?)
    }

    /// Solves the reduced system. Cheap, and deliberately uncounted.
    pub fn solve(&self, mu: &DVector<f64>) -> Result<ReducedSolution, ReductionError> {
        let (a_r, b_r) = self.operators.assemble(mu)?;
        let factors = match LuFactors::new(&a_r) {
            Ok(f) => f,
            Err(LinalgError::Singular { cond }) => {
                return Err(ReductionError::SingularReducedSystem { cond })
            }
            Err(e) => return Err(e.into()),
        };
        let w_r = factors.solve(&b_r);
        Ok(ReducedSolution { w_r, factors })
    }

    /// Reconstructs the full-order approximation `V w_r`.
    pub fn lift(&self, w_r: &DVector<f64>) -> DVector<f64> {
        &self.trial_basis * w_r
    }

    /// Value and gradient of a quantity evaluated on the reduced state, by
    /// the direct route on the projected operators:
    /// `dq/dmu_i = dq/dmu_i + (dq/dw_r)^T A_r^{-1} (db_r/dmu_i - (dA_r/dmu_i) w_r)`.
    pub fn qoi_gradient(
        &self,
        q: &QuantityOfInterest,
        mu: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>), ReductionError> {
        let sol = self.solve(mu)?;
        let value = q.eval(&sol.w_r, mu);
        let dq_dwr = q.partial_state(&sol.w_r, mu);
        let mut grad = q.partial_mu(&sol.w_r, mu);
        for i in 0..mu.len() {
            let rhs = self.operators.rhs_derivative(mu, i)
                - self.operators.matrix_derivative(mu, i) * &sol.w_r;
            grad[i] += dq_dwr.dot(&sol.factors.solve(&rhs));
        }
        Ok((value, grad))
    }
}

/// Reduced solution with its factorization retained for sensitivity reuse.
pub struct ReducedSolution {
    pub w_r: DVector<f64>,
    factors: LuFactors,
}
