//! Parameter-space interpolation of reduced operators: a multiquadric
//! interpolant over normalized parameters, orthogonal basis alignment, and
//! the combination of both with tangent-space charts so interpolated
//! operators stay on their matrix set.

use crate::linalg::{LinalgError, LuFactors};
use crate::manifold::{Chart, ManifoldError, ManifoldKind};
use crate::model::{ModelError, ParamBounds};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Condition level above which an interpolation system is rejected.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Orthogonality tolerance for rotation matrices fed to [`rotate_rom`].
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("no interpolation points provided")]
    NoPoints,
    #[error("point {index} has {got} coordinates, expected {expected}")]
    PointLength { index: usize, expected: usize, got: usize },
    #[error("query point has {got} coordinates, expected {expected}")]
    QueryLength { expected: usize, got: usize },
    #[error("points {i} and {j} coincide in normalized coordinates")]
    DuplicatePoints { i: usize, j: usize },
    #[error("interpolation system is ill-conditioned (estimate {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("rotation deviates from orthogonality by {dev:.3e}")]
    NotOrthogonal { dev: f64 },
    #[error("expected {expected} {what}, got {got}")]
    CountMismatch { what: &'static str, expected: usize, got: usize },
    #[error("operator {index} has shape {got_rows}x{got_cols}, expected {k}x{k}")]
    OperatorShape { index: usize, k: usize, got_rows: usize, got_cols: usize },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Default kernel width in normalized coordinates: a tenth of the diagonal
/// of the normalized parameter cube.
pub fn default_shape(n_mu: usize) -> f64 {
    0.02 * (n_mu as f64).sqrt()
}

/// Multiquadric interpolant settings.
#[derive(Debug, Clone)]
pub struct RbfConfig {
    /// Kernel width in normalized coordinates; `None` selects
    /// [`default_shape`].
    pub shape: Option<f64>,
    /// Append a linear polynomial tail when enough points support one.
    /// With `n_points <= n_mu + 1` the tail degrades to a constant, which
    /// keeps a single-point fit well-posed (it becomes the constant
    /// interpolant).
    pub linear_tail: bool,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self { shape: None, linear_tail: true }
    }
}

/// Multiquadric kernel interpolant `phi(r) = sqrt(r^2 + shape^2)` over
/// normalized parameters, augmented with a polynomial tail. The factored
/// saddle system is data independent: evaluation produces cardinal weights
/// `l_j(mu)` with `sum_j l_j(mu) f(mu_j)` interpolating any dataset, so one
/// fit serves every operator entry.
#[derive(Debug)]
pub struct RbfInterpolant {
    bounds: ParamBounds,
    points: Vec<DVector<f64>>,
    shape: f64,
    tail: usize,
    factors: LuFactors,
}

impl RbfInterpolant {
    pub fn fit(
        bounds: &ParamBounds,
        points: &[DVector<f64>],
        config: &RbfConfig,
    ) -> Result<Self, InterpError> {
        if points.is_empty() {
            return Err(InterpError::NoPoints);
        }
        let n_mu = bounds.n_mu();
        for (index, p) in points.iter().enumerate() {
            if p.len() != n_mu {
                return Err(InterpError::PointLength { index, expected: n_mu, got: p.len() });
            }
            bounds.validate(p)?;
        }
        let z: Vec<DVector<f64>> = points.iter().map(|p| bounds.normalize(p)).collect();
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                if (&z[i] - &z[j]).norm() < 1e-12 {
                    return Err(InterpError::DuplicatePoints { i, j });
                }
            }
        }
        let shape = config.shape.unwrap_or_else(|| default_shape(n_mu));
        let n_p = z.len();
        // A linear tail needs unisolvent centers: the Vandermonde block
        // [1 z] must have full column rank or the saddle system is
        // singular (centers sharing an axis level are a common case).
        let tail = if config.linear_tail && n_p >= n_mu + 2 && unisolvent(&z) {
            1 + n_mu
        } else {
            1
        };
        let m = n_p + tail;
        let mut mat = DMatrix::zeros(m, m);
        for i in 0..n_p {
            for j in 0..n_p {
                mat[(i, j)] = kernel(&z[i], &z[j], shape);
            }
            mat[(i, n_p)] = 1.0;
            mat[(n_p, i)] = 1.0;
            for a in 0..tail.saturating_sub(1) {
                mat[(i, n_p + 1 + a)] = z[i][a];
                mat[(n_p + 1 + a, i)] = z[i][a];
            }
        }
        let factors = match LuFactors::new(&mat) {
            Ok(f) => f,
            Err(LinalgError::Singular { .. }) => {
                return Err(InterpError::IllConditioned { cond: f64::INFINITY })
            }
            Err(e) => return Err(e.into()),
        };
        let cond = factors.cond_estimate();
        if !cond.is_finite() || cond > CONDITION_LIMIT {
            return Err(InterpError::IllConditioned { cond });
        }
        Ok(Self { bounds: bounds.clone(), points: z, shape, tail, factors })
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Cardinal weights at a raw parameter point.
    pub fn weights(&self, mu: &DVector<f64>) -> Result<DVector<f64>, InterpError> {
        let z = self.query_point(mu)?;
        let sol = self.factors.solve(&self.query_rhs(&z));
        Ok(sol.rows(0, self.points.len()).clone_owned())
    }

    /// Cardinal weights and their jacobian with respect to the raw
    /// parameters (`jacobian[(j, i)] = d l_j / d mu_i`).
    pub fn weights_with_jacobian(&self, mu: &DVector<f64>) -> Result<RbfWeights, InterpError> {
        let z = self.query_point(mu)?;
        let n_p = self.points.len();
        let n_mu = self.bounds.n_mu();
        let m = n_p + self.tail;
        let sol = self.factors.solve(&self.query_rhs(&z));

        // One solve per axis for the weight derivatives, in normalized
        // coordinates, then the chain rule back to raw parameters.
        let mut drhs = DMatrix::zeros(m, n_mu);
        for (j, p) in self.points.iter().enumerate() {
            let phi = kernel(p, &z, self.shape);
            for i in 0..n_mu {
                drhs[(j, i)] = (z[i] - p[i]) / phi;
            }
        }
        for a in 0..self.tail.saturating_sub(1) {
            drhs[(n_p + 1 + a, a)] = 1.0;
        }
        let dsol = self.factors.solve_matrix(&drhs);
        let scale = self.bounds.normalization_scale();
        let mut jacobian = DMatrix::zeros(n_p, n_mu);
        for i in 0..n_mu {
            for j in 0..n_p {
                jacobian[(j, i)] = dsol[(j, i)] * scale[i];
            }
        }
        Ok(RbfWeights { values: sol.rows(0, n_p).clone_owned(), jacobian })
    }

    /// Interpolates scalar data pinned at the fit points.
    pub fn eval_scalar(&self, values: &[f64], mu: &DVector<f64>) -> Result<f64, InterpError> {
        if values.len() != self.points.len() {
            return Err(InterpError::CountMismatch {
                what: "data values",
                expected: self.points.len(),
                got: values.len(),
            });
        }
        let w = self.weights(mu)?;
        Ok(w.iter().zip(values).map(|(l, f)| l * f).sum())
    }

    fn query_point(&self, mu: &DVector<f64>) -> Result<DVector<f64>, InterpError> {
        // Queries may leave the box: the kernel and tail extend smoothly,
        // so extrapolation is the caller's policy decision, not an error.
        if mu.len() != self.bounds.n_mu() {
            return Err(InterpError::QueryLength { expected: self.bounds.n_mu(), got: mu.len() });
        }
        Ok(self.bounds.normalize(mu))
    }

    fn query_rhs(&self, z: &DVector<f64>) -> DVector<f64> {
        let n_p = self.points.len();
        let mut rhs = DVector::zeros(n_p + self.tail);
        for (j, p) in self.points.iter().enumerate() {
            rhs[j] = kernel(p, z, self.shape);
        }
        rhs[n_p] = 1.0;
        for a in 0..self.tail.saturating_sub(1) {
            rhs[n_p + 1 + a] = z[a];
        }
        rhs
    }
}

/// Cardinal weights with their raw-parameter jacobian.
#[derive(Debug, Clone)]
pub struct RbfWeights {
    pub values: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

fn kernel(a: &DVector<f64>, b: &DVector<f64>, shape: f64) -> f64 {
    ((a - b).norm_squared() + shape * shape).sqrt()
}

/// Whether the normalized centers determine a unique linear polynomial:
/// the block [1 z] has full column rank well above roundoff.
fn unisolvent(z: &[DVector<f64>]) -> bool {
    let n_mu = z[0].len();
    let mut p = DMatrix::zeros(z.len(), 1 + n_mu);
    for (i, zi) in z.iter().enumerate() {
        p[(i, 0)] = 1.0;
        for a in 0..n_mu {
            p[(i, 1 + a)] = zi[a];
        }
    }
    match crate::linalg::thin_svd(&p) {
        Ok(svd) => {
            let s = &svd.singular_values;
            s.len() == 1 + n_mu && s[s.len() - 1] > 1e-10 * s[0]
        }
        Err(_) => false,
    }
}

/// Orthogonal matrix `Q` minimizing `|| V Q - V_ref ||_F`, from the SVD
/// `V^T V_ref = U S Z^T` as `Q = U Z^T`.
pub fn procrustes_align(v: &DMatrix<f64>, v_ref: &DMatrix<f64>) -> Result<DMatrix<f64>, InterpError> {
    if v.shape() != v_ref.shape() {
        return Err(InterpError::OperatorShape {
            index: 0,
            k: v_ref.ncols(),
            got_rows: v.nrows(),
            got_cols: v.ncols(),
        });
    }
    let svd = crate::linalg::thin_svd(&(v.transpose() * v_ref))?;
    Ok(&svd.u * &svd.vt)
}

/// Expresses reduced operators in a rotated reduced coordinate system:
/// `(Q^T A Q, Q^T b)`. `Q` must be orthogonal to [`ORTHOGONALITY_TOL`].
pub fn rotate_rom(
    a_r: &DMatrix<f64>,
    b_r: &DVector<f64>,
    q: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), InterpError> {
    let k = q.nrows();
    let dev = (q.transpose() * q - DMatrix::identity(k, k)).norm();
    if dev > ORTHOGONALITY_TOL {
        return Err(InterpError::NotOrthogonal { dev });
    }
    Ok((q.transpose() * a_r * q, q.transpose() * b_r))
}

/// Interpolated operators with parameter sensitivities.
#[derive(Debug, Clone)]
pub struct InterpolatedOperators {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub matrix_derivs: Vec<DMatrix<f64>>,
    pub rhs_derivs: Vec<DVector<f64>>,
}

/// Interpolates a family of reduced operators `(A_i, b_i)` sampled at
/// parameter points. Bases, when given, are first aligned to the family's
/// first entry by orthogonal rotation (removing the arbitrary coordinate
/// choice each basis makes); matrices then travel through a tangent chart
/// anchored at the first aligned matrix, so interpolants inherit
/// nonsingularity or positive definiteness from the chart; right-hand
/// sides interpolate entrywise.
#[derive(Debug)]
pub struct OperatorInterpolator {
    kind: ManifoldKind,
    chart: Chart,
    rbf: RbfInterpolant,
    gammas: Vec<DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
    rotations: Vec<DMatrix<f64>>,
    aligned_bases: Option<Vec<DMatrix<f64>>>,
    k: usize,
}

impl OperatorInterpolator {
    pub fn build(
        bounds: &ParamBounds,
        kind: ManifoldKind,
        points: &[DVector<f64>],
        matrices: &[DMatrix<f64>],
        rhs: &[DVector<f64>],
        bases: Option<&[DMatrix<f64>]>,
        config: &RbfConfig,
    ) -> Result<Self, InterpError> {
        if matrices.len() != points.len() {
            return Err(InterpError::CountMismatch {
                what: "matrices",
                expected: points.len(),
                got: matrices.len(),
            });
        }
        if rhs.len() != points.len() {
            return Err(InterpError::CountMismatch {
                what: "right-hand sides",
                expected: points.len(),
                got: rhs.len(),
            });
        }
        if let Some(b) = bases {
            if b.len() != points.len() {
                return Err(InterpError::CountMismatch {
                    what: "bases",
                    expected: points.len(),
                    got: b.len(),
                });
            }
        }
        let first = matrices.first().ok_or(InterpError::NoPoints)?;
        let k = first.nrows();
        for (index, m) in matrices.iter().enumerate() {
            if m.nrows() != k || m.ncols() != k {
                return Err(InterpError::OperatorShape {
                    index,
                    k,
                    got_rows: m.nrows(),
                    got_cols: m.ncols(),
                });
            }
        }

        let rbf = RbfInterpolant::fit(bounds, points, config)?;

        let rotations: Vec<DMatrix<f64>> = match bases {
            Some(bases) => {
                let v_ref = &bases[0];
                bases
                    .iter()
                    .map(|v| procrustes_align(v, v_ref))
                    .collect::<Result<_, _>>()?
            }
            None => (0..points.len()).map(|_| DMatrix::identity(k, k)).collect(),
        };
        let mut aligned_m = Vec::with_capacity(points.len());
        let mut aligned_b = Vec::with_capacity(points.len());
        for i in 0..points.len() {
            let (am, ab) = rotate_rom(&matrices[i], &rhs[i], &rotations[i])?;
            aligned_m.push(am);
            aligned_b.push(ab);
        }
        let aligned_bases = bases.map(|bs| {
            bs.iter().zip(&rotations).map(|(v, q)| v * q).collect::<Vec<_>>()
        });

        let chart = Chart::new(kind, aligned_m[0].clone())?;
        let gammas = aligned_m
            .iter()
            .map(|m| chart.log(m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { kind, chart, rbf, gammas, rhs: aligned_b, rotations, aligned_bases, k })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_points(&self) -> usize {
        self.gammas.len()
    }

    /// Rotation applied to entry `idx` during alignment.
    pub fn rotation(&self, idx: usize) -> &DMatrix<f64> {
        &self.rotations[idx]
    }

    /// Basis of entry `idx` after alignment; present when bases were given.
    pub fn aligned_basis(&self, idx: usize) -> Option<&DMatrix<f64>> {
        self.aligned_bases.as_ref().map(|b| &b[idx])
    }

    pub fn interpolate(&self, mu: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>), InterpError> {
        let w = self.rbf.weights(mu)?;
        let gamma = self.blend_matrices(&w);
        let rhs = self.blend_rhs(&w);
        Ok((self.chart.exp(&gamma)?, rhs))
    }

    /// Interpolation with derivatives of both operators along every
    /// parameter axis, through the chain rule across the chart map.
    pub fn interpolate_with_sensitivity(
        &self,
        mu: &DVector<f64>,
    ) -> Result<InterpolatedOperators, InterpError> {
        let w = self.rbf.weights_with_jacobian(mu)?;
        let gamma = self.blend_matrices(&w.values);
        let rhs = self.blend_rhs(&w.values);
        let n_mu = w.jacobian.ncols();
        let mut matrix_derivs = Vec::with_capacity(n_mu);
        let mut rhs_derivs = Vec::with_capacity(n_mu);
        for i in 0..n_mu {
            let dw = w.jacobian.column(i);
            let mut dgamma = DMatrix::zeros(self.k, self.k);
            let mut drhs = DVector::zeros(self.rhs[0].len());
            for j in 0..self.n_points() {
                dgamma += &self.gammas[j] * dw[j];
                drhs += &self.rhs[j] * dw[j];
            }
            matrix_derivs.push(self.chart.exp_derivative(&gamma, &dgamma)?);
            rhs_derivs.push(drhs);
        }
        Ok(InterpolatedOperators { matrix: self.chart.exp(&gamma)?, rhs, matrix_derivs, rhs_derivs })
    }

    fn blend_matrices(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut gamma = DMatrix::zeros(self.k, self.k);
        for (j, g) in self.gammas.iter().enumerate() {
            gamma += g * w[j];
        }
        gamma
    }

    fn blend_rhs(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.rhs[0].len());
        for (j, b) in self.rhs.iter().enumerate() {
            rhs += b * w[j];
        }
        rhs
    }
}
