//! Affine-parametric linear systems `A(mu) w = b(mu)` with polynomial
//! coefficient functions, state sensitivities, and quantity-of-interest
//! gradients by the direct and adjoint routes.

mod file;
mod polynomial;

pub use file::{load_system, save_system};
pub use polynomial::{Monomial, Polynomial, MAX_DEGREE};

use crate::linalg::{LinalgError, LuFactors};
use nalgebra::{DMatrix, DVector};
use std::cell::Cell;
use thiserror::Error;

/// Condition-number level above which a solve is flagged as ill-conditioned.
pub const CONDITION_WARN_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("coefficient polynomial has total degree {degree}, above the supported maximum {max}")]
    DegreeTooHigh { degree: u32, max: u32 },
    #[error("expected {expected} parameters, got {got}")]
    ParameterCountMismatch { expected: usize, got: usize },
    #[error("operator block has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("parameter bounds are empty or inverted on axis {axis}")]
    BadBounds { axis: usize },
    #[error("parameter {axis} = {value} lies outside [{lower}, {upper}]")]
    OutOfBounds { axis: usize, value: f64, lower: f64, upper: f64 },
    #[error("system matrix is singular at this parameter (condition estimate {cond:.3e})")]
    SingularSystem { cond: f64 },
    #[error("system file: {0}")]
    File(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Box bounds on the parameter vector, also defining the affine map onto the
/// normalized cube [-0.1, 0.1]^n used for distances and interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

/// Half-width of the normalized parameter cube.
pub const NORMALIZED_HALF_WIDTH: f64 = 0.1;

impl ParamBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, ModelError> {
        if lower.len() != upper.len() {
            return Err(ModelError::ParameterCountMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(ModelError::BadBounds { axis: 0 });
        }
        for i in 0..lower.len() {
            if lower[i] >= upper[i] || lower[i].is_nan() || upper[i].is_nan() {
                return Err(ModelError::BadBounds { axis: i });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self, ModelError> {
        Self::new(DVector::from_row_slice(lower), DVector::from_row_slice(upper))
    }

    pub fn n_mu(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn validate(&self, mu: &DVector<f64>) -> Result<(), ModelError> {
        if mu.len() != self.n_mu() {
            return Err(ModelError::ParameterCountMismatch { expected: self.n_mu(), got: mu.len() });
        }
        for i in 0..mu.len() {
            let slack = 1e-9 * (self.upper[i] - self.lower[i]);
            if mu[i] < self.lower[i] - slack || mu[i] > self.upper[i] + slack {
                return Err(ModelError::OutOfBounds {
                    axis: i,
                    value: mu[i],
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// Maps the raw parameter vector onto [-0.1, 0.1]^n.
    pub fn normalize(&self, mu: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(mu.len(), |i, _| {
            let t = (mu[i] - self.lower[i]) / (self.upper[i] - self.lower[i]);
            NORMALIZED_HALF_WIDTH * (2.0 * t - 1.0)
        })
    }

    pub fn denormalize(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| {
            let t = (z[i] / NORMALIZED_HALF_WIDTH + 1.0) * 0.5;
            self.lower[i] + t * (self.upper[i] - self.lower[i])
        })
    }

    /// Scale factor d(normalized)/d(raw) on each axis.
    pub fn normalization_scale(&self) -> DVector<f64> {
        DVector::from_fn(self.n_mu(), |i, _| {
            2.0 * NORMALIZED_HALF_WIDTH / (self.upper[i] - self.lower[i])
        })
    }

    /// Euclidean distance between two raw points in normalized coordinates.
    pub fn normalized_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (self.normalize(a) - self.normalize(b)).norm()
    }
}

/// Running count of full-order linear solves on this thread. One unit per
/// right-hand side solved against an `n_w`-dimensional operator (state,
/// sensitivity, or adjoint); factorizations are not counted separately.
pub mod solve_counter {
    use super::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
    }

    pub fn record(n: u64) {
        COUNT.with(|c| c.set(c.get() + n));
    }

    pub fn count() -> u64 {
        COUNT.with(|c| c.get())
    }

    pub fn reset() {
        COUNT.with(|c| c.set(0));
    }
}

/// Affine-parametric linear system: `A(mu) = A_0 + sum_t p_t(mu) A_t` and
/// `b(mu) = b_0 + sum_t r_t(mu) b_t`, with polynomial coefficients.
/// Immutable after construction; solves allocate their own workspace.
#[derive(Debug, Clone)]
pub struct AffineParametricSystem {
    n_w: usize,
    bounds: ParamBounds,
    base_matrix: DMatrix<f64>,
    matrix_terms: Vec<(Polynomial, DMatrix<f64>)>,
    base_rhs: DVector<f64>,
    rhs_terms: Vec<(Polynomial, DVector<f64>)>,
}

impl AffineParametricSystem {
    pub fn new(
        bounds: ParamBounds,
        base_matrix: DMatrix<f64>,
        matrix_terms: Vec<(Polynomial, DMatrix<f64>)>,
        base_rhs: DVector<f64>,
        rhs_terms: Vec<(Polynomial, DVector<f64>)>,
    ) -> Result<Self, ModelError> {
        let n_w = base_matrix.nrows();
        if base_matrix.ncols() != n_w {
            return Err(ModelError::ShapeMismatch {
                rows: n_w,
                cols: n_w,
                got_rows: base_matrix.nrows(),
                got_cols: base_matrix.ncols(),
            });
        }
        if base_rhs.len() != n_w {
            return Err(ModelError::ShapeMismatch {
                rows: n_w,
                cols: 1,
                got_rows: base_rhs.len(),
                got_cols: 1,
            });
        }
        let n_mu = bounds.n_mu();
        for (p, m) in &matrix_terms {
            if p.n_mu() != n_mu {
                return Err(ModelError::ParameterCountMismatch { expected: n_mu, got: p.n_mu() });
            }
            if m.nrows() != n_w || m.ncols() != n_w {
                return Err(ModelError::ShapeMismatch {
                    rows: n_w,
                    cols: n_w,
                    got_rows: m.nrows(),
                    got_cols: m.ncols(),
                });
            }
        }
        for (p, v) in &rhs_terms {
            if p.n_mu() != n_mu {
                return Err(ModelError::ParameterCountMismatch { expected: n_mu, got: p.n_mu() });
            }
            if v.len() != n_w {
                return Err(ModelError::ShapeMismatch {
                    rows: n_w,
                    cols: 1,
                    got_rows: v.len(),
                    got_cols: 1,
                });
            }
        }
        Ok(Self { n_w, bounds, base_matrix, matrix_terms, base_rhs, rhs_terms })
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_mu(&self) -> usize {
        self.bounds.n_mu()
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn base_matrix(&self) -> &DMatrix<f64> {
        &self.base_matrix
    }

    pub fn matrix_terms(&self) -> &[(Polynomial, DMatrix<f64>)] {
        &self.matrix_terms
    }

    pub fn base_rhs(&self) -> &DVector<f64> {
        &self.base_rhs
    }

    pub fn rhs_terms(&self) -> &[(Polynomial, DVector<f64>)] {
        &self.rhs_terms
    }

    /// Operator and right-hand side at a parameter point.
    pub fn assemble(&self, mu: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>), ModelError> {
        self.bounds.validate(mu)?;
        Ok((self.assemble_matrix_unchecked(mu), self.assemble_rhs_unchecked(mu)))
    }

    pub(crate) fn assemble_matrix_unchecked(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mus = mu.as_slice();
        let mut a = self.base_matrix.clone();
        for (p, m) in &self.matrix_terms {
            a += m * p.eval(mus);
        }
        a
    }

    pub(crate) fn assemble_rhs_unchecked(&self, mu: &DVector<f64>) -> DVector<f64> {
        let mus = mu.as_slice();
        let mut b = self.base_rhs.clone();
        for (p, v) in &self.rhs_terms {
            b += v * p.eval(mus);
        }
        b
    }

    /// `dA/dmu_i` at a parameter point, from the analytic coefficient gradients.
    pub fn matrix_derivative(&self, mu: &DVector<f64>, axis: usize) -> DMatrix<f64> {
        let mus = mu.as_slice();
        let mut d = DMatrix::zeros(self.n_w, self.n_w);
        for (p, m) in &self.matrix_terms {
            let g = p.gradient(mus)[axis];
            if g != 0.0 {
                d += m * g;
            }
        }
        d
    }

    pub fn rhs_derivative(&self, mu: &DVector<f64>, axis: usize) -> DVector<f64> {
        let mus = mu.as_slice();
        let mut d = DVector::zeros(self.n_w);
        for (p, v) in &self.rhs_terms {
            let g = p.gradient(mus)[axis];
            if g != 0.0 {
                d += v * g;
            }
        }
        d
    }

    /// Solves the full-order system, retaining the factorization for
    /// sensitivity and adjoint reuse. Ill-conditioned operators are reported
    /// through the condition estimate and a log warning.
    pub fn solve_full(&self, mu: &DVector<f64>) -> Result<FullSolution, ModelError> {
        let (a, b) = self.assemble(mu)?;
        let factors = match LuFactors::new(&a) {
            Ok(f) => f,
            Err(LinalgError::Singular { cond }) => return Err(ModelError::SingularSystem { cond }),
            Err(e) => return Err(e.into()),
        };
        let condition = factors.cond_estimate();
        if !condition.is_finite() || condition > CONDITION_WARN_THRESHOLD {
            if condition.is_finite() {
                log::warn!("full-order solve is ill-conditioned: estimate {condition:.3e}");
            } else {
                return Err(ModelError::SingularSystem { cond: condition });
            }
        }
        let w = factors.solve(&b);
        solve_counter::record(1);
        Ok(FullSolution { w, condition, factors })
    }

    /// Direct state sensitivities: for each axis `i`, solves
    /// `A dw/dmu_i = db/dmu_i - (dA/dmu_i) w` reusing the state factorization.
    pub fn state_sensitivities(
        &self,
        mu: &DVector<f64>,
        solution: &FullSolution,
    ) -> Vec<DVector<f64>> {
        (0..self.n_mu())
            .map(|i| {
                let rhs = self.rhs_derivative(mu, i) - self.matrix_derivative(mu, i) * &solution.w;
                solve_counter::record(1);
                solution.factors.solve(&rhs)
            })
            .collect()
    }

    /// Residual `b(mu) - A(mu) V w_r` of a reduced-coordinate candidate.
    pub fn residual(
        &self,
        mu: &DVector<f64>,
        basis: &DMatrix<f64>,
        w_r: &DVector<f64>,
    ) -> Result<DVector<f64>, ModelError> {
        let (a, b) = self.assemble(mu)?;
        Ok(b - a * (basis * w_r))
    }
}

/// Full-order solution bundled with its factorization and condition estimate.
pub struct FullSolution {
    pub w: DVector<f64>,
    pub condition: f64,
    factors: LuFactors,
}

impl FullSolution {
    /// Adjoint solve `A^T lambda = rhs` reusing the state factorization.
    pub fn solve_adjoint(&self, rhs: &DVector<f64>) -> DVector<f64> {
        solve_counter::record(1);
        self.factors.solve_transpose(rhs)
    }
}

type StateFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type StateGradFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Scalar quantity of interest `q(w, mu)` with analytic partials.
pub struct QuantityOfInterest {
    name: String,
    eval: StateFn,
    partial_state: StateGradFn,
    partial_mu: StateGradFn,
}

impl QuantityOfInterest {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        partial_state: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        partial_mu: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Box::new(eval),
            partial_state: Box::new(partial_state),
            partial_mu: Box::new(partial_mu),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, w: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        (self.eval)(w, mu)
    }

    pub fn partial_state(&self, w: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        (self.partial_state)(w, mu)
    }

    pub fn partial_mu(&self, w: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        (self.partial_mu)(w, mu)
    }

    /// `q = w^T w`.
    pub fn state_norm_sq() -> Self {
        Self::new(
            "state_norm_sq",
            |w, _| w.dot(w),
            |w, _| w * 2.0,
            |_, mu| DVector::zeros(mu.len()),
        )
    }

    /// `q = alpha/2 * ||mu - target||^2`, a pure parameter penalty.
    pub fn parameter_quadratic(alpha: f64, target: DVector<f64>) -> Self {
        let t2 = target.clone();
        Self::new(
            "parameter_quadratic",
            move |_, mu| 0.5 * alpha * (mu - &target).norm_squared(),
            |w, _| DVector::zeros(w.len()),
            move |_, mu| (mu - &t2) * alpha,
        )
    }

}

/// Pointwise sum of two quantities; values and both partials add.
impl std::ops::Add for QuantityOfInterest {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        let name = format!("{}+{}", self.name, other.name);
        Self {
            name,
            eval: Box::new(move |w, mu| (self.eval)(w, mu) + (other.eval)(w, mu)),
            partial_state: Box::new(move |w, mu| {
                (self.partial_state)(w, mu) + (other.partial_state)(w, mu)
            }),
            partial_mu: Box::new(move |w, mu| (self.partial_mu)(w, mu) + (other.partial_mu)(w, mu)),
        }
    }
}

impl std::fmt::Debug for QuantityOfInterest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuantityOfInterest").field("name", &self.name).finish()
    }
}

/// Breakdown of full-order solves spent inside a gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveBreakdown {
    /// Solves for the state itself.
    pub state: u64,
    /// Extra solves attributable to the gradient (sensitivity or adjoint).
    pub gradient: u64,
}

impl SolveBreakdown {
    pub fn total(&self) -> u64 {
        self.state + self.gradient
    }
}

/// Gradient of one quantity by the direct route: one state solve plus one
/// sensitivity solve per parameter.
pub fn qoi_gradient_direct(
    sys: &AffineParametricSystem,
    q: &QuantityOfInterest,
    mu: &DVector<f64>,
) -> Result<(DVector<f64>, SolveBreakdown), ModelError> {
    let sol = sys.solve_full(mu)?;
    let sens = sys.state_sensitivities(mu, &sol);
    let dq_dw = q.partial_state(&sol.w, mu);
    let mut grad = q.partial_mu(&sol.w, mu);
    for (i, dw) in sens.iter().enumerate() {
        grad[i] += dq_dw.dot(dw);
    }
    Ok((grad, SolveBreakdown { state: 1, gradient: sys.n_mu() as u64 }))
}

/// Gradients of several quantities by the adjoint route: one state solve
/// plus one transposed solve per quantity, independent of the parameter count.
pub fn qoi_gradients_adjoint(
    sys: &AffineParametricSystem,
    qois: &[&QuantityOfInterest],
    mu: &DVector<f64>,
) -> Result<(Vec<DVector<f64>>, SolveBreakdown), ModelError> {
    let sol = sys.solve_full(mu)?;
    let n_mu = sys.n_mu();
    // dA/dmu_i w and db/dmu_i are shared across quantities.
    let rhs_parts: Vec<DVector<f64>> = (0..n_mu)
        .map(|i| sys.rhs_derivative(mu, i) - sys.matrix_derivative(mu, i) * &sol.w)
        .collect();
    let grads = qois
        .iter()
        .map(|q| {
            let lambda = sol.solve_adjoint(&q.partial_state(&sol.w, mu));
            let mut grad = q.partial_mu(&sol.w, mu);
            for (i, part) in rhs_parts.iter().enumerate() {
                grad[i] += lambda.dot(part);
            }
            grad
        })
        .collect();
    Ok((grads, SolveBreakdown { state: 1, gradient: qois.len() as u64 }))
}

/// Single-quantity adjoint gradient.
pub fn qoi_gradient_adjoint(
    sys: &AffineParametricSystem,
    q: &QuantityOfInterest,
    mu: &DVector<f64>,
) -> Result<(DVector<f64>, SolveBreakdown), ModelError> {
    let (mut grads, breakdown) = qoi_gradients_adjoint(sys, &[q], mu)?;
    Ok((grads.pop().expect("one gradient"), breakdown))
}

/// Central finite-difference gradient of `q(w(mu), mu)`, for verification.
pub fn fd_qoi_gradient(
    sys: &AffineParametricSystem,
    q: &QuantityOfInterest,
    mu: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, ModelError> {
    let mut g = DVector::zeros(mu.len());
    for i in 0..mu.len() {
        let mut up = mu.clone();
        let mut dn = mu.clone();
        up[i] += h;
        dn[i] -= h;
        let qu = {
            let s = sys.solve_full(&up)?;
            q.eval(&s.w, &up)
        };
        let qd = {
            let s = sys.solve_full(&dn)?;
            q.eval(&s.w, &dn)
        };
        g[i] = (qu - qd) / (2.0 * h);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::{prop_assert, proptest};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// 2x2 system A = diag(mu, 1), b = (1, 1): w = (1/mu, 1), so
    /// q = w^T w = 1/mu^2 + 1 and dq/dmu = -2/mu^3.
    fn diag_system() -> AffineParametricSystem {
        let bounds = ParamBounds::from_slices(&[0.5], &[2.0]).unwrap();
        AffineParametricSystem::new(
            bounds,
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            vec![(
                Polynomial::linear(1, 0, 1.0),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            )],
            DVector::from_row_slice(&[1.0, 1.0]),
            vec![],
        )
        .unwrap()
    }

    pub(crate) fn random_system(rng: &mut impl Rng, n_w: usize, n_mu: usize) -> AffineParametricSystem {
        let lower = vec![0.5; n_mu];
        let upper = vec![2.0; n_mu];
        let bounds = ParamBounds::from_slices(&lower, &upper).unwrap();
        let base = DMatrix::from_fn(n_w, n_w, |_, _| rng.gen_range(-0.3..0.3))
            + DMatrix::identity(n_w, n_w) * 3.0;
        let mut terms = Vec::new();
        for i in 0..n_mu {
            let m = DMatrix::from_fn(n_w, n_w, |_, _| rng.gen_range(-0.2..0.2));
            // Mix of linear, quadratic, and cross terms.
            let poly = match i % 3 {
                0 => Polynomial::linear(n_mu, i, 1.0),
                1 => Polynomial::new(
                    n_mu,
                    vec![Monomial { coef: 0.7, exponents: { let mut e = vec![0; n_mu]; e[i] = 2; e } }],
                )
                .unwrap(),
                _ => Polynomial::new(
                    n_mu,
                    vec![Monomial {
                        coef: 0.4,
                        exponents: {
                            let mut e = vec![0; n_mu];
                            e[i] = 1;
                            e[(i + 1) % n_mu] = 1;
                            e
                        },
                    }],
                )
                .unwrap(),
            };
            terms.push((poly, m));
        }
        let base_rhs = DVector::from_fn(n_w, |i, _| 1.0 + 0.1 * i as f64);
        let rhs_terms = (0..n_mu.min(2))
            .map(|i| {
                (
                    Polynomial::linear(n_mu, i, 0.5),
                    DVector::from_fn(n_w, |k, _| rng.gen_range(-0.5..0.5) + 0.01 * k as f64),
                )
            })
            .collect();
        AffineParametricSystem::new(bounds, base, terms, base_rhs, rhs_terms).unwrap()
    }

    #[test]
    fn hand_checked_gradient_on_diagonal_system() {
        let sys = diag_system();
        let q = QuantityOfInterest::state_norm_sq();
        let mu = DVector::from_row_slice(&[1.0]);
        let (g, _) = qoi_gradient_direct(&sys, &q, &mu).unwrap();
        assert_relative_eq!(g[0], -2.0, epsilon = 1e-12);
        let (ga, _) = qoi_gradient_adjoint(&sys, &q, &mu).unwrap();
        assert_relative_eq!(ga[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn direct_and_adjoint_agree_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        for trial in 0..20 {
            let n_w = rng.gen_range(3..12);
            let n_mu = rng.gen_range(1..5);
            let sys = random_system(&mut rng, n_w, n_mu);
            let q = QuantityOfInterest::state_norm_sq();
            let mu = DVector::from_fn(n_mu, |_, _| rng.gen_range(0.6..1.9));
            let (gd, _) = qoi_gradient_direct(&sys, &q, &mu).unwrap();
            let (ga, _) = qoi_gradient_adjoint(&sys, &q, &mu).unwrap();
            let rel = (&gd - &ga).norm() / gd.norm().max(1e-300);
            assert!(rel <= 1e-10, "trial {trial}: direct/adjoint mismatch {rel:e}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(56);
        let sys = random_system(&mut rng, 8, 3);
        let q = QuantityOfInterest::state_norm_sq()
            + QuantityOfInterest::parameter_quadratic(0.8, DVector::from_row_slice(&[1.0, 1.2, 0.9]));
        let mu = DVector::from_row_slice(&[0.9, 1.4, 1.1]);
        let (g, _) = qoi_gradient_direct(&sys, &q, &mu).unwrap();
        let fd = fd_qoi_gradient(&sys, &q, &mu, 1e-6).unwrap();
        let rel = (&g - &fd).norm() / g.norm();
        assert!(rel < 1e-6, "FD mismatch {rel:e}");
    }

    #[test]
    fn state_sensitivities_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(57);
        let sys = random_system(&mut rng, 7, 2);
        let mu = DVector::from_row_slice(&[1.3, 0.8]);
        let sol = sys.solve_full(&mu).unwrap();
        let sens = sys.state_sensitivities(&mu, &sol);
        let h = 1e-6;
        for i in 0..2 {
            let mut up = mu.clone();
            let mut dn = mu.clone();
            up[i] += h;
            dn[i] -= h;
            let wu = sys.solve_full(&up).unwrap().w;
            let wd = sys.solve_full(&dn).unwrap().w;
            let fd = (wu - wd) / (2.0 * h);
            let rel = (&sens[i] - &fd).norm() / fd.norm();
            assert!(rel < 1e-6, "axis {i}: sensitivity FD mismatch {rel:e}");
        }
    }

    #[test]
    fn solve_counts_follow_the_two_routes() {
        let mut rng = ChaCha12Rng::seed_from_u64(58);
        let n_mu = 6;
        let sys = random_system(&mut rng, 9, n_mu);
        let mu = DVector::from_fn(n_mu, |_, _| 1.0);
        let q = QuantityOfInterest::state_norm_sq();

        solve_counter::reset();
        let (_, direct) = qoi_gradient_direct(&sys, &q, &mu).unwrap();
        assert_eq!(direct.gradient, n_mu as u64);
        assert_eq!(solve_counter::count(), direct.total());

        solve_counter::reset();
        let (_, adjoint) = qoi_gradients_adjoint(&sys, &[&q], &mu).unwrap();
        assert_eq!(adjoint.total(), 2); // one state + one adjoint for one quantity
        assert_eq!(solve_counter::count(), 2);
    }

    #[test]
    fn singular_assembly_is_rejected() {
        let bounds = ParamBounds::from_slices(&[-1.0], &[1.0]).unwrap();
        // A = mu * I becomes singular at mu = 0.
        let sys = AffineParametricSystem::new(
            bounds,
            DMatrix::zeros(2, 2),
            vec![(Polynomial::linear(1, 0, 1.0), DMatrix::identity(2, 2))],
            DVector::from_row_slice(&[1.0, 1.0]),
            vec![],
        )
        .unwrap();
        let err = sys.solve_full(&DVector::from_row_slice(&[0.0]));
        assert!(matches!(err, Err(ModelError::SingularSystem { .. })));
    }

    #[test]
    fn out_of_bounds_parameters_are_rejected() {
        let sys = diag_system();
        let err = sys.assemble(&DVector::from_row_slice(&[3.0]));
        assert!(matches!(err, Err(ModelError::OutOfBounds { axis: 0, .. })));
    }

    #[test]
    fn residual_vanishes_at_exact_solution() {
        let sys = diag_system();
        let mu = DVector::from_row_slice(&[1.5]);
        let sol = sys.solve_full(&mu).unwrap();
        // Basis containing the exact solution reproduces it with w_r = (1, 0).
        let mut basis = DMatrix::zeros(2, 2);
        basis.set_column(0, &sol.w);
        basis[(1, 1)] = 1.0;
        let r = sys.residual(&mu, &basis, &DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        assert!(r.norm() <= 1e-12);
    }

    proptest! {
        // Assembly is linear in the term coefficients: doubling every term
        // polynomial doubles the deviation from the base operator.
        #[test]
        fn assembly_linear_in_term_coefficients(seed in 0u64..500, m0 in 0.55f64..1.95, m1 in 0.55f64..1.95) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let sys = random_system(&mut rng, 5, 2);
            let doubled = AffineParametricSystem::new(
                sys.bounds.clone(),
                sys.base_matrix.clone(),
                sys.matrix_terms.iter().map(|(p, m)| (p.scale(2.0), m.clone())).collect(),
                sys.base_rhs.clone(),
                sys.rhs_terms.iter().map(|(p, v)| (p.scale(2.0), v.clone())).collect(),
            ).unwrap();
            let mu = DVector::from_row_slice(&[m0, m1]);
            let (a1, b1) = sys.assemble(&mu).unwrap();
            let (a2, b2) = doubled.assemble(&mu).unwrap();
            let lhs_a = a2 - &sys.base_matrix;
            let rhs_a = (a1 - &sys.base_matrix) * 2.0;
            prop_assert!((lhs_a - rhs_a).norm() <= 1e-12 * sys.base_matrix.norm().max(1.0));
            let lhs_b = b2 - &sys.base_rhs;
            let rhs_b = (b1 - &sys.base_rhs) * 2.0;
            prop_assert!((lhs_b - rhs_b).norm() <= 1e-12);
        }
    }
}
