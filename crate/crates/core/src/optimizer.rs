//! Gradient-based design optimization over the parameter box.
//!
//! Problems carry an objective and a block of inequality constraints
//! (`c(mu) <= 0`), each returning values together with analytic gradients.
//! The solver is an augmented-Lagrangian outer loop around a projected,
//! damped-BFGS inner descent; it is fully deterministic. Factories build the
//! same problem shape from either the full-order model (adjoint gradients)
//! or a reduced database (interpolated operators, no full-order solves).

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::database::{DatabaseError, RomDatabase};
use crate::interp::{InterpError, OperatorInterpolator};
use crate::linalg::{LinalgError, LuFactors};
use crate::model::{
    AffineParametricSystem, ModelError, ParamBounds, QuantityOfInterest,
};

/// Failure of a single objective or constraint evaluation at a trial point.
/// The line search treats these as rejections and backtracks.
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct EvalFailed(pub String);

impl From<ModelError> for EvalFailed {
    fn from(e: ModelError) -> Self {
        Self(e.to_string())
    }
}

impl From<InterpError> for EvalFailed {
    fn from(e: InterpError) -> Self {
        Self(e.to_string())
    }
}

impl From<LinalgError> for EvalFailed {
    fn from(e: LinalgError) -> Self {
        Self(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error("invalid solver setting: {0}")]
    BadConfig(String),
    #[error(
        "gradient self-check failed for {which} on axis {axis}: \
         analytic {analytic:.6e} vs finite difference {fd:.6e}"
    )]
    GradientCheck {
        which: String,
        axis: usize,
        analytic: f64,
        fd: f64,
    },
    #[error("{context}: evaluation failed after {rejections} attempts: {last}")]
    EvaluationFailed {
        context: String,
        rejections: usize,
        last: String,
    },
    #[error("objective returned a gradient of length {got}, expected {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("constraint block returned {got} rows, expected {expected}")]
    ConstraintShape { expected: usize, got: usize },
    #[error("database and system describe different parameter boxes")]
    BoundsMismatch,
    #[error("database entries lack stored bases, so states cannot be lifted")]
    MissingBases,
}

const PENALTY_INIT: f64 = 10.0;
const PENALTY_FACTOR: f64 = 10.0;
const PENALTY_MAX: f64 = 1e12;
const MULTIPLIER_MAX: f64 = 1e8;
const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_REJECTIONS: usize = 30;
const FD_CHECK_TOL: f64 = 1e-4;
const MAX_OUTER: usize = 60;
const MAX_INNER: usize = 200;

type ObjectiveFn =
    Box<dyn Fn(&DVector<f64>) -> Result<(f64, DVector<f64>), EvalFailed> + Send + Sync>;
type ConstraintFn =
    Box<dyn Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), EvalFailed> + Send + Sync>;

/// Box-constrained problem `min f(mu) s.t. c(mu) <= 0, mu in bounds`.
/// Both callbacks return analytic first derivatives alongside values.
pub struct NlpProblem {
    bounds: ParamBounds,
    n_c: usize,
    objective: ObjectiveFn,
    constraints: ConstraintFn,
}

/// Cached callback results at one point.
#[derive(Debug, Clone)]
struct Evaluated {
    f: f64,
    grad: DVector<f64>,
    c: DVector<f64>,
    jac: DMatrix<f64>,
}

impl NlpProblem {
    pub fn new(
        bounds: ParamBounds,
        objective: impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>), EvalFailed>
            + Send
            + Sync
            + 'static,
        n_c: usize,
        constraints: impl Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), EvalFailed>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            bounds,
            n_c,
            objective: Box::new(objective),
            constraints: Box::new(constraints),
        }
    }

    pub fn unconstrained(
        bounds: ParamBounds,
        objective: impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>), EvalFailed>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        let n_mu = bounds.n_mu();
        Self::new(bounds, objective, 0, move |_| {
            Ok((DVector::zeros(0), DMatrix::zeros(0, n_mu)))
        })
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn n_constraints(&self) -> usize {
        self.n_c
    }

    fn eval_raw(&self, mu: &DVector<f64>) -> Result<Evaluated, EvalFailed> {
        let (f, grad) = self.objective_at(mu)?;
        let (c, jac) = self.constraints_at(mu)?;
        Ok(Evaluated { f, grad, c, jac })
    }

    /// Objective value and gradient at one point, shape-checked.
    pub fn objective_at(&self, mu: &DVector<f64>) -> Result<(f64, DVector<f64>), EvalFailed> {
        let n_mu = self.bounds.n_mu();
        let (f, grad) = (self.objective)(mu)?;
        if grad.len() != n_mu {
            return Err(EvalFailed(format!(
                "objective gradient has length {}, expected {n_mu}",
                grad.len()
            )));
        }
        Ok((f, grad))
    }

    /// Constraint values and jacobian at one point, shape-checked.
    pub fn constraints_at(
        &self,
        mu: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), EvalFailed> {
        let n_mu = self.bounds.n_mu();
        let (c, jac) = (self.constraints)(mu)?;
        if c.len() != self.n_c || jac.nrows() != self.n_c || jac.ncols() != n_mu {
            return Err(EvalFailed(format!(
                "constraint block is {}x{} with {} values, expected {}x{n_mu}",
                jac.nrows(),
                jac.ncols(),
                c.len(),
                self.n_c
            )));
        }
        Ok((c, jac))
    }

    /// Checks every analytic derivative against a clamped central difference.
    /// Axes whose probe evaluations fail are skipped with a warning.
    pub fn check_gradients(&self, mu: &DVector<f64>, tol: f64) -> Result<(), OptimError> {
        let e0 = self.eval_raw(mu).map_err(|e| OptimError::EvaluationFailed {
            context: "gradient check".into(),
            rejections: 1,
            last: e.0,
        })?;
        let mut eval = |m: &DVector<f64>| self.eval_raw(m);
        fd_check(self, &e0, mu, tol, &mut eval)
    }
}

impl std::fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NlpProblem")
            .field("n_mu", &self.bounds.n_mu())
            .field("n_c", &self.n_c)
            .finish()
    }
}

/// First-order optimality measures at the returned point. All fields are
/// finite; non-finite measures are reported as infinity with
/// `converged = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Infinity norm of the projected Lagrangian gradient.
    pub stationarity: f64,
    /// Largest constraint violation `max(0, c_i)`.
    pub violation: f64,
    /// Largest `|lambda_i * c_i|`.
    pub complementarity: f64,
    /// Accepted descent steps across all penalty phases.
    pub iterations: usize,
    /// Penalty phases used.
    pub outer_iterations: usize,
    /// Objective/constraint callback invocations.
    pub evaluations: u64,
    pub converged: bool,
}

/// One accepted descent step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    /// Penalty phase this step belongs to.
    pub outer: usize,
    /// Accepted-step counter across the whole run.
    pub iteration: usize,
    pub objective: f64,
    pub violation: f64,
    /// Projected merit-gradient norm after the step.
    pub stationarity: f64,
    pub step_norm: f64,
    /// Merit value under the phase's multipliers and penalty.
    pub merit: f64,
    /// Cumulative callback invocations.
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub mu: DVector<f64>,
    pub objective: f64,
    pub multipliers: DVector<f64>,
    pub report: KktReport,
    pub history: Vec<IterationRow>,
}

impl NlpSolution {
    /// Per-iterate trace: `iter,f,violation,stationarity,step_norm,evaluations`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,f,violation,stationarity,step_norm,evaluations\n");
        for row in &self.history {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                row.iteration,
                row.objective,
                row.violation,
                row.stationarity,
                row.step_norm,
                row.evaluations
            ));
        }
        out
    }
}

fn sanitize(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        f64::INFINITY
    }
}

fn clamp_to(bounds: &ParamBounds, v: &DVector<f64>) -> DVector<f64> {
    let lo = bounds.lower();
    let hi = bounds.upper();
    DVector::from_fn(v.len(), |i, _| v[i].max(lo[i]).min(hi[i]))
}

/// Gradient with bound-blocked components zeroed: at the lower bound only
/// ascent components survive projection, at the upper bound only descent
/// components, so the returned norm is a stationarity measure for the box.
fn projected_gradient(bounds: &ParamBounds, mu: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let lo = bounds.lower();
    let hi = bounds.upper();
    DVector::from_fn(g.len(), |i, _| {
        let mut v = g[i];
        if mu[i] - lo[i] <= 1e-12 * (1.0 + lo[i].abs()) {
            v = v.min(0.0);
        }
        if hi[i] - mu[i] <= 1e-12 * (1.0 + hi[i].abs()) {
            v = v.max(0.0);
        }
        v
    })
}

fn max_violation(c: &DVector<f64>) -> f64 {
    c.iter().fold(0.0_f64, |m, &ci| m.max(ci))
}

/// Augmented-Lagrangian merit for inequalities: each constraint contributes
/// `(max(0, lambda_i + rho c_i)^2 - lambda_i^2) / (2 rho)`.
fn merit_value(e: &Evaluated, lambda: &DVector<f64>, rho: f64) -> f64 {
    let mut m = e.f;
    for i in 0..c_len(e) {
        let t = (lambda[i] + rho * e.c[i]).max(0.0);
        m += (t * t - lambda[i] * lambda[i]) / (2.0 * rho);
    }
    m
}

fn merit_gradient(e: &Evaluated, lambda: &DVector<f64>, rho: f64) -> DVector<f64> {
    let mut g = e.grad.clone();
    for i in 0..c_len(e) {
        let t = (lambda[i] + rho * e.c[i]).max(0.0);
        if t > 0.0 {
            g += e.jac.row(i).transpose() * t;
        }
    }
    g
}

fn c_len(e: &Evaluated) -> usize {
    e.c.len()
}

/// First-order multiplier estimate, clamped to keep the merit bounded.
fn multiplier_estimate(lambda: &DVector<f64>, rho: f64, c: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lambda.len(), |i, _| {
        (lambda[i] + rho * c[i]).clamp(0.0, MULTIPLIER_MAX)
    })
}

/// BFGS update with Powell damping so the approximation stays positive
/// definite even when `s^T y <= 0` along nonconvex or penalized paths.
fn damped_bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let q = &*b * s;
    let sq = s.dot(&q);
    if sq <= 1e-300 {
        return;
    }
    let sy = s.dot(y);
    let y_eff = if sy < 0.2 * sq {
        let theta = 0.8 * sq / (sq - sy);
        y * theta + &q * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy_eff = s.dot(&y_eff);
    if sy_eff <= 1e-300 {
        return;
    }
    *b -= &q * q.transpose() / sq;
    *b += &y_eff * y_eff.transpose() / sy_eff;
}

fn fd_check(
    p: &NlpProblem,
    e0: &Evaluated,
    mu: &DVector<f64>,
    tol: f64,
    eval: &mut dyn FnMut(&DVector<f64>) -> Result<Evaluated, EvalFailed>,
) -> Result<(), OptimError> {
    let lo = p.bounds.lower();
    let hi = p.bounds.upper();
    let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
    for i in 0..mu.len() {
        let h = 1e-6 * (1.0 + mu[i].abs());
        let mut plus = mu.clone();
        plus[i] = (mu[i] + h).min(hi[i]);
        let mut minus = mu.clone();
        minus[i] = (mu[i] - h).max(lo[i]);
        let denom = plus[i] - minus[i];
        if denom <= 0.0 {
            continue;
        }
        let (ep, em) = match (eval(&plus), eval(&minus)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                log::warn!("gradient check skipped axis {i}: probe evaluation failed");
                continue;
            }
        };
        let fd = (ep.f - em.f) / denom;
        if !close(e0.grad[i], fd) {
            return Err(OptimError::GradientCheck {
                which: "objective".into(),
                axis: i,
                analytic: e0.grad[i],
                fd,
            });
        }
        for r in 0..p.n_c {
            let fd = (ep.c[r] - em.c[r]) / denom;
            if !close(e0.jac[(r, i)], fd) {
                return Err(OptimError::GradientCheck {
                    which: format!("constraint {r}"),
                    axis: i,
                    analytic: e0.jac[(r, i)],
                    fd,
                });
            }
        }
    }
    Ok(())
}

struct Solver<'a> {
    p: &'a NlpProblem,
    evals: u64,
    accepted: usize,
    history: Vec<IterationRow>,
}

impl Solver<'_> {
    fn eval(&mut self, mu: &DVector<f64>) -> Result<Evaluated, EvalFailed> {
        self.evals += 1;
        self.p.eval_raw(mu)
    }

    fn eval_or_fail(&mut self, mu: &DVector<f64>, context: &str) -> Result<Evaluated, OptimError> {
        self.eval(mu).map_err(|e| OptimError::EvaluationFailed {
            context: context.into(),
            rejections: 1,
            last: e.0,
        })
    }

    /// Minimizes the phase merit to projected-gradient tolerance `omega`.
    /// `e` tracks the callback values at `mu` throughout.
    fn inner(
        &mut self,
        mu: &mut DVector<f64>,
        e: &mut Evaluated,
        lambda: &DVector<f64>,
        rho: f64,
        omega: f64,
        outer: usize,
    ) -> Result<(), OptimError> {
        let n = mu.len();
        let mut b = DMatrix::identity(n, n);
        let mut g = merit_gradient(e, lambda, rho);
        for _ in 0..MAX_INNER {
            if projected_gradient(&self.p.bounds, mu, &g).amax() <= omega {
                return Ok(());
            }
            let mut d = match Cholesky::new(b.clone()) {
                Some(ch) => -ch.solve(&g),
                None => -g.clone(),
            };
            if d.dot(&g) >= 0.0 {
                b = DMatrix::identity(n, n);
                d = -g.clone();
            }
            let phi0 = merit_value(e, lambda, rho);
            let mut alpha = 1.0;
            let mut rejections = 0;
            let mut taken = None;
            loop {
                let trial = clamp_to(&self.p.bounds, &(&*mu + &d * alpha));
                let step = &trial - &*mu;
                if step.amax() <= 1e-15 * (1.0 + mu.amax()) {
                    break;
                }
                match self.eval(&trial) {
                    Err(fail) => {
                        rejections += 1;
                        if rejections >= MAX_REJECTIONS {
                            return Err(OptimError::EvaluationFailed {
                                context: "line search".into(),
                                rejections,
                                last: fail.0,
                            });
                        }
                    }
                    Ok(et) => {
                        let phi_t = merit_value(&et, lambda, rho);
                        let slope = g.dot(&step);
                        if phi_t.is_finite() && phi_t <= phi0 + ARMIJO_C1 * slope.min(0.0) {
                            taken = Some((trial, step, et));
                            break;
                        }
                    }
                }
                alpha *= BACKTRACK;
                if alpha < 1e-20 {
                    break;
                }
            }
            let Some((trial, step, et)) = taken else {
                // No acceptable step along this direction: the phase ends at
                // the current point and the outer loop decides what changes.
                return Ok(());
            };
            let g_new = merit_gradient(&et, lambda, rho);
            damped_bfgs_update(&mut b, &step, &(&g_new - &g));
            *mu = trial;
            *e = et;
            g = g_new;
            self.accepted += 1;
            let stat = projected_gradient(&self.p.bounds, mu, &g).amax();
            self.history.push(IterationRow {
                outer,
                iteration: self.accepted,
                objective: e.f,
                violation: max_violation(&e.c),
                stationarity: sanitize(stat),
                step_norm: step.norm(),
                merit: merit_value(e, lambda, rho),
                evaluations: self.evals,
            });
        }
        Ok(())
    }
}

/// Solves `p` from `mu0` to KKT tolerance `tol`.
///
/// The run starts with a finite-difference audit of both callbacks at `mu0`
/// and fails fast on an inconsistent gradient. Evaluation failures at trial
/// points trigger backtracking; a hard error is raised only after
/// thirty consecutive rejections within one line search. The solver draws no
/// randomness, so equal inputs replay bit-identically.
pub fn solve_nlp(
    p: &NlpProblem,
    mu0: &DVector<f64>,
    tol: f64,
) -> Result<NlpSolution, OptimError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(OptimError::BadConfig(format!(
            "tolerance must be positive and finite, got {tol}"
        )));
    }
    p.bounds.validate(mu0)?;
    let mut solver = Solver {
        p,
        evals: 0,
        accepted: 0,
        history: Vec::new(),
    };
    let mut mu = clamp_to(&p.bounds, mu0);
    let mut e = solver.eval_or_fail(&mu, "initial point")?;
    {
        let evals = &mut solver.evals;
        let mut eval = |m: &DVector<f64>| {
            *evals += 1;
            p.eval_raw(m)
        };
        fd_check(p, &e, &mu, FD_CHECK_TOL, &mut eval)?;
    }

    let mut lambda = DVector::zeros(p.n_c);
    let mut rho = PENALTY_INIT;
    let mut omega = if p.n_c == 0 { tol } else { 1e-2_f64.max(tol) };
    let mut v_prev = f64::INFINITY;
    let mut converged = false;
    let mut stat = f64::INFINITY;
    let mut viol = f64::INFINITY;
    let mut compl = f64::INFINITY;
    let mut outer_used = 0;
    for outer in 1..=MAX_OUTER {
        outer_used = outer;
        solver.inner(&mut mu, &mut e, &lambda, rho, omega, outer)?;
        viol = max_violation(&e.c);
        let lam_new = multiplier_estimate(&lambda, rho, &e.c);
        // With the first-order estimate the merit gradient equals the
        // Lagrangian gradient, so inner stationarity transfers to the KKT
        // measure directly.
        let kkt_grad = &e.grad + e.jac.transpose() * &lam_new;
        stat = projected_gradient(&p.bounds, &mu, &kkt_grad).amax();
        compl = (0..p.n_c)
            .map(|i| (lam_new[i] * e.c[i]).abs())
            .fold(0.0, f64::max);
        if stat <= tol && viol <= tol && compl <= tol {
            lambda = lam_new;
            converged = true;
            break;
        }
        if viol <= (0.25 * v_prev).max(tol) {
            lambda = lam_new;
        } else if p.n_c > 0 {
            rho = (rho * PENALTY_FACTOR).min(PENALTY_MAX);
        }
        v_prev = v_prev.min(viol);
        omega = (omega * 0.2).max(tol);
    }
    Ok(NlpSolution {
        mu,
        objective: e.f,
        multipliers: lambda,
        report: KktReport {
            stationarity: sanitize(stat),
            violation: sanitize(viol),
            complementarity: sanitize(compl),
            iterations: solver.accepted,
            outer_iterations: outer_used,
            evaluations: solver.evals,
            converged,
        },
        history: solver.history,
    })
}

/// Shared reduced-model evaluation context captured by both callbacks of a
/// reduced problem.
struct RomContext {
    interp: OperatorInterpolator,
    mus: Vec<DVector<f64>>,
    bases: Vec<DMatrix<f64>>,
    bounds: ParamBounds,
    box_lo: DVector<f64>,
    box_hi: DVector<f64>,
    warned: AtomicBool,
}

impl RomContext {
    fn nearest(&self, mu: &DVector<f64>) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, m) in self.mus.iter().enumerate() {
            let d = self.bounds.normalized_distance(m, mu);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Lifted state and its parameter sensitivities at `mu`, all produced
    /// from interpolated reduced operators: no full-order solves occur.
    fn evaluate(&self, mu: &DVector<f64>) -> Result<(DVector<f64>, Vec<DVector<f64>>), EvalFailed> {
        let outside = (0..mu.len())
            .any(|i| mu[i] < self.box_lo[i] - 1e-12 || mu[i] > self.box_hi[i] + 1e-12);
        if outside && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "query point leaves the sampled parameter region; reduced \
                 predictions there are extrapolations"
            );
        }
        let io = self.interp.interpolate_with_sensitivity(mu)?;
        let lu = LuFactors::new(&io.matrix)
            .map_err(|e| EvalFailed(format!("interpolated reduced matrix is unusable: {e}")))?;
        let w_r = lu.solve(&io.rhs);
        let v = &self.bases[self.nearest(mu)];
        let w = v * &w_r;
        let dw = (0..mu.len())
            .map(|i| {
                let rhs = &io.rhs_derivs[i] - &io.matrix_derivs[i] * &w_r;
                v * lu.solve(&rhs)
            })
            .collect();
        Ok((w, dw))
    }
}

fn qoi_row(
    q: &QuantityOfInterest,
    w: &DVector<f64>,
    dw: &[DVector<f64>],
    mu: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let value = q.eval(w, mu);
    let dq_dw = q.partial_state(w, mu);
    let mut grad = q.partial_mu(w, mu);
    for i in 0..mu.len() {
        grad[i] += dq_dw.dot(&dw[i]);
    }
    (value, grad)
}

/// Builds an optimization problem whose every evaluation runs through the
/// reduced database: operators are interpolated at the query point, the
/// reduced solution is lifted through the nearest entry's aligned basis, and
/// gradients come from the interpolant's own derivatives. Queries outside
/// the sampled region log a one-time extrapolation warning.
pub fn make_rom_nlp(
    db: &RomDatabase,
    sys: &AffineParametricSystem,
    objective: QuantityOfInterest,
    constraints: Vec<QuantityOfInterest>,
) -> Result<NlpProblem, OptimError> {
    if db.bounds() != sys.bounds() {
        return Err(OptimError::BoundsMismatch);
    }
    if !db.has_bases() {
        return Err(OptimError::MissingBases);
    }
    let interp = db.interpolator()?;
    let mus: Vec<DVector<f64>> = db.entries().iter().map(|e| e.mu.clone()).collect();
    let bases: Vec<DMatrix<f64>> = (0..db.len())
        .map(|i| {
            interp
                .aligned_basis(i)
                .expect("bases verified above")
                .clone()
        })
        .collect();
    let bounds = db.bounds().clone();
    let n_mu = bounds.n_mu();
    let box_lo = DVector::from_fn(n_mu, |i, _| {
        mus.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min)
    });
    let box_hi = DVector::from_fn(n_mu, |i, _| {
        mus.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max)
    });
    let ctx = Arc::new(RomContext {
        interp,
        mus,
        bases,
        bounds: bounds.clone(),
        box_lo,
        box_hi,
        warned: AtomicBool::new(false),
    });
    let n_c = constraints.len();
    let obj_ctx = Arc::clone(&ctx);
    let objective_fn = move |mu: &DVector<f64>| {
        let (w, dw) = obj_ctx.evaluate(mu)?;
        Ok(qoi_row(&objective, &w, &dw, mu))
    };
    let constraint_fn = move |mu: &DVector<f64>| {
        let mut c = DVector::zeros(n_c);
        let mut jac = DMatrix::zeros(n_c, mu.len());
        if n_c > 0 {
            let (w, dw) = ctx.evaluate(mu)?;
            for (r, q) in constraints.iter().enumerate() {
                let (value, grad) = qoi_row(q, &w, &dw, mu);
                c[r] = value;
                jac.row_mut(r).copy_from(&grad.transpose());
            }
        }
        Ok((c, jac))
    };
    Ok(NlpProblem::new(bounds, objective_fn, n_c, constraint_fn))
}

fn hdm_rows(
    sys: &AffineParametricSystem,
    qois: &[QuantityOfInterest],
    mu: &DVector<f64>,
) -> Result<Vec<(f64, DVector<f64>)>, EvalFailed> {
    let sol = sys.solve_full(mu)?;
    let mut rows = Vec::with_capacity(qois.len());
    for q in qois {
        let value = q.eval(&sol.w, mu);
        let adjoint = sol.solve_adjoint(&q.partial_state(&sol.w, mu));
        let mut grad = q.partial_mu(&sol.w, mu);
        for i in 0..mu.len() {
            let dres = sys.rhs_derivative(mu, i) - sys.matrix_derivative(mu, i) * &sol.w;
            grad[i] += adjoint.dot(&dres);
        }
        rows.push((value, grad));
    }
    Ok(rows)
}

/// Full-order counterpart of [`make_rom_nlp`]: every evaluation solves the
/// full system once and one adjoint per quantity, so gradient cost does not
/// grow with the parameter count.
pub fn make_hdm_nlp(
    sys: &AffineParametricSystem,
    objective: QuantityOfInterest,
    constraints: Vec<QuantityOfInterest>,
) -> NlpProblem {
    let bounds = sys.bounds().clone();
    let n_c = constraints.len();
    let sys_obj = sys.clone();
    let objective_fn = move |mu: &DVector<f64>| {
        let rows = hdm_rows(&sys_obj, std::slice::from_ref(&objective), mu)?;
        let (f, grad) = rows.into_iter().next().expect("one objective row");
        Ok((f, grad))
    };
    let sys_con = sys.clone();
    let constraint_fn = move |mu: &DVector<f64>| {
        let mut c = DVector::zeros(n_c);
        let mut jac = DMatrix::zeros(n_c, mu.len());
        if n_c > 0 {
            for (r, (value, grad)) in hdm_rows(&sys_con, &constraints, mu)?.into_iter().enumerate()
            {
                c[r] = value;
                jac.row_mut(r).copy_from(&grad.transpose());
            }
        }
        Ok((c, jac))
    };
    NlpProblem::new(bounds, objective_fn, n_c, constraint_fn)
}
