//! Linearized coupled fluid-structure dynamics at desk scale.
//!
//! A first-order fluid block `A w' + H w + R u' + G u = 0` couples to an
//! undamped second-order structure `M u'' + K u = P w`. The structure is
//! reduced by modal truncation, the fluid by frequency-domain sampling, and
//! the coupled spectrum is recovered from a small nonlinear eigenvalue
//! problem whose roots carry damping ratios. Reduced operator families over
//! the parameter box interpolate consistently and expose analytic
//! sensitivities of eigenvalues and damping ratios.

use nalgebra::{Cholesky, Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::interp::{InterpError, RbfConfig, RbfInterpolant};
use crate::linalg::{self, LinalgError};
use crate::manifold::{Chart, ManifoldError, ManifoldKind};
use crate::model::{ModelError, ParamBounds, Polynomial};

type C64 = Complex<f64>;
type CMatrix = DMatrix<C64>;
type CVector = DVector<C64>;

const MAX_EIG_ITERATIONS: usize = 200;
const EIG_REL_TOL: f64 = 1e-12;
const RESIDUAL_REL_TOL: f64 = 1e-10;
const COLLISION_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AeroError {
    #[error("block {name} is {rows}x{cols}, expected {exp_rows}x{exp_cols}")]
    BlockShape {
        name: &'static str,
        rows: usize,
        cols: usize,
        exp_rows: usize,
        exp_cols: usize,
    },
    #[error("mass matrix is not symmetric positive definite")]
    MassNotSpd,
    #[error("volume matrix must be diagonal with positive entries")]
    BadVolumes,
    #[error("requested {wanted} modes from a {available}-DOF structure")]
    TooManyModes { wanted: usize, available: usize },
    #[error("requested basis size {wanted} exceeds the {available} snapshot directions")]
    TooManySnapshots { wanted: usize, available: usize },
    #[error("snapshot family has numerical rank {rank}, below the requested size {wanted}")]
    SnapshotRank { wanted: usize, rank: usize },
    #[error("frequency sample {xi} makes the shifted fluid operator singular")]
    Resonant { xi: f64 },
    #[error("{lambda} is a pole of the fluid transfer block")]
    Pole { lambda: C64 },
    #[error("the eigenvalue formulation assumes a vanishing reduced damping block")]
    Damped,
    #[error("reduced frequency matrix must be diagonal with positive entries")]
    BadFrequencies,
    #[error("eigenvalue iteration from guess {index} did not converge within {iterations} steps")]
    NoConvergence { index: usize, iterations: usize },
    #[error("a zero eigenvalue has no damping ratio")]
    ZeroEigenvalue,
    #[error("eigenvalue is numerically defective, so its sensitivity is unavailable")]
    NearDefective,
    #[error("database is empty")]
    Empty,
    #[error("entry dimensions (k_s={got_ks}, k_f={got_kf}) differ from the database ({ks}, {kf})")]
    MixedDimensions {
        got_ks: usize,
        got_kf: usize,
        ks: usize,
        kf: usize,
    },
    #[error("entries {i} and {j} coincide in parameter space")]
    DuplicatePoint { i: usize, j: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

fn cx(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| C64::new(v, 0.0))
}

/// Matrix-valued affine map `B(mu) = B_0 + sum_j p_j(mu) B_j`.
#[derive(Debug, Clone)]
pub struct AffineBlock {
    base: DMatrix<f64>,
    terms: Vec<(Polynomial, DMatrix<f64>)>,
}

impl AffineBlock {
    pub fn constant(base: DMatrix<f64>) -> Self {
        Self { base, terms: Vec::new() }
    }

    pub fn new(
        base: DMatrix<f64>,
        terms: Vec<(Polynomial, DMatrix<f64>)>,
    ) -> Result<Self, AeroError> {
        for (_, t) in &terms {
            if t.nrows() != base.nrows() || t.ncols() != base.ncols() {
                return Err(AeroError::BlockShape {
                    name: "affine term",
                    rows: t.nrows(),
                    cols: t.ncols(),
                    exp_rows: base.nrows(),
                    exp_cols: base.ncols(),
                });
            }
        }
        Ok(Self { base, terms })
    }

    pub fn nrows(&self) -> usize {
        self.base.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.base.ncols()
    }

    pub fn eval(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.base.clone();
        for (p, t) in &self.terms {
            out += t * p.eval(mu.as_slice());
        }
        out
    }

    pub fn derivative(&self, mu: &DVector<f64>, axis: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.base.nrows(), self.base.ncols());
        for (p, t) in &self.terms {
            let g = p.gradient(mu.as_slice());
            if g[axis] != 0.0 {
                out += t * g[axis];
            }
        }
        out
    }
}

/// Full-order coupled model. The fluid block is first order in time with a
/// diagonal positive volume matrix; the structure is a symmetric FE pair.
#[derive(Debug, Clone)]
pub struct CoupledFom {
    bounds: ParamBounds,
    /// Diagonal volume matrix scaling the fluid time derivative.
    pub volumes: AffineBlock,
    /// Flux Jacobian with respect to the fluid state.
    pub flux_state: AffineBlock,
    /// Coupling block multiplying the structural velocity.
    pub flux_velocity: AffineBlock,
    /// Coupling block multiplying the structural displacement.
    pub flux_position: AffineBlock,
    pub mass: AffineBlock,
    pub damping: AffineBlock,
    pub stiffness: AffineBlock,
    /// Force Jacobian mapping the fluid state to structural loads.
    pub force: AffineBlock,
}

impl CoupledFom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bounds: ParamBounds,
        volumes: AffineBlock,
        flux_state: AffineBlock,
        flux_velocity: AffineBlock,
        flux_position: AffineBlock,
        mass: AffineBlock,
        damping: AffineBlock,
        stiffness: AffineBlock,
        force: AffineBlock,
    ) -> Result<Self, AeroError> {
        let n_f = volumes.nrows();
        let n_s = mass.nrows();
        let expect = |name: &'static str, b: &AffineBlock, r: usize, c: usize| {
            if b.nrows() != r || b.ncols() != c {
                Err(AeroError::BlockShape {
                    name,
                    rows: b.nrows(),
                    cols: b.ncols(),
                    exp_rows: r,
                    exp_cols: c,
                })
            } else {
                Ok(())
            }
        };
        expect("volumes", &volumes, n_f, n_f)?;
        expect("flux_state", &flux_state, n_f, n_f)?;
        expect("flux_velocity", &flux_velocity, n_f, n_s)?;
        expect("flux_position", &flux_position, n_f, n_s)?;
        expect("mass", &mass, n_s, n_s)?;
        expect("damping", &damping, n_s, n_s)?;
        expect("stiffness", &stiffness, n_s, n_s)?;
        expect("force", &force, n_s, n_f)?;
        Ok(Self {
            bounds,
            volumes,
            flux_state,
            flux_velocity,
            flux_position,
            mass,
            damping,
            stiffness,
            force,
        })
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn n_f(&self) -> usize {
        self.volumes.nrows()
    }

    pub fn n_s(&self) -> usize {
        self.mass.nrows()
    }

    /// Diagonal of the volume matrix, verified diagonal and positive.
    pub fn volume_diagonal(&self, mu: &DVector<f64>) -> Result<DVector<f64>, AeroError> {
        let a = self.volumes.eval(mu);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if i != j && a[(i, j)] != 0.0 {
                    return Err(AeroError::BadVolumes);
                }
            }
            if a[(i, i)] <= 0.0 || a[(i, i)].is_nan() {
                return Err(AeroError::BadVolumes);
            }
        }
        Ok(a.diagonal())
    }
}

/// First `k_s` generalized modes of the symmetric pair `(K, M)`.
///
/// Returns mass-orthonormal mode shapes (columns, ascending frequency, the
/// largest-magnitude entry of each made positive) and the diagonal matrix of
/// squared frequencies.
pub fn structural_modes(
    m: &DMatrix<f64>,
    k: &DMatrix<f64>,
    k_s: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), AeroError> {
    let n_s = m.nrows();
    if k_s > n_s {
        return Err(AeroError::TooManyModes { wanted: k_s, available: n_s });
    }
    if k.nrows() != n_s || k.ncols() != n_s || m.ncols() != n_s {
        return Err(AeroError::BlockShape {
            name: "stiffness",
            rows: k.nrows(),
            cols: k.ncols(),
            exp_rows: n_s,
            exp_cols: n_s,
        });
    }
    let chol = Cholesky::new(m.clone()).ok_or(AeroError::MassNotSpd)?;
    let l = chol.l();
    // C = L^-1 K L^-T shares eigenvalues with the pencil (K, M).
    let tmp = l
        .solve_lower_triangular(k)
        .ok_or(AeroError::MassNotSpd)?;
    let c = l
        .solve_lower_triangular(&tmp.transpose())
        .ok_or(AeroError::MassNotSpd)?;
    let eig = linalg::sym_eig(&linalg::symmetrize(&c))?;
    let mut x = DMatrix::zeros(n_s, k_s);
    for j in 0..k_s {
        let y = eig.vectors.column(j).clone_owned();
        let mut col = l
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or(AeroError::MassNotSpd)?;
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
        x.set_column(j, &col);
    }
    let omega2 = DMatrix::from_diagonal(&eig.values.rows(0, k_s).clone_owned());
    Ok((x, omega2))
}

/// Volume-orthonormal fluid basis from frequency-domain snapshots.
///
/// For every mode column and every sample frequency, a complex shifted
/// system produces one snapshot; real and imaginary parts are stacked and
/// compressed by a volume-weighted SVD so that `V^T A V = I`.
pub fn fluid_rob(
    fom: &CoupledFom,
    mu: &DVector<f64>,
    x: &DMatrix<f64>,
    xi_samples: &[f64],
    k_f: usize,
) -> Result<DMatrix<f64>, AeroError> {
    let n_f = fom.n_f();
    let k_s = x.ncols();
    let n_cols = 2 * k_s * xi_samples.len();
    if k_f > n_cols {
        return Err(AeroError::TooManySnapshots { wanted: k_f, available: n_cols });
    }
    let a = fom.volume_diagonal(mu)?;
    let h = cx(&fom.flux_state.eval(mu));
    let r = cx(&fom.flux_velocity.eval(mu));
    let g = cx(&fom.flux_position.eval(mu));
    let mut snapshots = DMatrix::zeros(n_f, n_cols);
    let mut col = 0;
    for i in 0..k_s {
        let mode: CVector = x.column(i).map(|v| C64::new(v, 0.0));
        for &xi in xi_samples {
            let jxi = C64::new(0.0, xi);
            let mut shifted = h.clone();
            for d in 0..n_f {
                shifted[(d, d)] += jxi * a[d];
            }
            let rhs = -(&r * jxi + &g) * &mode;
            let w = shifted
                .lu()
                .solve(&rhs)
                .ok_or(AeroError::Resonant { xi })?;
            for d in 0..n_f {
                snapshots[(d, col)] = w[d].re;
                snapshots[(d, col + 1)] = w[d].im;
            }
            col += 2;
        }
    }
    let sqrt_a = a.map(f64::sqrt);
    let mut weighted = snapshots;
    for d in 0..n_f {
        for c in 0..n_cols {
            weighted[(d, c)] *= sqrt_a[d];
        }
    }
    let svd = linalg::thin_svd(&weighted)?;
    let s = &svd.singular_values;
    let rank = s.iter().filter(|&&v| v > 1e-12 * s[0].max(f64::MIN_POSITIVE)).count();
    if rank < k_f {
        return Err(AeroError::SnapshotRank { wanted: k_f, rank });
    }
    let mut v = svd.u.columns(0, k_f).clone_owned();
    for d in 0..n_f {
        for c in 0..k_f {
            v[(d, c)] /= sqrt_a[d];
        }
    }
    Ok(v)
}

/// Reduced coupled operator blocks at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRom {
    pub h_r: DMatrix<f64>,
    pub r_r: DMatrix<f64>,
    pub g_r: DMatrix<f64>,
    pub p_r: DMatrix<f64>,
    pub d_r: DMatrix<f64>,
    pub omega_r2: DMatrix<f64>,
    k_s: usize,
    k_f: usize,
}

impl CoupledRom {
    pub fn new(
        h_r: DMatrix<f64>,
        r_r: DMatrix<f64>,
        g_r: DMatrix<f64>,
        p_r: DMatrix<f64>,
        d_r: DMatrix<f64>,
        omega_r2: DMatrix<f64>,
    ) -> Result<Self, AeroError> {
        let k_f = h_r.nrows();
        let k_s = omega_r2.nrows();
        let expect = |name: &'static str, m: &DMatrix<f64>, r: usize, c: usize| {
            if m.nrows() != r || m.ncols() != c {
                Err(AeroError::BlockShape {
                    name,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    exp_rows: r,
                    exp_cols: c,
                })
            } else {
                Ok(())
            }
        };
        expect("h_r", &h_r, k_f, k_f)?;
        expect("r_r", &r_r, k_f, k_s)?;
        expect("g_r", &g_r, k_f, k_s)?;
        expect("p_r", &p_r, k_s, k_f)?;
        expect("d_r", &d_r, k_s, k_s)?;
        expect("omega_r2", &omega_r2, k_s, k_s)?;
        let diag_norm = omega_r2.diagonal().norm();
        for i in 0..k_s {
            if omega_r2[(i, i)] <= 0.0 || omega_r2[(i, i)].is_nan() {
                return Err(AeroError::BadFrequencies);
            }
            for j in 0..k_s {
                if i != j && omega_r2[(i, j)].abs() > 1e-10 * diag_norm {
                    return Err(AeroError::BadFrequencies);
                }
            }
        }
        // Canonicalize: drop numerically zero off-diagonal residue.
        let omega_r2 = DMatrix::from_diagonal(&omega_r2.diagonal());
        Ok(Self { h_r, r_r, g_r, p_r, d_r, omega_r2, k_s, k_f })
    }

    pub fn k_s(&self) -> usize {
        self.k_s
    }

    pub fn k_f(&self) -> usize {
        self.k_f
    }

    /// Natural frequencies of the stand-alone structure, ascending.
    pub fn frequencies(&self) -> DVector<f64> {
        self.omega_r2.diagonal().map(f64::sqrt)
    }
}

/// Projects the full model onto `k_s` structural modes and a `k_f`-column
/// fluid basis built from the given frequency samples.
pub fn reduce(
    fom: &CoupledFom,
    mu: &DVector<f64>,
    k_s: usize,
    k_f: usize,
    xi_samples: &[f64],
) -> Result<CoupledRom, AeroError> {
    fom.bounds.validate(mu)?;
    let m = fom.mass.eval(mu);
    let k = fom.stiffness.eval(mu);
    let (x, omega_r2) = structural_modes(&m, &k, k_s)?;
    let v = fluid_rob(fom, mu, &x, xi_samples, k_f)?;
    let h = fom.flux_state.eval(mu);
    let r = fom.flux_velocity.eval(mu);
    let g = fom.flux_position.eval(mu);
    let p = fom.force.eval(mu);
    let d = fom.damping.eval(mu);
    CoupledRom::new(
        v.transpose() * h * &v,
        v.transpose() * r * &x,
        v.transpose() * g * &x,
        x.transpose() * p * &v,
        x.transpose() * d * &x,
        omega_r2,
    )
}

/// Dense first-order coupled operator over the state `(w_r, u_r', u_r)`.
pub fn dense_coupled_matrix(rom: &CoupledRom) -> DMatrix<f64> {
    let (k_s, k_f) = (rom.k_s, rom.k_f);
    let n = k_f + 2 * k_s;
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (k_f, k_f)).copy_from(&(-&rom.h_r));
    out.view_mut((0, k_f), (k_f, k_s)).copy_from(&(-&rom.r_r));
    out.view_mut((0, k_f + k_s), (k_f, k_s)).copy_from(&(-&rom.g_r));
    out.view_mut((k_f, 0), (k_s, k_f)).copy_from(&rom.p_r);
    out.view_mut((k_f, k_f), (k_s, k_s)).copy_from(&(-&rom.d_r));
    out.view_mut((k_f, k_f + k_s), (k_s, k_s)).copy_from(&(-&rom.omega_r2));
    for i in 0..k_s {
        out[(k_f + k_s + i, k_f + i)] = 1.0;
    }
    out
}

/// Complex block data for the structural nonlinear eigenvalue problem,
/// requiring an undamped structure.
#[derive(Debug)]
struct StructuralBlocks {
    n_ss: CMatrix,
    n_sf: CMatrix,
    n_ff: CMatrix,
    n_fs: CMatrix,
}

fn assemble_nss(omega_r2: &DMatrix<f64>) -> DMatrix<f64> {
    let k_s = omega_r2.nrows();
    let mut n_ss = DMatrix::zeros(2 * k_s, 2 * k_s);
    n_ss.view_mut((0, k_s), (k_s, k_s)).copy_from(&(-omega_r2));
    for i in 0..k_s {
        n_ss[(k_s + i, i)] = 1.0;
    }
    n_ss
}

impl StructuralBlocks {
    fn from_rom(rom: &CoupledRom) -> Result<Self, AeroError> {
        if rom.d_r.amax() > 1e-12 {
            return Err(AeroError::Damped);
        }
        let (k_s, k_f) = (rom.k_s, rom.k_f);
        let mut n_sf = DMatrix::zeros(2 * k_s, k_f);
        n_sf.view_mut((0, 0), (k_s, k_f)).copy_from(&rom.p_r);
        let mut n_fs = DMatrix::zeros(k_f, 2 * k_s);
        n_fs.view_mut((0, 0), (k_f, k_s)).copy_from(&(-&rom.r_r));
        n_fs.view_mut((0, k_s), (k_f, k_s)).copy_from(&(-&rom.g_r));
        Ok(Self {
            n_ss: cx(&assemble_nss(&rom.omega_r2)),
            n_sf: cx(&n_sf),
            n_ff: cx(&(-&rom.h_r)),
            n_fs: cx(&n_fs),
        })
    }

    /// Fluid transfer block `N_sf (lambda I - N_ff)^-1 N_fs` and, on
    /// request, its derivative in lambda (one extra shifted solve).
    fn transfer(&self, lambda: C64, with_derivative: bool) -> Result<(CMatrix, Option<CMatrix>), AeroError> {
        let k_f = self.n_ff.nrows();
        let mut shifted = -self.n_ff.clone();
        for i in 0..k_f {
            shifted[(i, i)] += lambda;
        }
        let lu = shifted.lu();
        let first = lu
            .solve(&self.n_fs)
            .ok_or(AeroError::Pole { lambda })?;
        let value = &self.n_sf * &first;
        let derivative = if with_derivative {
            let second = lu.solve(&first).ok_or(AeroError::Pole { lambda })?;
            Some(-(&self.n_sf * second))
        } else {
            None
        };
        Ok((value, derivative))
    }

    fn ns(&self, lambda: C64) -> Result<CMatrix, AeroError> {
        let (t, _) = self.transfer(lambda, false)?;
        let mut ns = &self.n_ss + t;
        for i in 0..ns.nrows() {
            ns[(i, i)] -= lambda;
        }
        Ok(ns)
    }
}

/// Structural eigenvalue problem matrix at a trial eigenvalue: the
/// second-order structure with the fluid folded in through its transfer
/// block.
pub fn assemble_ns(rom: &CoupledRom, lambda: C64) -> Result<CMatrix, AeroError> {
    StructuralBlocks::from_rom(rom)?.ns(lambda)
}

/// Damping ratio of an eigenvalue: the normalized negative real part, in
/// [-1, 1], positive for decaying modes.
pub fn damping_ratio(lambda: C64) -> Result<f64, AeroError> {
    let m = lambda.norm();
    if m == 0.0 {
        return Err(AeroError::ZeroEigenvalue);
    }
    Ok(-lambda.re / m)
}

/// One converged root of the nonlinear eigenvalue problem with unit-norm
/// eigenvectors and its damping ratio.
#[derive(Debug, Clone)]
pub struct StructEig {
    pub lambda: C64,
    /// Right null vector of the converged matrix.
    pub q_s: CVector,
    /// Left null vector of the converged matrix.
    pub p_s: CVector,
    pub zeta: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub modes: Vec<StructEig>,
    /// Guess index pairs that converged to the same root.
    pub collisions: Vec<(usize, usize)>,
}

/// Fluid-off starting guesses: `±j omega_i` for every retained mode.
pub fn initial_guesses(rom: &CoupledRom) -> Vec<C64> {
    let mut out = Vec::with_capacity(2 * rom.k_s);
    for w in rom.frequencies().iter() {
        out.push(C64::new(0.0, *w));
        out.push(C64::new(0.0, -*w));
    }
    out
}

fn fixed_point_eigs(
    guesses: &[C64],
    ns_at: &dyn Fn(C64) -> Result<CMatrix, AeroError>,
) -> Result<EigenSolution, AeroError> {
    let mut modes: Vec<StructEig> = Vec::with_capacity(guesses.len());
    for (index, &guess) in guesses.iter().enumerate() {
        let mut lambda = guess;
        let mut ns = ns_at(lambda)?;
        let mut iterations = 0;
        let mut converged = false;
        for m in 1..=MAX_EIG_ITERATIONS {
            iterations = m;
            // Frozen linear problem: eigenvalues of N_s(lambda) + lambda I.
            let mut frozen = ns.clone();
            for i in 0..frozen.nrows() {
                frozen[(i, i)] += lambda;
            }
            let t = linalg::complex_schur(&frozen)?.t;
            let mut next = lambda;
            let mut best = f64::INFINITY;
            for v in t.diagonal().iter() {
                let d = (v - lambda).norm();
                if d < best {
                    best = d;
                    next = *v;
                }
            }
            let delta = (next - lambda).norm();
            lambda = next;
            ns = ns_at(lambda)?;
            if delta <= EIG_REL_TOL * lambda.norm().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(AeroError::NoConvergence { index, iterations: MAX_EIG_ITERATIONS });
        }
        let eig = linalg::complex_eigen(&ns)?;
        let mut j_min = 0;
        for (j, v) in eig.values.iter().enumerate() {
            if v.norm() < eig.values[j_min].norm() {
                j_min = j;
            }
        }
        if eig.values[j_min].norm() > RESIDUAL_REL_TOL * ns.norm().max(f64::MIN_POSITIVE) {
            return Err(AeroError::NoConvergence { index, iterations });
        }
        modes.push(StructEig {
            lambda,
            q_s: eig.right[j_min].clone(),
            p_s: eig.left[j_min].clone(),
            zeta: damping_ratio(lambda)?,
            iterations,
        });
    }
    let mut collisions = Vec::new();
    for i in 0..modes.len() {
        for j in i + 1..modes.len() {
            let scale = modes[i]
                .lambda
                .norm()
                .max(modes[j].lambda.norm())
                .max(f64::MIN_POSITIVE);
            if (modes[i].lambda - modes[j].lambda).norm() <= COLLISION_REL_TOL * scale {
                collisions.push((i, j));
            }
        }
    }
    Ok(EigenSolution { modes, collisions })
}

/// Solves the nonlinear eigenvalue problem by fixed-point iteration: at each
/// step the transfer block is frozen at the current eigenvalue estimate, the
/// frozen matrix eigendecomposed, and the eigenvalue nearest the estimate
/// kept, until the update stalls in relative terms.
pub fn solve_structural_eigs(
    rom: &CoupledRom,
    guesses: &[C64],
) -> Result<EigenSolution, AeroError> {
    let blocks = StructuralBlocks::from_rom(rom)?;
    fixed_point_eigs(guesses, &|lambda| blocks.ns(lambda))
}

/// Collection of reduced coupled models sampled over the parameter box.
#[derive(Debug, Clone)]
pub struct AeroRomDatabase {
    bounds: ParamBounds,
    entries: Vec<AeroEntry>,
}

#[derive(Debug, Clone)]
pub struct AeroEntry {
    pub mu: DVector<f64>,
    pub rom: CoupledRom,
}

impl AeroRomDatabase {
    pub fn new(bounds: ParamBounds) -> Self {
        Self { bounds, entries: Vec::new() }
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[AeroEntry] {
        &self.entries
    }

    pub fn push(&mut self, entry: AeroEntry) -> Result<(), AeroError> {
        self.bounds.validate(&entry.mu)?;
        if let Some(first) = self.entries.first() {
            if entry.rom.k_s != first.rom.k_s || entry.rom.k_f != first.rom.k_f {
                return Err(AeroError::MixedDimensions {
                    got_ks: entry.rom.k_s,
                    got_kf: entry.rom.k_f,
                    ks: first.rom.k_s,
                    kf: first.rom.k_f,
                });
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if self.bounds.normalized_distance(&e.mu, &entry.mu) < 1e-12 {
                return Err(AeroError::DuplicatePoint { i, j: self.entries.len() });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Interpolator over the stored models: the fluid transfer block moves
    /// on the flat square-matrix chart (it is invariant to the per-point
    /// fluid-basis rotation), the squared-frequency block on the SPD chart.
    pub fn interpolator(&self, shape: Option<f64>) -> Result<NsInterpolator, AeroError> {
        if self.entries.is_empty() {
            return Err(AeroError::Empty);
        }
        let points: Vec<DVector<f64>> = self.entries.iter().map(|e| e.mu.clone()).collect();
        let rbf = RbfInterpolant::fit(
            &self.bounds,
            &points,
            &RbfConfig { shape, linear_tail: true },
        )?;
        let chart = Chart::new(ManifoldKind::Spd, self.entries[0].rom.omega_r2.clone())?;
        let mut gammas = Vec::with_capacity(self.entries.len());
        let mut blocks = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            gammas.push(chart.log(&e.rom.omega_r2)?);
            blocks.push(StructuralBlocks::from_rom(&e.rom)?);
        }
        Ok(NsInterpolator {
            rbf,
            blocks,
            chart,
            gammas,
            k_s: self.entries[0].rom.k_s,
        })
    }
}

/// Interpolated eigenvalue-problem operator and its first derivatives.
#[derive(Debug)]
pub struct NsOperators {
    pub ns: CMatrix,
    pub dns_dmu: Vec<CMatrix>,
    pub dns_dlambda: CMatrix,
}

/// Evaluates the structural eigenvalue matrix, at any parameter point and
/// trial eigenvalue, from a database of reduced models.
#[derive(Debug)]
pub struct NsInterpolator {
    rbf: RbfInterpolant,
    blocks: Vec<StructuralBlocks>,
    chart: Chart,
    gammas: Vec<DMatrix<f64>>,
    k_s: usize,
}

impl NsInterpolator {
    pub fn k_s(&self) -> usize {
        self.k_s
    }

    pub fn n_points(&self) -> usize {
        self.blocks.len()
    }

    fn ns_from_weights(&self, w: &DVector<f64>, lambda: C64) -> Result<CMatrix, AeroError> {
        let (t0, _) = self.blocks[0].transfer(lambda, false)?;
        let mut nf = t0.clone();
        for c in 1..self.blocks.len() {
            let (tc, _) = self.blocks[c].transfer(lambda, false)?;
            nf += (tc - &t0) * C64::new(w[c], 0.0);
        }
        let mut gamma = DMatrix::zeros(self.k_s, self.k_s);
        for (c, g) in self.gammas.iter().enumerate() {
            gamma += g * w[c];
        }
        let omega2 = self.chart.exp(&gamma)?;
        let mut ns = cx(&assemble_nss(&omega2)) + nf;
        for i in 0..ns.nrows() {
            ns[(i, i)] -= lambda;
        }
        Ok(ns)
    }

    /// Interpolated matrix only; use [`Self::ns_with_sensitivity`] when
    /// derivatives are needed.
    pub fn ns(&self, mu: &DVector<f64>, lambda: C64) -> Result<CMatrix, AeroError> {
        let w = self.rbf.weights(mu)?;
        self.ns_from_weights(&w, lambda)
    }

    /// Interpolated squared-frequency block.
    pub fn omega2(&self, mu: &DVector<f64>) -> Result<DMatrix<f64>, AeroError> {
        let w = self.rbf.weights(mu)?;
        let mut gamma = DMatrix::zeros(self.k_s, self.k_s);
        for (c, g) in self.gammas.iter().enumerate() {
            gamma += g * w[c];
        }
        Ok(self.chart.exp(&gamma)?)
    }

    /// Interpolated matrix with derivatives along every parameter axis and
    /// along the eigenvalue. The parameter derivative combines the weight
    /// jacobian on the transfer differences with the SPD chart derivative of
    /// the frequency block; the eigenvalue derivative interpolates the
    /// per-point rational derivative, exact because the weights are linear
    /// in the data.
    pub fn ns_with_sensitivity(
        &self,
        mu: &DVector<f64>,
        lambda: C64,
    ) -> Result<NsOperators, AeroError> {
        let w = self.rbf.weights_with_jacobian(mu)?;
        let n_mu = w.jacobian.ncols();
        let n_p = self.blocks.len();
        let n2 = 2 * self.k_s;

        let mut transfers = Vec::with_capacity(n_p);
        let mut dtransfers = Vec::with_capacity(n_p);
        for b in &self.blocks {
            let (t, d) = b.transfer(lambda, true)?;
            transfers.push(t);
            dtransfers.push(d.expect("requested derivative"));
        }
        let t0 = transfers[0].clone();
        let d0 = dtransfers[0].clone();
        let mut nf = t0.clone();
        let mut dnf_dl = d0.clone();
        for c in 1..n_p {
            nf += (&transfers[c] - &t0) * C64::new(w.values[c], 0.0);
            dnf_dl += (&dtransfers[c] - &d0) * C64::new(w.values[c], 0.0);
        }
        let mut dnf_dmu = vec![CMatrix::zeros(n2, n2); n_mu];
        for (i, d) in dnf_dmu.iter_mut().enumerate() {
            for (c, t) in transfers.iter().enumerate().skip(1) {
                *d += (t - &t0) * C64::new(w.jacobian[(c, i)], 0.0);
            }
        }

        let mut gamma = DMatrix::zeros(self.k_s, self.k_s);
        for (c, g) in self.gammas.iter().enumerate() {
            gamma += g * w.values[c];
        }
        let omega2 = self.chart.exp(&gamma)?;
        let mut ns = cx(&assemble_nss(&omega2)) + nf;
        for i in 0..n2 {
            ns[(i, i)] -= lambda;
        }

        let mut dns_dmu = Vec::with_capacity(n_mu);
        for (i, dnf) in dnf_dmu.into_iter().enumerate() {
            let mut dgamma = DMatrix::zeros(self.k_s, self.k_s);
            for (c, g) in self.gammas.iter().enumerate() {
                dgamma += g * w.jacobian[(c, i)];
            }
            let domega2 = self.chart.exp_derivative(&gamma, &dgamma)?;
            let mut d = dnf;
            d.view_mut((0, self.k_s), (self.k_s, self.k_s))
                .iter_mut()
                .zip(domega2.iter())
                .for_each(|(dst, src)| *dst -= C64::new(*src, 0.0));
            dns_dmu.push(d);
        }

        let mut dns_dlambda = dnf_dl;
        for i in 0..n2 {
            dns_dlambda[(i, i)] -= C64::new(1.0, 0.0);
        }
        Ok(NsOperators { ns, dns_dmu, dns_dlambda })
    }
}

/// Eigenvalue solve through the interpolated operator at an unsampled
/// parameter point.
pub fn solve_interpolated_eigs(
    interp: &NsInterpolator,
    mu: &DVector<f64>,
    guesses: &[C64],
) -> Result<EigenSolution, AeroError> {
    let w = interp.rbf.weights(mu)?;
    fixed_point_eigs(guesses, &|lambda| interp.ns_from_weights(&w, lambda))
}

/// Eigenvalue sensitivities from left/right eigenvectors: each is the
/// Rayleigh-quotient ratio of the parameter derivative to the eigenvalue
/// derivative of the operator.
pub fn eigenvalue_sensitivities(
    eig: &StructEig,
    ops: &NsOperators,
) -> Result<Vec<C64>, AeroError> {
    let denom = eig.p_s.dotc(&(&ops.dns_dlambda * &eig.q_s));
    let scale = ops.dns_dlambda.norm() * eig.p_s.norm() * eig.q_s.norm();
    if denom.norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(AeroError::NearDefective);
    }
    Ok(ops
        .dns_dmu
        .iter()
        .map(|d| -(eig.p_s.dotc(&(d * &eig.q_s))) / denom)
        .collect())
}

/// Damping-ratio gradient by the chain rule through the eigenvalue
/// sensitivities.
pub fn damping_sensitivities(
    eig: &StructEig,
    ops: &NsOperators,
) -> Result<DVector<f64>, AeroError> {
    let dlambda = eigenvalue_sensitivities(eig, ops)?;
    let lam = eig.lambda;
    let m = lam.norm();
    if m == 0.0 {
        return Err(AeroError::ZeroEigenvalue);
    }
    let dre = lam.re * lam.re / (m * m * m) - 1.0 / m;
    let dim = lam.re * lam.im / (m * m * m);
    Ok(DVector::from_iterator(
        dlambda.len(),
        dlambda.iter().map(|d| d.re * dre + d.im * dim),
    ))
}

/// Frequency samples spanning the modal band with headroom.
pub fn modal_band(omega_r2: &DMatrix<f64>, n_xi: usize) -> Vec<f64> {
    let w_max = omega_r2
        .diagonal()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .sqrt();
    (1..=n_xi)
        .map(|l| 1.5 * w_max * l as f64 / n_xi as f64)
        .collect()
}

/// CSV rows `mu_*, mode, lambda_re, lambda_im, zeta` for a converged set.
pub fn damping_csv(mu: &DVector<f64>, modes: &[StructEig]) -> String {
    let mut out = String::new();
    for i in 0..mu.len() {
        out.push_str(&format!("mu_{i},"));
    }
    out.push_str("mode,lambda_re,lambda_im,zeta\n");
    for (j, m) in modes.iter().enumerate() {
        for v in mu.iter() {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!(
            "{j},{:.16e},{:.16e},{:.16e}\n",
            m.lambda.re, m.lambda.im, m.zeta
        ));
    }
    out
}

/// Deterministic desk-scale coupled model: a grounded spring-mass chain
/// coupled to a stable, diagonalizable fluid block. The first parameter
/// scales an extra stiffness layer, the second the position coupling;
/// `coupling` scales every fluid-structure block and zero decouples them.
pub fn synthetic_coupled(n_s: usize, n_f: usize, coupling: f64, seed: u64) -> CoupledFom {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bounds = ParamBounds::from_slices(&[0.5, 0.5], &[2.0, 2.0]).unwrap();

    let masses = DVector::from_fn(n_s, |_, _| rng.gen_range(1.0..2.0));
    let k0 = chain_stiffness(n_s, &mut rng, 50.0, 150.0, 1);
    let k1 = chain_stiffness(n_s, &mut rng, 20.0, 60.0, 2);

    let volumes = DVector::from_fn(n_f, |_, _| rng.gen_range(0.5..1.5));
    let raw = DMatrix::from_fn(n_f, n_f, |_, _| rng.gen_range(-1.0..1.0));
    let q = raw.qr().q();
    let d_pos = DVector::from_fn(n_f, |_, _| rng.gen_range(0.5..3.0));
    let b = DMatrix::from_fn(n_f, n_f, |_, _| rng.gen_range(-1.0..1.0));
    // Positive-definite symmetric part keeps every eigenvalue of the fluid
    // generator in the right half plane regardless of the skew part.
    let s = &q * DMatrix::from_diagonal(&d_pos) * q.transpose()
        + (&b - b.transpose()) / (n_f as f64).sqrt();
    let h = DMatrix::from_diagonal(&volumes) * s;

    let r = DMatrix::from_fn(n_f, n_s, |_, _| rng.gen_range(-1.0..1.0)) * coupling;
    let g0 = DMatrix::from_fn(n_f, n_s, |_, _| rng.gen_range(-1.0..1.0)) * coupling;
    let g1 = DMatrix::from_fn(n_f, n_s, |_, _| rng.gen_range(-1.0..1.0)) * coupling;
    let p = DMatrix::from_fn(n_s, n_f, |_, _| rng.gen_range(-1.0..1.0)) * coupling;

    CoupledFom::new(
        bounds,
        AffineBlock::constant(DMatrix::from_diagonal(&volumes)),
        AffineBlock::constant(h),
        AffineBlock::constant(r),
        AffineBlock::new(g0, vec![(Polynomial::linear(2, 1, 1.0), g1)]).unwrap(),
        AffineBlock::constant(DMatrix::from_diagonal(&masses)),
        AffineBlock::constant(DMatrix::zeros(n_s, n_s)),
        AffineBlock::new(k0, vec![(Polynomial::linear(2, 0, 1.0), k1)]).unwrap(),
        AffineBlock::constant(p),
    )
    .expect("synthetic blocks are consistently shaped")
}

/// Grounded chain stiffness over every `stride`-th link.
fn chain_stiffness(
    n_s: usize,
    rng: &mut ChaCha12Rng,
    lo: f64,
    hi: f64,
    stride: usize,
) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n_s, n_s);
    k[(0, 0)] += rng.gen_range(lo..hi);
    for i in (stride..n_s).step_by(stride) {
        let kl = rng.gen_range(lo..hi);
        k[(i - 1, i - 1)] += kl;
        k[(i, i)] += kl;
        k[(i - 1, i)] -= kl;
        k[(i, i - 1)] -= kl;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_fom() -> CoupledFom {
        synthetic_coupled(10, 40, 1.0, 7)
    }

    fn center(fom: &CoupledFom) -> DVector<f64> {
        fom.bounds().center()
    }

    fn test_rom(fom: &CoupledFom, mu: &DVector<f64>) -> CoupledRom {
        let omega2 = structural_modes(&fom.mass.eval(mu), &fom.stiffness.eval(mu), 3)
            .unwrap()
            .1;
        reduce(fom, mu, 3, 8, &modal_band(&omega2, 3)).unwrap()
    }

    #[test]
    fn structural_modes_recover_a_diagonal_pair() {
        let m = DMatrix::identity(3, 3);
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0]));
        let (x, omega2) = structural_modes(&m, &k, 2).unwrap();
        assert!((omega2[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((omega2[(1, 1)] - 4.0).abs() < 1e-12);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((x[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(x.column(0).rows(1, 2).amax() < 1e-12);
    }

    #[test]
    fn modal_basis_is_mass_orthonormal_and_diagonalizes_the_stiffness() {
        let fom = test_fom();
        let mu = center(&fom);
        let m = fom.mass.eval(&mu);
        let k = fom.stiffness.eval(&mu);
        let (x, omega2) = structural_modes(&m, &k, 6).unwrap();
        let gram = x.transpose() * &m * &x;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
        let projected = x.transpose() * &k * &x;
        assert!((&projected - &omega2).amax() < 1e-8 * omega2.amax());
        for i in 1..6 {
            assert!(omega2[(i, i)] >= omega2[(i - 1, i - 1)]);
        }
    }

    #[test]
    fn chain_frequencies_match_a_nonsymmetric_oracle() {
        // Independent route: unsymmetric eigendecomposition of M^-1 K.
        let fom = test_fom();
        let mu = center(&fom);
        let m = fom.mass.eval(&mu);
        let k = fom.stiffness.eval(&mu);
        let (_, omega2) = structural_modes(&m, &k, 10).unwrap();
        let minv_k = m.clone().try_inverse().unwrap() * &k;
        let oracle = linalg::real_eigen(&minv_k).unwrap();
        for (i, v) in oracle.values.iter().enumerate() {
            assert!(v.im.abs() < 1e-8);
            let rel = (v.re - omega2[(i, i)]).abs() / omega2[(i, i)];
            assert!(rel < 1e-8, "frequency {i} off by {rel:.3e}");
        }
    }

    #[test]
    fn fluid_basis_is_volume_orthonormal() {
        let fom = test_fom();
        let mu = center(&fom);
        let (x, omega2) = structural_modes(&fom.mass.eval(&mu), &fom.stiffness.eval(&mu), 3)
            .unwrap();
        let xi = modal_band(&omega2, 3);
        let v = fluid_rob(&fom, &mu, &x, &xi, 10).unwrap();
        let a = DMatrix::from_diagonal(&fom.volume_diagonal(&mu).unwrap());
        let gram = v.transpose() * a * &v;
        assert!((gram - DMatrix::identity(10, 10)).amax() < 1e-10);

        match fluid_rob(&fom, &mu, &x, &xi, 2 * 3 * 3 + 1) {
            Err(AeroError::TooManySnapshots { .. }) => {}
            other => panic!("expected a snapshot-count error, got {other:?}"),
        }
    }

    #[test]
    fn fluid_projection_error_decreases_with_basis_size() {
        let fom = test_fom();
        let mu = center(&fom);
        let (x, omega2) = structural_modes(&fom.mass.eval(&mu), &fom.stiffness.eval(&mu), 3)
            .unwrap();
        let xi = modal_band(&omega2, 4);
        // Held-out snapshot at a frequency absent from the samples.
        let held_out = 0.37 * xi[0];
        let a_diag = fom.volume_diagonal(&mu).unwrap();
        let h = cx(&fom.flux_state.eval(&mu));
        let r = cx(&fom.flux_velocity.eval(&mu));
        let g = cx(&fom.flux_position.eval(&mu));
        let mode: CVector = x.column(0).map(|v| C64::new(v, 0.0));
        let jxi = C64::new(0.0, held_out);
        let mut shifted = h.clone();
        for d in 0..fom.n_f() {
            shifted[(d, d)] += jxi * a_diag[d];
        }
        let w = shifted.lu().solve(&(-(&r * jxi + &g) * &mode)).unwrap();
        let target = w.map(|v| v.re);

        let a = DMatrix::from_diagonal(&a_diag);
        let mut errors = Vec::new();
        for k_f in [2usize, 6, 12] {
            let v = fluid_rob(&fom, &mu, &x, &xi, k_f).unwrap();
            let residual = &target - &v * (v.transpose() * &a * &target);
            errors.push((residual.transpose() * &a * &residual)[(0, 0)].sqrt());
        }
        assert!(errors[1] <= errors[0] + 1e-12);
        assert!(errors[2] <= errors[1] + 1e-12);
    }

    #[test]
    fn zero_frequency_snapshots_have_structural_rank() {
        let fom = test_fom();
        let mu = center(&fom);
        let (x, _) = structural_modes(&fom.mass.eval(&mu), &fom.stiffness.eval(&mu), 3).unwrap();
        // Purely real snapshots: the imaginary stack vanishes, so at most
        // k_s directions survive.
        assert!(fluid_rob(&fom, &mu, &x, &[0.0], 3).is_ok());
        match fluid_rob(&fom, &mu, &x, &[0.0], 4) {
            Err(AeroError::SnapshotRank { rank, .. }) => assert_eq!(rank, 3),
            other => panic!("expected a rank error, got {other:?}"),
        }
    }

    #[test]
    fn decoupled_operator_reduces_to_the_shifted_structural_block() {
        let fom = test_fom();
        let mu = center(&fom);
        let mut rom = test_rom(&fom, &mu);
        rom.p_r.fill(0.0);
        let lambda = C64::new(0.3, 5.0);
        let ns = assemble_ns(&rom, lambda).unwrap();
        let mut expected = cx(&assemble_nss(&rom.omega_r2));
        for i in 0..expected.nrows() {
            expected[(i, i)] -= lambda;
        }
        assert!((ns - expected).norm() < 1e-14);
    }

    #[test]
    fn fixed_point_roots_match_the_dense_spectrum() {
        let fom = test_fom();
        let mu = center(&fom);
        let rom = test_rom(&fom, &mu);
        let sol = solve_structural_eigs(&rom, &initial_guesses(&rom)).unwrap();
        assert!(sol.collisions.is_empty());
        let dense = linalg::real_eigen(&dense_coupled_matrix(&rom)).unwrap();
        for eig in &sol.modes {
            let nearest = dense
                .values
                .iter()
                .map(|v| (v - eig.lambda).norm())
                .fold(f64::INFINITY, f64::min);
            let rel = nearest / eig.lambda.norm();
            assert!(rel < 1e-8, "root {} off the dense spectrum by {rel:.3e}", eig.lambda);
            assert!(eig.zeta.abs() <= 1.0);
            assert!(eig.zeta * eig.lambda.re <= 0.0 || eig.lambda.re == 0.0);
            // Null-vector quality transfers from the converged residual.
            let ns = assemble_ns(&rom, eig.lambda).unwrap();
            assert!((&ns * &eig.q_s).norm() <= 1e-10 * ns.norm());
            assert!((ns.adjoint() * &eig.p_s).norm() <= 1e-10 * ns.norm());
        }
    }

    #[test]
    fn zero_coupling_leaves_modes_undamped() {
        let fom = test_fom();
        let mu = center(&fom);
        let mut rom = test_rom(&fom, &mu);
        rom.p_r.fill(0.0);
        rom.r_r.fill(0.0);
        rom.g_r.fill(0.0);
        let sol = solve_structural_eigs(&rom, &initial_guesses(&rom)).unwrap();
        let omega = rom.frequencies();
        for (idx, eig) in sol.modes.iter().enumerate() {
            let w = omega[idx / 2];
            let sign = if idx % 2 == 0 { 1.0 } else { -1.0 };
            assert!((eig.lambda - C64::new(0.0, sign * w)).norm() <= 1e-12 * w);
            assert!(eig.zeta.abs() <= 1e-12);
        }
    }

    #[test]
    fn damping_ratio_matches_closed_forms() {
        assert!((damping_ratio(C64::new(-1.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(damping_ratio(C64::new(0.0, 1.0)).unwrap().abs() < 1e-15);
        assert!(damping_ratio(C64::new(0.0, -1.0)).unwrap().abs() < 1e-15);
        let zeta = 0.05;
        let omega = 3.0;
        let lambda = C64::new(-zeta * omega, omega * (1.0 - zeta * zeta).sqrt());
        assert!((damping_ratio(lambda).unwrap() - zeta).abs() < 1e-14);
        assert!(matches!(
            damping_ratio(C64::new(0.0, 0.0)),
            Err(AeroError::ZeroEigenvalue)
        ));
    }

    fn test_database(fom: &CoupledFom, levels: usize) -> AeroRomDatabase {
        let bounds = fom.bounds().clone();
        let mut db = AeroRomDatabase::new(bounds.clone());
        let lo = bounds.lower();
        let hi = bounds.upper();
        for i in 0..levels {
            for j in 0..levels {
                let t = |a: f64, b: f64, s: usize| {
                    a + (b - a) * s as f64 / (levels - 1) as f64
                };
                let mu = DVector::from_vec(vec![
                    t(lo[0], hi[0], i),
                    t(lo[1], hi[1], j),
                ]);
                db.push(AeroEntry { mu: mu.clone(), rom: test_rom(fom, &mu) })
                    .unwrap();
            }
        }
        db
    }

    #[test]
    fn interpolation_reproduces_stored_operators() {
        let fom = test_fom();
        let db = test_database(&fom, 3);
        let interp = db.interpolator(None).unwrap();
        let lambda = C64::new(0.2, 6.0);
        for e in db.entries() {
            let direct = assemble_ns(&e.rom, lambda).unwrap();
            let interpolated = interp.ns(&e.mu, lambda).unwrap();
            let rel = (&interpolated - &direct).norm() / direct.norm();
            assert!(rel < 1e-8, "reproduction off by {rel:.3e} at {:?}", e.mu);
        }
    }

    #[test]
    fn interpolated_parameter_derivatives_match_finite_differences() {
        let fom = test_fom();
        let db = test_database(&fom, 3);
        let interp = db.interpolator(None).unwrap();
        let lambda = C64::new(0.1, 7.0);
        let mu = DVector::from_vec(vec![1.13, 1.62]);
        let ops = interp.ns_with_sensitivity(&mu, lambda).unwrap();
        for i in 0..2 {
            let h = 1e-5;
            let mut plus = mu.clone();
            plus[i] += h;
            let mut minus = mu.clone();
            minus[i] -= h;
            let fd = (interp.ns(&plus, lambda).unwrap() - interp.ns(&minus, lambda).unwrap())
                / C64::new(2.0 * h, 0.0);
            let rel = (&ops.dns_dmu[i] - &fd).norm() / fd.norm().max(1e-300);
            assert!(rel < 1e-6, "axis {i} derivative off by {rel:.3e}");
        }
    }

    #[test]
    fn interpolated_eigenvalue_derivative_matches_finite_differences() {
        let fom = test_fom();
        let db = test_database(&fom, 3);
        let interp = db.interpolator(None).unwrap();
        let lambda = C64::new(0.1, 7.0);
        let mu = DVector::from_vec(vec![1.13, 1.62]);
        let ops = interp.ns_with_sensitivity(&mu, lambda).unwrap();
        let h = 1e-4;
        let fd = (interp.ns(&mu, lambda + C64::new(h, 0.0)).unwrap()
            - interp.ns(&mu, lambda - C64::new(h, 0.0)).unwrap())
            / C64::new(2.0 * h, 0.0);
        let rel = (&ops.dns_dlambda - &fd).norm() / fd.norm();
        assert!(rel < 1e-8, "eigenvalue derivative off by {rel:.3e}");
    }

    #[test]
    fn parameter_independent_database_has_zero_sensitivities() {
        let fom = test_fom();
        let mu_build = center(&fom);
        let rom = test_rom(&fom, &mu_build);
        let bounds = fom.bounds().clone();
        let mut db = AeroRomDatabase::new(bounds);
        for mu in [
            DVector::from_vec(vec![0.7, 0.7]),
            DVector::from_vec(vec![1.8, 0.9]),
            DVector::from_vec(vec![0.9, 1.8]),
            DVector::from_vec(vec![1.6, 1.6]),
        ] {
            db.push(AeroEntry { mu, rom: rom.clone() }).unwrap();
        }
        let interp = db.interpolator(None).unwrap();
        let mu = DVector::from_vec(vec![1.2, 1.3]);
        let guesses = initial_guesses(&rom);
        let sol = solve_interpolated_eigs(&interp, &mu, &guesses).unwrap();
        let eig = &sol.modes[0];
        let ops = interp.ns_with_sensitivity(&mu, eig.lambda).unwrap();
        let dzeta = damping_sensitivities(eig, &ops).unwrap();
        assert!(dzeta.amax() < 1e-10, "constant family must have flat damping");
    }

    #[test]
    fn damping_sensitivities_match_the_full_pipeline() {
        let fom = test_fom();
        let db = test_database(&fom, 3);
        let interp = db.interpolator(None).unwrap();
        let mu = DVector::from_vec(vec![1.13, 1.62]);
        let rom_near = test_rom(&fom, &mu);
        let guesses = initial_guesses(&rom_near);
        let sol = solve_interpolated_eigs(&interp, &mu, &guesses).unwrap();

        for eig in sol.modes.iter().take(2) {
            let ops = interp.ns_with_sensitivity(&mu, eig.lambda).unwrap();
            let dzeta = damping_sensitivities(eig, &ops).unwrap();
            let h = 1e-5;
            let mut fd = DVector::zeros(2);
            for i in 0..2 {
                let mut plus = mu.clone();
                plus[i] += h;
                let mut minus = mu.clone();
                minus[i] -= h;
                let zp = solve_interpolated_eigs(&interp, &plus, &[eig.lambda])
                    .unwrap()
                    .modes[0]
                    .zeta;
                let zm = solve_interpolated_eigs(&interp, &minus, &[eig.lambda])
                    .unwrap()
                    .modes[0]
                    .zeta;
                fd[i] = (zp - zm) / (2.0 * h);
            }
            let scale = fd.amax().max(dzeta.amax()).max(1e-300);
            let rel = (&dzeta - &fd).amax() / scale;
            assert!(rel < 1e-4, "damping gradient off by {rel:.3e} at {}", eig.lambda);
        }
    }

    #[test]
    fn pure_imaginary_eigenvalue_collapses_the_chain_rule() {
        // One-dimensional operator with dN/dlambda = -1 and dN/dmu = s makes
        // dlambda/dmu = s; at lambda = j the damping gradient is -Re(s).
        let s = 0.3;
        let eig = StructEig {
            lambda: C64::new(0.0, 1.0),
            q_s: CVector::from_element(1, C64::new(1.0, 0.0)),
            p_s: CVector::from_element(1, C64::new(1.0, 0.0)),
            zeta: 0.0,
            iterations: 1,
        };
        let ops = NsOperators {
            ns: CMatrix::zeros(1, 1),
            dns_dmu: vec![CMatrix::from_element(1, 1, C64::new(s, 0.0))],
            dns_dlambda: CMatrix::from_element(1, 1, C64::new(-1.0, 0.0)),
        };
        let dl = eigenvalue_sensitivities(&eig, &ops).unwrap();
        assert!((dl[0] - C64::new(s, 0.0)).norm() < 1e-15);
        let dz = damping_sensitivities(&eig, &ops).unwrap();
        assert!((dz[0] + s).abs() < 1e-15);
    }

    #[test]
    fn database_rejects_inconsistent_entries() {
        let fom = test_fom();
        let mu = center(&fom);
        let rom = test_rom(&fom, &mu);
        let mut db = AeroRomDatabase::new(fom.bounds().clone());
        db.push(AeroEntry { mu: mu.clone(), rom: rom.clone() }).unwrap();

        match db.push(AeroEntry { mu: mu.clone(), rom: rom.clone() }) {
            Err(AeroError::DuplicatePoint { .. }) => {}
            other => panic!("expected a duplicate error, got {other:?}"),
        }

        let omega2 = structural_modes(&fom.mass.eval(&mu), &fom.stiffness.eval(&mu), 2)
            .unwrap()
            .1;
        let smaller = reduce(&fom, &DVector::from_vec(vec![0.8, 0.8]), 2, 6, &modal_band(&omega2, 3))
            .unwrap();
        match db.push(AeroEntry { mu: DVector::from_vec(vec![0.8, 0.8]), rom: smaller }) {
            Err(AeroError::MixedDimensions { .. }) => {}
            other => panic!("expected a dimension error, got {other:?}"),
        }

        match AeroRomDatabase::new(fom.bounds().clone()).interpolator(None) {
            Err(AeroError::Empty) => {}
            other => panic!("expected an empty error, got {other:?}"),
        }
    }

    #[test]
    fn damped_reductions_are_rejected_by_the_eigenvalue_path() {
        let fom = test_fom();
        let mu = center(&fom);
        let mut rom = test_rom(&fom, &mu);
        rom.d_r[(0, 0)] = 0.1;
        match assemble_ns(&rom, C64::new(0.0, 1.0)) {
            Err(AeroError::Damped) => {}
            other => panic!("expected a damping rejection, got {other:?}"),
        }
    }
}
