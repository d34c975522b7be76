//! Shared readers for the `[sampling]` and `[interpolation]` sections.

use nalgebra::DVector;
use romkit::database::{full_factorial, latin_hypercube, GreedyConfig, GreedyStrategy};
use romkit::manifold::ManifoldKind;
use romkit::model::ParamBounds;

use crate::config::RunConfig;
use crate::CliError;

/// Strategy parameters read as a pool: each strategy takes what it needs,
/// so one section can parameterize a whole benchmark sweep.
pub struct StrategyPool {
    n_pi: Option<usize>,
    gamma: f64,
    tau_init: f64,
    n_init: Option<usize>,
}

pub fn read_pool(cfg: &RunConfig) -> Result<StrategyPool, CliError> {
    let pool = StrategyPool {
        n_pi: cfg.usize_opt("sampling", "n_pi")?,
        gamma: cfg.f64_opt("sampling", "gamma")?.unwrap_or(1.0),
        tau_init: cfg.f64_opt("sampling", "tau_init")?.unwrap_or(1.0),
        n_init: cfg.usize_opt("sampling", "n_init")?,
    };
    if pool.n_pi == Some(0) {
        return Err(CliError::Config("[sampling] n_pi must be at least 1".into()));
    }
    if pool.n_init == Some(0) {
        return Err(CliError::Config("[sampling] n_init must be at least 1".into()));
    }
    Ok(pool)
}

pub fn build_strategy(name: &str, pool: &StrategyPool) -> Result<GreedyStrategy, CliError> {
    let need = |key: &str, value: Option<usize>| {
        value.ok_or_else(|| {
            CliError::Config(format!("strategy `{name}` needs `[sampling] {key}`"))
        })
    };
    match name {
        "classical" => Ok(GreedyStrategy::Classical),
        "random" => Ok(GreedyStrategy::Random { n_pi: need("n_pi", pool.n_pi)? }),
        "saturation" => Ok(GreedyStrategy::Saturation {
            n_pi: need("n_pi", pool.n_pi)?,
            gamma: pool.gamma,
            tau_init: pool.tau_init,
        }),
        "surrogate" => Ok(GreedyStrategy::Surrogate { n_init: need("n_init", pool.n_init)? }),
        other => Err(CliError::Config(format!(
            "unknown sampling strategy `{other}` (known: classical, random, saturation, surrogate)"
        ))),
    }
}

pub fn read_manifold(cfg: &RunConfig) -> Result<ManifoldKind, CliError> {
    match cfg.str_opt("interpolation", "manifold") {
        None | Some("real") => Ok(ManifoldKind::Real),
        Some("nonsingular") => Ok(ManifoldKind::Nonsingular),
        Some("spd") => Ok(ManifoldKind::Spd),
        Some(other) => Err(CliError::Config(format!(
            "[interpolation] manifold: unknown kind `{other}` (known: real, nonsingular, spd)"
        ))),
    }
}

/// Builds the greedy configuration shared by `build-db` and `greedy-bench`.
/// `seed_override` comes from the command line and wins over the file.
pub fn greedy_config(
    cfg: &RunConfig,
    strategy: GreedyStrategy,
    seed_override: Option<u64>,
) -> Result<GreedyConfig, CliError> {
    let epsilon_tol = cfg.f64_req("sampling", "epsilon_tol")?;
    if !(epsilon_tol > 0.0 && epsilon_tol.is_finite()) {
        return Err(CliError::Config(format!(
            "[sampling] epsilon_tol must be positive and finite, got {epsilon_tol}"
        )));
    }
    let seed = match seed_override {
        Some(s) => {
            cfg.ignore("sampling", "seed");
            s
        }
        None => cfg.u64_req("sampling", "seed")?,
    };
    let mut gc = GreedyConfig::new(strategy, epsilon_tol, seed);
    gc.kind = read_manifold(cfg)?;
    gc.shape = cfg.f64_opt("interpolation", "shape")?;
    gc.max_iterations = cfg.usize_opt("sampling", "max_iterations")?;
    gc.sanity_size = cfg.usize_opt("sampling", "sanity_size")?;
    Ok(gc)
}

/// Candidate set from `[sampling] grid`: a full-factorial lattice with
/// `levels` points per axis, or a Latin-hypercube draw of `n_candidates`
/// points sharing the sampling seed.
pub fn candidates(
    cfg: &RunConfig,
    bounds: &ParamBounds,
    seed: u64,
) -> Result<Vec<DVector<f64>>, CliError> {
    match cfg.str_opt("sampling", "grid").unwrap_or("full_factorial") {
        "full_factorial" => {
            let levels = cfg.usize_req("sampling", "levels")?;
            if levels < 2 {
                return Err(CliError::Config(format!(
                    "[sampling] levels must be at least 2, got {levels}"
                )));
            }
            full_factorial(bounds, &vec![levels; bounds.n_mu()])
                .map_err(|e| CliError::Config(format!("[sampling] grid: {e}")))
        }
        "latin_hypercube" => {
            let m = cfg.usize_req("sampling", "n_candidates")?;
            if m == 0 {
                return Err(CliError::Config("[sampling] n_candidates must be at least 1".into()));
            }
            Ok(latin_hypercube(bounds, m, seed))
        }
        other => Err(CliError::Config(format!(
            "[sampling] grid: unknown kind `{other}` (known: full_factorial, latin_hypercube)"
        ))),
    }
}
