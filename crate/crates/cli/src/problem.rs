//! Problem-definition files and the objective/constraint recipes built on
//! them.

use nalgebra::DVector;
use romkit::model::{AffineParametricSystem, QuantityOfInterest};
use romkit::problems::{budget_qoi, compliance_qoi, diffusion_bar};

use crate::config::RunConfig;
use crate::CliError;

/// A parametric system plus the bytes of the file that defined it, so
/// outputs can hash their full provenance.
#[derive(Debug)]
pub struct Problem {
    pub system: AffineParametricSystem,
    pub bytes: Vec<u8>,
}

/// Loads the problem file referenced by `[problem] path` in a run
/// configuration. The path resolves relative to the configuration file.
pub fn load_for(cfg: &RunConfig) -> Result<Problem, CliError> {
    let path = cfg.resolve(cfg.str_req("problem", "path")?);
    load(&path)
}

/// Reads a problem-definition file: `[problem] kind = ...` plus
/// kind-specific keys.
pub fn load(path: &std::path::Path) -> Result<Problem, CliError> {
    let cfg = RunConfig::load(path)?;
    let kind = cfg.str_req("problem", "kind")?.to_string();
    let system = match kind.as_str() {
        "diffusion_bar" => {
            let n_cells = cfg.usize_req("problem", "n_cells")?;
            if n_cells < 3 {
                return Err(CliError::Config(format!(
                    "{}: diffusion_bar needs n_cells >= 3, got {n_cells}",
                    path.display()
                )));
            }
            diffusion_bar(n_cells)
        }
        other => {
            return Err(CliError::Config(format!(
                "{}: unsupported problem kind `{other}` (supported: diffusion_bar)",
                path.display()
            )))
        }
    };
    cfg.finish(&["problem"])?;
    Ok(Problem { system, bytes: cfg.bytes().to_vec() })
}

/// Settings for the `optimize` subcommand, read from `[optimizer]`.
#[derive(Debug)]
pub struct OptimizerSpec {
    pub tol: f64,
    pub mu0: DVector<f64>,
    pub regularization: f64,
    pub target: DVector<f64>,
    pub budget: Option<f64>,
    pub seed: u64,
}

pub fn optimizer_spec(cfg: &RunConfig, n_mu: usize) -> Result<OptimizerSpec, CliError> {
    let tol = cfg.f64_req("optimizer", "tol")?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Config(format!(
            "[optimizer] tol must be positive and finite, got {tol}"
        )));
    }
    let mu0 = cfg.f64_list_req("optimizer", "mu0")?;
    if mu0.len() != n_mu {
        return Err(CliError::Config(format!(
            "[optimizer] mu0 has {} values, the problem has {n_mu} parameters",
            mu0.len()
        )));
    }
    let target = cfg.f64_list_req("optimizer", "target")?;
    if target.len() != n_mu {
        return Err(CliError::Config(format!(
            "[optimizer] target has {} values, the problem has {n_mu} parameters",
            target.len()
        )));
    }
    Ok(OptimizerSpec {
        tol,
        mu0: DVector::from_vec(mu0),
        regularization: cfg.f64_req("optimizer", "regularization")?,
        target: DVector::from_vec(target),
        budget: cfg.f64_opt("optimizer", "budget")?,
        seed: cfg.u64_opt("optimizer", "seed")?.unwrap_or(0),
    })
}

/// Load work plus a quadratic pull toward the target parameters: smooth,
/// bounded below, and with analytic gradients on both evaluation paths.
pub fn objective(sys: &AffineParametricSystem, spec: &OptimizerSpec) -> QuantityOfInterest {
    compliance_qoi(sys)
        + QuantityOfInterest::parameter_quadratic(spec.regularization, spec.target.clone())
}

pub fn constraints(spec: &OptimizerSpec) -> Vec<QuantityOfInterest> {
    match spec.budget {
        Some(limit) => vec![budget_qoi(limit)],
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn loads_a_bar_and_rejects_unknown_kinds() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[problem]\nkind = diffusion_bar\nn_cells = 12").unwrap();
        let p = load(f.path()).unwrap();
        assert_eq!(p.system.n_mu(), 3);
        assert_eq!(p.system.n_w(), 12);

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "[problem]\nkind = heat_cube").unwrap();
        let err = load(g.path()).unwrap_err();
        assert!(err.to_string().contains("heat_cube"), "{err}");
    }

    #[test]
    fn optimizer_spec_checks_lengths() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "[optimizer]\ntol = 1e-6\nmu0 = 1.5 1.5\nregularization = 1.0\ntarget = 1.2 1.2 1.2"
        )
        .unwrap();
        let cfg = RunConfig::load(f.path()).unwrap();
        let err = optimizer_spec(&cfg, 3).unwrap_err();
        assert!(err.to_string().contains("mu0"), "{err}");
    }
}
