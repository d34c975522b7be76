//! `query`: evaluate the interpolated reduced model at one point. The
//! quantity is the load work `q = b_r^T w_r`, which is invariant to the
//! congruence alignment of the stored operators, so at a database point it
//! reproduces that entry's own prediction. No full-order system is ever
//! assembled or solved; the command asserts that through the solve counter.

use romkit::database::RomDatabase;
use romkit::model::solve_counter;

use crate::config::config_hash;
use crate::{read_file, CliError, QueryArgs};

pub fn run(args: &QueryArgs) -> Result<(), CliError> {
    let db_bytes = read_file(&args.db)?;
    let db = RomDatabase::from_bytes(&db_bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.db.display())))?;
    let n_mu = db.bounds().n_mu();
    if args.mu.len() != n_mu {
        return Err(CliError::Config(format!(
            "query point has {} coordinates, the database stores {n_mu}-parameter models",
            args.mu.len()
        )));
    }
    let mu = nalgebra::DVector::from_row_slice(&args.mu);
    if db.bounds().validate(&mu).is_err() {
        eprintln!(
            "warning: query point lies outside the sampled box [{}]; extrapolating",
            (0..n_mu)
                .map(|i| format!("{}, {}", db.bounds().lower()[i], db.bounds().upper()[i]))
                .collect::<Vec<_>>()
                .join("] x [")
        );
    }

    solve_counter::reset();
    let interp = db
        .interpolator()
        .map_err(|e| CliError::Numerical(format!("interpolation setup failed: {e}")))?;
    let ops = interp
        .interpolate_with_sensitivity(&mu)
        .map_err(|e| CliError::Numerical(format!("interpolation failed: {e}")))?;

    let lu = ops.matrix.clone().lu();
    let w = lu
        .solve(&ops.rhs)
        .ok_or_else(|| CliError::Numerical("interpolated operator is singular".into()))?;
    let p = ops
        .matrix
        .transpose()
        .lu()
        .solve(&ops.rhs)
        .ok_or_else(|| CliError::Numerical("interpolated operator is singular".into()))?;
    let q = ops.rhs.dot(&w);
    // q = b^T A^{-1} b: differentiate through both the load and the matrix,
    // with A^{-T} b supplying the left factor.
    let grad: Vec<f64> = (0..n_mu)
        .map(|i| {
            ops.rhs_derivs[i].dot(&w) + p.dot(&ops.rhs_derivs[i])
                - p.dot(&(&ops.matrix_derivs[i] * &w))
        })
        .collect();

    let solves = solve_counter::count();
    if solves != 0 {
        return Err(CliError::Numerical(format!(
            "query touched the full model {solves} times; the reduced path must not"
        )));
    }
    if args.verbose {
        eprintln!("database entries: {}", db.len());
        eprintln!("reduced dimension: {}", ops.matrix.nrows());
        eprintln!("full-order solves during query: {solves}");
    }

    println!("# config-hash: {}", config_hash(&[&db_bytes]));
    println!("quantity,value");
    println!("qoi,{q:.16e}");
    for (i, g) in grad.iter().enumerate() {
        println!("dqoi_dmu_{i},{g:.16e}");
    }
    Ok(())
}
