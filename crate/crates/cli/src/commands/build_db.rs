//! `build-db`: greedy sampling driven by a configuration file. Writes the
//! database plus iteration and selection logs; rerunning with the same
//! configuration and seed reproduces the database byte for byte.

use std::time::Instant;

use romkit::database::{greedy, PodSensitivityBuilder};

use crate::config::{config_hash, RunConfig};
use crate::{output_dir, problem, sampling, write_file, BuildDbArgs, CliError};

pub fn run(args: &BuildDbArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let prob = problem::load_for(&cfg)?;
    let sys = &prob.system;

    let pool = sampling::read_pool(&cfg)?;
    let name = cfg.str_req("sampling", "strategy")?.to_string();
    cfg.ignore("sampling", "strategies");
    let strategy = sampling::build_strategy(&name, &pool)?;
    let gc = sampling::greedy_config(&cfg, strategy, args.seed)?;
    let xi = sampling::candidates(&cfg, sys.bounds(), gc.seed)?;
    let out = output_dir(&cfg, &args.output)?;
    cfg.finish(&["problem", "sampling", "interpolation", "output"])?;
    let hash = config_hash(&[cfg.bytes(), &prob.bytes]);

    let t0 = Instant::now();
    let outcome = greedy(sys, &xi, &gc, &PodSensitivityBuilder)
        .map_err(|e| CliError::Numerical(format!("greedy sampling failed: {e}")))?;
    let wall_ms = t0.elapsed().as_millis();

    let db_path = out.join("rom.db");
    outcome
        .db
        .save(&db_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", db_path.display())))?;
    let history_path = out.join("greedy_history.csv");
    write_file(
        &history_path,
        &format!(
            "# config-hash: {hash}\n# timing: wall_ms={wall_ms}\n{}",
            outcome.history_csv()
        ),
    )?;
    let selection_path = out.join("greedy_selection.csv");
    write_file(
        &selection_path,
        &format!("# config-hash: {hash}\n{}", outcome.selection_csv()),
    )?;

    println!("wrote {} ({} entries)", db_path.display(), outcome.db.len());
    println!("wrote {}", history_path.display());
    println!("wrote {}", selection_path.display());
    println!(
        "strategy {name}: {} candidates, {} full solves, {} indicator evaluations, {} skips",
        xi.len(),
        outcome.hdm_solves,
        outcome.indicator_evaluations,
        outcome.skipped_evaluations
    );
    if outcome.converged {
        println!(
            "converged after {} iterations: max indicator {:.3e} <= {:.3e}",
            outcome.history.len(),
            outcome.final_max_indicator,
            gc.epsilon_tol
        );
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "greedy sampling stopped after {} iterations with max indicator {:.3e} > {:.3e} \
             (outputs were written)",
            outcome.history.len(),
            outcome.final_max_indicator,
            gc.epsilon_tol
        )))
    }
}
