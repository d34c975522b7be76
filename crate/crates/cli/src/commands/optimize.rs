//! `optimize`: minimize the configured objective over the parameter box,
//! either through the reduced database (no full-order solves, asserted) or
//! through the full model as a reference baseline. Multi-start runs draw
//! extra starting points uniformly from the box under an explicit seed.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use romkit::database::RomDatabase;
use romkit::model::solve_counter;
use romkit::optimizer::{make_hdm_nlp, make_rom_nlp, solve_nlp, NlpProblem, NlpSolution};

use crate::config::{config_hash, RunConfig};
use crate::{output_dir, problem, read_file, write_file, Baseline, CliError, OptimizeArgs};

struct StartRow {
    start: usize,
    solution: Option<NlpSolution>,
    failure: Option<String>,
}

pub fn run(args: &OptimizeArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let prob = problem::load_for(&cfg)?;
    let sys = &prob.system;
    let spec = problem::optimizer_spec(&cfg, sys.n_mu())?;
    let out = output_dir(&cfg, &args.output)?;
    cfg.finish(&["problem", "optimizer", "output"])?;

    let objective = problem::objective(sys, &spec);
    let constraints = problem::constraints(&spec);
    let (nlp, hash): (NlpProblem, String) = match args.baseline {
        Baseline::Rom => {
            let db_path = args
                .db
                .as_ref()
                .ok_or_else(|| CliError::Config("--db is required for the rom baseline".into()))?;
            let db_bytes = read_file(db_path)?;
            let db = RomDatabase::from_bytes(&db_bytes)
                .map_err(|e| CliError::Config(format!("{}: {e}", db_path.display())))?;
            let nlp = make_rom_nlp(&db, sys, objective, constraints)
                .map_err(|e| CliError::Config(format!("reduced problem setup failed: {e}")))?;
            (nlp, config_hash(&[cfg.bytes(), &prob.bytes, &db_bytes]))
        }
        Baseline::Hdm => (
            make_hdm_nlp(sys, objective, constraints),
            config_hash(&[cfg.bytes(), &prob.bytes]),
        ),
    };

    let seed = args.seed.unwrap_or(spec.seed);
    let n_starts = args.multi_start as usize;
    let bounds = sys.bounds().clone();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let starts: Vec<DVector<f64>> = (0..n_starts)
        .map(|i| {
            if i == 0 {
                spec.mu0.clone()
            } else {
                DVector::from_fn(bounds.n_mu(), |d, _| {
                    rng.gen_range(bounds.lower()[d]..=bounds.upper()[d])
                })
            }
        })
        .collect();

    solve_counter::reset();
    let t0 = Instant::now();
    let rows: Vec<StartRow> = starts
        .iter()
        .enumerate()
        .map(|(start, mu0)| match solve_nlp(&nlp, mu0, spec.tol) {
            Ok(solution) => StartRow { start, solution: Some(solution), failure: None },
            Err(e) => {
                log::warn!("start {start} failed: {e}");
                StartRow { start, solution: None, failure: Some(e.to_string()) }
            }
        })
        .collect();
    let wall_ms = t0.elapsed().as_millis();
    let hdm_solves = solve_counter::count();
    if args.baseline == Baseline::Rom && hdm_solves != 0 {
        return Err(CliError::Numerical(format!(
            "reduced optimization touched the full model {hdm_solves} times; it must not"
        )));
    }

    let best = rows
        .iter()
        .filter_map(|r| r.solution.as_ref().map(|s| (r.start, s)))
        .filter(|(_, s)| s.report.converged)
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective));

    let baseline_name = match args.baseline {
        Baseline::Rom => "rom",
        Baseline::Hdm => "hdm",
    };
    if n_starts > 1 {
        let mut csv = format!("# config-hash: {hash}\n");
        csv.push_str("start,converged,objective,stationarity,violation,iterations,evaluations");
        for i in 0..bounds.n_mu() {
            csv.push_str(&format!(",mu_{i}"));
        }
        csv.push('\n');
        for r in &rows {
            match &r.solution {
                Some(s) => {
                    csv.push_str(&format!(
                        "{},{},{:.16e},{:.16e},{:.16e},{},{}",
                        r.start,
                        u8::from(s.report.converged),
                        s.objective,
                        s.report.stationarity,
                        s.report.violation,
                        s.report.iterations,
                        s.report.evaluations
                    ));
                    for v in s.mu.iter() {
                        csv.push_str(&format!(",{v:.16e}"));
                    }
                    csv.push('\n');
                }
                None => {
                    csv.push_str(&format!("{},0,,,,,", r.start));
                    csv.push_str(&",".repeat(bounds.n_mu()));
                    csv.push('\n');
                }
            }
        }
        write_file(&out.join("multistart.csv"), &csv)?;
        println!("wrote {}", out.join("multistart.csv").display());
    }

    let Some((best_start, best_sol)) = best else {
        let failures: Vec<String> = rows
            .iter()
            .map(|r| match (&r.solution, &r.failure) {
                (Some(s), _) => format!(
                    "start {}: stationarity {:.3e} after {} iterations",
                    r.start, s.report.stationarity, s.report.iterations
                ),
                (_, Some(f)) => format!("start {}: {f}", r.start),
                _ => unreachable!("a row is a solution or a failure"),
            })
            .collect();
        return Err(CliError::NonConvergence(format!(
            "no start converged: {}",
            failures.join("; ")
        )));
    };

    let report = &best_sol.report;
    let mut csv = format!("# config-hash: {hash}\n# timing: wall_ms={wall_ms}\n");
    csv.push_str("quantity,value\n");
    csv.push_str(&format!("baseline,{baseline_name}\n"));
    csv.push_str(&format!("start_index,{best_start}\n"));
    csv.push_str(&format!("objective,{:.16e}\n", best_sol.objective));
    for (i, v) in best_sol.mu.iter().enumerate() {
        csv.push_str(&format!("mu_{i},{v:.16e}\n"));
    }
    let (c_values, _) = nlp
        .constraints_at(&best_sol.mu)
        .map_err(|e| CliError::Numerical(format!("constraint evaluation at the optimum: {e}")))?;
    for (i, c) in c_values.iter().enumerate() {
        csv.push_str(&format!("constraint_{i},{c:.16e}\n"));
    }
    for (i, m) in best_sol.multipliers.iter().enumerate() {
        csv.push_str(&format!("multiplier_{i},{m:.16e}\n"));
    }
    csv.push_str(&format!("stationarity,{:.16e}\n", report.stationarity));
    csv.push_str(&format!("violation,{:.16e}\n", report.violation));
    csv.push_str(&format!("complementarity,{:.16e}\n", report.complementarity));
    csv.push_str(&format!("iterations,{}\n", report.iterations));
    csv.push_str(&format!("outer_iterations,{}\n", report.outer_iterations));
    csv.push_str(&format!("evaluations,{}\n", report.evaluations));
    csv.push_str(&format!("hdm_solves,{hdm_solves}\n"));
    csv.push_str(&format!("converged,{}\n", u8::from(report.converged)));
    write_file(&out.join("optimum.csv"), &csv)?;

    write_file(
        &out.join("optimize_history.csv"),
        &format!("# config-hash: {hash}\n{}", best_sol.history_csv()),
    )?;

    println!("wrote {}", out.join("optimum.csv").display());
    println!("wrote {}", out.join("optimize_history.csv").display());
    let mu_list = best_sol
        .mu
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!(
        "minimum f = {:.10e} at mu = ({mu_list}) from start {best_start}",
        best_sol.objective
    );
    println!(
        "kkt: stationarity {:.3e}, violation {:.3e}, {} full solves via {baseline_name}",
        report.stationarity, report.violation, hdm_solves
    );
    Ok(())
}
