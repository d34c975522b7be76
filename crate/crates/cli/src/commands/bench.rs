//! `greedy-bench`: run two or more sampling strategies on the same
//! candidate set, seed, and tolerance, and tabulate their cost. Wall times
//! live in the `# timing:` comment so the data rows replay byte-identically.

use std::time::Instant;

use romkit::database::{greedy, GreedyOutcome, PodSensitivityBuilder};

use crate::config::{config_hash, RunConfig};
use crate::{output_dir, problem, sampling, write_file, BenchArgs, CliError};

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let prob = problem::load_for(&cfg)?;
    let sys = &prob.system;

    let names = cfg.str_list_req("sampling", "strategies")?;
    if names.len() < 2 {
        return Err(CliError::Config(
            "[sampling] strategies must list at least two entrants".into(),
        ));
    }
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) {
            return Err(CliError::Config(format!(
                "[sampling] strategies lists `{a}` twice"
            )));
        }
    }
    cfg.ignore("sampling", "strategy");
    let pool = sampling::read_pool(&cfg)?;
    let entrants: Vec<_> = names
        .iter()
        .map(|n| sampling::build_strategy(n, &pool))
        .collect::<Result<_, _>>()?;
    // Any entrant's config carries the shared settings; strategies differ
    // only in the `strategy` field.
    let base = sampling::greedy_config(&cfg, entrants[0], args.seed)?;
    let xi = sampling::candidates(&cfg, sys.bounds(), base.seed)?;
    let out = output_dir(&cfg, &args.output)?;
    cfg.finish(&["problem", "sampling", "interpolation", "output"])?;
    let hash = config_hash(&[cfg.bytes(), &prob.bytes]);

    let mut outcomes: Vec<(String, GreedyOutcome, u128)> = Vec::new();
    for (name, strategy) in names.iter().zip(entrants) {
        let gc = romkit::database::GreedyConfig { strategy, ..base.clone() };
        let t0 = Instant::now();
        let outcome = greedy(sys, &xi, &gc, &PodSensitivityBuilder)
            .map_err(|e| CliError::Numerical(format!("strategy `{name}`: {e}")))?;
        outcomes.push((name.clone(), outcome, t0.elapsed().as_millis()));
    }

    let timing = outcomes
        .iter()
        .map(|(n, _, ms)| format!("{n}_ms={ms}"))
        .collect::<Vec<_>>()
        .join(" ");
    let mut csv = format!("# config-hash: {hash}\n# timing: {timing}\n");
    csv.push_str(
        "strategy,n_candidates,hdm_solves,indicator_evaluations,skipped,final_max_indicator,converged\n",
    );
    for (name, o, _) in &outcomes {
        csv.push_str(&format!(
            "{name},{},{},{},{},{:.16e},{}\n",
            xi.len(),
            o.hdm_solves,
            o.indicator_evaluations,
            o.skipped_evaluations,
            o.final_max_indicator,
            u8::from(o.converged)
        ));
    }
    let csv_path = out.join("greedy_bench.csv");
    write_file(&csv_path, &csv)?;

    println!("wrote {}", csv_path.display());
    for (name, o, _) in &outcomes {
        println!(
            "{name}: {} full solves, {} indicator evaluations, {} skips, max indicator {:.3e}, converged {}",
            o.hdm_solves,
            o.indicator_evaluations,
            o.skipped_evaluations,
            o.final_max_indicator,
            o.converged
        );
    }

    let stragglers: Vec<&str> = outcomes
        .iter()
        .filter(|(_, o, _)| !o.converged)
        .map(|(n, _, _)| n.as_str())
        .collect();
    if stragglers.is_empty() {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "strategies did not converge: {} (outputs were written)",
            stragglers.join(", ")
        )))
    }
}
