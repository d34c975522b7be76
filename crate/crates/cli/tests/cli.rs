//! End-to-end tests of the `romkit` binary: every subcommand, the exit-code
//! contract (0 success, 2 usage/config, 3 non-convergence), provenance
//! hashing, and byte-level determinism modulo the timing comment.

use std::path::{Path, PathBuf};

use romkit::database::RomDatabase;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_romkit"))
        .args(args)
        .output()
        .expect("binary launches");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Wall-clock comments are the one permitted difference between reruns.
fn strip_timing(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("# timing:"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .collect()
}

/// Value of a `key,value` stdout or CSV row.
fn value_of(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("missing row `{key}` in:\n{text}"))
        .parse()
        .unwrap_or_else(|e| panic!("row `{key}` is not numeric: {e}"))
}

fn field(row: &str, idx: usize) -> &str {
    row.split(',').nth(idx).unwrap_or_else(|| panic!("row `{row}` lacks column {idx}"))
}

fn assert_hash_line(text: &str) {
    let first = text.lines().next().unwrap_or("");
    let hex = first.strip_prefix("# config-hash: ").unwrap_or_else(|| {
        panic!("output does not start with a config-hash comment: {first}")
    });
    assert_eq!(hex.len(), 64, "hash is not sha-256 hex: {hex}");
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()), "{hex}");
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// A bar problem plus a run configuration; `sampling_extra` appends to
    /// the `[sampling]` section.
    fn desk_setup(&self, n_cells: usize, sampling_extra: &str) {
        write(
            &self.path("problem.cfg"),
            &format!("[problem]\nkind = diffusion_bar\nn_cells = {n_cells}\n"),
        );
        write(
            &self.path("run.cfg"),
            &format!(
                "[problem]\npath = problem.cfg\n\n\
                 [sampling]\nlevels = 3\nepsilon_tol = 0.05\nseed = 11\n{sampling_extra}\n\
                 [interpolation]\nmanifold = spd\n\n\
                 [optimizer]\ntol = 1e-6\nmu0 = 1.5 1.5 1.5\nregularization = 1.0\n\
                 target = 1.2 1.2 1.2\nbudget = 4.0\n"
            ),
        );
    }

    fn build_db(&self, out: &str) -> PathBuf {
        let (code, stdout, stderr) = run(&[
            "build-db",
            "--config",
            &self.arg("run.cfg"),
            "--output",
            &self.arg(out),
        ]);
        assert_eq!(code, 0, "build-db failed:\n{stdout}\n{stderr}");
        self.path(out).join("rom.db")
    }
}

#[test]
fn build_db_converges_and_replays_byte_identically() {
    let ws = Workspace::new();
    ws.desk_setup(16, "strategy = saturation\nn_pi = 6\n");
    let db_path = ws.build_db("out1");
    let (code, stdout, _) = run(&[
        "build-db",
        "--config",
        &ws.arg("run.cfg"),
        "--output",
        &ws.arg("out1_repeat"),
    ]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("converged after"), "{stdout}");

    let db = RomDatabase::load(&db_path).unwrap();
    assert!(db.len() >= 2, "greedy kept {} entries", db.len());
    assert_eq!(db.bounds().n_mu(), 3);
    assert_eq!(
        std::fs::read(&db_path).unwrap(),
        std::fs::read(ws.path("out1_repeat").join("rom.db")).unwrap(),
        "same configuration and seed must reproduce the database bytes"
    );

    let history = read(&ws.path("out1").join("greedy_history.csv"));
    assert_hash_line(&history);
    assert!(history.lines().any(|l| l.starts_with("# timing: wall_ms=")), "{history}");
    assert!(
        history.contains("iteration,mu_0,mu_1,mu_2,max_indicator,tau_hat,evaluations,skips"),
        "{history}"
    );
    assert_eq!(
        strip_timing(&history),
        strip_timing(&read(&ws.path("out1_repeat").join("greedy_history.csv"))),
        "history must replay identically outside the timing comment"
    );
    let skips: u64 = data_rows(&history).iter().map(|r| field(r, 7).parse::<u64>().unwrap()).sum();
    assert!(skips > 0, "the saturation gate never skipped an evaluation:\n{history}");

    let selection = read(&ws.path("out1").join("greedy_selection.csv"));
    assert_hash_line(&selection);
    assert_eq!(data_rows(&selection).len(), db.len(), "one selection row per entry");
}

#[test]
fn build_db_reports_nonconvergence_with_exit_3() {
    let ws = Workspace::new();
    ws.desk_setup(
        16,
        "strategy = classical\nmax_iterations = 2\n",
    );
    // Tighten the tolerance beyond reach so the iteration cap trips.
    let tightened = read(&ws.path("run.cfg")).replace("epsilon_tol = 0.05", "epsilon_tol = 1e-12");
    write(&ws.path("run.cfg"), &tightened);
    let (code, _, stderr) = run(&[
        "build-db",
        "--config",
        &ws.arg("run.cfg"),
        "--output",
        &ws.arg("out"),
    ]);
    assert_eq!(code, 3, "non-convergence must exit 3: {stderr}");
    assert!(stderr.contains("max indicator"), "{stderr}");
    assert!(ws.path("out").join("rom.db").exists(), "outputs are written even then");
}

#[test]
fn latin_hypercube_candidates_build_too() {
    let ws = Workspace::new();
    ws.desk_setup(16, "strategy = classical\ngrid = latin_hypercube\nn_candidates = 20\n");
    // The factorial `levels` key is unused under the hypercube grid.
    let cfg = read(&ws.path("run.cfg")).replace("levels = 3\n", "");
    write(&ws.path("run.cfg"), &cfg);
    ws.build_db("out");
    let history = read(&ws.path("out").join("greedy_history.csv"));
    assert!(data_rows(&history).iter().all(|r| field(r, 5).parse::<f64>().unwrap() > 0.0));
}

#[test]
fn query_reproduces_stored_predictions_and_finite_differences() {
    let ws = Workspace::new();
    ws.desk_setup(16, "strategy = classical\n");
    let db_path = ws.build_db("out");
    let db_arg = db_path.display().to_string();

    // At a database point the interpolant reproduces that entry's own
    // operators, so the printed value must match the stored prediction.
    let db = RomDatabase::load(&db_path).unwrap();
    let entry = &db.entries()[0];
    let expected = entry.b_r.dot(
        &entry
            .a_r
            .clone()
            .lu()
            .solve(&entry.b_r)
            .expect("stored operators are nonsingular"),
    );
    let mu_args: Vec<String> = entry.mu.iter().map(|v| v.to_string()).collect();
    let mut args = vec!["query", "--verbose", "--db", &db_arg];
    args.extend(mu_args.iter().map(String::as_str));
    let (code, stdout, stderr) = run(&args);
    assert_eq!(code, 0, "{stderr}");
    assert_hash_line(&stdout);
    assert!(stderr.contains("full-order solves during query: 0"), "{stderr}");
    let got = value_of(&stdout, "qoi");
    assert!(
        (got - expected).abs() <= 1e-8 * expected.abs(),
        "stored {expected:.16e} vs query {got:.16e}"
    );

    // The printed gradient must match finite differences of repeated
    // queries.
    let center = ["1.5", "1.5", "1.5"];
    let (code, stdout, _) = run(&["query", "--db", &db_arg, center[0], center[1], center[2]]);
    assert_eq!(code, 0);
    let q0 = value_of(&stdout, "qoi");
    assert!(q0.is_finite());
    let h = 1e-4;
    for axis in 0..3 {
        let grad = value_of(&stdout, &format!("dqoi_dmu_{axis}"));
        let probe = |delta: f64| {
            let mut mu = [1.5f64; 3];
            mu[axis] += delta;
            let labels: Vec<String> = mu.iter().map(|v| v.to_string()).collect();
            let (code, out, _) =
                run(&["query", "--db", &db_arg, &labels[0], &labels[1], &labels[2]]);
            assert_eq!(code, 0);
            value_of(&out, "qoi")
        };
        let fd = (probe(h) - probe(-h)) / (2.0 * h);
        assert!(
            (grad - fd).abs() <= 1e-4 * fd.abs().max(1e-12),
            "axis {axis}: analytic {grad:.8e} vs finite difference {fd:.8e}"
        );
    }

    // The thread cap is accepted without changing behavior.
    let (code, stdout2, _) =
        run(&["--threads", "4", "query", "--db", &db_arg, "1.5", "1.5", "1.5"]);
    assert_eq!(code, 0);
    assert_eq!(value_of(&stdout2, "qoi"), q0);

    // Out-of-box queries extrapolate with a warning, not a failure.
    let (code, stdout, stderr) = run(&["query", "--db", &db_arg, "2.5", "1.5", "1.5"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stderr.contains("outside the sampled box"), "{stderr}");
    assert!(value_of(&stdout, "qoi").is_finite());

    // Malformed points are usage errors.
    let (code, _, _) = run(&["query", "--db", &db_arg, "1.5", "1.5"]);
    assert_eq!(code, 2, "wrong coordinate count must exit 2");
    let (code, _, _) = run(&["query", "--db", &db_arg, "1.5", "abc", "1.5"]);
    assert_eq!(code, 2, "non-numeric coordinates must exit 2");
    let missing = ws.arg("absent.db");
    let (code, _, _) = run(&["query", "--db", &missing, "1.5", "1.5", "1.5"]);
    assert_eq!(code, 2, "missing database must exit 2");
}

#[test]
fn greedy_bench_tabulates_every_strategy() {
    let ws = Workspace::new();
    ws.desk_setup(
        16,
        "strategies = classical random saturation surrogate\nn_pi = 6\nn_init = 6\nseed = 3\n",
    );
    // desk_setup writes `seed = 11` already; drop the duplicate.
    let cfg = read(&ws.path("run.cfg")).replace("seed = 11\n", "");
    write(&ws.path("run.cfg"), &cfg);
    let (code, stdout, stderr) = run(&[
        "greedy-bench",
        "--config",
        &ws.arg("run.cfg"),
        "--output",
        &ws.arg("out"),
    ]);
    assert_eq!(code, 0, "{stdout}\n{stderr}");

    let csv = read(&ws.path("out").join("greedy_bench.csv"));
    assert_hash_line(&csv);
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 4, "one row per strategy:\n{csv}");
    for row in &rows {
        assert_eq!(field(row, 1), "27", "the candidate count echoes the configuration");
        assert_eq!(field(row, 6), "1", "every strategy converges: {row}");
    }
    let evals = |name: &str| -> u64 {
        rows.iter()
            .find(|r| r.starts_with(name))
            .unwrap_or_else(|| panic!("no row for {name}"))
            .split(',')
            .nth(3)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(
        evals("saturation") <= evals("random"),
        "the saturation gate should not cost more indicator evaluations than plain \
         random subsets:\n{csv}"
    );
    let timing = csv.lines().nth(1).unwrap();
    for name in ["classical", "random", "saturation", "surrogate"] {
        assert!(timing.contains(&format!("{name}_ms=")), "{timing}");
    }
}

#[test]
fn optimize_meets_kkt_through_the_database_alone() {
    let ws = Workspace::new();
    ws.desk_setup(12, "strategy = classical\n");
    let db_path = ws.build_db("db_out");
    let db_arg = db_path.display().to_string();

    let (code, stdout, stderr) = run(&[
        "optimize",
        "--config",
        &ws.arg("run.cfg"),
        "--db",
        &db_arg,
        "--output",
        &ws.arg("opt_rom"),
    ]);
    assert_eq!(code, 0, "{stdout}\n{stderr}");
    let optimum = read(&ws.path("opt_rom").join("optimum.csv"));
    assert_hash_line(&optimum);
    assert!(value_of(&optimum, "stationarity") <= 1e-6, "{optimum}");
    assert!(value_of(&optimum, "violation") <= 1e-6, "{optimum}");
    assert_eq!(value_of(&optimum, "hdm_solves"), 0.0, "the reduced path must not touch the full model");
    assert_eq!(value_of(&optimum, "converged"), 1.0);
    assert!(value_of(&optimum, "constraint_0") <= 1e-9, "budget holds at the optimum");
    let history = read(&ws.path("opt_rom").join("optimize_history.csv"));
    assert_hash_line(&history);
    assert!(history.contains("iter,f,violation,stationarity,step_norm,evaluations"), "{history}");
    assert!(!data_rows(&history).is_empty());

    // Ten starts: every row reports, the best is the minimum.
    let (code, _, stderr) = run(&[
        "optimize",
        "--config",
        &ws.arg("run.cfg"),
        "--db",
        &db_arg,
        "--multi-start",
        "10",
        "--seed",
        "7",
        "--output",
        &ws.arg("opt_multi"),
    ]);
    assert_eq!(code, 0, "{stderr}");
    let multi = read(&ws.path("opt_multi").join("multistart.csv"));
    assert_hash_line(&multi);
    let rows = data_rows(&multi);
    assert_eq!(rows.len(), 10, "one row per start:\n{multi}");
    let best_reported = value_of(&read(&ws.path("opt_multi").join("optimum.csv")), "objective");
    let best_row = rows
        .iter()
        .filter(|r| field(r, 1) == "1")
        .map(|r| field(r, 2).parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(
        (best_reported - best_row).abs() <= 1e-12 * best_row.abs(),
        "reported best {best_reported} vs table best {best_row}"
    );

    // The full-model baseline lands on the same optimum within the
    // accuracy of the database.
    let (code, _, stderr) = run(&[
        "optimize",
        "--config",
        &ws.arg("run.cfg"),
        "--baseline",
        "hdm",
        "--output",
        &ws.arg("opt_hdm"),
    ]);
    assert_eq!(code, 0, "{stderr}");
    let hdm = read(&ws.path("opt_hdm").join("optimum.csv"));
    let f_rom = value_of(&optimum, "objective");
    let f_hdm = value_of(&hdm, "objective");
    assert!(
        (f_rom - f_hdm).abs() <= 0.02 * f_hdm.abs(),
        "rom {f_rom:.10e} vs hdm {f_hdm:.10e}"
    );
    assert!(value_of(&hdm, "hdm_solves") > 0.0);

    // The reduced baseline requires the database.
    let (code, _, stderr) =
        run(&["optimize", "--config", &ws.arg("run.cfg"), "--output", &ws.arg("opt_nodb")]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("--db"), "{stderr}");
}

#[test]
fn flutter_analyze_reports_damping_and_gradients() {
    let ws = Workspace::new();
    write(
        &ws.path("flutter.cfg"),
        "[aeroelastic]\nn_s = 8\nn_f = 24\ncoupling = 1.0\nseed = 5\nk_s = 2\nk_f = 6\n\
         n_xi = 3\nlevels = 3\nmu = 1.1 0.9\n",
    );
    let (code, stdout, stderr) = run(&[
        "flutter-analyze",
        "--config",
        &ws.arg("flutter.cfg"),
        "--output",
        &ws.arg("out"),
    ]);
    assert_eq!(code, 0, "{stdout}\n{stderr}");
    let csv = read(&ws.path("out").join("flutter.csv"));
    assert_hash_line(&csv);
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 4, "two eigenvalues per retained mode:\n{csv}");
    for row in rows {
        let zeta: f64 = field(row, 5).parse().unwrap();
        let dz0: f64 = field(row, 6).parse().unwrap();
        let dz1: f64 = field(row, 7).parse().unwrap();
        assert!(zeta.is_finite() && dz0.is_finite() && dz1.is_finite(), "{row}");
    }

    let (code, _, _) = run(&[
        "flutter-analyze",
        "--config",
        &ws.arg("flutter.cfg"),
        "--output",
        &ws.arg("out_repeat"),
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        strip_timing(&csv),
        strip_timing(&read(&ws.path("out_repeat").join("flutter.csv"))),
        "equal configurations replay identically outside the timing comment"
    );

    // A basis larger than the snapshot supply is a configuration error.
    let bad = read(&ws.path("flutter.cfg")).replace("k_f = 6", "k_f = 100");
    write(&ws.path("flutter.cfg"), &bad);
    let (code, _, stderr) =
        run(&["flutter-analyze", "--config", &ws.arg("flutter.cfg"), "--output", &ws.arg("o2")]);
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn usage_and_configuration_errors_exit_2() {
    let ws = Workspace::new();
    let (code, _, _) = run(&["build-db"]);
    assert_eq!(code, 2, "missing --config is a usage error");
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 2, "unknown subcommands are usage errors");
    let (code, _, _) = run(&["--threads", "0", "query", "--db", "x", "1"]);
    assert_eq!(code, 2, "a zero thread cap is a usage error");

    let missing = ws.arg("nope.cfg");
    let (code, _, stderr) = run(&["build-db", "--config", &missing]);
    assert_eq!(code, 2, "{stderr}");

    ws.desk_setup(16, "strategy = classical\nturbo = yes\n");
    let (code, _, stderr) = run(&["build-db", "--config", &ws.arg("run.cfg")]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("turbo"), "the unknown key is named: {stderr}");

    ws.desk_setup(16, "strategy = simulated_annealing\n");
    let (code, _, stderr) = run(&["build-db", "--config", &ws.arg("run.cfg")]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("simulated_annealing"), "{stderr}");

    // A config whose problem file is absent fails before any numerics.
    write(&ws.path("run.cfg"), "[problem]\npath = ghost.cfg\n");
    let (code, _, stderr) = run(&["build-db", "--config", &ws.arg("run.cfg")]);
    assert_eq!(code, 2, "{stderr}");
}
