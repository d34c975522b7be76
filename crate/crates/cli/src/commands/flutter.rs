//! `flutter-analyze`: build coupled reduced models on a parameter grid,
//! interpolate the structural eigenvalue operator at a query point, and
//! report each mode's eigenvalue, damping ratio, and damping gradient.

use std::time::Instant;

use nalgebra::{Complex, DVector};
use romkit::aeroelastic::{
    damping_sensitivities, modal_band, reduce, solve_interpolated_eigs, structural_modes,
    synthetic_coupled, AeroError, AeroEntry, AeroRomDatabase,
};
use romkit::database::full_factorial;

use crate::config::{config_hash, RunConfig};
use crate::{output_dir, write_file, CliError, FlutterArgs};

fn numerical(context: &str) -> impl Fn(AeroError) -> CliError + '_ {
    move |e| match e {
        AeroError::NoConvergence { index, iterations } => CliError::NonConvergence(format!(
            "{context}: eigenvalue {index} did not settle in {iterations} iterations"
        )),
        other => CliError::Numerical(format!("{context}: {other}")),
    }
}

pub fn run(args: &FlutterArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let n_s = cfg.usize_req("aeroelastic", "n_s")?;
    let n_f = cfg.usize_req("aeroelastic", "n_f")?;
    let coupling = cfg.f64_req("aeroelastic", "coupling")?;
    let seed = match args.seed {
        Some(s) => {
            cfg.ignore("aeroelastic", "seed");
            s
        }
        None => cfg.u64_req("aeroelastic", "seed")?,
    };
    let k_s = cfg.usize_req("aeroelastic", "k_s")?;
    let k_f = cfg.usize_req("aeroelastic", "k_f")?;
    let n_xi = cfg.usize_req("aeroelastic", "n_xi")?;
    let levels = cfg.usize_req("aeroelastic", "levels")?;
    let mu_raw = cfg.f64_list_req("aeroelastic", "mu")?;
    let shape = cfg.f64_opt("aeroelastic", "shape")?;
    let out = output_dir(&cfg, &args.output)?;
    cfg.finish(&["aeroelastic", "output"])?;

    if n_s < 2 || k_s < 1 || k_s > n_s {
        return Err(CliError::Config(format!(
            "[aeroelastic] needs n_s >= 2 and 1 <= k_s <= n_s, got n_s = {n_s}, k_s = {k_s}"
        )));
    }
    let snapshots = 2 * k_s * n_xi;
    if n_xi < 1 || k_f < 1 || k_f > n_f.min(snapshots) {
        return Err(CliError::Config(format!(
            "[aeroelastic] needs 1 <= k_f <= min(n_f, 2*k_s*n_xi) = {}, got k_f = {k_f}",
            n_f.min(snapshots)
        )));
    }
    if levels < 2 {
        return Err(CliError::Config(format!(
            "[aeroelastic] levels must be at least 2, got {levels}"
        )));
    }
    if !(coupling >= 0.0 && coupling.is_finite()) {
        return Err(CliError::Config(format!(
            "[aeroelastic] coupling must be finite and non-negative, got {coupling}"
        )));
    }

    let fom = synthetic_coupled(n_s, n_f, coupling, seed);
    let n_mu = fom.bounds().n_mu();
    if mu_raw.len() != n_mu {
        return Err(CliError::Config(format!(
            "[aeroelastic] mu has {} values, the model has {n_mu} parameters",
            mu_raw.len()
        )));
    }
    let mu = DVector::from_vec(mu_raw);
    fom.bounds()
        .validate(&mu)
        .map_err(|e| CliError::Config(format!("[aeroelastic] mu: {e}")))?;
    let hash = config_hash(&[cfg.bytes()]);

    let t0 = Instant::now();
    let grid = full_factorial(fom.bounds(), &vec![levels; n_mu])
        .map_err(|e| CliError::Config(format!("[aeroelastic] levels: {e}")))?;
    let mut db = AeroRomDatabase::new(fom.bounds().clone());
    for point in grid {
        let m = fom.mass.eval(&point);
        let k = fom.stiffness.eval(&point);
        let (_, omega2) =
            structural_modes(&m, &k, k_s).map_err(numerical("structural modes"))?;
        let rom = reduce(&fom, &point, k_s, k_f, &modal_band(&omega2, n_xi))
            .map_err(numerical("reduction"))?;
        db.push(AeroEntry { mu: point, rom }).map_err(numerical("database"))?;
    }
    let interp = db.interpolator(shape).map_err(numerical("interpolation setup"))?;

    let omega2 = interp.omega2(&mu).map_err(numerical("frequency interpolation"))?;
    let guesses: Vec<Complex<f64>> = omega2
        .diagonal()
        .iter()
        .flat_map(|w2| {
            let w = w2.sqrt();
            [Complex::new(0.0, w), Complex::new(0.0, -w)]
        })
        .collect();
    let sol =
        solve_interpolated_eigs(&interp, &mu, &guesses).map_err(numerical("eigenvalue solve"))?;
    if !sol.collisions.is_empty() {
        eprintln!(
            "warning: {} guess pairs converged to the same root; the spectrum may be incomplete",
            sol.collisions.len()
        );
    }
    let mut rows = Vec::with_capacity(sol.modes.len());
    for (mode, eig) in sol.modes.iter().enumerate() {
        let ops = interp
            .ns_with_sensitivity(&mu, eig.lambda)
            .map_err(numerical("operator sensitivity"))?;
        let dzeta =
            damping_sensitivities(eig, &ops).map_err(numerical("damping sensitivity"))?;
        rows.push((mode, eig, dzeta));
    }
    let wall_ms = t0.elapsed().as_millis();

    let mut csv = format!("# config-hash: {hash}\n# timing: wall_ms={wall_ms}\n");
    for i in 0..n_mu {
        csv.push_str(&format!("mu_{i},"));
    }
    csv.push_str("mode,lambda_re,lambda_im,zeta");
    for i in 0..n_mu {
        csv.push_str(&format!(",dzeta_dmu_{i}"));
    }
    csv.push_str(",iterations\n");
    for (mode, eig, dzeta) in &rows {
        for v in mu.iter() {
            csv.push_str(&format!("{v:.16e},"));
        }
        csv.push_str(&format!(
            "{mode},{:.16e},{:.16e},{:.16e}",
            eig.lambda.re, eig.lambda.im, eig.zeta
        ));
        for d in dzeta.iter() {
            csv.push_str(&format!(",{d:.16e}"));
        }
        csv.push_str(&format!(",{}\n", eig.iterations));
    }
    let csv_path = out.join("flutter.csv");
    write_file(&csv_path, &csv)?;

    println!("wrote {}", csv_path.display());
    println!("database: {} grid points, k_s = {k_s}, k_f = {k_f}", db.len());
    for (mode, eig, _) in &rows {
        println!(
            "mode {mode}: lambda = {:.6e} {} {:.6e}i, zeta = {:.6e}",
            eig.lambda.re,
            if eig.lambda.im < 0.0 { "-" } else { "+" },
            eig.lambda.im.abs(),
            eig.zeta
        );
    }
    Ok(())
}
