//! Pipeline orchestration: hypotheses -> eigenvalues -> truncation -> solve
//! -> verification, with the outer radius grown on demand until the computed
//! (f_3) margin clears, and every artifact written as a versioned report.
//!
//! Exit-code contract: 0 success, 2 validation or hypothesis failure,
//! 3 solver non-convergence, 4 verification failure.

use crate::config::RunConfig;
use nonlocal_neumann::assembly::{
    assemble_forms, neumann_extension, write_matrix_coo, write_profile_csv, AssembledForms,
};
use nonlocal_neumann::error::{Error, Result};
use nonlocal_neumann::grid::{build_grid, RadialGrid};
use nonlocal_neumann::nonlinearity::{
    apriori_constants, ar_constants, check_hypotheses, default_ell, fixed_points, truncate,
    HypothesisReport, NonlinearitySpec, TruncatedNonlinearity,
};
use nonlocal_neumann::spectral::{lambda2_increasing, neumann_eigs, EigenPair};
use nonlocal_neumann::variational::{multi_solve, BandOutcome, ConeSpec};
use nonlocal_neumann::verify::{
    check_integration_by_parts, constancy_criterion, max_principle_check, verify_solution,
    Check, ConstancyCheck, EmbeddingScan, VerificationReport,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Accepted (f_3) margin during radius growth; a bare sign would leave the
/// mountain-pass dip at the mercy of discretization error.
pub const MARGIN_SLACK: f64 = 0.1;
/// Radius growth is linear with this step, starting one unit past the inner
/// radius.
pub const RADIUS_STEP: f64 = 1.0;
pub const MAX_RADIUS_STEPS: usize = 24;
/// Interior resolution of the radius scan; candidate radii only need the
/// eigenvalue to percent accuracy against a margin slack of 0.1.
pub const SCAN_N_INT: usize = 64;
/// Samples of the embedding scan feeding the a priori constants.
pub const EMBEDDING_SAMPLES: usize = 200;

/// Radius decision with the (coarse-grid) margin trail that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct RadiusChoice {
    pub radius: f64,
    pub auto: bool,
    /// (radius, margin) per candidate at scan resolution.
    pub trail: Vec<(f64, f64)>,
}

/// Everything the spectral stage produces; later stages extend it.
pub struct SpectralArtifacts {
    pub choice: RadiusChoice,
    pub grid: RadialGrid,
    pub forms: AssembledForms,
    pub eigs: Vec<EigenPair>,
    pub lambda2_rad: f64,
    pub lambda2_plus: f64,
    pub v2: nalgebra::DVector<f64>,
}

/// Full pipeline output. `primary` indexes the first solved band; `None`
/// with `constancy.only_constants` is the successful negative-control
/// verdict (no nonconstant solution exists to find).
pub struct PipelineArtifacts {
    pub spectral: SpectralArtifacts,
    pub hypotheses: HypothesisReport,
    pub embedding: EmbeddingScan,
    pub trunc: TruncatedNonlinearity,
    pub constancy: ConstancyCheck,
    pub f3_margin: f64,
    pub outcomes: Vec<BandOutcome>,
    pub primary: Option<usize>,
    pub verify: VerifyBundle,
}

/// Aggregated verification artifacts for `verify.json`.
#[derive(Debug, Serialize, Default)]
pub struct VerifyBundle {
    pub solution: Option<VerificationReport>,
    pub integration_by_parts: VerificationReport,
    pub max_principle: Option<Check>,
    pub constancy: Option<ConstancyCheck>,
}

fn min_admissible_slope(spec: &NonlinearitySpec, t_scan: f64) -> Result<f64> {
    let fixed = fixed_points(spec, (0.0, t_scan))?;
    if fixed.bands.is_empty() {
        return Err(Error::Hypothesis(
            "no admissible fixed point with f'(u0) > 1 in the scan window".into(),
        ));
    }
    Ok(fixed.bands.iter().map(|b| b.slope).fold(f64::INFINITY, f64::min))
}

/// Picks the outer radius. Explicit `domain.r` is honored as-is; otherwise
/// the radius grows from one unit past the inner radius until the weakest
/// admissible band clears (f_3) with slack, using that the radial
/// eigenvalues decay to zero as the domain grows.
pub fn choose_radius(config: &RunConfig, spec: &NonlinearitySpec) -> Result<RadiusChoice> {
    if let Some(r) = config.domain.r {
        return Ok(RadiusChoice { radius: r, auto: false, trail: Vec::new() });
    }
    let min_slope = min_admissible_slope(spec, config.truncation.t_scan)?;
    let n_scan = config.grid.n_int.min(SCAN_N_INT);
    let mut trail = Vec::new();
    for k in 0..MAX_RADIUS_STEPS {
        let radius = config.domain.r0 + RADIUS_STEP * (k + 1) as f64;
        let grid = build_grid(config.domain_spec(radius), n_scan, n_scan / 2, config.grid.grading)?;
        let forms = assemble_forms(&grid)?;
        let lambda2_plus =
            lambda2_increasing(&forms, config.cone.orientation, config.solver.seed)?.lambda;
        let margin = min_slope - lambda2_plus - 1.0;
        trail.push((radius, margin));
        if margin >= MARGIN_SLACK {
            return Ok(RadiusChoice { radius, auto: true, trail });
        }
    }
    Err(Error::Hypothesis(format!(
        "no radius up to {} gives a positive (f_3) margin for the weakest slope {min_slope:.6}; \
         margin trail: {trail:?}",
        config.domain.r0 + RADIUS_STEP * MAX_RADIUS_STEPS as f64
    )))
}

/// Stages 1-3: radius, grid, forms, Neumann eigenvalues, and the monotone
/// second eigenvalue with its eigenfunction.
pub fn run_spectral(config: &RunConfig) -> Result<SpectralArtifacts> {
    config.validate()?;
    let spec = config.nonlinearity_spec()?;
    let choice = choose_radius(config, &spec)?;
    let grid = build_grid(
        config.domain_spec(choice.radius),
        config.grid.n_int,
        config.n_ext_effective(),
        config.grid.grading,
    )?;
    let forms = assemble_forms(&grid)?;
    let k = 6.min(forms.b_mass.len());
    let eigs = neumann_eigs(&forms, k)?;
    let pair2 = lambda2_increasing(&forms, config.cone.orientation, config.solver.seed)?;
    let lambda2_rad = eigs[1].lambda;
    Ok(SpectralArtifacts {
        choice,
        grid,
        forms,
        lambda2_rad,
        lambda2_plus: pair2.lambda,
        v2: pair2.eigenfunction.interior.clone(),
        eigs,
    })
}

/// The full run. Solver failure on every band is an error (exit 3) unless
/// the constancy criterion says only constants exist, which turns the
/// outcome into a successful negative verdict.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineArtifacts> {
    let spec = config.nonlinearity_spec()?;
    let spectral = run_spectral(config)?;
    let hypotheses = check_hypotheses(&spec, spectral.lambda2_plus, config.truncation.t_scan)?;
    if !hypotheses.required_ok() {
        let failing: Vec<&str> = [
            ("f_1", hypotheses.f1.pass),
            ("f_2", hypotheses.f2.pass),
            ("f_3", hypotheses.f3.pass),
        ]
        .iter()
        .filter(|(_, pass)| !pass)
        .map(|(name, _)| *name)
        .collect();
        return Err(Error::Hypothesis(format!(
            "required hypotheses failed: {}",
            failing.join(", ")
        )));
    }
    let full_cone = ConeSpec::new(config.cone.orientation, 0.0, f64::INFINITY)?;
    let embedding = nonlocal_neumann::verify::embedding_scan(
        &spectral.forms,
        &full_cone,
        EMBEDDING_SAMPLES,
        config.solver.seed,
    )?;
    let (m, delta) = match (hypotheses.m, hypotheses.delta) {
        (Some(m), Some(delta)) => (m, delta),
        _ => {
            return Err(Error::Hypothesis(
                "(f_2) passed without an (M, delta) witness".into(),
            ))
        }
    };
    let (k1, k_inf, k2) =
        apriori_constants(m, delta, spectral.forms.volume, embedding.c_emb)?;
    let ell = config
        .truncation
        .ell
        .unwrap_or_else(|| default_ell(config.domain.n, config.domain.s));
    let mut trunc = truncate(&spec, k_inf, ell, config.domain.s, config.domain.n)?;
    trunc.k1 = Some(k1);
    trunc.k2 = Some(k2);
    let (mu, t0) = ar_constants(&trunc)?;
    trunc.mu = Some(mu);
    trunc.t0 = Some(t0);
    let constancy = constancy_criterion(&spec, k_inf, spectral.lambda2_rad)?;
    let f3_margin = trunc
        .bands
        .iter()
        .map(|b| b.slope - spectral.lambda2_plus - 1.0)
        .fold(f64::INFINITY, f64::min);

    let outcomes = multi_solve(
        &spectral.forms,
        &trunc,
        config.cone.orientation,
        &config.solve_params(),
    )?;
    let primary = outcomes.iter().position(|o| o.result.is_ok());
    if primary.is_none() && !constancy.only_constants {
        return Err(reclone_solver_error(&outcomes));
    }

    let mut verify = VerifyBundle { constancy: Some(constancy), ..VerifyBundle::default() };
    let dim = spectral.forms.b_mass.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.solver.seed ^ 0x5eed);
    for _ in 0..3 {
        let u = neumann_extension(
            &spectral.forms,
            &nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(-1.0..2.0)),
        );
        let v = neumann_extension(
            &spectral.forms,
            &nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(-1.0..2.0)),
        );
        verify
            .integration_by_parts
            .merge(check_integration_by_parts(&u, &v, &spectral.forms, None)?);
    }
    if let Some(idx) = primary {
        let outcome = &outcomes[idx];
        let solution = outcome.result.as_ref().expect("primary is solved");
        let report = verify_solution(
            &spectral.grid,
            &solution.u_star,
            &spectral.forms,
            &trunc,
            &outcome.cone,
        )?;
        let (mp, _) = max_principle_check(
            &spectral.forms,
            &solution.u_star,
            10.0 * solution.residual_rel.max(1e-10),
        )?;
        verify.max_principle = Some(mp);
        let ok = report.all_pass();
        verify.solution = Some(report);
        if !ok {
            let names: Vec<String> = verify
                .solution
                .as_ref()
                .unwrap()
                .failed()
                .map(|c| format!("{} ({:.3e} vs {:.3e})", c.name, c.measured, c.tolerance))
                .collect();
            let bundle_err = Error::Verification(names.join("; "));
            // reports are still emitted by the caller before exiting 4
            return Err(bundle_err);
        }
    }
    Ok(PipelineArtifacts {
        spectral,
        hypotheses,
        embedding,
        trunc,
        constancy,
        f3_margin,
        outcomes,
        primary,
        verify,
    })
}

/// Rebuilds the first band's solver error by value (errors are not Clone).
fn reclone_solver_error(outcomes: &[BandOutcome]) -> Error {
    for o in outcomes {
        match &o.result {
            Err(Error::Geometry { message, energy_profile }) => {
                return Error::Geometry {
                    message: message.clone(),
                    energy_profile: energy_profile.clone(),
                }
            }
            Err(Error::Solver { message, residual, iterations }) => {
                return Error::Solver {
                    message: message.clone(),
                    residual: *residual,
                    iterations: *iterations,
                }
            }
            Err(e) => return Error::Contract(format!("band solve failed: {e}")),
            Ok(_) => {}
        }
    }
    Error::Contract("no band outcome to report".into())
}

fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes every report for the completed pipeline into the configured output
/// directory and returns the paths. Deterministic for a fixed config and
/// seed except for the `timestamp_unix` field of `result.json`.
pub fn emit_reports(
    config: &RunConfig,
    artifacts: &PipelineArtifacts,
    dump_matrices: bool,
) -> Result<Vec<PathBuf>> {
    let dir = &config.outputs.directory;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();

    let bands: Vec<serde_json::Value> = artifacts
        .outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(r) => json!({
                "lower": o.cone.lower,
                "upper": o.cone.upper,
                "status": if r.resolved { "solved" } else { "unresolved" },
                "level": r.level,
                "residual": r.residual,
                "residual_rel": r.residual_rel,
                "equation_residual": r.equation_residual,
                "nonconstancy_linf": r.nonconstancy_linf,
            }),
            Err(e) => json!({
                "lower": o.cone.lower,
                "upper": o.cone.upper,
                "status": "failed",
                "message": e.to_string(),
            }),
        })
        .collect();
    let solution = artifacts.primary.map(|i| artifacts.outcomes[i].result.as_ref().unwrap());
    let result = json!({
        "schema_version": crate::config::SCHEMA_VERSION,
        "timestamp_unix": unix_timestamp(),
        "radius": artifacts.spectral.choice.radius,
        "radius_auto": artifacts.spectral.choice.auto,
        "radius_trail": artifacts.spectral.choice.trail,
        "lambda2_rad": artifacts.spectral.lambda2_rad,
        "lambda2_plus": artifacts.spectral.lambda2_plus,
        "f3_margin": artifacts.f3_margin,
        "only_constants_criterion": artifacts.constancy.only_constants,
        "k1": artifacts.trunc.k1,
        "k_inf": artifacts.trunc.k_inf,
        "k2": artifacts.trunc.k2,
        "mu": artifacts.trunc.mu,
        "t0": artifacts.trunc.t0,
        "c": solution.map(|r| r.level),
        "residual": solution.map(|r| r.residual),
        "residual_rel": solution.map(|r| r.residual_rel),
        "equation_residual": solution.map(|r| r.equation_residual),
        "energy_u0": solution.map(|r| r.energy_u0),
        "nonconstancy_linf": solution.map(|r| r.nonconstancy_linf),
        "bands": bands,
    });
    let result_path = dir.join("result.json");
    write_json(&result_path, &result)?;
    written.push(result_path);

    if let Some(r) = solution {
        let mut csv = Vec::new();
        write_profile_csv(&mut csv, &artifacts.spectral.grid, &r.u_star)?;
        let path = dir.join("solution.csv");
        write_text(&path, std::str::from_utf8(&csv).expect("csv is utf-8"))?;
        written.push(path);

        let mut energies = String::from("index,energy\n");
        for (i, e) in r.path_energies.iter().enumerate() {
            energies.push_str(&format!("{i},{e:.17e}\n"));
        }
        let path = dir.join("path_energies.csv");
        write_text(&path, &energies)?;
        written.push(path);
    }

    written.push(write_eigs_reports(config, &artifacts.spectral, dump_matrices)?);
    let path = dir.join("hypotheses.json");
    write_json(
        &path,
        &json!({
            "report": artifacts.hypotheses,
            "constancy": artifacts.constancy,
            "embedding": artifacts.embedding,
        }),
    )?;
    written.push(path);
    let path = dir.join("verify.json");
    write_json(&path, &artifacts.verify)?;
    written.push(path);
    Ok(written)
}

/// Writes `eigs.json` and the eigenfunction profiles; with `dump_matrices`,
/// also the reduced form and mass vector. Returns the `eigs.json` path.
pub fn write_eigs_reports(
    config: &RunConfig,
    spectral: &SpectralArtifacts,
    dump_matrices: bool,
) -> Result<PathBuf> {
    let dir = &config.outputs.directory;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let eigs = json!({
        "radius": spectral.choice.radius,
        "eigenvalues": spectral.eigs.iter().map(|p| p.lambda).collect::<Vec<_>>(),
        "lambda2_rad": spectral.lambda2_rad,
        "lambda2_plus": spectral.lambda2_plus,
        "gap": spectral.lambda2_plus - spectral.lambda2_rad,
    });
    let eigs_path = dir.join("eigs.json");
    write_json(&eigs_path, &eigs)?;

    let grid = &spectral.grid;
    let mut csv = String::from("r");
    for k in 1..=spectral.eigs.len() {
        csv.push_str(&format!(",phi_{k}"));
    }
    csv.push('\n');
    for (i, &r) in grid.interior_nodes().iter().enumerate() {
        csv.push_str(&format!("{r:.17e}"));
        for pair in &spectral.eigs {
            csv.push_str(&format!(",{:.17e}", pair.eigenfunction.interior[i]));
        }
        csv.push('\n');
    }
    write_text(&dir.join("eigenfunctions.csv"), &csv)?;

    if dump_matrices {
        let mut coo = Vec::new();
        write_matrix_coo(&mut coo, &spectral.forms.a_red)?;
        write_text(&dir.join("a_red.coo"), std::str::from_utf8(&coo).expect("utf-8"))?;
        let mut mass = String::from("index,mass\n");
        for (i, m) in spectral.forms.b_mass.iter().enumerate() {
            mass.push_str(&format!("{i},{m:.17e}\n"));
        }
        write_text(&dir.join("b_mass.csv"), &mass)?;
    }
    Ok(eigs_path)
}

/// The exit-code contract.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_)
        | Error::MeshIntegrity(_)
        | Error::Contract(_)
        | Error::Assembly(_)
        | Error::Hypothesis(_)
        | Error::Truncation(_)
        | Error::Config(_) => 2,
        Error::Geometry { .. } | Error::Solver { .. } => 3,
        Error::Verification(_) => 4,
        Error::Io(_) => 1,
    }
}

/// Machine-readable diagnostic line for stderr.
pub fn diagnostic_json(err: &Error) -> String {
    let kind = match err {
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::MeshIntegrity(_) => "mesh_integrity",
        Error::Contract(_) => "contract",
        Error::Assembly(_) => "assembly",
        Error::Hypothesis(_) => "hypothesis",
        Error::Truncation(_) => "truncation",
        Error::Config(_) => "config",
        Error::Geometry { .. } => "geometry",
        Error::Solver { .. } => "solver",
        Error::Verification(_) => "verification",
        Error::Io(_) => "io",
    };
    let mut value = json!({
        "error": err.to_string(),
        "kind": kind,
        "exit_code": exit_code(err),
    });
    if let Error::Solver { residual, iterations, .. } = err {
        value["residual"] = json!(residual);
        value["iterations"] = json!(iterations);
    }
    value.to_string()
}

/// `oracle` subcommand: forces a tiny instance of the configured geometry
/// (the brute-force assembly is quadratic in every count) and runs the full
/// oracle battery.
pub fn run_oracle(config: &RunConfig) -> Result<VerificationReport> {
    config.validate()?;
    let radius = config.domain.r.unwrap_or(config.domain.r0 + 1.0);
    let grid = build_grid(config.domain_spec(radius), 6, 3, config.grid.grading)?;
    let report = nonlocal_neumann::verify::oracle_compare(&grid)?;
    let dir = &config.outputs.directory;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    write_json(&dir.join("oracle.json"), &report)?;
    if !report.all_pass() {
        let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        return Err(Error::Verification(format!(
            "oracle comparison failed: {}",
            names.join(", ")
        )));
    }
    Ok(report)
}

/// `hypotheses` subcommand: spectral stage plus the scan, written as JSON.
/// Failing required hypotheses exit 2 after the report is on disk.
pub fn run_hypotheses(config: &RunConfig) -> Result<HypothesisReport> {
    let spec = config.nonlinearity_spec()?;
    let spectral = run_spectral(config)?;
    let report = check_hypotheses(&spec, spectral.lambda2_plus, config.truncation.t_scan)?;
    let dir = &config.outputs.directory;
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    write_json(&dir.join("hypotheses.json"), &json!({ "report": report }))?;
    if !report.required_ok() {
        return Err(Error::Hypothesis(format!(
            "required hypotheses failed on {}",
            spec.describe()
        )));
    }
    Ok(report)
}

#[allow(unused_imports)]
use std::io::Write;
