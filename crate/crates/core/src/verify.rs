//! Independent invariant battery: every identity, bound, and structural claim
//! checked against the computed objects, plus brute-force oracle comparisons
//! on tiny instances. Failed checks are report entries carrying a data
//! snapshot, never errors; errors are reserved for contract misuse.

use crate::assembly::{
    assemble_forms, bilinear_form, neumann_derivative, neumann_extension, norms, AssembledForms,
    RadialFunction,
};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::nonlinearity::{NonlinearitySpec, TruncatedNonlinearity};
use crate::oracles::{brute_force_forms, jacobi_generalized, lambda2_plus_enumeration,
    pava_qp_enumeration};
use crate::spectral::{lambda2_increasing, neumann_eigs, pava_project, Orientation};
use crate::variational::{tilde_t, ConeSpec};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative stationarity residual accepted of a converged solution.
pub const TOL_RESIDUAL_REL: f64 = 1e-6;
/// Relative tolerance of the critical-point identities.
pub const TOL_IDENTITY_REL: f64 = 1e-6;
/// Same-matrix integration-by-parts defect, relative to the term scale.
pub const TOL_IBP_SAME_MATRIX: f64 = 1e-12;
/// Independent-quadrature integration-by-parts defect.
pub const TOL_IBP_INDEPENDENT: f64 = 1e-6;
/// Distinctness margin: sup distances below this multiple of the residual
/// scale are reported as unresolved rather than claimed.
pub const DISTINCTNESS_FACTOR: f64 = 10.0;
/// Safety factor applied to the empirical embedding-scan maximum.
pub const EMBEDDING_SAFETY: f64 = 2.0;

/// One named check: a measured value against a tolerance, with a provenance
/// note; failures carry a snapshot of the offending data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<Vec<f64>>,
}

/// Ordered collection of named checks; a report never omits a configured
/// check, and `all_pass` is the single gate callers branch on.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    /// Upper-bound check: passes when `measured <= tolerance`.
    pub fn bound(&mut self, name: &str, measured: f64, tolerance: f64, note: &str, data: &[f64]) {
        let pass = measured <= tolerance;
        self.push_raw(name, measured, tolerance, pass, note, data);
    }

    /// Lower-bound check: passes when `measured > threshold` (distinctness
    /// and positivity certificates).
    pub fn exceeds(&mut self, name: &str, measured: f64, threshold: f64, note: &str, data: &[f64]) {
        let pass = measured > threshold;
        self.push_raw(name, measured, threshold, pass, note, data);
    }

    fn push_raw(
        &mut self,
        name: &str,
        measured: f64,
        tolerance: f64,
        pass: bool,
        note: &str,
        data: &[f64],
    ) {
        self.checks.push(Check {
            name: name.to_string(),
            measured,
            tolerance,
            pass,
            note: note.to_string(),
            snapshot: if pass { None } else { Some(data.to_vec()) },
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn merge(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
    }
}

fn h_norm(forms: &AssembledForms, u: &DVector<f64>) -> f64 {
    let semi_sq = (&forms.a_red * u).dot(u).max(0.0);
    let l2_sq: f64 = u.iter().zip(forms.b_mass.iter()).map(|(x, m)| m * x * x).sum();
    (semi_sq + l2_sq).sqrt()
}

/// Runs the full invariant battery on one solution candidate: stationarity
/// residual, the v = 1 critical-point identities, the nonlocal Neumann trace,
/// the a priori norm bounds, strict positivity away from the origin, exact
/// cone membership, and the distinctness certificates. Constants that the
/// pipeline has not filled in (K_1, K_2) are checked against an infinite
/// bound and flagged in the note, so the report never omits a check.
pub fn verify_solution(
    grid: &RadialGrid,
    u_star: &RadialFunction,
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    cone: &ConeSpec,
) -> Result<VerificationReport> {
    let u = &u_star.interior;
    if u.len() != forms.b_mass.len() {
        return Err(Error::Contract(format!(
            "solution has {} interior values on a grid with {}",
            u.len(),
            forms.b_mass.len()
        )));
    }
    let mut report = VerificationReport::default();
    let scale_u = h_norm(forms, u).max(f64::MIN_POSITIVE);

    // stationarity of the safeguarded operator
    let (image, defect) = tilde_t(forms, trunc, cone, u)?;
    let residual_abs = h_norm(forms, &(u - &image));
    report.bound(
        "stationarity_residual",
        residual_abs / scale_u,
        TOL_RESIDUAL_REL,
        &format!("||u - P_C T~(u)||_H / ||u||_H; pre-projection cone defect {defect:.3e}"),
        u.as_slice(),
    );

    // testing the weak form with v = 1: sum m u = sum m f~(u)
    let mut mu = 0.0;
    let mut mf = 0.0;
    for (x, m) in u.iter().zip(forms.b_mass.iter()) {
        mu += m * x;
        mf += m * trunc.f(*x);
    }
    report.bound(
        "mass_identity",
        (mu - mf).abs(),
        TOL_IDENTITY_REL * mu.abs().max(mf.abs()).max(f64::MIN_POSITIVE),
        &format!("sum m u = {mu:.12e} vs sum m f~(u) = {mf:.12e}"),
        u.as_slice(),
    );

    // the same weak form rearranged: the mass-weighted fractional Laplacian
    // sums to sum m (f~(u) - u)
    let action = &forms.a_red * u;
    let lap_sum: f64 = action.iter().sum();
    let lap_scale: f64 = action.iter().map(|a| a.abs()).sum::<f64>().max(1.0);
    report.bound(
        "fractional_laplacian_mean",
        (lap_sum - (mf - mu)).abs(),
        TOL_IDENTITY_REL * lap_scale,
        "sum_i m_i (-Delta)^s u(x_i) vs sum m (f~(u) - u)",
        action.as_slice(),
    );

    // nonlocal Neumann condition at the exterior nodes
    let extended;
    let with_ext = if u_star.exterior.is_some() {
        u_star
    } else {
        extended = neumann_extension(forms, u);
        &extended
    };
    let nsd = neumann_derivative(forms, with_ext)?;
    let sup_u = u.amax();
    report.bound(
        "neumann_trace",
        nsd.amax(),
        TOL_IDENTITY_REL * sup_u.max(1.0),
        "max_j |N_s u(x_j)| over exterior nodes; zero iff the exterior values are the discrete extension",
        nsd.as_slice(),
    );

    // a priori bounds; unfilled constants degrade to infinite bounds
    let l1: f64 = u.iter().zip(forms.b_mass.iter()).map(|(x, m)| m * x.abs()).sum();
    let (k1_tol, k1_note) = match trunc.k1 {
        Some(k1) => (k1, format!("||u||_L1 <= K_1 = {k1:.6e}")),
        None => (f64::INFINITY, "K_1 unavailable: truncation not annotated by the pipeline".into()),
    };
    report.bound("l1_bound", l1, k1_tol, &k1_note, u.as_slice());
    report.bound(
        "linf_bound",
        sup_u,
        trunc.k_inf,
        &format!("||u||_inf <= K_inf = {:.6e}", trunc.k_inf),
        u.as_slice(),
    );
    let full = norms(forms, u).2;
    let (k2_tol, k2_note) = match trunc.k2 {
        Some(k2) => (k2, format!("||u||_Hs <= K_2 = {k2:.6e}")),
        None => (f64::INFINITY, "K_2 unavailable: truncation not annotated by the pipeline".into()),
    };
    report.bound("hs_bound", full, k2_tol, &k2_note, u.as_slice());

    // strict positivity away from the origin
    let mut min_positive_r = f64::INFINITY;
    for (i, &x) in u.iter().enumerate() {
        if grid.nodes[grid.i_lo + i] > 0.0 {
            min_positive_r = min_positive_r.min(x);
        }
    }
    report.exceeds(
        "positivity",
        min_positive_r,
        0.0,
        "min u over nodes with r > 0",
        u.as_slice(),
    );

    // exact cone membership
    report.bound(
        "monotonicity_exact",
        cone.violation(u),
        0.0,
        "sup monotonicity defect; must vanish exactly",
        u.as_slice(),
    );

    // distinctness certificates, thresholded at the residual scale
    let distinct_threshold =
        DISTINCTNESS_FACTOR * residual_abs.max(TOL_RESIDUAL_REL * scale_u);
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in u.iter() {
        umin = umin.min(x);
        umax = umax.max(x);
    }
    report.exceeds(
        "nonconstancy",
        umax - umin,
        distinct_threshold,
        "sup u - inf u against the distinctness margin",
        u.as_slice(),
    );
    let in_band: Vec<f64> = trunc
        .u0_list
        .iter()
        .copied()
        .filter(|&t| t > cone.lower && t < cone.upper)
        .collect();
    if in_band.is_empty() {
        report.exceeds(
            "distinct_from_u0",
            f64::INFINITY,
            distinct_threshold,
            "no admissible fixed point inside the cone band",
            u.as_slice(),
        );
    } else {
        let dist = in_band
            .iter()
            .map(|&u0| u.iter().map(|&x| (x - u0).abs()).fold(0.0f64, f64::max))
            .fold(f64::INFINITY, f64::min);
        report.exceeds(
            "distinct_from_u0",
            dist,
            distinct_threshold,
            "min over admissible fixed points of ||u - u0||_inf",
            u.as_slice(),
        );
    }
    Ok(report)
}

/// Checks the discrete integration-by-parts identity
/// <u, v>_A = sum_int m v (-Delta)^s u + sum_ext m v N_s u
/// on one pair. With `oracle_forms` present, the right side is additionally
/// re-evaluated from the independently quadratured matrices and compared at
/// the coarser tolerance.
pub fn check_integration_by_parts(
    u: &RadialFunction,
    v: &RadialFunction,
    forms: &AssembledForms,
    oracle_forms: Option<&AssembledForms>,
) -> Result<VerificationReport> {
    let (wu, wv) = match (&u.exterior, &v.exterior) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Contract(
                "integration by parts needs exterior values on both arguments".into(),
            ))
        }
    };
    let mut report = VerificationReport::default();
    let lhs = bilinear_form(forms, u, v)?;
    let rhs = |f: &AssembledForms| -> f64 {
        let (rows_i, rows_e) = f.full_rows(&u.interior, wu);
        let mut total = 0.0;
        for i in 0..rows_i.len() {
            // literal m * v * (-Delta)^s u with the pointwise operator value
            total += f.b_mass[i] * v.interior[i] * (rows_i[i] / f.b_mass[i]);
        }
        for j in 0..rows_e.len() {
            total += f.ext_mass[j] * wv[j] * (rows_e[j] / f.ext_mass[j]);
        }
        total
    };
    let same = rhs(forms);
    let scale = (lhs.abs() + same.abs()).max(1.0);
    report.bound(
        "ibp_same_matrix",
        (lhs - same).abs(),
        TOL_IBP_SAME_MATRIX * scale,
        &format!("<u,v>_A = {lhs:.12e} vs operator sum = {same:.12e}"),
        &[lhs, same],
    );
    if let Some(oracle) = oracle_forms {
        let indep = rhs(oracle);
        report.bound(
            "ibp_independent_quadrature",
            (lhs - indep).abs(),
            TOL_IBP_INDEPENDENT * scale,
            &format!("<u,v>_A = {lhs:.12e} vs independently quadratured sum = {indep:.12e}"),
            &[lhs, indep],
        );
    }
    Ok(report)
}

/// Verdict of the only-constant-solutions criterion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstancyCheck {
    /// True when max f' on [0, K_inf] < lambda_2^rad + 1: every solution in
    /// the radial cone is constant, so a non-constancy certificate must not
    /// fire on this configuration.
    pub only_constants: bool,
    /// lambda_2^rad + 1 - max f'; positive iff `only_constants`.
    pub margin: f64,
    pub max_fprime: f64,
}

const CONSTANCY_SCAN: usize = 20_000;

/// Dense scan of f' on [0, K_inf] against the slope threshold
/// lambda_2^rad + 1.
pub fn constancy_criterion(
    spec: &NonlinearitySpec,
    k_inf: f64,
    lambda2_rad: f64,
) -> Result<ConstancyCheck> {
    if !(k_inf > 0.0 && k_inf.is_finite()) || !lambda2_rad.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "constancy criterion needs finite K_inf > 0 and lambda_2^rad, got {k_inf}, {lambda2_rad}"
        )));
    }
    let mut max_fprime = f64::NEG_INFINITY;
    for k in 0..=CONSTANCY_SCAN {
        let t = k_inf * k as f64 / CONSTANCY_SCAN as f64;
        max_fprime = max_fprime.max(spec.fprime(t));
    }
    let margin = lambda2_rad + 1.0 - max_fprime;
    Ok(ConstancyCheck { only_constants: margin > 0.0, margin, max_fprime })
}

/// Result of the empirical L^inf embedding scan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmbeddingScan {
    /// max over the sampled cone functions of ||u||_inf / ||u||_Hs.
    pub scan_max: f64,
    /// The constant handed to the a priori bounds: safety factor times the
    /// scan maximum.
    pub c_emb: f64,
    pub n_samples: usize,
}

/// Estimates the cone embedding constant C with ||u||_inf <= C ||u||_Hs by
/// maximizing the ratio over constants, every monotone indicator profile,
/// and seeded random monotone profiles. The sup of a monotone profile sits
/// at the domain edge, so indicators are the sharp candidates; constants
/// contribute the exact lower bound 1/sqrt(|Omega|).
pub fn embedding_scan(
    forms: &AssembledForms,
    cone: &ConeSpec,
    n_samples: usize,
    seed: u64,
) -> Result<EmbeddingScan> {
    if n_samples < 100 {
        return Err(Error::InvalidParameter(format!(
            "embedding scan needs at least 100 samples, got {n_samples}"
        )));
    }
    let dim = forms.b_mass.len();
    let ratio = |u: &DVector<f64>| -> f64 {
        let (semi, l2, _, _) = norms(forms, u);
        u.amax() / (l2 + semi).max(f64::MIN_POSITIVE)
    };
    let orient = |mut v: DVector<f64>| -> DVector<f64> {
        if cone.orientation == Orientation::Nonincreasing {
            v.as_mut_slice().reverse();
        }
        v
    };
    let mut scan_max = ratio(&DVector::from_element(dim, 1.0));
    for k in 0..dim {
        let ind = orient(DVector::from_fn(dim, |i, _| if i >= k { 1.0 } else { 0.0 }));
        scan_max = scan_max.max(ratio(&ind));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let mut acc = 0.0;
        let steps = DVector::from_fn(dim, |_, _| {
            acc += rng.random_range(0.0..1.0f64).powi(3);
            acc
        });
        scan_max = scan_max.max(ratio(&orient(steps)));
    }
    Ok(EmbeddingScan { scan_max, c_emb: EMBEDDING_SAFETY * scan_max, n_samples })
}

const ORACLE_EIGS: usize = 4;
const TOL_ORACLE_ENTRY: f64 = 1e-8;
const TOL_ORACLE_EIGVAL: f64 = 1e-10;
const TOL_ORACLE_LAMBDA2: f64 = 1e-9;
const ORACLE_PAVA_VECTORS: usize = 1000;

/// Anti-regression harness on one tiny instance: the assembled reduced form
/// against dense double quadrature, the eigensolver against a dense
/// generalized Jacobi solve, lambda_2^{+,r} against pooling-pattern
/// enumeration, PAVA against the brute-force QP (bitwise), and the
/// scaling self-test that doubles the quadratic form and demands every
/// eigenvalue double with it while eigenfunctions and projections stay put.
pub fn oracle_compare(grid: &RadialGrid) -> Result<VerificationReport> {
    let forms = assemble_forms(grid)?;
    let oracle = brute_force_forms(grid)?;
    let dim = forms.b_mass.len();
    let mut report = VerificationReport::default();

    let mut entry_diff = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            entry_diff = entry_diff.max((forms.a_red[(i, j)] - oracle.a_red[(i, j)]).abs());
        }
    }
    report.bound(
        "a_red_entrywise",
        entry_diff,
        TOL_ORACLE_ENTRY,
        "max entrywise |A_red - A_red^oracle|",
        forms.a_red.as_slice(),
    );

    // the eigen rows isolate the solver: dense Jacobi on the same assembled
    // matrix (the matrix itself is covered by the entrywise row above)
    let k = ORACLE_EIGS.min(dim);
    let pairs = neumann_eigs(&forms, k)?;
    let b = DMatrix::from_diagonal(&forms.b_mass);
    let (dense_vals, dense_vecs) = jacobi_generalized(&forms.a_red, &b)?;
    let mut val_diff = 0.0f64;
    let mut vec_diff = 0.0f64;
    for (i, pair) in pairs.iter().enumerate() {
        val_diff = val_diff.max((pair.lambda - dense_vals[i]).abs());
        let ours = &pair.eigenfunction.interior;
        let dense = dense_vecs.column(i);
        let sign = if ours.dot(&dense.clone_owned()) >= 0.0 { 1.0 } else { -1.0 };
        for j in 0..dim {
            vec_diff = vec_diff.max((ours[j] - sign * dense[j]).abs());
        }
    }
    report.bound(
        "eigenvalue_diff",
        val_diff,
        TOL_ORACLE_EIGVAL,
        &format!("first {k} eigenvalues vs dense generalized Jacobi"),
        &dense_vals,
    );
    report.bound(
        "eigenvector_diff",
        vec_diff,
        TOL_ORACLE_EIGVAL,
        "B-normalized eigenvectors vs dense solve, sign-aligned",
        &dense_vals,
    );

    let lam2 = lambda2_increasing(&forms, Orientation::Nondecreasing, 0)?.lambda;
    let lam2_oracle = lambda2_plus_enumeration(&forms, Orientation::Nondecreasing)?;
    report.bound(
        "lambda2_plus",
        (lam2 - lam2_oracle).abs(),
        TOL_ORACLE_LAMBDA2,
        &format!("projected solve {lam2:.12e} vs pooling enumeration {lam2_oracle:.12e}"),
        &[lam2, lam2_oracle],
    );

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let weights: Vec<f64> = forms.b_mass.iter().copied().collect();
    let mut pava_diff = 0.0f64;
    for case in 0..ORACLE_PAVA_VECTORS {
        let values: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let orientation = if case % 2 == 0 {
            Orientation::Nondecreasing
        } else {
            Orientation::Nonincreasing
        };
        let fast = pava_project(&values, &weights, orientation)?;
        let brute = pava_qp_enumeration(&values, &weights, orientation)?;
        for i in 0..dim {
            pava_diff = pava_diff.max((fast[i] - brute[i]).abs());
        }
    }
    report.bound(
        "pava_exact",
        pava_diff,
        0.0,
        &format!("PAVA vs brute-force QP on {ORACLE_PAVA_VECTORS} random vectors, bitwise"),
        &[pava_diff],
    );

    // scaling self-test: beta x the form must move every eigenvalue by beta
    // exactly and nothing else; a mis-scaled kernel constant would surface
    // here as a uniform factor
    let beta = 2.0;
    let mut scaled = forms.clone();
    scaled.kappa *= beta;
    scaled.a_ii *= beta;
    scaled.d_i *= beta;
    scaled.c_ie *= beta;
    scaled.g_lump *= beta;
    scaled.a_red *= beta;
    scaled.q_tail *= beta;
    scaled.tail_col *= beta;
    scaled.tail_scalar *= beta;
    let scaled_pairs = neumann_eigs(&scaled, k)?;
    let mut scaling_diff = 0.0f64;
    let mut fun_diff = 0.0f64;
    for (orig, sc) in pairs.iter().zip(scaled_pairs.iter()) {
        scaling_diff = scaling_diff
            .max((sc.lambda - beta * orig.lambda).abs() / (1.0 + beta * orig.lambda.abs()));
        let a = &orig.eigenfunction.interior;
        let b = &sc.eigenfunction.interior;
        let sign = if a.dot(b) >= 0.0 { 1.0 } else { -1.0 };
        fun_diff = fun_diff.max((a - b * sign).amax());
    }
    report.bound(
        "eigenvalue_scaling",
        scaling_diff,
        1e-8,
        &format!("lambda_i(beta A) = beta lambda_i(A) at beta = {beta}"),
        &[beta],
    );
    report.bound(
        "eigenfunction_scaling_invariance",
        fun_diff,
        1e-6,
        "eigenfunctions unchanged under form scaling",
        &[beta],
    );
    Ok(report)
}

/// Discrete maximum-principle harness: when the operator signs admit the
/// hypotheses ((-Delta)^s u >= -tol at interior nodes, u >= 0 everywhere,
/// N_s u >= -tol at exterior nodes), the conclusion must hold: either
/// min u > 0 on the interior or ||u||_inf <= tol * scale. Hypotheses not
/// met make the check vacuously true; `applied` distinguishes the cases.
pub fn max_principle_check(
    forms: &AssembledForms,
    u: &RadialFunction,
    tol: f64,
) -> Result<(Check, bool)> {
    let w = u.exterior.as_ref().ok_or_else(|| {
        Error::Contract("maximum-principle check needs exterior values".into())
    })?;
    let lap = {
        let rows = forms.full_rows(&u.interior, w).0;
        DVector::from_iterator(
            rows.len(),
            rows.iter().zip(forms.b_mass.iter()).map(|(r, m)| r / m),
        )
    };
    let nsd = neumann_derivative(forms, u)?;
    let nonneg = u.interior.iter().all(|&x| x >= 0.0) && w.iter().all(|&x| x >= 0.0);
    let applies = nonneg
        && lap.iter().all(|&v| v >= -tol)
        && nsd.iter().all(|&v| v >= -tol);
    let sup = u.interior.amax().max(w.amax());
    let min_int = u.interior.min();
    let conclusion = min_int > 0.0 || sup <= tol * sup.max(1.0);
    let pass = !applies || conclusion;
    Ok((
        Check {
            name: "max_principle".into(),
            measured: min_int,
            tolerance: tol,
            pass,
            note: if applies {
                format!("hypotheses hold; min_int u = {min_int:.3e}, sup = {sup:.3e}")
            } else {
                "operator sign hypotheses not met; vacuous".into()
            },
            snapshot: if pass { None } else { Some(u.interior.as_slice().to_vec()) },
        },
        applies,
    ))
}
