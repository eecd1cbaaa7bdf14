//! Neumann fractional spectrum and the cone-constrained second increasing
//! eigenvalue.
//!
//! The generalized pencil A_red v = lambda B v (B the lumped mass) has
//! 0 = lambda_1 < lambda_2 <= ... with constant first eigenfunction; in this
//! radial discretization pair 2 realizes lambda_2^rad. The cone-constrained
//! value lambda_2^{+,r} minimizes the same Rayleigh quotient over monotone
//! zero-B-mean vectors; it is computed by projected gradient on the B-sphere
//! with Barzilai-Borwein steps and multi-starts.

use crate::assembly::{neumann_extension, AssembledForms};
use crate::error::{Error, Result};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Monotonicity orientation of the radial cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Nondecreasing,
    Nonincreasing,
}

/// A generalized eigenpair of (A_red, B); the eigenfunction is B-normalized
/// and carries its Neumann extension.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    pub eigenfunction: crate::assembly::RadialFunction,
}

pub const MULTISTARTS: usize = 16;
pub const STATIONARITY_TOL: f64 = 1e-9;
pub const MAX_ITERS: usize = 10_000;

/// First k generalized symmetric eigenpairs of A_red v = lambda B v,
/// ascending. Eigenvectors are B-orthonormal; signs are fixed so the entry of
/// largest magnitude is positive.
pub fn neumann_eigs(forms: &AssembledForms, k: usize) -> Result<Vec<EigenPair>> {
    let dim = forms.b_mass.len();
    if k == 0 || k > dim {
        return Err(Error::InvalidParameter(format!(
            "eigenpair count {k} outside 1..={dim}"
        )));
    }
    let isqrt: DVector<f64> = forms.b_mass.map(|m| m.sqrt().recip());
    let mut c = forms.a_red.clone();
    for i in 0..dim {
        for j in 0..dim {
            c[(i, j)] *= isqrt[i] * isqrt[j];
        }
    }
    // exact symmetry guards the Schur round-off asymmetry
    c = 0.5 * (&c + c.transpose());
    let eig = nalgebra::SymmetricEigen::try_new(c, 1e-14, 100_000).ok_or_else(|| {
        Error::Solver {
            message: format!("symmetric eigensolver failed to converge on dim {dim}"),
            residual: f64::NAN,
            iterations: 100_000,
        }
    })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut pairs = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let y = eig.eigenvectors.column(idx);
        let mut v = DVector::from_iterator(dim, y.iter().zip(isqrt.iter()).map(|(a, b)| a * b));
        let lead = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.neg_mut();
        }
        pairs.push(EigenPair {
            lambda: eig.eigenvalues[idx],
            eigenfunction: neumann_extension(forms, &v),
        });
    }
    Ok(pairs)
}

/// Weighted least-squares projection onto monotone vectors
/// (pool-adjacent-violators).
pub fn pava_project(values: &[f64], weights: &[f64], orientation: Orientation) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::InvalidParameter(format!(
            "pava: {} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "pava: weights must be positive, got {w}"
        )));
    }
    match orientation {
        Orientation::Nondecreasing => Ok(pava_up(values, weights)),
        Orientation::Nonincreasing => {
            let neg: Vec<f64> = values.iter().map(|v| -v).collect();
            Ok(pava_up(&neg, weights).into_iter().map(|v| -v).collect())
        }
    }
}

fn pava_up(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // blocks of (weight sum, weighted value sum, length); merge while the
    // block means decrease
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((w, w * v, 1));
        while blocks.len() >= 2 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.1 * b.0 <= b.1 * a.0 {
                break; // means nondecreasing (cross-multiplied, weights > 0)
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (a.0 + b.0, a.1 + b.1, a.2 + b.2);
        }
    }
    // re-average each block by fresh ascending summation: the emitted means
    // are then independent of the merge order that formed the block
    let mut out = Vec::with_capacity(values.len());
    let mut start = 0;
    for (_, _, len) in blocks {
        let (mut wsum, mut wvsum) = (0.0, 0.0);
        for j in start..start + len {
            wsum += weights[j];
            wvsum += weights[j] * values[j];
        }
        out.extend(std::iter::repeat(wvsum / wsum).take(len));
        start += len;
    }
    out
}

/// Exact B-metric projection onto {monotone} intersect {zero B-mean}: the
/// monotone cone is invariant under constant shifts and PAVA commutes with
/// them, so one PAVA followed by one mean subtraction is the joint fixed
/// point (the alternating sequence is stationary immediately after).
fn project_cone(forms: &AssembledForms, v: &DVector<f64>, orientation: Orientation) -> DVector<f64> {
    let w = forms.b_mass.as_slice();
    let mut p = DVector::from_vec(pava_project(v.as_slice(), w, orientation).expect("sizes fixed"));
    let mean = forms.b_mass.dot(&p) / forms.volume;
    p.add_scalar_mut(-mean);
    p
}

fn b_norm(forms: &AssembledForms, v: &DVector<f64>) -> f64 {
    v.iter()
        .zip(forms.b_mass.iter())
        .map(|(x, m)| m * x * x)
        .sum::<f64>()
        .sqrt()
}

/// One projected-gradient run from `start`; returns the converged
/// (lambda, v) or the best iterate on failure.
fn run_projected_gradient(
    forms: &AssembledForms,
    start: &DVector<f64>,
    orientation: Orientation,
    lambda_max: f64,
) -> std::result::Result<(f64, DVector<f64>), (f64, DVector<f64>, f64)> {
    let normalize = |v: &DVector<f64>| -> Option<DVector<f64>> {
        let n = b_norm(forms, v);
        (n > 1e-13).then(|| v / n)
    };
    let project = |v: &DVector<f64>| project_cone(forms, v, orientation);

    let mut v = match normalize(&project(start)) {
        Some(v) => v,
        None => return Err((f64::INFINITY, start.clone(), f64::INFINITY)),
    };
    let av = &forms.a_red * &v;
    let mut lambda = av.dot(&v);
    let mut grad: DVector<f64> =
        DVector::from_iterator(v.len(), av.iter().zip(forms.b_mass.iter()).map(|(a, m)| a / m))
            - lambda * &v;
    let mut alpha = 1.0 / lambda_max.max(1e-300);
    let (alpha_min, alpha_max) = (1e-4 / lambda_max.max(1e-300), 1e4 / lambda_max.max(1e-300));

    for _ in 0..MAX_ITERS {
        let mut accepted = None;
        for _ in 0..60 {
            let trial = project(&(&v - alpha * &grad));
            let pg = b_norm(forms, &(&trial - &v)) / alpha;
            match normalize(&trial) {
                Some(vn) => {
                    let avn = &forms.a_red * &vn;
                    let ln = avn.dot(&vn);
                    if ln <= lambda + 1e-14 * lambda.abs().max(1.0) {
                        accepted = Some((vn, avn, ln, pg));
                        break;
                    }
                }
                None => {}
            }
            alpha *= 0.5;
            if alpha < alpha_min {
                break;
            }
        }
        let Some((vn, avn, ln, pg)) = accepted else {
            return Err((lambda, v, f64::INFINITY));
        };
        let gn: DVector<f64> = DVector::from_iterator(
            vn.len(),
            avn.iter().zip(forms.b_mass.iter()).map(|(a, m)| a / m),
        ) - ln * &vn;
        if pg <= STATIONARITY_TOL * lambda.abs().max(1.0) {
            return Ok((ln, vn));
        }
        // Barzilai-Borwein step in the B metric, safeguarded
        let dv = &vn - &v;
        let dg = &gn - &grad;
        let num: f64 = dv.iter().zip(forms.b_mass.iter()).map(|(x, m)| m * x * x).sum();
        let den: f64 = dv
            .iter()
            .zip(dg.iter())
            .zip(forms.b_mass.iter())
            .map(|((x, y), m)| m * x * y)
            .sum();
        alpha = if den > 0.0 {
            (num / den).clamp(alpha_min, alpha_max)
        } else {
            alpha_max
        };
        v = vn;
        lambda = ln;
        grad = gn;
    }
    Err((lambda, v, f64::INFINITY))
}

/// Minimizes the Rayleigh quotient over the monotone zero-B-mean cone:
/// returns (lambda_2^{+,r}, v_2). Multi-start projected gradient; start 0 is
/// the projected unconstrained second eigenfunction, the rest are seeded
/// random monotone profiles.
pub fn lambda2_increasing(
    forms: &AssembledForms,
    orientation: Orientation,
    seed: u64,
) -> Result<EigenPair> {
    let dim = forms.b_mass.len();
    let eigs = neumann_eigs(forms, 2.min(dim))?;
    let lambda_max = {
        // cheap upper bound: max diagonal Rayleigh estimate
        (0..dim)
            .map(|i| forms.a_red[(i, i)] / forms.b_mass[i])
            .fold(0.0f64, f64::max)
    };
    let mut starts: Vec<DVector<f64>> = vec![eigs.last().unwrap().eigenfunction.interior.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < MULTISTARTS {
        // random monotone profile: cumulative sums of positive increments
        let mut acc = 0.0;
        let sign = if orientation == Orientation::Nondecreasing { 1.0 } else { -1.0 };
        let v = DVector::from_iterator(
            dim,
            (0..dim).map(|_| {
                acc += sign * rng.random_range(0.0..1.0);
                acc
            }),
        );
        starts.push(v);
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut best_failure: Option<(f64, DVector<f64>, f64)> = None;
    for start in &starts {
        match run_projected_gradient(forms, start, orientation, lambda_max) {
            Ok((l, v)) => {
                if best.as_ref().is_none_or(|(bl, _)| l < *bl) {
                    best = Some((l, v));
                }
            }
            Err(fail) => {
                if best_failure.as_ref().is_none_or(|(bl, _, _)| fail.0 < *bl) {
                    best_failure = Some(fail);
                }
            }
        }
    }
    match best {
        Some((lambda, v)) => Ok(EigenPair {
            lambda,
            eigenfunction: neumann_extension(forms, &v),
        }),
        None => {
            let (lambda, _, residual) = best_failure.expect("at least one start ran");
            Err(Error::Solver {
                message: format!(
                    "lambda_2^{{+,r}} projected gradient did not reach stationarity \
                     {STATIONARITY_TOL:.1e}; best iterate lambda = {lambda}"
                ),
                residual,
                iterations: MAX_ITERS,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_forms;
    use crate::grid::{build_grid, DomainSpec, RadialGrid};

    fn ball_1d(n_int: usize) -> RadialGrid {
        let dom = DomainSpec { n: 1, s: 0.75, r0: 0.0, r: 1.0, r_ext: 8.0 };
        build_grid(dom, n_int, n_int / 2, 2.0).unwrap()
    }

    fn annulus_3d(n_int: usize) -> RadialGrid {
        let dom = DomainSpec { n: 3, s: 0.75, r0: 0.5, r: 2.0, r_ext: 16.0 };
        build_grid(dom, n_int, n_int / 2, 2.0).unwrap()
    }

    #[test]
    fn spectrum_structure() {
        for grid in [ball_1d(16), annulus_3d(12)] {
            let forms = assemble_forms(&grid).unwrap();
            let k = 6.min(grid.n_interior());
            let pairs = neumann_eigs(&forms, k).unwrap();
            // lambda_1 ~ 0 with constant eigenfunction, rest ascending positive
            assert!(pairs[0].lambda / pairs[1].lambda < 1e-8);
            let u1 = &pairs[0].eigenfunction.interior;
            assert!(u1.max() / u1.min() < 1.0 + 1e-6);
            let lmax = pairs.last().unwrap().lambda;
            for w in pairs.windows(2) {
                assert!(w[0].lambda <= w[1].lambda);
            }
            for p in &pairs {
                assert!(p.lambda >= -1e-10 * lmax);
                let n = b_norm(&forms, &p.eigenfunction.interior);
                assert!((n - 1.0).abs() < 1e-10);
            }
            // pairwise B-orthogonality
            for i in 0..k {
                for j in 0..i {
                    let dot: f64 = pairs[i]
                        .eigenfunction
                        .interior
                        .iter()
                        .zip(pairs[j].eigenfunction.interior.iter())
                        .zip(forms.b_mass.iter())
                        .map(|((a, b), m)| m * a * b)
                        .sum();
                    assert!(dot.abs() < 1e-8, "({i},{j}): {dot}");
                }
            }
        }
    }

    #[test]
    fn eig_count_validation() {
        let forms = assemble_forms(&ball_1d(8)).unwrap();
        assert!(neumann_eigs(&forms, 0).is_err());
        assert!(neumann_eigs(&forms, forms.b_mass.len() + 1).is_err());
    }

    #[test]
    fn pava_reference_cases() {
        let w = [1.0, 1.0, 1.0];
        assert_eq!(
            pava_project(&[3.0, 1.0, 2.0], &w, Orientation::Nondecreasing).unwrap(),
            vec![2.0, 2.0, 2.0]
        );
        let sorted = [0.5, 1.0, 4.0];
        assert_eq!(
            pava_project(&sorted, &w, Orientation::Nondecreasing).unwrap(),
            sorted.to_vec()
        );
        assert_eq!(
            pava_project(&[1.0, 3.0], &[1.0, 1.0], Orientation::Nonincreasing).unwrap(),
            vec![2.0, 2.0]
        );
        // weighted pooling: block mean is the weighted mean
        let p = pava_project(&[4.0, 0.0], &[3.0, 1.0], Orientation::Nondecreasing).unwrap();
        assert!((p[0] - 3.0).abs() < 1e-15 && (p[1] - 3.0).abs() < 1e-15);
        assert!(pava_project(&[1.0], &[1.0, 2.0], Orientation::Nondecreasing).is_err());
        assert!(pava_project(&[1.0, 2.0], &[1.0, 0.0], Orientation::Nondecreasing).is_err());
    }

    #[test]
    fn pava_idempotent_lipschitz_order_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let px = pava_project(&x, &w, Orientation::Nondecreasing).unwrap();
            let ppx = pava_project(&px, &w, Orientation::Nondecreasing).unwrap();
            let py = pava_project(&y, &w, Orientation::Nondecreasing).unwrap();
            let wnorm = |a: &[f64], b: &[f64]| -> f64 {
                a.iter()
                    .zip(b)
                    .zip(&w)
                    .map(|((p, q), m)| m * (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            };
            assert!(wnorm(&px, &ppx) < 1e-12);
            assert!(wnorm(&px, &py) <= wnorm(&x, &y) * (1.0 + 1e-12));
            // order preservation: x <= y pointwise implies Px <= Py
            let upper: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a.max(*b)).collect();
            let pu = pava_project(&upper, &w, Orientation::Nondecreasing).unwrap();
            for (a, b) in px.iter().zip(&pu) {
                assert!(a <= &(b + 1e-12));
            }
        }
    }

    #[test]
    fn lambda2_plus_feasible_and_above_lambda2_rad() {
        for grid in [ball_1d(16), annulus_3d(12)] {
            let forms = assemble_forms(&grid).unwrap();
            let rad = neumann_eigs(&forms, 2).unwrap()[1].lambda;
            let pair = lambda2_increasing(&forms, Orientation::Nondecreasing, 0).unwrap();
            let v = &pair.eigenfunction.interior;
            for w in v.as_slice().windows(2) {
                assert!(w[0] <= w[1], "v2 must be nondecreasing");
            }
            let mean = forms.b_mass.dot(v) / forms.volume;
            assert!(mean.abs() < 1e-10);
            assert!((b_norm(&forms, v) - 1.0).abs() < 1e-10);
            assert!(pair.lambda >= rad - 1e-10);
            // orientation symmetry: v -> -v gives the same value
            let down = lambda2_increasing(&forms, Orientation::Nonincreasing, 0).unwrap();
            assert!(
                (down.lambda - pair.lambda).abs() < 1e-6 * pair.lambda,
                "{} vs {}",
                down.lambda,
                pair.lambda
            );
        }
    }

    #[test]
    fn lambda2_plus_equals_rad_when_unconstrained_monotone() {
        // conditional invariant: check monotonicity of the unconstrained second
        // eigenfunction first, then equality
        let forms = assemble_forms(&ball_1d(16)).unwrap();
        let pairs = neumann_eigs(&forms, 2).unwrap();
        let u2 = &pairs[1].eigenfunction.interior;
        let up = u2.as_slice().windows(2).all(|w| w[0] <= w[1]);
        let down = u2.as_slice().windows(2).all(|w| w[0] >= w[1]);
        if up || down {
            let orientation = if up { Orientation::Nondecreasing } else { Orientation::Nonincreasing };
            let plus = lambda2_increasing(&forms, orientation, 0).unwrap();
            assert!(
                (plus.lambda - pairs[1].lambda).abs() < 1e-6 * pairs[1].lambda,
                "{} vs {}",
                plus.lambda,
                pairs[1].lambda
            );
        }
    }

    #[test]
    fn lambda2_plus_stationary_at_exit() {
        let forms = assemble_forms(&ball_1d(12)).unwrap();
        let pair = lambda2_increasing(&forms, Orientation::Nondecreasing, 0).unwrap();
        let v = &pair.eigenfunction.interior;
        let av = &forms.a_red * v;
        let lambda = av.dot(v);
        let grad: DVector<f64> =
            DVector::from_iterator(v.len(), av.iter().zip(forms.b_mass.iter()).map(|(a, m)| a / m))
                - lambda * v;
        let alpha = 1e-3 / lambda.max(1.0);
        let trial = project_cone(&forms, &(v - alpha * &grad), Orientation::Nondecreasing);
        let pg = b_norm(&forms, &(&trial - v)) / alpha;
        assert!(pg <= 10.0 * STATIONARITY_TOL * lambda.max(1.0), "pg = {pg}");
    }
}
