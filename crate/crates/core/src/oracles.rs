//! Independent tiny-grid oracles backing the verification harness.
//!
//! Every oracle recomputes a pipeline quantity by a deliberately different
//! route: the reduced form by direct adaptive double quadrature of the full
//! kernel in pair-diagonal coordinates (no singular splits, no graded rules),
//! generalized eigenpairs by a hand-rolled cyclic Jacobi sweep (no external
//! eigensolver), the monotone-cone minimum by exhaustive enumeration of
//! pooling patterns, and the isotonic projection by brute force over level-set
//! partitions. Costs are exponential (or merely extravagant) in the dimension,
//! so every entry point carries a tiny-grid guard. The pointwise angular
//! kernel is the one shared ingredient; its values are pinned separately by
//! frozen reference constants in the kernel tests.

use crate::assembly::AssembledForms;
use crate::error::{Error, Result};
use crate::grid::{RadialGrid, Region};
use crate::kernel::{kernel_at_distance, normalization_constant, surface_area, Elem, KernelParams};
use crate::quad;
use crate::spectral::Orientation;
use nalgebra::{DMatrix, DVector};

/// Largest interior dimension accepted by the brute-force assembler and the
/// pooling enumeration.
pub const MAX_ORACLE_DIM: usize = 12;

const OUTER_TOL: f64 = 1e-10;
const INNER_TOL: f64 = 1e-11;

/// Global hat of node `g` restricted to element `k_elem` = [a, b].
fn hat(e: Elem, k_elem: usize, g: usize, x: f64) -> f64 {
    if g == k_elem {
        (e.b - x) / e.len()
    } else if g == k_elem + 1 {
        (x - e.a) / e.len()
    } else {
        0.0
    }
}

/// int_{e1 x e2} (phi_gi(r) - phi_gi(rho)) (phi_gj(r) - phi_gj(rho))
/// K(r, rho) (r rho)^(n-1) dr drho by nested adaptive quadrature in the
/// diagonal coordinates t = rho - r (outer; flattened by t = q^2 whenever the
/// elements meet) and r (inner). `e1` must not lie to the right of `e2`.
///
/// For an element paired with itself the hat differences are +-t/h exactly,
/// which sidesteps the cancellation of phi(r) - phi(r + t) at t below the
/// radius spacing; across distinct elements the raw differences are safe
/// because the corner region they could corrupt carries an extra t^2 weight.
fn brute_pair_entry(
    kp: &KernelParams,
    (e1, k1): (Elem, usize),
    (e2, k2): (Elem, usize),
    gi: usize,
    gj: usize,
) -> f64 {
    let n1 = kp.n as f64 - 1.0;
    if k1 == k2 {
        let sign = if (gi == k1) == (gj == k1) { 1.0 } else { -1.0 };
        let h = e1.len();
        let mass = |t: f64| {
            if e1.b - t <= e1.a {
                return 0.0;
            }
            quad::adaptive(
                |r: f64| {
                    let rho = r + t;
                    kernel_at_distance(kp, r, rho, t) * (r * rho).powf(n1)
                },
                e1.a,
                e1.b - t,
                INNER_TOL,
            )
        };
        // x2: swap symmetry folds rho < r onto t > 0
        return sign
            * 2.0
            * quad::adaptive(
                |q: f64| {
                    let t = q * q;
                    (t / h) * (t / h) * mass(t) * 2.0 * q
                },
                0.0,
                h.sqrt(),
                OUTER_TOL,
            );
    }
    let inner = |t: f64| {
        let r_lo = e1.a.max(e2.a - t);
        let r_hi = e1.b.min(e2.b - t);
        if r_hi <= r_lo {
            return 0.0;
        }
        quad::adaptive(
            |r: f64| {
                let rho = r + t;
                let di = hat(e1, k1, gi, r) - hat(e2, k2, gi, rho);
                let dj = hat(e1, k1, gj, r) - hat(e2, k2, gj, rho);
                di * dj * kernel_at_distance(kp, r, rho, t) * (r * rho).powf(n1)
            },
            r_lo,
            r_hi,
            INNER_TOL,
        )
    };
    if k2 == k1 + 1 {
        // touching: corner singularity at t = 0
        let t_max = e2.b - e1.a;
        quad::adaptive(|q: f64| inner(q * q) * 2.0 * q, 0.0, t_max.sqrt(), OUTER_TOL)
    } else {
        quad::adaptive(inner, e2.a - e1.b, e2.b - e1.a, OUTER_TOL)
    }
}

/// tau(r) = int_{R_ext}^inf K(r, rho) rho^(n-1) drho through the map
/// rho = R_ext / sigma; the integrand vanishes like sigma^(2s-1) at zero.
fn brute_tail_weight(kp: &KernelParams, r: f64, r_ext: f64) -> f64 {
    let n1 = kp.n as f64 - 1.0;
    quad::adaptive(
        |sig: f64| {
            let rho = r_ext / sig;
            kernel_at_distance(kp, r, rho, rho - r) * rho.powf(n1) * r_ext / (sig * sig)
        },
        0.0,
        1.0,
        INNER_TOL,
    )
}

/// int_e beta_0 beta_1 (rho) tau_Omega(rho) rho^(n-1) drho by direct double
/// quadrature over Omega x e in the distance coordinate t = |rho - r|.
fn brute_interface_overlap(kp: &KernelParams, omega: (f64, f64), e: Elem) -> Result<f64> {
    let (lo, hi) = omega;
    let dir = if e.a == hi {
        1.0
    } else if e.b == lo {
        -1.0
    } else {
        return Err(Error::MeshIntegrity(format!(
            "element [{}, {}] does not sit on an interface of ({lo}, {hi})",
            e.a, e.b
        )));
    };
    let n1 = kp.n as f64 - 1.0;
    let h = e.len();
    let inner = |t: f64| {
        // rho runs over e intersected with Omega shifted by dir * t
        let w_lo = e.a.max(lo + dir * t);
        let w_hi = e.b.min(hi + dir * t);
        if w_hi <= w_lo {
            return 0.0;
        }
        quad::adaptive(
            |rho: f64| {
                let r = rho - dir * t;
                let beta = (rho - e.a) * (e.b - rho) / (h * h);
                beta * kernel_at_distance(kp, r, rho, t) * (r * rho).powf(n1)
            },
            w_lo,
            w_hi,
            INNER_TOL,
        )
    };
    let t_max = if dir > 0.0 { e.b - lo } else { hi - e.a };
    Ok(quad::adaptive(
        |q: f64| inner(q * q) * 2.0 * q,
        0.0,
        t_max.sqrt(),
        OUTER_TOL,
    ))
}

/// Reassembles every quadratic form on a tiny grid by direct double
/// quadrature, mirroring the model of `assemble_forms` entry for entry.
pub fn brute_force_forms(grid: &RadialGrid) -> Result<AssembledForms> {
    let ni = grid.n_interior();
    let ne = grid.n_exterior();
    if ni > MAX_ORACLE_DIM {
        return Err(Error::InvalidParameter(format!(
            "brute-force assembly is a tiny-grid oracle: {ni} interior nodes > {MAX_ORACLE_DIM}"
        )));
    }
    let kp = grid.domain.kernel_params();
    let kappa = 0.5 * normalization_constant(&kp) * surface_area(kp.n);
    let n1 = kp.n as f64 - 1.0;

    let mut a_ii = DMatrix::zeros(ni, ni);
    let mut d_i = DMatrix::zeros(ni, ni);
    let mut c_ie = DMatrix::zeros(ni, ne);

    for k1 in 0..grid.n_elems() {
        for k2 in k1..grid.n_elems() {
            let interior1 = grid.region(k1) == Region::Interior;
            let interior2 = grid.region(k2) == Region::Interior;
            if !interior1 && !interior2 {
                continue;
            }
            let (e1, e2) = (grid.elem(k1), grid.elem(k2));
            let w = kappa * if k1 == k2 { 1.0 } else { 2.0 };
            let mut uniq = vec![k1, k1 + 1];
            for g in [k2, k2 + 1] {
                if !uniq.contains(&g) {
                    uniq.push(g);
                }
            }
            let m = uniq.len();
            let mut entry = vec![vec![0.0; m]; m];
            for a in 0..m {
                for b in a..m {
                    let v = brute_pair_entry(&kp, (e1, k1), (e2, k2), uniq[a], uniq[b]);
                    entry[a][b] = v;
                    entry[b][a] = v;
                }
            }
            let both_interior = interior1 && interior2;
            for a in 0..m {
                for b in 0..m {
                    let (gi, gj) = (uniq[a], uniq[b]);
                    let v = w * entry[a][b];
                    match (grid.is_interior_node(gi), grid.is_interior_node(gj)) {
                        (true, true) => {
                            let t = if both_interior { &mut a_ii } else { &mut d_i };
                            t[(gi - grid.i_lo, gj - grid.i_lo)] += v;
                        }
                        (true, false) => {
                            c_ie[(gi - grid.i_lo, grid.exterior_dof_of(gj))] -= v;
                        }
                        (false, _) => {}
                    }
                }
            }
        }
    }

    // interface lumping edges, same two placements as the assembler
    let omega = (grid.domain.r0, grid.domain.r);
    let mut edges = vec![(grid.i_hi, grid.i_hi + 1, grid.elem(grid.i_hi))];
    if grid.i_lo > 0 {
        edges.push((grid.i_lo, grid.i_lo - 1, grid.elem(grid.i_lo - 1)));
    }
    for (iface, other, e_ext) in edges {
        let v = 2.0 * kappa * brute_interface_overlap(&kp, omega, e_ext)?;
        d_i[(iface - grid.i_lo, iface - grid.i_lo)] += v;
        c_ie[(iface - grid.i_lo, grid.exterior_dof_of(other))] += v;
    }

    let g_lump = c_ie.row_sum().transpose();
    for (j, &g) in g_lump.iter().enumerate() {
        if !(g > 0.0) {
            return Err(Error::Assembly(format!(
                "singular exterior Gram in oracle assembly: lumped weight {g} at exterior dof {j}"
            )));
        }
    }

    let volume = grid.domain.volume();
    let b_mass = DVector::from_iterator(ni, grid.masses[grid.i_lo..=grid.i_hi].iter().copied());
    let mut q_tail = DMatrix::zeros(ni, ni);
    let mut tail_col = DVector::zeros(ni);
    let mut tail_scalar = 0.0;
    let tau2k =
        |r: f64| 2.0 * kappa * brute_tail_weight(&kp, r, grid.domain.r_ext) * r.powf(n1);
    for k in 0..grid.n_elems() {
        if grid.region(k) != Region::Interior {
            continue;
        }
        let e = grid.elem(k);
        for ia in 0..2 {
            let ga = k + ia - grid.i_lo;
            tail_col[ga] +=
                quad::adaptive(|r: f64| hat(e, k, k + ia, r) * tau2k(r), e.a, e.b, OUTER_TOL);
            for ib in ia..2 {
                let gb = k + ib - grid.i_lo;
                let v = quad::adaptive(
                    |r: f64| hat(e, k, k + ia, r) * hat(e, k, k + ib, r) * tau2k(r),
                    e.a,
                    e.b,
                    OUTER_TOL,
                );
                q_tail[(ga, gb)] += v;
                if ib != ia {
                    q_tail[(gb, ga)] += v;
                }
            }
        }
        tail_scalar += quad::adaptive(|r: f64| tau2k(r), e.a, e.b, OUTER_TOL);
    }

    let mut a_red = &a_ii + &d_i + &q_tail;
    for a in 0..ni {
        for b in 0..ni {
            let mut acc = a_red[(a, b)];
            for j in 0..ne {
                acc -= c_ie[(a, j)] * c_ie[(b, j)] / g_lump[j];
            }
            acc -= (tail_col[a] * b_mass[b] + b_mass[a] * tail_col[b]) / volume;
            acc += tail_scalar * b_mass[a] * b_mass[b] / (volume * volume);
            a_red[(a, b)] = acc;
        }
    }

    let ext_mass = DVector::from_iterator(
        ne,
        (0..ne).map(|j| grid.masses_ext[grid.exterior_node_index(j)]),
    );

    let forms = AssembledForms {
        kp,
        kappa,
        a_ii,
        d_i,
        c_ie,
        g_lump,
        a_red,
        b_mass,
        ext_mass,
        q_tail,
        tail_col,
        tail_scalar,
        volume,
    };
    let ones = DVector::from_element(ni, 1.0);
    let resid = (&forms.a_red * &ones).abs().max();
    let scale = forms.a_red.abs().max();
    if !(resid <= 1e-8 * scale) {
        return Err(Error::Assembly(format!(
            "oracle constant-vector self-check failed: |A_red 1| = {resid:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(forms)
}

fn cholesky_lower(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = b.nrows();
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let mut sum = b[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::InvalidParameter(
                        "pencil right-hand side is not positive definite".into(),
                    ));
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// L Y = X, columnwise, in place.
fn forward_solve_cols(l: &DMatrix<f64>, x: &mut DMatrix<f64>) {
    let d = l.nrows();
    for col in 0..x.ncols() {
        for i in 0..d {
            let mut sum = x[(i, col)];
            for k in 0..i {
                sum -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = sum / l[(i, i)];
        }
    }
}

/// L^T Y = X, columnwise, in place.
fn transpose_solve_cols(l: &DMatrix<f64>, x: &mut DMatrix<f64>) {
    let d = l.nrows();
    for col in 0..x.ncols() {
        for i in (0..d).rev() {
            let mut sum = x[(i, col)];
            for k in i + 1..d {
                sum -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = sum / l[(i, i)];
        }
    }
}

/// All eigenpairs of the pencil A v = lambda B v (A symmetric, B symmetric
/// positive definite) by a cyclic Jacobi sweep on L^-1 A L^-T, with L the
/// Cholesky factor of B. Eigenvalues ascend; eigenvector columns are
/// B-orthonormal.
pub fn jacobi_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d || b.nrows() != d || b.ncols() != d {
        return Err(Error::InvalidParameter(
            "jacobi_generalized needs square matrices of matching nonzero dimension".into(),
        ));
    }
    if d > 4 * MAX_ORACLE_DIM {
        return Err(Error::InvalidParameter(format!(
            "jacobi_generalized is an oracle for tiny pencils, got dimension {d}"
        )));
    }
    let l = cholesky_lower(b)?;
    // C = L^-1 A L^-T, forced symmetric
    let mut c = a.clone();
    forward_solve_cols(&l, &mut c);
    let mut ct = c.transpose();
    forward_solve_cols(&l, &mut ct);
    let mut c = 0.5 * (&ct + ct.transpose());

    let mut v = DMatrix::identity(d, d);
    let frob = c.norm().max(1e-300);
    let mut last_off = 0.0;
    let mut converged = false;
    for _sweep in 0..120 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += c[(p, q)] * c[(p, q)];
            }
        }
        last_off = off.sqrt();
        if last_off <= 1e-15 * frob {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let cpq = c[(p, q)];
                if cpq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (c[(q, q)] - c[(p, p)]) / (2.0 * cpq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let cth = 1.0 / (1.0 + t * t).sqrt();
                let sth = t * cth;
                for k in 0..d {
                    let (ckp, ckq) = (c[(k, p)], c[(k, q)]);
                    c[(k, p)] = cth * ckp - sth * ckq;
                    c[(k, q)] = sth * ckp + cth * ckq;
                }
                for k in 0..d {
                    let (cpk, cqk) = (c[(p, k)], c[(q, k)]);
                    c[(p, k)] = cth * cpk - sth * cqk;
                    c[(q, k)] = sth * cpk + cth * cqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = cth * vkp - sth * vkq;
                    v[(k, q)] = sth * vkp + cth * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Solver {
            message: "Jacobi sweep did not converge".into(),
            residual: last_off,
            iterations: 120,
        });
    }
    // back-transform to pencil eigenvectors and sort ascending
    transpose_solve_cols(&l, &mut v);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| c[(i, i)].total_cmp(&c[(j, j)]));
    let vals: Vec<f64> = order.iter().map(|&i| c[(i, i)]).collect();
    let mut vecs = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &v.column(src));
    }
    Ok((vals, vecs))
}

/// Global minimum of the Rayleigh quotient over the monotone zero-B-mean cone
/// by exhaustive enumeration of pooling patterns. At the cone minimum the
/// pooled block values solve the pattern's reduced pencil restricted to the
/// zero-mean subspace, so scanning every pattern's full eigensystem and
/// keeping the feasible candidates is exact. The value is orientation-free
/// (the two cones are reflections and the quotient is even), so `orientation`
/// only mirrors the caller's API.
pub fn lambda2_plus_enumeration(
    forms: &AssembledForms,
    _orientation: Orientation,
) -> Result<f64> {
    let dim = forms.b_mass.len();
    if !(2..=MAX_ORACLE_DIM).contains(&dim) {
        return Err(Error::InvalidParameter(format!(
            "pooling enumeration needs 2..={MAX_ORACLE_DIM} interior nodes, got {dim}"
        )));
    }
    let mut best = f64::INFINITY;
    for mask in 0u32..1 << (dim - 1) {
        // bit i set: nodes i and i+1 belong to different blocks
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for i in 0..dim - 1 {
            if mask >> i & 1 == 1 {
                blocks.push((start, i + 1));
                start = i + 1;
            }
        }
        blocks.push((start, dim));
        let k = blocks.len();
        if k < 2 {
            continue; // constants cannot meet the zero-mean constraint
        }
        let mut a_k = DMatrix::zeros(k, k);
        let mut m_k = DVector::zeros(k);
        for (al, &(s1, t1)) in blocks.iter().enumerate() {
            m_k[al] = (s1..t1).map(|i| forms.b_mass[i]).sum();
            for (be, &(s2, t2)) in blocks.iter().enumerate() {
                let mut acc = 0.0;
                for i in s1..t1 {
                    for j in s2..t2 {
                        acc += forms.a_red[(i, j)];
                    }
                }
                a_k[(al, be)] = acc;
            }
        }
        let z = householder_null_basis(&m_k);
        let za = z.transpose() * &a_k * &z;
        let zb = z.transpose() * DMatrix::from_diagonal(&m_k) * &z;
        let (vals, vecs) = jacobi_generalized(&za, &zb)?;
        for (j, &lam) in vals.iter().enumerate() {
            let x = (&z * vecs.column(j)).clone_owned();
            if monotone_either_way(&x) {
                best = best.min(lam);
            }
        }
    }
    Ok(best)
}

/// Columns spanning the orthogonal complement of `m`, via the Householder
/// reflection that maps m/|m| onto the first coordinate axis.
fn householder_null_basis(m: &DVector<f64>) -> DMatrix<f64> {
    let k = m.len();
    let mut w = m / m.norm();
    w[0] -= 1.0;
    let nw = w.norm();
    let h = if nw <= 1e-14 {
        DMatrix::identity(k, k)
    } else {
        DMatrix::identity(k, k) - (2.0 / (nw * nw)) * &w * w.transpose()
    };
    h.columns(1, k - 1).into_owned()
}

fn monotone_either_way(x: &DVector<f64>) -> bool {
    let slack = 1e-9 * x.amax();
    let up = x.iter().zip(x.iter().skip(1)).all(|(a, b)| b - a >= -slack);
    let down = x.iter().zip(x.iter().skip(1)).all(|(a, b)| a - b >= -slack);
    up || down
}

/// Weighted isotonic projection by exhaustive search over level-set
/// partitions: the projection is blockwise weighted means on its active
/// partition, so the best feasible pooled candidate is exact.
pub fn pava_qp_enumeration(
    values: &[f64],
    weights: &[f64],
    orientation: Orientation,
) -> Result<Vec<f64>> {
    let dim = values.len();
    if dim == 0 || dim > 16 || weights.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "QP enumeration needs 1..=16 matching values/weights, got {dim}/{}",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter(
            "QP enumeration needs strictly positive weights".into(),
        ));
    }
    if orientation == Orientation::Nonincreasing {
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let mut out = pava_qp_enumeration(&neg, weights, Orientation::Nondecreasing)?;
        for v in &mut out {
            *v = -*v;
        }
        return Ok(out);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..1 << (dim - 1) {
        let mut fitted = vec![0.0; dim];
        let mut prev = f64::NEG_INFINITY;
        let mut feasible = true;
        let mut obj = 0.0;
        let mut start = 0;
        for i in 0..dim {
            let boundary = i == dim - 1 || mask >> i & 1 == 1;
            if !boundary {
                continue;
            }
            let (mut wsum, mut wvsum) = (0.0, 0.0);
            for j in start..=i {
                wsum += weights[j];
                wvsum += weights[j] * values[j];
            }
            let mu = wvsum / wsum;
            if mu < prev {
                feasible = false;
                break;
            }
            prev = mu;
            for f in &mut fitted[start..=i] {
                *f = mu;
            }
            start = i + 1;
        }
        if !feasible {
            continue;
        }
        for i in 0..dim {
            obj += weights[i] * (values[i] - fitted[i]) * (values[i] - fitted[i]);
        }
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, fitted));
        }
    }
    Ok(best.expect("the all-pooled partition is always feasible").1)
}
