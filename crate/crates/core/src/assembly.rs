//! Assembly of the discrete H^s_{Omega,0} quadratic forms and the discrete
//! operators (-Delta)^s and N_s.
//!
//! The seminorm is kappa * double-int over D of (U(x) - U(y))^2 K(r,rho)
//! (r rho)^(n-1), with kappa = (c_{n,s}/2) |S^(n-1)| and D all pairs with at
//! least one point in Omega (exterior-exterior pairs excluded). Element pairs
//! are integrated once (unordered) and weighted by 2 off the diagonal.
//!
//! Exterior unknowns are eliminated through a lumped Gram Schur complement:
//! the lumped diagonal equals the column sums of the coupling C_IE, so A_red
//! annihilates constants exactly. The interface hat reaches into the exterior
//! band, and its Galerkin overlap with the neighbouring exterior hat would
//! enter C_IE with the wrong sign for a convex average; that overlap is lumped
//! instead, which amounts to adding a rank-one graph edge (weight
//! 2 kappa int beta_if beta_e tau_Omega) between the interface node and its
//! exterior neighbour. After the edge, C_IE is entrywise positive and the
//! discrete Neumann extension is a strict convex average of interior values —
//! the maximum principle holds exactly at the matrix level.
//!
//! Beyond R_ext the extension is the constant Lebesgue mean of u over Omega;
//! the Omega x {|y| > R_ext} cross term enters through the 1-D kernel tail
//! tau(r) and also annihilates constants exactly.

use crate::error::{Error, Result};
use crate::grid::{RadialGrid, Region};
use crate::kernel::{
    element_pair_integral, interface_overlap_mass, normalization_constant, surface_area,
    tail_weight, KernelParams,
};
use crate::quad;
use nalgebra::{DMatrix, DVector};

/// Nodal radial function on the grid: interior values always, exterior values
/// optionally (per exterior degree of freedom, inner band first), constant far
/// field beyond R_ext. `extended` marks exterior values produced by (or
/// verified against) the discrete Neumann extension.
#[derive(Clone, Debug)]
pub struct RadialFunction {
    pub interior: DVector<f64>,
    pub exterior: Option<DVector<f64>>,
    pub farfield: Option<f64>,
    pub extended: bool,
}

impl RadialFunction {
    pub fn interior_only(values: DVector<f64>) -> Self {
        Self { interior: values, exterior: None, farfield: None, extended: false }
    }
}

/// All assembled quadratic forms. Matrices carry the kappa scaling, so
/// u^T A_red u is the seminorm squared directly.
#[derive(Clone, Debug)]
pub struct AssembledForms {
    pub kp: KernelParams,
    pub kappa: f64,
    /// interior-interior difference form from Omega x Omega pairs only
    pub a_ii: DMatrix<f64>,
    /// interior-node entries contributed by Omega x Omega^c pairs
    pub d_i: DMatrix<f64>,
    /// interior-exterior coupling, entrywise the kernel mass between hats
    pub c_ie: DMatrix<f64>,
    /// lumped exterior Gram = column sums of c_ie (= consistent row sums)
    pub g_lump: DVector<f64>,
    /// Schur-reduced seminorm form including the far-field tail
    pub a_red: DMatrix<f64>,
    /// lumped interior mass; sums to |Omega|
    pub b_mass: DVector<f64>,
    /// exterior lumped masses per exterior dof (for pointwise N_s scaling)
    pub ext_mass: DVector<f64>,
    /// far-field hat-pair matrix 2 kappa int phi_a phi_b tau r^(n-1) dr
    pub q_tail: DMatrix<f64>,
    /// far-field column 2 kappa int phi_a tau r^(n-1) dr and its total
    pub tail_col: DVector<f64>,
    pub tail_scalar: f64,
    pub volume: f64,
}

impl AssembledForms {
    /// A_tail u where A_tail = Q - (p m^T + m p^T)/|O| + sigma m m^T/|O|^2 is
    /// the far-field quadratic form (u - mean)^2 against the kernel tail.
    pub fn tail_rows(&self, u: &DVector<f64>) -> DVector<f64> {
        let mean = self.b_mass.dot(u) / self.volume;
        let pu = self.tail_col.dot(u);
        &self.q_tail * u - mean * &self.tail_col
            + ((mean * self.tail_scalar - pu) / self.volume) * &self.b_mass
    }

    /// Interior and exterior rows of the full difference form on (u, w):
    /// ((A_II + D_I) u - C_IE w + A_tail u,  G w - C_IE^T u).
    pub fn full_rows(&self, u: &DVector<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let rows_i = &self.a_ii * u + &self.d_i * u - &self.c_ie * w + self.tail_rows(u);
        let rows_e = DVector::from_iterator(
            w.len(),
            (self.c_ie.transpose() * u)
                .iter()
                .zip(w.iter().zip(self.g_lump.iter()))
                .map(|(cu, (wj, g))| g * wj - cu),
        );
        (rows_i, rows_e)
    }
}

pub fn assemble_forms(grid: &RadialGrid) -> Result<AssembledForms> {
    let kp = grid.domain.kernel_params();
    let kappa = 0.5 * normalization_constant(&kp) * surface_area(kp.n);
    let ni = grid.n_interior();
    let ne = grid.n_exterior();

    let mut a_ii = DMatrix::zeros(ni, ni);
    let mut d_i = DMatrix::zeros(ni, ni);
    let mut c_ie = DMatrix::zeros(ni, ne);

    for k1 in 0..grid.n_elems() {
        for k2 in k1..grid.n_elems() {
            let interior1 = grid.region(k1) == Region::Interior;
            let interior2 = grid.region(k2) == Region::Interior;
            if !interior1 && !interior2 {
                continue; // (Omega^c)^2 is excluded from the seminorm domain
            }
            let blk = element_pair_integral(&kp, grid.elem(k1), grid.elem(k2))?;
            let w = kappa * if k1 == k2 { 1.0 } else { 2.0 };
            // merged slot -> global node
            let raw_nodes = [k1, k1 + 1, k2, k2 + 1];
            let mut gm = [usize::MAX; 4];
            for (rs, &gn) in raw_nodes.iter().enumerate() {
                gm[blk.slot_of[rs]] = gn;
            }
            let both_interior = interior1 && interior2;
            for mi in 0..blk.n_slots {
                for mj in 0..blk.n_slots {
                    let (gi, gj) = (gm[mi], gm[mj]);
                    let v = w * blk.mat[mi][mj];
                    match (grid.is_interior_node(gi), grid.is_interior_node(gj)) {
                        (true, true) => {
                            let t = if both_interior { &mut a_ii } else { &mut d_i };
                            t[(gi - grid.i_lo, gj - grid.i_lo)] += v;
                        }
                        (true, false) => {
                            c_ie[(gi - grid.i_lo, grid.exterior_dof_of(gj))] -= v;
                        }
                        // mirror of the above; exterior-exterior entries are
                        // only needed through the lumped row sums below
                        (false, _) => {}
                    }
                }
            }
        }
    }

    // lump the exterior-side overlap of each interface hat: a graph edge
    // between the interface node and its exterior neighbour (see module docs)
    let omega = (grid.domain.r0, grid.domain.r);
    let mut edges = vec![(grid.i_hi, grid.i_hi + 1, grid.elem(grid.i_hi))];
    if grid.i_lo > 0 {
        edges.push((grid.i_lo, grid.i_lo - 1, grid.elem(grid.i_lo - 1)));
    }
    for (iface, other, e_ext) in edges {
        let v = 2.0 * kappa * interface_overlap_mass(&kp, omega, e_ext)?;
        d_i[(iface - grid.i_lo, iface - grid.i_lo)] += v;
        c_ie[(iface - grid.i_lo, grid.exterior_dof_of(other))] += v;
    }

    let g_lump = c_ie.row_sum().transpose(); // column sums of C_IE
    for (j, &g) in g_lump.iter().enumerate() {
        if !(g > 0.0) {
            return Err(Error::Assembly(format!(
                "singular exterior Gram: lumped weight {g} at exterior dof {j}"
            )));
        }
    }

    // far-field tail: 2 kappa int_Omega (u - mean)^2 tau(r) r^(n-1), assembled
    // as Q - (p m^T + m p^T)/|O| + sigma m m^T/|O|^2
    let volume = grid.domain.volume();
    let b_mass = DVector::from_iterator(ni, grid.masses[grid.i_lo..=grid.i_hi].iter().copied());
    let two_kappa_omega = 2.0 * kappa;
    let mut q_tail = DMatrix::zeros(ni, ni);
    let mut tail_col = DVector::zeros(ni);
    let mut tail_scalar = 0.0;
    let rule = quad::gauss_legendre(12);
    for k in 0..grid.n_elems() {
        if grid.region(k) != Region::Interior {
            continue;
        }
        let e = grid.elem(k);
        let (lo, hi) = (k - grid.i_lo, k + 1 - grid.i_lo);
        let (mid, half) = (0.5 * (e.a + e.b), 0.5 * e.len());
        for (x, wq) in rule.nodes.iter().zip(&rule.weights) {
            let r = mid + half * x;
            let tau = tail_weight(&kp, r, grid.domain.r_ext);
            let c = wq * half * two_kappa_omega * tau * r.powi(kp.n as i32 - 1);
            let phi_hi = (r - e.a) / e.len();
            let phi = [1.0 - phi_hi, phi_hi];
            for (ia, ga) in [lo, hi].into_iter().enumerate() {
                tail_col[ga] += c * phi[ia];
                for (ib, gb) in [lo, hi].into_iter().enumerate() {
                    q_tail[(ga, gb)] += c * phi[ia] * phi[ib];
                }
            }
            tail_scalar += c;
        }
    }

    let mut a_red = &a_ii + &d_i + &q_tail;
    // Schur elimination of the exterior block and the tail's mean coupling
    for a in 0..ni {
        for b in 0..ni {
            let mut schur = 0.0;
            for j in 0..ne {
                schur += c_ie[(a, j)] * c_ie[(b, j)] / g_lump[j];
            }
            a_red[(a, b)] -= schur;
            a_red[(a, b)] -= (tail_col[a] * b_mass[b] + b_mass[a] * tail_col[b]) / volume;
            a_red[(a, b)] += tail_scalar * b_mass[a] * b_mass[b] / (volume * volume);
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

    // self-check: constants span the kernel of the reduced form by construction
    let ones = DVector::from_element(ni, 1.0);
    let resid = (&forms.a_red * &ones).abs().max();
    let scale = forms.a_red.abs().max();
    if !(resid <= 1e-10 * scale) {
        return Err(Error::Assembly(format!(
            "constant-vector self-check failed: |A_red 1| = {resid:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(forms)
}

/// Discrete Neumann extension: exterior values solve the lumped Gram system
/// G w = C_IE^T u (a strictly convex average of interior values), and the far
/// field is the Lebesgue mean of u over Omega.
pub fn neumann_extension(forms: &AssembledForms, u: &DVector<f64>) -> RadialFunction {
    let w = DVector::from_iterator(
        forms.g_lump.len(),
        (forms.c_ie.transpose() * u)
            .iter()
            .zip(forms.g_lump.iter())
            .map(|(num, g)| num / g),
    );
    let farfield = forms.b_mass.dot(u) / forms.volume;
    RadialFunction {
        interior: u.clone(),
        exterior: Some(w),
        farfield: Some(farfield),
        extended: true,
    }
}

/// Mass-scaled action of the reduced form: values of (-Delta)^s u + nothing
/// at interior nodes. Requires a Neumann-extended function.
pub fn apply_fractional_laplacian(forms: &AssembledForms, u: &RadialFunction) -> Result<DVector<f64>> {
    if !u.extended {
        return Err(Error::Contract(
            "apply_fractional_laplacian requires a Neumann-extended function".into(),
        ));
    }
    let action = &forms.a_red * &u.interior;
    Ok(DVector::from_iterator(
        action.len(),
        action.iter().zip(forms.b_mass.iter()).map(|(a, m)| a / m),
    ))
}

/// Pointwise nonlocal normal derivative at exterior nodes:
/// (G w - C_IE^T u)_j / m_j^ext. Zero iff w is the Neumann extension.
pub fn neumann_derivative(forms: &AssembledForms, u: &RadialFunction) -> Result<DVector<f64>> {
    let w = u.exterior.as_ref().ok_or_else(|| {
        Error::Contract("neumann_derivative requires exterior values".into())
    })?;
    let num = forms.c_ie.transpose() * &u.interior;
    Ok(DVector::from_iterator(
        w.len(),
        (0..w.len()).map(|j| (forms.g_lump[j] * w[j] - num[j]) / forms.ext_mass[j]),
    ))
}

/// Full-form bilinear pairing <u, v>_A of two functions with exterior values,
/// including the far-field tail — the left side of the discrete integration-
/// by-parts identity.
pub fn bilinear_form(forms: &AssembledForms, u: &RadialFunction, v: &RadialFunction) -> Result<f64> {
    let (wu, wv) = match (&u.exterior, &v.exterior) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Contract(
                "bilinear_form requires exterior values on both arguments".into(),
            ))
        }
    };
    let mut val = (&forms.a_ii * &v.interior + &forms.d_i * &v.interior).dot(&u.interior);
    val -= (&forms.c_ie * wv).dot(&u.interior);
    val -= (&forms.c_ie * wu).dot(&v.interior);
    val += wu
        .iter()
        .zip(wv.iter())
        .zip(forms.g_lump.iter())
        .map(|((a, b), g)| a * b * g)
        .sum::<f64>();
    val += forms.tail_rows(&u.interior).dot(&v.interior);
    Ok(val)
}

/// (seminorm, l2, full = l2 + seminorm, interior-only seminorm).
pub fn norms(forms: &AssembledForms, u: &DVector<f64>) -> (f64, f64, f64, f64) {
    let semi_sq = (&forms.a_red * u).dot(u).max(0.0);
    let l2_sq: f64 = u
        .iter()
        .zip(forms.b_mass.iter())
        .map(|(x, m)| m * x * x)
        .sum();
    let interior_sq = (&forms.a_ii * u).dot(u).max(0.0);
    let (semi, l2) = (semi_sq.sqrt(), l2_sq.sqrt());
    (semi, l2, l2 + semi, interior_sq.sqrt())
}

/// Writes `r,u` CSV (full precision, radii ascending). Exterior values and
/// the far field are included when present.
pub fn write_profile_csv<W: std::io::Write>(
    out: &mut W,
    grid: &RadialGrid,
    f: &RadialFunction,
) -> Result<()> {
    writeln!(out, "r,u")?;
    let value_at = |idx: usize| -> Option<f64> {
        if grid.is_interior_node(idx) {
            Some(f.interior[idx - grid.i_lo])
        } else {
            f.exterior.as_ref().map(|w| w[grid.exterior_dof_of(idx)])
        }
    };
    for idx in 0..grid.n_nodes() {
        if let Some(v) = value_at(idx) {
            writeln!(out, "{:.17e},{:.17e}", grid.nodes[idx], v)?;
        }
    }
    Ok(())
}

/// Coordinate-format dump `(row, col, value)` of a dense matrix, skipping
/// exact zeros.
pub fn write_matrix_coo<W: std::io::Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                writeln!(out, "{} {} {:.17e}", i, j, m[(i, j)])?;
            }
        }
    }
    Ok(())
}
