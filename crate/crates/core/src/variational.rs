//! Constrained mountain-pass solver on monotone radial cones.
//!
//! Critical points of
//!     E(u) = 1/2 u^T A_red u + 1/2 u^T B u - sum_a m_a F~(u_a)
//! over the order cone C_* = { u : u_- <= u <= u_+ nodally, u monotone } are
//! located by a discrete string method. A path from the valley at the
//! constant u_- to the far valley (the constant u_+, or deep decay when
//! u_+ = infinity) is relaxed point by point with the projected flow
//!     u <- P_C((1 - lam) u + lam T~(u)),  T~(u) = W^{-1} B (f~(u) + c u),
//! where W = A_red + (1 + c) B and c is the monotonization shift of the
//! nonlinearity. The shift changes neither the energy nor the fixed points,
//! but makes the resolvent image order preserving, so the projection only
//! corrects discretization defects. The path maximizer is finally polished
//! to an equation residual at roundoff scale.

use crate::assembly::{neumann_extension, AssembledForms, RadialFunction};
use crate::error::{Error, Result};
use crate::grid::DomainSpec;
use crate::nonlinearity::TruncatedNonlinearity;
use crate::spectral::{pava_project, Orientation};
use nalgebra::linalg::{Cholesky, LU};
use nalgebra::{DMatrix, DVector, Dyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Backtracking floor for the flow step; underflow signals stationarity.
pub const LAMBDA_MIN: f64 = 1e-12;
/// Halvings granted to the dip line search before geometry failure.
const TAU_BAR_HALVINGS: usize = 50;
/// Halvings granted to the barrier radius before geometry failure.
const TAU_GEOM_HALVINGS: usize = 20;
/// Random cone profiles per barrier scan, on top of the indicator family.
const BARRIER_SAMPLES: usize = 48;
/// Relative dip margin below E(u0) required of the initial path.
const DIP_MARGIN_REL: f64 = 1e-8;
/// Flow hands over to the polish phase at this relative residual.
const FLOW_HANDOFF_RESIDUAL: f64 = 1e-4;

/// Closed order cone C_*: nodal bounds `lower <= u <= upper` plus
/// monotonicity; `upper = f64::INFINITY` encodes a band unbounded above.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeSpec {
    pub orientation: Orientation,
    pub lower: f64,
    pub upper: f64,
}

impl ConeSpec {
    pub fn new(orientation: Orientation, lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0) || !(upper > lower) {
            return Err(Error::InvalidParameter(format!(
                "cone bounds must satisfy 0 <= lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { orientation, lower, upper })
    }

    /// Decreasing profiles decrease toward the outer boundary; on a ball they
    /// would have to be singular at the origin, so an inner radius is needed.
    pub fn validate_for_domain(&self, domain: &DomainSpec) -> Result<()> {
        if self.orientation == Orientation::Nonincreasing && domain.r0 <= 0.0 {
            return Err(Error::InvalidParameter(
                "nonincreasing cone requires an annulus (inner radius > 0)".into(),
            ));
        }
        Ok(())
    }

    /// Sup-norm defect against bounds and monotonicity; zero iff member.
    pub fn violation(&self, u: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for &x in u.iter() {
            v = v.max(self.lower - x).max(x - self.upper);
        }
        for i in 1..u.len() {
            let step = match self.orientation {
                Orientation::Nondecreasing => u[i - 1] - u[i],
                Orientation::Nonincreasing => u[i] - u[i - 1],
            };
            v = v.max(step);
        }
        v.max(0.0)
    }

    /// Exact nodal membership: bounds and monotonicity with no tolerance.
    pub fn contains(&self, u: &DVector<f64>) -> bool {
        self.violation(u) == 0.0
    }

    /// Nearest-cone surrogate: clamp to the band, monotone regression under
    /// the mass weights, running-extremum sweep, clamp again; applied twice.
    /// The sweep absorbs the ulp of division jitter the regression's block
    /// means can carry, so the output is an exact member.
    pub fn project(&self, u: &DVector<f64>, weights: &DVector<f64>) -> Result<DVector<f64>> {
        let mut vals: Vec<f64> = u.iter().copied().collect();
        let w: Vec<f64> = weights.iter().copied().collect();
        for _ in 0..2 {
            for v in vals.iter_mut() {
                *v = v.clamp(self.lower, self.upper);
            }
            vals = pava_project(&vals, &w, self.orientation)?;
            for i in 1..vals.len() {
                vals[i] = match self.orientation {
                    Orientation::Nondecreasing => vals[i].max(vals[i - 1]),
                    Orientation::Nonincreasing => vals[i].min(vals[i - 1]),
                };
            }
            for v in vals.iter_mut() {
                *v = v.clamp(self.lower, self.upper);
            }
        }
        Ok(DVector::from_vec(vals))
    }
}

/// E(u) on interior nodal vectors; for constants this telescopes to
/// |Omega| (t^2/2 - F~(t)) because A_red annihilates constants.
pub fn energy(forms: &AssembledForms, trunc: &TruncatedNonlinearity, u: &DVector<f64>) -> f64 {
    let semi = (&forms.a_red * u).dot(u);
    let mut quad = 0.0;
    let mut pot = 0.0;
    for (x, m) in u.iter().zip(forms.b_mass.iter()) {
        quad += m * x * x;
        pot += m * trunc.primitive(*x);
    }
    0.5 * (semi + quad) - pot
}

/// Energy of the constant state t via the closed formula.
pub fn constant_energy(volume: f64, trunc: &TruncatedNonlinearity, t: f64) -> f64 {
    volume * (0.5 * t * t - trunc.primitive(t))
}

/// Neumann resolvent h -> T(h): solves (A_red + B) v = B h. Constants are
/// reproduced exactly since A_red annihilates them.
pub fn solve_linear(forms: &AssembledForms, h: &DVector<f64>) -> Result<DVector<f64>> {
    let mut w = forms.a_red.clone();
    for i in 0..w.nrows() {
        w[(i, i)] += forms.b_mass[i];
    }
    let chol = Cholesky::new(w)
        .ok_or_else(|| Error::Contract("resolvent matrix is not positive definite".into()))?;
    let rhs = DVector::from_iterator(
        h.len(),
        h.iter().zip(forms.b_mass.iter()).map(|(x, m)| m * x),
    );
    Ok(chol.solve(&rhs))
}

/// Cached shifted resolvent and evaluation helpers for the flow.
struct Operator<'a> {
    forms: &'a AssembledForms,
    trunc: &'a TruncatedNonlinearity,
    chol: Cholesky<f64, Dyn>,
    shift: f64,
}

impl<'a> Operator<'a> {
    fn new(forms: &'a AssembledForms, trunc: &'a TruncatedNonlinearity) -> Result<Self> {
        let c = trunc.shift();
        let mut w = forms.a_red.clone();
        for i in 0..w.nrows() {
            w[(i, i)] += (1.0 + c) * forms.b_mass[i];
        }
        let chol = Cholesky::new(w).ok_or_else(|| {
            Error::Contract("shifted resolvent matrix is not positive definite".into())
        })?;
        Ok(Self { forms, trunc, chol, shift: c })
    }

    /// T~(u) = W^{-1} B (f~(u) + c u); its fixed points are the discrete weak
    /// solutions regardless of c.
    fn map(&self, u: &DVector<f64>) -> DVector<f64> {
        let rhs = DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.forms.b_mass.iter())
                .map(|(x, m)| m * (self.trunc.f(*x) + self.shift * x)),
        );
        self.chol.solve(&rhs)
    }

    fn energy(&self, u: &DVector<f64>) -> f64 {
        energy(self.forms, self.trunc, u)
    }

    /// Full norm ||u||_{H} = (u^T (A_red + B) u)^{1/2}.
    fn h_norm(&self, u: &DVector<f64>) -> f64 {
        let semi = (&self.forms.a_red * u).dot(u).max(0.0);
        let l2: f64 = u
            .iter()
            .zip(self.forms.b_mass.iter())
            .map(|(x, m)| m * x * x)
            .sum();
        (semi + l2).sqrt()
    }

    /// Residual against the safeguarded operator: ||u - P_C T~(u)||_H. This
    /// is the solver's stationarity measure; it vanishes at the discrete
    /// constrained critical point. The unprojected equation residual carries
    /// an irreducible O(h^s) boundary-layer defect and is reported, not
    /// driven to zero.
    fn kkt_residual(&self, cone: &ConeSpec, u: &DVector<f64>) -> Result<f64> {
        let w = self.project(cone, &self.map(u))?;
        Ok(self.h_norm(&(u - w)))
    }

    fn kkt_residual_rel(&self, cone: &ConeSpec, u: &DVector<f64>) -> Result<f64> {
        Ok(self.kkt_residual(cone, u)? / self.h_norm(u).max(f64::MIN_POSITIVE))
    }

    fn eq_residual(&self, u: &DVector<f64>) -> f64 {
        self.h_norm(&(u - self.map(u)))
    }

    /// Derivative of the resolvent map, T~'(u) = W^{-1} B diag(f~'(u) + c).
    fn map_derivative(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = u.len();
        let mut rhs = DMatrix::zeros(n, n);
        for j in 0..n {
            rhs[(j, j)] = self.forms.b_mass[j] * (self.trunc.fprime(u[j]) + self.shift);
        }
        self.chol.solve(&rhs)
    }

    fn project(&self, cone: &ConeSpec, u: &DVector<f64>) -> Result<DVector<f64>> {
        cone.project(u, &self.forms.b_mass)
    }
}

/// Projected nonlinear map u -> P_C T(f~(u)). Returns the image and the
/// pre-projection cone defect in sup norm; the defect is a pure
/// discretization artifact and shrinks under refinement.
pub fn tilde_t(
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    cone: &ConeSpec,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let op = Operator::new(forms, trunc)?;
    let raw = op.map(u);
    let defect = cone.violation(&raw);
    let image = op.project(cone, &raw)?;
    Ok((image, defect))
}

/// Metric gradient of E at u: g = u - T~(u) satisfies <g, v>_W = E'(u)[v]
/// for all v, with the inner product of W = A_red + (1 + c) B.
pub fn gradient(
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let op = Operator::new(forms, trunc)?;
    Ok(u - op.map(u))
}

/// One projected convex-combination step u <- P_C((1-lam) u + lam T~(u)).
/// For lam in [0, 1] the combination stays in the cone whenever u and the
/// projected image do, so the projection only corrects the resolvent defect.
pub fn flow_step(
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    cone: &ConeSpec,
    u: &DVector<f64>,
    lam: f64,
) -> Result<DVector<f64>> {
    if !(lam > 0.0 && lam <= 1.0) {
        return Err(Error::InvalidParameter(format!("flow step size must be in (0, 1], got {lam}")));
    }
    let op = Operator::new(forms, trunc)?;
    let raw = op.map(u);
    op.project(cone, &lerp(u, &raw, lam))
}

fn lerp(a: &DVector<f64>, b: &DVector<f64>, t: f64) -> DVector<f64> {
    a * (1.0 - t) + b * t
}

/// Backtracked flow step from `(u, e_u)`: halves lam until the energy
/// strictly decreases. `None` means lam underflowed without decrease, i.e.
/// the point is stationary to working precision.
fn descend(
    op: &Operator,
    cone: &ConeSpec,
    u: &DVector<f64>,
    e_u: f64,
    lam0: f64,
) -> Result<Option<(DVector<f64>, f64)>> {
    let raw = op.map(u);
    let mut lam = lam0;
    while lam >= LAMBDA_MIN {
        let cand = op.project(cone, &lerp(u, &raw, lam))?;
        let e = op.energy(&cand);
        if e < e_u {
            return Ok(Some((cand, e)));
        }
        lam *= 0.5;
    }
    Ok(None)
}

/// Measured barrier height at the constant valley `level`: the minimum of
/// E - E(level 1) over cone profiles on the sup-norm sphere of radius tau on
/// the band side `toward_upper`. Candidates are every monotone indicator
/// profile (the low-seminorm extremals, including the constant shift) plus
/// seeded random monotone profiles. Returns the minimum and the scanned
/// relative energies.
fn barrier_scan(
    op: &Operator,
    cone: &ConeSpec,
    level: f64,
    toward_upper: bool,
    tau: f64,
    seed: u64,
) -> (f64, Vec<f64>) {
    let dim = op.forms.b_mass.len();
    let e_level = op.energy(&DVector::from_element(dim, level));
    let sign = if toward_upper { 1.0 } else { -1.0 };
    // w nondecreasing combines with the band side and the cone orientation:
    // reverse whenever exactly one of {toward_upper, nondecreasing} fails.
    let reverse = toward_upper != (cone.orientation == Orientation::Nondecreasing);

    let mut profiles: Vec<Vec<f64>> = Vec::new();
    for k in 0..dim {
        let mut w = vec![0.0; dim];
        for x in w.iter_mut().skip(k) {
            *x = tau;
        }
        profiles.push(w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..BARRIER_SAMPLES {
        let mut acc = 0.0;
        let mut w: Vec<f64> = (0..dim)
            .map(|_| {
                acc += rng.random_range(0.0..1.0);
                acc
            })
            .collect();
        let top = w[dim - 1];
        if top > 0.0 {
            for x in w.iter_mut() {
                *x *= tau / top;
            }
            profiles.push(w);
        }
    }

    let mut energies = Vec::with_capacity(profiles.len());
    let mut alpha = f64::INFINITY;
    for mut w in profiles {
        if reverse {
            w.reverse();
        }
        let u = DVector::from_iterator(dim, w.iter().map(|x| level + sign * x));
        let de = op.energy(&u) - e_level;
        alpha = alpha.min(de);
        energies.push(de);
    }
    (alpha, energies)
}

/// Certified initial path and the measured geometry behind it.
#[derive(Clone, Debug)]
pub struct InitialPath {
    pub points: Vec<DVector<f64>>,
    /// Ray parameters of the endpoint constants t_- u0 and t_+ u0.
    pub t_minus: f64,
    pub t_plus: f64,
    /// Amplitude of the monotone second-mode detour carried by the path.
    pub tau_bar: f64,
    /// Measured barrier height and its sup-norm radius around the valleys.
    pub alpha: f64,
    pub tau_geom: f64,
    pub u0: f64,
    pub energy_u0: f64,
    /// Smallest valley energy among the entry sides; c must exceed
    /// valley_energy + alpha.
    pub valley_energy: f64,
}

/// Builds the admissible curve t -> P_C( t (u0 1 + tau_bar v2hat) ) on
/// [t_-, t_+]: measures the valley barrier alpha, picks endpoint constants
/// inside the valley neighborhoods, then line-searches the detour amplitude
/// until the sampled path maximum sits strictly below E(u0). Failure of any
/// stage is a geometry error carrying the offending energy profile.
pub fn build_initial_path(
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    cone: &ConeSpec,
    v2: &DVector<f64>,
    n_points: usize,
    seed: u64,
) -> Result<InitialPath> {
    let dim = forms.b_mass.len();
    if v2.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "second mode has {} entries for {} interior nodes",
            v2.len(),
            dim
        )));
    }
    if n_points < 5 {
        return Err(Error::InvalidParameter(format!("path needs at least 5 points, got {n_points}")));
    }
    let bands: Vec<_> = trunc
        .bands
        .iter()
        .filter(|b| b.u0 > cone.lower && b.u0 < cone.upper)
        .collect();
    if bands.len() != 1 {
        return Err(Error::InvalidParameter(format!(
            "cone [{}, {}] must bracket exactly one admissible fixed point, found {}",
            cone.lower,
            cone.upper,
            bands.len()
        )));
    }
    let u0 = bands[0].u0;
    let (ul, uu) = (cone.lower, cone.upper);
    let op = Operator::new(forms, trunc)?;
    let constant = |t: f64| DVector::from_element(dim, t);
    let e_low = op.energy(&constant(ul));
    let energy_u0 = op.energy(&constant(u0));

    // Barrier radius and height; shrink tau until the measured alpha is
    // positive (it must be, near a stable valley, once tau is small enough).
    let width_low = u0 - ul;
    let width_high = uu - u0;
    let mut tau = 0.5 * width_low.min(width_high);
    let mut alpha = f64::NEG_INFINITY;
    let mut last_scan = Vec::new();
    for _ in 0..TAU_GEOM_HALVINGS {
        let (a_low, scan_low) = barrier_scan(&op, cone, ul, true, tau, seed);
        let (a, scan) = if uu.is_finite() {
            let (a_high, scan_high) = barrier_scan(&op, cone, uu, false, tau, seed ^ 0x9e3779b9);
            (a_low.min(a_high), [scan_low, scan_high].concat())
        } else {
            (a_low, scan_low)
        };
        alpha = a;
        last_scan = scan;
        if alpha > 0.0 {
            break;
        }
        tau *= 0.5;
    }
    if !(alpha > 0.0) {
        return Err(Error::Geometry {
            message: format!("no positive energy barrier around the valleys at radius {tau:.3e}"),
            energy_profile: last_scan,
        });
    }

    // Endpoint constants: walk toward the valley until inside its basin.
    let mut t_minus = (ul + 0.5 * tau.min(width_low)) / u0;
    let mut ok = false;
    for _ in 0..60 {
        if op.energy(&constant(t_minus * u0)) < e_low + 0.5 * alpha {
            ok = true;
            break;
        }
        t_minus = (ul + 0.5 * (t_minus * u0 - ul)) / u0;
    }
    if !ok {
        return Err(Error::Geometry {
            message: "no constant below u0 enters the lower valley basin".into(),
            energy_profile: vec![op.energy(&constant(t_minus * u0)) - e_low, alpha],
        });
    }
    let e_high = if uu.is_finite() { op.energy(&constant(uu)) } else { e_low };
    let mut t_plus;
    if uu.is_finite() {
        t_plus = (uu - 0.5 * tau.min(width_high)) / u0;
        ok = false;
        for _ in 0..60 {
            if op.energy(&constant(t_plus * u0)) < e_high + 0.5 * alpha {
                ok = true;
                break;
            }
            t_plus = (uu - 0.5 * (uu - t_plus * u0)) / u0;
        }
        if !ok {
            return Err(Error::Geometry {
                message: "no constant above u0 enters the upper valley basin".into(),
                energy_profile: vec![op.energy(&constant(t_plus * u0)) - e_high, alpha],
            });
        }
    } else {
        // Unbounded band: ride the superlinear decay of t -> E(t 1) until the
        // energy drops strictly below the lower valley.
        t_plus = (u0 + width_low.max(1.0)) / u0;
        ok = false;
        let mut profile = Vec::new();
        for _ in 0..200 {
            let e = op.energy(&constant(t_plus * u0));
            profile.push(e);
            if e < e_low {
                ok = true;
                break;
            }
            t_plus *= 2.0;
        }
        if !ok {
            return Err(Error::Geometry {
                message: "constant energies never drop below the lower valley".into(),
                energy_profile: profile,
            });
        }
    }
    if !(ul < t_minus * u0 && t_minus * u0 < u0 && u0 < t_plus * u0 && t_plus * u0 < uu) {
        return Err(Error::Contract(format!(
            "endpoint chain violated: {} < {} < {} < {} < {}",
            ul,
            t_minus * u0,
            u0,
            t_plus * u0,
            uu
        )));
    }

    // Detour amplitude: halve tau_bar until the sampled path maximum dips
    // below E(u0) and both endpoints remain inside their entry sets. The
    // sampling grid is 8x finer than the returned path and contains t = 1.
    let vhat = v2 / v2.amax();
    let margin = DIP_MARGIN_REL * energy_u0.abs();
    let fine = (8 * n_points + 1).max(257);
    let mut t_grid: Vec<f64> = (0..fine)
        .map(|j| t_minus + (t_plus - t_minus) * j as f64 / (fine - 1) as f64)
        .collect();
    t_grid.push(1.0);
    t_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let base = DVector::from_element(dim, u0);
    let mut tau_bar = 0.5 * tau / t_plus.max(1.0);
    let mut certified = false;
    let mut profile = Vec::new();
    for _ in 0..TAU_BAR_HALVINGS {
        let curve = |t: f64| -> Result<DVector<f64>> {
            op.project(cone, &((&base + &vhat * tau_bar) * t))
        };
        profile.clear();
        let mut max_e = f64::NEG_INFINITY;
        for &t in &t_grid {
            let e = op.energy(&curve(t)?);
            profile.push(e);
            max_e = max_e.max(e);
        }
        let left = curve(t_minus)?;
        let right = curve(t_plus)?;
        let left_ok = op.energy(&left) < e_low + 0.5 * alpha
            && left.iter().all(|&x| (x - ul).abs() < tau);
        let right_ok = if uu.is_finite() {
            op.energy(&right) < e_high + 0.5 * alpha && right.iter().all(|&x| (uu - x).abs() < tau)
        } else {
            op.energy(&right) < e_low && right.iter().any(|&x| (x - ul).abs() > tau)
        };
        if max_e < energy_u0 - margin && left_ok && right_ok {
            certified = true;
            break;
        }
        tau_bar *= 0.5;
    }
    if !certified {
        return Err(Error::Geometry {
            message: format!(
                "no detour amplitude puts the path crest below the constant level {energy_u0:.6e}"
            ),
            energy_profile: profile,
        });
    }

    let points = (0..n_points)
        .map(|j| {
            let t = t_minus + (t_plus - t_minus) * j as f64 / (n_points - 1) as f64;
            op.project(cone, &((&base + &vhat * tau_bar) * t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InitialPath {
        points,
        t_minus,
        t_plus,
        tau_bar,
        alpha,
        tau_geom: tau,
        u0,
        energy_u0,
        valley_energy: e_low.min(e_high),
    })
}

/// Tunables of the mountain-pass driver.
#[derive(Clone, Copy, Debug)]
pub struct SolveParams {
    pub n_path_points: usize,
    pub max_outer: usize,
    /// Relative stationarity residual ||u - P_C T~(u)||_H / ||u||_H demanded
    /// of the output.
    pub residual_tol: f64,
    /// Base flow step; small enough that one sweep cannot tear the string
    /// across the ridge before respacing restores resolution.
    pub flow_lambda: f64,
    pub polish_iters: usize,
    pub seed: u64,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            n_path_points: 33,
            max_outer: 400,
            residual_tol: 1e-9,
            flow_lambda: 0.15,
            polish_iters: 200,
            seed: 0,
        }
    }
}

/// Outcome of one cone band: the polished maximizer and the measured
/// geometry of the path that produced it.
#[derive(Clone, Debug)]
pub struct MinimaxResult {
    pub u_star: RadialFunction,
    /// Minimax level c = E(u_star).
    pub level: f64,
    /// Stationarity residual ||u - P_C T~(u)||_H of the safeguarded
    /// operator; the quantity the solver drives to tolerance.
    pub residual: f64,
    pub residual_rel: f64,
    /// Residual ||u - T~(u)||_H of the unprojected resolvent equation. It is
    /// floored at the cone defect of the resolvent image near the boundary,
    /// an O(h^s) discretization artifact, so it shrinks under grid
    /// refinement rather than with solver iterations.
    pub equation_residual: f64,
    pub path: Vec<RadialFunction>,
    pub path_energies: Vec<f64>,
    pub iterations: usize,
    pub t_minus: f64,
    pub t_plus: f64,
    pub tau_bar: f64,
    pub alpha: f64,
    pub tau_geom: f64,
    pub u0: f64,
    pub energy_u0: f64,
    pub valley_energy: f64,
    /// Sup distance from the unstable constant u0.
    pub nonconstancy_linf: f64,
    pub cone: ConeSpec,
    /// Cleared when another band's solution is not separated beyond the
    /// combined residual scale.
    pub resolved: bool,
}

/// Redistributes the path by energy-weighted arclength in the H metric:
/// chords near the crest get up to 4x the nodal density. Endpoints stay.
fn respace(
    op: &Operator,
    cone: &ConeSpec,
    path: &mut [DVector<f64>],
    energies: &mut [f64],
) -> Result<()> {
    let m = path.len();
    let (mut emin, mut emax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in energies.iter() {
        emin = emin.min(e);
        emax = emax.max(e);
    }
    let span = (emax - emin).max(f64::MIN_POSITIVE);
    let mut cum = vec![0.0; m];
    for i in 0..m - 1 {
        let d = op.h_norm(&(&path[i + 1] - &path[i]));
        let w = 1.0 + 3.0 * (0.5 * (energies[i] + energies[i + 1]) - emin) / span;
        cum[i + 1] = cum[i] + w * d;
    }
    let total = cum[m - 1];
    if !(total > 0.0) {
        return Ok(());
    }
    let mut fresh: Vec<DVector<f64>> = Vec::with_capacity(m);
    fresh.push(path[0].clone());
    let mut seg = 0usize;
    for j in 1..m - 1 {
        let target = total * j as f64 / (m - 1) as f64;
        while seg + 2 < m && cum[seg + 1] < target {
            seg += 1;
        }
        let len = (cum[seg + 1] - cum[seg]).max(f64::MIN_POSITIVE);
        let theta = ((target - cum[seg]) / len).clamp(0.0, 1.0);
        fresh.push(op.project(cone, &lerp(&path[seg], &path[seg + 1], theta))?);
    }
    fresh.push(path[m - 1].clone());
    for (i, p) in fresh.into_iter().enumerate() {
        if i > 0 && i < m - 1 {
            energies[i] = op.energy(&p);
        }
        path[i] = p;
    }
    Ok(())
}

/// Componentwise Aitken extrapolation of three fixed-point iterates.
fn aitken(x0: &DVector<f64>, x1: &DVector<f64>, x2: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x2.len(),
        (0..x2.len()).map(|i| {
            let d1 = x1[i] - x0[i];
            let d2 = x2[i] - x1[i];
            let den = d2 - d1;
            if den.abs() > 1e-14 * (1.0 + x2[i].abs()) {
                x2[i] - d2 * d2 / den
            } else {
                x2[i]
            }
        }),
    )
}

/// Derivative of the cone projection at the projected image `w`: the
/// projection is piecewise linear, locally a blockwise weighted average over
/// the pooled pattern, with vanishing rows where a bound clamp is active.
fn pooling_matrix(cone: &ConeSpec, w: &DVector<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let n = w.len();
    let mut pi = DMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && w[j] == w[i] {
            j += 1;
        }
        let clamped = w[i] == cone.lower || (cone.upper.is_finite() && w[i] == cone.upper);
        if !clamped {
            let total: f64 = weights.iter().take(j).skip(i).sum();
            for r in i..j {
                for c in i..j {
                    pi[(r, c)] = weights[c] / total;
                }
            }
        }
        i = j;
    }
    pi
}

/// Drives the path maximizer to stationarity of the safeguarded operator,
/// G(u) = u - P_C T~(u) = 0: damped fixed-point sweeps with Aitken
/// extrapolation settle the active pattern, and when they stall against the
/// saddle's unstable mode a semismooth Newton step (projection linearized
/// over its pooled pattern) takes over. Every iterate is an exact cone
/// member. Returns the best iterate, its relative residual, and the
/// iterations spent.
fn polish(
    op: &Operator,
    cone: &ConeSpec,
    start: &DVector<f64>,
    tol_rel: f64,
    cap: usize,
) -> Result<(DVector<f64>, f64, usize)> {
    let mut u = op.project(cone, start)?;
    let mut res = op.kkt_residual_rel(cone, &u)?;
    let mut best = (u.clone(), res);
    let mut hist: Vec<DVector<f64>> = vec![u.clone()];
    let mut spent = 0;
    for it in 0..cap {
        spent = it + 1;
        if best.1 <= tol_rel {
            break;
        }
        let image = op.project(cone, &op.map(&u))?;
        let mut omega = 1.0;
        let mut accepted = false;
        while omega >= 1.0 / 64.0 {
            let cand = op.project(cone, &lerp(&u, &image, omega))?;
            let r = op.kkt_residual_rel(cone, &cand)?;
            if r < res {
                u = cand;
                res = r;
                accepted = true;
                break;
            }
            omega *= 0.5;
        }
        if accepted {
            hist.push(u.clone());
            if hist.len() == 3 {
                let acc = op.project(cone, &aitken(&hist[0], &hist[1], &hist[2]))?;
                let r = op.kkt_residual_rel(cone, &acc)?;
                if r < res {
                    u = acc;
                    res = r;
                }
                hist.clear();
                hist.push(u.clone());
            }
        } else {
            hist.clear();
            hist.push(u.clone());
            let g = &u - &image;
            let jac = DMatrix::identity(u.len(), u.len())
                - pooling_matrix(cone, &image, &op.forms.b_mass) * op.map_derivative(&u);
            let Some(delta) = LU::new(jac).solve(&(-&g)) else { break };
            let mut step = 1.0;
            let mut improved = false;
            for _ in 0..12 {
                let cand = op.project(cone, &(&u + &delta * step))?;
                let r = op.kkt_residual_rel(cone, &cand)?;
                if r < res {
                    u = cand;
                    res = r;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if res < best.1 {
            best = (u.clone(), res);
        }
    }
    Ok((best.0, best.1, spent))
}

/// Runs the full mountain pass on one cone band: certified initial path,
/// string relaxation (backtracked flow on every interior point, then
/// energy-weighted respacing), and polish of the path maximizer. The
/// returned level sits strictly below E(u0 1) and at least alpha above the
/// valley energy, as measured by the path geometry.
pub fn mountain_pass(
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    cone: &ConeSpec,
    v2: &DVector<f64>,
    params: &SolveParams,
) -> Result<MinimaxResult> {
    let op = Operator::new(forms, trunc)?;
    let init = build_initial_path(forms, trunc, cone, v2, params.n_path_points, params.seed)?;
    let mut path = init.points;
    let m = path.len();
    let mut energies: Vec<f64> = path.iter().map(|p| op.energy(p)).collect();

    // Evolution cap for unbounded bands: without it the far side of the
    // string free-falls down the superlinear valley, and respacing then
    // starves the crest of points. The cap exceeds t_star >= K_inf + 1, so
    // the critical point itself is never constrained by it.
    let initial_sup = path.iter().map(|p| p.amax()).fold(0.0f64, f64::max);
    let evo = ConeSpec {
        upper: cone.upper.min(trunc.t_star.max(initial_sup + 1.0)),
        ..*cone
    };
    let evo = &evo;

    let mut outer_used = 0;
    let handoff = FLOW_HANDOFF_RESIDUAL.max(params.residual_tol);
    let mut prev_max = f64::INFINITY;
    let mut stagnant = 0usize;
    for outer in 1..=params.max_outer {
        outer_used = outer;
        let mut moved = false;
        for i in 1..m - 1 {
            if let Some((nu, ne)) = descend(&op, evo, &path[i], energies[i], params.flow_lambda)? {
                path[i] = nu;
                energies[i] = ne;
                moved = true;
            }
        }
        respace(&op, evo, &mut path, &mut energies)?;
        let k = argmax(&energies);
        let e_max = energies[k];
        // the crest settles long before individual points do; hand over to
        // the polish phase once its height stops moving
        if prev_max - e_max < 1e-12 * (1.0 + e_max.abs()) {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        prev_max = e_max;
        if op.kkt_residual_rel(evo, &path[k])? < handoff || stagnant >= 8 || !moved {
            break;
        }
    }

    let k = argmax(&energies);
    let (u_star, residual_rel, polish_used) =
        polish(&op, cone, &path[k], params.residual_tol, params.polish_iters)?;
    let iterations = outer_used + polish_used;
    if residual_rel > params.residual_tol {
        return Err(Error::Solver {
            message: format!(
                "mountain-pass maximizer stalled in cone [{}, {}]",
                cone.lower, cone.upper
            ),
            residual: residual_rel,
            iterations,
        });
    }
    let level = op.energy(&u_star);
    if !(level < init.energy_u0) {
        return Err(Error::Solver {
            message: format!(
                "polished point climbed to the constant level ({level:.9e} vs {:.9e})",
                init.energy_u0
            ),
            residual: residual_rel,
            iterations,
        });
    }
    let nonconstancy_linf = u_star
        .iter()
        .map(|&x| (x - init.u0).abs())
        .fold(0.0f64, f64::max);
    let residual = op.kkt_residual(cone, &u_star)?;
    let equation_residual = op.eq_residual(&u_star);
    Ok(MinimaxResult {
        u_star: neumann_extension(forms, &u_star),
        level,
        residual,
        residual_rel,
        equation_residual,
        path: path.iter().cloned().map(RadialFunction::interior_only).collect(),
        path_energies: energies,
        iterations,
        t_minus: init.t_minus,
        t_plus: init.t_plus,
        tau_bar: init.tau_bar,
        alpha: init.alpha,
        tau_geom: init.tau_geom,
        u0: init.u0,
        energy_u0: init.energy_u0,
        valley_energy: init.valley_energy,
        nonconstancy_linf,
        cone: *cone,
        resolved: true,
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut k = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[k] {
            k = i;
        }
    }
    k
}

/// One band's cone and solver outcome; bands fail independently.
#[derive(Debug)]
pub struct BandOutcome {
    pub cone: ConeSpec,
    pub result: Result<MinimaxResult>,
}

/// Runs the mountain pass on every admissible band of the truncation with a
/// shared monotone second mode. Solutions of consecutive bands interleave by
/// construction (exact cone membership in ordered bands); pairs closer in
/// sup norm than 10x their combined residuals are marked unresolved.
pub fn multi_solve(
    forms: &AssembledForms,
    trunc: &TruncatedNonlinearity,
    orientation: Orientation,
    params: &SolveParams,
) -> Result<Vec<BandOutcome>> {
    let pair = crate::spectral::lambda2_increasing(forms, orientation, params.seed)?;
    let v2 = &pair.eigenfunction.interior;
    let mut out: Vec<BandOutcome> = Vec::with_capacity(trunc.bands.len());
    for band in &trunc.bands {
        let cone = ConeSpec::new(orientation, band.u_minus, band.u_plus)?;
        out.push(BandOutcome { cone, result: mountain_pass(forms, trunc, &cone, v2, params) });
    }
    let n = out.len();
    for i in 0..n {
        for j in i + 1..n {
            let (head, tail) = out.split_at_mut(j);
            let (Ok(a), Ok(b)) = (&mut head[i].result, &mut tail[0].result) else { continue };
            let d = (&a.u_star.interior - &b.u_star.interior).amax();
            if d <= 10.0 * (a.residual + b.residual) {
                a.resolved = false;
                b.resolved = false;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_forms;
    use crate::grid::{build_grid, RadialGrid};
    use crate::nonlinearity::{truncate, NonlinearitySpec, TableRow};
    use crate::spectral::lambda2_increasing;

    const PHI: f64 = 1.618033988749894848;

    fn ball_1d(n_int: usize, radius: f64) -> RadialGrid {
        let dom = DomainSpec { n: 1, s: 0.75, r0: 0.0, r: radius, r_ext: 8.0 * radius };
        build_grid(dom, n_int, n_int / 2, 2.0).unwrap()
    }

    fn cubic_trunc() -> TruncatedNonlinearity {
        let spec = NonlinearitySpec::prototype(4.0, 3.0).unwrap();
        truncate(&spec, 6.0, 4.0, 0.75, 1).unwrap()
    }

    fn full_cone() -> ConeSpec {
        ConeSpec::new(Orientation::Nondecreasing, 0.0, f64::INFINITY).unwrap()
    }

    fn random_cone_vector(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> DVector<f64> {
        let mut acc = lo + rng.random_range(0.0..0.2) * (hi - lo);
        DVector::from_iterator(
            dim,
            (0..dim).map(|_| {
                acc += rng.random_range(0.0..1.0) * (hi - acc) / dim as f64;
                acc
            }),
        )
    }

    #[test]
    fn cone_projection_is_exact_and_idempotent() {
        let weights = DVector::from_element(9, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cone in [
            ConeSpec::new(Orientation::Nondecreasing, 0.0, 2.0).unwrap(),
            ConeSpec::new(Orientation::Nondecreasing, 0.0, f64::INFINITY).unwrap(),
            ConeSpec::new(Orientation::Nonincreasing, 0.5, 3.0).unwrap(),
        ] {
            for _ in 0..50 {
                let u = DVector::from_iterator(9, (0..9).map(|_| rng.random_range(-2.0..4.0)));
                let p = cone.project(&u, &weights).unwrap();
                assert!(cone.contains(&p), "violation {}", cone.violation(&p));
                let q = cone.project(&p, &weights).unwrap();
                assert_eq!(p, q);
            }
        }
        assert!(ConeSpec::new(Orientation::Nondecreasing, -0.1, 1.0).is_err());
        assert!(ConeSpec::new(Orientation::Nondecreasing, 1.0, 1.0).is_err());
        let ball = DomainSpec { n: 1, s: 0.75, r0: 0.0, r: 1.0, r_ext: 8.0 };
        let cone = ConeSpec::new(Orientation::Nonincreasing, 0.0, 1.0).unwrap();
        assert!(cone.validate_for_domain(&ball).is_err());
    }

    #[test]
    fn constant_energies_match_closed_formula() {
        let forms = assemble_forms(&ball_1d(16, 1.0)).unwrap();
        let trunc = cubic_trunc();
        let dim = forms.b_mass.len();
        let zero = DVector::from_element(dim, 0.0);
        assert_eq!(energy(&forms, &trunc, &zero), 0.0);
        // |Omega| = 2 and F~(1) = 1/4 - 1/3: E(1) = 2 (1/2 + 1/12) = 7/6.
        let one = DVector::from_element(dim, 1.0);
        assert!((energy(&forms, &trunc, &one) - 7.0 / 6.0).abs() < 1e-10);
        // E(phi 1) = 2 (phi^2/2 - phi^4/4 + phi^3/3).
        let phi = DVector::from_element(dim, PHI);
        assert!((energy(&forms, &trunc, &phi) - 2.015028323958246).abs() < 1e-9);
        for t in [0.3, 1.0, PHI, 2.9] {
            let c = DVector::from_element(dim, t);
            let discrete = energy(&forms, &trunc, &c);
            let closed = constant_energy(forms.volume, &trunc, t);
            assert!((discrete - closed).abs() < 1e-10 * (1.0 + closed.abs()));
        }
    }

    #[test]
    fn solve_linear_reproduces_constants_and_is_linear() {
        let forms = assemble_forms(&ball_1d(12, 1.0)).unwrap();
        let dim = forms.b_mass.len();
        let c = DVector::from_element(dim, 0.7);
        let v = solve_linear(&forms, &c).unwrap();
        assert!((&v - &c).amax() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h1 = DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
        let h2 = DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
        let v1 = solve_linear(&forms, &h1).unwrap();
        let v2 = solve_linear(&forms, &h2).unwrap();
        let combo = solve_linear(&forms, &(&h1 * 0.3 - &h2 * 1.7)).unwrap();
        assert!((&combo - (&v1 * 0.3 - &v2 * 1.7)).amax() < 1e-10);
        // defect of the linear system itself
        let mut rows = &forms.a_red * &v1;
        for i in 0..dim {
            rows[i] += forms.b_mass[i] * (v1[i] - h1[i]);
        }
        assert!(rows.amax() < 1e-10 * h1.amax());
    }

    #[test]
    fn tilde_t_fixes_the_admissible_constant() {
        let forms = assemble_forms(&ball_1d(16, 1.0)).unwrap();
        let trunc = cubic_trunc();
        let cone = full_cone();
        let dim = forms.b_mass.len();
        let phi = DVector::from_element(dim, PHI);
        let (image, defect) = tilde_t(&forms, &trunc, &cone, &phi).unwrap();
        assert!((&image - &phi).amax() < 1e-9);
        assert!(defect < 1e-9 * PHI);
        let zero = DVector::from_element(dim, 0.0);
        let (image0, _) = tilde_t(&forms, &trunc, &cone, &zero).unwrap();
        assert!(image0.amax() < 1e-12);
    }

    #[test]
    fn gradient_matches_directional_derivative() {
        let forms = assemble_forms(&ball_1d(12, 1.0)).unwrap();
        let trunc = cubic_trunc();
        let dim = forms.b_mass.len();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shift = trunc.shift();
        for _ in 0..10 {
            let u = random_cone_vector(&mut rng, dim, 0.0, 3.0);
            let v = DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-1.0..1.0)));
            let g = gradient(&forms, &trunc, &u).unwrap();
            // pairing in the W = A_red + (1+c) B metric
            let mut pair = (&forms.a_red * &v).dot(&g);
            for i in 0..dim {
                pair += (1.0 + shift) * forms.b_mass[i] * g[i] * v[i];
            }
            let eps = 1e-5;
            let ep = energy(&forms, &trunc, &(&u + &v * eps));
            let em = energy(&forms, &trunc, &(&u - &v * eps));
            let fd = (ep - em) / (2.0 * eps);
            let e0 = energy(&forms, &trunc, &u);
            assert!(
                (pair - fd).abs() <= 1e-5 * (1.0 + e0.abs()),
                "pairing {pair} vs central difference {fd}"
            );
        }
    }

    #[test]
    fn flow_step_backtracking_decreases_energy() {
        let forms = assemble_forms(&ball_1d(12, 1.0)).unwrap();
        let trunc = cubic_trunc();
        let cone = full_cone();
        let dim = forms.b_mass.len();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let u = cone
                .project(&random_cone_vector(&mut rng, dim, 0.0, 4.0), &forms.b_mass)
                .unwrap();
            let e0 = energy(&forms, &trunc, &u);
            let mut lam = 0.9;
            let mut decreased = false;
            while lam >= LAMBDA_MIN {
                let w = flow_step(&forms, &trunc, &cone, &u, lam).unwrap();
                assert!(cone.contains(&w));
                if energy(&forms, &trunc, &w) < e0 {
                    decreased = true;
                    break;
                }
                lam *= 0.5;
            }
            // either the step made progress or the start was stationary
            let g = gradient(&forms, &trunc, &u).unwrap();
            assert!(decreased || g.amax() < 1e-8 * (1.0 + u.amax()));
        }
        assert!(flow_step(&forms, &trunc, &cone, &DVector::zeros(dim), 0.0).is_err());
        assert!(flow_step(&forms, &trunc, &cone, &DVector::zeros(dim), 1.5).is_err());
    }

    #[test]
    fn initial_path_geometry_is_certified() {
        // R = 2 so that lambda_2^{+,r} + 1 ~ 3.04 < f~'(phi) = phi + 3
        let forms = assemble_forms(&ball_1d(24, 2.0)).unwrap();
        let trunc = cubic_trunc();
        let cone = full_cone();
        let pair = lambda2_increasing(&forms, Orientation::Nondecreasing, 7).unwrap();
        let init =
            build_initial_path(&forms, &trunc, &cone, &pair.eigenfunction.interior, 33, 0).unwrap();
        assert_eq!(init.points.len(), 33);
        assert!(init.alpha > 0.0);
        assert!(init.tau_bar > 0.0);
        assert!((init.u0 - PHI).abs() < 1e-9);
        // strict endpoint chain 0 < t_- u0 < u0 < t_+ u0
        assert!(0.0 < init.t_minus && init.t_minus < 1.0 && 1.0 < init.t_plus);
        let e_low = 0.0; // E(0) for the zero lower valley
        let first = energy(&forms, &trunc, &init.points[0].clone());
        let last = energy(&forms, &trunc, init.points.last().unwrap());
        assert!(first < e_low + 0.5 * init.alpha);
        assert!(last < e_low, "far endpoint energy {last}");
        let mut max_e = f64::NEG_INFINITY;
        for p in &init.points {
            assert!(cone.contains(p));
            max_e = max_e.max(energy(&forms, &trunc, p));
        }
        assert!(max_e < init.energy_u0 - 1e-8 * init.energy_u0.abs());
        // the crest of the pure constant ray sits exactly at u0
        let dim = forms.b_mass.len();
        let mut crest = f64::NEG_INFINITY;
        for j in 0..=400 {
            let t = init.t_minus + (init.t_plus - init.t_minus) * j as f64 / 400.0;
            crest = crest.max(energy(&forms, &trunc, &DVector::from_element(dim, t * init.u0)));
        }
        let at_u0 = energy(&forms, &trunc, &DVector::from_element(dim, init.u0));
        assert!(crest <= at_u0 + 1e-9 * at_u0.abs());
        assert!(crest >= at_u0 - 1e-3 * at_u0.abs());
    }

    #[test]
    fn sublinear_nonlinearity_fails_geometry() {
        // f(t) = 1.2 t - 0.3 (1 - e^{-t}): superlinear mass exists (delta
        // ~ 0.2) and an admissible fixed point sits near 0.97 with slope
        // f'(u0) ~ 1.086, but the slope never exceeds lambda_2^{+,r} + 1, so
        // no detour direction can dip below the crest.
        let rows: Vec<TableRow> = (0..=12_000)
            .map(|i| {
                let t = i as f64 * 1e-3;
                TableRow { t, f: 1.2 * t - 0.3 * (1.0 - (-t).exp()), fprime: 1.2 - 0.3 * (-t).exp() }
            })
            .collect();
        let spec = NonlinearitySpec::from_table(rows).unwrap();
        let trunc = truncate(&spec, 4.0, 4.0, 0.75, 1).unwrap();
        let forms = assemble_forms(&ball_1d(16, 1.0)).unwrap();
        let cone = full_cone();
        let pair = lambda2_increasing(&forms, Orientation::Nondecreasing, 7).unwrap();
        let err = build_initial_path(&forms, &trunc, &cone, &pair.eigenfunction.interior, 25, 0)
            .unwrap_err();
        match err {
            Error::Geometry { energy_profile, .. } => assert!(!energy_profile.is_empty()),
            other => panic!("expected geometry failure, got {other}"),
        }
    }

    #[test]
    fn mountain_pass_solves_cubic_ball() {
        let forms = assemble_forms(&ball_1d(32, 2.0)).unwrap();
        let trunc = cubic_trunc();
        let cone = full_cone();
        let pair = lambda2_increasing(&forms, Orientation::Nondecreasing, 0).unwrap();
        let params = SolveParams::default();
        let res =
            mountain_pass(&forms, &trunc, &cone, &pair.eigenfunction.interior, &params).unwrap();
        let u = &res.u_star.interior;
        assert!(cone.contains(u));
        assert!(res.residual_rel < 1e-6);
        // the unprojected equation keeps an O(h^s) boundary-layer defect
        assert!(res.equation_residual > res.residual);
        assert!(res.level < res.energy_u0);
        assert!(res.nonconstancy_linf > 0.0);
        // measured minimax floor: c >= valley + alpha
        assert!(res.level >= res.valley_energy + res.alpha - 1e-12);
        // critical-point identity sum m u = sum m f~(u)
        let mut mu = 0.0;
        let mut mf = 0.0;
        for (x, m) in u.iter().zip(forms.b_mass.iter()) {
            mu += m * x;
            mf += m * trunc.f(*x);
        }
        assert!((mu - mf).abs() <= 1e-6 * mu.abs().max(mf.abs()));
        // level agrees with the energy of the returned point bitwise-ish
        assert!((res.level - energy(&forms, &trunc, u)).abs() < 1e-10);
        // determinism: an identical run reproduces the level exactly
        let res2 =
            mountain_pass(&forms, &trunc, &cone, &pair.eigenfunction.interior, &params).unwrap();
        assert_eq!(res.level.to_bits(), res2.level.to_bits());
        assert_eq!(res.u_star.interior, res2.u_star.interior);
    }

    #[test]
    fn multi_solve_separates_two_bands() {
        // quartic double-well perturbation of the identity: admissible fixed
        // points at 1 and 3 with stable neighbors 0 and 2
        let rows: Vec<TableRow> = (0..=12_000)
            .map(|i| {
                let t = i as f64 * 1e-3;
                let g = t * (t - 1.0) * (t - 2.0) * (t - 3.0);
                let gp = ((4.0 * t - 18.0) * t + 22.0) * t - 6.0;
                TableRow { t, f: t + g, fprime: 1.0 + gp }
            })
            .collect();
        let spec = NonlinearitySpec::from_table(rows).unwrap();
        let trunc = truncate(&spec, 5.0, 4.0, 0.75, 1).unwrap();
        assert_eq!(trunc.bands.len(), 2);
        // R = 3: lambda_2^{+,r} + 1 ~ 2.11 clears the weaker slope f'(1) = 3
        let forms = assemble_forms(&ball_1d(24, 3.0)).unwrap();
        let params = SolveParams::default();
        let outs = multi_solve(&forms, &trunc, Orientation::Nondecreasing, &params).unwrap();
        assert_eq!(outs.len(), 2);
        let a = outs[0].result.as_ref().unwrap();
        let b = outs[1].result.as_ref().unwrap();
        assert!(a.resolved && b.resolved);
        // interleaving: band one lives below 2, band two above 2
        assert!(a.u_star.interior.iter().all(|&x| (0.0..=2.0).contains(&x)));
        assert!(b.u_star.interior.iter().all(|&x| x >= 2.0));
        let gap = (&a.u_star.interior - &b.u_star.interior).amax();
        assert!(gap > 10.0 * (a.residual + b.residual));
        assert!(a.level < a.energy_u0 && b.level < b.energy_u0);
    }
}

