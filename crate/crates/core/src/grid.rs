//! Radial domain description and the graded global mesh.
//!
//! The mesh covers [0, R_ext] in up to three bands: an inner exterior band
//! [0, R0] (annulus only), the interior band [R0, R], and an outer exterior
//! band [R, R_ext]. Nodes at R0 and R are shared between bands so the global
//! piecewise-linear space is continuous; those shared nodes count as interior
//! degrees of freedom. Beyond R_ext the Neumann extension is the constant
//! Lebesgue mean of u over the domain, handled analytically by the assembly's
//! far-field tail.
//!
//! Meshes are graded toward the boundary radii R0, R where the solutions of
//! fractional problems develop d^s boundary layers and the kernel weight
//! concentrates.

use crate::error::{Error, Result};
use crate::kernel::{surface_area, Elem, KernelParams};

/// Radial domain parameters. R0 = 0 is the ball B_R; R0 > 0 the annulus
/// A_{R0,R} (the ball is the limit case of the annulus).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainSpec {
    pub n: u32,
    pub s: f64,
    pub r0: f64,
    pub r: f64,
    pub r_ext: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        KernelParams::new(self.n, self.s)?;
        if !(self.r0 >= 0.0 && self.r0 < self.r && self.r < self.r_ext) {
            return Err(Error::InvalidParameter(format!(
                "radii must satisfy 0 <= R0 < R < R_ext, got R0={}, R={}, R_ext={}",
                self.r0, self.r, self.r_ext
            )));
        }
        if !(self.r.is_finite() && self.r_ext.is_finite()) {
            return Err(Error::InvalidParameter("radii must be finite".into()));
        }
        Ok(())
    }

    pub fn kernel_params(&self) -> KernelParams {
        KernelParams { n: self.n, s: self.s }
    }

    pub fn is_ball(&self) -> bool {
        self.r0 == 0.0
    }

    /// |Omega| = omega_n (R^n - R0^n)/n with omega_n = |S^(n-1)|.
    pub fn volume(&self) -> f64 {
        let n = self.n as f64;
        surface_area(self.n) * (self.r.powi(self.n as i32) - self.r0.powi(self.n as i32)) / n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    InnerExterior,
    Interior,
    OuterExterior,
}

/// Global graded mesh. `nodes` is strictly increasing over [0 | R0, R_ext];
/// interior nodes are the contiguous index range `i_lo..=i_hi` with
/// nodes[i_lo] = R0 (or 0 for the ball) and nodes[i_hi] = R exactly.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    pub domain: DomainSpec,
    pub nodes: Vec<f64>,
    pub i_lo: usize,
    pub i_hi: usize,
    /// omega_n int phi_a r^(n-1) dr over the interior band; sums to |Omega|.
    pub masses: Vec<f64>,
    /// same integral over the exterior bands (diagnostics and Gram scaling).
    pub masses_ext: Vec<f64>,
}

impl RadialGrid {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elems(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn elem(&self, k: usize) -> Elem {
        Elem { a: self.nodes[k], b: self.nodes[k + 1] }
    }

    /// Band of element k = [nodes[k], nodes[k+1]].
    pub fn region(&self, k: usize) -> Region {
        if k < self.i_lo {
            Region::InnerExterior
        } else if k < self.i_hi {
            Region::Interior
        } else {
            Region::OuterExterior
        }
    }

    pub fn is_interior_node(&self, idx: usize) -> bool {
        (self.i_lo..=self.i_hi).contains(&idx)
    }

    pub fn n_interior(&self) -> usize {
        self.i_hi - self.i_lo + 1
    }

    pub fn n_exterior(&self) -> usize {
        self.n_nodes() - self.n_interior()
    }

    /// Interior node radii (slice view).
    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[self.i_lo..=self.i_hi]
    }

    /// Global index of the j-th exterior degree of freedom (inner band first,
    /// then outer band).
    pub fn exterior_node_index(&self, j: usize) -> usize {
        if j < self.i_lo {
            j
        } else {
            self.i_hi + 1 + (j - self.i_lo)
        }
    }

    /// Inverse of `exterior_node_index` for a non-interior global index.
    pub fn exterior_dof_of(&self, idx: usize) -> usize {
        debug_assert!(!self.is_interior_node(idx));
        if idx < self.i_lo {
            idx
        } else {
            self.i_lo + (idx - self.i_hi - 1)
        }
    }
}

/// One-sided grading map: xi^g clusters nodes toward xi = 0.
fn grade_lo(xi: f64, g: f64) -> f64 {
    xi.powf(g)
}

/// Two-sided grading map xi^g / (xi^g + (1-xi)^g): symmetric, clusters toward
/// both endpoints, identity for g = 1.
fn grade_both(xi: f64, g: f64) -> f64 {
    let a = xi.powf(g);
    let b = (1.0 - xi).powf(g);
    a / (a + b)
}

/// Builds the graded global mesh with `n_int` interior elements and `n_ext`
/// elements per exterior band.
pub fn build_grid(domain: DomainSpec, n_int: usize, n_ext: usize, grading: f64) -> Result<RadialGrid> {
    domain.validate()?;
    if n_int < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 interior elements, got {n_int}"
        )));
    }
    if n_ext < 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least 1 exterior element per band, got {n_ext}"
        )));
    }
    if !(grading >= 1.0 && grading.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grading exponent must be >= 1, got {grading}"
        )));
    }

    let mut nodes = Vec::new();

    // inner exterior band [0, R0], graded toward R0 (annulus only)
    if !domain.is_ball() {
        for i in 0..n_ext {
            let xi = i as f64 / n_ext as f64;
            // 1 - (1-xi)^g clusters toward xi = 1, i.e. toward R0
            nodes.push(domain.r0 * (1.0 - grade_lo(1.0 - xi, grading)));
        }
    }

    // interior band [R0, R]; the ball has a boundary layer only at R
    let i_lo = nodes.len();
    for i in 0..=n_int {
        let xi = i as f64 / n_int as f64;
        let w = if domain.is_ball() {
            1.0 - grade_lo(1.0 - xi, grading)
        } else {
            grade_both(xi, grading)
        };
        let r = domain.r0 + (domain.r - domain.r0) * w;
        // endpoints exact regardless of rounding in the map
        nodes.push(if i == 0 {
            domain.r0
        } else if i == n_int {
            domain.r
        } else {
            r
        });
    }
    let i_hi = nodes.len() - 1;

    // outer exterior band [R, R_ext], graded toward R
    for i in 1..=n_ext {
        let xi = i as f64 / n_ext as f64;
        let r = domain.r + (domain.r_ext - domain.r) * grade_lo(xi, grading);
        nodes.push(if i == n_ext { domain.r_ext } else { r });
    }

    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::MeshIntegrity(format!(
                "mesh nodes not strictly increasing near r = {}",
                w[0]
            )));
        }
    }

    let mut grid = RadialGrid {
        domain,
        nodes,
        i_lo,
        i_hi,
        masses: Vec::new(),
        masses_ext: Vec::new(),
    };
    let (masses, masses_ext) = lumped_masses(&grid);
    grid.masses = masses;
    grid.masses_ext = masses_ext;
    Ok(grid)
}

/// Exact integral of the rising hat (r - x0)/h against r^(n-1) over [x0, x1].
fn rising_hat_moment(n: u32, x0: f64, x1: f64) -> f64 {
    let nf = n as f64;
    let h = x1 - x0;
    let p1 = (x1.powi(n as i32 + 1) - x0.powi(n as i32 + 1)) / (nf + 1.0);
    let p0 = (x1.powi(n as i32) - x0.powi(n as i32)) / nf;
    (p1 - x0 * p0) / h
}

/// Element measure int r^(n-1) dr over [x0, x1].
fn elem_moment(n: u32, x0: f64, x1: f64) -> f64 {
    (x1.powi(n as i32) - x0.powi(n as i32)) / n as f64
}

fn lumped_masses(grid: &RadialGrid) -> (Vec<f64>, Vec<f64>) {
    let omega = surface_area(grid.domain.n);
    let n = grid.domain.n;
    let mut interior = vec![0.0; grid.n_nodes()];
    let mut exterior = vec![0.0; grid.n_nodes()];
    for k in 0..grid.n_elems() {
        let e = grid.elem(k);
        let rising = omega * rising_hat_moment(n, e.a, e.b);
        let falling = omega * elem_moment(n, e.a, e.b) - rising;
        let target = if grid.region(k) == Region::Interior {
            &mut interior
        } else {
            &mut exterior
        };
        target[k] += falling;
        target[k + 1] += rising;
    }
    (interior, exterior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball() -> DomainSpec {
        DomainSpec { n: 1, s: 0.75, r0: 0.0, r: 1.0, r_ext: 8.0 }
    }

    fn annulus() -> DomainSpec {
        DomainSpec { n: 3, s: 0.75, r0: 0.5, r: 2.0, r_ext: 16.0 }
    }

    #[test]
    fn domain_validation() {
        assert!(ball().validate().is_ok());
        assert!(annulus().validate().is_ok());
        assert!(DomainSpec { r0: 2.0, r: 1.0, ..annulus() }.validate().is_err());
        assert!(DomainSpec { r_ext: 1.5, ..annulus() }.validate().is_err());
        assert!(DomainSpec { s: 0.5, ..ball() }.validate().is_err());
        assert!(DomainSpec { s: 0.4, ..ball() }.validate().is_err());
    }

    #[test]
    fn volume_closed_forms() {
        // |B_1| in n=1 is 2; annulus n=3: (4 pi/3)(8 - 0.125)
        assert!((ball().volume() - 2.0).abs() < 1e-15);
        let want = 4.0 * std::f64::consts::PI / 3.0 * (8.0 - 0.125);
        assert!((annulus().volume() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn grid_structure_ball() {
        let g = build_grid(ball(), 16, 8, 2.0).unwrap();
        assert_eq!(g.i_lo, 0);
        assert_eq!(g.i_hi, 16);
        assert_eq!(g.n_nodes(), 17 + 8);
        assert_eq!(g.nodes[0], 0.0);
        assert_eq!(g.nodes[16], 1.0);
        assert_eq!(*g.nodes.last().unwrap(), 8.0);
        assert_eq!(g.n_interior(), 17);
        assert_eq!(g.n_exterior(), 8);
        // graded toward R: last interior element shorter than first
        assert!(g.elem(15).len() < g.elem(0).len());
        // exterior graded toward R
        assert!(g.elem(16).len() < g.elem(23).len());
        for k in 0..16 {
            assert_eq!(g.region(k), Region::Interior);
        }
        assert_eq!(g.region(16), Region::OuterExterior);
    }

    #[test]
    fn grid_structure_annulus() {
        let g = build_grid(annulus(), 12, 6, 2.0).unwrap();
        assert_eq!(g.i_lo, 6);
        assert_eq!(g.i_hi, 18);
        assert_eq!(g.n_nodes(), 6 + 13 + 6);
        assert_eq!(g.nodes[0], 0.0);
        assert_eq!(g.nodes[6], 0.5);
        assert_eq!(g.nodes[18], 2.0);
        assert_eq!(*g.nodes.last().unwrap(), 16.0);
        assert_eq!(g.region(0), Region::InnerExterior);
        assert_eq!(g.region(6), Region::Interior);
        assert_eq!(g.region(18), Region::OuterExterior);
        // inner exterior graded toward R0: element touching R0 is the shortest
        assert!(g.elem(5).len() < g.elem(0).len());
        // interior graded toward both ends
        assert!(g.elem(6).len() < g.elem(11).len());
        assert!(g.elem(17).len() < g.elem(11).len());
        // exterior dof indexing round-trips
        for j in 0..g.n_exterior() {
            let idx = g.exterior_node_index(j);
            assert!(!g.is_interior_node(idx));
            assert_eq!(g.exterior_dof_of(idx), j);
        }
    }

    #[test]
    fn uniform_grading_is_identity() {
        let g = build_grid(ball(), 10, 4, 1.0).unwrap();
        for i in 0..=10 {
            assert!((g.nodes[i] - i as f64 / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn masses_sum_to_volume_exactly() {
        for (dom, n_int, grading) in [
            (ball(), 16, 2.0),
            (annulus(), 24, 3.0),
            (DomainSpec { n: 2, s: 0.8, r0: 0.0, r: 1.5, r_ext: 12.0 }, 9, 1.0),
        ] {
            let g = build_grid(dom, n_int, 5, grading).unwrap();
            let sum: f64 = g.masses.iter().sum();
            assert!(
                (sum - dom.volume()).abs() < 1e-13 * dom.volume(),
                "mass sum {} vs volume {}",
                sum,
                dom.volume()
            );
            // pure exterior nodes carry no interior mass and vice versa
            for idx in 0..g.n_nodes() {
                if !g.is_interior_node(idx) {
                    assert_eq!(g.masses[idx], 0.0);
                    assert!(g.masses_ext[idx] > 0.0);
                }
            }
            // boundary nodes carry both
            assert!(g.masses[g.i_hi] > 0.0);
            assert!(g.masses_ext[g.i_hi] > 0.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_grid(ball(), 1, 4, 2.0).is_err());
        assert!(build_grid(ball(), 8, 0, 2.0).is_err());
        assert!(build_grid(ball(), 8, 4, 0.5).is_err());
    }
}
