//! Run configuration: a single TOML file drives the whole pipeline, and every
//! default is visible through `--print-defaults`. Cross-field constraints of
//! the numerical modules are re-validated here at parse time so that a bad
//! configuration dies with exit code 2 before any assembly starts.

use nonlocal_neumann::error::{Error, Result};
use nonlocal_neumann::grid::DomainSpec;
use nonlocal_neumann::nonlinearity::{critical_exponent, NonlinearitySpec, DEFAULT_T_SCAN};
use nonlocal_neumann::spectral::Orientation;
use nonlocal_neumann::variational::SolveParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub domain: DomainSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub nonlinearity: NonlinearitySection,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub cone: ConeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub n: u32,
    pub s: f64,
    /// Inner radius; 0 means a ball.
    pub r0: f64,
    /// Outer radius. Omitted: the pipeline grows it until the computed
    /// (f_3) margin turns positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Truncation radius of the exterior mesh; omitted: 8 r.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ext: Option<f64>,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self { n: 1, s: 0.75, r0: 0.0, r: None, r_ext: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_int: usize,
    /// Exterior elements; omitted: n_int / 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ext: Option<usize>,
    pub grading: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n_int: 128, n_ext: None, grading: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct NonlinearitySection {
    pub kind: NonlinearityKindSection,
    /// Growth exponent of the prototype t^{q-1} - t^{r-1}.
    pub q: f64,
    pub r: f64,
    /// CSV table `t,f,fprime` with a header row; required for kind = table.
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    /// Only the automatic (f_0)-restoring shift c = max(0, -min f') is
    /// implemented; the field exists so configs state the policy explicitly.
    pub shift_policy: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKindSection {
    Prototype,
    Table,
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self {
            kind: NonlinearityKindSection::Prototype,
            q: 4.0,
            r: 3.0,
            table: None,
            shift_policy: "auto".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    /// Truncation growth exponent; omitted: min(4, (2 + 2_s^*)/2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    /// Hypothesis-scan horizon.
    #[serde(default = "default_t_scan")]
    pub t_scan: f64,
}

fn default_t_scan() -> f64 {
    DEFAULT_T_SCAN
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSection {
    pub orientation: Orientation,
}

impl Default for ConeSection {
    fn default() -> Self {
        Self { orientation: Orientation::Nondecreasing }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub path_points: usize,
    /// Relative stationarity residual demanded of the solution.
    pub tol: f64,
    pub max_outer: usize,
    pub polish_iters: usize,
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = SolveParams::default();
        Self {
            path_points: p.n_path_points,
            tol: p.residual_tol,
            max_outer: p.max_outer,
            polish_iters: p.polish_iters,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    pub directory: PathBuf,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self { directory: PathBuf::from("out") }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domain: DomainSection::default(),
            grid: GridSection::default(),
            nonlinearity: NonlinearitySection::default(),
            truncation: TruncationSection::default(),
            cone: ConeSection::default(),
            solver: SolverSection::default(),
            outputs: OutputsSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; relative table paths are resolved against the
    /// config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(table) = &config.nonlinearity.table {
            if table.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                config.nonlinearity.table = Some(base.join(table));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let d = &self.domain;
        if d.n < 1 {
            return fail(format!("domain.n must be >= 1, got {}", d.n));
        }
        if !(d.s > 0.5 && d.s < 1.0) {
            return fail(format!(
                "domain.s = {} unsupported: the standing assumption is s in (1/2, 1)",
                d.s
            ));
        }
        if !(d.r0 >= 0.0 && d.r0.is_finite()) {
            return fail(format!("domain.r0 must be finite and >= 0, got {}", d.r0));
        }
        if let Some(r) = d.r {
            if !(r > d.r0 && r.is_finite()) {
                return fail(format!("domain.r = {r} must exceed r0 = {}", d.r0));
            }
            if let Some(r_ext) = d.r_ext {
                if !(r_ext > r && r_ext.is_finite()) {
                    return fail(format!("domain.r_ext = {r_ext} must exceed r = {r}"));
                }
            }
        } else if d.r_ext.is_some() {
            return fail("domain.r_ext needs an explicit domain.r".into());
        }
        if self.cone.orientation == Orientation::Nonincreasing && d.r0 <= 0.0 {
            return fail(
                "nonincreasing cone needs an annulus (r0 > 0): the ball admits only the \
                 nondecreasing case"
                    .into(),
            );
        }
        let g = &self.grid;
        if g.n_int < 8 {
            return fail(format!("grid.n_int must be >= 8, got {}", g.n_int));
        }
        if let Some(n_ext) = g.n_ext {
            if n_ext < 2 {
                return fail(format!("grid.n_ext must be >= 2, got {n_ext}"));
            }
        }
        if !(g.grading >= 1.0 && g.grading.is_finite()) {
            return fail(format!("grid.grading must be >= 1, got {}", g.grading));
        }
        let nl = &self.nonlinearity;
        if nl.shift_policy != "auto" {
            return fail(format!(
                "nonlinearity.shift_policy = {:?}: only the automatic (f_0)-restoring shift is \
                 implemented",
                nl.shift_policy
            ));
        }
        match nl.kind {
            NonlinearityKindSection::Prototype => {
                if !(nl.q > nl.r && nl.r > 2.0) {
                    return fail(format!(
                        "prototype needs q > r > 2, got q = {}, r = {}",
                        nl.q, nl.r
                    ));
                }
            }
            NonlinearityKindSection::Table => {
                if nl.table.is_none() {
                    return fail("nonlinearity.kind = table needs nonlinearity.table".into());
                }
            }
        }
        if let Some(ell) = self.truncation.ell {
            let two_star = critical_exponent(d.n, d.s);
            if !(ell > 2.0 && ell < two_star) {
                return fail(format!(
                    "truncation.ell = {ell} outside the subcritical window (2, {two_star})"
                ));
            }
        }
        if !(self.truncation.t_scan > 0.0 && self.truncation.t_scan.is_finite()) {
            return fail(format!("truncation.t_scan must be positive, got {}", self.truncation.t_scan));
        }
        let s = &self.solver;
        if s.path_points < 5 {
            return fail(format!("solver.path_points must be >= 5, got {}", s.path_points));
        }
        if !(s.tol > 0.0 && s.tol < 1.0) {
            return fail(format!("solver.tol must be in (0, 1), got {}", s.tol));
        }
        if s.max_outer == 0 || s.polish_iters == 0 {
            return fail("solver.max_outer and solver.polish_iters must be positive".into());
        }
        Ok(())
    }

    /// Domain with the radius fixed (configured or pipeline-chosen) and the
    /// exterior default applied.
    pub fn domain_spec(&self, radius: f64) -> DomainSpec {
        DomainSpec {
            n: self.domain.n,
            s: self.domain.s,
            r0: self.domain.r0,
            r: radius,
            r_ext: self.domain.r_ext.unwrap_or(8.0 * radius),
        }
    }

    pub fn n_ext_effective(&self) -> usize {
        self.grid.n_ext.unwrap_or(self.grid.n_int / 2)
    }

    pub fn nonlinearity_spec(&self) -> Result<NonlinearitySpec> {
        match self.nonlinearity.kind {
            NonlinearityKindSection::Prototype => {
                NonlinearitySpec::prototype(self.nonlinearity.q, self.nonlinearity.r)
            }
            NonlinearityKindSection::Table => {
                let path = self.nonlinearity.table.as_ref().expect("validated");
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read table {}: {e}", path.display()))
                })?;
                NonlinearitySpec::parse_csv(&text)
            }
        }
    }

    pub fn solve_params(&self) -> SolveParams {
        SolveParams {
            n_path_points: self.solver.path_points,
            max_outer: self.solver.max_outer,
            residual_tol: self.solver.tol,
            polish_iters: self.solver.polish_iters,
            seed: self.solver.seed,
            ..SolveParams::default()
        }
    }
}
