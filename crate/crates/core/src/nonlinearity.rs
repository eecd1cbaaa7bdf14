//! The nonlinearity f: hypothesis verification, fixed-point bands, the
//! subcritical truncation, and the a priori constants K_1, K_inf, K_2.
//!
//! f is either the prototype t^{q-1} - t^{r-1} (2 <= r < q) or a user table
//! with linear interpolation in both f and f'. Beyond t_star = max(K_inf,
//! largest u_0) + margin the truncation replaces f by a cubic Hermite blend
//! into t^{l-1) (1 + A (2 t_star / t)^beta), so solutions of the truncated
//! problem stay solutions of the original one while the growth becomes
//! subcritical. When f fails (f_0) the problem is solved in the shifted form
//! (-Delta)^s u + (1+c) u = f(u) + c u with c = max(0, -min f'), so the
//! monotonicity certificates below apply to f + c id, never to raw f.
//! All certificates (membership in F_{M,delta}, monotonicity, the
//! Ambrosetti-Rabinowitz inequality) are dense deterministic scans; the
//! witnesses they produce are recorded, not assumed.

use crate::error::{Error, Result};
use serde::Serialize;

/// Default scan horizon for hypothesis checks when the caller has no better
/// scale; fixed points, blend data and (M, delta) witnesses all live at O(1)
/// - O(K_inf) scales in the intended configurations.
pub const DEFAULT_T_SCAN: f64 = 100.0;

/// Samples for dense scans (hypothesis minima, fixed-point bracketing).
const SCAN_POINTS: usize = 8192;

/// Admissibility slack: a fixed point counts as f'(u_0) > 1 only beyond this.
const SLOPE_TOL: f64 = 1e-9;

/// Additive margin in t_star = max(K_inf, largest u_0) + margin.
const T_STAR_MARGIN: f64 = 1.0;

/// One row of a user nonlinearity table: f and f' sampled at t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub t: f64,
    pub f: f64,
    pub fprime: f64,
}

/// The analytic form of f.
#[derive(Debug, Clone)]
pub enum NonlinearityKind {
    /// f(t) = t^{q-1} - t^{r-1} with 2 <= r < q.
    Prototype { q: f64, r: f64 },
    /// Piecewise-linear interpolation of tabulated (t, f, f'); linear
    /// extrapolation from the first/last row outside the table.
    Table { rows: Vec<TableRow> },
}

/// A nonlinearity with its (f_0)-restoring shift c = max(0, -min f') and
/// closed-form primitive. f, f' and F are extended by zero below t = 0 (the
/// trivial extension; iterates in the cone never go there).
#[derive(Debug, Clone)]
pub struct NonlinearitySpec {
    kind: NonlinearityKind,
    shift: f64,
    /// Primitive values at the table knots (empty for the prototype);
    /// normalized so that F(0) = 0.
    table_cum: Vec<f64>,
}

impl NonlinearitySpec {
    pub fn prototype(q: f64, r: f64) -> Result<Self> {
        if !q.is_finite() || !r.is_finite() || !(2.0 <= r && r < q) {
            return Err(Error::InvalidParameter(format!(
                "prototype exponents need 2 <= r < q, got q = {q}, r = {r}"
            )));
        }
        Ok(Self {
            kind: NonlinearityKind::Prototype { q, r },
            shift: prototype_shift(q, r),
            table_cum: Vec::new(),
        })
    }

    pub fn from_table(rows: Vec<TableRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidParameter(
                "nonlinearity table needs at least two rows".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if !(row.t.is_finite() && row.f.is_finite() && row.fprime.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "nonlinearity table row {i} is not finite"
                )));
            }
        }
        if rows[0].t < 0.0 {
            return Err(Error::InvalidParameter(
                "nonlinearity table must start at t >= 0".into(),
            ));
        }
        if rows.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidParameter(
                "nonlinearity table abscissae must be strictly increasing".into(),
            ));
        }
        // F(0) = 0; the stretch [0, t_0) uses the first row's linear
        // extrapolation, then exact trapezoids of the interpolant.
        let mut cum = Vec::with_capacity(rows.len());
        let r0 = rows[0];
        cum.push(r0.f * r0.t - r0.fprime * r0.t * r0.t / 2.0);
        for w in rows.windows(2) {
            let h = w[1].t - w[0].t;
            cum.push(cum.last().unwrap() + h * (w[0].f + w[1].f) / 2.0);
        }
        // f' attains its minimum at a knot (it is interpolated linearly and
        // extrapolated by a constant).
        let min_fp = rows.iter().map(|r| r.fprime).fold(f64::INFINITY, f64::min);
        Ok(Self {
            kind: NonlinearityKind::Table { rows },
            shift: (-min_fp).max(0.0),
            table_cum: cum,
        })
    }

    /// Parses the CSV exchange format: lines `t,f,fprime`, an optional header
    /// row, `#` comments and blank lines allowed.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if lineno == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
                continue; // header
            }
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "nonlinearity CSV line {}: expected `t,f,fprime`, got {line:?}",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "nonlinearity CSV line {}: bad number {s:?}",
                        lineno + 1
                    ))
                })
            };
            rows.push(TableRow {
                t: parse(fields[0])?,
                f: parse(fields[1])?,
                fprime: parse(fields[2])?,
            });
        }
        Self::from_table(rows)
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    /// The (f_0)-restoring shift c = max(0, -min f'), exact for both forms
    /// (closed-form interior minimum for the prototype, knot minimum for the
    /// piecewise-linear table).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            NonlinearityKind::Prototype { q, r } => format!("prototype q={q} r={r}"),
            NonlinearityKind::Table { rows } => format!(
                "table of {} rows on [{}, {}]",
                rows.len(),
                rows[0].t,
                rows[rows.len() - 1].t
            ),
        }
    }

    pub fn f(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.kind {
            NonlinearityKind::Prototype { q, r } => t.powf(q - 1.0) - t.powf(r - 1.0),
            NonlinearityKind::Table { rows } => match locate(rows, t) {
                Seg::Below => rows[0].f + rows[0].fprime * (t - rows[0].t),
                Seg::Above => {
                    let last = rows[rows.len() - 1];
                    last.f + last.fprime * (t - last.t)
                }
                Seg::In(i) => {
                    let (a, b) = (rows[i], rows[i + 1]);
                    let w = (t - a.t) / (b.t - a.t);
                    a.f + w * (b.f - a.f)
                }
            },
        }
    }

    pub fn fprime(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.kind {
            NonlinearityKind::Prototype { q, r } => {
                // t^0 = 1 at t = 0 keeps the r = 2 endpoint value correct
                (q - 1.0) * t.powf(q - 2.0) - (r - 1.0) * t.powf(r - 2.0)
            }
            NonlinearityKind::Table { rows } => match locate(rows, t) {
                Seg::Below => rows[0].fprime,
                Seg::Above => rows[rows.len() - 1].fprime,
                Seg::In(i) => {
                    let (a, b) = (rows[i], rows[i + 1]);
                    let w = (t - a.t) / (b.t - a.t);
                    a.fprime + w * (b.fprime - a.fprime)
                }
            },
        }
    }

    /// F(t) = int_0^t f, closed form per piece.
    pub fn primitive(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.kind {
            NonlinearityKind::Prototype { q, r } => t.powf(*q) / q - t.powf(*r) / r,
            NonlinearityKind::Table { rows } => match locate(rows, t) {
                Seg::Below => {
                    let d = rows[0].t - t;
                    self.table_cum[0] - (rows[0].f * d - rows[0].fprime * d * d / 2.0)
                }
                Seg::Above => {
                    let last = rows[rows.len() - 1];
                    let d = t - last.t;
                    self.table_cum[rows.len() - 1] + last.f * d + last.fprime * d * d / 2.0
                }
                Seg::In(i) => {
                    let d = t - rows[i].t;
                    self.table_cum[i] + d * (rows[i].f + self.f(t)) / 2.0
                }
            },
        }
    }
}

enum Seg {
    Below,
    In(usize),
    Above,
}

fn locate(rows: &[TableRow], t: f64) -> Seg {
    if t <= rows[0].t {
        return Seg::Below;
    }
    if t >= rows[rows.len() - 1].t {
        return Seg::Above;
    }
    let i = rows.partition_point(|r| r.t <= t) - 1;
    Seg::In(i)
}

/// min f' over [0, inf) for the prototype. f'' vanishes at a single interior
/// point when r > 2; for r = 2 the minimum -1 sits at t = 0.
fn prototype_shift(q: f64, r: f64) -> f64 {
    if r == 2.0 {
        return 1.0;
    }
    let t_min = (((r - 1.0) * (r - 2.0)) / ((q - 1.0) * (q - 2.0))).powf(1.0 / (q - r));
    let fp = (q - 1.0) * t_min.powf(q - 2.0) - (r - 1.0) * t_min.powf(r - 2.0);
    (-fp).max(0.0)
}

fn check_evaluable(spec: &NonlinearitySpec, t_hi: f64) -> Result<()> {
    for k in 0..=256 {
        let t = t_hi * k as f64 / 256.0;
        if !spec.f(t).is_finite() || !spec.fprime(t).is_finite() || !spec.primitive(t).is_finite() {
            return Err(Error::InvalidParameter(format!(
                "nonlinearity ({}) not evaluable at t = {t:.3e}",
                spec.describe()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fixed points

/// A root of f(t) = t with its slope class.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassifiedRoot {
    pub t: f64,
    pub slope: f64,
    /// f'(t) > 1: the constant equilibrium admits a mountain-pass band.
    pub admissible: bool,
}

/// An admissible fixed point u_0 with its cone thresholds
/// u_- = sup{t in [0,u_0): f(t) = t} and u_+ = inf{t in (u_0,inf): f(t) = t}
/// (u_+ may be +inf).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedPointBand {
    pub u0: f64,
    pub slope: f64,
    pub u_minus: f64,
    pub u_plus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPoints {
    pub roots: Vec<ClassifiedRoot>,
    pub bands: Vec<FixedPointBand>,
}

/// All roots of f(t) = t in the interval, classified by the sign of f' - 1,
/// with per-band thresholds; bisection to 1e-12. Errors when no admissible
/// fixed point exists (the exit-code-2 path: hypothesis (f_3) cannot hold).
pub fn fixed_points(spec: &NonlinearitySpec, search_interval: (f64, f64)) -> Result<FixedPoints> {
    let (lo, hi) = search_interval;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo.max(0.0) {
        return Err(Error::InvalidParameter(format!(
            "bad fixed-point search interval [{lo}, {hi}]"
        )));
    }
    let fps = scan_fixed_points(spec, lo.max(0.0), hi)?;
    if fps.bands.is_empty() {
        return Err(Error::Hypothesis(format!(
            "no fixed point with f'(u0) > 1 in [{:.3}, {:.3}] ({})",
            lo.max(0.0),
            hi,
            spec.describe()
        )));
    }
    Ok(fps)
}

/// Non-erroring scan used by both `fixed_points` and the (f_3) check.
fn scan_fixed_points(spec: &NonlinearitySpec, lo: f64, hi: f64) -> Result<FixedPoints> {
    check_evaluable(spec, hi)?;
    let g = |t: f64| spec.f(t) - t;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_t = lo;
    let mut prev_g = g(lo);
    if prev_g == 0.0 {
        roots.push(lo);
    }
    for k in 1..=SCAN_POINTS {
        let t = lo + (hi - lo) * k as f64 / SCAN_POINTS as f64;
        let gt = g(t);
        if gt == 0.0 {
            // skip interior points of a degenerate f = t stretch
            if prev_g != 0.0 {
                roots.push(t);
            }
        } else if prev_g != 0.0 && gt.signum() != prev_g.signum() {
            roots.push(bisect(&g, prev_t, t));
        }
        prev_t = t;
        prev_g = gt;
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    let roots: Vec<ClassifiedRoot> = roots
        .into_iter()
        .map(|t| {
            let slope = spec.fprime(t);
            ClassifiedRoot {
                t,
                slope,
                admissible: slope > 1.0 + SLOPE_TOL,
            }
        })
        .collect();
    let bands = roots
        .iter()
        .filter(|r| r.admissible)
        .map(|r| {
            let sep = 1e-7 * (1.0 + r.t);
            let u_minus = roots
                .iter()
                .rev()
                .find(|o| o.t < r.t - sep)
                .map_or(0.0, |o| o.t);
            let u_plus = roots
                .iter()
                .find(|o| o.t > r.t + sep)
                .map_or(f64::INFINITY, |o| o.t);
            FixedPointBand {
                u0: r.t,
                slope: r.slope,
                u_minus,
                u_plus,
            }
        })
        .collect();
    Ok(FixedPoints { roots, bands })
}

fn bisect(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= 1e-13 * (1.0 + mid.abs()) {
            return mid;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

// ---------------------------------------------------------------------------
// hypotheses

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisVerdict {
    pub pass: bool,
    pub detail: String,
}

/// Fixed-point margin for (f_3): positive iff f'(u_0) > lambda_2^{+,r} + 1.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct U0Margin {
    pub u0: f64,
    pub slope: f64,
    pub margin: f64,
}

/// Verdicts and witnesses for (f_0)-(f_3) and (f_1'). Failures are data, not
/// errors; `required_ok` reflects the set the existence theorem needs.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub f0: HypothesisVerdict,
    pub f1: HypothesisVerdict,
    pub f1_prime: HypothesisVerdict,
    pub f2: HypothesisVerdict,
    pub f3: HypothesisVerdict,
    /// f'(0), the limit in (f_1).
    pub fprime_at_zero: f64,
    /// Largest verified t-bar with f(t) < t on (0, t-bar), when (f_1') holds.
    pub t_bar: Option<f64>,
    /// Witness for (f_2)/(M-delta): f(t) >= (1+delta) t for t >= m, chosen to
    /// roughly minimize K_1 = M |Omega| (1 + 1/delta).
    pub m: Option<f64>,
    pub delta: Option<f64>,
    /// The (f_0)-restoring shift; zero when (f_0) already holds.
    pub shift: f64,
    pub u0_margins: Vec<U0Margin>,
    pub lambda2_plus: f64,
    pub t_scan: f64,
}

impl HypothesisReport {
    /// The existence theorem assumes (f_1)-(f_3); (f_0) is restorable by the
    /// shift and (f_1') only sharpens the cone lower threshold.
    pub fn required_ok(&self) -> bool {
        self.f1.pass && self.f2.pass && self.f3.pass
    }
}

/// Scans (f_0)-(f_3) and (f_1') on [0, t_scan] against the supplied
/// lambda_2^{+,r}.
pub fn check_hypotheses(
    spec: &NonlinearitySpec,
    lambda2_plus: f64,
    t_scan: f64,
) -> Result<HypothesisReport> {
    if !t_scan.is_finite() || t_scan <= 0.0 || !lambda2_plus.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "check_hypotheses needs finite lambda2_plus and t_scan > 0, got {lambda2_plus}, {t_scan}"
        )));
    }
    check_evaluable(spec, t_scan)?;

    let mut min_f = f64::INFINITY;
    let mut min_fp = f64::INFINITY;
    let mut max_abs_f = 0.0_f64;
    let mut max_abs_fp = 0.0_f64;
    for k in 0..=SCAN_POINTS {
        let t = t_scan * k as f64 / SCAN_POINTS as f64;
        let (v, d) = (spec.f(t), spec.fprime(t));
        min_f = min_f.min(v);
        min_fp = min_fp.min(d);
        max_abs_f = max_abs_f.max(v.abs());
        max_abs_fp = max_abs_fp.max(d.abs());
    }
    let pass0 = min_f >= -1e-10 * max_abs_f.max(1.0) && min_fp >= -1e-10 * max_abs_fp.max(1.0);
    let f0 = HypothesisVerdict {
        pass: pass0,
        detail: format!(
            "min f = {min_f:.6e}, min f' = {min_fp:.6e} on [0, {t_scan}]; shift c = {:.6e}",
            spec.shift
        ),
    };

    let f_at_zero = spec.f(0.0);
    let d0 = spec.fprime(0.0);
    let zero_ok = f_at_zero.abs() <= 1e-10 * spec.f(1.0).abs().max(1.0);
    let f1 = HypothesisVerdict {
        pass: zero_ok && d0 < 1.0,
        detail: format!("f(0) = {f_at_zero:.3e}, f'(0) = {d0:.6}"),
    };

    // (f_1'): f < t strictly on an initial interval; t_bar is the first
    // crossing of f(t) = t (or t_scan when none).
    let mut t_bar = None;
    let mut strictly_below = zero_ok && d0 <= 1.0 + 1e-12;
    if strictly_below {
        let g = |t: f64| spec.f(t) - t;
        let mut crossing = t_scan;
        let mut prev_t = 0.0;
        let mut prev_g = 0.0;
        for k in 1..=SCAN_POINTS {
            let t = t_scan * k as f64 / SCAN_POINTS as f64;
            let gt = g(t);
            if gt >= 0.0 {
                crossing = if gt == 0.0 || prev_g == 0.0 {
                    t
                } else {
                    bisect(&g, prev_t, t)
                };
                break;
            }
            prev_t = t;
            prev_g = gt;
        }
        // geometric probes confirm strict negativity down to tiny t
        for k in 0..64 {
            let t = crossing * 0.5 * (1e-7_f64).powf(k as f64 / 63.0);
            if g(t) >= 0.0 {
                strictly_below = false;
                break;
            }
        }
        if strictly_below && crossing > 0.0 {
            t_bar = Some(crossing);
        } else {
            strictly_below = false;
        }
    }
    let f1_prime = HypothesisVerdict {
        pass: strictly_below,
        detail: match t_bar {
            Some(tb) => format!("f(t) < t on (0, {tb:.6})"),
            None => "no initial interval with f(t) < t".into(),
        },
    };

    let witness = mdelta_witness(spec, t_scan);
    let f2 = HypothesisVerdict {
        pass: witness.is_some(),
        detail: match witness {
            Some((m, d)) => {
                format!("f(t) >= (1 + {d:.6}) t verified on [{m:.6}, {t_scan}] and beyond")
            }
            None => "no (M, delta) with f(t) >= (1+delta) t for t >= M".into(),
        },
    };

    let fps = scan_fixed_points(spec, 0.0, t_scan)?;
    let u0_margins: Vec<U0Margin> = fps
        .bands
        .iter()
        .map(|b| U0Margin {
            u0: b.u0,
            slope: b.slope,
            margin: b.slope - lambda2_plus - 1.0,
        })
        .collect();
    let pass3 = u0_margins.iter().any(|m| m.margin > 0.0);
    let f3 = HypothesisVerdict {
        pass: pass3,
        detail: if u0_margins.is_empty() {
            "no fixed point with f'(u0) > 1".into()
        } else {
            format!(
                "best margin f'(u0) - lambda2_plus - 1 = {:.6}",
                u0_margins
                    .iter()
                    .map(|m| m.margin)
                    .fold(f64::NEG_INFINITY, f64::max)
            )
        },
    };

    Ok(HypothesisReport {
        f0,
        f1,
        f1_prime,
        f2,
        f3,
        fprime_at_zero: d0,
        t_bar,
        m: witness.map(|w| w.0),
        delta: witness.map(|w| w.1),
        shift: spec.shift,
        u0_margins,
        lambda2_plus,
        t_scan,
    })
}

/// Chooses (M, delta) with f(t) >= (1+delta) t for all t >= M, minimizing the
/// K_1 proxy M (1 + 1/delta) over a geometric ladder of M candidates. The
/// infimum of f(t)/t over [M, t_scan] comes from a dense scan; beyond t_scan
/// the ratio is controlled analytically (the prototype ratio is eventually
/// increasing, the table extrapolation tends monotonically to its last slope).
fn mdelta_witness(spec: &NonlinearitySpec, t_scan: f64) -> Option<(f64, f64)> {
    const N: usize = 4096;
    let lo = t_scan * 1e-4;
    let ratio = |t: f64| spec.f(t) / t;
    let grid: Vec<f64> = (0..=N)
        .map(|k| lo * (t_scan / lo).powf(k as f64 / N as f64))
        .collect();
    let mut suffix = vec![0.0; N + 1];
    let mut run = f64::INFINITY;
    for k in (0..=N).rev() {
        run = run.min(ratio(grid[k]));
        suffix[k] = run;
    }
    let beyond = match &spec.kind {
        NonlinearityKind::Prototype { q, r } => {
            // f/t = t^{q-2} - t^{r-2} is increasing past ((r-2)/(q-2))^{1/(q-r)}
            let t_inc = ((r - 2.0) / (q - 2.0)).powf(1.0 / (q - r));
            if t_inc > t_scan {
                ratio(t_inc)
            } else {
                f64::INFINITY
            }
        }
        NonlinearityKind::Table { rows } => {
            // extrapolated ratio tends monotonically to the last slope
            rows[rows.len() - 1].fprime
        }
    };

    let mut best: Option<(f64, f64, f64)> = None;
    for (k, &m) in grid.iter().enumerate() {
        if m > t_scan / 2.0 {
            break;
        }
        let delta = suffix[k].min(beyond) - 1.0;
        if delta <= 1e-9 {
            continue;
        }
        let cost = m * (1.0 + 1.0 / delta);
        if best.is_none_or(|(_, _, c)| cost < c) {
            best = Some((m, delta, cost));
        }
    }
    let (m, mut delta, _) = best?;
    // re-verify on a finer grid; shave delta if the coarse infimum missed
    for _ in 0..3 {
        let worst = (0..=4 * N)
            .map(|k| {
                let t = m * (t_scan / m).powf(k as f64 / (4 * N) as f64);
                ratio(t)
            })
            .fold(f64::INFINITY, f64::min)
            .min(beyond);
        if worst - 1.0 >= delta {
            return Some((m, delta));
        }
        delta = (worst - 1.0) * (1.0 - 1e-9);
        if delta <= 1e-9 {
            return None;
        }
    }
    Some((m, delta))
}

// ---------------------------------------------------------------------------
// a priori constants

/// K_1 = M |Omega| (1 + 1/delta), K_inf = C_emb^2 K_1, K_2 = C_emb K_1: the
/// L^1, L^inf and H^s bounds on cone solutions. delta = +inf is allowed (the
/// K_1 -> M |Omega| limit).
pub fn apriori_constants(
    m: f64,
    delta: f64,
    omega_measure: f64,
    c_emb: f64,
) -> Result<(f64, f64, f64)> {
    if !(m > 0.0 && m.is_finite())
        || !(delta > 0.0)
        || !(omega_measure > 0.0 && omega_measure.is_finite())
        || !(c_emb > 0.0 && c_emb.is_finite())
    {
        return Err(Error::InvalidParameter(format!(
            "apriori_constants needs positive inputs, got M = {m}, delta = {delta}, |Omega| = {omega_measure}, C = {c_emb}"
        )));
    }
    let k1 = m * omega_measure * (1.0 + 1.0 / delta);
    Ok((k1, c_emb * c_emb * k1, c_emb * k1))
}

/// 2_s^* = 2n/(n-2s) when 2s < n, else +inf.
pub fn critical_exponent(n: u32, s: f64) -> f64 {
    let nf = n as f64;
    if 2.0 * s < nf {
        2.0 * nf / (nf - 2.0 * s)
    } else {
        f64::INFINITY
    }
}

/// Default truncation growth: min(4, (2 + 2_s^*)/2) when 2_s^* is finite,
/// else 4.
pub fn default_ell(n: u32, s: f64) -> f64 {
    let two_star = critical_exponent(n, s);
    if two_star.is_finite() {
        4.0_f64.min(0.5 * (2.0 + two_star))
    } else {
        4.0
    }
}

// ---------------------------------------------------------------------------
// truncation

/// The subcritical truncation: f below t_star, a cubic Hermite blend on
/// [t_star, 2 t_star], and t^{l-1} (1 + A (2 t_star/t)^beta) beyond, C^1
/// throughout with f~/t^{l-1} -> 1. Monotonicity certificates apply to the
/// shifted f~ + c id. K_1/K_2 and the Ambrosetti-Rabinowitz pair are filled
/// in by the pipeline once the embedding constant is known.
#[derive(Debug, Clone)]
pub struct TruncatedNonlinearity {
    pub base: NonlinearitySpec,
    pub ell: f64,
    pub t_star: f64,
    /// (M, delta) witness inherited by the truncation.
    pub m: f64,
    pub delta: f64,
    /// Admissible fixed points (ascending) and their bands.
    pub u0_list: Vec<f64>,
    pub bands: Vec<FixedPointBand>,
    /// Thresholds of the first band; u_plus may be +inf.
    pub u_minus: f64,
    pub u_plus: f64,
    pub k_inf: f64,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub mu: Option<f64>,
    pub t0: Option<f64>,
    /// f~ on the blend, as coefficients in tau = t - t_star.
    blend: [f64; 4],
    /// Tail correction f~ = t^{l-1} + tail_d t^{l-1-beta}.
    tail_d: f64,
    tail_beta: f64,
    /// Primitive values at the patch boundaries.
    prim_star: f64,
    prim_2star: f64,
}

impl TruncatedNonlinearity {
    pub fn shift(&self) -> f64 {
        self.base.shift()
    }

    pub fn f(&self, t: f64) -> f64 {
        if t <= self.t_star {
            self.base.f(t)
        } else if t <= 2.0 * self.t_star {
            let tau = t - self.t_star;
            ((self.blend[3] * tau + self.blend[2]) * tau + self.blend[1]) * tau + self.blend[0]
        } else {
            t.powf(self.ell - 1.0) + self.tail_d * t.powf(self.ell - 1.0 - self.tail_beta)
        }
    }

    pub fn fprime(&self, t: f64) -> f64 {
        if t <= self.t_star {
            self.base.fprime(t)
        } else if t <= 2.0 * self.t_star {
            let tau = t - self.t_star;
            (3.0 * self.blend[3] * tau + 2.0 * self.blend[2]) * tau + self.blend[1]
        } else {
            let p = self.ell - 1.0;
            p * t.powf(p - 1.0)
                + self.tail_d * (p - self.tail_beta) * t.powf(p - self.tail_beta - 1.0)
        }
    }

    /// Exact piecewise antiderivative with F~(0) = 0.
    pub fn primitive(&self, t: f64) -> f64 {
        if t <= self.t_star {
            self.base.primitive(t)
        } else if t <= 2.0 * self.t_star {
            let tau = t - self.t_star;
            self.prim_star
                + (((self.blend[3] / 4.0 * tau + self.blend[2] / 3.0) * tau + self.blend[1] / 2.0)
                    * tau
                    + self.blend[0])
                    * tau
        } else {
            let two_star = 2.0 * self.t_star;
            let pw = self.ell - self.tail_beta;
            self.prim_2star
                + (t.powf(self.ell) - two_star.powf(self.ell)) / self.ell
                + self.tail_d * (t.powf(pw) - two_star.powf(pw)) / pw
        }
    }
}

/// Builds the truncation. Leaves f untouched on [0, t_star] with t_star =
/// max(K_inf, largest admissible u_0) + margin, then blends into the
/// subcritical power; dense verification of monotonicity (shifted),
/// nonnegativity (shifted) and the F_{M,delta} inequality, enlarging t_star
/// up to five times before giving up.
pub fn truncate(
    spec: &NonlinearitySpec,
    k_inf: f64,
    ell: f64,
    s: f64,
    n: u32,
) -> Result<TruncatedNonlinearity> {
    if !(k_inf > 0.0 && k_inf.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "truncate needs K_inf > 0, got {k_inf}"
        )));
    }
    let two_star = critical_exponent(n, s);
    if !(ell > 2.0 && ell < two_star) {
        return Err(Error::InvalidParameter(format!(
            "growth exponent ell = {ell} outside (2, {two_star}) for n = {n}, s = {s}"
        )));
    }

    let scan_hi = DEFAULT_T_SCAN.max(4.0 * k_inf);
    let fps = scan_fixed_points(spec, 0.0, scan_hi)?;
    let u0_list: Vec<f64> = fps.bands.iter().map(|b| b.u0).collect();
    let largest_u0 = u0_list.iter().copied().fold(0.0, f64::max);
    let t_star_base = k_inf.max(largest_u0) + T_STAR_MARGIN;

    let (m, delta) = mdelta_witness(spec, scan_hi.max(64.0 * t_star_base)).ok_or_else(|| {
        Error::Hypothesis(format!(
            "no (M, delta) witness: {} is not superlinear at infinity",
            spec.describe()
        ))
    })?;

    let (u_minus, u_plus) = fps
        .bands
        .first()
        .map_or((0.0, f64::INFINITY), |b| (b.u_minus, b.u_plus));

    let mut failure = String::new();
    for attempt in 0..=5 {
        let t_star = t_star_base * (1 << attempt) as f64;
        let (blend, tail_d, tail_beta) = build_blend(spec, t_star, ell)?;
        let prim_star = spec.primitive(t_star);
        // closed-form integral of the blend cubic over [t_star, 2 t_star]
        let tau = t_star;
        let blend_area =
            (((blend[3] / 4.0 * tau + blend[2] / 3.0) * tau + blend[1] / 2.0) * tau + blend[0])
                * tau;
        let trunc = TruncatedNonlinearity {
            base: spec.clone(),
            ell,
            t_star,
            m,
            delta,
            u0_list: u0_list.clone(),
            bands: fps.bands.clone(),
            u_minus,
            u_plus,
            k_inf,
            k1: None,
            k2: None,
            mu: None,
            t0: None,
            blend,
            tail_d,
            tail_beta,
            prim_star,
            prim_2star: prim_star + blend_area,
        };
        match verify_truncation(&trunc) {
            Ok(()) => return Ok(trunc),
            Err(msg) => failure = msg,
        }
    }
    Err(Error::Truncation(format!(
        "blend violates its certificates after 5 retries: {failure}"
    )))
}

/// Hermite blend coefficients and tail correction for a given t_star. Works
/// on the shifted g = f + c id (whose endpoint slope is nonnegative by the
/// definition of c), lifting the tail by A until the Fritsch-Carlson box
/// certifies a monotone cubic.
fn build_blend(spec: &NonlinearitySpec, t_star: f64, ell: f64) -> Result<([f64; 4], f64, f64)> {
    let c = spec.shift();
    let two_star = 2.0 * t_star;
    let p2 = two_star.powf(ell - 1.0);
    let v1 = spec.f(t_star) + c * t_star;
    let d1 = (spec.fprime(t_star) + c).max(0.0);
    let beta = (0.9 * (ell - 1.0)).min(2.0);

    let mut a_corr = 0.0;
    for k in 0..=64 {
        if k == 64 {
            return Err(Error::Truncation(format!(
                "no monotone Hermite blend found at t_star = {t_star:.3e}"
            )));
        }
        let v2 = p2 * (1.0 + a_corr) + c * two_star;
        // tail' at 2 t_star, from t^{l-1} (1 + A (2 t_star / t)^beta)
        let d2 = two_star.powf(ell - 2.0) * ((ell - 1.0) + (ell - 1.0 - beta) * a_corr) + c;
        let chord = (v2 - v1) / t_star;
        if chord > 0.0 && d1 <= 3.0 * chord && d2 <= 3.0 * chord {
            let c2 = (3.0 * chord - 2.0 * d1 - d2) / t_star;
            let c3 = (d1 + d2 - 2.0 * chord) / (t_star * t_star);
            // subtract the linear shift to store raw-f~ coefficients
            let blend = [v1 - c * t_star, d1 - c, c2, c3];
            let tail_d = a_corr * two_star.powf(beta);
            return Ok((blend, tail_d, beta));
        }
        a_corr = if a_corr == 0.0 {
            (1.5 * v1 / p2 - 1.0).max(0.5)
        } else {
            2.0 * a_corr
        };
    }
    unreachable!()
}

/// Dense certificates: C^1 at both patch boundaries, shifted monotonicity and
/// nonnegativity, and the F_{M,delta} inequality from M outward.
fn verify_truncation(tr: &TruncatedNonlinearity) -> std::result::Result<(), String> {
    let c = tr.shift();
    let t_star = tr.t_star;
    let scale = tr.base.f(t_star).abs().max(1.0);

    for (t, inside, outside) in [
        (t_star, tr.base.f(t_star), {
            let tau = 0.0;
            ((tr.blend[3] * tau + tr.blend[2]) * tau + tr.blend[1]) * tau + tr.blend[0]
        }),
        (2.0 * t_star, tr.f(2.0 * t_star), {
            let p = tr.ell - 1.0;
            (2.0 * t_star).powf(p) + tr.tail_d * (2.0 * t_star).powf(p - tr.tail_beta)
        }),
    ] {
        if (inside - outside).abs() > 1e-10 * (1.0 + inside.abs()) {
            return Err(format!(
                "value mismatch {inside:.12e} vs {outside:.12e} at t = {t:.3e}"
            ));
        }
    }
    let d_in = tr.base.fprime(t_star);
    let d_blend = tr.blend[1];
    if (d_in - d_blend).abs() > 1e-10 * (1.0 + d_in.abs()) {
        return Err(format!(
            "derivative mismatch {d_in:.12e} vs {d_blend:.12e} at t_star"
        ));
    }

    // shifted monotonicity + nonnegativity; uniform over the patches, then
    // geometric into the tail
    let mut prev = f64::NEG_INFINITY;
    let mut check = |t: f64| -> std::result::Result<(), String> {
        let v = tr.f(t) + c * t;
        let d = tr.fprime(t) + c;
        if d < -1e-9 * (1.0 + d.abs()) {
            return Err(format!("shifted f~' = {d:.3e} < 0 at t = {t:.6e}"));
        }
        if v < prev - 1e-9 * (1.0 + v.abs()) {
            return Err(format!("shifted f~ decreases at t = {t:.6e}"));
        }
        if v < -1e-9 * scale {
            return Err(format!("shifted f~ = {v:.3e} < 0 at t = {t:.6e}"));
        }
        if t >= tr.m && tr.f(t) < (1.0 + tr.delta) * t * (1.0 - 1e-9) - 1e-9 * scale {
            return Err(format!(
                "f~(t) < (1+delta) t at t = {t:.6e}: {:.6e} vs {:.6e}",
                tr.f(t),
                (1.0 + tr.delta) * t
            ));
        }
        prev = v;
        Ok(())
    };
    for k in 0..=2048 {
        check(2.0 * t_star * k as f64 / 2048.0)?;
    }
    for k in 1..=1024 {
        check(2.0 * t_star * (1e4_f64).powf(k as f64 / 1024.0))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ambrosetti-Rabinowitz constants

/// Finds mu in (2, ell] and T_0 with f~(t) t >= mu F~(t) for all t >= T_0:
/// fixes mu = (2 + ell)/2, grows T_0 past any sampled violation, and falls
/// back to smaller mu if growth stalls; the final pair is re-verified on 1e5
/// geometric samples spanning [T_0, 1e6 T_0].
pub fn ar_constants(trunc: &TruncatedNonlinearity) -> Result<(f64, f64)> {
    let ell = trunc.ell;
    let mut mu = 0.5 * (2.0 + ell);
    let t0_floor = trunc.m.max(1.0);
    for _ in 0..8 {
        let mut t0 = t0_floor;
        for _ in 0..64 {
            match first_ar_violation(trunc, mu, t0, 4096) {
                None => {
                    if first_ar_violation(trunc, mu, t0, 100_000).is_none() {
                        return Ok((mu, t0));
                    }
                    break;
                }
                Some(tv) => t0 = (2.0 * t0).max(2.0 * tv),
            }
            if t0 > 1e9 * trunc.t_star {
                break;
            }
        }
        mu = 2.0 + 0.5 * (mu - 2.0);
        if mu - 2.0 < 1e-3 {
            break;
        }
    }
    Err(Error::Truncation(format!(
        "no Ambrosetti-Rabinowitz pair (mu, T0) for ell = {ell}: defective blend"
    )))
}

fn first_ar_violation(
    trunc: &TruncatedNonlinearity,
    mu: f64,
    t0: f64,
    samples: usize,
) -> Option<f64> {
    for k in 0..=samples {
        let t = t0 * (1e6_f64).powf(k as f64 / samples as f64);
        let lhs = trunc.f(t) * t;
        let rhs = mu * trunc.primitive(t);
        if lhs - rhs < -1e-9 * (lhs.abs() + rhs.abs() + 1.0) {
            return Some(t);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const PHI: f64 = 1.618033988749894848;

    fn proto43() -> NonlinearitySpec {
        NonlinearitySpec::prototype(4.0, 3.0).unwrap()
    }

    #[test]
    fn prototype_validation_and_shift() {
        assert!(NonlinearitySpec::prototype(3.0, 3.0).is_err());
        assert!(NonlinearitySpec::prototype(4.0, 1.5).is_err());
        assert!(NonlinearitySpec::prototype(f64::NAN, 2.0).is_err());
        // q=4, r=3: min f' at t = 1/3 is -1/3
        assert!((proto43().shift() - 1.0 / 3.0).abs() < 1e-12);
        // r = 2: f'(0) = -1
        assert!((NonlinearitySpec::prototype(3.0, 2.0).unwrap().shift() - 1.0).abs() < 1e-12);
        assert!((NonlinearitySpec::prototype(4.0, 2.0).unwrap().shift() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prototype_accessors() {
        let s = proto43();
        assert_eq!(s.f(0.0), 0.0);
        assert!((s.f(2.0) - 4.0).abs() < 1e-14);
        assert!((s.fprime(2.0) - 8.0).abs() < 1e-14);
        assert!((s.primitive(2.0) - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(s.f(-1.0), 0.0);
        assert_eq!(s.primitive(-2.0), 0.0);
    }

    #[test]
    fn primitive_matches_quadrature() {
        let s = proto43();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = rng.random::<f64>() * 3.0;
            let b = a + rng.random::<f64>() * 3.0;
            let numeric = quad::adaptive(|t| s.f(t), a, b, 1e-12);
            let exact = s.primitive(b) - s.primitive(a);
            assert!(
                (numeric - exact).abs() < 1e-10 * (1.0 + exact.abs()),
                "[{a}, {b}]: {numeric} vs {exact}"
            );
        }
    }

    #[test]
    fn table_accessors_and_csv() {
        let rows = vec![
            TableRow { t: 0.0, f: 0.0, fprime: 1.0 },
            TableRow { t: 1.0, f: 2.0, fprime: 3.0 },
            TableRow { t: 3.0, f: 10.0, fprime: 5.0 },
        ];
        let s = NonlinearitySpec::from_table(rows).unwrap();
        assert!((s.f(0.5) - 1.0).abs() < 1e-14);
        assert!((s.fprime(0.5) - 2.0).abs() < 1e-14);
        assert!((s.f(2.0) - 6.0).abs() < 1e-14);
        // beyond the table: linear in f with the last slope
        assert!((s.f(4.0) - 15.0).abs() < 1e-14);
        assert!((s.fprime(4.0) - 5.0).abs() < 1e-14);
        // primitive: trapezoid through the knots, F(0) = 0
        assert_eq!(s.primitive(0.0), 0.0);
        assert!((s.primitive(1.0) - 1.0).abs() < 1e-14);
        assert!((s.primitive(3.0) - 13.0).abs() < 1e-14);
        assert!((s.primitive(4.0) - 13.0 - 10.0 - 2.5).abs() < 1e-14);
        assert_eq!(s.shift(), 0.0);

        let csv = "t,f,fprime\n0,0,1\n1,2,3\n3,10,5\n";
        let t = NonlinearitySpec::parse_csv(csv).unwrap();
        assert_eq!(t.f(2.0), s.f(2.0));
        assert!(NonlinearitySpec::parse_csv("0,0\n1,1\n").is_err());
        assert!(NonlinearitySpec::parse_csv("t,f,fprime\n1,0,0\n0,1,1\n").is_err());
        assert!(NonlinearitySpec::from_table(vec![TableRow { t: 0.0, f: 0.0, fprime: 0.0 }]).is_err());
    }

    #[test]
    fn fixed_points_prototype() {
        let fps = fixed_points(&proto43(), (0.0, DEFAULT_T_SCAN)).unwrap();
        // roots of t(t^2 - t - 1) = 0 in [0, inf): 0 and the golden ratio
        assert_eq!(fps.roots.len(), 2);
        assert_eq!(fps.roots[0].t, 0.0);
        assert!(!fps.roots[0].admissible);
        let u0 = fps.roots[1];
        assert!((u0.t - PHI).abs() < 1e-11, "u0 = {}", u0.t);
        assert!(u0.admissible);
        // f'(u0) = 3u0^2 - 2u0 = u0 + 3 via u0^2 = u0 + 1
        assert!((u0.slope - (u0.t + 3.0)).abs() < 1e-9);
        assert_eq!(fps.bands.len(), 1);
        let band = fps.bands[0];
        assert_eq!(band.u_minus, 0.0);
        assert!(band.u_plus.is_infinite());
    }

    #[test]
    fn fixed_points_identity_rejected() {
        let rows = vec![
            TableRow { t: 0.0, f: 0.0, fprime: 1.0 },
            TableRow { t: 10.0, f: 10.0, fprime: 1.0 },
        ];
        let s = NonlinearitySpec::from_table(rows).unwrap();
        match fixed_points(&s, (0.0, 10.0)) {
            Err(Error::Hypothesis(_)) => {}
            other => panic!("expected hypothesis failure, got {other:?}"),
        }
    }

    /// f(t) = t + t(t-1)(t-2)(t-3): fixed points 0, 1, 2, 3 with slopes
    /// -5, 3, -1, 7, so two admissible bands obeying the interleaving
    /// u_{-,1} < u_{+,1} <= u_{-,2}.
    #[test]
    fn fixed_points_quartic_band_ordering() {
        let p = |t: f64| t * (t - 1.0) * (t - 2.0) * (t - 3.0);
        let dp = |t: f64| {
            (t - 1.0) * (t - 2.0) * (t - 3.0)
                + t * (t - 2.0) * (t - 3.0)
                + t * (t - 1.0) * (t - 3.0)
                + t * (t - 1.0) * (t - 2.0)
        };
        let rows: Vec<TableRow> = (0..=3000)
            .map(|k| {
                let t = 6.0 * k as f64 / 3000.0;
                TableRow { t, f: t + p(t), fprime: 1.0 + dp(t) }
            })
            .collect();
        let s = NonlinearitySpec::from_table(rows).unwrap();
        let fps = fixed_points(&s, (0.0, 6.0)).unwrap();
        assert_eq!(fps.roots.len(), 4);
        let admissible: Vec<f64> = fps.roots.iter().filter(|r| r.admissible).map(|r| r.t).collect();
        assert_eq!(admissible.len(), 2);
        assert!((admissible[0] - 1.0).abs() < 1e-4);
        assert!((admissible[1] - 3.0).abs() < 1e-4);
        assert_eq!(fps.bands.len(), 2);
        let (b1, b2) = (fps.bands[0], fps.bands[1]);
        assert!((b1.u_minus - 0.0).abs() < 1e-4);
        assert!((b1.u_plus - 2.0).abs() < 1e-4);
        assert!((b2.u_minus - 2.0).abs() < 1e-4);
        assert!(b2.u_plus.is_infinite());
        // interleaving, with equality at the shared root
        assert!(b1.u_minus < b1.u_plus);
        assert!(b1.u_plus <= b2.u_minus + 1e-12);
    }

    #[test]
    fn hypotheses_prototype() {
        let s = proto43();
        let rep = check_hypotheses(&s, 3.0, DEFAULT_T_SCAN).unwrap();
        // (f_0) fails on (0,1); the shift restores it
        assert!(!rep.f0.pass);
        assert!((rep.shift - 1.0 / 3.0).abs() < 1e-12);
        // (f_1): f'(0) = 0 < 1
        assert!(rep.f1.pass);
        assert_eq!(rep.fprime_at_zero, 0.0);
        // (f_1'): f < t up to the golden ratio
        assert!(rep.f1_prime.pass);
        assert!((rep.t_bar.unwrap() - PHI).abs() < 1e-9);
        // (f_2) with a valid witness; the textbook pair (2, 0.5) also works
        assert!(rep.f2.pass);
        let (m, delta) = (rep.m.unwrap(), rep.delta.unwrap());
        assert!(delta > 0.0);
        for k in 0..=4000 {
            let t = m + (DEFAULT_T_SCAN - m) * k as f64 / 4000.0;
            assert!(s.f(t) >= (1.0 + delta) * t * (1.0 - 1e-9));
            if t >= 2.0 {
                assert!(s.f(t) >= 1.5 * t);
            }
        }
        // (f_3) against lambda2_plus = 3 < u0 + 2
        assert!(rep.f3.pass);
        assert_eq!(rep.u0_margins.len(), 1);
        let mg = rep.u0_margins[0];
        assert!((mg.slope - (PHI + 3.0)).abs() < 1e-9);
        assert!((mg.margin - (PHI - 1.0)).abs() < 1e-9);
        assert!(rep.required_ok());
        // ... and fails once lambda2_plus exceeds u0 + 2
        let rep_hi = check_hypotheses(&s, PHI + 2.0 + 1e-6, DEFAULT_T_SCAN).unwrap();
        assert!(!rep_hi.f3.pass);
        assert!(!rep_hi.required_ok());
    }

    #[test]
    fn hypotheses_rejects_non_evaluable() {
        let s = NonlinearitySpec::prototype(200.0, 3.0).unwrap();
        match check_hypotheses(&s, 1.0, DEFAULT_T_SCAN) {
            Err(Error::InvalidParameter(_)) => {}
            other => panic!("expected parameter error, got {other:?}"),
        }
    }

    #[test]
    fn apriori_examples() {
        let (k1, kinf, k2) = apriori_constants(1.0, 0.5, 2.0, 1.0).unwrap();
        assert_eq!((k1, kinf, k2), (6.0, 6.0, 6.0));
        let pi = std::f64::consts::PI;
        let (k1, kinf, k2) = apriori_constants(2.0, 1.0, 4.0 * pi / 3.0, 2.0).unwrap();
        assert!((k1 - 16.0 * pi / 3.0).abs() < 1e-12);
        assert!((kinf - 64.0 * pi / 3.0).abs() < 1e-12);
        assert!((k2 - 32.0 * pi / 3.0).abs() < 1e-12);
        // delta -> inf limit
        let (k1, _, _) = apriori_constants(1.0, f64::INFINITY, 2.0, 1.0).unwrap();
        assert_eq!(k1, 2.0);
        assert!(apriori_constants(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(apriori_constants(1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn critical_exponent_cases() {
        assert!(critical_exponent(1, 0.75).is_infinite());
        assert!((critical_exponent(3, 0.75) - 4.0).abs() < 1e-14);
        assert!((critical_exponent(2, 0.6) - 5.0).abs() < 1e-12);
        assert_eq!(default_ell(1, 0.75), 4.0);
        assert_eq!(default_ell(3, 0.75), 3.0);
    }

    #[test]
    fn truncate_prototype_certificates() {
        let s = proto43();
        let tr = truncate(&s, 6.0, 4.0, 0.75, 1).unwrap();
        assert!(tr.t_star >= 6.0 + T_STAR_MARGIN);
        assert!((tr.u0_list[0] - PHI).abs() < 1e-9);
        assert_eq!(tr.u_minus, 0.0);
        assert!(tr.u_plus.is_infinite());
        // identical with f below t_star (same code path)
        for k in 0..=64 {
            let t = tr.t_star * k as f64 / 64.0;
            assert_eq!(tr.f(t), s.f(t));
            assert_eq!(tr.fprime(t), s.fprime(t));
        }
        // C^1 across both seams, probed from outside
        let eps = 1e-8 * tr.t_star;
        for seam in [tr.t_star, 2.0 * tr.t_star] {
            let dv = (tr.f(seam + eps) - tr.f(seam - eps)).abs();
            let slope = tr.fprime(seam).abs() + 1.0;
            assert!(dv <= 4.0 * eps * slope, "jump {dv:.3e} at {seam}");
            let dd = (tr.fprime(seam + eps) - tr.fprime(seam - eps)).abs();
            assert!(dd <= 1e-4 * slope, "kink {dd:.3e} at {seam}");
        }
        // subcritical ratio; the q = l case needs no lift, so the ratio is
        // exactly 1 past the blend up to the negative lower-order terms of f
        let big = 1e3 * tr.t_star;
        let ratio = tr.f(big) / big.powf(3.0);
        assert!((0.999..=1.001).contains(&ratio), "ratio {ratio}");
        // F_{M,delta} inequality on [M, far]
        for k in 0..=4000 {
            let t = tr.m * (1e3 * tr.t_star / tr.m).powf(k as f64 / 4000.0);
            assert!(tr.f(t) >= (1.0 + tr.delta) * t * (1.0 - 1e-9) - 1e-9);
        }
        // shifted monotone / nonnegative on random pairs
        let c = tr.shift();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = rng.random::<f64>() * 3.0 * tr.t_star;
            let b = a + rng.random::<f64>() * tr.t_star;
            let (ga, gb) = (tr.f(a) + c * a, tr.f(b) + c * b);
            assert!(gb >= ga - 1e-9 * (1.0 + gb.abs()));
            assert!(ga >= -1e-9);
        }
    }

    #[test]
    fn truncate_guards_exponent_window() {
        let s = proto43();
        // n = 3, s = 0.75: 2_s^* = 4, so ell = 4 is out, 3.9 is in
        assert!(truncate(&s, 6.0, 4.0, 0.75, 3).is_err());
        assert!(truncate(&s, 6.0, 3.9, 0.75, 3).is_ok());
        // n = 1, s = 0.75: any ell > 2
        assert!(truncate(&s, 6.0, 9.0, 0.75, 1).is_ok());
        assert!(truncate(&s, 6.0, 2.0, 0.75, 1).is_err());
        assert!(truncate(&s, -1.0, 4.0, 0.75, 1).is_err());
    }

    /// q = 8 truncated to ell = 3.5: f(t_star) far above the target power, so
    /// the tail must lift (A > 0) and the ratio approaches 1 from above.
    #[test]
    fn truncate_supercritical_lift() {
        let s = NonlinearitySpec::prototype(8.0, 3.0).unwrap();
        let tr = truncate(&s, 5.0, 3.5, 0.75, 3).unwrap();
        assert!(tr.tail_d > 0.0);
        let c = tr.shift();
        // monotone (shifted) across blend and tail
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=4000 {
            let t = 3.0 * tr.t_star * k as f64 / 4000.0;
            let v = tr.f(t) + c * t;
            assert!(v >= prev - 1e-9 * (1.0 + v.abs()), "dip at t = {t}");
            prev = v;
        }
        let big = 1e4 * tr.t_star;
        let ratio = tr.f(big) / big.powf(2.5);
        assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio}");
        assert!(ratio > 1.0);
    }

    #[test]
    fn truncated_primitive_matches_quadrature() {
        let s = proto43();
        let tr = truncate(&s, 6.0, 4.0, 0.75, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let a = rng.random::<f64>() * 3.0 * tr.t_star;
            let b = a + rng.random::<f64>() * tr.t_star;
            let numeric = quad::adaptive(|t| tr.f(t), a, b, 1e-12);
            let exact = tr.primitive(b) - tr.primitive(a);
            assert!(
                (numeric - exact).abs() < 1e-10 * (1.0 + exact.abs()),
                "[{a:.4}, {b:.4}]: {numeric:.12e} vs {exact:.12e}"
            );
        }
    }

    #[test]
    fn truncated_sign_structure() {
        let s = proto43();
        let tr = truncate(&s, 6.0, 4.0, 0.75, 1).unwrap();
        // f~ < t on (u_-, u_0), f~ > t on (u_0, u_+)
        for k in 1..200 {
            let t = PHI * k as f64 / 200.0;
            assert!(tr.f(t) < t, "t = {t}");
        }
        for k in 1..=200 {
            let t = PHI + (4.0 * tr.t_star - PHI) * k as f64 / 200.0;
            assert!(tr.f(t) > t, "t = {t}");
        }
    }

    #[test]
    fn ar_constants_prototype() {
        let s = proto43();
        let tr = truncate(&s, 6.0, 4.0, 0.75, 1).unwrap();
        let (mu, t0) = ar_constants(&tr).unwrap();
        assert_eq!(mu, 3.0); // (2 + ell)/2 certifies directly here
        assert!(t0 > 0.0 && t0.is_finite());
        // raw-region identity: f t - 3 F = t^4 / 4 >= 0
        for k in 1..=100 {
            let t = t0 * (1.0 + k as f64 / 10.0);
            assert!(tr.f(t) * t >= mu * tr.primitive(t) * (1.0 - 1e-9));
        }
        // the tail ratio f~ t / F~ approaches ell
        let big = 1e5 * tr.t_star;
        let ratio = tr.f(big) * big / tr.primitive(big);
        assert!((ratio - 4.0).abs() < 0.05, "AR ratio {ratio}");
    }
}
