//! One-dimensional quadrature building blocks used by the kernel and assembly
//! layers: cached Gauss-Legendre rules, an adaptive Gauss-Kronrod integrator,
//! and graded composite rules for endpoint singularities of known power type.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn gauss_cache() -> &'static Mutex<BTreeMap<usize, Arc<GaussRule>>> {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, Arc<GaussRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(BTreeMap::new()))
}

/// n-point Gauss-Legendre rule on [-1, 1]; Newton on P_n from Chebyshev guesses.
pub fn gauss_legendre(n: usize) -> Arc<GaussRule> {
    assert!(n >= 1, "gauss_legendre: empty rule");
    if let Some(r) = gauss_cache().lock().unwrap().get(&n) {
        return Arc::clone(r);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // recurrence for P_n(x) and P_n'(x)
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let rule = Arc::new(GaussRule { nodes, weights });
    gauss_cache().lock().unwrap().insert(n, Arc::clone(&rule));
    rule
}

/// Gauss-Legendre integral of `f` over [a, b].
pub fn gauss<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let rule = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Composite Gauss over [a, b] with cells refined dyadically toward `a`.
/// `levels` halvings; the innermost cell is dropped only through its
/// vanishing length, so the integrand must be integrable at `a`.
pub fn gauss_graded_lo<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    levels: usize,
    pts: usize,
) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut hi = b;
    for k in 0..levels {
        let lo = if k + 1 == levels {
            a
        } else {
            a + len * 0.5f64.powi(k as i32 + 1)
        };
        acc += gauss(&mut f, lo, hi, pts);
        hi = lo;
    }
    acc
}

// Gauss 7 / Kronrod 15 pair (QUADPACK abscissae).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut kron = WGK[7] * fc;
    let mut gauss7 = WG[3] * fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let fsum = f(mid - x) + f(mid + x);
        kron += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss7 += WG[j / 2] * fsum;
        }
    }
    (kron * half, (kron - gauss7).abs() * half)
}

/// Adaptive Gauss-Kronrod integration of `f` over [a, b] to relative
/// tolerance `rel_tol` (with a small absolute floor). Bisects the interval
/// with the largest error estimate first.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    const MAX_INTERVALS: usize = 4000;
    const ABS_FLOOR: f64 = 1e-300;
    let (v, e) = gk15(&mut f, a, b);
    let mut segs: Vec<(f64, f64, f64, f64)> = vec![(a, b, v, e)];
    loop {
        let total: f64 = segs.iter().map(|s| s.2).sum();
        let err: f64 = segs.iter().map(|s| s.3).sum();
        if err <= rel_tol * total.abs().max(ABS_FLOOR) || segs.len() >= MAX_INTERVALS {
            return total;
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = segs.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        segs.push((lo, mid, v1, e1));
        segs.push((mid, hi, v2, e2));
    }
}

/// Integrates t^(omega - 1 - 2s) * j(t) over (0, T] where j is bounded at 0,
/// by the exact flattening u = t^(omega - 2s) followed by graded Gauss in u.
/// Requires omega > 2s so the substitution exponent is positive.
pub fn power_singular<F: FnMut(f64) -> f64>(mut j: F, t_max: f64, omega: f64, s: f64) -> f64 {
    let beta = omega - 2.0 * s;
    debug_assert!(beta > 0.0, "power_singular: non-integrable exponent");
    let u_max = t_max.powf(beta);
    let g = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        j(u.powf(1.0 / beta))
    };
    gauss_graded_lo(g, 0.0, u_max, 40, 12) / beta
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn gauss_exactness_and_pi() {
        // degree-15 polynomial integrated exactly by 8 points
        let v = gauss(|x| x.powi(15) + 3.0 * x.powi(8), 0.0, 1.0, 8);
        assert!((v - (1.0 / 16.0 + 3.0 / 9.0)).abs() < TOL);
        let pi = adaptive(|x| 4.0 / (1.0 + x * x), 0.0, 1.0, 1e-13);
        assert!((pi - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_endpoint_peak() {
        // integrable endpoint singularity x^(-1/2): exact value 2
        let v = adaptive(|x| x.sqrt().recip(), 1e-300, 1.0, 1e-10);
        assert!((v - 2.0).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn graded_rule_integrates_power_singularity() {
        // x^(-0.5) over (0,1]: the residual error is the final interval's
        // Gauss error, ~ sqrt(2^-levels), so 70 levels reach ~1e-12
        let v = gauss_graded_lo(|x| x.powf(-0.5), 0.0, 1.0, 70, 12);
        assert!((v - 2.0).abs() < 1e-10, "got {v}");
        // mildly singular x^(1/2) (the shape rest-part integrands take)
        let v2 = gauss_graded_lo(|x| x.powf(0.5), 0.0, 1.0, 30, 12);
        assert!((v2 - 2.0 / 3.0).abs() < 1e-13, "got {v2}");
    }

    #[test]
    fn power_singular_matches_closed_form() {
        // t^(omega-1-2s) * 1 over (0,T]: closed form T^(omega-2s)/(omega-2s)
        let (s, omega, t_max) = (0.75, 3.0, 0.7_f64);
        let v = power_singular(|_| 1.0, t_max, omega, s);
        let exact = t_max.powf(omega - 2.0 * s) / (omega - 2.0 * s);
        assert!((v - exact).abs() < 1e-12 * exact);
        // with a smooth j
        let v2 = power_singular(|t| (1.0 + t).ln() + t * t, t_max, 2.0, 0.75);
        let exact2 = adaptive(
            |t| t.powf(-0.5) * ((1.0 + t).ln() + t * t),
            1e-300,
            t_max,
            1e-13,
        );
        assert!((v2 - exact2).abs() < 1e-10 * exact2.abs(), "{v2} vs {exact2}");
    }
}
