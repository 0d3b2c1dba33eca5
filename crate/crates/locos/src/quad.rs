//! Numerical integration and 1-D search utilities.
//!
//! Polynomial integrands go through Gauss-Legendre rules sized for exactness;
//! everything else uses adaptive Simpson with an absolute tolerance. Level-set
//! measures and sup norms are grid-based with one local refinement pass.

use crate::error::{Error, Result};
use crate::measure::Segment;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Default absolute tolerance for adaptive quadrature.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Maximum bisection depth for adaptive quadrature.
pub const MAX_DEPTH: u32 = 40;

/// Horner evaluation; coefficients from constant term up.
pub fn poly_eval(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &ci in c.iter().rev() {
        acc = acc * x + ci;
    }
    acc
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug)]
pub struct GlRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Legendre polynomial `P_n(x)` by the three-term recurrence.
pub fn legendre_p(n: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    if n == 0 {
        return p0;
    }
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn legendre_p_dp(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Cached Gauss-Legendre nodes and weights; exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> Arc<GlRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GlRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    if let Some(rule) = guard.get(&n) {
        return rule.clone();
    }
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_p_dp(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_p_dp(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    let rule = Arc::new(GlRule { nodes, weights });
    guard.insert(n, rule.clone());
    rule
}

/// Node count whose rule is exact for polynomials of degree `deg`.
pub fn nodes_for_degree(deg: usize) -> usize {
    deg / 2 + 1
}

/// Gauss-Legendre integral of `f` over `[a, b]` with `n` nodes.
pub fn gl_integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let rule = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Exact integral of a polynomial over segments, scaled by `density`.
pub fn integrate_segments_poly(segs: &[Segment], density: f64, c: &[f64]) -> f64 {
    let deg = c.len().saturating_sub(1);
    let n = nodes_for_degree(deg);
    let mut acc = 0.0;
    for s in segs {
        acc += gl_integrate(&|x| poly_eval(c, x), s.a, s.b, n);
    }
    acc * density
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature {
            achieved: delta.abs() / 15.0,
            requested: tol,
        });
    }
    let l = adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Adaptive Simpson integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

/// Grid size used to bracket roots of a degree-`deg` polynomial.
pub fn root_grid_for_degree(deg: usize) -> usize {
    (16 * (deg + 1)).max(64)
}

/// All sign-change roots of `f` on `[a, b]`, bracketed on a uniform grid and
/// refined by bisection to `1e-13` of the interval length.
pub fn roots_on_interval<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, grid: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    if b <= a {
        return roots;
    }
    let tol = 1e-13 * (b - a).max(f64::MIN_POSITIVE);
    let mut prev_x = a;
    let mut prev_v = f(a);
    for i in 1..=grid {
        let x = a + (b - a) * i as f64 / grid as f64;
        let v = f(x);
        if prev_v == 0.0 {
            roots.push(prev_x);
        } else if prev_v * v < 0.0 {
            let (mut lo, mut hi) = (prev_x, x);
            let mut flo = prev_v;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                let fmid = f(mid);
                if fmid == 0.0 {
                    lo = mid;
                    break;
                }
                if flo * fmid < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fmid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_v = v;
    }
    roots
}

/// Integral of `|f|` over `[a, b]` for smooth `f`, splitting at roots first.
/// With `poly_deg` the pieces integrate exactly by Gauss-Legendre.
pub fn integrate_abs_piecewise_smooth<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    grid: usize,
    poly_deg: Option<usize>,
) -> Result<f64> {
    let mut cuts = roots_on_interval(f, a, b, grid);
    cuts.push(b);
    let mut acc = 0.0;
    let mut lo = a;
    for hi in cuts {
        if hi > lo {
            let piece = match poly_deg {
                Some(d) => gl_integrate(f, lo, hi, nodes_for_degree(d)),
                None => adaptive_simpson(f, lo, hi, DEFAULT_TOL)?,
            };
            acc += piece.abs();
            lo = hi;
        }
    }
    Ok(acc)
}

/// Integral of `|f|^p` over `[a, b]`, splitting at sign changes so the
/// integrand is smooth inside every piece. Integer `p` on polynomial pieces is
/// exact; fractional powers fall back to adaptive Simpson.
pub fn integrate_abs_pow<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    p: f64,
    grid: usize,
    poly_deg: Option<usize>,
) -> Result<f64> {
    assert!(p > 0.0, "power must be positive");
    let integer_p = p.fract() == 0.0;
    if let (true, Some(d)) = (integer_p, poly_deg) {
        let k = p as usize;
        let n = nodes_for_degree(d * k);
        if k.is_multiple_of(2) {
            return Ok(gl_integrate(&|x| f(x).powi(k as i32), a, b, n));
        }
        let mut cuts = roots_on_interval(f, a, b, grid);
        cuts.push(b);
        let mut acc = 0.0;
        let mut lo = a;
        for hi in cuts {
            if hi > lo {
                acc += gl_integrate(&|x| f(x).powi(k as i32), lo, hi, n).abs();
                lo = hi;
            }
        }
        return Ok(acc);
    }
    let mut cuts = roots_on_interval(f, a, b, grid);
    cuts.push(b);
    let mut acc = 0.0;
    let mut lo = a;
    for hi in cuts {
        if hi > lo {
            acc += adaptive_simpson(&|x| f(x).abs().powf(p), lo, hi, DEFAULT_TOL)?;
            lo = hi;
        }
    }
    Ok(acc)
}

/// Chebyshev points of the first kind mapped to `[a, b]` (interior nodes).
pub fn chebyshev_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..n)
        .map(|i| {
            let theta = std::f64::consts::PI * (2.0 * i as f64 + 1.0) / (2.0 * n as f64);
            mid - half * theta.cos()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Chebyshev,
    Uniform,
}

/// Golden-section maximization of `|f|` on a bracket.
fn refine_abs_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1).abs();
    let mut f2 = f(x2).abs();
    let mut best = f1.max(f2);
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2).abs();
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1).abs();
        }
        best = best.max(f1.max(f2));
        if hi - lo < 1e-14 * (hi.abs() + lo.abs() + 1.0) {
            break;
        }
    }
    best
}

/// Sup of `|f|` over segments from a per-segment grid plus one local
/// refinement around the best grid cell.
pub fn sup_on_segments<F: Fn(f64) -> f64>(
    segs: &[Segment],
    f: &F,
    kind: GridKind,
    per_seg: usize,
    refine: bool,
) -> f64 {
    let mut best = 0.0f64;
    for s in segs {
        let pts = match kind {
            GridKind::Chebyshev => chebyshev_points(s.a, s.b, per_seg),
            GridKind::Uniform => (0..per_seg)
                .map(|i| s.a + (s.b - s.a) * (i as f64 + 0.5) / per_seg as f64)
                .collect(),
        };
        let mut seg_best = 0.0f64;
        let mut seg_arg = pts[0];
        for &x in &pts {
            let v = f(x).abs();
            if v > seg_best {
                seg_best = v;
                seg_arg = x;
            }
        }
        if refine {
            let h = (s.b - s.a) / per_seg as f64;
            let lo = (seg_arg - 1.5 * h).max(s.a);
            let hi = (seg_arg + 1.5 * h).min(s.b);
            seg_best = seg_best.max(refine_abs_max(f, lo, hi));
            seg_best = seg_best.max(f(s.a).abs()).max(f(s.b).abs());
        }
        best = best.max(seg_best);
    }
    best
}

/// Options for level-set measurement.
#[derive(Debug, Clone, Copy)]
pub struct LevelOpts {
    /// Cells per segment when counting, brackets per segment when refining.
    pub grid_per_seg: usize,
    /// Refine cell boundaries by root-finding (polynomial-quality answers).
    pub refine: bool,
}

impl Default for LevelOpts {
    fn default() -> Self {
        LevelOpts {
            grid_per_seg: 4096,
            refine: false,
        }
    }
}

/// Lebesgue measure (scaled by `density`) of the set where
/// `max_i |f_i| >= t` (or `> t` when `strict`).
pub fn level_measure_segments(
    segs: &[Segment],
    density: f64,
    fs: &[&dyn Fn(f64) -> f64],
    t: f64,
    strict: bool,
    opts: &LevelOpts,
) -> f64 {
    let hit = |x: f64| {
        let m = fs.iter().map(|f| f(x).abs()).fold(0.0f64, f64::max);
        if strict {
            m > t
        } else {
            m >= t
        }
    };
    let mut len = 0.0;
    for s in segs {
        if opts.refine {
            let mut cuts = vec![s.a, s.b];
            for f in fs {
                cuts.extend(roots_on_interval(&|x| f(x) - t, s.a, s.b, opts.grid_per_seg));
                cuts.extend(roots_on_interval(&|x| f(x) + t, s.a, s.b, opts.grid_per_seg));
            }
            cuts.sort_by(f64::total_cmp);
            for w in cuts.windows(2) {
                if w[1] > w[0] && hit(0.5 * (w[0] + w[1])) {
                    len += w[1] - w[0];
                }
            }
        } else {
            let cell = (s.b - s.a) / opts.grid_per_seg as f64;
            for i in 0..opts.grid_per_seg {
                if hit(s.a + (i as f64 + 0.5) * cell) {
                    len += cell;
                }
            }
        }
    }
    len * density
}

/// Nodes and weights for integrating over an atom's segments; weights carry
/// the measure density and sum to the atom's measure.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn for_segments(segs: &[Segment], density: f64, nodes_per_seg: usize) -> Self {
        let rule = gauss_legendre(nodes_per_seg);
        let mut nodes = Vec::with_capacity(segs.len() * nodes_per_seg);
        let mut weights = Vec::with_capacity(segs.len() * nodes_per_seg);
        for s in segs {
            let mid = 0.5 * (s.a + s.b);
            let half = 0.5 * (s.b - s.a);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                nodes.push(mid + half * x);
                weights.push(w * half * density);
            }
        }
        QuadratureRule { nodes, weights }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}
