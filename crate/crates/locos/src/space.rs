//! Local function spaces and Remez-type level-set certificates.
//!
//! A local space is a fixed finite-dimensional family of functions whose
//! restriction to any atom keeps a quantitative footprint: a fraction `c2` of
//! the atom where the function is at least `c1` times its sup. Certificates
//! come from growth bounds; `remez_empirical` stress-tests them on concrete
//! atoms with random and extremal coefficient vectors.

use crate::error::{Error, Result};
use crate::measure::{Backing, ProbabilitySpace, Support};
use crate::quad;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Families a local space can be drawn from.
#[derive(Debug, Clone)]
pub enum Family {
    /// Polynomials of degree at most `n` in the coordinate.
    Polynomial(usize),
    /// Real exponential sums with the given distinct rates.
    Exponential(Vec<f64>),
    /// Trigonometric polynomials of degree at most `n`, period one.
    Trigonometric(usize),
    /// The constants.
    Indicator,
    /// Explicit value rows over the points of a discrete backing.
    Custom(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct LocalSpace {
    family: Family,
}

impl LocalSpace {
    pub fn polynomial(degree: usize) -> Self {
        LocalSpace {
            family: Family::Polynomial(degree),
        }
    }

    pub fn exponential(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidParameter("no exponential rates".into()));
        }
        for (i, a) in rates.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite("exponential rate"));
            }
            if rates[..i].iter().any(|b| b == a) {
                return Err(Error::InvalidParameter(format!("duplicate rate {a}")));
            }
        }
        Ok(LocalSpace {
            family: Family::Exponential(rates),
        })
    }

    pub fn trigonometric(degree: usize) -> Self {
        LocalSpace {
            family: Family::Trigonometric(degree),
        }
    }

    pub fn indicator() -> Self {
        LocalSpace {
            family: Family::Indicator,
        }
    }

    pub fn custom(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len() || r.is_empty()) {
            return Err(Error::InvalidParameter(
                "custom rows must be non-empty and equal length".into(),
            ));
        }
        Ok(LocalSpace {
            family: Family::Custom(rows),
        })
    }

    /// Parses `polynomial:3`, `exponential:1.0,-2.0`, `trigonometric:2`,
    /// `indicator`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidParameter(msg);
        let (head, rest) = match descriptor.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (descriptor, None),
        };
        match head {
            "polynomial" => {
                let n: usize = rest
                    .ok_or_else(|| bad("polynomial needs a degree".into()))?
                    .parse()
                    .map_err(|_| bad(format!("bad degree in {descriptor:?}")))?;
                Ok(Self::polynomial(n))
            }
            "exponential" => {
                let rates: Vec<f64> = rest
                    .ok_or_else(|| bad("exponential needs rates".into()))?
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("bad rate in {descriptor:?}")))?;
                Self::exponential(rates)
            }
            "trigonometric" => {
                let n: usize = rest
                    .ok_or_else(|| bad("trigonometric needs a degree".into()))?
                    .parse()
                    .map_err(|_| bad(format!("bad degree in {descriptor:?}")))?;
                Ok(Self::trigonometric(n))
            }
            "indicator" => Ok(Self::indicator()),
            _ => Err(bad(format!("unknown space family {descriptor:?}"))),
        }
    }

    pub fn descriptor(&self) -> String {
        match &self.family {
            Family::Polynomial(n) => format!("polynomial:{n}"),
            Family::Exponential(r) => format!(
                "exponential:{}",
                r.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
            ),
            Family::Trigonometric(n) => format!("trigonometric:{n}"),
            Family::Indicator => "indicator".into(),
            Family::Custom(rows) => format!("custom:{}x{}", rows.len(), rows[0].len()),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            Family::Polynomial(n) => n + 1,
            Family::Exponential(r) => r.len(),
            Family::Trigonometric(n) => 2 * n + 1,
            Family::Indicator => 1,
            Family::Custom(rows) => rows.len(),
        }
    }

    /// Degree bound when members are polynomials in the coordinate.
    pub fn poly_degree(&self) -> Option<usize> {
        match &self.family {
            Family::Polynomial(n) => Some(*n),
            Family::Indicator => Some(0),
            _ => None,
        }
    }

    /// Exponent of the growth bound feeding the Remez certificate.
    pub fn growth_exponent(&self) -> Option<usize> {
        match &self.family {
            Family::Polynomial(n) => Some(*n),
            Family::Exponential(r) => Some(r.len() - 1),
            Family::Trigonometric(n) => Some(2 * n),
            Family::Indicator => Some(0),
            Family::Custom(_) => None,
        }
    }

    /// Growth constant known a priori; exponential and trigonometric sums
    /// need a caller-supplied constant.
    pub fn default_growth_constant(&self) -> Option<f64> {
        match &self.family {
            Family::Polynomial(_) | Family::Indicator => Some(4.0),
            _ => None,
        }
    }

    /// Value of adapted basis function `i` on an atom with the given hull.
    /// Custom families are value tables and need the point index instead.
    pub fn eval_basis(&self, hull: (f64, f64), i: usize, x: f64, point: Option<usize>) -> f64 {
        let (a, b) = hull;
        match &self.family {
            Family::Polynomial(_) => {
                if b > a {
                    let u = 2.0 * (x - a) / (b - a) - 1.0;
                    quad::legendre_p(i, u)
                } else if i == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Exponential(r) => (r[i] * (x - a)).exp(),
            Family::Trigonometric(_) => {
                if i == 0 {
                    1.0
                } else {
                    let j = i.div_ceil(2);
                    let arg = 2.0 * std::f64::consts::PI * j as f64 * (x - a);
                    if i % 2 == 1 {
                        arg.cos()
                    } else {
                        arg.sin()
                    }
                }
            }
            Family::Indicator => 1.0,
            Family::Custom(rows) => point.map(|p| rows[i][p]).unwrap_or(f64::NAN),
        }
    }
}

/// Certificate `(c1, c2)` from a growth bound with constant `c` and exponent
/// `n`: a level fraction of one half at threshold `(2c)^{-n}`.
pub fn remez_constants_from_growth(c: f64, n: usize) -> (f64, f64) {
    ((2.0 * c).powi(-(n as i32)), 0.5)
}

/// Hull used to anchor adapted bases on an atom.
pub fn atom_hull(space: &ProbabilitySpace, support: &Support) -> (f64, f64) {
    match support {
        Support::Intervals(_) => support.hull().unwrap_or((0.0, 1.0)),
        Support::Points(idx) => match space.backing() {
            Backing::Discrete { points, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &i in idx {
                    lo = lo.min(points[i]);
                    hi = hi.max(points[i]);
                }
                (lo, hi)
            }
            _ => (0.0, 1.0),
        },
    }
}

/// Evaluates the adapted-coordinate combination `sum_i coeffs[i] b_i` at a
/// coordinate (continuous) or point index (discrete).
pub fn eval_local(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    hull: (f64, f64),
    coeffs: &[f64],
    x: f64,
    point: Option<usize>,
) -> f64 {
    let _ = space;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| c * s.eval_basis(hull, i, x, point))
        .sum()
}

fn entry_tol(len: f64) -> f64 {
    (1e-12 * len).clamp(1e-16, 1e-12)
}

/// Integral of `g(b_i(x), b_j(x), ...)`-style products over an atom. The
/// polynomial fast path is exact; other families use adaptive Simpson.
pub(crate) fn integrate_products(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    support: &Support,
    f: &dyn Fn(f64, Option<usize>) -> f64,
    product_degree: Option<usize>,
) -> Result<f64> {
    match (space.backing(), support) {
        (Backing::Discrete { masses, points }, Support::Points(idx)) => Ok(idx
            .iter()
            .map(|&i| masses[i] * f(points[i], Some(i)))
            .sum()),
        (Backing::Continuous { density, .. }, Support::Intervals(segs)) => {
            let mut acc = 0.0;
            for seg in segs {
                let g = |x: f64| f(x, None);
                acc += match product_degree {
                    Some(d) => quad::gl_integrate(&g, seg.a, seg.b, quad::nodes_for_degree(d)),
                    None => quad::adaptive_simpson(&g, seg.a, seg.b, entry_tol(seg.len()))?,
                };
            }
            Ok(acc * density)
        }
        _ => {
            let _ = s;
            Err(Error::BackingMismatch("matching"))
        }
    }
}

/// Orthonormal basis of the restriction of a local space to one atom,
/// expressed in adapted-basis coordinates.
#[derive(Debug, Clone)]
pub struct AtomBasis {
    pub hull: (f64, f64),
    /// `rank` rows; row `i` holds the adapted coordinates of `e_i`.
    pub onb: Vec<Vec<f64>>,
    /// `dim x rank`: inner products of raw basis functions with the `e_j`.
    pub raw_in_onb: Vec<Vec<f64>>,
    /// Integrals of the `e_i` over the atom.
    pub moments: Vec<f64>,
    pub rank: usize,
}

/// Relative rank threshold in the per-atom Gram factorization.
pub const RANK_TOL: f64 = 1e-10;

/// Gram matrix of the adapted raw basis over an atom.
pub fn gram_matrix(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    support: &Support,
) -> Result<Vec<Vec<f64>>> {
    let k = s.dim();
    let hull = atom_hull(space, support);
    let pdeg = s.poly_degree().map(|d| 2 * d);
    let mut g = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = integrate_products(
                space,
                s,
                support,
                &|x, p| s.eval_basis(hull, i, x, p) * s.eval_basis(hull, j, x, p),
                pdeg,
            )?;
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(g)
}

/// Builds the atom's orthonormal basis by modified Gram-Schmidt in
/// coefficient space with one reorthogonalization pass. Directions whose
/// residual falls below `RANK_TOL` of the basis scale are dropped, so the
/// rank is detected rather than assumed.
pub fn atom_basis(space: &ProbabilitySpace, s: &LocalSpace, support: &Support) -> Result<AtomBasis> {
    let k = s.dim();
    let hull = atom_hull(space, support);
    let g = gram_matrix(space, s, support)?;
    let scale = g
        .iter()
        .enumerate()
        .map(|(i, row)| row[i].max(0.0).sqrt())
        .fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return Ok(AtomBasis {
            hull,
            onb: Vec::new(),
            raw_in_onb: vec![Vec::new(); k],
            moments: Vec::new(),
            rank: 0,
        });
    }
    let gdot = |u: &[f64], v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                row += g[i][j] * v[j];
            }
            acc += u[i] * row;
        }
        acc
    };
    let mut onb: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        for _ in 0..2 {
            for q in &onb {
                let c = gdot(q, &w);
                for (wj, qj) in w.iter_mut().zip(q) {
                    *wj -= c * qj;
                }
            }
        }
        let n2 = gdot(&w, &w);
        if n2.sqrt() <= RANK_TOL * scale {
            continue;
        }
        let inv = 1.0 / n2.sqrt();
        for wj in &mut w {
            *wj *= inv;
        }
        onb.push(w);
    }
    let rank = onb.len();

    let mut raw_moments = vec![0.0; k];
    let pdeg = s.poly_degree();
    for (i, m) in raw_moments.iter_mut().enumerate() {
        *m = integrate_products(space, s, support, &|x, p| s.eval_basis(hull, i, x, p), pdeg)?;
    }
    let moments: Vec<f64> = onb
        .iter()
        .map(|row| row.iter().zip(&raw_moments).map(|(a, b)| a * b).sum())
        .collect();
    let mut raw_in_onb = vec![vec![0.0; rank]; k];
    for i in 0..k {
        for (j, q) in onb.iter().enumerate() {
            let mut acc = 0.0;
            for l in 0..k {
                acc += g[i][l] * q[l];
            }
            raw_in_onb[i][j] = acc;
        }
    }
    Ok(AtomBasis {
        hull,
        onb,
        raw_in_onb,
        moments,
        rank,
    })
}

impl AtomBasis {
    /// Value of orthonormal function `i` at a site.
    pub fn eval_onb(&self, s: &LocalSpace, i: usize, x: f64, point: Option<usize>) -> f64 {
        eval_local_row(s, self.hull, &self.onb[i], x, point)
    }
}

fn eval_local_row(s: &LocalSpace, hull: (f64, f64), row: &[f64], x: f64, point: Option<usize>) -> f64 {
    row.iter()
        .enumerate()
        .map(|(j, &c)| c * s.eval_basis(hull, j, x, point))
        .sum()
}

/// Sup norm of a member of the local space over an atom, from a
/// family-adaptive grid with one refinement pass.
pub fn sup_norm_local(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    support: &Support,
    hull: (f64, f64),
    coeffs: &[f64],
) -> f64 {
    match (space.backing(), support) {
        (Backing::Discrete { points, .. }, Support::Points(idx)) => idx
            .iter()
            .map(|&i| eval_local_row(s, hull, coeffs, points[i], Some(i)).abs())
            .fold(0.0, f64::max),
        (Backing::Continuous { .. }, Support::Intervals(segs)) => {
            let f = |x: f64| eval_local_row(s, hull, coeffs, x, None);
            let (kind, per_seg) = grid_for(s);
            quad::sup_on_segments(segs, &f, kind, per_seg, true)
        }
        _ => f64::NAN,
    }
}

fn grid_for(s: &LocalSpace) -> (quad::GridKind, usize) {
    match s.poly_degree() {
        Some(_) => (quad::GridKind::Chebyshev, (8 * s.dim()).max(64)),
        None => (quad::GridKind::Uniform, 512),
    }
}

/// Sup norm of a general evaluable function over an atom.
pub fn sup_norm_func(
    space: &ProbabilitySpace,
    support: &Support,
    f: &crate::measure::Func,
    per_seg: usize,
) -> Result<f64> {
    use crate::measure::Func;
    match (space.backing(), support) {
        (Backing::Discrete { points, .. }, Support::Points(idx)) => {
            let mut best = 0.0f64;
            for &i in idx {
                let v = match f {
                    Func::PointValues(v) => v[i],
                    other => other.eval_coord(points[i])?,
                };
                best = best.max(v.abs());
            }
            Ok(best)
        }
        (Backing::Continuous { .. }, Support::Intervals(segs)) => match f {
            Func::PointValues(_) => Err(Error::BackingMismatch("discrete")),
            Func::Poly(c) => {
                let deg = c.len().saturating_sub(1);
                let g = |x: f64| quad::poly_eval(c, x);
                Ok(quad::sup_on_segments(
                    segs,
                    &g,
                    quad::GridKind::Chebyshev,
                    (8 * (deg + 1)).max(64),
                    true,
                ))
            }
            Func::Closure(g) => Ok(quad::sup_on_segments(
                segs,
                &|x| g(x),
                quad::GridKind::Uniform,
                per_seg.max(8),
                true,
            )),
        },
        _ => Err(Error::BackingMismatch("matching")),
    }
}

/// Fraction of the atom where `|f| >= c1 * sup |f|`, for `f` given by adapted
/// coordinates. Returns 1 for the zero function (the bound is vacuous).
pub fn level_fraction(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    support: &Support,
    coeffs: &[f64],
    c1: f64,
) -> Result<f64> {
    let hull = atom_hull(space, support);
    let sup = sup_norm_local(space, s, support, hull, coeffs);
    if sup <= 0.0 {
        return Ok(1.0);
    }
    let t = c1 * sup;
    let total = space.measure(support);
    match (space.backing(), support) {
        (Backing::Discrete { points, masses }, Support::Points(idx)) => {
            let mut hit = 0.0;
            for &i in idx {
                if eval_local_row(s, hull, coeffs, points[i], Some(i)).abs() >= t {
                    hit += masses[i];
                }
            }
            Ok(hit / total)
        }
        (Backing::Continuous { density, .. }, Support::Intervals(segs)) => {
            let f = |x: f64| eval_local_row(s, hull, coeffs, x, None);
            let opts = match s.poly_degree() {
                Some(d) => quad::LevelOpts {
                    grid_per_seg: quad::root_grid_for_degree(d),
                    refine: true,
                },
                None => quad::LevelOpts::default(),
            };
            let m = quad::level_measure_segments(segs, *density, &[&f], t, false, &opts);
            Ok(m / total)
        }
        _ => Err(Error::BackingMismatch("matching")),
    }
}

/// Outcome of an empirical Remez sweep on one atom.
#[derive(Debug, Clone)]
pub struct RemezOutcome {
    /// Smallest level fraction seen at threshold `c1`.
    pub worst_fraction: f64,
    /// Adapted coordinates of the minimizer.
    pub worst_coeffs: Vec<f64>,
    pub checked: usize,
}

/// Chebyshev polynomials `T_0..T_deg` expanded in Legendre coordinates,
/// used as deterministic extremal candidates.
pub fn chebyshev_candidates(deg: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(deg + 1);
    for j in 0..=deg {
        let tj = |u: f64| (j as f64 * u.clamp(-1.0, 1.0).acos()).cos();
        let mut coeffs = vec![0.0; deg + 1];
        for (i, c) in coeffs.iter_mut().enumerate() {
            let integrand = |u: f64| tj(u) * quad::legendre_p(i, u);
            let n = quad::nodes_for_degree(j + i + 2);
            *c = (2.0 * i as f64 + 1.0) / 2.0 * quad::gl_integrate(&integrand, -1.0, 1.0, n);
        }
        out.push(coeffs);
    }
    out
}

/// Stress-tests the level-set inequality at threshold `c1` over random
/// unit-coefficient functions plus deterministic extremal candidates.
pub fn remez_empirical(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    support: &Support,
    c1: f64,
    trials: usize,
    seed: u64,
) -> Result<RemezOutcome> {
    let k = s.dim();
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        candidates.push(v);
    }
    if let Some(d) = s.poly_degree() {
        candidates.extend(chebyshev_candidates(d));
    }
    if k > 1 {
        // alternating-sign combination, a classic near-extremal direction
        let v: Vec<f64> = (0..k)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } / (k as f64).sqrt())
            .collect();
        candidates.push(v);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            for x in &mut v {
                *x /= n;
            }
            candidates.push(v);
        }
    }

    let mut worst_fraction = f64::INFINITY;
    let mut worst_coeffs = Vec::new();
    let mut checked = 0;
    for c in &candidates {
        let frac = level_fraction(space, s, support, c, c1)?;
        checked += 1;
        if frac < worst_fraction {
            worst_fraction = frac;
            worst_coeffs = c.clone();
        }
    }
    Ok(RemezOutcome {
        worst_fraction,
        worst_coeffs,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Segment;
    use std::sync::Arc;

    #[test]
    fn growth_certificates() {
        assert_eq!(remez_constants_from_growth(4.0, 1), (0.125, 0.5));
        let (c1, c2) = remez_constants_from_growth(4.0, 3);
        assert!((c1 - 8.0f64.powi(-3)).abs() < 1e-18);
        assert_eq!(c2, 0.5);
        assert_eq!(remez_constants_from_growth(4.0, 0), (1.0, 0.5));
    }

    #[test]
    fn descriptor_round_trip() {
        for d in ["polynomial:3", "exponential:1,-2", "trigonometric:2", "indicator"] {
            let s = LocalSpace::parse(d).unwrap();
            assert_eq!(s.descriptor(), d);
        }
        assert!(LocalSpace::parse("fourier:2").is_err());
        assert!(LocalSpace::parse("exponential:1,1").is_err());
    }

    #[test]
    fn dims_per_family() {
        assert_eq!(LocalSpace::polynomial(3).dim(), 4);
        assert_eq!(LocalSpace::exponential(vec![1.0, -2.0]).unwrap().dim(), 2);
        assert_eq!(LocalSpace::trigonometric(2).dim(), 5);
        assert_eq!(LocalSpace::indicator().dim(), 1);
    }

    #[test]
    fn constants_meet_their_level_set_fully() {
        let sp = ProbabilitySpace::unit_interval();
        let s = LocalSpace::indicator();
        let sup = Support::Intervals(vec![Segment::new(0.2, 0.7)]);
        let out = remez_empirical(&sp, &s, &sup, 1.0, 5, 7).unwrap();
        assert!((out.worst_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degree_one_certificate_holds_empirically() {
        let sp = ProbabilitySpace::unit_interval();
        let s = LocalSpace::polynomial(1);
        let sup = Support::Intervals(vec![Segment::new(0.1, 0.9)]);
        let out = remez_empirical(&sp, &s, &sup, 1.0 / 16.0, 50, 11).unwrap();
        assert!(out.worst_fraction >= 0.5, "got {}", out.worst_fraction);
    }

    #[test]
    fn aggressive_threshold_fails_for_cubics() {
        let sp = ProbabilitySpace::unit_interval();
        let s = LocalSpace::polynomial(3);
        let sup = Support::Intervals(vec![Segment::new(0.0, 1.0)]);
        // target fraction 0.5 at threshold 0.9 is impossible for T_3
        let out = remez_empirical(&sp, &s, &sup, 0.9, 10, 3).unwrap();
        assert!(out.worst_fraction < 0.3, "got {}", out.worst_fraction);
    }

    #[test]
    fn atom_basis_is_orthonormal() {
        let sp = ProbabilitySpace::unit_interval();
        for s in [
            LocalSpace::polynomial(3),
            LocalSpace::exponential(vec![1.0, -2.0]).unwrap(),
            LocalSpace::trigonometric(1),
        ] {
            let sup = Support::Intervals(vec![Segment::new(0.3, 0.45)]);
            let basis = atom_basis(&sp, &s, &sup).unwrap();
            assert_eq!(basis.rank, s.dim());
            let g = gram_matrix(&sp, &s, &sup).unwrap();
            for i in 0..basis.rank {
                for j in 0..basis.rank {
                    let mut acc = 0.0;
                    for a in 0..s.dim() {
                        for b in 0..s.dim() {
                            acc += basis.onb[i][a] * g[a][b] * basis.onb[j][b];
                        }
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (acc - want).abs() < 1e-10,
                        "family {} entry ({i},{j}) = {acc}",
                        s.descriptor()
                    );
                }
            }
        }
    }

    #[test]
    fn rank_drops_on_single_point_atom() {
        let sp = ProbabilitySpace::discrete(&[0.0, 1.0, 2.0], &[0.2, 0.3, 0.5]).unwrap();
        let s = LocalSpace::polynomial(3);
        let basis = atom_basis(&sp, &s, &Support::Points(vec![1])).unwrap();
        assert_eq!(basis.rank, 1);
        let full = atom_basis(&sp, &s, &Support::Points(vec![0, 1, 2])).unwrap();
        assert_eq!(full.rank, 3);
    }

    #[test]
    fn mean_vs_sup_comparability() {
        let sp = Arc::new(ProbabilitySpace::unit_interval());
        let s = LocalSpace::polynomial(2);
        let sup_set = Support::Intervals(vec![Segment::new(0.25, 0.8)]);
        let (c1, c2) = remez_constants_from_growth(4.0, 2);
        let hull = atom_hull(&sp, &sup_set);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let coeffs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sup = sup_norm_local(&sp, &s, &sup_set, hull, &coeffs);
            let f = |x: f64| eval_local_row(&s, hull, &coeffs, x, None);
            let mean = quad::integrate_abs_piecewise_smooth(&f, 0.25, 0.8, 64, Some(2)).unwrap()
                / 0.55;
            assert!(mean <= sup * (1.0 + 1e-9));
            assert!(c1 * c2 * sup <= mean * (1.0 + 1e-9));
        }
    }

    #[test]
    fn sup_norm_of_t5_on_symmetric_interval() {
        let sp = ProbabilitySpace::continuous(&[(-1.0, 1.0)]).unwrap();
        let f = crate::measure::Func::Poly(vec![0.0, 5.0, 0.0, -20.0, 0.0, 16.0]);
        let sup = Support::Intervals(vec![Segment::new(-1.0, 1.0)]);
        let got = sup_norm_func(&sp, &sup, &f, 512).unwrap();
        assert!((got - 1.0).abs() < 1e-8);
    }

    #[test]
    fn chebyshev_candidates_reproduce_t2() {
        // T_2 = (4 P_2 - 1 P_0) / 3
        let cands = chebyshev_candidates(2);
        let t2 = &cands[2];
        assert!((t2[0] + 1.0 / 3.0).abs() < 1e-12);
        assert!((t2[1]).abs() < 1e-12);
        assert!((t2[2] - 4.0 / 3.0).abs() < 1e-12);
    }
}
