//! Measured `L^p` constants of a built system: unconditionality over sign
//! flips, weak-type tails of the signed maximal function, square-function
//! equivalence, democracy of the normalized elements, greedy versus best
//! m-term approximation, and a refinement-driven density experiment.
//!
//! Everything here measures; nothing asserts. The acceptance suite pins
//! which measured values count as pass or fail.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::measure::{
    canonicalize, AtomId, Backing, Cut, Filtration, Func, ProbabilitySpace, Segment,
};
use crate::ortho::{ChainPolicy, LeafFn, OrthoSystem};
use crate::quad::{self, LevelOpts, QuadratureRule};
use crate::space::LocalSpace;

/// Exhaustive sign enumeration is used up to this many elements.
pub const EXHAUSTIVE_LIMIT: usize = 12;

const ASCENT_SWEEPS: usize = 5;

/// How a sign pattern was produced.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum SignMode {
    Exhaustive,
    Random(u64),
    AdversarialGreedy,
}

/// A choice of sign for every element of the system.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SignPattern {
    pub signs: Vec<i8>,
    pub mode: SignMode,
}

impl SignPattern {
    pub fn new(signs: Vec<i8>, mode: SignMode) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter("signs must be +1 or -1".into()));
        }
        Ok(SignPattern { signs, mode })
    }

    pub fn all_plus(len: usize) -> Self {
        SignPattern {
            signs: vec![1; len],
            mode: SignMode::Exhaustive,
        }
    }

    pub fn random<R: Rng>(len: usize, rng: &mut R, seed: u64) -> Self {
        SignPattern {
            signs: (0..len).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
            mode: SignMode::Random(seed),
        }
    }
}

/// The function or index set that attained a measured constant.
#[derive(Debug, Clone, serde::Serialize)]
pub enum Witness {
    /// Expansion coefficients of the extremal function and the signs
    /// applied to its terms.
    Signed {
        coeffs: Vec<f64>,
        pattern: SignPattern,
    },
    /// The extremal index set.
    IndexSet { indices: Vec<usize> },
    /// Expansion coefficients of the extremal function.
    Function { coeffs: Vec<f64> },
}

/// Best constant seen over a batch of trials, and what produced it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConstantReport {
    pub constant: f64,
    /// Number of (function, pattern) evaluations behind the maximum.
    pub trials: usize,
    pub witness: Witness,
    /// Stamped by the caller that owns the run configuration.
    pub config_hash: String,
}

impl ConstantReport {
    pub fn with_hash(mut self, hash: &str) -> Self {
        hash.clone_into(&mut self.config_hash);
        self
    }
}

fn check_p_range(p: f64) -> Result<()> {
    if !(p > 1.0) || p.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "exponent {p} outside (1, inf)"
        )));
    }
    Ok(())
}

fn signed_combine(sys: &OrthoSystem, coef: &[f64], signs: &[i8]) -> LeafFn {
    let weights: Vec<f64> = coef
        .iter()
        .zip(signs)
        .map(|(&c, &s)| c * f64::from(s))
        .collect();
    sys.combine(&weights)
}

/// Largest `L^p` norm of a sign-flipped expansion of unit-norm functions.
///
/// Draws `trials` random functions with unit `p`-norm. For systems of at
/// most [`EXHAUSTIVE_LIMIT`] elements every sign pattern is tried (up to
/// the global flip, which never changes the norm); larger systems get the
/// all-plus pattern, `patterns` random ones, and a coordinate-ascent climb
/// from the best of those.
pub fn unconditionality_constant(
    sys: &OrthoSystem,
    p: f64,
    trials: usize,
    seed: u64,
    patterns: usize,
) -> Result<ConstantReport> {
    check_p_range(p)?;
    let total = sys.len();
    if total == 0 {
        return Err(Error::InvalidParameter("empty system".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    let mut evals = 0usize;

    for _ in 0..trials.max(1) {
        let mut f = sys.random_fn(&mut rng);
        let norm = sys.norm(&f, p)?;
        f.scale(1.0 / norm);
        let coef = sys.expand(&f);

        let (local_best, local_signs, local_mode) = if total <= EXHAUSTIVE_LIMIT {
            let mut signs = vec![1i8; total];
            let mut g = signed_combine(sys, &coef, &signs);
            let mut top = sys.norm(&g, p)?;
            let mut top_signs = signs.clone();
            evals += 1;
            for k in 1u64..(1u64 << (total - 1)) {
                let flip = k.trailing_zeros() as usize + 1;
                signs[flip] = -signs[flip];
                g.add_scaled(sys.leaf_form(flip + 1), 2.0 * coef[flip] * f64::from(signs[flip]));
                let norm = sys.norm(&g, p)?;
                evals += 1;
                if norm > top {
                    top = norm;
                    top_signs = signs.clone();
                }
            }
            (top, top_signs, SignMode::Exhaustive)
        } else {
            let mut top = f64::NEG_INFINITY;
            let mut top_signs = vec![1i8; total];
            let mut mode = SignMode::Random(seed);
            for i in 0..patterns.max(1000) + 1 {
                let signs = if i == 0 {
                    vec![1i8; total]
                } else {
                    SignPattern::random(total, &mut rng, seed).signs
                };
                let norm = sys.norm(&signed_combine(sys, &coef, &signs), p)?;
                evals += 1;
                if norm > top {
                    top = norm;
                    top_signs = signs;
                }
            }
            let mut g = signed_combine(sys, &coef, &top_signs);
            for _ in 0..ASCENT_SWEEPS {
                let mut improved = false;
                for m in 0..total {
                    top_signs[m] = -top_signs[m];
                    g.add_scaled(
                        sys.leaf_form(m + 1),
                        2.0 * coef[m] * f64::from(top_signs[m]),
                    );
                    let norm = sys.norm(&g, p)?;
                    evals += 1;
                    if norm > top {
                        top = norm;
                        improved = true;
                        mode = SignMode::AdversarialGreedy;
                    } else {
                        top_signs[m] = -top_signs[m];
                        g.add_scaled(
                            sys.leaf_form(m + 1),
                            2.0 * coef[m] * f64::from(top_signs[m]),
                        );
                    }
                }
                if !improved {
                    break;
                }
            }
            (top, top_signs, mode)
        };

        if local_best > best {
            best = local_best;
            witness = Some(Witness::Signed {
                coeffs: coef,
                pattern: SignPattern::new(local_signs, local_mode)?,
            });
        }
    }

    Ok(ConstantReport {
        constant: best,
        trials: evals,
        witness: witness.expect("at least one trial ran"),
        config_hash: String::new(),
    })
}

/// Geometric grid of `n` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo, "grid wants 0 < lo < hi, n >= 2");
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// The 64-point threshold grid spanning three decades either side of the
/// function's mass.
pub fn default_lambda_grid(norm_l1: f64) -> Vec<f64> {
    geometric_grid(1e-3 * norm_l1, 1e3 * norm_l1, 64)
}

/// Weak-type measurement: the worst `lambda * P(sup_m |f~_m| > lambda)`
/// over the grid, normalized by the mass of `f`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WeakTypeReport {
    pub ratio: f64,
    pub worst_lambda: f64,
    pub norm_f_l1: f64,
    /// `(lambda, tail probability)` pairs over the grid.
    pub curve: Vec<(f64, f64)>,
}

/// Tail bound for the signed partial sums `f~_m = sum_{j<=m} eps_j df_j`.
///
/// The tail probability is resolved exactly on leaves for discrete
/// backings and constant profiles; other families fall back to root-refined
/// measurement of each leaf's finitely many distinct partial sums.
pub fn weak_type_ratio(
    sys: &OrthoSystem,
    f: &LeafFn,
    signs: &[i8],
    grid: &[f64],
) -> Result<WeakTypeReport> {
    if signs.len() != sys.len() {
        return Err(Error::InvalidParameter(format!(
            "{} signs for {} elements",
            signs.len(),
            sys.len()
        )));
    }
    if signs.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidParameter("signs must be +1 or -1".into()));
    }
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("thresholds must be positive".into()));
    }
    let norm_f_l1 = sys.norm(f, 1.0)?;
    let coef = sys.expand(f);
    let filt = sys.filtration();
    let leaves = filt.leaves();

    // Distinct partial sums per leaf: the prefix only changes at elements
    // whose rows touch the leaf.
    let mut stages: Vec<Vec<Vec<f64>>> = leaves.iter().map(|_| Vec::new()).collect();
    let mut current = sys.zero_fn();
    for m in 1..=sys.len() {
        let w = coef[m - 1] * f64::from(signs[m - 1]);
        if w == 0.0 {
            continue;
        }
        let psi = sys.leaf_form(m);
        for (pos, row) in psi.coeffs.iter().enumerate() {
            if row.iter().any(|&c| c != 0.0) {
                for (acc, &r) in current.coeffs[pos].iter_mut().zip(row) {
                    *acc += w * r;
                }
                stages[pos].push(current.coeffs[pos].clone());
            }
        }
    }

    let local = sys.local_space();
    let constant_profile = local.poly_degree() == Some(0);
    let mut tail = vec![0.0; grid.len()];
    match filt.space().backing() {
        Backing::Discrete { points, masses } => {
            for (pos, &leaf) in leaves.iter().enumerate() {
                let basis = sys.basis(leaf);
                for &i in filt.atom(leaf).support.point_indices() {
                    let peak = stages[pos]
                        .iter()
                        .map(|row| {
                            row.iter()
                                .enumerate()
                                .map(|(j, &c)| c * basis.eval_onb(local, j, points[i], Some(i)))
                                .sum::<f64>()
                                .abs()
                        })
                        .fold(0.0f64, f64::max);
                    for (slot, &lambda) in tail.iter_mut().zip(grid) {
                        if peak > lambda {
                            *slot += masses[i];
                        }
                    }
                }
            }
        }
        Backing::Continuous { density, .. } => {
            for (pos, &leaf) in leaves.iter().enumerate() {
                if stages[pos].is_empty() {
                    continue;
                }
                let atom = filt.atom(leaf);
                let basis = sys.basis(leaf);
                let segs = atom.support.segments();
                if constant_profile {
                    let x = 0.5 * (segs[0].a + segs[0].b);
                    let level = basis.eval_onb(local, 0, x, None);
                    let peak = stages[pos]
                        .iter()
                        .map(|row| (row[0] * level).abs())
                        .fold(0.0f64, f64::max);
                    for (slot, &lambda) in tail.iter_mut().zip(grid) {
                        if peak > lambda {
                            *slot += atom.measure;
                        }
                    }
                } else {
                    let fs: Vec<Box<dyn Fn(f64) -> f64>> = stages[pos]
                        .iter()
                        .map(|row| {
                            let row = row.clone();
                            Box::new(move |x: f64| {
                                row.iter()
                                    .enumerate()
                                    .map(|(j, &c)| c * basis.eval_onb(local, j, x, None))
                                    .sum::<f64>()
                            }) as Box<dyn Fn(f64) -> f64>
                        })
                        .collect();
                    let refs: Vec<&dyn Fn(f64) -> f64> =
                        fs.iter().map(|b| b.as_ref() as &dyn Fn(f64) -> f64).collect();
                    let opts = LevelOpts {
                        grid_per_seg: 256,
                        refine: true,
                    };
                    for (slot, &lambda) in tail.iter_mut().zip(grid) {
                        *slot +=
                            quad::level_measure_segments(segs, *density, &refs, lambda, true, &opts);
                    }
                }
            }
        }
    }

    let mut ratio = 0.0;
    let mut worst_lambda = grid[0];
    for (&lambda, &prob) in grid.iter().zip(&tail) {
        let r = if norm_f_l1 > 0.0 {
            lambda * prob / norm_f_l1
        } else {
            0.0
        };
        if r > ratio {
            ratio = r;
            worst_lambda = lambda;
        }
    }
    Ok(WeakTypeReport {
        ratio,
        worst_lambda,
        norm_f_l1,
        curve: grid.iter().copied().zip(tail).collect(),
    })
}

/// The two sides of the square-function comparison for one coefficient
/// vector: the `L^p` norm of `(sum_m |a_m psi_m|^2)^{1/2}`, and the same
/// norm with each `|psi_m|^2` replaced by the indicator of the small child
/// over its measure.
pub fn square_function_sides(sys: &OrthoSystem, coeffs: &[f64], p: f64) -> Result<(f64, f64)> {
    check_p_range(p)?;
    if coeffs.len() != sys.len() {
        return Err(Error::InvalidParameter(format!(
            "{} coefficients for {} elements",
            coeffs.len(),
            sys.len()
        )));
    }
    let filt = sys.filtration();
    let leaves = filt.leaves();
    let mut pos_of = vec![usize::MAX; filt.atom_count()];
    for (i, &l) in leaves.iter().enumerate() {
        pos_of[l.index()] = i;
    }

    // Flat side: coefficient mass spread over small children, constant on
    // every leaf, so the norm is a finite sum.
    let mut mass = vec![0.0; leaves.len()];
    for (m, &a) in (1..=sys.len()).zip(coeffs) {
        if a == 0.0 {
            continue;
        }
        let level = sys.item(m).info.level;
        let (members, weight) = if level == 0 {
            (leaves.to_vec(), filt.atom(AtomId(0)).measure)
        } else {
            let split = &filt.splits()[level - 1];
            (filt.leaves_under(split.small), filt.atom(split.small).measure)
        };
        for l in members {
            mass[pos_of[l.index()]] += a * a / weight;
        }
    }
    let flat: f64 = leaves
        .iter()
        .zip(&mass)
        .map(|(&l, &q)| q.powf(p / 2.0) * filt.atom(l).measure)
        .sum::<f64>()
        .powf(1.0 / p);

    // Profile side: integrate (sum of squared terms)^{p/2} leaf by leaf.
    let local = sys.local_space();
    let even_power = (p.round() - p).abs() < 1e-12 && (p.round() as i64) % 2 == 0;
    let mut acc = 0.0;
    for (pos, &leaf) in leaves.iter().enumerate() {
        let rows: Vec<Vec<f64>> = (1..=sys.len())
            .filter(|&m| coeffs[m - 1] != 0.0)
            .filter_map(|m| {
                let row = &sys.leaf_form(m).coeffs[pos];
                if row.iter().any(|&c| c != 0.0) {
                    Some(row.iter().map(|&c| c * coeffs[m - 1]).collect())
                } else {
                    None
                }
            })
            .collect();
        if rows.is_empty() {
            continue;
        }
        let atom = filt.atom(leaf);
        let basis = sys.basis(leaf);
        let square_sum = |x: f64, point: Option<usize>| {
            let bvals: Vec<f64> = (0..basis.rank)
                .map(|j| basis.eval_onb(local, j, x, point))
                .collect();
            rows.iter()
                .map(|row| {
                    let v: f64 = row.iter().zip(&bvals).map(|(&c, &b)| c * b).sum();
                    v * v
                })
                .sum::<f64>()
        };
        match filt.space().backing() {
            Backing::Discrete { points, masses } => {
                for &i in atom.support.point_indices() {
                    acc += masses[i] * square_sum(points[i], Some(i)).powf(p / 2.0);
                }
            }
            Backing::Continuous { density, .. } => {
                let segs = atom.support.segments();
                if let (Some(d), true) = (local.poly_degree(), even_power) {
                    let nodes = quad::nodes_for_degree(d * p.round() as usize);
                    let rule = QuadratureRule::for_segments(segs, *density, nodes);
                    let half = (p.round() as i32) / 2;
                    acc += rule.apply(|x| square_sum(x, None).powi(half));
                } else {
                    for seg in segs {
                        let g = |x: f64| square_sum(x, None).powf(p / 2.0);
                        acc += *density * quad::adaptive_simpson(&g, seg.a, seg.b, quad::DEFAULT_TOL)?;
                    }
                }
            }
        }
    }
    Ok((acc.powf(1.0 / p), flat))
}

/// Smallest and largest profile-to-flat ratio over random coefficient
/// draws on the unit sphere.
pub fn square_function_equivalence(
    sys: &OrthoSystem,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_p_range(p)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for _ in 0..trials.max(1) {
        let mut coeffs: Vec<f64>;
        loop {
            coeffs = (0..sys.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scale: f64 = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
            if scale > 1e-6 {
                for c in &mut coeffs {
                    *c /= scale;
                }
                break;
            }
        }
        let (profile, flat) = square_function_sides(sys, &coeffs, p)?;
        if flat > 0.0 {
            let r = profile / flat;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    Ok((lo, hi))
}

/// `|sum_{m in set} psi_m / |psi_m|_p|_p / (#set)^{1/p}`: how far the
/// normalized elements are from behaving like a democratic basis.
pub fn democracy_ratio(sys: &OrthoSystem, p: f64, indices: &[usize]) -> Result<f64> {
    check_p_range(p)?;
    if indices.is_empty() {
        return Err(Error::InvalidParameter("empty index set".into()));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("repeated index".into()));
    }
    let mut acc = sys.zero_fn();
    for &m in indices {
        if m == 0 || m > sys.len() {
            return Err(Error::IndexOutOfRange(format!("element {m}")));
        }
        let norm = sys.norm(sys.leaf_form(m), p)?;
        acc.add_scaled(sys.leaf_form(m), 1.0 / norm);
    }
    Ok(sys.norm(&acc, p)? / (indices.len() as f64).powf(1.0 / p))
}

/// Measured against predicted `p`-norm of one element.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PsiNormReport {
    pub measured: f64,
    /// `|A'|^{1/p - 1/2}` for the small child of the element's split; the
    /// whole space for root-block elements.
    pub predicted: f64,
    pub ratio: f64,
}

pub fn p_norm_of_psi(sys: &OrthoSystem, m: usize, p: f64) -> Result<PsiNormReport> {
    if m == 0 || m > sys.len() {
        return Err(Error::IndexOutOfRange(format!("element {m}")));
    }
    if !(p > 0.0) || p.is_infinite() {
        return Err(Error::InvalidParameter(format!("exponent {p}")));
    }
    let filt = sys.filtration();
    let level = sys.item(m).info.level;
    let small = if level == 0 {
        filt.atom(AtomId(0)).measure
    } else {
        filt.atom(filt.splits()[level - 1].small).measure
    };
    let measured = sys.norm(sys.leaf_form(m), p)?;
    let predicted = small.powf(1.0 / p - 0.5);
    Ok(PsiNormReport {
        measured,
        predicted,
        ratio: measured / predicted,
    })
}

/// Greedy m-term approximation against the best subset of the same size.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ApproxReport {
    pub greedy_error: f64,
    pub best_error: f64,
    pub ratio: f64,
    /// Whether `best_error` came from the full subset search. When false
    /// it is the L2 thresholding value, a valid floor only for `p >= 2`.
    pub exhaustive: bool,
    /// 1-based indices the greedy rule selected, in selection order.
    pub greedy_set: Vec<usize>,
}

fn best_subset_error(
    sys: &OrthoSystem,
    coef: &[f64],
    p: f64,
    choose: usize,
    start: usize,
    residual: &mut LeafFn,
    best: &mut f64,
) -> Result<()> {
    if choose == 0 {
        let err = sys.norm(residual, p)?;
        if err < *best {
            *best = err;
        }
        return Ok(());
    }
    for j in start..=(sys.len() - choose) {
        residual.add_scaled(sys.leaf_form(j + 1), -coef[j]);
        best_subset_error(sys, coef, p, choose - 1, j + 1, residual, best)?;
        residual.add_scaled(sys.leaf_form(j + 1), coef[j]);
    }
    Ok(())
}

/// Compares the greedy rule (keep the `m` terms of largest `|c_j| |psi_j|_p`)
/// with the best `m`-term expansion. The subset search is exhaustive for
/// systems of at most 16 elements.
pub fn greedy_vs_best(sys: &OrthoSystem, f: &LeafFn, m: usize, p: f64) -> Result<ApproxReport> {
    check_p_range(p)?;
    let total = sys.len();
    if m > total {
        return Err(Error::IndexOutOfRange(format!(
            "{m} terms from {total} elements"
        )));
    }
    let coef = sys.expand(f);
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(total);
    for j in 0..total {
        let score = coef[j].abs() * sys.norm(sys.leaf_form(j + 1), p)?;
        scored.push((j, score));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let greedy_set: Vec<usize> = scored[..m].iter().map(|&(j, _)| j + 1).collect();

    let mut residual = f.clone();
    for &j in &greedy_set {
        residual.add_scaled(sys.leaf_form(j), -coef[j - 1]);
    }
    let greedy_error = sys.norm(&residual, p)?;

    let (best_error, exhaustive) = if total <= 16 {
        let mut best = f64::INFINITY;
        let mut work = f.clone();
        best_subset_error(sys, &coef, p, m, 0, &mut work, &mut best)?;
        (best, true)
    } else {
        let mut squares: Vec<f64> = coef.iter().map(|c| c * c).collect();
        squares.sort_by(|a, b| b.total_cmp(a));
        (squares[m..].iter().sum::<f64>().sqrt(), false)
    };

    let ratio = if best_error > 1e-14 {
        greedy_error / best_error
    } else if greedy_error <= 1e-14 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(ApproxReport {
        greedy_error,
        best_error,
        ratio,
        exhaustive,
        greedy_set,
    })
}

/// How the filtration is refined between rounds of the density experiment.
#[derive(Debug, Clone)]
pub enum RefinePolicy {
    /// Every leaf is bisected each round.
    Dyadic,
    /// One leaf per round: the first whose interior holds an endpoint of
    /// the target set.
    Boundary,
    /// One uniformly chosen leaf per round, cut at a random interior spot.
    Random(u64),
}

impl RefinePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "dyadic" {
            return Ok(RefinePolicy::Dyadic);
        }
        if s == "boundary" {
            return Ok(RefinePolicy::Boundary);
        }
        if let Some(seed) = s.strip_prefix("random:") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("refine policy {s:?}")))?;
            return Ok(RefinePolicy::Random(seed));
        }
        Err(Error::InvalidParameter(format!("refine policy {s:?}")))
    }

    pub fn descriptor(&self) -> String {
        match self {
            RefinePolicy::Dyadic => "dyadic".into(),
            RefinePolicy::Boundary => "boundary".into(),
            RefinePolicy::Random(seed) => format!("random:{seed}"),
        }
    }
}

fn refine_once(
    filt: &mut Filtration,
    policy: &RefinePolicy,
    target: &[Segment],
    rng: &mut ChaCha20Rng,
) -> Result<usize> {
    let discrete = filt.space().is_discrete();
    match policy {
        RefinePolicy::Dyadic => {
            let mut made = 0;
            for leaf in filt.leaves().to_vec() {
                if discrete {
                    let idx = filt.atom(leaf).support.point_indices().to_vec();
                    if idx.len() >= 2 {
                        filt.split(leaf, Cut::TakePoints(idx[..idx.len() / 2].to_vec()))?;
                        made += 1;
                    }
                } else {
                    let (a, b) = filt.atom(leaf).support.hull().unwrap();
                    if b - a > 1e-12 {
                        filt.split(leaf, Cut::At(0.5 * (a + b)))?;
                        made += 1;
                    }
                }
            }
            Ok(made)
        }
        RefinePolicy::Boundary => {
            if discrete {
                return Err(Error::BackingMismatch("continuous"));
            }
            let depth = filt.depth();
            for seg in target {
                for t in [seg.a, seg.b] {
                    let Ok(leaf) = filt.atom_at(depth, crate::measure::Site::Coord(t)) else {
                        continue;
                    };
                    let (a, b) = filt.atom(leaf).support.hull().unwrap();
                    if t - a > 1e-12 && b - t > 1e-12 {
                        filt.split(leaf, Cut::At(0.5 * (a + b)))?;
                        return Ok(1);
                    }
                }
            }
            Ok(0)
        }
        RefinePolicy::Random(_) => {
            let leaves = filt.leaves().to_vec();
            let candidates: Vec<AtomId> = leaves
                .into_iter()
                .filter(|&l| {
                    if discrete {
                        filt.atom(l).support.point_indices().len() >= 2
                    } else {
                        let (a, b) = filt.atom(l).support.hull().unwrap();
                        b - a > 1e-9
                    }
                })
                .collect();
            if candidates.is_empty() {
                return Ok(0);
            }
            let leaf = candidates[rng.gen_range(0..candidates.len())];
            if discrete {
                let idx = filt.atom(leaf).support.point_indices().to_vec();
                let k = rng.gen_range(1..idx.len());
                filt.split(leaf, Cut::TakePoints(idx[..k].to_vec()))?;
            } else {
                let (a, b) = filt.atom(leaf).support.hull().unwrap();
                let frac = rng.gen_range(0.25..0.75);
                filt.split(leaf, Cut::At(a + frac * (b - a)))?;
            }
            Ok(1)
        }
    }
}

/// Approximation error of the target indicator under progressive
/// refinement: entry `k` is `|1_A - P 1_A|_p` after `k` rounds. One round
/// bisects every leaf for the dyadic policy and makes a single split
/// otherwise; when no further split is possible the last error repeats.
pub fn density_experiment(
    space: Arc<ProbabilitySpace>,
    local: Arc<LocalSpace>,
    target: &[Segment],
    policy: &RefinePolicy,
    rounds: usize,
    p: f64,
) -> Result<Vec<f64>> {
    let target = canonicalize(target.to_vec());
    let point_indicator = match space.backing() {
        Backing::Discrete { points, .. } => Some(Func::PointValues(
            points
                .iter()
                .map(|&x| {
                    if target.iter().any(|s| s.a <= x && x < s.b) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        )),
        Backing::Continuous { .. } => None,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(match policy {
        RefinePolicy::Random(seed) => *seed,
        _ => 0,
    });

    let error_now = |filt: &Filtration| -> Result<f64> {
        let sys = OrthoSystem::build(
            Arc::new(filt.clone()),
            Arc::clone(&local),
            ChainPolicy::SmallFirst,
        )?;
        match &point_indicator {
            Some(pv) => {
                let g = sys.from_func(pv)?;
                sys.lp_error_func(&g, pv, p)
            }
            None => {
                let g = sys.from_indicator(&target)?;
                sys.lp_error_indicator(&g, &target, p)
            }
        }
    };

    let mut filt = Filtration::new(Arc::clone(&space));
    let mut errs = Vec::with_capacity(rounds + 1);
    errs.push(error_now(&filt)?);
    for _ in 0..rounds {
        if refine_once(&mut filt, policy, &target, &mut rng)? == 0 {
            let last = *errs.last().unwrap();
            while errs.len() < rounds + 1 {
                errs.push(last);
            }
            break;
        }
        errs.push(error_now(&filt)?);
    }
    Ok(errs)
}

/// Least-squares slope of `log y` against `log x`, ignoring non-positive
/// entries.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
