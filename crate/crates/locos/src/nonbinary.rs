//! Filtrations whose refinement steps split an atom into more than two
//! children. Each multi-way step is stored in binarized form, peeling the
//! smallest remaining child first, so the whole binary machinery applies
//! to the intermediate atoms. On top of that sit the composed per-group
//! elements, the cross-term condition that governs their unconditionality,
//! and the measure recipes that break it.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::analysis::{ConstantReport, SignMode, SignPattern, Witness};
use crate::error::{Error, Result};
use crate::measure::{
    canonicalize, intersect, subtract, total_len, AtomId, Cut, Filtration, ProbabilitySpace,
    Segment, Support,
};
use crate::ortho::{ChainPolicy, LeafFn, OrthoSystem};
use crate::space::LocalSpace;

/// Default bound on the number of children per split.
pub const DEFAULT_R_MAX: usize = 8;

const NORMALIZATION_TOL: f64 = 1e-12;

/// One multi-way refinement step, recorded against the binary filtration
/// that realizes it.
#[derive(Debug, Clone)]
pub struct RWayGroup {
    pub parent: AtomId,
    /// Binary ids of the children, measure-ascending.
    pub children: Vec<AtomId>,
    /// Index of the first binary split implementing this group; it spans
    /// `children.len() - 1` consecutive splits.
    pub first_binary_split: usize,
    cuts: Vec<Cut>,
}

impl RWayGroup {
    pub fn arity(&self) -> usize {
        self.children.len()
    }
}

/// Filtration whose steps divide one atom into up to `r_max` children.
///
/// Children are ordered by measure, and the stored binary form peels them
/// off in that order, so every intermediate atom is a union of the larger
/// children of its group.
#[derive(Debug, Clone)]
pub struct RWayFiltration {
    binary: Filtration,
    groups: Vec<RWayGroup>,
    r_max: usize,
}

fn first_position(s: &Support) -> f64 {
    match s {
        Support::Intervals(segs) => segs.first().map_or(f64::INFINITY, |s| s.a),
        Support::Points(idx) => idx.first().map_or(f64::INFINITY, |&i| i as f64),
    }
}

fn carve(support: &Support, cut: &Cut, parent: AtomId) -> Result<(Support, Support)> {
    match (support, cut) {
        (Support::Intervals(segs), Cut::At(t)) => {
            let left: Vec<Segment> = segs
                .iter()
                .filter(|s| s.a < *t)
                .map(|s| Segment::new(s.a, s.b.min(*t)))
                .collect();
            let right: Vec<Segment> = segs
                .iter()
                .filter(|s| s.b > *t)
                .map(|s| Segment::new(s.a.max(*t), s.b))
                .collect();
            Ok((
                Support::Intervals(canonicalize(left)),
                Support::Intervals(canonicalize(right)),
            ))
        }
        (Support::Intervals(segs), Cut::Take(taken)) => {
            let taken = canonicalize(taken.clone());
            let inside = intersect(segs, &taken);
            if (total_len(&inside) - total_len(&taken)).abs() > 1e-12 * total_len(&taken) {
                return Err(Error::CutOutsideAtom(parent));
            }
            Ok((
                Support::Intervals(inside),
                Support::Intervals(subtract(segs, &taken)),
            ))
        }
        (Support::Points(idx), Cut::TakePoints(taken)) => {
            let mut taken = taken.clone();
            taken.sort_unstable();
            taken.dedup();
            if taken.iter().any(|i| idx.binary_search(i).is_err()) {
                return Err(Error::CutOutsideAtom(parent));
            }
            let rest: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|i| taken.binary_search(i).is_err())
                .collect();
            Ok((Support::Points(taken), Support::Points(rest)))
        }
        _ => Err(Error::BackingMismatch("matching cut and support")),
    }
}

fn support_cut(current: &Support, part: &Support) -> Cut {
    if let (Support::Intervals(cur), Support::Intervals(ps)) = (current, part) {
        if let (Some(first), Some(last)) = (ps.first(), ps.last()) {
            let left: Vec<Segment> = cur
                .iter()
                .filter(|s| s.a < last.b)
                .map(|s| Segment::new(s.a, s.b.min(last.b)))
                .collect();
            if canonicalize(left) == *ps {
                return Cut::At(last.b);
            }
            let right: Vec<Segment> = cur
                .iter()
                .filter(|s| s.b > first.a)
                .map(|s| Segment::new(s.a.max(first.a), s.b))
                .collect();
            if canonicalize(right) == *ps {
                return Cut::At(first.a);
            }
        }
    }
    match part {
        Support::Intervals(segs) => Cut::Take(segs.to_vec()),
        Support::Points(idx) => Cut::TakePoints(idx.to_vec()),
    }
}

impl RWayFiltration {
    pub fn new(space: Arc<ProbabilitySpace>) -> Self {
        Self::with_r_max(space, DEFAULT_R_MAX)
    }

    pub fn with_r_max(space: Arc<ProbabilitySpace>, r_max: usize) -> Self {
        RWayFiltration {
            binary: Filtration::new(space),
            groups: Vec::new(),
            r_max: r_max.max(2),
        }
    }

    /// Splits a leaf into `cuts.len() + 1` children. The cuts apply in
    /// sequence, each carving its piece out of what the previous cuts left.
    /// Returns the binary atom ids of the children, measure-ascending.
    pub fn split(&mut self, parent: AtomId, cuts: &[Cut]) -> Result<Vec<AtomId>> {
        let r = cuts.len() + 1;
        if cuts.is_empty() || r > self.r_max {
            return Err(Error::InvalidParameter(format!(
                "split into {r} children with r_max {}",
                self.r_max
            )));
        }
        if !self.binary.leaves().contains(&parent) {
            return Err(Error::NotALeaf(parent));
        }
        let mut parts: Vec<Support> = Vec::with_capacity(r);
        let mut rest = self.binary.atom(parent).support.clone();
        for cut in cuts {
            let (part, next) = carve(&rest, cut, parent)?;
            parts.push(part);
            rest = next;
        }
        parts.push(rest);
        let space = Arc::clone(self.binary.space());
        let keyed: Vec<(f64, f64)> = parts
            .iter()
            .map(|s| (space.measure(s), first_position(s)))
            .collect();
        if keyed.iter().any(|&(m, _)| !(m > 0.0)) {
            return Err(Error::DegenerateCut(parent));
        }
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&i, &j| {
            keyed[i]
                .0
                .total_cmp(&keyed[j].0)
                .then(keyed[i].1.total_cmp(&keyed[j].1))
        });

        let first_binary_split = self.binary.depth();
        let mut children = vec![AtomId(0); r];
        let mut current = parent;
        for (step, &pi) in order.iter().take(r - 1).enumerate() {
            let cut = support_cut(&self.binary.atom(current).support, &parts[pi]);
            let (a, b) = self.binary.split(current, cut)?;
            let a_pos = first_position(&self.binary.atom(a).support);
            let (peeled, remainder) = if a_pos == keyed[pi].1 { (a, b) } else { (b, a) };
            children[step] = peeled;
            current = remainder;
        }
        children[r - 1] = current;
        self.groups.push(RWayGroup {
            parent,
            children: children.clone(),
            first_binary_split,
            cuts: cuts.to_vec(),
        });
        Ok(children)
    }

    pub fn space(&self) -> &Arc<ProbabilitySpace> {
        self.binary.space()
    }

    /// The realizing binary filtration, including the peeled intermediate
    /// atoms.
    pub fn binary(&self) -> &Filtration {
        &self.binary
    }

    pub fn groups(&self) -> &[RWayGroup] {
        &self.groups
    }

    /// Number of multi-way steps.
    pub fn depth(&self) -> usize {
        self.groups.len()
    }

    /// Leaves of the finest partition (binary ids).
    pub fn leaves(&self) -> &[AtomId] {
        self.binary.leaves()
    }

    pub fn child_measures(&self, n: usize) -> Result<Vec<f64>> {
        let group = self
            .groups
            .get(n)
            .ok_or_else(|| Error::IndexOutOfRange(format!("group {n}")))?;
        Ok(group
            .children
            .iter()
            .map(|&c| self.binary.atom(c).measure)
            .collect())
    }

    /// One line per step: `n parent_id r cut_1 .. cut_{r-1}`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, g) in self.groups.iter().enumerate() {
            out.push_str(&format!("{} {} {}", n + 1, g.parent, g.arity()));
            for cut in &g.cuts {
                out.push_str(&format!(" {cut}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(space: Arc<ProbabilitySpace>, text: &str) -> Result<Self> {
        let mut rw = RWayFiltration::new(space);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line,
                msg: msg.to_string(),
            };
            let mut parts = trimmed.split_whitespace();
            let n: usize = parts
                .next()
                .ok_or_else(|| err("missing step number"))?
                .parse()
                .map_err(|_| err("bad step number"))?;
            if n != rw.depth() + 1 {
                return Err(err("steps must advance by one"));
            }
            let parent: u32 = parts
                .next()
                .ok_or_else(|| err("missing atom id"))?
                .parse()
                .map_err(|_| err("bad atom id"))?;
            let r: usize = parts
                .next()
                .ok_or_else(|| err("missing arity"))?
                .parse()
                .map_err(|_| err("bad arity"))?;
            let cuts: Vec<Cut> = parts
                .map(|tok| Cut::parse(tok, line))
                .collect::<Result<_>>()?;
            if cuts.len() + 1 != r {
                return Err(err("arity does not match the cut count"));
            }
            if parent as usize >= rw.binary.atom_count() {
                return Err(err("unknown atom id"));
            }
            rw.split(AtomId(parent), &cuts)?;
        }
        Ok(rw)
    }
}

/// The binary filtration realizing the multi-way steps by smallest-atom
/// peeling.
pub fn binarize(rw: &RWayFiltration) -> Filtration {
    rw.binary.clone()
}

/// Level-set constant that survives the peeling: starting from `c2` on
/// the multi-way atoms, the intermediate atoms of an `r`-way group keep
/// the recursed value `d_{r-1}`, where `d_1 = c2` and
/// `d_{j+1} = d_j^2 / (1 + d_j)`.
pub fn remez_recursion(c2: f64, r: usize) -> Result<f64> {
    if !(c2 > 0.0 && c2 <= 1.0) {
        return Err(Error::InvalidParameter(format!("c2 = {c2} outside (0, 1]")));
    }
    if r < 2 {
        return Err(Error::InvalidParameter(format!("arity {r} below 2")));
    }
    let mut d = c2;
    for _ in 0..r - 2 {
        d = d * d / (1.0 + d);
    }
    Ok(d)
}

/// How to fill the coefficient table of a composed element.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientPreset {
    /// Equal weight on every element of the group.
    Uniform,
    /// Half the square mass on the first element of each of the two
    /// smallest children's steps.
    TwoScale,
    /// All mass on the first element of step `mu` (1-based).
    Single(usize),
}

impl CoefficientPreset {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(CoefficientPreset::Uniform);
        }
        if s == "two_scale" {
            return Ok(CoefficientPreset::TwoScale);
        }
        if let Some(mu) = s.strip_prefix("single:") {
            let mu: usize = mu
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("coefficient preset {s:?}")))?;
            return Ok(CoefficientPreset::Single(mu));
        }
        Err(Error::InvalidParameter(format!("coefficient preset {s:?}")))
    }

    pub fn descriptor(&self) -> String {
        match self {
            CoefficientPreset::Uniform => "uniform".into(),
            CoefficientPreset::TwoScale => "two_scale".into(),
            CoefficientPreset::Single(mu) => format!("single:{mu}"),
        }
    }
}

/// An L2-normalized combination of one group's increment elements,
/// orthogonal to everything that precedes the group.
#[derive(Debug, Clone)]
pub struct PsiAn {
    pub group: usize,
    /// `coefficients[mu - 1][l]` weights element `l` of peel step `mu`.
    pub coefficients: Vec<Vec<f64>>,
    form: LeafFn,
}

impl PsiAn {
    pub fn form(&self) -> &LeafFn {
        &self.form
    }
}

/// Orthonormal system over the binarized filtration, with the group
/// structure kept alongside so per-group elements can be composed and
/// measured. Immutable after build and shareable across threads.
pub struct NonbinarySystem {
    rway: RWayFiltration,
    sys: OrthoSystem,
}

impl NonbinarySystem {
    pub fn build(rway: RWayFiltration, local: Arc<LocalSpace>) -> Result<Self> {
        let sys = OrthoSystem::build(
            Arc::new(rway.binary.clone()),
            local,
            ChainPolicy::SmallFirst,
        )?;
        Ok(NonbinarySystem { rway, sys })
    }

    pub fn system(&self) -> &OrthoSystem {
        &self.sys
    }

    pub fn rway(&self) -> &RWayFiltration {
        &self.rway
    }

    pub fn group_count(&self) -> usize {
        self.rway.depth()
    }

    pub fn arity(&self, n: usize) -> Result<usize> {
        self.rway
            .groups
            .get(n)
            .map(RWayGroup::arity)
            .ok_or_else(|| Error::IndexOutOfRange(format!("group {n}")))
    }

    pub fn child_measures(&self, n: usize) -> Result<Vec<f64>> {
        self.rway.child_measures(n)
    }

    /// 1-based element indices spanning the increment of peel step `mu`
    /// (1-based) of group `n`.
    pub fn elements(&self, n: usize, mu: usize) -> Result<Range<usize>> {
        let arity = self.arity(n)?;
        if mu == 0 || mu >= arity {
            return Err(Error::IndexOutOfRange(format!(
                "peel step {mu} of an {arity}-way group"
            )));
        }
        let level = self.rway.groups[n].first_binary_split + mu;
        Ok(self.sys.level_range(level))
    }

    /// Coefficient table of the given shape for group `n`.
    pub fn coefficients(&self, n: usize, preset: &CoefficientPreset) -> Result<Vec<Vec<f64>>> {
        let arity = self.arity(n)?;
        let mut table: Vec<Vec<f64>> = (1..arity)
            .map(|mu| Ok(vec![0.0; self.elements(n, mu)?.len()]))
            .collect::<Result<_>>()?;
        match preset {
            CoefficientPreset::Uniform => {
                let total: usize = table.iter().map(Vec::len).sum();
                if total == 0 {
                    return Err(Error::RankDeficiency {
                        atom: self.rway.groups[n].parent,
                        got: 0,
                        expected: 1,
                    });
                }
                let w = 1.0 / (total as f64).sqrt();
                for row in &mut table {
                    for a in row {
                        *a = w;
                    }
                }
            }
            CoefficientPreset::TwoScale => {
                if arity < 3 || table[0].is_empty() || table[1].is_empty() {
                    return Err(Error::InvalidParameter(
                        "two_scale needs nonempty steps 1 and 2".into(),
                    ));
                }
                let w = 0.5f64.sqrt();
                table[0][0] = w;
                table[1][0] = w;
            }
            CoefficientPreset::Single(mu) => {
                if *mu == 0 || *mu >= arity || table[mu - 1].is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "single preset step {mu} unavailable"
                    )));
                }
                table[mu - 1][0] = 1.0;
            }
        }
        Ok(table)
    }

    /// Composes the group element with the given coefficient table; the
    /// squares must sum to one.
    pub fn compose(&self, n: usize, coefficients: Vec<Vec<f64>>) -> Result<PsiAn> {
        let arity = self.arity(n)?;
        if coefficients.len() != arity - 1 {
            return Err(Error::InvalidParameter(format!(
                "{} coefficient rows for an {arity}-way group",
                coefficients.len()
            )));
        }
        let mut total = 0.0;
        let mut form = self.sys.zero_fn();
        for (i, row) in coefficients.iter().enumerate() {
            let range = self.elements(n, i + 1)?;
            if row.len() != range.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} coefficients for {} elements in step {}",
                    row.len(),
                    range.len(),
                    i + 1
                )));
            }
            for (a, m) in row.iter().zip(range) {
                total += a * a;
                form.add_scaled(self.sys.leaf_form(m), *a);
            }
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidParameter(format!(
                "coefficient square sum {total} is not 1"
            )));
        }
        Ok(PsiAn {
            group: n,
            coefficients,
            form,
        })
    }

    /// Norm of the projection of the composed element onto the span
    /// preceding its group; zero up to roundoff by construction.
    pub fn orthogonality_defect(&self, psi: &PsiAn) -> Result<f64> {
        let first = self.elements(psi.group, 1)?.start;
        Ok(self.sys.project(&psi.form, first - 1).norm2())
    }

    fn restricted_to(&self, form: &LeafFn, atom: AtomId) -> LeafFn {
        let filt = self.sys.filtration();
        let mut keep = vec![false; filt.leaves().len()];
        let mut pos = vec![usize::MAX; filt.atom_count()];
        for (i, &l) in filt.leaves().iter().enumerate() {
            pos[l.index()] = i;
        }
        for l in filt.leaves_under(atom) {
            keep[pos[l.index()]] = true;
        }
        let mut out = form.clone();
        for (row, &k) in out.coeffs.iter_mut().zip(&keep) {
            if !k {
                row.fill(0.0);
            }
        }
        out
    }
}

/// Largest cross term of the `(O_p)` quantity over the given composed
/// elements: coefficient mass of two peel steps weighted by the measure
/// ratio of their children to the powers `1/p - 1/2` and its negative.
pub fn op_condition(nsys: &NonbinarySystem, psis: &[PsiAn], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {p} below 1")));
    }
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let mut worst = 0.0f64;
    for psi in psis {
        let measures = nsys.child_measures(psi.group)?;
        let sums: Vec<f64> = psi
            .coefficients
            .iter()
            .map(|row| row.iter().map(|a| a.abs()).sum())
            .collect();
        for (mu, &su) in sums.iter().enumerate() {
            for (nu, &sv) in sums.iter().enumerate() {
                let val =
                    su * sv * measures[mu].powf(inv_p - 0.5) * measures[nu].powf(0.5 - inv_p);
                worst = worst.max(val);
            }
        }
    }
    Ok(worst)
}

/// `|psi|_p * |psi|_p'` for the composed element; bounded over a family
/// exactly when the family's `(O_p)` constants are.
pub fn norm_product_check(nsys: &NonbinarySystem, psi: &PsiAn, p: f64) -> Result<f64> {
    if !(p > 1.0) || p.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "exponent {p} outside (1, inf)"
        )));
    }
    let sys = nsys.system();
    Ok(sys.norm(&psi.form, p)? * sys.norm(&psi.form, p / (p - 1.0))?)
}

/// Worst pointwise-profile ratio over the children: the sup of the
/// composed element on child `kappa`, scaled by `|A_kappa| / |A_1|^{1/2}`.
/// Families where this stays bounded satisfy the `p = 1` cross-term
/// condition as well.
pub fn sufficient_pointwise_check(nsys: &NonbinarySystem, psi: &PsiAn) -> Result<f64> {
    let group = &nsys.rway.groups[psi.group];
    let smallest = nsys.system().filtration().atom(group.children[0]).measure;
    let mut worst = 0.0f64;
    for &child in &group.children {
        let sup = nsys
            .system()
            .norm(&nsys.restricted_to(&psi.form, child), f64::INFINITY)?;
        let measure = nsys.system().filtration().atom(child).measure;
        worst = worst.max(sup * measure / smallest.sqrt());
    }
    Ok(worst)
}

/// Measured lower bound on the unconditionality constant of expansions
/// in the composed family.
///
/// Two effects feed the bound. Random coefficient draws with random sign
/// flips probe the sign constant directly, and each element contributes
/// its single-term operator ratio, which for one composed element is
/// attained by the dual power of the element itself and equals
/// `|psi|_p * |psi|_p'`. The second effect is what diverges when the
/// cross-term condition fails; the first stays informative when it
/// holds. The witness records whichever probe won: the sign pattern with
/// its per-element coefficients, or the expansion of the extremal
/// element.
pub fn nonbinary_uncond_sweep(
    nsys: &NonbinarySystem,
    psis: &[PsiAn],
    p: f64,
    patterns: usize,
    seed: u64,
) -> Result<ConstantReport> {
    if psis.is_empty() {
        return Err(Error::InvalidParameter("empty element family".into()));
    }
    let sys = nsys.system();
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    for psi in psis {
        let product = norm_product_check(nsys, psi, p)?;
        if product > best {
            best = product;
            witness = Some(Witness::Function {
                coeffs: sys.expand(&psi.form),
            });
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..patterns {
        let coeffs: Vec<f64> = psis
            .iter()
            .map(|_| {
                let c: f64 = rng.gen_range(-1.0..1.0);
                c + c.signum() * 0.05
            })
            .collect();
        let signs: Vec<i8> = psis
            .iter()
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        let mut base = sys.zero_fn();
        let mut flipped = sys.zero_fn();
        for ((psi, &c), &s) in psis.iter().zip(&coeffs).zip(&signs) {
            base.add_scaled(&psi.form, c);
            flipped.add_scaled(&psi.form, c * f64::from(s));
        }
        let denom = sys.norm(&base, p)?;
        if denom <= 1e-14 {
            continue;
        }
        let ratio = sys.norm(&flipped, p)? / denom;
        if ratio > best {
            best = ratio;
            witness = Some(Witness::Signed {
                coeffs,
                pattern: SignPattern::new(signs, SignMode::Random(seed))?,
            });
        }
    }
    Ok(ConstantReport {
        constant: best,
        trials: psis.len() + patterns,
        witness: witness.expect("nonempty family"),
        config_hash: String::new(),
    })
}

/// One three-way split of the unit interval with child measures
/// `(eps, sqrt(eps), 1 - eps - sqrt(eps))`, ascending in that order.
pub fn two_scale_filtration(eps: f64) -> Result<RWayFiltration> {
    let s = eps.sqrt();
    if !(eps > 0.0) || eps >= s || 1.0 - eps - s < s {
        return Err(Error::InvalidParameter(format!(
            "two-scale epsilon {eps} outside (0, 0.17]"
        )));
    }
    let mut rw = RWayFiltration::new(Arc::new(ProbabilitySpace::unit_interval()));
    rw.split(AtomId(0), &[Cut::At(eps), Cut::At(eps + s)])?;
    Ok(rw)
}

fn measure_quantile(support: &Support, q: f64) -> f64 {
    let segs = support.segments();
    let mut remaining = q * total_len(segs);
    for s in segs {
        if remaining <= s.len() {
            return s.a + remaining;
        }
        remaining -= s.len();
    }
    segs.last().map_or(0.0, |s| s.b)
}

fn split_leaf_at_fractions(
    rw: &mut RWayFiltration,
    leaf: AtomId,
    fractions: &[f64],
) -> Result<Vec<AtomId>> {
    let support = rw.binary().atom(leaf).support.clone();
    let cuts: Vec<Cut> = fractions
        .iter()
        .map(|&q| Cut::At(measure_quantile(&support, q)))
        .collect();
    rw.split(leaf, &cuts)
}

/// Random continuous filtration whose every group has child measures
/// within a factor of two of each other.
pub fn comparable_rway(depth: usize, r: usize, seed: u64) -> Result<RWayFiltration> {
    if !(2..=DEFAULT_R_MAX).contains(&r) {
        return Err(Error::InvalidParameter(format!("arity {r}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rw = RWayFiltration::new(Arc::new(ProbabilitySpace::unit_interval()));
    for _ in 0..depth {
        let leaf = *rw
            .leaves()
            .iter()
            .max_by(|&&a, &&b| {
                let (ma, mb) = (rw.binary().atom(a).measure, rw.binary().atom(b).measure);
                ma.total_cmp(&mb)
            })
            .expect("at least the root leaf");
        let fractions: Vec<f64> = (1..r)
            .map(|i| (i as f64 + rng.gen_range(-0.15..0.15)) / r as f64)
            .collect();
        split_leaf_at_fractions(&mut rw, leaf, &fractions)?;
    }
    Ok(rw)
}

/// Random continuous filtration with arities drawn from `2..=r_max` and
/// cut positions at random measure quantiles.
pub fn random_rway(depth: usize, r_max: usize, seed: u64) -> Result<RWayFiltration> {
    if !(2..=DEFAULT_R_MAX).contains(&r_max) {
        return Err(Error::InvalidParameter(format!("r_max {r_max}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rw = RWayFiltration::new(Arc::new(ProbabilitySpace::unit_interval()));
    for _ in 0..depth {
        let leaves = rw.leaves().to_vec();
        let leaf = leaves[rng.gen_range(0..leaves.len())];
        let r = rng.gen_range(2..=r_max);
        let fractions: Vec<f64> = (1..r)
            .map(|i| (i as f64 + rng.gen_range(-0.35..0.35)) / r as f64)
            .collect();
        split_leaf_at_fractions(&mut rw, leaf, &fractions)?;
    }
    Ok(rw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::remez_empirical;

    fn three_way(cuts: [f64; 2]) -> RWayFiltration {
        let mut rw = RWayFiltration::new(Arc::new(ProbabilitySpace::unit_interval()));
        rw.split(AtomId(0), &[Cut::At(cuts[0]), Cut::At(cuts[1])])
            .unwrap();
        rw
    }

    #[test]
    fn children_come_out_measure_ascending() {
        let rw = three_way([0.5, 0.7]);
        let measures = rw.child_measures(0).unwrap();
        assert_eq!(measures.len(), 3);
        assert!((measures[0] - 0.2).abs() < 1e-12);
        assert!((measures[1] - 0.3).abs() < 1e-12);
        assert!((measures[2] - 0.5).abs() < 1e-12);
        let binary = rw.binary();
        assert_eq!(binary.depth(), 2);
        assert!((binary.atom(binary.splits()[0].small).measure - 0.2).abs() < 1e-12);
        assert!((binary.atom(binary.splits()[1].small).measure - 0.3).abs() < 1e-12);
    }

    #[test]
    fn two_way_group_is_one_binary_split() {
        let mut rw = RWayFiltration::new(Arc::new(ProbabilitySpace::unit_interval()));
        rw.split(AtomId(0), &[Cut::At(0.3)]).unwrap();
        assert_eq!(rw.binary().depth(), 1);
        let mut direct = Filtration::new(Arc::new(ProbabilitySpace::unit_interval()));
        direct.split(AtomId(0), Cut::At(0.3)).unwrap();
        assert_eq!(rw.binary().to_text(), direct.to_text());
    }

    #[test]
    fn peeling_a_middle_child_leaves_a_union() {
        let rw = three_way([0.4, 0.5]);
        // children: [0.4, 0.5) with measure 0.1 peels first, leaving the
        // union of the outer pieces as the intermediate atom
        let inter = rw.binary().splits()[0].large;
        let segs = rw.binary().atom(inter).support.segments();
        assert_eq!(segs.len(), 2);
        assert!((rw.binary().atom(inter).measure - 0.9).abs() < 1e-12);
        let measures = rw.child_measures(0).unwrap();
        assert!((measures[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn recursion_values() {
        assert_eq!(remez_recursion(0.5, 2).unwrap(), 0.5);
        assert!((remez_recursion(0.5, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((remez_recursion(0.5, 4).unwrap() - 1.0 / 42.0).abs() < 1e-12);
        assert!(remez_recursion(0.0, 3).is_err());
        assert!(remez_recursion(0.5, 1).is_err());
    }

    #[test]
    fn intermediate_union_passes_recursed_level_bound() {
        let rw = three_way([0.45, 0.55]);
        let inter = rw.binary().splits()[0].large;
        let space = rw.space();
        let local = LocalSpace::polynomial(1);
        let d2 = remez_recursion(0.5, 3).unwrap();
        let outcome = remez_empirical(
            space,
            &local,
            &rw.binary().atom(inter).support,
            0.125,
            200,
            7,
        )
        .unwrap();
        assert!(
            outcome.worst_fraction >= d2,
            "fraction {} below {d2}",
            outcome.worst_fraction
        );
    }

    #[test]
    fn composed_element_is_normalized_and_orthogonal() {
        let rw = comparable_rway(2, 3, 5).unwrap();
        let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::polynomial(1))).unwrap();
        for n in 0..nsys.group_count() {
            let table = nsys.coefficients(n, &CoefficientPreset::Uniform).unwrap();
            let psi = nsys.compose(n, table).unwrap();
            assert!((psi.form().norm2() - 1.0).abs() < 1e-9);
            assert!(nsys.orthogonality_defect(&psi).unwrap() < 1e-10);
        }
    }

    #[test]
    fn compose_rejects_bad_tables() {
        let rw = three_way([0.2, 0.5]);
        let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
        assert!(nsys.compose(0, vec![vec![1.0]]).is_err());
        assert!(nsys.compose(0, vec![vec![0.5], vec![0.5]]).is_err());
        let ok = nsys
            .compose(0, vec![vec![0.5f64.sqrt()], vec![0.5f64.sqrt()]])
            .unwrap();
        assert_eq!(ok.coefficients.len(), 2);
    }

    #[test]
    fn cross_term_is_symmetric_in_dual_exponents() {
        let rw = two_scale_filtration(0.01).unwrap();
        let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
        let table = nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap();
        let psi = nsys.compose(0, table).unwrap();
        let family = [psi];
        for p in [1.0, 1.5, 4.0, f64::INFINITY] {
            let q = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
            let at_p = op_condition(&nsys, &family, p).unwrap();
            let at_q = op_condition(&nsys, &family, q).unwrap();
            assert!((at_p - at_q).abs() < 1e-10, "p={p}: {at_p} vs {at_q}");
        }
        let at_2 = op_condition(&nsys, &family, 2.0).unwrap();
        assert!(at_2 <= 1.0 + 1e-12);
    }

    #[test]
    fn two_scale_family_blows_up_the_norm_product() {
        let mut products = Vec::new();
        let mut conditions = Vec::new();
        for eps in [1e-1, 1e-3, 1e-5] {
            let rw = two_scale_filtration(eps).unwrap();
            let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
            let table = nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap();
            let psi = nsys.compose(0, table).unwrap();
            products.push(norm_product_check(&nsys, &psi, 4.0).unwrap());
            conditions.push(op_condition(&nsys, std::slice::from_ref(&psi), 4.0).unwrap());
        }
        assert!(products[0] < products[1] && products[1] < products[2]);
        assert!(products[2] / products[0] > 2.0);
        assert!(conditions[0] < conditions[1] && conditions[1] < conditions[2]);
    }

    #[test]
    fn single_step_mass_keeps_products_tame() {
        for eps in [1e-2, 1e-4] {
            let rw = two_scale_filtration(eps).unwrap();
            let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
            let table = nsys.coefficients(0, &CoefficientPreset::Single(1)).unwrap();
            let psi = nsys.compose(0, table).unwrap();
            let product = norm_product_check(&nsys, &psi, 4.0).unwrap();
            assert!(product < 3.0, "eps={eps}: {product}");
        }
    }

    #[test]
    fn sweep_reports_the_dual_norm_product() {
        let rw = two_scale_filtration(0.02).unwrap();
        let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
        let table = nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap();
        let psi = nsys.compose(0, table).unwrap();
        let p = 4.0;
        let report = nonbinary_uncond_sweep(&nsys, std::slice::from_ref(&psi), p, 20, 3).unwrap();
        assert!((report.constant - norm_product_check(&nsys, &psi, p).unwrap()).abs() < 1e-12);

        // With a piecewise-constant family the extremal input is exactly
        // representable, so the operator ratio can be cross-checked.
        let sys = nsys.system();
        let q = p / (p - 1.0);
        let mut dual = psi.form().clone();
        let filt = sys.filtration();
        for (pos, &leaf) in filt.leaves().iter().enumerate() {
            let measure = filt.atom(leaf).measure;
            for c in &mut dual.coeffs[pos] {
                if *c != 0.0 {
                    let value = *c / measure.sqrt();
                    *c = value.abs().powf(q - 1.0) * value.signum() * measure.sqrt();
                }
            }
        }
        let inner = dual.dot(psi.form());
        let ratio = inner.abs() * sys.norm(psi.form(), p).unwrap() / sys.norm(&dual, p).unwrap();
        assert!(
            (ratio - report.constant).abs() < 1e-9,
            "{ratio} vs {}",
            report.constant
        );
    }

    #[test]
    fn sweep_on_binary_groups_is_exact_at_p2() {
        let mut rw = RWayFiltration::new(Arc::new(ProbabilitySpace::unit_interval()));
        let children = rw.split(AtomId(0), &[Cut::At(0.5)]).unwrap();
        rw.split(children[0], &[Cut::At(0.25)]).unwrap();
        let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
        let psis: Vec<PsiAn> = (0..nsys.group_count())
            .map(|n| {
                let table = nsys.coefficients(n, &CoefficientPreset::Uniform).unwrap();
                nsys.compose(n, table).unwrap()
            })
            .collect();
        let report = nonbinary_uncond_sweep(&nsys, &psis, 2.0, 50, 9).unwrap();
        assert!((report.constant - 1.0).abs() < 1e-10);
        assert_eq!(report.trials, 52);
    }

    #[test]
    fn sweep_stays_bounded_on_comparable_measures() {
        for depth in [2, 4] {
            let rw = comparable_rway(depth, 3, 17).unwrap();
            let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::polynomial(1))).unwrap();
            let psis: Vec<PsiAn> = (0..nsys.group_count())
                .map(|n| {
                    let table = nsys.coefficients(n, &CoefficientPreset::Uniform).unwrap();
                    nsys.compose(n, table).unwrap()
                })
                .collect();
            let report = nonbinary_uncond_sweep(&nsys, &psis, 3.0, 30, 4).unwrap();
            assert!(report.constant < 8.0, "depth {depth}: {}", report.constant);
        }
    }

    #[test]
    fn pointwise_ratio_diverges_on_the_two_scale_family() {
        let mut ratios = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let rw = two_scale_filtration(eps).unwrap();
            let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
            let table = nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap();
            let psi = nsys.compose(0, table).unwrap();
            ratios.push(sufficient_pointwise_check(&nsys, &psi).unwrap());
        }
        assert!(ratios[0] < ratios[1] && ratios[1] < ratios[2]);
    }

    #[test]
    fn binarized_spans_do_not_depend_on_chain_policy() {
        let rw = random_rway(3, 4, 11).unwrap();
        let filt = Arc::new(binarize(&rw));
        let local = Arc::new(LocalSpace::polynomial(1));
        let a = OrthoSystem::build(Arc::clone(&filt), Arc::clone(&local), ChainPolicy::SmallFirst)
            .unwrap();
        let b = OrthoSystem::build(filt, local, ChainPolicy::Shuffled(3)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let f = a.random_fn(&mut rng);
        for level in 0..=a.level_count() - 1 {
            let pa = a.project(&f, a.through_level(level));
            let pb = b.project(&f, b.through_level(level));
            assert!(pa.minus(&pb).norm2() < 1e-9, "level {level}");
        }
    }

    #[test]
    fn text_round_trip_reproduces_the_binary_form() {
        let rw = random_rway(4, 5, 23).unwrap();
        let text = rw.to_text();
        let back = RWayFiltration::from_text(Arc::clone(rw.space()), &text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.binary().to_text(), rw.binary().to_text());
        assert_eq!(back.depth(), rw.depth());
        for (g, h) in rw.groups().iter().zip(back.groups()) {
            assert_eq!(g.children, h.children);
        }
    }
}
