//! Incremental orthonormal systems attached to a binary filtration.
//!
//! Every refinement step splits one atom, so the space of functions that are
//! locally in the family and measurable at level `n` grows by a small
//! increment supported on the split atom. This module orthonormalizes those
//! increments level by level. The resulting enumeration starts with an
//! orthonormal basis of the root space (the level-0 block) and appends one
//! block per split; indices `m` are 1-based throughout, and `R_m` denotes the
//! orthogonal projection onto the span of the first `m` elements.
//!
//! Internally every function is carried as coefficient vectors over per-atom
//! orthonormal bases, which keeps inner products, 2-norms and conditional
//! means exact up to the quadrature used to assemble the bases themselves.

use std::fmt::Write as _;
use std::ops::Range;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::measure::{
    canonicalize, intersect, subtract, AtomId, Backing, Filtration, Func, PiecewiseConst, Segment,
    Site, Support,
};
use crate::quad;
use crate::space::{
    atom_basis, integrate_products, sup_norm_local, AtomBasis, Family, LocalSpace, RANK_TOL,
};

/// Largest Gram deviation tolerated before the construction is rejected.
pub const ORTHO_TOL: f64 = 1e-8;

/// Order in which raw generators feed the per-split orthonormalization chain.
///
/// A split enlarges the level space by functions on the two children; the
/// chain order decides how the increment basis is threaded through them. All
/// policies span the same increment, so projections at level boundaries do
/// not depend on the choice, while intermediate partial sums do.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ChainPolicy {
    /// Generators of the smaller child first, then the larger child.
    #[default]
    SmallFirst,
    /// The same list walked backwards.
    LargeFirst,
    /// Seeded shuffle of the list, independently per level.
    Shuffled(u64),
}

impl ChainPolicy {
    /// Accepts `default`, `reverse`, or `random:SEED`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "default" {
            return Ok(ChainPolicy::SmallFirst);
        }
        if s == "reverse" {
            return Ok(ChainPolicy::LargeFirst);
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let seed: u64 = rest
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad chain seed {rest:?}")))?;
            return Ok(ChainPolicy::Shuffled(seed));
        }
        Err(Error::InvalidParameter(format!(
            "unknown chain policy {s:?}"
        )))
    }

    pub fn descriptor(&self) -> String {
        match self {
            ChainPolicy::SmallFirst => "default".into(),
            ChainPolicy::LargeFirst => "reverse".into(),
            ChainPolicy::Shuffled(seed) => format!("random:{seed}"),
        }
    }
}

/// Position of one element in the enumeration.
#[derive(Debug, Clone)]
pub struct PsiInfo {
    /// 1-based index in the full enumeration.
    pub m: usize,
    /// Level whose block contains the element (0 for the root block).
    pub level: usize,
    /// 1-based index inside the level block.
    pub j: usize,
    /// Atom refined at this level; the root for the level-0 block.
    pub split_atom: AtomId,
    /// Raw generators of the level consumed up to and including this element,
    /// which pins down the intermediate spans independently of the
    /// orthonormalization itself.
    pub generators_consumed: usize,
}

/// Member of a level space stored as orthonormal coefficients on pairwise
/// disjoint atoms; the function is zero off the listed atoms.
#[derive(Debug, Clone)]
pub struct PiecewiseFunction {
    pub atoms: Vec<AtomId>,
    pub coeffs: Vec<Vec<f64>>,
}

/// One element of the system together with its bookkeeping.
#[derive(Debug, Clone)]
pub struct PsiItem {
    pub info: PsiInfo,
    pub psi: PiecewiseFunction,
}

/// Function resolved on the leaf partition; row `i` holds orthonormal
/// coefficients on the `i`-th leaf of the filtration.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafFn {
    pub coeffs: Vec<Vec<f64>>,
}

impl LeafFn {
    pub fn scale(&mut self, w: f64) {
        for row in &mut self.coeffs {
            for c in row {
                *c *= w;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &LeafFn, w: f64) {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += w * y;
            }
        }
    }

    pub fn minus(&self, other: &LeafFn) -> LeafFn {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    pub fn dot(&self, other: &LeafFn) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| vdot(a, b))
            .sum()
    }

    /// Exact 2-norm, by orthonormality of the per-leaf bases.
    pub fn norm2(&self) -> f64 {
        self.dot(self).max(0.0).sqrt()
    }
}

/// Scaled sup norms of one element over the two children of its split, plus
/// two support diagnostics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PsiBound {
    pub m: usize,
    pub level: usize,
    /// Sup over the smaller child times the square root of its measure.
    pub small_scaled: f64,
    /// Sup over the larger child times `|A| / sqrt(|A'|)` for the split atom `A`.
    pub large_scaled: f64,
    /// Sup of the element over leaves outside the split atom.
    pub outside_sup: f64,
    /// Largest inner product against the basis functions of the previous
    /// partition level, measured by independent quadrature.
    pub prev_ortho: f64,
}

struct Restriction {
    /// `rank(parent) x rank(child)`; row `i` expands the parent basis
    /// function `e_i` restricted to the child in the child's basis.
    to_small: Vec<Vec<f64>>,
    to_large: Vec<Vec<f64>>,
}

/// Orthonormal system of increment blocks over one filtration.
pub struct OrthoSystem {
    filt: Arc<Filtration>,
    local: Arc<LocalSpace>,
    policy: ChainPolicy,
    bases: Vec<AtomBasis>,
    restrict: Vec<Option<Restriction>>,
    leaf_index: Vec<usize>,
    items: Vec<PsiItem>,
    /// `level_start[n]` counts the items in levels below `n`; the last entry
    /// equals the total count.
    level_start: Vec<usize>,
    leaf_psi: Vec<LeafFn>,
    c3_cache: Mutex<Option<f64>>,
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormalizes `generators` against `parent_rows` (assumed orthonormal)
/// and each other, in order, dropping directions already in the span.
/// Returns the accepted rows with the number of generators consumed up to
/// each acceptance.
pub(crate) fn increment_rows(
    parent_rows: &[Vec<f64>],
    generators: &[Vec<f64>],
) -> Vec<(Vec<f64>, usize)> {
    let mut rows: Vec<Vec<f64>> = parent_rows.to_vec();
    let mut out = Vec::new();
    for (gi, gen) in generators.iter().enumerate() {
        let gnorm = vdot(gen, gen).sqrt();
        if gnorm <= 1e-150 {
            continue;
        }
        let mut w = gen.clone();
        for _ in 0..2 {
            for q in &rows {
                let c = vdot(q, &w);
                for (wj, qj) in w.iter_mut().zip(q) {
                    *wj -= c * qj;
                }
            }
        }
        let res = vdot(&w, &w).sqrt();
        if res <= RANK_TOL * gnorm {
            continue;
        }
        let inv = 1.0 / res;
        for wj in &mut w {
            *wj *= inv;
        }
        rows.push(w.clone());
        out.push((w, gi + 1));
    }
    out
}

fn restriction_matrix(
    filt: &Filtration,
    local: &LocalSpace,
    bases: &[AtomBasis],
    parent: AtomId,
    child: AtomId,
) -> Result<Vec<Vec<f64>>> {
    let space = filt.space();
    let bp = &bases[parent.index()];
    let bc = &bases[child.index()];
    let support = &filt.atom(child).support;
    let hint = local.poly_degree().map(|d| 2 * d);
    let mut t = vec![vec![0.0; bc.rank]; bp.rank];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, tij) in row.iter_mut().enumerate() {
            *tij = integrate_products(
                space,
                local,
                support,
                &|x, p| bp.eval_onb(local, i, x, p) * bc.eval_onb(local, j, x, p),
                hint,
            )?;
        }
    }
    Ok(t)
}

impl OrthoSystem {
    /// Builds the system over the whole filtration. Fails if quadrature
    /// degrades, if an increment has unexpected rank, or if the assembled
    /// elements miss orthonormality by more than `ORTHO_TOL`.
    pub fn build(
        filt: Arc<Filtration>,
        local: Arc<LocalSpace>,
        policy: ChainPolicy,
    ) -> Result<Self> {
        if let Family::Custom(rows) = local.family() {
            if !filt.space().is_discrete() {
                return Err(Error::BackingMismatch("discrete"));
            }
            let n = filt.space().point_count();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidParameter(
                    "custom family rows must cover every point".into(),
                ));
            }
        }
        let mut bases = Vec::with_capacity(filt.atom_count());
        for idx in 0..filt.atom_count() {
            let support = &filt.atom(AtomId(idx as u32)).support;
            bases.push(atom_basis(filt.space(), &local, support)?);
        }
        if bases[0].rank == 0 {
            return Err(Error::InvalidParameter(
                "the local family vanishes on the root atom".into(),
            ));
        }
        let mut restrict: Vec<Option<Restriction>> =
            (0..filt.atom_count()).map(|_| None).collect();
        for split in filt.splits() {
            let r = Restriction {
                to_small: restriction_matrix(&filt, &local, &bases, split.parent, split.small)?,
                to_large: restriction_matrix(&filt, &local, &bases, split.parent, split.large)?,
            };
            let rp = bases[split.parent.index()].rank;
            let mut dev = 0.0f64;
            for i in 0..rp {
                for j in 0..=i {
                    let mut s =
                        vdot(&r.to_small[i], &r.to_small[j]) + vdot(&r.to_large[i], &r.to_large[j]);
                    if i == j {
                        s -= 1.0;
                    }
                    dev = dev.max(s.abs());
                }
            }
            if dev > ORTHO_TOL {
                return Err(Error::OrthogonalityLoss(dev));
            }
            restrict[split.parent.index()] = Some(r);
        }
        let mut leaf_index = vec![usize::MAX; filt.atom_count()];
        for (pos, &l) in filt.leaves().iter().enumerate() {
            leaf_index[l.index()] = pos;
        }
        let mut sys = OrthoSystem {
            filt,
            local,
            policy,
            bases,
            restrict,
            leaf_index,
            items: Vec::new(),
            level_start: vec![0],
            leaf_psi: Vec::new(),
            c3_cache: Mutex::new(None),
        };

        let mut items: Vec<PsiItem> = Vec::new();
        let root = AtomId(0);
        let r0 = sys.bases[0].rank;
        for j in 0..r0 {
            let consumed = sys.bases[0].onb[j]
                .iter()
                .rposition(|&c| c != 0.0)
                .map_or(j + 1, |l| l + 1);
            let mut row = vec![0.0; r0];
            row[j] = 1.0;
            if sys.signed_peak(root, &row) < 0.0 {
                row[j] = -1.0;
            }
            items.push(PsiItem {
                info: PsiInfo {
                    m: items.len() + 1,
                    level: 0,
                    j: j + 1,
                    split_atom: root,
                    generators_consumed: consumed,
                },
                psi: PiecewiseFunction {
                    atoms: vec![root],
                    coeffs: vec![row],
                },
            });
        }
        sys.level_start.push(items.len());

        for si in 0..sys.filt.splits().len() {
            let split = sys.filt.splits()[si].clone();
            let rs = sys.bases[split.small.index()].rank;
            let rl = sys.bases[split.large.index()].rank;
            let rp = sys.bases[split.parent.index()].rank;
            let dim = rs + rl;
            let rst = sys.restrict[split.parent.index()].as_ref().unwrap();
            let mut parent_rows = Vec::with_capacity(rp);
            for i in 0..rp {
                let mut w = Vec::with_capacity(dim);
                w.extend_from_slice(&rst.to_small[i]);
                w.extend_from_slice(&rst.to_large[i]);
                parent_rows.push(w);
            }
            let order = sys.policy_order(split.level, split.small, split.large);
            let mut gens = Vec::with_capacity(order.len());
            for &(atom, i) in &order {
                let mut w = vec![0.0; dim];
                let raw = &sys.bases[atom.index()].raw_in_onb[i];
                if atom == split.small {
                    w[..rs].copy_from_slice(raw);
                } else {
                    w[rs..].copy_from_slice(raw);
                }
                gens.push(w);
            }
            let accepted = increment_rows(&parent_rows, &gens);
            if accepted.len() + rp != dim {
                return Err(Error::RankDeficiency {
                    atom: split.parent,
                    got: accepted.len(),
                    expected: dim - rp,
                });
            }
            for (j, (row, consumed)) in accepted.into_iter().enumerate() {
                let mut cs = row[..rs].to_vec();
                let mut cl = row[rs..].to_vec();
                let peak = {
                    let p = sys.signed_peak(split.small, &cs);
                    if p != 0.0 {
                        p
                    } else {
                        sys.signed_peak(split.large, &cl)
                    }
                };
                if peak < 0.0 {
                    for c in cs.iter_mut().chain(cl.iter_mut()) {
                        *c = -*c;
                    }
                }
                items.push(PsiItem {
                    info: PsiInfo {
                        m: items.len() + 1,
                        level: split.level,
                        j: j + 1,
                        split_atom: split.parent,
                        generators_consumed: consumed,
                    },
                    psi: PiecewiseFunction {
                        atoms: vec![split.small, split.large],
                        coeffs: vec![cs, cl],
                    },
                });
            }
            sys.level_start.push(items.len());
        }

        sys.items = items;
        let resolved: Vec<LeafFn> = sys.items.iter().map(|it| sys.resolve(&it.psi)).collect();
        sys.leaf_psi = resolved;
        sys.audit()?;
        Ok(sys)
    }

    fn policy_order(&self, level: usize, small: AtomId, large: AtomId) -> Vec<(AtomId, usize)> {
        let k = self.local.dim();
        let mut order: Vec<(AtomId, usize)> = (0..k)
            .map(|i| (small, i))
            .chain((0..k).map(|i| (large, i)))
            .collect();
        match self.policy {
            ChainPolicy::SmallFirst => {}
            ChainPolicy::LargeFirst => order.reverse(),
            ChainPolicy::Shuffled(seed) => {
                let mix = (level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let mut rng = ChaCha20Rng::seed_from_u64(seed ^ mix);
                order.shuffle(&mut rng);
            }
        }
        order
    }

    /// The policy's generator order for level `n >= 1`, as pairs of child
    /// atom and raw basis index. Together with `generators_consumed` this
    /// reconstructs every intermediate span.
    pub fn generator_sequence(&self, n: usize) -> Result<Vec<(AtomId, usize)>> {
        if n == 0 || n > self.filt.depth() {
            return Err(Error::IndexOutOfRange(format!("level {n}")));
        }
        let split = &self.filt.splits()[n - 1];
        Ok(self.policy_order(split.level, split.small, split.large))
    }

    fn signed_peak(&self, atom: AtomId, row: &[f64]) -> f64 {
        if row.iter().all(|&c| c == 0.0) {
            return 0.0;
        }
        let support = &self.filt.atom(atom).support;
        match self.filt.space().backing() {
            Backing::Discrete { points, .. } => {
                let mut best = 0.0f64;
                for &i in support.point_indices() {
                    let v = self.row_value(atom, row, points[i], Some(i));
                    if v.abs() > best.abs() {
                        best = v;
                    }
                }
                best
            }
            Backing::Continuous { .. } => {
                let per = (32 * row.len().max(2)).max(64);
                let mut best = 0.0f64;
                for seg in support.segments() {
                    for idx in 0..per {
                        let x = seg.a + (seg.b - seg.a) * (idx as f64 + 0.5) / per as f64;
                        let v = self.row_value(atom, row, x, None);
                        if v.abs() > best.abs() {
                            best = v;
                        }
                    }
                }
                best
            }
        }
    }

    fn row_value(&self, atom: AtomId, row: &[f64], x: f64, point: Option<usize>) -> f64 {
        let b = &self.bases[atom.index()];
        row.iter()
            .enumerate()
            .map(|(i, &c)| c * b.eval_onb(&self.local, i, x, point))
            .sum()
    }

    /// Pairwise inner products of elements with overlapping support; pairs on
    /// disjoint branches vanish identically by construction.
    fn audit(&self) -> Result<()> {
        let mut by_atom: Vec<Vec<usize>> = vec![Vec::new(); self.filt.atom_count()];
        for (idx, it) in self.items.iter().enumerate() {
            by_atom[it.info.split_atom.index()].push(idx);
        }
        let mut worst = 0.0f64;
        for (idx, it) in self.items.iter().enumerate() {
            let mut cur = Some(it.info.split_atom);
            while let Some(id) = cur {
                for &other in &by_atom[id.index()] {
                    if other > idx {
                        continue;
                    }
                    let d = self.leaf_psi[idx].dot(&self.leaf_psi[other]);
                    let target = if other == idx { 1.0 } else { 0.0 };
                    worst = worst.max((d - target).abs());
                }
                cur = self.filt.atom(id).parent;
            }
        }
        if worst > ORTHO_TOL {
            return Err(Error::OrthogonalityLoss(worst));
        }
        Ok(())
    }

    pub fn filtration(&self) -> &Arc<Filtration> {
        &self.filt
    }

    pub fn local_space(&self) -> &Arc<LocalSpace> {
        &self.local
    }

    pub fn policy(&self) -> ChainPolicy {
        self.policy
    }

    pub fn basis(&self, atom: AtomId) -> &AtomBasis {
        &self.bases[atom.index()]
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Element `m`, 1-based.
    pub fn item(&self, m: usize) -> &PsiItem {
        assert!(m >= 1 && m <= self.items.len(), "element index {m} out of range");
        &self.items[m - 1]
    }

    pub fn items(&self) -> &[PsiItem] {
        &self.items
    }

    /// Leaf-resolved form of element `m`, 1-based.
    pub fn leaf_form(&self, m: usize) -> &LeafFn {
        assert!(m >= 1 && m <= self.items.len(), "element index {m} out of range");
        &self.leaf_psi[m - 1]
    }

    /// Number of level blocks, including the root block.
    pub fn level_count(&self) -> usize {
        self.level_start.len() - 1
    }

    /// The 1-based element indices of the level-`n` block.
    pub fn level_range(&self, n: usize) -> Range<usize> {
        (self.level_start[n] + 1)..(self.level_start[n + 1] + 1)
    }

    /// Count of elements in levels up to and including `n`.
    pub fn through_level(&self, n: usize) -> usize {
        self.level_start[n + 1]
    }

    /// Level whose block contains element `m`, 1-based.
    pub fn level_of(&self, m: usize) -> usize {
        debug_assert!(m >= 1 && m <= self.items.len());
        self.level_start.partition_point(|&s| s < m) - 1
    }

    pub fn zero_fn(&self) -> LeafFn {
        LeafFn {
            coeffs: self
                .filt
                .leaves()
                .iter()
                .map(|&l| vec![0.0; self.bases[l.index()].rank])
                .collect(),
        }
    }

    /// Random direction on the unit sphere of the leaf space.
    pub fn random_fn<R: Rng>(&self, rng: &mut R) -> LeafFn {
        let total: usize = self
            .filt
            .leaves()
            .iter()
            .map(|&l| self.bases[l.index()].rank)
            .sum();
        if total == 0 {
            return self.zero_fn();
        }
        loop {
            let coeffs: Vec<Vec<f64>> = self
                .filt
                .leaves()
                .iter()
                .map(|&l| {
                    (0..self.bases[l.index()].rank)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect()
                })
                .collect();
            let mut g = LeafFn { coeffs };
            let n = g.norm2();
            if n > 1e-6 {
                g.scale(1.0 / n);
                return g;
            }
        }
    }

    /// Pushes a sparse member down to the leaf partition.
    pub fn resolve(&self, pf: &PiecewiseFunction) -> LeafFn {
        let mut out = self.zero_fn();
        let mut stack: Vec<(AtomId, Vec<f64>)> = pf
            .atoms
            .iter()
            .copied()
            .zip(pf.coeffs.iter().cloned())
            .collect();
        while let Some((a, c)) = stack.pop() {
            if let Some((s_id, l_id)) = self.filt.children(a) {
                let r = self.restrict[a.index()].as_ref().unwrap();
                let rs = self.bases[s_id.index()].rank;
                let rl = self.bases[l_id.index()].rank;
                let mut cs = vec![0.0; rs];
                let mut cl = vec![0.0; rl];
                for (i, &ci) in c.iter().enumerate() {
                    for (j, v) in cs.iter_mut().enumerate() {
                        *v += ci * r.to_small[i][j];
                    }
                    for (j, v) in cl.iter_mut().enumerate() {
                        *v += ci * r.to_large[i][j];
                    }
                }
                stack.push((s_id, cs));
                stack.push((l_id, cl));
            } else {
                let pos = self.leaf_index[a.index()];
                for (o, ci) in out.coeffs[pos].iter_mut().zip(&c) {
                    *o += *ci;
                }
            }
        }
        out
    }

    /// Best approximation of `f` in the leaf space, i.e. the projection onto
    /// the finest level. Expansion coefficients of `f` against the system
    /// coincide with those of this projection.
    pub fn from_func(&self, f: &Func) -> Result<LeafFn> {
        let space = self.filt.space();
        if let Func::PointValues(v) = f {
            if !space.is_discrete() {
                return Err(Error::BackingMismatch("discrete"));
            }
            if v.len() != space.point_count() {
                return Err(Error::IndexOutOfRange(format!(
                    "expected {} point values",
                    space.point_count()
                )));
            }
        }
        let hint = match (f, self.local.poly_degree()) {
            (Func::Poly(c), Some(d)) => Some(c.len().saturating_sub(1) + d),
            (Func::PointValues(_), _) => Some(0),
            _ => None,
        };
        let mut coeffs = Vec::with_capacity(self.filt.leaves().len());
        for &leaf in self.filt.leaves() {
            let atom = self.filt.atom(leaf);
            let b = &self.bases[leaf.index()];
            let mut row = vec![0.0; b.rank];
            for (i, ri) in row.iter_mut().enumerate() {
                *ri = integrate_products(
                    space,
                    &self.local,
                    &atom.support,
                    &|x, p| {
                        let fv = match (f, p) {
                            (Func::PointValues(v), Some(idx)) => v[idx],
                            (Func::Poly(c), _) => quad::poly_eval(c, x),
                            (Func::Closure(g), _) => g(x),
                            (Func::PointValues(_), None) => f64::NAN,
                        };
                        fv * b.eval_onb(&self.local, i, x, p)
                    },
                    hint,
                )?;
            }
            coeffs.push(row);
        }
        Ok(LeafFn { coeffs })
    }

    /// Projection of the indicator of a union of intervals onto the leaf
    /// space; boundary cuts are handled exactly, so jump discontinuities
    /// never reach the adaptive integrator.
    pub fn from_indicator(&self, target: &[Segment]) -> Result<LeafFn> {
        let space = self.filt.space();
        if space.is_discrete() {
            return Err(Error::BackingMismatch("continuous"));
        }
        let target = canonicalize(target.to_vec());
        let hint = self.local.poly_degree();
        let mut coeffs = Vec::with_capacity(self.filt.leaves().len());
        for &leaf in self.filt.leaves() {
            let atom = self.filt.atom(leaf);
            let b = &self.bases[leaf.index()];
            let pieces = intersect(atom.support.segments(), &target);
            let mut row = vec![0.0; b.rank];
            if !pieces.is_empty() {
                let sub = Support::Intervals(pieces);
                for (i, ri) in row.iter_mut().enumerate() {
                    *ri = integrate_products(
                        space,
                        &self.local,
                        &sub,
                        &|x, p| b.eval_onb(&self.local, i, x, p),
                        hint,
                    )?;
                }
            }
            coeffs.push(row);
        }
        Ok(LeafFn { coeffs })
    }

    /// Expansion coefficients of a leaf-space member, in enumeration order.
    pub fn expand(&self, g: &LeafFn) -> Vec<f64> {
        self.leaf_psi.iter().map(|psi| psi.dot(g)).collect()
    }

    pub fn expand_func(&self, f: &Func) -> Result<Vec<f64>> {
        Ok(self.expand(&self.from_func(f)?))
    }

    /// Linear combination of all elements with the given weights.
    pub fn combine(&self, weights: &[f64]) -> LeafFn {
        assert_eq!(weights.len(), self.items.len(), "one weight per element");
        let mut acc = self.zero_fn();
        for (psi, &w) in self.leaf_psi.iter().zip(weights) {
            if w != 0.0 {
                acc.add_scaled(psi, w);
            }
        }
        acc
    }

    /// `R_m g`: projection onto the span of the first `m` elements
    /// (`m = 0` gives the zero function).
    pub fn project(&self, g: &LeafFn, m: usize) -> LeafFn {
        assert!(m <= self.items.len(), "prefix length {m} out of range");
        let mut acc = self.zero_fn();
        for psi in &self.leaf_psi[..m] {
            acc.add_scaled(psi, psi.dot(g));
        }
        acc
    }

    /// Value of a leaf-space member at a site.
    pub fn value_at(&self, g: &LeafFn, site: Site) -> Result<f64> {
        let leaf = self.filt.atom_at(self.filt.depth(), site)?;
        let pos = self.leaf_index[leaf.index()];
        let row = &g.coeffs[pos];
        match (site, self.filt.space().backing()) {
            (Site::Coord(x), _) => Ok(self.row_value(leaf, row, x, None)),
            (Site::Index(i), Backing::Discrete { points, .. }) => {
                Ok(self.row_value(leaf, row, points[i], Some(i)))
            }
            _ => Err(Error::BackingMismatch("discrete")),
        }
    }

    /// Exact integral of a leaf-space member.
    pub fn integral(&self, g: &LeafFn) -> f64 {
        self.filt
            .leaves()
            .iter()
            .zip(&g.coeffs)
            .map(|(&l, row)| vdot(&self.bases[l.index()].moments, row))
            .sum()
    }

    fn adapted_coords(&self, atom: AtomId, row: &[f64]) -> Vec<f64> {
        let b = &self.bases[atom.index()];
        let k = self.local.dim();
        let mut out = vec![0.0; k];
        for (i, &c) in row.iter().enumerate() {
            for (o, bl) in out.iter_mut().zip(&b.onb[i]) {
                *o += c * bl;
            }
        }
        out
    }

    fn atom_sup(&self, atom: AtomId, row: &[f64]) -> f64 {
        if row.iter().all(|&c| c == 0.0) {
            return 0.0;
        }
        let adapted = self.adapted_coords(atom, row);
        sup_norm_local(
            self.filt.space(),
            &self.local,
            &self.filt.atom(atom).support,
            self.bases[atom.index()].hull,
            &adapted,
        )
    }

    fn root_grid(&self) -> usize {
        let deg = self
            .local
            .growth_exponent()
            .unwrap_or(2 * self.local.dim().max(1));
        quad::root_grid_for_degree(deg)
    }

    fn leaf_abs_pow(&self, leaf: AtomId, row: &[f64], p: f64) -> Result<f64> {
        if row.iter().all(|&c| c == 0.0) {
            return Ok(0.0);
        }
        let atom = self.filt.atom(leaf);
        match self.filt.space().backing() {
            Backing::Discrete { masses, points } => Ok(atom
                .support
                .point_indices()
                .iter()
                .map(|&i| masses[i] * self.row_value(leaf, row, points[i], Some(i)).abs().powf(p))
                .sum()),
            Backing::Continuous { density, .. } => {
                let hint = self.local.poly_degree();
                let grid = self.root_grid();
                let mut acc = 0.0;
                for seg in atom.support.segments() {
                    let g = |x: f64| self.row_value(leaf, row, x, None);
                    acc += quad::integrate_abs_pow(&g, seg.a, seg.b, p, grid, hint)?;
                }
                Ok(acc * density)
            }
        }
    }

    fn leaf_abs_integral(&self, leaf: AtomId, row: &[f64]) -> Result<f64> {
        self.leaf_abs_pow(leaf, row, 1.0)
    }

    /// The `p`-norm of a leaf-space member; `p = 2` is exact, other finite
    /// `p` integrate piecewise, and infinite `p` takes the sup.
    pub fn norm(&self, g: &LeafFn, p: f64) -> Result<f64> {
        if p.is_infinite() {
            let mut best = 0.0f64;
            for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
                best = best.max(self.atom_sup(leaf, row));
            }
            return Ok(best);
        }
        if !(p > 0.0) {
            return Err(Error::InvalidParameter(format!("norm exponent {p}")));
        }
        if p == 2.0 {
            return Ok(g.norm2());
        }
        let mut acc = 0.0;
        for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
            acc += self.leaf_abs_pow(leaf, row, p)?;
        }
        Ok(acc.powf(1.0 / p))
    }

    /// Integrals of `|g|` over every atom of the tree, indexed by atom id.
    pub fn abs_integrals_by_atom(&self, g: &LeafFn) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.filt.atom_count()];
        for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
            out[leaf.index()] = self.leaf_abs_integral(leaf, row)?;
        }
        for idx in (0..out.len()).rev() {
            if let Some((s, l)) = self.filt.children(AtomId(idx as u32)) {
                out[idx] = out[s.index()] + out[l.index()];
            }
        }
        Ok(out)
    }

    /// Conditional mean of a leaf-space member at level `n`, exact through
    /// the stored first moments.
    pub fn mean(&self, g: &LeafFn, n: usize) -> Result<PiecewiseConst> {
        if n > self.filt.depth() {
            return Err(Error::IndexOutOfRange(format!("level {n}")));
        }
        let mut by_atom = vec![0.0; self.filt.atom_count()];
        for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
            by_atom[leaf.index()] = vdot(&self.bases[leaf.index()].moments, row);
        }
        for idx in (0..by_atom.len()).rev() {
            if let Some((s, l)) = self.filt.children(AtomId(idx as u32)) {
                by_atom[idx] = by_atom[s.index()] + by_atom[l.index()];
            }
        }
        let atoms = self.filt.level_atoms(n).to_vec();
        let values = atoms
            .iter()
            .map(|&a| by_atom[a.index()] / self.filt.atom(a).measure)
            .collect();
        Ok(PiecewiseConst {
            level: n,
            atoms,
            values,
        })
    }

    /// Conditional mean of `|g|` at level `n`.
    pub fn abs_mean(&self, g: &LeafFn, n: usize) -> Result<PiecewiseConst> {
        if n > self.filt.depth() {
            return Err(Error::IndexOutOfRange(format!("level {n}")));
        }
        let ints = self.abs_integrals_by_atom(g)?;
        let atoms = self.filt.level_atoms(n).to_vec();
        let values = atoms
            .iter()
            .map(|&a| ints[a.index()] / self.filt.atom(a).measure)
            .collect();
        Ok(PiecewiseConst {
            level: n,
            atoms,
            values,
        })
    }

    /// Resolves a level function to one value per leaf.
    pub fn per_leaf_values(&self, pc: &PiecewiseConst) -> Vec<f64> {
        let mut by_atom = vec![f64::NAN; self.filt.atom_count()];
        for (a, v) in pc.atoms.iter().zip(&pc.values) {
            by_atom[a.index()] = *v;
        }
        self.filt
            .leaves()
            .iter()
            .map(|&l| by_atom[self.filt.ancestor_at(l, pc.level).index()])
            .collect()
    }

    /// Multiplies by the indicator of a union of level-`n` atoms; exact,
    /// since such indicators are constant on every leaf.
    pub fn mask_level(&self, g: &LeafFn, n: usize, keep: &[bool]) -> LeafFn {
        let atoms = self.filt.level_atoms(n);
        assert_eq!(atoms.len(), keep.len(), "one flag per level atom");
        let mut flag = vec![false; self.filt.atom_count()];
        for (&a, &k) in atoms.iter().zip(keep) {
            flag[a.index()] = k;
        }
        let coeffs = self
            .filt
            .leaves()
            .iter()
            .zip(&g.coeffs)
            .map(|(&l, row)| {
                if flag[self.filt.ancestor_at(l, n).index()] {
                    row.clone()
                } else {
                    vec![0.0; row.len()]
                }
            })
            .collect();
        LeafFn { coeffs }
    }

    /// Worst sup-norm deviation between projecting after and before
    /// multiplication by measurable indicators, over random trials. Checks
    /// whole-level projections against level-`n` sets and intra-block
    /// projections against level-`(n-1)` sets.
    pub fn commutation_check(&self, trials: usize, seed: u64) -> Result<f64> {
        let depth = self.filt.depth();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let g = self.random_fn(&mut rng);
            let n = rng.gen_range(0..=depth);
            let keep: Vec<bool> = (0..self.filt.level_atoms(n).len())
                .map(|_| rng.gen_bool(0.5))
                .collect();
            let m_end = self.through_level(n);
            let a = self.project(&self.mask_level(&g, n, &keep), m_end);
            let b = self.mask_level(&self.project(&g, m_end), n, &keep);
            worst = worst.max(self.norm(&a.minus(&b), f64::INFINITY)?);

            if depth > 0 {
                let n2 = rng.gen_range(1..=depth);
                let block = self.level_range(n2);
                if !block.is_empty() {
                    let m = rng.gen_range(block.start..block.end);
                    let keep2: Vec<bool> = (0..self.filt.level_atoms(n2 - 1).len())
                        .map(|_| rng.gen_bool(0.5))
                        .collect();
                    let a = self.project(&self.mask_level(&g, n2 - 1, &keep2), m);
                    let b = self.mask_level(&self.project(&g, m), n2 - 1, &keep2);
                    worst = worst.max(self.norm(&a.minus(&b), f64::INFINITY)?);
                }
            }
        }
        Ok(worst)
    }

    /// Scaled sup norms and support diagnostics for every element.
    pub fn psi_bounds(&self) -> Result<Vec<PsiBound>> {
        let mut out = Vec::with_capacity(self.items.len());
        for (idx, item) in self.items.iter().enumerate() {
            let n = item.info.level;
            let (small_atom, large_atom) = if item.psi.atoms.len() == 2 {
                (item.psi.atoms[0], item.psi.atoms[1])
            } else {
                (item.psi.atoms[0], item.psi.atoms[0])
            };
            let sup_small = self.atom_sup(small_atom, &item.psi.coeffs[0]);
            let sup_large =
                self.atom_sup(large_atom, item.psi.coeffs.last().expect("nonempty coeffs"));
            let small_meas = self.filt.atom(small_atom).measure;
            let split_meas = self.filt.atom(item.info.split_atom).measure;
            let small_scaled = sup_small * small_meas.sqrt();
            let large_scaled = sup_large * split_meas / small_meas.sqrt();

            let mut outside_sup = 0.0f64;
            for (&leaf, row) in self.filt.leaves().iter().zip(&self.leaf_psi[idx].coeffs) {
                if !self.descends(leaf, item.info.split_atom) {
                    outside_sup = outside_sup.max(self.atom_sup(leaf, row));
                }
            }

            let mut prev_ortho = 0.0f64;
            if n > 0 {
                let hint = self.local.poly_degree().map(|d| 2 * d);
                for &b_atom in self.filt.level_atoms(n - 1) {
                    let bb = &self.bases[b_atom.index()];
                    for i in 0..bb.rank {
                        let mut acc = 0.0;
                        for (&leaf, row) in
                            self.filt.leaves().iter().zip(&self.leaf_psi[idx].coeffs)
                        {
                            if row.iter().all(|&c| c == 0.0) || !self.descends(leaf, b_atom) {
                                continue;
                            }
                            acc += integrate_products(
                                self.filt.space(),
                                &self.local,
                                &self.filt.atom(leaf).support,
                                &|x, p| {
                                    self.row_value(leaf, row, x, p)
                                        * bb.eval_onb(&self.local, i, x, p)
                                },
                                hint,
                            )?;
                        }
                        prev_ortho = prev_ortho.max(acc.abs());
                    }
                }
            }

            out.push(PsiBound {
                m: item.info.m,
                level: n,
                small_scaled,
                large_scaled,
                outside_sup,
                prev_ortho,
            });
        }
        Ok(out)
    }

    fn descends(&self, leaf: AtomId, anc: AtomId) -> bool {
        let mut cur = Some(leaf);
        while let Some(a) = cur {
            if a == anc {
                return true;
            }
            cur = self.filt.atom(a).parent;
        }
        false
    }

    /// Largest pointwise ratio between a prefix projection of `g` and the sum
    /// of the two neighboring conditional means of `|g|` (the level of the
    /// prefix's last block and the one before it, with level 0 doubled).
    pub fn projector_ratio_for(&self, g: &LeafFn) -> Result<f64> {
        let ints = self.abs_integrals_by_atom(g)?;
        let depth = self.filt.depth();
        let leaves = self.filt.leaves();
        let mut e_vals: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
        for n in 0..=depth {
            let row = leaves
                .iter()
                .map(|&l| {
                    let anc = self.filt.ancestor_at(l, n);
                    ints[anc.index()] / self.filt.atom(anc).measure
                })
                .collect();
            e_vals.push(row);
        }
        let floor = 1e-13 * ints[0].max(f64::MIN_POSITIVE);
        let coeffs = self.expand(g);
        let mut acc = self.zero_fn();
        let mut best = 0.0f64;
        for (mi, item) in self.items.iter().enumerate() {
            acc.add_scaled(&self.leaf_psi[mi], coeffs[mi]);
            let n = item.info.level;
            let prev = n.saturating_sub(1);
            for (pos, &leaf) in leaves.iter().enumerate() {
                let denom = e_vals[prev][pos] + e_vals[n][pos];
                if denom <= floor {
                    continue;
                }
                let sup = self.atom_sup(leaf, &acc.coeffs[pos]);
                best = best.max(sup / denom);
            }
        }
        Ok(best)
    }

    /// Empirical bound for the projector ratio over random directions; the
    /// result is cached for reuse as a stopping-threshold constant.
    pub fn projector_ratio(&self, trials: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut best = 0.0f64;
        for _ in 0..trials {
            let g = self.random_fn(&mut rng);
            best = best.max(self.projector_ratio_for(&g)?);
        }
        *self.c3_cache.lock().unwrap() = Some(best);
        Ok(best)
    }

    pub fn cached_projector_ratio(&self) -> Option<f64> {
        *self.c3_cache.lock().unwrap()
    }

    /// `p`-distance from `f` to each prefix projection, for `m = 0..=len`.
    /// `f` must be smooth on every leaf.
    pub fn convergence_profile(&self, f: &Func, p: f64) -> Result<Vec<f64>> {
        let coeffs = self.expand_func(f)?;
        let mut acc = self.zero_fn();
        let mut out = Vec::with_capacity(self.items.len() + 1);
        out.push(self.lp_error_func(&acc, f, p)?);
        for (mi, psi) in self.leaf_psi.iter().enumerate() {
            acc.add_scaled(psi, coeffs[mi]);
            out.push(self.lp_error_func(&acc, f, p)?);
        }
        Ok(out)
    }

    /// `p`-norm of `f - g` for a pointwise function `f` smooth on every leaf.
    pub fn lp_error_func(&self, g: &LeafFn, f: &Func, p: f64) -> Result<f64> {
        let space = self.filt.space();
        let hint = match (f, self.local.poly_degree()) {
            (Func::Poly(c), Some(d)) => Some(c.len().saturating_sub(1).max(d)),
            (Func::PointValues(_), _) => Some(0),
            _ => None,
        };
        let grid = self.root_grid();
        if p.is_infinite() {
            let mut best = 0.0f64;
            for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
                let atom = self.filt.atom(leaf);
                match space.backing() {
                    Backing::Discrete { points, .. } => {
                        for &i in atom.support.point_indices() {
                            let fv = f.eval_site(space, Site::Index(i))?;
                            best = best
                                .max((fv - self.row_value(leaf, row, points[i], Some(i))).abs());
                        }
                    }
                    Backing::Continuous { .. } => {
                        let d = |x: f64| {
                            f.eval_coord(x).unwrap_or(f64::NAN)
                                - self.row_value(leaf, row, x, None)
                        };
                        best = best.max(quad::sup_on_segments(
                            atom.support.segments(),
                            &d,
                            quad::GridKind::Uniform,
                            512,
                            true,
                        ));
                    }
                }
            }
            return Ok(best);
        }
        if !(p > 0.0) {
            return Err(Error::InvalidParameter(format!("norm exponent {p}")));
        }
        let mut acc = 0.0;
        for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
            let atom = self.filt.atom(leaf);
            match space.backing() {
                Backing::Discrete { masses, points } => {
                    for &i in atom.support.point_indices() {
                        let fv = f.eval_site(space, Site::Index(i))?;
                        acc += masses[i]
                            * (fv - self.row_value(leaf, row, points[i], Some(i))).abs().powf(p);
                    }
                }
                Backing::Continuous { density, .. } => {
                    let d = |x: f64| {
                        f.eval_coord(x).unwrap_or(f64::NAN) - self.row_value(leaf, row, x, None)
                    };
                    for seg in atom.support.segments() {
                        acc += density * quad::integrate_abs_pow(&d, seg.a, seg.b, p, grid, hint)?;
                    }
                }
            }
        }
        Ok(acc.powf(1.0 / p))
    }

    /// `p`-norm of `1_target - g` over the space (continuous backings only).
    pub fn lp_error_indicator(&self, g: &LeafFn, target: &[Segment], p: f64) -> Result<f64> {
        if self.filt.space().is_discrete() {
            return Err(Error::BackingMismatch("continuous"));
        }
        if !(p > 0.0) || p.is_infinite() {
            return Err(Error::InvalidParameter(format!("norm exponent {p}")));
        }
        let density = match self.filt.space().backing() {
            Backing::Continuous { density, .. } => *density,
            Backing::Discrete { .. } => unreachable!(),
        };
        let target = canonicalize(target.to_vec());
        let hint = self.local.poly_degree();
        let grid = self.root_grid();
        let mut acc = 0.0;
        for (&leaf, row) in self.filt.leaves().iter().zip(&g.coeffs) {
            let segs = self.filt.atom(leaf).support.segments();
            for (pieces, inside) in [
                (intersect(segs, &target), true),
                (subtract(segs, &target), false),
            ] {
                for seg in pieces {
                    let d = |x: f64| {
                        let v = self.row_value(leaf, row, x, None);
                        if inside {
                            1.0 - v
                        } else {
                            v
                        }
                    };
                    acc += density * quad::integrate_abs_pow(&d, seg.a, seg.b, p, grid, hint)?;
                }
            }
        }
        Ok(acc.powf(1.0 / p))
    }

    /// Coefficient table in the per-atom adapted bases, one row per
    /// coefficient: `m,n,j,atom_id,basis_index,coeff`.
    pub fn coefficients_csv(&self) -> String {
        let mut s = String::from("m,n,j,atom_id,basis_index,coeff\n");
        for item in &self.items {
            for (atom, row) in item.psi.atoms.iter().zip(&item.psi.coeffs) {
                let adapted = self.adapted_coords(*atom, row);
                for (bi, c) in adapted.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{:.16e}",
                        item.info.m, item.info.level, item.info.j, atom, bi, c
                    );
                }
            }
        }
        s
    }
}

/// Three-atom refinement witness showing that the pointwise projector bound
/// needs binary splits: with atoms of measures `q, q, eps` and a unit-norm
/// mean-zero profile concentrated on the small atom, the projection of its
/// sign pattern is of order `eps^{-1/2}` where both neighboring conditional
/// means of the sign pattern stay bounded.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ThreeAtomWitness {
    pub epsilon: f64,
    /// Atom measures `[q, q, eps]` with `q = (1 - eps) / 2`.
    pub measures: [f64; 3],
    /// Profile heights on the three atoms (the middle one enters negatively).
    pub alpha: [f64; 3],
    /// Mean of the profile; zero up to rounding.
    pub mean: f64,
    /// Second moment of the profile; one up to rounding.
    pub second_moment: f64,
    /// Inner product between the profile and its sign pattern.
    pub inner_gh: f64,
    /// Measured pointwise ratio on the small atom.
    pub ratio: f64,
}

/// Builds the three-atom witness for `0 < epsilon <= 1/2`.
pub fn counterexample_three(epsilon: f64) -> Result<ThreeAtomWitness> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} outside (0, 1/2]"
        )));
    }
    let q = (1.0 - epsilon) / 2.0;
    let t = 0.5 / epsilon.sqrt();
    let d = t * epsilon / q;
    let disc = 1.5 / q - d * d;
    if disc <= d * d {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} leaves no positive profile"
        )));
    }
    let a1 = 0.5 * (disc.sqrt() - d);
    let a2 = a1 + d;
    let mean = q * a1 - q * a2 + t * epsilon;
    let second_moment = q * (a1 * a1 + a2 * a2) + t * t * epsilon;
    let inner_gh = q * (a1 + a2);
    let ratio = inner_gh * t / (2.0 * q);
    Ok(ThreeAtomWitness {
        epsilon,
        measures: [q, q, epsilon],
        alpha: [a1, a2, t],
        mean,
        second_moment,
        inner_gh,
        ratio,
    })
}
