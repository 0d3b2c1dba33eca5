//! Probability spaces and binary filtrations.
//!
//! A space is backed either by a finite union of half-open intervals carrying
//! renormalized Lebesgue measure, or by finitely many weighted points. A
//! filtration refines the trivial partition one split at a time: level `n`
//! replaces exactly one atom of level `n-1` by two disjoint children, ordered
//! so that the first child never has larger measure than the second.

use crate::error::{Error, Result};
use crate::quad;
use std::fmt;
use std::sync::Arc;

/// Half-open interval `[a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
}

impl Segment {
    pub fn new(a: f64, b: f64) -> Self {
        Segment { a, b }
    }

    pub fn len(&self) -> f64 {
        (self.b - self.a).max(0.0)
    }
}

/// Sorts segments, drops empty ones and merges touching neighbours.
pub fn canonicalize(mut segs: Vec<Segment>) -> Vec<Segment> {
    segs.retain(|s| s.b > s.a);
    segs.sort_by(|s, t| s.a.total_cmp(&t.a));
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(last) if s.a <= last.b => last.b = last.b.max(s.b),
            _ => out.push(s),
        }
    }
    out
}

pub fn total_len(segs: &[Segment]) -> f64 {
    segs.iter().map(Segment::len).sum()
}

pub fn intersect(xs: &[Segment], ys: &[Segment]) -> Vec<Segment> {
    let mut out = Vec::new();
    for x in xs {
        for y in ys {
            let a = x.a.max(y.a);
            let b = x.b.min(y.b);
            if b > a {
                out.push(Segment::new(a, b));
            }
        }
    }
    canonicalize(out)
}

pub fn subtract(xs: &[Segment], ys: &[Segment]) -> Vec<Segment> {
    let mut current = xs.to_vec();
    for y in ys {
        let mut next = Vec::with_capacity(current.len() + 1);
        for x in &current {
            if y.b <= x.a || y.a >= x.b {
                next.push(*x);
                continue;
            }
            if y.a > x.a {
                next.push(Segment::new(x.a, y.a));
            }
            if y.b < x.b {
                next.push(Segment::new(y.b, x.b));
            }
        }
        current = next;
    }
    canonicalize(current)
}

/// Measure backing of a probability space.
#[derive(Debug, Clone)]
pub enum Backing {
    /// Union of intervals with constant density `1 / total length`.
    Continuous { segments: Vec<Segment>, density: f64 },
    /// Weighted points at real coordinates, masses summing to one.
    Discrete { points: Vec<f64>, masses: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct ProbabilitySpace {
    backing: Backing,
}

impl ProbabilitySpace {
    pub fn continuous(intervals: &[(f64, f64)]) -> Result<Self> {
        let segs: Vec<Segment> = intervals.iter().map(|&(a, b)| Segment::new(a, b)).collect();
        if segs.iter().any(|s| !s.a.is_finite() || !s.b.is_finite()) {
            return Err(Error::NonFinite("interval endpoint"));
        }
        let segs = canonicalize(segs);
        let len = total_len(&segs);
        if segs.is_empty() || len <= 0.0 {
            return Err(Error::EmptySpace);
        }
        Ok(ProbabilitySpace {
            backing: Backing::Continuous {
                segments: segs,
                density: 1.0 / len,
            },
        })
    }

    pub fn unit_interval() -> Self {
        Self::continuous(&[(0.0, 1.0)]).expect("unit interval is a valid space")
    }

    pub fn discrete(points: &[f64], masses: &[f64]) -> Result<Self> {
        if points.is_empty() || points.len() != masses.len() {
            return Err(Error::EmptySpace);
        }
        for &m in masses {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NonPositive {
                    what: "point mass",
                    value: m,
                });
            }
        }
        let total: f64 = masses.iter().sum();
        Ok(ProbabilitySpace {
            backing: Backing::Discrete {
                points: points.to_vec(),
                masses: masses.iter().map(|m| m / total).collect(),
            },
        })
    }

    pub fn backing(&self) -> &Backing {
        &self.backing
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.backing, Backing::Discrete { .. })
    }

    /// Number of points for a discrete backing, 0 otherwise.
    pub fn point_count(&self) -> usize {
        match &self.backing {
            Backing::Discrete { points, .. } => points.len(),
            _ => 0,
        }
    }

    pub fn root_support(&self) -> Support {
        match &self.backing {
            Backing::Continuous { segments, .. } => Support::Intervals(segments.clone()),
            Backing::Discrete { points, .. } => Support::Points((0..points.len()).collect()),
        }
    }

    /// Right edge of the continuous backing; points exactly there are folded
    /// into the last atom so evaluation at the closed right end works.
    pub fn right_edge(&self) -> Option<f64> {
        match &self.backing {
            Backing::Continuous { segments, .. } => segments.last().map(|s| s.b),
            _ => None,
        }
    }

    pub fn measure(&self, support: &Support) -> f64 {
        match (&self.backing, support) {
            (Backing::Continuous { density, .. }, Support::Intervals(segs)) => {
                total_len(segs) * density
            }
            (Backing::Discrete { masses, .. }, Support::Points(idx)) => {
                idx.iter().map(|&i| masses[i]).sum()
            }
            _ => f64::NAN,
        }
    }

    /// Integral of `f` over `support` against the probability measure.
    pub fn integrate(&self, support: &Support, f: &Func) -> Result<f64> {
        self.integrate_impl(support, f, false)
    }

    /// Integral of `|f|` over `support`.
    pub fn integrate_abs(&self, support: &Support, f: &Func) -> Result<f64> {
        self.integrate_impl(support, f, true)
    }

    fn integrate_impl(&self, support: &Support, f: &Func, absolute: bool) -> Result<f64> {
        match (&self.backing, support) {
            (Backing::Discrete { points, masses }, Support::Points(idx)) => {
                let mut acc = 0.0;
                for &i in idx {
                    let v = f.eval_discrete(points, i)?;
                    acc += masses[i] * if absolute { v.abs() } else { v };
                }
                Ok(acc)
            }
            (Backing::Continuous { density, .. }, Support::Intervals(segs)) => match f {
                Func::PointValues(_) => Err(Error::BackingMismatch("discrete")),
                Func::Poly(c) => {
                    if absolute {
                        let g = |x: f64| quad::poly_eval(c, x);
                        let deg = c.len().saturating_sub(1);
                        let mut acc = 0.0;
                        for s in segs {
                            acc += quad::integrate_abs_piecewise_smooth(
                                &g,
                                s.a,
                                s.b,
                                quad::root_grid_for_degree(deg),
                                Some(deg),
                            )?;
                        }
                        Ok(acc * density)
                    } else {
                        Ok(quad::integrate_segments_poly(segs, *density, c))
                    }
                }
                Func::Closure(g) => {
                    let mut acc = 0.0;
                    for s in segs {
                        let h = |x: f64| {
                            let v = g(x);
                            if absolute {
                                v.abs()
                            } else {
                                v
                            }
                        };
                        acc += quad::adaptive_simpson(&h, s.a, s.b, quad::DEFAULT_TOL)?;
                    }
                    Ok(acc * density)
                }
            },
            _ => Err(Error::BackingMismatch("matching")),
        }
    }
}

/// Support of an atom within the ambient space.
#[derive(Debug, Clone)]
pub enum Support {
    Intervals(Vec<Segment>),
    Points(Vec<usize>),
}

impl Support {
    pub fn hull(&self) -> Option<(f64, f64)> {
        match self {
            Support::Intervals(segs) => {
                let a = segs.first()?.a;
                let b = segs.last()?.b;
                Some((a, b))
            }
            Support::Points(_) => None,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        match self {
            Support::Intervals(s) => s,
            Support::Points(_) => &[],
        }
    }

    pub fn point_indices(&self) -> &[usize] {
        match self {
            Support::Points(p) => p,
            Support::Intervals(_) => &[],
        }
    }

    fn contains_coord(&self, x: f64, right_edge: Option<f64>) -> bool {
        match self {
            Support::Intervals(segs) => segs.iter().any(|s| {
                (s.a <= x && x < s.b) || (Some(s.b) == right_edge && x == s.b)
            }),
            Support::Points(_) => false,
        }
    }

    fn contains_index(&self, i: usize) -> bool {
        match self {
            Support::Points(idx) => idx.binary_search(&i).is_ok(),
            Support::Intervals(_) => false,
        }
    }

    /// First coordinate (or point index) of the support, used to break
    /// equal-measure ties when ordering children.
    fn position_key(&self) -> f64 {
        match self {
            Support::Intervals(segs) => segs.first().map(|s| s.a).unwrap_or(f64::INFINITY),
            Support::Points(idx) => idx.first().map(|&i| i as f64).unwrap_or(f64::INFINITY),
        }
    }
}

/// A point of the space: a coordinate for continuous backings, an index for
/// discrete ones.
#[derive(Debug, Clone, Copy)]
pub enum Site {
    Coord(f64),
    Index(usize),
}

/// Evaluable function on the space.
#[derive(Clone)]
pub enum Func {
    /// Polynomial in the coordinate, coefficients from constant term up.
    Poly(Vec<f64>),
    /// Arbitrary pointwise rule in the coordinate.
    Closure(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Values per point of a discrete backing.
    PointValues(Vec<f64>),
}

impl fmt::Debug for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Func::Poly(c) => write!(f, "Poly({c:?})"),
            Func::Closure(_) => write!(f, "Closure"),
            Func::PointValues(v) => write!(f, "PointValues({v:?})"),
        }
    }
}

impl Func {
    pub fn constant(c: f64) -> Self {
        Func::Poly(vec![c])
    }

    pub fn closure<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Func::Closure(Arc::new(f))
    }

    pub fn eval_coord(&self, x: f64) -> Result<f64> {
        match self {
            Func::Poly(c) => Ok(quad::poly_eval(c, x)),
            Func::Closure(g) => Ok(g(x)),
            Func::PointValues(_) => Err(Error::BackingMismatch("discrete")),
        }
    }

    fn eval_discrete(&self, points: &[f64], i: usize) -> Result<f64> {
        match self {
            Func::Poly(c) => Ok(quad::poly_eval(c, points[i])),
            Func::Closure(g) => Ok(g(points[i])),
            Func::PointValues(v) => v
                .get(i)
                .copied()
                .ok_or_else(|| Error::IndexOutOfRange(format!("point {i}"))),
        }
    }

    pub fn eval_site(&self, space: &ProbabilitySpace, site: Site) -> Result<f64> {
        match (site, space.backing()) {
            (Site::Coord(x), _) => self.eval_coord(x),
            (Site::Index(i), Backing::Discrete { points, .. }) => self.eval_discrete(points, i),
            (Site::Index(_), _) => Err(Error::BackingMismatch("discrete")),
        }
    }
}

/// Identifier of an atom inside one filtration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomId(pub u32);

impl fmt::Display for AtomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl AtomId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub struct Atom {
    pub id: AtomId,
    pub support: Support,
    pub measure: f64,
    /// Level of the partition this atom first belongs to.
    pub created_level: usize,
    pub parent: Option<AtomId>,
    /// Depth in the binary split tree (root is 0).
    pub tree_depth: usize,
}

/// How to divide an atom in two.
#[derive(Debug, Clone)]
pub enum Cut {
    /// Continuous: part below the coordinate vs. the rest.
    At(f64),
    /// Continuous: an explicit sub-union of intervals vs. the rest.
    Take(Vec<Segment>),
    /// Discrete: an explicit subset of point indices vs. the rest.
    TakePoints(Vec<usize>),
}

impl fmt::Display for Cut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cut::At(t) => write!(f, "at:{t}"),
            Cut::Take(segs) => {
                write!(f, "take:")?;
                for (i, s) in segs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{},{}", s.a, s.b)?;
                }
                Ok(())
            }
            Cut::TakePoints(idx) => {
                write!(f, "pts:")?;
                for (i, p) in idx.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl Cut {
    pub fn parse(token: &str, line: usize) -> Result<Cut> {
        let err = |msg: String| Error::Parse { line, msg };
        if let Some(rest) = token.strip_prefix("at:") {
            let t: f64 = rest
                .parse()
                .map_err(|_| err(format!("bad coordinate {rest:?}")))?;
            return Ok(Cut::At(t));
        }
        if let Some(rest) = token.strip_prefix("take:") {
            let mut segs = Vec::new();
            for part in rest.split(';') {
                let (a, b) = part
                    .split_once(',')
                    .ok_or_else(|| err(format!("bad interval {part:?}")))?;
                let a: f64 = a.parse().map_err(|_| err(format!("bad number {a:?}")))?;
                let b: f64 = b.parse().map_err(|_| err(format!("bad number {b:?}")))?;
                segs.push(Segment::new(a, b));
            }
            return Ok(Cut::Take(segs));
        }
        if let Some(rest) = token.strip_prefix("pts:") {
            let mut idx = Vec::new();
            for part in rest.split(',') {
                idx.push(
                    part.parse()
                        .map_err(|_| err(format!("bad point index {part:?}")))?,
                );
            }
            return Ok(Cut::TakePoints(idx));
        }
        Err(err(format!("unknown cut spec {token:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub level: usize,
    pub parent: AtomId,
    /// Child of smaller (or tied) measure, written `A'` in reports.
    pub small: AtomId,
    /// Child of larger measure, written `A''`.
    pub large: AtomId,
    pub cut: Cut,
}

/// Binary filtration over a probability space.
#[derive(Debug, Clone)]
pub struct Filtration {
    space: Arc<ProbabilitySpace>,
    atoms: Vec<Atom>,
    splits: Vec<Split>,
    levels: Vec<Vec<AtomId>>,
    split_of: Vec<Option<usize>>,
}

impl Filtration {
    pub fn new(space: Arc<ProbabilitySpace>) -> Self {
        let root = Atom {
            id: AtomId(0),
            support: space.root_support(),
            measure: 1.0,
            created_level: 0,
            parent: None,
            tree_depth: 0,
        };
        Filtration {
            space,
            atoms: vec![root],
            splits: Vec::new(),
            levels: vec![vec![AtomId(0)]],
            split_of: vec![None],
        }
    }

    pub fn space(&self) -> &Arc<ProbabilitySpace> {
        &self.space
    }

    /// Number of splits applied so far; partitions exist for levels `0..=depth`.
    pub fn depth(&self) -> usize {
        self.splits.len()
    }

    pub fn atom(&self, id: AtomId) -> &Atom {
        &self.atoms[id.index()]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Atoms of the level-`n` partition, in stable order.
    pub fn level_atoms(&self, n: usize) -> &[AtomId] {
        &self.levels[n]
    }

    pub fn leaves(&self) -> &[AtomId] {
        self.levels.last().expect("levels never empty")
    }

    /// Children `(small, large)` if the atom has been split.
    pub fn children(&self, id: AtomId) -> Option<(AtomId, AtomId)> {
        self.split_of[id.index()].map(|s| (self.splits[s].small, self.splits[s].large))
    }

    /// Index of the split that divides this atom, if any.
    pub fn split_index(&self, id: AtomId) -> Option<usize> {
        self.split_of[id.index()]
    }

    /// Splits one leaf atom; returns `(small, large)` child ids.
    pub fn split(&mut self, parent: AtomId, cut: Cut) -> Result<(AtomId, AtomId)> {
        let leaf_pos = self
            .leaves()
            .iter()
            .position(|&a| a == parent)
            .ok_or(Error::NotALeaf(parent))?;
        let atom = &self.atoms[parent.index()];
        let (sup1, sup2) = self.divide(&atom.support, &cut, parent)?;
        let m1 = self.space.measure(&sup1);
        let m2 = self.space.measure(&sup2);
        if !(m1 > 0.0) || !(m2 > 0.0) {
            return Err(Error::DegenerateCut(parent));
        }
        let smaller_first = m1 < m2
            || (m1 == m2 && sup1.position_key() <= sup2.position_key());
        let (sup_s, m_s, sup_l, m_l) = if smaller_first {
            (sup1, m1, sup2, m2)
        } else {
            (sup2, m2, sup1, m1)
        };

        let level = self.levels.len();
        let depth = atom.tree_depth + 1;
        let small = AtomId(self.atoms.len() as u32);
        let large = AtomId(self.atoms.len() as u32 + 1);
        for (id, sup, m) in [(small, sup_s, m_s), (large, sup_l, m_l)] {
            self.atoms.push(Atom {
                id,
                support: sup,
                measure: m,
                created_level: level,
                parent: Some(parent),
                tree_depth: depth,
            });
            self.split_of.push(None);
        }
        self.split_of[parent.index()] = Some(self.splits.len());
        self.splits.push(Split {
            level,
            parent,
            small,
            large,
            cut,
        });
        let mut next = self.levels.last().expect("levels never empty").clone();
        next.splice(leaf_pos..=leaf_pos, [small, large]);
        self.levels.push(next);
        Ok((small, large))
    }

    fn divide(&self, support: &Support, cut: &Cut, parent: AtomId) -> Result<(Support, Support)> {
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
                let rest = subtract(segs, &taken);
                Ok((Support::Intervals(inside), Support::Intervals(rest)))
            }
            (Support::Points(idx), Cut::TakePoints(taken)) => {
                let mut taken = taken.clone();
                taken.sort_unstable();
                taken.dedup();
                if taken.iter().any(|i| !support.contains_index(*i)) {
                    return Err(Error::CutOutsideAtom(parent));
                }
                let rest: Vec<usize> = idx.iter().copied().filter(|i| taken.binary_search(i).is_err()).collect();
                Ok((Support::Points(taken), Support::Points(rest)))
            }
            _ => Err(Error::BackingMismatch("matching cut and support")),
        }
    }

    /// Atom of the level-`n` partition containing the site.
    pub fn atom_at(&self, n: usize, site: Site) -> Result<AtomId> {
        if n >= self.levels.len() {
            return Err(Error::IndexOutOfRange(format!("level {n}")));
        }
        let edge = self.space.right_edge();
        let mut cur = AtomId(0);
        loop {
            let split = match self.split_of[cur.index()] {
                Some(s) if self.splits[s].level <= n => &self.splits[s],
                _ => return Ok(cur),
            };
            let small = &self.atoms[split.small.index()];
            let hit = match site {
                Site::Coord(x) => small.support.contains_coord(x, edge),
                Site::Index(i) => small.support.contains_index(i),
            };
            cur = if hit { split.small } else { split.large };
        }
    }

    /// Ancestor of `id` in the level-`n` partition.
    pub fn ancestor_at(&self, id: AtomId, n: usize) -> AtomId {
        let mut cur = id;
        while self.atoms[cur.index()].created_level > n {
            cur = self.atoms[cur.index()].parent.expect("non-root has parent");
        }
        cur
    }

    /// Leaf atoms lying inside the given atom.
    pub fn leaves_under(&self, id: AtomId) -> Vec<AtomId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(a) = stack.pop() {
            match self.children(a) {
                Some((s, l)) => {
                    stack.push(l);
                    stack.push(s);
                }
                None => out.push(a),
            }
        }
        out
    }

    /// Conditional expectation of `f` with respect to the level-`n` partition.
    pub fn conditional_expectation(&self, f: &Func, n: usize) -> Result<PiecewiseConst> {
        let atoms = self
            .levels
            .get(n)
            .ok_or_else(|| Error::IndexOutOfRange(format!("level {n}")))?;
        let mut values = Vec::with_capacity(atoms.len());
        for &a in atoms {
            let atom = self.atom(a);
            values.push(self.space.integrate(&atom.support, f)? / atom.measure);
        }
        Ok(PiecewiseConst {
            level: n,
            atoms: atoms.clone(),
            values,
        })
    }

    /// Conditional expectation of a piecewise-constant function onto a coarser level.
    pub fn coarsen(&self, pc: &PiecewiseConst, n: usize) -> Result<PiecewiseConst> {
        if n > pc.level {
            return Err(Error::NotMeasurable { level: n });
        }
        let atoms = &self.levels[n];
        let mut sums = vec![0.0; atoms.len()];
        for (i, &a) in pc.atoms.iter().enumerate() {
            let anc = self.ancestor_at(a, n);
            let pos = atoms
                .iter()
                .position(|&b| b == anc)
                .ok_or(Error::NotMeasurable { level: n })?;
            sums[pos] += pc.values[i] * self.atom(a).measure;
        }
        let values = atoms
            .iter()
            .zip(&sums)
            .map(|(&a, &s)| s / self.atom(a).measure)
            .collect();
        Ok(PiecewiseConst {
            level: n,
            atoms: atoms.clone(),
            values,
        })
    }

    /// Pointwise maximum of `E_n |f|` over `0 <= n <= upto`, resolved on the
    /// level-`upto` partition.
    pub fn doob_maximal(&self, f: &Func, upto: usize) -> Result<PiecewiseConst> {
        if upto >= self.levels.len() {
            return Err(Error::IndexOutOfRange(format!("level {upto}")));
        }
        let mut abs_mean = Vec::with_capacity(self.atoms.len());
        for atom in &self.atoms {
            abs_mean.push(self.space.integrate_abs(&atom.support, f)? / atom.measure);
        }
        let atoms = self.levels[upto].clone();
        let mut values = Vec::with_capacity(atoms.len());
        for &leaf in &atoms {
            let mut best = f64::NEG_INFINITY;
            let mut cur = Some(leaf);
            while let Some(a) = cur {
                best = best.max(abs_mean[a.index()]);
                cur = self.atom(a).parent;
            }
            values.push(best);
        }
        Ok(PiecewiseConst {
            level: upto,
            atoms,
            values,
        })
    }

    /// One line per split: `level parent_id cut`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.splits {
            out.push_str(&format!("{} {} {}\n", s.level, s.parent, s.cut));
        }
        out
    }

    /// Rebuilds a filtration from `to_text` output over the same space.
    pub fn from_text(space: Arc<ProbabilitySpace>, text: &str) -> Result<Filtration> {
        let mut filt = Filtration::new(space);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let err = |msg: &str| Error::Parse {
                line,
                msg: msg.to_string(),
            };
            let level: usize = parts
                .next()
                .ok_or_else(|| err("missing level"))?
                .parse()
                .map_err(|_| err("bad level"))?;
            if level != filt.depth() + 1 {
                return Err(err("levels must advance by one"));
            }
            let parent: u32 = parts
                .next()
                .ok_or_else(|| err("missing atom id"))?
                .parse()
                .map_err(|_| err("bad atom id"))?;
            let cut_token = parts.next().ok_or_else(|| err("missing cut"))?;
            if parts.next().is_some() {
                return Err(err("trailing tokens"));
            }
            if parent as usize >= filt.atom_count() {
                return Err(err("unknown atom id"));
            }
            let cut = Cut::parse(cut_token, line)?;
            filt.split(AtomId(parent), cut)?;
        }
        Ok(filt)
    }
}

/// Function constant on each atom of one partition level.
#[derive(Debug, Clone)]
pub struct PiecewiseConst {
    pub level: usize,
    pub atoms: Vec<AtomId>,
    pub values: Vec<f64>,
}

impl PiecewiseConst {
    pub fn value_on(&self, id: AtomId) -> Option<f64> {
        self.atoms
            .iter()
            .position(|&a| a == id)
            .map(|i| self.values[i])
    }

    pub fn eval(&self, filt: &Filtration, site: Site) -> Result<f64> {
        let atom = filt.atom_at(self.level, site)?;
        self.value_on(atom)
            .ok_or_else(|| Error::IndexOutOfRange(format!("atom {atom}")))
    }

    pub fn integral(&self, filt: &Filtration) -> f64 {
        self.atoms
            .iter()
            .zip(&self.values)
            .map(|(&a, &v)| filt.atom(a).measure * v)
            .sum()
    }
}

/// Point inside `support` with `frac` of its measure to the left, for the
/// purpose of an `At` cut. Falls back to the midpoint of the last segment
/// when rounding pushes the target past the end.
fn measure_point(support: &Support, frac: f64) -> Option<f64> {
    let segs = support.segments();
    let total: f64 = segs.iter().map(Segment::len).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut remain = frac * total;
    for s in segs {
        if remain < s.len() {
            return Some(s.a + remain);
        }
        remain -= s.len();
    }
    segs.last().map(|s| 0.5 * (s.a + s.b))
}

/// Splits every leaf once per generation: interval atoms at their measure
/// midpoint, discrete atoms by peeling off the first half of their points.
/// Single-point atoms are left alone.
pub fn dyadic_filtration(space: Arc<ProbabilitySpace>, generations: usize) -> Result<Filtration> {
    let mut filt = Filtration::new(space);
    for _ in 0..generations {
        for id in filt.leaves().to_vec() {
            let cut = match &filt.atom(id).support {
                Support::Points(idx) if idx.len() >= 2 => {
                    Cut::TakePoints(idx[..idx.len().div_ceil(2)].to_vec())
                }
                Support::Points(_) => continue,
                support @ Support::Intervals(_) => match measure_point(support, 0.5) {
                    Some(t) => Cut::At(t),
                    None => continue,
                },
            };
            filt.split(id, cut)?;
        }
    }
    Ok(filt)
}

/// Grows a filtration by `splits` seeded single cuts. Each step picks a
/// uniform splittable leaf and divides it at a uniform measure fraction in
/// `(0.2, 0.8)`; discrete leaves give up a random proper subset of their
/// points instead. Stops early if nothing splittable remains.
pub fn random_filtration(
    space: Arc<ProbabilitySpace>,
    splits: usize,
    seed: u64,
) -> Result<Filtration> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut filt = Filtration::new(space);
    'outer: for _ in 0..splits {
        let mut order = filt.leaves().to_vec();
        let start = rng.gen_range(0..order.len());
        order.rotate_left(start);
        for id in order {
            let cut = match &filt.atom(id).support {
                Support::Points(idx) if idx.len() >= 2 => {
                    let keep = rng.gen_range(1..idx.len());
                    let mut pool = idx.clone();
                    for i in (1..pool.len()).rev() {
                        pool.swap(i, rng.gen_range(0..=i));
                    }
                    let mut part = pool[..keep].to_vec();
                    part.sort_unstable();
                    Cut::TakePoints(part)
                }
                Support::Points(_) => continue,
                support @ Support::Intervals(_) => {
                    match measure_point(support, rng.gen_range(0.2..0.8)) {
                        Some(t) => Cut::At(t),
                        None => continue,
                    }
                }
            };
            filt.split(id, cut)?;
            continue 'outer;
        }
        break;
    }
    Ok(filt)
}
