//! Product systems on the unit square. A refinement step cuts a
//! rectangle once per direction, producing four child rectangles, and
//! the increment elements are tensor products of the one-dimensional
//! carried and stepped bases of the two cuts.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::measure::{AtomId, ProbabilitySpace, Segment, Support};
use crate::ortho::increment_rows;
use crate::quad::{gl_integrate, nodes_for_degree};
use crate::space::{atom_basis, AtomBasis, LocalSpace};

/// Axis-aligned half-open rectangle `[x.a, x.b) x [y.a, y.b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: Segment,
    pub y: Segment,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.x.len() * self.y.len()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x.a <= x && x < self.x.b && self.y.a <= y && y < self.y.b
    }

    fn center(&self) -> (f64, f64) {
        (0.5 * (self.x.a + self.x.b), 0.5 * (self.y.a + self.y.b))
    }
}

#[derive(Debug, Clone)]
pub struct Atom2 {
    pub id: usize,
    pub rect: Rect,
    pub parent: Option<usize>,
}

/// One product refinement: a cut per direction, four children ordered
/// with the shorter piece of each direction first, x varying slowest.
#[derive(Debug, Clone)]
pub struct Split2 {
    pub parent: usize,
    pub x_cut: f64,
    pub y_cut: f64,
    pub children: [usize; 4],
}

/// Filtration of the unit square by product splits. Atoms stay
/// rectangles by construction.
#[derive(Debug, Clone)]
pub struct Filtration2 {
    atoms: Vec<Atom2>,
    splits: Vec<Split2>,
    leaves: Vec<usize>,
}

fn ordered_pieces(seg: Segment, cut: f64) -> (Segment, Segment) {
    let lo = Segment::new(seg.a, cut);
    let hi = Segment::new(cut, seg.b);
    if lo.len() <= hi.len() {
        (lo, hi)
    } else {
        (hi, lo)
    }
}

impl Filtration2 {
    pub fn unit_square() -> Self {
        Filtration2 {
            atoms: vec![Atom2 {
                id: 0,
                rect: Rect {
                    x: Segment::new(0.0, 1.0),
                    y: Segment::new(0.0, 1.0),
                },
                parent: None,
            }],
            splits: Vec::new(),
            leaves: vec![0],
        }
    }

    /// Splits a leaf rectangle at interior coordinates, one per
    /// direction. Returns the four child ids in child order.
    pub fn split(&mut self, parent: usize, x_cut: f64, y_cut: f64) -> Result<[usize; 4]> {
        let Some(pos) = self.leaves.iter().position(|&l| l == parent) else {
            return Err(Error::NotALeaf(AtomId(parent as u32)));
        };
        let rect = self.atoms[parent].rect;
        if !(x_cut > rect.x.a && x_cut < rect.x.b && y_cut > rect.y.a && y_cut < rect.y.b) {
            return Err(Error::DegenerateCut(AtomId(parent as u32)));
        }
        let (xs, xl) = ordered_pieces(rect.x, x_cut);
        let (ys, yl) = ordered_pieces(rect.y, y_cut);
        let mut children = [0usize; 4];
        for (slot, (x, y)) in [(xs, ys), (xs, yl), (xl, ys), (xl, yl)].into_iter().enumerate() {
            let id = self.atoms.len();
            self.atoms.push(Atom2 {
                id,
                rect: Rect { x, y },
                parent: Some(parent),
            });
            children[slot] = id;
        }
        self.splits.push(Split2 {
            parent,
            x_cut,
            y_cut,
            children,
        });
        self.leaves.splice(pos..=pos, children);
        Ok(children)
    }

    pub fn atom(&self, id: usize) -> &Atom2 {
        &self.atoms[id]
    }

    pub fn splits(&self) -> &[Split2] {
        &self.splits
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn depth(&self) -> usize {
        self.splits.len()
    }
}

/// One direction of one split: bases of the parent interval and its two
/// pieces, with the parent's elements carried into piece coordinates and
/// the stepped rows spanning the orthogonal complement.
struct DirSplit {
    small: Segment,
    large: Segment,
    small_basis: AtomBasis,
    large_basis: AtomBasis,
    carried: Vec<Vec<f64>>,
    stepped: Vec<Vec<f64>>,
}

fn seg_support(seg: Segment) -> Support {
    Support::Intervals(vec![seg])
}

fn restriction(
    space: &ProbabilitySpace,
    s: &LocalSpace,
    from: &AtomBasis,
    to: &AtomBasis,
    seg: Segment,
) -> Result<Vec<Vec<f64>>> {
    let hint = s.poly_degree().map(|d| 2 * d);
    let support = seg_support(seg);
    let mut rows = Vec::with_capacity(from.rank);
    for i in 0..from.rank {
        let mut row = Vec::with_capacity(to.rank);
        for j in 0..to.rank {
            row.push(crate::space::integrate_products(
                space,
                s,
                &support,
                &|x, p| from.eval_onb(s, i, x, p) * to.eval_onb(s, j, x, p),
                hint,
            )?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn dir_split(space: &ProbabilitySpace, s: &LocalSpace, seg: Segment, cut: f64) -> Result<DirSplit> {
    let (small, large) = ordered_pieces(seg, cut);
    let parent_basis = atom_basis(space, s, &seg_support(seg))?;
    let small_basis = atom_basis(space, s, &seg_support(small))?;
    let large_basis = atom_basis(space, s, &seg_support(large))?;
    let to_small = restriction(space, s, &parent_basis, &small_basis, small)?;
    let to_large = restriction(space, s, &parent_basis, &large_basis, large)?;
    let carried: Vec<Vec<f64>> = to_small
        .into_iter()
        .zip(to_large)
        .map(|(a, b)| a.into_iter().chain(b).collect())
        .collect();
    let child_dim = small_basis.rank + large_basis.rank;
    let generators: Vec<Vec<f64>> = (0..child_dim)
        .map(|i| {
            let mut g = vec![0.0; child_dim];
            g[i] = 1.0;
            g
        })
        .collect();
    let stepped = increment_rows(&carried, &generators)
        .into_iter()
        .map(|(row, _)| row)
        .collect();
    Ok(DirSplit {
        small,
        large,
        small_basis,
        large_basis,
        carried,
        stepped,
    })
}

impl DirSplit {
    fn rows(&self, mu: u8) -> &[Vec<f64>] {
        if mu == 0 {
            &self.carried
        } else {
            &self.stepped
        }
    }

    fn eval_row(&self, s: &LocalSpace, row: &[f64], x: f64) -> f64 {
        let k_small = self.small_basis.rank;
        if x >= self.small.a && x < self.small.b {
            (0..k_small)
                .map(|t| row[t] * self.small_basis.eval_onb(s, t, x, None))
                .sum()
        } else if x >= self.large.a && x < self.large.b {
            (0..self.large_basis.rank)
                .map(|t| row[k_small + t] * self.large_basis.eval_onb(s, t, x, None))
                .sum()
        } else {
            0.0
        }
    }
}

/// Index of one product element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorElement {
    /// `None` marks the block spanning the root rectangle.
    pub split: Option<usize>,
    /// Per-direction flag: 0 carries the parent span, 1 steps into the
    /// increment. `(0, 0)` only occurs in the root block.
    pub mu: (u8, u8),
    pub i: usize,
    pub j: usize,
}

/// Orthonormal product system over a rectangle filtration.
///
/// The root block spans `S1 x S2` on the unit square; each split
/// contributes the tensor elements with `mu != (0, 0)`, orthogonal to
/// the parent span and to every other split. Immutable after build and
/// read-shareable.
pub struct TensorSystem2 {
    filt: Filtration2,
    s1: Arc<LocalSpace>,
    s2: Arc<LocalSpace>,
    root_x: AtomBasis,
    root_y: AtomBasis,
    dirs: Vec<(DirSplit, DirSplit)>,
    elements: Vec<TensorElement>,
}

const TENSOR_MUS: [(u8, u8); 3] = [(0, 1), (1, 0), (1, 1)];

impl TensorSystem2 {
    pub fn build(filt: Filtration2, s1: Arc<LocalSpace>, s2: Arc<LocalSpace>) -> Result<Self> {
        let line = ProbabilitySpace::unit_interval();
        let root = filt.atom(0).rect;
        let root_x = atom_basis(&line, &s1, &seg_support(root.x))?;
        let root_y = atom_basis(&line, &s2, &seg_support(root.y))?;
        if root_x.rank == 0 || root_y.rank == 0 {
            return Err(Error::RankDeficiency {
                atom: AtomId(0),
                got: 0,
                expected: 1,
            });
        }
        let mut elements = Vec::new();
        for i in 0..root_x.rank {
            for j in 0..root_y.rank {
                elements.push(TensorElement {
                    split: None,
                    mu: (0, 0),
                    i,
                    j,
                });
            }
        }
        let mut dirs = Vec::with_capacity(filt.depth());
        for (k, split) in filt.splits().iter().enumerate() {
            let rect = filt.atom(split.parent).rect;
            let dx = dir_split(&line, &s1, rect.x, split.x_cut)?;
            let dy = dir_split(&line, &s2, rect.y, split.y_cut)?;
            for mu in TENSOR_MUS {
                for i in 0..dx.rows(mu.0).len() {
                    for j in 0..dy.rows(mu.1).len() {
                        elements.push(TensorElement {
                            split: Some(k),
                            mu,
                            i,
                            j,
                        });
                    }
                }
            }
            dirs.push((dx, dy));
        }
        Ok(TensorSystem2 {
            filt,
            s1,
            s2,
            root_x,
            root_y,
            dirs,
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, e: usize) -> &TensorElement {
        &self.elements[e]
    }

    pub fn filtration(&self) -> &Filtration2 {
        &self.filt
    }

    /// Rectangle outside which the element vanishes.
    pub fn support_rect(&self, e: usize) -> Rect {
        match self.elements[e].split {
            None => self.filt.atom(0).rect,
            Some(k) => self.filt.atom(self.filt.splits()[k].parent).rect,
        }
    }

    pub fn eval(&self, e: usize, x: f64, y: f64) -> f64 {
        let el = &self.elements[e];
        match el.split {
            None => {
                if !self.filt.atom(0).rect.contains(x, y) {
                    return 0.0;
                }
                self.root_x.eval_onb(&self.s1, el.i, x, None)
                    * self.root_y.eval_onb(&self.s2, el.j, y, None)
            }
            Some(k) => {
                if !self.support_rect(e).contains(x, y) {
                    return 0.0;
                }
                let (dx, dy) = &self.dirs[k];
                dx.eval_row(&self.s1, &dx.rows(el.mu.0)[el.i], x)
                    * dy.eval_row(&self.s2, &dy.rows(el.mu.1)[el.j], y)
            }
        }
    }

    /// Per-direction factor closures of the element on one leaf, or
    /// `None` where it vanishes. On any leaf every element is a pure
    /// product, so inner products reduce to two line integrals.
    #[allow(clippy::type_complexity)]
    fn factors_on_leaf(
        &self,
        e: usize,
        leaf: usize,
    ) -> Option<(Box<dyn Fn(f64) -> f64 + '_>, Box<dyn Fn(f64) -> f64 + '_>)> {
        let el = self.elements[e];
        let rect = self.filt.atom(leaf).rect;
        let (cx, cy) = rect.center();
        match el.split {
            None => Some((
                Box::new(move |x| self.root_x.eval_onb(&self.s1, el.i, x, None)),
                Box::new(move |y| self.root_y.eval_onb(&self.s2, el.j, y, None)),
            )),
            Some(k) => {
                if !self.support_rect(e).contains(cx, cy) {
                    return None;
                }
                let (dx, dy) = &self.dirs[k];
                let row_x = &dx.rows(el.mu.0)[el.i];
                let row_y = &dy.rows(el.mu.1)[el.j];
                Some((
                    Box::new(move |x| dx.eval_row(&self.s1, row_x, x)),
                    Box::new(move |y| dy.eval_row(&self.s2, row_y, y)),
                ))
            }
        }
    }

    fn line_nodes(&self) -> usize {
        match (self.s1.poly_degree(), self.s2.poly_degree()) {
            (Some(a), Some(b)) => nodes_for_degree(2 * a.max(b)),
            _ => 64,
        }
    }

    /// Inner product of two elements over the square.
    pub fn inner(&self, a: usize, b: usize) -> f64 {
        let n = self.line_nodes();
        let mut acc = 0.0;
        for &leaf in self.filt.leaves() {
            let Some((ax, ay)) = self.factors_on_leaf(a, leaf) else {
                continue;
            };
            let Some((bx, by)) = self.factors_on_leaf(b, leaf) else {
                continue;
            };
            let rect = self.filt.atom(leaf).rect;
            let ix = gl_integrate(&|x| ax(x) * bx(x), rect.x.a, rect.x.b, n);
            let iy = gl_integrate(&|y| ay(y) * by(y), rect.y.a, rect.y.b, n);
            acc += ix * iy;
        }
        acc
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.len() {
            for b in a..self.len() {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(a, b) - target).abs());
            }
        }
        worst
    }

    /// Sup of the element over a dense grid on one child rectangle.
    fn sup_on_rect(&self, e: usize, rect: Rect, grid: usize) -> f64 {
        let mut sup = 0.0f64;
        for i in 0..grid {
            let x = rect.x.a + (i as f64 + 0.5) / grid as f64 * rect.x.len();
            for j in 0..grid {
                let y = rect.y.a + (j as f64 + 0.5) / grid as f64 * rect.y.len();
                sup = sup.max(self.eval(e, x, y).abs());
            }
        }
        sup
    }

    /// Largest ratio of the measured sup on a child rectangle to the
    /// product profile predicted from the two directions: carried
    /// factors scale like the parent side to the power -1/2, stepped
    /// factors like the short piece to -1/2 on the short piece and
    /// like short^{1/2}/long on the long piece.
    pub fn profile_ratio(&self, e: usize) -> Result<f64> {
        let el = self.elements[e];
        let Some(k) = el.split else {
            return Err(Error::InvalidParameter(
                "profile is defined for split elements".into(),
            ));
        };
        let split = &self.filt.splits()[k];
        let (dx, dy) = &self.dirs[k];
        let parent = self.filt.atom(split.parent).rect;
        let mut worst = 0.0f64;
        for &child in &split.children {
            let rect = self.filt.atom(child).rect;
            let bound_x = direction_bound(el.mu.0, parent.x, dx, rect.x);
            let bound_y = direction_bound(el.mu.1, parent.y, dy, rect.y);
            let sup = self.sup_on_rect(e, rect, 64);
            worst = worst.max(sup / (bound_x * bound_y));
        }
        Ok(worst)
    }
}

fn direction_bound(mu: u8, parent: Segment, dir: &DirSplit, piece: Segment) -> f64 {
    if mu == 0 {
        return parent.len().powf(-0.5);
    }
    let small = dir.small.len();
    if piece == dir.small {
        small.powf(-0.5)
    } else {
        small.sqrt() / dir.large.len()
    }
}

/// Smallest ratio of the mean of `|f|` to its sup over random draws
/// from the product span on one rectangle. Staying away from zero is
/// the two-dimensional analogue of the one-dimensional level-set
/// comparison, by integrating one direction at a time.
pub fn mean_sup_ratio(
    s1: &LocalSpace,
    s2: &LocalSpace,
    rect: Rect,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let line = ProbabilitySpace::unit_interval();
    let bx = atom_basis(&line, s1, &seg_support(rect.x))?;
    let by = atom_basis(&line, s2, &seg_support(rect.y))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = 64;
    let mut worst = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let coeffs: Vec<Vec<f64>> = (0..bx.rank)
            .map(|_| (0..by.rank).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let f = |x: f64, y: f64| -> f64 {
            let mut acc = 0.0;
            for (i, row) in coeffs.iter().enumerate() {
                let vx = bx.eval_onb(s1, i, x, None);
                for (j, c) in row.iter().enumerate() {
                    acc += c * vx * by.eval_onb(s2, j, y, None);
                }
            }
            acc
        };
        let mean = gl_integrate(
            &|x| gl_integrate(&|y| f(x, y).abs(), rect.y.a, rect.y.b, n),
            rect.x.a,
            rect.x.b,
            n,
        ) / rect.area();
        let mut sup = 0.0f64;
        let grid = 96;
        for i in 0..grid {
            let x = rect.x.a + (i as f64 + 0.5) / grid as f64 * rect.x.len();
            for j in 0..grid {
                let y = rect.y.a + (j as f64 + 0.5) / grid as f64 * rect.y.len();
                sup = sup.max(f(x, y).abs());
            }
        }
        if sup > 0.0 {
            worst = worst.min(mean / sup);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haar_square() -> TensorSystem2 {
        let mut filt = Filtration2::unit_square();
        filt.split(0, 0.5, 0.5).unwrap();
        TensorSystem2::build(
            filt,
            Arc::new(LocalSpace::indicator()),
            Arc::new(LocalSpace::indicator()),
        )
        .unwrap()
    }

    #[test]
    fn even_indicator_split_gives_three_unit_elements() {
        let sys = haar_square();
        assert_eq!(sys.len(), 4);
        assert!(sys.gram_deviation() < 1e-12);
        let centers = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)];
        for e in 1..4 {
            for &(x, y) in &centers {
                assert!((sys.eval(e, x, y).abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn carried_direction_is_constant_across_the_cut() {
        let mut filt = Filtration2::unit_square();
        filt.split(0, 0.3, 0.6).unwrap();
        let sys = TensorSystem2::build(
            filt,
            Arc::new(LocalSpace::indicator()),
            Arc::new(LocalSpace::polynomial(1)),
        )
        .unwrap();
        assert_eq!(sys.len(), 2 + 3 * 2);
        for e in 0..sys.len() {
            let el = *sys.element(e);
            if el.split.is_none() || el.mu.0 != 0 {
                continue;
            }
            for y in [0.2, 0.9] {
                let on_small = sys.eval(e, 0.15, y);
                let on_large = sys.eval(e, 0.8, y);
                assert!(
                    (on_small - on_large).abs() < 1e-12,
                    "element {e} at y={y}: {on_small} vs {on_large}"
                );
            }
        }
    }

    #[test]
    fn children_are_ordered_short_side_first() {
        let mut filt = Filtration2::unit_square();
        let children = filt.split(0, 0.3, 0.7).unwrap();
        let first = filt.atom(children[0]).rect;
        assert_eq!(first.x, Segment::new(0.0, 0.3));
        assert_eq!(first.y, Segment::new(0.7, 1.0));
        let last = filt.atom(children[3]).rect;
        assert_eq!(last.x, Segment::new(0.3, 1.0));
        assert_eq!(last.y, Segment::new(0.0, 0.7));
    }

    #[test]
    fn two_uneven_poly_splits_have_identity_gram() {
        let mut filt = Filtration2::unit_square();
        let children = filt.split(0, 0.42, 0.58).unwrap();
        filt.split(children[3], 0.7, 0.25).unwrap();
        let sys = TensorSystem2::build(
            filt,
            Arc::new(LocalSpace::polynomial(1)),
            Arc::new(LocalSpace::polynomial(1)),
        )
        .unwrap();
        assert_eq!(sys.len(), 4 + 12 + 12);
        assert!(sys.gram_deviation() < 1e-10, "{}", sys.gram_deviation());
    }

    #[test]
    fn profile_tracks_the_blowup_of_uneven_splits() {
        let mut ratio_caps = Vec::new();
        let mut sup_caps = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let mut filt = Filtration2::unit_square();
            filt.split(0, eps, 1.0 - eps).unwrap();
            let sys = TensorSystem2::build(
                filt,
                Arc::new(LocalSpace::polynomial(1)),
                Arc::new(LocalSpace::polynomial(1)),
            )
            .unwrap();
            let corner = sys.filtration().atom(sys.filtration().splits()[0].children[0]).rect;
            let mut worst_ratio = 0.0f64;
            let mut worst_sup = 0.0f64;
            for e in 0..sys.len() {
                if sys.element(e).split.is_none() {
                    assert!(sys.profile_ratio(e).is_err());
                    continue;
                }
                let ratio = sys.profile_ratio(e).unwrap();
                assert!(ratio > 0.05 && ratio < 20.0, "element {e}: ratio {ratio}");
                worst_ratio = worst_ratio.max(ratio);
                worst_sup = worst_sup.max(sys.sup_on_rect(e, corner, 32));
            }
            ratio_caps.push(worst_ratio);
            sup_caps.push(worst_sup);
        }
        // The raw sups diverge with the cut, the profile-normalized
        // ratios settle to a constant of the space.
        assert!(sup_caps[2] / sup_caps[0] > 50.0);
        assert!(ratio_caps[2] / ratio_caps[0] < 1.5);
    }

    #[test]
    fn split_rejects_bad_requests() {
        let mut filt = Filtration2::unit_square();
        assert!(filt.split(0, 0.0, 0.5).is_err());
        assert!(filt.split(0, 0.5, 1.0).is_err());
        filt.split(0, 0.5, 0.5).unwrap();
        assert!(matches!(filt.split(0, 0.25, 0.25), Err(Error::NotALeaf(_))));
    }

    #[test]
    fn mean_stays_comparable_to_sup_on_random_draws() {
        let rect = Rect {
            x: Segment::new(0.2, 0.9),
            y: Segment::new(0.1, 0.4),
        };
        let ratio = mean_sup_ratio(
            &LocalSpace::polynomial(1),
            &LocalSpace::polynomial(1),
            rect,
            30,
            5,
        )
        .unwrap();
        assert!(ratio > 0.05, "smallest mean/sup ratio {ratio}");
    }
}
