//! Stopping times and a three-part threshold decomposition.
//!
//! [`decompose`] splits a leaf-space function as `f = a + b + c` at a
//! threshold `lambda`: `a` lives past a stopping time and has small support,
//! `b` collects recentered jumps whose absolute sums stay integrable, and
//! `c` keeps a sup norm of order `lambda`. Two stopping rules drive the
//! split. The first, `r`, fires where a running conditional mean of the
//! partial projections exceeds its threshold; the second, `s`, fires where
//! the jump mass collected at the `r`-stopped atoms accumulates past
//! `lambda`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{AtomId, Filtration};
use crate::ortho::{LeafFn, OrthoSystem};

/// Leaf-resolved stopping level, `None` meaning the leaf never stops.
///
/// Values live in `{-1, 0, ..., depth}`. Level `-1` arises from the
/// accumulated-mass rule of [`decompose`]; since the level-0 partition is
/// the whole space, an adapted time is `-1` either on every leaf or on none.
#[derive(Debug, Clone)]
pub struct StoppingTime {
    filt: Arc<Filtration>,
    by_leaf: Vec<Option<i32>>,
}

impl StoppingTime {
    /// Wraps one stopping level per leaf, in leaf order.
    pub fn from_leaf_values(filt: Arc<Filtration>, by_leaf: Vec<Option<i32>>) -> Result<Self> {
        if by_leaf.len() != filt.leaves().len() {
            return Err(Error::InvalidParameter(format!(
                "{} stopping values for {} leaves",
                by_leaf.len(),
                filt.leaves().len()
            )));
        }
        let top = filt.depth() as i32;
        for v in by_leaf.iter().flatten() {
            if *v < -1 || *v > top {
                return Err(Error::InvalidParameter(format!(
                    "stopping level {v} outside -1..={top}"
                )));
            }
        }
        Ok(StoppingTime { filt, by_leaf })
    }

    /// The same level everywhere; `None` never stops.
    pub fn constant(filt: Arc<Filtration>, value: Option<i32>) -> Result<Self> {
        let n = filt.leaves().len();
        Self::from_leaf_values(filt, vec![value; n])
    }

    pub fn filtration(&self) -> &Arc<Filtration> {
        &self.filt
    }

    /// Stopping levels in leaf order.
    pub fn leaf_values(&self) -> &[Option<i32>] {
        &self.by_leaf
    }

    /// Pointwise minimum, treating `None` as infinite.
    pub fn min(&self, other: &StoppingTime) -> Result<StoppingTime> {
        if !Arc::ptr_eq(&self.filt, &other.filt) {
            return Err(Error::InvalidParameter(
                "stopping times over different filtrations".into(),
            ));
        }
        let by_leaf = self
            .by_leaf
            .iter()
            .zip(&other.by_leaf)
            .map(|(a, b)| match (a, b) {
                (Some(x), Some(y)) => Some(*x.min(y)),
                (Some(x), None) | (None, Some(x)) => Some(*x),
                (None, None) => None,
            })
            .collect();
        Ok(StoppingTime {
            filt: Arc::clone(&self.filt),
            by_leaf,
        })
    }

    /// Leaf mask of `{T = n}`.
    pub fn level_set(&self, n: i32) -> Vec<bool> {
        self.by_leaf.iter().map(|&v| v == Some(n)).collect()
    }

    /// Leaf mask of `{T >= n}`, counting `None` as infinite.
    pub fn at_least(&self, n: i32) -> Vec<bool> {
        self.by_leaf.iter().map(|&v| v.is_none_or(|k| k >= n)).collect()
    }

    /// Whether `{T <= n}` is a union of level-`n` atoms for every `n`: on
    /// each atom the leaf values must either agree on a common level `<= n`
    /// or all exceed `n`.
    pub fn is_adapted(&self) -> bool {
        let mut val = vec![None; self.filt.atom_count()];
        for (&leaf, &v) in self.filt.leaves().iter().zip(&self.by_leaf) {
            val[leaf.index()] = Some(v);
        }
        for n in 0..=self.filt.depth() {
            for &atom in self.filt.level_atoms(n) {
                let leaves = self.filt.leaves_under(atom);
                let vals: Vec<Option<i32>> =
                    leaves.iter().map(|l| val[l.index()].unwrap()).collect();
                let running = vals.iter().all(|v| v.is_none_or(|k| k > n as i32));
                let stopped = vals.windows(2).all(|w| w[0] == w[1])
                    && vals[0].is_some_and(|k| k <= n as i32);
                if !running && !stopped {
                    return false;
                }
            }
        }
        true
    }
}

/// Zeroes the rows of `g` outside a leaf mask. Exact, since the mask set is
/// a union of leaves.
fn mask_rows(g: &LeafFn, keep: &[bool]) -> LeafFn {
    let coeffs = g
        .coeffs
        .iter()
        .zip(keep)
        .map(|(row, &k)| if k { row.clone() } else { vec![0.0; row.len()] })
        .collect();
    LeafFn { coeffs }
}

/// Conditional mean at level `n` of a function that is constant per leaf,
/// returned again as one value per leaf.
fn level_means(filt: &Filtration, leaf_vals: &[f64], n: usize) -> Vec<f64> {
    let mut mass = vec![0.0; filt.atom_count()];
    for (&leaf, &v) in filt.leaves().iter().zip(leaf_vals) {
        mass[leaf.index()] = v * filt.atom(leaf).measure;
    }
    for idx in (0..mass.len()).rev() {
        if let Some((s, l)) = filt.children(AtomId(idx as u32)) {
            mass[idx] = mass[s.index()] + mass[l.index()];
        }
    }
    filt.leaves()
        .iter()
        .map(|&leaf| {
            let a = filt.ancestor_at(leaf, n);
            mass[a.index()] / filt.atom(a).measure
        })
        .collect()
}

/// Projections of `f` onto the whole-level prefixes, one per level.
fn level_prefixes(sys: &OrthoSystem, f: &LeafFn) -> (Vec<f64>, Vec<LeafFn>) {
    let coef = sys.expand(f);
    let mut run = sys.zero_fn();
    let mut out = Vec::with_capacity(sys.level_count());
    let mut upto = 0;
    for n in 0..sys.level_count() {
        let end = sys.through_level(n);
        for m in upto..end {
            run.add_scaled(sys.leaf_form(m + 1), coef[m]);
        }
        upto = end;
        out.push(run.clone());
    }
    (coef, out)
}

fn stopped_rows(f: &LeafFn, t: &StoppingTime, levels: &[LeafFn]) -> LeafFn {
    let coeffs = t
        .by_leaf
        .iter()
        .enumerate()
        .map(|(pos, &v)| match v {
            None => f.coeffs[pos].clone(),
            Some(-1) => vec![0.0; f.coeffs[pos].len()],
            Some(n) => levels[n as usize].coeffs[pos].clone(),
        })
        .collect();
    LeafFn { coeffs }
}

/// Evaluates `x -> (P_{T(x)} f)(x)`: the level-`T` projection where `T` is
/// finite, `f` itself where `T` is infinite, zero where `T = -1`.
pub fn stopped_process(sys: &OrthoSystem, f: &LeafFn, t: &StoppingTime) -> Result<LeafFn> {
    if !Arc::ptr_eq(sys.filtration(), t.filtration()) {
        return Err(Error::InvalidParameter(
            "stopping time over a different filtration".into(),
        ));
    }
    let (_, levels) = level_prefixes(sys, f);
    Ok(stopped_rows(f, t, &levels))
}

/// Largest pointwise deviation of `R_m f` from `R_m g_T` on `{T >= n}`,
/// where `m` is the `j`-th element (1-based) of the level-`n` block. Both
/// projections agree there for any stopping time, so the value is a
/// round-off diagnostic.
pub fn stopping_identity_check(
    sys: &OrthoSystem,
    f: &LeafFn,
    t: &StoppingTime,
    n: usize,
    j: usize,
) -> Result<f64> {
    let range = sys.level_range(n);
    if j == 0 || range.start + j > range.end {
        return Err(Error::IndexOutOfRange(format!(
            "element {j} of level {n}"
        )));
    }
    let m = range.start + j - 1;
    let g_t = stopped_process(sys, f, t)?;
    let diff = sys.project(f, m).minus(&sys.project(&g_t, m));
    let masked = mask_rows(&diff, &t.at_least(n as i32));
    sys.norm(&masked, f64::INFINITY)
}

/// The pieces of the threshold decomposition `f = a + b + c`, along with
/// the stopping data that produced them.
#[derive(Debug, Clone)]
pub struct GundyParts {
    pub lambda: f64,
    pub c3: f64,
    /// `L1` norm of the decomposed function, recorded because the bounds
    /// are stated for unit mass.
    pub norm_f_l1: f64,
    pub r: StoppingTime,
    pub s: StoppingTime,
    pub t: StoppingTime,
    /// Jump mass collected at `{r = n}`, one value per leaf, per level.
    pub v: Vec<Vec<f64>>,
    /// Integral of every `v[n]`, summed over levels.
    pub sum_ev: f64,
    pub g_t: LeafFn,
    pub da: Vec<LeafFn>,
    pub db: Vec<LeafFn>,
    pub dc: Vec<LeafFn>,
    pub a: LeafFn,
    pub b: LeafFn,
    pub c: LeafFn,
}

impl GundyParts {
    /// Largest coefficient deviation of `a + b + c` from `f`.
    pub fn reconstruction_dev(&self, f: &LeafFn) -> f64 {
        let mut worst = 0.0f64;
        for (pos, row) in f.coeffs.iter().enumerate() {
            for (i, &want) in row.iter().enumerate() {
                let got =
                    self.a.coeffs[pos][i] + self.b.coeffs[pos][i] + self.c.coeffs[pos][i];
                worst = worst.max((got - want).abs());
            }
        }
        worst
    }

    /// Largest coefficient deviation of `b + c` from the stopped process.
    pub fn stopped_dev(&self) -> f64 {
        let mut worst = 0.0f64;
        for (pos, row) in self.g_t.coeffs.iter().enumerate() {
            for (i, &want) in row.iter().enumerate() {
                let got = self.b.coeffs[pos][i] + self.c.coeffs[pos][i];
                worst = worst.max((got - want).abs());
            }
        }
        worst
    }

    /// Largest projection of any `db_m` or `dc_m` onto the preceding
    /// prefix span: both families are difference sequences, so `R_{m-1}`
    /// must annihilate the `m`-th term.
    pub fn difference_dev(&self, sys: &OrthoSystem) -> f64 {
        let mut worst = 0.0f64;
        for (idx, part) in self.db.iter().chain(self.dc.iter()).enumerate() {
            let m = idx % self.db.len() + 1;
            let coef = sys.expand(part);
            for &c in &coef[..m - 1] {
                worst = worst.max(c.abs());
            }
        }
        worst
    }
}

/// Runs the two stopping rules at threshold `lambda` and assembles the
/// decomposition. `c3` is the measured projection-to-mean ratio of the
/// system; the first rule compares conditional means against
/// `lambda / (4 c3)`, so `c3 >= 1/4` keeps every stopped set inside the
/// atom split at its level.
pub fn decompose(sys: &OrthoSystem, f: &LeafFn, lambda: f64, c3: f64) -> Result<GundyParts> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositive {
            what: "threshold",
            value: lambda,
        });
    }
    if !(c3 > 0.0) {
        return Err(Error::NonPositive {
            what: "projection ratio",
            value: c3,
        });
    }
    let filt = Arc::clone(sys.filtration());
    let depth = filt.depth();
    let nleaf = filt.leaves().len();
    let norm_f_l1 = sys.norm(f, 1.0)?;
    let theta = lambda / (4.0 * c3);

    let (coef, g_levels) = level_prefixes(sys, f);
    let df: Vec<LeafFn> = (1..=coef.len())
        .map(|m| {
            let mut d = sys.leaf_form(m).clone();
            d.scale(coef[m - 1]);
            d
        })
        .collect();

    // First rule: conditional means of the running projections.
    let mut r_val: Vec<Option<i32>> = vec![None; nleaf];
    let mut run = sys.zero_fn();
    for n in 0..=depth {
        let mut cond = vec![false; nleaf];
        for m in sys.level_range(n) {
            run.add_scaled(&df[m - 1], 1.0);
            let e_fm = sys.per_leaf_values(&sys.abs_mean(&run, n)?);
            for (c, v) in cond.iter_mut().zip(e_fm) {
                if v > lambda {
                    *c = true;
                }
            }
        }
        let e_g = sys.per_leaf_values(&sys.abs_mean(&g_levels[n], n)?);
        for (c, v) in cond.iter_mut().zip(e_g) {
            if v > theta {
                *c = true;
            }
        }
        for (slot, &c) in r_val.iter_mut().zip(&cond) {
            if c && slot.is_none() {
                *slot = Some(n as i32);
            }
        }
    }
    let r = StoppingTime::from_leaf_values(Arc::clone(&filt), r_val)?;

    // Jump mass at the stopped atoms. `{r = n}` is a union of level-`n`
    // atoms, so masking leaf rows commutes with the level-`n` mean.
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    for n in 0..=depth {
        let r_here = r.level_set(n as i32);
        let mut vn = vec![0.0; nleaf];
        for m in sys.level_range(n) {
            let e_df = sys.per_leaf_values(&sys.abs_mean(&df[m - 1], n)?);
            for ((slot, &hit), e) in vn.iter_mut().zip(&r_here).zip(e_df) {
                if hit {
                    *slot += e;
                }
            }
        }
        v.push(vn);
    }

    // Second rule: accumulated jump mass, one look-ahead mean per level.
    // Level -1 seeds the sum with the level-0 mean of `v[0]`.
    let mut s_val: Vec<Option<i32>> = vec![None; nleaf];
    let mut acc = vec![0.0; nleaf];
    for step in 0..=depth + 1 {
        let n = step as i32 - 1;
        if step <= depth {
            let ahead = level_means(&filt, &v[step], if step == 0 { 0 } else { n as usize });
            for (a, e) in acc.iter_mut().zip(ahead) {
                *a += e;
            }
        }
        if n >= 0 {
            for (a, w) in acc.iter_mut().zip(&v[n as usize]) {
                *a += w;
            }
        }
        for (slot, &a) in s_val.iter_mut().zip(&acc) {
            if a > lambda && slot.is_none() {
                *slot = Some(n);
            }
        }
    }
    let s = StoppingTime::from_leaf_values(Arc::clone(&filt), s_val)?;
    let t = r.min(&s)?;

    let g_t = stopped_rows(f, &t, &g_levels);
    let mut a = f.clone();
    a.add_scaled(&g_t, -1.0);

    let total = df.len();
    let mut da = Vec::with_capacity(total);
    let mut db = Vec::with_capacity(total);
    let mut dc = Vec::with_capacity(total);
    let mut b = sys.zero_fn();
    let mut c = sys.zero_fn();
    for n in 0..=depth {
        let t_before = t.at_least(n as i32).iter().map(|k| !k).collect::<Vec<_>>();
        let r_after: Vec<bool> = r.leaf_values().iter().map(|&v| v.is_none_or(|k| k > n as i32)).collect();
        let r_here = r.level_set(n as i32);
        let s_from = s.at_least(n as i32);
        for m in sys.level_range(n) {
            da.push(mask_rows(&df[m - 1], &t_before));
            let keep_gamma: Vec<bool> =
                r_after.iter().zip(&s_from).map(|(&x, &y)| x && y).collect();
            let keep_delta: Vec<bool> =
                r_here.iter().zip(&s_from).map(|(&x, &y)| x && y).collect();
            let gamma = mask_rows(&df[m - 1], &keep_gamma);
            let delta = mask_rows(&df[m - 1], &keep_delta);
            let r_delta = sys.project(&delta, m - 1);
            let mut db_m = delta;
            db_m.add_scaled(&r_delta, -1.0);
            let mut dc_m = gamma;
            dc_m.add_scaled(&r_delta, 1.0);
            b.add_scaled(&db_m, 1.0);
            c.add_scaled(&dc_m, 1.0);
            db.push(db_m);
            dc.push(dc_m);
        }
    }

    let sum_ev: f64 = v
        .iter()
        .map(|vn| {
            filt.leaves()
                .iter()
                .zip(vn)
                .map(|(&l, &x)| filt.atom(l).measure * x)
                .sum::<f64>()
        })
        .sum();

    Ok(GundyParts {
        lambda,
        c3,
        norm_f_l1,
        r,
        s,
        t,
        v,
        sum_ev,
        g_t,
        da,
        db,
        dc,
        a,
        b,
        c,
    })
}

/// The five scalars the decomposition is judged by.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GundyReport {
    pub lambda: f64,
    pub norm_f_l1: f64,
    /// `L1` norm of the past-stopping part `a`.
    pub norm_a_l1: f64,
    /// Measure of the set where some `da_m` is non-zero.
    pub prob_da: f64,
    /// `L1` norm of the pointwise sum of all `|db_m|`.
    pub db_abs_sum_l1: f64,
    pub norm_c_l1: f64,
    pub norm_c_sup: f64,
}

impl GundyReport {
    pub const CSV_HEADER: &'static str =
        "seed,lambda,norm_a,prob_da,norm_db_sum,norm_c_1,norm_c_inf_over_lambda";

    /// The bounded quantities: `{|a|_1, P(da != 0) * lambda, |sum |db||_1,
    /// |c|_1, |c|_inf / lambda}`. Each is dominated by a constant times the
    /// recorded mass of `f`.
    pub fn scalars(&self) -> [f64; 5] {
        [
            self.norm_a_l1,
            self.prob_da * self.lambda,
            self.db_abs_sum_l1,
            self.norm_c_l1,
            self.norm_c_sup / self.lambda,
        ]
    }

    pub fn csv_row(&self, seed: u64) -> String {
        format!(
            "{seed},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.lambda,
            self.norm_a_l1,
            self.prob_da,
            self.db_abs_sum_l1,
            self.norm_c_l1,
            self.norm_c_sup / self.lambda,
        )
    }
}

/// Measures the five scalar bounds of a decomposition. The terms `|db_m|`
/// have disjoint supports across `m` only levelwise, so the pointwise-sum
/// norm is computed term by term, which is exact for non-negative summands.
pub fn verify_parts(sys: &OrthoSystem, parts: &GundyParts) -> Result<GundyReport> {
    let filt = sys.filtration();
    let norm_a_l1 = sys.norm(&parts.a, 1.0)?;
    let mut hit = vec![false; filt.leaves().len()];
    for dam in &parts.da {
        for (h, row) in hit.iter_mut().zip(&dam.coeffs) {
            if row.iter().any(|&c| c != 0.0) {
                *h = true;
            }
        }
    }
    let prob_da = filt
        .leaves()
        .iter()
        .zip(&hit)
        .filter(|(_, &h)| h)
        .map(|(&l, _)| filt.atom(l).measure)
        .sum();
    let mut db_abs_sum_l1 = 0.0;
    for db_m in &parts.db {
        db_abs_sum_l1 += sys.norm(db_m, 1.0)?;
    }
    Ok(GundyReport {
        lambda: parts.lambda,
        norm_f_l1: parts.norm_f_l1,
        norm_a_l1,
        prob_da,
        db_abs_sum_l1,
        norm_c_l1: sys.norm(&parts.c, 1.0)?,
        norm_c_sup: sys.norm(&parts.c, f64::INFINITY)?,
    })
}
