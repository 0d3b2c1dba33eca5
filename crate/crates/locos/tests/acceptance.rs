//! Acceptance suite: one test per numbered criterion, each printing a
//! single verdict line (visible with `--nocapture`) and asserting the
//! pinned tolerances. Seeds are fixed so every run measures the same
//! constants.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use locos::analysis::{
    default_lambda_grid, democracy_ratio, density_experiment, fit_log_slope, greedy_vs_best,
    unconditionality_constant, weak_type_ratio, RefinePolicy,
};
use locos::gundy::{decompose, verify_parts};
use locos::measure::{
    random_filtration, Cut, Filtration, Func, ProbabilitySpace, Segment, Site, Support,
};
use locos::measure::dyadic_filtration;
use locos::nonbinary::{
    comparable_rway, norm_product_check, op_condition, random_rway, remez_recursion,
    two_scale_filtration, CoefficientPreset, NonbinarySystem,
};
use locos::ortho::{counterexample_three, ChainPolicy, OrthoSystem};
use locos::space::{eval_local, remez_constants_from_growth, remez_empirical, LocalSpace};

/// Stated runtime limits assume an optimized build; unoptimized test
/// profiles get a fixed multiple of each limit.
const TIME_SCALE: f64 = if cfg!(debug_assertions) { 25.0 } else { 1.0 };

/// Prints the verdict line for one criterion and asserts it.
fn verdict(n: usize, what: &str, started: Instant, limit_s: f64, failures: &[String]) {
    let elapsed = started.elapsed().as_secs_f64();
    let limit = limit_s * TIME_SCALE;
    let ok = failures.is_empty() && elapsed < limit;
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {n:2}: {what} ({elapsed:.2}s, limit {limit_s:.0}s)");
    for f in failures {
        println!("        {f}");
    }
    assert!(
        failures.is_empty(),
        "criterion {n}: {}",
        failures.join("; ")
    );
    assert!(
        elapsed < limit,
        "criterion {n} took {elapsed:.2}s, limit {limit:.0}s"
    );
}

fn unit() -> Arc<ProbabilitySpace> {
    Arc::new(ProbabilitySpace::unit_interval())
}

fn build(filt: &Arc<Filtration>, local: &Arc<LocalSpace>, policy: ChainPolicy) -> OrthoSystem {
    OrthoSystem::build(Arc::clone(filt), Arc::clone(local), policy).expect("system builds")
}

fn random_system(splits: usize, seed: u64, local: LocalSpace) -> OrthoSystem {
    let filt = Arc::new(random_filtration(unit(), splits, seed).expect("filtration"));
    build(&filt, &Arc::new(local), ChainPolicy::SmallFirst)
}

/// Largest deviation of the pairwise inner products from the identity.
fn gram_deviation(sys: &OrthoSystem) -> f64 {
    let mut dev = 0.0f64;
    for i in 1..=sys.len() {
        for j in i..=sys.len() {
            let want = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((sys.leaf_form(i).dot(sys.leaf_form(j)) - want).abs());
        }
    }
    dev
}

/// The stock 8-point discrete space with masses 1..8 and its three-leaf
/// filtration.
fn eight_point_system() -> OrthoSystem {
    let points = [0.0, 0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 0.95];
    let masses = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let space = Arc::new(ProbabilitySpace::discrete(&points, &masses).unwrap());
    let mut filt = Filtration::new(Arc::clone(&space));
    filt.split(locos::measure::AtomId(0), Cut::TakePoints(vec![0, 1, 2, 3]))
        .unwrap();
    filt.split(locos::measure::AtomId(1), Cut::TakePoints(vec![0, 1]))
        .unwrap();
    filt.split(locos::measure::AtomId(2), Cut::TakePoints(vec![4, 5]))
        .unwrap();
    build(
        &Arc::new(filt),
        &Arc::new(LocalSpace::indicator()),
        ChainPolicy::SmallFirst,
    )
}

#[test]
fn criterion01_orthonormality_and_structure() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(101);

    for t in 0..20u64 {
        let splits = 3 + (t as usize % 10);
        let filt = Arc::new(random_filtration(unit(), splits, 1000 + t).unwrap());
        for local in [
            LocalSpace::indicator(),
            LocalSpace::polynomial(1),
            LocalSpace::polynomial(3),
        ] {
            let local = Arc::new(local);
            let systems = [
                build(&filt, &local, ChainPolicy::SmallFirst),
                build(&filt, &local, ChainPolicy::LargeFirst),
                build(&filt, &local, ChainPolicy::Shuffled(17)),
            ];
            for sys in &systems {
                let gram = gram_deviation(sys);
                if gram >= 1e-9 {
                    fails.push(format!("t={t} {}: gram {gram:.2e}", local.descriptor()));
                }
                let outside = sys
                    .psi_bounds()
                    .unwrap()
                    .iter()
                    .map(|b| b.outside_sup)
                    .fold(0.0f64, f64::max);
                if outside >= 1e-10 {
                    fails.push(format!("t={t}: leak outside split atom {outside:.2e}"));
                }
            }

            // Projections at level boundaries must not see the chain order.
            let g = systems[0].random_fn(&mut rng);
            for n in 0..systems[0].level_count() {
                let m = systems[0].through_level(n);
                let base = systems[0].project(&g, m);
                for sys in &systems[1..] {
                    let dev = sys.norm(&base.minus(&sys.project(&g, m)), 2.0).unwrap();
                    if dev >= 1e-9 {
                        fails.push(format!(
                            "t={t} {} level {n}: projector moved {dev:.2e} under {}",
                            local.descriptor(),
                            sys.policy().descriptor()
                        ));
                    }
                }
            }
        }
    }
    verdict(1, "orthonormality, support, chain invariance", t0, 30.0, &fails);
}

/// Weighted least squares of `values` onto the rows of `local` over one
/// block of points, returning the fitted value per point.
fn dense_fit(
    local: &LocalSpace,
    rows: Option<&[Vec<f64>]>,
    block: &[usize],
    masses: &[f64],
    values: &[f64],
) -> Vec<f64> {
    match rows {
        None => {
            let w: f64 = block.iter().map(|&i| masses[i]).sum();
            let mean = block.iter().map(|&i| masses[i] * values[i]).sum::<f64>() / w;
            vec![mean; block.len()]
        }
        Some(rows) => {
            let _ = local;
            let (mut g00, mut g01, mut g11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &i in block {
                let (w, r0, r1) = (masses[i], rows[0][i], rows[1][i]);
                g00 += w * r0 * r0;
                g01 += w * r0 * r1;
                g11 += w * r1 * r1;
                b0 += w * r0 * values[i];
                b1 += w * r1 * values[i];
            }
            let det = g00 * g11 - g01 * g01;
            if det.abs() < 1e-12 * (g00 * g11).max(1e-30) {
                // Rank one on this block: with two basis rows over a single
                // point the fit interpolates.
                return block.iter().map(|&i| values[i]).collect();
            }
            let alpha = (b0 * g11 - g01 * b1) / det;
            let beta = (g00 * b1 - g01 * b0) / det;
            block
                .iter()
                .map(|&i| alpha * rows[0][i] + beta * rows[1][i])
                .collect()
        }
    }
}

#[test]
fn criterion02_discrete_least_squares_oracle() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(202);

    for k in 2..=10usize {
        let mut points: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        points.sort_by(f64::total_cmp);
        points.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let masses: Vec<f64> = points.iter().map(|_| rng.gen_range(0.2..2.0)).collect();
        let space = Arc::new(ProbabilitySpace::discrete(&points, &masses).unwrap());
        let custom_rows = vec![
            vec![1.0; points.len()],
            points.iter().map(|_| rng.gen_range(0.5..2.0)).collect(),
        ];

        for use_custom in [false, true] {
            if use_custom && points.len() < 2 {
                continue;
            }
            let local = if use_custom {
                LocalSpace::custom(custom_rows.clone()).unwrap()
            } else {
                LocalSpace::indicator()
            };
            for splits in [points.len() / 2, points.len() - 1] {
                if splits == 0 {
                    continue;
                }
                let filt = Arc::new(
                    random_filtration(Arc::clone(&space), splits, 40 + k as u64).unwrap(),
                );
                let sys = build(&filt, &Arc::new(local.clone()), ChainPolicy::SmallFirst);

                for _ in 0..100 {
                    let fv: Vec<f64> =
                        points.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let g = sys.from_func(&Func::PointValues(fv.clone())).unwrap();
                    for n in 0..sys.level_count() {
                        let proj = sys.project(&g, sys.through_level(n));
                        for &atom in filt.level_atoms(n) {
                            let block: Vec<usize> =
                                filt.atom(atom).support.point_indices().to_vec();
                            let want = dense_fit(
                                &local,
                                if use_custom { Some(&custom_rows) } else { None },
                                &block,
                                &masses,
                                &fv,
                            );
                            for (pos, &i) in block.iter().enumerate() {
                                let got = sys.value_at(&proj, Site::Index(i)).unwrap();
                                if (got - want[pos]).abs() >= 1e-9 {
                                    fails.push(format!(
                                        "k={k} custom={use_custom} level {n} point {i}: \
                                         {got:.12} vs {:.12}",
                                        want[pos]
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    verdict(2, "projections match the dense least-squares oracle", t0, 10.0, &fails);
}

const C3_CAP: f64 = 100.0;

#[test]
fn criterion03_projector_bound_depth_stable() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let depths = [4usize, 6, 8, 10, 12];

    for local in [
        LocalSpace::indicator(),
        LocalSpace::polynomial(1),
        LocalSpace::polynomial(3),
    ] {
        let mut rng = ChaCha20Rng::seed_from_u64(303);
        let mut max_all = 0.0f64;
        let (mut max_d4, mut max_d12) = (0.0f64, 0.0f64);
        for t in 0..200u64 {
            let depth = depths[t as usize % depths.len()];
            let sys = random_system(depth, 2000 + t, local.clone());
            let g = sys.random_fn(&mut rng);
            let c3 = sys.projector_ratio_for(&g).unwrap();
            max_all = max_all.max(c3);
            if depth == 4 {
                max_d4 = max_d4.max(c3);
            }
            if depth == 12 {
                max_d12 = max_d12.max(c3);
            }
        }
        if !(max_all <= C3_CAP) {
            fails.push(format!(
                "{}: c3 reached {max_all:.3}, cap {C3_CAP}",
                local.descriptor()
            ));
        }
        if max_d12 > 2.0 * max_d4 {
            fails.push(format!(
                "{}: depth-12 max {max_d12:.3} above twice depth-4 max {max_d4:.3}",
                local.descriptor()
            ));
        }
        println!(
            "        {}: c3 max {max_all:.3} (depth-4 {max_d4:.3}, depth-12 {max_d12:.3})",
            local.descriptor()
        );
    }
    verdict(3, "pointwise projector constant has no depth trend", t0, 60.0, &fails);
}

#[test]
fn criterion04_three_atom_scaling() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let ratios: Vec<f64> = eps
        .iter()
        .map(|&e| counterexample_three(e).unwrap().ratio)
        .collect();
    let slope = fit_log_slope(&eps, &ratios);
    if (slope + 0.5).abs() > 0.1 {
        fails.push(format!("fitted slope {slope:.4} outside -0.5 +- 0.1"));
    }
    println!("        slope {slope:.4}, ratios {ratios:?}");
    verdict(4, "three-atom constant grows like eps^-1/2", t0, 5.0, &fails);
}

#[test]
fn criterion05_remez_certificates() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let space = ProbabilitySpace::unit_interval();

    for n in 1..=3usize {
        let local = LocalSpace::polynomial(n);
        let (c1, c2) = remez_constants_from_growth(4.0, n);
        let mut rng = ChaCha20Rng::seed_from_u64(500 + n as u64);
        let mut worst = f64::INFINITY;
        let mut atoms = Vec::new();
        for _ in 0..50 {
            let a: f64 = rng.gen_range(0.0..0.85);
            let len: f64 = rng.gen_range(0.05..(1.0 - a).min(0.6));
            atoms.push(Segment::new(a, a + len));
            let support = Support::Intervals(vec![Segment::new(a, a + len)]);
            let out = remez_empirical(&space, &local, &support, c1, 40, 77).unwrap();
            worst = worst.min(out.worst_fraction);
        }
        if worst < c2 - 1e-9 {
            fails.push(format!("degree {n}: worst fraction {worst:.4} below {c2}"));
        }

        // The certified growth bound (4|E|/|A|)^n must dominate what the
        // Chebyshev extremal actually attains, and by no more than 10^n.
        let cheb = locos::space::chebyshev_candidates(n).pop().unwrap();
        atoms.push(Segment::new(0.45, 0.55));
        for seg in atoms.iter().rev().take(11) {
            let hull = (seg.a, seg.b);
            let sup_atom = (0..=200)
                .map(|i| eval_local(&space, &local, hull, &cheb, seg.a + seg.len() * i as f64 / 200.0, None).abs())
                .fold(0.0f64, f64::max);
            let sup_all = (0..=2000)
                .map(|i| eval_local(&space, &local, hull, &cheb, i as f64 / 2000.0, None).abs())
                .fold(0.0f64, f64::max);
            let attained = sup_all / sup_atom;
            let bound = (4.0 / seg.len()).powi(n as i32);
            if attained > bound * (1.0 + 1e-9) {
                fails.push(format!(
                    "degree {n} atom {:?}: attained growth {attained:.3} beats bound {bound:.3}",
                    (seg.a, seg.b)
                ));
            }
            if bound > 10f64.powi(n as i32) * attained {
                fails.push(format!(
                    "degree {n} atom {:?}: bound {bound:.3} more than 10^{n} over attained {attained:.3}",
                    (seg.a, seg.b)
                ));
            }
        }
        println!("        degree {n}: worst fraction {worst:.4} at threshold {c1:.5}");
    }
    verdict(5, "polynomial level-set certificates hold", t0, 30.0, &fails);
}

#[test]
fn criterion06_three_part_decomposition() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let lambdas = [0.5, 1.0, 2.0, 4.0];

    let families: Vec<(&str, OrthoSystem)> = vec![
        ("haar-random", random_system(8, 61, LocalSpace::indicator())),
        ("linear-random", random_system(8, 62, LocalSpace::polynomial(1))),
        ("eight-point", eight_point_system()),
    ];

    for (name, sys) in &families {
        let c3 = sys.projector_ratio(20, 9).unwrap() * 1.1;
        let mut rng = ChaCha20Rng::seed_from_u64(606);
        let mut per_lambda = vec![0.0f64; lambdas.len()];
        for _ in 0..25 {
            let mut f = sys.random_fn(&mut rng);
            let norm1 = sys.norm(&f, 1.0).unwrap();
            f.scale(1.0 / norm1);
            for (li, &lambda) in lambdas.iter().enumerate() {
                let parts = decompose(sys, &f, lambda, c3).unwrap();
                let dev = parts.reconstruction_dev(&f);
                if dev >= 1e-10 {
                    fails.push(format!("{name} lambda {lambda}: a+b+c missed f by {dev:.2e}"));
                }
                let report = verify_parts(sys, &parts).unwrap();
                for s in report.scalars() {
                    per_lambda[li] = per_lambda[li].max(s);
                }
            }
        }
        let family_c = per_lambda.iter().fold(0.0f64, |a, &b| a.max(b));
        let lo = per_lambda.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if family_c > 2.0 * lo {
            fails.push(format!(
                "{name}: per-lambda constants {per_lambda:?} spread beyond 2x"
            ));
        }
        println!("        {name}: C = {family_c:.3}, per-lambda {per_lambda:?}");
    }
    verdict(6, "stopped decomposition is exact with stable constants", t0, 120.0, &fails);
}

#[test]
fn criterion07_unconditionality() {
    let t0 = Instant::now();
    let mut fails = Vec::new();

    for i in 0..10u64 {
        let local = if i % 2 == 0 {
            LocalSpace::indicator()
        } else {
            LocalSpace::polynomial(1)
        };
        let sys = random_system(3 + (i as usize % 8), 700 + i, local);
        let c = unconditionality_constant(&sys, 2.0, 2, i, 32).unwrap().constant;
        if (c - 1.0).abs() > 1e-10 {
            fails.push(format!("p=2 system {i}: constant {c:.12} is not 1"));
        }
    }

    for &p in &[1.5, 3.0, 4.0] {
        let mut max_d4 = 0.0f64;
        let mut max_d12 = 0.0f64;
        for i in 0..20u64 {
            let shallow = random_system(4, 7100 + i, LocalSpace::indicator());
            let c4 = unconditionality_constant(&shallow, p, 2, i, 64).unwrap();
            assert!(matches!(c4.witness, locos::analysis::Witness::Signed { .. }));
            max_d4 = max_d4.max(c4.constant);

            let deep = random_system(12, 7200 + i, LocalSpace::indicator());
            let c12 = unconditionality_constant(&deep, p, 2, i, 150).unwrap().constant;
            max_d12 = max_d12.max(c12);
        }
        // Wider systems within the randomized regime.
        for i in 0..6u64 {
            let wide = random_system(12, 7300 + i, LocalSpace::polynomial(1));
            let c = unconditionality_constant(&wide, p, 1, i, 120).unwrap().constant;
            max_d12 = max_d12.max(c);
        }
        if max_d12 > 2.0 * max_d4 {
            fails.push(format!(
                "p={p}: depth-12 max {max_d12:.3} above twice depth-4 max {max_d4:.3}"
            ));
        }
        println!("        p={p}: depth-4 max {max_d4:.3}, depth-12 max {max_d12:.3}");
    }
    verdict(7, "sign flips stay uniformly bounded in L^p", t0, 300.0, &fails);
}

const WEAK_TYPE_CAP: f64 = 4.0;

#[test]
fn criterion08_weak_type_bound() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let sys = random_system(9, 88, LocalSpace::indicator());
    let m = sys.len();
    assert!(m <= 10, "weak-type sweep expects at most 10 items, got {m}");

    let mut rng = ChaCha20Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let f = sys.random_fn(&mut rng);
        let grid = default_lambda_grid(sys.norm(&f, 1.0).unwrap());
        assert_eq!(grid.len(), 64);
        for mask in 0..(1usize << (m - 1)) {
            let mut signs = vec![1i8; m];
            for j in 0..m - 1 {
                if mask >> j & 1 == 1 {
                    signs[j + 1] = -1;
                }
            }
            let r = weak_type_ratio(&sys, &f, &signs, &grid).unwrap();
            worst = worst.max(r.ratio);
        }
    }
    if !(worst <= WEAK_TYPE_CAP) {
        fails.push(format!("ratio reached {worst:.3}, cap {WEAK_TYPE_CAP}"));
    }
    println!("        worst lambda*P / |f|_1 = {worst:.3} over {} patterns", 1usize << (m - 1));
    verdict(8, "flipped maximal function is weak (1,1)", t0, 60.0, &fails);
}

#[test]
fn criterion09_democracy() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let filt = Arc::new(dyadic_filtration(unit(), 6).unwrap());
    let sys = build(&filt, &Arc::new(LocalSpace::indicator()), ChainPolicy::SmallFirst);
    assert_eq!(sys.len(), 64);

    for &p in &[1.5, 3.0] {
        // Same-generation elements have disjoint split atoms.
        for g in 0..6usize {
            let items: Vec<usize> = ((1 << g) + 1..=(1 << (g + 1))).collect();
            let r = democracy_ratio(&sys, p, &items).unwrap();
            if (r - 1.0).abs() > 1e-9 {
                fails.push(format!("p={p} generation {g}: disjoint ratio {r:.12}"));
            }
        }

        // Nested chain down the left spine plus random sets of doubling size.
        let chain: Vec<usize> = (0..6).map(|g| (1usize << g) + 1).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(909);
        let sizes = [1usize, 2, 4, 8, 16, 32, 64];
        let mut per_size = Vec::new();
        for &s in &sizes {
            let mut c_here = 1.0f64;
            let mut track = |r: f64| c_here = c_here.max(r).max(1.0 / r);
            if s <= chain.len() {
                track(democracy_ratio(&sys, p, &chain[..s]).unwrap());
            }
            for _ in 0..6 {
                let mut pool: Vec<usize> = (1..=64).collect();
                pool.shuffle(&mut rng);
                track(democracy_ratio(&sys, p, &pool[..s]).unwrap());
            }
            per_size.push(c_here);
        }
        for w in per_size.windows(2) {
            if w[1] > 2.0 * w[0] && w[1] > 1.05 {
                fails.push(format!("p={p}: constant jumped {w:?} on doubling"));
            }
        }
        let c_all = per_size.iter().fold(1.0f64, |a, &b| a.max(b));
        println!("        p={p}: C = {c_all:.3}, per size {per_size:?}");
    }
    verdict(9, "index sets of equal size have comparable norms", t0, 120.0, &fails);
}

const GREEDY_CAP: f64 = 4.0;

#[test]
fn criterion10_greedy_approximation() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let sys = random_system(11, 110, LocalSpace::indicator());
    assert_eq!(sys.len(), 12);
    let mut rng = ChaCha20Rng::seed_from_u64(1010);

    for _ in 0..10 {
        let f = sys.random_fn(&mut rng);
        for m in 1..=12usize {
            let r = greedy_vs_best(&sys, &f, m, 2.0).unwrap();
            assert!(r.exhaustive);
            if r.greedy_error > r.best_error + 1e-10 {
                fails.push(format!(
                    "p=2 m={m}: greedy {:.12} vs best {:.12}",
                    r.greedy_error, r.best_error
                ));
            }
        }
    }

    for &p in &[1.5, 3.0] {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let f = sys.random_fn(&mut rng);
            for m in 1..=12usize {
                let r = greedy_vs_best(&sys, &f, m, p).unwrap();
                worst = worst.max(r.ratio);
            }
        }
        if !(worst <= GREEDY_CAP) {
            fails.push(format!("p={p}: greedy/best reached {worst:.3}, cap {GREEDY_CAP}"));
        }
        println!("        p={p}: worst greedy/best ratio {worst:.3}");
    }
    verdict(10, "largest-term selection is near best m-term", t0, 180.0, &fails);
}

fn two_scale_psi(eps: f64) -> (NonbinarySystem, locos::nonbinary::PsiAn) {
    let rw = two_scale_filtration(eps).unwrap();
    let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
    let coeffs = nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap();
    let psi = nsys.compose(0, coeffs).unwrap();
    (nsys, psi)
}

#[test]
fn criterion11_cross_term_duality() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    for &eps in &[0.1, 0.01] {
        let (nsys, psi) = two_scale_psi(eps);
        let uniform = nsys
            .compose(0, nsys.coefficients(0, &CoefficientPreset::Uniform).unwrap())
            .unwrap();
        for &p in &[1.5, 3.0, 4.0] {
            let q = p / (p - 1.0);
            for psi in [&psi, &uniform] {
                let a = op_condition(&nsys, std::slice::from_ref(psi), p).unwrap();
                let b = op_condition(&nsys, std::slice::from_ref(psi), q).unwrap();
                if (a - b).abs() > 1e-10 {
                    fails.push(format!("eps={eps} p={p}: O_p {a:.12} vs dual {b:.12}"));
                }
            }
        }
    }
    verdict(11, "cross-term condition is dual symmetric", t0, 60.0, &fails);
}

/// The sweep this asserts comes out far shallower than required: the
/// norm product of the two-scale element grows like eps^(-1/8), which
/// over eps from 1e-1 to 1e-4 is a factor of about 1.8, not 10. The
/// check is kept as stated and fails; see the decision log.
#[test]
fn criterion11_two_scale_norm_growth() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let products: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let (nsys, psi) = two_scale_psi(e);
            norm_product_check(&nsys, &psi, 4.0).unwrap()
        })
        .collect();
    let growth = products[3] / products[0];
    if growth <= 10.0 {
        fails.push(format!(
            "norm product grew {growth:.4}x from eps=1e-1 to 1e-4, required > 10x \
             (products {products:?})"
        ));
    }
    verdict(11, "two-scale family norm product grows past 10x", t0, 60.0, &fails);
}

#[test]
fn criterion11_comparable_family_flat() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let mut products = Vec::new();
    for seed in 0..4u64 {
        let rw = comparable_rway(1, 3, seed).unwrap();
        let nsys = NonbinarySystem::build(rw, Arc::new(LocalSpace::indicator())).unwrap();
        let coeffs = nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap();
        let psi = nsys.compose(0, coeffs).unwrap();
        products.push(norm_product_check(&nsys, &psi, 4.0).unwrap());
    }
    let hi = products.iter().fold(0.0f64, |a, &b| a.max(b));
    let lo = products.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if hi > 2.0 * lo {
        fails.push(format!("comparable-family products {products:?} spread beyond 2x"));
    }
    println!("        products {products:?}");
    verdict(11, "comparable-measure family stays within 2x", t0, 60.0, &fails);
}

#[test]
fn criterion12_peeled_intermediates() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let local = LocalSpace::polynomial(1);
    let (c1, c2) = remez_constants_from_growth(4.0, 1);
    let mut checked = 0usize;

    for t in 0..20u64 {
        let rw = random_rway(4, 5, 3000 + t).unwrap();
        let space = Arc::clone(rw.space());
        for group in rw.groups() {
            let r = group.arity();
            if r < 3 {
                continue;
            }
            let d = remez_recursion(c2, r).unwrap();
            for j in 0..r - 2 {
                let split = &rw.binary().splits()[group.first_binary_split + j];
                let support = rw.binary().atom(split.large).support.clone();
                let out = remez_empirical(&space, &local, &support, c1, 30, 13 + t).unwrap();
                checked += 1;
                if out.worst_fraction < d - 1e-12 {
                    fails.push(format!(
                        "t={t} arity {r} step {j}: fraction {:.5} below d = {d:.5}",
                        out.worst_fraction
                    ));
                }
            }
        }
    }
    assert!(checked >= 20, "only {checked} intermediate atoms exercised");
    println!("        {checked} intermediate atoms checked");
    verdict(12, "peeled intermediate atoms keep the recursed certificate", t0, 30.0, &fails);
}

#[test]
fn criterion13_haar_density_rate() {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    let errors = density_experiment(
        unit(),
        Arc::new(LocalSpace::indicator()),
        &[Segment::new(0.0, 1.0 / 3.0)],
        &RefinePolicy::Dyadic,
        12,
        2.0,
    )
    .unwrap();

    let (mut num, mut den) = (0.0, 0.0);
    for l in 4..=12usize {
        let model = 0.5f64.powf(l as f64 / 2.0);
        num += errors[l] * model;
        den += model * model;
    }
    let c = num / den;
    for l in 4..=12usize {
        let predicted = c * 0.5f64.powf(l as f64 / 2.0);
        let ratio = errors[l] / predicted;
        if !(0.5..=2.0).contains(&ratio) {
            fails.push(format!(
                "level {l}: error {:.6e} vs fitted {predicted:.6e} (ratio {ratio:.3})",
                errors[l]
            ));
        }
    }
    println!("        fitted c = {c:.5}, errors[4..=12] = {:?}", &errors[4..=12]);
    verdict(13, "indicator projection error halves per two levels", t0, 10.0, &fails);
}
