//! Randomized invariants. Case counts are kept small because every case
//! builds a system; the seeds still vary freely between runs.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use locos::analysis::democracy_ratio;
use locos::gundy::decompose;
use locos::measure::{
    intersect, random_filtration, subtract, total_len, ProbabilitySpace, Segment,
};
use locos::nonbinary::{op_condition, random_rway, remez_recursion, two_scale_filtration,
    CoefficientPreset, NonbinarySystem};
use locos::ortho::{ChainPolicy, OrthoSystem};
use locos::space::LocalSpace;

fn system(splits: usize, seed: u64) -> OrthoSystem {
    let space = Arc::new(ProbabilitySpace::unit_interval());
    let filt = Arc::new(random_filtration(space, splits, seed).unwrap());
    OrthoSystem::build(filt, Arc::new(LocalSpace::indicator()), ChainPolicy::SmallFirst).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn three_parts_always_reassemble(seed in 0u64..5000, splits in 1usize..7,
                                     lambda in 0.2f64..4.0) {
        let sys = system(splits, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        let f = sys.random_fn(&mut rng);
        let parts = decompose(&sys, &f, lambda, 1.5).unwrap();
        prop_assert!(parts.reconstruction_dev(&f) < 1e-10);
        prop_assert!(parts.stopped_dev() < 1e-10);
        prop_assert!(parts.difference_dev(&sys) < 1e-10);
    }

    #[test]
    fn negating_every_sign_keeps_the_norm(seed in 0u64..5000, splits in 1usize..7,
                                          p in 1.1f64..5.0) {
        let sys = system(splits, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xf11b);
        let f = sys.random_fn(&mut rng);
        let coef = sys.expand(&f);
        let flipped: Vec<f64> = coef.iter().map(|c| -c).collect();
        let a = sys.norm(&sys.combine(&coef), p).unwrap();
        let b = sys.norm(&sys.combine(&flipped), p).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn hilbert_norm_ignores_signs(seed in 0u64..5000, splits in 1usize..8,
                                  mask in any::<u64>()) {
        let sys = system(splits, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
        let f = sys.random_fn(&mut rng);
        let mut coef = sys.expand(&f);
        for (j, c) in coef.iter_mut().enumerate() {
            if mask >> (j % 64) & 1 == 1 {
                *c = -*c;
            }
        }
        let flipped = sys.combine(&coef);
        let a = sys.norm(&f, 2.0).unwrap();
        let b = sys.norm(&flipped, 2.0).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn projections_are_idempotent(seed in 0u64..5000, splits in 1usize..7) {
        let sys = system(splits, seed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1de0);
        let f = sys.random_fn(&mut rng);
        let m = 1 + (seed as usize % sys.len());
        let once = sys.project(&f, m);
        let twice = sys.project(&once, m);
        prop_assert!(sys.norm(&once.minus(&twice), 2.0).unwrap() < 1e-11);
    }

    #[test]
    fn democracy_ratio_ignores_index_order(seed in 0u64..5000, splits in 3usize..8,
                                           p in 1.2f64..4.0) {
        let sys = system(splits, seed);
        let take = 2 + seed as usize % (sys.len() - 1);
        let forward: Vec<usize> = (1..=take).collect();
        let backward: Vec<usize> = (1..=take).rev().collect();
        let a = democracy_ratio(&sys, p, &forward).unwrap();
        let b = democracy_ratio(&sys, p, &backward).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn cross_term_condition_is_dual(eps in 0.002f64..0.15, p in 1.1f64..8.0) {
        let nsys = NonbinarySystem::build(
            two_scale_filtration(eps).unwrap(),
            Arc::new(LocalSpace::indicator()),
        ).unwrap();
        let psi = nsys
            .compose(0, nsys.coefficients(0, &CoefficientPreset::TwoScale).unwrap())
            .unwrap();
        let q = p / (p - 1.0);
        let a = op_condition(&nsys, std::slice::from_ref(&psi), p).unwrap();
        let b = op_condition(&nsys, std::slice::from_ref(&psi), q).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn peeling_preserves_group_measures(seed in 0u64..5000, depth in 1usize..5) {
        let rw = random_rway(depth, 5, seed).unwrap();
        for (n, group) in rw.groups().iter().enumerate() {
            let parent = rw.binary().atom(group.parent).measure;
            let children: f64 = rw.child_measures(n).unwrap().iter().sum();
            prop_assert!((parent - children).abs() < 1e-12 * parent.max(1e-12));
            let sorted = rw.child_measures(n).unwrap();
            prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        }
    }

    #[test]
    fn recursed_constants_shrink_with_arity(c2 in 0.05f64..1.0) {
        let mut prev = remez_recursion(c2, 2).unwrap();
        prop_assert!((prev - c2).abs() < 1e-15);
        for r in 3..=6usize {
            let d = remez_recursion(c2, r).unwrap();
            prop_assert!(d < prev && d > 0.0);
            prev = d;
        }
    }

    #[test]
    fn segment_algebra_adds_up(ax in 0.0f64..0.8, alen in 0.01f64..0.2,
                               bx in 0.0f64..0.8, blen in 0.01f64..0.2) {
        let xs = vec![Segment::new(ax, ax + alen), Segment::new(ax + 0.5, ax + 0.5 + alen)];
        let ys = vec![Segment::new(bx, bx + blen)];
        let both = total_len(&intersect(&xs, &ys)) + total_len(&subtract(&xs, &ys));
        prop_assert!((both - total_len(&xs)).abs() < 1e-12);
    }
}
