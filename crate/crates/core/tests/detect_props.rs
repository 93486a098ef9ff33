use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sirbreak::detect::lasso::{
    block_fused_lasso, cumulative, lambda_grid, lambda_max, BlockPartition, BlockStats, LassoOptions,
};
use sirbreak::{detect, Design, DetectConfig};

/// SIR-shaped rows with rates switching at `breaks` (1-based days).
fn piecewise(n: usize, breaks: &[usize], rates: &[(f64, f64)], noise: f64, seed: u64) -> Design {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Design::new(2, 2);
    for t in 1..=n {
        let seg = breaks.iter().filter(|&&b| t >= b).count();
        let (b, g) = rates[seg];
        let i: f64 = rng.random_range(50.0..150.0);
        let s_frac: f64 = rng.random_range(0.7..1.0);
        let x = [s_frac * i, -i, 0.0, i];
        let e0: f64 = noise * rng.random_range(-1.0..1.0);
        let e1: f64 = noise * rng.random_range(-1.0..1.0);
        d.push(&[x[0] * b + x[1] * g + e0, x[3] * g + e1], &x);
    }
    d
}

fn stacked_cumulative(d: &Design, p: &BlockPartition) -> (DMatrix<f64>, DVector<f64>) {
    let n = d.len();
    let k = p.n_blocks();
    let mut a = DMatrix::zeros(2 * n, 2 * k);
    let mut y = DVector::zeros(2 * n);
    for t in 0..n {
        let blk = p.block_of(t + 1);
        for r in 0..2 {
            y[2 * t + r] = d.y(t)[r];
            for i in 0..=blk {
                for c in 0..2 {
                    a[(2 * t + r, 2 * i + c)] = d.x(t)[2 * r + c];
                }
            }
        }
    }
    (a, y)
}

proptest! {
    #[test]
    fn partition_blocks_are_even_with_a_wide_last_block(b in 2usize..20, extra in 0usize..300) {
        let n = b + extra;
        let p = BlockPartition::new(n, b).unwrap();
        let k = p.n_blocks();
        prop_assert_eq!(p.start(0), 1);
        prop_assert_eq!(p.end(k - 1), n + 1);
        for i in 0..k - 1 {
            prop_assert_eq!(p.len_of(i), b);
        }
        prop_assert!(p.len_of(k - 1) >= b && p.len_of(k - 1) < 2 * b);
        for t in 1..=n {
            let j = p.block_of(t);
            prop_assert!(p.start(j) <= t && t < p.end(j));
        }
    }

    #[test]
    fn cumulative_sums_rebuild_levels(theta in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 1..12)) {
        let levels = cumulative(&theta);
        let mut acc = [0.0, 0.0];
        for (j, t) in theta.iter().enumerate() {
            acc[0] += t[0];
            acc[1] += t[1];
            prop_assert!((levels[j][0] - acc[0]).abs() < 1e-12);
            prop_assert!((levels[j][1] - acc[1]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lasso_solution_satisfies_kkt(seed in 0u64..10_000, n in 12usize..60, b in 2usize..6, frac in 0.01f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let brk = rng.random_range(2..n);
        let d = piecewise(n, &[brk], &[(0.3, 0.1), (0.15, 0.12)], 5.0, seed);
        let p = BlockPartition::new(n, b).unwrap();
        let stats = BlockStats::new(&d, &p);
        let lambda = lambda_max(&stats, p.n_blocks()) * frac;
        let est = block_fused_lasso(&d, &p, lambda, &LassoOptions::default()).unwrap();
        let (a, y) = stacked_cumulative(&d, &p);
        let theta = DVector::from_iterator(a.ncols(), est.theta.iter().flatten().copied());
        let grad = a.transpose() * (y - &a * &theta) / n as f64;
        let tol = 1e-5 * lambda.max(1.0);
        for j in 0..theta.len() {
            if theta[j] == 0.0 {
                prop_assert!(grad[j].abs() <= lambda + tol, "coord {j}: |{}| > {lambda}", grad[j]);
            } else {
                prop_assert!((grad[j] - lambda * theta[j].signum()).abs() <= tol, "coord {j}: {} vs {}", grad[j], lambda);
            }
        }
    }

    #[test]
    fn l1_norm_never_grows_with_the_penalty(seed in 0u64..10_000, n in 20usize..80) {
        let d = piecewise(n, &[n / 2], &[(0.3, 0.1), (0.2, 0.08)], 3.0, seed);
        let p = BlockPartition::new(n, 4).unwrap();
        let stats = BlockStats::new(&d, &p);
        let grid = lambda_grid(lambda_max(&stats, p.n_blocks()), 10);
        let norms: Vec<f64> = grid
            .iter()
            .map(|&l| block_fused_lasso(&d, &p, l, &LassoOptions::default()).unwrap().l1_norm())
            .collect();
        // The grid runs from the largest penalty down.
        for w in norms.windows(2) {
            prop_assert!(w[0] <= w[1] * (1.0 + 1e-6) + 1e-9, "{norms:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn detection_output_is_ordered_and_inside_windows(
        seed in 0u64..10_000,
        n in 60usize..160,
        b in 4usize..9,
        noise in 0.0f64..20.0,
    ) {
        let d = piecewise(n, &[n / 3, 2 * n / 3], &[(0.3, 0.1), (0.12, 0.1), (0.25, 0.05)], noise, seed);
        let config = DetectConfig { block_size: b, ..DetectConfig::default() };
        let (cp, scan) = detect(&d, &config).unwrap();
        let pts = &cp.final_points;
        prop_assert!(pts.windows(2).all(|w| w[0] < w[1]), "{pts:?}");
        prop_assert_eq!(pts.len(), cp.clusters.len());
        for (p, w) in pts.iter().zip(&cp.windows) {
            prop_assert!(w.lo < *p && *p < w.hi || w.lo + 1 >= w.hi, "{p} outside ({}, {})", w.lo, w.hi);
        }
        // Segments tile the rows 1..=n.
        prop_assert_eq!(cp.segments.first().unwrap().start, 1);
        prop_assert_eq!(cp.segments.last().unwrap().end, n + 1);
        for w in cp.segments.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].start < w[0].end);
        }
        prop_assert_eq!(scan.points(), &pts[..]);
    }

    #[test]
    fn noiseless_breaks_are_found_within_two_blocks(
        seed in 0u64..10_000,
        frac in 0.3f64..0.7,
        jump in prop_oneof![-0.2f64..-0.08, 0.08f64..0.2],
        b in 4usize..9,
    ) {
        let n = 150;
        let brk = (frac * n as f64) as usize;
        let d = piecewise(n, &[brk], &[(0.3, 0.1), (0.3 + jump, 0.1)], 0.0, seed);
        let config = DetectConfig { block_size: b, ..DetectConfig::default() };
        let (cp, _) = detect(&d, &config).unwrap();
        prop_assert!(!cp.final_points.is_empty());
        for &p in &cp.final_points {
            prop_assert!(p.abs_diff(brk) <= 2 * b, "{p} vs {brk}");
        }
    }
}
