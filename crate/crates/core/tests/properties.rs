use livecap_core::allocation::{
    admission_control, max_users_max_resolution, min_rate_share, reciprocal_sum_distribution,
    CellConfig, GridOptions, User,
};
use livecap_core::channel::RatePmf;
use livecap_core::playout::{
    evaluate, max_playout_rate, max_playout_rate_exhaustive, FrameParams, QoeConstraints,
};
use livecap_core::presets;
use livecap_core::queueing::{
    build_transition_matrix, drop_rate, drop_rate_closed_form, find_roots, solve_finite,
    solve_infinite, ArrivalPmf,
};
use livecap_core::sim::{simulate_constant, ArrivalSource, SimConfig};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Arrivals with full support `0..=max` scaled towards zero until the mean is
/// `load * S`. Full support keeps the chain aperiodic.
fn arrivals(weights: &[f64], s: usize, load: f64) -> ArrivalPmf {
    let total: f64 = weights.iter().sum();
    let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mean: f64 = probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
    let target = load * s as f64;
    if mean > target {
        let keep = target / mean;
        for p in probs.iter_mut() {
            *p *= keep;
        }
        probs[0] += 1.0 - keep;
    }
    ArrivalPmf::new(probs).unwrap()
}

fn ergodic_case() -> impl Strategy<Value = (ArrivalPmf, usize)> {
    (1usize..=8)
        .prop_flat_map(|s| {
            (
                Just(s),
                prop::collection::vec(0.01f64..1.0, (s + 2)..=(2 * s + 4)),
                0.2f64..0.95,
            )
        })
        .prop_map(|(s, w, load)| (arrivals(&w, s, load), s))
}

fn finite_case() -> impl Strategy<Value = (ArrivalPmf, usize, usize)> {
    (1usize..=6)
        .prop_flat_map(|s| {
            (
                Just(s),
                prop::collection::vec(0.01f64..1.0, (s + 2)..=(2 * s + 4)),
                0.3f64..1.6,
                (s + 1)..(s + 30),
            )
        })
        .prop_map(|(s, w, load, b)| (arrivals(&w, s, load), s, b))
}

/// Stationary vector by iterating the lazy chain `(I + Psi) / 2` from an
/// empty buffer.
fn power_iteration(a: &ArrivalPmf, s: usize, b: usize) -> Vec<f64> {
    let psi = build_transition_matrix(a, s, b).unwrap();
    let mut q = vec![0.0; b + 1];
    q[0] = 1.0;
    for _ in 0..2_000_000 {
        let step = psi.left_multiply(&q);
        let next: Vec<f64> = q.iter().zip(&step).map(|(x, y)| 0.5 * (x + y)).collect();
        let change = next
            .iter()
            .zip(&q)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        q = next;
        if change < 1e-15 {
            break;
        }
    }
    q
}

/// Boundary probabilities from `N(z) = c prod_k (z - z_k)`, with `c` fixed
/// by `N(1) = S - E[A]` and `N(z) = sum_l Q_l z^l`, `Q_l` cumulative.
fn boundary_by_product(roots: &[Complex64], s: usize, mean: f64) -> Vec<f64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for &z in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * z;
        }
        poly = next;
    }
    let at_one: Complex64 = roots.iter().map(|z| Complex64::new(1.0, 0.0) - z).product();
    let scale = Complex64::new(s as f64 - mean, 0.0) / at_one;
    let cumulative: Vec<f64> = poly.iter().map(|c| (c * scale).re).collect();
    (0..s)
        .map(|i| cumulative[i] - if i > 0 { cumulative[i - 1] } else { 0.0 })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn interior_root_count((a, s) in ergodic_case()) {
        let roots = find_roots(&a, s).unwrap();
        prop_assert_eq!(roots.len(), s - 1);
        for z in &roots {
            prop_assert!(z.norm() < 1.0);
            let residual = z.powu(s as u32) - a.pgf(*z);
            prop_assert!(residual.norm() < 1e-9);
        }
    }

    #[test]
    fn boundary_identity_and_product_oracle((a, s) in ergodic_case()) {
        let inf = solve_infinite(&a, s).unwrap();
        let weighted: f64 = inf.boundary_probs.iter().enumerate()
            .map(|(i, q)| (s - i) as f64 * q).sum();
        prop_assert!((weighted - (s as f64 - a.mean())).abs() < 1e-9);
        for q in &inf.boundary_probs {
            prop_assert!(*q > -1e-12 && *q < 1.0);
        }
        let oracle = boundary_by_product(&inf.roots, s, a.mean());
        for (q, o) in inf.boundary_probs.iter().zip(&oracle) {
            prop_assert!((q - o).abs() < 1e-8, "{} vs {}", q, o);
        }
    }

    #[test]
    fn closed_form_drop((a, s) in ergodic_case(), extra in 1usize..200) {
        let inf = solve_infinite(&a, s).unwrap();
        let fin = solve_finite(&a, s, s + extra).unwrap();
        let direct = drop_rate(&fin, &a).unwrap();
        prop_assert!((drop_rate_closed_form(&fin, &inf) - direct).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn finite_solver_matches_power_iteration((a, s, b) in finite_case()) {
        let fin = solve_finite(&a, s, b).unwrap();
        let oracle = power_iteration(&a, s, b);
        let err = fin.probs.iter().zip(&oracle).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "max error {}", err);
        let psi = build_transition_matrix(&a, s, b).unwrap();
        prop_assert!(fin.residual(&psi) < 1e-12);
        let mass: f64 = fin.probs.iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn larger_buffers_never_hurt((a, s, b) in finite_case(), grow in 1usize..40) {
        let (o1, d1) = evaluate(&a, s, b).unwrap();
        let (o2, d2) = evaluate(&a, s, b + grow).unwrap();
        prop_assert!(o2 <= o1 + 1e-12);
        prop_assert!(d2 <= d1 + 1e-12);
    }

    #[test]
    fn simulator_conserves_packets((a, s, b) in finite_case(), seed in any::<u64>()) {
        let frame = FrameParams::new(0.01, 5000.0).unwrap();
        let cfg = SimConfig::new(2_000, seed, 3, b, frame);
        let src = ArrivalSource::Iid(a);
        let report = simulate_constant(&src, s, &cfg).unwrap();
        for r in &report.runs {
            prop_assert_eq!(r.arrived, r.played + r.dropped + r.final_occupancy);
            prop_assert!(r.outage >= 0.0 && r.outage <= 1.0);
            prop_assert!(r.drop >= 0.0 && r.drop <= 1.0);
        }
        let again = simulate_constant(&src, s, &cfg).unwrap();
        prop_assert_eq!(report, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn relaxing_outage_never_lowers_the_rate(
        (a, _, b) in finite_case(),
        eps in 0.0f64..0.5,
        more in 0.0f64..0.4,
        delta in 0.0f64..0.3,
    ) {
        let frame = FrameParams::new(0.01, 5000.0).unwrap();
        let b = b.max(4);
        let tight = max_playout_rate(&a, b, &frame, &QoeConstraints::new(eps, delta).unwrap());
        let loose = max_playout_rate(&a, b, &frame, &QoeConstraints::new(eps + more, delta).unwrap());
        if let Ok(t) = tight {
            let l = loose.unwrap();
            prop_assert!(l.service >= t.service);
            // the certificate holds on an independent solve
            let (o, d) = evaluate(&a, t.service, b).unwrap();
            prop_assert!(o <= eps + 1e-12 && d <= delta + 1e-12);
        }
        let bigger = max_playout_rate(&a, b + 20, &frame, &QoeConstraints::new(eps, delta).unwrap());
        if let Ok(t) = max_playout_rate(&a, b, &frame, &QoeConstraints::new(eps, delta).unwrap()) {
            prop_assert!(bigger.unwrap().service >= t.service);
        }
    }

    #[test]
    fn pruned_scan_matches_exhaustive_scan(
        (a, _, b) in finite_case(),
        eps in 0.0f64..0.5,
        delta in 0.0f64..0.3,
    ) {
        let frame = FrameParams::new(0.01, 5000.0).unwrap();
        let c = QoeConstraints::new(eps, delta).unwrap();
        let pruned = max_playout_rate(&a, b.max(2), &frame, &c);
        let full = max_playout_rate_exhaustive(&a, b.max(2), &frame, &c);
        match (pruned, full) {
            (Ok(p), Ok(f)) => prop_assert_eq!(p.service, f.service),
            (Err(_), Err(_)) => {}
            (p, f) => prop_assert!(false, "pruned {:?} vs exhaustive {:?}", p, f),
        }
    }
}

#[test]
fn infinite_boundary_matches_long_buffer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let s = rng.random_range(2..6);
        let w: Vec<f64> = (0..(2 * s + 2)).map(|_| rng.random_range(0.05..1.0)).collect();
        let a = arrivals(&w, s, 0.7);
        let inf = solve_infinite(&a, s).unwrap();
        let fin = solve_finite(&a, s, 10_000).unwrap();
        for i in 0..s {
            assert!((inf.boundary_probs[i] - fin.probs[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn grid_mean_matches_monte_carlo() {
    let pmfs = presets::user_pmfs();
    let sums = reciprocal_sum_distribution(&pmfs, &GridOptions::default()).unwrap();
    let grid_mean: f64 = sums.iter().map(|(s, p)| p * 275.0 / s).sum();
    let samplers: Vec<_> = pmfs.iter().map(|p| p.sampler()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let mut total = 0.0;
    for _ in 0..n {
        let s: f64 = samplers.iter().map(|d| 1.0 / d.sample(&mut rng)).sum();
        total += 275.0 / s;
    }
    let mc = total / n as f64;
    assert!((grid_mean / mc - 1.0).abs() < 0.01, "{grid_mean} vs {mc}");
}

fn reference_cell() -> CellConfig {
    presets::cell(&[1, 2, 3, 4, 5, 6, 7, 8])
}

#[test]
fn admission_is_maximum_cardinality() {
    let cell = reference_cell();
    for u_min in [5e6, 10e6, 20e6, 40e6] {
        let needs: Vec<f64> = cell
            .users
            .iter()
            .map(|u| min_rate_share(u_min, 0.03, cell.blocks, &u.pmf).unwrap())
            .collect();
        let best = (0u32..256)
            .filter(|mask| {
                (0..8)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| needs[i])
                    .sum::<f64>()
                    <= 1.0
            })
            .map(|mask| mask.count_ones() as usize)
            .max()
            .unwrap();
        let adm = admission_control(&cell, u_min, 0.03).unwrap();
        assert_eq!(adm.admitted.len(), best, "u_min = {u_min}");
        let used: f64 = adm.plan.shares.iter().map(|s| s.share).sum();
        assert!(used <= 1.0 + 1e-12);
    }
}

#[test]
fn upgrade_count_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frame = FrameParams::new(0.01, 5000.0).unwrap();
    for _ in 0..20 {
        let users: Vec<User> = (0..4)
            .map(|i| {
                let lo = rng.random_range(50e3..400e3);
                let hi = lo + rng.random_range(10e3..800e3);
                let p = rng.random_range(0.1..0.9);
                User::new(format!("{i}"), RatePmf::new(vec![lo, hi], vec![p, 1.0 - p]).unwrap())
            })
            .collect();
        let cell = CellConfig::new(users, 100, frame, 1000).unwrap();
        let (u_min, u_max) = (1e6, rng.random_range(2e6..15e6));
        let needs: Vec<f64> = cell
            .users
            .iter()
            .map(|u| min_rate_share(u_min, 0.02, cell.blocks, &u.pmf).unwrap())
            .collect();
        if needs.iter().sum::<f64>() > 1.0 {
            continue;
        }
        let spare = 1.0 - needs.iter().sum::<f64>();
        let cost: Vec<f64> = cell
            .users
            .iter()
            .map(|u| min_rate_share(u_max - u_min, 0.02, cell.blocks, &u.pmf).unwrap())
            .collect();
        let best = (0u32..16)
            .filter(|m| (0..4).filter(|i| m & (1 << i) != 0).map(|i| cost[i]).sum::<f64>() <= spare)
            .map(|m| m.count_ones() as usize)
            .max()
            .unwrap();
        let plan = max_users_max_resolution(&cell, u_min, u_max, 0.02).unwrap();
        assert_eq!(plan.count, best);
    }
}
