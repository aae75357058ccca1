//! Reference solver against brute-force oracles.

use milp::{lp_format, solve, solve_lp_relaxation, SolveRequest, SolveStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    req: SolveRequest,
    /// Dense rows for the oracle: (coefs, lo, hi).
    rows: Vec<(Vec<f64>, f64, f64)>,
    costs: Vec<f64>,
}

fn random_binary_program(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=10);
    let m = rng.gen_range(1..=6);
    let mut req = SolveRequest::new(0);
    let mut costs = Vec::with_capacity(n);
    for j in 0..n {
        let c = rng.gen_range(-20..=20) as f64 + rng.gen_range(0..4) as f64 * 0.25;
        costs.push(c);
        req.add_col(format!("b{j}"), 0.0, 1.0, c, true);
    }
    let mut rows = Vec::new();
    for i in 0..m {
        let coefs: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.7) { rng.gen_range(-9..=12) as f64 } else { 0.0 })
            .collect();
        let total: f64 = coefs.iter().map(|c| c.abs()).sum();
        let (lo, hi) = match rng.gen_range(0..4) {
            0 => (f64::NEG_INFINITY, (rng.gen_range(0.2..0.7) * total).round()),
            1 => ((rng.gen_range(-0.3..0.3) * total).round(), f64::INFINITY),
            2 => {
                let a = (rng.gen_range(-0.4..0.1) * total).round();
                (a, a + (rng.gen_range(0.1..0.6) * total).round())
            }
            _ => {
                // Equality built from a random point so it is often feasible.
                let v: f64 = coefs.iter().filter(|_| rng.gen_bool(0.5)).sum();
                (v, v)
            }
        };
        let terms: Vec<(usize, f64)> = coefs.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
        req.add_row(format!("r{i}"), &terms, lo, hi);
        rows.push((coefs, lo, hi));
    }
    Instance { req, rows, costs }
}

fn enumerate(inst: &Instance) -> Option<f64> {
    let n = inst.costs.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let x: Vec<f64> = (0..n).map(|j| ((mask >> j) & 1) as f64).collect();
        let ok = inst.rows.iter().all(|(a, lo, hi)| {
            let act: f64 = a.iter().zip(&x).map(|(c, v)| c * v).sum();
            act >= *lo - 1e-9 && act <= *hi + 1e-9
        });
        if ok {
            let obj: f64 = inst.costs.iter().zip(&x).map(|(c, v)| c * v).sum();
            if best.map_or(true, |b| obj < b) {
                best = Some(obj);
            }
        }
    }
    best
}

#[test]
fn random_binary_programs_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(20230101);
    let mut feasible = 0;
    let count = 500;
    for k in 0..count {
        let mut inst = random_binary_program(&mut rng);
        inst.req.params.mip_gap = 0.0;
        let oracle = enumerate(&inst);
        let out = solve(&inst.req).unwrap_or_else(|e| panic!("instance {k}: {e}"));
        let relax = solve_lp_relaxation(&inst.req).unwrap();
        match oracle {
            None => assert_eq!(out.status, SolveStatus::Infeasible, "instance {k}"),
            Some(best) => {
                feasible += 1;
                assert_eq!(out.status, SolveStatus::Optimal, "instance {k}");
                assert!((out.objective - best).abs() <= 1e-9 * best.abs().max(1.0), "instance {k}: {} vs {best}", out.objective);
                assert!(out.bound <= out.objective + 1e-9);
                assert!(inst.req.max_violation(&out.primal) < 1e-9);
                assert!(out.primal.iter().all(|v| *v == 0.0 || *v == 1.0));
                assert_eq!(relax.status, SolveStatus::Optimal);
                assert!(relax.objective <= best + 1e-9, "instance {k}: relaxation above integer optimum");
            }
        }
    }
    assert!(feasible >= 200, "only {feasible} feasible instances");
}

#[test]
fn mixed_programs_match_enumeration_over_integers() {
    // One continuous column per instance with a closed-form inner optimum:
    // min c·b + w·z, z ∈ [0, u], z ≥ d − a·b  →  z* = clamp(d − a·b, 0, u) when w > 0.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 0..200 {
        let n = rng.gen_range(1..=8);
        let mut req = SolveRequest::new(0);
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=15) as f64).collect();
        let caps: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=10) as f64).collect();
        let cols: Vec<usize> = (0..n).map(|j| req.add_col(format!("b{j}"), 0.0, 1.0, costs[j], true)).collect();
        let w = rng.gen_range(0.5..4.0);
        let u = rng.gen_range(0.0..30.0);
        let d = rng.gen_range(0.0..40.0);
        let z = req.add_col("z", 0.0, u, w, false);
        let mut terms: Vec<(usize, f64)> = cols.iter().zip(&caps).map(|(&j, &a)| (j, a)).collect();
        terms.push((z, 1.0));
        req.add_row("cover", &terms, d, f64::INFINITY);
        req.params.mip_gap = 0.0;

        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << n) {
            let supplied: f64 = (0..n).filter(|j| (mask >> j) & 1 == 1).map(|j| caps[j]).sum();
            let need = (d - supplied).max(0.0);
            if need > u + 1e-12 {
                continue;
            }
            let obj: f64 = (0..n).filter(|j| (mask >> j) & 1 == 1).map(|j| costs[j]).sum::<f64>() + w * need;
            if best.map_or(true, |b| obj < b) {
                best = Some(obj);
            }
        }
        let out = solve(&req).unwrap();
        match best {
            None => assert_eq!(out.status, SolveStatus::Infeasible, "instance {k}"),
            Some(b) => {
                assert_eq!(out.status, SolveStatus::Optimal, "instance {k}");
                assert!((out.objective - b).abs() <= 1e-9 * b.abs().max(1.0), "instance {k}: {} vs {b}", out.objective);
            }
        }
    }
}

#[test]
fn sixty_binary_knapsack_is_proven_optimal() {
    // Integer weights admit an exact dynamic-programming oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..3 {
        let n = 60;
        let weights: Vec<usize> = (0..n).map(|_| rng.gen_range(5..40)).collect();
        let values: Vec<i64> = weights.iter().map(|&w| w as i64 + rng.gen_range(-4..=8)).collect();
        let capacity: usize = weights.iter().sum::<usize>() / 3;
        let mut req = SolveRequest::new(0);
        for j in 0..n {
            req.add_col(format!("k{j}"), 0.0, 1.0, -(values[j] as f64), true);
        }
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, weights[j] as f64)).collect();
        req.add_row("cap", &terms, f64::NEG_INFINITY, capacity as f64);
        req.params.mip_gap = 0.0;
        req.params.time_limit_s = 120.0;

        let mut dp = vec![0i64; capacity + 1];
        for j in 0..n {
            for c in (weights[j]..=capacity).rev() {
                dp[c] = dp[c].max(dp[c - weights[j]] + values[j]);
            }
        }
        let out = solve(&req).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective + dp[capacity] as f64).abs() < 1e-6, "{} vs {}", out.objective, -dp[capacity]);
    }
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let inst = random_binary_program(&mut rng);
        let a = solve(&inst.req).unwrap();
        let b = solve(&inst.req).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.primal, b.primal);
        assert_eq!(a.nodes, b.nodes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_file_round_trip_preserves_optimum(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_binary_program(&mut rng);
        let mut buf = Vec::new();
        lp_format::write_lp(&inst.req, &mut buf).unwrap();
        let back = lp_format::read_lp(buf.as_slice()).unwrap();
        prop_assert_eq!(back.num_cols, inst.req.num_cols);
        prop_assert_eq!(&back.integrality, &inst.req.integrality);
        prop_assert_eq!(&back.objective, &inst.req.objective);
        let a = solve(&inst.req).unwrap();
        let b = solve(&back).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.status == SolveStatus::Optimal {
            prop_assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.abs().max(1.0));
        }
    }

    #[test]
    fn relaxation_bounds_the_integer_optimum(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_binary_program(&mut rng);
        let mip = solve(&inst.req).unwrap();
        let lp = solve_lp_relaxation(&inst.req).unwrap();
        if mip.status == SolveStatus::Optimal {
            prop_assert_eq!(lp.status, SolveStatus::Optimal);
            prop_assert!(lp.objective <= mip.objective + 1e-9);
            prop_assert!(mip.bound <= mip.objective + 1e-9);
            prop_assert!(mip.objective - mip.bound <= inst.req.params.mip_gap * mip.objective.abs().max(1.0) + 1e-9);
        }
    }

    #[test]
    fn fixed_point_formatting_round_trips(v in -1e9f64..1e9) {
        let s = lp_format::fmt_num(v);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - v).abs() <= 1e-11 * v.abs().max(1e-300) + 1e-12 * (v.abs() < 1.0) as u8 as f64);
    }
}
