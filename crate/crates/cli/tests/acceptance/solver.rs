//! Reference solver against enumeration over the binaries with an LP for
//! the continuous part.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use milp::{solve, solve_lp_relaxation, SolveRequest, SolveStatus};

use crate::suites::Check;

struct Instance {
    req: SolveRequest,
    binaries: usize,
    /// Continuous columns: (cost, upper bound).
    continuous: Vec<(f64, f64)>,
    /// Dense rows over binaries then continuous columns.
    rows: Vec<(Vec<f64>, f64, f64)>,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let binaries = rng.gen_range(1..=10);
    let k = rng.gen_range(0..=3);
    let m = rng.gen_range(1..=6);
    let mut req = SolveRequest::new(0);
    for j in 0..binaries {
        req.add_col(format!("b{j}"), 0.0, 1.0, rng.gen_range(-20..=20) as f64, true);
    }
    let mut continuous = Vec::new();
    for j in 0..k {
        let cost = rng.gen_range(-5.0..8.0f64).round();
        let upper = rng.gen_range(1..=10) as f64;
        req.add_col(format!("x{j}"), 0.0, upper, cost, false);
        continuous.push((cost, upper));
    }
    let n = binaries + k;
    let mut rows = Vec::new();
    for i in 0..m {
        let a: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.6) { rng.gen_range(-9..=12) as f64 } else { 0.0 }).collect();
        let scale: f64 = a.iter().map(|c| c.abs()).sum::<f64>().max(1.0);
        let (lo, hi) = match rng.gen_range(0..3) {
            0 => (f64::NEG_INFINITY, (rng.gen_range(0.1..0.6) * scale).round()),
            1 => ((rng.gen_range(-0.4..0.2) * scale).round(), f64::INFINITY),
            _ => {
                let lo = (rng.gen_range(-0.4..0.1) * scale).round();
                (lo, lo + (rng.gen_range(0.1..0.5) * scale).round())
            }
        };
        let terms: Vec<(usize, f64)> = a.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
        req.add_row(format!("r{i}"), &terms, lo, hi);
        rows.push((a, lo, hi));
    }
    req.params.mip_gap = 1e-9;
    Instance { req, binaries, continuous, rows }
}

/// LP over the continuous columns with the binaries fixed, or the full
/// relaxation when `fixed` is `None`.
fn lp(inst: &Instance, fixed: Option<&[f64]>) -> Option<f64> {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let mut base = 0.0;
    let mut vars = Vec::new();
    match fixed {
        Some(b) => {
            for (j, v) in b.iter().enumerate() {
                base += inst.req.objective[j] * v;
            }
        }
        None => {
            for j in 0..inst.binaries {
                vars.push(p.add_var(inst.req.objective[j], (0.0, 1.0)));
            }
        }
    }
    let first_cont = vars.len();
    for &(c, u) in &inst.continuous {
        vars.push(p.add_var(c, (0.0, u)));
    }
    for (a, lo, hi) in &inst.rows {
        let mut shift = 0.0;
        let mut terms = Vec::new();
        for (j, &c) in a.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            match fixed {
                Some(b) if j < inst.binaries => shift += c * b[j],
                Some(_) => terms.push((vars[first_cont + j - inst.binaries], c)),
                None => terms.push((vars[j], c)),
            }
        }
        if terms.is_empty() {
            if shift < lo - 1e-9 || shift > hi + 1e-9 {
                return None;
            }
            continue;
        }
        if lo.is_finite() {
            p.add_constraint(terms.as_slice(), ComparisonOp::Ge, lo - shift);
        }
        if hi.is_finite() {
            p.add_constraint(terms.as_slice(), ComparisonOp::Le, hi - shift);
        }
    }
    match p.solve() {
        Ok(s) => Some(base + s.objective()),
        Err(minilp::Error::Infeasible) => None,
        Err(minilp::Error::Unbounded) => panic!("bounded instance reported unbounded"),
    }
}

fn enumerate(inst: &Instance) -> Option<f64> {
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << inst.binaries) {
        let b: Vec<f64> = (0..inst.binaries).map(|j| ((mask >> j) & 1) as f64).collect();
        if let Some(v) = lp(inst, Some(&b)) {
            best = Some(best.map_or(v, |x: f64| x.min(v)));
        }
    }
    best
}

pub fn correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut feasible, mut infeasible) = (0, 0);
    for i in 0..240 {
        let inst = instance(&mut rng);
        let out = solve(&inst.req).map_err(|e| format!("instance {i}: {e}"))?;
        let exact = enumerate(&inst);
        match (out.status, exact) {
            (SolveStatus::Optimal, Some(v)) => {
                if (out.objective - v).abs() > 1e-6 * v.abs().max(1.0) {
                    return Err(format!("instance {i}: solver {} vs enumeration {v}", out.objective));
                }
                if out.bound > v + 1e-6 * v.abs().max(1.0) {
                    return Err(format!("instance {i}: bound {} above optimum {v}", out.bound));
                }
                if inst.req.max_violation(&out.primal) > 1e-6 {
                    return Err(format!("instance {i}: solution violates rows"));
                }
                feasible += 1;
            }
            (SolveStatus::Infeasible, None) => infeasible += 1,
            (s, v) => return Err(format!("instance {i}: status {} vs enumeration {v:?}", s.as_str())),
        }
        // Relaxation: every LP solve checks weak duality internally and errors on violation.
        let relax = solve_lp_relaxation(&inst.req).map_err(|e| format!("instance {i} relaxation: {e}"))?;
        match (relax.status, lp(&inst, None)) {
            (SolveStatus::Optimal, Some(v)) => {
                let tol = 1e-6 * v.abs().max(1.0);
                if (relax.objective - v).abs() > tol || relax.bound > relax.objective + tol || relax.bound < relax.objective - tol {
                    return Err(format!("instance {i}: relaxation {} bound {} vs oracle {v}", relax.objective, relax.bound));
                }
                if let Some(opt) = exact {
                    if relax.objective > opt + tol {
                        return Err(format!("instance {i}: relaxation {} above integer optimum {opt}", relax.objective));
                    }
                }
            }
            (SolveStatus::Infeasible, None) => {}
            (s, v) => return Err(format!("instance {i}: relaxation status {} vs oracle {v:?}", s.as_str())),
        }
    }
    Ok(format!("{feasible} feasible + {infeasible} infeasible mixed-binary programs, relaxations within duality bounds"))
}
