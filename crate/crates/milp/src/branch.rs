//! Best-bound branch-and-bound over the simplex core.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::Instant;

use log::debug;

use crate::simplex::{DenseLp, LpStatus, Tableau};
use crate::{SolveError, SolveOutcome, SolveRequest, SolveStatus};

/// Stop attaching parent tableaus to new nodes above this many bytes held by
/// the open set; such nodes are re-solved from the slack basis instead.
const WARM_START_BUDGET: usize = 1 << 30;

struct Node {
    bound: f64,
    id: u64,
    lb: Vec<f64>,
    ub: Vec<f64>,
    /// Parent tableau plus the single bound change separating the two.
    warm: Option<(Rc<Tableau>, usize)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: the smallest bound, then the oldest node, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

pub(crate) fn max_iterations(req: &SolveRequest) -> usize {
    50 * (req.num_rows + req.num_cols) + 10_000
}

fn gap_abs(gap: f64, incumbent: f64) -> f64 {
    gap * incumbent.abs().max(1.0)
}

/// Most fractional integer column; ties go to the lowest index.
fn branching_column(req: &SolveRequest, x: &[f64]) -> Option<(usize, f64)> {
    let tol = req.params.integrality_tol;
    let mut best: Option<(usize, f64, f64)> = None;
    for (j, &is_int) in req.integrality.iter().enumerate() {
        if !is_int {
            continue;
        }
        let v = x[j];
        let frac = v - v.floor();
        if frac <= tol || frac >= 1.0 - tol {
            continue;
        }
        let closeness = (frac - 0.5).abs();
        match best {
            Some((_, _, c)) if closeness >= c => {}
            _ => best = Some((j, v, closeness)),
        }
    }
    best.map(|(j, v, _)| (j, v))
}

pub(crate) fn branch_and_bound(req: &SolveRequest, lp: &DenseLp, start: Instant) -> Result<SolveOutcome, SolveError> {
    let params = &req.params;
    let deadline = start + std::time::Duration::from_secs_f64(params.time_limit_s.max(0.0));
    let max_iter = max_iterations(req);
    let tol = params.integrality_tol;

    let mut root_lb = req.col_lower.clone();
    let mut root_ub = req.col_upper.clone();
    for j in 0..req.num_cols {
        if req.integrality[j] {
            root_lb[j] = (root_lb[j] - tol).ceil();
            root_ub[j] = (root_ub[j] + tol).floor();
        }
    }
    if (0..req.num_cols).any(|j| root_lb[j] > root_ub[j]) {
        return Ok(SolveOutcome::without_solution(SolveStatus::Infeasible, f64::INFINITY, start.elapsed()));
    }

    let mut lp_iterations = 0usize;
    let mut nodes = 0usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    // Smallest bound among nodes closed by the incumbent test.
    let mut closed_bound = f64::INFINITY;

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: 0,
        lb: root_lb,
        ub: root_ub,
        warm: None,
    });
    let mut next_id = 1u64;
    let mut hit_limit: Option<SolveStatus> = None;

    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc - gap_abs(params.mip_gap, *inc) {
                closed_bound = closed_bound.min(node.bound);
                continue;
            }
        }
        if Instant::now() >= deadline {
            hit_limit = Some(SolveStatus::TimeLimit);
            heap.push(node);
            break;
        }
        if nodes >= params.node_limit {
            hit_limit = Some(SolveStatus::FeasibleGap);
            heap.push(node);
            break;
        }
        nodes += 1;

        let (status, tab) = solve_node(lp, &node, deadline, max_iter);
        lp_iterations += tab.iterations;
        match status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if incumbent.is_none() && node.id == 0 {
                    let mut out = SolveOutcome::without_solution(SolveStatus::Unbounded, f64::NEG_INFINITY, start.elapsed());
                    out.nodes = nodes;
                    out.lp_iterations = lp_iterations;
                    return Ok(out);
                }
                return Err(SolveError::Numerical("unbounded node relaxation below a bounded root".into()));
            }
            LpStatus::TimeLimit => {
                hit_limit = Some(SolveStatus::TimeLimit);
                heap.push(node);
                break;
            }
            LpStatus::IterationLimit => {
                return Err(SolveError::Numerical(format!("simplex iteration limit at node {}", node.id)));
            }
        }
        check_weak_duality(&tab, lp)?;
        let obj = tab.objective();
        if let Some((inc, _)) = &incumbent {
            if obj >= inc - gap_abs(params.mip_gap, *inc) {
                closed_bound = closed_bound.min(obj);
                continue;
            }
        }
        let x = tab.structural();
        match branching_column(req, x) {
            None => {
                let mut sol = x.to_vec();
                for j in 0..req.num_cols {
                    if req.integrality[j] {
                        sol[j] = sol[j].round();
                    }
                }
                debug!("incumbent {obj} at node {}", node.id);
                incumbent = Some((obj, sol));
            }
            Some((j, v)) => {
                let held: usize = heap.iter().filter(|n| n.warm.is_some()).count() * tab.approx_bytes();
                let parent = if held < WARM_START_BUDGET { Some(Rc::new(tab)) } else { None };
                let down_ub = v.floor();
                let up_lb = v.ceil();
                let mut down = Node {
                    bound: obj,
                    id: next_id,
                    lb: node.lb.clone(),
                    ub: node.ub.clone(),
                    warm: parent.as_ref().map(|p| (Rc::clone(p), j)),
                };
                down.ub[j] = down_ub;
                let mut up = Node {
                    bound: obj,
                    id: next_id + 1,
                    lb: node.lb,
                    ub: node.ub,
                    warm: parent.map(|p| (p, j)),
                };
                up.lb[j] = up_lb;
                next_id += 2;
                heap.push(down);
                heap.push(up);
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    let Some((inc_obj, inc_x)) = incumbent else {
        let status = hit_limit.unwrap_or(SolveStatus::Infeasible);
        let status = if status == SolveStatus::FeasibleGap { SolveStatus::TimeLimit } else { status };
        let bound = if status == SolveStatus::Infeasible { f64::INFINITY } else { open_bound.min(closed_bound) };
        let mut out = SolveOutcome::without_solution(status, bound, elapsed);
        out.nodes = nodes;
        out.lp_iterations = lp_iterations;
        return Ok(out);
    };
    let bound = inc_obj.min(closed_bound).min(open_bound);
    let (primal, objective) = polish(req, lp, &inc_x, inc_obj, deadline, max_iter);
    let within_gap = objective - bound <= gap_abs(params.mip_gap, objective) + 1e-9;
    let status = match hit_limit {
        Some(s) => s,
        None if within_gap => SolveStatus::Optimal,
        None => SolveStatus::FeasibleGap,
    };
    Ok(SolveOutcome {
        status,
        primal,
        objective,
        bound,
        wall_time: start.elapsed(),
        nodes,
        lp_iterations,
    })
}

fn solve_node(lp: &DenseLp, node: &Node, deadline: Instant, max_iter: usize) -> (LpStatus, Tableau) {
    if let Some((parent, j)) = &node.warm {
        let mut tab = (**parent).clone();
        tab.iterations = 0;
        tab.set_bounds(*j, node.lb[*j], node.ub[*j]);
        let status = tab.dual(Some(deadline), max_iter);
        if status != LpStatus::IterationLimit {
            return (status, tab);
        }
        debug!("dual simplex stalled at node {}; cold restart", node.id);
    }
    let mut tab = Tableau::new(lp, &node.lb, &node.ub);
    let status = tab.solve_from_scratch(Some(deadline), max_iter);
    (status, tab)
}

fn check_weak_duality(tab: &Tableau, lp: &DenseLp) -> Result<(), SolveError> {
    let obj = tab.objective();
    let bound = tab.dual_bound(lp);
    if bound.is_finite() && obj < bound - 1e-7 * obj.abs().max(1.0) {
        return Err(SolveError::Numerical(format!(
            "weak duality violated: primal {obj} below dual bound {bound}"
        )));
    }
    Ok(())
}

/// Re-solve the continuous part with integer columns fixed at their rounded
/// incumbent values, so reported integers are exact and continuous values
/// come from a fresh factorization path.
fn polish(req: &SolveRequest, lp: &DenseLp, x: &[f64], obj: f64, deadline: Instant, max_iter: usize) -> (Vec<f64>, f64) {
    let mut lb = req.col_lower.clone();
    let mut ub = req.col_upper.clone();
    for j in 0..req.num_cols {
        if req.integrality[j] {
            lb[j] = x[j];
            ub[j] = x[j];
        }
    }
    let mut tab = Tableau::new(lp, &lb, &ub);
    if tab.solve_from_scratch(Some(deadline), max_iter) == LpStatus::Optimal {
        let pobj = tab.objective();
        if pobj <= obj + 1e-9 * obj.abs().max(1.0) && tab.residual(lp) < 1e-9 {
            return (tab.structural().to_vec(), pobj);
        }
    }
    (x.to_vec(), obj)
}
