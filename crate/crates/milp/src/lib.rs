//! Mixed-integer linear programming behind a backend-neutral contract.
//!
//! [`SolveRequest`] describes `min c·x` over row and column bounds with an
//! integrality mask. The bundled reference backend runs best-bound
//! branch-and-bound on a dense bounded simplex; it targets desk-scale models
//! (a few hundred rows, a few dozen binaries). Other solvers plug in through
//! [`Backend`], for example out of process via [`external::ExternalBackend`].

mod branch;
pub mod external;
pub mod lp_format;
mod request;
mod simplex;

use std::time::Instant;

pub use request::{SolveOutcome, SolveParams, SolveRequest, SolveStatus};

use simplex::{DenseLp, LpStatus, Tableau};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("model too large for the dense reference solver: {0}")]
    TooLarge(String),
    #[error("LP file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can honour a [`SolveRequest`].
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome, SolveError>;
}

/// The bundled branch-and-bound solver.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceBackend;

impl Backend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome, SolveError> {
        solve(req)
    }
}

/// Largest dense tableau the reference backend will allocate (8-byte entries).
pub const MAX_TABLEAU_ENTRIES: usize = 1 << 27;

fn check_size(req: &SolveRequest) -> Result<(), SolveError> {
    let entries = req.num_rows.saturating_mul(req.num_cols.saturating_add(req.num_rows));
    if entries > MAX_TABLEAU_ENTRIES {
        return Err(SolveError::TooLarge(format!(
            "{} rows × {} columns; use an external backend or a coarser time grid",
            req.num_rows, req.num_cols
        )));
    }
    Ok(())
}

/// Solve with the reference backend, honouring integrality.
pub fn solve(req: &SolveRequest) -> Result<SolveOutcome, SolveError> {
    req.validate()?;
    check_size(req)?;
    if !req.is_mip() {
        return solve_lp_relaxation(req);
    }
    let start = Instant::now();
    let lp = DenseLp::from_request(req);
    branch::branch_and_bound(req, &lp, start)
}

/// Solve the continuous relaxation (integrality mask ignored).
pub fn solve_lp_relaxation(req: &SolveRequest) -> Result<SolveOutcome, SolveError> {
    req.validate()?;
    check_size(req)?;
    let start = Instant::now();
    let lp = DenseLp::from_request(req);
    if (0..req.num_cols).any(|j| req.col_lower[j] > req.col_upper[j]) {
        return Ok(SolveOutcome::without_solution(SolveStatus::Infeasible, f64::INFINITY, start.elapsed()));
    }
    let deadline = start + std::time::Duration::from_secs_f64(req.params.time_limit_s.max(0.0));
    let mut tab = Tableau::new(&lp, &req.col_lower, &req.col_upper);
    let status = tab.solve_from_scratch(Some(deadline), branch::max_iterations(req));
    let mut out = match status {
        LpStatus::Optimal => {
            let objective = tab.objective();
            let bound = tab.dual_bound(&lp);
            if bound.is_finite() && objective < bound - 1e-7 * objective.abs().max(1.0) {
                return Err(SolveError::Numerical(format!(
                    "weak duality violated: primal {objective} below dual bound {bound}"
                )));
            }
            let residual = tab.residual(&lp);
            if residual > 1e-6 {
                return Err(SolveError::Numerical(format!("primal residual {residual:e} after simplex")));
            }
            SolveOutcome {
                status: SolveStatus::Optimal,
                primal: tab.structural().to_vec(),
                objective,
                bound: bound.min(objective),
                wall_time: start.elapsed(),
                nodes: 0,
                lp_iterations: 0,
            }
        }
        LpStatus::Infeasible => SolveOutcome::without_solution(SolveStatus::Infeasible, f64::INFINITY, start.elapsed()),
        LpStatus::Unbounded => SolveOutcome::without_solution(SolveStatus::Unbounded, f64::NEG_INFINITY, start.elapsed()),
        LpStatus::TimeLimit => SolveOutcome::without_solution(SolveStatus::TimeLimit, f64::NEG_INFINITY, start.elapsed()),
        LpStatus::IterationLimit => {
            return Err(SolveError::Numerical("simplex iteration limit reached".into()));
        }
    };
    out.lp_iterations = tab.iterations;
    Ok(out)
}
