//! Solve contract shared by every backend.

use std::time::Duration;

use crate::SolveError;

/// Solver parameters carried with every request.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveParams {
    /// Relative MIP gap at which branch-and-bound may stop.
    pub mip_gap: f64,
    /// A value within this distance of an integer counts as integral.
    pub integrality_tol: f64,
    /// Wall-clock limit for one solve, in seconds.
    pub time_limit_s: f64,
    /// Reserved for backends with randomized components. The reference
    /// backend is fully deterministic and ignores it.
    pub deterministic_seed: u64,
    /// Hard cap on explored nodes.
    pub node_limit: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            mip_gap: 1e-4,
            integrality_tol: 1e-4,
            time_limit_s: 600.0,
            deterministic_seed: 0,
            node_limit: 200_000,
        }
    }
}

/// A minimization problem `min c·x` subject to
/// `row_lower ≤ A x ≤ row_upper` and `col_lower ≤ x ≤ col_upper`,
/// with integrality on the masked columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRequest {
    pub num_rows: usize,
    pub num_cols: usize,
    /// Row-major `(row, col, value)` triplets. Duplicates are summed.
    pub triplets: Vec<(usize, usize, f64)>,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub col_lower: Vec<f64>,
    pub col_upper: Vec<f64>,
    pub integrality: Vec<bool>,
    pub objective: Vec<f64>,
    pub params: SolveParams,
    pub col_names: Vec<String>,
    pub row_names: Vec<String>,
}

impl SolveRequest {
    /// Empty request with `num_cols` continuous, non-negative columns.
    pub fn new(num_cols: usize) -> Self {
        Self {
            num_rows: 0,
            num_cols,
            triplets: Vec::new(),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
            col_lower: vec![0.0; num_cols],
            col_upper: vec![f64::INFINITY; num_cols],
            integrality: vec![false; num_cols],
            objective: vec![0.0; num_cols],
            params: SolveParams::default(),
            col_names: (0..num_cols).map(|j| format!("x{j}")).collect(),
            row_names: Vec::new(),
        }
    }

    /// Append a column and return its index.
    pub fn add_col(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64, integer: bool) -> usize {
        let j = self.num_cols;
        self.num_cols += 1;
        self.col_lower.push(lower);
        self.col_upper.push(upper);
        self.objective.push(cost);
        self.integrality.push(integer);
        self.col_names.push(name.into());
        j
    }

    /// Append a row `lower ≤ Σ coef·x ≤ upper` and return its index.
    pub fn add_row(&mut self, name: impl Into<String>, coefs: &[(usize, f64)], lower: f64, upper: f64) -> usize {
        let i = self.num_rows;
        self.num_rows += 1;
        for &(j, v) in coefs {
            self.triplets.push((i, j, v));
        }
        self.row_lower.push(lower);
        self.row_upper.push(upper);
        self.row_names.push(name.into());
        i
    }

    pub fn is_mip(&self) -> bool {
        self.integrality.iter().any(|&b| b)
    }

    /// Objective value of an assignment.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Row activities `A x`.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        let mut act = vec![0.0; self.num_rows];
        for &(i, j, v) in &self.triplets {
            act[i] += v * x[j];
        }
        act
    }

    /// Largest absolute violation of row and column bounds by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let act = self.row_activity(x);
        let mut worst: f64 = 0.0;
        for i in 0..self.num_rows {
            worst = worst.max(self.row_lower[i] - act[i]).max(act[i] - self.row_upper[i]);
        }
        for j in 0..self.num_cols {
            worst = worst.max(self.col_lower[j] - x[j]).max(x[j] - self.col_upper[j]);
        }
        worst
    }

    /// Check the request invariants: consistent dimensions and finite coefficients.
    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_cols;
        let m = self.num_rows;
        let dims = [
            ("col_lower", self.col_lower.len(), n),
            ("col_upper", self.col_upper.len(), n),
            ("integrality", self.integrality.len(), n),
            ("objective", self.objective.len(), n),
            ("col_names", self.col_names.len(), n),
            ("row_lower", self.row_lower.len(), m),
            ("row_upper", self.row_upper.len(), m),
            ("row_names", self.row_names.len(), m),
        ];
        for (what, got, want) in dims {
            if got != want {
                return Err(SolveError::Dimension(format!("{what} has length {got}, expected {want}")));
            }
        }
        for &(i, j, v) in &self.triplets {
            if i >= m || j >= n {
                return Err(SolveError::Dimension(format!("triplet ({i}, {j}) outside {m}x{n}")));
            }
            if !v.is_finite() {
                return Err(SolveError::Numerical(format!("non-finite coefficient at ({i}, {j})")));
            }
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(SolveError::Numerical(format!("non-finite objective coefficient for column {j}")));
        }
        for j in 0..n {
            if self.col_lower[j].is_nan() || self.col_upper[j].is_nan() {
                return Err(SolveError::Numerical(format!("NaN bound on column {j}")));
            }
        }
        for i in 0..m {
            if self.row_lower[i].is_nan() || self.row_upper[i].is_nan() {
                return Err(SolveError::Numerical(format!("NaN bound on row {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    FeasibleGap,
    Infeasible,
    Unbounded,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleGap => "feasible_gap",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::TimeLimit => "time_limit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "optimal" => SolveStatus::Optimal,
            "feasible_gap" => SolveStatus::FeasibleGap,
            "infeasible" => SolveStatus::Infeasible,
            "unbounded" => SolveStatus::Unbounded,
            "time_limit" => SolveStatus::TimeLimit,
            _ => return None,
        })
    }

    /// True when `primal` holds a usable assignment.
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleGap)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Column values; empty when no feasible point is known.
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    pub wall_time: Duration,
    pub nodes: usize,
    pub lp_iterations: usize,
}

impl SolveOutcome {
    pub(crate) fn without_solution(status: SolveStatus, bound: f64, wall_time: Duration) -> Self {
        Self {
            status,
            primal: Vec::new(),
            objective: f64::NAN,
            bound,
            wall_time,
            nodes: 0,
            lp_iterations: 0,
        }
    }
}
