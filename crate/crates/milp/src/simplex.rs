//! Dense bounded-variable simplex on an explicit tableau.
//!
//! Every row `i` of `A x` gets a slack column `s_i = a_i·x` bounded by the
//! row bounds, so the working system is `A x − s = 0` with all bounds carried
//! on columns. Phase I adds artificial columns only for rows whose slack
//! starts outside its bounds. The dual simplex works from an optimal tableau
//! after bounds are tightened, which is how branch-and-bound reuses a parent
//! node's basis.

use std::time::Instant;

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-13;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 40;

/// Dense copy of the constraint data.
#[derive(Debug, Clone)]
pub(crate) struct DenseLp {
    pub m: usize,
    pub n: usize,
    pub a: Vec<f64>,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub cost: Vec<f64>,
}

impl DenseLp {
    pub fn from_request(req: &crate::SolveRequest) -> Self {
        let (m, n) = (req.num_rows, req.num_cols);
        let mut a = vec![0.0; m * n];
        for &(i, j, v) in &req.triplets {
            a[i * n + j] += v;
        }
        Self {
            m,
            n,
            a,
            row_lower: req.row_lower.clone(),
            row_upper: req.row_upper.clone(),
            cost: req.objective.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    m: usize,
    n_struct: usize,
    ncols: usize,
    n_art: usize,
    /// `B⁻¹ [A | −I | art]`, row-major.
    t: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    x: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    /// Reduced costs for the active objective.
    d: Vec<f64>,
    pub iterations: usize,
}

fn feas_tol(bound: f64) -> f64 {
    FEAS_TOL * (1.0 + bound.abs())
}

impl Tableau {
    /// Build the slack basis for `lp` under column bounds `lb`/`ub`.
    pub fn new(lp: &DenseLp, col_lb: &[f64], col_ub: &[f64]) -> Self {
        let (m, n) = (lp.m, lp.n);
        let mut x: Vec<f64> = (0..n)
            .map(|j| {
                if col_lb[j].is_finite() {
                    col_lb[j]
                } else if col_ub[j].is_finite() {
                    col_ub[j]
                } else {
                    0.0
                }
            })
            .collect();
        let activity: Vec<f64> = (0..m)
            .map(|i| (0..n).map(|j| lp.a[i * n + j] * x[j]).sum())
            .collect();

        // Decide per row: slack basic, or slack at a bound plus an artificial.
        let mut art_sign: Vec<Option<(f64, f64)>> = vec![None; m];
        for i in 0..m {
            let (lo, hi, s) = (lp.row_lower[i], lp.row_upper[i], activity[i]);
            if s < lo - feas_tol(lo) {
                art_sign[i] = Some((1.0, lo));
            } else if s > hi + feas_tol(hi) {
                art_sign[i] = Some((-1.0, hi));
            }
        }
        let n_art = art_sign.iter().filter(|a| a.is_some()).count();
        let ncols = n + m + n_art;
        let mut t = vec![0.0; m * ncols];
        let mut basis = vec![0; m];
        let mut row_of = vec![usize::MAX; ncols];
        let mut lb = Vec::with_capacity(ncols);
        let mut ub = Vec::with_capacity(ncols);
        lb.extend_from_slice(&col_lb[..n]);
        ub.extend_from_slice(&col_ub[..n]);
        lb.extend_from_slice(&lp.row_lower);
        ub.extend_from_slice(&lp.row_upper);
        x.resize(ncols, 0.0);
        let mut next_art = n + m;
        for i in 0..m {
            let row = &mut t[i * ncols..(i + 1) * ncols];
            match art_sign[i] {
                None => {
                    // B_ii = −1 for the slack.
                    for j in 0..n {
                        row[j] = -lp.a[i * n + j];
                    }
                    row[n + i] = 1.0;
                    basis[i] = n + i;
                    row_of[n + i] = i;
                    x[n + i] = activity[i];
                }
                Some((sigma, v)) => {
                    for j in 0..n {
                        row[j] = lp.a[i * n + j] / sigma;
                    }
                    row[n + i] = -1.0 / sigma;
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    row_of[next_art] = i;
                    x[n + i] = v;
                    x[next_art] = (v - activity[i]) / sigma;
                    lb.push(0.0);
                    ub.push(f64::INFINITY);
                    next_art += 1;
                }
            }
        }
        let mut cost = lp.cost.clone();
        cost.resize(ncols, 0.0);
        Self {
            m,
            n_struct: n,
            ncols,
            n_art,
            t,
            basis,
            row_of,
            x,
            lb,
            ub,
            cost,
            d: vec![0.0; ncols],
            iterations: 0,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    /// Recompute reduced costs `d = c − c_Bᵀ T` for cost vector `c`.
    fn price(&mut self, c: &[f64]) {
        let nc = self.ncols;
        self.d.copy_from_slice(c);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i * nc..(i + 1) * nc];
            for (dj, tij) in self.d.iter_mut().zip(row) {
                *dj -= cb * tij;
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let piv = self.at(r, q);
        let inv = 1.0 / piv;
        let mut nz: Vec<(usize, f64)> = Vec::new();
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for (j, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v *= inv;
                    if v.abs() < DROP_TOL {
                        *v = 0.0;
                    } else {
                        nz.push((j, *v));
                    }
                }
            }
            row[q] = 1.0;
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * nc + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * nc..(i + 1) * nc];
            for &(j, v) in &nz {
                let nv = row[j] - f * v;
                row[j] = if nv.abs() < DROP_TOL { 0.0 } else { nv };
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &(j, v) in &nz {
                self.d[j] -= f * v;
            }
        }
        self.d[q] = 0.0;
        let leaving = self.basis[r];
        self.row_of[leaving] = usize::MAX;
        self.basis[r] = q;
        self.row_of[q] = r;
    }

    #[cfg(test)]
    fn at_lower(&self, j: usize) -> bool {
        self.x[j] == self.lb[j]
    }

    #[cfg(test)]
    fn at_upper(&self, j: usize) -> bool {
        self.x[j] == self.ub[j]
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lb[j] == self.ub[j]
    }

    /// Primal simplex on the cost vector `c`, starting from a primal feasible basis.
    fn primal(&mut self, c: &[f64], deadline: Option<Instant>, max_iter: usize) -> LpStatus {
        self.price(c);
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return LpStatus::IterationLimit;
            }
            if self.iterations % 64 == 0 {
                if let Some(dl) = deadline {
                    if Instant::now() >= dl {
                        return LpStatus::TimeLimit;
                    }
                }
            }
            let bland = degenerate >= DEGENERATE_STREAK;
            // Pricing.
            let mut q = usize::MAX;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if self.row_of[j] != usize::MAX || self.is_fixed(j) {
                    continue;
                }
                let dj = self.d[j];
                let tol = OPT_TOL * (1.0 + c[j].abs());
                let improving = (dj < -tol && self.x[j] < self.ub[j]) || (dj > tol && self.x[j] > self.lb[j]);
                if !improving {
                    continue;
                }
                if bland {
                    q = j;
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    q = j;
                }
            }
            if q == usize::MAX {
                return LpStatus::Optimal;
            }
            let dir = if self.d[q] < 0.0 { 1.0 } else { -1.0 };

            // Ratio test.
            let own = self.ub[q] - self.lb[q];
            let mut step = if own.is_finite() { own } else { f64::INFINITY };
            let mut leave = usize::MAX;
            let mut leave_alpha = 0.0f64;
            for r in 0..self.m {
                let alpha = self.at(r, q);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[r];
                let rate = -dir * alpha;
                let xb = self.x[b];
                let lim = if rate < 0.0 {
                    if self.lb[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    ((xb - self.lb[b]) / -rate).max(0.0)
                } else {
                    if self.ub[b] == f64::INFINITY {
                        continue;
                    }
                    ((self.ub[b] - xb) / rate).max(0.0)
                };
                let better = if leave == usize::MAX {
                    lim < step
                } else if bland {
                    lim < step - 1e-12 || (lim <= step + 1e-12 && b < self.basis[leave])
                } else {
                    lim < step - 1e-12 || (lim <= step + 1e-12 && alpha.abs() > leave_alpha)
                };
                if better || (leave == usize::MAX && lim <= step) {
                    step = lim;
                    leave = r;
                    leave_alpha = alpha.abs();
                }
            }
            if step == f64::INFINITY {
                return LpStatus::Unbounded;
            }
            self.iterations += 1;
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            // Apply step.
            let delta = dir * step;
            if delta != 0.0 {
                for r in 0..self.m {
                    let alpha = self.at(r, q);
                    if alpha != 0.0 {
                        let b = self.basis[r];
                        self.x[b] -= alpha * delta;
                    }
                }
            }
            if leave == usize::MAX {
                // Bound flip.
                self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                continue;
            }
            self.x[q] += delta;
            let b = self.basis[leave];
            let rate = -dir * self.at(leave, q);
            self.x[b] = if rate < 0.0 { self.lb[b] } else { self.ub[b] };
            self.pivot(leave, q);
        }
    }

    /// Dual simplex from a dual feasible basis for the phase-II costs.
    pub fn dual(&mut self, deadline: Option<Instant>, max_iter: usize) -> LpStatus {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return LpStatus::IterationLimit;
            }
            if self.iterations % 64 == 0 {
                if let Some(dl) = deadline {
                    if Instant::now() >= dl {
                        return LpStatus::TimeLimit;
                    }
                }
            }
            let bland = degenerate >= DEGENERATE_STREAK;
            // Leaving row: largest bound violation.
            let mut r = usize::MAX;
            let mut worst = 0.0;
            for i in 0..self.m {
                let b = self.basis[i];
                let xb = self.x[b];
                let viol = if xb < self.lb[b] - feas_tol(self.lb[b]) {
                    self.lb[b] - xb
                } else if xb > self.ub[b] + feas_tol(self.ub[b]) {
                    xb - self.ub[b]
                } else {
                    continue;
                };
                if bland {
                    if r == usize::MAX || b < self.basis[r] {
                        r = i;
                    }
                } else if viol > worst {
                    worst = viol;
                    r = i;
                }
            }
            if r == usize::MAX {
                return LpStatus::Optimal;
            }
            let b = self.basis[r];
            let target = if self.x[b] < self.lb[b] { self.lb[b] } else { self.ub[b] };
            let delta = target - self.x[b];

            // Entering column: keep reduced costs sign-feasible.
            let mut q = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0f64;
            for j in 0..self.ncols {
                if self.row_of[j] != usize::MAX || self.is_fixed(j) {
                    continue;
                }
                let alpha = self.at(r, j);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                // x_B(r) changes by −alpha·Δx_j; it must move in the direction of delta.
                let want_increase = (delta > 0.0) == (alpha < 0.0);
                let free = self.lb[j] == f64::NEG_INFINITY && self.ub[j] == f64::INFINITY;
                let ok = if want_increase {
                    free || self.x[j] < self.ub[j]
                } else {
                    free || self.x[j] > self.lb[j]
                };
                if !ok {
                    continue;
                }
                let ratio = (self.d[j] / alpha).abs();
                let better = if bland {
                    ratio < best_ratio - 1e-12
                } else {
                    ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && alpha.abs() > best_alpha)
                };
                if better {
                    best_ratio = ratio;
                    best_alpha = alpha.abs();
                    q = j;
                }
            }
            if q == usize::MAX {
                return LpStatus::Infeasible;
            }
            self.iterations += 1;
            if best_ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let alpha_rq = self.at(r, q);
            let step = -delta / alpha_rq;
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha != 0.0 {
                    let bi = self.basis[i];
                    self.x[bi] -= alpha * step;
                }
            }
            self.x[q] += step;
            self.x[b] = target;
            self.pivot(r, q);
        }
    }

    /// Two-phase primal solve from the slack basis.
    pub fn solve_from_scratch(&mut self, deadline: Option<Instant>, max_iter: usize) -> LpStatus {
        if self.n_art > 0 {
            let mut c1 = vec![0.0; self.ncols];
            for c in c1.iter_mut().skip(self.n_struct + self.m) {
                *c = 1.0;
            }
            match self.primal(&c1, deadline, max_iter) {
                LpStatus::Optimal => {}
                LpStatus::Unbounded => return LpStatus::Infeasible,
                other => return other,
            }
            let infeas: f64 = (self.n_struct + self.m..self.ncols).map(|j| self.x[j]).sum();
            let scale = 1.0
                + self
                    .lb
                    .iter()
                    .chain(&self.ub)
                    .filter(|v| v.is_finite())
                    .fold(0.0f64, |a, v| a.max(v.abs()));
            if infeas > 1e-8 * scale {
                return LpStatus::Infeasible;
            }
            self.retire_artificials();
        }
        let c = self.cost.clone();
        self.primal(&c, deadline, max_iter)
    }

    /// Fix artificials at zero and pivot basic ones out where possible.
    fn retire_artificials(&mut self) {
        let first_art = self.n_struct + self.m;
        for j in first_art..self.ncols {
            self.lb[j] = 0.0;
            self.ub[j] = 0.0;
            if self.row_of[j] == usize::MAX {
                self.x[j] = 0.0;
            }
        }
        for r in 0..self.m {
            let b = self.basis[r];
            if b < first_art {
                continue;
            }
            let mut q = usize::MAX;
            let mut best = 1e-7;
            for j in 0..first_art {
                if self.row_of[j] != usize::MAX {
                    continue;
                }
                let a = self.at(r, j).abs();
                if a > best {
                    best = a;
                    q = j;
                }
            }
            if q != usize::MAX {
                // Degenerate exchange: the artificial leaves at (about) zero.
                let step = self.x[b] / self.at(r, q);
                if step != 0.0 {
                    for i in 0..self.m {
                        let alpha = self.at(i, q);
                        if alpha != 0.0 {
                            let bi = self.basis[i];
                            self.x[bi] -= alpha * step;
                        }
                    }
                    self.x[q] += step;
                }
                self.x[b] = 0.0;
                self.pivot(r, q);
            }
        }
        let c = self.cost.clone();
        self.price(&c);
    }

    /// Tighten the bounds of column `j`. Nonbasic columns are moved onto the
    /// new bound and the basic values updated; the basis stays dual feasible
    /// only when `j` is basic or keeps its bound side.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lb[j] = lower;
        self.ub[j] = upper;
        if self.row_of[j] != usize::MAX {
            return;
        }
        let old = self.x[j];
        let new = if old < lower {
            lower
        } else if old > upper {
            upper
        } else if self.d[j] > 0.0 && lower.is_finite() {
            lower
        } else if self.d[j] < 0.0 && upper.is_finite() {
            upper
        } else {
            old
        };
        let step = new - old;
        if step != 0.0 {
            for i in 0..self.m {
                let alpha = self.at(i, j);
                if alpha != 0.0 {
                    let bi = self.basis[i];
                    self.x[bi] -= alpha * step;
                }
            }
            self.x[j] = new;
        }
    }

    /// True when every nonbasic reduced cost has the sign its bound allows.
    #[cfg(test)]
    pub fn is_dual_feasible(&self) -> bool {
        (0..self.ncols).all(|j| {
            if self.row_of[j] != usize::MAX || self.is_fixed(j) {
                return true;
            }
            let tol = 1e-7 * (1.0 + self.cost[j].abs());
            let dj = self.d[j];
            let free = self.lb[j] == f64::NEG_INFINITY && self.ub[j] == f64::INFINITY;
            if free {
                dj.abs() <= tol
            } else if self.at_lower(j) {
                dj >= -tol
            } else if self.at_upper(j) {
                dj <= tol
            } else {
                dj.abs() <= tol
            }
        })
    }

    pub fn structural(&self) -> &[f64] {
        &self.x[..self.n_struct]
    }

    pub fn objective(&self) -> f64 {
        (0..self.n_struct).map(|j| self.cost[j] * self.x[j]).sum()
    }

    /// Row duals read off the slack reduced costs.
    pub fn row_duals(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.d[self.n_struct + i]).collect()
    }

    /// Lagrangian lower bound `Σ_j min_{l≤z≤u} (c − Aᵀy)_j z_j` from the
    /// current row duals; valid for any `y`.
    pub fn dual_bound(&self, lp: &DenseLp) -> f64 {
        let (m, n) = (lp.m, lp.n);
        let y = self.row_duals();
        let mut bound = 0.0;
        let mut term = |dj: f64, lo: f64, hi: f64, scale: f64| -> bool {
            let tol = 1e-9 * (1.0 + scale);
            if dj > tol {
                if lo == f64::NEG_INFINITY {
                    return false;
                }
                bound += dj * lo;
            } else if dj < -tol {
                if hi == f64::INFINITY {
                    return false;
                }
                bound += dj * hi;
            } else if lo.is_finite() && hi.is_finite() {
                bound += dj.min(0.0) * hi + dj.max(0.0) * lo;
            }
            true
        };
        for j in 0..n {
            let mut dj = lp.cost[j];
            for (i, yi) in y.iter().enumerate() {
                dj -= yi * lp.a[i * n + j];
            }
            if !term(dj, self.lb[j], self.ub[j], lp.cost[j].abs()) {
                return f64::NEG_INFINITY;
            }
        }
        for (i, &yi) in y.iter().enumerate().take(m) {
            if !term(yi, lp.row_lower[i], lp.row_upper[i], 0.0) {
                return f64::NEG_INFINITY;
            }
        }
        bound
    }

    /// Max violation of `A x = s` and of column bounds, using original data.
    pub fn residual(&self, lp: &DenseLp) -> f64 {
        let (m, n) = (lp.m, lp.n);
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let act: f64 = (0..n).map(|j| lp.a[i * n + j] * self.x[j]).sum();
            let rel = (act - self.x[n + i]).abs() / (1.0 + act.abs());
            worst = worst.max(rel);
        }
        for j in 0..n + m {
            worst = worst.max((self.lb[j] - self.x[j]) / (1.0 + self.lb[j].abs()));
            worst = worst.max((self.x[j] - self.ub[j]) / (1.0 + self.ub[j].abs()));
        }
        worst
    }

    pub fn approx_bytes(&self) -> usize {
        self.t.len() * 8 + self.ncols * 48
    }
}
