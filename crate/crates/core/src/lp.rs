//! Dense linear programs with sign-free variables and a two-phase simplex
//! solver.
//!
//! Problems have the form
//!
//! ```text
//! minimize    c'z + c0
//! subject to  A_eq z  = b_eq
//!             A_in z <= b_in
//! ```
//!
//! with every `z_j` free. The solver first pivots each free variable into the
//! basis (equality rows first), which removes those rows from the iteration
//! and leaves a compact tableau whose variables are all inequality slacks.
//! The remaining problem is solved with a single-artificial phase 1 followed by
//! phase 2, using Dantzig pricing with a permanent switch to Bland's rule once
//! degenerate pivots pile up.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const OPTIMALITY_TOL: f64 = 1e-9;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: DVector<f64>,
    /// Constant added to the reported objective value.
    pub objective_constant: f64,
    pub eq_lhs: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_lhs: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Optional variable labels; empty or one per variable.
    pub var_names: Vec<String>,
    /// Optional inequality row labels; empty or one per row.
    pub ineq_names: Vec<String>,
}

impl LpProblem {
    /// Unconstrained problem with a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: DVector::zeros(num_vars),
            objective_constant: 0.0,
            eq_lhs: DMatrix::zeros(0, num_vars),
            eq_rhs: DVector::zeros(0),
            ineq_lhs: DMatrix::zeros(0, num_vars),
            ineq_rhs: DVector::zeros(0),
            var_names: Vec::new(),
            ineq_names: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let mismatch = |what: String| Err(Error::DimensionMismatch(what));
        if self.eq_lhs.ncols() != n || self.eq_lhs.nrows() != self.eq_rhs.len() {
            return mismatch(format!(
                "equality block is {}x{} with {} rhs entries for {n} variables",
                self.eq_lhs.nrows(),
                self.eq_lhs.ncols(),
                self.eq_rhs.len()
            ));
        }
        if self.ineq_lhs.ncols() != n || self.ineq_lhs.nrows() != self.ineq_rhs.len() {
            return mismatch(format!(
                "inequality block is {}x{} with {} rhs entries for {n} variables",
                self.ineq_lhs.nrows(),
                self.ineq_lhs.ncols(),
                self.ineq_rhs.len()
            ));
        }
        if !self.var_names.is_empty() && self.var_names.len() != n {
            return mismatch(format!("{} variable names for {n} variables", self.var_names.len()));
        }
        if !self.ineq_names.is_empty() && self.ineq_names.len() != self.num_ineq() {
            return mismatch(format!(
                "{} row names for {} inequality rows",
                self.ineq_names.len(),
                self.num_ineq()
            ));
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.objective_constant.is_finite()
            && self.eq_lhs.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.ineq_lhs.iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("problem data contains non-finite entries".into()));
        }
        Ok(())
    }

    /// `max(||b_eq||_inf, ||b_in||_inf)`, the scale of the feasibility tolerance.
    pub fn rhs_scale(&self) -> f64 {
        self.eq_rhs.amax().max(self.ineq_rhs.amax())
    }

    pub fn evaluate(&self, z: &DVector<f64>) -> f64 {
        self.objective.dot(z) + self.objective_constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub z: DVector<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

/// Constraint residuals of a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// `A_eq z - b_eq`.
    pub eq: DVector<f64>,
    /// `A_in z - b_in`; positive entries are violations.
    pub ineq: DVector<f64>,
}

impl Residuals {
    pub fn max_eq(&self) -> f64 {
        self.eq.amax()
    }

    /// Largest inequality violation, zero when all rows hold.
    pub fn max_ineq_violation(&self) -> f64 {
        self.ineq.iter().copied().fold(0.0, f64::max)
    }

    /// Whether the point satisfies all rows within `1e-8 (1 + ||rhs||_inf)`.
    pub fn within_tolerance(&self, problem: &LpProblem) -> bool {
        let tol = 1e-8 * (1.0 + problem.rhs_scale());
        self.max_eq() <= tol && self.max_ineq_violation() <= tol
    }
}

pub fn check_solution(problem: &LpProblem, z: &DVector<f64>) -> Result<Residuals> {
    if z.len() != problem.num_vars() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, problem has {} variables",
            z.len(),
            problem.num_vars()
        )));
    }
    Ok(Residuals {
        eq: &problem.eq_lhs * z - &problem.eq_rhs,
        ineq: &problem.ineq_lhs * z - &problem.ineq_rhs,
    })
}

/// Solve `problem` with at most `max_iters` pivots.
///
/// An `Optimal` point is verified against the original constraints; a point
/// that fails the residual check is reported as [`Error::Solver`].
pub fn solve(problem: &LpProblem, max_iters: usize) -> Result<LpSolution> {
    problem.validate()?;
    let mut solver = Simplex::new(problem, max_iters);
    let status = solver.run();
    let n = problem.num_vars();
    let z = match status {
        LpStatus::Optimal => solver.primal_point(),
        _ => DVector::zeros(n),
    };
    if status == LpStatus::Optimal {
        let residuals = check_solution(problem, &z)?;
        if !z.iter().all(|v| v.is_finite()) || !residuals.within_tolerance(problem) {
            return Err(Error::Solver(format!(
                "optimal point violates equalities by {:.3e} and inequalities by {:.3e}",
                residuals.max_eq(),
                residuals.max_ineq_violation()
            )));
        }
    }
    let objective_value = match status {
        LpStatus::Optimal => problem.evaluate(&z),
        LpStatus::Unbounded => f64::NEG_INFINITY,
        _ => f64::NAN,
    };
    Ok(LpSolution {
        status,
        z,
        objective_value,
        iterations: solver.iterations,
    })
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
struct Dense {
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `row[dst] -= factor * row[src]`, optionally skipping zero entries of `src`.
    fn axpy_rows(&mut self, dst: usize, src: usize, factor: f64) {
        let c = self.cols;
        let (a, b) = if dst < src {
            let (lo, hi) = self.data.split_at_mut(src * c);
            (&mut lo[dst * c..(dst + 1) * c], &hi[..c])
        } else {
            let (lo, hi) = self.data.split_at_mut(dst * c);
            (&mut hi[..c], &lo[src * c..(src + 1) * c])
        };
        for (x, y) in a.iter_mut().zip(b) {
            if *y != 0.0 {
                *x -= factor * y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowRole {
    /// Still an inequality of the reduced problem; its slack is basic.
    Active,
    /// Defines a free variable in terms of slacks.
    Defines(usize),
    /// Redundant equality.
    Dropped,
}

struct Simplex<'a> {
    problem: &'a LpProblem,
    max_iters: usize,
    iterations: usize,
    n: usize,
    me: usize,
    /// Full tableau over `[z | slacks | rhs]` used during free-variable elimination.
    full: Dense,
    /// Reduced costs over `[z | slacks | rhs]` (rhs holds minus the objective).
    cost: Vec<f64>,
    roles: Vec<RowRole>,
    /// Free variables absent from every constraint; fixed at zero.
    unused_vars: Vec<usize>,
    /// Compact tableau `x_B + T x_N = b` (last column is `b`).
    tab: Dense,
    /// Global index (`n + ineq_row`) of the basic variable per compact row.
    basic: Vec<usize>,
    /// Global index per compact column.
    nonbasic: Vec<usize>,
    /// Slack indices that were nonbasic after elimination (defining-row slacks).
    defining_slacks: Vec<usize>,
    /// Reduced-cost row of the compact tableau.
    obj: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(problem: &'a LpProblem, max_iters: usize) -> Self {
        let n = problem.num_vars();
        let me = problem.num_eq();
        let mi = problem.num_ineq();
        let cols = n + mi + 1;
        let mut full = Dense::zeros(me + mi, cols);
        for r in 0..me {
            let row = full.row_mut(r);
            for j in 0..n {
                row[j] = problem.eq_lhs[(r, j)];
            }
            row[cols - 1] = problem.eq_rhs[r];
        }
        for i in 0..mi {
            let row = full.row_mut(me + i);
            for j in 0..n {
                row[j] = problem.ineq_lhs[(i, j)];
            }
            row[n + i] = 1.0;
            row[cols - 1] = problem.ineq_rhs[i];
        }
        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(problem.objective.as_slice());
        Self {
            problem,
            max_iters,
            iterations: 0,
            n,
            me,
            full,
            cost,
            roles: vec![RowRole::Active; me + mi],
            unused_vars: Vec::new(),
            tab: Dense::zeros(0, 1),
            basic: Vec::new(),
            nonbasic: Vec::new(),
            defining_slacks: Vec::new(),
            obj: Vec::new(),
        }
    }

    fn run(&mut self) -> LpStatus {
        if let Err(status) = self.eliminate_free_variables() {
            return status;
        }
        self.build_compact();
        match self.phase_one() {
            Ok(()) => {}
            Err(status) => return status,
        }
        self.load_phase_two_costs();
        self.iterate(false)
    }

    fn pivot_full(&mut self, r: usize, j: usize) {
        let p = self.full.get(r, j);
        for v in self.full.row_mut(r) {
            *v /= p;
        }
        let rows = self.roles.len();
        for i in 0..rows {
            if i == r {
                continue;
            }
            let factor = self.full.get(i, j);
            if factor != 0.0 {
                self.full.axpy_rows(i, r, factor);
                self.full.row_mut(i)[j] = 0.0;
            }
        }
        let factor = self.cost[j];
        if factor != 0.0 {
            let row = self.full.row(r);
            for (c, v) in self.cost.iter_mut().zip(row) {
                if *v != 0.0 {
                    *c -= factor * v;
                }
            }
            self.cost[j] = 0.0;
        }
    }

    fn eliminate_free_variables(&mut self) -> std::result::Result<(), LpStatus> {
        let n = self.n;
        let rhs_col = self.full.cols - 1;
        let tol = FEASIBILITY_TOL * (1.0 + self.problem.rhs_scale());
        let mut is_basic = vec![false; n];

        for r in 0..self.me {
            let row = self.full.row(r);
            let best = (0..n)
                .filter(|&j| !is_basic[j])
                .map(|j| (j, row[j].abs()))
                .fold(None, |acc: Option<(usize, f64)>, (j, a)| match acc {
                    Some((_, b)) if b >= a => acc,
                    _ => Some((j, a)),
                });
            let scale = row[..n].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            match best {
                Some((j, a)) if a > PIVOT_TOL * scale.max(1.0) => {
                    self.pivot_full(r, j);
                    is_basic[j] = true;
                    self.roles[r] = RowRole::Defines(j);
                }
                _ => {
                    if self.full.get(r, rhs_col).abs() > tol {
                        return Err(LpStatus::Infeasible);
                    }
                    self.roles[r] = RowRole::Dropped;
                }
            }
        }

        for j in 0..n {
            if is_basic[j] {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for r in self.me..self.roles.len() {
                if self.roles[r] != RowRole::Active {
                    continue;
                }
                let a = self.full.get(r, j).abs();
                if a > PIVOT_TOL && best.map_or(true, |(_, b)| a > b) {
                    best = Some((r, a));
                }
            }
            match best {
                Some((r, _)) => {
                    self.pivot_full(r, j);
                    is_basic[j] = true;
                    self.roles[r] = RowRole::Defines(j);
                }
                None => {
                    if self.cost[j].abs() > OPTIMALITY_TOL {
                        return Err(LpStatus::Unbounded);
                    }
                    self.unused_vars.push(j);
                }
            }
        }
        Ok(())
    }

    fn build_compact(&mut self) {
        let n = self.n;
        let me = self.me;
        let rhs_col = self.full.cols - 1;
        self.defining_slacks = (me..self.roles.len())
            .filter(|&r| matches!(self.roles[r], RowRole::Defines(_)))
            .map(|r| n + (r - me))
            .collect();
        let active: Vec<usize> = (me..self.roles.len())
            .filter(|&r| self.roles[r] == RowRole::Active)
            .collect();
        let q = self.defining_slacks.len();
        let mut tab = Dense::zeros(active.len(), q + 1);
        for (i, &r) in active.iter().enumerate() {
            let src = self.full.row(r);
            let dst = tab.row_mut(i);
            for (k, &g) in self.defining_slacks.iter().enumerate() {
                dst[k] = src[g];
            }
            dst[q] = src[rhs_col];
        }
        self.tab = tab;
        self.basic = active.iter().map(|&r| n + (r - me)).collect();
        self.nonbasic = self.defining_slacks.clone();
    }

    /// Exchange pivot on the compact tableau; `obj` is updated alongside.
    fn pivot_compact(&mut self, r: usize, k: usize, obj: &mut [f64]) {
        let cols = self.tab.cols;
        let p = self.tab.get(r, k);
        {
            let row = self.tab.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                if c == k {
                    *v = 1.0 / p;
                } else {
                    *v /= p;
                }
            }
        }
        let pivot_row: Vec<f64> = self.tab.row(r).to_vec();
        let update = |row: &mut [f64]| {
            let t = row[k];
            if t == 0.0 {
                return;
            }
            for c in 0..cols {
                if c == k {
                    row[c] = -t * pivot_row[k];
                } else if pivot_row[c] != 0.0 {
                    row[c] -= t * pivot_row[c];
                }
            }
        };
        for i in 0..self.basic.len() {
            if i != r {
                update(self.tab.row_mut(i));
            }
        }
        update(obj);
        std::mem::swap(&mut self.basic[r], &mut self.nonbasic[k]);
    }

    /// Primal simplex on the compact tableau with reduced costs in `obj`
    /// (last entry is minus the objective value). Returns the terminal status.
    fn iterate_with(&mut self, obj: &mut Vec<f64>, phase_one: bool) -> LpStatus {
        let q = self.nonbasic.len();
        let degenerate_limit = 3 * self.n.max(1);
        let mut degenerate_run = 0_usize;
        let mut bland = false;
        loop {
            let entering = if bland {
                (0..q)
                    .filter(|&k| obj[k] < -OPTIMALITY_TOL)
                    .min_by_key(|&k| self.nonbasic[k])
            } else {
                (0..q)
                    .filter(|&k| obj[k] < -OPTIMALITY_TOL)
                    .min_by(|&a, &b| obj[a].total_cmp(&obj[b]).then(self.nonbasic[a].cmp(&self.nonbasic[b])))
            };
            let Some(k) = entering else {
                return LpStatus::Optimal;
            };
            if self.iterations >= self.max_iters {
                return LpStatus::IterationLimit;
            }

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.basic.len() {
                let a = self.tab.get(i, k);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.tab.get(i, q).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((best, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basic[i] < self.basic[best] {
                            Some((i, ratio))
                        } else {
                            Some((best, br))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                // phase one is bounded below by zero
                debug_assert!(!phase_one);
                return LpStatus::Unbounded;
            };
            if ratio <= FEASIBILITY_TOL {
                degenerate_run += 1;
                if degenerate_run > degenerate_limit && !bland {
                    log::debug!("switching to Bland's rule after {degenerate_run} degenerate pivots");
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot_compact(r, k, obj);
            self.iterations += 1;
        }
    }

    fn iterate(&mut self, phase_one: bool) -> LpStatus {
        let mut obj = std::mem::take(&mut self.obj);
        let status = self.iterate_with(&mut obj, phase_one);
        self.obj = obj;
        status
    }

    /// Drive the compact tableau to a feasible basis with one artificial
    /// variable entering every row at coefficient -1.
    fn phase_one(&mut self) -> std::result::Result<(), LpStatus> {
        let q = self.nonbasic.len();
        let m = self.basic.len();
        let tol = FEASIBILITY_TOL * (1.0 + self.problem.rhs_scale());
        let worst = (0..m).min_by(|&a, &b| self.tab.get(a, q).total_cmp(&self.tab.get(b, q)));
        let Some(worst) = worst.filter(|&r| self.tab.get(r, q) < -tol) else {
            return Ok(());
        };

        let artificial = self.n + self.problem.num_ineq();
        let mut tab = Dense::zeros(m, q + 2);
        for i in 0..m {
            let src = self.tab.row(i);
            let dst = tab.row_mut(i);
            dst[..q].copy_from_slice(&src[..q]);
            dst[q] = -1.0;
            dst[q + 1] = src[q];
        }
        self.tab = tab;
        self.nonbasic.push(artificial);
        self.obj = vec![0.0; q + 2];
        self.obj[q] = 1.0;

        let mut obj = std::mem::take(&mut self.obj);
        self.pivot_compact(worst, q, &mut obj);
        self.iterations += 1;
        self.obj = obj;
        match self.iterate(true) {
            LpStatus::Optimal => {}
            other => return Err(other),
        }
        let qa = self.nonbasic.len();
        if -self.obj[qa] > tol {
            return Err(LpStatus::Infeasible);
        }

        if let Some(r) = self.basic.iter().position(|&g| g == artificial) {
            let k = (0..qa)
                .filter(|&k| self.nonbasic[k] != artificial)
                .max_by(|&a, &b| self.tab.get(r, a).abs().total_cmp(&self.tab.get(r, b).abs()))
                .filter(|&k| self.tab.get(r, k).abs() > PIVOT_TOL);
            match k {
                Some(k) => {
                    let mut obj = std::mem::take(&mut self.obj);
                    self.pivot_compact(r, k, &mut obj);
                    self.obj = obj;
                }
                None => {
                    // redundant row: only the artificial is left in it
                    self.remove_row(r);
                }
            }
        }
        let k_art = self
            .nonbasic
            .iter()
            .position(|&g| g == artificial)
            .expect("artificial is nonbasic after phase one");
        self.remove_column(k_art);
        Ok(())
    }

    fn remove_row(&mut self, r: usize) {
        let cols = self.tab.cols;
        self.tab.data.drain(r * cols..(r + 1) * cols);
        self.basic.remove(r);
    }

    fn remove_column(&mut self, k: usize) {
        let cols = self.tab.cols;
        let rows = self.basic.len();
        let mut data = Vec::with_capacity(rows * (cols - 1));
        for i in 0..rows {
            let row = self.tab.row(i);
            data.extend_from_slice(&row[..k]);
            data.extend_from_slice(&row[k + 1..]);
        }
        self.tab = Dense { cols: cols - 1, data };
        self.nonbasic.remove(k);
    }

    /// Express the (post-elimination) objective in the current basis.
    fn load_phase_two_costs(&mut self) {
        let q = self.nonbasic.len();
        let rhs_col = self.cost.len() - 1;
        let mut obj = vec![0.0; q + 1];
        for k in 0..q {
            obj[k] = self.cost[self.nonbasic[k]];
        }
        obj[q] = self.cost[rhs_col];
        for (i, &g) in self.basic.iter().enumerate() {
            let cb = self.cost[g];
            if cb == 0.0 {
                continue;
            }
            let row = self.tab.row(i);
            for k in 0..=q {
                obj[k] -= cb * row[k];
            }
        }
        self.obj = obj;
    }

    /// Recover `z` from the terminal basis, then re-solve the basis system
    /// directly to shed pivoting round-off.
    fn primal_point(&self) -> DVector<f64> {
        let n = self.n;
        let q = self.nonbasic.len();
        let rhs_col = self.full.cols - 1;
        let mut slack = vec![0.0; self.problem.num_ineq()];
        for (i, &g) in self.basic.iter().enumerate() {
            slack[g - n] = self.tab.get(i, q);
        }
        let mut z = DVector::zeros(n);
        for (r, role) in self.roles.iter().enumerate() {
            if let RowRole::Defines(j) = *role {
                let row = self.full.row(r);
                z[j] = row[rhs_col]
                    - self
                        .defining_slacks
                        .iter()
                        .map(|&g| row[g] * slack[g - n])
                        .sum::<f64>();
            }
        }

        match self.polish() {
            Some(polished) => {
                let before = check_solution(self.problem, &z).map(|r| r.max_eq().max(r.max_ineq_violation()));
                let after = check_solution(self.problem, &polished).map(|r| r.max_eq().max(r.max_ineq_violation()));
                match (before, after) {
                    (Ok(b), Ok(a)) if a <= b || a <= 1e-10 * (1.0 + self.problem.rhs_scale()) => polished,
                    _ => z,
                }
            }
            None => z,
        }
    }

    /// Solve `B z = b` where `B` stacks the used equality rows, the
    /// inequality rows whose slack is nonbasic, and unit rows for unused
    /// variables.
    fn polish(&self) -> Option<DVector<f64>> {
        let n = self.n;
        let p = self.problem;
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n);
        for r in 0..self.me {
            if matches!(self.roles[r], RowRole::Defines(_)) {
                rows.push((p.eq_lhs.row(r).transpose(), p.eq_rhs[r]));
            }
        }
        for &g in &self.nonbasic {
            let i = g - n;
            rows.push((p.ineq_lhs.row(i).transpose(), p.ineq_rhs[i]));
        }
        for &j in &self.unused_vars {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            rows.push((e, 0.0));
        }
        if rows.len() != n || n == 0 {
            return None;
        }
        let mut m = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (i, (row, rhs)) in rows.into_iter().enumerate() {
            m.set_row(i, &row.transpose());
            b[i] = rhs;
        }
        let z = m.lu().solve(&b)?;
        z.iter().all(|v| v.is_finite()).then_some(z)
    }
}
