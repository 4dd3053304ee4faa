//! l∞-norm receding-horizon control posed as a linear program, with a robust
//! counterpart that tightens every constraint by the worst-case effect of a
//! bounded additive disturbance.
//!
//! Variable layout for horizon `T` (all sign-free in the LP):
//!
//! | block        | count | meaning                                   |
//! |--------------|-------|-------------------------------------------|
//! | `x_1..x_T`   | 3T    | predicted `[d, v_l, v_e]`                 |
//! | `u_0..`      | T     | input (or `v_k` when pre-stabilized)      |
//! | `s+_k, s-_k` | 2T    | comfort slack `s_k = s+_k - s-_k`         |
//! | `ex_1..ex_T` | T     | state-cost epigraph (`ex_T` is terminal)  |
//! | `eu_0..`     | T     | input-cost epigraph                       |
//!
//! `x_0` is the measurement, so `||Q x_0||` enters as an objective constant.
//! Block `j` constrains the pair `(x_{j+1}, u_j)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, RowVector2, RowVector3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinematics::{build_system, PlatoonSystem, RelativeState};
use crate::lp::{self, LpProblem, LpStatus};
use crate::safety::{constraint_block, BrakingSpec, ComfortSpec, ConstraintBlock, BLOCK_ROWS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// State weights, one row per penalized combination of `[d, v_l, v_e]`.
    pub q: DMatrix<f64>,
    /// Input weights (`rows x 1`).
    pub r: DMatrix<f64>,
    /// Terminal weights; defaults to `q`.
    pub terminal: DMatrix<f64>,
    pub slack_weight: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        let q = DMatrix::from_row_slice(2, 3, &[100.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        Self {
            terminal: q.clone(),
            q,
            r: DMatrix::from_element(1, 1, 1.0),
            slack_weight: 1000.0,
        }
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let full_row_rank = |m: &DMatrix<f64>, cols: usize, name: &str| {
            if m.ncols() != cols || m.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!("{name} must have {cols} columns")));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("{name} has non-finite entries")));
            }
            if m.rank(1e-12) < m.nrows() {
                return Err(invalid(format!("{name} must have full row rank")));
            }
            Ok(())
        };
        full_row_rank(&self.q, 3, "Q")?;
        full_row_rank(&self.r, 1, "R")?;
        full_row_rank(&self.terminal, 3, "P")?;
        if !(self.slack_weight > 0.0 && self.slack_weight.is_finite()) {
            return Err(invalid("slack weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub steps: usize,
    pub sample_time: f64,
}

impl HorizonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("horizon must be at least one step"));
        }
        if !(self.sample_time > 0.0) {
            return Err(invalid("sample time must be positive"));
        }
        Ok(())
    }
}

/// Column indices of the decision variables for a given horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub steps: usize,
}

impl VarLayout {
    /// State component `c` of `x_k`, `k` in `1..=T`.
    pub fn x(&self, k: usize, c: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.steps && c < 3);
        3 * (k - 1) + c
    }
    pub fn u(&self, k: usize) -> usize {
        3 * self.steps + k
    }
    pub fn slack_pos(&self, k: usize) -> usize {
        4 * self.steps + k
    }
    pub fn slack_neg(&self, k: usize) -> usize {
        5 * self.steps + k
    }
    /// Epigraph of `||Q x_k||`, `k` in `1..=T`.
    pub fn eps_x(&self, k: usize) -> usize {
        6 * self.steps + k - 1
    }
    pub fn eps_u(&self, k: usize) -> usize {
        7 * self.steps + k
    }
    pub fn num_vars(&self) -> usize {
        8 * self.steps
    }
}

/// Row counts of an assembled MPC LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub variables: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub block_rows: usize,
    pub slack_sign_rows: usize,
    pub state_epigraph_rows: usize,
    pub terminal_epigraph_rows: usize,
    pub input_epigraph_rows: usize,
}

/// Nominal or robust MPC LP plus the tightening applied to each row family.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustLpProblem {
    pub base: LpProblem,
    pub layout: VarLayout,
    pub census: Census,
    /// Per block `j` (state `x_{j+1}`), one entry per block row.
    pub phi_a: Vec<[f64; BLOCK_ROWS]>,
    /// Per `k` in `1..T`, one entry per row of `Q`.
    pub phi_q: Vec<Vec<f64>>,
    /// Terminal tightening, one entry per row of `P`.
    pub phi_p: Vec<f64>,
    /// Per `k` in `0..T`, one entry per row of `R` (nonzero only when pre-stabilized).
    pub phi_r: Vec<Vec<f64>>,
    pub prestabilizer: RowVector3<f64>,
}

/// `|M| 1`: the maximum of each row of `M w` over `||w||_inf <= 1`.
pub fn holder_bound(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()))
}

/// `W_i = F_cl^(i-1) W` for `i = 1..=steps`.
pub fn disturbance_chain(f_cl: &Matrix3<f64>, w: &Vector3<f64>, steps: usize) -> Vec<Vector3<f64>> {
    let mut chain = Vec::with_capacity(steps);
    let mut current = *w;
    for _ in 0..steps {
        chain.push(current);
        current = f_cl * current;
    }
    chain
}

/// Deadbeat gain for the controllable `(d, v_e)` subsystem via Ackermann's
/// formula with both closed-loop poles at the origin. The `v_l` column is
/// zero: lead speed cannot be influenced by the ego input.
pub fn synth_nilpotent(sys: &PlatoonSystem) -> Result<RowVector3<f64>> {
    let ts = sys.sample_time;
    if !(ts > 0.0) {
        return Err(invalid("sample time must be positive"));
    }
    let a = Matrix2::new(sys.f[(0, 0)], sys.f[(0, 2)], sys.f[(2, 0)], sys.f[(2, 2)]);
    let b = Vector2::new(sys.g[0], sys.g[2]);
    let ctrb = Matrix2::from_columns(&[b, a * b]);
    let inv = ctrb
        .try_inverse()
        .ok_or_else(|| invalid("(d, v_e) subsystem is not controllable"))?;
    let k: RowVector2<f64> = RowVector2::new(0.0, 1.0) * inv * a * a;
    Ok(RowVector3::new(k[0], 0.0, k[1]))
}

/// Affine row `sum states + sum vars + constant <= 0` before lowering.
struct AffineRow {
    name: String,
    /// `(k, coefficients on x_k)`; `k = 0` is the measurement.
    states: Vec<(usize, RowVector3<f64>)>,
    /// `(step, coefficient)` on the physical input `u_step`.
    inputs: Vec<(usize, f64)>,
    vars: Vec<(usize, f64)>,
    constant: f64,
}

impl AffineRow {
    fn new(name: String) -> Self {
        Self {
            name,
            states: Vec::new(),
            inputs: Vec::new(),
            vars: Vec::new(),
            constant: 0.0,
        }
    }
}

struct Assembler<'a> {
    layout: VarLayout,
    x0: Vector3<f64>,
    /// `Some` when inputs are parametrized as `u = -K0 x + v`.
    k0: Option<RowVector3<f64>>,
    /// Disturbance chain of the (closed-loop) prediction model, when tightening.
    chain: Option<&'a [Vector3<f64>]>,
    lhs: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    names: Vec<String>,
}

impl Assembler<'_> {
    /// Lower a row and return the tightening that was applied.
    fn push(&mut self, mut row: AffineRow) -> f64 {
        if let Some(k0) = self.k0 {
            for &(k, coef) in &row.inputs {
                row.states.push((k, -coef * k0));
            }
        }
        let mut coefs: Vec<(usize, f64)> = Vec::new();
        let mut constant = row.constant;
        for &(k, a) in &row.states {
            if k == 0 {
                constant += (a * self.x0)[0];
            } else {
                for c in 0..3 {
                    if a[c] != 0.0 {
                        coefs.push((self.layout.x(k, c), a[c]));
                    }
                }
            }
        }
        for &(k, coef) in &row.inputs {
            coefs.push((self.layout.u(k), coef));
        }
        coefs.extend_from_slice(&row.vars);

        let phi = match self.chain {
            Some(chain) => tightening(&row.states, chain),
            None => 0.0,
        };
        let mut rhs = -constant;
        if self.chain.is_some() {
            rhs -= phi;
        }
        self.lhs.push(coefs);
        self.rhs.push(rhs);
        self.names.push(row.name);
        phi
    }
}

/// Worst case over `||w_m||_inf <= 1` of the disturbance reaching a row whose
/// state part is `sum_k a_k x_k`, with `x_k = xbar_k + sum_{m<k} W_{k-m} w_m`.
fn tightening(states: &[(usize, RowVector3<f64>)], chain: &[Vector3<f64>]) -> f64 {
    let horizon = states.iter().map(|&(k, _)| k).max().unwrap_or(0);
    let mut total = 0.0;
    for m in 0..horizon {
        let mut coef = 0.0;
        for &(k, a) in states {
            if k > m {
                coef += (a * chain[k - m - 1])[0];
            }
        }
        total += coef.abs();
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    x0: &RelativeState,
    sys: &PlatoonSystem,
    cost: &CostSpec,
    horizon: &HorizonSpec,
    blocks: &[ConstraintBlock],
    k0: Option<RowVector3<f64>>,
    tighten: bool,
) -> Result<RobustLpProblem> {
    cost.validate()?;
    horizon.validate()?;
    let t = horizon.steps;
    if blocks.len() != t {
        return Err(Error::DimensionMismatch(format!("{} constraint blocks for horizon {t}", blocks.len())));
    }
    if !x0.is_finite() {
        return Err(invalid("initial state must be finite"));
    }
    let layout = VarLayout { steps: t };
    let n = layout.num_vars();
    let k0 = k0.filter(|k| k.iter().any(|v| *v != 0.0));
    let f_cl = match k0 {
        Some(k) => sys.f - sys.g * k,
        None => sys.f,
    };
    let chain = tighten.then(|| disturbance_chain(&f_cl, &sys.w, t));
    let x0v = x0.to_vector();

    let mut asm = Assembler {
        layout,
        x0: x0v,
        k0,
        chain: chain.as_deref(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        names: Vec::new(),
    };

    let mut phi_a = Vec::with_capacity(t);
    for (j, blk) in blocks.iter().enumerate() {
        let mut phis = [0.0; BLOCK_ROWS];
        for r in 0..BLOCK_ROWS {
            let mut row = AffineRow::new(format!("blk{j}.{}", blk.labels[r].name()));
            let a = RowVector3::new(blk.a[(r, 0)], blk.a[(r, 1)], blk.a[(r, 2)]);
            if a.iter().any(|v| *v != 0.0) {
                row.states.push((j + 1, a));
            }
            if blk.b[r] != 0.0 {
                row.inputs.push((j, blk.b[r]));
            }
            let s = blk.a[(r, 3)];
            if s != 0.0 {
                row.vars.push((layout.slack_pos(j), s));
                row.vars.push((layout.slack_neg(j), -s));
            }
            row.constant = blk.c[r];
            phis[r] = asm.push(row);
        }
        phi_a.push(phis);
    }
    let block_rows = asm.rhs.len();

    for j in 0..t {
        for (col, tag) in [(layout.slack_pos(j), "+"), (layout.slack_neg(j), "-")] {
            let mut row = AffineRow::new(format!("slack{tag}{j}"));
            row.vars.push((col, -1.0));
            asm.push(row);
        }
    }
    let slack_sign_rows = asm.rhs.len() - block_rows;

    let epigraph = |asm: &mut Assembler, weights: &DMatrix<f64>, k: usize, tag: &str| -> Vec<f64> {
        let mut phis = Vec::with_capacity(weights.nrows());
        for i in 0..weights.nrows() {
            let qi = RowVector3::new(weights[(i, 0)], weights[(i, 1)], weights[(i, 2)]);
            let mut phi = 0.0;
            for (sign, label) in [(1.0, "+"), (-1.0, "-")] {
                let mut row = AffineRow::new(format!("{tag}{k}.{i}{label}"));
                row.states.push((k, sign * qi));
                row.vars.push((layout.eps_x(k), -1.0));
                phi = asm.push(row);
            }
            phis.push(phi);
        }
        phis
    };
    let mut phi_q = Vec::with_capacity(t.saturating_sub(1));
    for k in 1..t {
        phi_q.push(epigraph(&mut asm, &cost.q, k, "epi_x"));
    }
    let state_epigraph_rows = asm.rhs.len() - block_rows - slack_sign_rows;
    let phi_p = epigraph(&mut asm, &cost.terminal, t, "epi_p");
    let terminal_epigraph_rows = asm.rhs.len() - block_rows - slack_sign_rows - state_epigraph_rows;

    let mut phi_r = Vec::with_capacity(t);
    for k in 0..t {
        let mut phis = Vec::with_capacity(cost.r.nrows());
        for i in 0..cost.r.nrows() {
            let ri = cost.r[(i, 0)];
            let mut phi = 0.0;
            for (sign, label) in [(1.0, "+"), (-1.0, "-")] {
                let mut row = AffineRow::new(format!("epi_u{k}.{i}{label}"));
                row.inputs.push((k, sign * ri));
                row.vars.push((layout.eps_u(k), -1.0));
                phi = asm.push(row);
            }
            phis.push(phi);
        }
        phi_r.push(phis);
    }
    let input_epigraph_rows =
        asm.rhs.len() - block_rows - slack_sign_rows - state_epigraph_rows - terminal_epigraph_rows;

    // dynamics: x_{k+1} - F_cl x_k - G v_k = h
    let m_eq = 3 * t;
    let mut eq_lhs = DMatrix::zeros(m_eq, n);
    let mut eq_rhs = DVector::zeros(m_eq);
    let x1_const = f_cl * x0v + sys.h;
    for k in 0..t {
        for c in 0..3 {
            let r = 3 * k + c;
            eq_lhs[(r, layout.x(k + 1, c))] = 1.0;
            if k > 0 {
                for cc in 0..3 {
                    let v = f_cl[(c, cc)];
                    if v != 0.0 {
                        eq_lhs[(r, layout.x(k, cc))] = -v;
                    }
                }
            }
            if sys.g[c] != 0.0 {
                eq_lhs[(r, layout.u(k))] = -sys.g[c];
            }
            eq_rhs[r] = if k == 0 { x1_const[c] } else { sys.h[c] };
        }
    }

    let mut ineq_lhs = DMatrix::zeros(asm.rhs.len(), n);
    for (r, coefs) in asm.lhs.iter().enumerate() {
        for &(c, v) in coefs {
            ineq_lhs[(r, c)] += v;
        }
    }

    let mut objective = DVector::zeros(n);
    for k in 1..=t {
        objective[layout.eps_x(k)] = 1.0;
    }
    for k in 0..t {
        objective[layout.eps_u(k)] = 1.0;
        objective[layout.slack_pos(k)] = cost.slack_weight;
        objective[layout.slack_neg(k)] = cost.slack_weight;
    }
    let objective_constant = (&cost.q * DVector::from_column_slice(x0v.as_slice())).amax();

    let mut var_names = Vec::with_capacity(n);
    for k in 1..=t {
        for c in ["d", "v_l", "v_e"] {
            var_names.push(format!("x{k}.{c}"));
        }
    }
    let input = if k0.is_some() { "v" } else { "u" };
    var_names.extend((0..t).map(|k| format!("{input}{k}")));
    var_names.extend((0..t).map(|k| format!("s+{k}")));
    var_names.extend((0..t).map(|k| format!("s-{k}")));
    var_names.extend((1..=t).map(|k| format!("ex{k}")));
    var_names.extend((0..t).map(|k| format!("eu{k}")));

    let inequalities = asm.rhs.len();
    let base = LpProblem {
        objective,
        objective_constant,
        eq_lhs,
        eq_rhs,
        ineq_lhs,
        ineq_rhs: DVector::from_vec(asm.rhs),
        var_names,
        ineq_names: asm.names,
    };
    Ok(RobustLpProblem {
        base,
        layout,
        census: Census {
            variables: n,
            equalities: m_eq,
            inequalities,
            block_rows,
            slack_sign_rows,
            state_epigraph_rows,
            terminal_epigraph_rows,
            input_epigraph_rows,
        },
        phi_a,
        phi_q,
        phi_p,
        phi_r,
        prestabilizer: k0.unwrap_or_else(RowVector3::zeros),
    })
}

/// Certainty-equivalent l∞ MPC LP (disturbance ignored).
pub fn build_nominal(
    x0: &RelativeState,
    sys: &PlatoonSystem,
    cost: &CostSpec,
    horizon: &HorizonSpec,
    blocks: &[ConstraintBlock],
) -> Result<RobustLpProblem> {
    assemble(x0, sys, cost, horizon, blocks, None, false)
}

/// Robust counterpart: every row is tightened by the worst-case disturbance
/// propagated through `F - G K0`. A zero `k0` gives the open-loop robust LP.
pub fn build_robust(
    x0: &RelativeState,
    sys: &PlatoonSystem,
    cost: &CostSpec,
    horizon: &HorizonSpec,
    blocks: &[ConstraintBlock],
    k0: &RowVector3<f64>,
) -> Result<RobustLpProblem> {
    assemble(x0, sys, cost, horizon, blocks, Some(*k0), true)
}

impl RobustLpProblem {
    /// Predicted states `x_0..x_T` from an LP point.
    pub fn trajectory(&self, x0: &RelativeState, z: &DVector<f64>) -> Vec<RelativeState> {
        let l = self.layout;
        std::iter::once(*x0)
            .chain((1..=l.steps).map(|k| RelativeState::new(z[l.x(k, 0)], z[l.x(k, 1)], z[l.x(k, 2)])))
            .collect()
    }

    /// Physical input `u_k` from an LP point (undoes the pre-stabilizer).
    pub fn input(&self, x0: &RelativeState, z: &DVector<f64>, k: usize) -> f64 {
        let l = self.layout;
        let v = z[l.u(k)];
        let xk = if k == 0 {
            x0.to_vector()
        } else {
            Vector3::new(z[l.x(k, 0)], z[l.x(k, 1)], z[l.x(k, 2)])
        };
        v - (self.prestabilizer * xk)[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Nominal,
    Robust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub mode: ControlMode,
    pub cost: CostSpec,
    pub horizon: HorizonSpec,
    pub braking: BrakingSpec,
    pub comfort: ComfortSpec,
    /// Additive disturbance direction `W` (per step, `|w| <= 1`).
    pub disturbance: Vector3<f64>,
    /// Robust mode only: parametrize inputs around a deadbeat pre-stabilizer.
    pub prestabilize: bool,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    /// Acceleration command.
    pub u: f64,
    /// `x_0..x_T` of the optimal plan; only `x_0` on fallback.
    pub predicted: Vec<RelativeState>,
    pub objective: f64,
    pub status: LpStatus,
    /// The solve failed and maximum braking was commanded instead.
    pub fallback: bool,
    pub iterations: usize,
    /// One flag per LP inequality row (see [`Controller::row_names`]).
    pub active: Vec<bool>,
}

/// Receding-horizon controller. One `control_step` at a time per instance.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    k0: RowVector3<f64>,
    row_names: Arc<Vec<String>>,
    solves: usize,
    infeasible: usize,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.cost.validate()?;
        config.horizon.validate()?;
        config.braking.validate()?;
        config.comfort.validate()?;
        let sys = build_system(config.horizon.sample_time, 0.0, config.disturbance)?;
        let k0 = if config.mode == ControlMode::Robust && config.prestabilize {
            synth_nilpotent(&sys)?
        } else {
            RowVector3::zeros()
        };
        Ok(Self {
            config,
            k0,
            row_names: Arc::new(Vec::new()),
            solves: 0,
            infeasible: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn prestabilizer(&self) -> RowVector3<f64> {
        self.k0
    }

    pub fn row_names(&self) -> Arc<Vec<String>> {
        Arc::clone(&self.row_names)
    }

    pub fn solves(&self) -> usize {
        self.solves
    }

    pub fn infeasible_solves(&self) -> usize {
        self.infeasible
    }

    /// The LP the controller would solve at state `x` with lead acceleration `a_l`.
    pub fn problem(&self, x: &RelativeState, lead_acceleration: f64) -> Result<RobustLpProblem> {
        let cfg = &self.config;
        let sys = build_system(cfg.horizon.sample_time, lead_acceleration, cfg.disturbance)?;
        let blocks = (1..=cfg.horizon.steps)
            .map(|k| constraint_block(x, k, &cfg.braking, &cfg.comfort, &sys))
            .collect::<Result<Vec<_>>>()?;
        match cfg.mode {
            ControlMode::Nominal => build_nominal(x, &sys, &cfg.cost, &cfg.horizon, &blocks),
            ControlMode::Robust => build_robust(x, &sys, &cfg.cost, &cfg.horizon, &blocks, &self.k0),
        }
    }

    pub fn control_step(&mut self, x: &RelativeState, lead_acceleration: f64) -> Result<ControlDecision> {
        let problem = self.problem(x, lead_acceleration)?;
        if self.row_names.len() != problem.base.num_ineq() {
            self.row_names = Arc::new(problem.base.ineq_names.clone());
        }
        let sol = lp::solve(&problem.base, self.config.max_iters)?;
        self.solves += 1;
        if sol.status != LpStatus::Optimal {
            self.infeasible += 1;
            log::debug!("MPC solve returned {:?}; commanding maximum braking", sol.status);
            return Ok(ControlDecision {
                u: -self.config.braking.ego_braking,
                predicted: vec![*x],
                objective: sol.objective_value,
                status: sol.status,
                fallback: true,
                iterations: sol.iterations,
                active: vec![false; problem.base.num_ineq()],
            });
        }
        let residual = &problem.base.ineq_lhs * &sol.z - &problem.base.ineq_rhs;
        let active = residual
            .iter()
            .zip(problem.base.ineq_rhs.iter())
            .map(|(r, b)| r.abs() <= 1e-7 * (1.0 + b.abs()))
            .collect();
        Ok(ControlDecision {
            u: problem.input(x, &sol.z, 0),
            predicted: problem.trajectory(x, &sol.z),
            objective: sol.objective_value,
            status: sol.status,
            fallback: false,
            iterations: sol.iterations,
            active,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn table_sys(a_l: f64, w: Vector3<f64>) -> PlatoonSystem {
        build_system(0.05, a_l, w).unwrap()
    }

    #[test]
    fn holder_bound_examples() {
        assert_eq!(holder_bound(&dmatrix![1.0, -2.0; 3.0, 4.0]).as_slice(), &[3.0, 7.0]);
        assert_eq!(holder_bound(&DMatrix::zeros(2, 3)).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn chain_examples() {
        let w = Vector3::new(0.0, 1.2, 0.0);
        assert!(disturbance_chain(&Matrix3::identity(), &w, 5).iter().all(|wi| *wi == w));
        let open = disturbance_chain(&table_sys(0.0, w).f, &w, 3);
        assert!((open[1] - Vector3::new(0.06, 1.2, 0.0)).norm() < 1e-15);
        let nil = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let chain = disturbance_chain(&nil, &Vector3::new(1.0, 1.0, 1.0), 6);
        assert!(chain[3..].iter().all(|wi| *wi == Vector3::zeros()));
    }

    #[test]
    fn deadbeat_gain_closed_form() {
        // poles at the origin for the discretized double integrator: k = [-1/T^2, 0, 1.5/T]
        let k = synth_nilpotent(&table_sys(0.0, Vector3::zeros())).unwrap();
        assert!((k[0] + 400.0).abs() < 1e-9, "{k}");
        assert_eq!(k[1], 0.0);
        assert!((k[2] - 30.0).abs() < 1e-9, "{k}");
    }

    #[test]
    fn layout_is_dense_and_disjoint() {
        let l = VarLayout { steps: 4 };
        let mut seen = vec![false; l.num_vars()];
        let mut mark = |i: usize| {
            assert!(!seen[i]);
            seen[i] = true;
        };
        for k in 1..=4 {
            (0..3).for_each(|c| mark(l.x(k, c)));
            mark(l.eps_x(k));
        }
        for k in 0..4 {
            mark(l.u(k));
            mark(l.slack_pos(k));
            mark(l.slack_neg(k));
            mark(l.eps_u(k));
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn rejects_wrong_block_count() {
        let sys = table_sys(0.0, Vector3::zeros());
        let hz = HorizonSpec {
            steps: 3,
            sample_time: 0.05,
        };
        let err = build_nominal(&RelativeState::default(), &sys, &CostSpec::default(), &hz, &[]);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn cost_rank_is_checked() {
        let cost = CostSpec {
            q: dmatrix![1.0, 0.0, 0.0; 2.0, 0.0, 0.0],
            ..CostSpec::default()
        };
        assert!(cost.validate().is_err());
        assert!(CostSpec::default().validate().is_ok());
    }
}
