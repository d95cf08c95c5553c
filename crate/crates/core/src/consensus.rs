//! Consensus ADMM: per-view primal steps, dual ascent and an update of the
//! shared augmented variable, repeated until every view agrees with `q` in
//! total variation.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objectives::{ConsensusObjective, ConsensusVars};
use crate::prob::{floor_in_place, mutual_information_raw, tv_distance, Channel, JointModel};
use crate::simplex::{
    gradient_mapping_norm, minimize, InnerOptions, InnerOutcome, SimplexLayout, SmoothObjective,
};

/// Order of the dual and augmented-variable updates within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    /// Duals use `q^k`, then `q` is updated with the new duals.
    #[default]
    PrimalDualAug,
    /// `q` is updated with the old duals, then duals use `q^{k+1}`.
    PrimalAugDual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub c: f64,
    pub max_outer: usize,
    /// Stop once every view's total-variation residual is below this.
    pub tol_out: f64,
    pub inner_max_steps: usize,
    pub tol_in: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub update_order: UpdateOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 64.0,
            max_outer: 5000,
            tol_out: 1e-6,
            inner_max_steps: 500,
            tol_in: 1e-9,
            epsilon: crate::prob::DEFAULT_EPSILON,
            seed: 0,
            update_order: UpdateOrder::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(invalid(format!("penalty must be positive, got {}", self.c)));
        }
        if self.max_outer == 0 || self.inner_max_steps == 0 {
            return Err(invalid("iteration limits must be at least 1"));
        }
        if !(self.tol_in > 0.0) || !(self.tol_in < self.tol_out) {
            return Err(invalid(format!(
                "need 0 < inner tolerance < outer tolerance, got {} and {}",
                self.tol_in, self.tol_out
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.1) {
            return Err(invalid(format!(
                "floor must lie in (0, 0.1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn inner(&self) -> InnerOptions {
        InnerOptions {
            max_steps: self.inner_max_steps,
            tol: self.tol_in,
            ..InnerOptions::default()
        }
    }
}

/// One outer iteration's record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// `L_c` at the end of the iteration.
    pub lagrangian: f64,
    pub tv: Vec<f64>,
    pub dp: Vec<f64>,
    pub dq: f64,
    pub dnu: Vec<f64>,
    /// Projected residual `‖p_i − P(p_i − ∇F_i − A_iᵀν_i)‖` after the dual
    /// update.
    pub dual_link: Vec<f64>,
    pub inner_steps: usize,
    /// Some inner solve hit its step limit or stalled.
    pub inner_incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trajectory {
    /// `L_c` at the initial point.
    pub initial_lagrangian: f64,
    pub records: Vec<IterationRecord>,
    /// `‖w^k − w^final‖` for `k = 0..=iterations`, where `w` stacks all
    /// primal, augmented and dual variables.
    pub distance_to_final: Vec<f64>,
    /// `‖w^k − ŵ‖` against the geometric extrapolation `ŵ` of the limit
    /// (see [`extrapolate_limit`]).
    pub distance_to_limit: Vec<f64>,
    /// Step ratio used for the extrapolation; `None` when the tail did not
    /// contract and `ŵ` is the final iterate.
    pub tail_ratio: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `L_c^0, L_c^1, …`.
    pub fn lagrangians(&self) -> Vec<f64> {
        std::iter::once(self.initial_lagrangian)
            .chain(self.records.iter().map(|r| r.lagrangian))
            .collect()
    }

    /// CSV with columns `iter, L_c, tv_view_*, dp_*, dq, dnu_*`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let v = self.records.first().map_or(0, |r| r.tv.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string(), "L_c".to_string()];
        header.extend((1..=v).map(|i| format!("tv_view_{i}")));
        header.extend((1..=v).map(|i| format!("dp_{i}")));
        header.push("dq".into());
        header.extend((1..=v).map(|i| format!("dnu_{i}")));
        w.write_record(&header)?;
        for (k, r) in self.records.iter().enumerate() {
            let mut row = vec![(k + 1).to_string(), format!("{:e}", r.lagrangian)];
            row.extend(r.tv.iter().map(|x| format!("{x:e}")));
            row.extend(r.dp.iter().map(|x| format!("{x:e}")));
            row.push(format!("{:e}", r.dq));
            row.extend(r.dnu.iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusResult {
    pub l: usize,
    pub vars: ConsensusVars,
    pub converged: bool,
    pub iterations: usize,
    pub trajectory: Trajectory,
    /// `I(Z_c; X^(i))` per view, from the view's own encoder.
    pub mi_zx: Vec<f64>,
    /// `I(Z_c; Y)` from the `p_{z|y}` block of `q`.
    pub mi_zy: f64,
    /// Final `Σ F_i + G` (no penalty or dual terms).
    pub objective: f64,
}

impl ConsensusResult {
    /// Encoder of view `i` as an `L × N_i` channel.
    pub fn encoder(&self, i: usize) -> Channel {
        let n = self.vars.p[i].len() / self.l;
        Channel::from_raw(self.l, n, self.vars.p[i].clone())
    }

    /// `p(z|y)` from `q` as an `L × K` channel.
    pub fn p_z_given_y(&self) -> Channel {
        let k = (self.vars.q.len() - self.l) / self.l;
        Channel::from_raw(self.l, k, self.vars.q[self.l..].to_vec())
    }

    pub fn max_tv(&self) -> f64 {
        self.trajectory
            .records
            .last()
            .map_or(f64::INFINITY, |r| r.tv.iter().copied().fold(0.0, f64::max))
    }
}

/// Random initial point: Dirichlet(1) encoder columns, `q = A_1 p_1`, zero
/// duals.
pub fn init_vars(objective: &ConsensusObjective, seed: u64, eps: f64) -> ConsensusVars {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = objective.l();
    let p: Vec<Vec<f64>> = objective
        .operators()
        .iter()
        .map(|a| {
            let n = a.n();
            let mut p = vec![0.0; l * n];
            let mut col = vec![0.0; l];
            for x in 0..n {
                for c in col.iter_mut() {
                    let e: f64 = Exp1.sample(&mut rng);
                    *c = e;
                }
                let s: f64 = col.iter().sum();
                col.iter_mut().for_each(|c| *c /= s);
                floor_in_place(&mut col, eps);
                for z in 0..l {
                    p[z * n + x] = col[z];
                }
            }
            p
        })
        .collect();
    let mut q = objective
        .operator(0)
        .apply(&p[0])
        .expect("encoder matches operator");
    SimplexLayout::augmented(l, objective.k()).project(&mut q, eps);
    let nu = vec![vec![0.0; q.len()]; p.len()];
    ConsensusVars { p, q, nu }
}

/// `F_i(p) + ⟨ν_i, A_i p⟩ + (c/2)‖A_i p − q‖²`.
struct PrimalSubproblem<'a> {
    objective: &'a ConsensusObjective,
    view: usize,
    nu: &'a [f64],
    q: &'a [f64],
    c: f64,
    buf: std::cell::RefCell<Vec<f64>>,
}

impl SmoothObjective for PrimalSubproblem<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let a = self.objective.operator(self.view);
        let mut r = self.buf.borrow_mut();
        a.apply_into(p, &mut r);
        let mut s = self.objective.f_term(self.view).value(p);
        for ((ri, qi), ni) in r.iter().zip(self.q).zip(self.nu) {
            let d = ri - qi;
            s += ni * ri + 0.5 * self.c * d * d;
        }
        s
    }

    fn value_and_gradient(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let a = self.objective.operator(self.view);
        let mut r = self.buf.borrow_mut();
        a.apply_into(p, &mut r);
        let mut s = self.objective.f_term(self.view).value(p);
        for ((ri, qi), ni) in r.iter_mut().zip(self.q).zip(self.nu) {
            let d = *ri - qi;
            s += ni * *ri + 0.5 * self.c * d * d;
            *ri = ni + self.c * d;
        }
        a.adjoint_into(&r, grad);
        let mut gf = vec![0.0; p.len()];
        self.objective.f_term(self.view).gradient(p, &mut gf);
        for (g, f) in grad.iter_mut().zip(&gf) {
            *g += f;
        }
        s
    }

    fn hessian(&self, p: &[f64], h: &mut DMatrix<f64>) -> bool {
        h.copy_from(self.objective.gram(self.view));
        *h *= self.c;
        let mut diag = vec![0.0; p.len()];
        self.objective
            .f_term(self.view)
            .hessian_diagonal(p, &mut diag);
        for (j, d) in diag.iter().enumerate() {
            h[(j, j)] += d;
        }
        true
    }
}

/// `G(q) − Σ⟨ν_i, q⟩ + Σ(c/2)‖A_i p_i − q‖²` with `A_i p_i` precomputed.
struct AugmentedSubproblem<'a> {
    objective: &'a ConsensusObjective,
    targets: &'a [Vec<f64>],
    nu_sum: Vec<f64>,
    c: f64,
}

impl SmoothObjective for AugmentedSubproblem<'_> {
    fn value(&self, q: &[f64]) -> f64 {
        let mut s = self.objective.g_term().value(q);
        for (j, &qj) in q.iter().enumerate() {
            s -= self.nu_sum[j] * qj;
        }
        for t in self.targets {
            for (tj, qj) in t.iter().zip(q) {
                let d = tj - qj;
                s += 0.5 * self.c * d * d;
            }
        }
        s
    }

    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        self.objective.g_term().gradient(q, grad);
        for (j, g) in grad.iter_mut().enumerate() {
            *g -= self.nu_sum[j];
            for t in self.targets {
                *g -= self.c * (t[j] - q[j]);
            }
        }
        self.value(q)
    }

    fn hessian(&self, q: &[f64], h: &mut DMatrix<f64>) -> bool {
        let mut diag = vec![0.0; q.len()];
        self.objective.g_term().hessian_diagonal(q, &mut diag);
        h.fill(0.0);
        let cv = self.c * self.targets.len() as f64;
        for (j, d) in diag.iter().enumerate() {
            h[(j, j)] = d + cv;
        }
        true
    }
}

/// Minimizes the view-`i` subproblem in place.
pub fn primal_step(
    objective: &ConsensusObjective,
    view: usize,
    vars: &mut ConsensusVars,
    c: f64,
    eps: f64,
    inner: &InnerOptions,
) -> InnerOutcome {
    let a = objective.operator(view);
    let sub = PrimalSubproblem {
        objective,
        view,
        nu: &vars.nu[view],
        q: &vars.q,
        c,
        buf: std::cell::RefCell::new(vec![0.0; a.output_len()]),
    };
    let layout = SimplexLayout::columns(a.l(), a.n());
    minimize(&sub, &layout, eps, &mut vars.p[view], inner)
}

/// `ν_i ← ν_i + c(A_i p_i − q_ref)`.
pub fn dual_step(objective: &ConsensusObjective, view: usize, vars: &mut ConsensusVars, c: f64) {
    let r = objective
        .operator(view)
        .apply(&vars.p[view])
        .expect("shapes checked");
    for ((n, ri), qi) in vars.nu[view].iter_mut().zip(&r).zip(&vars.q) {
        *n += c * (ri - qi);
    }
}

/// Minimizes the augmented-variable subproblem in place.
pub fn augmented_step(
    objective: &ConsensusObjective,
    vars: &mut ConsensusVars,
    c: f64,
    eps: f64,
    inner: &InnerOptions,
) -> InnerOutcome {
    let targets: Vec<Vec<f64>> = objective
        .operators()
        .iter()
        .zip(&vars.p)
        .map(|(a, p)| a.apply(p).expect("shapes checked"))
        .collect();
    let mut nu_sum = vec![0.0; vars.q.len()];
    for nu in &vars.nu {
        for (s, v) in nu_sum.iter_mut().zip(nu) {
            *s += v;
        }
    }
    let sub = AugmentedSubproblem {
        objective,
        targets: &targets,
        nu_sum,
        c,
    };
    let layout = SimplexLayout::augmented(objective.l(), objective.k());
    minimize(&sub, &layout, eps, &mut vars.q, inner)
}

/// `‖p_i − P(p_i − (∇F_i(p_i) + A_iᵀν_i))‖`, zero when the primal
/// minimizer condition holds exactly.
pub fn dual_link_residual(
    objective: &ConsensusObjective,
    view: usize,
    vars: &ConsensusVars,
    eps: f64,
) -> f64 {
    let a = objective.operator(view);
    let p = &vars.p[view];
    let mut g = vec![0.0; p.len()];
    objective.f_term(view).gradient(p, &mut g);
    let at = a.adjoint_apply(&vars.nu[view]).expect("shapes checked");
    g.iter_mut().zip(&at).for_each(|(gi, ai)| *gi += ai);
    gradient_mapping_norm(&SimplexLayout::columns(a.l(), a.n()), eps, p, &g)
}

/// Unprojected `‖∇F_i(p_i) + A_iᵀν_i‖`.
pub fn dual_link_gradient_norm(
    objective: &ConsensusObjective,
    view: usize,
    vars: &ConsensusVars,
) -> f64 {
    let p = &vars.p[view];
    let mut g = vec![0.0; p.len()];
    objective.f_term(view).gradient(p, &mut g);
    let at = objective
        .operator(view)
        .adjoint_apply(&vars.nu[view])
        .expect("shapes checked");
    g.iter()
        .zip(&at)
        .map(|(a, b)| (a + b).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Runs consensus ADMM on `model` with representation size `l`.
pub fn solve(
    model: &JointModel,
    l: usize,
    gammas: &[f64],
    config: &SolverConfig,
) -> Result<ConsensusResult> {
    let objective = ConsensusObjective::new(model, l, gammas)?;
    solve_objective(&objective, config)
}

/// Runs consensus ADMM on an assembled objective from a seeded random start.
pub fn solve_objective(
    objective: &ConsensusObjective,
    config: &SolverConfig,
) -> Result<ConsensusResult> {
    config.validate()?;
    let vars = init_vars(objective, config.seed, config.epsilon);
    solve_from(objective, vars, config)
}

/// Steps averaged for the tail ratio in [`extrapolate_limit`].
const TAIL_STEPS: usize = 50;

/// Limit estimate `w_K + ρ/(1−ρ) (w_K − w_{K−1})`, with `ρ` the geometric
/// mean step ratio over the last [`TAIL_STEPS`] steps. Exact for a
/// geometric sequence; falls back to `w_K` when there are too few steps or
/// they do not contract.
pub fn extrapolate_limit(iterates: &[Vec<f64>]) -> (Vec<f64>, Option<f64>) {
    let last = iterates.last().expect("at least one iterate").clone();
    let k = iterates.len() - 1;
    if k <= TAIL_STEPS {
        return (last, None);
    }
    let step = |j: usize| norm_diff(&iterates[j], &iterates[j - 1]);
    let (newer, older) = (step(k), step(k - TAIL_STEPS));
    if !(newer > 0.0 && older > 0.0) {
        return (last, None);
    }
    let rho = (newer / older).powf(1.0 / TAIL_STEPS as f64);
    if !(rho < 1.0) {
        return (last, None);
    }
    let f = rho / (1.0 - rho);
    let limit = last
        .iter()
        .zip(&iterates[k - 1])
        .map(|(a, b)| a + f * (a - b))
        .collect();
    (limit, Some(rho))
}

/// Runs consensus ADMM from the given starting point.
pub fn solve_from(
    objective: &ConsensusObjective,
    mut vars: ConsensusVars,
    config: &SolverConfig,
) -> Result<ConsensusResult> {
    config.validate()?;
    objective.check_vars(&vars)?;
    let v = objective.num_views();
    let (c, eps) = (config.c, config.epsilon);
    let inner = config.inner();

    let mut iterates = vec![vars.flatten()];
    let mut trajectory = Trajectory {
        initial_lagrangian: objective.lagrangian(&vars, c),
        ..Trajectory::default()
    };
    let mut converged = false;

    for k in 0..config.max_outer {
        let p_old = vars.p.clone();
        let q_old = vars.q.clone();
        let nu_old = vars.nu.clone();
        let mut steps = 0;
        let mut incomplete = false;
        let mut note = |o: InnerOutcome| {
            steps += o.steps;
            incomplete |= !o.converged;
        };

        for i in 0..v {
            note(primal_step(objective, i, &mut vars, c, eps, &inner));
        }
        match config.update_order {
            UpdateOrder::PrimalDualAug => {
                for i in 0..v {
                    dual_step(objective, i, &mut vars, c);
                }
                note(augmented_step(objective, &mut vars, c, eps, &inner));
            }
            UpdateOrder::PrimalAugDual => {
                note(augmented_step(objective, &mut vars, c, eps, &inner));
                for i in 0..v {
                    dual_step(objective, i, &mut vars, c);
                }
            }
        }

        let lagrangian = objective.lagrangian(&vars, c);
        let tv: Vec<f64> = (0..v)
            .map(|i| {
                let r = objective
                    .operator(i)
                    .apply(&vars.p[i])
                    .expect("shapes checked");
                tv_distance(&r, &vars.q)
            })
            .collect();
        let record = IterationRecord {
            lagrangian,
            dp: (0..v).map(|i| norm_diff(&vars.p[i], &p_old[i])).collect(),
            dq: norm_diff(&vars.q, &q_old),
            dnu: (0..v).map(|i| norm_diff(&vars.nu[i], &nu_old[i])).collect(),
            dual_link: (0..v)
                .map(|i| dual_link_residual(objective, i, &vars, eps))
                .collect(),
            tv,
            inner_steps: steps,
            inner_incomplete: incomplete,
        };
        let finite = lagrangian.is_finite() && vars.nu.iter().flatten().all(|x| x.is_finite());
        let done = record.tv.iter().all(|&t| t < config.tol_out);
        trajectory.records.push(record);
        if !finite {
            return Err(Error::NonFinite {
                iteration: k + 1,
                lagrangians: trajectory.lagrangians(),
            });
        }
        iterates.push(vars.flatten());
        if done {
            converged = true;
            break;
        }
    }

    let last = iterates.last().expect("initial iterate present").clone();
    trajectory.distance_to_final = iterates.iter().map(|w| norm_diff(w, &last)).collect();
    let (limit, ratio) = extrapolate_limit(&iterates);
    trajectory.distance_to_limit = iterates.iter().map(|w| norm_diff(w, &limit)).collect();
    trajectory.tail_ratio = ratio;
    let l = objective.l();
    let mi_zx = objective
        .operators()
        .iter()
        .zip(&vars.p)
        .map(|(a, p)| mutual_information_raw(a.p_x(), &Channel::from_raw(l, a.n(), p.clone())))
        .collect::<Result<Vec<_>>>()?;
    let k = objective.k();
    let mi_zy = mutual_information_raw(
        objective.p_y(),
        &Channel::from_raw(l, k, vars.q[l..].to_vec()),
    )?;
    Ok(ConsensusResult {
        l,
        objective: objective.objective(&vars.p, &vars.q),
        iterations: trajectory.records.len(),
        vars,
        converged,
        trajectory,
        mi_zx,
        mi_zy,
    })
}
