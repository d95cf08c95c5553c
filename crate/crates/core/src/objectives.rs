//! Sub-objectives, augmented Lagrangians and theory constants.
//!
//! The consensus objective `Σ_i γ_i I(Z;X^(i)) − I(Z;Y)` splits into
//! per-view terms `F_i = −γ_i H(Z|X^(i))` and a shared term
//! `G = (Σγ − 1) H(Z) + H(Z|Y)` of the augmented variable. The complement
//! objective splits the same way after conditioning on each consensus
//! symbol, so it reuses [`FTerm`] and [`GTerm`] over a conditional model.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, shape, Error, Result};
use crate::operators::{
    build_consensus_operator, ComplementPrior, ConsensusOperator, OperatorSpectrum,
};
use crate::prob::{xlnx, JointModel};

/// `F(p) = −γ H(Z|X)` for an encoder `p` (row-major `L × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct FTerm {
    p_x: Vec<f64>,
    l: usize,
    gamma: f64,
}

impl FTerm {
    pub fn new(p_x: Vec<f64>, l: usize, gamma: f64) -> Self {
        Self { p_x, l, gamma }
    }

    pub fn for_operator(op: &ConsensusOperator, gamma: f64) -> Self {
        Self::new(op.p_x().to_vec(), op.l(), gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        let n = self.p_x.len();
        let mut s = 0.0;
        for z in 0..self.l {
            for x in 0..n {
                s += self.p_x[x] * xlnx(p[z * n + x]);
            }
        }
        self.gamma * s
    }

    /// Diagonal Hessian `γ p(x) / p(z|x)`.
    pub fn hessian_diagonal(&self, p: &[f64], out: &mut [f64]) {
        let n = self.p_x.len();
        for z in 0..self.l {
            for x in 0..n {
                out[z * n + x] = self.gamma * self.p_x[x] / p[z * n + x];
            }
        }
    }

    /// Writes `γ p(x)(ln p(z|x) + 1)`.
    pub fn gradient(&self, p: &[f64], out: &mut [f64]) {
        let n = self.p_x.len();
        for z in 0..self.l {
            for x in 0..n {
                let v = p[z * n + x];
                out[z * n + x] = self.gamma * self.p_x[x] * (v.ln() + 1.0);
            }
        }
    }
}

/// `G(q) = (Σγ − 1) H(p_z) + Σ_y p(y) H(p_{·|y})` on `q = [p_z; p_{z|y}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GTerm {
    p_y: Vec<f64>,
    l: usize,
    gamma_sum: f64,
}

impl GTerm {
    pub fn new(p_y: Vec<f64>, l: usize, gamma_sum: f64) -> Self {
        Self { p_y, l, gamma_sum }
    }

    /// `σ_γ = 1 − Σγ`; the gradient of the `p_z` block is `σ_γ(ln p_z + 1)`.
    pub fn sigma(&self) -> f64 {
        1.0 - self.gamma_sum
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        let (l, k) = (self.l, self.p_y.len());
        let hz: f64 = -q[..l].iter().map(|&v| xlnx(v)).sum::<f64>();
        let mut hzy = 0.0;
        for z in 0..l {
            for y in 0..k {
                hzy -= self.p_y[y] * xlnx(q[l + z * k + y]);
            }
        }
        -self.sigma() * hz + hzy
    }

    /// Diagonal Hessian: `σ_γ / p_z` and `−p(y) / p_{z|y}`.
    pub fn hessian_diagonal(&self, q: &[f64], out: &mut [f64]) {
        let (l, k) = (self.l, self.p_y.len());
        let s = self.sigma();
        for z in 0..l {
            out[z] = s / q[z];
            for y in 0..k {
                out[l + z * k + y] = -self.p_y[y] / q[l + z * k + y];
            }
        }
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        let (l, k) = (self.l, self.p_y.len());
        let s = self.sigma();
        for z in 0..l {
            out[z] = s * (q[z].ln() + 1.0);
            for y in 0..k {
                out[l + z * k + y] = -self.p_y[y] * (q[l + z * k + y].ln() + 1.0);
            }
        }
    }
}

/// `F_i` value for view marginal `p_x`.
pub fn eval_f(p_x: &[f64], gamma: f64, p: &[f64]) -> Result<f64> {
    let term = f_term_checked(p_x, gamma, p)?;
    Ok(term.value(p))
}

pub fn grad_f(p_x: &[f64], gamma: f64, p: &[f64]) -> Result<Vec<f64>> {
    let term = f_term_checked(p_x, gamma, p)?;
    let mut g = vec![0.0; p.len()];
    term.gradient(p, &mut g);
    Ok(g)
}

fn f_term_checked(p_x: &[f64], gamma: f64, p: &[f64]) -> Result<FTerm> {
    if p_x.is_empty() || !p.len().is_multiple_of(p_x.len()) {
        return Err(shape(format!(
            "encoder of length {} over an alphabet of {}",
            p.len(),
            p_x.len()
        )));
    }
    Ok(FTerm::new(p_x.to_vec(), p.len() / p_x.len(), gamma))
}

fn g_term_checked(p_y: &[f64], gammas: &[f64], q: &[f64]) -> Result<GTerm> {
    let k = p_y.len();
    if k == 0 || !q.len().is_multiple_of(k + 1) {
        return Err(shape(format!(
            "augmented vector of length {} for {k} labels",
            q.len()
        )));
    }
    Ok(GTerm::new(
        p_y.to_vec(),
        q.len() / (k + 1),
        gammas.iter().sum(),
    ))
}

pub fn eval_g(p_y: &[f64], gammas: &[f64], q: &[f64]) -> Result<f64> {
    Ok(g_term_checked(p_y, gammas, q)?.value(q))
}

pub fn grad_g(p_y: &[f64], gammas: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let term = g_term_checked(p_y, gammas, q)?;
    let mut g = vec![0.0; q.len()];
    term.gradient(q, &mut g);
    Ok(g)
}

/// Primal encoders, augmented variable and duals of the consensus step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusVars {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
}

impl ConsensusVars {
    /// All variables flattened in the order `p_1..p_V, q, ν_1..ν_V`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.p.iter().flatten().copied().collect();
        w.extend_from_slice(&self.q);
        w.extend(self.nu.iter().flatten());
        w
    }
}

/// A consensus problem: one operator and `F` term per view plus `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusObjective {
    operators: Vec<ConsensusOperator>,
    /// `A_iᵀA_i`, the constant part of each primal Hessian.
    grams: Vec<DMatrix<f64>>,
    f: Vec<FTerm>,
    g: GTerm,
    p_y: Vec<f64>,
}

impl ConsensusObjective {
    pub fn new(model: &JointModel, l: usize, gammas: &[f64]) -> Result<Self> {
        if gammas.len() != model.num_views() {
            return Err(invalid(format!(
                "{} trade-off parameters for {} views",
                gammas.len(),
                model.num_views()
            )));
        }
        let ops = (0..model.num_views())
            .map(|i| build_consensus_operator(model, i, l))
            .collect::<Result<Vec<_>>>()?;
        Self::from_operators(ops, model.p_y().as_slice().to_vec(), gammas)
    }

    pub fn from_operators(
        operators: Vec<ConsensusOperator>,
        p_y: Vec<f64>,
        gammas: &[f64],
    ) -> Result<Self> {
        let first = operators.first().ok_or_else(|| invalid("no views"))?;
        let (l, k) = (first.l(), first.k());
        if operators.iter().any(|a| a.l() != l || a.k() != k) || k != p_y.len() {
            return Err(shape("operators disagree on |Z| or |Y|"));
        }
        if gammas.len() != operators.len() {
            return Err(invalid("one trade-off parameter per view required"));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(invalid(format!(
                "trade-off parameter must be positive, got {g}"
            )));
        }
        let f = operators
            .iter()
            .zip(gammas)
            .map(|(a, &g)| FTerm::for_operator(a, g))
            .collect();
        let g = GTerm::new(p_y.clone(), l, gammas.iter().sum());
        let grams = operators
            .iter()
            .map(|a| {
                let d = a.to_dense();
                d.transpose() * d
            })
            .collect();
        Ok(Self {
            operators,
            grams,
            f,
            g,
            p_y,
        })
    }

    /// Single-view problem over the conditional model of a complement prior.
    pub fn for_complement(prior: &ComplementPrior, gamma: f64) -> Result<Self> {
        Self::from_operators(
            vec![prior.operator().clone()],
            prior.conditional_model().p_y().as_slice().to_vec(),
            &[gamma],
        )
    }

    pub fn operators(&self) -> &[ConsensusOperator] {
        &self.operators
    }

    pub fn operator(&self, i: usize) -> &ConsensusOperator {
        &self.operators[i]
    }

    pub fn gram(&self, i: usize) -> &DMatrix<f64> {
        &self.grams[i]
    }

    pub fn f_term(&self, i: usize) -> &FTerm {
        &self.f[i]
    }

    pub fn g_term(&self) -> &GTerm {
        &self.g
    }

    pub fn p_y(&self) -> &[f64] {
        &self.p_y
    }

    pub fn num_views(&self) -> usize {
        self.operators.len()
    }

    pub fn l(&self) -> usize {
        self.operators[0].l()
    }

    pub fn k(&self) -> usize {
        self.operators[0].k()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.f.iter().map(FTerm::gamma).collect()
    }

    /// `Σ F_i(p_i) + G(q)`, the objective itself (no penalty or dual terms).
    pub fn objective(&self, p: &[Vec<f64>], q: &[f64]) -> f64 {
        self.f.iter().zip(p).map(|(f, pi)| f.value(pi)).sum::<f64>() + self.g.value(q)
    }

    /// The augmented Lagrangian `L_c`.
    pub fn lagrangian(&self, vars: &ConsensusVars, c: f64) -> f64 {
        let mut total = self.g.value(&vars.q);
        let mut r = vec![0.0; vars.q.len()];
        for (i, a) in self.operators.iter().enumerate() {
            a.apply_into(&vars.p[i], &mut r);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((ri, qi), ni) in r.iter().zip(&vars.q).zip(&vars.nu[i]) {
                let d = ri - qi;
                lin += ni * d;
                sq += d * d;
            }
            total += self.f[i].value(&vars.p[i]) + lin + 0.5 * c * sq;
        }
        total
    }

    pub fn check_vars(&self, vars: &ConsensusVars) -> Result<()> {
        let v = self.num_views();
        if vars.p.len() != v || vars.nu.len() != v {
            return Err(shape(format!(
                "variables for {} views, problem has {v}",
                vars.p.len()
            )));
        }
        let out = self.operators[0].output_len();
        if vars.q.len() != out || vars.nu.iter().any(|n| n.len() != out) {
            return Err(shape("augmented or dual vector has the wrong length"));
        }
        for (a, p) in self.operators.iter().zip(&vars.p) {
            if p.len() != a.input_len() {
                return Err(shape(format!(
                    "encoder of length {} for view {} (expected {})",
                    p.len(),
                    a.view() + 1,
                    a.input_len()
                )));
            }
        }
        Ok(())
    }
}

/// `Σ_i [F_i + ⟨ν_i, A_i p_i − q⟩ + (c/2)‖A_i p_i − q‖²] + G(q)`.
pub fn augmented_lagrangian_consensus(
    objective: &ConsensusObjective,
    vars: &ConsensusVars,
    c: f64,
) -> Result<f64> {
    objective.check_vars(vars)?;
    Ok(objective.lagrangian(vars, c))
}

/// Complement variables of one consensus symbol `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplementSlice {
    /// `π_x[t]`, row-major `L_e × N_i`.
    pub pi_x: Vec<f64>,
    /// `π_q[t] = [π_z[t]; π_y[t]]`.
    pub pi_q: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ComplementSlice {
    pub fn as_vars(&self) -> ConsensusVars {
        ConsensusVars {
            p: vec![self.pi_x.clone()],
            q: self.pi_q.clone(),
            nu: vec![self.mu.clone()],
        }
    }
}

/// Complement variables of one view, one slice per consensus symbol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplementVars {
    pub slices: Vec<ComplementSlice>,
}

/// The per-`t` objectives of one view's complement step.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementObjective {
    priors: Vec<ComplementPrior>,
    parts: Vec<ConsensusObjective>,
    gamma: f64,
}

impl ComplementObjective {
    pub fn new(priors: Vec<ComplementPrior>, gamma: f64) -> Result<Self> {
        if priors.is_empty() {
            return Err(Error::State(
                "complement step needs consensus priors".into(),
            ));
        }
        let parts = priors
            .iter()
            .map(|p| ConsensusObjective::for_complement(p, gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            priors,
            parts,
            gamma,
        })
    }

    pub fn priors(&self) -> &[ComplementPrior] {
        &self.priors
    }

    pub fn part(&self, t: usize) -> &ConsensusObjective {
        &self.parts[t]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn check(&self, vars: &ComplementVars) -> Result<()> {
        if vars.slices.len() != self.parts.len() {
            return Err(shape(format!(
                "{} complement slices for {} consensus symbols",
                vars.slices.len(),
                self.parts.len()
            )));
        }
        for (part, s) in self.parts.iter().zip(&vars.slices) {
            part.check_vars(&s.as_vars())?;
        }
        Ok(())
    }

    /// `F_e = −γ H(Z_e | Z_c, X) = Σ_t p(t) F^{(t)}(π_x[t])`.
    pub fn eval_f_e(&self, vars: &ComplementVars) -> Result<f64> {
        self.check(vars)?;
        Ok(self
            .parts
            .iter()
            .zip(&self.priors)
            .zip(&vars.slices)
            .map(|((part, pr), s)| pr.p_t() * part.f_term(0).value(&s.pi_x))
            .sum())
    }

    /// Gradient of [`Self::eval_f_e`], one block per `t`.
    pub fn grad_f_e(&self, vars: &ComplementVars) -> Result<Vec<Vec<f64>>> {
        self.check(vars)?;
        Ok(self
            .parts
            .iter()
            .zip(&self.priors)
            .zip(&vars.slices)
            .map(|((part, pr), s)| {
                let mut g = vec![0.0; s.pi_x.len()];
                part.f_term(0).gradient(&s.pi_x, &mut g);
                g.iter_mut().for_each(|v| *v *= pr.p_t());
                g
            })
            .collect())
    }

    /// `G_e = (γ − 1) H(Z_e | Z_c) + H(Z_e | Z_c, Y)` evaluated on `π_q`.
    pub fn eval_g_e(&self, vars: &ComplementVars) -> Result<f64> {
        self.check(vars)?;
        Ok(self
            .parts
            .iter()
            .zip(&self.priors)
            .zip(&vars.slices)
            .map(|((part, pr), s)| pr.p_t() * part.g_term().value(&s.pi_q))
            .sum())
    }

    pub fn grad_g_e(&self, vars: &ComplementVars) -> Result<Vec<Vec<f64>>> {
        self.check(vars)?;
        Ok(self
            .parts
            .iter()
            .zip(&self.priors)
            .zip(&vars.slices)
            .map(|((part, pr), s)| {
                let mut g = vec![0.0; s.pi_q.len()];
                part.g_term().gradient(&s.pi_q, &mut g);
                g.iter_mut().for_each(|v| *v *= pr.p_t());
                g
            })
            .collect())
    }

    /// Per-`t` Lagrangian `L_{e,c}[t]`.
    pub fn lagrangian_slice(&self, t: usize, slice: &ComplementSlice, c: f64) -> f64 {
        self.parts[t].lagrangian(&slice.as_vars(), c)
    }
}

/// `Σ_t p(t) L_{e,c}[t]` for one view.
pub fn augmented_lagrangian_complement(
    objective: &ComplementObjective,
    vars: &ComplementVars,
    c: f64,
) -> Result<f64> {
    objective.check(vars)?;
    Ok(vars
        .slices
        .iter()
        .enumerate()
        .map(|(t, s)| objective.priors[t].p_t() * objective.lagrangian_slice(t, s, c))
        .sum())
}

/// Smoothness, Lipschitz and weak-convexity constants of a consensus problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveConstants {
    pub epsilon: f64,
    /// `L_i = γ_i / ε`.
    pub smoothness: Vec<f64>,
    /// `M_i = γ_i max_x p(x) (1 + |ln ε|)`.
    pub lipschitz: Vec<f64>,
    /// `max{|σ_γ|/ε, 1/ε}`.
    pub g_smoothness: f64,
    pub sigma_gamma: f64,
    /// `max{2 L |σ_γ| / ε, 2 L K / ε}`.
    pub sigma_g: f64,
    pub num_views: usize,
}

impl ObjectiveConstants {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constants serialize")
    }
}

pub fn compute_constants(
    model: &JointModel,
    l: usize,
    gammas: &[f64],
    eps: f64,
) -> Result<ObjectiveConstants> {
    let marginals: Vec<Vec<f64>> = (0..model.num_views())
        .map(|i| model.view_marginal(i))
        .collect();
    constants_from_marginals(&marginals, model.num_labels(), l, gammas, eps)
}

/// Constants of an already assembled problem.
pub fn constants_for(objective: &ConsensusObjective, eps: f64) -> Result<ObjectiveConstants> {
    let marginals: Vec<Vec<f64>> = objective
        .operators()
        .iter()
        .map(|a| a.p_x().to_vec())
        .collect();
    constants_from_marginals(
        &marginals,
        objective.k(),
        objective.l(),
        &objective.gammas(),
        eps,
    )
}

fn constants_from_marginals(
    marginals: &[Vec<f64>],
    k: usize,
    l: usize,
    gammas: &[f64],
    eps: f64,
) -> Result<ObjectiveConstants> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("floor must be positive, got {eps}")));
    }
    if gammas.len() != marginals.len() {
        return Err(invalid("one trade-off parameter per view required"));
    }
    let smoothness = gammas.iter().map(|g| g / eps).collect();
    let log_term = 1.0 + eps.ln().abs();
    let lipschitz = gammas
        .iter()
        .zip(marginals)
        .map(|(g, px)| g * px.iter().copied().fold(0.0, f64::max) * log_term)
        .collect();
    let sigma_gamma = 1.0 - gammas.iter().sum::<f64>();
    let (lf, kf) = (l as f64, k as f64);
    let sigma_g = (2.0 * lf * sigma_gamma.abs() / eps).max(2.0 * lf * kf / eps);
    Ok(ObjectiveConstants {
        epsilon: eps,
        smoothness,
        lipschitz,
        g_smoothness: (sigma_gamma.abs() / eps).max(1.0 / eps),
        sigma_gamma,
        sigma_g,
        num_views: marginals.len(),
    })
}

/// Smallest penalty `max_i{M_i λ_i L_i / μ_i, σ_G / V}` for which the
/// sufficient-decrease bound is positive. Every operator must have full
/// row rank.
pub fn penalty_lower_bound(
    constants: &ObjectiveConstants,
    spectra: &[OperatorSpectrum],
) -> Result<f64> {
    if let Some(s) = spectra.iter().find(|s| !s.is_full_row_rank()) {
        return Err(Error::RankDeficient {
            rank: s.rank,
            rows: s.rows,
        });
    }
    penalty_lower_bound_on_range(constants, spectra)
}

/// Same bound with `μ` taken over the range of each operator, which is the
/// only meaningful variant for rank-deficient consensus operators.
pub fn penalty_lower_bound_on_range(
    constants: &ObjectiveConstants,
    spectra: &[OperatorSpectrum],
) -> Result<f64> {
    if spectra.len() != constants.num_views {
        return Err(shape(format!(
            "{} spectra for {} views",
            spectra.len(),
            constants.num_views
        )));
    }
    let views = spectra
        .iter()
        .enumerate()
        .map(|(i, s)| constants.lipschitz[i] * s.lambda_a * constants.smoothness[i] / s.mu_aat)
        .fold(0.0_f64, f64::max);
    Ok(views.max(constants.sigma_g / constants.num_views as f64))
}
