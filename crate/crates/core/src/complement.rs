//! Complement stage: per-view encoders of what the consensus symbol leaves
//! out.
//!
//! With the consensus encoders frozen, view `i` and consensus symbol `t`
//! give an independent single-view problem over the conditional model of
//! `(Y, X^(i))` given `Z_c = t`. Each is solved by the consensus loop with
//! one view.

use std::io::Write;

use serde::Serialize;

use crate::consensus::{solve_objective, ConsensusResult, SolverConfig};
use crate::error::{invalid, Error, Result};
use crate::objectives::{
    augmented_lagrangian_complement, ComplementObjective, ComplementSlice, ComplementVars,
};
use crate::operators::{build_complement_prior, ComplementPrior};
use crate::prob::{conditional_mutual_information, derive_seed, JointModel, JointTable};

/// Complement solution for one view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplementView {
    pub view: usize,
    pub l_c: usize,
    pub l_e: usize,
    pub n: usize,
    pub vars: ComplementVars,
    /// Per-`t` sub-run results, including trajectories.
    pub runs: Vec<ConsensusResult>,
    /// `I(Z_e^(i); Y | Z_c)`.
    pub mi_y_given_c: f64,
    /// `I(Z_e^(i); X^(i) | Z_c)`.
    pub mi_x_given_c: f64,
    /// `Σ_t p(t) L_{e,c}[t]` at the final point.
    pub lagrangian: f64,
    #[serde(skip)]
    pub priors: Vec<ComplementPrior>,
}

impl ComplementView {
    pub fn converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }

    /// `π(z_e | z_c = t, x)`.
    pub fn encoder_entry(&self, t: usize, ze: usize, x: usize) -> f64 {
        self.vars.slices[t].pi_x[ze * self.n + x]
    }

    /// CSV rows `(z_e, z_c, x, value)`.
    pub fn write_pi_x_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z_e", "z_c", "x", "value"])?;
        for (t, s) in self.vars.slices.iter().enumerate() {
            for ze in 0..self.l_e {
                for x in 0..self.n {
                    w.write_record([
                        ze.to_string(),
                        t.to_string(),
                        x.to_string(),
                        format!("{:e}", s.pi_x[ze * self.n + x]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV rows `(z_e, z_c, y, value)` from `π_y`.
    pub fn write_pi_y_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z_e", "z_c", "y", "value"])?;
        for (t, s) in self.vars.slices.iter().enumerate() {
            let k = (s.pi_q.len() - self.l_e) / self.l_e;
            for ze in 0..self.l_e {
                for y in 0..k {
                    w.write_record([
                        ze.to_string(),
                        t.to_string(),
                        y.to_string(),
                        format!("{:e}", s.pi_q[self.l_e + ze * k + y]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplementResult {
    pub views: Vec<ComplementView>,
}

impl ComplementResult {
    pub fn converged(&self) -> bool {
        self.views.iter().all(ComplementView::converged)
    }
}

/// Complement stage after a converged consensus stage. `l_e` holds one
/// complement size per view.
pub fn solve_complement(
    model: &JointModel,
    consensus: &ConsensusResult,
    l_e: &[usize],
    gamma: f64,
    config: &SolverConfig,
) -> Result<ComplementResult> {
    if !consensus.converged {
        return Err(Error::State(
            "complement stage requires a converged consensus stage".into(),
        ));
    }
    solve_complement_unchecked(model, consensus, l_e, gamma, config)
}

/// Same as [`solve_complement`] but accepts a consensus stage that hit its
/// iteration cap; sweeps keep such runs and flag them.
pub fn solve_complement_unchecked(
    model: &JointModel,
    consensus: &ConsensusResult,
    l_e: &[usize],
    gamma: f64,
    config: &SolverConfig,
) -> Result<ComplementResult> {
    config.validate()?;
    if l_e.len() != model.num_views() {
        return Err(invalid(format!(
            "{} complement sizes for {} views",
            l_e.len(),
            model.num_views()
        )));
    }
    let views = (0..model.num_views())
        .map(|i| solve_view(model, consensus, i, l_e[i], gamma, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplementResult { views })
}

fn solve_view(
    model: &JointModel,
    consensus: &ConsensusResult,
    view: usize,
    l_e: usize,
    gamma: f64,
    config: &SolverConfig,
) -> Result<ComplementView> {
    let enc = consensus.encoder(view);
    let l_c = consensus.l;
    let priors = (0..l_c)
        .map(|t| build_complement_prior(model, &enc, view, t, l_e, config.epsilon))
        .collect::<Result<Vec<_>>>()?;
    let objective = ComplementObjective::new(priors.clone(), gamma)?;
    let mut runs = Vec::with_capacity(l_c);
    for t in 0..l_c {
        let sub = SolverConfig {
            seed: derive_seed(config.seed, &[view as u64, t as u64]),
            ..*config
        };
        runs.push(solve_objective(objective.part(t), &sub)?);
    }
    let vars = ComplementVars {
        slices: runs
            .iter()
            .map(|r| ComplementSlice {
                pi_x: r.vars.p[0].clone(),
                pi_q: r.vars.q.clone(),
                mu: r.vars.nu[0].clone(),
            })
            .collect(),
    };
    let lagrangian = augmented_lagrangian_complement(&objective, &vars, config.c)?;
    let n = model.view(view).rows();
    let y_table = complement_joint(model, consensus, view, l_e, &vars, Target::Y)?;
    let x_table = complement_joint(model, consensus, view, l_e, &vars, Target::X)?;
    Ok(ComplementView {
        view,
        l_c,
        l_e,
        n,
        mi_y_given_c: conditional_mutual_information(&y_table)?,
        mi_x_given_c: conditional_mutual_information(&x_table)?,
        vars,
        runs,
        lagrangian,
        priors,
    })
}

#[derive(Clone, Copy)]
enum Target {
    Y,
    X,
}

/// Joint table over `(Z_e, target, Z_c)` for one view, by enumeration over
/// `(y, x)` with `Z_c` drawn from the view's own consensus encoder.
fn complement_joint(
    model: &JointModel,
    consensus: &ConsensusResult,
    view: usize,
    l_e: usize,
    vars: &ComplementVars,
    target: Target,
) -> Result<JointTable> {
    let ch = model.view(view);
    let (n, k) = (ch.rows(), ch.cols());
    let l_c = consensus.l;
    let enc = consensus.encoder(view);
    let width = match target {
        Target::Y => k,
        Target::X => n,
    };
    let mut data = vec![0.0; l_e * width * l_c];
    let p_y = model.p_y().as_slice();
    for (y, &py) in p_y.iter().enumerate() {
        for x in 0..n {
            let pxy = py * ch.get(x, y);
            for t in 0..l_c {
                let pt = pxy * enc.get(t, x);
                for ze in 0..l_e {
                    let b = match target {
                        Target::Y => y,
                        Target::X => x,
                    };
                    data[(ze * width + b) * l_c + t] += pt * vars.slices[t].pi_x[ze * n + x];
                }
            }
        }
    }
    JointTable::new(vec![l_e, width, l_c], data)
}

/// Joint table over `(Z_c, Z_e^(i), Y)` for view `i`.
pub fn view_relevance_table(
    model: &JointModel,
    consensus: &ConsensusResult,
    view: &ComplementView,
) -> Result<JointTable> {
    let ch = model.view(view.view);
    let (n, k) = (ch.rows(), ch.cols());
    let (l_c, l_e) = (view.l_c, view.l_e);
    let enc = consensus.encoder(view.view);
    let p_y = model.p_y().as_slice();
    let mut data = vec![0.0; l_c * l_e * k];
    for (y, &py) in p_y.iter().enumerate() {
        for x in 0..n {
            let pxy = py * ch.get(x, y);
            for t in 0..l_c {
                for ze in 0..l_e {
                    data[(t * l_e + ze) * k + y] +=
                        pxy * enc.get(t, x) * view.encoder_entry(t, ze, x);
                }
            }
        }
    }
    JointTable::new(vec![l_c, l_e, k], data)
}
