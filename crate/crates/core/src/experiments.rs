//! Experiment runner: γ sweeps with seeded restarts over the four methods,
//! and the CSV/JSON artifacts they produce.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{merge_views, solve_ib_ba};
use crate::complement::{solve_complement_unchecked, view_relevance_table};
use crate::consensus::{solve_objective, SolverConfig, UpdateOrder};
use crate::diagnostics::{diagnose, DiagnosticSummary};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{
    build_decoder_cc, build_decoder_inc, build_decoder_joint, build_decoder_single, evaluate,
    exact_expected_accuracy, relevance_cc, relevance_inc, relevance_single_stage, AccuracyMode,
    EvalReport, Method, Relevance,
};
use crate::incremental::solve_incremental;
use crate::objectives::ConsensusObjective;
use crate::prob::{derive_seed, sample_dataset, Channel, Dataset, JointModel, ProbVector};

/// The two distributions of the numerical study.
pub fn builtin_model(name: &str) -> Result<JointModel> {
    match name {
        "eq16" => JointModel::new(
            ProbVector::new(vec![0.5, 0.5])?,
            vec![
                Channel::from_rows(&[vec![0.75, 0.05], vec![0.20, 0.20], vec![0.05, 0.75]])?,
                Channel::from_rows(&[vec![0.85, 0.15], vec![0.15, 0.85]])?,
            ],
        ),
        "eq17" => JointModel::new(
            ProbVector::uniform(3)?,
            vec![
                Channel::from_rows(&[
                    vec![0.90, 0.20, 0.20],
                    vec![0.05, 0.45, 0.35],
                    vec![0.05, 0.35, 0.45],
                ])?,
                Channel::from_rows(&[
                    vec![0.25, 0.10, 0.55],
                    vec![0.20, 0.80, 0.25],
                    vec![0.55, 0.10, 0.20],
                ])?,
            ],
        ),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Representation sizes for every method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// `|Z_c|`.
    pub consensus: usize,
    /// `|Z_e^(i)|` per view.
    pub complement: Vec<usize>,
    /// `|Z^(i)|` per view for the incremental chain.
    pub incremental: Vec<usize>,
    /// Joint-view representation size.
    pub joint: usize,
    /// Single-view representation size per view.
    pub single: Vec<usize>,
}

impl Dims {
    pub fn builtin(name: &str) -> Option<Dims> {
        match name {
            "eq16" => Some(Dims {
                consensus: 2,
                complement: vec![3, 2],
                incremental: vec![3, 2],
                joint: 4,
                single: vec![3, 2],
            }),
            "eq17" => Some(Dims {
                consensus: 3,
                complement: vec![3, 3],
                incremental: vec![3, 3],
                joint: 3,
                single: vec![3, 3],
            }),
            _ => None,
        }
    }

    /// Every size equal to `l`.
    pub fn uniform(views: usize, l: usize) -> Dims {
        Dims {
            consensus: l,
            complement: vec![l; views],
            incremental: vec![l; views],
            joint: l,
            single: vec![l; views],
        }
    }

    fn validate(&self, views: usize) -> Result<()> {
        for (name, v) in [
            ("complement", &self.complement),
            ("incremental", &self.incremental),
            ("single", &self.single),
        ] {
            if v.len() != views {
                return Err(invalid(format!(
                    "dims.{name} has {} entries for {views} views",
                    v.len()
                )));
            }
        }
        let all = [self.consensus, self.joint]
            .into_iter()
            .chain(self.complement.iter().copied())
            .chain(self.incremental.iter().copied())
            .chain(self.single.iter().copied());
        for d in all {
            if d < 2 {
                return Err(invalid(format!(
                    "representation sizes must be at least 2, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Default γ grid: 0.10, 0.15, …, 0.70.
pub fn default_gammas() -> Vec<f64> {
    (0..13).map(|i| (10 + 5 * i) as f64 / 100.0).collect()
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `eq16`, `eq17`, or a path to a model JSON file.
    pub model: String,
    pub methods: Vec<Method>,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub c: f64,
    pub epsilon: f64,
    /// Representation sizes; defaults per built-in model, or `|Y|`
    /// everywhere for file models.
    pub dims: Option<Dims>,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 picks the machine default.
    pub parallel: usize,
    pub test_size: usize,
    pub max_outer: usize,
    pub tol_out: f64,
    pub inner_max_steps: usize,
    pub tol_in: f64,
    pub update_order: UpdateOrder,
    /// Processing order of views in the incremental chain.
    pub view_order: Option<Vec<usize>>,
    pub baseline_tol: f64,
    pub baseline_max_iter: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            model: "eq16".into(),
            methods: default_methods(),
            gammas: default_gammas(),
            trials: 50,
            c: solver.c,
            epsilon: solver.epsilon,
            dims: None,
            seed: 0,
            out: PathBuf::from("out"),
            parallel: 0,
            test_size: 10_000,
            max_outer: solver.max_outer,
            tol_out: solver.tol_out,
            inner_max_steps: solver.inner_max_steps,
            tol_in: solver.tol_in,
            update_order: solver.update_order,
            view_order: None,
            baseline_tol: 1e-10,
            baseline_max_iter: 20_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn load_model(&self) -> Result<JointModel> {
        match builtin_model(&self.model) {
            Err(Error::UnknownModel(name)) if !Path::new(&name).exists() => {
                Err(Error::UnknownModel(name))
            }
            Err(Error::UnknownModel(_)) => {
                JointModel::from_json_str(&fs::read_to_string(&self.model)?)
            }
            other => other,
        }
    }

    pub fn resolved_dims(&self, model: &JointModel) -> Dims {
        self.dims
            .clone()
            .or_else(|| Dims::builtin(&self.model))
            .unwrap_or_else(|| Dims::uniform(model.num_views(), model.num_labels().max(2)))
    }

    pub fn resolved_view_order(&self, model: &JointModel) -> Vec<usize> {
        self.view_order
            .clone()
            .unwrap_or_else(|| (0..model.num_views()).collect())
    }

    pub fn solver(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            c: self.c,
            max_outer: self.max_outer,
            tol_out: self.tol_out,
            inner_max_steps: self.inner_max_steps,
            tol_in: self.tol_in,
            epsilon: self.epsilon,
            seed,
            update_order: self.update_order,
        }
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        if self.gammas.is_empty() {
            return Err(invalid("γ grid is empty"));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(invalid(format!("γ values must be positive, got {g}")));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.test_size == 0 {
            return Err(invalid("test_size must be at least 1"));
        }
        if !(self.baseline_tol > 0.0) || self.baseline_max_iter == 0 {
            return Err(invalid(
                "baseline tolerance and iteration cap must be positive",
            ));
        }
        self.solver(self.seed).validate()
    }

    /// Full validation against the resolved model.
    pub fn validate_for(&self, model: &JointModel) -> Result<()> {
        self.validate()?;
        self.resolved_dims(model).validate(model.num_views())?;
        let order = self.resolved_view_order(model);
        let mut seen = vec![false; model.num_views()];
        if order.len() != seen.len()
            || order
                .iter()
                .any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(invalid(format!(
                "view_order {order:?} is not a permutation of the views"
            )));
        }
        Ok(())
    }
}

/// Free encoder entries of a method.
pub fn count_parameters(method: Method, model: &JointModel, dims: &Dims) -> usize {
    let n = model.alphabet_sizes();
    match method {
        Method::ConsCmpl => n
            .iter()
            .zip(&dims.complement)
            .map(|(&ni, &le)| dims.consensus * ni + le * dims.consensus * ni)
            .sum(),
        Method::Increment => crate::incremental::count_parameters(&n, &dims.incremental),
        Method::Joint => dims.joint * n.iter().product::<usize>(),
        Method::Single => n.iter().zip(&dims.single).map(|(a, b)| a * b).sum(),
    }
}

/// Everything recorded about one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub report: EvalReport,
    /// View index for single-view rows.
    pub view: Option<usize>,
    pub gamma_index: usize,
    /// First-stage run: consensus for cons-cmpl, step 1 for increment.
    pub stage1_converged: Option<bool>,
    pub stage1_iterations: Option<usize>,
    pub stage1_max_tv: Option<f64>,
    /// Sub-runs of later stages that hit the cap, out of the total.
    pub later_unconverged: usize,
    pub later_runs: usize,
    pub diagnostics: Option<DiagnosticSummary>,
    /// Largest violation of the chain-rule identities checked for this
    /// method.
    pub identity_residual: f64,
    /// Smallest information quantity encountered (nonnegativity check).
    pub min_information: f64,
    pub error: Option<String>,
}

impl TrialOutcome {
    fn failed(
        method: Method,
        gamma: f64,
        gamma_index: usize,
        trial: usize,
        seed: u64,
        view: Option<usize>,
        e: &Error,
    ) -> Self {
        TrialOutcome {
            report: EvalReport {
                method,
                gamma,
                trial,
                seed,
                acc_sampled: f64::NAN,
                acc_map_exact: f64::NAN,
                acc_sampling_exact: f64::NAN,
                sum_nats: f64::NAN,
                step1_nats: f64::NAN,
                converged: false,
            },
            view,
            gamma_index,
            stage1_converged: None,
            stage1_iterations: None,
            stage1_max_tv: None,
            later_unconverged: 0,
            later_runs: 0,
            diagnostics: None,
            identity_residual: f64::NAN,
            min_information: f64::NAN,
            error: Some(e.to_string()),
        }
    }
}

/// Best-of-trials aggregate for one `(method, view, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub view: Option<usize>,
    pub gamma: f64,
    pub trials: usize,
    pub failed: usize,
    pub convergence_rate: f64,
    pub best_acc_sampled: f64,
    pub best_seed: u64,
    pub best_acc_map_exact: f64,
    pub best_acc_sampling_exact: f64,
    /// Relevance components of the trial with the largest total relevance.
    pub sum_nats: f64,
    pub step1_nats: f64,
    pub parameters: usize,
}

impl SummaryRow {
    pub fn label(&self) -> String {
        match self.view {
            Some(v) => format!("{}-{}", self.method, v + 1),
            None => self.method.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub dims: Dims,
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn rows(&self, method: Method) -> impl Iterator<Item = &SummaryRow> {
        self.summary.iter().filter(move |r| r.method == method)
    }

    pub fn row(
        &self,
        method: Method,
        view: Option<usize>,
        gamma_index: usize,
    ) -> Option<&SummaryRow> {
        let g = *self.config.gammas.get(gamma_index)?;
        self.summary
            .iter()
            .find(|r| r.method == method && r.view == view && r.gamma == g)
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.error.is_some()).count()
    }
}

/// Tag mixed into the base seed for the shared test set.
const TEST_SET_TAG: u64 = 0x7E57;

struct Job {
    method: Method,
    view: Option<usize>,
    gamma_index: usize,
    trial: usize,
}

/// Runs the sweep in memory. Deterministic in the config; trial order in
/// the output is `(method, view, γ, trial)` regardless of scheduling.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    let model = config.load_model()?;
    config.validate_for(&model)?;
    let dims = config.resolved_dims(&model);
    let order = config.resolved_view_order(&model);
    let test = sample_dataset(
        &model,
        config.test_size,
        derive_seed(config.seed, &[TEST_SET_TAG]),
    )?;

    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut jobs = Vec::new();
    for &method in &methods {
        let views: Vec<Option<usize>> = if method == Method::Single {
            (0..model.num_views()).map(Some).collect()
        } else {
            vec![None]
        };
        for view in views {
            for gamma_index in 0..config.gammas.len() {
                for trial in 0..config.trials {
                    jobs.push(Job {
                        method,
                        view,
                        gamma_index,
                        trial,
                    });
                }
            }
        }
    }

    let ctx = TrialContext {
        model: &model,
        config,
        dims: &dims,
        order: &order,
        test: &test,
    };
    let run = || jobs.par_iter().map(|j| ctx.run(j)).collect::<Vec<_>>();
    let trials = if config.parallel > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    let summary = summarize(&model, &dims, &trials);
    Ok(SweepResult {
        config: config.clone(),
        dims,
        trials,
        summary,
    })
}

struct TrialContext<'a> {
    model: &'a JointModel,
    config: &'a ExperimentConfig,
    dims: &'a Dims,
    order: &'a [usize],
    test: &'a Dataset,
}

impl TrialContext<'_> {
    fn seed(&self, j: &Job) -> u64 {
        let mut path = vec![j.method as u64, j.gamma_index as u64, j.trial as u64];
        path.extend(j.view.map(|v| v as u64));
        derive_seed(self.config.seed, &path)
    }

    fn run(&self, j: &Job) -> TrialOutcome {
        let gamma = self.config.gammas[j.gamma_index];
        let seed = self.seed(j);
        self.try_run(j, gamma, seed).unwrap_or_else(|e| {
            TrialOutcome::failed(j.method, gamma, j.gamma_index, j.trial, seed, j.view, &e)
        })
    }

    fn try_run(&self, j: &Job, gamma: f64, seed: u64) -> Result<TrialOutcome> {
        let model = self.model;
        let eps = self.config.epsilon;
        let solver = self.config.solver(seed);
        let mut out = TrialOutcome {
            report: EvalReport {
                method: j.method,
                gamma,
                trial: j.trial,
                seed,
                acc_sampled: 0.0,
                acc_map_exact: 0.0,
                acc_sampling_exact: 0.0,
                sum_nats: 0.0,
                step1_nats: 0.0,
                converged: false,
            },
            view: j.view,
            gamma_index: j.gamma_index,
            stage1_converged: None,
            stage1_iterations: None,
            stage1_max_tv: None,
            later_unconverged: 0,
            later_runs: 0,
            diagnostics: None,
            identity_residual: 0.0,
            min_information: f64::INFINITY,
            error: None,
        };
        let (decoder, relevance, converged) = match j.method {
            Method::ConsCmpl => {
                let gammas = vec![gamma; model.num_views()];
                let objective = ConsensusObjective::new(model, self.dims.consensus, &gammas)?;
                let cons = solve_objective(&objective, &solver)?;
                let comp = solve_complement_unchecked(
                    model,
                    &cons,
                    &self.dims.complement,
                    gamma,
                    &solver,
                )?;
                out.stage1_converged = Some(cons.converged);
                out.stage1_iterations = Some(cons.iterations);
                out.stage1_max_tv = Some(cons.max_tv());
                out.diagnostics = Some(diagnose(&objective, &cons, solver.c, eps)?);
                for v in &comp.views {
                    out.later_runs += v.runs.len();
                    out.later_unconverged += v.runs.iter().filter(|r| !r.converged).count();
                    // I(Z_c, Z_e; Y) = I(Z_c; Y) + I(Z_e; Y | Z_c) on the view's own joint.
                    let t = view_relevance_table(model, &cons, v)?;
                    let whole = t.mutual_information(&[0, 1], &[2])?;
                    let first = t.mutual_information(&[0], &[2])?;
                    out.identity_residual = out
                        .identity_residual
                        .max((whole - first - v.mi_y_given_c).abs());
                    out.min_information = out
                        .min_information
                        .min(first)
                        .min(v.mi_y_given_c)
                        .min(v.mi_x_given_c);
                }
                out.min_information = out.min_information.min(cons.mi_zy);
                let converged = cons.converged && comp.converged();
                (
                    build_decoder_cc(model, &cons, &comp, eps)?,
                    relevance_cc(&cons, &comp),
                    converged,
                )
            }
            Method::Increment => {
                let chain =
                    solve_incremental(model, &self.dims.incremental, gamma, &solver, self.order)?;
                let first = chain.steps[0].runs[0]
                    .as_ref()
                    .expect("first step is never degenerate");
                out.stage1_converged = Some(first.converged);
                out.stage1_iterations = Some(first.iterations);
                out.stage1_max_tv = Some(first.max_tv());
                let objective = ConsensusObjective::new(
                    &model.single_view(self.order[0]),
                    chain.steps[0].l,
                    &[gamma],
                )?;
                out.diagnostics = Some(diagnose(&objective, first, solver.c, eps)?);
                for step in &chain.steps[1..] {
                    out.later_runs += step.runs.len();
                    out.later_unconverged +=
                        step.runs.iter().flatten().filter(|r| !r.converged).count();
                }
                let decoder = build_decoder_inc(model, &chain, eps)?;
                let rel = relevance_inc(&chain);
                // Σ_s I(Z^(s); Y | Z_{<s}) = I(Z^(1..V); Y) on the decoder's enumerated joint.
                out.identity_residual = (rel.sum - decoder.latent_relevance(model)?).abs();
                out.min_information = chain
                    .steps
                    .iter()
                    .map(|s| s.relevance.min(s.compression))
                    .fold(f64::INFINITY, f64::min);
                (decoder, rel, chain.converged())
            }
            Method::Joint => {
                let joint = merge_views(model);
                let s = solve_ib_ba(
                    model.p_y(),
                    joint.channel(),
                    self.dims.joint,
                    gamma,
                    self.config.baseline_tol,
                    self.config.baseline_max_iter,
                    seed,
                )?;
                let decoder = build_decoder_joint(model, &s.encoder, eps)?;
                out.identity_residual = (s.mi_zy - decoder.latent_relevance(model)?).abs();
                out.min_information = s.mi_zx.min(s.mi_zy);
                (decoder, relevance_single_stage(s.mi_zy), s.converged)
            }
            Method::Single => {
                let view = j.view.expect("single-view jobs carry a view");
                let s = solve_ib_ba(
                    model.p_y(),
                    model.view(view),
                    self.dims.single[view],
                    gamma,
                    self.config.baseline_tol,
                    self.config.baseline_max_iter,
                    seed,
                )?;
                let decoder = build_decoder_single(model, view, &s.encoder, eps)?;
                out.identity_residual = (s.mi_zy - decoder.latent_relevance(model)?).abs();
                out.min_information = s.mi_zx.min(s.mi_zy);
                (decoder, relevance_single_stage(s.mi_zy), s.converged)
            }
        };
        out.report.acc_sampled = evaluate(&decoder, self.test, derive_seed(seed, &[1]))?;
        out.report.acc_map_exact = exact_expected_accuracy(&decoder, model, AccuracyMode::Map);
        out.report.acc_sampling_exact =
            exact_expected_accuracy(&decoder, model, AccuracyMode::Sampling);
        let Relevance { sum, step1 } = relevance;
        out.report.sum_nats = sum;
        out.report.step1_nats = step1;
        out.report.converged = converged;
        Ok(out)
    }
}

fn summarize(model: &JointModel, dims: &Dims, trials: &[TrialOutcome]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for chunk in trials.chunk_by(|a, b| {
        a.report.method == b.report.method && a.view == b.view && a.gamma_index == b.gamma_index
    }) {
        let first = &chunk[0];
        let ok: Vec<&TrialOutcome> = chunk.iter().filter(|t| t.error.is_none()).collect();
        let best_by = |f: fn(&EvalReport) -> f64| {
            ok.iter()
                .copied()
                .fold(None::<&TrialOutcome>, |best, t| match best {
                    Some(b) if f(&b.report) >= f(&t.report) => Some(b),
                    _ => Some(t),
                })
        };
        let sampled = best_by(|r| r.acc_sampled);
        let relevant = best_by(|r| r.sum_nats);
        let nan = f64::NAN;
        rows.push(SummaryRow {
            method: first.report.method,
            view: first.view,
            gamma: first.report.gamma,
            trials: chunk.len(),
            failed: chunk.len() - ok.len(),
            convergence_rate: chunk.iter().filter(|t| t.report.converged).count() as f64
                / chunk.len() as f64,
            best_acc_sampled: sampled.map_or(nan, |t| t.report.acc_sampled),
            best_seed: sampled.map_or(0, |t| t.report.seed),
            best_acc_map_exact: best_by(|r| r.acc_map_exact)
                .map_or(nan, |t| t.report.acc_map_exact),
            best_acc_sampling_exact: best_by(|r| r.acc_sampling_exact)
                .map_or(nan, |t| t.report.acc_sampling_exact),
            sum_nats: relevant.map_or(nan, |t| t.report.sum_nats),
            step1_nats: relevant.map_or(nan, |t| t.report.step1_nats),
            parameters: match first.view {
                Some(v) => model.view(v).rows() * dims.single[v],
                None => count_parameters(first.report.method, model, dims),
            },
        });
    }
    rows
}

/// Column documentation written as the first line of `results.csv`.
pub const RESULTS_COMMENT: &str = "# method,gamma,trial,seed: trial identity (seed reproduces the trial); acc_*: accuracy in [0,1] (sampled on the shared test set, exact MAP, exact sampling); sum_nats,step1_nats: relevance components in nats; converged: every stage reached tolerance; view: 1-based view for single-view rows";

pub fn write_results_csv<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    writeln!(out, "{RESULTS_COMMENT}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = EvalReport::HEADER.to_vec();
    header.push("view");
    w.write_record(&header)?;
    for t in &result.trials {
        let mut rec = t.report.record().to_vec();
        rec.push(t.view.map_or(String::new(), |v| (v + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_diagnostics_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "gamma",
        "trial",
        "seed",
        "view",
        "stage1_converged",
        "stage1_iterations",
        "stage1_max_tv",
        "later_unconverged",
        "later_runs",
        "monotone_pass_rate",
        "lemma3_pass_rate",
        "dual_link_max_residual",
        "Q",
        "R2",
        "gradient_ratio_max",
        "identity_residual",
        "min_information",
        "error",
    ])?;
    for t in &result.trials {
        let d = t.diagnostics.as_ref();
        w.write_record([
            t.report.method.to_string(),
            format!("{}", t.report.gamma),
            t.report.trial.to_string(),
            t.report.seed.to_string(),
            t.view.map_or(String::new(), |v| (v + 1).to_string()),
            opt(t.stage1_converged),
            opt(t.stage1_iterations),
            opt(t.stage1_max_tv.map(|x| format!("{x:e}"))),
            t.later_unconverged.to_string(),
            t.later_runs.to_string(),
            opt(d.map(|d| format!("{:.6}", d.monotone_pass_rate))),
            opt(d.map(|d| format!("{:.6}", d.lemma3_pass_rate))),
            opt(d.map(|d| format!("{:e}", d.dual_link_max_residual))),
            opt(d.and_then(|d| d.q).map(|q| format!("{q:.9}"))),
            opt(d.and_then(|d| d.r2).map(|r| format!("{r:.6}"))),
            opt(d.map(|d| format!("{:e}", d.gradient_ratio_max))),
            format!("{:e}", t.identity_residual),
            format!("{:e}", t.min_information),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    config: &'a ExperimentConfig,
    dims: &'a Dims,
    failed_trials: usize,
    rows: &'a [SummaryRow],
}

pub fn summary_json(result: &SweepResult) -> String {
    let doc = SummaryDoc {
        config: &result.config,
        dims: &result.dims,
        failed_trials: result.failures(),
        rows: &result.summary,
    };
    serde_json::to_string_pretty(&doc).expect("summary serializes")
}

pub fn write_plot_accuracy<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "gamma",
        "method",
        "best_acc_sampled",
        "best_acc_map_exact",
        "best_acc_sampling_exact",
    ])?;
    for r in &result.summary {
        w.write_record([
            format!("{}", r.gamma),
            r.label(),
            format!("{:.6}", r.best_acc_sampled),
            format!("{:.12}", r.best_acc_map_exact),
            format!("{:.12}", r.best_acc_sampling_exact),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_plot_relevance<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "method", "sum_nats", "step1_nats"])?;
    for r in result
        .summary
        .iter()
        .filter(|r| matches!(r.method, Method::ConsCmpl | Method::Increment))
    {
        w.write_record([
            format!("{}", r.gamma),
            r.label(),
            format!("{:.12}", r.sum_nats),
            format!("{:.12}", r.step1_nats),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes all artifacts into `dir`, creating it if needed.
pub fn write_artifacts(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = |name: &str| -> Result<std::io::BufWriter<fs::File>> {
        Ok(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
    };
    write_results_csv(result, file("results.csv")?)?;
    write_diagnostics_csv(result, file("diagnostics.csv")?)?;
    fs::write(dir.join("summary.json"), summary_json(result))?;
    write_plot_accuracy(result, file("plotdata_fig1a.csv")?)?;
    write_plot_relevance(result, file("plotdata_fig1b.csv")?)?;
    Ok(())
}
