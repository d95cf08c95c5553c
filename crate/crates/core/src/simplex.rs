//! Products of ε-floored simplices and a projected-gradient minimizer over
//! them.
//!
//! Both ADMM subproblems are smooth problems over a product of simplices
//! `{x ≥ ε, Σ x = 1}`. They are solved with projected gradient steps whose
//! trial length is a Barzilai–Borwein estimate, shortened by halving until
//! the Armijo condition holds along the projection arc. Objectives that
//! supply a Hessian are instead minimized by an active-set projected Newton
//! method, which falls back to the gradient step whenever the reduced
//! Hessian gives no descent direction.

use nalgebra::{DMatrix, DVector};

/// Index groups, each of which must be a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexLayout {
    groups: Vec<Vec<usize>>,
    len: usize,
}

impl SimplexLayout {
    pub fn new(groups: Vec<Vec<usize>>, len: usize) -> Self {
        debug_assert!(groups.iter().flatten().all(|&i| i < len));
        Self { groups, len }
    }

    /// Columns of a row-major `rows × cols` column-stochastic table.
    pub fn columns(rows: usize, cols: usize) -> Self {
        let groups = (0..cols)
            .map(|c| (0..rows).map(|r| r * cols + c).collect())
            .collect();
        Self::new(groups, rows * cols)
    }

    /// The augmented-variable layout `[p_z (L); p_{z|y} (L×K row-major)]`.
    pub fn augmented(l: usize, k: usize) -> Self {
        let mut groups = vec![(0..l).collect::<Vec<_>>()];
        groups.extend((0..k).map(|y| (0..l).map(|z| l + z * k + y).collect()));
        Self::new(groups, l + l * k)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Euclidean projection of `x` onto the floored product set, in place.
    pub fn project(&self, x: &mut [f64], eps: f64) {
        let mut buf = Vec::new();
        for g in &self.groups {
            buf.clear();
            buf.extend(g.iter().map(|&i| x[i]));
            project_floored_simplex(&mut buf, eps);
            for (&i, &v) in g.iter().zip(&buf) {
                x[i] = v;
            }
        }
    }

    /// True when every group is a distribution with entries ≥ `eps`
    /// (within `tol`).
    pub fn is_feasible(&self, x: &[f64], eps: f64, tol: f64) -> bool {
        self.groups.iter().all(|g| {
            let s: f64 = g.iter().map(|&i| x[i]).sum();
            (s - 1.0).abs() <= tol && g.iter().all(|&i| x[i] >= eps - tol)
        })
    }
}

/// Projects `v` onto `{x : x_i ≥ eps, Σ x_i = 1}`.
pub fn project_floored_simplex(v: &mut [f64], eps: f64) {
    let n = v.len();
    let radius = 1.0 - eps * n as f64;
    debug_assert!(radius > 0.0, "floor too large for the alphabet");
    for x in v.iter_mut() {
        *x -= eps;
    }
    project_simplex(v, radius);
    for x in v.iter_mut() {
        *x += eps;
    }
}

/// Projection onto `{x ≥ 0, Σ x = radius}` by the sort-and-threshold rule.
fn project_simplex(v: &mut [f64], radius: f64) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    // Remove the rounding drift left by the threshold.
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        let scale = radius / s;
        for x in v.iter_mut() {
            *x *= scale;
        }
    }
}

/// A smooth objective evaluated together with its gradient.
pub trait SmoothObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Writes the Hessian into `h` and returns true, or returns false when
    /// no Hessian is available. With a Hessian the minimizer takes Newton
    /// steps on the free coordinates.
    fn hessian(&self, _x: &[f64], _h: &mut DMatrix<f64>) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub max_steps: usize,
    /// Tolerance on the unit-step gradient-mapping norm.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_steps: 500,
            tol: 1e-9,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOutcome {
    pub steps: usize,
    pub objective: f64,
    pub mapping_norm: f64,
    pub converged: bool,
    /// Line search could not find a non-increasing step.
    pub stalled: bool,
}

/// `‖x − P(x − g)‖₂`, zero exactly at stationary points.
pub fn gradient_mapping_norm(layout: &SimplexLayout, eps: f64, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    layout.project(&mut y, eps);
    x.iter()
        .zip(&y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e12;
const MAX_HALVINGS: usize = 60;

/// Minimizes `objective` over the floored simplex product starting from `x`
/// (projected first). `x` is overwritten with the final iterate; every
/// accepted step satisfies the Armijo condition, so the objective never
/// rises above its value at the projected start beyond rounding.
pub fn minimize<O: SmoothObjective>(
    objective: &O,
    layout: &SimplexLayout,
    eps: f64,
    x: &mut [f64],
    opts: &InnerOptions,
) -> InnerOutcome {
    let n = x.len();
    debug_assert_eq!(n, layout.len());
    if !layout.is_feasible(x, eps, 1e-13) {
        layout.project(x, eps);
    }
    let mut g = vec![0.0; n];
    let mut f = objective.value_and_gradient(x, &mut g);
    let mut hess = DMatrix::zeros(n, n);
    let newton = objective.hessian(x, &mut hess);

    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    let g_inf = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut alpha = if g_inf > 0.0 {
        (1.0 / g_inf).clamp(MIN_STEP, MAX_STEP)
    } else {
        1.0
    };
    let mut mapping = gradient_mapping_norm(layout, eps, x, &g);
    let mut steps = 0;
    let mut stalled = false;

    while mapping >= opts.tol && steps < opts.max_steps {
        let mut accepted = None;
        if newton {
            if let Some(d) = newton_direction(layout, eps, x, &g, &hess) {
                accepted =
                    newton_line_search(objective, layout, eps, x, f, &g, &d, opts, &mut trial);
            }
        }
        if accepted.is_none() {
            accepted = gradient_step(objective, layout, eps, x, f, &g, alpha, opts, &mut trial);
        }
        if accepted.is_none() {
            stalled = true;
            break;
        }
        let f_trial = objective.value_and_gradient(&trial, &mut g_new);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = trial[i] - x[i];
            let yv = g_new[i] - g[i];
            ss += s * s;
            sy += s * yv;
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(MIN_STEP, MAX_STEP)
        } else {
            (alpha * 4.0).min(MAX_STEP)
        };
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        f = f_trial;
        if newton {
            objective.hessian(x, &mut hess);
        }
        steps += 1;
        mapping = gradient_mapping_norm(layout, eps, x, &g);
    }

    InnerOutcome {
        steps,
        objective: f,
        mapping_norm: mapping,
        converged: mapping < opts.tol,
        stalled,
    }
}

/// Rounding allowance for Armijo tests near a minimizer, where the
/// predicted decrease falls below the resolution of `f`.
fn rounding_slack(f: f64) -> f64 {
    8.0 * f64::EPSILON * (1.0 + f.abs())
}

/// Projected-gradient step with trial length `alpha`, halved until the
/// Armijo condition holds. Writes the accepted point into `trial`.
#[allow(clippy::too_many_arguments)]
fn gradient_step<O: SmoothObjective>(
    objective: &O,
    layout: &SimplexLayout,
    eps: f64,
    x: &[f64],
    f: f64,
    g: &[f64],
    alpha: f64,
    opts: &InnerOptions,
    trial: &mut [f64],
) -> Option<f64> {
    let n = x.len();
    let mut d: Vec<f64> = (0..n).map(|i| x[i] - alpha * g[i]).collect();
    layout.project(&mut d, eps);
    for i in 0..n {
        d[i] -= x[i];
    }
    let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
    if !(gd < 0.0) {
        return None;
    }
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        for i in 0..n {
            trial[i] = x[i] + t * d[i];
        }
        let f_trial = objective.value(trial);
        if f_trial <= f + opts.armijo * t * gd {
            return Some(f_trial);
        }
        t *= 0.5;
    }
    None
}

/// Newton direction on the coordinates above the floor, with one equality
/// constraint per group. Floor coordinates whose multiplier has the wrong
/// sign are released and the system is re-solved. Returns `None` when the
/// reduced system is singular or the direction is not a descent direction.
fn newton_direction(
    layout: &SimplexLayout,
    eps: f64,
    x: &[f64],
    g: &[f64],
    h: &DMatrix<f64>,
) -> Option<Vec<f64>> {
    let n = x.len();
    let groups = layout.groups();
    let mut group_of = vec![usize::MAX; n];
    for (gi, members) in groups.iter().enumerate() {
        for &i in members {
            group_of[i] = gi;
        }
    }
    let floor_tol = eps * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let mut free: Vec<bool> = x.iter().map(|&v| v > floor_tol).collect();
    let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);

    for _ in 0..=n {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let (m, ng) = (idx.len(), groups.len());
        let mut kkt = DMatrix::zeros(m + ng, m + ng);
        let mut rhs = DVector::zeros(m + ng);
        let mut has_free = vec![false; ng];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            rhs[a] = -g[i];
            let gi = group_of[i];
            if gi != usize::MAX {
                kkt[(a, m + gi)] = 1.0;
                kkt[(m + gi, a)] = 1.0;
                has_free[gi] = true;
            }
        }
        for (gi, &hf) in has_free.iter().enumerate() {
            if !hf {
                kkt[(m + gi, m + gi)] = 1.0;
            }
        }
        let sol = kkt.lu().solve(&rhs)?;
        let mut d = vec![0.0; n];
        for (a, &i) in idx.iter().enumerate() {
            d[i] = sol[a];
        }
        if d.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // Multiplier of the floor constraint at each fixed coordinate.
        let mut changed = false;
        for i in 0..n {
            if free[i] || group_of[i] == usize::MAX {
                continue;
            }
            let hd: f64 = (0..n).map(|j| h[(i, j)] * d[j]).sum();
            let mu = g[i] + hd + sol[m + group_of[i]];
            if mu < -1e-12 * scale {
                free[i] = true;
                changed = true;
            }
        }
        if !changed {
            let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            return (gd < 0.0).then_some(d);
        }
    }
    None
}

/// Backtracking along a Newton direction, capped so the floor is not
/// crossed. Writes the accepted point into `trial`.
#[allow(clippy::too_many_arguments)]
fn newton_line_search<O: SmoothObjective>(
    objective: &O,
    layout: &SimplexLayout,
    eps: f64,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    opts: &InnerOptions,
    trial: &mut [f64],
) -> Option<f64> {
    let n = x.len();
    let gd: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
    let mut t_max = f64::INFINITY;
    for i in 0..n {
        if d[i] < 0.0 {
            t_max = t_max.min((x[i] - eps) / -d[i]);
        }
    }
    let mut t = t_max.min(1.0);
    if !(t > 0.0) {
        return None;
    }
    let slack = rounding_slack(f);
    for _ in 0..MAX_HALVINGS {
        for i in 0..n {
            trial[i] = (x[i] + t * d[i]).max(eps);
        }
        layout.project(trial, eps);
        let f_trial = objective.value(trial);
        if f_trial <= f + opts.armijo * t * gd + slack {
            return Some(f_trial);
        }
        t *= 0.5;
    }
    None
}
