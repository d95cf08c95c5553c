//! Reference IB solvers: the self-consistent (Blahut–Arimoto style)
//! iteration for one view, and the merged "giant view" that combines all
//! observations into a single product alphabet.
//!
//! The objective is `γ I(X;Z) − I(Y;Z)` throughout, matching the ADMM
//! solvers, which is the classic IB with `β = 1/γ`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{invalid, shape, Result};
use crate::prob::{derive_seed, mutual_information_raw, Channel, JointModel, ProbVector};

/// All views merged into one channel over the product alphabet. View 1 is
/// the most significant digit of the flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct JointView {
    sizes: Vec<usize>,
    channel: Channel,
    p_y: ProbVector,
}

impl JointView {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `P(x⃗ | y)` as a `Π N_i × K` channel.
    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn len(&self) -> usize {
        self.channel.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, tuple: &[usize]) -> usize {
        tuple
            .iter()
            .zip(&self.sizes)
            .fold(0, |acc, (&x, &n)| acc * n + x)
    }

    pub fn decode(&self, flat: usize) -> Vec<usize> {
        decode_flat(flat, &self.sizes)
    }

    /// The merged view as a one-view model.
    pub fn to_model(&self) -> JointModel {
        JointModel::new(self.p_y.clone(), vec![self.channel.clone()])
            .expect("merged channel conditions on the same labels")
    }
}

fn decode_flat(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (slot, &n) in out.iter_mut().zip(sizes).rev() {
        *slot = flat % n;
        flat /= n;
    }
    out
}

pub fn merge_views(model: &JointModel) -> JointView {
    let sizes = model.alphabet_sizes();
    let k = model.num_labels();
    let total: usize = sizes.iter().product();
    let mut data = vec![1.0; total * k];
    for flat in 0..total {
        let tuple = decode_flat(flat, &sizes);
        for y in 0..k {
            data[flat * k + y] = tuple
                .iter()
                .enumerate()
                .map(|(i, &x)| model.view(i).get(x, y))
                .product();
        }
    }
    JointView {
        sizes,
        channel: Channel::from_raw(total, k, data),
        p_y: model.p_y().clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IbSolution {
    /// `P(z | x)`, `L × N`.
    #[serde(skip)]
    pub encoder: Channel,
    pub gamma: f64,
    pub mi_zx: f64,
    pub mi_zy: f64,
    /// `γ I(X;Z) − I(Y;Z)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every update, for monotonicity checks.
    pub history: Vec<f64>,
    pub seed: u64,
}

/// `(γ I(X;Z) − I(Y;Z), I(X;Z), I(Y;Z))` of an encoder.
pub fn ib_objective(
    p_y: &[f64],
    channel: &Channel,
    encoder: &Channel,
    gamma: f64,
) -> Result<(f64, f64, f64)> {
    if encoder.cols() != channel.rows() {
        return Err(shape(format!(
            "encoder reads {} symbols, channel emits {}",
            encoder.cols(),
            channel.rows()
        )));
    }
    let p_x = channel.push_forward(p_y)?;
    let i_zx = mutual_information_raw(&p_x, encoder)?;
    let i_zy = mutual_information_raw(p_y, &encoder.compose(channel)?)?;
    Ok((gamma * i_zx - i_zy, i_zx, i_zy))
}

/// Self-consistent IB iteration from a random encoder. Converged when the
/// largest column total variation between successive encoders drops below
/// `tol`.
pub fn solve_ib_ba(
    p_y: &ProbVector,
    channel: &Channel,
    l: usize,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<IbSolution> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid(format!(
            "trade-off parameter must be positive, got {gamma}"
        )));
    }
    if l == 0 {
        return Err(invalid("representation size must be positive"));
    }
    if channel.cols() != p_y.len() {
        return Err(shape("channel and prior disagree on |Y|"));
    }
    let (n, k) = (channel.rows(), channel.cols());
    let py = p_y.as_slice();
    let p_x = channel.push_forward(py)?;
    // p(x, y), row-major N × K.
    let pxy: Vec<f64> = (0..n * k)
        .map(|i| channel.as_slice()[i] * py[i % k])
        .collect();
    let beta = 1.0 / gamma;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = vec![0.0; l * n];
    for x in 0..n {
        let draws: Vec<f64> = (0..l).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = draws.iter().sum();
        for z in 0..l {
            enc[z * n + x] = draws[z] / s;
        }
    }

    let objective_of =
        |enc: &[f64]| ib_objective(py, channel, &Channel::from_raw(l, n, enc.to_vec()), gamma);
    let mut history = vec![objective_of(&enc)?.0];
    let mut converged = false;
    let mut iterations = 0;
    let mut p_z = vec![0.0; l];
    let mut ln_pyz = vec![0.0; l * k];
    let mut logits = vec![0.0; l];
    while iterations < max_iter {
        iterations += 1;
        for z in 0..l {
            p_z[z] = (0..n).map(|x| p_x[x] * enc[z * n + x]).sum();
            for y in 0..k {
                let m: f64 = (0..n).map(|x| pxy[x * k + y] * enc[z * n + x]).sum();
                ln_pyz[z * k + y] = if p_z[z] > 0.0 {
                    (m / p_z[z]).ln()
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        let mut change: f64 = 0.0;
        for x in 0..n {
            if p_x[x] <= 0.0 {
                continue;
            }
            for z in 0..l {
                logits[z] = if p_z[z] > 0.0 {
                    // −β KL(p(y|x) ‖ p(y|z)) up to a z-independent term.
                    let cross: f64 = (0..k)
                        .filter(|&y| pxy[x * k + y] > 0.0)
                        .map(|y| pxy[x * k + y] / p_x[x] * ln_pyz[z * k + y])
                        .sum();
                    p_z[z].ln() + beta * cross
                } else {
                    f64::NEG_INFINITY
                };
            }
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                continue;
            }
            let s: f64 = logits.iter().map(|&a| (a - top).exp()).sum();
            let mut tv = 0.0;
            for z in 0..l {
                let v = (logits[z] - top).exp() / s;
                tv += (v - enc[z * n + x]).abs();
                enc[z * n + x] = v;
            }
            change = change.max(0.5 * tv);
        }
        history.push(objective_of(&enc)?.0);
        if change < tol {
            converged = true;
            break;
        }
    }
    let encoder = Channel::from_raw(l, n, enc);
    let (objective, mi_zx, mi_zy) = ib_objective(py, channel, &encoder, gamma)?;
    Ok(IbSolution {
        encoder,
        gamma,
        mi_zx,
        mi_zy,
        objective,
        iterations,
        converged,
        history,
        seed,
    })
}

/// Best of `restarts` runs by objective; restart `r` uses
/// `derive_seed(seed, [r])`. Ties keep the earliest restart.
#[allow(clippy::too_many_arguments)]
pub fn solve_ib_restarts(
    p_y: &ProbVector,
    channel: &Channel,
    l: usize,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
    restarts: usize,
) -> Result<IbSolution> {
    let mut best: Option<IbSolution> = None;
    for r in 0..restarts.max(1) {
        let s = solve_ib_ba(
            p_y,
            channel,
            l,
            gamma,
            tol,
            max_iter,
            derive_seed(seed, &[r as u64]),
        )?;
        if best.as_ref().is_none_or(|b| s.objective < b.objective) {
            best = Some(s);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// IB-curve points as CSV rows `gamma,i_zx,i_zy,objective,converged`.
pub fn write_ib_curve_csv<W: Write>(points: &[IbSolution], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "i_zx", "i_zy", "objective", "converged"])?;
    for p in points {
        w.write_record([
            p.gamma.to_string(),
            format!("{:e}", p.mi_zx),
            format!("{:e}", p.mi_zy),
            format!("{:e}", p.objective),
            p.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
