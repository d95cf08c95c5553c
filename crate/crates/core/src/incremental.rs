//! Incremental multi-view IB: a chain of single-view solves where step `s`
//! conditions on every representation learned before it.
//!
//! Histories `h` index the realized tuple `z_{<s}` in mixed radix with the
//! earliest step most significant. Step `s` solves one single-view problem
//! per history over the conditional model with prior `p(y|h)` and the
//! view's own channel, which is valid because views are conditionally
//! independent given `Y`.

use std::io::Write;

use serde::Serialize;

use crate::consensus::{solve, ConsensusResult, SolverConfig};
use crate::error::{invalid, Result};
use crate::prob::{derive_seed, mutual_information_raw, Channel, JointModel, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementalStep {
    pub view: usize,
    pub l: usize,
    pub n: usize,
    /// Number of conditioning histories `Π_{j<s} L_j`.
    pub histories: usize,
    /// `P(z | x, h)` at `(h * l + z) * n + x`.
    pub encoder: Vec<f64>,
    /// Sub-run per history; `None` where the history was degenerate.
    pub runs: Vec<Option<ConsensusResult>>,
    pub degenerate: Vec<bool>,
    /// `p(h, z | y)` as a `(histories * l) × K` channel, row `h * l + z`.
    #[serde(skip)]
    pub posterior: Channel,
    /// `I(Z^(s); Y | Z_{<s})`.
    pub relevance: f64,
    /// `I(Z^(s); X^(s) | Z_{<s})`.
    pub compression: f64,
}

impl IncrementalStep {
    pub fn converged(&self) -> bool {
        self.runs.iter().flatten().all(|r| r.converged)
    }

    pub fn encoder_entry(&self, h: usize, z: usize, x: usize) -> f64 {
        self.encoder[(h * self.l + z) * self.n + x]
    }

    /// Encoder slice for history `h` as an `L × N` channel.
    pub fn slice(&self, h: usize) -> Channel {
        let len = self.l * self.n;
        Channel::from_raw(
            self.l,
            self.n,
            self.encoder[h * len..(h + 1) * len].to_vec(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementalChain {
    pub order: Vec<usize>,
    pub steps: Vec<IncrementalStep>,
}

impl IncrementalChain {
    pub fn converged(&self) -> bool {
        self.steps.iter().all(IncrementalStep::converged)
    }

    pub fn degenerate_count(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.degenerate.iter().filter(|&&d| d).count())
            .sum()
    }

    /// `Σ_s I(Z^(s); Y | Z_{<s})`.
    pub fn total_relevance(&self) -> f64 {
        self.steps.iter().map(|s| s.relevance).sum()
    }

    pub fn total_compression(&self) -> f64 {
        self.steps.iter().map(|s| s.compression).sum()
    }

    /// Number of free encoder entries, `Σ_s N_s Π_{j≤s} L_j`.
    pub fn parameter_count(&self) -> usize {
        self.steps.iter().map(|s| s.encoder.len()).sum()
    }

    /// Rows `(z_1, ..., z_s, x, value)` for step `s`.
    pub fn write_step_csv<W: Write>(&self, s: usize, out: W) -> Result<()> {
        let step = self
            .steps
            .get(s)
            .ok_or_else(|| invalid(format!("step {s} out of range")))?;
        let radices: Vec<usize> = self.steps[..s].iter().map(|p| p.l).collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=s + 1).map(|j| format!("z_{j}")).collect();
        header.push("x".into());
        header.push("value".into());
        w.write_record(&header)?;
        for h in 0..step.histories {
            let tuple = decode_history(h, &radices);
            for z in 0..step.l {
                for x in 0..step.n {
                    let mut rec: Vec<String> = tuple.iter().map(usize::to_string).collect();
                    rec.push(z.to_string());
                    rec.push(x.to_string());
                    rec.push(format!("{:e}", step.encoder_entry(h, z, x)));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits a flat history index into its per-step symbols.
pub fn decode_history(mut h: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for (slot, &r) in out.iter_mut().zip(radices).rev() {
        *slot = h % r;
        h /= r;
    }
    out
}

/// Total parameter count of a chain with the given sizes, without solving.
pub fn count_parameters(alphabet_sizes: &[usize], l_per_step: &[usize]) -> usize {
    let mut hist = 1;
    alphabet_sizes
        .iter()
        .zip(l_per_step)
        .map(|(&n, &l)| {
            hist *= l;
            n * hist
        })
        .sum()
}

/// Runs the incremental chain. `l_per_view[i]` is the size of view `i`'s
/// representation; `order` is the processing order of views.
pub fn solve_incremental(
    model: &JointModel,
    l_per_view: &[usize],
    gamma: f64,
    config: &SolverConfig,
    order: &[usize],
) -> Result<IncrementalChain> {
    config.validate()?;
    let v = model.num_views();
    if l_per_view.len() != v {
        return Err(invalid(format!("{} sizes for {v} views", l_per_view.len())));
    }
    let mut seen = vec![false; v];
    if order.len() != v
        || order
            .iter()
            .any(|&i| i >= v || std::mem::replace(&mut seen[i], true))
    {
        return Err(invalid(format!(
            "view order {order:?} is not a permutation of 0..{v}"
        )));
    }
    if let Some(&l) = l_per_view.iter().find(|&&l| l == 0) {
        return Err(invalid(format!(
            "representation size must be positive, got {l}"
        )));
    }
    let p_y = model.p_y().as_slice();
    let k = p_y.len();
    // p(h | y) for the current history set, row h.
    let mut history = Channel::from_raw(1, k, vec![1.0; k]);
    let mut prev_mi = 0.0;
    let mut steps: Vec<IncrementalStep> = Vec::with_capacity(v);
    for (s, &view) in order.iter().enumerate() {
        let l = l_per_view[view];
        let ch = model.view(view);
        let n = ch.rows();
        let histories = history.rows();
        let mut encoder = vec![0.0; histories * l * n];
        let mut runs = Vec::with_capacity(histories);
        let mut degenerate = vec![false; histories];
        let mut compression = 0.0;
        let threshold = config.epsilon.powi(s as i32);
        for h in 0..histories {
            let joint: Vec<f64> = (0..k).map(|y| p_y[y] * history.get(h, y)).collect();
            let p_h: f64 = joint.iter().sum();
            let slice = &mut encoder[h * l * n..(h + 1) * l * n];
            if s > 0 && p_h < threshold {
                slice.fill(1.0 / l as f64);
                degenerate[h] = true;
                runs.push(None);
                continue;
            }
            let run = if s == 0 {
                let sub = model.single_view(view);
                solve(&sub, l, &[gamma], config)?
            } else {
                let prior = ProbVector::new(joint.iter().map(|m| m / p_h).collect())?;
                let sub = JointModel::new(prior, vec![ch.clone()])?;
                let cfg = SolverConfig {
                    seed: derive_seed(config.seed, &[s as u64, h as u64]),
                    ..*config
                };
                solve(&sub, l, &[gamma], &cfg)?
            };
            slice.copy_from_slice(&run.vars.p[0]);
            compression += p_h * run.mi_zx[0];
            runs.push(Some(run));
        }
        let mut step = IncrementalStep {
            view,
            l,
            n,
            histories,
            encoder,
            runs,
            degenerate,
            posterior: Channel::from_raw(0, k, Vec::new()),
            relevance: 0.0,
            compression,
        };
        step.posterior = posterior_from(&history, &step, ch);
        let mi = mutual_information_raw(p_y, &step.posterior)?;
        step.relevance = (mi - prev_mi).max(0.0);
        prev_mi = mi;
        history = step.posterior.clone();
        steps.push(step);
    }
    Ok(IncrementalChain {
        order: order.to_vec(),
        steps,
    })
}

/// `p(z_{≤s} | y)` after step `s`, recomputed from the chain's encoders.
pub fn posterior_update(chain: &IncrementalChain, s: usize, model: &JointModel) -> Result<Channel> {
    if s >= chain.steps.len() {
        return Err(invalid(format!("step {s} out of range")));
    }
    let k = model.num_labels();
    let history = if s == 0 {
        Channel::from_raw(1, k, vec![1.0; k])
    } else {
        posterior_update(chain, s - 1, model)?
    };
    let step = &chain.steps[s];
    Ok(posterior_from(&history, step, model.view(step.view)))
}

/// `p(h, z | y) = p(h | y) Σ_x P(x | y) P(z | x, h)`.
fn posterior_from(history: &Channel, step: &IncrementalStep, ch: &Channel) -> Channel {
    let k = ch.cols();
    let (l, n) = (step.l, step.n);
    let mut data = vec![0.0; history.rows() * l * k];
    for h in 0..history.rows() {
        for z in 0..l {
            let row = &mut data[(h * l + z) * k..(h * l + z + 1) * k];
            for (y, out) in row.iter_mut().enumerate() {
                let s: f64 = (0..n)
                    .map(|x| ch.get(x, y) * step.encoder_entry(h, z, x))
                    .sum();
                *out = history.get(h, y) * s;
            }
        }
    }
    Channel::from_raw(history.rows() * l, k, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq16() -> JointModel {
        JointModel::new(
            ProbVector::new(vec![0.5, 0.5]).unwrap(),
            vec![
                Channel::from_rows(&[vec![0.75, 0.05], vec![0.20, 0.20], vec![0.05, 0.75]])
                    .unwrap(),
                Channel::from_rows(&[vec![0.85, 0.15], vec![0.15, 0.85]]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn history_codec_is_mixed_radix() {
        assert_eq!(decode_history(0, &[]), Vec::<usize>::new());
        assert_eq!(decode_history(5, &[3, 2]), vec![2, 1]);
        assert_eq!(decode_history(7, &[2, 2, 2]), vec![1, 1, 1]);
    }

    #[test]
    fn parameter_count_formula() {
        assert_eq!(count_parameters(&[3, 2], &[3, 2]), 3 * 3 + 2 * 6);
        assert_eq!(count_parameters(&[4, 4, 4], &[2, 2, 2]), 4 * (2 + 4 + 8));
    }

    #[test]
    fn rejects_bad_order() {
        let m = eq16();
        let c = SolverConfig::default();
        assert!(solve_incremental(&m, &[3, 2], 0.3, &c, &[0, 0]).is_err());
        assert!(solve_incremental(&m, &[3, 2], 0.3, &c, &[0]).is_err());
        assert!(solve_incremental(&m, &[3], 0.3, &c, &[0, 1]).is_err());
    }

    #[test]
    fn chain_is_normalized_and_posteriors_agree() {
        let m = eq16();
        let c = SolverConfig {
            seed: 5,
            ..SolverConfig::default()
        };
        let chain = solve_incremental(&m, &[3, 2], 0.2, &c, &[0, 1]).unwrap();
        assert_eq!(chain.steps[1].histories, 3);
        assert_eq!(chain.parameter_count(), count_parameters(&[3, 2], &[3, 2]));
        for step in &chain.steps {
            for h in 0..step.histories {
                for x in 0..step.n {
                    let s: f64 = (0..step.l).map(|z| step.encoder_entry(h, z, x)).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
        for s in 0..2 {
            let p = posterior_update(&chain, s, &m).unwrap();
            assert_eq!(p, chain.steps[s].posterior);
            for y in 0..2 {
                let col: f64 = p.column(y).iter().sum();
                assert!((col - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_has_full_tuples() {
        let m = eq16();
        let chain = solve_incremental(&m, &[2, 2], 0.5, &SolverConfig::default(), &[1, 0]).unwrap();
        let mut buf = Vec::new();
        chain.write_step_csv(1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("z_1,z_2,x,value"));
        assert_eq!(lines.count(), 2 * 2 * 3);
    }
}
