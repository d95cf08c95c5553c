//! Bayes decoders, classification accuracy and relevance metrics.
//!
//! Every method ends up as a latent variable `m` (the tuple of learned
//! representations) with a conditional `p(m | x⃗)` over the full
//! observation tuple. The decoder is then
//! `p(ŷ | x⃗) = Σ_m p(y | m) p(m | x⃗)`, with `p(y | m)` computed exactly
//! from the joint model by enumeration.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{merge_views, JointView};
use crate::complement::ComplementResult;
use crate::consensus::ConsensusResult;
use crate::error::{invalid, shape, Result};
use crate::incremental::IncrementalChain;
use crate::prob::{mutual_information_raw, sample_index, Channel, Dataset, JointModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ConsCmpl,
    Increment,
    Joint,
    Single,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ConsCmpl,
        Method::Increment,
        Method::Joint,
        Method::Single,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ConsCmpl => "cons-cmpl",
            Method::Increment => "increment",
            Method::Joint => "joint",
            Method::Single => "single",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown method `{s}` (expected cons-cmpl, increment, joint or single)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    Map,
    Sampling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    method: Method,
    joint: JointView,
    k: usize,
    /// `p(ŷ | x⃗)` at `flat * K + y`.
    posterior: Vec<f64>,
    /// `p(m | y)` as an `M × K` channel.
    latent_given_y: Channel,
    /// Observation tuples whose consensus normalizer fell below `ε`.
    flagged: Vec<bool>,
    /// Latent tuples with `p(m) < ε` whose label posterior fell back to
    /// uniform.
    latent_fallbacks: usize,
}

impl Decoder {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    /// Number of observation tuples.
    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `p(ŷ | x⃗)` for an observation tuple.
    pub fn posterior(&self, x: &[usize]) -> &[f64] {
        let f = self.joint.encode(x);
        &self.posterior[f * self.k..(f + 1) * self.k]
    }

    pub fn posterior_flat(&self, flat: usize) -> &[f64] {
        &self.posterior[flat * self.k..(flat + 1) * self.k]
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn fallback_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count() + self.latent_fallbacks
    }

    /// `I(M; Y)` of the full latent tuple, by enumeration.
    pub fn latent_relevance(&self, model: &JointModel) -> Result<f64> {
        mutual_information_raw(model.p_y().as_slice(), &self.latent_given_y)
    }

    /// MAP label, ties to the lowest index.
    pub fn map_label(&self, flat: usize) -> usize {
        let p = self.posterior_flat(flat);
        let mut best = 0;
        for (y, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = y;
            }
        }
        best
    }
}

/// Assembles a decoder from `p(m | x⃗)`. `cond(x⃗, out)` fills the latent
/// conditional for one observation tuple and returns `false` if it had to
/// fall back to a uniform distribution.
fn from_latent<F>(
    method: Method,
    model: &JointModel,
    m: usize,
    eps: f64,
    mut cond: F,
) -> Result<Decoder>
where
    F: FnMut(&[usize], &mut [f64]) -> bool,
{
    let joint = merge_views(model);
    let k = model.num_labels();
    let p_y = model.p_y().as_slice();
    let total = joint.len();
    let mut latent = vec![0.0; total * m];
    let mut flagged = vec![false; total];
    for f in 0..total {
        let row = &mut latent[f * m..(f + 1) * m];
        flagged[f] = !cond(&joint.decode(f), row);
    }
    // p(m | y) = Σ_x⃗ P(x⃗ | y) p(m | x⃗).
    let mut m_given_y = vec![0.0; m * k];
    for f in 0..total {
        for y in 0..k {
            let w = joint.channel().get(f, y);
            if w == 0.0 {
                continue;
            }
            for j in 0..m {
                m_given_y[j * k + y] += w * latent[f * m + j];
            }
        }
    }
    // p(y | m), uniform where p(m) < ε.
    let mut y_given_m = vec![0.0; m * k];
    let mut latent_fallbacks = 0;
    for j in 0..m {
        let p_m: f64 = (0..k).map(|y| p_y[y] * m_given_y[j * k + y]).sum();
        if p_m < eps {
            y_given_m[j * k..(j + 1) * k].fill(1.0 / k as f64);
            latent_fallbacks += usize::from(p_m > 0.0);
        } else {
            for y in 0..k {
                y_given_m[j * k + y] = p_y[y] * m_given_y[j * k + y] / p_m;
            }
        }
    }
    let mut posterior = vec![0.0; total * k];
    for f in 0..total {
        let out = &mut posterior[f * k..(f + 1) * k];
        for j in 0..m {
            let w = latent[f * m + j];
            for y in 0..k {
                out[y] += w * y_given_m[j * k + y];
            }
        }
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    }
    Ok(Decoder {
        method,
        joint,
        k,
        posterior,
        latent_given_y: Channel::from_raw(m, k, m_given_y),
        flagged,
        latent_fallbacks,
    })
}

fn mixed_radix(mut idx: usize, radices: &[usize], out: &mut [usize]) {
    for (slot, &r) in out.iter_mut().zip(radices).rev() {
        *slot = idx % r;
        idx /= r;
    }
}

/// Consensus posterior `p(z_c | x⃗) ∝ Π_i p(z_c | x^(i))`; `false` when the
/// normalizer is below `eps` (uniform fallback).
fn consensus_posterior(encoders: &[Channel], x: &[usize], eps: f64, out: &mut [f64]) -> bool {
    for (t, o) in out.iter_mut().enumerate() {
        *o = encoders
            .iter()
            .zip(x)
            .map(|(e, &xi)| e.get(t, xi))
            .product();
    }
    let s: f64 = out.iter().sum();
    if s < eps {
        out.fill(1.0 / out.len() as f64);
        return false;
    }
    out.iter_mut().for_each(|v| *v /= s);
    true
}

/// Consensus-complement decoder: `m = (z_c, z_e^(1), …, z_e^(V))`.
pub fn build_decoder_cc(
    model: &JointModel,
    consensus: &ConsensusResult,
    complement: &ComplementResult,
    eps: f64,
) -> Result<Decoder> {
    let v = model.num_views();
    if consensus.vars.p.len() != v || complement.views.len() != v {
        return Err(shape(
            "consensus/complement results do not match the model's views",
        ));
    }
    let encoders: Vec<Channel> = (0..v).map(|i| consensus.encoder(i)).collect();
    let l_c = consensus.l;
    let l_e: Vec<usize> = complement.views.iter().map(|c| c.l_e).collect();
    let mut radices = vec![l_c];
    radices.extend(&l_e);
    let m: usize = radices.iter().product();
    let mut zc = vec![0.0; l_c];
    let mut digits = vec![0; radices.len()];
    from_latent(Method::ConsCmpl, model, m, eps, |x, out| {
        let ok = consensus_posterior(&encoders, x, eps, &mut zc);
        for (j, o) in out.iter_mut().enumerate() {
            mixed_radix(j, &radices, &mut digits);
            let t = digits[0];
            *o = zc[t]
                * complement
                    .views
                    .iter()
                    .zip(x)
                    .zip(&digits[1..])
                    .map(|((cv, &xi), &ze)| cv.encoder_entry(t, ze, xi))
                    .product::<f64>();
        }
        ok
    })
}

/// Incremental decoder: `m = (z^(1), …, z^(V))` in chain order.
pub fn build_decoder_inc(
    model: &JointModel,
    chain: &IncrementalChain,
    eps: f64,
) -> Result<Decoder> {
    if chain.steps.len() != model.num_views() {
        return Err(shape("chain length does not match the model's views"));
    }
    let radices: Vec<usize> = chain.steps.iter().map(|s| s.l).collect();
    let m: usize = radices.iter().product();
    let mut digits = vec![0; radices.len()];
    from_latent(Method::Increment, model, m, eps, |x, out| {
        for (j, o) in out.iter_mut().enumerate() {
            mixed_radix(j, &radices, &mut digits);
            let mut h = 0;
            let mut p = 1.0;
            for (step, &z) in chain.steps.iter().zip(&digits) {
                p *= step.encoder_entry(h, z, x[step.view]);
                h = h * step.l + z;
            }
            *o = p;
        }
        true
    })
}

/// Joint-view decoder from an encoder over the merged alphabet
/// (`L × Π N_i`, view 1 most significant).
pub fn build_decoder_joint(model: &JointModel, encoder: &Channel, eps: f64) -> Result<Decoder> {
    let joint = merge_views(model);
    if encoder.cols() != joint.len() {
        return Err(shape(format!(
            "joint encoder reads {} symbols, merged view has {}",
            encoder.cols(),
            joint.len()
        )));
    }
    from_latent(Method::Joint, model, encoder.rows(), eps, |x, out| {
        let f = joint.encode(x);
        for (z, o) in out.iter_mut().enumerate() {
            *o = encoder.get(z, f);
        }
        true
    })
}

/// Single-view decoder: ignores every view but `view`.
pub fn build_decoder_single(
    model: &JointModel,
    view: usize,
    encoder: &Channel,
    eps: f64,
) -> Result<Decoder> {
    if view >= model.num_views() || encoder.cols() != model.view(view).rows() {
        return Err(shape("single-view encoder does not match the model"));
    }
    from_latent(Method::Single, model, encoder.rows(), eps, |x, out| {
        for (z, o) in out.iter_mut().enumerate() {
            *o = encoder.get(z, x[view]);
        }
        true
    })
}

/// Sampled accuracy: `ŷ` drawn from the decoder posterior by inverse
/// transform sampling with one seeded uniform per record.
pub fn evaluate(decoder: &Decoder, dataset: &Dataset, seed: u64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for rec in dataset.records() {
        if rec.len() != decoder.joint.sizes().len() + 1 {
            return Err(shape("record does not match the decoder's views"));
        }
        let u: f64 = rng.random();
        let y_hat = sample_index(decoder.posterior(&rec[1..]), u);
        hits += usize::from(y_hat == rec[0]);
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Expected accuracy under the model, without sampling noise.
pub fn exact_expected_accuracy(decoder: &Decoder, model: &JointModel, mode: AccuracyMode) -> f64 {
    let p_y = model.p_y().as_slice();
    let ch = decoder.joint.channel();
    (0..decoder.len())
        .map(|f| match mode {
            AccuracyMode::Map => {
                let y = decoder.map_label(f);
                p_y[y] * ch.get(f, y)
            }
            AccuracyMode::Sampling => {
                let post = decoder.posterior_flat(f);
                (0..decoder.k)
                    .map(|y| p_y[y] * ch.get(f, y) * post[y])
                    .sum()
            }
        })
        .sum()
}

/// Relevance components: `sum` is the total relevance rate and `step1` the
/// part captured by the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Relevance {
    pub sum: f64,
    pub step1: f64,
}

/// `I(Z_c;Y) + Σ_i I(Z_e^(i);Y|Z_c)` and `I(Z_c;Y)`.
pub fn relevance_cc(consensus: &ConsensusResult, complement: &ComplementResult) -> Relevance {
    let step1 = consensus.mi_zy.max(0.0);
    Relevance {
        sum: step1
            + complement
                .views
                .iter()
                .map(|v| v.mi_y_given_c.max(0.0))
                .sum::<f64>(),
        step1,
    }
}

/// `Σ_s I(Z^(s);Y|Z_{<s})` and `I(Z^(1);Y)`.
pub fn relevance_inc(chain: &IncrementalChain) -> Relevance {
    Relevance {
        sum: chain.total_relevance(),
        step1: chain.steps.first().map_or(0.0, |s| s.relevance),
    }
}

/// One-stage methods: both components are `I(Z;Y)`.
pub fn relevance_single_stage(mi_zy: f64) -> Relevance {
    Relevance {
        sum: mi_zy,
        step1: mi_zy,
    }
}

/// One evaluated trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: Method,
    pub gamma: f64,
    pub trial: usize,
    pub seed: u64,
    pub acc_sampled: f64,
    pub acc_map_exact: f64,
    pub acc_sampling_exact: f64,
    pub sum_nats: f64,
    pub step1_nats: f64,
    pub converged: bool,
}

impl EvalReport {
    pub const HEADER: [&'static str; 10] = [
        "method",
        "gamma",
        "trial",
        "seed",
        "acc_sampled",
        "acc_map_exact",
        "acc_sampling_exact",
        "sum_nats",
        "step1_nats",
        "converged",
    ];

    pub fn record(&self) -> [String; 10] {
        [
            self.method.to_string(),
            format!("{}", self.gamma),
            self.trial.to_string(),
            self.seed.to_string(),
            format!("{:.6}", self.acc_sampled),
            format!("{:.12}", self.acc_map_exact),
            format!("{:.12}", self.acc_sampling_exact),
            format!("{:.12}", self.sum_nats),
            format!("{:.12}", self.step1_nats),
            self.converged.to_string(),
        ]
    }
}

pub fn write_reports_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EvalReport::HEADER)?;
    for r in reports {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{sample_dataset, ProbVector};

    fn eq16() -> JointModel {
        JointModel::new(
            ProbVector::uniform(2).unwrap(),
            vec![
                Channel::from_rows(&[vec![0.75, 0.05], vec![0.20, 0.20], vec![0.05, 0.75]])
                    .unwrap(),
                Channel::from_rows(&[vec![0.85, 0.15], vec![0.15, 0.85]]).unwrap(),
            ],
        )
        .unwrap()
    }

    /// Brute-force Bayes posterior `p(y | x1, x2)`.
    fn ideal(m: &JointModel, x1: usize, x2: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..2)
            .map(|y| m.p_y()[y] * m.view(0).get(x1, y) * m.view(1).get(x2, y))
            .collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("deep".parse::<Method>().is_err());
    }

    #[test]
    fn uninformative_encoder_gives_prior() {
        let m = eq16();
        let d = build_decoder_joint(&m, &Channel::uniform(4, 6).unwrap(), 1e-11).unwrap();
        for f in 0..d.len() {
            assert!((d.posterior_flat(f)[0] - 0.5).abs() < 1e-12);
        }
        assert!((exact_expected_accuracy(&d, &m, AccuracyMode::Map) - 0.5).abs() < 1e-12);
        assert!((exact_expected_accuracy(&d, &m, AccuracyMode::Sampling) - 0.5).abs() < 1e-12);
        assert!(d.latent_relevance(&m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identity_encoder_recovers_bayes_posterior() {
        let m = eq16();
        let d = build_decoder_joint(&m, &Channel::identity(6).unwrap(), 1e-11).unwrap();
        let mut map = 0.0;
        for x1 in 0..3 {
            for x2 in 0..2 {
                let want = ideal(&m, x1, x2);
                let got = d.posterior(&[x1, x2]);
                for y in 0..2 {
                    assert!((got[y] - want[y]).abs() < 1e-12);
                }
                let y = if want[1] > want[0] { 1 } else { 0 };
                map += (0..2)
                    .map(|yy| m.p_y()[yy] * m.view(0).get(x1, yy) * m.view(1).get(x2, yy))
                    .sum::<f64>()
                    * want[y];
            }
        }
        assert!((exact_expected_accuracy(&d, &m, AccuracyMode::Map) - map).abs() < 1e-12);
        assert!(
            exact_expected_accuracy(&d, &m, AccuracyMode::Map)
                >= exact_expected_accuracy(&d, &m, AccuracyMode::Sampling)
        );
    }

    #[test]
    fn single_view_decoder_ignores_other_views() {
        let m = eq16();
        let d = build_decoder_single(&m, 1, &Channel::identity(2).unwrap(), 1e-11).unwrap();
        for x1 in 0..3 {
            assert_eq!(d.posterior(&[x1, 0]), d.posterior(&[0, 0]));
        }
        assert!((d.posterior(&[0, 0])[0] - 0.85).abs() < 1e-12);
    }

    #[test]
    fn sampled_accuracy_is_reproducible_and_close() {
        let m = eq16();
        let d = build_decoder_joint(&m, &Channel::identity(6).unwrap(), 1e-11).unwrap();
        let data = sample_dataset(&m, 10_000, 3).unwrap();
        let a = evaluate(&d, &data, 9).unwrap();
        assert_eq!(a, evaluate(&d, &data, 9).unwrap());
        let exact = exact_expected_accuracy(&d, &m, AccuracyMode::Sampling);
        let sd = (exact * (1.0 - exact) / 10_000.0).sqrt();
        assert!((a - exact).abs() < 4.0 * sd, "{a} vs {exact}");
    }

    #[test]
    fn report_row_matches_header() {
        let r = EvalReport {
            method: Method::Joint,
            gamma: 0.3,
            trial: 0,
            seed: 1,
            acc_sampled: 0.5,
            acc_map_exact: 0.5,
            acc_sampling_exact: 0.5,
            sum_nats: 0.0,
            step1_nats: 0.0,
            converged: true,
        };
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,gamma,trial,seed,acc_sampled"));
        assert!(text.lines().nth(1).unwrap().starts_with("joint,0.3,0,1,"));
    }
}
