//! Structured linear operators tying per-view encoders to the augmented
//! variable.
//!
//! For a view with marginal `p_x` and channel `P(x|y)`, the consensus
//! operator stacks `A_z = I_L ⊗ p_xᵀ` on top of `A_{z|y} = I_L ⊗ P_{x|y}ᵀ`,
//! so that `A p = [p_z; p_{z|y}]` for a cascaded encoder `p = p_{z|x}`.
//! Operators are kept as their Kronecker factors; [`ConsensusOperator::to_dense`]
//! exists for spectra and tests.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{invalid, shape, Error, Result};
use crate::prob::{Channel, JointModel, ProbVector};

/// Singular values below this are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOperator {
    view: usize,
    l: usize,
    n: usize,
    k: usize,
    p_x: Vec<f64>,
    /// `P(x|y)`, row-major `N × K`.
    p_x_given_y: Vec<f64>,
}

impl ConsensusOperator {
    /// Operator for an explicit marginal and channel. Used directly by the
    /// complement and incremental stages, whose priors are conditional.
    pub fn new(view: usize, l: usize, p_x: Vec<f64>, channel: &Channel) -> Result<Self> {
        if l < 2 {
            return Err(invalid(format!(
                "representation size must be at least 2, got {l}"
            )));
        }
        if p_x.len() != channel.rows() {
            return Err(shape(format!(
                "marginal of length {} for a channel over {} symbols",
                p_x.len(),
                channel.rows()
            )));
        }
        Ok(Self {
            view,
            l,
            n: channel.rows(),
            k: channel.cols(),
            p_x,
            p_x_given_y: channel.as_slice().to_vec(),
        })
    }

    pub fn view(&self) -> usize {
        self.view
    }

    /// `|Z|`.
    pub fn l(&self) -> usize {
        self.l
    }

    /// `|X^(i)|`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `|Y|`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    /// Length of the encoder (input) space, `L·N`.
    pub fn input_len(&self) -> usize {
        self.l * self.n
    }

    /// Length of the augmented (output) space, `L + L·K`.
    pub fn output_len(&self) -> usize {
        self.l + self.l * self.k
    }

    pub fn apply_into(&self, p: &[f64], out: &mut [f64]) {
        let (l, n, k) = (self.l, self.n, self.k);
        debug_assert_eq!(p.len(), l * n);
        debug_assert_eq!(out.len(), l + l * k);
        out.fill(0.0);
        for z in 0..l {
            let row = &p[z * n..(z + 1) * n];
            let mut pz = 0.0;
            for (x, &v) in row.iter().enumerate() {
                pz += self.p_x[x] * v;
                let ch = &self.p_x_given_y[x * k..(x + 1) * k];
                let block = &mut out[l + z * k..l + (z + 1) * k];
                for (o, &w) in block.iter_mut().zip(ch) {
                    *o += w * v;
                }
            }
            out[z] = pz;
        }
    }

    /// `A p`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.input_len() {
            return Err(shape(format!(
                "encoder of length {} for operator with input length {}",
                p.len(),
                self.input_len()
            )));
        }
        let mut out = vec![0.0; self.output_len()];
        self.apply_into(p, &mut out);
        Ok(out)
    }

    pub fn adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        let (l, n, k) = (self.l, self.n, self.k);
        debug_assert_eq!(v.len(), l + l * k);
        debug_assert_eq!(out.len(), l * n);
        for z in 0..l {
            let vz = v[z];
            let vzy = &v[l + z * k..l + (z + 1) * k];
            for x in 0..n {
                let ch = &self.p_x_given_y[x * k..(x + 1) * k];
                let s: f64 = ch.iter().zip(vzy).map(|(a, b)| a * b).sum();
                out[z * n + x] = self.p_x[x] * vz + s;
            }
        }
    }

    /// `Aᵀ v`.
    pub fn adjoint_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.output_len() {
            return Err(shape(format!(
                "vector of length {} for operator with output length {}",
                v.len(),
                self.output_len()
            )));
        }
        let mut out = vec![0.0; self.input_len()];
        self.adjoint_into(v, &mut out);
        Ok(out)
    }

    /// Explicit `(L + L·K) × (L·N)` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (l, n, k) = (self.l, self.n, self.k);
        let mut m = DMatrix::zeros(self.output_len(), self.input_len());
        for z in 0..l {
            for x in 0..n {
                m[(z, z * n + x)] = self.p_x[x];
                for y in 0..k {
                    m[(l + z * k + y, z * n + x)] = self.p_x_given_y[x * k + y];
                }
            }
        }
        m
    }

    /// Writes the dense matrix as CSV (one matrix row per line).
    pub fn write_dense_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.to_dense();
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        for r in 0..m.nrows() {
            w.write_record((0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Consensus operator `A_i` for view `view` of `model`.
pub fn build_consensus_operator(
    model: &JointModel,
    view: usize,
    l: usize,
) -> Result<ConsensusOperator> {
    if view >= model.num_views() {
        return Err(invalid(format!(
            "view {view} out of range for a model with {} views",
            model.num_views()
        )));
    }
    let p_x = model.view_marginal(view);
    if let Some(x) = p_x.iter().position(|&m| m <= 0.0) {
        return Err(invalid(format!(
            "symbol {x} of view {} has zero marginal probability",
            view + 1
        )));
    }
    ConsensusOperator::new(view, l, p_x, model.view(view))
}

/// Extreme singular values of an operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSpectrum {
    /// Largest singular value of `A`.
    pub lambda_a: f64,
    /// Smallest nonzero singular value of `A Aᵀ` (the square of the smallest
    /// nonzero singular value of `A`).
    pub mu_aat: f64,
    pub rank: usize,
    pub rows: usize,
}

impl OperatorSpectrum {
    pub fn is_full_row_rank(&self) -> bool {
        self.rank == self.rows
    }
}

/// Spectrum of a dense matrix, requiring full row rank.
pub fn dense_spectrum(m: &DMatrix<f64>) -> Result<OperatorSpectrum> {
    let s = spectrum_on_range(m)?;
    if !s.is_full_row_rank() {
        return Err(Error::RankDeficient {
            rank: s.rank,
            rows: s.rows,
        });
    }
    Ok(s)
}

/// Spectrum of a dense matrix restricted to its range: `mu_aat` is taken
/// over the nonzero singular values, so it exists for any nonzero matrix.
pub fn spectrum_on_range(m: &DMatrix<f64>) -> Result<OperatorSpectrum> {
    let sv = m.clone().svd(false, false).singular_values;
    let lambda = sv.iter().copied().fold(0.0_f64, f64::max);
    if lambda <= RANK_TOL {
        return Err(invalid("zero operator has no spectrum"));
    }
    let nonzero: Vec<f64> = sv.iter().copied().filter(|&s| s > RANK_TOL).collect();
    let smallest = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OperatorSpectrum {
        lambda_a: lambda,
        mu_aat: smallest * smallest,
        rank: nonzero.len(),
        rows: m.nrows(),
    })
}

/// Spectrum of a consensus operator; fails with [`Error::RankDeficient`]
/// unless `A` has full row rank.
pub fn spectrum(op: &ConsensusOperator) -> Result<OperatorSpectrum> {
    dense_spectrum(&op.to_dense())
}

/// Range-restricted spectrum of a consensus operator. The stacked `p_z`
/// rows are always a `p_y`-mixture of the `p_{z|y}` rows, so consensus
/// operators are never full row rank; this variant reports the constants
/// on the range of `A`.
pub fn range_spectrum(op: &ConsensusOperator) -> Result<OperatorSpectrum> {
    spectrum_on_range(&op.to_dense())
}

/// Equivalent prior of the complement step for view `view` and consensus
/// symbol `t`.
///
/// Conditioning on `Z_c = t` turns view `view` into a single-view problem
/// with label prior `p(y|t)` and channel `p(x|y,t) = P(x|y) p(t|x) / p(t|y)`.
/// The `p_{z|y}` block of its operator is `Ã = Λ⁻¹[t] Aᵀ_{x|y}` with the
/// encoder weights `p(t|x)` folded into the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementPrior {
    view: usize,
    t: usize,
    /// Diagonal of `Λ[t]`: `p(z_c = t | y)` for every `y`.
    weights: Vec<f64>,
    p_t: f64,
    conditional: JointModel,
    operator: ConsensusOperator,
}

impl ComplementPrior {
    pub fn view(&self) -> usize {
        self.view
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `p(z_c = t)`.
    pub fn p_t(&self) -> f64 {
        self.p_t
    }

    /// Single-view model of `(Y, X^(i))` conditioned on `Z_c = t`.
    pub fn conditional_model(&self) -> &JointModel {
        &self.conditional
    }

    /// Operator of the conditional model for complement size `l_e`.
    pub fn operator(&self) -> &ConsensusOperator {
        &self.operator
    }

    /// `π_y[t] = Ã π_x[t]`, row-major `L_e × K`.
    pub fn apply(&self, pi_x: &[f64]) -> Result<Vec<f64>> {
        let full = self.operator.apply(pi_x)?;
        Ok(full[self.operator.l()..].to_vec())
    }
}

/// Builds the equivalent prior for consensus symbol `t` of view `view` from
/// the view's consensus encoder `p(z_c | x^(i))` (`L_c × N_i`). The encoder
/// is floored at `eps` first so every `p(t|y)` is at least `eps`.
pub fn build_complement_prior(
    model: &JointModel,
    consensus_encoder: &Channel,
    view: usize,
    t: usize,
    l_e: usize,
    eps: f64,
) -> Result<ComplementPrior> {
    if view >= model.num_views() {
        return Err(invalid(format!("view {view} out of range")));
    }
    let ch = model.view(view);
    let (n, k) = (ch.rows(), ch.cols());
    if consensus_encoder.cols() != n {
        return Err(shape(format!(
            "consensus encoder has {} columns, view {} has {n} symbols",
            consensus_encoder.cols(),
            view + 1
        )));
    }
    let l_c = consensus_encoder.rows();
    if t >= l_c {
        return Err(invalid(format!(
            "consensus symbol {t} out of range (|Z_c| = {l_c})"
        )));
    }
    let mut enc_t = vec![0.0; n];
    for (x, e) in enc_t.iter_mut().enumerate() {
        let col = crate::prob::floor_and_renormalize(&consensus_encoder.column(x), eps)?;
        *e = col[t];
    }
    let p_y = model.p_y().as_slice();
    let weights: Vec<f64> = (0..k)
        .map(|y| (0..n).map(|x| ch.get(x, y) * enc_t[x]).sum())
        .collect();
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::Numeric(format!(
            "p(z_c = {t} | y) vanished despite flooring"
        )));
    }
    let p_t: f64 = p_y.iter().zip(&weights).map(|(a, b)| a * b).sum();
    let prior: Vec<f64> = p_y.iter().zip(&weights).map(|(a, w)| a * w / p_t).collect();
    let mut data = vec![0.0; n * k];
    for x in 0..n {
        for y in 0..k {
            data[x * k + y] = ch.get(x, y) * enc_t[x] / weights[y];
        }
    }
    let channel = Channel::from_row_major(n, k, data)?;
    let conditional = JointModel::new(ProbVector::new(prior)?, vec![channel])?;
    let operator = build_consensus_operator(&conditional, 0, l_e)?;
    Ok(ComplementPrior {
        view,
        t,
        weights,
        p_t,
        conditional,
        operator,
    })
}
