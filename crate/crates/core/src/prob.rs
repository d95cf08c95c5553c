//! Finite-alphabet probability arithmetic.
//!
//! Every information quantity here is in nats. `0 · ln 0` is taken as 0.
//! Conditional distributions are stored as [`Channel`]s: a row-major
//! `rows × cols` table whose columns are distributions over the row
//! alphabet, one column per conditioning symbol. With `rows = |Z|` and
//! `cols = |X|` the flat storage is exactly the cascaded encoder vector
//! `[p(z1|x1) .. p(z1|xN) .. p(zL|xN)]`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

/// Default ε-floor for probability entries.
pub const DEFAULT_EPSILON: f64 = 1e-11;

/// Multiply a quantity in nats by this to get bits.
pub const NATS_TO_BITS: f64 = std::f64::consts::LOG2_E;

/// Tolerance accepted on the total mass of user-supplied distributions.
const INPUT_MASS_TOL: f64 = 1e-9;

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub(crate) fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Shannon entropy of a raw mass slice, in nats.
pub fn entropy_of(mass: &[f64]) -> f64 {
    -mass.iter().map(|&p| xlnx(p)).sum::<f64>()
}

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector {
    mass: Vec<f64>,
    floor: f64,
}

impl ProbVector {
    /// Validates and exactly renormalizes `mass`.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(invalid("empty probability vector"));
        }
        if mass.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid(
                "probability entries must be finite and nonnegative",
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > INPUT_MASS_TOL {
            return Err(invalid(format!(
                "probability vector sums to {total}, expected 1"
            )));
        }
        let mass = mass.into_iter().map(|p| p / total).collect();
        Ok(Self { mass, floor: 0.0 })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("empty alphabet"));
        }
        Ok(Self {
            mass: vec![1.0 / n as f64; n],
            floor: 0.0,
        })
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(shape(format!("index {at} outside alphabet of size {n}")));
        }
        let mut mass = vec![0.0; n];
        mass[at] = 1.0;
        Ok(Self { mass, floor: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mass
    }

    /// The ε this vector was floored at (0 if never floored).
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn get(&self, i: usize) -> f64 {
        self.mass[i]
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.mass[i]
    }
}

/// Entropy `−Σ p ln p` in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_of(p.as_slice()).max(0.0)
}

/// Total variation distance `½ Σ |p_i − q_i|`.
pub fn total_variation(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(shape(format!(
            "total variation between vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(tv_distance(p.as_slice(), q.as_slice()))
}

/// `½ ‖a − b‖₁` on raw slices of equal length.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Normalizes `raw` and raises every entry to at least `eps`, shrinking the
/// remaining entries proportionally so the total stays 1.
pub fn floor_and_renormalize(raw: &[f64], eps: f64) -> Result<ProbVector> {
    if raw.is_empty() {
        return Err(invalid("empty vector"));
    }
    if raw.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid("entries must be finite and nonnegative"));
    }
    if !(eps >= 0.0) || eps * raw.len() as f64 >= 1.0 {
        return Err(invalid(format!(
            "floor {eps} infeasible for alphabet of size {}",
            raw.len()
        )));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(invalid("cannot normalize an all-zero vector"));
    }
    let mut mass: Vec<f64> = raw.iter().map(|p| p / total).collect();
    floor_in_place(&mut mass, eps);
    Ok(ProbVector { mass, floor: eps })
}

/// In-place floor of an already normalized slice. Entries below `eps` are
/// clamped and the free entries rescaled; repeats until no free entry falls
/// under the floor.
pub(crate) fn floor_in_place(mass: &mut [f64], eps: f64) {
    if eps <= 0.0 {
        return;
    }
    let n = mass.len();
    let mut clamped = vec![false; n];
    loop {
        let mut changed = false;
        for (m, c) in mass.iter_mut().zip(clamped.iter_mut()) {
            if !*c && *m < eps {
                *c = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
        let n_clamped = clamped.iter().filter(|c| **c).count();
        let free_mass: f64 = mass
            .iter()
            .zip(&clamped)
            .filter(|(_, c)| !**c)
            .map(|(m, _)| *m)
            .sum();
        let target = 1.0 - eps * n_clamped as f64;
        let scale = if free_mass > 0.0 {
            target / free_mass
        } else {
            0.0
        };
        for (m, c) in mass.iter_mut().zip(&clamped) {
            if *c {
                *m = eps;
            } else {
                *m *= scale;
            }
        }
    }
}

/// Smallest index whose cumulative mass strictly exceeds `u`.
pub fn inverse_transform_sample(p: &ProbVector, u: f64) -> usize {
    sample_index(p.as_slice(), u)
}

pub(crate) fn sample_index(mass: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &m) in mass.iter().enumerate() {
        acc += m;
        if acc > u {
            return j;
        }
    }
    // Rounding left the cumulative sum at or below u: take the last
    // symbol that carries mass.
    mass.iter()
        .rposition(|&m| m > 0.0)
        .unwrap_or(mass.len() - 1)
}

/// A column-stochastic conditional distribution `P(row | col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Channel {
    /// Builds a channel from row-major data, validating every column.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("channel dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(shape(format!(
                "channel data has {} entries, expected {rows}×{cols}",
                data.len()
            )));
        }
        if data.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("channel entries must be finite and nonnegative"));
        }
        let mut ch = Self { rows, cols, data };
        for c in 0..cols {
            let total: f64 = (0..rows).map(|r| ch.data[r * cols + c]).sum();
            if (total - 1.0).abs() > INPUT_MASS_TOL {
                return Err(invalid(format!(
                    "channel column {c} sums to {total}, expected 1"
                )));
            }
            for r in 0..rows {
                ch.data[r * cols + c] /= total;
            }
        }
        Ok(ch)
    }

    /// Builds a channel from nested rows (`rows[r][c] = P(r | c)`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(shape("ragged channel rows"));
        }
        Self::from_row_major(n_rows, n_cols, rows.concat())
    }

    /// Builds a channel from a list of column distributions.
    pub fn from_columns(columns: &[ProbVector]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, ProbVector::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(shape("columns of unequal length"));
        }
        let mut data = vec![0.0; rows * cols];
        for (c, col) in columns.iter().enumerate() {
            for r in 0..rows {
                data[r * cols + c] = col[r];
            }
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_row_major(n, n, data)
    }

    pub fn uniform(rows: usize, cols: usize) -> Result<Self> {
        Self::from_row_major(rows, cols, vec![1.0 / rows as f64; rows * cols])
    }

    /// Wraps already-validated data without re-checking (solver internals).
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Flat row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn column_prob(&self, col: usize) -> ProbVector {
        ProbVector {
            mass: self.column(col),
            floor: 0.0,
        }
    }

    /// Nested rows, `out[r][c] = P(r | c)`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// Output marginal `Σ_c prior_c P(· | c)`.
    pub fn push_forward(&self, prior: &[f64]) -> Result<Vec<f64>> {
        if prior.len() != self.cols {
            return Err(shape(format!(
                "prior of length {} for channel with {} inputs",
                prior.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| (0..self.cols).map(|c| prior[c] * self.get(r, c)).sum())
            .collect())
    }

    /// Channel composition `self ∘ inner`: `P(r | c) = Σ_m self(r|m) inner(m|c)`.
    pub fn compose(&self, inner: &Channel) -> Result<Channel> {
        if inner.rows != self.cols {
            return Err(shape(format!(
                "cannot compose {}×{} after {}×{}",
                self.rows, self.cols, inner.rows, inner.cols
            )));
        }
        let mut data = vec![0.0; self.rows * inner.cols];
        for r in 0..self.rows {
            for m in 0..self.cols {
                let a = self.get(r, m);
                if a == 0.0 {
                    continue;
                }
                for c in 0..inner.cols {
                    data[r * inner.cols + c] += a * inner.get(m, c);
                }
            }
        }
        Ok(Channel::from_raw(self.rows, inner.cols, data))
    }
}

/// Mutual information `I(input; output)` for `input ~ prior`, in nats.
pub fn mutual_information(prior: &ProbVector, channel: &Channel) -> Result<f64> {
    mutual_information_raw(prior.as_slice(), channel)
}

pub(crate) fn mutual_information_raw(prior: &[f64], channel: &Channel) -> Result<f64> {
    let marginal = channel.push_forward(prior)?;
    let conditional: f64 = prior
        .iter()
        .enumerate()
        .map(|(c, &w)| {
            if w == 0.0 {
                0.0
            } else {
                w * entropy_of(&channel.column(c))
            }
        })
        .sum();
    Ok((entropy_of(&marginal) - conditional).max(0.0))
}

/// A dense joint probability table over several finite axes, row-major with
/// the last axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl JointTable {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let size: usize = dims.iter().product();
        if dims.is_empty() || size == 0 {
            return Err(invalid("joint table needs at least one nonempty axis"));
        }
        if data.len() != size {
            return Err(shape(format!(
                "table has {} entries, expected {size}",
                data.len()
            )));
        }
        if data.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("table entries must be finite and nonnegative"));
        }
        let total: f64 = data.iter().sum();
        if (total - 1.0).abs() > INPUT_MASS_TOL {
            return Err(invalid(format!("joint table sums to {total}, expected 1")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for a in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.dims[a + 1];
        }
        strides
    }

    /// Marginal over the listed axes, in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Result<JointTable> {
        if axes.iter().any(|&a| a >= self.dims.len()) {
            return Err(shape("marginal axis out of range"));
        }
        let strides = self.strides();
        let out_dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let mut out_strides = vec![1; axes.len()];
        for a in (0..axes.len().saturating_sub(1)).rev() {
            out_strides[a] = out_strides[a + 1] * out_dims[a + 1];
        }
        let mut out = vec![0.0; out_dims.iter().product::<usize>().max(1)];
        for (flat, &p) in self.data.iter().enumerate() {
            let mut o = 0;
            for (k, &a) in axes.iter().enumerate() {
                o += ((flat / strides[a]) % self.dims[a]) * out_strides[k];
            }
            out[o] += p;
        }
        Ok(JointTable {
            dims: if out_dims.is_empty() {
                vec![1]
            } else {
                out_dims
            },
            data: out,
        })
    }

    /// Joint entropy of the listed axes.
    pub fn entropy_of_axes(&self, axes: &[usize]) -> Result<f64> {
        if axes.is_empty() {
            return Ok(0.0);
        }
        Ok(entropy_of(&self.marginal(axes)?.data))
    }

    /// `I(A; B)` between two groups of axes.
    pub fn mutual_information(&self, a: &[usize], b: &[usize]) -> Result<f64> {
        let ab: Vec<usize> = a.iter().chain(b).copied().collect();
        Ok(
            (self.entropy_of_axes(a)? + self.entropy_of_axes(b)? - self.entropy_of_axes(&ab)?)
                .max(0.0),
        )
    }
}

/// `I(A; B | C) = Σ_c p(c) I(A; B | C = c)` for a three-axis table `(A, B, C)`.
pub fn conditional_mutual_information(table: &JointTable) -> Result<f64> {
    let dims = table.dims();
    if dims.len() != 3 {
        return Err(shape(format!(
            "expected a three-axis table, got {} axes",
            dims.len()
        )));
    }
    let (na, nb, nc) = (dims[0], dims[1], dims[2]);
    let data = table.as_slice();
    let mut total = 0.0;
    let mut slice = vec![0.0; na * nb];
    for c in 0..nc {
        let mut pc = 0.0;
        for a in 0..na {
            for b in 0..nb {
                let v = data[(a * nb + b) * nc + c];
                slice[a * nb + b] = v;
                pc += v;
            }
        }
        if pc <= 0.0 {
            continue;
        }
        let mut pa = vec![0.0; na];
        let mut pb = vec![0.0; nb];
        for a in 0..na {
            for b in 0..nb {
                let v = slice[a * nb + b] / pc;
                pa[a] += v;
                pb[b] += v;
            }
        }
        let mut mi = 0.0;
        for a in 0..na {
            for b in 0..nb {
                let v = slice[a * nb + b] / pc;
                if v > 0.0 {
                    mi += v * (v / (pa[a] * pb[b])).ln();
                }
            }
        }
        total += pc * mi.max(0.0);
    }
    Ok(total.max(0.0))
}

/// The data-generating joint: a prior over `Y` and one channel
/// `P(x^(i) | y)` per view, conditionally independent given `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    p_y: ProbVector,
    views: Vec<Channel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointModelDoc {
    p_y: Vec<f64>,
    views: Vec<Vec<Vec<f64>>>,
}

impl JointModel {
    pub fn new(p_y: ProbVector, views: Vec<Channel>) -> Result<Self> {
        if views.is_empty() {
            return Err(invalid("a joint model needs at least one view"));
        }
        for (i, v) in views.iter().enumerate() {
            if v.cols() != p_y.len() {
                return Err(shape(format!(
                    "view {} conditions on {} symbols but |Y| = {}",
                    i + 1,
                    v.cols(),
                    p_y.len()
                )));
            }
        }
        Ok(Self { p_y, views })
    }

    pub fn p_y(&self) -> &ProbVector {
        &self.p_y
    }

    pub fn views(&self) -> &[Channel] {
        &self.views
    }

    pub fn view(&self, i: usize) -> &Channel {
        &self.views[i]
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// `|Y|`.
    pub fn num_labels(&self) -> usize {
        self.p_y.len()
    }

    /// Alphabet sizes `N_i` of every view.
    pub fn alphabet_sizes(&self) -> Vec<usize> {
        self.views.iter().map(Channel::rows).collect()
    }

    /// Marginal `p(x^(i))`.
    pub fn view_marginal(&self, i: usize) -> Vec<f64> {
        self.views[i]
            .push_forward(self.p_y.as_slice())
            .expect("model invariants guarantee matching dimensions")
    }

    /// Single-view model for view `i`.
    pub fn single_view(&self, i: usize) -> JointModel {
        JointModel {
            p_y: self.p_y.clone(),
            views: vec![self.views[i].clone()],
        }
    }

    /// Copy of this model with a different label prior.
    pub fn with_prior(&self, p_y: ProbVector) -> Result<JointModel> {
        JointModel::new(p_y, self.views.clone())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: JointModelDoc = serde_json::from_str(s)?;
        let p_y = ProbVector::new(doc.p_y)?;
        let views = doc
            .views
            .iter()
            .map(|rows| Channel::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        Self::new(p_y, views)
    }

    pub fn to_json_string(&self) -> String {
        let doc = JointModelDoc {
            p_y: self.p_y.as_slice().to_vec(),
            views: self.views.iter().map(Channel::to_rows).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plain numeric document serializes")
    }
}

/// I.i.d. records `(y, x^(1), …, x^(V))` drawn from a [`JointModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Vec<usize>>,
    seed: u64,
}

impl Dataset {
    pub fn records(&self) -> &[Vec<usize>] {
        &self.records
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the records as CSV with header `y,x1,…,xV`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let views = self.records.first().map_or(0, |r| r.len() - 1);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend((1..=views).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            w.write_record(r.iter().map(usize::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`], checking every index
    /// against the model's alphabets.
    pub fn read_csv<R: Read>(model: &JointModel, input: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header = rdr.headers()?.clone();
        let expected = model.num_views() + 1;
        if header.len() != expected || header.get(0) != Some("y") {
            return Err(invalid(format!(
                "dataset header must be y,x1..x{}",
                model.num_views()
            )));
        }
        let sizes = model.alphabet_sizes();
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != expected {
                return Err(shape(format!(
                    "record has {} fields, expected {expected}",
                    row.len()
                )));
            }
            let rec = row
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<usize>()
                        .map_err(|e| invalid(format!("bad index `{f}`: {e}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            if rec[0] >= model.num_labels() {
                return Err(invalid(format!("label {} out of range", rec[0])));
            }
            for (i, (&x, &n)) in rec[1..].iter().zip(&sizes).enumerate() {
                if x >= n {
                    return Err(invalid(format!("view {} symbol {x} out of range", i + 1)));
                }
            }
            records.push(rec);
        }
        Ok(Self { records, seed })
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of
/// indices, so sub-runs get reproducible seeds regardless of scheduling.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Draws `n` i.i.d. records: `y ~ p_y`, then each view independently from
/// `P(· | y)`. Deterministic in `seed`.
pub fn sample_dataset(model: &JointModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = model.views();
    let mut records = Vec::with_capacity(n);
    let mut column = Vec::new();
    for _ in 0..n {
        let y = sample_index(model.p_y().as_slice(), rng.random::<f64>());
        let mut rec = Vec::with_capacity(views.len() + 1);
        rec.push(y);
        for ch in views {
            column.clear();
            column.extend((0..ch.rows()).map(|r| ch.get(r, y)));
            rec.push(sample_index(&column, rng.random::<f64>()));
        }
        records.push(rec);
    }
    Ok(Dataset { records, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use approx::assert_abs_diff_eq;

    fn eq16_view2() -> Channel {
        Channel::from_rows(&[vec![0.85, 0.15], vec![0.15, 0.85]]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&ProbVector::new(vec![1.0]).unwrap()), 0.0);
        let h = entropy(&ProbVector::new(vec![0.5, 0.5]).unwrap());
        assert_abs_diff_eq!(h, std::f64::consts::LN_2, epsilon = 1e-15);
        let h = entropy(&ProbVector::new(vec![0.85, 0.15]).unwrap());
        let oracle = -(0.85_f64 * 0.85_f64.ln() + 0.15 * 0.15_f64.ln());
        assert_abs_diff_eq!(h, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.422_709, epsilon = 5e-7);
    }

    #[test]
    fn mutual_information_examples() {
        let prior = ProbVector::uniform(2).unwrap();
        let same = Channel::from_rows(&[vec![0.3, 0.3], vec![0.7, 0.7]]).unwrap();
        assert_abs_diff_eq!(
            mutual_information(&prior, &same).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        let id = Channel::identity(2).unwrap();
        assert_abs_diff_eq!(
            mutual_information(&prior, &id).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        // Exhaustive sum over the 2×2 joint.
        let ch = eq16_view2();
        let mut oracle = 0.0;
        for x in 0..2 {
            let px: f64 = (0..2).map(|y| 0.5 * ch.get(x, y)).sum();
            for y in 0..2 {
                let pxy = 0.5 * ch.get(x, y);
                oracle += pxy * (pxy / (px * 0.5)).ln();
            }
        }
        let mi = mutual_information(&prior, &ch).unwrap();
        assert_abs_diff_eq!(mi, oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(mi, 0.270_438, epsilon = 5e-7);
    }

    #[test]
    fn mutual_information_rejects_mismatch() {
        let prior = ProbVector::uniform(3).unwrap();
        assert!(matches!(
            mutual_information(&prior, &eq16_view2()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conditional_mi_examples() {
        let pa = [0.3, 0.7];
        let pb = [0.6, 0.4];
        let pc = [0.2, 0.8];
        let mut data = Vec::new();
        for a in pa {
            for b in pb {
                for c in pc {
                    data.push(a * b * c);
                }
            }
        }
        let t = JointTable::new(vec![2, 2, 2], data).unwrap();
        assert_abs_diff_eq!(
            conditional_mutual_information(&t).unwrap(),
            0.0,
            epsilon = 1e-15
        );

        // A = B deterministic, C independent: I(A;B|C) = H(A).
        let mut data = vec![0.0; 8];
        for a in 0..2 {
            for c in 0..2 {
                data[(a * 2 + a) * 2 + c] = pa[a] * pc[c];
            }
        }
        let t = JointTable::new(vec![2, 2, 2], data).unwrap();
        assert_abs_diff_eq!(
            conditional_mutual_information(&t).unwrap(),
            entropy_of(&pa),
            epsilon = 1e-14
        );
    }

    #[test]
    fn conditional_mi_rejects_unnormalized() {
        let t = JointTable::new(vec![2, 2, 2], vec![0.25; 8]);
        assert!(matches!(t, Err(Error::Validation(_))));
    }

    #[test]
    fn total_variation_examples() {
        let p = ProbVector::new(vec![0.85, 0.15]).unwrap();
        let q = ProbVector::new(vec![0.75, 0.25]).unwrap();
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        let a = ProbVector::point_mass(2, 0).unwrap();
        let b = ProbVector::point_mass(2, 1).unwrap();
        assert_eq!(total_variation(&a, &b).unwrap(), 1.0);
        assert_abs_diff_eq!(total_variation(&p, &q).unwrap(), 0.10, epsilon = 1e-15);
        assert!(total_variation(&p, &ProbVector::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn floor_examples() {
        let p = floor_and_renormalize(&[0.5, 0.5], 1e-11).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = floor_and_renormalize(&[1.0, 0.0], 1e-11).unwrap();
        assert_eq!(p[1], 1e-11);
        assert_abs_diff_eq!(p[0], 1.0 - 1e-11, epsilon = 1e-16);
        let p = floor_and_renormalize(&[3.0, 1.0], 0.0).unwrap();
        assert_eq!(p.as_slice(), &[0.75, 0.25]);
        assert!(matches!(
            floor_and_renormalize(&[0.0, 0.0], 1e-11),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn floor_cascades_until_stable() {
        let p = floor_and_renormalize(&[0.98, 0.015, 0.005], 0.01).unwrap();
        assert!(p.as_slice().iter().all(|&v| v >= 0.01 - 1e-15));
        assert_abs_diff_eq!(p.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_transform_examples() {
        let half = ProbVector::uniform(2).unwrap();
        assert_eq!(inverse_transform_sample(&half, 0.0), 0);
        assert_eq!(inverse_transform_sample(&half, 0.75), 1);
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(inverse_transform_sample(&p, 0.49), 1);
    }

    #[test]
    fn sampling_degenerate_and_deterministic() {
        let model = JointModel::new(
            ProbVector::point_mass(2, 1).unwrap(),
            vec![Channel::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap()],
        )
        .unwrap();
        let d = sample_dataset(&model, 1, 3).unwrap();
        assert_eq!(d.records(), &[vec![1, 2]]);
        assert!(sample_dataset(&model, 0, 3).is_err());

        let a = sample_dataset(&model, 50, 9).unwrap();
        let b = sample_dataset(&model, 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let model = JointModel::new(
            ProbVector::uniform(2).unwrap(),
            vec![eq16_view2(), eq16_view2()],
        )
        .unwrap();
        let d = sample_dataset(&model, 20, 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"y,x1,x2\n"));
        let back = Dataset::read_csv(&model, buf.as_slice(), 1).unwrap();
        assert_eq!(back, d);
        assert!(Dataset::read_csv(&model, &b"y,x1,x2\n0,5,0\n"[..], 0).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let model = JointModel::new(ProbVector::uniform(2).unwrap(), vec![eq16_view2()]).unwrap();
        let back = JointModel::from_json_str(&model.to_json_string()).unwrap();
        assert_eq!(back, model);
        assert!(JointModel::from_json_str(r#"{"p_y":[0.5,0.5],"views":[[[0.9,0.1]]]}"#).is_err());
    }
}
