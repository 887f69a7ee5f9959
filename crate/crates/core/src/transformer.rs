//! Forward pass of a plain transformer on column tokens: multi-head attention
//! (softmax or ReLU-scaled) with residual, token-wise ReLU MLP with residual,
//! and an attentive-pooling readout.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::GmmParams;

/// A `D × N` matrix whose columns are tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix(Array2<f64>);

impl TokenMatrix {
    pub fn new(h: Array2<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::InvalidArgument("token matrix needs D, N >= 1".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("token matrix has non-finite entries".into()));
        }
        Ok(Self(h))
    }

    /// Builds tokens from row-per-sample data (`N × D`).
    pub fn from_rows(rows: ArrayView2<'_, f64>) -> Result<Self> {
        Self::new(rows.t().to_owned())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_tokens(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

mod matrix_format {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Matrix {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let m = Matrix::deserialize(d)?;
        Array2::from_shape_vec((m.rows, m.cols), m.data).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnHead {
    #[serde(with = "matrix_format")]
    pub q: Array2<f64>,
    #[serde(with = "matrix_format")]
    pub k: Array2<f64>,
    #[serde(with = "matrix_format")]
    pub v: Array2<f64>,
}

impl AttnHead {
    pub fn zeros(d: usize) -> Self {
        Self {
            q: Array2::zeros((d, d)),
            k: Array2::zeros((d, d)),
            v: Array2::zeros((d, d)),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        for m in [&self.q, &self.k, &self.v] {
            if m.dim() != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: if m.nrows() != d { m.nrows() } else { m.ncols() },
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Column softmax over keys, no length normalization.
    Softmax,
    /// Elementwise ReLU of the scores, scaled by `1/N`.
    ReluScaled,
}

/// `H ↦ H + W2 · relu(W1 · H)` with `W1: D′ × D`, `W2: D × D′`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    #[serde(with = "matrix_format")]
    pub w1: Array2<f64>,
    #[serde(with = "matrix_format")]
    pub w2: Array2<f64>,
}

impl Mlp {
    /// An MLP with no hidden units, which acts as the identity.
    pub fn identity(d: usize) -> Self {
        Self {
            w1: Array2::zeros((0, d)),
            w2: Array2::zeros((d, 0)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    fn check(&self, d: usize) -> Result<()> {
        let h = self.w1.nrows();
        if self.w1.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.w1.ncols(),
            });
        }
        if self.w2.dim() != (d, h) {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: self.w2.ncols(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub heads: Vec<AttnHead>,
    pub activation: Activation,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Softmax over tokens for each query column.
    Softmax,
    /// Plain scores averaged over tokens (`1/N`).
    LinearMean,
}

/// `O = (V_o H) · pool((K_o H)ᵀ Q_o)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    #[serde(with = "matrix_format")]
    pub v: Array2<f64>,
    #[serde(with = "matrix_format")]
    pub k: Array2<f64>,
    #[serde(with = "matrix_format")]
    pub q: Array2<f64>,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfWeights {
    /// Embedding dimension `D` shared by all layers.
    pub dim: usize,
    pub layers: Vec<Layer>,
    pub readout: Option<Readout>,
}

impl TfWeights {
    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            for h in &layer.heads {
                h.check(self.dim)?;
            }
            layer.mlp.check(self.dim)?;
        }
        if let Some(r) = &self.readout {
            if r.v.ncols() != self.dim || r.k.ncols() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: r.v.ncols(),
                });
            }
            if r.q.nrows() != r.k.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: r.k.nrows(),
                    got: r.q.nrows(),
                });
            }
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn max_heads(&self) -> usize {
        self.layers.iter().map(|l| l.heads.len()).max().unwrap_or(0)
    }

    pub fn max_hidden(&self) -> usize {
        self.layers.iter().map(|l| l.mlp.hidden()).max().unwrap_or(0)
    }

    /// `max_ℓ { max_m max(‖Q_m‖₂, ‖K_m‖₂, ‖V_m‖₂) + ‖W1‖₂ + ‖W2‖₂ }`.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                let attn = l
                    .heads
                    .iter()
                    .flat_map(|h| [&h.q, &h.k, &h.v])
                    .map(|m| operator_norm(m.view()))
                    .fold(0.0, f64::max);
                attn + operator_norm(l.mlp.w1.view()) + operator_norm(l.mlp.w2.view())
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }
}

/// Largest singular value, from the smaller Gram matrix.
pub fn operator_norm(a: ArrayView2<'_, f64>) -> f64 {
    let (r, c) = a.dim();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let gram = if r >= c { a.t().dot(&a) } else { a.dot(&a.t()) };
    let n = gram.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| gram[[i, j]]);
    let top = SymmetricEigen::new(m).eigenvalues.iter().copied().fold(0.0, f64::max);
    top.sqrt()
}

/// Stabilized softmax of a slice, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Normalizes each column of `scores` (keys × queries) according to `activation`.
fn activate_scores(scores: &mut Array2<f64>, activation: Activation) {
    let n = scores.nrows() as f64;
    match activation {
        Activation::Softmax => scores.axis_iter_mut(Axis(1)).into_par_iter().for_each(|mut col| {
            let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            col.mapv_inplace(|x| (x - m).exp());
            let s = col.sum();
            col /= s;
        }),
        Activation::ReluScaled => scores.par_mapv_inplace(|x| x.max(0.0) / n),
    }
}

/// `H + Σ_m (V_m H) · act((K_m H)ᵀ (Q_m H))`.
pub fn attention_forward(h: &TokenMatrix, heads: &[AttnHead], activation: Activation) -> Result<TokenMatrix> {
    let d = h.dim();
    let mut out = h.0.clone();
    for head in heads {
        head.check(d)?;
        if head.v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let qh = head.q.dot(&h.0);
        let kh = head.k.dot(&h.0);
        let vh = head.v.dot(&h.0);
        let mut scores = kh.t().dot(&qh);
        activate_scores(&mut scores, activation);
        out += &vh.dot(&scores);
    }
    Ok(TokenMatrix(out))
}

/// Compressed rows of `W1` and compressed columns of `W2`, skipping zeros.
struct SparseMlp {
    w1_rows: Vec<Vec<(usize, f64)>>,
    w2_cols: Vec<Vec<(usize, f64)>>,
}

impl SparseMlp {
    fn new(mlp: &Mlp) -> Self {
        let nz = |it: ndarray::ArrayView1<'_, f64>| -> Vec<(usize, f64)> {
            it.iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, &x)| (i, x))
                .collect()
        };
        Self {
            w1_rows: mlp.w1.rows().into_iter().map(nz).collect(),
            w2_cols: mlp.w2.columns().into_iter().map(nz).collect(),
        }
    }
}

/// `H + W2 · relu(W1 · H)`, token by token.
pub fn mlp_forward(h: &TokenMatrix, mlp: &Mlp) -> Result<TokenMatrix> {
    let d = h.dim();
    mlp.check(d)?;
    if mlp.hidden() == 0 {
        return Ok(h.clone());
    }
    let sparse = SparseMlp::new(mlp);
    let mut out = h.0.clone();
    Zip::from(out.columns_mut())
        .and(h.0.columns())
        .par_for_each(|mut o, x| {
            // hidden units are added to the residual one at a time, in order
            for (row, col) in sparse.w1_rows.iter().zip(&sparse.w2_cols) {
                let z: f64 = row.iter().map(|&(c, w)| w * x[c]).sum();
                if z > 0.0 {
                    for &(r, w) in col {
                        o[r] += w * z;
                    }
                }
            }
        });
    Ok(TokenMatrix(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Attention,
    Mlp,
}

/// Runs every layer, handing each intermediate state to `observe`.
/// The callback may stop the pass early by returning an error.
pub fn tf_forward_with<F>(h: &TokenMatrix, weights: &TfWeights, mut observe: F) -> Result<TokenMatrix>
where
    F: FnMut(usize, Stage, &mut TokenMatrix) -> Result<()>,
{
    if h.dim() != weights.dim {
        return Err(Error::DimensionMismatch {
            expected: weights.dim,
            got: h.dim(),
        });
    }
    let mut cur = h.clone();
    for (i, layer) in weights.layers.iter().enumerate() {
        cur = attention_forward(&cur, &layer.heads, layer.activation)?;
        observe(i, Stage::Attention, &mut cur)?;
        cur = mlp_forward(&cur, &layer.mlp)?;
        observe(i, Stage::Mlp, &mut cur)?;
    }
    Ok(cur)
}

pub fn tf_forward(h: &TokenMatrix, weights: &TfWeights) -> Result<TokenMatrix> {
    tf_forward_with(h, weights, |_, _, _| Ok(()))
}

/// The pooled matrix `O` (rows × queries).
pub fn attentive_pool(h: &TokenMatrix, readout: &Readout) -> Result<Array2<f64>> {
    if readout.v.ncols() != h.dim() || readout.k.ncols() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: readout.v.ncols(),
        });
    }
    if readout.q.nrows() != readout.k.nrows() {
        return Err(Error::DimensionMismatch {
            expected: readout.k.nrows(),
            got: readout.q.nrows(),
        });
    }
    let vh = readout.v.dot(&h.0);
    let mut scores = readout.k.dot(&h.0).t().dot(&readout.q);
    match readout.pooling {
        Pooling::Softmax => activate_scores(&mut scores, Activation::Softmax),
        Pooling::LinearMean => scores /= h.n_tokens() as f64,
    }
    Ok(vh.dot(&scores))
}

/// Decodes `O` into mixture parameters: rows `0..K` averaged across columns
/// give the weights, column `i` of rows `K..K+d` is mean `i`, and, when
/// present, column `i` of rows `K+d..K+2d` holds the scales of component `i`.
pub fn attentive_pool_readout(h: &TokenMatrix, readout: &Readout, k: usize, d: usize) -> Result<GmmParams> {
    let o = attentive_pool(h, readout)?;
    decode_pooled(o.view(), k, d)
}

pub fn decode_pooled(o: ArrayView2<'_, f64>, k: usize, d: usize) -> Result<GmmParams> {
    let (rows, cols) = o.dim();
    if cols != k {
        return Err(Error::DimensionMismatch { expected: k, got: cols });
    }
    let anisotropic = match rows {
        r if r == k + d => false,
        r if r == k + 2 * d => true,
        r => return Err(Error::DimensionMismatch { expected: k + d, got: r }),
    };
    let weights: Vec<f64> = o
        .slice(s![..k, ..])
        .mean_axis(Axis(1))
        .expect("k >= 1")
        .to_vec();
    let means = o.slice(s![k..k + d, ..]).t().to_owned();
    let scales = anisotropic.then(|| o.slice(s![k + d..k + 2 * d, ..]).t().to_owned());
    Ok(GmmParams::from_raw(weights, means, scales))
}

/// Column `j` of `H`.
pub fn token(h: &TokenMatrix, j: usize) -> Array1<f64> {
    h.0.column(j).to_owned()
}
