//! Softmax-attention transformer whose forward pass performs EM steps.
//!
//! Each token carries one data point together with a copy of the current
//! parameter estimate. An odd layer computes posteriors by attending from the
//! data point to the per-component keys and then takes an approximate
//! logarithm of them; an even layer averages data points with those
//! posteriors as softmax scores, then refreshes `log π` and `‖μ‖²`.

use ndarray::{Array1, Array2, ArrayView2};

use super::relu_approx::{build_relu_approx_tight, ReluScalarApprox, Target};
use crate::error::{Error, Result};
use crate::params::GmmParams;
use crate::transformer::{
    attentive_pool_readout, tf_forward_with, Activation, AttnHead, Layer, Mlp, Pooling, Readout,
    Stage, TfWeights, TokenMatrix,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EmTfConfig {
    /// Largest supported data dimension.
    pub d0: usize,
    /// Largest supported component count.
    pub k0: usize,
    /// `log` is approximated on `[1/A, A]` with this `A`.
    pub log_range: f64,
    /// `x²` is approximated on `[−A, A]` with this `A`.
    pub square_range: f64,
    /// Uniform error of both approximators.
    pub delta: f64,
    /// Number of EM iterations unrolled into `2·layers` transformer layers.
    pub layers: usize,
}

impl Default for EmTfConfig {
    fn default() -> Self {
        Self {
            d0: 4,
            k0: 4,
            log_range: 1e8,
            square_range: 16.0,
            delta: 1e-4,
            layers: 10,
        }
    }
}

impl EmTfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 || self.k0 == 0 {
            return Err(Error::InvalidArgument("d0 and k0 must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
        }
        if !(self.log_range > 1.0 && self.square_range > 1.0) {
            return Err(Error::InvalidArgument("approximation ranges must exceed 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> EmLayout {
        EmLayout {
            d0: self.d0,
            k0: self.k0,
        }
    }
}

/// Row offsets of the token slots:
/// `[X̄ | log π | μ̄ | c | w | log w | π | e | 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmLayout {
    pub d0: usize,
    pub k0: usize,
}

impl EmLayout {
    pub fn x(&self) -> usize {
        0
    }
    pub fn pi_log(&self) -> usize {
        self.d0
    }
    pub fn mu(&self) -> usize {
        self.d0 + self.k0
    }
    pub fn c(&self) -> usize {
        2 * self.d0 + self.k0
    }
    pub fn w(&self) -> usize {
        self.c() + 1
    }
    pub fn w_log(&self) -> usize {
        self.w() + self.k0
    }
    pub fn pi(&self) -> usize {
        self.w_log() + self.k0
    }
    pub fn e(&self) -> usize {
        self.pi() + self.k0
    }
    pub fn one(&self) -> usize {
        self.e() + self.k0
    }
    /// `2·d0 + 5·k0 + 2`.
    pub fn dim(&self) -> usize {
        self.one() + 1
    }
}

fn check_task(layout: EmLayout, d: usize, k: usize) -> Result<()> {
    if d > layout.d0 {
        return Err(Error::Capacity {
            what: "dimension",
            got: d,
            max: layout.d0,
        });
    }
    if k > layout.k0 {
        return Err(Error::Capacity {
            what: "components",
            got: k,
            max: layout.k0,
        });
    }
    Ok(())
}

/// Encodes `K⌊N/K⌋` data points (the remainder is dropped) with the initial
/// estimate. Token `j` carries component `j mod K`.
pub fn encode_em_input(data: ArrayView2<'_, f64>, init: &GmmParams, cfg: &EmTfConfig) -> Result<TokenMatrix> {
    cfg.validate()?;
    let layout = cfg.layout();
    let (n, d) = data.dim();
    let k = init.k();
    check_task(layout, d, k)?;
    if init.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: init.dim(),
        });
    }
    if init.is_anisotropic() {
        return Err(Error::InvalidArgument("the EM construction handles isotropic mixtures only".into()));
    }
    let used = k * (n / k);
    if used == 0 {
        return Err(Error::InvalidArgument(format!("need at least K = {k} data points")));
    }
    let mut h = Array2::zeros((layout.dim(), used));
    for j in 0..used {
        let comp = j % k;
        let mut col = h.column_mut(j);
        for r in 0..d {
            col[layout.x() + r] = data[[j, r]];
        }
        let mu = init.mean(comp);
        for r in 0..d {
            col[layout.mu() + r] = mu[r];
        }
        col[layout.c()] = mu.dot(&mu);
        for (c, &p) in init.weights().iter().enumerate() {
            col[layout.pi_log() + c] = p.ln();
            col[layout.pi() + c] = p;
        }
        col[layout.e() + comp] = 1.0;
        col[layout.one()] = 1.0;
    }
    TokenMatrix::new(h)
}

/// Builder for token-wise MLPs made of independent scalar gadgets.
struct MlpBuilder {
    dim: usize,
    w1: Vec<Vec<(usize, f64)>>,
    w2: Vec<Vec<(usize, f64)>>,
}

impl MlpBuilder {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            w1: Vec::new(),
            w2: Vec::new(),
        }
    }

    fn unit(&mut self, input: Vec<(usize, f64)>, output: Vec<(usize, f64)>) {
        self.w1.push(input);
        self.w2.push(output);
    }

    /// `slot ← slot − (relu(slot) − relu(−slot))`, i.e. zero it.
    fn clear(&mut self, slot: usize) {
        self.unit(vec![(slot, 1.0)], vec![(slot, -1.0)]);
        self.unit(vec![(slot, -1.0)], vec![(slot, 1.0)]);
    }

    /// `dst += f(src)` using the pieces of `f`, the constant term through `one`.
    fn scalar(&mut self, f: &ReluScalarApprox, src: usize, dst: usize, one: usize) {
        for p in f.pieces() {
            if p.a == 0.0 {
                continue;
            }
            let mut input = Vec::with_capacity(2);
            if p.w != 0.0 {
                input.push((src, p.w));
            }
            if p.b != 0.0 {
                input.push((one, p.b));
            }
            self.unit(input, vec![(dst, p.a)]);
        }
    }

    fn build(self) -> Mlp {
        let h = self.w1.len();
        let mut w1 = Array2::zeros((h, self.dim));
        let mut w2 = Array2::zeros((self.dim, h));
        for (u, (inp, out)) in self.w1.into_iter().zip(self.w2).enumerate() {
            for (c, v) in inp {
                w1[[u, c]] += v;
            }
            for (r, v) in out {
                w2[[r, u]] += v;
            }
        }
        Mlp { w1, w2 }
    }
}

fn estep_layer(layout: EmLayout, log_f: &ReluScalarApprox) -> Layer {
    let dim = layout.dim();
    let mut head = AttnHead::zeros(dim);
    // score(key j, query i) = X_i·μ_j + log π_{j mod K} − ½‖μ_j‖²
    for r in 0..layout.d0 {
        head.q[[r, layout.x() + r]] = 1.0;
        head.k[[r, layout.mu() + r]] = 1.0;
    }
    for c in 0..layout.k0 {
        head.q[[layout.d0 + c, layout.pi_log() + c]] = 1.0;
        head.k[[layout.d0 + c, layout.e() + c]] = 1.0;
        head.v[[layout.w() + c, layout.e() + c]] = 1.0;
    }
    let row = layout.d0 + layout.k0;
    head.q[[row, layout.one()]] = 1.0;
    head.k[[row, layout.c()]] = -0.5;

    let mut mlp = MlpBuilder::new(dim);
    for c in 0..layout.k0 {
        mlp.scalar(log_f, layout.w() + c, layout.w_log() + c, layout.one());
    }
    for c in 0..layout.k0 {
        mlp.clear(layout.pi_log() + c);
        mlp.clear(layout.pi() + c);
    }
    for r in 0..layout.d0 {
        mlp.clear(layout.mu() + r);
    }
    mlp.clear(layout.c());
    Layer {
        heads: vec![head],
        activation: Activation::Softmax,
        mlp: mlp.build(),
    }
}

fn mstep_layer(layout: EmLayout, log_f: &ReluScalarApprox, sq_f: &ReluScalarApprox) -> Layer {
    let dim = layout.dim();
    let mut means = AttnHead::zeros(dim);
    for c in 0..layout.k0 {
        means.q[[c, layout.e() + c]] = 1.0;
        means.k[[c, layout.w_log() + c]] = 1.0;
    }
    for r in 0..layout.d0 {
        means.v[[layout.mu() + r, layout.x() + r]] = 1.0;
    }
    let mut weights = AttnHead::zeros(dim);
    for c in 0..layout.k0 {
        weights.v[[layout.pi() + c, layout.w() + c]] = 1.0;
    }

    let mut mlp = MlpBuilder::new(dim);
    for c in 0..layout.k0 {
        mlp.scalar(log_f, layout.pi() + c, layout.pi_log() + c, layout.one());
    }
    for r in 0..layout.d0 {
        mlp.scalar(sq_f, layout.mu() + r, layout.c(), layout.one());
    }
    for c in 0..layout.k0 {
        mlp.clear(layout.w() + c);
        mlp.clear(layout.w_log() + c);
    }
    Layer {
        heads: vec![means, weights],
        activation: Activation::Softmax,
        mlp: mlp.build(),
    }
}

/// Linear mean pooling that reads the mixing weights from the `π` slot and
/// mean `i` from the tokens of component `i`. Exact when `K` divides `N`.
pub fn em_readout(layout: EmLayout, k: usize, d: usize) -> Result<Readout> {
    check_task(layout, d, k)?;
    let dim = layout.dim();
    let rows = k + d;
    let mut v = Array2::zeros((rows, dim));
    let mut kk = Array2::zeros((rows, dim));
    let mut q = Array2::zeros((rows, k));
    for c in 0..k {
        v[[c, layout.pi() + c]] = 1.0;
        kk[[c, layout.e() + c]] = 1.0;
        q[[c, c]] = k as f64;
    }
    for r in 0..d {
        v[[k + r, layout.mu() + r]] = 1.0;
    }
    Ok(Readout {
        v,
        k: kk,
        q,
        pooling: Pooling::LinearMean,
    })
}

/// `2·layers` layers of EM plus a readout sized for `(k0, d0)`.
pub fn build_em_tf_weights(cfg: &EmTfConfig) -> Result<TfWeights> {
    cfg.validate()?;
    let layout = cfg.layout();
    let log_f = build_relu_approx_tight(Target::Log, cfg.log_range, cfg.delta)?;
    let sq_f = build_relu_approx_tight(Target::Square, cfg.square_range, cfg.delta)?;
    let e = estep_layer(layout, &log_f);
    let m = mstep_layer(layout, &log_f, &sq_f);
    let mut layers = Vec::with_capacity(2 * cfg.layers);
    for _ in 0..cfg.layers {
        layers.push(e.clone());
        layers.push(m.clone());
    }
    Ok(TfWeights {
        dim: layout.dim(),
        layers,
        readout: Some(em_readout(layout, cfg.k0, cfg.d0)?),
    })
}

#[derive(Debug, Clone)]
pub struct TfEmRun {
    pub params: GmmParams,
    /// Estimates after each even layer; `snapshots[0]` is the encoded init.
    pub snapshots: Vec<GmmParams>,
    /// Posterior slots (`N × K`) right after each E-step attention.
    pub responsibilities: Vec<Array2<f64>>,
    /// Number of tokens actually used.
    pub n_used: usize,
}

fn read_params(h: &TokenMatrix, layout: EmLayout, k: usize, d: usize) -> GmmParams {
    let a = h.as_array();
    let weights = (0..k).map(|c| a[[layout.pi() + c, 0]]).collect();
    let means = Array2::from_shape_fn((k, d), |(c, r)| a[[layout.mu() + r, c]]);
    GmmParams::from_raw(weights, means, None)
}

/// Encodes, runs the prebuilt `weights`, and reads out with the task's own
/// `(K, d)` readout. `cfg` must be the configuration the weights were built with.
pub fn run_tf_em_with(
    weights: &TfWeights,
    cfg: &EmTfConfig,
    data: ArrayView2<'_, f64>,
    init: &GmmParams,
) -> Result<TfEmRun> {
    let layout = cfg.layout();
    if weights.dim != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: weights.dim,
        });
    }
    let h0 = encode_em_input(data, init, cfg)?;
    let (k, d) = (init.k(), init.dim());
    let mut snapshots = vec![read_params(&h0, layout, k, d)];
    let mut responsibilities = Vec::new();
    let out = tf_forward_with(&h0, weights, |layer, stage, h| {
        match (layer % 2, stage) {
            (0, Stage::Attention) => {
                let a = h.as_array();
                let n = h.n_tokens();
                responsibilities.push(Array2::from_shape_fn((n, k), |(i, c)| a[[layout.w() + c, i]]));
            }
            (1, Stage::Mlp) => snapshots.push(read_params(h, layout, k, d)),
            _ => {}
        }
        Ok(())
    })?;
    let readout = em_readout(layout, k, d)?;
    let params = attentive_pool_readout(&out, &readout, k, d)?;
    Ok(TfEmRun {
        params,
        snapshots,
        responsibilities,
        n_used: out.n_tokens(),
    })
}

/// Builds the weights for `cfg` and runs them on one task.
pub fn run_tf_em(data: ArrayView2<'_, f64>, init: &GmmParams, cfg: &EmTfConfig) -> Result<TfEmRun> {
    let weights = build_em_tf_weights(cfg)?;
    run_tf_em_with(&weights, cfg, data, init)
}

/// Largest `max(‖μ̂_k − μ_k‖, |π̂_k − π_k|)` between matched components.
pub fn max_param_deviation(a: &GmmParams, b: &GmmParams) -> f64 {
    (0..a.k())
        .map(|k| {
            let diff: Array1<f64> = &a.mean(k) - &b.mean(k);
            diff.dot(&diff)
                .sqrt()
                .max((a.weights()[k] - b.weights()[k]).abs())
        })
        .fold(0.0, f64::max)
}
