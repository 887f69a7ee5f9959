//! ReLU-attention transformer whose forward pass performs unnormalized
//! tensor power iteration `v ← T(I, v, v)`.
//!
//! There is one token per coordinate. Token `i` stores the slices
//! `T[:, i, m]` for every `m`, a copy of the current vector `v`, the
//! indicator `e_i`, a constant one and the dimension `d`. Two layers make
//! one iteration: the first writes `d·v_i` into token `i`, the second sums
//! `v_j v_m T[:, j, m]` over keys `j` and heads `m` into a scratch slot,
//! and its MLP moves the scratch slot over `v`.
//!
//! The MLP clears `v` before adding the new value, so the swap is exact in
//! floating point even when the iterates shrink by many orders of magnitude.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::tensor::SymTensor3;
use crate::transformer::{tf_forward_with, Activation, AttnHead, Layer, Mlp, Stage, TfWeights, TokenMatrix};

/// Slot magnitude beyond which iteration is aborted.
pub const OVERFLOW_LIMIT: f64 = 1e100;

/// Row offsets: `[t̄ (d0²) | v̄ (d0) | e (d0) | 1 | d | d·v_i | v̄′ (d0)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorLayout {
    pub d0: usize,
}

impl TensorLayout {
    /// Start of block `m`, which holds `T[:, i, m]` in token `i`.
    pub fn t(&self, m: usize) -> usize {
        m * self.d0
    }
    pub fn v(&self) -> usize {
        self.d0 * self.d0
    }
    pub fn e(&self) -> usize {
        self.v() + self.d0
    }
    pub fn one(&self) -> usize {
        self.e() + self.d0
    }
    pub fn dim_slot(&self) -> usize {
        self.one() + 1
    }
    pub fn dv(&self) -> usize {
        self.dim_slot() + 1
    }
    /// Scratch copy of the next iterate.
    pub fn next(&self) -> usize {
        self.dv() + 1
    }
    /// `d0² + 3·d0 + 3`.
    pub fn dim(&self) -> usize {
        self.next() + self.d0
    }
}

pub fn encode_tensor_input(t: &SymTensor3, v0: &Array1<f64>, d0: usize) -> Result<TokenMatrix> {
    let d = t.dim();
    if d > d0 {
        return Err(Error::Capacity {
            what: "dimension",
            got: d,
            max: d0,
        });
    }
    if d == 0 {
        return Err(Error::InvalidArgument("empty tensor".into()));
    }
    if v0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v0.len(),
        });
    }
    let l = TensorLayout { d0 };
    let mut h = Array2::zeros((l.dim(), d));
    for i in 0..d {
        let mut col = h.column_mut(i);
        for m in 0..d {
            for r in 0..d {
                col[l.t(m) + r] = t.get(r, i, m);
            }
        }
        for r in 0..d {
            col[l.v() + r] = v0[r];
        }
        col[l.e() + i] = 1.0;
        col[l.one()] = 1.0;
        col[l.dim_slot()] = d as f64;
    }
    TokenMatrix::new(h)
}

/// Recovers `(T, v)` from an encoded input.
pub fn decode_tensor_input(h: &TokenMatrix, d0: usize) -> Result<(SymTensor3, Array1<f64>)> {
    let l = TensorLayout { d0 };
    if h.dim() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            got: h.dim(),
        });
    }
    let a = h.as_array();
    let d = h.n_tokens();
    let t = SymTensor3::from_fn(d, |r, i, m| a[[l.t(m) + r, i]]);
    let v = Array1::from_shape_fn(d, |r| a[[l.v() + r, 0]]);
    Ok((t, v))
}

/// `(Q, K, V)` and `(−Q, K, −V)`: under `relu` they sum to a linear head.
fn paired(head: AttnHead) -> [AttnHead; 2] {
    let neg = AttnHead {
        q: -&head.q,
        k: head.k.clone(),
        v: -&head.v,
    };
    [head, neg]
}

pub fn build_tensor_power_tf(d0: usize, iterations: usize) -> Result<TfWeights> {
    if d0 == 0 {
        return Err(Error::InvalidArgument("d0 must be at least 1".into()));
    }
    let l = TensorLayout { d0 };
    let dim = l.dim();

    // score(key j, query i) = ⟨v̄, e_i⟩ = v_i, value d → slot d·v_i
    let mut scale = AttnHead::zeros(dim);
    for r in 0..d0 {
        scale.q[[r, l.e() + r]] = 1.0;
        scale.k[[r, l.v() + r]] = 1.0;
    }
    scale.v[[l.dv(), l.dim_slot()]] = 1.0;
    let layer_a = Layer {
        heads: paired(scale).to_vec(),
        activation: Activation::ReluScaled,
        mlp: Mlp::identity(dim),
    };

    let mut heads = Vec::with_capacity(2 * d0);
    for m in 0..d0 {
        // score(key j, query i) = v_m · d·v_j, value T[:, j, m] → v̄′
        let mut h = AttnHead::zeros(dim);
        h.q[[0, l.v() + m]] = 1.0;
        h.k[[0, l.dv()]] = 1.0;
        for r in 0..d0 {
            h.v[[l.next() + r, l.t(m) + r]] = 1.0;
        }
        heads.extend(paired(h));
    }
    // relu(x) − relu(−x) = x: first remove v̄, then move v̄′ into v̄, then clear d·v_i
    let hidden = 4 * d0 + 2;
    let mut w1 = Array2::zeros((hidden, dim));
    let mut w2 = Array2::zeros((dim, hidden));
    for r in 0..d0 {
        let (v, n) = (l.v() + r, l.next() + r);
        w1[[2 * r, v]] = 1.0;
        w1[[2 * r + 1, v]] = -1.0;
        w2[[v, 2 * r]] = -1.0;
        w2[[v, 2 * r + 1]] = 1.0;
        let u = 2 * d0 + 2 * r;
        w1[[u, n]] = 1.0;
        w1[[u + 1, n]] = -1.0;
        for (row, sign) in [(v, 1.0), (n, -1.0)] {
            w2[[row, u]] = sign;
            w2[[row, u + 1]] = -sign;
        }
    }
    w1[[4 * d0, l.dv()]] = 1.0;
    w1[[4 * d0 + 1, l.dv()]] = -1.0;
    w2[[l.dv(), 4 * d0]] = -1.0;
    w2[[l.dv(), 4 * d0 + 1]] = 1.0;
    let layer_b = Layer {
        heads,
        activation: Activation::ReluScaled,
        mlp: Mlp { w1, w2 },
    };

    let mut layers = Vec::with_capacity(2 * iterations);
    for _ in 0..iterations {
        layers.push(layer_a.clone());
        layers.push(layer_b.clone());
    }
    Ok(TfWeights {
        dim,
        layers,
        readout: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerMode {
    /// Raw iterates, growing cubically.
    #[default]
    Plain,
    /// The vector slot is rescaled to unit norm after each iteration.
    Normalized,
}

/// Runs prebuilt weights (with `d0` matching) and returns `v⁽¹⁾ … v⁽ᴸ⁾`.
pub fn run_tf_tensor_power_with(
    weights: &TfWeights,
    d0: usize,
    t: &SymTensor3,
    v0: &Array1<f64>,
    mode: PowerMode,
) -> Result<Vec<Array1<f64>>> {
    let l = TensorLayout { d0 };
    if weights.dim != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            got: weights.dim,
        });
    }
    let h0 = encode_tensor_input(t, v0, d0)?;
    let d = t.dim();
    let mut iterates = Vec::with_capacity(weights.n_layers() / 2);
    tf_forward_with(&h0, weights, |layer, stage, h| {
        let worst = h.max_abs();
        if !(worst <= OVERFLOW_LIMIT) {
            return Err(Error::Overflow { value: worst });
        }
        if layer % 2 == 1 && stage == Stage::Mlp {
            if mode == PowerMode::Normalized {
                let a = h.as_array_mut();
                let v: Array1<f64> = a.slice(ndarray::s![l.v()..l.v() + d, 0]).to_owned();
                let norm = v.dot(&v).sqrt();
                if norm > 0.0 {
                    for mut col in a.columns_mut() {
                        for r in 0..d {
                            col[l.v() + r] = v[r] / norm;
                        }
                    }
                }
            }
            let a = h.as_array();
            iterates.push(Array1::from_shape_fn(d, |r| a[[l.v() + r, 0]]));
        }
        Ok(())
    })?;
    Ok(iterates)
}

pub fn run_tf_tensor_power(
    t: &SymTensor3,
    v0: &Array1<f64>,
    d0: usize,
    iterations: usize,
    mode: PowerMode,
) -> Result<Vec<Array1<f64>>> {
    let weights = build_tensor_power_tf(d0, iterations)?;
    run_tf_tensor_power_with(&weights, d0, t, v0, mode)
}

/// `max_ℓ ‖a_ℓ − b_ℓ‖ / ‖b_ℓ‖` (absolute where `b_ℓ = 0`).
pub fn max_relative_deviation(a: &[Array1<f64>], b: &[Array1<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = x - y;
            let num = diff.dot(&diff).sqrt();
            let den = y.dot(y).sqrt();
            if den > 0.0 {
                num / den
            } else {
                num
            }
        })
        .fold(if a.len() == b.len() { 0.0 } else { f64::INFINITY }, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;
    use ndarray::array;
    use rand::Rng;

    fn random_symmetric(d: usize, rng: &mut impl Rng) -> SymTensor3 {
        let raw = SymTensor3::from_fn(d, |_, _, _| rng.random_range(-1.0..1.0));
        SymTensor3::from_fn(d, |i, j, m| {
            (raw.get(i, j, m)
                + raw.get(i, m, j)
                + raw.get(j, i, m)
                + raw.get(j, m, i)
                + raw.get(m, i, j)
                + raw.get(m, j, i))
                / 6.0
        })
    }

    fn oracle(t: &SymTensor3, v0: &Array1<f64>, steps: usize) -> Vec<Array1<f64>> {
        let d = t.dim();
        let mut v = v0.clone();
        let mut out = Vec::new();
        for _ in 0..steps {
            let mut next = Array1::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    for m in 0..d {
                        next[i] += t.get(i, j, m) * v[j] * v[m];
                    }
                }
            }
            v = next;
            out.push(v.clone());
        }
        out
    }

    #[test]
    fn layout_size_and_head_count() {
        assert_eq!(TensorLayout { d0: 3 }.dim(), 9 + 9 + 3);
        let w = build_tensor_power_tf(3, 2).unwrap();
        assert_eq!(w.n_layers(), 4);
        assert_eq!(w.max_heads(), 2 * 3);
    }

    #[test]
    fn encoding_round_trip_and_padding() {
        let mut rng = task_rng(1, 0);
        let t = random_symmetric(2, &mut rng);
        let v = array![0.3, -0.7];
        let h = encode_tensor_input(&t, &v, 3).unwrap();
        assert_eq!(h.n_tokens(), 2);
        let l = TensorLayout { d0: 3 };
        for i in 0..2 {
            for m in 0..3 {
                assert_eq!(h.as_array()[[l.t(m) + 2, i]], 0.0);
            }
            for r in 0..3 {
                assert_eq!(h.as_array()[[l.t(2) + r, i]], 0.0);
            }
        }
        let (back, bv) = decode_tensor_input(&h, 3).unwrap();
        assert_eq!(back, t);
        assert_eq!(bv, v);
        assert!(matches!(
            encode_tensor_input(&random_symmetric(4, &mut rng), &Array1::zeros(4), 3),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn diagonal_tensor_first_iterate() {
        let e = |i: usize| Array1::from_shape_fn(3, |r| if r == i { 1.0 } else { 0.0 });
        let (e0, e1, e2) = (e(0), e(1), e(2));
        let t = SymTensor3::from_rank_one(&[(2.0, e0.view()), (-1.0, e1.view()), (0.5, e2.view())]).unwrap();
        let it = run_tf_tensor_power(&t, &array![1.0, 1.0, 1.0], 3, 1, PowerMode::Plain).unwrap();
        assert_eq!(it[0].to_vec(), vec![2.0, -1.0, 0.5]);
    }

    #[test]
    fn shrinking_iterates_keep_relative_accuracy() {
        let mut rng = task_rng(5, 0);
        let w = build_tensor_power_tf(4, 5).unwrap();
        for _ in 0..20 {
            let t = random_symmetric(3, &mut rng);
            let t = SymTensor3::from_fn(3, |i, j, m| 0.05 * t.get(i, j, m));
            let v0 = array![0.6, -0.3, 0.2];
            let got = run_tf_tensor_power_with(&w, 4, &t, &v0, PowerMode::Plain).unwrap();
            let want = oracle(&t, &v0, 5);
            assert!(want[4].dot(&want[4]).sqrt() < 1e-20);
            assert!(max_relative_deviation(&got, &want) <= 1e-12);
        }
    }

    #[test]
    fn exact_against_contraction() {
        let mut rng = task_rng(2, 0);
        let w = build_tensor_power_tf(4, 3).unwrap();
        for d in [2, 4] {
            let t = random_symmetric(d, &mut rng);
            let v0 = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
            let got = run_tf_tensor_power_with(&w, 4, &t, &v0, PowerMode::Plain).unwrap();
            let want = oracle(&t, &v0, 3);
            assert!(max_relative_deviation(&got, &want) <= 1e-9);
        }
    }

    #[test]
    fn zero_start_stays_zero() {
        let mut rng = task_rng(3, 0);
        let t = random_symmetric(3, &mut rng);
        let it = run_tf_tensor_power(&t, &Array1::zeros(3), 3, 4, PowerMode::Plain).unwrap();
        assert!(it.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn overflow_guard_trips() {
        let v = array![1.0, 0.0];
        let t = SymTensor3::from_rank_one(&[(1e10, v.view())]).unwrap();
        let r = run_tf_tensor_power(&t, &array![1.0, 0.0], 2, 8, PowerMode::Plain);
        assert!(matches!(r, Err(Error::Overflow { .. })));
    }

    #[test]
    fn normalized_mode_finds_top_eigenvector() {
        let e = |i: usize| Array1::from_shape_fn(3, |r| if r == i { 1.0 } else { 0.0 });
        let (e0, e1) = (e(0), e(1));
        let t = SymTensor3::from_rank_one(&[(3.0, e0.view()), (1.0, e1.view())]).unwrap();
        let v0 = array![0.6, 0.5, 0.2];
        let it = run_tf_tensor_power(&t, &v0, 3, 30, PowerMode::Normalized).unwrap();
        let last = it.last().unwrap();
        assert!((last[0] - 1.0).abs() < 1e-10);
    }
}
