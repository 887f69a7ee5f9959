//! Dense third-order tensors and their multilinear contractions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A `d × d × d` tensor stored row-major over `(i, j, m)`.
///
/// Most tensors handled here are symmetric, but nothing in the type forces it;
/// use [`SymTensor3::symmetry_defect`] to check.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    dim: usize,
    entries: Vec<f64>,
}

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim * dim,
                got: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor entries must be finite".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for m in 0..dim {
                    t.entries[(i * dim + j) * dim + m] = f(i, j, m);
                }
            }
        }
        t
    }

    /// `Σ_k λ_k v_k ⊗ v_k ⊗ v_k`.
    pub fn from_rank_one(terms: &[(f64, ArrayView1<'_, f64>)]) -> Result<Self> {
        let dim = terms.first().map_or(0, |(_, v)| v.len());
        let mut t = Self::zeros(dim);
        for (lambda, v) in terms {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            t.add_rank_one(*lambda, *v);
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, m: usize) -> f64 {
        self.entries[(i * self.dim + j) * self.dim + m]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, m: usize, value: f64) {
        self.entries[(i * self.dim + j) * self.dim + m] = value;
    }

    /// The `d × d` slice `T[i, :, :]`.
    pub fn slice(&self, i: usize) -> ArrayView2<'_, f64> {
        let d = self.dim;
        ArrayView2::from_shape((d, d), &self.entries[i * d * d..(i + 1) * d * d])
            .expect("slice shape")
    }

    /// `T += λ v ⊗ v ⊗ v`.
    pub fn add_rank_one(&mut self, lambda: f64, v: ArrayView1<'_, f64>) {
        let d = self.dim;
        for i in 0..d {
            let a = lambda * v[i];
            for j in 0..d {
                let b = a * v[j];
                let row = &mut self.entries[(i * d + j) * d..(i * d + j + 1) * d];
                for (e, vm) in row.iter_mut().zip(v.iter()) {
                    *e += b * vm;
                }
            }
        }
    }

    /// `T − λ v^{⊗3}`.
    pub fn deflate(&self, lambda: f64, v: ArrayView1<'_, f64>) -> Self {
        let mut t = self.clone();
        t.add_rank_one(-lambda, v);
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest deviation between any entry and its images under index permutation.
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for m in 0..d {
                    let x = self.get(i, j, m);
                    for y in [
                        self.get(i, m, j),
                        self.get(j, i, m),
                        self.get(j, m, i),
                        self.get(m, i, j),
                        self.get(m, j, i),
                    ] {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        worst
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    /// `T(I, v, v)_i = Σ_{j,m} T_{ijm} v_j v_m`.
    pub fn ivv(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check(v.len())?;
        let d = self.dim;
        let mut out = Array1::zeros(d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                let row = &self.entries[(i * d + j) * d..(i * d + j + 1) * d];
                let inner: f64 = row.iter().zip(v.iter()).map(|(t, vm)| t * vm).sum();
                acc += v[j] * inner;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `T(v, v, v)`.
    pub fn vvv(&self, v: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.ivv(v)?.dot(&v))
    }

    /// General contraction `T(a, b, c)` where `a` is `d × p`; the result has length `p`.
    pub fn apply(
        &self,
        a: ArrayView2<'_, f64>,
        b: ArrayView1<'_, f64>,
        c: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.check(a.nrows())?;
        self.check(b.len())?;
        self.check(c.len())?;
        let d = self.dim;
        let mut partial = Array1::<f64>::zeros(d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                for m in 0..d {
                    acc += self.get(i, j, m) * b[j] * c[m];
                }
            }
            partial[i] = acc;
        }
        Ok(a.t().dot(&partial))
    }

    /// `T(W, W, W)` for a `d × p` matrix `W`, giving a `p × p × p` tensor.
    pub fn transform(&self, w: ArrayView2<'_, f64>) -> Result<SymTensor3> {
        self.check(w.nrows())?;
        let (d, p) = w.dim();
        // contract one mode at a time: d³p + d²p² + dp³ work
        let mut t1 = vec![0.0; p * d * d];
        for a in 0..p {
            for i in 0..d {
                let wia = w[[i, a]];
                if wia == 0.0 {
                    continue;
                }
                let src = &self.entries[i * d * d..(i + 1) * d * d];
                let dst = &mut t1[a * d * d..(a + 1) * d * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += wia * s;
                }
            }
        }
        let mut t2 = vec![0.0; p * p * d];
        for a in 0..p {
            for b in 0..p {
                for j in 0..d {
                    let wjb = w[[j, b]];
                    let src = &t1[(a * d + j) * d..(a * d + j + 1) * d];
                    let dst = &mut t2[(a * p + b) * d..(a * p + b + 1) * d];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += wjb * s;
                    }
                }
            }
        }
        let mut out = SymTensor3::zeros(p);
        for a in 0..p {
            for b in 0..p {
                let src = &t2[(a * p + b) * d..(a * p + b + 1) * d];
                for c in 0..p {
                    let v: f64 = src.iter().enumerate().map(|(m, s)| s * w[[m, c]]).sum();
                    out.set(a, b, c, v);
                }
            }
        }
        Ok(out)
    }

    /// Unfolds to a `d × d²` matrix with rows indexed by the first mode.
    pub fn unfold(&self) -> Array2<f64> {
        let d = self.dim;
        Array2::from_shape_vec((d, d * d), self.entries.clone()).expect("unfold shape")
    }
}
