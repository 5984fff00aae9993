//! Pre-norm transformer encoder over `(B, N, D)` token sequences.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder, Session};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(&mut pb.child("query"), dim, dim),
            key: Linear::new(&mut pb.child("key"), dim, dim),
            value: Linear::new(&mut pb.child("value"), dim, dim),
            proj: Linear::new(&mut pb.child("proj"), dim, dim),
            heads,
            dim,
        }
    }

    /// `(B, N, D)` → `(B·heads, N, D/heads)`.
    fn split<T: Scalar>(&self, x: &Var<T>, b: usize, n: usize) -> Result<Var<T>> {
        let dh = self.dim / self.heads;
        x.reshape(&[b, n, self.heads, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b * self.heads, n, dh])
    }

    fn dims<T: Scalar>(&self, x: &Var<T>) -> Result<(usize, usize)> {
        match *x.shape() {
            [b, n, d] if d == self.dim => Ok((b, n)),
            _ => Err(Error::shape("attention", format!("expected (B, N, {}), got {:?}", self.dim, x.shape()))),
        }
    }

    fn weights_and_values<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let (b, n) = self.dims(x)?;
        let q = self.split(&self.query.forward(s, x)?, b, n)?;
        let k = self.split(&self.key.forward(s, x)?, b, n)?;
        let v = self.split(&self.value.forward(s, x)?, b, n)?;
        let scale = T::one() / T::from_usize_lossy(self.dim / self.heads).sqrt();
        let attn = q.matmul_t(&k, false, true)?.scale(scale).softmax(2)?;
        Ok((attn, v))
    }

    /// Attention weights, `(B, heads, N, N)`; each row sums to one.
    pub fn attention_weights<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, n) = self.dims(x)?;
        self.weights_and_values(s, x)?.0.reshape(&[b, self.heads, n, n])
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, n) = self.dims(x)?;
        let (attn, v) = self.weights_and_values(s, x)?;
        let dh = self.dim / self.heads;
        let out = attn.matmul(&v)?.reshape(&[b, self.heads, n, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, self.dim])?;
        self.proj.forward(s, &out)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerLayer {
    pub fn new(pb: &mut ParamBuilder<'_>, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            norm1: LayerNorm::new(&mut pb.child("norm1"), dim),
            attn: MultiHeadAttention::new(&mut pb.child("attn"), dim, heads),
            norm2: LayerNorm::new(&mut pb.child("norm2"), dim),
            fc1: Linear::new(&mut pb.child("fc1"), dim, dim * mlp_ratio),
            fc2: Linear::new(&mut pb.child("fc2"), dim * mlp_ratio, dim),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let x = x.add(&self.attn.forward(s, &self.norm1.forward(s, x)?)?)?;
        let h = self.fc1.forward(s, &self.norm2.forward(s, &x)?)?.gelu();
        x.add(&self.fc2.forward(s, &h)?)
    }
}

#[derive(Clone, Debug)]
pub struct Transformer {
    pub layers: Vec<TransformerLayer>,
    pub norm: LayerNorm,
}

impl Transformer {
    pub fn new(pb: &mut ParamBuilder<'_>, dim: usize, depth: usize, heads: usize, mlp_ratio: usize) -> Self {
        let layers = (0..depth).map(|i| TransformerLayer::new(&mut pb.child(&format!("layer{i}")), dim, heads, mlp_ratio)).collect();
        Self { layers, norm: LayerNorm::new(&mut pb.child("norm"), dim) }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(s, &h)?;
        }
        self.norm.forward(s, &h)
    }
}
