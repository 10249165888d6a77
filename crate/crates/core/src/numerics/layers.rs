//! Parameterized building blocks assembled from [`Graph`] operations.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add(format!("{name}.bias"), Tensor2D::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    /// Sets weights to zero (bias unchanged).
    pub fn zero_weight(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor2D::filled(1, dim, 1.0)),
            shift: store.add(format!("{name}.shift"), Tensor2D::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let shift = g.param(store, self.shift);
        g.layer_norm(x, gain, shift)
    }
}

/// 1-D convolution over time, realized as im2col followed by one matrix
/// product. Weight layout is `(kernel·C_in) x C_out`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub proj: Linear,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Zero padding on both ends; `same` convolutions use `dilation·(kernel−1)/2`.
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            proj: Linear::new(store, name, kernel * in_ch, out_ch, rng),
            kernel,
            stride,
            dilation,
            pad,
        }
    }

    /// Length-preserving convolution (odd kernel, stride 1).
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("same-length conv needs an odd kernel, got {kernel}")));
        }
        Ok(Self::new(store, name, in_ch, out_ch, kernel, 1, dilation, dilation * (kernel - 1) / 2, rng))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = g.im2col(x, self.kernel, self.stride, self.dilation, self.pad)?;
        self.proj.forward(g, store, cols)
    }
}

/// Multi-head scaled dot-product attention with learned projections for
/// queries, keys, values and output. No dropout.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible into {heads} attention heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, key: Var, value: Var) -> Result<Var> {
        let ctx = self.context(g, store, query, key, value)?;
        self.output.forward(g, store, ctx)
    }

    /// Concatenated per-head attention outputs before the output projection.
    pub fn context(&self, g: &mut Graph, store: &ParamStore, query: Var, key: Var, value: Var) -> Result<Var> {
        for v in [query, key, value] {
            if g.shape(v).1 != self.dim {
                return Err(Error::shape("multi_head_attention", g.shape(v), format!("model dim {}", self.dim)));
            }
        }
        if g.shape(key).0 != g.shape(value).0 {
            return Err(Error::shape("multi_head_attention", g.shape(key), g.shape(value)));
        }
        let q = self.query.forward(g, store, query)?;
        let k = self.key.forward(g, store, key)?;
        let v = self.value.forward(g, store, value)?;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * hd, hd)?,
                    g.slice_cols(k, h * hd, hd)?,
                    g.slice_cols(v, h * hd, hd)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, vh)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat_cols(&outs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn indivisible_heads_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 10, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_key_returns_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let q = g.input(Tensor2D::from_fn(5, 8, |r, c| (r as f64 - c as f64) * 0.1));
        let kv = g.input(Tensor2D::from_fn(1, 8, |_, c| c as f64 * 0.3 - 1.0));
        let ctx = mha.context(&mut g, &store, q, kv, kv).unwrap();
        let vproj = mha.value.forward(&mut g, &store, kv).unwrap();
        let expect = g.value(vproj).row(0).to_vec();
        for r in 0..5 {
            for (a, b) in g.value(ctx).row(r).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_values_give_zero_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 4, &mut rng).unwrap();
        mha.value.zero_weight(&mut store);
        let mut g = Graph::new();
        let q = g.input(Tensor2D::from_fn(4, 8, |r, c| ((r * c) as f64).sin()));
        let v = g.input(Tensor2D::zeros(4, 8));
        let ctx = mha.context(&mut g, &store, q, q, v).unwrap();
        assert_eq!(g.value(ctx).max_abs(), 0.0);
    }

    #[test]
    fn strided_conv_frame_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "c", 1, 4, 40, 20, 1, 0, &mut rng);
        let mut g = Graph::new();
        let x = g.input(Tensor2D::zeros(400, 1));
        let y = conv.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y).0, 19);
    }
}
