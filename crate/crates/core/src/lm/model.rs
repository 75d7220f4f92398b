//! Causal self-attention transformer.
//!
//! The same network is implemented twice: [`ModelParams::forward_graph`]
//! records it on an autodiff [`Graph`] for training, and the
//! [`CausalLm`] impl runs it on plain buffers with a key/value cache for
//! scoring and generation. Both paths perform the same floating-point
//! operations in the same order, row by row, so their logits agree and
//! every output row depends only on tokens at or before it.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CausalLm, LmError};
use crate::autodiff::tensor::{gelu, layer_norm_row, matmul, softmax_row};
use crate::autodiff::{Adam, Graph, NodeId, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_mult: usize,
    #[serde(default, skip_serializing_if = "crate::seed::is_zero")]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 80,
            context_length: 256,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 2,
            mlp_mult: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.context_length == 0 || self.embed_dim == 0 || self.num_heads == 0 || self.mlp_mult == 0 {
            return bad("context_length, embed_dim, num_heads and mlp_mult must be positive");
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad("embed_dim must be divisible by num_heads");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_mult
    }
}

/// Trainable tensors of the transformer plus an update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub(crate) config: ModelConfig,
    pub(crate) tensors: BTreeMap<String, Tensor>,
    pub(crate) version: u64,
}

fn layer_name(layer: usize, leaf: &str) -> String {
    format!("blocks.{layer}.{leaf}")
}

impl ModelParams {
    /// Random initialization, deterministic in `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self, LmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, c, d, h) = (config.vocab_size, config.context_length, config.embed_dim, config.hidden_dim());
        let std = 0.02;
        let proj_std = std / (2.0 * config.num_layers.max(1) as f64).sqrt();
        let mut tensors = BTreeMap::new();
        let mut normal = |shape: &[usize], s: f64| {
            let dist = Normal::new(0.0, s).expect("positive std");
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect()).expect("shape")
        };
        tensors.insert("tok_emb".into(), normal(&[v, d], std));
        tensors.insert("pos_emb".into(), normal(&[c, d], std));
        for l in 0..config.num_layers {
            for w in ["attn.wq", "attn.wk", "attn.wv"] {
                tensors.insert(layer_name(l, w), normal(&[d, d], std));
            }
            tensors.insert(layer_name(l, "attn.wo"), normal(&[d, d], proj_std));
            tensors.insert(layer_name(l, "mlp.w1"), normal(&[d, h], std));
            tensors.insert(layer_name(l, "mlp.w2"), normal(&[h, d], proj_std));
        }
        tensors.insert("head.w".into(), normal(&[d, v], std));
        for l in 0..config.num_layers {
            for ln in ["ln1", "ln2"] {
                tensors.insert(layer_name(l, &format!("{ln}.gain")), Tensor::full(&[d], 1.0));
                tensors.insert(layer_name(l, &format!("{ln}.bias")), Tensor::zeros(&[d]));
            }
            tensors.insert(layer_name(l, "mlp.b1"), Tensor::zeros(&[h]));
            tensors.insert(layer_name(l, "mlp.b2"), Tensor::zeros(&[d]));
        }
        tensors.insert("ln_f.gain".into(), Tensor::full(&[d], 1.0));
        tensors.insert("ln_f.bias".into(), Tensor::zeros(&[d]));
        tensors.insert("head.b".into(), Tensor::zeros(&[v]));
        Ok(Self {
            config,
            tensors,
            version: 0,
        })
    }

    /// Rebuilds params from stored tensors, checking every expected shape.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>, version: u64) -> Result<Self, LmError> {
        let reference = Self::init(config.clone())?;
        if reference.tensors.len() != tensors.len() {
            return Err(LmError::InvalidConfig(format!(
                "expected {} tensors, found {}",
                reference.tensors.len(),
                tensors.len()
            )));
        }
        for (name, t) in &reference.tensors {
            match tensors.get(name) {
                Some(found) if found.shape() == t.shape() => {}
                Some(found) => {
                    return Err(LmError::InvalidConfig(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        found.shape(),
                        t.shape()
                    )))
                }
                None => return Err(LmError::InvalidConfig(format!("missing tensor {name}"))),
            }
        }
        Ok(Self { config, tensors, version })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// One optimizer update; bumps the version counter. Returns the rate used.
    pub fn apply_gradients(&mut self, opt: &mut Adam, grads: &BTreeMap<String, Tensor>) -> Result<f64, LmError> {
        let lr = opt.step(&mut self.tensors, grads)?;
        self.version += 1;
        Ok(lr)
    }

    fn t(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    fn check_tokens(&self, len_before: usize, tokens: &[u32]) -> Result<(), LmError> {
        let total = len_before + tokens.len();
        if total > self.config.context_length {
            return Err(LmError::ContextOverflow {
                len: total,
                max: self.config.context_length,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(LmError::TokenOutOfRange {
                token: bad,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `g`; returns the `[len, V]` logits node.
    /// Parameters enter the graph as named leaves.
    pub fn forward_graph(&self, g: &mut Graph, tokens: &[u32]) -> Result<NodeId, LmError> {
        self.check_tokens(0, tokens)?;
        let cfg = &self.config;
        let p: BTreeMap<&str, NodeId> = self
            .tensors
            .iter()
            .map(|(name, t)| (name.as_str(), g.param(name, t.clone())))
            .collect();
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = g.embedding(p["tok_emb"], &ids)?;
        let pos = g.embedding(p["pos_emb"], &positions)?;
        let mut x = g.add(tok, pos)?;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for l in 0..cfg.num_layers {
            let n = |leaf: &str| p[layer_name(l, leaf).as_str()];
            let h = g.layer_norm(x, n("ln1.gain"), n("ln1.bias"))?;
            let q = g.matmul(h, n("attn.wq"))?;
            let k = g.matmul(h, n("attn.wk"))?;
            let v = g.matmul(h, n("attn.wv"))?;
            let mut heads = Vec::with_capacity(cfg.num_heads);
            for head in 0..cfg.num_heads {
                let qh = g.slice_cols(q, head * dh, dh)?;
                let kh = g.slice_cols(k, head * dh, dh)?;
                let vh = g.slice_cols(v, head * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale)?;
                let scores = g.causal_mask(scores)?;
                let att = g.softmax(scores)?;
                heads.push(g.matmul(att, vh)?);
            }
            let merged = g.concat_cols(&heads)?;
            let proj = g.matmul(merged, n("attn.wo"))?;
            x = g.add(x, proj)?;
            let h2 = g.layer_norm(x, n("ln2.gain"), n("ln2.bias"))?;
            let up = g.matmul(h2, n("mlp.w1"))?;
            let up = g.add_row(up, n("mlp.b1"))?;
            let act = g.gelu(up)?;
            let down = g.matmul(act, n("mlp.w2"))?;
            let down = g.add_row(down, n("mlp.b2"))?;
            x = g.add(x, down)?;
        }
        let xf = g.layer_norm(x, p["ln_f.gain"], p["ln_f.bias"])?;
        let logits = g.matmul(xf, p["head.w"])?;
        Ok(g.add_row(logits, p["head.b"])?)
    }
}

/// Per-layer keys and values of every position fed so far.
#[derive(Clone, Debug)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn layer_norm_rows(x: &[f64], gain: &Tensor, bias: &Tensor, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        layer_norm_row(row, gain.data(), bias.data(), o);
    }
    out
}

fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

impl CausalLm for ModelParams {
    type State = KvCache;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_length(&self) -> usize {
        self.config.context_length
    }

    fn start(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.config.num_layers],
            values: vec![Vec::new(); self.config.num_layers],
            len: 0,
        }
    }

    fn feed(&self, cache: &mut KvCache, tokens: &[u32]) -> Result<Vec<f64>, LmError> {
        self.check_tokens(cache.len, tokens)?;
        let cfg = &self.config;
        let (d, n, start) = (cfg.embed_dim, tokens.len(), cache.len);
        let (dh, hidden, vocab) = (cfg.head_dim(), cfg.hidden_dim(), cfg.vocab_size);
        let scale = 1.0 / (dh as f64).sqrt();
        let tok = self.t("tok_emb");
        let pos = self.t("pos_emb");
        let mut x = Vec::with_capacity(n * d);
        for (i, &t) in tokens.iter().enumerate() {
            x.extend(tok.row(t as usize).iter().zip(pos.row(start + i)).map(|(a, b)| a + b));
        }
        let mut scores = vec![0.0; start + n];
        let mut probs = vec![0.0; start + n];
        for l in 0..cfg.num_layers {
            let w = |leaf: &str| self.t(&layer_name(l, leaf));
            let h = layer_norm_rows(&x, w("ln1.gain"), w("ln1.bias"), d);
            let q = matmul(&h, w("attn.wq").data(), n, d, d);
            let k = matmul(&h, w("attn.wk").data(), n, d, d);
            let v = matmul(&h, w("attn.wv").data(), n, d, d);
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);
            let (keys, values) = (&cache.keys[l], &cache.values[l]);
            let mut merged = vec![0.0; n * d];
            for i in 0..n {
                let p = start + i;
                for head in 0..cfg.num_heads {
                    let off = head * dh;
                    let qi = &q[i * d + off..i * d + off + dh];
                    for j in 0..=p {
                        let kj = &keys[j * d + off..j * d + off + dh];
                        let mut s = 0.0;
                        for (a, b) in qi.iter().zip(kj) {
                            s += a * b;
                        }
                        scores[j] = s * scale;
                    }
                    softmax_row(&scores[..=p], &mut probs[..=p]);
                    let out = &mut merged[i * d + off..i * d + off + dh];
                    for j in 0..=p {
                        let vj = &values[j * d + off..j * d + off + dh];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o += probs[j] * vv;
                        }
                    }
                }
            }
            let proj = matmul(&merged, w("attn.wo").data(), n, d, d);
            for (xv, pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }
            let h2 = layer_norm_rows(&x, w("ln2.gain"), w("ln2.bias"), d);
            let mut up = matmul(&h2, w("mlp.w1").data(), n, d, hidden);
            add_row_bias(&mut up, w("mlp.b1").data());
            up.iter_mut().for_each(|u| *u = gelu(*u));
            let mut down = matmul(&up, w("mlp.w2").data(), n, hidden, d);
            add_row_bias(&mut down, w("mlp.b2").data());
            for (xv, dv) in x.iter_mut().zip(&down) {
                *xv += dv;
            }
        }
        cache.len += n;
        let xf = layer_norm_rows(&x, self.t("ln_f.gain"), self.t("ln_f.bias"), d);
        let mut logits = matmul(&xf, self.t("head.w").data(), n, d, vocab);
        add_row_bias(&mut logits, self.t("head.b").data());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(LmError::NonFinite);
        }
        Ok(logits)
    }
}
