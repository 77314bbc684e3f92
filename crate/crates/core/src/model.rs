//! Decoder-only transformer built on the tape autograd engine.
//!
//! One architecture serves three roles: the target language model, the
//! lightweight implicit-reasoning generator's trunk, and (sliced) the
//! sentence-scorer backbone. Pre-norm blocks with RMSNorm gains, bias-free
//! attention and MLP, ReLU, a 2x feed-forward width, learned positional
//! embeddings, and an untied output head.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tokenizer::EOS_ID;

pub const RMS_EPS: f64 = 1e-6;

/// Architecture hyperparameters. `ff_mult` is fixed at 2 by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::config("model dims must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        2 * self.d_model
    }
}

/// Ordered collection of named parameter matrices. Iteration order is
/// insertion order, which fixes the checkpoint blob order and the hash.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        self.by_name.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let idx = *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.values[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let idx = *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.values[idx]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar count across all matrices.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// SHA-256 over names, shapes, and exact f64 little-endian bytes, in
    /// insertion order. Bitwise identity check for freezing contracts.
    pub fn content_hash(&self) -> String {
        self.content_hash_where(&|_| true)
    }

    /// Like [`content_hash`](Self::content_hash) but restricted to the
    /// parameters whose names `keep` accepts.
    pub fn content_hash_where(&self, keep: &dyn Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in self.iter() {
            if !keep(name) {
                continue;
            }
            hasher.update(name.as_bytes());
            hasher.update((value.nrows() as u64).to_le_bytes());
            hasher.update((value.ncols() as u64).to_le_bytes());
            for &x in value.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Map from parameter names to their tape leaves for one forward build.
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

fn normal_mat(rng: &mut impl Rng, m: usize, n: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((m, n), |_| dist.sample(rng))
}

/// Insert embedding tables into `ps` under `{prefix}tok_emb` / `{prefix}pos_emb`.
pub fn init_embedding_params(
    ps: &mut ParamSet,
    prefix: &str,
    vocab: usize,
    d: usize,
    max_seq: usize,
    rng: &mut impl Rng,
) {
    ps.insert(&format!("{prefix}tok_emb"), normal_mat(rng, vocab, d, 0.02));
    ps.insert(&format!("{prefix}pos_emb"), normal_mat(rng, max_seq, d, 0.02));
}

/// Insert one block's parameters under `{prefix}l{i}.*`. Residual-entering
/// projections are scaled down by sqrt(2 * depth) in the usual GPT style.
pub fn init_layer_params(
    ps: &mut ParamSet,
    prefix: &str,
    i: usize,
    cfg: &LmConfig,
    rng: &mut impl Rng,
) {
    let d = cfg.d_model;
    let ff = cfg.ff_dim();
    let resid_std = 0.02 / (2.0 * cfg.n_layers as f64).sqrt();
    let p = format!("{prefix}l{i}.");
    ps.insert(&format!("{p}ln1.g"), Array2::ones((1, d)));
    ps.insert(&format!("{p}wq"), normal_mat(rng, d, d, 0.02));
    ps.insert(&format!("{p}wk"), normal_mat(rng, d, d, 0.02));
    ps.insert(&format!("{p}wv"), normal_mat(rng, d, d, 0.02));
    ps.insert(&format!("{p}wo"), normal_mat(rng, d, d, resid_std));
    ps.insert(&format!("{p}ln2.g"), Array2::ones((1, d)));
    ps.insert(&format!("{p}w1"), normal_mat(rng, d, ff, 0.02));
    ps.insert(&format!("{p}w2"), normal_mat(rng, ff, d, resid_std));
}

/// Bind every parameter in `ps` onto the tape; `trainable` decides per name
/// whether the leaf requires gradients.
pub fn bind_params(tape: &mut Tape, ps: &ParamSet, trainable: &dyn Fn(&str) -> bool) -> Binding {
    let mut vars = HashMap::new();
    for (name, value) in ps.iter() {
        let v = tape.leaf(value.clone(), trainable(name));
        vars.insert(name.to_string(), v);
    }
    Binding { vars }
}

/// Lower-triangular attention mask as an additive constant: 0 on and below
/// the diagonal, a large negative number above it.
pub fn causal_mask(tape: &mut Tape, t: usize) -> Var {
    let m = Array2::from_shape_fn((t, t), |(i, j)| if j > i { -1e30 } else { 0.0 });
    tape.constant(m)
}

/// One pre-norm transformer block: x + attn(rms(x)·g1), then x + mlp(rms(x)·g2).
pub fn layer_forward(
    tape: &mut Tape,
    b: &Binding,
    prefix: &str,
    i: usize,
    cfg: &LmConfig,
    x: Var,
    mask: Var,
) -> Var {
    let p = format!("{prefix}l{i}.");
    let dh = cfg.head_dim();

    let normed = tape.rms_norm(x, RMS_EPS);
    let ln1 = tape.mul_row(normed, b.var(&format!("{p}ln1.g")));
    let q = tape.matmul(ln1, b.var(&format!("{p}wq")));
    let k = tape.matmul(ln1, b.var(&format!("{p}wk")));
    let v = tape.matmul(ln1, b.var(&format!("{p}wv")));

    let mut head_outs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let scores = tape.matmul_nt(qh, kh);
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = tape.add(scaled, mask);
        let attn = tape.softmax_rows(masked);
        head_outs.push(tape.matmul(attn, vh));
    }
    let concat = tape.concat_cols(&head_outs);
    let att_out = tape.matmul(concat, b.var(&format!("{p}wo")));
    let x = tape.add(x, att_out);

    let normed2 = tape.rms_norm(x, RMS_EPS);
    let ln2 = tape.mul_row(normed2, b.var(&format!("{p}ln2.g")));
    let pre = tape.matmul(ln2, b.var(&format!("{p}w1")));
    let act = tape.relu(pre);
    let mlp = tape.matmul(act, b.var(&format!("{p}w2")));
    tape.add(x, mlp)
}

/// Run `n_layers` blocks over embedded input (positions already added).
pub fn stack_forward(
    tape: &mut Tape,
    b: &Binding,
    prefix: &str,
    cfg: &LmConfig,
    n_layers: usize,
    x: Var,
) -> Var {
    let t = tape.value(x).nrows();
    let mask = causal_mask(tape, t);
    let mut x = x;
    for i in 0..n_layers {
        x = layer_forward(tape, b, prefix, i, cfg, x, mask);
    }
    x
}

/// Add learned positional embeddings for positions `0..T` to `x`.
pub fn add_positions(tape: &mut Tape, b: &Binding, prefix: &str, x: Var) -> Var {
    let t = tape.value(x).nrows();
    let ids: Vec<usize> = (0..t).collect();
    let pos = tape.rows(b.var(&format!("{prefix}pos_emb")), &ids);
    tape.add(x, pos)
}

/// A decoder-only language model with an untied output head and a final
/// RMSNorm gain. Tracks how many forward passes it has run.
pub struct TinyLm {
    pub cfg: LmConfig,
    pub params: ParamSet,
    forward_count: AtomicU64,
}

impl Clone for TinyLm {
    fn clone(&self) -> Self {
        TinyLm {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            forward_count: AtomicU64::new(0),
        }
    }
}

impl TinyLm {
    pub fn new(cfg: LmConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        init_embedding_params(&mut ps, "", cfg.vocab_size, cfg.d_model, cfg.max_seq_len, rng);
        for i in 0..cfg.n_layers {
            init_layer_params(&mut ps, "", i, &cfg, rng);
        }
        ps.insert("ln_f.g", Array2::ones((1, cfg.d_model)));
        ps.insert(
            "head",
            normal_mat(rng, cfg.vocab_size, cfg.d_model, 0.02),
        );
        Ok(TinyLm {
            cfg,
            params: ps,
            forward_count: AtomicU64::new(0),
        })
    }

    /// Rebuild from a loaded parameter set.
    pub fn from_params(cfg: LmConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        for name in ["tok_emb", "pos_emb", "ln_f.g", "head"] {
            if !params.contains(name) {
                return Err(Error::Checkpoint(format!("missing parameter {name}")));
            }
        }
        Ok(TinyLm {
            cfg,
            params,
            forward_count: AtomicU64::new(0),
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(&str) -> bool) -> Binding {
        bind_params(tape, &self.params, trainable)
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        self.bind(tape, &|_| false)
    }

    /// Differentiable embedding lookup.
    pub fn embed(&self, tape: &mut Tape, b: &Binding, ids: &[u32]) -> Var {
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        tape.rows(b.var("tok_emb"), &ids)
    }

    /// Embedding rows as plain data, for building inference prefixes.
    pub fn embed_data(&self, ids: &[u32]) -> Array2<f64> {
        let emb = self.params.get("tok_emb");
        let mut out = Array2::zeros((ids.len(), self.cfg.d_model));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&emb.row(id as usize));
        }
        out
    }

    /// Hidden states after the final norm, T×d. One forward pass.
    pub fn hidden_from_embeds(&self, tape: &mut Tape, b: &Binding, embeds: Var) -> Var {
        let t = tape.value(embeds).nrows();
        assert!(
            t <= self.cfg.max_seq_len,
            "sequence length {t} exceeds max {}",
            self.cfg.max_seq_len
        );
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        let x = add_positions(tape, b, "", embeds);
        let x = stack_forward(tape, b, "", &self.cfg, self.cfg.n_layers, x);
        let normed = tape.rms_norm(x, RMS_EPS);
        tape.mul_row(normed, b.var("ln_f.g"))
    }

    /// Next-token logits for every position, T×vocab.
    pub fn logits(&self, tape: &mut Tape, b: &Binding, hidden: Var) -> Var {
        tape.matmul_nt(hidden, b.var("head"))
    }

    pub fn forward_passes(&self) -> u64 {
        self.forward_count.load(Ordering::Relaxed)
    }

    pub fn reset_forward_passes(&self) {
        self.forward_count.store(0, Ordering::Relaxed);
    }

    /// Greedy decoding from a continuous prefix. Each emitted token costs
    /// one full forward pass (no KV cache at these sizes). Ties in the
    /// argmax break toward the lowest token id. Stops after `max_new`
    /// tokens or when end-of-sequence is produced (the terminator is
    /// included in the return).
    pub fn greedy_decode(&self, prefix: &Array2<f64>, max_new: usize) -> Vec<u32> {
        let mut embeds = prefix.clone();
        let mut out = Vec::new();
        for _ in 0..max_new {
            if embeds.nrows() >= self.cfg.max_seq_len {
                break;
            }
            let mut tape = Tape::new();
            let b = self.bind_frozen(&mut tape);
            let x = tape.constant(embeds.clone());
            let h = self.hidden_from_embeds(&mut tape, &b, x);
            let logits = self.logits(&mut tape, &b, h);
            let lv = tape.value(logits);
            let last = lv.row(lv.nrows() - 1);
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in last.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            let tok = best as u32;
            out.push(tok);
            if tok == EOS_ID {
                break;
            }
            let row = self.embed_data(&[tok]);
            let mut grown = Array2::zeros((embeds.nrows() + 1, self.cfg.d_model));
            grown
                .slice_mut(ndarray::s![..embeds.nrows(), ..])
                .assign(&embeds);
            grown.row_mut(embeds.nrows()).assign(&row.row(0));
            embeds = grown;
        }
        out
    }

    /// Extend the vocabulary by one token whose embedding and head rows are
    /// the mean of the existing rows. Returns the new token id.
    pub fn add_token_mean_init(&mut self) -> u32 {
        let new_id = self.cfg.vocab_size as u32;
        for name in ["tok_emb", "head"] {
            let table = self.params.get(name);
            let mean = table.mean_axis(ndarray::Axis(0)).expect("non-empty table");
            let mut grown = Array2::zeros((table.nrows() + 1, table.ncols()));
            grown
                .slice_mut(ndarray::s![..table.nrows(), ..])
                .assign(table);
            grown.row_mut(table.nrows()).assign(&mean);
            *self.params.get_mut(name) = grown;
        }
        self.cfg.vocab_size += 1;
        new_id
    }
}

/// Copy the middle `count` layers (plus both embedding tables) of a donor
/// model into a fresh parameter set, renumbering layers from zero. The
/// window starts at floor((L - count) / 2); `count` is clipped to the donor
/// depth.
pub fn slice_middle_layers(donor: &TinyLm, count: usize) -> (ParamSet, LmConfig) {
    let l = donor.cfg.n_layers;
    let count = count.min(l);
    let start = (l - count) / 2;
    let mut ps = ParamSet::new();
    ps.insert("tok_emb", donor.params.get("tok_emb").clone());
    ps.insert("pos_emb", donor.params.get("pos_emb").clone());
    for (new_i, old_i) in (start..start + count).enumerate() {
        for suffix in ["ln1.g", "wq", "wk", "wv", "wo", "ln2.g", "w1", "w2"] {
            let src = format!("l{old_i}.{suffix}");
            let dst = format!("l{new_i}.{suffix}");
            ps.insert(&dst, donor.params.get(&src).clone());
        }
    }
    let cfg = LmConfig {
        n_layers: count,
        ..donor.cfg.clone()
    };
    (ps, cfg)
}
