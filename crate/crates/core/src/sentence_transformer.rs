//! Sentence scorer: a sliced backbone with a pooled projection head.
//!
//! The backbone reuses the middle layers (and both embedding tables) of the
//! frozen answer model, so sentences are read through the same token space
//! the answer model uses. On top sit a fresh final norm, masked mean pooling
//! over positions, and an affine head mapping the pooled state into the
//! scoring space.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{
    add_positions, bind_params, slice_middle_layers, stack_forward, Binding, LmConfig, ParamSet,
    TinyLm, RMS_EPS,
};
use crate::tokenizer::{Tokenizer, PAD_ID};

/// Parameter names that belong to the projection head (and stay trainable
/// during head-only warm-up).
pub fn is_head_param(name: &str) -> bool {
    name.starts_with("head.")
}

pub struct SentenceTransformer {
    pub cfg: LmConfig,
    pub d_sem: usize,
    pub params: ParamSet,
}

impl SentenceTransformer {
    /// Build from a donor model: copy its middle `backbone_layers` layers
    /// (clipped to the donor depth) and attach a fresh norm gain and head.
    pub fn from_donor(
        donor: &TinyLm,
        backbone_layers: usize,
        d_sem: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (mut params, cfg) = slice_middle_layers(donor, backbone_layers);
        params.insert("ln_f.g", Array2::ones((1, cfg.d_model)));
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let head_w = Array2::from_shape_fn((cfg.d_model, d_sem), |_| normal.sample(rng));
        params.insert("head.w", head_w);
        params.insert("head.b", Array2::zeros((1, d_sem)));
        SentenceTransformer { cfg, d_sem, params }
    }

    /// Rebuild from a loaded parameter set.
    pub fn from_params(cfg: LmConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        for name in ["tok_emb", "pos_emb", "ln_f.g", "head.w", "head.b"] {
            if !params.contains(name) {
                return Err(Error::Checkpoint(format!("missing parameter {name}")));
            }
        }
        let d_sem = params.get("head.w").ncols();
        Ok(SentenceTransformer { cfg, d_sem, params })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(&str) -> bool) -> Binding {
        bind_params(tape, &self.params, trainable)
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        self.bind(tape, &|_| false)
    }

    /// Encode a sequence of already-embedded positions (T×d_model) whose
    /// validity is given by `mask` (1.0 real, 0.0 padding). Returns 1×d_sem.
    ///
    /// Attention is causal, so rows appended after the real suffix cannot
    /// influence earlier positions; together with the pooling mask this
    /// makes the output invariant to trailing padding.
    pub fn encode_embeds(&self, tape: &mut Tape, b: &Binding, embeds: Var, mask: &[f64]) -> Var {
        let t = tape.value(embeds).nrows();
        assert_eq!(t, mask.len(), "mask length must match sequence length");
        assert!(t <= self.cfg.max_seq_len, "sequence too long for backbone");
        let x = add_positions(tape, b, "", embeds);
        let x = stack_forward(tape, b, "", &self.cfg, self.cfg.n_layers, x);
        let normed = tape.rms_norm(x, RMS_EPS);
        let h = tape.mul_row(normed, b.var("ln_f.g"));
        let pooled = tape.masked_mean_rows(h, mask);
        let proj = tape.matmul(pooled, b.var("head.w"));
        tape.add_row(proj, b.var("head.b"))
    }

    /// Encode token ids, optionally right-padded to `pad_to` positions.
    pub fn encode_ids(
        &self,
        tape: &mut Tape,
        b: &Binding,
        ids: &[u32],
        pad_to: Option<usize>,
    ) -> Var {
        assert!(!ids.is_empty(), "cannot encode an empty sequence");
        let total = pad_to.unwrap_or(ids.len()).max(ids.len());
        let mut padded: Vec<u32> = ids.to_vec();
        padded.resize(total, PAD_ID);
        let mut mask = vec![1.0; ids.len()];
        mask.resize(total, 0.0);
        let rows: Vec<usize> = padded.iter().map(|&t| t as usize).collect();
        let embeds = tape.rows(b.var("tok_emb"), &rows);
        self.encode_embeds(tape, b, embeds, &mask)
    }

    /// Encode a batch of id sequences into B×d_sem.
    pub fn encode_id_batch(&self, tape: &mut Tape, b: &Binding, seqs: &[Vec<u32>]) -> Var {
        assert!(!seqs.is_empty(), "empty batch");
        let rows: Vec<Var> = seqs
            .iter()
            .map(|ids| self.encode_ids(tape, b, ids, None))
            .collect();
        if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat_rows(&rows)
        }
    }

    /// Convenience: encode one text with a frozen backbone, returning data.
    pub fn encode_text(&self, tok: &Tokenizer, text: &str) -> Array2<f64> {
        let ids = tok.encode(text);
        let mut tape = Tape::new();
        let b = self.bind_frozen(&mut tape);
        let out = self.encode_ids(&mut tape, &b, &ids, None);
        tape.value(out).clone()
    }
}
