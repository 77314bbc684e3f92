//! Implicit reasoning generator.
//!
//! A small causal LM reads the query followed by `k` copies of a dedicated
//! continuation token; the hidden states over those `k` positions, passed
//! through an affine projection into the answer model's embedding width,
//! are the implicit reasoning vectors. Producing all `k` vectors costs one
//! forward pass of the small model.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Binding, LmConfig, TinyLm};
use crate::tokenizer::COT_TOKEN;

/// Parameter names trained during projection-only warm-up.
pub fn is_projection_param(name: &str) -> bool {
    name.starts_with("proj.")
}

pub struct ImplicitGenerator {
    /// Small LM whose parameter set also carries `proj.w` / `proj.b`.
    pub lm: TinyLm,
    pub cot_id: u32,
    pub d_target: usize,
}

impl ImplicitGenerator {
    /// Wrap a (typically pretrained) small LM: extend its vocabulary with
    /// the continuation token (mean-initialized) and attach a projection
    /// into the answer model width.
    pub fn new(mut small: TinyLm, d_target: usize, rng: &mut impl Rng) -> Self {
        let cot_id = small.add_token_mean_init();
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let w = Array2::from_shape_fn((small.cfg.d_model, d_target), |_| normal.sample(rng));
        small.params.insert("proj.w", w);
        small.params.insert("proj.b", Array2::zeros((1, d_target)));
        ImplicitGenerator {
            lm: small,
            cot_id,
            d_target,
        }
    }

    /// Rebuild from a loaded parameter set (vocabulary already extended).
    pub fn from_params(cfg: LmConfig, params: crate::model::ParamSet, cot_id: u32) -> Result<Self> {
        for name in ["proj.w", "proj.b"] {
            if !params.contains(name) {
                return Err(Error::Checkpoint(format!("missing parameter {name}")));
            }
        }
        if cot_id as usize >= cfg.vocab_size {
            return Err(Error::Checkpoint(format!(
                "continuation token id {cot_id} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let d_target = params.get("proj.w").ncols();
        let lm = TinyLm::from_params(cfg, params)?;
        Ok(ImplicitGenerator {
            lm,
            cot_id,
            d_target,
        })
    }

    /// Input ids for generating `k` implicit vectors from a query.
    pub fn input_ids(&self, query_ids: &[u32], k: usize) -> Vec<u32> {
        let mut ids = query_ids.to_vec();
        ids.extend(std::iter::repeat(self.cot_id).take(k));
        ids
    }

    /// Differentiable implicit vectors: k×d_target from one forward pass.
    pub fn implicit_vectors_tape(
        &self,
        tape: &mut Tape,
        b: &Binding,
        query_ids: &[u32],
        k: usize,
    ) -> Var {
        assert!(k >= 1, "need at least one implicit vector");
        let ids = self.input_ids(query_ids, k);
        let embeds = self.lm.embed(tape, b, &ids);
        let hidden = self.lm.hidden_from_embeds(tape, b, embeds);
        let t = ids.len();
        let tail = tape.slice_rows(hidden, t - k, t);
        let projected = tape.matmul(tail, b.var("proj.w"));
        tape.add_row(projected, b.var("proj.b"))
    }

    /// Implicit vectors as plain data (frozen weights).
    pub fn implicit_vectors(&self, query_ids: &[u32], k: usize) -> Array2<f64> {
        let mut tape = Tape::new();
        let b = self.lm.bind_frozen(&mut tape);
        let z = self.implicit_vectors_tape(&mut tape, &b, query_ids, k);
        tape.value(z).clone()
    }

    /// Generator scalars (small LM plus projection) over answer-model
    /// scalars.
    pub fn params_ratio(&self, target: &TinyLm) -> f64 {
        self.lm.params.num_scalars() as f64 / target.params.num_scalars() as f64
    }

    /// Token string expected for the continuation token in tokenizers that
    /// feed this generator.
    pub fn cot_token() -> &'static str {
        COT_TOKEN
    }
}
