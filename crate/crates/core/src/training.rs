//! Training phases and the end-to-end pipeline.
//!
//! Three phases run in order. First both language models learn the task
//! corpus with a plain next-token objective. Then the sentence scorer
//! trains contrastively on (full, condensed) reasoning pairs, pulling each
//! pair together against in-batch negatives. Finally the implicit generator
//! distills: its continuation vectors, spliced between the query and the
//! answer span inside the frozen answer model, are optimized to keep the
//! gold answer likely while staying semantically aligned with the real
//! reasoning under the frozen scorer.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::condense::{build_pairs, Condenser, RemoteCondenser};
use crate::config::{Config, GenConfig, PhaseConfig, StConfig};
use crate::datasets::{
    gen_arithmetic, gen_coinflip, split_examples, task_tokenizer, training_line, answer_span,
    Example, ReasoningPair,
};
use crate::error::{Error, Result};
use crate::generator::{is_projection_param, ImplicitGenerator};
use crate::model::{LmConfig, TinyLm};
use crate::objectives::{answer_loss_tape, contrastive_loss_tape, semantic_loss_tape};
use crate::optim::{grads_by_name, AdamW};
use crate::run::{RunDir, RunLogger};
use crate::sentence_transformer::{is_head_param, SentenceTransformer};
use crate::tokenizer::{Tokenizer, COT_TOKEN, EOS_ID};
use crate::autograd::Tape;

/// Outcome of one training phase.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: usize,
    pub warmup_steps: usize,
    pub final_loss: f64,
    /// Hash of the parameters that warm-up must not touch, taken before
    /// the first step.
    pub warmup_frozen_before: Option<String>,
    /// Hash of the same parameters right after the warm-up steps finished.
    pub warmup_frozen_after: Option<String>,
}

impl TrainReport {
    pub fn warmup_respected(&self) -> bool {
        self.warmup_frozen_before == self.warmup_frozen_after
    }
}

/// Parameter hashes taken around distillation, proving what moved and what
/// stayed frozen.
#[derive(Debug, Clone)]
pub struct FreezeReport {
    pub target_before: String,
    pub target_after: String,
    pub scorer_before: Option<String>,
    pub scorer_after: Option<String>,
    pub generator_before: String,
    pub generator_after: String,
}

impl FreezeReport {
    pub fn target_frozen(&self) -> bool {
        self.target_before == self.target_after
    }

    pub fn scorer_frozen(&self) -> bool {
        self.scorer_before == self.scorer_after
    }

    pub fn generator_moved(&self) -> bool {
        self.generator_before != self.generator_after
    }
}

/// Encode a text line and terminate it.
pub fn encode_line(tok: &Tokenizer, text: &str) -> Vec<u32> {
    let mut ids = tok.encode(text);
    ids.push(EOS_ID);
    ids
}

/// The pretraining corpus: every full training line, plus the condensed
/// variant for each reasoning pair, so the answer model also learns to
/// answer after short reasoning.
pub fn pretrain_corpus(
    tok: &Tokenizer,
    train: &[Example],
    pairs: &[ReasoningPair],
) -> Vec<Vec<u32>> {
    let by_source: std::collections::HashMap<&str, &ReasoningPair> =
        pairs.iter().map(|p| (p.source_id.as_str(), p)).collect();
    let mut lines = Vec::with_capacity(train.len() * 2);
    for ex in train {
        lines.push(encode_line(
            tok,
            &training_line(&ex.query, &ex.reasoning, &ex.answer),
        ));
        if let Some(p) = by_source.get(ex.id.as_str()) {
            lines.push(encode_line(
                tok,
                &training_line(&ex.query, &p.condensed, &ex.answer),
            ));
        }
    }
    lines
}

/// Next-token pretraining over encoded lines. The loss is the mean over
/// lines of each line's mean token negative log-likelihood.
pub fn pretrain_lm(
    lm: &mut TinyLm,
    lines: &[Vec<u32>],
    phase: &PhaseConfig,
    rng: &mut ChaCha8Rng,
    logger: &mut RunLogger,
    phase_name: &str,
) -> Result<TrainReport> {
    if lines.is_empty() {
        return Err(Error::data("pretraining corpus is empty"));
    }
    for line in lines {
        if line.len() < 2 {
            return Err(Error::data("pretraining line shorter than two tokens"));
        }
    }
    let mut opt = AdamW::new(phase.lr, phase.weight_decay);
    let mut order: Vec<usize> = (0..lines.len()).collect();
    let mut step = 0usize;
    let mut last_loss = f64::NAN;
    for epoch in 0..phase.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(phase.batch_size) {
            let mut tape = Tape::new();
            let b = lm.bind(&mut tape, &|_| true);
            let mut picked = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let ids = &lines[i];
                let input = &ids[..ids.len() - 1];
                let gold: Vec<usize> = ids[1..].iter().map(|&t| t as usize).collect();
                let emb = lm.embed(&mut tape, &b, input);
                let h = lm.hidden_from_embeds(&mut tape, &b, emb);
                let logits = lm.logits(&mut tape, &b, h);
                let lp = tape.log_softmax_rows(logits);
                picked.push(tape.pick_per_row(lp, &gold));
            }
            let loss = answer_loss_tape(&mut tape, &picked);
            last_loss = tape.scalar(loss);
            let grads = tape.backward(loss);
            let gmap = grads_by_name(&b, &grads);
            opt.step(&mut lm.params, &gmap)?;
            logger.metric(serde_json::json!({
                "phase": phase_name,
                "epoch": epoch,
                "step": step,
                "loss": last_loss,
            }));
            step += 1;
        }
    }
    Ok(TrainReport {
        steps: step,
        warmup_steps: 0,
        final_loss: last_loss,
        warmup_frozen_before: None,
        warmup_frozen_after: None,
    })
}

/// Contrastive scorer training on reasoning pairs (phase one).
///
/// Within each batch, pairs whose full or condensed text duplicates an
/// earlier pair are dropped so no anchor's positive also appears as its
/// negative; batches left with fewer than two pairs are skipped.
pub fn train_sentence_transformer(
    st: &mut SentenceTransformer,
    tok: &Tokenizer,
    pairs: &[ReasoningPair],
    cfg: &StConfig,
    rng: &mut ChaCha8Rng,
    logger: &mut RunLogger,
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::data("no reasoning pairs to train the scorer on"));
    }
    let full_ids: Vec<Vec<u32>> = pairs.iter().map(|p| tok.encode(&p.full)).collect();
    let cond_ids: Vec<Vec<u32>> = pairs.iter().map(|p| tok.encode(&p.condensed)).collect();

    let batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let warmup_steps = (cfg.warmup_frac * total_steps as f64).ceil() as usize;

    let backbone = |name: &str| !is_head_param(name);
    let warmup_frozen_before = st.params.content_hash_where(&backbone);
    let mut warmup_frozen_after: Option<String> = None;

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step == warmup_steps && warmup_frozen_after.is_none() {
                warmup_frozen_after = Some(st.params.content_hash_where(&backbone));
            }
            let mut seen_full = HashSet::new();
            let mut seen_cond = HashSet::new();
            let batch: Vec<usize> = chunk
                .iter()
                .copied()
                .filter(|&i| {
                    seen_full.insert(full_ids[i].clone()) && seen_cond.insert(cond_ids[i].clone())
                })
                .collect();
            if batch.len() < 2 {
                logger.event(
                    "batch_skipped",
                    serde_json::json!({"phase": "scorer", "step": step, "kept": batch.len()}),
                );
                step += 1;
                continue;
            }
            let warmup = step < warmup_steps;
            let mut tape = Tape::new();
            let b = if warmup {
                st.bind(&mut tape, &is_head_param)
            } else {
                st.bind(&mut tape, &|_| true)
            };
            let fulls: Vec<Vec<u32>> = batch.iter().map(|&i| full_ids[i].clone()).collect();
            let conds: Vec<Vec<u32>> = batch.iter().map(|&i| cond_ids[i].clone()).collect();
            let anchors = st.encode_id_batch(&mut tape, &b, &fulls);
            let positives = st.encode_id_batch(&mut tape, &b, &conds);
            let loss = contrastive_loss_tape(&mut tape, anchors, positives, cfg.tau);
            last_loss = tape.scalar(loss);
            let grads = tape.backward(loss);
            let gmap = grads_by_name(&b, &grads);
            opt.step(&mut st.params, &gmap)?;
            logger.metric(serde_json::json!({
                "phase": "scorer",
                "epoch": epoch,
                "step": step,
                "loss": last_loss,
                "batch": batch.len(),
                "warmup": warmup,
            }));
            step += 1;
        }
    }
    let warmup_frozen_after =
        warmup_frozen_after.unwrap_or_else(|| st.params.content_hash_where(&backbone));
    Ok(TrainReport {
        steps: step,
        warmup_steps,
        final_loss: last_loss,
        warmup_frozen_before: Some(warmup_frozen_before),
        warmup_frozen_after: Some(warmup_frozen_after),
    })
}

/// Semantic reference used while distilling the generator.
pub enum Scorer {
    /// Contrastively trained sentence scorer.
    Trained(SentenceTransformer),
    /// Untrained baseline: mean-pooled answer-model token embeddings.
    RawMeanPool,
    /// Semantic alignment disabled.
    None,
}

impl Scorer {
    pub fn kind(&self) -> &'static str {
        match self {
            Scorer::Trained(_) => "trained",
            Scorer::RawMeanPool => "raw_mean_pool",
            Scorer::None => "none",
        }
    }

    pub fn params_hash(&self) -> Option<String> {
        match self {
            Scorer::Trained(st) => Some(st.params.content_hash()),
            _ => None,
        }
    }

    /// Embed a reasoning text into the scoring space (plain data, frozen
    /// weights). None when semantic alignment is off.
    pub fn reference(&self, tok: &Tokenizer, target: &TinyLm, text: &str) -> Option<Array2<f64>> {
        match self {
            Scorer::Trained(st) => Some(st.encode_text(tok, text)),
            Scorer::RawMeanPool => {
                let ids = tok.encode(text);
                let emb = target.embed_data(&ids);
                let mean = emb.mean_axis(ndarray::Axis(0)).expect("non-empty text");
                Some(mean.insert_axis(ndarray::Axis(0)))
            }
            Scorer::None => None,
        }
    }
}

struct GenItem {
    q_small: Vec<u32>,
    q_target: Vec<u32>,
    /// Answer span ids, terminated.
    y: Vec<u32>,
    reference: Option<Array2<f64>>,
}

/// Distill the implicit generator against a frozen answer model and frozen
/// scorer (phase two). Returns the training report and the parameter-hash
/// evidence for the freezing contract.
pub fn train_generator(
    gen: &mut ImplicitGenerator,
    target: &TinyLm,
    scorer: &Scorer,
    tok: &Tokenizer,
    tok_small: &Tokenizer,
    examples: &[Example],
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
    logger: &mut RunLogger,
) -> Result<(TrainReport, FreezeReport)> {
    if examples.is_empty() {
        return Err(Error::data("no examples to distill on"));
    }
    let target_before = target.params.content_hash();
    let scorer_before = scorer.params_hash();
    let generator_before = gen.lm.params.content_hash();

    let items: Vec<GenItem> = examples
        .iter()
        .map(|ex| GenItem {
            q_small: tok_small.encode(&ex.query),
            q_target: tok.encode(&ex.query),
            y: encode_line(tok, &answer_span(&ex.answer)),
            reference: scorer.reference(tok, target, &ex.reasoning),
        })
        .collect();

    let batches_per_epoch = items.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let warmup_steps = (cfg.warmup_frac * total_steps as f64).ceil() as usize;
    let k = cfg.k_train;

    let trunk = |name: &str| !is_projection_param(name);
    let warmup_frozen_before = gen.lm.params.content_hash_where(&trunk);
    let mut warmup_frozen_after: Option<String> = None;

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut step = 0usize;
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step == warmup_steps && warmup_frozen_after.is_none() {
                warmup_frozen_after = Some(gen.lm.params.content_hash_where(&trunk));
            }
            let warmup = step < warmup_steps;
            let mut tape = Tape::new();
            let gen_b = if warmup {
                gen.lm.bind(&mut tape, &is_projection_param)
            } else {
                gen.lm.bind(&mut tape, &|_| true)
            };
            let tgt_b = target.bind_frozen(&mut tape);
            let st_b = match scorer {
                Scorer::Trained(st) => Some(st.bind_frozen(&mut tape)),
                _ => None,
            };

            let mut picked = Vec::with_capacity(chunk.len());
            let mut z_encs = Vec::new();
            let mut refs: Vec<Array2<f64>> = Vec::new();
            for &i in chunk {
                let it = &items[i];
                let z = gen.implicit_vectors_tape(&mut tape, &gen_b, &it.q_small, k);

                let q_emb = target.embed(&mut tape, &tgt_b, &it.q_target);
                let m = it.y.len();
                let y_emb = target.embed(&mut tape, &tgt_b, &it.y[..m - 1]);
                let input = tape.concat_rows(&[q_emb, z, y_emb]);
                let h = target.hidden_from_embeds(&mut tape, &tgt_b, input);
                let logits = target.logits(&mut tape, &tgt_b, h);
                let lp = tape.log_softmax_rows(logits);
                // rows q+k-1 .. q+k+m-2 predict the m answer tokens
                let qlen = it.q_target.len();
                let span = tape.slice_rows(lp, qlen + k - 1, qlen + k + m - 1);
                let gold: Vec<usize> = it.y.iter().map(|&t| t as usize).collect();
                picked.push(tape.pick_per_row(span, &gold));

                match scorer {
                    Scorer::Trained(st) => {
                        let mask = vec![1.0; k];
                        let enc =
                            st.encode_embeds(&mut tape, st_b.as_ref().unwrap(), z, &mask);
                        z_encs.push(enc);
                        refs.push(it.reference.clone().expect("trained scorer has refs"));
                    }
                    Scorer::RawMeanPool => {
                        let mask = vec![1.0; k];
                        let enc = tape.masked_mean_rows(z, &mask);
                        z_encs.push(enc);
                        refs.push(it.reference.clone().expect("raw scorer has refs"));
                    }
                    Scorer::None => {}
                }
            }

            let l_pred = answer_loss_tape(&mut tape, &picked);
            let l_pred_val = tape.scalar(l_pred);
            let (loss, l_sem_val) = if z_encs.is_empty() {
                (l_pred, f64::NAN)
            } else {
                let zcat = if z_encs.len() == 1 {
                    z_encs[0]
                } else {
                    tape.concat_rows(&z_encs)
                };
                let d = refs[0].ncols();
                let mut refmat = Array2::zeros((refs.len(), d));
                for (r, m) in refs.iter().enumerate() {
                    refmat.row_mut(r).assign(&m.row(0));
                }
                let refc = tape.constant(refmat);
                let l_sem = semantic_loss_tape(&mut tape, zcat, refc);
                let l_sem_val = tape.scalar(l_sem);
                let a = tape.scale(l_sem, cfg.lambda);
                let b = tape.scale(l_pred, 1.0 - cfg.lambda);
                (tape.add(a, b), l_sem_val)
            };
            last_loss = tape.scalar(loss);
            let grads = tape.backward(loss);
            let gmap = grads_by_name(&gen_b, &grads);
            opt.step(&mut gen.lm.params, &gmap)?;
            logger.metric(serde_json::json!({
                "phase": "generator",
                "epoch": epoch,
                "step": step,
                "loss": last_loss,
                "loss_pred": l_pred_val,
                "loss_sem": if l_sem_val.is_nan() {
                    serde_json::Value::Null
                } else {
                    serde_json::json!(l_sem_val)
                },
                "warmup": warmup,
            }));
            step += 1;
        }
    }

    let freeze = FreezeReport {
        target_before,
        target_after: target.params.content_hash(),
        scorer_before,
        scorer_after: scorer.params_hash(),
        generator_before,
        generator_after: gen.lm.params.content_hash(),
    };
    if !freeze.target_frozen() || !freeze.scorer_frozen() {
        return Err(Error::data(
            "frozen parameters moved during distillation (internal invariant)",
        ));
    }
    let warmup_frozen_after =
        warmup_frozen_after.unwrap_or_else(|| gen.lm.params.content_hash_where(&trunk));
    Ok((
        TrainReport {
            steps: step,
            warmup_steps,
            final_loss: last_loss,
            warmup_frozen_before: Some(warmup_frozen_before),
            warmup_frozen_after: Some(warmup_frozen_after),
        },
        freeze,
    ))
}

/// Train/validation/test split of generated examples.
pub struct DataSplits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

/// Generate the configured task mix.
pub fn generate_examples(cfg: &Config, rng: &mut ChaCha8Rng) -> Vec<Example> {
    let n = cfg.data.n_examples;
    match cfg.data.task.as_str() {
        "arithmetic" => gen_arithmetic(n, cfg.data.max_ops, rng),
        "mixed" => {
            let mut all = gen_coinflip(n / 2, cfg.data.max_agents, rng);
            all.extend(gen_arithmetic(n - n / 2, cfg.data.max_ops, rng));
            all
        }
        _ => gen_coinflip(n, cfg.data.max_agents, rng),
    }
}

/// Everything a finished training run hands to inference and evaluation.
pub struct PipelineArtifacts {
    pub tok: Tokenizer,
    pub tok_small: Tokenizer,
    pub target: TinyLm,
    pub scorer: Scorer,
    pub generator: ImplicitGenerator,
    pub splits: DataSplits,
    pub pairs_built: usize,
    pub pairs_skipped: usize,
    pub freeze: FreezeReport,
    /// None when the scorer was loaded from a checkpoint or has no training.
    pub st_report: Option<TrainReport>,
    /// None when the generator was loaded from a checkpoint.
    pub gen_report: Option<TrainReport>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn target_lm_config(cfg: &Config, vocab: usize) -> LmConfig {
    LmConfig {
        vocab_size: vocab,
        d_model: cfg.model.d_model,
        n_layers: cfg.model.n_layers,
        n_heads: cfg.model.n_heads,
        max_seq_len: cfg.model.max_seq_len,
    }
}

fn small_lm_config(cfg: &Config, vocab: usize) -> LmConfig {
    LmConfig {
        vocab_size: vocab,
        d_model: cfg.small_model.d_model,
        n_layers: cfg.small_model.n_layers,
        n_heads: cfg.small_model.n_heads,
        max_seq_len: cfg.small_model.max_seq_len,
    }
}

fn has_checkpoint(dir: &std::path::Path) -> bool {
    dir.join(crate::checkpoint::MANIFEST_FILE).exists()
}

fn ensure_lm_config(loaded: &LmConfig, expected: &LmConfig, what: &str) -> Result<()> {
    if loaded != expected {
        return Err(Error::Checkpoint(format!(
            "{what} checkpoint dimensions {loaded:?} do not match the configured {expected:?}; \
             use a fresh run directory or a matching config"
        )));
    }
    Ok(())
}

/// Load splits from a run directory if present, otherwise generate and
/// (when possible) persist them.
pub fn stage_data(cfg: &Config, run: Option<&RunDir>, logger: &mut RunLogger) -> Result<DataSplits> {
    if let Some(r) = run {
        let train_path = r.root.join("data").join("train.jsonl");
        if train_path.exists() {
            let splits = DataSplits {
                train: crate::datasets::read_examples_jsonl(&train_path)?,
                val: crate::datasets::read_examples_jsonl(&r.root.join("data").join("val.jsonl"))?,
                test: crate::datasets::read_examples_jsonl(
                    &r.root.join("data").join("test.jsonl"),
                )?,
            };
            logger.event(
                "stage",
                serde_json::json!({"stage": "data", "source": "loaded",
                    "train": splits.train.len(), "val": splits.val.len(), "test": splits.test.len()}),
            );
            return Ok(splits);
        }
    }
    let mut data_rng = rng_stream(cfg.seed, 1);
    let examples = generate_examples(cfg, &mut data_rng);
    let (train, val, test) =
        split_examples(examples, cfg.data.val_frac, cfg.data.test_frac, cfg.seed)?;
    if let Some(r) = run {
        let dir = r.root.join("data");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        crate::datasets::write_examples_jsonl(&dir.join("train.jsonl"), &train)?;
        crate::datasets::write_examples_jsonl(&dir.join("val.jsonl"), &val)?;
        crate::datasets::write_examples_jsonl(&dir.join("test.jsonl"), &test)?;
    }
    logger.event(
        "stage",
        serde_json::json!({"stage": "data", "source": "generated",
            "train": train.len(), "val": val.len(), "test": test.len()}),
    );
    Ok(DataSplits { train, val, test })
}

/// Load reasoning pairs from a run directory if present, otherwise condense
/// the training examples (and persist pairs plus the skip report).
pub fn stage_pairs(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    train: &[Example],
) -> Result<crate::condense::PairBuildOutcome> {
    if let Some(r) = run {
        let path = r.root.join("pairs.jsonl");
        if path.exists() {
            let pairs = crate::datasets::read_pairs_jsonl(&path)?;
            logger.event(
                "stage",
                serde_json::json!({"stage": "pairs", "source": "loaded", "built": pairs.len()}),
            );
            return Ok(crate::condense::PairBuildOutcome {
                pairs,
                skipped: Vec::new(),
            });
        }
    }
    let condenser = match cfg.condense.mode.as_str() {
        "remote" => Condenser::Remote(RemoteCondenser {
            endpoint: cfg.condense.endpoint.clone(),
            model: cfg.condense.model.clone(),
            api_key_env: cfg.condense.api_key_env.clone(),
            max_retries: cfg.condense.max_retries,
            timeout_secs: cfg.condense.timeout_secs,
        }),
        _ => Condenser::RuleBased,
    };
    let outcome = build_pairs(train, &condenser);
    if let Some(r) = run {
        crate::datasets::write_pairs_jsonl(&r.root.join("pairs.jsonl"), &outcome.pairs)?;
        let report = serde_json::to_value(&outcome.skipped)
            .map_err(|e| Error::data(format!("skip report serialization: {e}")))?;
        r.write_json("pairs_skipped.json", &report)?;
    }
    logger.event(
        "stage",
        serde_json::json!({"stage": "pairs", "source": "built",
            "built": outcome.pairs.len(), "skipped": outcome.skipped.len()}),
    );
    Ok(outcome)
}

/// Load the pretrained answer model from a run directory, or pretrain it
/// on the corpus and save it.
pub fn stage_target(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    tok: &Tokenizer,
    corpus: &[Vec<u32>],
) -> Result<TinyLm> {
    let expected = target_lm_config(cfg, tok.vocab_size());
    if let Some(r) = run {
        let dir = r.checkpoint_dir("target", "final");
        if has_checkpoint(&dir) {
            let (manifest, params) = crate::checkpoint::load_params(&dir)?;
            let loaded: LmConfig = serde_json::from_value(manifest.config["lm"].clone())
                .map_err(|e| Error::Checkpoint(format!("target checkpoint config: {e}")))?;
            ensure_lm_config(&loaded, &expected, "target")?;
            logger.event("stage", serde_json::json!({"stage": "target", "source": "loaded"}));
            return TinyLm::from_params(loaded, params);
        }
    }
    let mut target = TinyLm::new(expected, &mut rng_stream(cfg.seed, 2))?;
    let mut pre_rng = rng_stream(cfg.seed, 3);
    pretrain_lm(
        &mut target,
        corpus,
        &cfg.pretrain,
        &mut pre_rng,
        logger,
        "pretrain_target",
    )?;
    if let Some(r) = run {
        crate::checkpoint::save_params(
            &r.checkpoint_dir("target", "final"),
            "target",
            serde_json::json!({"lm": target.cfg}),
            cfg.seed,
            &target.params,
        )?;
    }
    logger.event("stage", serde_json::json!({"stage": "target", "source": "trained"}));
    Ok(target)
}

/// Build the configured scorer: load or contrastively train the sentence
/// scorer, or construct the parameterless ablation variants.
pub fn stage_scorer(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    tok: &Tokenizer,
    target: &TinyLm,
    pairs: &[ReasoningPair],
) -> Result<(Scorer, Option<TrainReport>)> {
    match cfg.generator.scorer.as_str() {
        "trained" => {
            if let Some(r) = run {
                let dir = r.checkpoint_dir("scorer", "final");
                if has_checkpoint(&dir) {
                    let (manifest, params) = crate::checkpoint::load_params(&dir)?;
                    let loaded: LmConfig = serde_json::from_value(manifest.config["lm"].clone())
                        .map_err(|e| Error::Checkpoint(format!("scorer checkpoint config: {e}")))?;
                    let st = SentenceTransformer::from_params(loaded, params)?;
                    logger.event(
                        "stage",
                        serde_json::json!({"stage": "scorer", "source": "loaded"}),
                    );
                    return Ok((Scorer::Trained(st), None));
                }
            }
            let mut st = SentenceTransformer::from_donor(
                target,
                cfg.sentence_transformer.backbone_layers,
                cfg.sentence_transformer.d_sem,
                &mut rng_stream(cfg.seed, 4),
            );
            let mut st_rng = rng_stream(cfg.seed, 5);
            let report = train_sentence_transformer(
                &mut st,
                tok,
                pairs,
                &cfg.sentence_transformer,
                &mut st_rng,
                logger,
            )?;
            if let Some(r) = run {
                crate::checkpoint::save_params(
                    &r.checkpoint_dir("scorer", "final"),
                    "scorer",
                    serde_json::json!({"lm": st.cfg, "d_sem": st.d_sem}),
                    cfg.seed,
                    &st.params,
                )?;
            }
            logger.event("stage", serde_json::json!({"stage": "scorer", "source": "trained"}));
            Ok((Scorer::Trained(st), Some(report)))
        }
        "raw_mean_pool" => {
            logger.event(
                "stage",
                serde_json::json!({"stage": "scorer", "source": "raw_mean_pool"}),
            );
            Ok((Scorer::RawMeanPool, None))
        }
        _ => {
            logger.event("stage", serde_json::json!({"stage": "scorer", "source": "none"}));
            Ok((Scorer::None, None))
        }
    }
}

/// Produce the generator trunk: a pretrained small LM (loaded or trained),
/// or a copy of the answer model for the large-trunk ablation.
pub fn stage_trunk(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    tok: &Tokenizer,
    target: &TinyLm,
    corpus: &[Vec<u32>],
) -> Result<TinyLm> {
    if cfg.generator.trunk == "target_copy" {
        let budget = cfg.generator.max_trunk_params;
        let scalars = target.params.num_scalars();
        if budget > 0 && scalars > budget {
            return Err(Error::config(format!(
                "target-copy trunk has {scalars} parameters, over the configured \
                 generator.max_trunk_params = {budget}"
            )));
        }
        logger.event("stage", serde_json::json!({"stage": "trunk", "source": "target_copy"}));
        return Ok(target.clone());
    }
    let expected = small_lm_config(cfg, tok.vocab_size());
    if let Some(r) = run {
        let dir = r.checkpoint_dir("small", "final");
        if has_checkpoint(&dir) {
            let (manifest, params) = crate::checkpoint::load_params(&dir)?;
            let loaded: LmConfig = serde_json::from_value(manifest.config["lm"].clone())
                .map_err(|e| Error::Checkpoint(format!("small checkpoint config: {e}")))?;
            ensure_lm_config(&loaded, &expected, "small")?;
            logger.event("stage", serde_json::json!({"stage": "trunk", "source": "loaded"}));
            return TinyLm::from_params(loaded, params);
        }
    }
    let mut small = TinyLm::new(expected, &mut rng_stream(cfg.seed, 6))?;
    let mut small_rng = rng_stream(cfg.seed, 7);
    pretrain_lm(
        &mut small,
        corpus,
        &cfg.pretrain,
        &mut small_rng,
        logger,
        "pretrain_small",
    )?;
    if let Some(r) = run {
        crate::checkpoint::save_params(
            &r.checkpoint_dir("small", "final"),
            "small",
            serde_json::json!({"lm": small.cfg}),
            cfg.seed,
            &small.params,
        )?;
    }
    logger.event("stage", serde_json::json!({"stage": "trunk", "source": "trained"}));
    Ok(small)
}

/// Load the distilled generator from a run directory, or distill it
/// against the frozen answer model and scorer and save it.
#[allow(clippy::too_many_arguments)]
pub fn stage_generator(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    tok: &Tokenizer,
    tok_small: &Tokenizer,
    target: &TinyLm,
    scorer: &Scorer,
    trunk: TinyLm,
    train: &[Example],
) -> Result<(ImplicitGenerator, FreezeReport, Option<TrainReport>)> {
    let cot_id = tok_small
        .id(COT_TOKEN)
        .ok_or_else(|| Error::data("small tokenizer lacks the continuation token"))?;
    if let Some(r) = run {
        let dir = r.checkpoint_dir("generator", "final");
        if has_checkpoint(&dir) {
            let (manifest, params) = crate::checkpoint::load_params(&dir)?;
            let loaded: LmConfig = serde_json::from_value(manifest.config["lm"].clone())
                .map_err(|e| Error::Checkpoint(format!("generator checkpoint config: {e}")))?;
            let saved_cot = manifest.config["cot_id"]
                .as_u64()
                .ok_or_else(|| Error::Checkpoint("generator checkpoint lacks cot_id".into()))?
                as u32;
            if saved_cot != cot_id {
                return Err(Error::Checkpoint(format!(
                    "generator continuation token id {saved_cot} does not match tokenizer {cot_id}"
                )));
            }
            let gen = ImplicitGenerator::from_params(loaded, params, saved_cot)?;
            let hash = gen.lm.params.content_hash();
            let freeze = FreezeReport {
                target_before: target.params.content_hash(),
                target_after: target.params.content_hash(),
                scorer_before: scorer.params_hash(),
                scorer_after: scorer.params_hash(),
                generator_before: hash.clone(),
                generator_after: hash,
            };
            logger.event("stage", serde_json::json!({"stage": "generator", "source": "loaded"}));
            return Ok((gen, freeze, None));
        }
    }
    let mut generator = ImplicitGenerator::new(trunk, cfg.model.d_model, &mut rng_stream(cfg.seed, 8));
    assert_eq!(
        generator.cot_id, cot_id,
        "tokenizer and generator disagree on the continuation token id"
    );
    let mut gen_rng = rng_stream(cfg.seed, 9);
    let (report, freeze) = train_generator(
        &mut generator,
        target,
        scorer,
        tok,
        tok_small,
        train,
        &cfg.generator,
        &mut gen_rng,
        logger,
    )?;
    if let Some(r) = run {
        crate::checkpoint::save_params(
            &r.checkpoint_dir("generator", "final"),
            "generator",
            serde_json::json!({"lm": generator.lm.cfg, "cot_id": generator.cot_id}),
            cfg.seed,
            &generator.lm.params,
        )?;
    }
    logger.event("stage", serde_json::json!({"stage": "generator", "source": "trained"}));
    Ok((generator, freeze, Some(report)))
}

/// Run the full training pipeline. When `run` is given, the config
/// snapshot, data files, checkpoints, and a manifest land in the run
/// directory; stages whose outputs already exist there are loaded instead
/// of recomputed.
pub fn run_pipeline(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
) -> Result<PipelineArtifacts> {
    cfg.validate()?;
    if let Some(r) = run {
        r.write_config_snapshot(cfg)?;
    }

    let tok = task_tokenizer();
    let splits = stage_data(cfg, run, logger)?;
    let outcome = stage_pairs(cfg, run, logger, &splits.train)?;
    let corpus = pretrain_corpus(&tok, &splits.train, &outcome.pairs);
    let target = stage_target(cfg, run, logger, &tok, &corpus)?;
    let (scorer, st_report) = stage_scorer(cfg, run, logger, &tok, &target, &outcome.pairs)?;
    let trunk = stage_trunk(cfg, run, logger, &tok, &target, &corpus)?;

    let mut tok_small = tok.clone();
    tok_small.add_special(COT_TOKEN);
    let (generator, freeze, gen_report) = stage_generator(
        cfg,
        run,
        logger,
        &tok,
        &tok_small,
        &target,
        &scorer,
        trunk,
        &splits.train,
    )?;

    if let Some(r) = run {
        r.write_manifest(&serde_json::json!({
            "seed": cfg.seed,
            "task": cfg.data.task,
            "scorer": scorer.kind(),
            "trunk": cfg.generator.trunk,
            "lambda": cfg.generator.lambda,
            "k_train": cfg.generator.k_train,
            "k_eval": cfg.generator.k_eval,
            "hashes": {
                "target": freeze.target_after,
                "scorer": freeze.scorer_after,
                "generator": freeze.generator_after,
            },
            "checkpoints": {
                "target": "ckpt/target/final",
                "scorer": match &scorer {
                    Scorer::Trained(_) => Some("ckpt/scorer/final"),
                    _ => None,
                },
                "generator": "ckpt/generator/final",
            },
            "warmup_respected": {
                "scorer": st_report.as_ref().map(|r| r.warmup_respected()),
                "generator": gen_report.as_ref().map(|r| r.warmup_respected()),
            },
            "pairs": {"built": outcome.pairs.len(), "skipped": outcome.skipped.len()},
            "data": {
                "train": splits.train.len(),
                "val": splits.val.len(),
                "test": splits.test.len(),
            },
        }))?;
    }
    logger.flush();

    Ok(PipelineArtifacts {
        tok,
        tok_small,
        target,
        scorer,
        generator,
        splits,
        pairs_built: outcome.pairs.len(),
        pairs_skipped: outcome.skipped.len(),
        freeze,
        st_report,
        gen_report,
    })
}
