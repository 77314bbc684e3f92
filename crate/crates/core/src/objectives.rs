//! Training objectives: contrastive alignment, answer prediction, semantic
//! alignment, and their weighted combination.
//!
//! Each loss exists twice: a pure function over plain arrays (the public
//! contract, with input validation) and a tape builder used inside training
//! steps. Unit tests pin the two forms to each other and to scalar-loop
//! reference implementations.

use ndarray::Array2;

use crate::autograd::{ensure_same_shape, Tape, Var};
use crate::error::{Error, Result};

/// In-batch contrastive loss over row-paired embeddings.
///
/// Row i of `anchors` forms a positive pair with row i of `positives`; all
/// other rows of `positives` serve as negatives. Cosine similarities are
/// temperature-scaled and the diagonal log-softmax is averaged. A batch of
/// one is degenerate (loss 0) but allowed.
pub fn contrastive_alignment_loss(
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    tau: f64,
) -> Result<f64> {
    ensure_same_shape("contrastive_alignment_loss", anchors, positives)?;
    if anchors.nrows() == 0 {
        return Err(Error::InvalidArgument {
            op: "contrastive_alignment_loss",
            detail: "empty batch".into(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument {
            op: "contrastive_alignment_loss",
            detail: format!("temperature must be positive, got {tau}"),
        });
    }
    let mut tape = Tape::new();
    let a = tape.constant(anchors.clone());
    let p = tape.constant(positives.clone());
    let loss = contrastive_loss_tape(&mut tape, a, p, tau);
    Ok(tape.scalar(loss))
}

/// Tape form of [`contrastive_alignment_loss`]; differentiable through both
/// inputs.
pub fn contrastive_loss_tape(tape: &mut Tape, anchors: Var, positives: Var, tau: f64) -> Var {
    let b = tape.value(anchors).nrows();
    let an = tape.normalize_rows(anchors, 1e-12);
    let pn = tape.normalize_rows(positives, 1e-12);
    let sims = tape.matmul_nt(an, pn);
    let scaled = tape.scale(sims, 1.0 / tau);
    let logp = tape.log_softmax_rows(scaled);
    let diag: Vec<usize> = (0..b).collect();
    let picked = tape.pick_per_row(logp, &diag);
    let mean = tape.mean_all(picked);
    tape.scale(mean, -1.0)
}

/// Mean over examples of the per-example mean negative log-probability of
/// the gold answer tokens. `logprobs[i]` holds the gold-token log-probs for
/// example i, one entry per answer token.
pub fn answer_prediction_loss(logprobs: &[Vec<f64>]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::InvalidArgument {
            op: "answer_prediction_loss",
            detail: "empty batch".into(),
        });
    }
    let mut total = 0.0;
    for (i, example) in logprobs.iter().enumerate() {
        if example.is_empty() {
            return Err(Error::InvalidArgument {
                op: "answer_prediction_loss",
                detail: format!("example {i} has no answer tokens"),
            });
        }
        let sum: f64 = example.iter().sum();
        total -= sum / example.len() as f64;
    }
    Ok(total / logprobs.len() as f64)
}

/// Tape form of the answer loss. Each element of `per_example_gold_logprobs`
/// is an n_i×1 node of gold-token log-probs for one example; the result is
/// the batch mean of per-example mean negative log-probs.
pub fn answer_loss_tape(tape: &mut Tape, per_example_gold_logprobs: &[Var]) -> Var {
    assert!(!per_example_gold_logprobs.is_empty());
    let mut per_example = Vec::with_capacity(per_example_gold_logprobs.len());
    for &lp in per_example_gold_logprobs {
        per_example.push(tape.mean_all(lp));
    }
    let stacked = tape.concat_rows(&per_example);
    let mean = tape.mean_all(stacked);
    tape.scale(mean, -1.0)
}

/// Negative mean cosine similarity between paired rows.
pub fn semantic_alignment_loss(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    ensure_same_shape("semantic_alignment_loss", a, b)?;
    if a.nrows() == 0 {
        return Err(Error::InvalidArgument {
            op: "semantic_alignment_loss",
            detail: "empty batch".into(),
        });
    }
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let vb = tape.constant(b.clone());
    let loss = semantic_loss_tape(&mut tape, va, vb);
    Ok(tape.scalar(loss))
}

/// Tape form of [`semantic_alignment_loss`].
pub fn semantic_loss_tape(tape: &mut Tape, a: Var, b: Var) -> Var {
    let cos = tape.cosine_rows(a, b);
    let mean = tape.mean_all(cos);
    tape.scale(mean, -1.0)
}

/// Convex combination `lambda * l_sem + (1 - lambda) * l_pred`.
pub fn total_loss(l_sem: f64, l_pred: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument {
            op: "total_loss",
            detail: format!("lambda must lie in [0, 1], got {lambda}"),
        });
    }
    Ok(lambda * l_sem + (1.0 - lambda) * l_pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use semcot_oracles as oracle;

    fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
        a.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn contrastive_matches_frozen_example() {
        // two orthogonal unit pairs at tau = 1: ln(1 + e^{-1})
        let anchors = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = contrastive_alignment_loss(&anchors, &anchors, 1.0).unwrap();
        assert!((loss - 0.313_261_687_518_222_9).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn contrastive_matches_loop_oracle_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let b = rng.random_range(1..=12);
            let d = rng.random_range(2..=24);
            let tau = rng.random_range(0.03..1.5);
            let anchors =
                Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
            let positives =
                Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
            let ours = contrastive_alignment_loss(&anchors, &positives, tau).unwrap();
            let reference =
                oracle::loop_contrastive(&to_rows(&anchors), &to_rows(&positives), tau);
            assert!((ours - reference).abs() < 1e-9, "{ours} vs {reference}");
        }
    }

    #[test]
    fn contrastive_rejects_bad_inputs() {
        let a = array![[1.0, 0.0]];
        let wide = array![[1.0, 0.0, 0.0]];
        assert!(contrastive_alignment_loss(&a, &wide, 0.05).is_err());
        assert!(contrastive_alignment_loss(&a, &a, 0.0).is_err());
        assert!(contrastive_alignment_loss(&a, &a, -1.0).is_err());
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(contrastive_alignment_loss(&empty, &empty, 0.05).is_err());
    }

    #[test]
    fn answer_loss_matches_frozen_example() {
        let lp = vec![vec![0.5f64.ln(), 0.25f64.ln()], vec![0.1f64.ln()]];
        let loss = answer_prediction_loss(&lp).unwrap();
        assert!((loss - 1.671_152_931_916_981_6).abs() < 1e-9, "{loss}");
        assert!((loss - oracle::loop_answer_loss(&lp)).abs() < 1e-12);
    }

    #[test]
    fn answer_loss_tape_agrees_with_pure_form() {
        let lp = vec![
            vec![-0.3, -1.2, -0.05],
            vec![-2.0],
            vec![-0.7, -0.9],
        ];
        let pure = answer_prediction_loss(&lp).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = lp
            .iter()
            .map(|ex| {
                let col = Array2::from_shape_vec((ex.len(), 1), ex.clone()).unwrap();
                tape.constant(col)
            })
            .collect();
        let loss = answer_loss_tape(&mut tape, &vars);
        assert!((tape.scalar(loss) - pure).abs() < 1e-12);
    }

    #[test]
    fn answer_loss_rejects_empty() {
        assert!(answer_prediction_loss(&[]).is_err());
        assert!(answer_prediction_loss(&[vec![]]).is_err());
    }

    #[test]
    fn semantic_loss_matches_frozen_example() {
        // cosines 1 and 0 average to 0.5; loss is its negation
        let a = array![[1.0, 0.0], [0.0, 2.0]];
        let b = array![[3.0, 0.0], [1.0, 0.0]];
        let loss = semantic_alignment_loss(&a, &b).unwrap();
        assert!((loss + 0.5).abs() < 1e-9);
    }

    #[test]
    fn semantic_loss_matches_loop_oracle_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let m = rng.random_range(1..=10);
            let d = rng.random_range(2..=16);
            let a = Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0));
            let b = Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0));
            let ours = semantic_alignment_loss(&a, &b).unwrap();
            let reference = oracle::loop_semantic_loss(&to_rows(&a), &to_rows(&b));
            assert!((ours - reference).abs() < 1e-9);
        }
    }

    #[test]
    fn total_loss_combination() {
        let t = total_loss(-0.8, 2.0, 0.5).unwrap();
        assert!((t - 0.6).abs() < 1e-12);
        // endpoint weights select exactly one term
        assert!((total_loss(-0.8, 2.0, 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((total_loss(-0.8, 2.0, 1.0).unwrap() + 0.8).abs() < 1e-12);
        assert!(total_loss(0.0, 0.0, 1.5).is_err());
        assert!(total_loss(0.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn contrastive_is_scale_invariant_per_row() {
        // cosine ignores row magnitudes, so per-row positive rescaling of
        // either side must not move the loss
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let anchors = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
        let positives = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
        let base = contrastive_alignment_loss(&anchors, &positives, 0.07).unwrap();
        let mut scaled = anchors.clone();
        for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
            let c = 0.1 + i as f64;
            row.mapv_inplace(|v| v * c);
        }
        let after = contrastive_alignment_loss(&scaled, &positives, 0.07).unwrap();
        assert!((base - after).abs() < 1e-9);
    }

    #[test]
    fn contrastive_gradient_pulls_pairs_together() {
        // single direction sanity: gradient step on the anchor should raise
        // its cosine with the paired positive
        let anchors = array![[0.9, 0.1, 0.0], [0.0, 1.0, 0.2]];
        let positives = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let mut tape = Tape::new();
        let a = tape.leaf(anchors.clone(), true);
        let p = tape.constant(positives.clone());
        let loss = contrastive_loss_tape(&mut tape, a, p, 0.5);
        let grads = tape.backward(loss);
        let ga = grads.wrt(a);
        let stepped = &anchors - &(ga * 0.1);
        let before = semantic_alignment_loss(&anchors, &positives).unwrap();
        let after = semantic_alignment_loss(&stepped, &positives).unwrap();
        assert!(
            after < before,
            "loss step should raise pair cosines: {before} -> {after}"
        );
    }
}
