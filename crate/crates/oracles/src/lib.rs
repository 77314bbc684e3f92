//! Brute-force reference implementations shared by the test suites.
//!
//! Everything in this crate is written with plain scalar loops and no shared
//! code with the main crate, so that equivalence tests against the vectorized
//! implementations actually mean something. None of this is built for speed.

/// Central finite-difference gradient of `f` at `point`.
///
/// One `f` evaluation pair per coordinate, step `h` in each direction.
pub fn fd_gradient<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Worst-case relative error between an analytic and a numeric gradient.
///
/// The denominator is floored at 1.0 so that near-zero components are judged
/// on absolute error instead of blowing up the ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs()).max(1.0);
        let err = (a - n).abs() / scale;
        if err > worst {
            worst = err;
        }
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity computed with scalar loops.
pub fn loop_cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// In-batch contrastive loss computed with an explicit double loop over (i, j).
///
/// Row i of `anchors` is paired with row i of `positives`; every other row j
/// of `positives` in the batch acts as a negative for row i.
pub fn loop_contrastive(anchors: &[Vec<f64>], positives: &[Vec<f64>], tau: f64) -> f64 {
    assert_eq!(anchors.len(), positives.len());
    assert!(!anchors.is_empty());
    assert!(tau > 0.0);
    let b = anchors.len();
    let mut total = 0.0;
    for i in 0..b {
        // log-sum-exp over the row, stabilized by the row max
        let mut sims = Vec::with_capacity(b);
        for j in 0..b {
            sims.push(loop_cosine(&anchors[i], &positives[j]) / tau);
        }
        let mut row_max = f64::NEG_INFINITY;
        for &s in &sims {
            if s > row_max {
                row_max = s;
            }
        }
        let mut denom = 0.0;
        for &s in &sims {
            denom += (s - row_max).exp();
        }
        let log_softmax_diag = (sims[i] - row_max) - denom.ln();
        total += -log_softmax_diag;
    }
    total / b as f64
}

/// Answer-token cross-entropy: per-example mean of negative log-probs,
/// then mean over examples.
pub fn loop_answer_loss(logprobs: &[Vec<f64>]) -> f64 {
    assert!(!logprobs.is_empty());
    let mut total = 0.0;
    for example in logprobs {
        assert!(!example.is_empty());
        let mut per_example = 0.0;
        for &lp in example {
            per_example += lp;
        }
        total += -per_example / example.len() as f64;
    }
    total / logprobs.len() as f64
}

/// Negative mean cosine between paired rows of two batches.
pub fn loop_semantic_loss(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let mut total = 0.0;
    for i in 0..a.len() {
        total += loop_cosine(&a[i], &b[i]);
    }
    -total / a.len() as f64
}

/// Matrix product via the textbook triple loop. `a` is m×k, `b` is k×n.
pub fn loop_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.len();
    let k = a[0].len();
    let n = b[0].len();
    assert_eq!(b.len(), k);
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Affine map applied row-wise: out[i] = x[i] · w + bias.
pub fn loop_affine(x: &[Vec<f64>], w: &[Vec<f64>], bias: &[f64]) -> Vec<Vec<f64>> {
    let mut out = loop_matmul(x, w);
    for row in &mut out {
        assert_eq!(row.len(), bias.len());
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    out
}

/// Autoregressive answer scoring: one model invocation per answer token.
///
/// `next_logprobs(i)` must run the model over the prefix extended with the
/// first `i` answer tokens and return the log-prob distribution at the last
/// position. The caller owns prefix construction, so this stays independent
/// of any single-pass teacher-forcing shortcut it is used to check.
pub fn stepwise_answer_logprobs<F>(answer: &[u32], mut next_logprobs: F) -> Vec<f64>
where
    F: FnMut(usize) -> Vec<f64>,
{
    let mut out = Vec::with_capacity(answer.len());
    for (i, &tok) in answer.iter().enumerate() {
        let dist = next_logprobs(i);
        out.push(dist[tok as usize]);
    }
    out
}

/// Parse a coin-flip query and answer it by counting flips sentence by
/// sentence. Understands both the generator templates and the paraphrase
/// variants. Returns None when the text does not look like a coin-flip task.
pub fn coinflip_answer_from_text(text: &str) -> Option<String> {
    let lower = text.to_lowercase();
    if !lower.contains("coin") {
        return None;
    }
    let mut flips = 0usize;
    let mut saw_action_sentence = false;
    for sentence in lower.split(['.', '?']) {
        let s = sentence.trim();
        if s.is_empty() {
            continue;
        }
        // opening "a coin is heads up" and the closing question carry no action
        let negated = s.contains("not")
            || s.contains("leaves the coin")
            || s.contains("keeps the coin")
            || s.contains("alone");
        let flip_cue = s.contains("flip") || s.contains("turn");
        if flip_cue || negated {
            saw_action_sentence = true;
        }
        if flip_cue && !negated {
            flips += 1;
        }
    }
    if !saw_action_sentence {
        return None;
    }
    Some(if flips % 2 == 0 { "yes" } else { "no" }.to_string())
}

/// Parse an arithmetic word problem and evaluate the underlying expression.
///
/// Recognizes the sequential-operation templates ("starts with", "finds",
/// "gives away", "doubles", "split evenly into k groups/boxes") plus the
/// grouping template ("there are N ... organized into K groups").
pub fn arithmetic_answer_from_text(text: &str) -> Option<i64> {
    let lower = text.to_lowercase();
    let sentences: Vec<&str> = lower
        .split(['.', '?'])
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();

    let mut value: Option<i64> = None;
    for s in &sentences {
        let nums = numbers_in(s);
        if s.contains("starts with") || s.contains("begins with") {
            value = Some(*nums.first()?);
        } else if s.contains("there are") && value.is_none() {
            value = Some(*nums.first()?);
        } else if s.contains("finds") || s.contains("picks up") || s.contains("gets") {
            value = Some(value? + *nums.first()?);
        } else if s.contains("gives away") || s.contains("loses") {
            value = Some(value? - *nums.first()?);
        } else if s.contains("doubles") {
            value = Some(value? * 2);
        } else if s.contains("triples") {
            value = Some(value? * 3);
        } else if s.contains("split evenly into") || s.contains("organized into") {
            let k = *nums.first()?;
            if k == 0 {
                return None;
            }
            value = Some(value? / k);
        }
    }
    value
}

/// Extract integers from a sentence. Digit characters separated only by
/// spaces fuse into one number ("1 4 5" reads as 145) because the word-level
/// tokenizer emits numbers digit by digit.
fn numbers_in(s: &str) -> Vec<i64> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_ascii_digit() {
            cur.push(ch);
        } else if ch == ' ' {
            // a space inside a digit run does not end it
        } else if !cur.is_empty() {
            if let Ok(v) = cur.parse() {
                out.push(v);
            }
            cur.clear();
        }
    }
    if !cur.is_empty() {
        if let Ok(v) = cur.parse() {
            out.push(v);
        }
    }
    out
}
