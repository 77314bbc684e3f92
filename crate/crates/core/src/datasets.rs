//! Synthetic reasoning tasks, their ground-truth generators, paraphrase
//! variants, dataset splits, and JSONL persistence.
//!
//! Two task families are generated constructively, so every example carries
//! a correct answer by construction: coin-flip parity questions and small
//! arithmetic word problems. All surface text draws from one closed lexicon
//! so the word-level tokenizer never sees an unknown word.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{surface_split, Tokenizer};

/// One task instance. `reasoning` is the full ground-truth chain written in
/// task vocabulary; `answer` is the bare final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub query: String,
    pub reasoning: String,
    pub answer: String,
    pub domain: String,
}

/// A (full, condensed) reasoning pair for contrastive training. The
/// condensed side must be strictly shorter in surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPair {
    pub id: String,
    pub full: String,
    pub condensed: String,
    pub source_id: String,
}

impl ReasoningPair {
    pub fn new(id: &str, full: &str, condensed: &str, source_id: &str) -> Result<Self> {
        let nf = surface_split(full).len();
        let nc = surface_split(condensed).len();
        if nc == 0 {
            return Err(Error::data(format!("pair {id}: condensed side is empty")));
        }
        if nc >= nf {
            return Err(Error::data(format!(
                "pair {id}: condensed side has {nc} tokens, full side {nf}; it must be strictly shorter"
            )));
        }
        Ok(ReasoningPair {
            id: id.to_string(),
            full: full.to_string(),
            condensed: condensed.to_string(),
            source_id: source_id.to_string(),
        })
    }
}

/// Agent names usable in either task.
pub const NAMES: &[&str] = &[
    "mailey", "maurisa", "sager", "zyheir", "mora", "tavin", "lysa", "dren", "kipp", "sola",
    "brem", "nila", "orin", "vesa", "juno", "rix", "thea", "malo", "quin", "zara",
];

const ITEMS: &[&str] = &["marbles", "apples", "shells", "cards"];

/// Every word the generators, paraphraser, and prompt templates can emit.
/// The tokenizer built from this list is the single vocabulary shared by
/// all models.
pub fn task_lexicon() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = vec![
        // coin-flip surface forms
        "a", "coin", "is", "heads", "up", "the", "flips", "flip", "does", "not", "still",
        "turns", "over", "leaves", "alone", "keeps", "as", "it", "starts", "initially",
        "remain", "remains", "after", "all", "this", "by", "flipped", "did", "was", "times",
        "even", "odd", "number", "an", "so", "longer", "now", "nobody",
        // arithmetic surface forms
        "with", "finds", "more", "gives", "away", "loses", "gets", "picks", "then", "of",
        "doubles", "how", "many", "have", "begins", "calculating", "adding", "subtracting",
        // prompt scaffolding and answers
        "let's", "think", "step", "answer", "yes", "no",
    ];
    words.extend_from_slice(NAMES);
    words.extend_from_slice(ITEMS);
    words
}

/// Tokenizer over the closed task lexicon.
pub fn task_tokenizer() -> Tokenizer {
    Tokenizer::new(&task_lexicon())
}

/// Phrase pools for coin-flip surface variation. Index 0 is the canonical
/// template; the rest are paraphrases with identical semantics.
const INTROS: &[&str] = &[
    "a coin is heads up .",
    "the coin starts heads up .",
    "initially the coin is heads up .",
];
const FLIP_PHRASES: &[&str] = &[
    "{n} flips the coin .",
    "{n} turns the coin over .",
    "the coin is flipped by {n} .",
];
const NOFLIP_PHRASES: &[&str] = &[
    "{n} does not flip the coin .",
    "{n} leaves the coin alone .",
    "{n} keeps the coin as it is .",
];
const QUESTIONS: &[&str] = &[
    "is the coin still heads up ?",
    "does the coin remain heads up ?",
    "is the coin heads up after all this ?",
];

fn coinflip_query(names: &[&str], flips: &[bool], intro: usize, phrase: usize, question: usize) -> String {
    let mut parts = vec![INTROS[intro].to_string()];
    for (name, &f) in names.iter().zip(flips) {
        let pool = if f { FLIP_PHRASES } else { NOFLIP_PHRASES };
        parts.push(pool[phrase].replace("{n}", name));
    }
    parts.push(QUESTIONS[question].to_string());
    parts.join(" ")
}

fn coinflip_reasoning(names: &[&str], flips: &[bool]) -> String {
    let mut parts = Vec::new();
    for (name, &f) in names.iter().zip(flips) {
        if f {
            parts.push(format!("{name} flipped the coin ."));
        } else {
            parts.push(format!("{name} did not flip the coin ."));
        }
    }
    let k = flips.iter().filter(|&&f| f).count();
    parts.push(format!("the coin was flipped {k} times ."));
    let parity = if k % 2 == 0 { "even" } else { "odd" };
    parts.push(format!("{k} is an {parity} number ."));
    if k % 2 == 0 {
        parts.push("so the coin is still heads up .".to_string());
    } else {
        parts.push("so the coin is not heads up now .".to_string());
    }
    parts.join(" ")
}

/// Generate coin-flip parity examples with 1..=`max_agents` agents. Queries
/// use the canonical phrasing; answers are computed from the flip pattern.
pub fn gen_coinflip(n: usize, max_agents: usize, rng: &mut impl Rng) -> Vec<Example> {
    assert!(max_agents >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let agents = rng.random_range(1..=max_agents);
        let names: Vec<&str> = pick_distinct(NAMES, agents, rng);
        let flips: Vec<bool> = (0..agents).map(|_| rng.random_bool(0.5)).collect();
        let k = flips.iter().filter(|&&f| f).count();
        let answer = if k % 2 == 0 { "yes" } else { "no" };
        out.push(Example {
            id: format!("coinflip-{i:05}"),
            query: coinflip_query(&names, &flips, 0, 0, 0),
            reasoning: coinflip_reasoning(&names, &flips),
            answer: answer.to_string(),
            domain: "coinflip".to_string(),
        });
    }
    out
}

#[derive(Clone, Copy)]
enum ArithOp {
    Add(i64),
    Sub(i64),
    Double,
}

/// Generate sequential arithmetic word problems with 1..=`max_ops`
/// operations, values kept small and non-negative throughout.
pub fn gen_arithmetic(n: usize, max_ops: usize, rng: &mut impl Rng) -> Vec<Example> {
    assert!(max_ops >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let name = *NAMES.choose(rng).expect("non-empty pool");
        let item = *ITEMS.choose(rng).expect("non-empty pool");
        let start = rng.random_range(2..40i64);
        let n_ops = rng.random_range(1..=max_ops);
        let mut ops = Vec::with_capacity(n_ops);
        let mut value = start;
        for _ in 0..n_ops {
            let op = if value == 0 {
                ArithOp::Add(rng.random_range(1..30))
            } else {
                match rng.random_range(0..3) {
                    0 => ArithOp::Add(rng.random_range(1..30)),
                    1 => ArithOp::Sub(rng.random_range(1..=value)),
                    _ => ArithOp::Double,
                }
            };
            // keep the running value non-negative and within two digits
            let op = match op {
                ArithOp::Double if value > 45 => ArithOp::Sub(rng.random_range(1..=value)),
                ArithOp::Add(b) if value + b > 99 => ArithOp::Sub(rng.random_range(1..=value)),
                other => other,
            };
            value = match op {
                ArithOp::Add(b) => value + b,
                ArithOp::Sub(b) => value - b,
                ArithOp::Double => value * 2,
            };
            ops.push(op);
        }

        let mut q = vec![format!("{name} starts with {start} {item} .")];
        let mut r = vec![format!("{name} begins with {start} {item} .")];
        let mut running = start;
        for op in &ops {
            match op {
                ArithOp::Add(b) => {
                    q.push(format!("{name} finds {b} more {item} ."));
                    r.push(format!("calculating ( {running} + {b} ) = {} .", running + b));
                    running += b;
                }
                ArithOp::Sub(b) => {
                    q.push(format!("{name} gives away {b} {item} ."));
                    r.push(format!("calculating ( {running} - {b} ) = {} .", running - b));
                    running -= b;
                }
                ArithOp::Double => {
                    q.push(format!("then the number of {item} doubles ."));
                    r.push(format!("calculating ( {running} * 2 ) = {} .", running * 2));
                    running *= 2;
                }
            }
        }
        debug_assert_eq!(running, value);
        q.push(format!("how many {item} does {name} have now ?"));
        r.push(format!("so the answer is {value} ."));

        out.push(Example {
            id: format!("arithmetic-{i:05}"),
            query: q.join(" "),
            reasoning: r.join(" "),
            answer: value.to_string(),
            domain: "arithmetic".to_string(),
        });
    }
    out
}

fn pick_distinct<'a>(pool: &[&'a str], n: usize, rng: &mut impl Rng) -> Vec<&'a str> {
    assert!(n <= pool.len());
    let mut chosen: Vec<&str> = Vec::with_capacity(n);
    while chosen.len() < n {
        let cand = *pool.choose(rng).expect("non-empty pool");
        if !chosen.contains(&cand) {
            chosen.push(cand);
        }
    }
    chosen
}

/// Parse a coin-flip query back into its per-agent flip pattern. Intro and
/// question sentences both mention "heads up" and carry no action; every
/// other sentence is one agent's action. Returns None for text that does
/// not look like a coin-flip query.
pub fn coinflip_pattern(query: &str) -> Option<Vec<bool>> {
    if !query.contains("coin") {
        return None;
    }
    let mut pattern = Vec::new();
    for sentence in query.split(['.', '?']) {
        let s = sentence.trim();
        if s.is_empty() || s.contains("heads up") {
            continue;
        }
        let negated =
            s.contains("not") || s.contains("leaves the coin") || s.contains("keeps the coin");
        let flip_cue = s.contains("flip") || s.contains("turns the coin");
        if flip_cue || negated {
            pattern.push(flip_cue && !negated);
        }
    }
    if pattern.is_empty() {
        return None;
    }
    Some(pattern)
}

/// Number of actual flips in a coin-flip query.
pub fn coinflip_flip_count(query: &str) -> Option<usize> {
    coinflip_pattern(query).map(|p| p.iter().filter(|&&f| f).count())
}

/// Produce up to `n` distinct paraphrases of a coin-flip query that provably
/// preserve the flip pattern (names may change, phrasing varies, parity does
/// not). The original query is never included. Fails with a data error when
/// the pool of distinct variants is exhausted before reaching `n`.
pub fn coinflip_variants(ex: &Example, n: usize, rng: &mut impl Rng) -> Result<Vec<String>> {
    if ex.domain != "coinflip" {
        return Err(Error::data(format!(
            "variants need a coinflip example, got domain {}",
            ex.domain
        )));
    }
    let pattern = coinflip_pattern(&ex.query)
        .ok_or_else(|| Error::data(format!("cannot parse flip pattern of {}", ex.id)))?;
    let target_flips = pattern.iter().filter(|&&f| f).count();

    let mut variants = Vec::with_capacity(n);
    let mut attempts = 0;
    while variants.len() < n {
        attempts += 1;
        if attempts > n * 200 {
            return Err(Error::data(format!(
                "exhausted paraphrase pool after {attempts} attempts for {}",
                ex.id
            )));
        }
        let names = pick_distinct(NAMES, pattern.len(), rng);
        let q = coinflip_query(
            &names,
            &pattern,
            rng.random_range(0..INTROS.len()),
            rng.random_range(0..FLIP_PHRASES.len()),
            rng.random_range(0..QUESTIONS.len()),
        );
        if q == ex.query || variants.contains(&q) {
            continue;
        }
        // paraphrases must verify to the same flip pattern
        if coinflip_flip_count(&q) != Some(target_flips) {
            return Err(Error::data(format!(
                "paraphrase changed the flip pattern: {q}"
            )));
        }
        variants.push(q);
    }
    Ok(variants)
}

/// Shuffle deterministically and split by fractions. The three parts are
/// disjoint and cover the input.
pub fn split_examples(
    mut examples: Vec<Example>,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>)> {
    if !(0.0..1.0).contains(&val_frac)
        || !(0.0..1.0).contains(&test_frac)
        || val_frac + test_frac >= 1.0
    {
        return Err(Error::config(format!(
            "invalid split fractions: val {val_frac}, test {test_frac}"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    let n = examples.len();
    let n_test = (n as f64 * test_frac).round() as usize;
    let n_val = (n as f64 * val_frac).round() as usize;
    let test = examples.split_off(n - n_test);
    let val = examples.split_off(examples.len() - n_val);
    Ok((examples, val, test))
}

/// Reject examples whose text leaves the closed lexicon, with empty
/// required fields, or with duplicate ids.
pub fn validate_examples(examples: &[Example], tok: &Tokenizer) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    let unk = crate::tokenizer::UNK_ID;
    for ex in examples {
        if ex.id.is_empty() || ex.query.is_empty() || ex.answer.is_empty() {
            return Err(Error::data(format!(
                "example {:?} has an empty required field",
                ex.id
            )));
        }
        if !seen.insert(&ex.id) {
            return Err(Error::data(format!("duplicate example id {}", ex.id)));
        }
        for (field, text) in [
            ("query", &ex.query),
            ("reasoning", &ex.reasoning),
            ("answer", &ex.answer),
        ] {
            if tok.encode(text).contains(&unk) {
                return Err(Error::data(format!(
                    "example {}: {field} contains out-of-lexicon words: {text}",
                    ex.id
                )));
            }
        }
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::data(format!("serialize failed: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Field names mapping a foreign JSONL record onto an [`Example`].
#[derive(Debug, Clone)]
pub struct FieldSchema {
    pub query: String,
    pub reasoning: String,
    pub answer: String,
}

impl Default for FieldSchema {
    fn default() -> Self {
        FieldSchema {
            query: "query".into(),
            reasoning: "reasoning".into(),
            answer: "answer".into(),
        }
    }
}

/// Load examples from arbitrary JSONL under a field schema. Malformed
/// lines are collected into the returned issue list (one entry per bad
/// line) instead of aborting the load; an unreadable file is still an
/// error.
pub fn load_examples_jsonl(
    path: &Path,
    schema: &FieldSchema,
) -> Result<(Vec<Example>, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                issues.push(format!("line {lineno}: {e}"));
                continue;
            }
        };
        let field = |name: &str| -> Option<String> {
            value.get(name).and_then(|v| v.as_str()).map(String::from)
        };
        let mut missing = Vec::new();
        let query = field(&schema.query).unwrap_or_else(|| {
            missing.push(schema.query.clone());
            String::new()
        });
        let reasoning = field(&schema.reasoning).unwrap_or_else(|| {
            missing.push(schema.reasoning.clone());
            String::new()
        });
        let answer = field(&schema.answer).unwrap_or_else(|| {
            missing.push(schema.answer.clone());
            String::new()
        });
        if !missing.is_empty() {
            issues.push(format!(
                "line {lineno}: missing field(s) {}",
                missing.join(", ")
            ));
            continue;
        }
        let id = field("id").unwrap_or_else(|| format!("line{lineno}"));
        let domain = field("domain").unwrap_or_else(|| "imported".into());
        examples.push(Example {
            id,
            query,
            reasoning,
            answer,
            domain,
        });
    }
    Ok((examples, issues))
}

/// Phrase separating a query from spelled-out reasoning in training lines
/// and in the explicit inference prompt.
pub const THINK_PHRASE: &str = "let's think step by step .";

/// Phrase that introduces the final answer in every training line.
pub const ANSWER_PHRASE: &str = "the answer is";

/// The canonical training line. The end-of-sequence token is appended at
/// encode time, not here.
pub fn training_line(query: &str, reasoning: &str, answer: &str) -> String {
    format!("{query} {THINK_PHRASE} {reasoning} {ANSWER_PHRASE} {answer} .")
}

/// The answer span whose likelihood distillation maximizes. It keeps the
/// corpus answer phrasing: the fixed prefix anchors decoding into the
/// answer-sentence mode the model knows from pretraining, which carries
/// over to prefixes shorter than the trained vector count.
pub fn answer_span(answer: &str) -> String {
    format!("{ANSWER_PHRASE} {answer} .")
}

/// Inference prompt for the explicit reasoning baseline.
pub fn explicit_prompt(query: &str) -> String {
    format!("{query} {THINK_PHRASE}")
}

pub fn write_examples_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn read_examples_jsonl(path: &Path) -> Result<Vec<Example>> {
    read_jsonl(path)
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[ReasoningPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<ReasoningPair>> {
    let pairs: Vec<ReasoningPair> = read_jsonl(path)?;
    for p in &pairs {
        // re-check the shortening invariant on anything read from disk
        ReasoningPair::new(&p.id, &p.full, &p.condensed, &p.source_id)?;
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use semcot_oracles as oracle;

    #[test]
    fn coinflip_answers_match_independent_parser() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for ex in gen_coinflip(100, 3, &mut rng) {
            assert_eq!(
                oracle::coinflip_answer_from_text(&ex.query).as_deref(),
                Some(ex.answer.as_str()),
                "query: {}",
                ex.query
            );
        }
    }

    #[test]
    fn arithmetic_answers_match_independent_parser() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for ex in gen_arithmetic(100, 2, &mut rng) {
            let expected: i64 = ex.answer.parse().unwrap();
            // the sequential parser does not model doubling; verify those
            // examples against the reasoning equations instead
            if ex.query.contains("doubles") {
                assert!(ex.reasoning.contains(&format!("= {expected} .")));
            } else {
                assert_eq!(
                    oracle::arithmetic_answer_from_text(&ex.query),
                    Some(expected),
                    "query: {}",
                    ex.query
                );
            }
        }
    }

    #[test]
    fn generated_text_stays_inside_lexicon() {
        let tok = task_tokenizer();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut all = gen_coinflip(60, 3, &mut rng);
        all.extend(gen_arithmetic(60, 2, &mut rng));
        validate_examples(&all, &tok).unwrap();
    }

    #[test]
    fn sequence_lengths_fit_the_model_budget() {
        let tok = task_tokenizer();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut all = gen_coinflip(100, 3, &mut rng);
        all.extend(gen_arithmetic(100, 2, &mut rng));
        for ex in &all {
            let line = training_line(&ex.query, &ex.reasoning, &ex.answer);
            let n = tok.encode(&line).len() + 1;
            assert!(n <= 160, "training line too long ({n}): {line}");
        }
    }

    #[test]
    fn variants_preserve_the_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples = gen_coinflip(5, 3, &mut rng);
        for ex in &examples {
            let variants = coinflip_variants(ex, 20, &mut rng).unwrap();
            assert_eq!(variants.len(), 20);
            let mut distinct = std::collections::HashSet::new();
            for v in &variants {
                assert!(distinct.insert(v.clone()), "duplicate variant {v}");
                assert_eq!(
                    oracle::coinflip_answer_from_text(v).as_deref(),
                    Some(ex.answer.as_str()),
                    "variant drifted: {v}"
                );
            }
        }
    }

    #[test]
    fn pair_invariant_rejects_non_shortening() {
        assert!(ReasoningPair::new("p0", "a b c d", "a b c", "s0").is_ok());
        assert!(ReasoningPair::new("p1", "a b c", "a b c", "s1").is_err());
        assert!(ReasoningPair::new("p2", "a b", "a b c d", "s2").is_err());
        assert!(ReasoningPair::new("p3", "a b", "", "s3").is_err());
    }

    #[test]
    fn jsonl_roundtrip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let examples = gen_coinflip(10, 3, &mut rng);
        let path = dir.path().join("examples.jsonl");
        write_examples_jsonl(&path, &examples).unwrap();
        let back = read_examples_jsonl(&path).unwrap();
        assert_eq!(examples, back);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"id\": \"x\"}\nnot json\n").unwrap();
        let err = read_examples_jsonl(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.jsonl:1"), "unexpected error: {msg}");
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let examples = gen_coinflip(100, 3, &mut rng);
        let (tr1, va1, te1) = split_examples(examples.clone(), 0.1, 0.2, 99).unwrap();
        let (tr2, va2, te2) = split_examples(examples.clone(), 0.1, 0.2, 99).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(va1, va2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len() + va1.len() + te1.len(), 100);
        assert_eq!(te1.len(), 20);
        assert_eq!(va1.len(), 10);
        let ids: std::collections::HashSet<_> = tr1
            .iter()
            .chain(&va1)
            .chain(&te1)
            .map(|e| e.id.clone())
            .collect();
        assert_eq!(ids.len(), 100, "splits overlap");
        // a different seed shuffles differently
        let (tr3, _, _) = split_examples(examples, 0.1, 0.2, 100).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let examples = gen_coinflip(10, 2, &mut rng);
        assert!(split_examples(examples.clone(), 0.6, 0.5, 1).is_err());
        assert!(split_examples(examples, -0.1, 0.2, 1).is_err());
    }

    #[test]
    fn lenient_loader_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"question\": \"q1\", \"steps\": \"r1\", \"label\": \"yes\"}\n",
                "{\"question\": \"q2\", \"label\": \"no\"}\n",
                "{\"question\": \"q3\", \"steps\": \"r3\", \"label\": \"no\"}\n",
            ),
        )
        .unwrap();
        let schema = FieldSchema {
            query: "question".into(),
            reasoning: "steps".into(),
            answer: "label".into(),
        };
        let (examples, issues) = load_examples_jsonl(&path, &schema).unwrap();
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].query, "q1");
        assert_eq!(examples[1].id, "line3");
        assert_eq!(issues.len(), 1);
        assert!(issues[0].starts_with("line 2:"), "{}", issues[0]);
    }

    #[test]
    fn lenient_loader_handles_empty_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        let (examples, issues) = load_examples_jsonl(&empty, &FieldSchema::default()).unwrap();
        assert!(examples.is_empty() && issues.is_empty());

        let garbage = dir.path().join("garbage.jsonl");
        std::fs::write(&garbage, "not json at all\n").unwrap();
        let (examples, issues) = load_examples_jsonl(&garbage, &FieldSchema::default()).unwrap();
        assert!(examples.is_empty());
        assert_eq!(issues.len(), 1);

        assert!(load_examples_jsonl(&dir.path().join("absent.jsonl"), &FieldSchema::default())
            .is_err());
    }
}
