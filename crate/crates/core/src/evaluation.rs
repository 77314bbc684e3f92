//! Accuracy and efficiency measurement over held-out queries, plus the
//! ablation and sweep drivers built on top of it.
//!
//! Accuracy is reported in percent with two decimals. Timing lives only in
//! the timed report and the event log; per-query result rows and the
//! summary stay timing-free so identical runs produce identical files.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, InferenceConfig};
use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::inference::{explicit_infer, extract_answer, implicit_infer};
use crate::run::{RunDir, RunLogger};
use crate::training::{run_pipeline, PipelineArtifacts};

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Fraction correct as a percentage in [0, 100], rounded to 2 decimals.
pub fn accuracy_percent(correct: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    round2(100.0 * correct as f64 / n as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Identity of a resolved configuration: the hash of its serialized form.
pub fn config_hash(cfg: &Config) -> String {
    let text = toml::to_string_pretty(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Implicit,
    Explicit,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Implicit => "implicit",
            Method::Explicit => "explicit",
        }
    }
}

/// One query's outcome for one method. Timing-free on purpose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRow {
    pub id: String,
    pub method: String,
    pub query: String,
    pub gold: String,
    pub text: String,
    pub extracted: Option<String>,
    pub correct: bool,
    pub target_passes: u64,
    pub generator_passes: u64,
}

/// One method's scores over a query set for a single seed.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: String,
    pub correct: usize,
    pub n: usize,
    pub accuracy_percent: f64,
    pub time_mean_ms: f64,
    pub time_std_ms: f64,
    pub mean_target_passes: f64,
    pub mean_generator_passes: f64,
    pub rows: Vec<QueryRow>,
}

/// Published result block for one (method, dataset) cell. Per-seed
/// accuracies are retained next to the aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub accuracy_percent: f64,
    pub time_mean_ms: f64,
    pub time_std_ms: f64,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub per_seed_accuracy: Vec<f64>,
    pub config_hash: String,
}

/// Score one method over the given examples. The first `timing_warmup`
/// queries are answered and scored but excluded from the time statistics,
/// unless that would leave nothing to time.
pub fn evaluate_method(
    arts: &PipelineArtifacts,
    method: Method,
    examples: &[Example],
    inf: &InferenceConfig,
    k_eval: usize,
) -> MethodEval {
    let warmup = if examples.len() > inf.timing_warmup {
        inf.timing_warmup
    } else {
        0
    };
    let mut rows = Vec::with_capacity(examples.len());
    let mut times = Vec::new();
    let mut correct = 0usize;
    for (i, ex) in examples.iter().enumerate() {
        let t0 = Instant::now();
        let run = match method {
            Method::Implicit => implicit_infer(
                &arts.target,
                &arts.generator,
                &arts.tok,
                &arts.tok_small,
                &ex.query,
                k_eval,
                inf,
            ),
            Method::Explicit => explicit_infer(&arts.target, &arts.tok, &ex.query, inf),
        };
        let dt_ms = t0.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            times.push(dt_ms);
        }
        let extracted = extract_answer(&ex.domain, &run.text);
        let gold = ex.answer.trim().to_lowercase();
        let ok = extracted.as_deref() == Some(gold.as_str());
        if ok {
            correct += 1;
        }
        rows.push(QueryRow {
            id: ex.id.clone(),
            method: method.name().to_string(),
            query: ex.query.clone(),
            gold,
            text: run.text,
            extracted,
            correct: ok,
            target_passes: run.target_passes,
            generator_passes: run.generator_passes,
        });
    }
    let (time_mean_ms, time_std_ms) = mean_std(&times);
    let n = examples.len();
    let sum_t: u64 = rows.iter().map(|r| r.target_passes).sum();
    let sum_g: u64 = rows.iter().map(|r| r.generator_passes).sum();
    MethodEval {
        method: method.name().to_string(),
        correct,
        n,
        accuracy_percent: accuracy_percent(correct, n),
        time_mean_ms,
        time_std_ms,
        mean_target_passes: if n == 0 { 0.0 } else { sum_t as f64 / n as f64 },
        mean_generator_passes: if n == 0 { 0.0 } else { sum_g as f64 / n as f64 },
        rows,
    }
}

/// Everything one evaluation produces: the per-method timed reports, the
/// timing-free summary value, and the per-query rows.
#[derive(Debug)]
pub struct EvalOutcome {
    pub reports: Vec<EvalReport>,
    pub summary: serde_json::Value,
    pub rows: Vec<QueryRow>,
}

/// Evaluate both methods on the test split. When `run` is given, writes
/// `results.jsonl` (per-query rows), `summary.json` (timing-free), and
/// `eval_report.json` (timed).
pub fn evaluate_pipeline(
    cfg: &Config,
    arts: &PipelineArtifacts,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
) -> Result<EvalOutcome> {
    let k = cfg.generator.k_eval;
    if k == 0 || k > cfg.generator.k_train {
        return Err(Error::config(format!(
            "k_eval = {k} must be in 1..=k_train ({})",
            cfg.generator.k_train
        )));
    }
    let test = &arts.splits.test;
    if test.is_empty() {
        return Err(Error::data("test split is empty"));
    }
    let chash = config_hash(cfg);
    let mut reports = Vec::new();
    let mut all_rows = Vec::new();
    let mut method_summaries = Vec::new();
    for method in [Method::Implicit, Method::Explicit] {
        let ev = evaluate_method(arts, method, test, &cfg.inference, k);
        logger.metric(serde_json::json!({
            "phase": "eval",
            "method": ev.method,
            "accuracy_percent": ev.accuracy_percent,
            "correct": ev.correct,
            "n": ev.n,
        }));
        logger.event(
            "eval_timing",
            serde_json::json!({
                "method": ev.method,
                "time_mean_ms": ev.time_mean_ms,
                "time_std_ms": ev.time_std_ms,
            }),
        );
        method_summaries.push(serde_json::json!({
            "method": ev.method,
            "accuracy_percent": ev.accuracy_percent,
            "correct": ev.correct,
            "mean_target_passes": ev.mean_target_passes,
            "mean_generator_passes": ev.mean_generator_passes,
        }));
        reports.push(EvalReport {
            method: ev.method.clone(),
            dataset: cfg.data.task.clone(),
            accuracy_percent: ev.accuracy_percent,
            time_mean_ms: ev.time_mean_ms,
            time_std_ms: ev.time_std_ms,
            n: ev.n,
            seeds: vec![cfg.seed],
            per_seed_accuracy: vec![ev.accuracy_percent],
            config_hash: chash.clone(),
        });
        all_rows.extend(ev.rows);
    }
    let summary = serde_json::json!({
        "dataset": cfg.data.task,
        "n": test.len(),
        "seed": cfg.seed,
        "config_hash": chash,
        "methods": method_summaries,
    });
    if let Some(r) = run {
        write_rows_jsonl(&r.results_path(), &all_rows)?;
        r.write_json("summary.json", &summary)?;
        let timed = serde_json::to_value(&reports)
            .map_err(|e| Error::data(format!("report serialization: {e}")))?;
        r.write_json("eval_report.json", &timed)?;
    }
    logger.flush();
    Ok(EvalOutcome {
        reports,
        summary,
        rows: all_rows,
    })
}

fn write_rows_jsonl(path: &std::path::Path, rows: &[QueryRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::data(format!("result row serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Merge single-seed reports into per-method aggregates. The headline
/// accuracy is the median over seeds; per-seed values are kept. Time mean
/// averages the per-seed means and time std is their spread (a single
/// seed keeps its own per-query std).
pub fn aggregate_reports(per_seed: &[(u64, Vec<EvalReport>)]) -> Vec<EvalReport> {
    assert!(!per_seed.is_empty(), "no reports to aggregate");
    let methods: Vec<String> = per_seed[0].1.iter().map(|r| r.method.clone()).collect();
    let mut out = Vec::new();
    for m in &methods {
        let cells: Vec<(u64, &EvalReport)> = per_seed
            .iter()
            .map(|(s, rs)| (*s, rs.iter().find(|r| &r.method == m).expect("method present")))
            .collect();
        let accs: Vec<f64> = cells.iter().map(|(_, r)| r.accuracy_percent).collect();
        let means: Vec<f64> = cells.iter().map(|(_, r)| r.time_mean_ms).collect();
        let (tmean, tstd) = if cells.len() == 1 {
            (cells[0].1.time_mean_ms, cells[0].1.time_std_ms)
        } else {
            mean_std(&means)
        };
        let first = cells[0].1;
        out.push(EvalReport {
            method: m.clone(),
            dataset: first.dataset.clone(),
            accuracy_percent: round2(median(&accs)),
            time_mean_ms: tmean,
            time_std_ms: tstd,
            n: first.n,
            seeds: cells.iter().map(|(s, _)| *s).collect(),
            per_seed_accuracy: accs,
            config_hash: first.config_hash.clone(),
        });
    }
    out
}

/// Named single-change variants of the base configuration.
pub fn ablation_config(cfg: &Config, variant: &str) -> Result<Config> {
    let mut out = cfg.clone();
    match variant {
        "nst" => out.generator.scorer = "raw_mean_pool".into(),
        "nsa" => out.generator.scorer = "none".into(),
        "nll" => out.generator.trunk = "target_copy".into(),
        other => {
            return Err(Error::config(format!(
                "unknown ablation '{other}' (expected nst, nsa, or nll)"
            )))
        }
    }
    Ok(out)
}

pub struct AblationOutcome {
    pub variant: String,
    pub arts: PipelineArtifacts,
    pub eval: EvalOutcome,
}

/// Train and evaluate one ablation variant. Structural expectations are
/// asserted: scorer variants must produce the matching scorer kind and the
/// large-trunk variant must match the answer model's width.
pub fn run_ablation(
    cfg: &Config,
    variant: &str,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
) -> Result<AblationOutcome> {
    let vcfg = ablation_config(cfg, variant)?;
    let arts = run_pipeline(&vcfg, run, logger)?;
    match variant {
        "nst" => assert_eq!(arts.scorer.kind(), "raw_mean_pool"),
        "nsa" => assert_eq!(arts.scorer.kind(), "none"),
        "nll" => assert_eq!(
            arts.generator.lm.cfg.d_model, arts.target.cfg.d_model,
            "large-trunk variant must copy the answer model width"
        ),
        _ => unreachable!(),
    }
    let eval = evaluate_pipeline(&vcfg, &arts, run, logger)?;
    Ok(AblationOutcome {
        variant: variant.to_string(),
        arts,
        eval,
    })
}

/// One row of a sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub accuracy_percent: f64,
    pub explicit_accuracy_percent: f64,
    pub time_mean_ms: f64,
    pub checkpoint_hash: Option<String>,
}

pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const K_EVAL_GRID: [usize; 5] = [1, 2, 3, 4, 5];

fn implicit_report<'a>(reports: &'a [EvalReport]) -> &'a EvalReport {
    reports
        .iter()
        .find(|r| r.method == "implicit")
        .expect("implicit report present")
}

fn explicit_report<'a>(reports: &'a [EvalReport]) -> &'a EvalReport {
    reports
        .iter()
        .find(|r| r.method == "explicit")
        .expect("explicit report present")
}

/// Sweep the loss-mixing weight: one full training and evaluation per grid
/// value. Each value gets its own child run directory when `run` is given.
pub fn lambda_sweep(
    cfg: &Config,
    grid: &[f64],
    run: Option<&RunDir>,
    logger: &mut RunLogger,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("empty lambda grid"));
    }
    let mut rows = Vec::new();
    for &lambda in grid {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut vcfg = cfg.clone();
        vcfg.generator.lambda = lambda;
        let child = match run {
            Some(r) => Some(RunDir::create(&r.root.join(format!("lambda_{lambda:.2}")))?),
            None => None,
        };
        let arts = run_pipeline(&vcfg, child.as_ref(), logger)?;
        let eval = evaluate_pipeline(&vcfg, &arts, child.as_ref(), logger)?;
        let imp = implicit_report(&eval.reports);
        let exp = explicit_report(&eval.reports);
        rows.push(SweepRow {
            param: "lambda".into(),
            value: lambda,
            accuracy_percent: imp.accuracy_percent,
            explicit_accuracy_percent: exp.accuracy_percent,
            time_mean_ms: imp.time_mean_ms,
            checkpoint_hash: Some(arts.freeze.generator_after.clone()),
        });
        logger.event(
            "sweep_row",
            serde_json::json!({"param": "lambda", "value": lambda,
                "accuracy_percent": imp.accuracy_percent}),
        );
    }
    if let Some(r) = run {
        write_sweep_outputs(r, "lambda_sweep", &rows)?;
    }
    Ok(rows)
}

/// Sweep the number of continuation vectors consumed at answer time. The
/// model is trained once; every row re-evaluates the same frozen
/// checkpoint and records its hash so the table is attributable.
pub fn k_eval_sweep(
    cfg: &Config,
    grid: &[usize],
    run: Option<&RunDir>,
    logger: &mut RunLogger,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("empty k grid"));
    }
    let max_k = *grid.iter().max().unwrap();
    if max_k > cfg.generator.k_train {
        return Err(Error::config(format!(
            "k grid maximum {max_k} exceeds k_train = {}; the generator was \
             never trained to emit that many vectors",
            cfg.generator.k_train
        )));
    }
    if grid.contains(&0) {
        return Err(Error::config("k = 0 is not evaluable"));
    }
    let arts = run_pipeline(cfg, run, logger)?;
    let trained_hash = arts.generator.lm.params.content_hash();
    let mut rows = Vec::new();
    for &k in grid {
        let mut vcfg = cfg.clone();
        vcfg.generator.k_eval = k;
        let eval = evaluate_pipeline(&vcfg, &arts, None, logger)?;
        let imp = implicit_report(&eval.reports);
        let exp = explicit_report(&eval.reports);
        let row_hash = arts.generator.lm.params.content_hash();
        assert_eq!(row_hash, trained_hash, "checkpoint drifted between sweep rows");
        rows.push(SweepRow {
            param: "k_eval".into(),
            value: k as f64,
            accuracy_percent: imp.accuracy_percent,
            explicit_accuracy_percent: exp.accuracy_percent,
            time_mean_ms: imp.time_mean_ms,
            checkpoint_hash: Some(row_hash),
        });
        logger.event(
            "sweep_row",
            serde_json::json!({"param": "k_eval", "value": k,
                "accuracy_percent": imp.accuracy_percent}),
        );
    }
    if let Some(r) = run {
        write_sweep_outputs(r, "k_eval_sweep", &rows)?;
    }
    Ok(rows)
}

/// CSV rendering of a sweep table (header plus one line per row).
pub fn sweep_table_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("param,value,accuracy_percent,explicit_accuracy_percent,time_mean_ms,checkpoint_hash\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.3},{}\n",
            r.param,
            r.value,
            r.accuracy_percent,
            r.explicit_accuracy_percent,
            r.time_mean_ms,
            r.checkpoint_hash.as_deref().unwrap_or("")
        ));
    }
    out
}

/// Markdown rendering of a sweep table.
pub fn sweep_table_markdown(rows: &[SweepRow]) -> String {
    let mut out = String::from("| param | value | accuracy % | explicit % | time mean ms |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {:.2} | {:.2} | {:.3} |\n",
            r.param, r.value, r.accuracy_percent, r.explicit_accuracy_percent, r.time_mean_ms
        ));
    }
    out
}

fn write_sweep_outputs(run: &RunDir, name: &str, rows: &[SweepRow]) -> Result<()> {
    let csv_path = run.root.join(format!("{name}.csv"));
    std::fs::write(&csv_path, sweep_table_csv(rows)).map_err(|e| Error::io(&csv_path, e))?;
    let md_path = run.root.join(format!("{name}.md"));
    std::fs::write(&md_path, sweep_table_markdown(rows)).map_err(|e| Error::io(&md_path, e))?;
    let value = serde_json::to_value(rows)
        .map_err(|e| Error::data(format!("sweep serialization: {e}")))?;
    run.write_json(&format!("{name}.json"), &value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::RunLogger;

    fn tiny_cfg() -> Config {
        let mut cfg = Config::default();
        cfg.seed = 11;
        cfg.data.n_examples = 28;
        cfg.data.task = "coinflip".into();
        cfg.model.d_model = 32;
        cfg.model.n_layers = 2;
        cfg.model.n_heads = 2;
        cfg.model.max_seq_len = 96;
        cfg.small_model.d_model = 16;
        cfg.small_model.n_layers = 1;
        cfg.small_model.n_heads = 2;
        cfg.small_model.max_seq_len = 96;
        cfg.pretrain.epochs = 1;
        cfg.pretrain.batch_size = 8;
        cfg.sentence_transformer.epochs = 1;
        cfg.sentence_transformer.backbone_layers = 1;
        cfg.sentence_transformer.d_sem = 16;
        cfg.generator.epochs = 1;
        cfg.generator.k_train = 2;
        cfg.generator.k_eval = 1;
        cfg.inference.max_answer_tokens = 8;
        cfg.inference.max_explicit_tokens = 24;
        cfg.inference.timing_warmup = 1;
        cfg
    }

    #[test]
    fn percent_rounding_and_median() {
        assert_eq!(accuracy_percent(2, 3), 66.67);
        assert_eq!(accuracy_percent(1, 1), 100.0);
        assert_eq!(accuracy_percent(0, 5), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn evaluation_writes_reports_and_timing_free_summary() {
        let cfg = tiny_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::create(&tmp.path().join("run")).unwrap();
        let mut logger = RunLogger::in_memory();
        let arts = run_pipeline(&cfg, Some(&run), &mut logger).unwrap();
        let out = evaluate_pipeline(&cfg, &arts, Some(&run), &mut logger).unwrap();

        assert_eq!(out.reports.len(), 2);
        let n_test = arts.splits.test.len();
        assert_eq!(out.rows.len(), 2 * n_test);

        let results = std::fs::read_to_string(run.results_path()).unwrap();
        assert_eq!(results.lines().count(), 2 * n_test);
        let summary = std::fs::read_to_string(run.summary_path()).unwrap();
        assert!(!summary.contains("time"), "summary must stay timing-free");
        let timed = std::fs::read_to_string(run.root.join("eval_report.json")).unwrap();
        assert!(timed.contains("time_mean_ms"));

        let imp = implicit_report(&out.reports);
        assert_eq!(imp.n, n_test);
        assert_eq!(imp.seeds, vec![cfg.seed]);
        assert_eq!(imp.per_seed_accuracy.len(), 1);
        assert_eq!(imp.config_hash, config_hash(&cfg));

        // every implicit row billed exactly one generator pass
        for row in out.rows.iter().filter(|r| r.method == "implicit") {
            assert_eq!(row.generator_passes, 1);
        }
    }

    #[test]
    fn no_scorer_training_matches_zero_weight_semantic_loss() {
        let mut none_cfg = tiny_cfg();
        none_cfg.generator.scorer = "none".into();
        let mut zero_cfg = tiny_cfg();
        zero_cfg.generator.lambda = 0.0;

        let mut log_a = RunLogger::null();
        let mut log_b = RunLogger::null();
        let a = run_pipeline(&none_cfg, None, &mut log_a).unwrap();
        let b = run_pipeline(&zero_cfg, None, &mut log_b).unwrap();
        assert_eq!(
            a.freeze.generator_after, b.freeze.generator_after,
            "dropping the semantic term must equal weighting it to zero"
        );
    }

    #[test]
    fn singleton_lambda_sweep_matches_direct_run() {
        let cfg = tiny_cfg();
        let mut log_a = RunLogger::null();
        let rows = lambda_sweep(&cfg, &[cfg.generator.lambda], None, &mut log_a).unwrap();
        assert_eq!(rows.len(), 1);

        let mut log_b = RunLogger::null();
        let arts = run_pipeline(&cfg, None, &mut log_b).unwrap();
        let eval = evaluate_pipeline(&cfg, &arts, None, &mut log_b).unwrap();
        let imp = implicit_report(&eval.reports);
        assert_eq!(rows[0].accuracy_percent, imp.accuracy_percent);
        assert_eq!(
            rows[0].checkpoint_hash.as_deref(),
            Some(arts.freeze.generator_after.as_str())
        );
    }

    #[test]
    fn k_sweep_reuses_one_verified_checkpoint() {
        let cfg = tiny_cfg();
        let mut logger = RunLogger::null();
        let rows = k_eval_sweep(&cfg, &[1, 2], None, &mut logger).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].checkpoint_hash, rows[1].checkpoint_hash);
        assert!(rows[0].checkpoint_hash.is_some());
    }

    #[test]
    fn k_sweep_rejects_untrained_widths() {
        let cfg = tiny_cfg();
        let mut logger = RunLogger::null();
        let err = k_eval_sweep(&cfg, &[1, 5], None, &mut logger).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ablation_configs_flip_one_knob() {
        let cfg = tiny_cfg();
        assert_eq!(ablation_config(&cfg, "nst").unwrap().generator.scorer, "raw_mean_pool");
        assert_eq!(ablation_config(&cfg, "nsa").unwrap().generator.scorer, "none");
        assert_eq!(ablation_config(&cfg, "nll").unwrap().generator.trunk, "target_copy");
        assert!(ablation_config(&cfg, "bogus").is_err());
    }

    #[test]
    fn trunk_budget_rejects_oversized_copy() {
        let mut cfg = tiny_cfg();
        cfg.generator.trunk = "target_copy".into();
        cfg.generator.max_trunk_params = 10;
        let mut logger = RunLogger::null();
        let err = match run_pipeline(&cfg, None, &mut logger) {
            Err(e) => e,
            Ok(_) => panic!("oversized trunk must be rejected"),
        };
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn aggregate_takes_median_and_keeps_seeds() {
        let mk = |acc: f64| EvalReport {
            method: "implicit".into(),
            dataset: "coinflip".into(),
            accuracy_percent: acc,
            time_mean_ms: 1.0,
            time_std_ms: 0.1,
            n: 10,
            seeds: vec![0],
            per_seed_accuracy: vec![acc],
            config_hash: "h".into(),
        };
        let merged = aggregate_reports(&[
            (1, vec![mk(50.0)]),
            (2, vec![mk(70.0)]),
            (3, vec![mk(60.0)]),
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].accuracy_percent, 60.0);
        assert_eq!(merged[0].seeds, vec![1, 2, 3]);
        assert_eq!(merged[0].per_seed_accuracy, vec![50.0, 70.0, 60.0]);
    }
}
