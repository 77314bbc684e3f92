//! Command-line interface: one binary with a subcommand per pipeline
//! stage. Configuration comes from an optional TOML file plus repeatable
//! dotted-key overrides; every run with a run directory gets a resolved
//! config snapshot, line-delimited JSON logs, and checkpoints there.
//! Failures print one machine-readable JSON object to stderr and map to
//! exit codes: 2 for config problems, 3 for data problems, 4 for training
//! divergence.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_reports, evaluate_pipeline, k_eval_sweep, lambda_sweep, run_ablation,
    sweep_table_markdown, EvalReport, SweepRow, K_EVAL_GRID, LAMBDA_GRID,
};
use crate::run::{RunDir, RunLogger};
use crate::training::{
    pretrain_corpus, run_pipeline, stage_data, stage_pairs, stage_scorer, stage_target,
};

#[derive(Parser)]
#[command(
    name = "semcot",
    version,
    about = "Implicit reasoning distillation with a semantic alignment scorer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dotted-key override, repeatable: --set generator.lambda=0.7
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Directory for logs, checkpoints, data files, and results.
    #[arg(long)]
    run_dir: Option<PathBuf>,

    /// Base RNG seed (overrides the config value).
    #[arg(long)]
    seed: Option<u64>,

    /// Number of consecutive seeds to run, starting at the base seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,

    /// Compute device; only "cpu" is built in.
    #[arg(long, default_value = "cpu")]
    device: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write the train/val/test splits.
    GenData(CommonArgs),
    /// Condense reasoning texts into (full, condensed) training pairs.
    BuildPairs(CommonArgs),
    /// Contrastively train the sentence scorer (pretrains the answer model
    /// first when no checkpoint exists).
    TrainSt(CommonArgs),
    /// Distill the implicit generator; runs every missing earlier stage.
    TrainGen(CommonArgs),
    /// Train whatever is missing, then score both methods on the test set.
    Eval(CommonArgs),
    /// Train and evaluate one single-change variant: nst, nsa, or nll.
    Ablate {
        variant: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a hyperparameter grid: "lambda" or "k-eval".
    Sweep {
        param: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Paraphrase-variant probe of the implicit reasoning space.
    CaseStudy(CommonArgs),
    /// Render a markdown report from a completed run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

/// Parse argv, dispatch, and return the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = Error::config(e.to_string());
            eprintln!("{e}");
            emit_error_json(&err);
            return err.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(result) => {
            // single line: stdout stays valid JSONL even when logs stream here
            println!("{}", serde_json::to_string(&result).expect("result serializes"));
            0
        }
        Err(err) => {
            emit_error_json(&err);
            err.exit_code()
        }
    }
}

fn emit_error_json(err: &Error) {
    let v = serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
            "exit_code": err.exit_code(),
        }
    });
    eprintln!("{v}");
}

struct Prepared {
    cfg: Config,
    run: Option<RunDir>,
    logger: RunLogger,
}

fn prepare(common: &CommonArgs) -> Result<Prepared> {
    if common.device != "cpu" {
        return Err(Error::config(format!(
            "device {:?} is not available; only cpu is built in",
            common.device
        )));
    }
    if common.seeds == 0 {
        return Err(Error::config("--seeds must be at least 1"));
    }
    let mut cfg = Config::load(common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let run = match &common.run_dir {
        Some(p) => {
            let r = RunDir::create(p)?;
            r.write_config_snapshot(&cfg)?;
            Some(r)
        }
        None => None,
    };
    let logger = match &run {
        Some(r) => RunLogger::for_dir(r)?,
        None => RunLogger::stdout(),
    };
    Ok(Prepared { cfg, run, logger })
}

fn require_single_seed(common: &CommonArgs, what: &str) -> Result<()> {
    if common.seeds != 1 {
        return Err(Error::config(format!(
            "--seeds applies to eval and ablate; {what} runs one seed"
        )));
    }
    Ok(())
}

fn require_run_dir<'a>(p: &'a Prepared, what: &str) -> Result<&'a RunDir> {
    p.run
        .as_ref()
        .ok_or_else(|| Error::config(format!("{what} writes files; pass --run-dir")))
}

fn dispatch(cmd: Command) -> Result<serde_json::Value> {
    match cmd {
        Command::GenData(common) => {
            require_single_seed(&common, "gen-data")?;
            let mut p = prepare(&common)?;
            require_run_dir(&p, "gen-data")?;
            let splits = stage_data(&p.cfg, p.run.as_ref(), &mut p.logger)?;
            p.logger.flush();
            Ok(serde_json::json!({
                "command": "gen-data",
                "train": splits.train.len(),
                "val": splits.val.len(),
                "test": splits.test.len(),
            }))
        }
        Command::BuildPairs(common) => {
            require_single_seed(&common, "build-pairs")?;
            let mut p = prepare(&common)?;
            require_run_dir(&p, "build-pairs")?;
            let splits = stage_data(&p.cfg, p.run.as_ref(), &mut p.logger)?;
            let outcome = stage_pairs(&p.cfg, p.run.as_ref(), &mut p.logger, &splits.train)?;
            p.logger.flush();
            Ok(serde_json::json!({
                "command": "build-pairs",
                "built": outcome.pairs.len(),
                "skipped": outcome.skipped.len(),
            }))
        }
        Command::TrainSt(common) => {
            require_single_seed(&common, "train-st")?;
            let mut p = prepare(&common)?;
            if p.cfg.generator.scorer != "trained" {
                return Err(Error::config(format!(
                    "scorer mode {:?} has nothing to train",
                    p.cfg.generator.scorer
                )));
            }
            let tok = crate::datasets::task_tokenizer();
            let splits = stage_data(&p.cfg, p.run.as_ref(), &mut p.logger)?;
            let outcome = stage_pairs(&p.cfg, p.run.as_ref(), &mut p.logger, &splits.train)?;
            let corpus = pretrain_corpus(&tok, &splits.train, &outcome.pairs);
            let target = stage_target(&p.cfg, p.run.as_ref(), &mut p.logger, &tok, &corpus)?;
            let (scorer, report) =
                stage_scorer(&p.cfg, p.run.as_ref(), &mut p.logger, &tok, &target, &outcome.pairs)?;
            p.logger.flush();
            Ok(serde_json::json!({
                "command": "train-st",
                "scorer_hash": scorer.params_hash(),
                "warmup_respected": report.map(|r| r.warmup_respected()),
            }))
        }
        Command::TrainGen(common) => {
            require_single_seed(&common, "train-gen")?;
            let mut p = prepare(&common)?;
            let arts = run_pipeline(&p.cfg, p.run.as_ref(), &mut p.logger)?;
            Ok(serde_json::json!({
                "command": "train-gen",
                "generator_hash": arts.freeze.generator_after,
                "target_frozen": arts.freeze.target_frozen(),
                "scorer_frozen": arts.freeze.scorer_frozen(),
                "warmup_respected": arts.gen_report.map(|r| r.warmup_respected()),
                "pairs_built": arts.pairs_built,
                "pairs_skipped": arts.pairs_skipped,
            }))
        }
        Command::Eval(common) => {
            let mut p = prepare(&common)?;
            let reports = eval_seeds(&p.cfg, p.run.as_ref(), &mut p.logger, common.seeds)?;
            Ok(serde_json::json!({
                "command": "eval",
                "reports": reports,
            }))
        }
        Command::Ablate { variant, common } => {
            let p0 = prepare(&common)?;
            let vcfg = crate::evaluation::ablation_config(&p0.cfg, &variant)?;
            let mut p = Prepared {
                cfg: vcfg,
                run: p0.run,
                logger: p0.logger,
            };
            if let Some(r) = &p.run {
                // the snapshot must show the configuration actually run
                r.write_config_snapshot(&p.cfg)?;
            }
            let reports = if common.seeds == 1 {
                let out = run_ablation(&p.cfg, &variant, p.run.as_ref(), &mut p.logger)?;
                out.eval.reports
            } else {
                eval_seeds(&p.cfg, p.run.as_ref(), &mut p.logger, common.seeds)?
            };
            Ok(serde_json::json!({
                "command": "ablate",
                "variant": variant,
                "reports": reports,
            }))
        }
        Command::Sweep { param, common } => {
            require_single_seed(&common, "sweep")?;
            let mut p = prepare(&common)?;
            let rows: Vec<SweepRow> = match param.as_str() {
                "lambda" => lambda_sweep(&p.cfg, &LAMBDA_GRID, p.run.as_ref(), &mut p.logger)?,
                "k-eval" => k_eval_sweep(&p.cfg, &K_EVAL_GRID, p.run.as_ref(), &mut p.logger)?,
                other => {
                    return Err(Error::config(format!(
                        "unknown sweep {other:?} (expected lambda or k-eval)"
                    )))
                }
            };
            Ok(serde_json::json!({
                "command": "sweep",
                "param": param,
                "rows": rows,
            }))
        }
        Command::CaseStudy(common) => {
            require_single_seed(&common, "case-study")?;
            let mut p = prepare(&common)?;
            let arts = run_pipeline(&p.cfg, p.run.as_ref(), &mut p.logger)?;
            let out = crate::case_study::run_case_study(
                &p.cfg,
                &arts,
                p.run.as_ref(),
                &mut p.logger,
                3,
                crate::case_study::VARIANTS_PER_QUERY,
            )?;
            Ok(serde_json::json!({
                "command": "case-study",
                "n_points": out.labels.len(),
                "within": out.report.within,
                "between": out.report.between,
                "ratio": out.report.ratio,
                "pca_degenerate": out.pca.degenerate,
            }))
        }
        Command::Report { run_dir } => {
            let run = RunDir::create(&run_dir)?;
            let text = render_report(&run)?;
            let path = run.root.join("report.md");
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            println!("{text}");
            Ok(serde_json::json!({
                "command": "report",
                "path": path.display().to_string(),
            }))
        }
    }
}

/// Train and evaluate `n_seeds` consecutive seeds. A single seed runs in
/// the run directory itself; multiple seeds get `seed_N` children and the
/// aggregate lands at the top level.
fn eval_seeds(
    cfg: &Config,
    run: Option<&RunDir>,
    logger: &mut RunLogger,
    n_seeds: u64,
) -> Result<Vec<EvalReport>> {
    if n_seeds == 1 {
        let arts = run_pipeline(cfg, run, logger)?;
        let out = evaluate_pipeline(cfg, &arts, run, logger)?;
        return Ok(out.reports);
    }
    let mut per_seed = Vec::new();
    for seed in cfg.seed..cfg.seed + n_seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let child = match run {
            Some(r) => Some(RunDir::create(&r.root.join(format!("seed_{seed}")))?),
            None => None,
        };
        let arts = run_pipeline(&c, child.as_ref(), logger)?;
        let out = evaluate_pipeline(&c, &arts, child.as_ref(), logger)?;
        logger.event(
            "seed_done",
            serde_json::json!({"seed": seed, "reports": out.reports.len()}),
        );
        per_seed.push((seed, out.reports));
    }
    let agg = aggregate_reports(&per_seed);
    if let Some(r) = run {
        let v = serde_json::to_value(&agg)
            .map_err(|e| Error::data(format!("report serialization: {e}")))?;
        r.write_json("eval_report.json", &v)?;
    }
    Ok(agg)
}

fn read_json_if_present(path: &std::path::Path) -> Option<serde_json::Value> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Assemble a human-readable markdown report from whatever artifacts the
/// run directory holds.
pub fn render_report(run: &RunDir) -> Result<String> {
    let manifest = read_json_if_present(&run.manifest_path());
    let summary = read_json_if_present(&run.summary_path());
    let eval = read_json_if_present(&run.root.join("eval_report.json"));
    let lambda = read_json_if_present(&run.root.join("lambda_sweep.json"));
    let k_eval = read_json_if_present(&run.root.join("k_eval_sweep.json"));
    let case = read_json_if_present(&run.root.join("case_study.json"));
    if manifest.is_none()
        && summary.is_none()
        && eval.is_none()
        && lambda.is_none()
        && k_eval.is_none()
        && case.is_none()
    {
        return Err(Error::data(format!(
            "no run artifacts found under {}",
            run.root.display()
        )));
    }

    let mut out = String::from("# Run report\n");
    if let Some(m) = &manifest {
        out.push_str("\n## Setup\n\n");
        for (label, key) in [
            ("seed", "seed"),
            ("task", "task"),
            ("scorer", "scorer"),
            ("trunk", "trunk"),
            ("lambda", "lambda"),
            ("k_train", "k_train"),
            ("k_eval", "k_eval"),
        ] {
            out.push_str(&format!("- {label}: {}\n", m[key]));
        }
        if let Some(h) = m.get("hashes") {
            out.push_str(&format!(
                "- checkpoint hashes: target {}, scorer {}, generator {}\n",
                short_hash(&h["target"]),
                short_hash(&h["scorer"]),
                short_hash(&h["generator"]),
            ));
        }
    }
    if let Some(reports) = eval.as_ref().and_then(|v| v.as_array()) {
        out.push_str("\n## Test accuracy\n\n");
        out.push_str("| method | dataset | accuracy % | n | time mean ms | time std ms | seeds |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for r in reports {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.3} | {:.3} | {} |\n",
                r["method"].as_str().unwrap_or("?"),
                r["dataset"].as_str().unwrap_or("?"),
                r["accuracy_percent"],
                r["n"],
                r["time_mean_ms"].as_f64().unwrap_or(0.0),
                r["time_std_ms"].as_f64().unwrap_or(0.0),
                r["seeds"],
            ));
        }
    } else if let Some(s) = &summary {
        out.push_str("\n## Test accuracy\n\n");
        out.push_str(&format!("```json\n{}\n```\n", serde_json::to_string_pretty(s).unwrap()));
    }
    for (title, rows) in [("Loss-mix sweep", &lambda), ("Continuation-count sweep", &k_eval)] {
        if let Some(v) = rows {
            if let Ok(parsed) = serde_json::from_value::<Vec<SweepRow>>(v.clone()) {
                out.push_str(&format!("\n## {title}\n\n"));
                out.push_str(&sweep_table_markdown(&parsed));
            }
        }
    }
    if let Some(c) = &case {
        out.push_str("\n## Paraphrase probe\n\n");
        let d = &c["dispersion"];
        out.push_str(&format!(
            "- within-cluster spread: {}\n- between-cluster spread: {}\n- ratio: {}\n",
            d["within"], d["between"], d["ratio"]
        ));
        out.push_str(&format!(
            "- projection degenerate: {}\n",
            c["pca_degenerate"]
        ));
    }
    Ok(out)
}

fn short_hash(v: &serde_json::Value) -> String {
    match v.as_str() {
        Some(s) if s.len() > 12 => s[..12].to_string(),
        Some(s) => s.to_string(),
        None => "-".to_string(),
    }
}
