//! Run configuration: TOML files, `key=value` dotted-path overrides, and
//! validation. Unknown fields anywhere are config errors, so typos fail
//! loudly instead of silently using defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelDims,
    pub small_model: ModelDims,
    pub pretrain: PhaseConfig,
    pub sentence_transformer: StConfig,
    pub generator: GenConfig,
    pub inference: InferenceConfig,
    pub condense: CondenseConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            data: DataConfig::default(),
            model: ModelDims {
                d_model: 128,
                n_layers: 4,
                n_heads: 4,
                max_seq_len: 160,
            },
            small_model: ModelDims {
                d_model: 64,
                n_layers: 2,
                n_heads: 2,
                max_seq_len: 160,
            },
            pretrain: PhaseConfig {
                epochs: 2,
                batch_size: 8,
                lr: 3e-4,
                weight_decay: 0.01,
            },
            sentence_transformer: StConfig::default(),
            generator: GenConfig::default(),
            inference: InferenceConfig::default(),
            condense: CondenseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// "coinflip", "arithmetic", or "mixed".
    pub task: String,
    pub n_examples: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Agents per coin-flip query.
    pub max_agents: usize,
    /// Operations per arithmetic query.
    pub max_ops: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            task: "coinflip".into(),
            n_examples: 1200,
            val_frac: 0.1,
            test_frac: 0.1,
            max_agents: 3,
            max_ops: 2,
        }
    }
}

/// Transformer dimensions shared by the target and generator trunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            epochs: 2,
            batch_size: 8,
            lr: 3e-4,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StConfig {
    /// How many middle layers to slice from the target model.
    pub backbone_layers: usize,
    /// Output embedding width of the scorer head.
    pub d_sem: usize,
    /// Contrastive temperature.
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of total steps during which only the head trains.
    pub warmup_frac: f64,
}

impl Default for StConfig {
    fn default() -> Self {
        StConfig {
            backbone_layers: 5,
            d_sem: 64,
            tau: 0.05,
            epochs: 2,
            batch_size: 16,
            lr: 3e-4,
            weight_decay: 0.01,
            warmup_frac: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Implicit reasoning tokens emitted during distillation.
    pub k_train: usize,
    /// Implicit reasoning tokens emitted at inference.
    pub k_eval: usize,
    /// Weight on the semantic loss; the answer loss gets 1 - lambda.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of total steps during which only the projection trains.
    pub warmup_frac: f64,
    /// Semantic scorer: "trained", "raw_mean_pool", or "none".
    pub scorer: String,
    /// Generator trunk: "small" or "target_copy".
    pub trunk: String,
    /// Upper bound on generator trunk scalars; 0 disables the check. Guards
    /// the target-copy trunk against memory blowups.
    pub max_trunk_params: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            k_train: 5,
            k_eval: 1,
            lambda: 0.5,
            epochs: 4,
            batch_size: 8,
            lr: 3e-4,
            // Decay at 0.1 keeps the projected vectors near the token
            // embedding scale, which is what lets a single vector stand in
            // for the full trained count at inference.
            weight_decay: 0.1,
            warmup_frac: 0.10,
            scorer: "trained".into(),
            trunk: "small".into(),
            max_trunk_params: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub max_answer_tokens: usize,
    /// Token budget for the explicit baseline's reasoning plus answer.
    pub max_explicit_tokens: usize,
    /// Queries discarded before timing starts.
    pub timing_warmup: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            max_answer_tokens: 30,
            max_explicit_tokens: 80,
            timing_warmup: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondenseConfig {
    /// "rule_based" or "remote".
    pub mode: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        CondenseConfig {
            mode: "rule_based".into(),
            endpoint: "".into(),
            model: "".into(),
            api_key_env: "CONDENSER_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 30,
        }
    }
}

impl Config {
    /// Load from a TOML file, then apply `key=value` overrides. File and
    /// overrides are merged over the defaults key by key, so a partial
    /// table (say, only `small_model.d_model`) keeps the remaining fields
    /// at their default values.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut value =
            toml::Value::try_from(Config::default()).expect("default config serializes");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
            merge_toml(&mut value, toml::Value::Table(table));
        }
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: Config = value
            .try_into()
            .map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !["coinflip", "arithmetic", "mixed"].contains(&c.data.task.as_str()) {
            return Err(Error::config(format!("unknown task {:?}", c.data.task)));
        }
        if c.data.n_examples < 10 {
            return Err(Error::config("data.n_examples must be at least 10"));
        }
        if !(0.0..1.0).contains(&c.data.val_frac)
            || !(0.0..1.0).contains(&c.data.test_frac)
            || c.data.val_frac + c.data.test_frac >= 1.0
        {
            return Err(Error::config("invalid data split fractions"));
        }
        for (label, m) in [("model", &c.model), ("small_model", &c.small_model)] {
            if m.d_model == 0 || m.n_layers == 0 || m.n_heads == 0 {
                return Err(Error::config(format!("{label}: dimensions must be positive")));
            }
            if m.d_model % m.n_heads != 0 {
                return Err(Error::config(format!(
                    "{label}: d_model {} not divisible by n_heads {}",
                    m.d_model, m.n_heads
                )));
            }
        }
        if !(c.sentence_transformer.tau > 0.0) {
            return Err(Error::config("sentence_transformer.tau must be positive"));
        }
        if c.sentence_transformer.backbone_layers == 0 || c.sentence_transformer.d_sem == 0 {
            return Err(Error::config("sentence transformer dims must be positive"));
        }
        for (label, f) in [
            ("sentence_transformer.warmup_frac", c.sentence_transformer.warmup_frac),
            ("generator.warmup_frac", c.generator.warmup_frac),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config(format!("{label} must lie in [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&c.generator.lambda) {
            return Err(Error::config("generator.lambda must lie in [0, 1]"));
        }
        if c.generator.k_train == 0 || c.generator.k_eval == 0 {
            return Err(Error::config("generator.k_train and k_eval must be at least 1"));
        }
        if !["trained", "raw_mean_pool", "none"].contains(&c.generator.scorer.as_str()) {
            return Err(Error::config(format!(
                "unknown generator.scorer {:?}",
                c.generator.scorer
            )));
        }
        if !["small", "target_copy"].contains(&c.generator.trunk.as_str()) {
            return Err(Error::config(format!(
                "unknown generator.trunk {:?}",
                c.generator.trunk
            )));
        }
        if !["rule_based", "remote"].contains(&c.condense.mode.as_str()) {
            return Err(Error::config(format!(
                "unknown condense.mode {:?}",
                c.condense.mode
            )));
        }
        if c.condense.mode == "remote" && c.condense.endpoint.is_empty() {
            return Err(Error::config("condense.mode = remote needs condense.endpoint"));
        }
        for (label, b) in [
            ("pretrain.batch_size", c.pretrain.batch_size),
            ("sentence_transformer.batch_size", c.sentence_transformer.batch_size),
            ("generator.batch_size", c.generator.batch_size),
        ] {
            if b == 0 {
                return Err(Error::config(format!("{label} must be positive")));
            }
        }
        if c.inference.max_answer_tokens == 0 {
            return Err(Error::config("inference.max_answer_tokens must be positive"));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Overlay `incoming` onto `base`: tables merge recursively, everything
/// else replaces. Keys unknown to the schema survive the merge and are
/// rejected at deserialization.
fn merge_toml(base: &mut toml::Value, incoming: toml::Value) {
    match (base, incoming) {
        (toml::Value::Table(b), toml::Value::Table(inc)) => {
            for (k, v) in inc {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply one `dotted.path=value` override onto a TOML tree. The value text
/// is parsed as a TOML literal when possible and falls back to a string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::config(format!("override {spec:?} is not of the form key=value"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::config(format!("override {spec:?} has an empty key")));
    }
    let parsed: toml::Value = match raw.parse::<toml::Value>() {
        Ok(v) => v,
        Err(_) => toml::Value::String(raw.to_string()),
    };

    let mut cur = root;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| {
            Error::config(format!("override {path}: {seg} is not a table"))
        })?;
        cur = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("override {path}: parent is not a table")))?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}
