//! Reasoning condensation: a deterministic rule-based condenser for the
//! synthetic tasks, and a client for any chat-completion HTTP endpoint for
//! real reasoning corpora. Both feed the (full, condensed) pair builder.

use std::time::Duration;

use serde::Serialize;

use crate::datasets::{Example, ReasoningPair};
use crate::error::{Error, Result};

/// Instruction prepended to the reasoning text when asking a remote model
/// to condense it.
pub const CONDENSE_PROMPT: &str = "Please generate the most condensed reasoning text which is semantically aligned with the following reasoning text: ";

/// Keep the sentences that carry state: equations, parity statements, flip
/// counts, and conclusions. Narration sentences are dropped. If no sentence
/// qualifies the input is returned unchanged (the pair builder then rejects
/// it as non-shortening).
pub fn rule_based_condense(reasoning: &str) -> String {
    let kept: Vec<&str> = reasoning
        .split('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .filter(|s| {
            s.contains('(')
                || s.contains("even")
                || s.contains("odd")
                || s.contains("was flipped")
                || s.starts_with("so ")
        })
        .collect();
    if kept.is_empty() {
        return reasoning.to_string();
    }
    format!("{} .", kept.join(" . "))
}

/// Client for a chat-completion style HTTP endpoint. The bearer token is
/// read from the environment at request time so keys never live in configs.
#[derive(Debug, Clone)]
pub struct RemoteCondenser {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl RemoteCondenser {
    pub fn condense(&self, reasoning: &str) -> Result<String> {
        let key = std::env::var(&self.api_key_env).map_err(|_| {
            Error::Condenser(format!(
                "api key environment variable {} is not set",
                self.api_key_env
            ))
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.timeout_secs)))
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{
                "role": "user",
                "content": format!("{CONDENSE_PROMPT}{reasoning}"),
            }],
        });

        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let backoff = Duration::from_millis(200 * (1 << (attempt - 1).min(4)));
                std::thread::sleep(backoff);
            }
            let sent = agent
                .post(&self.endpoint)
                .header("authorization", &format!("Bearer {key}"))
                .send_json(&body);
            match sent {
                Ok(mut resp) => {
                    let parsed: serde_json::Value =
                        resp.body_mut().read_json().map_err(|e| {
                            Error::Condenser(format!("malformed response body: {e}"))
                        })?;
                    let content = parsed["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| {
                            Error::Condenser(format!(
                                "response missing choices[0].message.content: {parsed}"
                            ))
                        })?;
                    return Ok(content.trim().to_string());
                }
                Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                    last_err = format!("http status {code}");
                }
                Err(ureq::Error::StatusCode(code)) => {
                    return Err(Error::Condenser(format!(
                        "endpoint rejected the request with status {code}"
                    )));
                }
                Err(e) => {
                    last_err = format!("transport: {e}");
                }
            }
        }
        Err(Error::Condenser(format!(
            "gave up after {} attempts; last error: {last_err}",
            self.max_retries + 1
        )))
    }
}

/// Condensation strategy selector.
#[derive(Debug, Clone)]
pub enum Condenser {
    RuleBased,
    Remote(RemoteCondenser),
}

impl Condenser {
    pub fn condense(&self, reasoning: &str) -> Result<String> {
        match self {
            Condenser::RuleBased => Ok(rule_based_condense(reasoning)),
            Condenser::Remote(r) => r.condense(reasoning),
        }
    }
}

/// One example the pair builder could not convert, and why.
#[derive(Debug, Clone, Serialize)]
pub struct PairSkip {
    pub source_id: String,
    pub reason: String,
}

/// Result of a pair-building run: the valid pairs plus a per-item skip
/// report. Failures never abort the batch.
#[derive(Debug)]
pub struct PairBuildOutcome {
    pub pairs: Vec<ReasoningPair>,
    pub skipped: Vec<PairSkip>,
}

/// Condense every example's reasoning and form (full, condensed) pairs.
/// Examples whose condensation fails, or is not strictly shorter, are
/// recorded in `skipped` instead of producing a pair.
pub fn build_pairs(examples: &[Example], condenser: &Condenser) -> PairBuildOutcome {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for ex in examples {
        if ex.reasoning.trim().is_empty() {
            skipped.push(PairSkip {
                source_id: ex.id.clone(),
                reason: "example has no reasoning text".into(),
            });
            continue;
        }
        let condensed = match condenser.condense(&ex.reasoning) {
            Ok(c) => c,
            Err(e) => {
                skipped.push(PairSkip {
                    source_id: ex.id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match ReasoningPair::new(&format!("pair-{}", ex.id), &ex.reasoning, &condensed, &ex.id) {
            Ok(p) => pairs.push(p),
            Err(e) => skipped.push(PairSkip {
                source_id: ex.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    PairBuildOutcome { pairs, skipped }
}
