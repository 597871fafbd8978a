use std::io::Write;

use serde::{Deserialize, Serialize};

use super::corpus::{evaluate_corpus, Backend, EvalOptions, HarnessError};
use super::manifest::Utterance;
use crate::engine::EngineConfig;
use crate::policies::PolicySpec;

pub const DEFAULT_CHUNK_SIZES_MS: [u32; 3] = [250, 500, 1000];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub chunk_sizes_ms: Vec<u32>,
    pub policies: Vec<PolicySpec>,
}

impl SweepConfig {
    pub fn new(policies: Vec<PolicySpec>) -> Self {
        Self {
            chunk_sizes_ms: DEFAULT_CHUNK_SIZES_MS.to_vec(),
            policies,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.chunk_sizes_ms.is_empty() {
            return Err(HarnessError::Config("sweep needs at least one chunk size".into()));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::Config("sweep needs at least one policy".into()));
        }
        Ok(())
    }
}

/// One point of a quality-latency curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub chunk_ms: u32,
    pub bleu: f64,
    pub al_ms: f64,
    pub ap: f64,
    pub dal_ms: f64,
}

/// Evaluates every (policy, chunk size) pair, policies outermost.
pub fn sweep(
    utterances: &[Utterance],
    backend: &Backend,
    base: &EngineConfig,
    config: &SweepConfig,
    opts: &EvalOptions,
) -> Result<Vec<SweepRow>, HarnessError> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.policies.len() * config.chunk_sizes_ms.len());
    for policy in &config.policies {
        for &chunk_ms in &config.chunk_sizes_ms {
            let cfg = EngineConfig {
                chunk_size_ms: chunk_ms,
                policy: policy.clone(),
                ..base.clone()
            };
            let m = evaluate_corpus(utterances, backend, &cfg, opts)?.summary.metrics;
            rows.push(SweepRow {
                policy: policy.to_string(),
                chunk_ms,
                bleu: m.bleu,
                al_ms: m.al_ms,
                ap: m.ap,
                dal_ms: m.dal_ms,
            });
        }
    }
    Ok(rows)
}

/// CSV with header `policy,chunk_ms,bleu,al_ms,ap,dal_ms`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["policy", "chunk_ms", "bleu", "al_ms", "ap", "dal_ms"])?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| HarnessError::Io {
        path: "sweep csv".into(),
        source: e,
    })?;
    Ok(())
}
