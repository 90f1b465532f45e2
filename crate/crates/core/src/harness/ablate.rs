//! Sweeps over the candidate count and the prompt toggles. Stage 1 runs
//! once per scene and is shared by every setting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_variants, Dataset, EvalOptions, EvalReport, Variant};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::gateway::mock::OracleMode;
use crate::reasoner::PromptToggles;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub n: usize,
    pub total: usize,
    #[serde(rename = "acc_at_0.25")]
    pub acc_025: f64,
    #[serde(rename = "acc_at_0.5")]
    pub acc_05: f64,
    pub vlm_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub spatial: bool,
    pub semantic: bool,
    pub visual_cot: bool,
    pub total: usize,
    #[serde(rename = "acc_at_0.25")]
    pub acc_025: f64,
    #[serde(rename = "acc_at_0.5")]
    pub acc_05: f64,
}

/// The four toggle rows of the prompt ablation, weakest first.
pub const PROMPT_ROWS: [PromptToggles; 4] = [
    PromptToggles { spatial: true, semantic: true, visual_cot: false },
    PromptToggles { spatial: false, semantic: true, visual_cot: true },
    PromptToggles { spatial: true, semantic: false, visual_cot: true },
    PromptToggles { spatial: true, semantic: true, visual_cot: true },
];

pub fn ablate_candidates(dataset: &Dataset, base: &Config, ns: &[usize], opts: &EvalOptions) -> Result<Vec<CandidateRow>> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::InvalidArgument("candidate counts must be non-empty and positive".into()));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let variants: Vec<Variant> = ns
        .iter()
        .map(|&n| {
            let mut c = base.clone();
            c.semantics.u = n;
            Variant {
                name: format!("u={n}"),
                config: c,
            }
        })
        .collect();
    let reports = evaluate_variants(dataset, base, &variants, opts)?;
    Ok(ns
        .iter()
        .zip(reports)
        .map(|(&n, r)| CandidateRow {
            n,
            total: r.total,
            acc_025: r.acc_025,
            acc_05: r.acc_05,
            vlm_calls: r.provider_usage.vlm.calls,
        })
        .collect())
}

/// Evaluates each toggle row. Mock providers are switched to the degraded
/// oracle, which needs names and renders to answer relational queries.
pub fn ablate_prompts(
    dataset: &Dataset,
    base: &Config,
    rows: &[PromptToggles],
    opts: &EvalOptions,
) -> Result<Vec<(PromptRow, EvalReport)>> {
    if rows.iter().any(|t| !(t.spatial || t.semantic || t.visual_cot)) {
        return Err(Error::InvalidArgument("a prompt row must enable at least one toggle".into()));
    }
    let variants: Vec<Variant> = rows
        .iter()
        .map(|t| {
            let mut c = base.clone();
            c.reasoner.toggles = *t;
            c.providers.oracle = OracleMode::Degraded;
            Variant {
                name: toggle_name(t),
                config: c,
            }
        })
        .collect();
    let reports = evaluate_variants(dataset, base, &variants, opts)?;
    Ok(rows
        .iter()
        .zip(reports)
        .map(|(t, r)| {
            let row = PromptRow {
                spatial: t.spatial,
                semantic: t.semantic,
                visual_cot: t.visual_cot,
                total: r.total,
                acc_025: r.acc_025,
                acc_05: r.acc_05,
            };
            (row, r)
        })
        .collect())
}

pub fn toggle_name(t: &PromptToggles) -> String {
    let mark = |on: bool, s: &'static str| if on { s } else { "-" };
    format!("{},{},{}", mark(t.spatial, "S"), mark(t.semantic, "Se"), mark(t.visual_cot, "V"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
