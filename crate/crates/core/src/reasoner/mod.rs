//! Stage-2 reasoning over a VLM: naming, name matching, spatial selection
//! and one bounded correction loop.
//!
//! Every grounding issues at most `K + 1 + max_retries` VLM turns. The
//! `max_retries` pool is shared by naming retries, spatial re-prompts and
//! consistency corrections; only the last two count as correction rounds.

pub mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{cosine, EmbeddingProvider, ProviderError, VlmProvider, VlmRequest};
use crate::scene::{AxisAlignedBox, OrientedBox, Pose, Vec3};
use crate::semantics::Candidate;
use crate::viewfactory::{save_png, CandidateViewSet, GlobalRender};

use prompt::{
    candidate_line, parse_naming, parse_spatial, query_line, render, Relation, SpatialAnswer, SCHEMA_COMBINED,
    SCHEMA_CORRECTION, SCHEMA_NAMING, SCHEMA_SPATIAL,
};

pub const UNKNOWN_NAME: &str = "unknown";

const PHRASES: [&str; 6] = ["left of", "right of", "in front of", "behind", "above", "below"];

/// Direction words per global render, expressed as signed world axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisLanguageMap {
    /// One entry per render: `(phrase, axis)` with axis like `"+x"`.
    pub renders: Vec<Vec<(String, String)>>,
}

fn snap_horizontal(v: Vec3) -> String {
    if v.x.abs() >= v.y.abs() {
        if v.x >= 0.0 { "+x" } else { "-x" }.to_string()
    } else {
        if v.y >= 0.0 { "+y" } else { "-y" }.to_string()
    }
}

impl AxisLanguageMap {
    /// "right" follows the camera's image x axis and "behind" points away
    /// from the viewer, both snapped to the closest horizontal world axis.
    pub fn from_poses(poses: &[Pose]) -> Self {
        let renders = poses
            .iter()
            .map(|p| {
                let right = p.rotation.column(0).into_owned();
                let away = p.rotation.column(2).into_owned();
                let axes = [
                    snap_horizontal(-right),
                    snap_horizontal(right),
                    snap_horizontal(-away),
                    snap_horizontal(away),
                    "+z".to_string(),
                    "-z".to_string(),
                ];
                PHRASES.iter().map(|s| s.to_string()).zip(axes).collect()
            })
            .collect();
        Self { renders }
    }

    pub fn from_renders(renders: &[GlobalRender]) -> Self {
        Self::from_poses(&renders.iter().map(|r| r.camera).collect::<Vec<_>>())
    }

    pub fn axis_for(&self, render: usize, phrase: &str) -> Option<&str> {
        self.renders
            .get(render)?
            .iter()
            .find(|(p, _)| p == phrase)
            .map(|(_, a)| a.as_str())
    }

    pub fn describe(&self) -> String {
        let mut out = String::from("World axes: x red, y green, z blue (up).");
        for (k, r) in self.renders.iter().enumerate() {
            let parts: Vec<String> = r.iter().map(|(p, a)| format!("{p} = {a}")).collect();
            out.push_str(&format!("\nIn global render {}: {}", k + 1, parts.join(", ")));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptToggles {
    /// Global renders with axes and ids.
    pub spatial: bool,
    /// Naming turns and name matching.
    pub semantic: bool,
    /// Step-by-step protocol; off collapses everything into one turn.
    pub visual_cot: bool,
}

impl Default for PromptToggles {
    fn default() -> Self {
        Self {
            spatial: true,
            semantic: true,
            visual_cot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerParams {
    pub max_retries: u32,
    pub match_threshold: f64,
    pub naming_concurrency: usize,
    pub toggles: PromptToggles,
}

impl Default for ReasonerParams {
    fn default() -> Self {
        Self {
            max_retries: 1,
            match_threshold: 0.6,
            naming_concurrency: 4,
            toggles: PromptToggles::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub stage: String,
    pub schema: String,
    pub images: Vec<String>,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub query: String,
    pub names: BTreeMap<u32, String>,
    pub matched_target: BTreeSet<u32>,
    pub relations: Vec<Relation>,
    pub selected: u32,
    pub explanation: String,
    pub correction_rounds: u32,
    pub naming_retries: u32,
    /// Set when the final id did not come from a valid VLM answer.
    pub fallback: Option<String>,
    pub turns: Vec<TurnRecord>,
}

impl ReasoningTrace {
    pub fn vlm_turns(&self) -> usize {
        self.turns.len()
    }
}

struct Turn {
    stage: &'static str,
    schema: &'static str,
    images: Vec<(String, RgbImage)>,
    prompt: String,
}

fn run_turn(vlm: &dyn VlmProvider, turn: Turn) -> (TurnRecord, std::result::Result<String, ProviderError>) {
    let mut images = turn.images;
    if images.len() > vlm.max_images() {
        log::warn!("{} turn: dropping {} images over the provider limit", turn.stage, images.len() - vlm.max_images());
        images.truncate(vlm.max_images());
    }
    let (refs, imgs): (Vec<String>, Vec<RgbImage>) = images.into_iter().unzip();
    let req = VlmRequest {
        images: imgs,
        prompt: turn.prompt,
        schema: turn.schema.to_string(),
    };
    let out = vlm.complete(&req);
    let rec = TurnRecord {
        stage: turn.stage.into(),
        schema: turn.schema.into(),
        images: refs,
        prompt: req.prompt,
        response: out.as_ref().ok().cloned(),
        error: out.as_ref().err().map(|e| e.to_string()),
    };
    (rec, out)
}

fn view_images(set: &CandidateViewSet) -> Vec<(String, RgbImage)> {
    set.views
        .iter()
        .enumerate()
        .map(|(j, v)| (format!("cand_{}_{}.png", set.candidate_id, j), v.image.clone()))
        .collect()
}

fn render_images(renders: &[GlobalRender]) -> Vec<(String, RgbImage)> {
    renders
        .iter()
        .enumerate()
        .map(|(k, r)| (format!("global_{k}.png"), r.image.clone()))
        .collect()
}

fn naming_turn(c: &Candidate, set: Option<&CandidateViewSet>) -> Turn {
    let images = set.map(view_images).unwrap_or_default();
    let prompt = render(
        SCHEMA_NAMING,
        &[
            ("n_views", images.len().to_string()),
            ("candidate", candidate_line(c.candidate_id, None, &c.instance.aabb)),
        ],
    );
    Turn {
        stage: "naming",
        schema: SCHEMA_NAMING,
        images,
        prompt,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamingOutcome {
    pub names: BTreeMap<u32, String>,
    pub retries: u32,
    pub turns: Vec<TurnRecord>,
}

/// One naming turn per candidate, at most `concurrency` in flight. Failed
/// turns are retried in candidate order while `retry_budget` lasts; names
/// still missing become [`UNKNOWN_NAME`]. Errors only when every candidate
/// hit a provider failure.
pub fn name_candidates(
    candidates: &[Candidate],
    view_sets: &[CandidateViewSet],
    vlm: &dyn VlmProvider,
    concurrency: usize,
    retry_budget: &mut u32,
) -> Result<NamingOutcome> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let set_of = |id: u32| view_sets.iter().find(|s| s.candidate_id == id);
    let mut results: Vec<(TurnRecord, std::result::Result<String, ProviderError>)> = Vec::new();
    for chunk in candidates.chunks(concurrency.max(1)) {
        let out: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|c| s.spawn(move || run_turn(vlm, naming_turn(c, set_of(c.candidate_id)))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("naming thread")).collect()
        });
        results.extend(out);
    }
    let mut turns = Vec::new();
    let mut names = BTreeMap::new();
    let mut retries = 0;
    let mut provider_failures = 0;
    for (c, (rec, out)) in candidates.iter().zip(results) {
        turns.push(rec);
        let mut parsed = out.as_ref().map_err(|e| e.to_string()).and_then(|r| parse_naming(r));
        let mut provider_failed = out.is_err();
        if parsed.is_err() && *retry_budget > 0 {
            *retry_budget -= 1;
            retries += 1;
            let (rec, out) = run_turn(vlm, naming_turn(c, set_of(c.candidate_id)));
            turns.push(rec);
            provider_failed = out.is_err();
            parsed = out.map_err(|e| e.to_string()).and_then(|r| parse_naming(&r));
        }
        if parsed.is_err() && provider_failed {
            provider_failures += 1;
        }
        names.insert(c.candidate_id, parsed.unwrap_or_else(|_| UNKNOWN_NAME.to_string()));
    }
    if provider_failures == candidates.len() {
        return Err(Error::Provider(ProviderError::Transport("every naming turn failed".into())));
    }
    Ok(NamingOutcome { names, retries, turns })
}

/// Candidates whose name embedding is within `threshold` cosine of the
/// whole query's embedding.
pub fn match_target(
    query: &str,
    names: &BTreeMap<u32, String>,
    embedder: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<BTreeSet<u32>> {
    if names.is_empty() {
        return Err(Error::Empty("names"));
    }
    let q = embedder.embed_text(query)?;
    let mut cache: BTreeMap<&str, f64> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for (id, name) in names {
        if name == UNKNOWN_NAME {
            continue;
        }
        let sim = match cache.get(name.as_str()) {
            Some(s) => *s,
            None => {
                let s = cosine(&q, &embedder.embed_text(name)?);
                cache.insert(name, s);
                s
            }
        };
        if sim >= threshold {
            out.insert(*id);
        }
    }
    Ok(out)
}

fn candidate_block(candidates: &[Candidate], names: &BTreeMap<u32, String>) -> String {
    candidates
        .iter()
        .map(|c| candidate_line(c.candidate_id, names.get(&c.candidate_id).map(String::as_str), &c.instance.aabb))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_note(n: usize) -> String {
    if n == 0 {
        "No rendered overview is available; rely on the listed coordinates.".into()
    } else {
        format!(
            "Images 1 to {n} are global renders of the scene with the world axes drawn and each candidate id written at its centre; global render k is image k."
        )
    }
}

fn id_list(ids: &BTreeSet<u32>) -> String {
    if ids.is_empty() {
        "none".into()
    } else {
        ids.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
    }
}

/// Matched candidate with the best Stage-1 score, else the best overall.
fn fallback_id(candidates: &[Candidate], matched: &BTreeSet<u32>) -> u32 {
    let best = |it: &mut dyn Iterator<Item = &Candidate>| {
        it.max_by(|a, b| a.score.total_cmp(&b.score).then(b.candidate_id.cmp(&a.candidate_id)))
            .map(|c| c.candidate_id)
    };
    best(&mut candidates.iter().filter(|c| matched.contains(&c.candidate_id)))
        .or_else(|| best(&mut candidates.iter()))
        .expect("candidates non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOutcome {
    /// Raw id from the model, or the fallback id.
    pub selected: i64,
    pub explanation: String,
    pub relations: Vec<Relation>,
    /// Schema re-prompts issued.
    pub reprompts: u32,
    pub fell_back: bool,
    pub turns: Vec<TurnRecord>,
}

/// Sends `turn`, re-prompting once per unit of `retry_budget` while the
/// reply breaks the schema.
fn answer_with_reprompt(
    vlm: &dyn VlmProvider,
    turn: Turn,
    retry_budget: &mut u32,
) -> (Option<SpatialAnswer>, u32, Vec<TurnRecord>) {
    let mut turns = Vec::new();
    let (rec, out) = run_turn(
        vlm,
        Turn {
            images: turn.images.clone(),
            prompt: turn.prompt.clone(),
            ..turn
        },
    );
    turns.push(rec);
    let mut parsed = out.map_err(|e| e.to_string()).and_then(|r| parse_spatial(&r));
    let mut reprompts = 0;
    while let Err(why) = &parsed {
        if *retry_budget == 0 {
            break;
        }
        *retry_budget -= 1;
        reprompts += 1;
        let prompt = format!(
            "{}\nYour previous reply was rejected: {why}. Reply again with only the fenced JSON block.",
            turn.prompt
        );
        let (rec, out) = run_turn(
            vlm,
            Turn {
                stage: turn.stage,
                schema: turn.schema,
                images: turn.images.clone(),
                prompt,
            },
        );
        turns.push(rec);
        parsed = out.map_err(|e| e.to_string()).and_then(|r| parse_spatial(&r));
    }
    (parsed.ok(), reprompts, turns)
}

pub struct SpatialContext<'a> {
    pub query: &'a str,
    pub renders: &'a [GlobalRender],
    pub axis_map: &'a AxisLanguageMap,
    pub candidates: &'a [Candidate],
    pub names: &'a BTreeMap<u32, String>,
    pub matched: &'a BTreeSet<u32>,
}

impl SpatialContext<'_> {
    fn common_vars(&self) -> Vec<(&'static str, String)> {
        let axis = if self.renders.is_empty() {
            "World axes: x and y horizontal, z up.".to_string()
        } else {
            self.axis_map.describe()
        };
        vec![
            ("query", query_line(self.query)),
            ("render_note", render_note(self.renders.len())),
            ("axis_map", axis),
            ("candidates", candidate_block(self.candidates, self.names)),
            ("matched", id_list(self.matched)),
        ]
    }
}

/// The spatial turn: all renders, the axis map, candidate names and the
/// matched set. A schema violation is re-prompted while the budget lasts;
/// after that the best-scored matched (or overall) candidate is taken.
pub fn spatial_select(ctx: &SpatialContext, vlm: &dyn VlmProvider, retry_budget: &mut u32) -> SpatialOutcome {
    let turn = Turn {
        stage: "spatial",
        schema: SCHEMA_SPATIAL,
        images: render_images(ctx.renders),
        prompt: render(SCHEMA_SPATIAL, &ctx.common_vars()),
    };
    let (answer, reprompts, turns) = answer_with_reprompt(vlm, turn, retry_budget);
    match answer {
        Some(a) => SpatialOutcome {
            selected: a.selected_id,
            explanation: a.explanation,
            relations: a.relations,
            reprompts,
            fell_back: false,
            turns,
        },
        None => SpatialOutcome {
            selected: fallback_id(ctx.candidates, ctx.matched) as i64,
            explanation: "no valid answer; kept the best-scored candidate".into(),
            relations: Vec::new(),
            reprompts,
            fell_back: true,
            turns,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub trace: ReasoningTrace,
    pub instance_id: u32,
    pub obb: OrientedBox,
    pub aabb: AxisAlignedBox,
}

/// Highest Stage-1 score among candidates, ties by lower id.
fn top_scored(candidates: &[Candidate]) -> u32 {
    fallback_id(candidates, &BTreeSet::new())
}

fn valid(candidates: &[Candidate], id: i64) -> Option<u32> {
    candidates
        .iter()
        .find(|c| c.candidate_id as i64 == id)
        .map(|c| c.candidate_id)
}

/// Naming, matching, spatial selection and at most one correction, then
/// projection onto the candidate set.
pub fn ground(
    query: &str,
    candidates: &[Candidate],
    renders: &[GlobalRender],
    view_sets: &[CandidateViewSet],
    vlm: &dyn VlmProvider,
    embedder: &dyn EmbeddingProvider,
    params: &ReasonerParams,
) -> Result<Grounding> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let mut trace = ReasoningTrace {
        query: query.to_string(),
        names: BTreeMap::new(),
        matched_target: BTreeSet::new(),
        relations: Vec::new(),
        selected: candidates[0].candidate_id,
        explanation: String::new(),
        correction_rounds: 0,
        naming_retries: 0,
        fallback: None,
        turns: Vec::new(),
    };
    if candidates.len() == 1 {
        trace.explanation = "only one candidate".into();
        return Ok(finish(trace, candidates));
    }
    let toggles = params.toggles;
    let renders: &[GlobalRender] = if toggles.spatial { renders } else { &[] };
    let axis_map = AxisLanguageMap::from_renders(renders);
    let mut budget = params.max_retries;

    if !toggles.visual_cot {
        let empty = BTreeMap::new();
        let ctx = SpatialContext {
            query,
            renders,
            axis_map: &axis_map,
            candidates,
            names: &empty,
            matched: &BTreeSet::new(),
        };
        let mut images = render_images(renders);
        for c in candidates {
            if let Some(s) = view_sets.iter().find(|s| s.candidate_id == c.candidate_id) {
                images.extend(view_images(s).into_iter().take(1));
            }
        }
        let turn = Turn {
            stage: "combined",
            schema: SCHEMA_COMBINED,
            images,
            prompt: render(SCHEMA_COMBINED, &ctx.common_vars()),
        };
        let (answer, reprompts, turns) = answer_with_reprompt(vlm, turn, &mut budget);
        trace.turns.extend(turns);
        trace.correction_rounds += reprompts;
        match answer {
            Some(a) => {
                trace.relations = a.relations;
                trace.explanation = a.explanation;
                trace.selected = valid(candidates, a.selected_id).unwrap_or_else(|| {
                    trace.fallback = Some(format!("id {} is not a candidate", a.selected_id));
                    top_scored(candidates)
                });
            }
            None => {
                trace.fallback = Some("no valid answer".into());
                trace.selected = top_scored(candidates);
            }
        }
        return Ok(finish(trace, candidates));
    }

    if toggles.semantic {
        match name_candidates(candidates, view_sets, vlm, params.naming_concurrency, &mut budget) {
            Ok(n) => {
                trace.names = n.names;
                trace.naming_retries = n.retries;
                trace.turns.extend(n.turns);
            }
            Err(e) => {
                log::warn!("naming failed: {e}");
                trace.naming_retries = params.max_retries - budget;
            }
        }
        if !trace.names.is_empty() {
            trace.matched_target = match_target(query, &trace.names, embedder, params.match_threshold).unwrap_or_else(|e| {
                log::warn!("name matching failed: {e}");
                BTreeSet::new()
            });
        }
    }

    let ctx = SpatialContext {
        query,
        renders,
        axis_map: &axis_map,
        candidates,
        names: &trace.names,
        matched: &trace.matched_target,
    };
    let sp = spatial_select(&ctx, vlm, &mut budget);
    let mut selected = sp.selected;
    let mut explanation = sp.explanation;
    let mut relations = sp.relations;
    let mut fallback = sp.fell_back.then(|| "spatial turn never produced a valid answer".to_string());
    let reprompts = sp.reprompts;
    let spatial_turns = sp.turns;

    let problem = match valid(candidates, selected) {
        None => Some("is not one of the candidate ids".to_string()),
        Some(id) if !trace.matched_target.is_empty() && !trace.matched_target.contains(&id) => {
            Some("is not among the candidates whose name matches the query".to_string())
        }
        _ => None,
    };
    let mut corrections = 0;
    let mut correction_turns = Vec::new();
    // The correction is the last turn that can draw on the pool.
    if let Some(problem) = problem.filter(|_| budget > 0 && !sp.fell_back) {
        corrections += 1;
        let mut images = render_images(renders);
        if let Some(set) = valid(candidates, selected).and_then(|id| view_sets.iter().find(|s| s.candidate_id == id)) {
            images.extend(view_images(set));
        }
        let evidence = if images.len() > renders.len() {
            "The last images show the chosen candidate up close with its box drawn."
        } else {
            "No close-up of the chosen id is available."
        };
        let rel_text = serde_json::to_string(&relations).unwrap_or_default();
        let mut vars = ctx.common_vars();
        vars.extend([
            ("selected", selected.to_string()),
            ("problem", problem),
            ("relations", rel_text),
            ("evidence_note", evidence.to_string()),
        ]);
        let turn = Turn {
            stage: "correction",
            schema: SCHEMA_CORRECTION,
            images,
            prompt: render(SCHEMA_CORRECTION, &vars),
        };
        let (rec, out) = run_turn(vlm, turn);
        correction_turns.push(rec);
        match out.map_err(|e| e.to_string()).and_then(|r| parse_spatial(&r)) {
            Ok(a) => {
                selected = a.selected_id;
                explanation = a.explanation;
                relations = a.relations;
            }
            Err(e) => log::warn!("correction reply rejected: {e}"),
        }
    }

    trace.turns.extend(spatial_turns);
    trace.turns.extend(correction_turns);
    trace.correction_rounds = reprompts + corrections;
    trace.relations = relations;
    trace.explanation = explanation;
    trace.selected = match valid(candidates, selected) {
        Some(id) => id,
        None => {
            fallback = Some(format!("id {selected} is not a candidate"));
            top_scored(candidates)
        }
    };
    trace.fallback = fallback;
    Ok(finish(trace, candidates))
}

fn finish(trace: ReasoningTrace, candidates: &[Candidate]) -> Grounding {
    let c = candidates
        .iter()
        .find(|c| c.candidate_id == trace.selected)
        .expect("selected id is projected onto the candidates");
    Grounding {
        instance_id: c.instance.instance_id,
        obb: c.instance.obb,
        aabb: c.instance.aabb,
        trace,
    }
}

/// Writes `trace.json` and every prompt image under `dir`.
pub fn write_artifacts(
    dir: &Path,
    trace: &ReasoningTrace,
    renders: &[GlobalRender],
    view_sets: &[CandidateViewSet],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("trace.json");
    std::fs::write(&path, serde_json::to_string_pretty(trace)?).map_err(|e| Error::io(&path, e))?;
    for (name, img) in render_images(renders) {
        save_png(&img, &dir.join(name))?;
    }
    for set in view_sets {
        for (name, img) in view_images(set) {
            save_png(&img, &dir.join(name))?;
        }
    }
    Ok(())
}
