//! Referring-expression datasets and Acc@IoU evaluation of the full
//! two-stage pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use super::iou::{iou_3d, EvalBox};
use super::synth::{synth_scene, GroundTruth, SyntheticSpec};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::pipeline::{ground_query, run_stage1, ProviderUsage, Providers, Stage1, Timings};
use crate::scene::{fit_aabb, fit_oriented_box, load_scene, AxisAlignedBox, OrientedBox, Scene, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxType {
    /// Axis-aligned boxes, as in ScanRefer.
    #[default]
    Aabb,
    /// Gravity-aligned boxes with yaw, as in EmbodiedScan.
    Obb,
}

/// A ground-truth box as centre and size (optionally with yaw) or as its
/// eight corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxSpec {
    Corners { corners: Vec<[f64; 3]> },
    CenterSize {
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
}

impl BoxSpec {
    pub fn from_obb(b: &OrientedBox) -> Self {
        let s = b.half_extents * 2.0;
        BoxSpec::CenterSize {
            center: [b.center.x, b.center.y, b.center.z],
            size: [s.x, s.y, s.z],
            yaw: b.yaw,
        }
    }

    pub fn to_obb(&self) -> Result<OrientedBox> {
        match self {
            BoxSpec::CenterSize { center, size, yaw } => {
                OrientedBox::new(Vec3::from(*center), Vec3::from(*size) / 2.0, *yaw)
            }
            BoxSpec::Corners { corners } => {
                if corners.len() != 8 {
                    return Err(Error::InvalidArgument(format!("a box needs 8 corners, got {}", corners.len())));
                }
                let pts: Vec<Vec3> = corners.iter().map(|c| Vec3::from(*c)).collect();
                fit_oriented_box(&pts)
            }
        }
    }

    pub fn to_aabb(&self) -> Result<AxisAlignedBox> {
        match self {
            BoxSpec::Corners { corners } if corners.len() == 8 => {
                fit_aabb(&corners.iter().map(|c| Vec3::from(*c)).collect::<Vec<_>>())
            }
            _ => Ok(self.to_obb()?.to_aabb()),
        }
    }

    pub fn to_eval(&self, box_type: BoxType) -> Result<EvalBox> {
        Ok(match box_type {
            BoxType::Aabb => EvalBox::Axis(self.to_aabb()?),
            BoxType::Obb => EvalBox::Oriented(self.to_obb()?),
        })
    }
}

/// ScanRefer stores object ids as strings; accept both.
fn id_from_any<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u32, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Int(u32),
        Text(String),
    }
    match Id::deserialize(d)? {
        Id::Int(i) => Ok(i),
        Id::Text(s) => s.trim().parse().map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub scene_id: String,
    #[serde(default)]
    pub ann_id: String,
    pub description: String,
    #[serde(deserialize_with = "id_from_any")]
    pub object_id: u32,
    #[serde(default)]
    pub object_name: String,
    #[serde(rename = "box")]
    pub gt_box: BoxSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(default)]
    pub box_type: BoxType,
    /// Scene directories live at `<scene_root>/<scene_id>`, relative to the
    /// dataset file.
    #[serde(default = "default_root")]
    pub scene_root: PathBuf,
    pub annotations: Vec<AnnotationRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_root() -> PathBuf {
    PathBuf::from(".")
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut d: Dataset = serde_json::from_str(&text)?;
        d.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for a in &d.annotations {
            if a.description.trim().is_empty() {
                return Err(Error::InvalidArgument(format!("annotation {:?} has an empty description", a.ann_id)));
            }
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn scene_dir(&self, scene_id: &str) -> PathBuf {
        self.base_dir.join(&self.scene_root).join(scene_id)
    }

    /// Scene ids in order of first appearance.
    pub fn scene_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in &self.annotations {
            if !out.contains(&a.scene_id) {
                out.push(a.scene_id.clone());
            }
        }
        out
    }

    pub fn from_truth(truths: &[GroundTruth], box_type: BoxType) -> Self {
        let annotations = truths
            .iter()
            .flat_map(|t| {
                t.queries.iter().filter_map(move |q| {
                    let o = t.object(q.target_id)?;
                    Some(AnnotationRecord {
                        scene_id: t.scene_id.clone(),
                        ann_id: q.query_id.clone(),
                        description: q.text.clone(),
                        object_id: q.target_id,
                        object_name: o.name.clone(),
                        gt_box: BoxSpec::from_obb(&o.obb),
                    })
                })
            })
            .collect();
        Dataset {
            box_type,
            scene_root: default_root(),
            annotations,
            base_dir: PathBuf::new(),
        }
    }
}

/// Writes `count` synthetic scenes under `root` plus `root/dataset.json`.
/// Scene `k` uses seed `first_seed + k` and cycles through `objects`.
pub fn synth_dataset(
    root: &Path,
    first_seed: u64,
    count: usize,
    objects: std::ops::RangeInclusive<usize>,
    box_type: BoxType,
) -> Result<Dataset> {
    let span = objects.end().saturating_sub(*objects.start()) + 1;
    let mut truths = Vec::with_capacity(count);
    for k in 0..count {
        let seed = first_seed + k as u64;
        let spec = SyntheticSpec {
            seed,
            scene_id: format!("synth_{seed:04}"),
            objects: objects.start() + k % span,
            ..SyntheticSpec::default()
        };
        let out = synth_scene(&spec, &root.join(&spec.scene_id))?;
        truths.push(out.truth);
    }
    let mut d = Dataset::from_truth(&truths, box_type);
    d.base_dir = root.to_path_buf();
    d.save(&root.join("dataset.json"))?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub scene_id: String,
    pub ann_id: String,
    pub description: String,
    pub object_id: u32,
    pub iou: f64,
    pub predicted: Option<EvalBox>,
    pub selected_instance: Option<u32>,
    pub candidates: usize,
    pub vlm_turns: usize,
    pub correction_rounds: u32,
    pub fallback: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub total_secs: f64,
    /// Per scene: Stage-1 steps.
    pub stage1: BTreeMap<String, Timings>,
    /// Stage-2 steps summed over all queries.
    pub stage2: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub box_type: BoxType,
    pub queries: Vec<QueryResult>,
    pub total: usize,
    pub failures: usize,
    #[serde(rename = "acc_at_0.25")]
    pub acc_025: f64,
    #[serde(rename = "acc_at_0.5")]
    pub acc_05: f64,
    pub provider_usage: ProviderUsage,
    /// Wall-clock figures vary between runs and live in a sidecar file.
    #[serde(skip)]
    pub timing: EvalTiming,
}

impl EvalReport {
    pub fn from_results(box_type: BoxType, queries: Vec<QueryResult>, usage: ProviderUsage, timing: EvalTiming) -> Self {
        let total = queries.len();
        let acc = |t: f64| {
            if total == 0 {
                0.0
            } else {
                queries.iter().filter(|q| q.iou >= t).count() as f64 / total as f64
            }
        };
        EvalReport {
            box_type,
            total,
            failures: queries.iter().filter(|q| q.error.is_some()).count(),
            acc_025: acc(0.25),
            acc_05: acc(0.5),
            queries,
            provider_usage: usage,
            timing,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn timing_path(path: &Path) -> PathBuf {
        path.with_extension("timing.json")
    }

    /// Writes the report and its `*.timing.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))?;
        let side = Self::timing_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&self.timing)?).map_err(|e| Error::io(&side, e))
    }
}

/// A Stage-2 setting evaluated against shared Stage-1 results. Only the
/// Stage-2 parts of `config` are read: `semantics.u`, `views`, `reasoner`
/// and the VLM side of `providers`.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub config: Config,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Concurrent queries within a scene.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

struct Prepared {
    scene: Scene,
    truth: Option<GroundTruth>,
    stage1: Stage1,
    usage: ProviderUsage,
}

fn prepare(dataset: &Dataset, scene_id: &str, cfg: &Config) -> Result<Prepared> {
    let dir = dataset.scene_dir(scene_id);
    let scene = load_scene(&dir)?;
    let truth = dir.join(GroundTruth::FILE).exists().then(|| GroundTruth::load(&dir)).transpose()?;
    let providers = Providers::from_config(&cfg.providers, truth.clone())?;
    let stage1 = run_stage1(&scene, cfg, &providers)?;
    Ok(Prepared {
        scene,
        truth,
        stage1,
        usage: providers.usage(),
    })
}

fn failed(a: &AnnotationRecord, why: String) -> QueryResult {
    QueryResult {
        scene_id: a.scene_id.clone(),
        ann_id: a.ann_id.clone(),
        description: a.description.clone(),
        object_id: a.object_id,
        iou: 0.0,
        predicted: None,
        selected_instance: None,
        candidates: 0,
        vlm_turns: 0,
        correction_rounds: 0,
        fallback: None,
        error: Some(why),
    }
}

fn run_query(p: &Prepared, a: &AnnotationRecord, box_type: BoxType, cfg: &Config, providers: &Providers) -> (QueryResult, Timings) {
    let gt = match a.gt_box.to_eval(box_type) {
        Ok(b) => b,
        Err(e) => return (failed(a, format!("bad ground-truth box: {e}")), Timings::new()),
    };
    let bounds = p.scene.cloud.bounds();
    let gt_aabb = a.gt_box.to_aabb().ok();
    if let (Some(b), Some(g)) = (bounds, gt_aabb) {
        if !(b.contains(&g.min, 0.05) && b.contains(&g.max, 0.05)) {
            log::warn!("{}: ground-truth box of {:?} lies outside the scene", a.scene_id, a.ann_id);
        }
    }
    match ground_query(&p.scene, &p.stage1, &a.description, cfg.semantics.u, cfg, providers) {
        Ok(out) => {
            let g = &out.grounding;
            let predicted = match box_type {
                BoxType::Aabb => EvalBox::Axis(g.aabb),
                BoxType::Obb => EvalBox::Oriented(g.obb),
            };
            let r = QueryResult {
                scene_id: a.scene_id.clone(),
                ann_id: a.ann_id.clone(),
                description: a.description.clone(),
                object_id: a.object_id,
                iou: iou_3d(&predicted, &gt),
                predicted: Some(predicted),
                selected_instance: Some(g.instance_id),
                candidates: out.candidates.len(),
                vlm_turns: g.trace.vlm_turns(),
                correction_rounds: g.trace.correction_rounds,
                fallback: g.trace.fallback.clone(),
                error: None,
            };
            (r, out.timings)
        }
        Err(e) => (failed(a, e.to_string()), Timings::new()),
    }
}

/// Runs every variant over the dataset, building each scene's Stage 1 once
/// (with `base`) and dropping it before the next scene is loaded.
pub fn evaluate_variants(
    dataset: &Dataset,
    base: &Config,
    variants: &[Variant],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    evaluate_variants_with(dataset, base, variants, opts, |_, _| {})
}

/// As [`evaluate_variants`]; `inspect` sees every scene's Stage 1 result.
pub fn evaluate_variants_with(
    dataset: &Dataset,
    base: &Config,
    variants: &[Variant],
    opts: &EvalOptions,
    mut inspect: impl FnMut(&Scene, &Stage1),
) -> Result<Vec<EvalReport>> {
    base.validate()?;
    for v in variants {
        v.config.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let start = Instant::now();
    let n = variants.len();
    let mut results: Vec<BTreeMap<usize, QueryResult>> = vec![BTreeMap::new(); n];
    let mut usage = vec![ProviderUsage::default(); n];
    let mut timing = vec![EvalTiming::default(); n];

    for scene_id in dataset.scene_ids() {
        let anns: Vec<(usize, &AnnotationRecord)> = dataset
            .annotations
            .iter()
            .enumerate()
            .filter(|(_, a)| a.scene_id == scene_id)
            .collect();
        let prepared = match prepare(dataset, &scene_id, base) {
            Ok(p) => p,
            Err(e) => {
                if !e.is_bad_input() {
                    log::error!("{scene_id}: provider failure in Stage 1: {e}");
                } else {
                    log::error!("{scene_id}: {e}");
                }
                for k in 0..n {
                    for (i, a) in &anns {
                        results[k].insert(*i, failed(a, format!("scene failed: {e}")));
                    }
                }
                continue;
            }
        };
        inspect(&prepared.scene, &prepared.stage1);
        for (k, v) in variants.iter().enumerate() {
            timing[k].stage1.insert(scene_id.clone(), prepared.stage1.timings.clone());
            usage[k] = usage[k] + prepared.usage;
            let providers = Providers::from_config(&v.config.providers, prepared.truth.clone())?;
            let out: Vec<(usize, QueryResult, Timings)> = pool.install(|| {
                anns.par_iter()
                    .map(|(i, a)| {
                        let (r, t) = run_query(&prepared, a, dataset.box_type, &v.config, &providers);
                        (*i, r, t)
                    })
                    .collect()
            });
            for (i, r, t) in out {
                results[k].insert(i, r);
                for (step, secs) in t {
                    *timing[k].stage2.entry(step).or_default() += secs;
                }
            }
            // Stage-1 providers are separate, so only the query-side mask
            // and embedding calls are counted here.
            usage[k] = usage[k] + providers.usage();
        }
    }
    let total = start.elapsed().as_secs_f64();
    Ok(results
        .into_iter()
        .zip(usage)
        .zip(timing)
        .map(|((r, u), mut t)| {
            t.total_secs = total;
            EvalReport::from_results(dataset.box_type, r.into_values().collect(), u, t)
        })
        .collect())
}

pub fn evaluate(dataset: &Dataset, cfg: &Config, opts: &EvalOptions) -> Result<EvalReport> {
    let v = Variant {
        name: "default".into(),
        config: cfg.clone(),
    };
    let mut reports = evaluate_variants(dataset, cfg, &[v], opts)?;
    Ok(reports.remove(0))
}
