//! End-to-end orchestration: Stage 1 builds and embeds instances once per
//! scene, Stage 2 grounds any number of queries against that result.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ProviderKind, ProvidersConfig};
use crate::error::{Error, Result};
use crate::gateway::mock::{ColorMaskProvider, NoisyEmbeddingProvider, OracleVlm, VocabEmbeddingProvider};
use crate::gateway::{
    EmbeddingProvider, HttpEmbeddingProvider, HttpGateway, HttpMaskProvider, HttpVlmProvider, MaskProvider, Metered,
    ProviderConfig, UsageSnapshot, VlmProvider,
};
use crate::harness::GroundTruth;
use crate::instances::{progressive_merge, CellObservations, MergeOutcome, ObservationUpdate};
use crate::projection::{build_frame_zbuffer, observation_from_cells, view_cells, MaskSet, ViewCells, ZBuffer};
use crate::reasoner::{ground, write_artifacts, Grounding};
use crate::scene::Scene;
use crate::semantics::{
    defect_correct, embed_instance, instance_cells, multiscale_crops, prompt_stride, rank_candidates, rank_views,
    resize_for_embedding, Candidate, EmbeddedInstance, SemanticParams,
};
use crate::superpoints::{
    build_adjacency, estimate_normals, region_grow, supervoxel_cluster, write_superpoints_json, AdjacencyGraph,
    Superpoint,
};
use crate::viewfactory::{global_renders, select_candidate_views, CandidateViewSet, GlobalRender};

/// Seconds per named step.
pub type Timings = BTreeMap<String, f64>;

fn timed<T>(timings: &mut Timings, name: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *timings.entry(name.to_string()).or_default() += t.elapsed().as_secs_f64();
    out
}

/// The three model providers, each metered.
pub struct Providers {
    pub mask: Metered<dyn MaskProvider>,
    pub embed: Metered<dyn EmbeddingProvider>,
    pub vlm: Metered<dyn VlmProvider>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderUsage {
    pub mask: UsageSnapshot,
    pub embed: UsageSnapshot,
    pub vlm: UsageSnapshot,
}

impl std::ops::Add for ProviderUsage {
    type Output = ProviderUsage;
    fn add(self, o: Self) -> Self {
        ProviderUsage {
            mask: self.mask + o.mask,
            embed: self.embed + o.embed,
            vlm: self.vlm + o.vlm,
        }
    }
}

fn endpoint(cfg: &ProviderConfig, var: &str) -> Result<ProviderConfig> {
    let mut c = cfg.clone();
    if c.endpoint.is_empty() {
        c.endpoint = std::env::var(var)
            .ok()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Config(format!("no endpoint configured and {var} is unset")))?;
    }
    Ok(c)
}

impl Providers {
    pub fn new(mask: Arc<dyn MaskProvider>, embed: Arc<dyn EmbeddingProvider>, vlm: Arc<dyn VlmProvider>) -> Self {
        Self {
            mask: Metered::new(mask),
            embed: Metered::new(embed),
            vlm: Metered::new(vlm),
        }
    }

    /// Offline providers. The VLM answers from `truth`; without it every
    /// spatial turn picks the first listed candidate.
    pub fn mock(cfg: &ProvidersConfig, truth: Option<GroundTruth>) -> Self {
        let embed: Arc<dyn EmbeddingProvider> = if cfg.embed_noise > 0.0 {
            Arc::new(NoisyEmbeddingProvider {
                inner: VocabEmbeddingProvider::default(),
                sigma: cfg.embed_noise,
                seed: cfg.noise_seed,
            })
        } else {
            Arc::new(VocabEmbeddingProvider::default())
        };
        let truth = truth.unwrap_or_else(|| GroundTruth {
            scene_id: String::new(),
            objects: Vec::new(),
            queries: Vec::new(),
        });
        Self::new(Arc::new(ColorMaskProvider), embed, Arc::new(OracleVlm::new(truth, cfg.oracle)))
    }

    pub fn http(cfg: &ProvidersConfig) -> Result<Self> {
        let gw = |c: &ProviderConfig, var: &str| -> Result<HttpGateway> { Ok(HttpGateway::new(endpoint(c, var)?)?) };
        Ok(Self::new(
            Arc::new(HttpMaskProvider(gw(&cfg.mask, "UG_MASK_ENDPOINT")?)),
            Arc::new(HttpEmbeddingProvider(gw(&cfg.embed, "UG_EMBED_ENDPOINT")?)),
            Arc::new(HttpVlmProvider(gw(&cfg.vlm, "UG_VLM_ENDPOINT")?)),
        ))
    }

    pub fn from_config(cfg: &ProvidersConfig, truth: Option<GroundTruth>) -> Result<Self> {
        match cfg.kind {
            ProviderKind::Mock => Ok(Self::mock(cfg, truth)),
            ProviderKind::Http => Self::http(cfg),
        }
    }

    pub fn usage(&self) -> ProviderUsage {
        ProviderUsage {
            mask: self.mask.meter.snapshot(),
            embed: self.embed.meter.snapshot(),
            vlm: self.vlm.meter.snapshot(),
        }
    }
}

/// Cached Stage-1 result for one scene. Read-only once built.
pub struct Stage1 {
    pub superpoints: Vec<Superpoint>,
    pub graph: AdjacencyGraph,
    /// Every merged instance; together they partition the superpoints.
    pub merge: MergeOutcome,
    /// Instances large and visible enough to be offered as candidates.
    pub embedded: Vec<EmbeddedInstance>,
    pub zbuffers: Vec<ZBuffer>,
    pub timings: Timings,
}

/// Superpoints, instance lifting and per-instance semantic embeddings.
pub fn run_stage1(scene: &Scene, cfg: &Config, providers: &Providers) -> Result<Stage1> {
    scene.validate_for_projection()?;
    let mut timings = Timings::new();
    let cloud = &scene.cloud;
    let sp_cfg = &cfg.superpoints;

    let viewpoints: Vec<_> = scene.frames.iter().map(|f| f.pose.center()).collect();
    let normals = timed(&mut timings, "normals", || {
        estimate_normals(cloud, sp_cfg.normal_neighbors, &viewpoints)
    })?;
    let mut superpoints = timed(&mut timings, "supervoxels", || {
        supervoxel_cluster(cloud, &normals, &sp_cfg.supervoxel)
    })?;
    if sp_cfg.region_grow {
        superpoints = timed(&mut timings, "region_grow", || {
            region_grow(cloud, &superpoints, &normals, &sp_cfg.grow)
        })?;
    }
    let graph = timed(&mut timings, "adjacency", || {
        build_adjacency(cloud, &superpoints, sp_cfg.supervoxel.voxel_size)
    });

    let zbuffers: Vec<ZBuffer> = timed(&mut timings, "zbuffers", || {
        scene
            .frames
            .par_iter()
            .map(|f| build_frame_zbuffer(cloud, f, cfg.merge.splat_radius))
            .collect()
    });
    let masks = timed(&mut timings, "masks", || -> Result<Vec<MaskSet>> {
        scene
            .frames
            .par_iter()
            .map(|f| {
                let scored = providers.mask.segment(&f.rgb, &[])?;
                Ok(MaskSet {
                    frame_id: f.frame_id,
                    width: f.intrinsics.width,
                    height: f.intrinsics.height,
                    masks: scored.into_iter().map(|m| m.mask.bits).collect(),
                })
            })
            .collect()
    })?;

    let merge = timed(&mut timings, "merge", || {
        lift_instances(scene, &superpoints, &graph, &zbuffers, &masks, cfg)
    })?;

    let embedded = timed(&mut timings, "embedding", || {
        embed_instances(scene, &merge, &zbuffers, cfg, providers)
    })?;
    log::info!(
        "{}: {} superpoints, {} instances, {} candidates",
        scene.scene_id,
        superpoints.len(),
        merge.instances.len(),
        embedded.len()
    );
    Ok(Stage1 {
        superpoints,
        graph,
        merge,
        embedded,
        zbuffers,
        timings,
    })
}

fn lift_instances(
    scene: &Scene,
    superpoints: &[Superpoint],
    graph: &AdjacencyGraph,
    zbuffers: &[ZBuffer],
    masks: &[MaskSet],
    cfg: &Config,
) -> Result<MergeOutcome> {
    let tol = cfg.merge.occlusion_tol;
    let labels: Vec<(Vec<i32>, usize)> = masks.iter().map(|m| (m.label_image(), m.n())).collect();
    let per_sp: Vec<(u32, Vec<(u32, ViewCells)>)> = superpoints
        .par_iter()
        .map(|sp| {
            let views = scene
                .frames
                .iter()
                .zip(zbuffers)
                .map(|(f, zb)| {
                    let pts = sp.point_indices.iter().map(|&i| scene.cloud.positions()[i]);
                    (f.frame_id, view_cells(pts, f, zb, tol))
                })
                .filter(|(_, c)| !c.is_empty())
                .collect();
            (sp.sp_id, views)
        })
        .collect();
    let label_of: HashMap<u32, usize> = scene.frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
    let observations = per_sp
        .iter()
        .map(|(id, views)| {
            let obs = views
                .iter()
                .map(|(f, c)| {
                    let (l, n) = &labels[label_of[f]];
                    observation_from_cells(*f, c, l, *n)
                })
                .collect();
            (*id, obs)
        })
        .collect();
    let cells = (cfg.merge.params.update == ObservationUpdate::Reprojection).then(|| CellObservations {
        labels: masks.iter().zip(labels).map(|(m, l)| (m.frame_id, l)).collect(),
        cells: per_sp.into_iter().collect(),
    });
    progressive_merge(
        &scene.cloud,
        superpoints,
        graph,
        &observations,
        cells.as_ref(),
        &cfg.merge.schedule()?,
        &cfg.merge.params,
    )
}

/// Crops of one instance: per chosen view, the defect-corrected mask cut
/// out at every scale.
fn instance_crops(
    scene: &Scene,
    cells: &[(u32, ViewCells)],
    params: &SemanticParams,
    mask_provider: &dyn MaskProvider,
) -> Result<Vec<Vec<image::RgbImage>>> {
    let counts: Vec<_> = cells.iter().map(|(f, c)| (*f, c.visible.len())).collect();
    let chosen = rank_views(&counts, params.max_views)?;
    let scales = params.crop_scales();
    chosen
        .iter()
        .map(|fid| {
            let (i, frame) = scene
                .frames
                .iter()
                .enumerate()
                .find(|(_, f)| f.frame_id == *fid)
                .expect("chosen from scene frames");
            let visible = &cells[i].1;
            let stride = prompt_stride(visible.visible.len(), params.min_prompts, params.max_prompts);
            let corrected = defect_correct(visible, frame, stride, mask_provider)?;
            let crops = multiscale_crops(&corrected.mask, &frame.rgb, &scales)?;
            Ok(crops
                .iter()
                .map(|c| resize_for_embedding(&c.image, params.crop_resolution))
                .collect())
        })
        .collect()
}

fn embed_instances(
    scene: &Scene,
    merge: &MergeOutcome,
    zbuffers: &[ZBuffer],
    cfg: &Config,
    providers: &Providers,
) -> Result<Vec<EmbeddedInstance>> {
    let params = &cfg.semantics.params;
    let out: Vec<Option<EmbeddedInstance>> = merge
        .instances
        .par_iter()
        .filter(|inst| inst.point_count() >= cfg.merge.min_instance_points)
        .map(|inst| {
            let cells = instance_cells(inst, scene, zbuffers, params.occlusion_tol);
            let views = instance_crops(scene, &cells, params, &providers.mask)?;
            if views.is_empty() {
                log::debug!("instance {} is not visible in any frame", inst.instance_id);
                return Ok(None);
            }
            let embedding = embed_instance(&views, &providers.embed)?;
            Ok(Some(EmbeddedInstance {
                instance: inst.clone(),
                embedding,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Everything Stage 2 produced for one query.
pub struct QueryOutcome {
    pub candidates: Vec<Candidate>,
    pub renders: Vec<GlobalRender>,
    pub view_sets: Vec<CandidateViewSet>,
    pub grounding: Grounding,
    pub timings: Timings,
}

/// Top-`u` retrieval, prompt images and VLM reasoning for one query.
pub fn ground_query(
    scene: &Scene,
    stage1: &Stage1,
    query: &str,
    u: usize,
    cfg: &Config,
    providers: &Providers,
) -> Result<QueryOutcome> {
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("query text is empty".into()));
    }
    if stage1.embedded.is_empty() {
        return Err(Error::Empty("candidate instances"));
    }
    let mut timings = Timings::new();
    let candidates = timed(&mut timings, "retrieval", || -> Result<Vec<Candidate>> {
        let q = providers.embed.embed_text(query)?;
        rank_candidates(&stage1.embedded, &q, u)
    })?;
    let renders = if cfg.reasoner.toggles.spatial && candidates.len() > 1 {
        timed(&mut timings, "global_renders", || global_renders(&scene.cloud, &candidates, &cfg.views))?
    } else {
        Vec::new()
    };
    let view_sets = timed(&mut timings, "candidate_views", || {
        candidates
            .par_iter()
            .map(|c| select_candidate_views(c, scene, &stage1.zbuffers, &cfg.views))
            .collect::<Result<Vec<_>>>()
    })?;
    let grounding = timed(&mut timings, "reasoning", || {
        ground(query, &candidates, &renders, &view_sets, &providers.vlm, &providers.embed, &cfg.reasoner)
    })?;
    Ok(QueryOutcome {
        candidates,
        renders,
        view_sets,
        grounding,
        timings,
    })
}

impl QueryOutcome {
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        write_artifacts(dir, &self.grounding.trace, &self.renders, &self.view_sets)
    }
}

impl Stage1 {
    /// `superpoints.json` and `instances.json` under `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_superpoints_json(&dir.join("superpoints.json"), &self.superpoints)?;
        crate::instances::write_instances_json(&dir.join("instances.json"), &self.merge.instances)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::iou::iou_aabb;
    use crate::harness::synth::{generate, SyntheticSpec};
    use std::collections::BTreeSet;

    fn small_spec(seed: u64, objects: usize) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            objects,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn stage1_partitions_and_finds_every_object() {
        let out = generate(&small_spec(5, 5)).unwrap();
        let cfg = Config::tabletop();
        let providers = Providers::mock(&cfg.providers, Some(out.truth.clone()));
        let s1 = run_stage1(&out.scene, &cfg, &providers).unwrap();

        let mut seen = BTreeSet::new();
        for sp in &s1.superpoints {
            for &i in &sp.point_indices {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(seen.len(), out.scene.cloud.point_count());
        let mut members = BTreeSet::new();
        for inst in &s1.merge.instances {
            for &m in &inst.member_superpoints {
                assert!(members.insert(m));
            }
        }
        assert_eq!(members.len(), s1.superpoints.len());

        for obj in &out.truth.objects {
            let gt = obj.obb.to_aabb();
            let best = s1
                .embedded
                .iter()
                .map(|e| iou_aabb(&e.instance.aabb, &gt))
                .fold(0.0, f64::max);
            assert!(best >= 0.5, "{} best IoU {best}", obj.name);
        }
        assert!(providers.usage().mask.calls > 0);
    }

    #[test]
    fn oracle_grounding_hits_the_target() {
        let out = generate(&small_spec(11, 6)).unwrap();
        let cfg = Config::tabletop();
        let providers = Providers::mock(&cfg.providers, Some(out.truth.clone()));
        let s1 = run_stage1(&out.scene, &cfg, &providers).unwrap();
        for q in &out.truth.queries {
            let r = ground_query(&out.scene, &s1, &q.text, 5, &cfg, &providers).unwrap();
            let gt = out.truth.object(q.target_id).unwrap().obb.to_aabb();
            assert!(iou_aabb(&r.grounding.aabb, &gt) >= 0.5, "{}", q.text);
            assert!(r.candidates.len() <= 5);
        }
        assert!(ground_query(&out.scene, &s1, "  ", 5, &cfg, &providers).is_err());
    }

    #[test]
    fn http_providers_need_endpoints() {
        let mut cfg = ProvidersConfig::default();
        cfg.kind = ProviderKind::Http;
        cfg.mask.endpoint = "http://127.0.0.1:9/mask".into();
        cfg.embed.endpoint = "http://127.0.0.1:9/embed".into();
        cfg.vlm.endpoint = "http://127.0.0.1:9/vlm".into();
        assert!(Providers::from_config(&cfg, None).is_ok());
    }
}
