use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use uniground_core::config::ProviderKind;
use uniground_core::harness::ablate::{toggle_name, write_csv};
use uniground_core::harness::{
    ablate_candidates, ablate_prompts, evaluate, synth_dataset, synth_scene, BoxType, Dataset, EvalOptions,
    GroundTruth, SyntheticSpec, PROMPT_ROWS,
};
use uniground_core::{ground_query, load_scene, run_stage1, Config, Error, Providers, Result};

#[derive(Parser)]
#[command(name = "uniground", version, about = "Training-free 3D visual grounding")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "UG_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads for per-query concurrency.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a scene directory.
    Ingest { dir: PathBuf },
    /// Build superpoints and instances.
    Segment {
        dir: PathBuf,
        /// Write superpoints.json and instances.json here (default: the scene directory).
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        dump: Option<PathBuf>,
    },
    /// Ground one referring expression.
    Ground {
        dir: PathBuf,
        #[arg(long)]
        query: String,
        /// Candidates kept after retrieval.
        #[arg(long)]
        u: Option<usize>,
        #[arg(long, value_enum)]
        providers: Option<ProviderArg>,
        /// Write renders, candidate views and the reasoning trace here.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Evaluate a referring-expression dataset.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene, or a dataset of scenes with --count.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        objects: usize,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes; writes `dataset.json` next to them.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Accuracy sweeps.
    Ablate {
        #[command(subcommand)]
        kind: AblateKind,
    },
}

#[derive(Subcommand)]
enum AblateKind {
    /// Accuracy against the candidate count.
    Candidates {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10")]
        n: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of the four prompt-toggle rows.
    Prompts {
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn truth_for(dir: &Path) -> Result<Option<GroundTruth>> {
    if dir.join(GroundTruth::FILE).exists() {
        GroundTruth::load(dir).map(Some)
    } else {
        Ok(None)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let opts = EvalOptions { workers: cli.workers.max(1) };
    match cli.command {
        Command::Ingest { dir } => {
            let scene = load_scene(&dir)?;
            scene.validate_for_projection()?;
            let b = scene.cloud.bounds().ok_or(Error::Empty("point cloud"))?;
            print_json(&json!({
                "scene_id": scene.scene_id,
                "frames": scene.frames.len(),
                "points": scene.cloud.point_count(),
                "bounds": { "min": [b.min.x, b.min.y, b.min.z], "max": [b.max.x, b.max.y, b.max.z] },
            }))
        }
        Command::Segment { dir, dump } => {
            let scene = load_scene(&dir)?;
            let providers = Providers::from_config(&cfg.providers, truth_for(&dir)?)?;
            let s1 = run_stage1(&scene, &cfg, &providers)?;
            if let Some(d) = dump {
                let d = if d.as_os_str().is_empty() { dir.clone() } else { d };
                s1.dump(&d)?;
            }
            print_json(&json!({
                "scene_id": scene.scene_id,
                "superpoints": s1.superpoints.len(),
                "instances": s1.merge.instances.len(),
                "candidates": s1.embedded.len(),
                "stage_counts": s1.merge.stage_counts,
                "timings": s1.timings,
                "provider_usage": providers.usage(),
            }))
        }
        Command::Ground { dir, query, u, providers, artifacts } => {
            if let Some(p) = providers {
                cfg.providers.kind = match p {
                    ProviderArg::Mock => ProviderKind::Mock,
                    ProviderArg::Http => ProviderKind::Http,
                };
            }
            if let Some(u) = u {
                cfg.semantics.u = u;
            }
            cfg.validate()?;
            let scene = load_scene(&dir)?;
            let providers = Providers::from_config(&cfg.providers, truth_for(&dir)?)?;
            let s1 = run_stage1(&scene, &cfg, &providers)?;
            let out = ground_query(&scene, &s1, &query, cfg.semantics.u, &cfg, &providers)?;
            if let Some(a) = artifacts {
                out.write_artifacts(&a)?;
            }
            let g = &out.grounding;
            let candidates: Vec<_> = out
                .candidates
                .iter()
                .map(|c| json!({ "candidate_id": c.candidate_id, "instance_id": c.instance.instance_id, "score": c.score }))
                .collect();
            print_json(&json!({
                "query": query,
                "instance_id": g.instance_id,
                "candidate_id": g.trace.selected,
                "aabb": g.aabb,
                "obb": g.obb,
                "candidates": candidates,
                "explanation": g.trace.explanation,
                "correction_rounds": g.trace.correction_rounds,
                "fallback": g.trace.fallback,
                "provider_usage": providers.usage(),
            }))
        }
        Command::Eval { dataset, out } => {
            let d = Dataset::load(&dataset)?;
            let report = evaluate(&d, &cfg, &opts)?;
            if let Some(p) = &out {
                report.write(p)?;
            }
            print_json(&json!({
                "total": report.total,
                "failures": report.failures,
                "acc_at_0.25": report.acc_025,
                "acc_at_0.5": report.acc_05,
                "provider_usage": report.provider_usage,
            }))
        }
        Command::Synth { seed, objects, out, count } => {
            std::fs::create_dir_all(&out).map_err(|e| Error::InvalidArgument(format!("{}: {e}", out.display())))?;
            let preset = out.join("uniground.toml");
            std::fs::write(&preset, Config::tabletop().to_toml()?)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", preset.display())))?;
            match count {
                Some(n) => {
                    let d = synth_dataset(&out, seed, n, objects..=objects, BoxType::Aabb)?;
                    print_json(&json!({ "scenes": n, "queries": d.annotations.len(), "config": preset }))
                }
                None => {
                    let spec = SyntheticSpec { seed, objects, scene_id: format!("synth_{seed:04}"), ..SyntheticSpec::default() };
                    let s = synth_scene(&spec, &out)?;
                    let queries: Vec<_> = s.truth.queries.iter().map(|q| &q.text).collect();
                    print_json(&json!({
                        "scene_id": s.truth.scene_id,
                        "objects": s.truth.objects.len(),
                        "points": s.scene.cloud.point_count(),
                        "queries": queries,
                        "config": preset,
                    }))
                }
            }
        }
        Command::Ablate { kind } => match kind {
            AblateKind::Candidates { dataset, n, out } => {
                if n.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument("--n values must be strictly ascending".into()));
                }
                let d = Dataset::load(&dataset)?;
                let rows = ablate_candidates(&d, &cfg, &n, &opts)?;
                if let Some(p) = &out {
                    write_csv(p, &rows)?;
                }
                print_json(&serde_json::to_value(&rows)?)
            }
            AblateKind::Prompts { dataset, out } => {
                let d = Dataset::load(&dataset)?;
                let rows: Vec<_> = ablate_prompts(&d, &cfg, &PROMPT_ROWS, &opts)?.into_iter().map(|(r, _)| r).collect();
                if let Some(p) = &out {
                    write_csv(p, &rows)?;
                }
                for r in &rows {
                    let t = uniground_core::reasoner::PromptToggles {
                        spatial: r.spatial,
                        semantic: r.semantic,
                        visual_cot: r.visual_cot,
                    };
                    eprintln!("{:<10} {:.3} {:.3}", toggle_name(&t), r.acc_025, r.acc_05);
                }
                print_json(&serde_json::to_value(&rows)?)
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_bad_input() { 2 } else { 3 })
        }
    }
}
