//! Synthetic data, box IoU, evaluation and ablation sweeps.

pub mod ablate;
pub mod eval;
pub mod iou;
pub mod synth;

pub use ablate::{ablate_candidates, ablate_prompts, CandidateRow, PromptRow, PROMPT_ROWS};
pub use eval::{evaluate, evaluate_variants, evaluate_variants_with, synth_dataset, BoxType, Dataset, EvalOptions, EvalReport, Variant};
pub use iou::{iou_3d, iou_aabb, iou_obb, EvalBox};
pub use synth::{generate, synth_scene, GroundTruth, GtObject, GtQuery, SyntheticSpec};
