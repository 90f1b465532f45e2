//! Two-stage 3D visual grounding: unsupervised instance construction from
//! RGB-D scans, embedding-based candidate retrieval, and VLM reasoning over
//! rendered and native views.

pub mod config;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod instances;
pub mod pipeline;
pub mod projection;
pub mod reasoner;
pub mod scene;
pub mod semantics;
pub mod superpoints;
pub mod viewfactory;
pub mod vocab;

pub use config::Config;
pub use error::{Error, Result};
pub use pipeline::{ground_query, run_stage1, Providers, QueryOutcome, Stage1};
pub use instances::{linear_schedule, pair_affinity, progressive_merge, Instance, MergeSchedule};
pub use reasoner::{ground, Grounding, ReasoningTrace};
pub use scene::{
    load_scene, AxisAlignedBox, CameraIntrinsics, DepthMap, Frame, GroundingQuery, OrientedBox, PointCloud, Pose,
    Scene, Vec3,
};
pub use semantics::{Candidate, SemanticEmbedding};
pub use superpoints::Superpoint;
