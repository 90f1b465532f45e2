//! Fixtures shared by the benchmarks.

use uniground_core::harness::{generate, SyntheticSpec};
use uniground_core::{Config, Scene, Vec3};

/// A small synthetic tabletop scene, reduced in resolution so that a
/// benchmark iteration stays well under a second.
pub fn small_scene(seed: u64, objects: usize) -> Scene {
    let spec = SyntheticSpec {
        seed,
        objects,
        frames: 4,
        width: 320,
        height: 240,
        focal: 262.5,
        ..SyntheticSpec::default()
    };
    generate(&spec).expect("synthetic scene").scene
}

pub fn normals(scene: &Scene) -> Vec<Vec3> {
    let cfg = Config::tabletop();
    let views: Vec<Vec3> = scene.frames.iter().map(|f| f.pose.center()).collect();
    uniground_core::superpoints::estimate_normals(&scene.cloud, cfg.superpoints.normal_neighbors, &views)
        .expect("normals")
}
