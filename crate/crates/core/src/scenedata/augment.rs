use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Per-axis rotation bound in degrees.
    pub max_rotation_deg: f64,
    /// Per-component translation bound in meters.
    pub max_translation: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 5.0,
            max_translation: 0.5,
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rz · Ry · Rx for angles in radians.
fn rotation(ax: f64, ay: f64, az: f64) -> Mat3 {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&rz, &matmul3(&ry, &rx))
}

/// Rigid jitter of a scene: rotation about the centroid of object centers
/// followed by a translation. Boxes stay axis-aligned.
pub fn augment_scene(scene: &Scene, seed: u64) -> Scene {
    augment_scene_with(scene, seed, &AugmentParams::default())
}

pub fn augment_scene_with(scene: &Scene, seed: u64, params: &AugmentParams) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |bound: f64| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 };
    let r = params.max_rotation_deg.to_radians();
    let angles = [draw(r), draw(r), draw(r)];
    let t = params.max_translation;
    let shift = [draw(t), draw(t), draw(t)];
    let rot = rotation(angles[0], angles[1], angles[2]);

    let n = scene.objects.len().max(1) as f64;
    let mut centroid = [0.0; 3];
    for o in &scene.objects {
        for a in 0..3 {
            centroid[a] += o.center[a] / n;
        }
    }
    let apply = |p: [f64; 3]| -> [f64; 3] {
        let d = [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]];
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = centroid[i] + (0..3).map(|k| rot[i][k] * d[k]).sum::<f64>() + shift[i];
        }
        out
    };

    let mut out = scene.clone();
    for o in &mut out.objects {
        o.center = apply(o.center);
    }
    if let Some(dets) = &mut out.detections {
        for d in dets {
            d.center = apply(d.center);
        }
    }
    if let Some(points) = &mut out.points {
        for p in points {
            let q = apply([p[0] as f64, p[1] as f64, p[2] as f64]);
            for a in 0..3 {
                p[a] = q[a] as f32;
            }
        }
    }
    out
}
