use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Box3;

/// Camera height above the floor used for synthetic viewpoints (m).
pub const VIEWPOINT_HEIGHT: f64 = 1.70;
/// Horizontal distance from the target center to the viewpoint (m).
pub const VIEWPOINT_RADIUS: f64 = 0.99;
pub const VIEWPOINT_ATTEMPTS: usize = 64;

const NEAR_PLANE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub origin: [f64; 3],
    pub look_at: [f64; 3],
    pub intrinsics: Intrinsics,
}

/// Pixel-space rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(a, a).sqrt();
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

impl CameraPose {
    pub fn new(origin: [f64; 3], look_at: [f64; 3], intrinsics: Intrinsics) -> Result<Self> {
        if normalize(sub(look_at, origin)).is_none() {
            return Err(Error::Argument("camera origin coincides with look-at point".into()));
        }
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::Argument("focal lengths must be positive".into()));
        }
        Ok(CameraPose {
            origin,
            look_at,
            intrinsics,
        })
    }

    /// (right, down, forward) unit axes; world +z is up.
    fn basis(&self) -> Result<([f64; 3], [f64; 3], [f64; 3])> {
        let forward = normalize(sub(self.look_at, self.origin))
            .ok_or_else(|| Error::Argument("degenerate camera pose".into()))?;
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]))
            .or_else(|| normalize(cross(forward, [0.0, 1.0, 0.0])))
            .ok_or_else(|| Error::Argument("degenerate camera pose".into()))?;
        let down = cross(forward, right);
        Ok((right, down, forward))
    }

    /// Point in camera coordinates (x right, y down, z forward).
    pub fn to_camera(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let (r, d, f) = self.basis()?;
        let rel = sub(p, self.origin);
        Ok([dot(rel, r), dot(rel, d), dot(rel, f)])
    }

    fn pixel(&self, c: [f64; 3]) -> [f64; 2] {
        let z = c[2].max(NEAR_PLANE);
        let k = &self.intrinsics;
        [k.fx * c[0] / z + k.cx, k.fy * c[1] / z + k.cy]
    }

    /// True when `p` is in front of the camera and projects inside the image.
    pub fn sees(&self, p: [f64; 3]) -> Result<bool> {
        let c = self.to_camera(p)?;
        if c[2] <= 0.0 {
            return Ok(false);
        }
        let [u, v] = self.pixel(c);
        let k = &self.intrinsics;
        Ok((0.0..=k.width).contains(&u) && (0.0..=k.height).contains(&v))
    }
}

/// Samples a viewpoint on the horizontal circle around the target at the
/// standard camera height, retrying until it lies inside the scene and
/// the target center is inside the view frustum.
pub fn estimate_viewpoint(target: &Box3, scene_bounds: &Box3, seed: u64) -> Result<CameraPose> {
    estimate_viewpoint_with(target, scene_bounds, seed, Intrinsics::default())
}

pub fn estimate_viewpoint_with(
    target: &Box3,
    scene_bounds: &Box3,
    seed: u64,
    intrinsics: Intrinsics,
) -> Result<CameraPose> {
    if !scene_bounds.contains_point(target.center) {
        return Err(Error::Placement("target center lies outside the scene bounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [cx, cy, _] = target.center;
    for _ in 0..VIEWPOINT_ATTEMPTS {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let origin = [
            cx + VIEWPOINT_RADIUS * theta.cos(),
            cy + VIEWPOINT_RADIUS * theta.sin(),
            VIEWPOINT_HEIGHT,
        ];
        if !scene_bounds.contains_point(origin) {
            continue;
        }
        let Ok(cam) = CameraPose::new(origin, target.center, intrinsics) else {
            continue;
        };
        if cam.sees(target.center)? {
            return Ok(cam);
        }
    }
    Err(Error::Placement(format!(
        "no viewpoint inside the scene after {VIEWPOINT_ATTEMPTS} attempts"
    )))
}

/// Pixel bounding rectangle of the box's eight projected corners, clamped
/// to the image.
pub fn project_box(b: &Box3, cam: &CameraPose) -> Result<Rect2> {
    let center = cam.to_camera(b.center)?;
    if center[2] <= 0.0 {
        return Err(Error::Visibility("box center is behind the camera".into()));
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for corner in b.corners() {
        let px = cam.pixel(cam.to_camera(corner)?);
        for a in 0..2 {
            min[a] = min[a].min(px[a]);
            max[a] = max[a].max(px[a]);
        }
    }
    let k = &cam.intrinsics;
    let clamp = |v: f64, hi: f64| v.clamp(0.0, hi);
    Ok(Rect2 {
        min: [clamp(min[0], k.width), clamp(min[1], k.height)],
        max: [clamp(max[0], k.width), clamp(max[1], k.height)],
    })
}
