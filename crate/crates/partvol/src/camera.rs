//! Orbit camera, pose sampling, ray generation and sample placement.
//!
//! Conventions, fixed here because nothing upstream pins them:
//!
//! * The grid maps to the world box [-1, 1] x [-1, 1] x [-0.5, 0.5]: voxel
//!   (x, y, z) sits at ((x+0.5)/X*2-1, (y+0.5)/Y*2-1, 0.5-(z+0.5)/Z). Grid z
//!   therefore measures depth away from the camera side of the box: z = 0 is
//!   the near plane, z = Z-1 the far plane.
//! * The camera orbits the origin at `orbit_radius`, looking at the origin
//!   with +y up. The frontal pose (yaw, pitch) = (pi/2, pi/2) places it at
//!   (0, 0, orbit_radius) with the central ray pointing (0, 0, -1).
//! * Sample points are midpoints of equal sub-intervals of the ray/box
//!   intersection; the trailing spacing is the mean spacing rather than an
//!   unbounded sentinel, because the box is finite and the background part
//!   covers the far plane.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lifting::GridGeom;
use crate::math::{add, cross, dot, normalize, scale, sub, Vec3};

/// Yaw/pitch pair in radians; (pi/2, pi/2) is frontal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraPose {
    pub fn frontal() -> Self {
        Self {
            yaw: FRAC_PI_2,
            pitch: FRAC_PI_2,
        }
    }
}

/// Mean of the training pose distribution, for both angles.
pub const POSE_MEAN: f64 = FRAC_PI_2;
/// Standard deviation of the yaw distribution.
pub const YAW_STD: f64 = 0.3;
/// Standard deviation of the pitch distribution.
pub const PITCH_STD: f64 = 0.155;

/// Maps two standard-normal draws to a camera pose. Zero draws give the
/// frontal pose exactly.
#[inline]
pub fn pose_from_std_normals(z_yaw: f64, z_pitch: f64) -> CameraPose {
    CameraPose {
        yaw: POSE_MEAN + YAW_STD * z_yaw,
        pitch: POSE_MEAN + PITCH_STD * z_pitch,
    }
}

/// Draws a pose from the training distribution:
/// yaw ~ N(pi/2, 0.3^2), pitch ~ N(pi/2, 0.155^2), independent.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R) -> CameraPose {
    let z_yaw: f64 = rng.sample(StandardNormal);
    let z_pitch: f64 = rng.sample(StandardNormal);
    pose_from_std_normals(z_yaw, z_pitch)
}

/// World-space half extents of the render volume.
pub const WORLD_BOX_MIN: Vec3 = [-1.0, -1.0, -0.5];
pub const WORLD_BOX_MAX: Vec3 = [1.0, 1.0, 0.5];
/// Circumradius of the world box; the camera must orbit outside it.
const WORLD_BOX_CIRCUMRADIUS: f64 = 1.5;

/// Continuous grid coordinates of a world point.
#[inline]
pub fn world_to_grid(p: Vec3, geom: GridGeom) -> Vec3 {
    [
        (p[0] + 1.0) * 0.5 * geom.x as f64 - 0.5,
        (p[1] + 1.0) * 0.5 * geom.y as f64 - 0.5,
        (0.5 - p[2]) * geom.z as f64 - 0.5,
    ]
}

/// World position of a continuous grid coordinate.
#[inline]
pub fn grid_to_world(g: Vec3, geom: GridGeom) -> Vec3 {
    [
        (g[0] + 0.5) / geom.x as f64 * 2.0 - 1.0,
        (g[1] + 0.5) / geom.y as f64 * 2.0 - 1.0,
        0.5 - (g[2] + 0.5) / geom.z as f64,
    ]
}

/// Camera intrinsics and sampling counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    /// Distance from the world origin; must exceed the box circumradius.
    pub orbit_radius: f64,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub image_w: usize,
    pub image_h: usize,
    /// Samples per ray (N); 12 for the training profile, 36 for testing.
    pub n_samples: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            orbit_radius: 3.0,
            // The default is the literal 0.5236 rad (~30 degrees), not pi/6.
            #[allow(clippy::approx_constant)]
            fov_y: 0.5236,
            image_w: 64,
            image_h: 64,
            n_samples: 36,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.orbit_radius.is_finite() || self.orbit_radius <= WORLD_BOX_CIRCUMRADIUS {
            return Err(Error::Config(format!(
                "orbit radius {} must exceed the world-box circumradius {}",
                self.orbit_radius, WORLD_BOX_CIRCUMRADIUS
            )));
        }
        if !self.fov_y.is_finite() || self.fov_y <= 0.0 || self.fov_y >= PI {
            return Err(Error::Config(format!(
                "vertical fov {} must lie in (0, pi)",
                self.fov_y
            )));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "at least 2 samples per ray required, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }
}

/// One camera ray through a pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    /// Pixel column and row this ray passes through.
    pub pixel: (usize, usize),
}

/// World position of the camera for a pose.
#[inline]
pub fn camera_position(pose: CameraPose, orbit_radius: f64) -> Vec3 {
    let (sy, cy) = pose.yaw.sin_cos();
    let (sp, cp) = pose.pitch.sin_cos();
    [orbit_radius * cy * sp, orbit_radius * cp, orbit_radius * sy * sp]
}

/// Pinhole ray generator for a fixed pose: look-at the origin, +y up
/// (re-orthogonalized), one ray per pixel center.
#[derive(Debug, Clone)]
pub struct RayCaster {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tan_x: f64,
    tan_y: f64,
    image_w: usize,
    image_h: usize,
}

impl RayCaster {
    pub fn new(pose: CameraPose, cfg: &CameraConfig) -> Result<Self> {
        cfg.validate()?;
        if !pose.yaw.is_finite() || !pose.pitch.is_finite() {
            return Err(Error::NonFinite("camera pose"));
        }
        if pose.pitch.abs() < 1e-6 || (pose.pitch - PI).abs() < 1e-6 {
            return Err(Error::DegeneratePose { pitch: pose.pitch });
        }
        let origin = camera_position(pose, cfg.orbit_radius);
        let forward = normalize(scale(origin, -1.0));
        let world_up = [0.0, 1.0, 0.0];
        let up = normalize(sub(world_up, scale(forward, dot(world_up, forward))));
        let right = normalize(cross(forward, up));
        let tan_y = (cfg.fov_y * 0.5).tan();
        let tan_x = tan_y * cfg.image_w as f64 / cfg.image_h as f64;
        Ok(Self {
            origin,
            forward,
            right,
            up,
            tan_x,
            tan_y,
            image_w: cfg.image_w,
            image_h: cfg.image_h,
        })
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    /// Ray through the center of pixel (u, v); v = 0 is the top row.
    pub fn ray(&self, u: usize, v: usize) -> Ray {
        let ndc_x = (u as f64 + 0.5) / self.image_w as f64 * 2.0 - 1.0;
        let ndc_y = 1.0 - (v as f64 + 0.5) / self.image_h as f64 * 2.0;
        let dir = add(
            self.forward,
            add(
                scale(self.right, ndc_x * self.tan_x),
                scale(self.up, ndc_y * self.tan_y),
            ),
        );
        Ray {
            origin: self.origin,
            dir: normalize(dir),
            pixel: (u, v),
        }
    }
}

/// All rays of the image, row-major (v-major, then u).
pub fn generate_rays(pose: CameraPose, cfg: &CameraConfig) -> Result<Vec<Ray>> {
    let caster = RayCaster::new(pose, cfg)?;
    let mut rays = Vec::with_capacity(cfg.image_w * cfg.image_h);
    for v in 0..cfg.image_h {
        for u in 0..cfg.image_w {
            rays.push(caster.ray(u, v));
        }
    }
    Ok(rays)
}

/// Slab intersection of a ray with an axis-aligned box. Returns
/// (t_enter, t_exit) with t_enter >= 0, or None on a miss.
pub fn ray_box_intersect(origin: Vec3, dir: Vec3, box_min: Vec3, box_max: Vec3) -> Option<(f64, f64)> {
    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-15 {
            if origin[axis] < box_min[axis] || origin[axis] > box_max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let (t0, t1) = {
            let a = (box_min[axis] - origin[axis]) * inv;
            let b = (box_max[axis] - origin[axis]) * inv;
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        };
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
        if t_enter >= t_exit {
            return None;
        }
    }
    Some((t_enter, t_exit))
}

/// Midpoints of `n` equal sub-intervals of [t_enter, t_exit], plus the
/// spacing list. All spacings equal the interval width over n; the last
/// entry is that same mean spacing.
pub fn midpoint_samples(t_enter: f64, t_exit: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let step = (t_exit - t_enter) / n as f64;
    let t: Vec<f64> = (0..n).map(|i| t_enter + (i as f64 + 0.5) * step).collect();
    let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    delta.push(step);
    (t, delta)
}

/// Per-ray sample positions and spacings, in grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub hit: bool,
    /// Ray parameters of the samples, ascending. Empty on a miss.
    pub t: Vec<f64>,
    /// Spacing delta_i; the last entry is the mean spacing.
    pub delta: Vec<f64>,
    /// Sample positions converted to continuous grid coordinates.
    pub points: Vec<Vec3>,
}

impl RaySampleBatch {
    pub fn miss() -> Self {
        Self {
            hit: false,
            t: Vec::new(),
            delta: Vec::new(),
            points: Vec::new(),
        }
    }
}

/// Intersects the ray with the world box and places `n` midpoint samples.
/// A miss is a value, not an error. Panics if `n < 2`; the weight profile
/// downstream needs at least two samples.
pub fn place_samples(ray: &Ray, geom: GridGeom, n: usize) -> RaySampleBatch {
    assert!(n >= 2, "at least 2 samples per ray required");
    let Some((t_enter, t_exit)) = ray_box_intersect(ray.origin, ray.dir, WORLD_BOX_MIN, WORLD_BOX_MAX)
    else {
        return RaySampleBatch::miss();
    };
    let (t, delta) = midpoint_samples(t_enter, t_exit, n);
    batch_from_samples(ray, geom, t, delta)
}

/// Stratified variant of [`place_samples`]: each sample is drawn uniformly
/// from its own sub-interval instead of sitting at the midpoint. Midpoint
/// sampling stays the deterministic default; jitter exists for
/// anti-aliasing experiments behind an explicit RNG stream.
pub fn place_samples_jittered<R: Rng + ?Sized>(
    ray: &Ray,
    geom: GridGeom,
    n: usize,
    rng: &mut R,
) -> RaySampleBatch {
    assert!(n >= 2, "at least 2 samples per ray required");
    let Some((t_enter, t_exit)) = ray_box_intersect(ray.origin, ray.dir, WORLD_BOX_MIN, WORLD_BOX_MAX)
    else {
        return RaySampleBatch::miss();
    };
    let step = (t_exit - t_enter) / n as f64;
    let t: Vec<f64> = (0..n)
        .map(|i| t_enter + (i as f64 + rng.gen::<f64>()) * step)
        .collect();
    let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    delta.push(step);
    batch_from_samples(ray, geom, t, delta)
}

fn batch_from_samples(ray: &Ray, geom: GridGeom, t: Vec<f64>, delta: Vec<f64>) -> RaySampleBatch {
    let points = t
        .iter()
        .map(|&ti| world_to_grid(add(ray.origin, scale(ray.dir, ti)), geom))
        .collect();
    RaySampleBatch {
        hit: true,
        t,
        delta,
        points,
    }
}
