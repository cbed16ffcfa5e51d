//! Projector model: pose, intrinsics, view-plane rays and projective UVs.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::LocalCoord;
use crate::math::{sin_cos_deg, Vec3};

pub const DEFAULT_NEAR_M: f64 = 0.1;
pub const DEFAULT_FAR_M: f64 = 500.0;

/// Slack on the unit square when deciding whether a point is in view.
const UV_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(&'static str),
    #[error("ray fan needs at least 2×2 rays, got {0}×{1}")]
    FanTooSmall(usize, usize),
    #[error("pose has a non-finite component")]
    NonFinitePose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Horizontal field of view in degrees.
    pub hfov: f64,
    /// Width over height.
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
}

impl Intrinsics {
    pub fn new(hfov: f64, aspect: f64, near: f64, far: f64) -> Result<Self, ProjectionError> {
        let i = Self { hfov, aspect, near, far };
        i.validate()?;
        Ok(i)
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.hfov > 0.0 && self.hfov < 180.0) {
            return Err(ProjectionError::Intrinsics("hfov must lie in (0, 180)"));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(ProjectionError::Intrinsics("aspect must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(ProjectionError::Intrinsics("need 0 < near < far"));
        }
        Ok(())
    }

    pub fn tan_half_h(&self) -> f64 {
        (self.hfov.to_radians() / 2.0).tan()
    }

    pub fn tan_half_v(&self) -> f64 {
        self.tan_half_h() / self.aspect
    }
}

/// Camera position and orientation in the local frame.
///
/// Angles are degrees. Yaw turns about +z with 0 facing north (+y) and
/// positive values turning clockwise seen from above (towards east). Pitch
/// raises the view axis. Positive roll turns the camera clockwise as seen
/// from behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorPose {
    pub position: LocalCoord,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl ProjectorPose {
    pub fn new(position: LocalCoord, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            position,
            yaw,
            pitch,
            roll,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }

    /// Orthonormal camera axes `(forward, right, up)`.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = sin_cos_deg(self.yaw);
        let (sp, cp) = sin_cos_deg(self.pitch);
        let (sr, cr) = sin_cos_deg(self.roll);
        let forward = Vec3::new(sy * cp, cy * cp, sp);
        let right0 = Vec3::new(cy, -sy, 0.0);
        let up0 = right0.cross(forward);
        let right = right0 * cr - up0 * sr;
        let up = up0 * cr + right0 * sr;
        (forward, right, up)
    }

    /// Equal up to whole turns of each angle.
    pub fn same_orientation(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| (a - b).rem_euclid(360.0) == 0.0;
        self.position == other.position && eq(self.yaw, other.yaw) && eq(self.pitch, other.pitch) && eq(self.roll, other.roll)
    }
}

/// A photograph acting as a slide projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub projector_id: u32,
    pub image_id: String,
    pub pose: ProjectorPose,
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: LocalCoord,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// A fan ray together with the view-plane coordinate it passes through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanRay {
    pub u: f64,
    pub v: f64,
    pub ray: Ray,
}

/// Precomputed camera frame for repeated ray generation and projection.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub tan_h: f64,
    pub tan_v: f64,
    pub near: f64,
    pub far: f64,
}

impl View {
    pub fn of(p: &Projector) -> Self {
        let (forward, right, up) = p.pose.basis();
        Self {
            origin: p.pose.position,
            forward,
            right,
            up,
            tan_h: p.intrinsics.tan_half_h(),
            tan_v: p.intrinsics.tan_half_v(),
            near: p.intrinsics.near,
            far: p.intrinsics.far,
        }
    }

    /// Ray through view-plane coordinate `(u, v)`; `(0, 0)` is the top-left
    /// corner of the image.
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let d = self.forward + self.right * ((2.0 * u - 1.0) * self.tan_h) + self.up * ((1.0 - 2.0 * v) * self.tan_v);
        Ray {
            origin: self.origin,
            direction: d / d.length(),
        }
    }

    pub fn project(&self, point: Vec3) -> Option<(f64, f64)> {
        let d = point - self.origin;
        let depth = d.dot(self.forward);
        if depth <= 0.0 {
            return None;
        }
        let dist = d.length();
        if dist < self.near || dist > self.far {
            return None;
        }
        let x = d.dot(self.right) / (depth * self.tan_h);
        let y = d.dot(self.up) / (depth * self.tan_v);
        let u = (x + 1.0) / 2.0;
        let v = (1.0 - y) / 2.0;
        let inside = |s: f64| (-UV_SLACK..=1.0 + UV_SLACK).contains(&s);
        (inside(u) && inside(v)).then(|| (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)))
    }

    /// Same mapping as [`View::project`] without the frustum test; `None`
    /// only behind the camera.
    pub fn project_unclipped(&self, point: Vec3) -> Option<(f64, f64)> {
        let d = point - self.origin;
        let depth = d.dot(self.forward);
        if depth <= 0.0 {
            return None;
        }
        let x = d.dot(self.right) / (depth * self.tan_h);
        let y = d.dot(self.up) / (depth * self.tan_v);
        Some(((x + 1.0) / 2.0, (1.0 - y) / 2.0))
    }
}

/// `nx × ny` rays evenly spaced over the view plane, corners included,
/// in row-major order (top row first).
pub fn projector_rays(p: &Projector, nx: usize, ny: usize) -> Result<Vec<FanRay>, ProjectionError> {
    if nx < 2 || ny < 2 {
        return Err(ProjectionError::FanTooSmall(nx, ny));
    }
    let view = View::of(p);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let v = j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let u = i as f64 / (nx - 1) as f64;
            out.push(FanRay { u, v, ray: view.ray(u, v) });
        }
    }
    Ok(out)
}

/// Normalized image coordinate of a point, if it lies inside the frustum.
/// Range limits apply to the straight-line distance from the projector.
pub fn project_uv(p: &Projector, point: LocalCoord) -> Option<(f64, f64)> {
    View::of(p).project(point)
}
