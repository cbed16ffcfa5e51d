//! Photographs as perspective projectors: ray fans, occlusion-aware surface
//! visibility, pooled projector masks and projective texture coordinates.

mod camera;
mod masks;
mod raycast;

pub use camera::{
    project_uv, projector_rays, FanRay, Intrinsics, ProjectionError, Projector, ProjectorPose, Ray, View,
    DEFAULT_FAR_M, DEFAULT_NEAR_M,
};
pub use masks::{
    assign_masks, texture_assignment, visible_surfaces, visible_surfaces_in, FanSettings, ProjectorSet,
    SurfaceMaskTable,
};
pub use raycast::{intersect, ray_triangle, Hit, SceneIndex, MT_EPSILON};
