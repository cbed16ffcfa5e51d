//! External detector output: parsing, 3D placement by foot-point ray casting,
//! and identity-linked trajectories.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::LocalCoord;
use crate::math::Vec3;
use crate::ingest::{ImageRecord, SCHEMA_VERSION};
use crate::projection::{Projector, Ray, SceneIndex, View};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("malformed detection document at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("detection schema_version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("detection #{index} references unknown image {image_id:?}")]
    DanglingImage { index: usize, image_id: String },
}

/// Pixel rectangle with a top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_label: String,
    pub confidence: f64,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
}

impl Detection {
    /// Checks the record against the dimensions of the image it came from.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        if self.class_label.trim().is_empty() {
            return Err("empty class_label".into());
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        let b = self.bbox;
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err("bbox width and height must be positive".into());
        }
        if !(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= f64::from(width) && b.y + b.h <= f64::from(height)) {
            return Err(format!("bbox {:?} outside the {width}×{height} image", <[f64; 4]>::from(b)));
        }
        Ok(())
    }
}

/// The versioned interchange document produced by detector adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionDocument {
    pub schema_version: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Default)]
pub struct DetectionParse {
    pub detections: Vec<Detection>,
    pub warnings: Vec<String>,
}

/// Parse a detection document, validating every record against its image.
///
/// A record naming an unknown image fails the whole document; a record that
/// is merely out of range is dropped with a warning.
pub fn parse_detections(doc: &[u8], images: &[ImageRecord]) -> Result<DetectionParse, DetectionError> {
    let de = &mut serde_json::Deserializer::from_slice(doc);
    let parsed: DetectionDocument = serde_path_to_error::deserialize(de).map_err(|e| DetectionError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if parsed.schema_version != SCHEMA_VERSION {
        return Err(DetectionError::Version {
            found: parsed.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    validate_detections(parsed.detections, images)
}

/// Shared validation for detections arriving from any source.
pub fn validate_detections(
    detections: Vec<Detection>,
    images: &[ImageRecord],
) -> Result<DetectionParse, DetectionError> {
    let dims: BTreeMap<&str, (u32, u32)> = images.iter().map(|i| (i.image_id.as_str(), i.display_size())).collect();
    let mut out = DetectionParse::default();
    for (index, d) in detections.into_iter().enumerate() {
        let Some(&(w, h)) = dims.get(d.image_id.as_str()) else {
            return Err(DetectionError::DanglingImage {
                index,
                image_id: d.image_id,
            });
        };
        match d.validate(w, h) {
            Ok(()) => out.detections.push(d),
            Err(reason) => out.warnings.push(format!("detection #{index} rejected: {reason}")),
        }
    }
    Ok(out)
}

/// What a placed detection rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Surface(u32),
    Ground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub placement_id: u32,
    pub detection: Detection,
    pub position: LocalCoord,
    pub anchored_on: Anchor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub identity: String,
    /// Placement ids in time order.
    pub points: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("detection of {class_label:?} in {image_id:?} does not reach any surface or the ground")]
pub struct Unplaceable {
    pub image_id: String,
    pub class_label: String,
}

/// View-plane coordinate of the bounding box's bottom centre, where a
/// grounded object meets the ground.
pub fn foot_point(det: &Detection, width: u32, height: u32) -> (f64, f64) {
    let b = det.bbox;
    ((b.x + b.w / 2.0) / f64::from(width), (b.y + b.h) / f64::from(height))
}

/// Ray from the projector through the detection's foot point.
pub fn foot_ray(det: &Detection, proj: &Projector, width: u32, height: u32) -> Ray {
    let (u, v) = foot_point(det, width, height);
    View::of(proj).ray(u, v)
}

/// Anchor a detection at the nearest hit of its foot ray among the scene
/// surfaces and, when `ground_plane` is set, the plane z = 0. Scenes with a
/// terrain mesh pass `false`: the mesh is the ground there, and a flat
/// plane at the anchor's elevation would cut through sloping terrain.
pub fn place(
    det: &Detection,
    image: &ImageRecord,
    proj: &Projector,
    scene: &SceneIndex,
    ground_plane: bool,
    placement_id: u32,
) -> Result<Placement, Unplaceable> {
    let (w, h) = image.display_size();
    let ray = foot_ray(det, proj, w, h);
    let (near, far) = (proj.intrinsics.near, proj.intrinsics.far);
    let surface = scene.intersect(&ray, near, far).map(|hit| (hit.t, Anchor::Surface(hit.surface_id)));
    let ground = ground_plane
        .then(|| ground_hit(&ray, near, far))
        .flatten()
        .map(|t| (t, Anchor::Ground));
    let best = match (surface, ground) {
        (Some(s), Some(g)) => Some(if g.0 < s.0 { g } else { s }),
        (s, g) => s.or(g),
    };
    let Some((t, anchored_on)) = best else {
        return Err(Unplaceable {
            image_id: det.image_id.clone(),
            class_label: det.class_label.clone(),
        });
    };
    let position = match anchored_on {
        // Slope form keeps exact cases exact, e.g. 45° lands at distance = height.
        Anchor::Ground => {
            let (o, d) = (ray.origin, ray.direction);
            Vec3::new(o.x - o.z * (d.x / d.z), o.y - o.z * (d.y / d.z), 0.0)
        }
        Anchor::Surface(_) => ray.at(t),
    };
    Ok(Placement {
        placement_id,
        detection: det.clone(),
        position,
        anchored_on,
        timestamp: image.timestamp,
    })
}

fn ground_hit(ray: &Ray, near: f64, far: f64) -> Option<f64> {
    let dz = ray.direction.z;
    if dz >= 0.0 {
        return None;
    }
    let t = -ray.origin.z / dz;
    (t >= near && t <= far).then_some(t)
}

/// Group placements by identity into time-ordered tracks. Ties on time keep
/// placement-id order. Placements without an identity are not linked;
/// labelled ones without a timestamp cannot be ordered and are reported.
pub fn link_trajectories(placements: &[Placement]) -> (Vec<Trajectory>, Vec<String>) {
    let mut groups: BTreeMap<&str, Vec<&Placement>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for p in placements {
        match (&p.detection.identity, p.timestamp) {
            (Some(id), Some(_)) => groups.entry(id.as_str()).or_default().push(p),
            (Some(id), None) => warnings.push(format!(
                "placement {} ({id}) has no timestamp and is left out of its trajectory",
                p.placement_id
            )),
            (None, None) => warnings.push(format!(
                "placement {} has neither identity nor timestamp and is not linked",
                p.placement_id
            )),
            (None, Some(_)) => {}
        }
    }
    let tracks = groups
        .into_iter()
        .map(|(identity, mut pts)| {
            pts.sort_by_key(|p| (p.timestamp, p.placement_id));
            Trajectory {
                identity: identity.to_owned(),
                points: pts.iter().map(|p| p.placement_id).collect(),
            }
        })
        .collect();
    (tracks, warnings)
}
