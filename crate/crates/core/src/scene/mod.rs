//! The versioned scene aggregate: mutations, persistence and OBJ export.
//!
//! A [`SceneState`] is an immutable value. [`SceneState::apply`] returns a
//! fresh state whose revision is exactly one higher, with masks, placements
//! and trajectories recomputed as part of the same revision.

mod codec;
mod obj;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{link_trajectories, place, Anchor, Detection, Placement, Trajectory};
use crate::geodesy::{GeodesyError, LocalFrame};
use crate::ingest::{horizontal_fov, BuildingFootprint, HeightRule, ImageRecord, TerrainGrid};
use crate::math::Vec3;
use crate::meshgen::{building_mesh, terrain_mesh, Mesh, MeshError, Surface, SurfaceIds};
use crate::projection::{
    assign_masks, FanSettings, Intrinsics, Projector, ProjectorPose, Ray, SceneIndex, SurfaceMaskTable,
    DEFAULT_FAR_M, DEFAULT_NEAR_M,
};

pub use obj::{export_obj, parse_obj_counts, ObjCounts, ObjExport};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Focal length assumed when a photo carries no usable 35 mm equivalent.
pub const DEFAULT_FOCAL35_MM: f64 = 28.0;
/// Camera height above ground for photos without altitude.
pub const DEFAULT_EYE_HEIGHT_M: f64 = 1.6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene file has schema_version {found}, this build reads version {expected}")]
    Version { expected: u32, found: u32 },
    #[error("malformed scene file at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("duplicate {kind} {id}")]
    Duplicate { kind: &'static str, id: String },
    #[error("scene has no local frame yet")]
    NoFrame,
    #[error("frame is fixed once the scene has content")]
    FrameLocked,
    #[error("invalid mutation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("could not serialize scene: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSettings {
    pub fan: FanSettings,
    pub near: f64,
    pub far: f64,
    pub eye_height: f64,
    pub default_focal35: f64,
}

impl Default for SceneSettings {
    fn default() -> Self {
        Self {
            fan: FanSettings::default(),
            near: DEFAULT_NEAR_M,
            far: DEFAULT_FAR_M,
            eye_height: DEFAULT_EYE_HEIGHT_M,
            default_focal35: DEFAULT_FOCAL35_MM,
        }
    }
}

impl SceneSettings {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.fan.nx < 2 || self.fan.ny < 2 {
            return Err(SceneError::Invalid("fan needs at least 2×2 rays".into()));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(SceneError::Invalid("need 0 < near < far".into()));
        }
        if !(self.eye_height.is_finite() && self.default_focal35 > 0.0 && self.default_focal35.is_finite()) {
            return Err(SceneError::Invalid("eye height and default focal length must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub schema_version: u32,
    pub revision: u64,
    pub settings: SceneSettings,
    pub frame: Option<LocalFrame>,
    pub images: Vec<ImageRecord>,
    pub buildings: Vec<Mesh>,
    pub terrain: Option<Mesh>,
    pub projectors: Vec<Projector>,
    pub mask_table: SurfaceMaskTable,
    pub detections: Vec<Detection>,
    pub placements: Vec<Placement>,
    pub trajectories: Vec<Trajectory>,
}

impl Default for SceneState {
    fn default() -> Self {
        Self::new(SceneSettings::default())
    }
}

/// A state transition. Serialized with a `type` tag so the same bodies can
/// travel over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mutation {
    AddImage {
        image: ImageRecord,
        /// Overrides the pose seeded from the geotag.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pose: Option<ProjectorPose>,
    },
    SetProjectorPose {
        projector_id: u32,
        pose: ProjectorPose,
    },
    AddDetections {
        detections: Vec<Detection>,
    },
    RebuildGeometry {
        footprints: Vec<BuildingFootprint>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        terrain: Option<TerrainGrid>,
        #[serde(default)]
        heights: HeightRule,
    },
    SetFrame {
        frame: LocalFrame,
    },
    /// Replace projection settings and recompute everything derived from them.
    Reproject {
        settings: SceneSettings,
    },
}

impl Mutation {
    pub fn kind(&self) -> &'static str {
        match self {
            Mutation::AddImage { .. } => "add_image",
            Mutation::SetProjectorPose { .. } => "set_projector_pose",
            Mutation::AddDetections { .. } => "add_detections",
            Mutation::RebuildGeometry { .. } => "rebuild_geometry",
            Mutation::SetFrame { .. } => "set_frame",
            Mutation::Reproject { .. } => "reproject",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Applied {
    pub scene: SceneState,
    /// One line describing the committed change.
    pub summary: String,
    pub warnings: Vec<String>,
}

impl SceneState {
    pub fn new(settings: SceneSettings) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            revision: 0,
            settings,
            frame: None,
            images: Vec::new(),
            buildings: Vec::new(),
            terrain: None,
            projectors: Vec::new(),
            mask_table: SurfaceMaskTable::default(),
            detections: Vec::new(),
            placements: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    /// Every surface, buildings first, then terrain.
    pub fn surfaces(&self) -> impl Iterator<Item = &Surface> {
        self.buildings
            .iter()
            .chain(self.terrain.iter())
            .flat_map(|m| m.surfaces.iter())
    }

    pub fn surface_count(&self) -> usize {
        self.surfaces().count()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn projector_for(&self, image_id: &str) -> Option<&Projector> {
        self.projectors.iter().find(|p| p.image_id == image_id)
    }

    fn has_content(&self) -> bool {
        !(self.images.is_empty() && self.buildings.is_empty() && self.terrain.is_none())
    }

    /// Apply one mutation. A rejected mutation leaves `self` untouched.
    pub fn apply(&self, mutation: &Mutation) -> Result<Applied, SceneError> {
        let mut next = self.clone();
        let mut warnings = Vec::new();
        let summary = match mutation {
            Mutation::AddImage { image, pose } => {
                next.add_image(image, pose.as_ref())?;
                next.recompute_masks()?;
                next.recompute_placements(&mut warnings);
                format!("add_image {}", image.image_id)
            }
            Mutation::SetProjectorPose { projector_id, pose } => {
                if !pose.is_finite() {
                    return Err(SceneError::Invalid("pose has a non-finite component".into()));
                }
                let p = next
                    .projectors
                    .get_mut(*projector_id as usize)
                    .ok_or_else(|| SceneError::Dangling(format!("projector {projector_id}")))?;
                p.pose = *pose;
                next.recompute_masks()?;
                next.recompute_placements(&mut warnings);
                format!("set_projector_pose {projector_id}")
            }
            Mutation::AddDetections { detections } => {
                for (i, d) in detections.iter().enumerate() {
                    let img = next
                        .image(&d.image_id)
                        .ok_or_else(|| SceneError::Dangling(format!("detection {i} names image {}", d.image_id)))?;
                    let (w, h) = img.display_size();
                    d.validate(w, h)
                        .map_err(|e| SceneError::Invalid(format!("detection {i}: {e}")))?;
                }
                next.detections.extend(detections.iter().cloned());
                next.recompute_placements(&mut warnings);
                format!("add_detections {}", detections.len())
            }
            Mutation::RebuildGeometry {
                footprints,
                terrain,
                heights,
            } => {
                next.rebuild_geometry(footprints, terrain.as_ref(), heights, &mut warnings)?;
                next.recompute_masks()?;
                next.recompute_placements(&mut warnings);
                format!(
                    "rebuild_geometry {} buildings, {} surfaces",
                    next.buildings.len(),
                    next.surface_count()
                )
            }
            Mutation::SetFrame { frame } => {
                if self.frame.as_ref() != Some(frame) && self.has_content() {
                    return Err(SceneError::FrameLocked);
                }
                next.frame = Some(*frame);
                format!(
                    "set_frame zone {}{} {:.3} {:.3}",
                    frame.anchor.zone, frame.anchor.hemisphere, frame.anchor.easting, frame.anchor.northing
                )
            }
            Mutation::Reproject { settings } => {
                settings.validate()?;
                next.settings = *settings;
                for p in &mut next.projectors {
                    p.intrinsics.near = settings.near;
                    p.intrinsics.far = settings.far;
                }
                next.recompute_masks()?;
                next.recompute_placements(&mut warnings);
                format!("reproject {} pools", next.mask_table.pools.len())
            }
        };
        next.revision = self.revision + 1;
        next.check_references()?;
        Ok(Applied {
            scene: next,
            summary,
            warnings,
        })
    }

    fn add_image(&mut self, image: &ImageRecord, pose: Option<&ProjectorPose>) -> Result<(), SceneError> {
        image
            .validate()
            .map_err(|e| SceneError::Invalid(format!("image {}: {e}", image.image_id)))?;
        if self.image(&image.image_id).is_some() {
            return Err(SceneError::Duplicate {
                kind: "image",
                id: image.image_id.clone(),
            });
        }
        let frame = self.frame.ok_or(SceneError::NoFrame)?;
        let pose = match pose {
            Some(p) if !p.is_finite() => return Err(SceneError::Invalid("pose has a non-finite component".into())),
            Some(p) => *p,
            None => self.seed_pose(image, &frame)?,
        };
        let intrinsics = self.intrinsics_for(image)?;
        self.projectors.push(Projector {
            projector_id: self.projectors.len() as u32,
            image_id: image.image_id.clone(),
            pose,
            intrinsics,
            priority_timestamp: image.timestamp,
        });
        self.images.push(image.clone());
        Ok(())
    }

    /// Position at the geotag, looking along the compass heading (north if
    /// absent), level. Height comes from the geotag altitude when present,
    /// otherwise eye height above the terrain.
    fn seed_pose(&self, image: &ImageRecord, frame: &LocalFrame) -> Result<ProjectorPose, SceneError> {
        let mut position = frame.geo_to_local(&image.geo)?;
        if image.geo.alt.is_none() {
            position.z = self.ground_height(position.x, position.y) + self.settings.eye_height;
        }
        Ok(ProjectorPose::new(position, image.heading.unwrap_or(0.0), 0.0, 0.0))
    }

    /// Terrain surface height under a point, 0 off the terrain.
    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        let Some(terrain) = &self.terrain else {
            return 0.0;
        };
        let index = SceneIndex::new(terrain.surfaces.iter());
        let top = 1.0e5;
        let ray = Ray {
            origin: Vec3::new(x, y, top),
            direction: Vec3::new(0.0, 0.0, -1.0),
        };
        index
            .intersect(&ray, 0.0, f64::INFINITY)
            .map_or(0.0, |h| top - h.t)
    }

    fn intrinsics_for(&self, image: &ImageRecord) -> Result<Intrinsics, SceneError> {
        let (w, h) = image.display_size();
        let focal = match image.focal35 {
            Some(f) if !image.focal_unscaled => f,
            _ => self.settings.default_focal35,
        };
        let hfov = horizontal_fov(focal, w, h).map_err(|e| SceneError::Invalid(e.to_string()))?;
        Intrinsics::new(hfov, f64::from(w) / f64::from(h), self.settings.near, self.settings.far)
            .map_err(|e| SceneError::Invalid(e.to_string()))
    }

    fn rebuild_geometry(
        &mut self,
        footprints: &[BuildingFootprint],
        terrain: Option<&TerrainGrid>,
        heights: &HeightRule,
        warnings: &mut Vec<String>,
    ) -> Result<(), SceneError> {
        let frame = self.frame.ok_or(SceneError::NoFrame)?;
        let mut ids = SurfaceIds::default();
        let mut buildings = Vec::with_capacity(footprints.len());
        for fp in footprints {
            match building_mesh(fp, &frame, terrain, heights, &mut ids) {
                Ok(b) => {
                    if b.undraped {
                        warnings.push(format!("building {} lies outside the terrain grid, placed at z = 0", fp.osm_id));
                    }
                    buildings.push(b.mesh);
                }
                Err(e) => warnings.push(format!("building {} skipped: {e}", fp.osm_id)),
            }
        }
        let terrain = match terrain {
            Some(grid) => match terrain_mesh(grid, &frame, &mut ids) {
                Ok(m) => Some(m),
                Err(MeshError::EmptyTerrain) => {
                    warnings.push("terrain grid holds only NODATA, skipped".into());
                    None
                }
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        self.buildings = buildings;
        self.terrain = terrain;
        Ok(())
    }

    fn recompute_masks(&mut self) -> Result<(), SceneError> {
        let surfaces: Vec<Surface> = self.surfaces().cloned().collect();
        self.mask_table = assign_masks(&self.projectors, &surfaces, self.settings.fan)
            .map_err(|e| SceneError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Placement ids are detection indices, so they stay stable as
    /// detections are appended.
    fn recompute_placements(&mut self, warnings: &mut Vec<String>) {
        let index = SceneIndex::new(self.surfaces());
        let ground_plane = self.terrain.is_none();
        let mut placements = Vec::new();
        for (i, det) in self.detections.iter().enumerate() {
            let (Some(image), Some(proj)) = (self.image(&det.image_id), self.projector_for(&det.image_id)) else {
                continue;
            };
            match place(det, image, proj, &index, ground_plane, i as u32) {
                Ok(p) => placements.push(p),
                Err(e) => warnings.push(format!("detection {i}: {e}")),
            }
        }
        let (trajectories, link_warnings) = link_trajectories(&placements);
        warnings.extend(link_warnings);
        self.placements = placements;
        self.trajectories = trajectories;
    }

    /// Every id the scene mentions must resolve.
    pub fn check_references(&self) -> Result<(), SceneError> {
        let dangling = |s: String| Err(SceneError::Dangling(s));
        let mut image_ids = BTreeSet::new();
        for img in &self.images {
            if !image_ids.insert(img.image_id.as_str()) {
                return Err(SceneError::Duplicate {
                    kind: "image",
                    id: img.image_id.clone(),
                });
            }
        }
        for (k, p) in self.projectors.iter().enumerate() {
            if p.projector_id as usize != k {
                return dangling(format!("projector at index {k} has id {}", p.projector_id));
            }
            if !image_ids.contains(p.image_id.as_str()) {
                return dangling(format!("projector {k} names image {}", p.image_id));
            }
        }
        let mut surface_ids = BTreeSet::new();
        for s in self.surfaces() {
            if !surface_ids.insert(s.surface_id) {
                return Err(SceneError::Duplicate {
                    kind: "surface",
                    id: s.surface_id.to_string(),
                });
            }
            let n = s.vertices.len() as u32;
            if s.triangles.iter().flatten().any(|&v| v >= n) {
                return dangling(format!("surface {} indexes past its vertices", s.surface_id));
            }
        }
        if !self.mask_table.masks.is_empty() || !surface_ids.is_empty() {
            let keys: BTreeSet<u32> = self.mask_table.masks.keys().copied().collect();
            if keys != surface_ids {
                return dangling("mask table and surface ids disagree".into());
            }
        }
        let np = self.projectors.len() as u32;
        for (sid, mask) in &self.mask_table.masks {
            if mask.iter().any(|k| k >= np) {
                return dangling(format!("mask of surface {sid} names a missing projector"));
            }
            if !self.mask_table.pools.contains(mask) {
                return dangling(format!("mask of surface {sid} is not pooled"));
            }
        }
        for (i, d) in self.detections.iter().enumerate() {
            if !image_ids.contains(d.image_id.as_str()) {
                return dangling(format!("detection {i} names image {}", d.image_id));
            }
        }
        let mut placement_ids = BTreeMap::new();
        for p in &self.placements {
            if self.detections.get(p.placement_id as usize) != Some(&p.detection) {
                return dangling(format!("placement {} does not match its detection", p.placement_id));
            }
            if let Anchor::Surface(sid) = p.anchored_on {
                if !surface_ids.contains(&sid) {
                    return dangling(format!("placement {} sits on missing surface {sid}", p.placement_id));
                }
            }
            placement_ids.insert(p.placement_id, ());
        }
        for t in &self.trajectories {
            if let Some(pid) = t.points.iter().find(|pid| !placement_ids.contains_key(pid)) {
                return dangling(format!("trajectory {} names missing placement {pid}", t.identity));
            }
        }
        Ok(())
    }

    /// Canonical bytes: fixed key order, 17 significant digits per float.
    pub fn save(&self) -> Result<Vec<u8>, SceneError> {
        codec::to_canonical_json(self).map_err(|e| SceneError::Serialize(e.to_string()))
    }

    pub fn load(bytes: &[u8]) -> Result<SceneState, SceneError> {
        #[derive(Deserialize)]
        struct Probe {
            schema_version: u32,
        }
        let parse_err = |e: serde_path_to_error::Error<serde_json::Error>| SceneError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        };
        let probe: Probe = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_slice(bytes))
            .map_err(parse_err)?;
        if probe.schema_version != SCENE_SCHEMA_VERSION {
            return Err(SceneError::Version {
                expected: SCENE_SCHEMA_VERSION,
                found: probe.schema_version,
            });
        }
        let scene: SceneState =
            serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_slice(bytes)).map_err(parse_err)?;
        scene.settings.validate()?;
        scene.check_references()?;
        Ok(scene)
    }
}
