//! Multi-step operations shared by the command line and tests: each takes a
//! scene and parsed inputs and returns the scene after the mutations.

use crate::detection::{parse_detections, DetectionError};
use crate::geodesy::{latlon_to_utm, latlon_to_utm_in_zone, utm_to_latlon, GeoCoord, LocalFrame, UtmCoord};
use crate::ingest::{BuildingFootprint, HeightRule, ImageRecord, IngestError, Sidecar, TerrainGrid};
use crate::ingest::{sample_elevation, GridCrs};
use crate::math::{signed_area, Vec2};
use crate::scene::{Applied, Mutation, SceneError, SceneSettings, SceneState};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("no footprints to anchor on")]
    NothingToAnchor,
    #[error("anchor: {0}")]
    Anchor(String),
}

/// One photo to ingest: its bytes and/or a sidecar.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub image_id: String,
    pub source_path: String,
    pub jpeg: Option<Vec<u8>>,
    pub sidecar: Option<Sidecar>,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub scene: SceneState,
    pub added: Vec<String>,
    pub failures: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Add each image with a seeded projector. A scene without a frame gets
/// one anchored at the first usable image. Per-image failures are collected
/// rather than aborting the batch.
pub fn ingest_images(scene: &SceneState, inputs: &[ImageInput]) -> Result<IngestOutcome, PipelineError> {
    let mut cur = scene.clone();
    let mut out = IngestOutcome {
        scene: SceneState::default(),
        added: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
    };
    for input in inputs {
        let record = match ImageRecord::assemble(
            &input.image_id,
            &input.source_path,
            input.jpeg.as_deref(),
            input.sidecar.as_ref(),
        ) {
            Ok(r) => r,
            Err(e) => {
                out.failures.push((input.source_path.clone(), describe(&e)));
                continue;
            }
        };
        if cur.frame.is_none() {
            let frame = LocalFrame::new(GeoCoord::new(record.geo.lat, record.geo.lon).map_err(SceneError::from)?, 0.0)
                .map_err(SceneError::from)?;
            cur = cur.apply(&Mutation::SetFrame { frame })?.scene;
        }
        match cur.apply(&Mutation::AddImage {
            image: record.clone(),
            pose: None,
        }) {
            Ok(Applied { scene, warnings, .. }) => {
                cur = scene;
                out.warnings.extend(warnings);
                out.added.push(record.image_id);
            }
            Err(e) => out.failures.push((input.source_path.clone(), e.to_string())),
        }
    }
    out.scene = cur;
    Ok(out)
}

fn describe(e: &IngestError) -> String {
    e.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorChoice {
    /// Area-weighted centroid of all footprints.
    Auto,
    At(GeoCoord),
}

/// Area-weighted centroid of the footprints, computed in the UTM zone of
/// the first footprint vertex.
pub fn footprint_centroid(footprints: &[BuildingFootprint]) -> Result<UtmCoord, PipelineError> {
    let first = footprints
        .iter()
        .find_map(|f| f.ring.first())
        .ok_or(PipelineError::NothingToAnchor)?;
    let origin = latlon_to_utm(first).map_err(SceneError::from)?;
    let (mut sx, mut sy, mut sa) = (0.0, 0.0, 0.0);
    for fp in footprints {
        let mut pts = Vec::with_capacity(fp.ring.len());
        for g in &fp.ring {
            let u = latlon_to_utm_in_zone(g, origin.zone, origin.hemisphere).map_err(SceneError::from)?;
            pts.push(Vec2::new(u.easting - origin.easting, u.northing - origin.northing));
        }
        let area = signed_area(&pts).abs();
        if area == 0.0 {
            continue;
        }
        let c = crate::math::polygon_centroid(&pts);
        sx += c.x * area;
        sy += c.y * area;
        sa += area;
    }
    if sa == 0.0 {
        return Err(PipelineError::NothingToAnchor);
    }
    Ok(UtmCoord {
        easting: origin.easting + sx / sa,
        northing: origin.northing + sy / sa,
        ..origin
    })
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub scene: SceneState,
    pub warnings: Vec<String>,
}

/// Fix the frame if needed, then mesh the footprints and terrain. The base
/// elevation of a new frame is the terrain height at the anchor, if known.
pub fn build_geometry(
    scene: &SceneState,
    footprints: Vec<BuildingFootprint>,
    terrain: Option<TerrainGrid>,
    heights: HeightRule,
    anchor: AnchorChoice,
) -> Result<BuildOutcome, PipelineError> {
    let mut cur = scene.clone();
    let mut warnings = Vec::new();
    let wanted = match anchor {
        AnchorChoice::Auto if cur.frame.is_some() => None,
        AnchorChoice::Auto => Some(footprint_centroid(&footprints)?),
        AnchorChoice::At(g) => Some(latlon_to_utm(&g).map_err(SceneError::from)?),
    };
    if let Some(utm) = wanted {
        let base = terrain
            .as_ref()
            .and_then(|t| anchor_elevation(t, &utm))
            .unwrap_or(0.0);
        let frame = LocalFrame::from_utm(utm, base).map_err(SceneError::from)?;
        match cur.frame {
            Some(existing) if same_anchor(&existing, &frame) => {}
            Some(_) if anchor == AnchorChoice::Auto => {}
            _ => {
                let a = cur.apply(&Mutation::SetFrame { frame })?;
                cur = a.scene;
            }
        }
    }
    let a = cur.apply(&Mutation::RebuildGeometry {
        footprints,
        terrain,
        heights,
    })?;
    warnings.extend(a.warnings);
    Ok(BuildOutcome {
        scene: a.scene,
        warnings,
    })
}

fn same_anchor(a: &LocalFrame, b: &LocalFrame) -> bool {
    a.anchor.zone == b.anchor.zone
        && a.anchor.hemisphere == b.anchor.hemisphere
        && (a.anchor.easting - b.anchor.easting).abs() < 1e-6
        && (a.anchor.northing - b.anchor.northing).abs() < 1e-6
}

fn anchor_elevation(t: &TerrainGrid, utm: &UtmCoord) -> Option<f64> {
    match t.crs {
        GridCrs::Utm => sample_elevation(t, utm.easting, utm.northing).ok(),
        GridCrs::Geographic => {
            let g = utm_to_latlon(utm).ok()?;
            sample_elevation(t, g.lon, g.lat).ok()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlaceOutcome {
    pub scene: SceneState,
    pub added: usize,
    pub placed: usize,
    pub warnings: Vec<String>,
}

/// Parse a detection document against the scene's images and add it.
pub fn place_detections(scene: &SceneState, doc: &[u8]) -> Result<PlaceOutcome, PipelineError> {
    let parsed = parse_detections(doc, &scene.images)?;
    let mut warnings = parsed.warnings;
    let added = parsed.detections.len();
    let first_new = scene.detections.len();
    let a = scene.apply(&Mutation::AddDetections {
        detections: parsed.detections,
    })?;
    warnings.extend(a.warnings);
    Ok(PlaceOutcome {
        placed: a
            .scene
            .placements
            .iter()
            .filter(|p| p.placement_id as usize >= first_new)
            .count(),
        scene: a.scene,
        added,
        warnings,
    })
}

/// Recompute masks and placements under new settings.
pub fn reproject(scene: &SceneState, settings: SceneSettings) -> Result<Applied, PipelineError> {
    Ok(scene.apply(&Mutation::Reproject { settings })?)
}
