//! Turning raw inputs (JPEGs, sidecars, Overpass documents, ASCII grids)
//! into domain records. Nothing here touches the network or filesystem.

mod exif;
mod overpass;
mod terrain;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exif::{dms_to_degrees, read_exif, read_geotagged_exif, read_jpeg_dimensions, ExifData, ExifError};
pub use overpass::{building_height, parse_overpass, BuildingFootprint, HeightRule, OverpassError, OverpassParse};
pub use terrain::{parse_terrain, sample_elevation, GridCrs, TerrainError, TerrainGrid};

use crate::geodesy::GeoCoord;

/// Version tag shared by every JSON document the engine reads or writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Exif(#[from] ExifError),
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("image has no usable {0}")]
    Missing(&'static str),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// One photograph as the scene sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub source_path: String,
    pub width: u32,
    pub height: u32,
    pub geo: GeoCoord,
    /// Degrees clockwise from true north, in [0, 360).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal35: Option<f64>,
    /// `focal35` is a physical focal length, not a 35 mm equivalent.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub focal_unscaled: bool,
    pub orientation: u16,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |field, reason: &str| IngestError::Invalid {
            field,
            reason: reason.to_owned(),
        };
        if self.image_id.is_empty() {
            return Err(invalid("image_id", "empty"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("dimensions", "width and height must be positive"));
        }
        self.geo
            .validate()
            .map_err(|e| invalid("geo", &e.to_string()))?;
        if let Some(h) = self.heading {
            if !(0.0..360.0).contains(&h) {
                return Err(invalid("heading", "must lie in [0, 360)"));
            }
        }
        if let Some(f) = self.focal35 {
            if !(f > 0.0 && f.is_finite()) {
                return Err(invalid("focal35", "must be positive"));
            }
        }
        if !(1..=8).contains(&self.orientation) {
            return Err(invalid("orientation", "must be 1..=8"));
        }
        Ok(())
    }

    /// Width and height as displayed, after applying the Exif orientation.
    pub fn display_size(&self) -> (u32, u32) {
        if self.orientation >= 5 {
            (self.height, self.width)
        } else {
            (self.width, self.height)
        }
    }

    /// Assemble a record from whatever the JPEG carries, with every field
    /// present in `sidecar` taking precedence.
    ///
    /// A JPEG without Exif or without GPS is still accepted when the sidecar
    /// fills in the position.
    pub fn assemble(
        image_id: &str,
        source_path: &str,
        jpeg: Option<&[u8]>,
        sidecar: Option<&Sidecar>,
    ) -> Result<ImageRecord, IngestError> {
        let mut exif_failure = None;
        let data = match jpeg {
            Some(bytes) => match read_exif(bytes) {
                Ok(d) => d,
                Err(ExifError::NoExif) => {
                    exif_failure = Some(ExifError::NoExif);
                    let dims = read_jpeg_dimensions(bytes)?;
                    ExifData {
                        width: dims.map(|d| d.0),
                        height: dims.map(|d| d.1),
                        ..ExifData::default()
                    }
                }
                Err(e) => return Err(e.into()),
            },
            None => ExifData::default(),
        };
        if data.gps.is_none() && exif_failure.is_none() && jpeg.is_some() {
            exif_failure = Some(ExifError::MissingGeotag);
        }

        let empty = Sidecar::default();
        let sc = sidecar.unwrap_or(&empty);
        let geo = match (sc.lat, sc.lon) {
            (Some(lat), Some(lon)) => Some(GeoCoord {
                lat,
                lon,
                alt: sc.alt.or(data.gps.and_then(|g| g.alt)),
            }),
            (None, None) => data.gps.map(|mut g| {
                if sc.alt.is_some() {
                    g.alt = sc.alt;
                }
                g
            }),
            _ => return Err(IngestError::Sidecar("lat and lon must be given together".into())),
        };
        let Some(geo) = geo else {
            return Err(match exif_failure {
                Some(e) => e.into(),
                None => IngestError::Missing("geotag"),
            });
        };
        let (focal35, focal_unscaled) = match sc.focal35 {
            Some(f) => (Some(f), false),
            None => (data.focal35, data.focal_unscaled),
        };
        let record = ImageRecord {
            image_id: sc.image_id.clone().unwrap_or_else(|| image_id.to_owned()),
            source_path: source_path.to_owned(),
            width: sc.width.or(data.width).ok_or(IngestError::Missing("width"))?,
            height: sc.height.or(data.height).ok_or(IngestError::Missing("height"))?,
            geo,
            heading: sc.heading.or(data.heading),
            timestamp: sc.timestamp.or(data.timestamp),
            focal35,
            focal_unscaled,
            orientation: sc.orientation.or(data.orientation).unwrap_or(1),
        };
        record.validate()?;
        Ok(record)
    }
}

/// Per-image metadata file overriding or supplying Exif fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub schema_version: u32,
    #[serde(default)]
    pub image_id: Option<String>,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    #[serde(default)]
    pub alt: Option<f64>,
    #[serde(default)]
    pub heading: Option<f64>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    pub focal35: Option<f64>,
    #[serde(default)]
    pub orientation: Option<u16>,
}

impl Sidecar {
    pub fn from_json(bytes: &[u8]) -> Result<Sidecar, IngestError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let sc: Sidecar = serde_path_to_error::deserialize(de)
            .map_err(|e| IngestError::Sidecar(format!("{} at {}", e.inner(), e.path())))?;
        if sc.schema_version != SCHEMA_VERSION {
            return Err(IngestError::Sidecar(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                sc.schema_version
            )));
        }
        Ok(sc)
    }
}

/// Horizontal field of view in degrees for a 35 mm-equivalent focal length.
///
/// The 36 mm film width is laid along the longer image axis, so portrait
/// frames derive their horizontal angle from the vertical one.
pub fn horizontal_fov(focal35: f64, width: u32, height: u32) -> Result<f64, IngestError> {
    if !(focal35 > 0.0 && focal35.is_finite()) {
        return Err(IngestError::Invalid {
            field: "focal35",
            reason: format!("{focal35} is not a positive focal length"),
        });
    }
    if width == 0 || height == 0 {
        return Err(IngestError::Invalid {
            field: "dimensions",
            reason: "width and height must be positive".into(),
        });
    }
    let long_half = (18.0 / focal35).atan();
    if height > width {
        let aspect = f64::from(width) / f64::from(height);
        Ok(2.0 * (long_half.tan() * aspect).atan().to_degrees())
    } else {
        Ok(2.0 * long_half.to_degrees())
    }
}
