//! Overpass API JSON (`[out:json]`) building extraction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::GeoCoord;

#[derive(Debug, Error)]
#[error("malformed Overpass document at {path}: {message}")]
pub struct OverpassError {
    pub path: String,
    pub message: String,
}

/// A closed OSM way tagged as a building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingFootprint {
    pub osm_id: i64,
    /// Closed ring as delivered; the first vertex is repeated at the end.
    pub ring: Vec<GeoCoord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct OverpassParse {
    pub footprints: Vec<BuildingFootprint>,
    pub warnings: Vec<String>,
}

/// Fallbacks used when a footprint has no explicit height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightRule {
    pub level_height: f64,
    pub default_height: f64,
}

impl Default for HeightRule {
    fn default() -> Self {
        Self {
            level_height: 3.0,
            default_height: 8.0,
        }
    }
}

impl HeightRule {
    pub fn height(&self, fp: &BuildingFootprint) -> f64 {
        if let Some(h) = fp.height_m.filter(|h| *h > 0.0) {
            return h;
        }
        if let Some(l) = fp.levels.filter(|l| *l > 0.0) {
            return l * self.level_height;
        }
        self.default_height
    }
}

/// Height tag, else levels × 3 m, else 8 m.
pub fn building_height(fp: &BuildingFootprint) -> f64 {
    HeightRule::default().height(fp)
}

#[derive(Deserialize)]
struct Document {
    elements: Vec<Element>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Element {
    Node {
        id: i64,
        lat: f64,
        lon: f64,
    },
    Way {
        id: i64,
        #[serde(default)]
        nodes: Vec<i64>,
        #[serde(default)]
        geometry: Option<Vec<Option<LatLon>>>,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
    #[serde(other)]
    Other,
}

#[derive(Deserialize, Clone, Copy)]
struct LatLon {
    lat: f64,
    lon: f64,
}

/// Extract building footprints from an Overpass JSON response.
///
/// Ways may carry inline `geometry` (`out geom`) or reference node elements
/// present in the same document. Unusable ways are skipped with a warning.
pub fn parse_overpass(body: &[u8]) -> Result<OverpassParse, OverpassError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| OverpassError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let nodes: HashMap<i64, LatLon> = doc
        .elements
        .iter()
        .filter_map(|el| match el {
            Element::Node { id, lat, lon } => Some((*id, LatLon { lat: *lat, lon: *lon })),
            _ => None,
        })
        .collect();

    let mut out = OverpassParse::default();
    for el in &doc.elements {
        let Element::Way {
            id,
            nodes: refs,
            geometry,
            tags,
        } = el
        else {
            continue;
        };
        if !tags.get("building").is_some_and(|v| v != "no") {
            continue;
        }
        let coords: Option<Vec<LatLon>> = match geometry {
            Some(g) => g.iter().copied().collect(),
            None => refs.iter().map(|r| nodes.get(r).copied()).collect(),
        };
        let Some(coords) = coords else {
            out.warnings.push(format!("way {id}: missing node coordinates, skipped"));
            continue;
        };
        let ring: Result<Vec<GeoCoord>, _> = coords.iter().map(|c| GeoCoord::new(c.lat, c.lon)).collect();
        let Ok(ring) = ring else {
            out.warnings.push(format!("way {id}: coordinate out of range, skipped"));
            continue;
        };
        let closed = match (refs.first(), refs.last()) {
            (Some(a), Some(b)) if refs.len() > 1 => a == b,
            _ => ring.len() > 1 && ring.first() == ring.last(),
        };
        if !closed {
            out.warnings.push(format!("way {id}: building outline is not closed, skipped"));
            continue;
        }
        if distinct_vertices(&ring) < 3 {
            out.warnings.push(format!("way {id}: fewer than 3 distinct nodes, skipped"));
            continue;
        }
        let height_m = match tags.get("height") {
            Some(raw) => match parse_length(raw) {
                Some(h) if h > 0.0 => Some(h),
                _ => {
                    out.warnings.push(format!("way {id}: unreadable height {raw:?} ignored"));
                    None
                }
            },
            None => None,
        };
        let levels = match tags.get("building:levels") {
            Some(raw) => match raw.trim().parse::<f64>() {
                Ok(l) if l > 0.0 && l.is_finite() => Some(l),
                _ => {
                    out.warnings.push(format!("way {id}: unreadable building:levels {raw:?} ignored"));
                    None
                }
            },
            None => None,
        };
        out.footprints.push(BuildingFootprint {
            osm_id: *id,
            ring,
            height_m,
            levels,
            name: tags.get("name").cloned(),
        });
    }
    Ok(out)
}

fn distinct_vertices(ring: &[GeoCoord]) -> usize {
    let open = match ring {
        [first, .., last] if first == last => &ring[..ring.len() - 1],
        _ => ring,
    };
    let mut seen: Vec<(u64, u64)> = open.iter().map(|g| (g.lat.to_bits(), g.lon.to_bits())).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Parse an OSM length value in metres, accepting a trailing unit token.
fn parse_length(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+'))
        .unwrap_or(s.len());
    let value: f64 = s[..split].trim().parse().ok()?;
    let factor = match s[split..].trim() {
        "" | "m" | "meter" | "meters" | "metre" | "metres" => 1.0,
        "ft" | "feet" | "'" => 0.3048,
        _ => return None,
    };
    let v = value * factor;
    v.is_finite().then_some(v)
}
