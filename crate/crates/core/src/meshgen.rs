//! Footprint cleaning, wall extrusion, roof triangulation and terrain meshing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{utm_to_latlon, GeoCoord, GeodesyError, LocalFrame};
use crate::ingest::{BuildingFootprint, GridCrs, HeightRule, TerrainGrid};
use crate::math::{polygon_centroid, signed_area, Vec2, Vec3};

/// Consecutive footprint vertices closer than this are merged.
pub const MERGE_EPSILON_M: f64 = 0.01;
/// Triangles with area at or below this are treated as collinear.
pub const COLLINEAR_AREA_M2: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("footprint has fewer than 3 distinct vertices or zero area")]
    DegenerateFootprint,
    #[error("footprint outline intersects itself")]
    NonSimplePolygon,
    #[error("terrain grid has no complete cell")]
    EmptyTerrain,
    #[error("building height must be positive, got {0}")]
    InvalidHeight(f64),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

/// Counter-clockwise footprint outline in local metres, without a repeated
/// closing vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    pub vertices: Vec<Vec2>,
}

impl Polygon2D {
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| (self.vertices[(i + 1) % n] - self.vertices[i]).length())
            .sum()
    }

    pub fn centroid(&self) -> Vec2 {
        polygon_centroid(&self.vertices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Wall,
    Roof,
    Ground,
}

/// An individually addressable piece of geometry (one wall, one roof, or a
/// terrain sheet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub surface_id: u32,
    pub kind: SurfaceKind,
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise when viewed from the side the surface faces.
    pub triangles: Vec<[u32; 3]>,
    /// Unit normal for planar surfaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<Vec3>,
}

impl Surface {
    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                0.5 * (b - a).cross(c - a).length()
            })
            .sum()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().fold(Vec3::ZERO, |acc, &v| acc + v) / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_id: Option<i64>,
    pub surfaces: Vec<Surface>,
    pub base_z: f64,
}

/// Hands out scene-unique surface ids in creation order.
#[derive(Debug, Clone, Default)]
pub struct SurfaceIds {
    next: u32,
}

impl SurfaceIds {
    pub fn starting_at(next: u32) -> Self {
        Self { next }
    }

    pub fn allocate(&mut self) -> u32 {
        let id = self.next;
        self.next += 1;
        id
    }
}

/// Project an OSM ring into the local frame and clean it up: drop the
/// closing duplicate, merge vertices closer than 1 cm, force CCW order.
pub fn normalize_footprint(ring: &[GeoCoord], frame: &LocalFrame) -> Result<Polygon2D, MeshError> {
    let mut pts = Vec::with_capacity(ring.len());
    for g in ring {
        pts.push(frame.geo_to_local(g)?.xy());
    }
    clean_ring(pts)
}

/// Shared cleaning for rings already in local metres.
pub fn clean_ring(pts: Vec<Vec2>) -> Result<Polygon2D, MeshError> {
    let mut kept: Vec<Vec2> = Vec::with_capacity(pts.len());
    for p in pts {
        if kept.last().is_none_or(|&q| (p - q).length() >= MERGE_EPSILON_M) {
            kept.push(p);
        }
    }
    while kept.len() > 1 && (kept[kept.len() - 1] - kept[0]).length() < MERGE_EPSILON_M {
        kept.pop();
    }
    if kept.len() < 3 {
        return Err(MeshError::DegenerateFootprint);
    }
    if collinear(&kept) {
        return Err(MeshError::DegenerateFootprint);
    }
    if !is_simple(&kept) {
        return Err(MeshError::NonSimplePolygon);
    }
    let area = signed_area(&kept);
    if area.abs() <= COLLINEAR_AREA_M2 {
        return Err(MeshError::DegenerateFootprint);
    }
    if area < 0.0 {
        kept.reverse();
    }
    Ok(Polygon2D { vertices: kept })
}

/// Every vertex within the collinear tolerance of one line.
fn collinear(v: &[Vec2]) -> bool {
    let a = v[0];
    let far = v
        .iter()
        .copied()
        .max_by(|p, q| (*p - a).length().total_cmp(&(*q - a).length()))
        .unwrap_or(a);
    v.iter().all(|&p| orient(a, far, p).abs() <= 2.0 * COLLINEAR_AREA_M2)
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test.
fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two edges of the ring touch except adjacent edges at their
/// shared vertex.
pub fn is_simple(ring: &[Vec2]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        // Adjacent edge folding back onto this one.
        let c = ring[(i + 2) % n];
        if orient(a, b, c) == 0.0 && (b - a).dot(c - b) < 0.0 {
            return false;
        }
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// One vertical quad per footprint edge, normals pointing outwards.
pub fn extrude_walls(
    fp: &Polygon2D,
    height: f64,
    base_z: f64,
    ids: &mut SurfaceIds,
) -> Result<Vec<Surface>, MeshError> {
    if !(height > 0.0 && height.is_finite()) {
        return Err(MeshError::InvalidHeight(height));
    }
    let n = fp.vertices.len();
    let top = base_z + height;
    let mut walls = Vec::with_capacity(n);
    for i in 0..n {
        let a = fp.vertices[i];
        let b = fp.vertices[(i + 1) % n];
        let e = b - a;
        let len = e.length();
        // Edge direction rotated -90° in the x-y plane.
        let normal = Vec3::new(e.y / len, -e.x / len, 0.0);
        walls.push(Surface {
            surface_id: ids.allocate(),
            kind: SurfaceKind::Wall,
            vertices: vec![a.extend(base_z), b.extend(base_z), b.extend(top), a.extend(top)],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normal: Some(normal),
        });
    }
    Ok(walls)
}

/// Ear-clipping triangulation of a simple polygon.
///
/// Returns exactly `n − 2` index triples, each counter-clockwise. Ears are
/// searched starting from the lowest vertex index so the output is
/// deterministic.
pub fn triangulate(fp: &Polygon2D) -> Result<Vec<[usize; 3]>, MeshError> {
    let v = &fp.vertices;
    let n = v.len();
    if n < 3 {
        return Err(MeshError::DegenerateFootprint);
    }
    if collinear(v) {
        return Err(MeshError::DegenerateFootprint);
    }
    if !is_simple(v) {
        return Err(MeshError::NonSimplePolygon);
    }
    let area = signed_area(v);
    if area.abs() <= COLLINEAR_AREA_M2 {
        return Err(MeshError::DegenerateFootprint);
    }
    let mut ring: Vec<usize> = if area > 0.0 {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    let mut tris = Vec::with_capacity(n - 2);
    while ring.len() > 3 {
        let m = ring.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_unstable_by_key(|&p| ring[p]);
        let corner = |p: usize| (ring[(p + m - 1) % m], ring[p], ring[(p + 1) % m]);
        let pos = order
            .iter()
            .copied()
            .find(|&p| {
                let (a, b, c) = corner(p);
                is_ear(v, &ring, a, b, c)
            })
            // Only reachable through rounding on near-collinear input: clip
            // the first vertex that is not reflex.
            .or_else(|| {
                order.iter().copied().find(|&p| {
                    let (a, b, c) = corner(p);
                    orient(v[a], v[b], v[c]) >= -COLLINEAR_AREA_M2
                })
            })
            .unwrap_or(order[0]);
        let (a, b, c) = corner(pos);
        tris.push([a, b, c]);
        ring.remove(pos);
    }
    tris.push([ring[0], ring[1], ring[2]]);
    Ok(tris)
}

fn is_ear(v: &[Vec2], ring: &[usize], a: usize, b: usize, c: usize) -> bool {
    let (pa, pb, pc) = (v[a], v[b], v[c]);
    if 0.5 * orient(pa, pb, pc) <= COLLINEAR_AREA_M2 {
        return false;
    }
    ring.iter()
        .filter(|&&q| q != a && q != b && q != c)
        .all(|&q| !point_in_triangle(v[q], pa, pb, pc))
}

/// Inclusive point-in-triangle test for a CCW triangle.
fn point_in_triangle(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> bool {
    orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
}

/// Flat roof over the footprint at `z`.
pub fn roof_surface(fp: &Polygon2D, z: f64, ids: &mut SurfaceIds) -> Result<Surface, MeshError> {
    let tris = triangulate(fp)?;
    let vertices: Vec<Vec3> = fp.vertices.iter().map(|p| p.extend(z)).collect();
    let triangles = tris
        .into_iter()
        .filter(|&[a, b, c]| 0.5 * orient(fp.vertices[a], fp.vertices[b], fp.vertices[c]) > COLLINEAR_AREA_M2)
        .map(|[a, b, c]| [a as u32, b as u32, c as u32])
        .collect();
    Ok(Surface {
        surface_id: ids.allocate(),
        kind: SurfaceKind::Roof,
        vertices,
        triangles,
        normal: Some(Vec3::Z),
    })
}

/// Grid-native coordinates of a local position.
pub fn local_to_grid(frame: &LocalFrame, crs: GridCrs, p: Vec2) -> Result<(f64, f64), MeshError> {
    let utm = frame.local_to_utm(p.extend(0.0));
    Ok(match crs {
        GridCrs::Utm => (utm.easting, utm.northing),
        GridCrs::Geographic => {
            let g = utm_to_latlon(&utm)?;
            (g.lon, g.lat)
        }
    })
}

fn grid_to_local(frame: &LocalFrame, crs: GridCrs, x: f64, y: f64) -> Result<Vec2, MeshError> {
    Ok(match crs {
        GridCrs::Utm => Vec2::new(x - frame.anchor.easting, y - frame.anchor.northing),
        GridCrs::Geographic => frame.geo_to_local(&GeoCoord::new(y, x)?)?.xy(),
    })
}

/// Terrain height in local z at a local position, if the grid covers it.
pub fn terrain_height_at(grid: &TerrainGrid, frame: &LocalFrame, p: Vec2) -> Option<f64> {
    let (gx, gy) = local_to_grid(frame, grid.crs, p).ok()?;
    grid.sample(gx, gy).ok().map(|z| z - frame.base_elevation)
}

/// Result of meshing one footprint.
#[derive(Debug, Clone)]
pub struct BuildingMesh {
    pub mesh: Mesh,
    pub footprint: Polygon2D,
    /// Set when terrain was supplied but did not cover the centroid.
    pub undraped: bool,
}

/// Walls plus a flat roof, sitting at the terrain height sampled under the
/// footprint centroid (or z = 0 without terrain).
pub fn building_mesh(
    fp: &BuildingFootprint,
    frame: &LocalFrame,
    terrain: Option<&TerrainGrid>,
    rule: &HeightRule,
    ids: &mut SurfaceIds,
) -> Result<BuildingMesh, MeshError> {
    let poly = normalize_footprint(&fp.ring, frame)?;
    let height = rule.height(fp);
    let draped = terrain.map(|g| terrain_height_at(g, frame, poly.centroid()));
    let base_z = draped.flatten().unwrap_or(0.0);
    let mut surfaces = extrude_walls(&poly, height, base_z, ids)?;
    surfaces.push(roof_surface(&poly, base_z + height, ids)?);
    Ok(BuildingMesh {
        mesh: Mesh {
            building_id: Some(fp.osm_id),
            surfaces,
            base_z,
        },
        footprint: poly,
        undraped: matches!(draped, Some(None)),
    })
}

/// Two triangles per grid cell, skipping cells that touch a NODATA node.
pub fn terrain_mesh(grid: &TerrainGrid, frame: &LocalFrame, ids: &mut SurfaceIds) -> Result<Mesh, MeshError> {
    if grid.all_nodata() {
        return Err(MeshError::EmptyTerrain);
    }
    let mut index = vec![u32::MAX; grid.ncols * grid.nrows];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut node = |r: usize, c: usize, vertices: &mut Vec<Vec3>| -> Result<u32, MeshError> {
        let k = r * grid.ncols + c;
        if index[k] == u32::MAX {
            let (x, y) = grid.node_position(r, c);
            let p = grid_to_local(frame, grid.crs, x, y)?;
            index[k] = vertices.len() as u32;
            vertices.push(p.extend(grid.value(r, c) - frame.base_elevation));
        }
        Ok(index[k])
    };
    for r in 0..grid.nrows.saturating_sub(1) {
        for c in 0..grid.ncols.saturating_sub(1) {
            let corners = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)];
            if corners.iter().any(|&(rr, cc)| grid.is_nodata(rr, cc)) {
                continue;
            }
            let nw = node(r, c, &mut vertices)?;
            let ne = node(r, c + 1, &mut vertices)?;
            let sw = node(r + 1, c, &mut vertices)?;
            let se = node(r + 1, c + 1, &mut vertices)?;
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::EmptyTerrain);
    }
    Ok(Mesh {
        building_id: None,
        surfaces: vec![Surface {
            surface_id: ids.allocate(),
            kind: SurfaceKind::Ground,
            vertices,
            triangles,
            normal: None,
        }],
        base_z: 0.0,
    })
}
