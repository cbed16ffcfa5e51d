//! Browser bindings for three engine operations: lat/lon to UTM,
//! footprint triangulation, and projector visibility over a small block of
//! buildings. The plain functions are ordinary Rust and tested natively;
//! the `#[wasm_bindgen]` wrappers serialize results and convert errors.

use ave_core::geodesy::latlon_to_utm;
use ave_core::meshgen::{extrude_walls, roof_surface, triangulate, Polygon2D, Surface, SurfaceIds, SurfaceKind};
use ave_core::projection::{visible_surfaces_in, FanSettings, Intrinsics, Projector, ProjectorPose, View};
use ave_core::{GeoCoord, Vec2, Vec3};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Utm {
    pub zone: u8,
    pub hemisphere: String,
    pub easting: f64,
    pub northing: f64,
}

pub fn utm(lat: f64, lon: f64) -> Result<Utm, String> {
    let g = GeoCoord::new(lat, lon).map_err(|e| e.to_string())?;
    let u = latlon_to_utm(&g).map_err(|e| e.to_string())?;
    Ok(Utm {
        zone: u.zone,
        hemisphere: u.hemisphere.to_string(),
        easting: u.easting,
        northing: u.northing,
    })
}

/// `xy` holds x0, y0, x1, y1, ...; the result holds three vertex indices
/// per triangle.
pub fn triangles(xy: &[f64]) -> Result<Vec<u32>, String> {
    if xy.len() % 2 != 0 {
        return Err("odd number of coordinates".into());
    }
    let poly = Polygon2D {
        vertices: xy.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect(),
    };
    let tris = triangulate(&poly).map_err(|e| e.to_string())?;
    Ok(tris.iter().flatten().map(|&i| i as u32).collect())
}

// ---------------------------------------------------------------------------

/// Footprints of the demo block, counter-clockwise, with heights.
const BLOCK: [(&[[f64; 2]], f64); 5] = [
    (&[[-30.0, 20.0], [-10.0, 20.0], [-10.0, 35.0], [-30.0, 35.0]], 12.0),
    (&[[0.0, 25.0], [15.0, 25.0], [15.0, 30.0], [25.0, 30.0], [25.0, 45.0], [0.0, 45.0]], 18.0),
    (&[[30.0, 5.0], [45.0, 5.0], [45.0, 20.0], [30.0, 20.0]], 9.0),
    (&[[-12.0, 55.0], [8.0, 55.0], [8.0, 70.0], [-12.0, 70.0]], 24.0),
    (&[[-45.0, -10.0], [-35.0, -10.0], [-35.0, 5.0], [-45.0, 5.0]], 6.0),
];

#[derive(Debug, Serialize)]
pub struct DemoSurface {
    pub id: u32,
    pub kind: SurfaceKind,
    pub building: Option<usize>,
    /// Top-down outline: a wall's base segment or a roof's ring.
    pub outline: Vec<[f64; 2]>,
}

pub fn demo_surfaces() -> (Vec<Surface>, Vec<DemoSurface>) {
    let mut ids = SurfaceIds::default();
    let g = 80.0;
    let mut surfaces = vec![Surface {
        surface_id: ids.allocate(),
        kind: SurfaceKind::Ground,
        vertices: vec![
            Vec3::new(-g, -g, 0.0),
            Vec3::new(g, -g, 0.0),
            Vec3::new(g, g, 0.0),
            Vec3::new(-g, g, 0.0),
        ],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        normal: Some(Vec3::new(0.0, 0.0, 1.0)),
    }];
    let mut owners = vec![None];
    for (b, (ring, h)) in BLOCK.iter().enumerate() {
        let poly = Polygon2D {
            vertices: ring.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
        };
        let walls = extrude_walls(&poly, *h, 0.0, &mut ids).expect("demo footprints are valid");
        let roof = roof_surface(&poly, *h, &mut ids).expect("demo footprints are valid");
        for s in walls.into_iter().chain([roof]) {
            surfaces.push(s);
            owners.push(Some(b));
        }
    }
    let info = surfaces
        .iter()
        .zip(owners)
        .map(|(s, building)| DemoSurface {
            id: s.surface_id,
            kind: s.kind,
            building,
            outline: match s.kind {
                SurfaceKind::Wall => s.vertices[..2].iter().map(|v| [v.x, v.y]).collect(),
                _ => s.vertices.iter().map(|v| [v.x, v.y]).collect(),
            },
        })
        .collect();
    (surfaces, info)
}

#[derive(Debug, Serialize)]
pub struct Visibility {
    pub visible: Vec<u32>,
    /// Where the four frustum edge rays meet the ground, clipped to the far
    /// plane: top-left, top-right, bottom-right, bottom-left.
    pub frustum: Vec<[f64; 2]>,
}

#[allow(clippy::too_many_arguments)]
pub fn visibility(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64, hfov: f64, far: f64) -> Result<Visibility, String> {
    let p = Projector {
        projector_id: 0,
        image_id: "demo".into(),
        pose: ProjectorPose::new(Vec3::new(x, y, z), yaw, pitch, roll),
        intrinsics: Intrinsics::new(hfov, 16.0 / 9.0, 0.1, far).map_err(|e| e.to_string())?,
        priority_timestamp: None,
    };
    let (surfaces, _) = demo_surfaces();
    let visible = visible_surfaces_in(&p, &surfaces, FanSettings { nx: 96, ny: 54 }).map_err(|e| e.to_string())?;
    let view = View::of(&p);
    let frustum = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        .iter()
        .map(|&(u, v)| {
            let r = view.ray(u, v);
            let to_ground = if r.direction.z < 0.0 { -r.origin.z / r.direction.z } else { f64::INFINITY };
            let t = to_ground.min(far / r.direction.length());
            let q = r.at(t);
            [q.x, q.y]
        })
        .collect();
    Ok(Visibility {
        visible: visible.into_iter().collect(),
        frustum,
    })
}

// ---------------------------------------------------------------------------

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo values serialize")
}

/// `{"zone", "hemisphere", "easting", "northing"}` as JSON.
#[wasm_bindgen(js_name = latlonToUtm)]
pub fn latlon_to_utm_js(lat: f64, lon: f64) -> Result<String, JsError> {
    utm(lat, lon).map(|u| json(&u)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = triangulate)]
pub fn triangulate_js(xy: Vec<f64>) -> Result<Vec<u32>, JsError> {
    triangles(&xy).map_err(|e| JsError::new(&e))
}

/// The demo block's surfaces as JSON, for drawing.
#[wasm_bindgen(js_name = demoScene)]
pub fn demo_scene_js() -> String {
    json(&demo_surfaces().1)
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = visibleSurfaces)]
pub fn visible_surfaces_js(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64, hfov: f64, far: f64) -> Result<String, JsError> {
    visibility(x, y, z, yaw, pitch, roll, hfov, far)
        .map(|v| json(&v))
        .map_err(|e| JsError::new(&e))
}
