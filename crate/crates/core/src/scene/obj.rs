//! Wavefront OBJ + MTL export.

use std::fmt::Write as _;

use crate::projection::{texture_assignment, View};

use super::SceneState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjExport {
    pub obj: String,
    pub mtl: String,
}

/// Write every surface as its own group. Surfaces with an assigned
/// projector get texture coordinates from that projector; the material file
/// points each projector material at its source photo.
pub fn export_obj(scene: &SceneState, mtl_name: &str) -> ObjExport {
    let assignment = texture_assignment(&scene.mask_table, &scene.projectors);
    let mut obj = String::new();
    let mut mtl = String::new();
    let _ = writeln!(obj, "# ave scene export, revision {}", scene.revision);
    let _ = writeln!(obj, "# right-handed, z up; metres east (x), north (y), up (z) of the scene anchor");
    if let Some(f) = &scene.frame {
        let _ = writeln!(
            obj,
            "# anchor UTM zone {}{} E {} N {}, base elevation {}",
            f.anchor.zone, f.anchor.hemisphere, f.anchor.easting, f.anchor.northing, f.base_elevation
        );
    }
    let _ = writeln!(obj, "mtllib {mtl_name}");

    let _ = writeln!(mtl, "# ave scene materials");
    let _ = writeln!(mtl, "newmtl untextured\nKd 0.8 0.8 0.8");
    for p in &scene.projectors {
        let src = scene.image(&p.image_id).map_or("", |i| i.source_path.as_str());
        let _ = writeln!(mtl, "\nnewmtl projector_{}\nKd 1 1 1\nmap_Kd {src}", p.projector_id);
    }

    let mut v_base = 1usize;
    let mut vt_base = 1usize;
    for s in scene.surfaces() {
        let _ = writeln!(obj, "g surface_{} {}", s.surface_id, kind_name(s.kind));
        for v in &s.vertices {
            let _ = writeln!(obj, "v {} {} {}", v.x, v.y, v.z);
        }
        let proj = assignment
            .get(&s.surface_id)
            .and_then(|&pid| scene.projectors.get(pid as usize));
        match proj {
            Some(p) => {
                let view = View::of(p);
                let mut clamped = 0usize;
                for v in &s.vertices {
                    let (u, vv) = match view.project(*v) {
                        Some(uv) => uv,
                        None => {
                            clamped += 1;
                            let (u, vv) = view.project_unclipped(*v).unwrap_or((0.0, 0.0));
                            (u.clamp(0.0, 1.0), vv.clamp(0.0, 1.0))
                        }
                    };
                    // OBJ puts v = 0 at the bottom of the image.
                    let _ = writeln!(obj, "vt {} {}", u, 1.0 - vv);
                }
                if clamped > 0 {
                    let _ = writeln!(obj, "# uv clamped: {clamped} vertices outside projector {} frustum", p.projector_id);
                }
                let _ = writeln!(obj, "usemtl projector_{}", p.projector_id);
                for t in &s.triangles {
                    let [a, b, c] = t.map(|i| i as usize);
                    let _ = writeln!(
                        obj,
                        "f {}/{} {}/{} {}/{}",
                        v_base + a,
                        vt_base + a,
                        v_base + b,
                        vt_base + b,
                        v_base + c,
                        vt_base + c
                    );
                }
                vt_base += s.vertices.len();
            }
            None => {
                let _ = writeln!(obj, "usemtl untextured");
                for t in &s.triangles {
                    let [a, b, c] = t.map(|i| v_base + i as usize);
                    let _ = writeln!(obj, "f {a} {b} {c}");
                }
            }
        }
        v_base += s.vertices.len();
    }
    ObjExport { obj, mtl }
}

fn kind_name(k: crate::meshgen::SurfaceKind) -> &'static str {
    use crate::meshgen::SurfaceKind::*;
    match k {
        Wall => "wall",
        Roof => "roof",
        Ground => "ground",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObjCounts {
    pub vertices: usize,
    pub texcoords: usize,
    pub faces: usize,
    pub groups: usize,
}

/// Minimal OBJ reader: counts elements and checks every face index
/// resolves. Used to validate exports.
pub fn parse_obj_counts(text: &str) -> Result<ObjCounts, String> {
    let mut c = ObjCounts::default();
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let bad = |what: &str| format!("line {}: {what}", n + 1);
        match tag {
            "v" | "vt" => {
                let nums: Vec<f64> = it
                    .map(|x| x.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<_, _>>()?;
                if tag == "v" {
                    if nums.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    c.vertices += 1;
                } else {
                    if nums.len() != 2 || nums.iter().any(|x| !(0.0..=1.0).contains(x)) {
                        return Err(bad("texture coordinate outside [0, 1]"));
                    }
                    c.texcoords += 1;
                }
            }
            "f" => {
                let refs: Vec<&str> = it.collect();
                if refs.len() < 3 {
                    return Err(bad("face needs 3 vertices"));
                }
                for r in refs {
                    let mut parts = r.split('/');
                    let vi: usize = parts.next().unwrap_or("").parse().map_err(|_| bad("bad index"))?;
                    if vi == 0 || vi > c.vertices {
                        return Err(bad("vertex index out of range"));
                    }
                    if let Some(ti) = parts.next().filter(|s| !s.is_empty()) {
                        let ti: usize = ti.parse().map_err(|_| bad("bad index"))?;
                        if ti == 0 || ti > c.texcoords {
                            return Err(bad("texcoord index out of range"));
                        }
                    }
                }
                c.faces += 1;
            }
            "g" => c.groups += 1,
            _ => {}
        }
    }
    Ok(c)
}
