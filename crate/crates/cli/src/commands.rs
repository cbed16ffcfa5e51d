//! One function per subcommand. Each reads the scene file, applies its
//! change and writes the file back.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ave_core::detection::parse_detections;
use ave_core::ingest::{parse_overpass, parse_terrain, GridCrs, ImageRecord, Sidecar, TerrainGrid};
use ave_core::pipeline::{build_geometry, ingest_images, reproject, AnchorChoice, ImageInput};
use ave_core::scene::{export_obj, parse_obj_counts, Mutation, SceneState};
use ave_core::GeoCoord;

use crate::config::{Config, TerrainCrs};
use crate::overpass::{self, BBox};

/// Exit status for a run where some inputs were rejected.
pub const EXIT_PARTIAL: u8 = 2;

pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

pub fn load_scene(path: &Path, cfg: &Config) -> Result<SceneState> {
    match fs::read(path) {
        Ok(bytes) => SceneState::load(&bytes).with_context(|| format!("{}", path.display())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SceneState::new(cfg.settings)),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// Write through a temporary file so a crash never leaves half a scene.
pub fn save_scene(path: &Path, scene: &SceneState) -> Result<()> {
    let bytes = scene.save()?;
    write_atomic(path, &bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn warn_all(io: &mut Io, warnings: &[String]) -> Result<()> {
    for w in warnings {
        writeln!(io.err, "warning: {w}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn ingest(cfg: &Config, scene_path: &Path, images: &[PathBuf], sidecar_dir: Option<&Path>, io: &mut Io) -> Result<u8> {
    let scene = load_scene(scene_path, cfg)?;
    let mut failures: Vec<(String, String)> = Vec::new();
    let mut inputs = Vec::new();
    let mut seen = BTreeSet::new();
    let mut unchanged = 0;

    for path in images {
        let shown = path.display().to_string();
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            failures.push((shown, "file name is not valid UTF-8".into()));
            continue;
        };
        if !seen.insert(id.clone()) {
            failures.push((shown, format!("image id {id:?} appears twice in this batch")));
            continue;
        }
        let jpeg = match fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                failures.push((shown, e.to_string()));
                continue;
            }
        };
        let sidecar = match sidecar_dir.map(|d| d.join(format!("{id}.json"))) {
            Some(p) if p.exists() => match fs::read(&p).map_err(|e| e.to_string()).and_then(|b| {
                Sidecar::from_json(&b).map_err(|e| e.to_string())
            }) {
                Ok(s) => Some(s),
                Err(e) => {
                    failures.push((shown, format!("{}: {e}", p.display())));
                    continue;
                }
            },
            _ => None,
        };
        if let Some(existing) = scene.image(&id) {
            // Re-ingesting the same file is a no-op, not an error.
            match ImageRecord::assemble(&id, &shown, Some(&jpeg), sidecar.as_ref()) {
                Ok(r) if &r == existing => unchanged += 1,
                Ok(_) => failures.push((shown, format!("image id {id:?} is already in the scene with other metadata"))),
                Err(e) => failures.push((shown, e.to_string())),
            }
            continue;
        }
        inputs.push(ImageInput {
            image_id: id,
            source_path: shown,
            jpeg: Some(jpeg),
            sidecar,
        });
    }

    let outcome = ingest_images(&scene, &inputs)?;
    failures.extend(outcome.failures);
    warn_all(io, &outcome.warnings)?;
    save_scene(scene_path, &outcome.scene)?;

    for id in &outcome.added {
        let p = outcome.scene.projector_for(id).expect("ingested images get a projector");
        let pos = p.pose.position;
        writeln!(
            io.out,
            "{id}: projector {} at ({:.2}, {:.2}, {:.2}) yaw {:.1}",
            p.projector_id, pos.x, pos.y, pos.z, p.pose.yaw
        )?;
    }
    writeln!(
        io.out,
        "{} added, {unchanged} unchanged, {} failed; {} images in scene",
        outcome.added.len(),
        failures.len(),
        outcome.scene.images.len()
    )?;
    for (path, why) in &failures {
        writeln!(io.err, "error: {path}: {why}")?;
    }
    Ok(if failures.is_empty() { 0 } else { EXIT_PARTIAL })
}

// ---------------------------------------------------------------------------

pub enum OsmSource<'a> {
    File(&'a Path),
    BBox(BBox),
}

pub fn parse_anchor(s: &str) -> Result<AnchorChoice, String> {
    if s == "auto" {
        return Ok(AnchorChoice::Auto);
    }
    let (lat, lon) = s.split_once(',').ok_or("expected `auto` or LAT,LON")?;
    let lat: f64 = lat.trim().parse().map_err(|_| format!("{lat:?} is not a number"))?;
    let lon: f64 = lon.trim().parse().map_err(|_| format!("{lon:?} is not a number"))?;
    GeoCoord::new(lat, lon).map(AnchorChoice::At).map_err(|e| e.to_string())
}

/// Grids whose lower-left corner and spacing only make sense in degrees are
/// taken as geographic.
fn guess_crs(t: &TerrainGrid) -> GridCrs {
    let fits_degrees = t.x_sw.abs() <= 180.0 && t.y_sw.abs() <= 90.0 && t.cellsize < 1.0;
    if fits_degrees {
        GridCrs::Geographic
    } else {
        GridCrs::Utm
    }
}

pub fn build(
    cfg: &Config,
    scene_path: &Path,
    osm: OsmSource,
    terrain: Option<&Path>,
    anchor: AnchorChoice,
    io: &mut Io,
) -> Result<u8> {
    let scene = load_scene(scene_path, cfg)?;
    let doc = match osm {
        OsmSource::File(p) => fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        OsmSource::BBox(b) => overpass::fetch(&cfg.overpass_url, &b, cfg.overpass_timeout)?,
    };
    let parsed = parse_overpass(&doc)?;
    let grid = match terrain {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut g = parse_terrain(&text).with_context(|| format!("{}", p.display()))?;
            g.crs = match cfg.terrain_crs {
                TerrainCrs::Auto => guess_crs(&g),
                TerrainCrs::Utm => GridCrs::Utm,
                TerrainCrs::Geographic => GridCrs::Geographic,
            };
            Some(g)
        }
        None => None,
    };
    if parsed.footprints.is_empty() && scene.frame.is_none() && matches!(anchor, AnchorChoice::Auto) {
        bail!("no buildings in the OSM data and no anchor given; pass --anchor LAT,LON");
    }
    let n = parsed.footprints.len();
    let outcome = build_geometry(&scene, parsed.footprints, grid, cfg.heights, anchor)?;
    warn_all(io, &parsed.warnings)?;
    warn_all(io, &outcome.warnings)?;
    let s = &outcome.scene;
    save_scene(scene_path, s)?;
    if let Some(f) = &s.frame {
        writeln!(
            io.out,
            "anchor {}{} E{:.3} N{:.3}, base {:.2} m",
            f.anchor.zone, f.anchor.hemisphere, f.anchor.easting, f.anchor.northing, f.base_elevation
        )?;
    }
    writeln!(
        io.out,
        "{} of {n} buildings meshed, terrain {}, {} surfaces",
        s.buildings.len(),
        if s.terrain.is_some() { "yes" } else { "no" },
        s.surface_count()
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------

pub fn project(cfg: &Config, scene_path: &Path, io: &mut Io) -> Result<u8> {
    let scene = load_scene(scene_path, cfg)?;
    let applied = reproject(&scene, cfg.settings)?;
    warn_all(io, &applied.warnings)?;
    let s = &applied.scene;
    save_scene(scene_path, s)?;
    let textured = s.mask_table.masks.values().filter(|m| !m.is_empty()).count();
    writeln!(
        io.out,
        "{} projectors, {} surfaces ({textured} textured), pool size {}",
        s.projectors.len(),
        s.surface_count(),
        s.mask_table.pools.len()
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------

pub fn place(cfg: &Config, scene_path: &Path, detections: &Path, io: &mut Io) -> Result<u8> {
    let scene = load_scene(scene_path, cfg)?;
    let doc = fs::read(detections).with_context(|| format!("reading {}", detections.display()))?;
    let parsed = parse_detections(&doc, &scene.images).with_context(|| format!("{}", detections.display()))?;
    warn_all(io, &parsed.warnings)?;
    let total = parsed.detections.len();
    let fresh: Vec<_> = parsed
        .detections
        .into_iter()
        .filter(|d| !scene.detections.contains(d))
        .collect();
    let added = fresh.len();
    let first_new = scene.detections.len();
    let s = if fresh.is_empty() {
        scene
    } else {
        let a = scene.apply(&Mutation::AddDetections { detections: fresh })?;
        warn_all(io, &a.warnings)?;
        a.scene
    };
    save_scene(scene_path, &s)?;
    let placed = s
        .placements
        .iter()
        .filter(|p| p.placement_id as usize >= first_new)
        .count();
    writeln!(
        io.out,
        "{added} new detections ({} already present), {placed} placed, {} unplaceable; {} trajectories",
        total - added,
        added - placed,
        s.trajectories.len()
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------

pub fn export(cfg: &Config, scene_path: &Path, obj_path: &Path, io: &mut Io) -> Result<u8> {
    let scene = load_scene(scene_path, cfg)?;
    let mtl_path = obj_path.with_extension("mtl");
    let mtl_name = mtl_path
        .file_name()
        .and_then(|n| n.to_str())
        .context("output file name is not valid UTF-8")?;
    let e = export_obj(&scene, mtl_name);

    let counts = parse_obj_counts(&e.obj).map_err(|m| anyhow::anyhow!("exported OBJ does not re-parse: {m}"))?;
    let vertices: usize = scene.surfaces().map(|s| s.vertices.len()).sum();
    let faces: usize = scene.surfaces().map(|s| s.triangles.len()).sum();
    if counts.vertices != vertices || counts.faces != faces || counts.groups != scene.surface_count() {
        bail!(
            "exported OBJ has {}/{}/{} vertices/faces/groups, scene has {vertices}/{faces}/{}",
            counts.vertices,
            counts.faces,
            counts.groups,
            scene.surface_count()
        );
    }
    if let Some(dir) = obj_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(obj_path, e.obj.as_bytes())?;
    write_atomic(&mtl_path, e.mtl.as_bytes())?;
    writeln!(
        io.out,
        "{}: {vertices} vertices, {faces} faces, {} groups; {}",
        obj_path.display(),
        counts.groups,
        mtl_path.display()
    )?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        assert_eq!(parse_anchor("auto").unwrap(), AnchorChoice::Auto);
        assert_eq!(
            parse_anchor("51.5, -0.12").unwrap(),
            AnchorChoice::At(GeoCoord::new(51.5, -0.12).unwrap())
        );
        assert!(parse_anchor("51.5").is_err());
        assert!(parse_anchor("95,0").is_err());
    }

    #[test]
    fn crs_guess() {
        let mut g = parse_terrain("ncols 2\nnrows 2\nxllcorner -0.2\nyllcorner 51.4\ncellsize 0.001\n1 2\n3 4\n").unwrap();
        assert_eq!(guess_crs(&g), GridCrs::Geographic);
        g.x_sw = 699_000.0;
        g.y_sw = 5_710_000.0;
        g.cellsize = 10.0;
        assert_eq!(guess_crs(&g), GridCrs::Utm);
    }
}
