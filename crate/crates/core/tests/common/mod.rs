//! Oracles, generators and fixture loaders shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::PathBuf;
use std::time::Duration;

use ave_core::ingest::{parse_overpass, parse_terrain, HeightRule, Sidecar};
use ave_core::meshgen::{Surface, SurfaceKind};
use ave_core::pipeline::{build_geometry, ingest_images, place_detections, AnchorChoice, ImageInput};
use ave_core::projection::{Intrinsics, Projector, ProjectorPose, Ray};
use ave_core::protocol::{ClientSession, ServerCore};
use ave_core::scene::{export_obj, SceneSettings, SceneState};
use ave_core::{Vec2, Vec3};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

// ---------------------------------------------------------------------------
// Polygons

/// Star-shaped polygon around the origin: sorted random angles, random radii.
pub fn random_star_polygon(rng: &mut impl Rng, n: usize) -> Vec<Vec2> {
    loop {
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let gaps_ok = angles.windows(2).all(|w| w[1] - w[0] > 1e-2)
            && angles[0] + std::f64::consts::TAU - angles[n - 1] > 1e-2;
        if !gaps_ok {
            continue;
        }
        let pts: Vec<Vec2> = angles
            .iter()
            .map(|&a| {
                let r = rng.random_range(2.0..50.0);
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        if is_simple_oracle(&pts) {
            return pts;
        }
    }
}

/// Random points untangled by 2-opt moves until no two edges cross. The
/// result is simple but generally far from star-shaped.
pub fn random_two_opt_polygon(rng: &mut impl Rng, n: usize) -> Vec<Vec2> {
    'outer: loop {
        let mut pts: Vec<Vec2> = (0..n)
            .map(|_| Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        for _ in 0..10_000 {
            let mut changed = false;
            for i in 0..n {
                for j in i + 2..n {
                    if i == 0 && j == n - 1 {
                        continue;
                    }
                    let (a, b) = (pts[i], pts[i + 1]);
                    let (c, d) = (pts[j], pts[(j + 1) % n]);
                    if proper_cross(a, b, c, d) {
                        pts[i + 1..=j].reverse();
                        changed = true;
                    }
                }
            }
            if !changed {
                if is_simple_oracle(&pts) && min_vertex_edge_gap(&pts) > 0.05 {
                    return pts;
                }
                continue 'outer;
            }
        }
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn proper_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// O(n²) check that no two non-adjacent edges cross or touch.
pub fn is_simple_oracle(p: &[Vec2]) -> bool {
    let n = p.len();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = (p[i], p[(i + 1) % n]);
            let (c, d) = (p[j], p[(j + 1) % n]);
            let (o1, o2) = (orient(a, b, c), orient(a, b, d));
            let (o3, o4) = (orient(c, d, a), orient(c, d, b));
            if o1 * o2 <= 0.0 && o3 * o4 <= 0.0 {
                return false;
            }
        }
    }
    true
}

fn seg_point_dist(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (a + ab * t - p).length()
}

fn min_vertex_edge_gap(p: &[Vec2]) -> f64 {
    let n = p.len();
    let mut m = f64::INFINITY;
    for i in 0..n {
        for (k, &q) in p.iter().enumerate() {
            if k == i || k == (i + 1) % n {
                continue;
            }
            m = m.min(seg_point_dist(p[i], p[(i + 1) % n], q));
        }
    }
    m
}

pub fn shoelace(p: &[Vec2]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].x * p[(i + 1) % n].y - p[(i + 1) % n].x * p[i].y).sum::<f64>() / 2.0
}

/// Separating-axis test on two triangles' edge normals. Triangles sharing
/// only an edge or vertex do not count as overlapping: the interiors must
/// intersect by more than `tol`.
pub fn triangles_overlap(a: [Vec2; 3], b: [Vec2; 3], tol: f64) -> bool {
    for tri in [a, b] {
        for i in 0..3 {
            let e = tri[(i + 1) % 3] - tri[i];
            let axis = Vec2::new(-e.y, e.x);
            let len = axis.length();
            if len == 0.0 {
                continue;
            }
            let axis = axis * (1.0 / len);
            let span = |t: [Vec2; 3]| {
                let d = t.map(|p| p.dot(axis));
                (d[0].min(d[1]).min(d[2]), d[0].max(d[1]).max(d[2]))
            };
            let (amin, amax) = span(a);
            let (bmin, bmax) = span(b);
            if amax <= bmin + tol || bmax <= amin + tol {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Ray casting

/// Brute-force nearest front-facing hit: plane intersection followed by an
/// edge-function inside test. Shares no code with the library's
/// Möller–Trumbore path.
pub fn brute_force_hit(ray: &Ray, surfaces: &[Surface], near: f64, far: f64) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for s in surfaces {
        for t in 0..s.triangles.len() {
            let [a, b, c] = s.triangle(t);
            let n = (b - a).cross(c - a);
            let denom = n.dot(ray.direction);
            // Back faces and grazing rays do not count.
            if denom >= -1e-12 * n.length() {
                continue;
            }
            let dist = n.dot(a - ray.origin) / denom;
            if !(near..=far).contains(&dist) {
                continue;
            }
            let p = ray.origin + ray.direction * dist;
            let tol = -1e-9 * n.length();
            let inside = (b - a).cross(p - a).dot(n) >= tol
                && (c - b).cross(p - b).dot(n) >= tol
                && (a - c).cross(p - c).dot(n) >= tol;
            if !inside {
                continue;
            }
            if best.is_none_or(|(bid, bt)| dist < bt || (dist == bt && s.surface_id < bid)) {
                best = Some((s.surface_id, dist));
            }
        }
    }
    best
}

fn quad(id: u32, kind: SurfaceKind, v: [Vec3; 4]) -> Surface {
    let n = (v[1] - v[0]).cross(v[2] - v[0]);
    Surface {
        surface_id: id,
        kind,
        vertices: v.to_vec(),
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        normal: n.normalized(),
    }
}

/// Axis-aligned box: four outward walls and a roof.
pub fn box_surfaces(next_id: &mut u32, min: Vec2, max: Vec2, height: f64) -> Vec<Surface> {
    let corners = [
        Vec2::new(min.x, min.y),
        Vec2::new(max.x, min.y),
        Vec2::new(max.x, max.y),
        Vec2::new(min.x, max.y),
    ];
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        out.push(quad(
            *next_id,
            SurfaceKind::Wall,
            [a.extend(0.0), b.extend(0.0), b.extend(height), a.extend(height)],
        ));
        *next_id += 1;
    }
    out.push(quad(*next_id, SurfaceKind::Roof, corners.map(|c| c.extend(height))));
    *next_id += 1;
    out
}

/// A ground sheet plus a handful of random boxes.
pub fn random_scene(rng: &mut impl Rng) -> Vec<Surface> {
    let mut id = 0;
    let g = 150.0;
    let mut surfaces = vec![quad(
        id,
        SurfaceKind::Ground,
        [
            Vec3::new(-g, -g, 0.0),
            Vec3::new(g, -g, 0.0),
            Vec3::new(g, g, 0.0),
            Vec3::new(-g, g, 0.0),
        ],
    )];
    id += 1;
    for _ in 0..rng.random_range(2..=8) {
        let c = Vec2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let half = Vec2::new(rng.random_range(2.0..12.0), rng.random_range(2.0..12.0));
        let h = rng.random_range(3.0..30.0);
        surfaces.extend(box_surfaces(&mut id, c - half, c + half, h));
    }
    surfaces
}

pub fn random_pose(rng: &mut impl Rng) -> ProjectorPose {
    ProjectorPose::new(
        Vec3::new(
            rng.random_range(-80.0..80.0),
            rng.random_range(-80.0..80.0),
            rng.random_range(1.0..40.0),
        ),
        rng.random_range(0.0..360.0),
        rng.random_range(-45.0..15.0),
        rng.random_range(-15.0..15.0),
    )
}

pub fn projector(id: u32, pose: ProjectorPose, hfov: f64, aspect: f64) -> Projector {
    Projector {
        projector_id: id,
        image_id: format!("img{id}"),
        pose,
        intrinsics: Intrinsics::new(hfov, aspect, 0.1, 500.0).unwrap(),
        priority_timestamp: None,
    }
}

/// Camera-to-world rotation built from elementary rotation matrices rather
/// than the library's basis vectors. Camera axes: x right, y forward, z up.
pub fn rotation(pose: &ProjectorPose) -> [[f64; 3]; 3] {
    let (y, p, r) = (pose.yaw.to_radians(), pose.pitch.to_radians(), pose.roll.to_radians());
    // Heading is clockwise from north, i.e. a rotation by −yaw about z.
    let rz = [[y.cos(), y.sin(), 0.0], [-y.sin(), y.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, p.cos(), -p.sin()], [0.0, p.sin(), p.cos()]];
    // Clockwise seen from behind (looking along +y) is a rotation about +y.
    let ry = [[r.cos(), 0.0, r.sin()], [0.0, 1.0, 0.0], [-r.sin(), 0.0, r.cos()]];
    matmul(matmul(rz, rx), ry)
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub fn rotate(m: &[[f64; 3]; 3], v: [f64; 3]) -> Vec3 {
    Vec3::new(
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    )
}

/// Unnormalised world direction through image coordinate `(u, v)` (top-left
/// origin) for the given field of view and aspect.
pub fn oracle_direction(pose: &ProjectorPose, hfov: f64, aspect: f64, u: f64, v: f64) -> Vec3 {
    let th = (hfov.to_radians() / 2.0).tan();
    let tv = th / aspect;
    rotate(&rotation(pose), [(2.0 * u - 1.0) * th, 1.0, (1.0 - 2.0 * v) * tv])
}

/// Closed-form intersection of the line `o + s·d` with z = 0.
pub fn ground_point(o: Vec3, d: Vec3) -> Option<Vec3> {
    if d.z >= 0.0 {
        return None;
    }
    let s = -o.z / d.z;
    Some(Vec3::new(o.x + s * d.x, o.y + s * d.y, 0.0))
}

// ---------------------------------------------------------------------------
// End-to-end fixture

pub struct E2eOutput {
    pub scene: SceneState,
    pub scene_bytes: Vec<u8>,
    pub obj: String,
    pub mtl: String,
    pub warnings: Vec<String>,
}

/// Ingest the two sidecar-tagged photos, build the three OSM buildings on
/// the terrain grid, and place the three detections.
pub fn run_e2e() -> E2eOutput {
    let mut warnings = Vec::new();
    let inputs: Vec<ImageInput> = ["img_a", "img_b"]
        .iter()
        .map(|name| ImageInput {
            image_id: name.to_string(),
            source_path: format!("{name}.jpg"),
            jpeg: Some(read_fixture(&format!("e2e/{name}.jpg"))),
            sidecar: Some(Sidecar::from_json(&read_fixture(&format!("e2e/{name}.json"))).unwrap()),
        })
        .collect();
    let osm = parse_overpass(&read_fixture("e2e/osm.json")).unwrap();
    warnings.extend(osm.warnings);
    let terrain = parse_terrain(&String::from_utf8(read_fixture("e2e/terrain.asc")).unwrap()).unwrap();

    let empty = SceneState::new(SceneSettings::default());
    let built = build_geometry(&empty, osm.footprints, Some(terrain), HeightRule::default(), AnchorChoice::Auto).unwrap();
    warnings.extend(built.warnings);
    let ingested = ingest_images(&built.scene, &inputs).unwrap();
    assert!(ingested.failures.is_empty(), "{:?}", ingested.failures);
    warnings.extend(ingested.warnings);
    let placed = place_detections(&ingested.scene, &read_fixture("e2e/detections.json")).unwrap();
    warnings.extend(placed.warnings);

    let scene = placed.scene;
    let scene_bytes = scene.save().unwrap();
    let export = export_obj(&scene, "scene.mtl");
    E2eOutput {
        scene,
        scene_bytes,
        obj: export.obj,
        mtl: export.mtl,
        warnings,
    }
}

// ---------------------------------------------------------------------------
// Lossy datagram channel

#[derive(Debug, Clone, Copy)]
pub struct ChannelParams {
    pub loss: f64,
    pub reorder: f64,
    pub duplicate: f64,
}

pub const HOSTILE: ChannelParams = ChannelParams {
    loss: 0.2,
    reorder: 0.2,
    duplicate: 0.1,
};

#[derive(Debug)]
pub struct LossyReport {
    pub requests: usize,
    pub acked: usize,
    pub server_revision: u64,
    pub start_revision: u64,
    /// Per client: revisions its mirror moved through.
    pub observed: Vec<Vec<u64>>,
    /// Per client: mirror saved bytes equal the server's.
    pub mirrors_match: Vec<bool>,
    pub sim_time: Duration,
    pub settled: bool,
}

/// Peer 0 is the server, clients are 1..=n.
struct Net<R> {
    rng: R,
    params: ChannelParams,
    queue: BinaryHeap<Reverse<(Duration, u64, usize, Vec<u8>)>>,
    seq: u64,
}

impl<R: Rng> Net<R> {
    fn send(&mut self, to: usize, bytes: Vec<u8>, now: Duration) {
        if self.rng.random_bool(self.params.loss) {
            return;
        }
        let copies = if self.rng.random_bool(self.params.duplicate) { 2 } else { 1 };
        for _ in 0..copies {
            let mut delay = Duration::from_millis(5);
            if self.rng.random_bool(self.params.reorder) {
                delay += Duration::from_millis(self.rng.random_range(1..150));
            }
            self.seq += 1;
            self.queue.push(Reverse((now + delay, self.seq, to, bytes.clone())));
        }
    }
}

/// Two clients issue `per_client` pose updates each over a hostile channel.
/// Every request is retried until answered; the run ends when every client
/// has its answers and a mirror at the server's revision.
pub fn lossy_channel(seed: u64, scene: SceneState, per_client: usize, params: ChannelParams) -> LossyReport {
    use rand::SeedableRng;
    let clients_n = 2;
    let mut net = Net {
        rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        params,
        queue: BinaryHeap::new(),
        seq: 0,
    };
    let mut pose_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let n_projectors = scene.projectors.len() as u32;
    let start_revision = scene.revision;
    let mut server: ServerCore<usize> = ServerCore::new(scene);
    let mut clients: Vec<ClientSession> = (0..clients_n).map(|i| ClientSession::starting_at(1 + i as u32 * 1_000_000)).collect();
    let mut sent = vec![0usize; clients_n];
    let mut in_flight: Vec<Option<u32>> = vec![None; clients_n];
    let mut acked = 0;
    let tick = Duration::from_millis(5);
    let limit = Duration::from_secs(3_600);
    let mut now = Duration::ZERO;

    for c in clients.iter_mut() {
        c.hello(now);
        c.get_scene(now);
    }
    let settled = loop {
        // Start the next request once the previous one is answered.
        for (i, c) in clients.iter_mut().enumerate() {
            if in_flight[i].is_none() && sent[i] < per_client {
                let pose = random_pose(&mut pose_rng);
                let pid = pose_rng.random_range(0..n_projectors);
                in_flight[i] = Some(c.set_pose(pid, pose, now).unwrap());
                sent[i] += 1;
            }
            c.poll(now);
            for d in c.drain_outbox() {
                net.send(0, d, now);
            }
        }
        while net.queue.peek().is_some_and(|Reverse((t, ..))| *t <= now) {
            let Reverse((_, _, to, bytes)) = net.queue.pop().unwrap();
            if to == 0 {
                // Which client sent it is carried out of band by the test
                // harness: the payload's msg_id range identifies it.
                let from = client_of(&bytes);
                let step = server.handle_datagram(&from, &bytes, now);
                for out in step.outbound {
                    for d in out.message.to_datagrams().unwrap() {
                        net.send(out.to, d, now);
                    }
                }
            } else {
                let events = clients[to - 1].handle_datagram(&bytes, now);
                for e in events {
                    match e {
                        ave_core::protocol::ClientEvent::Acked { msg_id, .. }
                        | ave_core::protocol::ClientEvent::Rejected { msg_id, .. } => {
                            if in_flight[to - 1] == Some(msg_id) {
                                in_flight[to - 1] = None;
                                acked += 1;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        let done = (0..clients_n).all(|i| sent[i] == per_client && in_flight[i].is_none())
            && clients
                .iter()
                .all(|c| c.is_settled() && c.mirror().is_some_and(|m| m.revision == server.scene().revision));
        if done {
            break true;
        }
        if now > limit {
            break false;
        }
        now += tick;
    };
    let server_bytes = server.scene().save().unwrap();
    LossyReport {
        requests: sent.iter().sum(),
        acked,
        server_revision: server.scene().revision,
        start_revision,
        observed: clients.iter().map(|c| c.observed_revisions().to_vec()).collect(),
        mirrors_match: clients
            .iter()
            .map(|c| c.mirror().is_some_and(|m| m.save().unwrap() == server_bytes))
            .collect(),
        sim_time: now,
        settled,
    }
}

/// Client `i` numbers its requests from `1 + i·10⁶`; server replies never
/// reach this function.
fn client_of(datagram: &[u8]) -> usize {
    let id = u32::from_be_bytes([datagram[4], datagram[5], datagram[6], datagram[7]]);
    1 + (id / 1_000_000) as usize
}

/// Small scene for the protocol tests: one building and two projectors.
pub fn protocol_scene() -> SceneState {
    let out = run_e2e();
    out.scene
}

pub fn set_of(ids: &[u32]) -> BTreeSet<u32> {
    ids.iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Triangulation checks

/// Runs the library triangulation on a ring and checks the three invariants:
/// n − 2 triangles, conserved area, no two triangles overlapping.
pub fn check_triangulation(pts: &[Vec2]) -> Result<(), String> {
    use ave_core::meshgen::{triangulate, Polygon2D};
    let fp = Polygon2D { vertices: pts.to_vec() };
    let tris = triangulate(&fp).map_err(|e| format!("triangulate: {e}"))?;
    let n = pts.len();
    if tris.len() != n - 2 {
        return Err(format!("{} triangles for {n} vertices", tris.len()));
    }
    let want = shoelace(pts).abs();
    let mut got = 0.0;
    let mut flat = Vec::with_capacity(tris.len());
    for &[a, b, c] in &tris {
        let t = [pts[a], pts[b], pts[c]];
        let signed = shoelace(&t);
        if signed < 0.0 {
            return Err(format!("clockwise triangle {:?}", [a, b, c]));
        }
        got += signed;
        flat.push(t);
    }
    if (got - want).abs() > 1e-9 * want {
        return Err(format!("area {got} vs {want}"));
    }
    let scale = pts.iter().fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            if triangles_overlap(flat[i], flat[j], 1e-9 * scale) {
                return Err(format!("triangles {i} and {j} overlap"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mask and occlusion fixtures

/// Quad in the plane y = `y`, facing −y.
pub fn south_wall(id: u32, y: f64, x0: f64, x1: f64, z0: f64, z1: f64) -> Surface {
    quad(
        id,
        SurfaceKind::Wall,
        [
            Vec3::new(x0, y, z0),
            Vec3::new(x1, y, z0),
            Vec3::new(x1, y, z1),
            Vec3::new(x0, y, z1),
        ],
    )
}

pub struct MaskCase {
    pub surface_id: u32,
    pub members: Vec<u32>,
    pub value: u128,
    pub pool: usize,
}

/// Six 6 m walls in a row at y = 50 and three projectors at y = 0 looking
/// north. Frustum half-widths at the wall line are 50·tan(hfov/2):
/// P0 at x = 20 covers x ∈ [0, 40], P1 at x = 35 covers [20, 50],
/// P2 at x = 20 covers [10, 30].
pub fn mask_fixture() -> (Vec<Projector>, Vec<Surface>, Vec<MaskCase>) {
    let fov = |tan_half: f64| 2.0 * tan_half.atan().to_degrees();
    let cam = |id: u32, x: f64, tan: f64| {
        projector(id, ProjectorPose::new(Vec3::new(x, 0.0, 2.0), 0.0, 0.0, 0.0), fov(tan), 1.0)
    };
    let projectors = vec![cam(0, 20.0, 0.4), cam(1, 35.0, 0.3), cam(2, 20.0, 0.2)];
    // (wall centre x, surface id) — ids deliberately out of spatial order.
    let layout = [(5.0, 3), (15.0, 0), (25.0, 5), (35.0, 1), (45.0, 4), (100.0, 2)];
    let surfaces = layout
        .iter()
        .map(|&(cx, id)| south_wall(id, 50.0, cx - 3.0, cx + 3.0, 0.0, 4.0))
        .collect();
    // Hand enumeration: which frustum spans contain each wall, the bitset
    // value Σ 2^k, and the rank of that value among the six distinct values
    // {0, 1, 2, 3, 5, 7}.
    let case = |surface_id, members: &[u32], value, pool| MaskCase {
        surface_id,
        members: members.to_vec(),
        value,
        pool,
    };
    let expected = vec![
        case(3, &[0], 1, 1),
        case(0, &[0, 2], 5, 4),
        case(5, &[0, 1, 2], 7, 5),
        case(1, &[0, 1], 3, 3),
        case(4, &[1], 2, 2),
        case(2, &[], 0, 0),
    ];
    (projectors, surfaces, expected)
}

/// A 40 m × 30 m wall 20 m ahead completely hides a 20 m × 10 m wall 60 m
/// ahead from a projector at head height.
pub fn occlusion_fixture() -> (Projector, Vec<Surface>, u32, u32) {
    let near = south_wall(7, 20.0, -20.0, 20.0, 0.0, 30.0);
    let far = south_wall(3, 60.0, -10.0, 10.0, 0.0, 10.0);
    let p = projector(0, ProjectorPose::new(Vec3::new(0.0, 0.0, 2.0), 0.0, 0.0, 0.0), 60.0, 16.0 / 9.0);
    (p, vec![far, near], 7, 3)
}

/// Surfaces hit first by at least one ray of the fan, computed by brute
/// force from independently generated ray directions.
pub fn brute_force_visible(p: &Projector, surfaces: &[Surface], nx: usize, ny: usize) -> BTreeSet<u32> {
    let mut seen = BTreeSet::new();
    for j in 0..ny {
        let v = j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let u = i as f64 / (nx - 1) as f64;
            let d = oracle_direction(&p.pose, p.intrinsics.hfov, p.intrinsics.aspect, u, v);
            let ray = Ray {
                origin: p.pose.position,
                direction: d * (1.0 / d.length()),
            };
            if let Some((id, _)) = brute_force_hit(&ray, surfaces, p.intrinsics.near, p.intrinsics.far) {
                seen.insert(id);
            }
        }
    }
    seen
}

// ---------------------------------------------------------------------------
// Framing

/// Encode `body`, deliver its datagrams shuffled with some repeated, and
/// return what the reassembler produced.
pub fn shuffled_round_trip(rng: &mut impl Rng, msg_id: u32, msg_type: u8, body: &[u8]) -> Vec<ave_core::protocol::Message> {
    use ave_core::protocol::{Message, Reassembler, Received};
    use rand::seq::SliceRandom;
    let mut datagrams = Message {
        msg_id,
        msg_type,
        body: body.to_vec(),
    }
    .to_datagrams()
    .unwrap();
    let extra: Vec<Vec<u8>> = datagrams.iter().filter(|_| rng.random_bool(0.1)).cloned().collect();
    datagrams.extend(extra);
    datagrams.shuffle(rng);
    let mut r = Reassembler::default();
    let mut out = Vec::new();
    for d in &datagrams {
        if let Received::Complete(m) = r.push_datagram(d, Duration::ZERO) {
            out.push(m);
        }
    }
    out
}
