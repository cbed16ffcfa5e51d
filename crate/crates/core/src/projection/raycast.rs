//! Nearest-hit ray casting against scene surfaces.

use crate::math::Vec3;
use crate::meshgen::Surface;

use super::camera::Ray;

/// Determinant threshold; also rejects back-facing triangles.
pub const MT_EPSILON: f64 = 1e-9;
/// Barycentric slack so rays through a shared edge hit at least one side.
const BARY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub surface_id: u32,
    pub t: f64,
}

impl Hit {
    /// Nearer hit wins; equal distances go to the lower surface id.
    fn better_than(&self, other: &Hit) -> bool {
        (self.t, self.surface_id) < (other.t, other.surface_id)
    }
}

fn keep_best(best: &mut Option<Hit>, h: Hit) {
    if best.is_none_or(|b| h.better_than(&b)) {
        *best = Some(h);
    }
}

/// Möller–Trumbore against a front-facing triangle (counter-clockwise as
/// seen by the ray). Returns the ray parameter of the hit.
pub fn ray_triangle(ray: &Ray, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    if det < MT_EPSILON {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(p) * inv;
    if !(-BARY_SLACK..=1.0 + BARY_SLACK).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.direction.dot(q) * inv;
    if v < -BARY_SLACK || u + v > 1.0 + BARY_SLACK {
        return None;
    }
    Some(e2.dot(q) * inv)
}

/// Nearest front-facing hit with `t ∈ [near, far]` by scanning every
/// triangle.
pub fn intersect(ray: &Ray, surfaces: &[Surface], near: f64, far: f64) -> Option<Hit> {
    let mut best = None;
    for s in surfaces {
        for tri in 0..s.triangles.len() {
            let [a, b, c] = s.triangle(tri);
            if let Some(t) = ray_triangle(ray, a, b, c) {
                if t >= near && t <= far {
                    keep_best(&mut best, Hit { surface_id: s.surface_id, t });
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    fn padded(mut self) -> Self {
        let pad = (self.max - self.min).length() * 1e-9 + 1e-9;
        self.min = self.min - Vec3::new(pad, pad, pad);
        self.max = self.max + Vec3::new(pad, pad, pad);
        self
    }

    /// Slab test returning the entry distance when the box overlaps
    /// `[near, far]` along the ray.
    fn hit(&self, o: Vec3, inv: Vec3, near: f64, far: f64) -> Option<f64> {
        let mut t0 = near;
        let mut t1 = far;
        for k in 0..3 {
            let (o, inv) = (o.axis(k), inv.axis(k));
            let mut a = (self.min.axis(k) - o) * inv;
            let mut b = (self.max.axis(k) - o) * inv;
            // 0 * inf: the ray runs inside this slab's plane.
            if a.is_nan() || b.is_nan() {
                if o < self.min.axis(k) || o > self.max.axis(k) {
                    return None;
                }
                continue;
            }
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, first: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TriRef {
    surface_id: u32,
    verts: [Vec3; 3],
}

/// Bounding-volume hierarchy over every triangle of a surface list. Answers
/// the same queries as [`intersect`], with identical tie-breaking.
#[derive(Debug, Clone)]
pub struct SceneIndex {
    nodes: Vec<Node>,
    tris: Vec<TriRef>,
}

const LEAF_SIZE: usize = 4;

impl SceneIndex {
    pub fn new<'a>(surfaces: impl IntoIterator<Item = &'a Surface>) -> Self {
        let mut tris = Vec::new();
        for s in surfaces {
            for t in 0..s.triangles.len() {
                tris.push(TriRef {
                    surface_id: s.surface_id,
                    verts: s.triangle(t),
                });
            }
        }
        let mut index = SceneIndex { nodes: Vec::new(), tris };
        if !index.tris.is_empty() {
            let n = index.tris.len();
            index.build(0, n);
        }
        index
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    fn bounds_of(&self, first: usize, count: usize) -> Aabb {
        let mut b = Aabb::empty();
        for t in &self.tris[first..first + count] {
            for v in t.verts {
                b.grow(v);
            }
        }
        b.padded()
    }

    fn build(&mut self, first: usize, count: usize) -> usize {
        let bounds = self.bounds_of(first, count);
        let slot = self.nodes.len();
        if count <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, first, count });
            return slot;
        }
        let ext = bounds.max - bounds.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let centroid = |t: &TriRef| (t.verts[0].axis(axis) + t.verts[1].axis(axis) + t.verts[2].axis(axis)) / 3.0;
        self.tris[first..first + count].sort_by(|a, b| centroid(a).total_cmp(&centroid(b)));
        self.nodes.push(Node::Leaf { bounds, first, count });
        let half = count / 2;
        let left = self.build(first, half);
        let right = self.build(first + half, count - half);
        self.nodes[slot] = Node::Inner { bounds, left, right };
        slot
    }

    pub fn intersect(&self, ray: &Ray, near: f64, far: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let o = ray.origin;
        let d = ray.direction;
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(ix) = stack.pop() {
            let node = &self.nodes[ix];
            let limit = best.map_or(far, |b| b.t);
            if node.bounds().hit(o, inv, near, limit).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { first, count, .. } => {
                    for tr in &self.tris[first..first + count] {
                        if let Some(t) = ray_triangle(ray, tr.verts[0], tr.verts[1], tr.verts[2]) {
                            if t >= near && t <= far {
                                keep_best(&mut best, Hit { surface_id: tr.surface_id, t });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    // Visit the nearer child first.
                    let tl = self.nodes[left].bounds().hit(o, inv, near, limit);
                    let tr = self.nodes[right].bounds().hit(o, inv, near, limit);
                    match (tl, tr) {
                        (Some(a), Some(b)) if a <= b => {
                            stack.push(right);
                            stack.push(left);
                        }
                        (Some(_), Some(_)) => {
                            stack.push(left);
                            stack.push(right);
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::test_support::wall_facing_south;

    fn north_ray() -> Ray {
        Ray {
            origin: Vec3::new(0.0, 0.0, 1.0),
            direction: Vec3::new(0.0, 1.0, 0.0),
        }
    }

    #[test]
    fn axis_aligned_hit() {
        let w = wall_facing_south(7, 5.0, -1.0, 1.0, 0.0, 2.0);
        let h = intersect(&north_ray(), &[w], 0.1, 500.0).unwrap();
        assert_eq!(h.surface_id, 7);
        assert!((h.t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_wall_occludes() {
        let near = wall_facing_south(1, 5.0, -1.0, 1.0, 0.0, 2.0);
        let far = wall_facing_south(2, 9.0, -1.0, 1.0, 0.0, 2.0);
        let surfaces = [far, near];
        assert_eq!(intersect(&north_ray(), &surfaces, 0.1, 500.0).unwrap().surface_id, 1);
        let idx = SceneIndex::new(&surfaces);
        assert_eq!(idx.intersect(&north_ray(), 0.1, 500.0).unwrap().surface_id, 1);
    }

    #[test]
    fn back_faces_and_range_are_ignored() {
        let w = wall_facing_south(1, 5.0, -1.0, 1.0, 0.0, 2.0);
        let back = Ray {
            origin: Vec3::new(0.0, 10.0, 1.0),
            direction: Vec3::new(0.0, -1.0, 0.0),
        };
        assert!(intersect(&back, std::slice::from_ref(&w), 0.1, 500.0).is_none());
        assert!(intersect(&north_ray(), std::slice::from_ref(&w), 0.1, 4.0).is_none());
        assert!(intersect(&north_ray(), std::slice::from_ref(&w), 6.0, 9.0).is_none());
    }

    #[test]
    fn shared_diagonal_is_watertight() {
        let w = wall_facing_south(3, 5.0, -1.0, 1.0, -1.0, 1.0);
        // Hits exactly on the quad's diagonal from (-1,-1) to (1,1).
        for k in -9..=9 {
            let s = k as f64 / 10.0;
            let r = Ray {
                origin: Vec3::new(s, 0.0, s),
                direction: Vec3::new(0.0, 1.0, 0.0),
            };
            assert!(intersect(&r, std::slice::from_ref(&w), 0.1, 500.0).is_some(), "{s}");
        }
    }

    #[test]
    fn empty_index() {
        let idx = SceneIndex::new(&[]);
        assert!(idx.is_empty());
        assert!(idx.intersect(&north_ray(), 0.1, 500.0).is_none());
    }
}
