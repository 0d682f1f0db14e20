//! Median-split bounding volume hierarchy over a [`TriangleMesh`] and
//! nearest-hit ray casting.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{Aabb, TriangleMesh};

/// Maximum triangles per leaf.
pub const MAX_LEAF_SIZE: usize = 4;
/// Hits closer than this are ignored (self-intersection guard, meters).
pub const T_MIN: f64 = 1e-6;
/// Hits whose distances differ by at most this are ties, won by the lower triangle index.
pub const TIE_EPS: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// Children are node indices.
    Inner { left: u32, right: u32 },
    /// Range into [`Bvh::order`].
    Leaf { start: u32, count: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// Flattened BVH. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    /// Triangle permutation; leaves reference contiguous ranges of it.
    pub order: Vec<u32>,
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
}

impl Hit {
    /// Whether `self` should replace `best` as the nearest hit.
    #[inline]
    pub fn beats(&self, best: &Hit) -> bool {
        self.t < best.t - TIE_EPS || (self.t <= best.t + TIE_EPS && self.triangle < best.triangle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Fails unless `direction` has unit length within 1e-9.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !((n - 1.0).abs() <= UNIT_TOL) || !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!(
                "ray direction must be unit length, got |d| = {n}"
            )));
        }
        Ok(Self { origin, direction })
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

pub fn build_bvh(mesh: &TriangleMesh) -> Bvh {
    let centroids: Vec<Point3<f64>> = (0..mesh.len()).map(|t| mesh.centroid(t)).collect();
    let mut order: Vec<u32> = (0..mesh.len() as u32).collect();
    let mut nodes = Vec::with_capacity(2 * mesh.len() / MAX_LEAF_SIZE + 1);
    build_node(mesh, &centroids, &mut order, 0, &mut nodes);
    Bvh { nodes, order }
}

fn build_node(
    mesh: &TriangleMesh,
    centroids: &[Point3<f64>],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<BvhNode>,
) -> u32 {
    let bounds = order
        .iter()
        .fold(Aabb::empty(), |b, &t| b.union(&mesh.triangle_bounds(t as usize)));
    let index = nodes.len() as u32;
    if order.len() <= MAX_LEAF_SIZE {
        nodes.push(BvhNode {
            bounds,
            kind: NodeKind::Leaf {
                start: offset as u32,
                count: order.len() as u32,
            },
        });
        return index;
    }
    let mut cbox = Aabb::empty();
    for &t in order.iter() {
        cbox.grow(&centroids[t as usize]);
    }
    let ext = cbox.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    order.sort_unstable_by(|&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    // placeholder, patched once the children exist
    nodes.push(BvhNode {
        bounds,
        kind: NodeKind::Inner { left: 0, right: 0 },
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(mesh, centroids, lo, offset, nodes);
    let right = build_node(mesh, centroids, hi, offset + mid, nodes);
    nodes[index as usize].kind = NodeKind::Inner { left, right };
    index
}

/// Two-sided Möller–Trumbore intersection. Returns `t > T_MIN` on hit.
/// Edges and vertices count as inside.
#[inline]
pub fn intersect_triangle(ray: &Ray, corners: &[Point3<f64>; 3]) -> Option<f64> {
    let [a, b, c] = corners;
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > T_MIN).then_some(t)
}

/// Slab test; returns the entry distance if the ray meets the box before `t_max`.
#[inline]
fn slab_entry(ray: &Ray, inv_dir: &Vector3<f64>, b: &Aabb, t_max: f64) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for k in 0..3 {
        if ray.direction[k] == 0.0 {
            if ray.origin[k] < b.min[k] || ray.origin[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let mut near = (b.min[k] - ray.origin[k]) * inv_dir[k];
        let mut far = (b.max[k] - ray.origin[k]) * inv_dir[k];
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

impl Bvh {
    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Nearest hit, validating the ray direction.
    pub fn ray_cast(
        &self,
        mesh: &TriangleMesh,
        origin: Point3<f64>,
        direction: Vector3<f64>,
    ) -> Result<Option<Hit>> {
        Ok(self.cast(mesh, &Ray::new(origin, direction)?))
    }

    /// Nearest hit for an already validated ray.
    pub fn cast(&self, mesh: &TriangleMesh, ray: &Ray) -> Option<Hit> {
        let inv_dir = ray.direction.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        let root = &self.nodes[0];
        if let Some(t) = slab_entry(ray, &inv_dir, &root.bounds, f64::INFINITY) {
            stack.push((0, t));
        }
        while let Some((idx, entry)) = stack.pop() {
            let limit = best.map_or(f64::INFINITY, |h| h.t + TIE_EPS);
            if entry > limit {
                continue;
            }
            match self.nodes[idx as usize].kind {
                NodeKind::Leaf { start, count } => {
                    for &tri in &self.order[start as usize..(start + count) as usize] {
                        if let Some(t) = intersect_triangle(ray, &mesh.corners(tri as usize)) {
                            let hit = Hit { t, triangle: tri };
                            if best.is_none_or(|b| hit.beats(&b)) {
                                best = Some(hit);
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let l = slab_entry(ray, &inv_dir, &self.nodes[left as usize].bounds, limit);
                    let r = slab_entry(ray, &inv_dir, &self.nodes[right as usize].bounds, limit);
                    // push the farther child first so the nearer one is visited next
                    match (l, r) {
                        (Some(tl), Some(tr)) => {
                            if tl <= tr {
                                stack.push((right, tr));
                                stack.push((left, tl));
                            } else {
                                stack.push((left, tl));
                                stack.push((right, tr));
                            }
                        }
                        (Some(tl), None) => stack.push((left, tl)),
                        (None, Some(tr)) => stack.push((right, tr)),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }

    /// Checks the structural invariants: boxes nest, leaves bound their
    /// triangles, and every triangle sits in exactly one leaf.
    pub fn validate(&self, mesh: &TriangleMesh) -> std::result::Result<(), String> {
        let mut seen = vec![0u32; mesh.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    if count == 0 || count as usize > MAX_LEAF_SIZE {
                        return Err(format!("leaf {i} holds {count} triangles"));
                    }
                    for &t in &self.order[start as usize..(start + count) as usize] {
                        if !node.bounds.contains(&mesh.triangle_bounds(t as usize)) {
                            return Err(format!("leaf {i} does not contain triangle {t}"));
                        }
                        seen[t as usize] += 1;
                    }
                }
                NodeKind::Inner { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains(&self.nodes[c as usize].bounds) {
                            return Err(format!("node {i} does not contain child {c}"));
                        }
                    }
                }
            }
        }
        match seen.iter().position(|&n| n != 1) {
            Some(t) => Err(format!("triangle {t} appears in {} leaves", seen[t])),
            None => Ok(()),
        }
    }
}
