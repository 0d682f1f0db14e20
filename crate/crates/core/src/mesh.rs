//! Triangle meshes: OBJ loading and a procedural terrain generator.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && other.max[k] <= self.max[k])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }
}

/// Indexed triangle mesh in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    bounds: Aabb,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("mesh has non-finite vertices"));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= vertices.len()) {
                return Err(Error::invalid(format!(
                    "triangle {i} references a vertex out of range ({t:?}, {} vertices)",
                    vertices.len()
                )));
            }
        }
        let mesh = Self::from_parts(vertices, triangles);
        for i in 0..mesh.triangles.len() {
            if mesh.triangle_area(i) <= MIN_TRIANGLE_AREA {
                return Err(Error::invalid(format!("triangle {i} is degenerate")));
            }
        }
        Ok(mesh)
    }

    fn from_parts(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Self {
        let mut bounds = Aabb::empty();
        for t in &triangles {
            for &k in t {
                bounds.grow(&vertices[k as usize]);
            }
        }
        Self {
            vertices,
            triangles,
            bounds,
        }
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn corners(&self, tri: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_bounds(&self, tri: usize) -> Aabb {
        let mut b = Aabb::empty();
        for p in self.corners(tri) {
            b.grow(&p);
        }
        b
    }

    pub fn centroid(&self, tri: usize) -> Point3<f64> {
        let [a, b, c] = self.corners(tri);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit geometric normal (counter-clockwise winding).
    pub fn normal(&self, tri: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Serializes as OBJ with `v` and `f` records.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        s
    }
}

/// Loads the `v`/`f` subset of Wavefront OBJ. Polygons are fan-triangulated;
/// texture and normal indices (`f 1/2/3 ...`) are ignored.
pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|(line, message)| Error::Parse {
        path: path.into(),
        line,
        message,
    })
}

pub fn parse_obj(text: &str) -> std::result::Result<TriangleMesh, (usize, String)> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            None => {}
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| (line_no, format!("bad vertex coordinate: {e}")))?;
                if coords.len() < 3 || coords.len() > 4 {
                    return Err((line_no, format!("vertex needs 3 coordinates, found {}", coords.len())));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = parts
                    .map(|tok| {
                        tok.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .map_err(|e| (line_no, format!("bad face index `{tok}`: {e}")))
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err((line_no, format!("face needs at least 3 vertices, found {}", idx.len())));
                }
                faces.push((line_no, idx));
            }
            // normals, texture coordinates, groups, materials
            Some("vn" | "vt" | "vp" | "g" | "o" | "s" | "usemtl" | "mtllib" | "l") => {}
            Some(other) => return Err((line_no, format!("unsupported record `{other}`"))),
        }
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::new();
    for (line_no, idx) in faces {
        let resolved: Vec<u32> = idx
            .iter()
            .map(|&k| {
                // 1-based; negative indices count back from the last vertex so far
                let r = if k > 0 { k - 1 } else { n + k };
                if k == 0 || r < 0 || r >= n {
                    Err((line_no, format!("face index {k} out of range ({n} vertices)")))
                } else {
                    Ok(r as u32)
                }
            })
            .collect::<std::result::Result<_, _>>()?;
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    if triangles.is_empty() {
        return Err((0, "mesh has no faces".into()));
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| (0, e.to_string()))
}

/// Heightfield terrain on a regular `n × n` grid spanning `size` meters,
/// centered on the origin, with smooth random hills of up to `relief` meters.
pub fn procedural_terrain(n: usize, size: f64, relief: f64, seed: u64) -> TriangleMesh {
    assert!(n >= 2, "terrain grid needs at least 2×2 vertices");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0) * std::f64::consts::TAU / size,
                rng.gen_range(0.5..3.0) * std::f64::consts::TAU / size,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let step = size / (n - 1) as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = -0.5 * size + i as f64 * step;
            let y = -0.5 * size + j as f64 * step;
            let h: f64 = waves
                .iter()
                .map(|&(kx, ky, phase, amp)| amp * (kx * x + phase).sin() * (ky * y).cos())
                .sum();
            // small per-vertex jitter gives facet edges for the corner detector
            let jitter = rng.gen_range(-0.02..0.02) * relief;
            vertices.push(Point3::new(x, y, relief * h / norm + jitter));
        }
    }
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = (j * n + i) as u32;
            let b = a + 1;
            let c = a + n as u32;
            let d = c + 1;
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    TriangleMesh::from_parts(vertices, triangles)
}

/// Flat square at height `z`, two triangles, normal +z.
pub fn ground_quad(half_size: f64, z: f64) -> TriangleMesh {
    let s = half_size;
    TriangleMesh::new(
        vec![
            Point3::new(-s, -s, z),
            Point3::new(s, -s, z),
            Point3::new(s, s, z),
            Point3::new(-s, s, z),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("quad is valid")
}
