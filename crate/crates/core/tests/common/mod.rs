//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use nalgebra::{Point3, Vector3};
use rand::Rng;
use sparsedc::bvh::{Hit, TIE_EPS, T_MIN};
use sparsedc::mesh::TriangleMesh;
use sparsedc::raster::GrayImage;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Plane intersection followed by an edge-function inside test; shares no
/// code with the library's Möller–Trumbore routine.
pub fn plane_hit(origin: &Point3<f64>, dir: &Vector3<f64>, tri: [Point3<f64>; 3]) -> Option<f64> {
    let [a, b, c] = tri;
    let n = (b - a).cross(&(c - a));
    let denom = n.dot(dir);
    if denom.abs() < 1e-300 {
        return None;
    }
    let t = n.dot(&(a - origin)) / denom;
    if !(t > T_MIN) {
        return None;
    }
    let p = origin + dir * t;
    let e0 = (b - a).cross(&(p - a)).dot(&n);
    let e1 = (c - b).cross(&(p - b)).dot(&n);
    let e2 = (a - c).cross(&(p - c)).dot(&n);
    (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0).then_some(t)
}

/// Exhaustive nearest hit with the library's tie rule.
pub fn brute_force_cast(mesh: &TriangleMesh, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for tri in 0..mesh.len() {
        if let Some(t) = plane_hit(origin, dir, mesh.corners(tri)) {
            let better = match best {
                None => true,
                Some(b) => t < b.t - TIE_EPS || (t <= b.t + TIE_EPS && (tri as u32) < b.triangle),
            };
            if better {
                best = Some(Hit { t, triangle: tri as u32 });
            }
        }
    }
    best
}

pub fn hits_agree(a: Option<Hit>, b: Option<Hit>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x.triangle == y.triangle || (x.t - y.t).abs() <= 1e-6,
        _ => false,
    }
}

/// Triangle soup with `n` random non-degenerate triangles inside `[-10, 10]³`.
pub fn random_mesh<R: Rng>(n: usize, rng: &mut R) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(3 * n);
    let mut triangles = Vec::with_capacity(n);
    while triangles.len() < n {
        let center = Point3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let corner = |rng: &mut R| center + Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (a, b, c) = (corner(rng), corner(rng), corner(rng));
        if (b - a).cross(&(c - a)).norm() < 1e-3 {
            continue;
        }
        let k = vertices.len() as u32;
        vertices.extend([a, b, c]);
        triangles.push([k, k + 1, k + 2]);
    }
    TriangleMesh::new(vertices, triangles).unwrap()
}

/// Ray from outside the mesh volume aimed at a random point inside it.
pub fn random_ray<R: Rng>(rng: &mut R) -> (Point3<f64>, Vector3<f64>) {
    let dir_out = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
    let origin = Point3::origin() + dir_out * 30.0;
    let target = Point3::new(rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0));
    (origin, (target - origin).normalize())
}

/// Shi–Tomasi response computed straight from the definition: Sobel
/// gradients (replicated border), 3×3 box-summed structure tensor, smaller
/// root of its characteristic polynomial.
pub fn min_eigen_oracle(img: &GrayImage, x: usize, y: usize) -> f64 {
    let px = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, img.width as i64 - 1) as usize;
        let yc = y.clamp(0, img.height as i64 - 1) as usize;
        img.data[yc * img.width + xc]
    };
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let grad = |x: i64, y: i64| -> (f64, f64) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..3 {
            for i in 0..3 {
                let v = px(x + i as i64 - 1, y + j as i64 - 1);
                gx += kx[j][i] * v;
                gy += kx[i][j] * v;
            }
        }
        (gx, gy)
    };
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for dy in -1..=1i64 {
        for dx in -1..=1i64 {
            let xx = (x as i64 + dx).clamp(0, img.width as i64 - 1);
            let yy = (y as i64 + dy).clamp(0, img.height as i64 - 1);
            let (gx, gy) = grad(xx, yy);
            a += gx * gx;
            b += gx * gy;
            c += gy * gy;
        }
    }
    // λ² − (a + c)λ + (ac − b²) = 0
    let tr = a + c;
    let det = a * c - b * b;
    0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
}

/// Pearson chi-square p-value for observed counts against uniform expectation.
pub fn chi_square_uniform_p(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}
