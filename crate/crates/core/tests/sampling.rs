mod common;

use common::{chi_square_uniform_p, min_eigen_oracle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsedc::bvh::build_bvh;
use sparsedc::camera::DepthMap;
use sparsedc::mesh::ground_quad;
use sparsedc::raster::Raster;
use sparsedc::render::{sample_pose, PoseSamplerConfig};
use sparsedc::sparse::{detect_corners, min_eigen_response, sample_measurements, simulate_measurements, Corner, SamplerConfig};

#[test]
fn single_bright_pixel_corner_matches_oracle() {
    let mut img = Raster::filled(100, 100, 0.0);
    img.set(50, 60, 1.0);
    let cfg = SamplerConfig::default();
    let corners = detect_corners(&img, &cfg);
    assert!(!corners.is_empty());
    let best = corners[0];
    assert!((best.u as i64 - 50).abs() <= 1 && (best.v as i64 - 60).abs() <= 1, "{best:?}");

    // oracle argmax over the neighbourhood, and agreement of the full response map
    let mut arg = (0, 0, f64::MIN);
    for y in 50..70 {
        for x in 40..60 {
            let s = min_eigen_oracle(&img, x, y);
            if s > arg.2 {
                arg = (x, y, s);
            }
        }
    }
    assert!((arg.0 as i64 - 50).abs() <= 1 && (arg.1 as i64 - 60).abs() <= 1);
    assert_eq!((best.u, best.v), (arg.0, arg.1));
    assert!((best.score - arg.2).abs() <= 1e-12 * arg.2);
    let response = min_eigen_response(&img);
    for y in 55..66 {
        for x in 45..56 {
            assert!((response.get(x, y) - min_eigen_oracle(&img, x, y)).abs() < 1e-12);
        }
    }
}

#[test]
fn checkerboard_corner_count() {
    let cell = 20;
    let img = Raster::from_fn(8 * cell, 8 * cell, |x, y| ((x / cell + y / cell) % 2) as f64);
    let corners = detect_corners(&img, &SamplerConfig::default());
    let expected = 7 * 7;
    let n = corners.len() as f64;
    assert!((n - expected as f64).abs() <= 0.1 * expected as f64, "{} corners", corners.len());
    // each detection sits near a cell junction
    for c in &corners {
        let du = (c.u as f64 - (c.u as f64 / cell as f64).round() * cell as f64).abs();
        let dv = (c.v as f64 - (c.v as f64 / cell as f64).round() * cell as f64).abs();
        assert!(du <= 2.0 && dv <= 2.0, "{c:?}");
    }
}

#[test]
fn drawn_count_is_uniform() {
    let corners: Vec<Corner> = (0..20).map(|i| Corner { u: i * 3, v: 5, score: 1.0 }).collect();
    let gt = DepthMap::from_values(64, 8, vec![7.0; 64 * 8]).unwrap();
    let cfg = SamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut counts = [0usize; 10];
    for _ in 0..10_000 {
        let s = sample_measurements(&corners, &gt, &cfg, &mut rng);
        assert!((1..=10).contains(&s.len()));
        // without replacement
        let mut px: Vec<_> = s.iter().map(|m| m.u).collect();
        px.sort();
        px.dedup();
        assert_eq!(px.len(), s.len());
        counts[s.len() - 1] += 1;
    }
    let p = chi_square_uniform_p(&counts);
    assert!(p > 0.001, "p = {p}, counts {counts:?}");
}

#[test]
fn pose_yaw_uniform_and_heights_bounded() {
    let mesh = ground_quad(500.0, 0.0);
    let bvh = build_bvh(&mesh);
    let cfg = PoseSamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bins = [0usize; 36];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let s = sample_pose(&cfg, &bvh, &mesh, &mut rng).unwrap();
        let h = s.pose.translation.z;
        lo = lo.min(h);
        hi = hi.max(h);
        bins[((s.yaw.to_degrees() / 10.0) as usize).min(35)] += 1;
    }
    assert!(lo >= 1.0 && hi <= 51.0, "{lo}..{hi}");
    assert!(chi_square_uniform_p(&bins) > 0.001);
}

#[test]
fn simulated_pipeline_is_seeded() {
    let img = Raster::from_fn(140, 112, |x, y| (((x / 14) + (y / 14)) % 2) as f64);
    let gt = DepthMap::from_values(140, 112, (0..140 * 112).map(|i| 2.0 + (i % 97) as f64 * 0.1).collect()).unwrap();
    let cfg = SamplerConfig { seed: 5, ..Default::default() };
    let a = simulate_measurements(&img, &gt, &cfg, 3);
    let b = simulate_measurements(&img, &gt, &cfg, 3);
    assert_eq!(a, b);
    assert!(!a.is_empty());
    let c = simulate_measurements(&img, &gt, &SamplerConfig { seed: 6, ..cfg }, 3);
    assert_ne!(a, c);
}
