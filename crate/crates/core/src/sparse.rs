//! Simulated sparse depth measurements: Shi–Tomasi corners, random
//! subsampling, multiplicative noise and the patch-filled depth channel.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{encode_sparse_value, DepthMap, EncodeStats, TransformConfig};
use crate::error::{Error, Result};
use crate::raster::{GrayImage, Raster};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Simulated,
    Radar,
    Landmark,
    File,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Simulated => "simulated",
            Source::Radar => "radar",
            Source::Landmark => "landmark",
            Source::File => "file",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulated" => Ok(Source::Simulated),
            "radar" => Ok(Source::Radar),
            "landmark" => Ok(Source::Landmark),
            "file" => Ok(Source::File),
            other => Err(format!("unknown measurement source `{other}`")),
        }
    }
}

/// A metric depth sample anchored at an integer pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseMeasurement {
    pub u: usize,
    pub v: usize,
    /// Meters.
    pub depth: f64,
    pub source: Source,
}

pub type SparseMeasurementSet = Vec<SparseMeasurement>;

/// Settings for the sparse measurement simulator.
///
/// The noise and corner-detector defaults are placeholders: the reference
/// training setup does not publish them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub p_noise: f64,
    pub n_low: f64,
    pub n_high: f64,
    pub corner_quality: f64,
    pub corner_min_dist: f64,
    pub corner_max_candidates: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 10,
            p_noise: 0.5,
            n_low: 0.9,
            n_high: 1.1,
            corner_quality: 0.01,
            corner_min_dist: 10.0,
            corner_max_candidates: 200,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_min >= 1
            && self.n_min <= self.n_max
            && (0.0..=1.0).contains(&self.p_noise)
            && self.n_low > 0.0
            && self.n_low <= self.n_high
            && self.n_high.is_finite()
            && (0.0..=1.0).contains(&self.corner_quality)
            && self.corner_min_dist >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid sampler config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub u: usize,
    pub v: usize,
    pub score: f64,
}

/// Sobel gradients with replicated borders.
pub fn sobel(image: &GrayImage) -> (Raster<f64>, Raster<f64>) {
    let (w, h) = (image.width, image.height);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        *image.get(x, y)
    };
    let gx = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1))
    });
    let gy = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1))
    });
    (gx, gy)
}

/// Minimum eigenvalue of the structure tensor summed over a 3×3 window.
pub fn min_eigen_response(image: &GrayImage) -> Raster<f64> {
    let (gx, gy) = sobel(image);
    let (w, h) = (image.width, image.height);
    let xx = Raster::from_fn(w, h, |x, y| gx.get(x, y).powi(2));
    let xy = Raster::from_fn(w, h, |x, y| gx.get(x, y) * gy.get(x, y));
    let yy = Raster::from_fn(w, h, |x, y| gy.get(x, y).powi(2));
    let window = |r: &Raster<f64>, x: usize, y: usize| {
        let mut s = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                s += r.get(xx, yy);
            }
        }
        s
    };
    Raster::from_fn(w, h, |x, y| {
        let a = window(&xx, x, y);
        let b = window(&xy, x, y);
        let c = window(&yy, x, y);
        let half_tr = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (half_tr - disc).max(0.0)
    })
}

/// Good-features-to-track corner detection.
///
/// Keeps pixels scoring at least `corner_quality × max`, then greedily
/// accepts them strongest first (ties in row-major order), dropping any
/// candidate closer than `corner_min_dist` to an accepted corner.
pub fn detect_corners(image: &GrayImage, cfg: &SamplerConfig) -> Vec<Corner> {
    if image.data.is_empty() {
        return Vec::new();
    }
    let score = min_eigen_response(image);
    let max = score.data.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let threshold = cfg.corner_quality * max;
    let mut candidates: Vec<(usize, f64)> = score
        .data
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0 && s >= threshold)
        .map(|(i, &s)| (i, s))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let min_d2 = cfg.corner_min_dist * cfg.corner_min_dist;
    let mut accepted: Vec<Corner> = Vec::new();
    for (i, s) in candidates {
        if accepted.len() >= cfg.corner_max_candidates {
            break;
        }
        let (u, v) = (i % image.width, i / image.width);
        let clear = accepted.iter().all(|c| {
            let du = c.u as f64 - u as f64;
            let dv = c.v as f64 - v as f64;
            du * du + dv * dv >= min_d2
        });
        if clear {
            accepted.push(Corner { u, v, score: s });
        }
    }
    accepted
}

/// Draws `n ~ U{n_min..=n_max}` and samples `min(n, usable)` corners without
/// replacement among those with valid ground truth.
pub fn sample_measurements<R: Rng>(
    corners: &[Corner],
    depth_gt: &DepthMap,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> SparseMeasurementSet {
    let n = rng.gen_range(cfg.n_min..=cfg.n_max);
    let usable: Vec<(usize, usize, f64)> = corners
        .iter()
        .filter(|c| c.u < depth_gt.width && c.v < depth_gt.height)
        .filter_map(|c| depth_gt.get(c.u, c.v).map(|d| (c.u, c.v, d)))
        .collect();
    let k = n.min(usable.len());
    rand::seq::index::sample(rng, usable.len(), k)
        .into_iter()
        .map(|i| {
            let (u, v, depth) = usable[i];
            SparseMeasurement {
                u,
                v,
                depth,
                source: Source::Simulated,
            }
        })
        .collect()
}

/// With probability `p_noise`, scales each depth by a factor drawn from `U[n_low, n_high]`.
pub fn apply_noise<R: Rng>(
    measurements: &[SparseMeasurement],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> SparseMeasurementSet {
    measurements
        .iter()
        .map(|m| {
            let mut out = *m;
            if rng.gen_bool(cfg.p_noise) {
                out.depth *= rng.gen_range(cfg.n_low..=cfg.n_high);
            }
            out
        })
        .collect()
}

/// Full-resolution sparse depth input channel, constant over each patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthChannel {
    pub patch_size: usize,
    /// 0 where no measurement, otherwise the encoded depth in (0, 1].
    pub values: Raster<f64>,
}

impl SparseDepthChannel {
    pub fn width(&self) -> usize {
        self.values.width
    }

    pub fn height(&self) -> usize {
        self.values.height
    }
}

/// Fills the patch containing each measurement with its encoded depth. When
/// several measurements share a patch the smallest metric depth wins.
pub fn rasterize_channel(
    measurements: &[SparseMeasurement],
    width: usize,
    height: usize,
    patch_size: usize,
    f: f64,
    cfg: &TransformConfig,
) -> Result<(SparseDepthChannel, EncodeStats)> {
    if patch_size == 0 || !width.is_multiple_of(patch_size) || !height.is_multiple_of(patch_size) {
        return Err(Error::invalid(format!(
            "{width}x{height} is not divisible into {patch_size}-pixel patches"
        )));
    }
    let (cols, rows) = (width / patch_size, height / patch_size);
    let mut nearest: Vec<Option<f64>> = vec![None; cols * rows];
    for m in measurements {
        if m.u >= width || m.v >= height {
            return Err(Error::invalid(format!(
                "measurement at ({}, {}) outside {width}x{height}",
                m.u, m.v
            )));
        }
        if !(m.depth > 0.0 && m.depth.is_finite()) {
            return Err(Error::invalid(format!("nonpositive depth {}", m.depth)));
        }
        let slot = &mut nearest[(m.v / patch_size) * cols + m.u / patch_size];
        if slot.is_none_or(|d| m.depth < d) {
            *slot = Some(m.depth);
        }
    }
    let mut stats = EncodeStats::default();
    let mut values = Raster::filled(width, height, 0.0);
    for (p, d) in nearest.iter().enumerate() {
        let Some(d) = *d else { continue };
        let e = encode_sparse_value(d, f, cfg)?;
        stats.encoded += 1;
        stats.clamped += e.clamped as usize;
        let (px, py) = (p % cols, p / cols);
        for y in py * patch_size..(py + 1) * patch_size {
            values.data[y * width + px * patch_size..y * width + (px + 1) * patch_size]
                .fill(e.value);
        }
    }
    Ok((SparseDepthChannel { patch_size, values }, stats))
}

/// Detect → sample → noise for one frame. Sampling and noise use the streams
/// `(cfg.seed, SPARSE, frame)` and `(cfg.seed, NOISE, frame)`.
pub fn simulate_measurements(
    image: &GrayImage,
    depth_gt: &DepthMap,
    cfg: &SamplerConfig,
    frame: u64,
) -> SparseMeasurementSet {
    let corners = detect_corners(image, cfg);
    let mut rng = rng_for(cfg.seed, stream::SPARSE, frame);
    let sampled = sample_measurements(&corners, depth_gt, cfg, &mut rng);
    let mut rng = rng_for(cfg.seed, stream::NOISE, frame);
    apply_noise(&sampled, cfg, &mut rng)
}

pub const MEASUREMENTS_HEADER: &str = "u,v,depth_m,source";

pub fn write_measurements_csv(path: &Path, measurements: &[SparseMeasurement]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{MEASUREMENTS_HEADER}").unwrap();
    for m in measurements {
        writeln!(out, "{},{},{},{}", m.u, m.v, m.depth, m.source).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_measurements_csv(path: &Path) -> Result<SparseMeasurementSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(MEASUREMENTS_HEADER) {
        return Err(err(1, format!("expected header `{MEASUREMENTS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [u, v, d, s] = cols[..] else {
            return Err(err(i + 1, format!("expected 4 columns, found {}", cols.len())));
        };
        let m = SparseMeasurement {
            u: u.parse().map_err(|e| err(i + 1, format!("bad u: {e}")))?,
            v: v.parse().map_err(|e| err(i + 1, format!("bad v: {e}")))?,
            depth: d.parse().map_err(|e| err(i + 1, format!("bad depth: {e}")))?,
            source: s.parse().map_err(|e: String| err(i + 1, e))?,
        };
        if !(m.depth > 0.0) {
            return Err(err(i + 1, format!("depth must be positive, got {}", m.depth)));
        }
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(u: usize, v: usize, depth: f64) -> SparseMeasurement {
        SparseMeasurement {
            u,
            v,
            depth,
            source: Source::Simulated,
        }
    }

    #[test]
    fn constant_image_has_no_corners() {
        let img = Raster::filled(40, 30, 0.5);
        assert!(detect_corners(&img, &SamplerConfig::default()).is_empty());
    }

    #[test]
    fn corners_respect_min_distance_and_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Raster::from_fn(120, 90, |_, _| rng.gen::<f64>());
        let cfg = SamplerConfig {
            corner_max_candidates: 25,
            ..Default::default()
        };
        let c = detect_corners(&img, &cfg);
        assert_eq!(c.len(), 25);
        for (i, a) in c.iter().enumerate() {
            for b in &c[i + 1..] {
                let d2 = (a.u as f64 - b.u as f64).powi(2) + (a.v as f64 - b.v as f64).powi(2);
                assert!(d2 >= 100.0);
            }
        }
        assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn one_measurement_read_from_gt() {
        let gt = DepthMap::from_values(4, 4, vec![5.0; 16]).unwrap();
        let cfg = SamplerConfig {
            n_min: 1,
            n_max: 1,
            ..Default::default()
        };
        let corners = [Corner { u: 2, v: 1, score: 1.0 }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_measurements(&corners, &gt, &cfg, &mut rng);
        assert_eq!(s, vec![m(2, 1, 5.0)]);
    }

    #[test]
    fn corners_on_invalid_gt_are_skipped() {
        let gt = DepthMap::invalid(4, 4);
        let corners = [Corner { u: 2, v: 1, score: 1.0 }, Corner { u: 0, v: 0, score: 0.5 }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_measurements(&corners, &gt, &SamplerConfig::default(), &mut rng).is_empty());
    }

    #[test]
    fn noise_identities() {
        let set: Vec<_> = (0..50).map(|i| m(i, 0, 1.0 + i as f64 * 0.37)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let off = SamplerConfig {
            p_noise: 0.0,
            ..Default::default()
        };
        assert_eq!(apply_noise(&set, &off, &mut rng), set);
        let unit = SamplerConfig {
            p_noise: 0.7,
            n_low: 1.0,
            n_high: 1.0,
            ..Default::default()
        };
        assert_eq!(apply_noise(&set, &unit, &mut rng), set);
    }

    #[test]
    fn uniform_noise_statistics() {
        let set = vec![m(0, 0, 10.0); 10_000];
        let cfg = SamplerConfig {
            p_noise: 1.0,
            n_low: 0.9,
            n_high: 1.1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = apply_noise(&set, &cfg, &mut rng);
        assert!(out.iter().all(|x| (9.0..=11.0).contains(&x.depth)));
        let mean = out.iter().map(|x| x.depth).sum::<f64>() / out.len() as f64;
        assert!((9.98..=10.02).contains(&mean), "{mean}");
        assert!(out.iter().all(|x| x.source == Source::Simulated));
    }

    #[test]
    fn patch_fill_geometry() {
        let cfg = TransformConfig::default();
        let (ch, stats) = rasterize_channel(&[m(17, 3, 10.0)], 56, 28, 14, 900.0, &cfg).unwrap();
        assert_eq!(stats.encoded, 1);
        let e = encode_sparse_value(10.0, 900.0, &cfg).unwrap().value;
        for y in 0..28 {
            for x in 0..56 {
                let inside = (14..28).contains(&x) && (0..14).contains(&y);
                assert_eq!(*ch.values.get(x, y), if inside { e } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_set_gives_zero_channel() {
        let (ch, _) =
            rasterize_channel(&[], 28, 28, 14, 900.0, &TransformConfig::default()).unwrap();
        assert!(ch.values.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_measurement_wins_collision() {
        let cfg = TransformConfig::default();
        let (ch, _) =
            rasterize_channel(&[m(1, 1, 4.0), m(5, 5, 2.0)], 14, 14, 14, 900.0, &cfg).unwrap();
        let e = encode_sparse_value(2.0, 900.0, &cfg).unwrap().value;
        assert!(ch.values.data.iter().all(|&v| v == e));
    }

    #[test]
    fn indivisible_dimensions_rejected() {
        assert!(rasterize_channel(&[], 640, 480, 14, 900.0, &TransformConfig::default()).is_err());
    }

    #[test]
    fn measurements_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let set = vec![
            m(3, 4, 12.5),
            SparseMeasurement {
                u: 9,
                v: 1,
                depth: 0.75,
                source: Source::Radar,
            },
        ];
        write_measurements_csv(&path, &set).unwrap();
        assert_eq!(read_measurements_csv(&path).unwrap(), set);
        fs::write(&path, "u,v,depth_m,source\n1,2,3,sonar\n").unwrap();
        assert!(read_measurements_csv(&path).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn measurement() -> impl Strategy<Value = SparseMeasurement> {
            (0usize..70, 0usize..42, 0.1f64..100.0).prop_map(|(u, v, d)| m(u, v, d))
        }

        proptest! {
            #[test]
            fn channel_is_patch_constant(set in prop::collection::vec(measurement(), 0..30)) {
                let cfg = TransformConfig::default();
                let (ch, _) = rasterize_channel(&set, 70, 42, 14, 700.0, &cfg).unwrap();
                let mut distinct = Vec::new();
                for py in 0..3 {
                    for px in 0..5 {
                        let v0 = *ch.values.get(px * 14, py * 14);
                        for y in py * 14..(py + 1) * 14 {
                            for x in px * 14..(px + 1) * 14 {
                                prop_assert_eq!(*ch.values.get(x, y), v0);
                            }
                        }
                        if v0 != 0.0 {
                            prop_assert!(v0 > 0.0 && v0 <= 1.0);
                            if !distinct.contains(&v0) {
                                distinct.push(v0);
                            }
                        }
                    }
                }
                prop_assert!(distinct.len() <= set.len());
            }
        }
    }
}
