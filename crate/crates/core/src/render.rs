//! Ray-cast depth rendering, terrain-relative camera pose sampling and
//! synthetic dataset generation.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{build_bvh, Bvh, Ray};
use crate::camera::{pixel_ray, CameraIntrinsics, DepthMap, FrameTag, Pose};
use crate::error::{Error, Result};
use crate::io::{write_depth, write_json, write_pgm, CameraRecord};
use crate::mesh::{load_obj, TriangleMesh};
use crate::raster::{GrayImage, Raster};
use crate::seed::{rng_for, stream};

/// Sentinel triangle id for pixels whose ray missed the mesh.
pub const MISS: u32 = u32::MAX;

/// Per-pixel result of a render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub depth: DepthMap,
    /// Triangle hit by each pixel's primary ray, or [`MISS`].
    pub triangles: Raster<u32>,
}

/// Casts one ray through each pixel center and records z-depth in the camera frame.
pub fn render_frame(
    bvh: &Bvh,
    mesh: &TriangleMesh,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> RenderedFrame {
    let world_from_cam = pose.world_from_cam();
    let origin = Point3::from(world_from_cam.translation);
    let (w, h) = (intr.width, intr.height);
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut depth = Vec::with_capacity(w);
            let mut tris = Vec::with_capacity(w);
            for x in 0..w {
                let dir_cam = pixel_ray(intr, x as f64 + 0.5, y as f64 + 0.5);
                let ray = Ray {
                    origin,
                    direction: world_from_cam.rotation * dir_cam,
                };
                match bvh.cast(mesh, &ray) {
                    Some(hit) => {
                        depth.push(hit.t * dir_cam.z);
                        tris.push(hit.triangle);
                    }
                    None => {
                        depth.push(0.0);
                        tris.push(MISS);
                    }
                }
            }
            (depth, tris)
        })
        .collect();
    let mut values = Vec::with_capacity(w * h);
    let mut triangles = Vec::with_capacity(w * h);
    for (d, t) in rows {
        values.extend(d);
        triangles.extend(t);
    }
    RenderedFrame {
        depth: DepthMap {
            width: w,
            height: h,
            values,
        },
        triangles: Raster {
            width: w,
            height: h,
            data: triangles,
        },
    }
}

pub fn render_depth(
    bvh: &Bvh,
    mesh: &TriangleMesh,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> DepthMap {
    render_frame(bvh, mesh, intr, pose).depth
}

/// Fixed directional light for the grayscale proxy (world frame, toward the light).
pub fn proxy_light() -> Vector3<f64> {
    Vector3::new(0.4, 0.25, 1.0).normalize()
}

/// Two-sided Lambertian shading of a rendered frame; misses are black.
pub fn shade_proxy(mesh: &TriangleMesh, frame: &RenderedFrame) -> GrayImage {
    let light = proxy_light();
    let normals: Vec<Vector3<f64>> = (0..mesh.len()).map(|t| mesh.normal(t)).collect();
    Raster {
        width: frame.triangles.width,
        height: frame.triangles.height,
        data: frame
            .triangles
            .data
            .iter()
            .map(|&t| {
                if t == MISS {
                    0.0
                } else {
                    0.1 + 0.9 * normals[t as usize].dot(&light).abs()
                }
            })
            .collect(),
    }
}

/// Camera pose sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSamplerConfig {
    pub n_frames: usize,
    /// Height range above the surface, meters.
    pub z_min: f64,
    pub z_max: f64,
    /// Maximum tilt about the camera x and y axes, degrees.
    pub theta_xy: f64,
    pub seed: u64,
    /// Fraction of the horizontal mesh extent excluded on each border.
    pub horizontal_margin: f64,
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        Self {
            n_frames: 10_000,
            z_min: 1.0,
            z_max: 51.0,
            theta_xy: 22.5,
            seed: 0,
            horizontal_margin: 0.05,
        }
    }
}

impl PoseSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.z_min > 0.0
            && self.z_min < self.z_max
            && self.z_max.is_finite()
            && (0.0..90.0).contains(&self.theta_xy)
            && (0.0..0.5).contains(&self.horizontal_margin);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid pose sampler config {self:?}")))
        }
    }
}

/// A sampled pose together with the parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledPose {
    /// World-from-camera.
    pub pose: Pose,
    /// Surface height under the camera, meters.
    pub surface_z: f64,
    pub height_above_surface: f64,
    /// Radians.
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub yaw: f64,
}

/// Camera looking straight down with image x along world +x.
pub fn nadir_rotation() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

/// World-from-camera rotation: tilt about camera x, then camera y, applied to
/// the nadir orientation, then yaw about gravity.
pub fn gravity_aligned_rotation(yaw: f64, tilt_x: f64, tilt_y: f64) -> Matrix3<f64> {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt_x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), tilt_y);
    rz.matrix() * nadir_rotation() * rx.matrix() * ry.matrix()
}

/// Surface height under `(x, y)` from a downward ray cast; first hit wins on overhangs.
pub fn surface_height(bvh: &Bvh, mesh: &TriangleMesh, x: f64, y: f64) -> Option<f64> {
    let top = mesh.bounds().max.z + 1.0;
    let ray = Ray {
        origin: Point3::new(x, y, top),
        direction: -Vector3::z(),
    };
    bvh.cast(mesh, &ray).map(|h| top - h.t)
}

const MAX_REJECTIONS: usize = 1000;

pub fn sample_pose<R: Rng>(
    cfg: &PoseSamplerConfig,
    bvh: &Bvh,
    mesh: &TriangleMesh,
    rng: &mut R,
) -> Result<SampledPose> {
    let b = mesh.bounds();
    let ext = b.extent();
    let (x0, x1) = (
        b.min.x + cfg.horizontal_margin * ext.x,
        b.max.x - cfg.horizontal_margin * ext.x,
    );
    let (y0, y1) = (
        b.min.y + cfg.horizontal_margin * ext.y,
        b.max.y - cfg.horizontal_margin * ext.y,
    );
    let theta = cfg.theta_xy.to_radians();
    for _ in 0..MAX_REJECTIONS {
        let x = if x1 > x0 { rng.gen_range(x0..=x1) } else { x0 };
        let y = if y1 > y0 { rng.gen_range(y0..=y1) } else { y0 };
        let Some(surface_z) = surface_height(bvh, mesh, x, y) else {
            continue;
        };
        let above = rng.gen_range(cfg.z_min..=cfg.z_max);
        let tilt_x = if theta > 0.0 {
            rng.gen_range(-theta..=theta)
        } else {
            0.0
        };
        let tilt_y = if theta > 0.0 {
            rng.gen_range(-theta..=theta)
        } else {
            0.0
        };
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let pose = Pose {
            rotation: gravity_aligned_rotation(yaw, tilt_x, tilt_y),
            translation: Vector3::new(x, y, surface_z + above),
            tag: FrameTag::WorldFromCam,
        };
        return Ok(SampledPose {
            pose,
            surface_z,
            height_above_surface: above,
            tilt_x,
            tilt_y,
            yaw,
        });
    }
    Err(Error::Sampling(format!(
        "{MAX_REJECTIONS} consecutive samples found no surface under the sampled region"
    )))
}

/// Files of one generated frame, relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFiles {
    pub depth: String,
    pub pose: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: String,
    pub seed: u64,
    pub n_frames: usize,
    pub intrinsics: CameraIntrinsics,
    pub config: PoseSamplerConfig,
    pub frames: Vec<FrameFiles>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn generate_dataset(
    mesh_path: &Path,
    cfg: &PoseSamplerConfig,
    intr: &CameraIntrinsics,
    out_dir: &Path,
) -> Result<Manifest> {
    let mesh = load_obj(mesh_path)?;
    let scene = mesh_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    generate_dataset_from_mesh(&mesh, &scene, cfg, intr, out_dir)
}

/// Renders `cfg.n_frames` frames into `out_dir`. Frame `i` draws its pose from
/// the stream `(cfg.seed, POSE, i)`, so output is independent of thread count.
pub fn generate_dataset_from_mesh(
    mesh: &TriangleMesh,
    scene: &str,
    cfg: &PoseSamplerConfig,
    intr: &CameraIntrinsics,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    intr.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let bvh = build_bvh(mesh);
    let frames = (0..cfg.n_frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, stream::POSE, i as u64);
            let sampled = sample_pose(cfg, &bvh, mesh, &mut rng)
                .map_err(|e| Error::Frame {
                    index: i,
                    source: Box::new(e),
                })?;
            let frame = render_frame(&bvh, mesh, intr, &sampled.pose);
            let files = FrameFiles {
                depth: format!("{i:05}_depth.pfm"),
                pose: format!("{i:05}_pose.json"),
                image: format!("{i:05}_image.pgm"),
            };
            write_depth(&out_dir.join(&files.depth), &frame.depth)?;
            write_json(
                &out_dir.join(&files.pose),
                &CameraRecord::new(intr, &sampled.pose),
            )?;
            write_pgm(&out_dir.join(&files.image), &shade_proxy(mesh, &frame))?;
            Ok(files)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        scene: scene.to_owned(),
        seed: cfg.seed,
        n_frames: cfg.n_frames,
        intrinsics: *intr,
        config: *cfg,
        frames,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Absolute paths of a manifest's frame files.
pub fn frame_paths(dir: &Path, files: &FrameFiles) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(&files.depth),
        dir.join(&files.pose),
        dir.join(&files.image),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ground_quad, procedural_terrain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn down_looking(height: f64) -> Pose {
        Pose::new(
            nadir_rotation(),
            Vector3::new(0.0, 0.0, height),
            FrameTag::WorldFromCam,
        )
        .unwrap()
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let mesh = ground_quad(1000.0, 0.0);
        let bvh = build_bvh(&mesh);
        let intr = CameraIntrinsics::centered(500.0, 64, 48).unwrap();
        let d = render_depth(&bvh, &mesh, &intr, &down_looking(7.5));
        assert_eq!(d.n_valid(), 64 * 48);
        assert!(d.values.iter().all(|v| (v - 7.5).abs() < 1e-5));
    }

    #[test]
    fn looking_away_renders_nothing() {
        let mesh = ground_quad(10.0, 0.0);
        let bvh = build_bvh(&mesh);
        let intr = CameraIntrinsics::centered(100.0, 32, 24).unwrap();
        let up = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 5.0), FrameTag::WorldFromCam)
            .unwrap();
        let d = render_depth(&bvh, &mesh, &intr, &up);
        assert_eq!(d.n_valid(), 0);
    }

    #[test]
    fn cam_from_world_tag_is_honored() {
        let mesh = ground_quad(100.0, 0.0);
        let bvh = build_bvh(&mesh);
        let intr = CameraIntrinsics::centered(100.0, 16, 12).unwrap();
        let wfc = down_looking(3.0);
        let a = render_depth(&bvh, &mesh, &intr, &wfc);
        let b = render_depth(&bvh, &mesh, &intr, &wfc.inverse());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_tilt_looks_straight_down() {
        let r = gravity_aligned_rotation(1.234, 0.0, 0.0);
        let axis = r * Vector3::z();
        assert!((axis - (-Vector3::z())).norm() < 1e-15);
    }

    #[test]
    fn sampled_heights_in_range_on_flat_mesh() {
        let mesh = ground_quad(100.0, 2.0);
        let bvh = build_bvh(&mesh);
        let cfg = PoseSamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s = sample_pose(&cfg, &bvh, &mesh, &mut rng).unwrap();
            let h = s.pose.translation.z - 2.0;
            assert!((1.0..=51.0).contains(&h), "{h}");
            assert!(s.tilt_x.abs() <= 22.5f64.to_radians());
            assert!(s.tilt_y.abs() <= 22.5f64.to_radians());
        }
    }

    #[test]
    fn sampling_fails_without_floor() {
        // a vertical wall has no surface under any sampled (x, y)
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, -1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = build_bvh(&mesh);
        let cfg = PoseSamplerConfig {
            horizontal_margin: 0.2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_pose(&cfg, &bvh, &mesh, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn small_dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = procedural_terrain(12, 200.0, 10.0, 3);
        let cfg = PoseSamplerConfig {
            n_frames: 10,
            seed: 42,
            ..Default::default()
        };
        let intr = CameraIntrinsics::centered(40.0, 32, 24).unwrap();
        let m = generate_dataset_from_mesh(&mesh, "terrain", &cfg, &intr, dir.path()).unwrap();
        assert_eq!(m.frames.len(), 10);
        let count = |ext: &str| {
            fs::read_dir(dir.path())
                .unwrap()
                .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == ext)
                .count()
        };
        assert_eq!(count("pfm"), 10);
        assert_eq!(count("pgm"), 10);
        assert_eq!(count("json"), 11);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["scene", "seed", "n_frames", "intrinsics", "frames"] {
            assert!(v.get(key).is_some(), "manifest lacks {key}");
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = PoseSamplerConfig {
            z_min: 5.0,
            z_max: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PoseSamplerConfig {
            theta_xy: 90.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
