//! Pinhole camera model, rigid poses, point-cloud reprojection and the
//! canonical inverse-depth encoding used for the sparse depth channel.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.width > 0
            && self.height > 0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Scalar focal length for the canonical transform: the mean of `fx` and `fy`.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Intrinsics for the same camera resampled to `width × height`.
    pub fn scaled_to(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
        )
    }
}

/// Which direction a [`Pose`] maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    CamFromWorld,
    WorldFromCam,
}

/// Rigid transform `p' = R p + t`, tagged with its direction.
///
/// Camera frame convention: x right, y down, z along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub tag: FrameTag,
}

const ROTATION_TOL: f64 = 1e-6;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, tag: FrameTag) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho_err <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::invalid(format!(
                "rotation is not a proper rotation (orthonormality error {ortho_err:e}, det {det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
            tag,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            tag: FrameTag::WorldFromCam,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            tag: match self.tag {
                FrameTag::CamFromWorld => FrameTag::WorldFromCam,
                FrameTag::WorldFromCam => FrameTag::CamFromWorld,
            },
        }
    }

    /// The same transform expressed as world-from-camera.
    pub fn world_from_cam(&self) -> Self {
        match self.tag {
            FrameTag::WorldFromCam => *self,
            FrameTag::CamFromWorld => self.inverse(),
        }
    }

    pub fn cam_from_world(&self) -> Self {
        match self.tag {
            FrameTag::CamFromWorld => *self,
            FrameTag::WorldFromCam => self.inverse(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(self.world_from_cam().translation)
    }
}

/// Canonical-transform hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    /// Canonical focal length in pixels.
    pub f_c: f64,
    /// Minimum supported depth in meters.
    pub d_min: f64,
    /// Maximum supported depth in meters.
    pub d_max: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            f_c: 900.0,
            d_min: 0.5,
            d_max: 80.0,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f_c > 0.0 && self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()
        {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid transform config {self:?}")))
        }
    }
}

/// Dense metric z-depth raster. A pixel is valid iff its value is finite and
/// positive; invalid pixels are stored as `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Builds a depth map, normalizing any non-finite or nonpositive entry to `0.0`.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        let values = values
            .into_iter()
            .map(|v| if is_valid_depth(v) { v } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            values,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.values[y * self.width + x];
        is_valid_depth(v).then_some(v)
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        is_valid_depth(self.values[y * self.width + x])
    }

    pub fn n_valid(&self) -> usize {
        self.values.iter().filter(|v| is_valid_depth(**v)).count()
    }

    pub fn valid_mask(&self) -> Mask {
        Raster {
            width: self.width,
            height: self.height,
            data: self.values.iter().map(|v| is_valid_depth(*v)).collect(),
        }
    }

    pub fn to_raster(&self) -> Raster<f64> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.values.clone(),
        }
    }

    /// Invalidates every pixel whose depth exceeds `d_max`.
    pub fn clipped(&self, d_max: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|&v| if v > d_max { 0.0 } else { v })
                .collect(),
        }
    }
}

#[inline]
pub(crate) fn is_valid_depth(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Points in a single coordinate frame (meters).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points })
    }
}

/// A point projected into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl Projection {
    /// Integer pixel containing the projection. Pixel `(i, j)` spans `[i, i+1) × [j, j+1)`.
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

/// Projects a camera-frame point. Returns `None` behind the camera or outside the image.
pub fn project(intr: &CameraIntrinsics, p_cam: &Point3<f64>) -> Option<Projection> {
    let z = p_cam.z;
    if !(z > 0.0) {
        return None;
    }
    let u = intr.fx * p_cam.x / z + intr.cx;
    let v = intr.fy * p_cam.y / z + intr.cy;
    let inside = u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64;
    inside.then_some(Projection { u, v, z })
}

/// Inverse of [`project`] for a known z-depth.
pub fn unproject(intr: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Point3<f64> {
    Point3::new((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z)
}

/// Camera-frame unit ray direction through subpixel `(u, v)`.
pub fn pixel_ray(intr: &CameraIntrinsics, u: f64, v: f64) -> Vector3<f64> {
    Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0).normalize()
}

/// Unprojects every valid pixel center of `depth` into a world-frame cloud.
pub fn depth_to_cloud(intr: &CameraIntrinsics, pose: &Pose, depth: &DepthMap) -> PointCloud {
    let world_from_cam = pose.world_from_cam();
    let mut points = Vec::with_capacity(depth.n_valid());
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(z) = depth.get(x, y) {
                let p = unproject(intr, x as f64 + 0.5, y as f64 + 0.5, z);
                points.push(world_from_cam.apply(&p));
            }
        }
    }
    PointCloud { points }
}

/// Z-buffers a world-frame cloud into the camera image, keeping the nearest depth per pixel.
pub fn reproject_cloud(intr: &CameraIntrinsics, pose: &Pose, cloud: &PointCloud) -> DepthMap {
    let cam_from_world = pose.cam_from_world();
    let mut out = DepthMap::invalid(intr.width, intr.height);
    for p in &cloud.points {
        let Some(proj) = project(intr, &cam_from_world.apply(p)) else {
            continue;
        };
        let (x, y) = proj.pixel();
        let slot = &mut out.values[y * intr.width + x];
        if *slot == 0.0 || proj.z < *slot {
            *slot = proj.z;
        }
    }
    out
}

/// Rescales a metric depth taken with focal length `f` into canonical camera space.
pub fn canonical_depth(d: f64, f: f64, cfg: &TransformConfig) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) || !(f > 0.0 && f.is_finite()) {
        return Err(Error::invalid(format!(
            "canonical_depth needs positive depth and focal length, got d={d}, f={f}"
        )));
    }
    Ok(cfg.f_c / f * d)
}

/// A normalized inverse canonical depth value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoded {
    pub value: f64,
    /// The canonical depth was below `d_min` and `value` was clamped to 1.
    pub clamped: bool,
}

/// Encodes a metric depth into `(0, 1]`: canonical depth, inverted and scaled by `d_min`.
pub fn encode_sparse_value(d: f64, f: f64, cfg: &TransformConfig) -> Result<Encoded> {
    let d_c = canonical_depth(d, f, cfg)?;
    if d_c < cfg.d_min {
        return Ok(Encoded {
            value: 1.0,
            clamped: true,
        });
    }
    Ok(Encoded {
        value: cfg.d_min / d_c,
        clamped: false,
    })
}

/// Exact inverse of [`encode_sparse_value`] for unclamped values.
pub fn decode_sparse_value(d_sci: f64, f: f64, cfg: &TransformConfig) -> Result<f64> {
    if !(d_sci > 0.0 && d_sci <= 1.0) {
        return Err(Error::invalid(format!(
            "encoded depth must lie in (0, 1], got {d_sci}"
        )));
    }
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::invalid(format!("focal length must be positive, got {f}")));
    }
    Ok(cfg.d_min * f / (cfg.f_c * d_sci))
}

/// Count of clamped values seen while encoding a raster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EncodeStats {
    pub encoded: usize,
    pub clamped: usize,
}

/// Encodes every valid pixel of a depth map; invalid pixels stay 0.
pub fn encode_depth_map(
    depth: &DepthMap,
    f: f64,
    cfg: &TransformConfig,
) -> Result<(Raster<f64>, EncodeStats)> {
    let mut stats = EncodeStats::default();
    let mut data = Vec::with_capacity(depth.values.len());
    for &d in &depth.values {
        if is_valid_depth(d) {
            let e = encode_sparse_value(d, f, cfg)?;
            stats.encoded += 1;
            stats.clamped += e.clamped as usize;
            data.push(e.value);
        } else {
            data.push(0.0);
        }
    }
    Ok((Raster::from_vec(depth.width, depth.height, data)?, stats))
}

/// Decodes an encoded raster back to metric depth; zeros stay invalid.
pub fn decode_depth_map(encoded: &Raster<f64>, f: f64, cfg: &TransformConfig) -> Result<DepthMap> {
    let values = encoded
        .data
        .iter()
        .map(|&e| {
            if e > 0.0 {
                decode_sparse_value(e, f, cfg)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DepthMap::from_values(encoded.width, encoded.height, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let p = project(&intr(), &Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((p.u, p.v, p.z), (320.0, 240.0, 5.0));
    }

    #[test]
    fn off_axis_projection() {
        let p = project(&intr(), &Point3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(p.u, 370.0);
    }

    #[test]
    fn behind_camera_is_out_of_frustum() {
        assert!(project(&intr(), &Point3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project(&intr(), &Point3::new(0.0, 0.0, 0.0)).is_none());
        assert!(project(&intr(), &Point3::new(100.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 0).is_err());
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros(), FrameTag::CamFromWorld).is_err());
        let m = Matrix3::identity() * 1.01;
        assert!(Pose::new(m, Vector3::zeros(), FrameTag::CamFromWorld).is_err());
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 5.0), Point3::new(0.0, 0.0, 2.0)])
            .unwrap();
        let d = reproject_cloud(&intr(), &Pose::identity(), &cloud);
        assert_eq!(d.get(320, 240), Some(2.0));
        assert_eq!(d.n_valid(), 1);
    }

    #[test]
    fn empty_cloud_gives_invalid_map() {
        let d = reproject_cloud(&intr(), &Pose::identity(), &PointCloud::default());
        assert_eq!(d.n_valid(), 0);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cloud_round_trip_reproduces_depth_map() {
        let intr = CameraIntrinsics::new(200.0, 210.0, 40.0, 30.0, 80, 60).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3).into_inner();
        let pose = Pose::new(rot, Vector3::new(1.0, 2.0, 3.0), FrameTag::WorldFromCam).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = (0..80 * 60)
            .map(|_| {
                if rng.gen_bool(0.8) {
                    rng.gen_range(0.5..50.0)
                } else {
                    0.0
                }
            })
            .collect();
        let depth = DepthMap::from_values(80, 60, values).unwrap();
        let cloud = depth_to_cloud(&intr, &pose, &depth);
        let back = reproject_cloud(&intr, &pose, &cloud);
        for (a, b) in depth.values.iter().zip(&back.values) {
            if *a == 0.0 {
                assert_eq!(*b, 0.0);
            } else {
                assert!((a - b).abs() <= 1e-5 * a, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn canonical_depth_examples() {
        let cfg = TransformConfig::default();
        assert_eq!(canonical_depth(10.0, 900.0, &cfg).unwrap(), 10.0);
        assert_eq!(canonical_depth(10.0, 450.0, &cfg).unwrap(), 20.0);
        assert!(canonical_depth(0.0, 900.0, &cfg).is_err());
        assert!(canonical_depth(1.0, -1.0, &cfg).is_err());
    }

    #[test]
    fn encode_examples() {
        let cfg = TransformConfig::default();
        let e = encode_sparse_value(0.5, 900.0, &cfg).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(!e.clamped);
        let e = encode_sparse_value(80.0, 900.0, &cfg).unwrap();
        assert!((e.value - 0.00625).abs() < 1e-15);
        let e = encode_sparse_value(0.2, 900.0, &cfg).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(e.clamped);
        assert!(encode_sparse_value(-1.0, 900.0, &cfg).is_err());
    }

    #[test]
    fn decode_examples() {
        let cfg = TransformConfig::default();
        assert_eq!(decode_sparse_value(1.0, 900.0, &cfg).unwrap(), 0.5);
        assert_eq!(decode_sparse_value(0.5, 900.0, &cfg).unwrap(), 1.0);
        assert!(decode_sparse_value(0.0, 900.0, &cfg).is_err());
        assert!(decode_sparse_value(1.5, 900.0, &cfg).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let cfg = TransformConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = rng.gen_range(cfg.d_min..=cfg.d_max);
            let e = encode_sparse_value(d, cfg.f_c, &cfg).unwrap();
            let back = decode_sparse_value(e.value, cfg.f_c, &cfg).unwrap();
            assert!(((back - d) / d).abs() < 1e-6);
        }
    }

    #[test]
    fn focal_uses_mean_of_axes() {
        let intr = CameraIntrinsics::new(800.0, 1000.0, 10.0, 10.0, 20, 20).unwrap();
        assert_eq!(intr.focal(), 900.0);
    }

    #[test]
    fn depth_map_normalizes_invalid_to_zero() {
        let d = DepthMap::from_values(3, 1, vec![f64::NAN, -2.0, 1.0]).unwrap();
        assert_eq!(d.values, vec![0.0, 0.0, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decode_encode_is_identity(e in 1e-4f64..=1.0, f in 100.0f64..2000.0) {
                let cfg = TransformConfig::default();
                let d = decode_sparse_value(e, f, &cfg).unwrap();
                let back = encode_sparse_value(d, f, &cfg).unwrap();
                prop_assert!(((back.value - e) / e).abs() < 1e-6);
            }

            #[test]
            fn canonical_depth_is_linear(d in 0.01f64..100.0, k in 1u32..64, f in 100.0f64..2000.0) {
                let cfg = TransformConfig::default();
                // powers of two keep the scaling exact in floating point
                let a = 2f64.powi(k as i32 - 32);
                let lhs = canonical_depth(a * d, f, &cfg).unwrap();
                let rhs = a * canonical_depth(d, f, &cfg).unwrap();
                prop_assert_eq!(lhs, rhs);
            }

            #[test]
            fn unproject_project_round_trip(u in 0.0f64..639.9, v in 0.0f64..479.9, z in 0.1f64..100.0) {
                let intr = CameraIntrinsics::new(525.0, 530.0, 319.5, 239.5, 640, 480).unwrap();
                let p = unproject(&intr, u, v, z);
                let back = project(&intr, &p).unwrap();
                prop_assert!((back.u - u).abs() < 1e-9);
                prop_assert!((back.v - v).abs() < 1e-9);
                prop_assert!((back.z - z).abs() < 1e-9);
            }

            #[test]
            fn z_buffer_stores_minimum(zs in prop::collection::vec(0.1f64..100.0, 1..20)) {
                let intr = CameraIntrinsics::new(100.0, 100.0, 8.0, 8.0, 16, 16).unwrap();
                let pts = zs.iter().map(|&z| Point3::new(0.015 * z, 0.0, z)).collect();
                let d = reproject_cloud(&intr, &Pose::identity(), &PointCloud::new(pts).unwrap());
                let min = zs.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(d.get(9, 8), Some(min));
            }
        }
    }
}
