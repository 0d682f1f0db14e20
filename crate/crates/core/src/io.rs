//! On-disk formats: PFM rasters, 8-bit PGM images, camera JSON and point-cloud CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, DepthMap, FrameTag, PointCloud, Pose};
use crate::error::{Error, Result};
use crate::raster::{GrayImage, Raster};

/// Encodes a raster as grayscale PFM: `Pf` header, little-endian scale `-1.0`,
/// 32-bit floats with the bottom row first.
pub fn encode_pfm(raster: &Raster<f64>) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", raster.width, raster.height);
    let mut out = Vec::with_capacity(header.len() + 4 * raster.data.len());
    out.extend_from_slice(header.as_bytes());
    for row in raster.data.chunks(raster.width.max(1)).rev() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<Raster<f64>, String> {
    // three newline-terminated header lines
    let mut pos = 0;
    let mut lines = Vec::with_capacity(3);
    for _ in 0..3 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("truncated PFM header")?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| "non-UTF-8 header")?;
        lines.push(line.trim().to_owned());
        pos += end + 1;
    }
    if lines[0] != "Pf" {
        return Err(format!("expected grayscale PFM magic `Pf`, found `{}`", lines[0]));
    }
    let dims: Vec<usize> = lines[1]
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| format!("bad dimension `{s}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [width, height] = dims[..] else {
        return Err(format!("bad PFM size line `{}`", lines[1]));
    };
    let scale: f64 = lines[2]
        .parse()
        .map_err(|e| format!("bad PFM scale `{}`: {e}", lines[2]))?;
    if scale >= 0.0 {
        return Err("big-endian PFM is not supported".into());
    }
    let body = &bytes[pos..];
    if body.len() != 4 * width * height {
        return Err(format!(
            "expected {} bytes of pixel data, found {}",
            4 * width * height,
            body.len()
        ));
    }
    let mut data = vec![0.0; width * height];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = v;
    }
    Ok(Raster {
        width,
        height,
        data,
    })
}

pub fn write_pfm(path: &Path, raster: &Raster<f64>) -> Result<()> {
    fs::write(path, encode_pfm(raster)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Raster<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|message| Error::Parse {
        path: path.into(),
        line: 0,
        message,
    })
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_pfm(path, &depth.to_raster())
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let r = read_pfm(path)?;
    DepthMap::from_values(r.width, r.height, r.data)
}

/// Binary 8-bit PGM (`P5`). Intensities are clamped to `[0, 1]` then scaled to 0–255.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width, image.height);
    let mut out = header.into_bytes();
    out.extend(
        image
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// Reads a binary 8-bit PGM into `[0, 1]` intensities.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.into(),
        line: 0,
        message,
    };
    // header tokens: magic, width, height, maxval; `#` comments allowed
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 && pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => pos += 1,
            _ => {
                let start = pos;
                while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
            }
        }
    }
    if tokens.len() < 4 || tokens[0] != "P5" {
        return Err(parse_err("expected a binary PGM (P5) header".into()));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| parse_err(format!("bad header field `{s}`: {e}")))
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(format!("unsupported maxval {maxval}")));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() < width * height {
        return Err(parse_err("truncated pixel data".into()));
    }
    let data = body[..width * height]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Ok(Raster {
        width,
        height,
        data,
    })
}

/// Intrinsics and pose of one camera as stored in JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 3×3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub frame_tag: FrameTag,
}

impl CameraRecord {
    pub fn new(intr: &CameraIntrinsics, pose: &Pose) -> Self {
        let r = &pose.rotation;
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row * 3 + col] = r[(row, col)];
            }
        }
        Self {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            rotation,
            translation: pose.translation.into(),
            frame_tag: pose.tag,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    pub fn pose(&self) -> Result<Pose> {
        Pose::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
            self.frame_tag,
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub fn read_camera(path: &Path) -> Result<(CameraIntrinsics, Pose)> {
    let rec: CameraRecord = read_json(path)?;
    Ok((rec.intrinsics()?, rec.pose()?))
}

/// Writes a point cloud as CSV with header `x,y,z`.
pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "x,y,z").unwrap();
    for p in &cloud.points {
        writeln!(out, "{},{},{}", p.x, p.y, p.z).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_cloud_csv(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,z" => {}
        _ => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: "expected header `x,y,z`".into(),
            })
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let [x, y, z] = vals[..] else {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                message: format!("expected 3 columns, found {}", vals.len()),
            });
        };
        points.push(Point3::new(x, y, z));
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_header_and_row_order() {
        let r = Raster::from_vec(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap();
        let bytes = encode_pfm(&r);
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let body = &bytes[12..];
        // bottom row first
        assert_eq!(&body[0..4], &3.0f32.to_le_bytes());
        assert_eq!(&body[12..16], &2.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap(), r);
    }

    #[test]
    fn pfm_rejects_color_variant() {
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm(b"Pf\n2 1\n-1.0\n\0\0\0\0").is_err());
    }

    #[test]
    fn pfm_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let d = DepthMap::from_values(3, 2, vec![1.5, 0.0, 2.25, 7.0, 0.0, 80.0]).unwrap();
        write_depth(&path, &d).unwrap();
        let first = fs::read(&path).unwrap();
        let back = read_depth(&path).unwrap();
        assert_eq!(back, d);
        write_depth(&path, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = Raster::from_vec(3, 1, vec![0.0, 1.0, 128.0 / 255.0]).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn camera_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.json");
        let intr = CameraIntrinsics::centered(500.0, 64, 48).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, 0.2, 0.1).into_inner();
        let pose = Pose::new(rot, Vector3::new(1.0, 2.0, 3.0), FrameTag::CamFromWorld).unwrap();
        write_json(&path, &CameraRecord::new(&intr, &pose)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"frame_tag\": \"cam_from_world\""));
        let (i2, p2) = read_camera(&path).unwrap();
        assert_eq!(i2, intr);
        assert_eq!(p2, pose);
    }

    #[test]
    fn camera_json_rejects_unknown_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.json");
        fs::write(
            &path,
            r#"{"fx":1,"fy":1,"cx":1,"cy":1,"width":2,"height":2,
                "rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,0],"frame_tag":"sideways"}"#,
        )
        .unwrap();
        assert!(read_camera(&path).is_err());
    }

    #[test]
    fn cloud_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let cloud =
            PointCloud::new(vec![Point3::new(1.0, -2.5, 3.0), Point3::new(0.1, 0.2, 0.3)]).unwrap();
        write_cloud_csv(&path, &cloud).unwrap();
        assert_eq!(read_cloud_csv(&path).unwrap(), cloud);
        fs::write(&path, "x,y,z\n1,2\n").unwrap();
        let err = read_cloud_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
