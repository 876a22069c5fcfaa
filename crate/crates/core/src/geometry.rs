//! Camera model, point-cloud construction from RGB-D rasters, and rigid
//! transforms between per-user and global coordinates.
//!
//! Conventions: camera frame is x-right, y-down, z-forward (meters); depth
//! rasters store integer millimeters with 0 as the hole sentinel; pixel
//! traversal is row-major everywhere.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::segmentation::LabelField;

/// Largest depth a frame may carry, in millimeters.
pub const MAX_DEPTH_MM: u16 = 10_000;

/// Tolerance on `‖RᵀR − I‖∞` for a rotation to count as orthonormal.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("pixel ({u},{v}) outside {width}x{height} raster")]
    OutOfBounds { u: u32, v: u32, width: u32, height: u32 },
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("empty geometry: {0}")]
    EmptyGeometry(String),
    #[error("bad frame file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Pinhole camera constants for a registered RGB-D pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..(width as f64)).contains(&cx) || !(0.0..(height as f64)).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx},{cy}) outside {width}x{height} raster"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Registered color + depth raster pair; the unit of capture and transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    /// Row-major RGB triples, `3 * width * height` bytes.
    pub color: Vec<u8>,
    /// Row-major depth in millimeters, 0 meaning hole.
    pub depth: Vec<u16>,
    pub intrinsics: CameraIntrinsics,
    pub timestamp_us: u64,
    pub client_id: u8,
}

impl RgbdFrame {
    pub fn new(
        color: Vec<u8>,
        depth: Vec<u16>,
        intrinsics: CameraIntrinsics,
        timestamp_us: u64,
        client_id: u8,
    ) -> Result<Self, GeometryError> {
        let n = intrinsics.pixel_count();
        if color.len() != 3 * n || depth.len() != n {
            return Err(GeometryError::ShapeMismatch(format!(
                "expected {} color bytes and {} depth values, got {} and {}",
                3 * n,
                n,
                color.len(),
                depth.len()
            )));
        }
        if let Some(d) = depth.iter().find(|&&d| d > MAX_DEPTH_MM) {
            return Err(GeometryError::ShapeMismatch(format!(
                "depth value {d} mm exceeds {MAX_DEPTH_MM} mm"
            )));
        }
        Ok(Self { color, depth, intrinsics, timestamp_us, client_id })
    }

    /// Allocates a frame filled with zero color and hole depth.
    pub fn blank(intrinsics: CameraIntrinsics, timestamp_us: u64, client_id: u8) -> Self {
        let n = intrinsics.pixel_count();
        Self { color: vec![0; 3 * n], depth: vec![0; n], intrinsics, timestamp_us, client_id }
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.intrinsics.width as usize + u as usize
    }

    #[inline]
    pub fn depth_at(&self, u: u32, v: u32) -> u16 {
        self.depth[self.index(u, v)]
    }

    #[inline]
    pub fn color_at(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * self.index(u, v);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    fn check_bounds(&self, u: u32, v: u32) -> Result<(), GeometryError> {
        if u >= self.intrinsics.width || v >= self.intrinsics.height {
            return Err(GeometryError::OutOfBounds {
                u,
                v,
                width: self.intrinsics.width,
                height: self.intrinsics.height,
            });
        }
        Ok(())
    }
}

/// One cloud sample: camera-frame position in meters plus its pixel color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl ColoredPoint {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Seat extrinsics: rotation plus translation placing a user in the shared frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    /// Row-major orthonormal rotation with determinant +1.
    pub rotation: Matrix3<f64>,
    /// Translation in meters.
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation about the vertical (y) axis by `degrees`, plus translation.
    pub fn yaw_degrees(degrees: f64, translation: Vector3<f64>) -> Self {
        let a = degrees.to_radians();
        let (s, c) = a.sin_cos();
        let rotation = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Self { rotation, translation }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev >= ROTATION_TOL {
            return Err(GeometryError::InvalidPose(format!(
                "rotation not orthonormal (deviation {dev:.3e})"
            )));
        }
        if self.rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidPose("rotation determinant not +1".into()));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::InvalidPose("translation not finite".into()));
        }
        Ok(())
    }
}

impl fmt::Display for RigidPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R={:?} t=({}, {}, {})", self.rotation.as_slice(), self.translation.x, self.translation.y, self.translation.z)
    }
}

/// Inverse pinhole projection of a single pixel; `Ok(None)` marks a depth hole.
pub fn back_project(frame: &RgbdFrame, u: u32, v: u32) -> Result<Option<ColoredPoint>, GeometryError> {
    frame.check_bounds(u, v)?;
    let d = frame.depth_at(u, v);
    if d == 0 {
        return Ok(None);
    }
    let [r, g, b] = frame.color_at(u, v);
    let k = &frame.intrinsics;
    let z = d as f64 / 1000.0;
    Ok(Some(ColoredPoint {
        x: (u as f64 - k.cx) * z / k.fx,
        y: (v as f64 - k.cy) * z / k.fy,
        z,
        r,
        g,
        b,
    }))
}

/// Inverse pinhole projection at real-valued pixel coordinates and metric depth.
pub fn back_project_at(k: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Vector3<f64> {
    Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)
}

/// Pinhole projection of a camera-frame point onto the image plane.
pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<(f64, f64), GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Back-projects every valid pixel of `frame`, restricted to foreground when a
/// mask is given. Points come out in row-major pixel order.
pub fn cloud_from_frame(frame: &RgbdFrame, mask: Option<&LabelField>) -> Result<Vec<ColoredPoint>, GeometryError> {
    if let Some(m) = mask {
        if m.width != frame.intrinsics.width || m.height != frame.intrinsics.height {
            return Err(GeometryError::ShapeMismatch(format!(
                "mask {}x{} does not match frame {}x{}",
                m.width,
                m.height,
                frame.intrinsics.width,
                frame.intrinsics.height
            )));
        }
    }
    let mut cloud = Vec::new();
    for v in 0..frame.intrinsics.height {
        for u in 0..frame.intrinsics.width {
            if let Some(m) = mask {
                if !m.is_foreground(u, v) {
                    continue;
                }
            }
            if let Some(p) = back_project(frame, u, v)? {
                cloud.push(p);
            }
        }
    }
    Ok(cloud)
}

/// Maps a user-local point into the shared global frame: `p' = R·p − R·t`.
pub fn to_global(pose: &RigidPose, p: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
    pose.validate()?;
    Ok(pose.rotation * p - pose.rotation * pose.translation)
}

/// Exact inverse of [`to_global`]: `p = Rᵀ·p' + t`.
pub fn from_global(pose: &RigidPose, p_global: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
    pose.validate()?;
    Ok(pose.rotation.transpose() * p_global + pose.translation)
}

const RGBD_MAGIC: &[u8] = b"RGBD1\n";

/// Writes the `.rgbd` frame-dump format: magic, ASCII header, raw RGB bytes,
/// then little-endian 16-bit depth.
pub fn write_rgbd<W: Write>(w: &mut W, frame: &RgbdFrame) -> Result<(), GeometryError> {
    let k = &frame.intrinsics;
    w.write_all(RGBD_MAGIC)?;
    writeln!(
        w,
        "{} {} {} {} {} {} {} {}",
        k.width, k.height, k.fx, k.fy, k.cx, k.cy, frame.timestamp_us, frame.client_id
    )?;
    w.write_all(&frame.color)?;
    let mut depth_bytes = Vec::with_capacity(frame.depth.len() * 2);
    for d in &frame.depth {
        depth_bytes.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&depth_bytes)?;
    Ok(())
}

pub fn read_rgbd<R: Read>(r: &mut R) -> Result<RgbdFrame, GeometryError> {
    let mut reader = BufReader::new(r);
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic)?;
    if magic != RGBD_MAGIC {
        return Err(GeometryError::BadFile("bad magic, not an .rgbd file".into()));
    }
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(GeometryError::BadFile(format!(
            "header has {} fields, expected 8",
            fields.len()
        )));
    }
    let parse_err = |what: &str| GeometryError::BadFile(format!("unparseable {what} in header"));
    let width: u32 = fields[0].parse().map_err(|_| parse_err("width"))?;
    let height: u32 = fields[1].parse().map_err(|_| parse_err("height"))?;
    let fx: f64 = fields[2].parse().map_err(|_| parse_err("fx"))?;
    let fy: f64 = fields[3].parse().map_err(|_| parse_err("fy"))?;
    let cx: f64 = fields[4].parse().map_err(|_| parse_err("cx"))?;
    let cy: f64 = fields[5].parse().map_err(|_| parse_err("cy"))?;
    let timestamp_us: u64 = fields[6].parse().map_err(|_| parse_err("timestamp"))?;
    let client_id: u8 = fields[7].parse().map_err(|_| parse_err("client_id"))?;
    let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy, width, height)?;
    let n = intrinsics.pixel_count();
    let mut color = vec![0u8; 3 * n];
    reader.read_exact(&mut color)?;
    let mut depth_bytes = vec![0u8; 2 * n];
    reader.read_exact(&mut depth_bytes)?;
    let depth: Vec<u16> = depth_bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    RgbdFrame::new(color, depth, intrinsics, timestamp_us, client_id)
}

pub fn write_rgbd_file<P: AsRef<Path>>(path: P, frame: &RgbdFrame) -> Result<(), GeometryError> {
    let mut f = std::fs::File::create(path)?;
    write_rgbd(&mut f, frame)
}

pub fn read_rgbd_file<P: AsRef<Path>>(path: P) -> Result<RgbdFrame, GeometryError> {
    let mut f = std::fs::File::open(path)?;
    read_rgbd(&mut f)
}
