//! Overhead orthographic depth camera, grasp-aligned crops and PGM export.

use std::io::Write;
use std::path::Path;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CompositeShape, ConvexPolygon, Pose2, Vec2};
use crate::rng::Rng;

/// Depth quantization of exported images and stored crops (meters per unit).
pub const DEPTH_UNIT: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub region_center: [f64; 2],
    pub region_extent: f64,
    pub resolution: usize,
    pub camera_height: f64,
    pub noise_std: f64,
    pub jitter_center_std: f64,
    pub jitter_rotation_std: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            region_center: [-0.305, 0.0],
            region_extent: 0.512,
            resolution: 128,
            camera_height: 0.8,
            noise_std: 0.001,
            jitter_center_std: 0.005,
            jitter_rotation_std: 0.02,
        }
    }
}

impl CameraModel {
    pub fn pixel_size(&self) -> f64 {
        self.region_extent / self.resolution as f64
    }

    pub fn center(&self) -> Vec2 {
        self.region_center.into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || !self.resolution.is_multiple_of(2) {
            return Err(Error::config("camera.resolution", "must be an even number >= 8"));
        }
        if !(self.region_extent > 0.0) {
            return Err(Error::config("camera.region_extent", "must be positive"));
        }
        if !(self.camera_height > 0.1) {
            return Err(Error::config("camera.camera_height", "must exceed every tool height"));
        }
        if !(self.noise_std >= 0.0 && self.jitter_center_std >= 0.0 && self.jitter_rotation_std >= 0.0) {
            return Err(Error::config("camera", "noise and jitter must be nonnegative"));
        }
        Ok(())
    }
}

/// Realized (jittered) camera placement for one observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub center: Vec2,
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthObservation {
    /// Row-major `resolution × resolution` depths in meters.
    pub pixels: Vec<f64>,
    pub camera: CameraModel,
    pub pose: CameraPose,
    pub noise_seed: u64,
}

impl DepthObservation {
    pub fn size(&self) -> usize {
        self.camera.resolution
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size() + col]
    }

    /// World position of a pixel center.
    pub fn pixel_to_world(&self, row: f64, col: f64) -> Vec2 {
        let n = self.size() as f64;
        let s = self.camera.pixel_size();
        let local = Vec2::new((col + 0.5 - n / 2.0) * s, (n / 2.0 - row - 0.5) * s);
        self.pose.center + local.rotated(self.pose.rotation)
    }

    /// Continuous `(row, col)` image coordinates of a world point.
    pub fn world_to_pixel(&self, p: Vec2) -> (f64, f64) {
        let n = self.size() as f64;
        let s = self.camera.pixel_size();
        let local = (p - self.pose.center).rotated(-self.pose.rotation);
        (n / 2.0 - 0.5 - local.y / s, local.x / s + n / 2.0 - 0.5)
    }

    /// Bilinear depth at continuous image coordinates; taps outside the
    /// image read as background.
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        let n = self.size() as isize;
        let bg = self.camera.camera_height;
        let r0 = row.floor();
        let c0 = col.floor();
        let (fr, fc) = (row - r0, col - c0);
        let (r0, c0) = (r0 as isize, c0 as isize);
        let tap = |r: isize, c: isize| {
            if r < 0 || c < 0 || r >= n || c >= n {
                bg
            } else {
                self.pixels[(r * n + c) as usize]
            }
        };
        let top = if fc == 0.0 { tap(r0, c0) } else { tap(r0, c0) * (1.0 - fc) + tap(r0, c0 + 1) * fc };
        if fr == 0.0 {
            return top;
        }
        let bottom = if fc == 0.0 { tap(r0 + 1, c0) } else { tap(r0 + 1, c0) * (1.0 - fc) + tap(r0 + 1, c0 + 1) * fc };
        top * (1.0 - fr) + bottom * fr
    }

    pub fn depth_at_world(&self, p: Vec2) -> f64 {
        let (r, c) = self.world_to_pixel(p);
        self.sample(r, c)
    }

    /// Observed surface height above the table at a world point.
    pub fn surface_height(&self, p: Vec2) -> f64 {
        self.camera.camera_height - self.depth_at_world(p)
    }
}

/// Renders with a freshly drawn camera jitter and noise seed.
pub fn render_depth(objects: &[(&CompositeShape, Pose2)], camera: &CameraModel, rng: &mut Rng) -> DepthObservation {
    let center = camera.center()
        + Vec2::new(
            gauss(rng, camera.jitter_center_std),
            gauss(rng, camera.jitter_center_std),
        );
    let rotation = gauss(rng, camera.jitter_rotation_std);
    let noise_seed = rng.next_u64();
    render_depth_at(objects, camera, CameraPose { center, rotation }, noise_seed)
}

fn gauss(rng: &mut Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("finite std").sample(rng)
}

/// Deterministic render for a given camera placement and noise seed.
pub fn render_depth_at(
    objects: &[(&CompositeShape, Pose2)],
    camera: &CameraModel,
    pose: CameraPose,
    noise_seed: u64,
) -> DepthObservation {
    let n = camera.resolution;
    let mut obs = DepthObservation {
        pixels: vec![camera.camera_height; n * n],
        camera: camera.clone(),
        pose,
        noise_seed,
    };
    let posed: Vec<ConvexPolygon> = objects
        .iter()
        .flat_map(|(shape, p)| shape.posed_parts(p))
        .collect();
    let boxes: Vec<(Vec2, Vec2)> = posed.iter().map(|p| p.bounds()).collect();
    for r in 0..n {
        for c in 0..n {
            let w = obs.pixel_to_world(r as f64, c as f64);
            let mut h = 0.0f64;
            for (part, (lo, hi)) in posed.iter().zip(&boxes) {
                if w.x < lo.x || w.y < lo.y || w.x > hi.x || w.y > hi.y || part.height() <= h {
                    continue;
                }
                if part.contains(w) {
                    h = part.height();
                }
            }
            obs.pixels[r * n + c] = camera.camera_height - h;
        }
    }
    if camera.noise_std > 0.0 {
        let mut nrng = crate::rng::rng_from(&[noise_seed]);
        let noise = Normal::new(0.0, camera.noise_std).expect("finite std");
        let floor = camera.camera_height * 1e-6;
        for v in obs.pixels.iter_mut() {
            *v = (*v + noise.sample(&mut nrng)).clamp(floor, camera.camera_height);
        }
    }
    obs
}

/// Depth window centered on `center` with its horizontal axis along `phi`,
/// at the observation's metric resolution. Row-major.
pub fn extract_crop_at(obs: &DepthObservation, center: Vec2, phi: f64, crop_px: usize) -> Vec<f64> {
    let s = obs.camera.pixel_size();
    let half = crop_px as f64 / 2.0;
    let (sin, cos) = phi.sin_cos();
    let mut out = Vec::with_capacity(crop_px * crop_px);
    for i in 0..crop_px {
        for j in 0..crop_px {
            let u = Vec2::new((j as f64 + 0.5 - half) * s, (half - i as f64 - 0.5) * s);
            let w = center + Vec2::new(cos * u.x - sin * u.y, sin * u.x + cos * u.y);
            let (r, c) = obs.world_to_pixel(w);
            out.push(obs.sample(r, c));
        }
    }
    out
}

/// Central `inner × inner` window of a square row-major crop.
pub fn central_window(crop: &[f64], outer: usize, inner: usize) -> Vec<f64> {
    let off = (outer - inner) / 2;
    let mut out = Vec::with_capacity(inner * inner);
    for i in 0..inner {
        out.extend_from_slice(&crop[(i + off) * outer + off..(i + off) * outer + off + inner]);
    }
    out
}

/// Grasp-aligned crop of size 32 or 64 (any even size is accepted).
pub fn extract_aligned_crop(obs: &DepthObservation, grasp: &crate::graspsim::GraspSpec, crop_px: usize) -> Vec<f64> {
    extract_crop_at(obs, grasp.center(), grasp.gphi, crop_px)
}

/// Both crops on a shared sampling grid: the 32-pixel crop is exactly the
/// center of the 64-pixel crop.
pub fn extract_crop_pair(obs: &DepthObservation, grasp: &crate::graspsim::GraspSpec) -> (Vec<f64>, Vec<f64>) {
    let c64 = extract_aligned_crop(obs, grasp, 64);
    let c32 = central_window(&c64, 64, 32);
    (c64, c32)
}

/// Signed distance from the observed surface at the grasp center down to the fingertip center.
pub fn gripper_depth(obs: &DepthObservation, grasp: &crate::graspsim::GraspSpec) -> f64 {
    obs.surface_height(grasp.center()) - grasp.gz
}

pub fn quantize_depth(d: f64) -> u16 {
    (d / DEPTH_UNIT).round().clamp(0.0, u16::MAX as f64) as u16
}

pub fn dequantize_depth(q: u16) -> f64 {
    q as f64 * DEPTH_UNIT
}

/// Writes a 16-bit binary PGM; depths are quantized at 0.1 mm per unit.
pub fn write_pgm(path: &Path, width: usize, height: usize, depths: &[f64]) -> Result<()> {
    let values: Vec<u16> = depths.iter().map(|&d| quantize_depth(d)).collect();
    write_pgm_u16(path, width, height, &values)
}

pub fn write_pgm_u16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    assert_eq!(values.len(), width * height, "pgm buffer size");
    let mut buf = Vec::with_capacity(values.len() * 2 + 64);
    write!(buf, "P5\n# depth in units of 0.1 mm (value * 0.0001 = meters)\n{width} {height}\n65535\n").unwrap();
    for v in values {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses a PGM written by [`write_pgm_u16`].
pub fn read_pgm_u16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format(path, d.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() != w * h * 2 {
        return Err(bad("payload size does not match header"));
    }
    Ok((w, h, data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

/// Draws a segment onto a row-major u16 image (image coordinates).
pub fn draw_segment(img: &mut [u16], width: usize, from: (f64, f64), to: (f64, f64), value: u16) {
    let height = img.len() / width;
    let steps = ((to.0 - from.0).abs().max((to.1 - from.1).abs()) * 2.0).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let r = (from.0 + (to.0 - from.0) * t).round();
        let c = (from.1 + (to.1 - from.1) * t).round();
        if r >= 0.0 && c >= 0.0 && (r as usize) < height && (c as usize) < width {
            img[r as usize * width + c as usize] = value;
        }
    }
}

/// Uniform jitter helper shared by scene samplers.
pub fn uniform_in(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexPolygon;

    fn flat(camera: &CameraModel) -> CameraModel {
        CameraModel {
            noise_std: 0.0,
            ..camera.clone()
        }
    }

    fn square(h: f64) -> CompositeShape {
        let p = ConvexPolygon::rectangle(0.1, 0.1, h).unwrap();
        CompositeShape::new([p.clone(), p], [1000.0, 1000.0], 0.5).unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let cam = CameraModel::default();
        let obs = render_depth_at(&[], &cam, CameraPose { center: cam.center(), rotation: 0.0 }, 3);
        let max_dev = obs.pixels.iter().map(|d| (d - 0.8).abs()).fold(0.0, f64::max);
        assert!(max_dev < 0.006);
        assert!(obs.pixels.iter().all(|&d| d > 0.0 && d <= 0.8));
    }

    #[test]
    fn flat_top_and_max_rule() {
        let cam = flat(&CameraModel::default());
        let pose = CameraPose { center: cam.center(), rotation: 0.0 };
        let s = square(0.02);
        let obs = render_depth_at(&[(&s, Pose2::new(cam.region_center[0], 0.0, 0.0))], &cam, pose, 0);
        assert!((obs.at(64, 64) - 0.78).abs() < 1e-12);
        let a = ConvexPolygon::rectangle(0.1, 0.02, 0.01).unwrap();
        let b = ConvexPolygon::rectangle(0.02, 0.1, 0.03).unwrap();
        let s = CompositeShape::new([a, b], [1000.0, 1000.0], 0.5).unwrap();
        let obs = render_depth_at(&[(&s, Pose2::new(cam.region_center[0], 0.0, 0.0))], &cam, pose, 0);
        assert!((obs.at(64, 64) - 0.77).abs() < 1e-12);
        assert!((obs.at(64, 70) - 0.79).abs() < 1e-12);
    }

    #[test]
    fn pixel_world_round_trip() {
        let cam = CameraModel::default();
        let obs = render_depth_at(&[], &cam, CameraPose { center: Vec2::new(0.1, 0.2), rotation: 0.3 }, 0);
        let w = obs.pixel_to_world(17.0, 90.0);
        let (r, c) = obs.world_to_pixel(w);
        assert!((r - 17.0).abs() < 1e-9 && (c - 90.0).abs() < 1e-9);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let vals: Vec<f64> = (0..12).map(|i| 0.7 + i as f64 * 0.001).collect();
        write_pgm(&p, 4, 3, &vals).unwrap();
        let (w, h, q) = read_pgm_u16(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        for (a, b) in q.iter().zip(&vals) {
            assert!((dequantize_depth(*a) - b).abs() <= DEPTH_UNIT / 2.0 + 1e-12);
        }
    }
}
