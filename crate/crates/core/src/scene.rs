//! Core scene types: Gaussians, cameras, per-frame priors, and the
//! multi-reference-frame container.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for pixels with no valid depth. All consumers must test for it.
pub const DEPTH_INVALID: f64 = -1.0;

/// Near-plane for projection culling (camera-space z).
pub const NEAR_PLANE: f64 = 0.01;

pub fn depth_valid(d: f64) -> bool {
    d >= 0.0
}

// ---------------------------------------------------------------------------
// quaternions, stored as [w, x, y, z]

pub mod quat {
    use nalgebra::Matrix3;

    pub const IDENTITY: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    pub fn norm(q: &[f64; 4]) -> f64 {
        (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
    }

    pub fn normalized(q: &[f64; 4]) -> [f64; 4] {
        let n = norm(q);
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
        let [w, x, y, z] = normalized(q);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion (w,x,y,z) of a proper rotation matrix, w >= 0.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> [f64; 4] {
        // Shepperd's method: pick the largest diagonal combination.
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            ]
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            [
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            ]
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            [
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            ]
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            [
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        let q = if q[0] < 0.0 {
            [-q[0], -q[1], -q[2], -q[3]]
        } else {
            q
        };
        normalized(&q)
    }

    pub fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
    }
}

// ---------------------------------------------------------------------------
// Gaussian

/// One anisotropic 3D Gaussian. `rot` is a unit quaternion (w,x,y,z) within
/// 1e-9 after every mutation; `scale` holds per-axis standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mu: Vector3<f64>,
    pub rot: [f64; 4],
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    pub lineage_id: u64,
}

impl Gaussian {
    pub fn new(
        mu: Vector3<f64>,
        rot: [f64; 4],
        scale: Vector3<f64>,
        opacity: f64,
        color: [f64; 3],
        lineage_id: u64,
    ) -> Self {
        Gaussian {
            mu,
            rot: quat::normalized(&rot),
            scale,
            opacity,
            color,
            lineage_id,
        }
    }

    /// Sigma = R diag(scale^2) R^T. Symmetric PSD by construction.
    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_of(self)
    }

    pub fn normalize_rotation(&mut self) {
        self.rot = quat::normalized(&self.rot);
    }

    /// Clamp scale/opacity/color into their invariant ranges after an
    /// optimizer step.
    pub fn clamp_params(&mut self, min_scale: f64) {
        for k in 0..3 {
            self.scale[k] = self.scale[k].max(min_scale);
            self.color[k] = self.color[k].clamp(0.0, 1.0);
        }
        self.opacity = self.opacity.clamp(0.0, 1.0);
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = quat::norm(&self.rot);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState {
                what: format!("gaussian {} quaternion norm {n}", self.lineage_id),
            });
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidState {
                what: format!("gaussian {} has non-positive scale", self.lineage_id),
            });
        }
        if !(0.0..=1.0).contains(&self.opacity)
            || self.color.iter().any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::InvalidState {
                what: format!("gaussian {} opacity/color out of [0,1]", self.lineage_id),
            });
        }
        Ok(())
    }
}

pub fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    let r = quat::rotation_matrix(&g.rot);
    let d = Matrix3::from_diagonal(&Vector3::new(
        g.scale[0] * g.scale[0],
        g.scale[1] * g.scale[1],
        g.scale[2] * g.scale[2],
    ));
    let sigma = r * d * r.transpose();
    // exact symmetry for downstream consumers
    0.5 * (sigma + sigma.transpose())
}

// ---------------------------------------------------------------------------
// Camera

/// Pinhole camera: intrinsics K (pixels) and world-to-camera extrinsics E.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub k: Matrix3<f64>,
    pub e: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(k: Matrix3<f64>, e: Matrix4<f64>, width: usize, height: usize) -> Self {
        Camera { k, e, width, height }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k[(1, 0)].abs() > 1e-12 || self.k[(2, 0)].abs() > 1e-12 || self.k[(2, 1)].abs() > 1e-12
        {
            return Err(Error::InvalidState {
                what: "camera K not upper-triangular".into(),
            });
        }
        if self.k[(0, 0)] <= 0.0 || self.k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidState {
                what: "camera K focal entries not positive".into(),
            });
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).norm();
        if err > 1e-9 {
            return Err(Error::InvalidState {
                what: format!("camera extrinsic rotation not orthonormal (err {err:.2e})"),
            });
        }
        Ok(())
    }

    /// Rotation block of E.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.e.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Translation block of E.
    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.e[(0, 3)], self.e[(1, 3)], self.e[(2, 3)])
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let r = self.rotation();
        r.transpose() * (p - self.translation())
    }

    /// Pixel coordinates of a camera-space point (no culling).
    pub fn cam_to_pixel(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let h = self.k * pc;
        Vector2::new(h[0] / h[2], h[1] / h[2])
    }

    /// Projects a world point; `None` when behind the near plane.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.world_to_camera(p);
        if pc[2] <= NEAR_PLANE {
            return None;
        }
        Some((self.cam_to_pixel(&pc), pc[2]))
    }

    /// Lifts a pixel at camera depth d to a world point.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let k_inv = self.k.try_inverse().expect("intrinsics invertible");
        let ray = k_inv * Vector3::new(pixel[0], pixel[1], 1.0);
        let pc = ray * (depth / ray[2]);
        self.camera_to_world(&pc)
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] <= (self.width - 1) as f64
            && pixel[1] <= (self.height - 1) as f64
    }
}

// ---------------------------------------------------------------------------
// raster buffers

/// Interleaved RGB float image, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }
}

/// Single-channel float raster (depth maps, alpha maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Raster {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at floating-point pixel coordinates, `None` if any
    /// participating texel holds the invalid sentinel or lies out of bounds.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.get(x0, y0);
        let v10 = self.get(x1, y0);
        let v01 = self.get(x0, y1);
        let v11 = self.get(x1, y1);
        if !depth_valid(v00) || !depth_valid(v10) || !depth_valid(v01) || !depth_valid(v11) {
            return None;
        }
        Some(
            v00 * (1.0 - fx) * (1.0 - fy)
                + v10 * fx * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v11 * fx * fy,
        )
    }
}

/// Binary human-silhouette mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, v: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

// ---------------------------------------------------------------------------
// priors

/// Per-frame prior bundle entry: camera-aligned rasters plus sparse points.
#[derive(Debug, Clone)]
pub struct FramePriors {
    /// Normalized timestamp in [0,1].
    pub t: f64,
    pub camera: Camera,
    pub image: Image,
    pub mask: Mask,
    pub depth_com: Raster,
    pub depth_hum: Raster,
    pub sparse_points: Vec<Vector3<f64>>,
}

impl FramePriors {
    pub fn check_invariants(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        for (name, rw, rh) in [
            ("image", self.image.width, self.image.height),
            ("mask", self.mask.width, self.mask.height),
            ("depth_com", self.depth_com.width, self.depth_com.height),
            ("depth_hum", self.depth_hum.width, self.depth_hum.height),
        ] {
            if rw != w || rh != h {
                return Err(Error::DimensionMismatch {
                    path: std::path::PathBuf::new(),
                    field: name.into(),
                    expected: format!("{w}x{h}"),
                    actual: format!("{rw}x{rh}"),
                });
            }
        }
        // mask(p)=0 implies depth_hum(p) invalid
        for y in 0..h {
            for x in 0..w {
                if !self.mask.get(x, y) && depth_valid(self.depth_hum.get(x, y)) {
                    return Err(Error::InvalidState {
                        what: format!("depth_hum valid outside mask at ({x},{y})"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Full prior bundle over a clip.
#[derive(Debug, Clone)]
pub struct PriorBundle {
    pub frames: Vec<FramePriors>,
    pub tracks: Vec<KeypointTrack>,
}

impl PriorBundle {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

// ---------------------------------------------------------------------------
// keypoint tracks and visibility

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KeypointObs {
    pub t: f64,
    pub pixel: [f64; 2],
    pub visible: bool,
}

/// Dense-correspondence track: one (part, uv) identity observed per frame.
/// part_id 0 means unassigned and excludes the track from initialization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KeypointTrack {
    pub kp_id: u64,
    pub part_id: u32,
    pub uv: [f64; 2],
    pub obs: Vec<KeypointObs>,
}

impl KeypointTrack {
    pub fn visible_at(&self, frame: usize) -> bool {
        self.obs.get(frame).map(|o| o.visible).unwrap_or(false)
    }
}

/// Boolean (keypoints x frames) visibility matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMatrix {
    pub vis: Vec<Vec<bool>>,
}

impl VisibilityMatrix {
    pub fn from_tracks(tracks: &[KeypointTrack], num_frames: usize) -> Self {
        let vis = tracks
            .iter()
            .map(|trk| (0..num_frames).map(|f| trk.visible_at(f)).collect())
            .collect();
        VisibilityMatrix { vis }
    }

    pub fn num_keypoints(&self) -> usize {
        self.vis.len()
    }

    pub fn num_frames(&self) -> usize {
        self.vis.first().map(|r| r.len()).unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, kp: usize, frame: usize) -> bool {
        self.vis[kp][frame]
    }

    /// Number of keypoints visible in frame `f`.
    pub fn count_visible(&self, frame: usize) -> usize {
        self.vis.iter().filter(|row| row[frame]).count()
    }
}

// ---------------------------------------------------------------------------
// the multi-reference-frame container

/// B parallel Gaussian arrays anchored at the reference timestamps, plus a
/// shared static background. Frames are index-aligned: position i holds the
/// same lineage_id in every frame, which keeps the per-frame lineage
/// multisets equal under synchronized density control.
#[derive(Debug, Clone)]
pub struct GaussianFrameSet {
    /// Reference timestamps, strictly increasing, in [0,1].
    pub ref_times: Vec<f64>,
    /// Video frame index of each reference timestamp.
    pub ref_frame_indices: Vec<usize>,
    /// B parallel arrays of human Gaussians.
    pub frames: Vec<Vec<Gaussian>>,
    /// Static background shared by all frames.
    pub background: Vec<Gaussian>,
    /// lineage_id -> source lineage_id for densified Gaussians.
    pub lineage: BTreeMap<u64, u64>,
    /// Next fresh lineage id.
    pub next_lineage_id: u64,
}

impl GaussianFrameSet {
    pub fn num_refs(&self) -> usize {
        self.ref_times.len()
    }

    pub fn num_human(&self) -> usize {
        self.frames.first().map(|f| f.len()).unwrap_or(0)
    }

    pub fn fresh_lineage_id(&mut self) -> u64 {
        let id = self.next_lineage_id;
        self.next_lineage_id += 1;
        id
    }

    /// Root of the SRC chain for a lineage id (the originally initialized
    /// ancestor).
    pub fn lineage_root(&self, mut id: u64) -> u64 {
        while let Some(&src) = self.lineage.get(&id) {
            if src == id {
                break;
            }
            id = src;
        }
        id
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.ref_times.len() != self.frames.len()
            || self.ref_times.len() != self.ref_frame_indices.len()
        {
            return Err(Error::InvalidState {
                what: "frame_set arrays disagree on B".into(),
            });
        }
        for w in self.ref_times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidState {
                    what: "ref_times not strictly increasing".into(),
                });
            }
        }
        if let Some(&t0) = self.ref_times.first() {
            if !(0.0..=1.0).contains(&t0) || !(0.0..=1.0).contains(self.ref_times.last().unwrap())
            {
                return Err(Error::InvalidState {
                    what: "ref_times outside [0,1]".into(),
                });
            }
        }
        self.check_sync()
    }

    /// Lineage multisets of all frames must be equal.
    pub fn check_sync(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Ok(());
        }
        let mut first: Vec<u64> = self.frames[0].iter().map(|g| g.lineage_id).collect();
        first.sort_unstable();
        for (bi, frame) in self.frames.iter().enumerate().skip(1) {
            let mut ids: Vec<u64> = frame.iter().map(|g| g.lineage_id).collect();
            ids.sort_unstable();
            if ids != first {
                return Err(Error::InvalidState {
                    what: format!("lineage multiset of frame {bi} differs from frame 0"),
                });
            }
        }
        Ok(())
    }
}
