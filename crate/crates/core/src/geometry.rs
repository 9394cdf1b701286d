//! Gaze-direction math and the camera normalization pipeline.
//!
//! Gaze vectors live in a camera frame with `x` right, `y` down and `z`
//! forward; a subject looking straight into the camera has gaze `(0, 0, -1)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp margin applied to the cosine before `arccos`.
pub const ANGLE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        GazeVector { x, y, z }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x, y, z] => Ok(GazeVector::new(*x, *y, *z)),
            _ => Err(Error::invalid("gaze vector", format!("expected 3 components, got {}", v.len()))),
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: GazeVector) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(self, s: f64) -> Self {
        GazeVector::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm("gaze vector"));
        }
        Ok(self.scaled(1.0 / n))
    }

    pub fn rotate(self, r: &Matrix3<f64>) -> Self {
        let v = r * Vector3::new(self.x, self.y, self.z);
        GazeVector::new(v.x, v.y, v.z)
    }
}

/// Angle in radians between two nonzero directions, in `[0, π]`.
///
/// The cosine is clamped to `[-1 + ε, 1 - ε]` with `ε = 1e-7`, so identical
/// directions report about `4.5e-4` rad rather than exactly zero.
pub fn angular_distance(a: GazeVector, b: GazeVector) -> Result<f64> {
    let c = clamped_cosine(a, b)?;
    Ok(c.acos())
}

/// Unclamped variant used where an exact zero is required.
pub fn angular_distance_exact(a: GazeVector, b: GazeVector) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("angular distance input"));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

fn clamped_cosine(a: GazeVector, b: GazeVector) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("angular distance input"));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0 + ANGLE_EPS, 1.0 - ANGLE_EPS))
}

/// `(−cos p · sin y, −sin p, −cos p · cos y)`.
pub fn pitchyaw_to_vector(pitch: f64, yaw: f64) -> Result<GazeVector> {
    if !(pitch.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::invalid("pitchyaw_to_vector", format!("pitch {pitch} outside (-π/2, π/2)")));
    }
    let cp = pitch.cos();
    Ok(GazeVector::new(-cp * yaw.sin(), -pitch.sin(), -cp * yaw.cos()))
}

/// Inverse of [`pitchyaw_to_vector`] for any nonzero vector.
pub fn vector_to_pitchyaw(g: GazeVector) -> Result<(f64, f64)> {
    let g = g.normalized()?;
    let pitch = (-g.y).clamp(-1.0, 1.0).asin();
    if (std::f64::consts::FRAC_PI_2 - pitch.abs()) < 1e-12 {
        return Err(Error::invalid("vector_to_pitchyaw", "gaze is vertical, yaw undefined"));
    }
    let yaw = (-g.x).atan2(-g.z);
    Ok((pitch, yaw))
}

/// Rigid head pose in camera coordinates. `translation` is the face center
/// in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl HeadPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if err > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("head pose", format!("rotation not orthonormal (err {err:.2e}, det {det:.6})")));
        }
        if translation.norm() == 0.0 {
            return Err(Error::Degenerate("face center at the camera origin".into()));
        }
        Ok(HeadPose { rotation, translation })
    }

    /// Rotation about the camera axes: yaw about `y`, pitch about `x`, roll
    /// about `z`, applied as `Rz(roll) · Rx(pitch) · Ry(yaw)`.
    pub fn from_euler(pitch: f64, yaw: f64, roll: f64, translation: Vector3<f64>) -> Result<Self> {
        Self::new(rot_z(roll) * rot_x(pitch) * rot_y(yaw), translation)
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project(&self, p: Vector3<f64>) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }
}

/// Row-major `H × W × C` 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::invalid(
                "image",
                format!("{} bytes for {height}×{width}×{channels}", data.len()),
            ));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear sample at continuous pixel coordinates; pixel centers sit at
    /// integer positions and samples outside the image read as zero.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
                if xi >= 0 && yi >= 0 && (xi as usize) < self.width && (yi as usize) < self.height {
                    acc += w * self.get(yi as usize, xi as usize, c) as f64;
                }
            }
        }
        acc
    }

    /// Luma conversion `0.299 R + 0.587 G + 0.114 B`; gray input is copied.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| {
                if self.channels >= 3 {
                    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8
                } else {
                    p[0]
                }
            })
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

/// Cumulative-histogram equalization to a single 8-bit channel.
///
/// Level `v` maps to `floor(255 · cdf(v) / N)`, so a constant image stays
/// constant (at 255).
pub fn equalize_grayscale(image: &Image) -> Image {
    let gray = image.to_gray();
    let mut hist = [0u64; 256];
    for &v in &gray.data {
        hist[v as usize] += 1;
    }
    let n = gray.data.len() as u64;
    let mut lut = [0u8; 256];
    let mut cdf = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count;
        lut[v] = (255 * cdf / n) as u8;
    }
    Image {
        data: gray.data.iter().map(|&v| lut[v as usize]).collect(),
        ..gray
    }
}

/// 2D eye-corner landmarks in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeLandmarks {
    pub left_outer: [f64; 2],
    pub left_inner: [f64; 2],
    pub right_inner: [f64; 2],
    pub right_outer: [f64; 2],
}

impl EyeLandmarks {
    fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        EyeLandmarks {
            left_outer: f(self.left_outer),
            left_inner: f(self.left_inner),
            right_inner: f(self.right_inner),
            right_outer: f(self.right_outer),
        }
    }

    pub fn left_center(&self) -> [f64; 2] {
        midpoint(self.left_outer, self.left_inner)
    }

    pub fn right_center(&self) -> [f64; 2] {
        midpoint(self.right_inner, self.right_outer)
    }

    /// Angle of the line through both eye centers against the image x axis.
    pub fn eye_line_angle(&self) -> f64 {
        let (l, r) = (self.left_center(), self.right_center());
        let (dx, dy) = (r[0] - l[0], r[1] - l[1]);
        let a = dy.atan2(dx);
        // the line is undirected; fold into (-π/2, π/2]
        if a > std::f64::consts::FRAC_PI_2 {
            a - std::f64::consts::PI
        } else if a <= -std::f64::consts::FRAC_PI_2 {
            a + std::f64::consts::PI
        } else {
            a
        }
    }
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationConfig {
    /// Distance from the virtual camera to the face center, mm.
    pub distance_mm: f64,
    pub focal: f64,
    /// Warped face size as (height, width).
    pub face_size: (usize, usize),
    /// Eye crop size as (height, width).
    pub eye_size: (usize, usize),
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            distance_mm: 600.0,
            focal: 650.0,
            face_size: (224, 224),
            eye_size: (36, 60),
        }
    }
}

impl NormalizationConfig {
    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.face_size.1 as f64 - 1.0) / 2.0,
            cy: (self.face_size.0 as f64 - 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormalizationResult {
    pub face: Image,
    pub left_eye: Image,
    pub right_eye: Image,
    /// Rotation from the source camera frame into the normalized frame.
    pub rotation: Matrix3<f64>,
    /// Head pose expressed in the normalized camera.
    pub head: HeadPose,
    pub landmarks: EyeLandmarks,
    pub camera: CameraIntrinsics,
    pub gaze: Option<GazeVector>,
}

/// Rotates a virtual camera onto the face center at a fixed distance and
/// rolls it so the eye line is horizontal, then warps the image and cuts
/// equalized gray eye crops.
pub fn normalize_sample(
    image: &Image,
    landmarks: &EyeLandmarks,
    head: &HeadPose,
    camera: &CameraIntrinsics,
    gaze: Option<GazeVector>,
    cfg: &NormalizationConfig,
) -> Result<NormalizationResult> {
    if dist(landmarks.left_outer, landmarks.left_inner) < 1e-9
        || dist(landmarks.right_inner, landmarks.right_outer) < 1e-9
        || dist(landmarks.left_center(), landmarks.right_center()) < 1e-9
    {
        return Err(Error::Degenerate("coincident eye corners".into()));
    }
    let center = head.translation;
    let d = center.norm();
    let z = center / d;
    let head_x = head.rotation.column(0).into_owned();
    let y = z.cross(&head_x);
    if y.norm() < 1e-9 {
        return Err(Error::Degenerate("head x axis parallel to the viewing ray".into()));
    }
    let y = y.normalize();
    let x = y.cross(&z).normalize();
    let look = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);

    let cam_n = cfg.camera();
    let (k_src_inv, k_n) = (
        camera
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular camera matrix".into()))?,
        cam_n.matrix(),
    );
    let scale = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, cfg.distance_mm / d));
    let warp_with = |r: &Matrix3<f64>| k_n * scale * r * k_src_inv;
    let apply = |m: &Matrix3<f64>, p: [f64; 2]| {
        let v = m * Vector3::new(p[0], p[1], 1.0);
        [v.x / v.z, v.y / v.z]
    };

    // cancel the residual in-plane rotation of the eye line
    let roll = landmarks.map(|p| apply(&warp_with(&look), p)).eye_line_angle();
    let rotation = rot_z(-roll) * look;
    let warp = warp_with(&rotation);
    let inv = warp
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular warp".into()))?;
    let warped_marks = landmarks.map(|p| apply(&warp, p));

    let (fh, fw) = cfg.face_size;
    let mut face = Image::filled(fh, fw, image.channels, 0);
    for v in 0..fh {
        for u in 0..fw {
            let [sx, sy] = apply(&inv, [u as f64, v as f64]);
            for c in 0..image.channels {
                face.data[(v * fw + u) * image.channels + c] = image.sample(sx, sy, c).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let left_eye = eye_crop(&face, warped_marks.left_outer, warped_marks.left_inner, cfg.eye_size);
    let right_eye = eye_crop(&face, warped_marks.right_inner, warped_marks.right_outer, cfg.eye_size);

    let head_n = HeadPose {
        rotation: rotation * head.rotation,
        translation: Vector3::new(0.0, 0.0, cfg.distance_mm),
    };
    Ok(NormalizationResult {
        face,
        left_eye,
        right_eye,
        rotation,
        head: head_n,
        landmarks: warped_marks,
        camera: cam_n,
        gaze: gaze.map(|g| g.rotate(&rotation)),
    })
}

/// Crop centered on the corner midpoint, `1.5×` the corner distance wide and
/// `0.6×` that tall, resampled bilinearly and equalized.
fn eye_crop(face: &Image, a: [f64; 2], b: [f64; 2], size: (usize, usize)) -> Image {
    let gray = face.to_gray();
    let c = midpoint(a, b);
    let w = 1.5 * dist(a, b);
    let h = 0.6 * w;
    let (oh, ow) = size;
    let mut out = Image::filled(oh, ow, 1, 0);
    for v in 0..oh {
        for u in 0..ow {
            let sx = c[0] + ((u as f64 + 0.5) / ow as f64 - 0.5) * w;
            let sy = c[1] + ((v as f64 + 0.5) / oh as f64 - 0.5) * h;
            out.data[v * ow + u] = gray.sample(sx, sy, 0).round().clamp(0.0, 255.0) as u8;
        }
    }
    equalize_grayscale(&out)
}
