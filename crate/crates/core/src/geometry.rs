//! Rotations, rigid poses, cameras and the Gaussian primitive.
//!
//! Quaternions are stored `(w, x, y, z)`. Gaussians keep their scale as
//! log-scale and their opacity as a logit so the optimizer works on
//! unconstrained values; the accessors exponentiate / squash on use.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Quat {
        let n = axis.norm();
        if n < 1e-15 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation vector (axis · angle) to quaternion.
    pub fn from_rotvec(v: Vector3<f64>) -> Quat {
        Quat::from_axis_angle(v, v.norm())
    }

    /// Inverse of [`Quat::from_rotvec`], choosing the short way round.
    pub fn to_rotvec(self) -> Vector3<f64> {
        let q = if self.w < 0.0 { -self } else { self };
        let v = Vector3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-15 {
            return Vector3::zeros();
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn to_rotmat(self) -> Result<Matrix3<f64>> {
        quat_to_rotmat(self)
    }
}

impl std::ops::Mul for Quat {
    type Output = Quat;

    /// Hamilton product; `a * b` applies `b` first.
    fn mul(self, rhs: Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl std::ops::Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`. Non-unit input is
/// normalized first; the zero quaternion is rejected.
pub fn quat_to_rotmat(q: Quat) -> Result<Matrix3<f64>> {
    let q = q.normalized()?;
    Ok(rotmat_of_unit(q))
}

pub(crate) fn rotmat_of_unit(q: Quat) -> Matrix3<f64> {
    let Quat { w, x, y, z } = q;
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

/// Pull a gradient w.r.t. the entries of `R(q̂)` back to the unit quaternion
/// `q̂`. Returned in `(w, x, y, z)` order.
pub(crate) fn rotmat_grad_to_quat(q: Quat, g: &Matrix3<f64>) -> [f64; 4] {
    let Quat { w, x, y, z } = q;
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(
        0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0,
    );
    [g.dot(&dw), g.dot(&dx), g.dot(&dy), g.dot(&dz)]
}

/// Gradient w.r.t. a raw (possibly non-unit) quaternion `q` of a function of
/// `q / ‖q‖`, given the gradient w.r.t. the normalized value. This is the
/// tangent-space projection `(I − q̂q̂ᵀ) / ‖q‖`.
pub(crate) fn normalize_backward(q: Quat, g_unit: [f64; 4]) -> [f64; 4] {
    let n = q.norm();
    let u = [q.w / n, q.x / n, q.y / n, q.z / n];
    let dot: f64 = u.iter().zip(g_unit.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (g_unit[i] - dot * u[i]) / n;
    }
    out
}

/// `Σ = R · diag(s²) · Rᵀ`.
pub fn covariance_from(scale: Vector3<f64>, q: Quat) -> Result<Matrix3<f64>> {
    if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidScale(format!(
            "({}, {}, {})",
            scale.x, scale.y, scale.z
        )));
    }
    let r = quat_to_rotmat(q)?;
    let s2 = Matrix3::from_diagonal(&scale.component_mul(&scale));
    Ok(r * s2 * r.transpose())
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: [f64; 3],
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quat::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Quat, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation: translation.into(),
        }
    }

    pub fn t(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = rotmat_of_unit(self.rotation);
        Pose::new(
            self.rotation * other.rotation,
            r * other.t() + self.t(),
        )
    }

    /// Interpolates rotation vector and translation linearly between two poses.
    pub fn lerp(a: &Pose, b: &Pose, s: f64) -> Pose {
        let ra = a.rotation.to_rotvec();
        let rb = b.rotation.to_rotvec();
        Pose::new(
            Quat::from_rotvec(ra + (rb - ra) * s),
            a.t() + (b.t() - a.t()) * s,
        )
    }
}

/// Pinhole camera; `rotation`/`translation` map world points into the camera
/// frame (`+z` forward, `+x` right, `+y` down). Pixel centers sit at integer
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub rotation: Quat,
    pub translation: [f64; 3],
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub resolution: [usize; 2],
}

impl CameraView {
    pub fn width(&self) -> usize {
        self.resolution[0]
    }

    pub fn height(&self) -> usize {
        self.resolution[1]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got {:?}",
                self.focal
            )));
        }
        if self.resolution[0] < 8 || self.resolution[1] < 8 {
            return Err(Error::InvalidArgument(format!(
                "resolution must be at least 8x8, got {:?}",
                self.resolution
            )));
        }
        self.rotation.normalized()?;
        Ok(())
    }

    pub fn pose(&self) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    pub fn with_pose(&self, pose: Pose) -> CameraView {
        CameraView {
            rotation: pose.rotation,
            translation: pose.translation,
            ..*self
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotmat_of_unit(self.rotation.normalized().unwrap_or(Quat::IDENTITY))
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + Vector3::from(self.translation)
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * Vector3::from(self.translation))
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 1e-9 {
            return None;
        }
        Some((
            self.focal[0] * c.x / c.z + self.principal_point[0],
            self.focal[1] * c.y / c.z + self.principal_point[1],
        ))
    }

    /// Camera at `eye` looking at `target`, with world `up` hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        resolution: [usize; 2],
    ) -> CameraView {
        let fwd = (target - eye).normalize();
        let mut right = fwd.cross(&up);
        if right.norm() < 1e-9 {
            right = fwd.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
        let uq = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let q = Quat::new(uq.w, uq.i, uq.j, uq.k);
        let t = -(r * eye);
        CameraView {
            rotation: q,
            translation: t.into(),
            focal: [focal, focal],
            principal_point: [resolution[0] as f64 / 2.0, resolution[1] as f64 / 2.0],
            resolution,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat. Scale and opacity are stored in their optimization
/// parameterizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub rotation: Quat,
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn new(
        position: Vector3<f64>,
        rotation: Quat,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Result<Self> {
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidScale(format!("{scale:?}")));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "opacity must lie in (0,1), got {opacity}"
            )));
        }
        Ok(Gaussian {
            position: position.into(),
            rotation: rotation.normalized()?,
            log_scale: [scale.x.ln(), scale.y.ln(), scale.z.ln()],
            opacity_logit: logit(opacity),
            color: [
                color.x.clamp(0.0, 1.0),
                color.y.clamp(0.0, 1.0),
                color.z.clamp(0.0, 1.0),
            ],
        })
    }

    pub fn pos(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn scale(&self) -> Vector3<f64> {
        Vector3::new(
            self.log_scale[0].exp(),
            self.log_scale[1].exp(),
            self.log_scale[2].exp(),
        )
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rgb(&self) -> Vector3<f64> {
        Vector3::from(self.color)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance_from(self.scale(), self.rotation)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianCloud { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.gaussians.iter().map(Gaussian::pos).collect()
    }

    /// Copy of the cloud with positions replaced.
    pub fn with_positions(&self, positions: &[Vector3<f64>]) -> GaussianCloud {
        debug_assert_eq!(positions.len(), self.len());
        GaussianCloud {
            gaussians: self
                .gaussians
                .iter()
                .zip(positions)
                .map(|(g, p)| Gaussian {
                    position: (*p).into(),
                    ..*g
                })
                .collect(),
        }
    }

    /// Radius of the bounding sphere around the centroid.
    pub fn extent(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let n = self.len() as f64;
        let c = self.gaussians.iter().map(Gaussian::pos).sum::<Vector3<f64>>() / n;
        self.gaussians
            .iter()
            .map(|g| (g.pos() - c).norm())
            .fold(0.0, f64::max)
    }
}
