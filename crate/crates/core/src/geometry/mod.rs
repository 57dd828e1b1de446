//! Unit-sphere geometry: gaze directions, alignment rotations and tangent planes.
//!
//! Coordinates follow the scene camera: `+z` forward, `x` right, `y` down.
//! Angles crossing the public API are in degrees; everything internal is radians.

mod camera;
mod linalg;

pub use camera::{normalized_image_coords, CameraIntrinsics};
pub use linalg::{Mat3, Vec2, Vec3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum norm accepted by [`normalize`], in the input's units (cm for gaze points).
pub const MIN_NORMALIZE_NORM: f64 = 1e-6;

/// Directions with `a . b` at or below this are treated as anti-parallel by
/// [`rotation_onto`].
pub const ANTIPARALLEL_DOT: f64 = -0.999;

/// Dot-product threshold above which the x axis is too close to the gaze
/// direction to seed the tangent frame.
const FRAME_FALLBACK_DOT: f64 = 0.99;

/// A 3D vector of unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3<T>(Vec3<T>);

impl<T: Real> UnitVec3<T> {
    /// Wraps `v` after checking `| |v| - 1 | <= tolerance`.
    pub fn new(v: Vec3<T>) -> Result<Self> {
        let n = v.norm();
        if (n - T::one()).abs() <= T::geometric_tolerance() {
            Ok(Self(v))
        } else {
            Err(Error::DegenerateInput(format!(
                "vector norm {} is not unit",
                n.as_f64()
            )))
        }
    }

    pub fn from_xyz(x: T, y: T, z: T) -> Result<Self> {
        Self::new(Vec3::new(x, y, z))
    }

    pub fn unit_z() -> Self {
        Self(Vec3::unit_z())
    }

    pub fn as_vec(&self) -> Vec3<T> {
        self.0
    }

    pub fn x(&self) -> T {
        self.0.x
    }

    pub fn y(&self) -> T {
        self.0.y
    }

    pub fn z(&self) -> T {
        self.0.z
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.dot(other.0)
    }

    /// Direction for an azimuth/elevation pair in degrees.
    ///
    /// Azimuth turns right about the camera's vertical axis, positive elevation
    /// points up (towards `-y`). `(0, 0)` is the optical axis.
    pub fn from_azimuth_elevation(azimuth_deg: T, elevation_deg: T) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        Self(Vec3::new(
            el.cos() * az.sin(),
            -el.sin(),
            el.cos() * az.cos(),
        ))
    }

    /// Inverse of [`UnitVec3::from_azimuth_elevation`], in degrees.
    pub fn azimuth_elevation(&self) -> (T, T) {
        let v = self.0;
        let az = v.x.atan2(v.z).to_degrees();
        let el = (-v.y).asin().to_degrees();
        (az, el)
    }

    pub fn cast<U: Real>(&self) -> UnitVec3<U> {
        let v: Vec3<U> = self.0.cast();
        UnitVec3(v.scale(U::one() / v.norm()))
    }
}

/// Normalizes a 3D point (e.g. a gaze target in cm) to a direction.
pub fn normalize<T: Real>(p: Vec3<T>) -> Result<UnitVec3<T>> {
    let n = p.norm();
    if !(n > T::lit(MIN_NORMALIZE_NORM)) {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize vector of norm {:e}",
            n.as_f64()
        )));
    }
    Ok(UnitVec3(p.scale(T::one() / n)))
}

/// Angle between two directions in degrees, in `[0, 180]`.
///
/// Evaluated as `atan2(|u x v|, u . v)`, which equals `acos(u . v)` but keeps
/// full precision for nearly parallel inputs.
pub fn angle_between<T: Real>(u: &UnitVec3<T>, v: &UnitVec3<T>) -> T {
    let (a, b) = (u.as_vec(), v.as_vec());
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// A proper rotation of 3-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3<T> {
    matrix: Mat3<T>,
}

impl<T: Real> Rotation3<T> {
    pub fn identity() -> Self {
        Self {
            matrix: Mat3::identity(),
        }
    }

    /// Rotation by `angle_deg` about the unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &UnitVec3<T>, angle_deg: T) -> Self {
        let theta = angle_deg.to_radians();
        let k = Mat3::skew(axis.as_vec());
        let k2 = k.mul_mat(&k);
        let matrix = Mat3::identity()
            .add(&k.scale(theta.sin()))
            .add(&k2.scale(T::one() - theta.cos()));
        Self { matrix }
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.matrix
    }

    pub fn transpose(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn apply(&self, v: &UnitVec3<T>) -> UnitVec3<T> {
        UnitVec3(self.matrix.mul_vec(v.as_vec()))
    }

    pub fn apply_vec(&self, v: Vec3<T>) -> Vec3<T> {
        self.matrix.mul_vec(v)
    }

    /// Rotation angle in degrees, recovered from the trace.
    pub fn angle_deg(&self) -> T {
        let m = &self.matrix.m;
        let two = T::lit(2.0);
        // sin(theta) from the skew part keeps small angles accurate.
        let s = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]).norm() / two;
        let c = (m[0][0] + m[1][1] + m[2][2] - T::one()) / two;
        s.atan2(c).to_degrees()
    }

    /// Largest deviation of `R^T R` from the identity.
    pub fn orthogonality_error(&self) -> T {
        self.matrix
            .transpose()
            .mul_mat(&self.matrix)
            .max_abs_diff(&Mat3::identity())
    }

    pub fn determinant(&self) -> T {
        self.matrix.determinant()
    }
}

/// Minimal rotation taking `a` onto `b`.
///
/// The rotation axis is `a x b`, orthogonal to both inputs, and the angle is
/// [`angle_between`]`(a, b)`. Anti-parallel inputs have no unique minimal
/// rotation and are rejected.
pub fn rotation_onto<T: Real>(a: &UnitVec3<T>, b: &UnitVec3<T>) -> Result<Rotation3<T>> {
    let c = a.dot(b);
    if !(c > T::lit(ANTIPARALLEL_DOT)) {
        return Err(Error::DegenerateInput(format!(
            "directions are (nearly) anti-parallel: dot = {}",
            c.as_f64()
        )));
    }
    // R = I + [v]x + [v]x^2 / (1 + c), v = a x b. Exact for c = 1 as well.
    let v = a.as_vec().cross(b.as_vec());
    let k = Mat3::skew(v);
    let k2 = k.mul_mat(&k);
    let matrix = Mat3::identity()
        .add(&k)
        .add(&k2.scale(T::one() / (T::one() + c)));
    Ok(Rotation3 { matrix })
}

/// Orthonormal right-handed frame `(d_gt, b1, b2)` spanning the tangent plane
/// of the unit sphere at `d_gt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame<T> {
    pub d_gt: UnitVec3<T>,
    pub b1: UnitVec3<T>,
    pub b2: UnitVec3<T>,
}

impl<T: Real> TangentFrame<T> {
    /// Projects a direction into tangent coordinates `(b1 . d, b2 . d)`.
    pub fn project(&self, d: &UnitVec3<T>) -> Vec2<T> {
        project_to_tangent(self, d)
    }

    /// Embeds a tangent vector as a 3D vector `t.x b1 + t.y b2`.
    pub fn tangent_to_world(&self, t: Vec2<T>) -> Vec3<T> {
        self.b1.as_vec().scale(t.x) + self.b2.as_vec().scale(t.y)
    }

    /// Inverse of the orthogonal projection: the direction on the hemisphere
    /// around `d_gt` whose projection is `t`. Requires `|t| <= 1`.
    pub fn lift(&self, t: Vec2<T>) -> Result<UnitVec3<T>> {
        let r2 = t.dot(t);
        if r2 > T::one() {
            return Err(Error::DegenerateInput(format!(
                "tangent vector of length {} cannot be lifted",
                r2.sqrt().as_f64()
            )));
        }
        let v = self.tangent_to_world(t) + self.d_gt.as_vec().scale((T::one() - r2).sqrt());
        // Renormalize to absorb rounding; the exact value is already unit.
        normalize(v)
    }

    /// Maximum absolute pairwise dot product between the three axes.
    pub fn orthogonality_error(&self) -> T {
        let (d, b1, b2) = (self.d_gt, self.b1, self.b2);
        d.dot(&b1)
            .abs()
            .max(d.dot(&b2).abs())
            .max(b1.dot(&b2).abs())
    }

    /// `(d_gt x b1) . b2`, which is `+1` for a right-handed frame.
    pub fn handedness(&self) -> T {
        self.d_gt
            .as_vec()
            .cross(self.b1.as_vec())
            .dot(self.b2.as_vec())
    }
}

/// Canonical tangent frame at `d_gt`.
///
/// `b1` is the Gram-Schmidt projection of the x axis (the y axis when
/// `|x . d_gt| > 0.99`) and `b2 = d_gt x b1`. The construction is a pure
/// function of the input bits.
pub fn make_tangent_frame<T: Real>(d_gt: &UnitVec3<T>) -> TangentFrame<T> {
    let d = d_gt.as_vec();
    let seed = if d.x.abs() > T::lit(FRAME_FALLBACK_DOT) {
        Vec3::unit_y()
    } else {
        Vec3::unit_x()
    };
    let b1 = seed - d.scale(seed.dot(d));
    let b1 = b1.scale(T::one() / b1.norm());
    let b2 = d.cross(b1);
    let b2 = b2.scale(T::one() / b2.norm());
    TangentFrame {
        d_gt: *d_gt,
        b1: UnitVec3(b1),
        b2: UnitVec3(b2),
    }
}

/// Orthogonal projection of `d` onto the tangent plane of `frame`, expressed
/// in the `(b1, b2)` basis. Equivalent to multiplying by the 2x3 matrix with
/// rows `b1^T` and `b2^T`.
pub fn project_to_tangent<T: Real>(frame: &TangentFrame<T>, d: &UnitVec3<T>) -> Vec2<T> {
    Vec2::new(frame.b1.dot(d), frame.b2.dot(d))
}

/// Visual angle for a tangent-plane length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentAngle<T> {
    pub degrees: T,
    /// The input was outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

/// Converts a tangent-plane length (a sine) to degrees of visual angle.
///
/// Lengths above one are clamped to one, negative lengths to zero; either case
/// sets [`TangentAngle::clamped`].
pub fn tangent_length_to_angle<T: Real>(len: T) -> TangentAngle<T> {
    let clamped = len > T::one() || len < T::zero() || len.is_nan();
    let l = if len.is_nan() {
        T::zero()
    } else {
        len.max(T::zero()).min(T::one())
    };
    TangentAngle {
        degrees: l.asin().to_degrees(),
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uv(x: f64, y: f64, z: f64) -> UnitVec3<f64> {
        normalize(Vec3::new(x, y, z)).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let d = normalize(Vec3::new(0.0, 0.0, 300.0)).unwrap();
        assert_eq!(d.as_vec(), Vec3::new(0.0, 0.0, 1.0));
        let d = normalize(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(d.as_vec(), Vec3::new(1.0, 0.0, 0.0));
        assert!(matches!(
            normalize(Vec3::new(0.0, 0.0, 1e-9)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn unit_vec_rejects_non_unit() {
        assert!(UnitVec3::from_xyz(0.0, 0.0, 0.9).is_err());
        assert!(UnitVec3::from_xyz(0.0, 0.0, 1.0 + 1e-12).is_ok());
    }

    #[test]
    fn angle_between_examples() {
        let z = UnitVec3::<f64>::unit_z();
        assert_eq!(angle_between(&z, &z), 0.0);
        assert!((angle_between(&z, &uv(1.0, 0.0, 0.0)) - 90.0).abs() < 1e-12);
        let five = 5f64.to_radians();
        let d = UnitVec3::from_xyz(five.sin(), 0.0, five.cos()).unwrap();
        assert!((angle_between(&z, &d) - 5.0).abs() < 1e-9);
        // Round trip through an explicit rotation about y.
        let y = UnitVec3::from_xyz(0.0, 1.0, 0.0).unwrap();
        let rotated = Rotation3::from_axis_angle(&y, 5.0).apply(&z);
        assert!((angle_between(&z, &rotated) - 5.0).abs() < 1e-9);
        assert!((rotated.as_vec() - d.as_vec()).norm() < 1e-12);
    }

    #[test]
    fn rotation_onto_identity_and_quarter_turn() {
        let z = UnitVec3::<f64>::unit_z();
        let r = rotation_onto(&z, &z).unwrap();
        assert_eq!(r.matrix(), &Mat3::identity());

        let x = uv(1.0, 0.0, 0.0);
        let r = rotation_onto(&z, &x).unwrap();
        let y = UnitVec3::from_xyz(0.0, 1.0, 0.0).unwrap();
        let expected = Rotation3::from_axis_angle(&y, 90.0);
        assert!(r.matrix().max_abs_diff(expected.matrix()) < 1e-12);
        assert!((r.apply(&z).as_vec() - x.as_vec()).norm() < 1e-12);
        assert!((r.angle_deg() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_onto_rejects_antiparallel() {
        let z = UnitVec3::<f64>::unit_z();
        let mz = uv(0.0, 0.0, -1.0);
        assert!(matches!(
            rotation_onto(&z, &mz),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn rotation_axis_is_orthogonal_to_inputs() {
        let a = uv(0.1, -0.2, 1.0);
        let b = uv(0.15, -0.1, 1.0);
        let r = rotation_onto(&a, &b).unwrap();
        let m = r.matrix().m;
        // Axis from the antisymmetric part.
        let axis = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
        let axis = axis.scale(1.0 / axis.norm());
        assert!(axis.dot(a.as_vec()).abs() < 1e-12);
        assert!(axis.dot(b.as_vec()).abs() < 1e-12);
        assert!((r.angle_deg() - angle_between(&a, &b)).abs() < 1e-9);
        assert!(r.orthogonality_error() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_frame_examples() {
        let f = make_tangent_frame(&UnitVec3::<f64>::unit_z());
        assert_eq!(f.b1.as_vec(), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(f.b2.as_vec(), Vec3::new(0.0, 1.0, 0.0));

        // Fallback seed: y projected against x is y itself, b2 = x cross y = z.
        let f = make_tangent_frame(&uv(1.0, 0.0, 0.0));
        assert_eq!(f.b1.as_vec(), Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(f.b2.as_vec(), Vec3::new(0.0, 0.0, 1.0));
        assert!((f.handedness() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_projection_examples() {
        let f = make_tangent_frame(&UnitVec3::<f64>::unit_z());
        assert_eq!(f.project(&f.d_gt), Vec2::new(0.0, 0.0));
        let five = 5f64.to_radians();
        let d = UnitVec3::from_xyz(five.sin(), 0.0, five.cos()).unwrap();
        let t = f.project(&d);
        assert!((t.x - 0.087156).abs() < 1e-6);
        assert!((t.x - five.sin()).abs() < 1e-15);
        assert_eq!(t.y, 0.0);
    }

    #[test]
    fn lift_inverts_projection() {
        let f = make_tangent_frame(&uv(0.276, -0.276, 0.921));
        let t = Vec2::new(0.03, -0.05);
        let d = f.lift(t).unwrap();
        let back = f.project(&d);
        assert!((back - t).norm() < 1e-15);
        assert!(f.lift(Vec2::new(1.0, 0.5)).is_err());
    }

    #[test]
    fn tangent_length_to_angle_examples() {
        assert_eq!(tangent_length_to_angle(0.0f64).degrees, 0.0);
        let a = tangent_length_to_angle(0.087156f64);
        assert!((a.degrees - 5.0).abs() < 1e-4);
        assert!((tangent_length_to_angle(5f64.to_radians().sin()).degrees - 5.0).abs() < 1e-6);
        assert!((tangent_length_to_angle(1.0f64).degrees - 90.0).abs() < 1e-12);
        let c = tangent_length_to_angle(1.5f64);
        assert!(c.clamped);
        assert!((c.degrees - 90.0).abs() < 1e-12);
        assert!(!a.clamped);
    }

    #[test]
    fn azimuth_elevation_round_trip() {
        let d = UnitVec3::<f64>::from_azimuth_elevation(30.0, -20.0);
        let (az, el) = d.azimuth_elevation();
        assert!((az - 30.0).abs() < 1e-12);
        assert!((el + 20.0).abs() < 1e-12);
        // Negative elevation looks down, i.e. +y in camera coordinates.
        assert!(d.y() > 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let a = normalize(Vec3::new(0.1f32, 0.05, 1.0)).unwrap();
        let b = normalize(Vec3::new(0.12f32, 0.02, 1.0)).unwrap();
        let r = rotation_onto(&a, &b).unwrap();
        assert!((r.apply(&a).as_vec() - b.as_vec()).norm() < 1e-6);
        let f = make_tangent_frame(&b);
        assert!(f.orthogonality_error() < 1e-6);
    }
}
