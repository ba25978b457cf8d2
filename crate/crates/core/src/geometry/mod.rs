//! Rotation algebra, canonicalization, relative-frame transforms, forward
//! kinematics and Procrustes alignment. All pure functions.

mod canonical;
mod fk;
mod procrustes;
mod skeleton;

pub use canonical::{canonicalize, relative_frame, OrientationConvention};
pub use fk::{forward_kinematics, JointPositions};
pub use procrustes::{procrustes_align, ProcrustesResult};
pub use skeleton::{Joint, Skeleton, SKELETON_JOINTS};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("skeleton parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("skeleton has {got} joints, expected {expected}")]
    JointCount { got: usize, expected: usize },
    #[error("skeleton joint `{joint}`: {message}")]
    BadJoint { joint: String, message: String },
    #[error("sequence has {got} joint rotations, skeleton expects {expected}")]
    JointMismatch { got: usize, expected: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Rodrigues map: axis-angle vector (axis scaled by angle, radians) to a
/// rotation matrix.
pub fn axis_angle_to_matrix(v: [f64; 3]) -> Matrix3<f64> {
    let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if angle < 1e-12 {
        // first-order term keeps the map smooth through zero
        return Matrix3::identity() + skew(Vector3::new(v[0], v[1], v[2]));
    }
    let axis = Vector3::new(v[0] / angle, v[1] / angle, v[2] / angle);
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Inverse Rodrigues map; the returned magnitude lies in [0, pi].
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> [f64; 3] {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    // atan2 of (sin, cos) stays accurate where acos alone loses digits
    // (both ends of [0, pi])
    let sin = (skew.norm() / 2.0).min(1.0);
    let angle = sin.atan2(cos);
    if angle < 1e-9 {
        return [skew[0] / 2.0, skew[1] / 2.0, skew[2] / 2.0];
    }
    if angle > std::f64::consts::PI - 1e-3 {
        // near pi the skew part vanishes; recover the axis from the
        // symmetric part via R_ii = cos + (1 - cos) a_i^2
        let one_minus_cos = 1.0 - cos;
        let d = [
            (r[(0, 0)] - cos) / one_minus_cos,
            (r[(1, 1)] - cos) / one_minus_cos,
            (r[(2, 2)] - cos) / one_minus_cos,
        ];
        let i = if d[0] >= d[1] && d[0] >= d[2] {
            0
        } else if d[1] >= d[2] {
            1
        } else {
            2
        };
        let mut a = Vector3::zeros();
        a[i] = d[i].max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                a[j] = (r[(i, j)] + r[(j, i)]) / (2.0 * one_minus_cos * a[i]);
            }
        }
        a.normalize_mut();
        // sin(angle) > 0 below pi fixes the sign; at exactly pi either works
        if a.dot(&skew) < 0.0 {
            a = -a;
        }
        return [a[0] * angle, a[1] * angle, a[2] * angle];
    }
    let scale = angle / (2.0 * sin);
    [skew[0] * scale, skew[1] * scale, skew[2] * scale]
}

/// Wraps an axis-angle vector so its magnitude lies in [0, pi].
pub fn wrap_axis_angle(v: [f64; 3]) -> [f64; 3] {
    let mag = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if mag <= std::f64::consts::PI || mag < 1e-12 {
        return v;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut wrapped = mag % two_pi;
    if wrapped > std::f64::consts::PI {
        wrapped -= two_pi;
    }
    let scale = wrapped / mag;
    [v[0] * scale, v[1] * scale, v[2] * scale]
}

pub(crate) fn skew(v: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub(crate) fn to_vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

pub(crate) fn from_vec3(v: Vector3<f64>) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_vector_maps_to_identity() {
        let r = axis_angle_to_matrix([0.0, 0.0, 0.0]);
        assert!((r - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn quarter_turn_about_y_maps_x_to_minus_z() {
        let r = axis_angle_to_matrix([0.0, std::f64::consts::FRAC_PI_2, 0.0]);
        let mapped = r * Vector3::new(1.0, 0.0, 0.0);
        // independent Rodrigues evaluation: cos(pi/2) x + sin(pi/2) (y x x)
        assert!((mapped - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn rotation_matrices_are_orthonormal_with_unit_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let v = [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ];
            let r = axis_angle_to_matrix(v);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn roundtrip_over_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let v = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let r = axis_angle_to_matrix(v);
            let back = axis_angle_to_matrix(matrix_to_axis_angle(&r));
            assert!(
                (r - back).norm() < 1e-9,
                "roundtrip failed for {v:?}: err {}",
                (r - back).norm()
            );
        }
    }

    #[test]
    fn roundtrip_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0f64),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            for angle in [
                std::f64::consts::PI,
                std::f64::consts::PI - 1e-7,
                std::f64::consts::PI - 1e-4,
            ] {
                let v = [axis[0] * angle, axis[1] * angle, axis[2] * angle];
                let r = axis_angle_to_matrix(v);
                let aa = matrix_to_axis_angle(&r);
                let mag = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
                assert!(mag <= std::f64::consts::PI + 1e-12);
                let back = axis_angle_to_matrix(aa);
                assert!((r - back).norm() < 1e-9, "angle {angle}: err {}", (r - back).norm());
            }
        }
    }

    #[test]
    fn inverse_magnitude_stays_in_zero_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..500 {
            let v = [
                rng.random_range(-3.1..3.1),
                rng.random_range(-3.1..3.1),
                rng.random_range(-3.1..3.1),
            ];
            let aa = matrix_to_axis_angle(&axis_angle_to_matrix(v));
            let mag = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
            assert!(mag <= std::f64::consts::PI + 1e-12);
        }
    }

    #[test]
    fn wrap_reduces_large_magnitudes() {
        let v = [0.0, 4.0, 0.0];
        let w = wrap_axis_angle(v);
        let mag = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        assert!(mag <= std::f64::consts::PI);
        // same rotation
        let d = axis_angle_to_matrix(v) - axis_angle_to_matrix(w);
        assert!(d.norm() < 1e-12);
    }
}
