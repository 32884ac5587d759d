//! Rigid probe poses.

use crate::{Error, Result};

/// Probe pose: frame-local millimetres to world millimetres.
///
/// A frame pixel at column `c`, row `r` sits at local `(c * sx, r * sy, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePose {
    pub translation: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
}

impl FramePose {
    pub fn new(translation: [f64; 3], rotation: [f64; 4]) -> Result<Self> {
        let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("pose quaternion has norm {norm}, expected 1")));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(Self { translation, rotation })
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self { translation: t, rotation: [1.0, 0.0, 0.0, 0.0] }
    }

    /// Rotation of `radians` about the world x axis (lateral), then translation.
    pub fn tilted(t: [f64; 3], radians: f64) -> Self {
        let (s, c) = (radians / 2.0).sin_cos();
        Self { translation: t, rotation: [c, s, 0.0, 0.0] }
    }

    /// From an axis-angle rotation; the axis need not be normalized.
    pub fn from_axis_angle(t: [f64; 3], axis: [f64; 3], radians: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (radians / 2.0).sin_cos();
        let mut q = [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= qn);
        Self { translation: t, rotation: q }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [w, x, y, z] = self.rotation;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        apply(&self.matrix(), self.translation, p)
    }

    pub fn inverse_transform(&self, world: [f64; 3]) -> [f64; 3] {
        let m = self.matrix();
        let d = [
            world[0] - self.translation[0],
            world[1] - self.translation[1],
            world[2] - self.translation[2],
        ];
        [
            m[0][0] * d[0] + m[1][0] * d[1] + m[2][0] * d[2],
            m[0][1] * d[0] + m[1][1] * d[1] + m[2][1] * d[2],
            m[0][2] * d[0] + m[1][2] * d[1] + m[2][2] * d[2],
        ]
    }

    /// Distance between the two poses' origins, mm.
    pub fn displacement(&self, other: &FramePose) -> f64 {
        let d: f64 = (0..3).map(|i| (self.translation[i] - other.translation[i]).powi(2)).sum();
        d.sqrt()
    }

    pub fn same_as(&self, other: &FramePose) -> bool {
        self.translation == other.translation && self.rotation == other.rotation
    }
}

pub(crate) fn apply(m: &[[f64; 3]; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + t[0],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + t[1],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + t[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_unit_quaternion_is_rejected() {
        assert!(FramePose::new([0.0; 3], [1.0, 0.1, 0.0, 0.0]).is_err());
        assert!(FramePose::new([0.0; 3], [1.0, 0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn tilt_about_lateral_axis() {
        let p = FramePose::tilted([0.0, 0.0, 10.0], 0.1);
        let w = p.transform([5.0, 2.0, 0.0]);
        assert!((w[0] - 5.0).abs() < 1e-15);
        assert!((w[1] - 2.0 * 0.1f64.cos()).abs() < 1e-15);
        assert!((w[2] - (10.0 + 2.0 * 0.1f64.sin())).abs() < 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        let p = FramePose::from_axis_angle([1.0, -2.0, 3.0], [0.3, 1.0, -0.2], 0.7);
        let q = [4.0, 5.0, 6.0];
        let back = p.inverse_transform(p.transform(q));
        for i in 0..3 {
            assert!((back[i] - q[i]).abs() < 1e-12);
        }
    }
}
