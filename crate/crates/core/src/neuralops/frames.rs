//! Rotation frames from two raw 3-vectors, and the pose → tendon map.

use nalgebra::{Matrix3, Vector3};

use super::ModelError;
use crate::rodmodel::{tendon_offset, DesignVector};
use crate::NUM_TENDONS;

/// Degeneracy threshold on the norms met during orthonormalization.
pub const GS_EPSILON: f64 = 1e-9;

/// Frame with columns `ê₁ = a₁/‖a₁‖`, `ê₂ = normalize(a₂ − (ê₁·a₂)ê₁)`,
/// `ê₃ = ê₁ × ê₂`. Fails when either norm is below [`GS_EPSILON`].
pub fn gram_schmidt_frame(a1: &Vector3<f64>, a2: &Vector3<f64>) -> Result<Matrix3<f64>, ModelError> {
    let n1 = a1.norm();
    if !(n1 > GS_EPSILON) {
        return Err(ModelError::DegenerateFrame(format!("|a1| = {n1:e}")));
    }
    let e1 = a1 / n1;
    let u = a2 - e1 * e1.dot(a2);
    let n2 = u.norm();
    if !(n2 > GS_EPSILON) {
        return Err(ModelError::DegenerateFrame(format!("|a2 - (e1.a2)e1| = {n2:e}")));
    }
    let e2 = u / n2;
    Ok(Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]))
}

/// Training-time frame: norms are smoothed to `sqrt(|v|² + ε²)` so that
/// gradients stay finite on degenerate outputs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SmoothFrame {
    a1: Vector3<f64>,
    a2: Vector3<f64>,
    r1: f64,
    u: Vector3<f64>,
    r2: f64,
    pub frame: Matrix3<f64>,
}

impl SmoothFrame {
    pub fn new(a1: Vector3<f64>, a2: Vector3<f64>) -> Self {
        let eps2 = GS_EPSILON * GS_EPSILON;
        let r1 = (a1.norm_squared() + eps2).sqrt();
        let e1 = a1 / r1;
        let u = a2 - e1 * e1.dot(&a2);
        let r2 = (u.norm_squared() + eps2).sqrt();
        let e2 = u / r2;
        SmoothFrame {
            a1,
            a2,
            r1,
            u,
            r2,
            frame: Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]),
        }
    }

    /// Pulls back a gradient on the frame to the raw columns `(a₁, a₂)`.
    pub fn vjp(&self, d_frame: &Matrix3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let e1 = self.frame.column(0).into_owned();
        let e2 = self.frame.column(1).into_owned();
        let g3 = d_frame.column(2).into_owned();
        let mut de1 = d_frame.column(0) + e2.cross(&g3);
        let de2 = d_frame.column(1) + g3.cross(&e1);

        let du = de2 / self.r2 - self.u * (self.u.dot(&de2) / self.r2.powi(3));
        let proj = e1.dot(&self.a2);
        let e1_du = e1.dot(&du);
        let da2 = du - e1 * e1_du;
        de1 -= du * proj + self.a2 * e1_du;

        let da1 = de1 / self.r1 - self.a1 * (self.a1.dot(&de1) / self.r1.powi(3));
        (da1, da2)
    }
}

/// Tendon positions `r̃ + R̃·ρᵢ(s)` implied by a backbone pose.
pub fn pose_to_tendons(
    position: &Vector3<f64>,
    frame: &Matrix3<f64>,
    design: &DesignVector,
    s: f64,
) -> Result<[Vector3<f64>; NUM_TENDONS], ModelError> {
    let mut out = [Vector3::zeros(); NUM_TENDONS];
    for (i, t) in out.iter_mut().enumerate() {
        let rho = tendon_offset(design, i, s).map_err(|e| ModelError::Shape(e.to_string()))?;
        *t = position + frame * rho;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    #[test]
    fn canonical_frames() {
        let r = gram_schmidt_frame(&Vector3::new(2.0, 0.0, 0.0), &Vector3::new(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(r, Matrix3::identity());
        let r = gram_schmidt_frame(&Vector3::new(0.0, 3.0, 0.0), &Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(r, Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]));
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(gram_schmidt_frame(&Vector3::zeros(), &Vector3::x()).is_err());
        assert!(gram_schmidt_frame(&Vector3::x(), &Vector3::new(3.0, 0.0, 0.0)).is_err());
        // The smoothed version stays finite.
        let f = SmoothFrame::new(Vector3::zeros(), Vector3::zeros());
        let (g1, g2) = f.vjp(&Matrix3::repeat(1.0));
        assert!(f.frame.iter().chain(g1.iter()).chain(g2.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn random_pairs_are_rotations() {
        let mut rng = stream(3, Domain::Init, 0);
        for _ in 0..10_000 {
            let a1 = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let a2 = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let Ok(r) = gram_schmidt_frame(&a1, &a2) else { continue };
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_vjp_matches_finite_differences() {
        let a1 = Vector3::new(0.3, -1.1, 0.4);
        let a2 = Vector3::new(0.9, 0.2, -0.5);
        let w = Matrix3::new(0.3, -0.2, 0.5, 1.1, 0.7, -0.4, 0.05, 0.6, -0.9);
        let f = |a1: Vector3<f64>, a2: Vector3<f64>| SmoothFrame::new(a1, a2).frame.component_mul(&w).sum();
        let (g1, g2) = SmoothFrame::new(a1, a2).vjp(&w);
        let h = 1e-6;
        for k in 0..3 {
            let e = Vector3::ith(k, h);
            let fd1 = (f(a1 + e, a2) - f(a1 - e, a2)) / (2.0 * h);
            let fd2 = (f(a1, a2 + e) - f(a1, a2 - e)) / (2.0 * h);
            assert!((fd1 - g1[k]).abs() < 1e-8, "{fd1} {}", g1[k]);
            assert!((fd2 - g2[k]).abs() < 1e-8, "{fd2} {}", g2[k]);
        }
    }

    #[test]
    fn pose_maps_to_offsets() {
        let design = DesignVector {
            tendon_offsets: [0.01, 0.008, 0.006, 0.009],
            tendon_pitches: [3.0, 0.0, -2.0, 1.0],
            tendon_tensions: [0.0; 4],
            backbone_radius: 0.001,
            length: 0.2,
            youngs_modulus: 30e9,
        };
        let t = pose_to_tendons(&Vector3::zeros(), &Matrix3::identity(), &design, 0.1).unwrap();
        for (i, ti) in t.iter().enumerate() {
            assert_eq!(*ti, tendon_offset(&design, i, 0.1).unwrap());
        }
        let v = Vector3::new(0.1, -0.2, 0.3);
        let frame = gram_schmidt_frame(&Vector3::new(1.0, 2.0, 0.5), &Vector3::new(-0.3, 0.1, 1.0)).unwrap();
        let base = pose_to_tendons(&Vector3::zeros(), &frame, &design, 0.05).unwrap();
        let moved = pose_to_tendons(&v, &frame, &design, 0.05).unwrap();
        for i in 0..4 {
            assert!((moved[i] - base[i] - v).norm() < 1e-15);
        }
    }
}
