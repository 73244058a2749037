use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{Result, SolverError};

/// Poisson ratio used when none is configured.
pub const DEFAULT_POISSON: f64 = 0.3;

/// Diagonal shear/extension and bending/torsion stiffnesses of a solid
/// circular section, stored as their diagonals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StiffnessMatrices {
    /// `diag(GA, GA, EA)`
    pub shear: Vector3<f64>,
    /// `diag(EI, EI, GJ)`
    pub bending: Vector3<f64>,
}

impl StiffnessMatrices {
    pub fn from_section(youngs_modulus: f64, area: f64, second_moment: f64, poisson: f64) -> Self {
        let shear_modulus = youngs_modulus / (2.0 * (1.0 + poisson));
        let polar = 2.0 * second_moment;
        StiffnessMatrices {
            shear: Vector3::new(shear_modulus * area, shear_modulus * area, youngs_modulus * area),
            bending: Vector3::new(
                youngs_modulus * second_moment,
                youngs_modulus * second_moment,
                shear_modulus * polar,
            ),
        }
    }
}

pub fn stiffness_from_material(youngs_modulus: f64, radius: f64, poisson: f64) -> Result<StiffnessMatrices> {
    if !(youngs_modulus > 0.0 && youngs_modulus.is_finite()) {
        return Err(SolverError::InputDomain(format!(
            "Young's modulus {youngs_modulus} must be positive"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SolverError::InputDomain(format!("radius {radius} must be positive")));
    }
    if !(0.0..0.5).contains(&poisson) {
        return Err(SolverError::InputDomain(format!(
            "Poisson ratio {poisson} outside [0, 0.5)"
        )));
    }
    let area = PI * radius * radius;
    let second_moment = PI * radius.powi(4) / 4.0;
    Ok(StiffnessMatrices::from_section(
        youngs_modulus,
        area,
        second_moment,
        poisson,
    ))
}
