//! Right-hand side of the rod–tendon statics ODE.
//!
//! State is `(r, R, n, m)` with `n`, `m` expressed in the world frame and the
//! linear constitutive law applied in the body frame:
//! `Rᵀn = K_s(ν − ν₀)`, `Rᵀm = K_b(κ − κ₀)`.
//!
//! A tendon with tension τ and unit tangent `t` loads the rod with
//! `f = τ dt/ds` (and the moment `(Rρ) × f`). Because `dt/ds` contains the
//! strain rates `ν′`, `κ′`, the loads are implicit; differentiating the
//! constitutive law yields a symmetric positive-definite 6×6 system in
//! `(ν′, κ′)` which is factorised at every evaluation.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::design::{tendon_offset_with_phase, DesignVector, TendonOffset};
use super::material::{stiffness_from_material, StiffnessMatrices};
use super::{Result, SolverError};
use crate::NUM_TENDONS;

const MAX_CONDITION: f64 = 1e12;

/// Point on the rod: centerline position, frame, internal loads and arclength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RodState {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    pub internal_force: Vector3<f64>,
    pub internal_moment: Vector3<f64>,
    pub arclength: f64,
}

impl RodState {
    /// Clamped base: `r = 0`, `R = I`, with the given internal loads.
    pub fn clamped(force: Vector3<f64>, moment: Vector3<f64>) -> Self {
        RodState {
            position: Vector3::zeros(),
            orientation: Matrix3::identity(),
            internal_force: force,
            internal_moment: moment,
            arclength: 0.0,
        }
    }

    pub(crate) fn pack(&self) -> [f64; 18] {
        let mut y = [0.0; 18];
        y[0..3].copy_from_slice(self.position.as_slice());
        y[3..12].copy_from_slice(self.orientation.as_slice());
        y[12..15].copy_from_slice(self.internal_force.as_slice());
        y[15..18].copy_from_slice(self.internal_moment.as_slice());
        y
    }

    pub(crate) fn unpack(y: &[f64; 18], arclength: f64) -> Self {
        RodState {
            position: Vector3::from_column_slice(&y[0..3]),
            orientation: Matrix3::from_column_slice(&y[3..12]),
            internal_force: Vector3::from_column_slice(&y[12..15]),
            internal_moment: Vector3::from_column_slice(&y[15..18]),
            arclength,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(|v| v.is_finite())
    }
}

/// Body-frame strains at a point, with their undeformed references.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainState {
    pub shear_extension: Vector3<f64>,
    pub bending_torsion: Vector3<f64>,
    pub reference_shear_extension: Vector3<f64>,
    pub reference_bending_torsion: Vector3<f64>,
}

/// `d/ds` of every component of a [`RodState`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl StateDerivative {
    pub(crate) fn pack(&self) -> [f64; 18] {
        let mut y = [0.0; 18];
        y[0..3].copy_from_slice(self.position.as_slice());
        y[3..12].copy_from_slice(self.orientation.as_slice());
        y[12..15].copy_from_slice(self.force.as_slice());
        y[15..18].copy_from_slice(self.moment.as_slice());
        y
    }
}

/// Design-level constants shared by every right-hand-side evaluation.
#[derive(Clone, Copy, Debug)]
pub struct RodContext {
    pub design: DesignVector,
    pub stiffness: StiffnessMatrices,
    /// Rotation added to every tendon base angle ψᵢ.
    pub routing_phase: f64,
}

impl RodContext {
    pub fn new(design: &DesignVector, poisson: f64, routing_phase: f64) -> Result<Self> {
        design.validate()?;
        let stiffness = stiffness_from_material(design.youngs_modulus, design.backbone_radius, poisson)?;
        Ok(RodContext {
            design: *design,
            stiffness,
            routing_phase,
        })
    }

    pub(crate) fn offset(&self, tendon: usize, s: f64) -> TendonOffset {
        let s = s.clamp(0.0, self.design.length);
        tendon_offset_with_phase(&self.design, tendon, s, self.routing_phase)
            .expect("tendon index and arclength are in range")
    }

    pub fn strains(&self, state: &RodState) -> StrainState {
        let rt = state.orientation.transpose();
        let n_body = rt * state.internal_force;
        let m_body = rt * state.internal_moment;
        let nu0 = Vector3::z();
        StrainState {
            shear_extension: n_body.component_div(&self.stiffness.shear) + nu0,
            bending_torsion: m_body.component_div(&self.stiffness.bending),
            reference_shear_extension: nu0,
            reference_bending_torsion: Vector3::zeros(),
        }
    }

    /// World-frame unit tangents of every tendon at `state`.
    pub fn tendon_tangents(&self, state: &RodState) -> [Vector3<f64>; NUM_TENDONS] {
        let strain = self.strains(state);
        std::array::from_fn(|i| {
            let o = self.offset(i, state.arclength);
            let a = strain.shear_extension + strain.bending_torsion.cross(&o.value) + o.d1;
            state.orientation * a.normalize()
        })
    }
}

fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Derivative of the rod state along arclength under tendon loading.
pub fn rod_ode_rhs(state: &RodState, ctx: &RodContext) -> Result<StateDerivative> {
    let rot = &state.orientation;
    let rt = rot.transpose();
    let n_body = rt * state.internal_force;
    let m_body = rt * state.internal_moment;
    let strain = ctx.strains(state);
    let nu = strain.shear_extension;
    let kappa = strain.bending_torsion;

    // Tendon contributions: R^T f_i = g_i + A_i (ν' − ρ̂ κ').
    let mut a11 = Matrix3::zeros();
    let mut a12 = Matrix3::zeros();
    let mut a21 = Matrix3::zeros();
    let mut a22 = Matrix3::zeros();
    let mut g_force = Vector3::zeros();
    let mut g_moment = Vector3::zeros();
    for i in 0..NUM_TENDONS {
        let tension = ctx.design.tendon_tensions[i];
        if tension == 0.0 {
            continue;
        }
        let o = ctx.offset(i, state.arclength);
        let a = nu + kappa.cross(&o.value) + o.d1;
        let norm = a.norm();
        let unit = a / norm;
        let projector = (Matrix3::identity() - unit * unit.transpose()) * (tension / norm);
        let rho_hat = hat(&o.value);
        let known = kappa.cross(&o.d1) + o.d2;
        let g = tension * kappa.cross(&unit) + projector * known;

        let projector_rho = projector * rho_hat;
        a11 += projector;
        a12 -= projector_rho;
        a21 += rho_hat * projector;
        a22 -= rho_hat * projector_rho;
        g_force += g;
        g_moment += o.value.cross(&g);
    }

    let mut system = Matrix6::zeros();
    system
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::from_diagonal(&ctx.stiffness.shear) + a11));
    system.fixed_view_mut::<3, 3>(0, 3).copy_from(&a12);
    system.fixed_view_mut::<3, 3>(3, 0).copy_from(&a21);
    system
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::from_diagonal(&ctx.stiffness.bending) + a22));

    let rhs_force = -kappa.cross(&n_body) - g_force;
    let rhs_moment = -kappa.cross(&m_body) - nu.cross(&n_body) - g_moment;
    let mut rhs = Vector6::zeros();
    rhs.fixed_rows_mut::<3>(0).copy_from(&rhs_force);
    rhs.fixed_rows_mut::<3>(3).copy_from(&rhs_moment);

    let degenerate = |condition| SolverError::Degenerate {
        s: state.arclength,
        condition,
    };
    let chol = system.cholesky().ok_or_else(|| degenerate(f64::INFINITY))?;
    let condition = column_norm1(&system) * column_norm1(&chol.inverse());
    if !(condition <= MAX_CONDITION) {
        return Err(degenerate(condition));
    }
    let rates = chol.solve(&rhs);
    let nu_rate: Vector3<f64> = rates.fixed_rows::<3>(0).into();
    let kappa_rate: Vector3<f64> = rates.fixed_rows::<3>(3).into();

    let load_body = g_force + a11 * nu_rate + a12 * kappa_rate;
    let moment_body = g_moment + a21 * nu_rate + a22 * kappa_rate;

    Ok(StateDerivative {
        position: rot * nu,
        orientation: rot * hat(&kappa),
        force: -(rot * load_body),
        moment: -(rot * (nu.cross(&n_body) + moment_body)),
    })
}

/// Induced 1-norm (max column sum).
fn column_norm1(m: &Matrix6<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
