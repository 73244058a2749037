use nalgebra::Matrix3;

use super::statics::{rod_ode_rhs, RodContext, RodState};
use super::{Result, SolverError};

/// Coarsest grid: one interval per output sample of a 42-node configuration.
pub const MIN_STEPS: usize = 41;

/// Fixed-step classical RK4 from `base` to the tip in `steps` intervals.
///
/// Returns the `steps + 1` node states. The frame is projected back onto
/// SO(3) after every step.
pub fn integrate_ivp(base: &RodState, ctx: &RodContext, steps: usize) -> Result<Vec<RodState>> {
    if steps < MIN_STEPS {
        return Err(SolverError::InputDomain(format!(
            "integration needs at least {MIN_STEPS} steps, got {steps}"
        )));
    }
    let length = ctx.design.length;
    let h = length / steps as f64;
    let mut nodes = Vec::with_capacity(steps + 1);
    let mut y = base.pack();
    nodes.push(*base);
    for k in 0..steps {
        let s = k as f64 * h;
        y = rk4_step(ctx, &y, s, h)?;
        let s_next = if k + 1 == steps { length } else { (k + 1) as f64 * h };
        let mut state = RodState::unpack(&y, s_next);
        state.orientation = project_to_rotation(&state.orientation);
        if !state.is_finite() {
            return Err(SolverError::Blowup { s: s_next });
        }
        y = state.pack();
        nodes.push(state);
    }
    Ok(nodes)
}

fn derivative(ctx: &RodContext, y: &[f64; 18], s: f64) -> Result<[f64; 18]> {
    let state = RodState::unpack(y, s);
    if !state.is_finite() {
        return Err(SolverError::Blowup { s });
    }
    Ok(rod_ode_rhs(&state, ctx)?.pack())
}

fn axpy(y: &[f64; 18], a: f64, k: &[f64; 18]) -> [f64; 18] {
    std::array::from_fn(|i| y[i] + a * k[i])
}

fn rk4_step(ctx: &RodContext, y: &[f64; 18], s: f64, h: f64) -> Result<[f64; 18]> {
    let k1 = derivative(ctx, y, s)?;
    let k2 = derivative(ctx, &axpy(y, 0.5 * h, &k1), s + 0.5 * h)?;
    let k3 = derivative(ctx, &axpy(y, 0.5 * h, &k2), s + 0.5 * h)?;
    let k4 = derivative(ctx, &axpy(y, h, &k3), s + h)?;
    Ok(std::array::from_fn(|i| {
        y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

/// Polar projection by Newton–Schulz iteration; `R` is already within
/// roundoff-scale distance of SO(3), so two iterations reach machine precision.
fn project_to_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut q = *r;
    for _ in 0..2 {
        q = q * (Matrix3::identity() * 3.0 - q.transpose() * q) * 0.5;
    }
    q
}
