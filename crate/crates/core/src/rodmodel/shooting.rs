//! Shooting on the base loads.
//!
//! The tip is free apart from the tendon terminations, so at `s = L`
//! `n + Σ τᵢtᵢ = 0` and `m + Σ (Rρᵢ) × τᵢtᵢ = 0`. Damped Newton with a
//! forward-difference Jacobian drives that 6-vector to zero; if Newton fails
//! from the straight-rod guess, the tensions are ramped up in stages.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::design::DesignVector;
use super::integrate::{integrate_ivp, MIN_STEPS};
use super::material::DEFAULT_POISSON;
use super::statics::{RodContext, RodState};
use super::{Result, SolverError};
use crate::NUM_TENDONS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Output intervals; configurations have `steps + 1` nodes.
    pub steps: usize,
    /// RK4 steps per output interval.
    pub substeps: usize,
    pub poisson: f64,
    /// Convergence threshold on the 2-norm of the tip residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative forward-difference step: `h = fd_step · (1 + |x|)`.
    pub fd_step: f64,
    /// Smallest Armijo step before the line search gives up.
    pub min_step: f64,
    /// Tension fractions used when plain Newton fails.
    pub homotopy: Vec<f64>,
    /// Midpoint stages that may be inserted when a continuation stage fails.
    pub homotopy_refinements: usize,
    /// Extra chord steps taken after convergence, kept only while they reduce
    /// the residual.
    pub polish_steps: usize,
    /// Angle added to every tendon base angle (rad).
    pub routing_phase: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            steps: 41,
            substeps: 4,
            poisson: DEFAULT_POISSON,
            tolerance: 1e-8,
            max_iterations: 50,
            fd_step: 1e-7,
            min_step: 2f64.powi(-20),
            homotopy: vec![0.25, 0.5, 0.75, 1.0],
            homotopy_refinements: 8,
            polish_steps: 3,
            routing_phase: 0.0,
        }
    }
}

impl SolverConfig {
    /// Same settings on a different output grid.
    pub fn with_steps(&self, steps: usize) -> Self {
        SolverConfig { steps, ..self.clone() }
    }

    /// Same settings with one RK4 step per output interval.
    pub fn single_step(&self, steps: usize) -> Self {
        SolverConfig {
            steps,
            substeps: 1,
            ..self.clone()
        }
    }

    fn integration_steps(&self) -> Result<usize> {
        if self.substeps == 0 {
            return Err(SolverError::InputDomain("substeps must be at least 1".into()));
        }
        if self.steps < MIN_STEPS {
            return Err(SolverError::InputDomain(format!(
                "need at least {MIN_STEPS} output intervals, got {}",
                self.steps
            )));
        }
        Ok(self.steps * self.substeps)
    }
}

/// Internal loads at the clamped base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseLoads {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl BaseLoads {
    pub fn zero() -> Self {
        BaseLoads {
            force: Vector3::zeros(),
            moment: Vector3::zeros(),
        }
    }

    fn to_vector(self) -> Vector6<f64> {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.force);
        x.fixed_rows_mut::<3>(3).copy_from(&self.moment);
        x
    }

    fn from_vector(x: &Vector6<f64>) -> Self {
        BaseLoads {
            force: x.fixed_rows::<3>(0).into(),
            moment: x.fixed_rows::<3>(3).into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub residual_norm: f64,
    /// Newton iterations summed over all stages.
    pub iterations: usize,
    pub homotopy_used: bool,
}

/// Equilibrium shape sampled at the integration nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumConfig {
    pub design: DesignVector,
    pub arclengths: Vec<f64>,
    pub backbone: Vec<Vector3<f64>>,
    pub frames: Vec<Matrix3<f64>>,
    pub internal_forces: Vec<Vector3<f64>>,
    pub internal_moments: Vec<Vector3<f64>>,
    /// `tendon_curves[i][k]` = backbone[k] + frames[k]·ρᵢ(s_k).
    pub tendon_curves: [Vec<Vector3<f64>>; NUM_TENDONS],
    pub base_loads: BaseLoads,
    pub stats: SolveStats,
}

impl EquilibriumConfig {
    fn from_nodes(ctx: &RodContext, nodes: &[RodState], base_loads: BaseLoads, stats: SolveStats) -> Self {
        let tendon_curves = std::array::from_fn(|i| {
            nodes
                .iter()
                .map(|n| n.position + n.orientation * ctx.offset(i, n.arclength).value)
                .collect()
        });
        EquilibriumConfig {
            design: ctx.design,
            arclengths: nodes.iter().map(|n| n.arclength).collect(),
            backbone: nodes.iter().map(|n| n.position).collect(),
            frames: nodes.iter().map(|n| n.orientation).collect(),
            internal_forces: nodes.iter().map(|n| n.internal_force).collect(),
            internal_moments: nodes.iter().map(|n| n.internal_moment).collect(),
            tendon_curves,
            base_loads,
            stats,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.arclengths.len()
    }

    pub fn tip(&self) -> Vector3<f64> {
        *self.backbone.last().expect("configuration has nodes")
    }

    /// Tendon positions node by node: `[t1x, t1y, t1z, t2x, …, t4z]` per node.
    pub fn tendon_positions_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_nodes() * 3 * NUM_TENDONS);
        for k in 0..self.num_nodes() {
            for curve in &self.tendon_curves {
                out.extend_from_slice(curve[k].as_slice());
            }
        }
        out
    }
}

struct Shooter<'a> {
    ctx: RodContext,
    config: &'a SolverConfig,
    steps: usize,
}

impl Shooter<'_> {
    fn residual(&self, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        let loads = BaseLoads::from_vector(x);
        let nodes = integrate_ivp(&RodState::clamped(loads.force, loads.moment), &self.ctx, self.steps)?;
        Ok(tip_mismatch(
            &self.ctx,
            nodes.last().expect("integration returns nodes"),
        ))
    }

    fn jacobian(&self, x: &Vector6<f64>, fx: &Vector6<f64>) -> Result<Matrix6<f64>> {
        let mut jac = Matrix6::zeros();
        for k in 0..6 {
            let h = self.config.fd_step * (1.0 + x[k].abs());
            let mut xp = *x;
            xp[k] += h;
            let col = (self.residual(&xp)? - fx) / h;
            jac.set_column(k, &col);
        }
        Ok(jac)
    }

    /// Damped Newton from `x0`. Returns the final iterate, its residual norm,
    /// the iteration count and whether the tolerance was met.
    fn newton(&self, x0: Vector6<f64>) -> Result<NewtonOutcome> {
        let mut x = x0;
        let mut fx = self.residual(&x)?;
        let mut norm = fx.norm();
        let mut outcome = NewtonOutcome {
            x,
            norm,
            iterations: 0,
            converged: false,
        };
        let mut last_jac = None;
        for it in 0..=self.config.max_iterations {
            outcome = NewtonOutcome {
                x,
                norm,
                iterations: it,
                converged: norm < self.config.tolerance,
            };
            if outcome.converged || it == self.config.max_iterations {
                break;
            }
            let Ok(jac) = self.jacobian(&x, &fx) else { break };
            let Some(step) = jac.lu().solve(&(-fx)) else { break };
            last_jac = Some(jac);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= self.config.min_step {
                let trial = x + step * alpha;
                if let Ok(ft) = self.residual(&trial) {
                    let nt = ft.norm();
                    if nt.is_finite() && nt <= (1.0 - 1e-4 * alpha) * norm {
                        x = trial;
                        fx = ft;
                        norm = nt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if outcome.converged && norm > 0.0 {
            let jac = match last_jac {
                Some(j) => Some(j),
                None => self.jacobian(&x, &fx).ok(),
            };
            if let Some(lu) = jac.map(|j| j.lu()) {
                for _ in 0..self.config.polish_steps {
                    let Some(step) = lu.solve(&(-fx)) else { break };
                    let trial = x + step;
                    match self.residual(&trial) {
                        Ok(ft) if ft.norm() < norm => {
                            x = trial;
                            fx = ft;
                            norm = ft.norm();
                        }
                        _ => break,
                    }
                }
                outcome.x = x;
                outcome.norm = norm;
            }
        }
        Ok(outcome)
    }
}

struct NewtonOutcome {
    x: Vector6<f64>,
    norm: f64,
    iterations: usize,
    converged: bool,
}

/// `[n + Σ τᵢtᵢ; m + Σ (Rρᵢ) × τᵢtᵢ]` at the last integrated node.
fn tip_mismatch(ctx: &RodContext, tip: &RodState) -> Vector6<f64> {
    let tangents = ctx.tendon_tangents(tip);
    let mut force = tip.internal_force;
    let mut moment = tip.internal_moment;
    for (i, t) in tangents.iter().enumerate() {
        let pull = ctx.design.tendon_tensions[i] * t;
        force += pull;
        moment += (tip.orientation * ctx.offset(i, tip.arclength).value).cross(&pull);
    }
    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&force);
    r.fixed_rows_mut::<3>(3).copy_from(&moment);
    r
}

/// Tip boundary-condition violation after integrating from the given base loads.
pub fn tip_residual(base_loads: &BaseLoads, design: &DesignVector, config: &SolverConfig) -> Result<Vector6<f64>> {
    let ctx = RodContext::new(design, config.poisson, config.routing_phase)?;
    Shooter {
        ctx,
        config,
        steps: config.integration_steps()?,
    }
    .residual(&base_loads.to_vector())
}

/// Base loads that would hold a straight rod: `n = −Σ τᵢtᵢ`, `m = −Σ ρᵢ × τᵢtᵢ`
/// with the tendon tangents of the undeformed configuration.
fn straight_rod_guess(ctx: &RodContext) -> Vector6<f64> {
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    for i in 0..NUM_TENDONS {
        let o = ctx.offset(i, 0.0);
        let pull = ctx.design.tendon_tensions[i] * (Vector3::z() + o.d1).normalize();
        force -= pull;
        moment -= o.value.cross(&pull);
    }
    BaseLoads { force, moment }.to_vector()
}

/// Tension continuation through the configured fractions. A stage that fails
/// is split at the midpoint between the last converged fraction and its
/// target, at most `homotopy_refinements` times over the whole ramp.
fn continuation(
    design: &DesignVector,
    ctx: &RodContext,
    config: &SolverConfig,
    direct_norm: f64,
) -> Result<(Vector6<f64>, f64, usize)> {
    if config.homotopy.last() != Some(&1.0) {
        return Err(SolverError::NonConvergence {
            best_residual: direct_norm,
        });
    }
    let mut x: Option<Vector6<f64>> = None;
    let mut done = 0.0;
    let mut norm = direct_norm;
    let mut iterations = 0;
    let mut refinements = 0;
    let mut targets: Vec<f64> = config.homotopy.iter().rev().copied().collect();
    while let Some(&fraction) = targets.last() {
        let staged = RodContext {
            design: design.with_tension_scale(fraction),
            ..*ctx
        };
        let stage = Shooter {
            ctx: staged,
            config,
            steps: config.integration_steps()?,
        };
        let start = x.unwrap_or_else(|| straight_rod_guess(&staged));
        let outcome = stage.newton(start);
        if let Ok(outcome) = &outcome {
            iterations += outcome.iterations;
            if outcome.converged {
                x = Some(outcome.x);
                norm = outcome.norm;
                done = fraction;
                targets.pop();
                continue;
            }
        }
        if refinements == config.homotopy_refinements {
            let best = outcome.map_or(direct_norm, |o| o.norm.min(direct_norm));
            return Err(SolverError::NonConvergence { best_residual: best });
        }
        refinements += 1;
        targets.push(0.5 * (done + fraction));
    }
    Ok((x.expect("ramp ends at full tension"), norm, iterations))
}

/// Equilibrium configuration of `design` by shooting on the base loads.
pub fn solve_equilibrium(design: &DesignVector, config: &SolverConfig) -> Result<EquilibriumConfig> {
    let ctx = RodContext::new(design, config.poisson, config.routing_phase)?;
    let steps = config.integration_steps()?;
    let shooter = Shooter { ctx, config, steps };
    let direct = shooter.newton(straight_rod_guess(&ctx))?;
    let (x, norm, iterations, homotopy_used) = if direct.converged {
        (direct.x, direct.norm, direct.iterations, false)
    } else {
        let (x, norm, stage_iterations) = continuation(design, &ctx, config, direct.norm)?;
        (x, norm, direct.iterations + stage_iterations, true)
    };
    let loads = BaseLoads::from_vector(&x);
    let all = integrate_ivp(&RodState::clamped(loads.force, loads.moment), &ctx, steps)?;
    let nodes: Vec<RodState> = all.into_iter().step_by(config.substeps).collect();
    let stats = SolveStats {
        residual_norm: norm,
        iterations,
        homotopy_used,
    };
    Ok(EquilibriumConfig::from_nodes(&ctx, &nodes, loads, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(tensions: [f64; 4]) -> DesignVector {
        DesignVector {
            tendon_offsets: [0.01; 4],
            tendon_pitches: [0.0; 4],
            tendon_tensions: tensions,
            backbone_radius: 0.001,
            length: 0.2,
            youngs_modulus: 30e9,
        }
    }

    #[test]
    fn zero_tension_residual_is_exactly_zero() {
        let r = tip_residual(&BaseLoads::zero(), &design([0.0; 4]), &SolverConfig::default()).unwrap();
        assert_eq!(r, Vector6::zeros());
    }

    #[test]
    fn unloaded_rod_transmits_base_force() {
        let eps = 1e-3;
        let loads = BaseLoads {
            force: Vector3::new(0.0, 0.0, eps),
            moment: Vector3::zeros(),
        };
        let r = tip_residual(&loads, &design([0.0; 4]), &SolverConfig::default()).unwrap();
        assert_eq!(r.fixed_rows::<3>(0).into_owned(), Vector3::new(0.0, 0.0, eps));
        assert!(r.fixed_rows::<3>(3).norm() < 1e-18);
    }

    #[test]
    fn zero_tension_solution_is_straight() {
        let eq = solve_equilibrium(&design([0.0; 4]), &SolverConfig::default()).unwrap();
        assert_eq!(eq.num_nodes(), 42);
        assert_eq!(eq.stats.iterations, 0);
        for k in 0..eq.num_nodes() {
            assert!((eq.backbone[k] - Vector3::new(0.0, 0.0, eq.arclengths[k])).norm() < 1e-12);
            assert!((eq.frames[k] - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn single_tendon_converges_and_bends_toward_tendon() {
        let eq = solve_equilibrium(&design([5.0, 0.0, 0.0, 0.0]), &SolverConfig::default()).unwrap();
        assert!(eq.stats.residual_norm < 1e-8);
        assert!(!eq.stats.homotopy_used);
        let tip = eq.tip();
        assert!(tip.x > 0.0, "tip {tip:?}");
        assert!(tip.y.abs() < 1e-8 * 0.2);
        let recomputed = tip_residual(&eq.base_loads, &eq.design, &SolverConfig::default()).unwrap();
        assert!(recomputed.norm() < 1e-8);
    }

    #[test]
    fn tendon_curves_follow_frames() {
        let eq = solve_equilibrium(&design([1.0, 2.0, 0.0, 0.5]), &SolverConfig::default()).unwrap();
        let ctx = RodContext::new(&eq.design, 0.3, 0.0).unwrap();
        for k in 0..eq.num_nodes() {
            for i in 0..NUM_TENDONS {
                let expected = eq.backbone[k] + eq.frames[k] * ctx.offset(i, eq.arclengths[k]).value;
                assert_eq!(eq.tendon_curves[i][k], expected);
            }
        }
        let flat = eq.tendon_positions_flat();
        assert_eq!(flat.len(), 42 * 12);
        assert_eq!(flat[12 + 3 + 2], eq.tendon_curves[1][1].z);
    }
}
