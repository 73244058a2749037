//! Physical and numerical properties of the equilibrium solver.

use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use tdcrop::rodmodel::{
    rod_ode_rhs, solve_equilibrium, tip_residual, DesignVector, EquilibriumConfig, RodContext, RodState, SolverConfig,
};

fn planar_design(tensions: [f64; 4]) -> DesignVector {
    DesignVector {
        tendon_offsets: [0.01; 4],
        tendon_pitches: [0.0; 4],
        tendon_tensions: tensions,
        backbone_radius: 0.001,
        length: 0.2,
        youngs_modulus: 30e9,
    }
}

fn helical_design() -> DesignVector {
    DesignVector {
        tendon_offsets: [0.008, 0.006, 0.0095, 0.007],
        tendon_pitches: [10.0, -5.0, 0.0, 17.5],
        tendon_tensions: [2.0, 0.5, 0.0, 3.0],
        backbone_radius: 0.0008,
        length: 0.25,
        youngs_modulus: 40e9,
    }
}

fn lateral(v: &Vector3<f64>) -> f64 {
    v.x.hypot(v.y)
}

fn node_state(eq: &EquilibriumConfig, k: usize) -> RodState {
    RodState {
        position: eq.backbone[k],
        orientation: eq.frames[k],
        internal_force: eq.internal_forces[k],
        internal_moment: eq.internal_moments[k],
        arclength: eq.arclengths[k],
    }
}

#[test]
fn frames_orthonormal_and_residual_certified() {
    let eq = solve_equilibrium(&helical_design(), &SolverConfig::default()).unwrap();
    assert_eq!(eq.num_nodes(), 42);
    for r in &eq.frames {
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
        assert!(r.determinant() > 0.0);
    }
    assert!(eq.stats.residual_norm < 1e-8);
    let recomputed = tip_residual(&eq.base_loads, &eq.design, &SolverConfig::default()).unwrap();
    assert!(recomputed.norm() < 1e-8);
    assert!(eq.arclengths.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(eq.arclengths[0], 0.0);
    assert_eq!(*eq.arclengths.last().unwrap(), eq.design.length);
}

#[test]
fn single_tendon_stays_in_its_plane() {
    let eq = solve_equilibrium(&planar_design([5.0, 0.0, 0.0, 0.0]), &SolverConfig::default()).unwrap();
    for p in &eq.backbone {
        assert!(p.y.abs() < 1e-8 * 0.2, "out-of-plane {}", p.y);
    }
    assert!(eq.tip().x > 0.01);
}

#[test]
fn opposing_and_equal_tendons_keep_tip_on_axis() {
    for tensions in [[3.0, 0.0, 3.0, 0.0], [0.0, 4.5, 0.0, 4.5], [2.0; 4]] {
        let eq = solve_equilibrium(&planar_design(tensions), &SolverConfig::default()).unwrap();
        assert!(lateral(&eq.tip()) < 1e-8 * 0.2, "{tensions:?}: {}", lateral(&eq.tip()));
        // Axial compression shortens the rod.
        assert!(eq.tip().z < 0.2);
    }
}

#[test]
fn tip_deflection_grows_with_tension() {
    let deflections: Vec<f64> = (0..6)
        .map(|k| {
            let eq = solve_equilibrium(&planar_design([k as f64, 0.0, 0.0, 0.0]), &SolverConfig::default()).unwrap();
            lateral(&eq.tip())
        })
        .collect();
    assert_eq!(deflections[0], 0.0);
    assert!(deflections.windows(2).all(|w| w[1] >= w[0]), "{deflections:?}");
}

#[test]
fn rotating_the_routing_rotates_the_solution() {
    let design = helical_design();
    let base = solve_equilibrium(&design, &SolverConfig::default()).unwrap();
    for delta in [0.3, -1.2, 2.5] {
        let config = SolverConfig {
            routing_phase: delta,
            ..SolverConfig::default()
        };
        let turned = solve_equilibrium(&design, &config).unwrap();
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), delta).into_inner();
        for k in 0..base.num_nodes() {
            assert!((turned.backbone[k] - rz * base.backbone[k]).norm() < 1e-8);
            assert!((turned.frames[k] - rz * base.frames[k] * rz.transpose()).norm() < 1e-8);
            for i in 0..4 {
                assert!((turned.tendon_curves[i][k] - rz * base.tendon_curves[i][k]).norm() < 1e-8);
            }
        }
    }
}

#[test]
fn rk4_order_from_three_grids() {
    let design = helical_design();
    let tips: Vec<Vector3<f64>> = [82, 164, 328]
        .iter()
        .map(|&steps| {
            solve_equilibrium(&design, &SolverConfig::default().single_step(steps))
                .unwrap()
                .tip()
        })
        .collect();
    let ratio = (tips[0] - tips[1]).norm() / (tips[1] - tips[2]).norm();
    let order = ratio.log2();
    assert!((3.5..=4.5).contains(&order), "ratio {ratio}, order {order}");
}

#[test]
fn force_rate_matches_tendon_tangent_differences() {
    // Along an equilibrium, n + τt is constant, so n' = −τ dt/ds.
    let design = DesignVector {
        tendon_pitches: [6.0, 0.0, 0.0, 0.0],
        ..planar_design([4.0, 0.0, 0.0, 0.0])
    };
    let eq = solve_equilibrium(&design, &SolverConfig::default().single_step(2048)).unwrap();
    let ctx = RodContext::new(&design, 0.3, 0.0).unwrap();
    let h = eq.arclengths[1] - eq.arclengths[0];
    for k in [200, 1000, 1700] {
        let pull = |j: usize| -4.0 * ctx.tendon_tangents(&node_state(&eq, j))[0];
        let fd = (pull(k + 1) - pull(k - 1)) / (2.0 * h);
        let exact = rod_ode_rhs(&node_state(&eq, k), &ctx).unwrap().force;
        assert!(
            (fd - exact).norm() < 1e-5 * exact.norm(),
            "node {k}: {fd:?} vs {exact:?}"
        );
    }
}

#[test]
fn production_grid_matches_golden_fine_grid_tips() {
    let text = include_str!("fixtures/golden_tips.txt");
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let values: Vec<f64> = line.split_whitespace().map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 18);
        let design = DesignVector::from_array(values[..15].try_into().unwrap());
        let golden = Vector3::new(values[15], values[16], values[17]);
        let coarse = solve_equilibrium(&design, &SolverConfig::default()).unwrap();
        assert!((coarse.tip() - golden).norm() < 1e-4 * design.length);
        let fine = solve_equilibrium(&design, &SolverConfig::default().single_step(2048)).unwrap();
        assert!((fine.tip() - golden).norm() < 1e-12, "fine-grid regression");
        rows += 1;
    }
    assert!(rows >= 4);
}

fn geometry() -> impl Strategy<Value = DesignVector> {
    (
        prop::array::uniform4(0.005..0.01f64),
        prop::array::uniform4(-20.0..20.0f64),
        0.0005..0.0015f64,
        0.1..0.35f64,
        15.5e9..45.5e9f64,
    )
        .prop_map(|(rho, phi, r, l, e)| DesignVector {
            tendon_offsets: rho,
            tendon_pitches: phi,
            tendon_tensions: [0.0; 4],
            backbone_radius: r,
            length: l,
            youngs_modulus: e,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_tension_is_straight_for_any_geometry(design in geometry()) {
        let eq = solve_equilibrium(&design, &SolverConfig::default()).unwrap();
        for k in 0..eq.num_nodes() {
            prop_assert!((eq.backbone[k] - Vector3::new(0.0, 0.0, eq.arclengths[k])).norm() < 1e-12);
            prop_assert!((eq.frames[k] - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn random_designs_converge_and_stay_orthonormal(
        design in geometry(),
        tensions in prop::array::uniform4(0.0..5.0f64),
    ) {
        let design = DesignVector { tendon_tensions: tensions, ..design };
        let eq = solve_equilibrium(&design, &SolverConfig::default()).unwrap();
        prop_assert!(eq.stats.residual_norm < 1e-8);
        for r in &eq.frames {
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
        }
        for (k, s) in eq.arclengths.iter().enumerate() {
            for i in 0..4 {
                let rho = tdcrop::rodmodel::tendon_offset(&design, i, *s).unwrap();
                prop_assert_eq!(eq.tendon_curves[i][k], eq.backbone[k] + eq.frames[k] * rho);
            }
        }
    }
}
