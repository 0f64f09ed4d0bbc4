use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::system::{FullVars, System};
use super::*;
use crate::events::EventKind;
use crate::fixtures;
use crate::game::{PayoffTensor, SdGame, StructureMask};

fn hybrid() -> SdGame {
    fixtures::hybrid_game(0.1)
}

#[test]
fn perturb_identity_at_zero() {
    let g = hybrid();
    let pg = perturb(&g, 0, 0.0).unwrap();
    let a = pg.tensor_a();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    assert_eq!(a.at(i, j, k, l), g.a.at(i, j, k, l));
                }
            }
        }
    }
}

#[test]
fn perturb_bonus_slice() {
    let g = hybrid();
    let t = 0.7;
    let pg = perturb(&g, 0, t).unwrap();
    let a = pg.tensor_a();
    for r in 0..2 {
        for s in 0..2 {
            let base = if r == s { 1.0 } else { 0.0 };
            assert!((a.at(0, 0, r, s) - (base + t)).abs() < 1e-15);
        }
    }
    // direct-slice fixture agrees with the programmatic perturbation
    let direct = fixtures::hybrid_game_at_bonus(0.1, t);
    for r in 0..2 {
        for s in 0..2 {
            assert_eq!(a.at(0, 0, r, s), direct.a.at(0, 0, r, s));
        }
    }
}

#[test]
fn perturbed_phi_closed_form_matches_contraction() {
    // Φ_{A(t)}(Y) = Φ_A(Y) + t·(1ᵀY1)·E_kk, checked against contracting the
    // materialized tensor on random Y.
    let mut rng = StdRng::seed_from_u64(3);
    let g = fixtures::coupling_game(0.6);
    for _ in 0..50 {
        let t = rng.gen_range(0.0..5.0);
        let k = rng.gen_range(0..2);
        let pg = perturb(&g, k, t).unwrap();
        let sys = System::new(pg.clone());
        let y = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = (&y + y.transpose()) * 0.5;
        let fast = sys.phi_a_t(&y, t);
        let slow = crate::game::contract_phi_a(&pg.tensor_a(), &y);
        assert!((fast - slow).norm() < 1e-12);
    }
}

#[test]
fn initial_bonus_hybrid_and_zero() {
    let g = hybrid();
    let t0 = initial_bonus(&g, 0).unwrap();
    assert!(t0 > 1.0, "any bonus above 1 suffices, got {t0}");

    let z = fixtures::zero_game(2, 2);
    let t0 = initial_bonus(&z, 0).unwrap();
    assert!((t0 - 1.0).abs() < 1e-12);
}

#[test]
fn initial_bonus_ineffective_when_bonus_term_vanishes() {
    // B makes player 2's best response to E_11 the state (1,-1)/√2 outer
    // product, whose entries sum to zero, so the bonus never acts; the zero
    // A tensor then leaves no dominant direction at any t0.
    let mut b = PayoffTensor::zeros(2, 2);
    b.set_slice(0, 0, &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    let g = SdGame::new(
        PayoffTensor::zeros(2, 2),
        b,
        StructureMask::FullSymmetric,
        StructureMask::FullSymmetric,
    )
    .unwrap();
    match initial_bonus(&g, 0) {
        Err(TracerError::BonusIneffective { .. }) => {}
        other => panic!("expected BonusIneffective, got {other:?}"),
    }
}

#[test]
fn start_point_hybrid() {
    let g = hybrid();
    let t0 = initial_bonus(&g, 0).unwrap();
    let (_, p, tie) = start_point(&g, 0, t0).unwrap();
    assert!(!tie);
    assert!((p.x[(0, 0)] - 1.0).abs() < 1e-9);
    assert!(p.x[(1, 1)].abs() < 1e-9);
    assert!((p.y[(0, 0)] - 1.0).abs() < 1e-9);
    assert!((p.w - (t0 + 1.0)).abs() < 1e-8);
    assert!((p.v - 2.0).abs() < 1e-9);
    assert!(p.residual_norm <= 1e-10);
}

#[test]
fn start_point_zero_game() {
    let g = fixtures::zero_game(2, 2);
    let t0 = initial_bonus(&g, 0).unwrap();
    let (_, p, tie) = start_point(&g, 0, t0).unwrap();
    assert!(tie, "the zero game ties the second player's response");
    assert!((p.x[(0, 0)] - 1.0).abs() < 1e-9);
    assert!((p.w - t0).abs() < 1e-9);
    assert!(p.v.abs() < 1e-9);
    assert!((p.y[(0, 0)] - 0.5).abs() < 1e-9, "tie-broken uniform response");
}

#[test]
fn residual_on_closed_form_branch() {
    let g = hybrid();
    let sys = System::new(perturb(&g, 0, 0.0).unwrap());
    let s = -0.1;
    let (x, y, w, v) = fixtures::hybrid_middle_branch(s);
    let z = FullVars {
        x: x.matrix().clone(),
        y: y.matrix().clone(),
        w,
        v,
        t: 1.0 + s,
    };
    let r = sys.residual(&z);
    assert!(r.norm() <= 1e-9, "closed-form branch residual {}", r.norm());
}

#[test]
fn residual_infeasible_probe_returns_identity_entries() {
    let g = fixtures::zero_game(2, 2);
    let sys = System::new(perturb(&g, 0, 0.0).unwrap());
    let z = FullVars {
        x: DMatrix::identity(2, 2),
        y: DMatrix::identity(2, 2),
        w: 1.0,
        v: 0.0,
        t: 0.0,
    };
    // X·W = X with the zero tensor and w = 1
    let r = sys.residual(&z);
    assert!((r[0] - 1.0).abs() < 1e-15);
    assert!((r[3] - 1.0).abs() < 1e-15);
}

fn fd_jacobian(sys: &System, z: &FullVars, step: f64) -> DMatrix<f64> {
    let (m, n) = (sys.m, sys.n);
    let ncols = m * m + n * n + 3;
    let mut jac = DMatrix::zeros(sys.n_equations(), ncols);
    let perturb_coord = |z: &FullVars, c: usize, eps: f64| -> FullVars {
        let mut out = z.clone();
        if c < m * m {
            out.x[(c / m, c % m)] += eps;
        } else if c < m * m + n * n {
            let cc = c - m * m;
            out.y[(cc / n, cc % n)] += eps;
        } else if c == m * m + n * n {
            out.w += eps;
        } else if c == m * m + n * n + 1 {
            out.v += eps;
        } else {
            out.t += eps;
        }
        out
    };
    for c in 0..ncols {
        let rp = sys.residual(&perturb_coord(z, c, step));
        let rm = sys.residual(&perturb_coord(z, c, -step));
        let col = (rp - rm) / (2.0 * step);
        jac.set_column(c, &col);
    }
    jac
}

fn random_feasible_vars(rng: &mut StdRng, sys: &System) -> FullVars {
    let (m, n) = (sys.m, sys.n);
    let rand_density = |rng: &mut StdRng, d: usize, diag: bool| -> DMatrix<f64> {
        if diag {
            let mut w: Vec<f64> = (0..d).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            DMatrix::from_fn(d, d, |i, j| if i == j { w[i] } else { 0.0 })
        } else {
            let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let p = &g * g.transpose();
            let tr = p.trace();
            p / tr
        }
    };
    FullVars {
        x: rand_density(rng, m, sys.game().mask1.is_diagonal()),
        y: rand_density(rng, n, sys.game().mask2.is_diagonal()),
        w: rng.gen_range(-1.0..3.0),
        v: rng.gen_range(-1.0..3.0),
        t: rng.gen_range(0.0..2.0),
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(11);
    for game in [
        hybrid(),
        fixtures::coupling_game(0.6),
        fixtures::truncated_coupling_game(1.0),
    ] {
        let sys = System::new(perturb(&game, 0, 0.0).unwrap());
        for _ in 0..10 {
            let z = random_feasible_vars(&mut rng, &sys);
            let exact = sys.jacobian(&z);
            let approx = fd_jacobian(&sys, &z, 1e-7);
            let denom = exact.norm().max(1.0);
            let err = (&exact - &approx).norm() / denom;
            assert!(err <= 1e-6, "fd mismatch {err:.3e}");
        }
    }
}

#[test]
fn jacobian_zero_game_blocks() {
    // On the zero game the only Jacobian content is w·H, v·K, the bonus
    // coupling and the trace rows.
    let g = fixtures::zero_game(2, 2);
    let sys = System::new(perturb(&g, 0, 0.0).unwrap());
    let z = FullVars {
        x: DMatrix::identity(2, 2) * 0.5,
        y: DMatrix::identity(2, 2) * 0.5,
        w: 2.0,
        v: 3.0,
        t: 0.0,
    };
    let jac = sys.jacobian(&z);
    // row (0,0) of X·W: d/dX_00 = W_00 = w
    assert!((jac[(0, 0)] - 2.0).abs() < 1e-12);
    // row (0,0) of Y·V: d/dY_00 = v
    assert!((jac[(4, 4)] - 3.0).abs() < 1e-12);
}

#[test]
fn tangent_at_hybrid_start_decreases_t_only() {
    let g = hybrid();
    let t0 = initial_bonus(&g, 0).unwrap();
    let (sys, p, _) = start_point(&g, 0, t0).unwrap();
    let tau = tangent(&sys, &p, None).unwrap();
    assert!(tau.dt() < 0.0, "t must initially decrease");
    let m2 = 4;
    let strategy_part: f64 = tau
        .direction
        .iter()
        .take(2 * m2)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!(strategy_part < 1e-8, "strategies stay constant at large t");
}

#[test]
fn tangent_orientation_follows_previous() {
    let g = hybrid();
    let t0 = initial_bonus(&g, 0).unwrap();
    let (sys, p, _) = start_point(&g, 0, t0).unwrap();
    let tau = tangent(&sys, &p, None).unwrap();
    let p2 = step(&sys, &p, &tau, 1e-3).unwrap();
    let tau2 = tangent(&sys, &p2, Some(&tau)).unwrap();
    assert!(tau2.direction.dot(&tau.direction) > 0.0);
}

#[test]
fn step_zero_is_identity() {
    let g = hybrid();
    let t0 = initial_bonus(&g, 0).unwrap();
    let (sys, p, _) = start_point(&g, 0, t0).unwrap();
    let tau = tangent(&sys, &p, None).unwrap();
    let q = step(&sys, &p, &tau, 0.0).unwrap();
    assert_eq!(q.t, p.t);
    assert_eq!(q.x, p.x);
}

#[test]
fn steps_on_first_hybrid_segment_keep_strategies_pure() {
    let g = hybrid();
    let t0 = initial_bonus(&g, 0).unwrap();
    let (sys, mut p, _) = start_point(&g, 0, t0).unwrap();
    let mut tau = tangent(&sys, &p, None).unwrap();
    for _ in 0..20 {
        let q = step(&sys, &p, &tau, 0.05).unwrap();
        assert!((q.x[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((q.y[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(q.t < p.t);
        tau = tangent(&sys, &q, Some(&tau)).unwrap();
        p = q;
    }
}

#[test]
fn trace_hybrid_game_end_to_end() {
    let g = hybrid();
    let trace = trace_path(&g, 0, &TraceOptions::default()).unwrap();
    let crossings = trace.crossing_events();
    assert_eq!(crossings.len(), 2, "outcome: {:?}", trace.outcome);
    assert!(
        (crossings[0].t_star - 1.0).abs() <= 1e-8,
        "first event at t = {}",
        crossings[0].t_star
    );
    let t2 = fixtures::hybrid_second_event_t();
    assert!(
        (crossings[1].t_star - t2).abs() <= 1e-7,
        "second event at t = {}, want {t2}",
        crossings[1].t_star
    );
    match &trace.outcome {
        TraceOutcome::Equilibrium { x, y, certificate } => {
            assert!(certificate.valid);
            let (x_want, y_want) = fixtures::hybrid_final_equilibrium();
            assert!((x.matrix() - x_want.matrix().matrix()).norm() < 1e-7);
            assert!((y.matrix() - y_want.matrix().matrix()).norm() < 1e-6);
        }
        other => panic!("expected equilibrium, got {other:?}"),
    }
    // exactly one homotopy-end event closes the trace
    let ends = trace
        .events()
        .filter(|e| e.kind == EventKind::HomotopyEnd)
        .count();
    assert_eq!(ends, 1);
}

#[test]
fn trace_zero_game_reports_degenerate_start() {
    let g = fixtures::zero_game(2, 2);
    match trace_path(&g, 0, &TraceOptions::default()) {
        Err(TracerError::DegenerateStart(msg)) => {
            assert!(msg.contains("tie"), "message should mention the tie: {msg}");
        }
        other => panic!("expected DegenerateStart, got {other:?}"),
    }
}

#[test]
fn trace_points_respect_invariants() {
    let g = hybrid();
    let trace = trace_path(&g, 0, &TraceOptions::default()).unwrap();
    let sys = System::new(perturb(&g, 0, 0.0).unwrap());
    for p in trace.points() {
        assert!(p.residual_norm <= 1e-10);
        assert!(p.max_pair_product() <= 1e-7);
        let (feasible, min) = feasibility(&sys, &p.vars());
        assert!(feasible, "λ_min = {min:.3e} at t = {}", p.t);
        let defect = (&p.x - p.x.transpose()).norm();
        assert!(defect <= 1e-9);
    }
}

#[test]
fn polish_recovers_equilibrium_from_nearby_guess() {
    let g = fixtures::coupling_game(0.6);
    let x0 = crate::linalg::SymMatrix::from_rows(&[&[0.93, 0.04], &[0.04, 0.07]]).unwrap();
    let (x, y, w, v) = polish_equilibrium(&g, &x0, &x0).unwrap();
    assert!((x.get(0, 0) - 1.0).abs() < 1e-8);
    assert!((y.get(0, 0) - 1.0).abs() < 1e-8);
    assert!((w - 1.0).abs() < 1e-8);
    assert!((v - 1.0).abs() < 1e-8);
}

#[test]
fn reduced_roundtrip() {
    let g = hybrid();
    let sys = System::new(perturb(&g, 0, 0.0).unwrap());
    let z = FullVars {
        x: DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.7]),
        y: DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]),
        w: 1.5,
        v: -0.5,
        t: 2.0,
    };
    let zeta = sys.to_reduced(&z);
    let back = sys.to_full(&zeta);
    assert!((back.x - &z.x).norm() < 1e-14);
    assert!((back.y - &z.y).norm() < 1e-14);
    assert_eq!(back.w, z.w);
    assert_eq!(back.t, z.t);
    let dir = DVector::from_element(zeta.len(), 1.0).normalize();
    let full_dir = sys.direction_to_full(&dir);
    assert!((full_dir.norm() - 1.0).abs() < 1e-12, "embedding is isometric");
}
