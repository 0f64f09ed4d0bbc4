//! Small reference games and their known equilibria, shared by the unit,
//! integration and acceptance test suites (and handy for demos).

use nalgebra::DMatrix;

use crate::game::{DensityMatrix, PayoffTensor, SdGame, StructureMask};
use crate::linalg::SymMatrix;

fn slice(rows: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
}

/// 2x2 game coupling the diagonal and off-diagonal strategy components:
/// payoff x11·y11 + 4c·x12·y12 + x22·y22 for both players. For c > 1/2 it
/// has five isolated Nash equilibria, all strictly complementary.
pub fn coupling_game(c: f64) -> SdGame {
    let mut a = PayoffTensor::zeros(2, 2);
    a.set_slice(0, 0, &slice([[1.0, 0.0], [0.0, 0.0]]));
    a.set_slice(0, 1, &slice([[0.0, c], [c, 0.0]]));
    a.set_slice(1, 1, &slice([[0.0, 0.0], [0.0, 1.0]]));
    let b = a.clone();
    SdGame::new(a, b, StructureMask::FullSymmetric, StructureMask::FullSymmetric).unwrap()
}

/// The five equilibria of [`coupling_game`] for c > 1/2.
pub fn coupling_game_equilibria() -> Vec<(DensityMatrix, DensityMatrix)> {
    let full = StructureMask::FullSymmetric;
    let mk = |rows: [[f64; 2]; 2]| {
        DensityMatrix::new(SymMatrix::new(slice(rows)).unwrap(), full).unwrap()
    };
    [
        [[1.0, 0.0], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, 1.0]],
        [[0.5, 0.0], [0.0, 0.5]],
        [[0.5, 0.5], [0.5, 0.5]],
        [[0.5, -0.5], [-0.5, 0.5]],
    ]
    .into_iter()
    .map(|rows| (mk(rows), mk(rows)))
    .collect()
}

/// Variant of [`coupling_game`] with the (2,2,2,2) entry zeroed: payoff
/// x11·y11 + 4c·x12·y12. It has an even number of equilibria (four).
pub fn truncated_coupling_game(c: f64) -> SdGame {
    let mut a = PayoffTensor::zeros(2, 2);
    a.set_slice(0, 0, &slice([[1.0, 0.0], [0.0, 0.0]]));
    a.set_slice(0, 1, &slice([[0.0, c], [c, 0.0]]));
    let b = a.clone();
    SdGame::new(a, b, StructureMask::FullSymmetric, StructureMask::FullSymmetric).unwrap()
}

/// Mixed equilibrium of [`truncated_coupling_game`]: X = Y with
/// x11 = 2c/(4c-1) and x12 = sign·√(2c(2c-1))/(4c-1).
pub fn truncated_coupling_mixed_equilibrium(
    c: f64,
    sign: f64,
) -> (DensityMatrix, DensityMatrix) {
    let den = 4.0 * c - 1.0;
    let x11 = 2.0 * c / den;
    let x12 = sign.signum() * (2.0 * c * (2.0 * c - 1.0)).sqrt() / den;
    let x22 = (2.0 * c - 1.0) / den;
    let m = SymMatrix::new(slice([[x11, x12], [x12, x22]])).unwrap();
    let x = DensityMatrix::new(m, StructureMask::FullSymmetric).unwrap();
    (x.clone(), x)
}

/// Degenerate game with Φ_A(Y) = Y and Φ'_B(X) = X (the payoff is the
/// overlap <X, Y>): a whole one-parameter family of equilibria, violating
/// the zero-dimensionality non-degeneracy condition. Equals
/// `coupling_game(1/2)`.
pub fn overlap_game() -> SdGame {
    coupling_game(0.5)
}

/// A point of the equilibrium family of [`overlap_game`], parametrized by
/// t in [0, 1].
pub fn overlap_family_point(t: f64) -> (DensityMatrix, DensityMatrix) {
    let off = (t * (1.0 - t)).sqrt();
    let m = SymMatrix::new(slice([[t, off], [off, 1.0 - t]])).unwrap();
    let x = DensityMatrix::new(m, StructureMask::FullSymmetric).unwrap();
    (x.clone(), x)
}

/// Hybrid 2x2x2x2 game: player 1 restricted to diagonal strategies, player 2
/// free. Payoff slices:
/// A11 = I, A22 = ((2, 2c), (2c, 2)), B11 = ((2,0),(0,1)),
/// B22 = ((2, c), (c, 1)), cross slices zero.
pub fn hybrid_game(c: f64) -> SdGame {
    hybrid_game_at_bonus(c, 0.0)
}

/// [`hybrid_game`] with the bonus slice ((t+1, t), (t, t+1)) substituted for
/// A11, written out directly for use as an independent check on the
/// programmatic perturbation.
pub fn hybrid_game_at_bonus(c: f64, t: f64) -> SdGame {
    let mut a = PayoffTensor::zeros(2, 2);
    a.set_slice(0, 0, &slice([[t + 1.0, t], [t, t + 1.0]]));
    a.set_slice(1, 1, &slice([[2.0, 2.0 * c], [2.0 * c, 2.0]]));
    let mut b = PayoffTensor::zeros(2, 2);
    b.set_slice(0, 0, &slice([[2.0, 0.0], [0.0, 1.0]]));
    b.set_slice(1, 1, &slice([[2.0, c], [c, 1.0]]));
    SdGame::new(a, b, StructureMask::Diagonal, StructureMask::FullSymmetric).unwrap()
}

/// The equilibrium the hybrid game (c = 1/10) path reaches at t = 0:
/// X = E22 and Y = ((1/2 + 5√26/52, √26/52), (√26/52, 1/2 - 5√26/52)).
pub fn hybrid_final_equilibrium() -> (DensityMatrix, DensityMatrix) {
    let r = 26.0_f64.sqrt();
    let y11 = 0.5 + 5.0 * r / 52.0;
    let y12 = r / 52.0;
    let y22 = 0.5 - 5.0 * r / 52.0;
    let x = DensityMatrix::pure_state(2, 1);
    let y = DensityMatrix::new(
        SymMatrix::new(slice([[y11, y12], [y12, y22]])).unwrap(),
        StructureMask::FullSymmetric,
    )
    .unwrap();
    (x, y)
}

/// Closed-form middle branch of the hybrid game (c = 1/10) between the
/// events at t = 1 and t = t2, parametrized by s = t - 1 < 0. Returns
/// (X, Y, w, v) as raw matrices.
pub fn hybrid_middle_branch(s: f64) -> (SymMatrix, SymMatrix, f64, f64) {
    let root = (10.0 * s + 4.0).sqrt();
    let x11 = (20.0 * s + 8.0 + 25.0 * s * root) / (4.0 * (5.0 * s + 2.0));
    let x22 = -25.0 * s / (2.0 * root);
    let y11 = 5.0 * (0.5 * s + 0.4 + root / 5.0) / (5.0 * s + 4.0);
    let y12 = -5.0 * s / (2.0 * (5.0 * s + 4.0));
    let y22 = 5.0 * (0.5 * s + 0.4 - root / 5.0) / (5.0 * s + 4.0);
    let v = (60.0 * s + 24.0
        + (250.0 * s.powi(3) + 500.0 * s * s + 320.0 * s + 64.0).sqrt())
        / (8.0 * (5.0 * s + 2.0));
    let w = (9.0 * s + 8.0) / (5.0 * s + 4.0);
    (
        SymMatrix::from_diagonal(&[x11, x22]),
        SymMatrix::new(slice([[y11, y12], [y12, y22]])).unwrap(),
        w,
        v,
    )
}

/// Parameter value of the second hybrid event, t2 = (129 - 4√26)/125.
pub fn hybrid_second_event_t() -> f64 {
    (129.0 - 4.0 * 26.0_f64.sqrt()) / 125.0
}

/// Game with all-zero tensors; every strategy pair is an equilibrium.
pub fn zero_game(m: usize, n: usize) -> SdGame {
    SdGame::new(
        PayoffTensor::zeros(m, n),
        PayoffTensor::zeros(m, n),
        StructureMask::FullSymmetric,
        StructureMask::FullSymmetric,
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game;

    #[test]
    fn middle_branch_limits() {
        let (x, y, w, v) = hybrid_middle_branch(0.0);
        assert!((x.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(x.get(1, 1).abs() < 1e-12);
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((w - 2.0).abs() < 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn middle_branch_satisfies_complementarity() {
        // The closed forms must solve the perturbed system exactly:
        // diagonal complementarity for player 1, matrix equation for player 2.
        for &s in &[-0.02, -0.05, -0.1, -0.13] {
            let t = 1.0 + s;
            let g = hybrid_game_at_bonus(0.1, t);
            let (x, y, w, v) = hybrid_middle_branch(s);
            assert!((x.trace() - 1.0).abs() < 1e-10);
            assert!((y.trace() - 1.0).abs() < 1e-10);
            let ws = game::slack_w(&g.a, &y, w).unwrap();
            // player 1 diagonal: x_ii * W_ii = 0
            for i in 0..2 {
                assert!((x.get(i, i) * ws.get(i, i)).abs() < 1e-10, "s={s}");
            }
            let vs = game::slack_v(&g.b, &x, v).unwrap();
            let prod = (y.matrix() * vs.matrix()).norm();
            assert!(prod < 1e-9, "s={s}: ||YV|| = {prod}");
        }
    }

    #[test]
    fn second_event_time_zeroes_x11() {
        let s2 = hybrid_second_event_t() - 1.0;
        let (x, _, _, _) = hybrid_middle_branch(s2);
        assert!(x.get(0, 0).abs() < 1e-10);
    }

    #[test]
    fn overlap_family_members_are_equilibria() {
        let g = overlap_game();
        for &t in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            let (x, y) = overlap_family_point(t);
            let cert = game::verify_nash(&g, &x, &y, 1e-7).unwrap();
            assert!(cert.valid, "t={t}: {cert:?}");
        }
    }
}
