//! Property suites for the linear-algebra kernel and the game layer:
//! reconstruction and pairing invariants, Sylvester rank consequences,
//! best-response optimality and duality consistency.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sdlh::game::{self, DensityMatrix, StructureMask};
use sdlh::linalg::{self, SymMatrix};
use sdlh::{fixtures, io};

fn random_sym(rng: &mut StdRng, d: usize) -> SymMatrix {
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    SymMatrix::new(m).unwrap()
}

fn random_orthogonal(rng: &mut StdRng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q()
}

fn random_density(rng: &mut StdRng, d: usize) -> DensityMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let p = &g * g.transpose() + DMatrix::identity(d, d) * 1e-6;
    let tr = p.trace();
    DensityMatrix::new(SymMatrix::new(p / tr).unwrap(), StructureMask::FullSymmetric).unwrap()
}

#[test]
fn eigen_reconstruction_on_1000_random_matrices() {
    let mut rng = StdRng::seed_from_u64(2024);
    for _ in 0..1000 {
        let d = rng.gen_range(1..=8);
        let m = random_sym(&mut rng, d);
        let eig = linalg::sym_eigen(&m).unwrap();
        let lam = DMatrix::from_fn(d, d, |i, j| if i == j { eig.values[i] } else { 0.0 });
        let rec = &eig.basis * lam * eig.basis.transpose();
        assert!((m.matrix() - rec).norm() <= 1e-8 * (1.0 + m.frobenius_norm()));
        assert!(
            (eig.basis.transpose() * &eig.basis - DMatrix::identity(d, d)).norm()
                <= 1e-10 * d as f64
        );
        for w in eig.values.windows(2) {
            assert!(w[0] >= w[1], "descending order");
        }
    }
}

/// Split a random orthogonal basis into complementary supports to build a
/// PSD pair with exact product zero.
fn complementary_psd_pair(rng: &mut StdRng, d: usize) -> (SymMatrix, SymMatrix) {
    let q = random_orthogonal(rng, d);
    let split = rng.gen_range(0..=d);
    let mut p = DMatrix::zeros(d, d);
    let mut s = DMatrix::zeros(d, d);
    for c in 0..d {
        let col = q.column(c);
        let outer = col * col.transpose();
        if c < split {
            p += outer * rng.gen_range(0.1..2.0);
        } else {
            s += outer * rng.gen_range(0.1..2.0);
        }
    }
    (SymMatrix::new(p).unwrap(), SymMatrix::new(s).unwrap())
}

#[test]
fn joint_diagonalize_pairs_products_vanish() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..300 {
        let d = rng.gen_range(2..=6);
        let (x, w) = complementary_psd_pair(&mut rng, d);
        let sys = linalg::joint_diagonalize(&x, &w, 1e-8).unwrap();
        assert!(
            sys.max_pair_product() <= 1e-7,
            "pair product {:.3e}",
            sys.max_pair_product()
        );
    }
}

#[test]
fn sylvester_rank_bound_on_annihilating_pairs() {
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..1000 {
        let d = rng.gen_range(2..=6);
        let (p, s) = complementary_psd_pair(&mut rng, d);
        let prod = (p.matrix() * s.matrix()).norm();
        assert!(prod <= 1e-10 * (1.0 + p.frobenius_norm() * s.frobenius_norm()));
        let rank_sum = linalg::numerical_rank(&p, 1e-8) + linalg::numerical_rank(&s, 1e-8);
        assert!(rank_sum <= d, "rank sum {rank_sum} exceeds dim {d}");
    }
}

#[test]
fn inner_product_zero_implies_matrix_product_zero() {
    // <S, T> = 0 for PSD S, T forces ST = 0
    let mut rng = StdRng::seed_from_u64(9);
    for _ in 0..1000 {
        let d = rng.gen_range(2..=6);
        let (s, t) = complementary_psd_pair(&mut rng, d);
        let ip = s.dot(&t).abs();
        assert!(ip <= 1e-12 * (1.0 + s.frobenius_norm() * t.frobenius_norm()));
        let prod = (s.matrix() * t.matrix()).norm();
        assert!(
            prod <= 1e-6 * s.frobenius_norm().max(1e-12) * t.frobenius_norm().max(1e-12),
            "||ST|| = {prod:.3e}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_invariant_under_conjugation(seed in 0u64..10_000) {
        let mut rng = StdRng::seed_from_u64(seed);
        let d = rng.gen_range(1..=6);
        let m = random_sym(&mut rng, d);
        let q = random_orthogonal(&mut rng, d);
        let conj = SymMatrix::new(q.transpose() * m.matrix() * &q).unwrap();
        prop_assert_eq!(
            linalg::numerical_rank(&m, 1e-8),
            linalg::numerical_rank(&conj, 1e-8)
        );
    }

    #[test]
    fn game_document_roundtrip_random(seed in 0u64..10_000) {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=3);
        let mut a = sdlh::game::PayoffTensor::zeros(m, n);
        let mut b = sdlh::game::PayoffTensor::zeros(m, n);
        for t in [&mut a, &mut b] {
            let mut nested = t.to_nested();
            for e in nested.iter_mut().flatten().flatten().flatten() {
                *e = rng.gen_range(-1.0..1.0);
            }
            let mut sym = nested.clone();
            for i in 0..m { for j in 0..m { for k in 0..n { for l in 0..n {
                let (p, q) = (i.min(j), i.max(j));
                let (r, s) = (k.min(l), k.max(l));
                sym[i][j][k][l] = 0.25 * (nested[p][q][r][s] + nested[q][p][r][s]
                    + nested[p][q][s][r] + nested[q][p][s][r]);
            }}}}
            *t = sdlh::game::PayoffTensor::from_nested(&sym).unwrap();
        }
        let g = sdlh::game::SdGame::new(a, b, StructureMask::FullSymmetric, StructureMask::Diagonal).unwrap();
        let text = serde_json::to_string(&io::game_to_document(&g)).unwrap();
        let io::AnyGame::Semidefinite(g2) = io::parse_game(&text).unwrap() else {
            panic!("expected semidefinite game");
        };
        for i in 0..m { for j in 0..m { for k in 0..n { for l in 0..n {
            prop_assert_eq!(g.a.at(i, j, k, l), g2.a.at(i, j, k, l));
        }}}}
    }
}

#[test]
fn phi_is_symmetric_for_symmetric_inputs() {
    let mut rng = StdRng::seed_from_u64(10);
    let g = fixtures::coupling_game(0.7);
    for _ in 0..200 {
        let y = random_sym(&mut rng, 2);
        let phi = game::phi_a(&g.a, &y).unwrap();
        assert!(phi.asymmetry_defect() <= 1e-12);
        let x = random_sym(&mut rng, 2);
        let phi = game::phi_b_prime(&g.b, &x).unwrap();
        assert!(phi.asymmetry_defect() <= 1e-12);
    }
}

#[test]
fn equilibria_commute_with_their_slacks() {
    let g = fixtures::coupling_game(0.6);
    for (x, y) in fixtures::coupling_game_equilibria() {
        let cert = game::verify_nash(&g, &x, &y, 1e-7).unwrap();
        assert!(cert.valid);
        let w = game::slack_w(&g.a, y.matrix(), cert.w).unwrap();
        let comm = (x.matrix().matrix() * w.matrix() - w.matrix() * x.matrix().matrix()).norm();
        assert!(comm <= 1e-7, "commutator {comm:.3e}");
    }
}

#[test]
fn best_response_dominates_200_random_strategies() {
    let mut rng = StdRng::seed_from_u64(11);
    for game in [
        fixtures::coupling_game(0.6),
        fixtures::truncated_coupling_game(1.0),
    ] {
        let y = random_density(&mut rng, 2);
        let (best, w) = game::best_response_1(&game, &y).unwrap();
        let (p_best, _) = game::payoffs(&game, &best, &y);
        assert!((p_best - w).abs() <= 1e-9, "value consistency");
        for _ in 0..200 {
            let x = random_density(&mut rng, 2);
            let (p, _) = game::payoffs(&game, &x, &y);
            assert!(p_best >= p - 1e-9);
        }
    }
}

#[test]
fn strong_duality_at_valid_certificates() {
    let g = fixtures::coupling_game(0.6);
    for (x, y) in fixtures::coupling_game_equilibria() {
        let cert = game::verify_nash(&g, &x, &y, 1e-7).unwrap();
        assert!(cert.valid);
        let (pa, pb) = game::payoffs(&g, &x, &y);
        assert!((cert.w - pa).abs() <= 1e-8);
        assert!((cert.v - pb).abs() <= 1e-8);
    }
}
