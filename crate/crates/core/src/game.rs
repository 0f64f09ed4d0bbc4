//! Semidefinite game representation: payoff tensors, the payoff operators
//! Φ_A and Φ'_B, slack matrices, best responses and Nash verification.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, sym_eigen, JointEigenSystem, SymMatrix};

/// Default tolerance for Nash certificates, one order above the tracer
/// corrector tolerance.
pub const VERIFY_TOL: f64 = 1e-7;

/// Relative eigenvalue gap below which a best response is treated as tied.
pub const TIE_GAP: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// 4-index payoff array `A[i][j][k][l]` with `i,j < m`, `k,l < n`, symmetric
/// in the first and in the last index pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTensor {
    m: usize,
    n: usize,
    // flat layout: ((i * m + j) * n + k) * n + l
    entries: Vec<f64>,
}

impl PayoffTensor {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            entries: vec![0.0; m * m * n * n],
        }
    }

    /// Build from nested arrays `a[i][j][k][l]`, enforcing index-pair
    /// symmetry exactly (tolerance 0 on the input values).
    pub fn from_nested(a: &[Vec<Vec<Vec<f64>>>]) -> Result<Self, GameError> {
        let m = a.len();
        if m == 0 {
            return Err(GameError::InvalidInput("empty tensor".into()));
        }
        let n = a
            .first()
            .and_then(|r| r.first())
            .map(|s| s.len())
            .unwrap_or(0);
        if n == 0 {
            return Err(GameError::InvalidInput("empty tensor slice".into()));
        }
        let mut t = Self::zeros(m, n);
        for i in 0..m {
            if a[i].len() != m {
                return Err(GameError::InvalidInput("ragged first index pair".into()));
            }
            for j in 0..m {
                if a[i][j].len() != n {
                    return Err(GameError::InvalidInput("ragged second index pair".into()));
                }
                for k in 0..n {
                    if a[i][j][k].len() != n {
                        return Err(GameError::InvalidInput("ragged innermost index".into()));
                    }
                    for l in 0..n {
                        let v = a[i][j][k][l];
                        if !v.is_finite() {
                            return Err(GameError::InvalidInput("non-finite entry".into()));
                        }
                        *t.at_mut(i, j, k, l) = v;
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                for k in 0..n {
                    for l in 0..n {
                        if t.at(i, j, k, l) != t.at(j, i, k, l) || t.at(i, j, k, l) != t.at(i, j, l, k)
                        {
                            return Err(GameError::InvalidInput(format!(
                                "tensor not index-pair symmetric at ({i},{j},{k},{l})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    /// Set the whole (i,j) slice, mirrored to (j,i); the slice itself must be
    /// symmetric in (k,l).
    pub fn set_slice(&mut self, i: usize, j: usize, slice: &DMatrix<f64>) {
        assert_eq!(slice.nrows(), self.n);
        assert_eq!(slice.ncols(), self.n);
        for k in 0..self.n {
            for l in 0..self.n {
                let v = 0.5 * (slice[(k, l)] + slice[(l, k)]);
                *self.at_mut(i, j, k, l) = v;
                *self.at_mut(j, i, k, l) = v;
            }
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.entries[((i * self.m + j) * self.n + k) * self.n + l]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut f64 {
        &mut self.entries[((i * self.m + j) * self.n + k) * self.n + l]
    }

    /// Symmetrize over both index pairs in place (used by generators).
    pub fn symmetrize(&mut self) {
        let (m, n) = (self.m, self.n);
        for i in 0..m {
            for j in i..m {
                for k in 0..n {
                    for l in k..n {
                        let v = 0.25
                            * (self.at(i, j, k, l)
                                + self.at(j, i, k, l)
                                + self.at(i, j, l, k)
                                + self.at(j, i, l, k));
                        *self.at_mut(i, j, k, l) = v;
                        *self.at_mut(j, i, k, l) = v;
                        *self.at_mut(i, j, l, k) = v;
                        *self.at_mut(j, i, l, k) = v;
                    }
                }
            }
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.m)
            .map(|i| {
                (0..self.m)
                    .map(|j| {
                        (0..self.n)
                            .map(|k| (0..self.n).map(|l| self.at(i, j, k, l)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Structural restriction of a player's strategy space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureMask {
    /// All of the density matrices.
    #[serde(rename = "full")]
    FullSymmetric,
    /// Diagonal density matrices only: a mixed strategy over pure states.
    Diagonal,
}

impl StructureMask {
    pub fn is_diagonal(self) -> bool {
        matches!(self, StructureMask::Diagonal)
    }
}

/// Two-player semidefinite game.
#[derive(Debug, Clone)]
pub struct SdGame {
    pub a: PayoffTensor,
    pub b: PayoffTensor,
    pub mask1: StructureMask,
    pub mask2: StructureMask,
}

impl SdGame {
    pub fn new(
        a: PayoffTensor,
        b: PayoffTensor,
        mask1: StructureMask,
        mask2: StructureMask,
    ) -> Result<Self, GameError> {
        if a.m != b.m || a.n != b.n {
            return Err(GameError::InvalidInput(format!(
                "tensor shape mismatch: A is {}x{}, B is {}x{}",
                a.m, a.n, b.m, b.n
            )));
        }
        Ok(Self { a, b, mask1, mask2 })
    }

    pub fn m(&self) -> usize {
        self.a.m
    }

    pub fn n(&self) -> usize {
        self.a.n
    }
}

/// Density matrix: PSD, trace one, diagonal if the owning mask demands it.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    matrix: SymMatrix,
    /// Set when a best-response tie was broken to produce this strategy.
    pub tie_broken: bool,
}

impl DensityMatrix {
    pub fn new(matrix: SymMatrix, mask: StructureMask) -> Result<Self, GameError> {
        if (matrix.trace() - 1.0).abs() > 1e-9 {
            return Err(GameError::InvalidInput(format!(
                "trace {} != 1",
                matrix.trace()
            )));
        }
        let (_, min) = linalg::psd_check(&matrix, 1e-8);
        if min < -1e-8 {
            return Err(GameError::InvalidInput(format!(
                "not PSD: lambda_min = {min:.3e}"
            )));
        }
        if mask.is_diagonal() {
            let d = matrix.dim();
            for i in 0..d {
                for j in 0..d {
                    if i != j && matrix.get(i, j) != 0.0 {
                        return Err(GameError::InvalidInput(
                            "off-diagonal entry under diagonal mask".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            matrix,
            tie_broken: false,
        })
    }

    /// Pure strategy e_k e_k^T.
    pub fn pure_state(dim: usize, k: usize) -> Self {
        let mut diag = vec![0.0; dim];
        diag[k] = 1.0;
        Self {
            matrix: SymMatrix::from_diagonal(&diag),
            tie_broken: false,
        }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }
}

/// Raw contraction Σ_{k,l} A_{ijkl} Y_{kl} on plain matrix storage. Only the
/// symmetric part of Y contributes because the tensor is (k,l)-symmetric.
pub(crate) fn contract_phi_a(a: &PayoffTensor, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.m, a.m);
    for i in 0..a.m {
        for j in 0..a.m {
            let mut s = 0.0;
            for k in 0..a.n {
                for l in 0..a.n {
                    s += a.at(i, j, k, l) * y[(k, l)];
                }
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Raw contraction Σ_{i,j} X_{ij} B_{ijkl} on plain matrix storage.
pub(crate) fn contract_phi_b(b: &PayoffTensor, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.n, b.n);
    for k in 0..b.n {
        for l in 0..b.n {
            let mut s = 0.0;
            for i in 0..b.m {
                for j in 0..b.m {
                    s += x[(i, j)] * b.at(i, j, k, l);
                }
            }
            out[(k, l)] = s;
        }
    }
    out
}

/// Φ_A(Y): partial contraction of the tensor against the opponent strategy,
/// Φ_A(Y)_{ij} = Σ_{k,l} A_{ijkl} Y_{kl}.
pub fn phi_a(a: &PayoffTensor, y: &SymMatrix) -> Result<SymMatrix, GameError> {
    if y.dim() != a.n {
        return Err(GameError::InvalidInput(format!(
            "Y is {}x{}, tensor expects {}",
            y.dim(),
            y.dim(),
            a.n
        )));
    }
    let out = contract_phi_a(a, y.matrix());
    Ok(SymMatrix::new(out).expect("tensor symmetry gives a symmetric contraction"))
}

/// Φ'_B(X)_{kl} = Σ_{i,j} X_{ij} B_{ijkl}.
pub fn phi_b_prime(b: &PayoffTensor, x: &SymMatrix) -> Result<SymMatrix, GameError> {
    if x.dim() != b.m {
        return Err(GameError::InvalidInput(format!(
            "X is {}x{}, tensor expects {}",
            x.dim(),
            x.dim(),
            b.m
        )));
    }
    let out = contract_phi_b(b, x.matrix());
    Ok(SymMatrix::new(out).expect("tensor symmetry gives a symmetric contraction"))
}

/// Both payoffs: (<X, Φ_A(Y)>, <Φ'_B(X), Y>).
pub fn payoffs(game: &SdGame, x: &DensityMatrix, y: &DensityMatrix) -> (f64, f64) {
    let pa = phi_a(&game.a, y.matrix()).expect("dimensions checked at construction");
    let pb = phi_b_prime(&game.b, x.matrix()).expect("dimensions checked at construction");
    (x.matrix().dot(&pa), pb.dot(y.matrix()))
}

/// Slack of player 1: W = w·I_m − Φ_A(Y). Under a diagonal mask only the
/// diagonal of W enters the complementarity conditions later on.
pub fn slack_w(a: &PayoffTensor, y: &SymMatrix, w: f64) -> Result<SymMatrix, GameError> {
    let phi = phi_a(a, y)?;
    let m = a.m;
    let out = DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { w } else { 0.0 };
        id - phi.get(i, j)
    });
    Ok(SymMatrix::new(out).expect("symmetric by construction"))
}

/// Slack of player 2: V = v·I_n − Φ'_B(X).
pub fn slack_v(b: &PayoffTensor, x: &SymMatrix, v: f64) -> Result<SymMatrix, GameError> {
    let phi = phi_b_prime(b, x)?;
    let n = b.n;
    let out = DMatrix::from_fn(n, n, |k, l| {
        let id = if k == l { v } else { 0.0 };
        id - phi.get(k, l)
    });
    Ok(SymMatrix::new(out).expect("symmetric by construction"))
}

/// Best response against a fixed payoff operator value, mask-aware.
///
/// Full mask: the optimum value is λ_max and the optimizer set is spanned by
/// the top eigenspace; a simple top eigenvalue gives the rank-one projector,
/// a tie (relative gap < 1e-8) gives the uniform mixture over the top
/// eigenspace flagged as tie-broken. Diagonal mask: the max diagonal entry
/// and the indicator (or uniform mixture) of its argmax set.
pub fn best_response_to_operator(
    phi: &SymMatrix,
    mask: StructureMask,
) -> Result<(DensityMatrix, f64), GameError> {
    let d = phi.dim();
    if mask.is_diagonal() {
        let diag: Vec<f64> = (0..d).map(|i| phi.get(i, i)).collect();
        let best = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = diag.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let arg: Vec<usize> = (0..d)
            .filter(|&i| best - diag[i] <= TIE_GAP * scale)
            .collect();
        let mut out = vec![0.0; d];
        for &i in &arg {
            out[i] = 1.0 / arg.len() as f64;
        }
        let mut dm = DensityMatrix::new(SymMatrix::from_diagonal(&out), mask)?;
        dm.tie_broken = arg.len() > 1;
        return Ok((dm, best));
    }
    let eig = sym_eigen(phi).map_err(|e| GameError::InvalidInput(e.to_string()))?;
    let w = eig.values[0];
    let scale = eig.spectral_norm().max(1.0);
    let mut top = 1;
    while top < d && (eig.values[0] - eig.values[top]).abs() < TIE_GAP * scale {
        top += 1;
    }
    let mut p = DMatrix::zeros(d, d);
    for c in 0..top {
        let q = eig.basis.column(c);
        p += q * q.transpose();
    }
    p /= top as f64;
    let mut dm = DensityMatrix::new(
        SymMatrix::new(p).expect("projector is symmetric"),
        StructureMask::FullSymmetric,
    )?;
    dm.tie_broken = top > 1;
    Ok((dm, w))
}

/// Best response of player 1 to Y, returning the strategy and w = value.
pub fn best_response_1(game: &SdGame, y: &DensityMatrix) -> Result<(DensityMatrix, f64), GameError> {
    let phi = phi_a(&game.a, y.matrix())?;
    best_response_to_operator(&phi, game.mask1)
}

/// Best response of player 2 to X, returning the strategy and v = value.
pub fn best_response_2(game: &SdGame, x: &DensityMatrix) -> Result<(DensityMatrix, f64), GameError> {
    let phi = phi_b_prime(&game.b, x.matrix())?;
    best_response_to_operator(&phi, game.mask2)
}

/// Mask-effective slack: for a diagonal player only diag(W) participates in
/// feasibility and complementarity, so off-diagonals are dropped.
pub fn effective_slack(slack: &SymMatrix, mask: StructureMask) -> SymMatrix {
    if mask.is_diagonal() {
        let d = slack.dim();
        SymMatrix::from_diagonal(&(0..d).map(|i| slack.get(i, i)).collect::<Vec<_>>())
    } else {
        slack.clone()
    }
}

/// Complementarity certificate for a strategy pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashCertificate {
    pub w: f64,
    pub v: f64,
    /// (λ_min(W), λ_min(V), |<X,W>|, |<Y,V>|), mask-adjusted.
    pub residuals: (f64, f64, f64, f64),
    pub valid: bool,
    /// Strict complementarity of both (X, W) and (Y, V).
    pub strict: bool,
    pub tol: f64,
}

/// Check the complementarity system at (X, Y) with w = λ_max(Φ_A(Y)) and
/// v = λ_max(Φ'_B(X)) (max diagonal entry under a diagonal mask). An invalid
/// certificate is a result, not an error.
pub fn verify_nash(
    game: &SdGame,
    x: &DensityMatrix,
    y: &DensityMatrix,
    tol: f64,
) -> Result<NashCertificate, GameError> {
    let phi1 = phi_a(&game.a, y.matrix())?;
    let phi2 = phi_b_prime(&game.b, x.matrix())?;
    let (_, w) = best_response_to_operator(&phi1, game.mask1)?;
    let (_, v) = best_response_to_operator(&phi2, game.mask2)?;
    let w_slack = effective_slack(&slack_w(&game.a, y.matrix(), w)?, game.mask1);
    let v_slack = effective_slack(&slack_v(&game.b, x.matrix(), v)?, game.mask2);
    let (_, min_w) = linalg::psd_check(&w_slack, tol);
    let (_, min_v) = linalg::psd_check(&v_slack, tol);
    let comp_x = x.matrix().dot(&w_slack).abs();
    let comp_y = y.matrix().dot(&v_slack).abs();
    let valid = min_w >= -tol && min_v >= -tol && comp_x <= tol && comp_y <= tol;
    let strict = strict_complementarity(x.matrix(), &w_slack, game.m(), linalg::RANK_TOL)
        && strict_complementarity(y.matrix(), &v_slack, game.n(), linalg::RANK_TOL);
    Ok(NashCertificate {
        w,
        v,
        residuals: (min_w, min_v, comp_x, comp_y),
        valid,
        strict,
        tol,
    })
}

/// Strict complementarity of a pair with vanishing product:
/// rank(P) + rank(D) == dimTotal.
pub fn strict_complementarity(p: &SymMatrix, d: &SymMatrix, dim_total: usize, tol: f64) -> bool {
    linalg::numerical_rank(p, tol) + linalg::numerical_rank(d, tol) == dim_total
}

/// ||XW||_F + ||YV||_F, with the diagonal-mask variant using the
/// componentwise product of diagonals.
pub fn matrix_complementarity_residual(
    x: &SymMatrix,
    w: &SymMatrix,
    y: &SymMatrix,
    v: &SymMatrix,
    mask1: StructureMask,
    mask2: StructureMask,
) -> f64 {
    let part = |s: &SymMatrix, t: &SymMatrix, mask: StructureMask| -> f64 {
        if mask.is_diagonal() {
            (0..s.dim())
                .map(|i| (s.get(i, i) * t.get(i, i)).powi(2))
                .sum::<f64>()
                .sqrt()
        } else {
            (s.matrix() * t.matrix()).norm()
        }
    };
    part(x, w, mask1) + part(y, v, mask2)
}

/// Joint eigensystem of a strategy/slack pair under the player's mask; the
/// diagonal mask pairs coordinates directly in the identity basis.
pub fn complementarity_pairs(
    strategy: &SymMatrix,
    slack: &SymMatrix,
    mask: StructureMask,
    tol: f64,
) -> Result<JointEigenSystem, GameError> {
    if mask.is_diagonal() {
        let d = strategy.dim();
        let pairs = (0..d)
            .map(|i| (strategy.get(i, i), slack.get(i, i)))
            .collect();
        Ok(JointEigenSystem {
            basis: DMatrix::identity(d, d),
            pairs,
        })
    } else {
        linalg::joint_diagonalize(strategy, slack, tol)
            .map_err(|e| GameError::InvalidInput(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn density(entries: &[&[f64]], mask: StructureMask) -> DensityMatrix {
        DensityMatrix::new(SymMatrix::from_rows(entries).unwrap(), mask).unwrap()
    }

    #[test]
    fn phi_a_coupling_game_slice() {
        // Only A_1111 = 1 contributes when Y = E11.
        let g = fixtures::coupling_game(0.6);
        let y = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let phi = phi_a(&g.a, &y).unwrap();
        assert_eq!(phi.get(0, 0), 1.0);
        assert_eq!(phi.get(0, 1), 0.0);
        assert_eq!(phi.get(1, 1), 0.0);
    }

    #[test]
    fn phi_a_zero_tensor() {
        let t = PayoffTensor::zeros(2, 2);
        let y = SymMatrix::from_rows(&[&[0.3, 0.1], &[0.1, 0.7]]).unwrap();
        assert_eq!(phi_a(&t, &y).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn phi_a_hybrid_perturbed_entry() {
        // With the bonus slice ((t+1, t), (t, t+1)) the (1,1) entry of Φ is
        // (t+1)y11 + t y12 + t y21 + (t+1)y22.
        let t = 0.7;
        let g = fixtures::hybrid_game_at_bonus(0.1, t);
        let y = SymMatrix::from_rows(&[&[0.4, 0.2], &[0.2, 0.6]]).unwrap();
        let phi = phi_a(&g.a, &y).unwrap();
        let expect = (t + 1.0) * 0.4 + t * 0.2 + t * 0.2 + (t + 1.0) * 0.6;
        assert!((phi.get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn phi_b_prime_examples() {
        let g = fixtures::coupling_game(0.6);
        let x = SymMatrix::from_diagonal(&[0.0, 1.0]);
        let phi = phi_b_prime(&g.b, &x).unwrap();
        assert_eq!(phi.get(1, 1), 1.0);
        assert_eq!(phi.get(0, 0), 0.0);

        let h = fixtures::hybrid_game(0.1);
        let e11 = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let phi = phi_b_prime(&h.b, &e11).unwrap();
        assert_eq!(phi.get(0, 0), 2.0);
        assert_eq!(phi.get(1, 1), 1.0);
        assert_eq!(phi.get(0, 1), 0.0);
    }

    #[test]
    fn payoffs_examples() {
        let g = fixtures::coupling_game(0.6);
        let e11 = DensityMatrix::pure_state(2, 0);
        let (pa, pb) = payoffs(&g, &e11, &e11);
        assert!((pa - 1.0).abs() < 1e-12 && (pb - 1.0).abs() < 1e-12);

        let z = SdGame::new(
            PayoffTensor::zeros(2, 2),
            PayoffTensor::zeros(2, 2),
            StructureMask::FullSymmetric,
            StructureMask::FullSymmetric,
        )
        .unwrap();
        let (pa, pb) = payoffs(&z, &e11, &e11);
        assert_eq!((pa, pb), (0.0, 0.0));

        // truncated coupling payoff is x11 y11 + 4c x12 y12
        let c = 1.0;
        let g = fixtures::truncated_coupling_game(c);
        let x = density(
            &[&[0.5, 0.3], &[0.3, 0.5]],
            StructureMask::FullSymmetric,
        );
        let y = density(
            &[&[0.6, 0.2], &[0.2, 0.4]],
            StructureMask::FullSymmetric,
        );
        let (pa, pb) = payoffs(&g, &x, &y);
        let expect = 0.5 * 0.6 + 4.0 * c * 0.3 * 0.2;
        assert!((pa - expect).abs() < 1e-12);
        assert!((pb - expect).abs() < 1e-12);
    }

    #[test]
    fn slack_matrices_hybrid_large_t() {
        // At large t with X = Y = E11: W = diag(0, t-1), V = diag(0, 1).
        let t = 5.0;
        let g = fixtures::hybrid_game_at_bonus(0.1, t);
        let e11 = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let w = slack_w(&g.a, &e11, t + 1.0).unwrap();
        assert!(w.get(0, 0).abs() < 1e-12);
        assert!((w.get(1, 1) - (t - 1.0)).abs() < 1e-12);
        let v = slack_v(&g.b, &e11, 2.0).unwrap();
        assert!(v.get(0, 0).abs() < 1e-12);
        assert!((v.get(1, 1) - 1.0).abs() < 1e-12);

        let zero = PayoffTensor::zeros(2, 2);
        let w0 = slack_w(&zero, &e11, 0.0).unwrap();
        assert_eq!(w0.frobenius_norm(), 0.0);
    }

    #[test]
    fn best_response_examples() {
        let g = fixtures::coupling_game(0.6);
        let (x, w) = best_response_1(&g, &DensityMatrix::pure_state(2, 0)).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        assert!((x.matrix().get(0, 0) - 1.0).abs() < 1e-10);
        assert!(!x.tie_broken);

        // full degeneracy: Φ = I ties everything, uniform mixture expected
        let (t, w) =
            best_response_to_operator(&SymMatrix::identity(3), StructureMask::FullSymmetric)
                .unwrap();
        assert!(t.tie_broken);
        assert!((w - 1.0).abs() < 1e-12);
        assert!((t.matrix().get(0, 0) - 1.0 / 3.0).abs() < 1e-12);

        // hybrid: player 2 against X = E11 sees diag(2, 1)
        let h = fixtures::hybrid_game(0.1);
        let (y, v) = best_response_2(&h, &DensityMatrix::pure_state(2, 0)).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!((y.matrix().get(0, 0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn verify_nash_coupling_game_all_five() {
        let g = fixtures::coupling_game(0.6);
        for (x, y) in fixtures::coupling_game_equilibria() {
            let cert = verify_nash(&g, &x, &y, VERIFY_TOL).unwrap();
            assert!(cert.valid, "expected valid certificate, got {cert:?}");
        }
    }

    #[test]
    fn verify_nash_rejects_non_equilibrium() {
        let g = fixtures::coupling_game(0.6);
        let x = DensityMatrix::pure_state(2, 0);
        let y = DensityMatrix::pure_state(2, 1);
        let cert = verify_nash(&g, &x, &y, VERIFY_TOL).unwrap();
        assert!(!cert.valid, "E11 is not a best response to E22");
    }

    #[test]
    fn verify_nash_hybrid_final_pair() {
        let g = fixtures::hybrid_game(0.1);
        let (x, y) = fixtures::hybrid_final_equilibrium();
        let cert = verify_nash(&g, &x, &y, VERIFY_TOL).unwrap();
        assert!(cert.valid, "{cert:?}");
    }

    #[test]
    fn strict_complementarity_cases() {
        // identity vs zero
        assert!(strict_complementarity(
            &SymMatrix::identity(3),
            &SymMatrix::zeros(3),
            3,
            1e-8
        ));
        // truncated coupling, pure equilibrium (E22, E22): W = 0, not strict
        let g = fixtures::truncated_coupling_game(1.0);
        let e22 = DensityMatrix::pure_state(2, 1);
        let cert = verify_nash(&g, &e22, &e22, VERIFY_TOL).unwrap();
        assert!(cert.valid && !cert.strict);
        // mixed equilibrium with x11 = 2c/(4c-1) is strict
        let (x, y) = fixtures::truncated_coupling_mixed_equilibrium(1.0, 1.0);
        let cert = verify_nash(&g, &x, &y, VERIFY_TOL).unwrap();
        assert!(cert.valid && cert.strict, "{cert:?}");
    }

    #[test]
    fn complementarity_residual_cases() {
        let g = fixtures::coupling_game(0.6);
        let e11 = DensityMatrix::pure_state(2, 0);
        let w = slack_w(&g.a, e11.matrix(), 1.0).unwrap();
        let v = slack_v(&g.b, e11.matrix(), 1.0).unwrap();
        let r = matrix_complementarity_residual(
            e11.matrix(),
            &w,
            e11.matrix(),
            &v,
            StructureMask::FullSymmetric,
            StructureMask::FullSymmetric,
        );
        assert!(r <= 1e-8, "equilibrium pair has residual {r}");

        let s = SymMatrix::identity(3);
        let r = matrix_complementarity_residual(
            &s,
            &s,
            &SymMatrix::zeros(3),
            &SymMatrix::zeros(3),
            StructureMask::FullSymmetric,
            StructureMask::FullSymmetric,
        );
        assert!((r - 3.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tensor_symmetry_validation() {
        let mut nested = PayoffTensor::zeros(2, 2).to_nested();
        nested[0][1][0][0] = 1.0; // breaks (i,j) symmetry
        assert!(PayoffTensor::from_nested(&nested).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = SymMatrix::from_diagonal(&[1.0, 1.0]);
        assert!(DensityMatrix::new(bad_trace, StructureMask::FullSymmetric).is_err());
        let not_psd = SymMatrix::from_diagonal(&[1.5, -0.5]);
        assert!(DensityMatrix::new(not_psd, StructureMask::FullSymmetric).is_err());
        let off_diag = SymMatrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        assert!(DensityMatrix::new(off_diag.clone(), StructureMask::Diagonal).is_err());
        assert!(DensityMatrix::new(off_diag, StructureMask::FullSymmetric).is_ok());
    }
}
