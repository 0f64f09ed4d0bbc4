//! Dense symmetric-matrix kernel: eigendecomposition, simultaneous
//! diagonalization of commuting pairs, numerical rank and PSD tests.
//!
//! All tolerances are explicit. Matrices are stored in full (not packed)
//! form since every consumer in this crate works with the unsymmetrized
//! Jacobian coordinates anyway and dimensions are small.

use nalgebra::DMatrix;
use thiserror::Error;

/// Default relative tolerance for rank decisions (relative to the spectral
/// norm, floored at 1).
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrices do not commute: ||PD - DP||_F = {commutator:.3e} exceeds tolerance {tol:.3e}")]
    NotCommuting { commutator: f64, tol: f64 },
}

/// Symmetric matrix with full storage. The constructor symmetrizes by
/// averaging with the transpose and records the asymmetry defect.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: DMatrix<f64>,
    defect: f64,
}

impl SymMatrix {
    /// Build from an arbitrary square matrix; off-symmetric parts are
    /// averaged away and their Frobenius norm recorded as the defect.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(LinalgError::InvalidInput(format!(
                "expected nonempty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::InvalidInput("non-finite entries".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let defect = (&m - &sym).norm();
        Ok(Self {
            dim: m.nrows(),
            entries: sym,
            defect,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(LinalgError::InvalidInput("ragged rows".into()));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::new(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            entries: DMatrix::identity(dim, dim),
            defect: 0.0,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: DMatrix::zeros(dim, dim),
            defect: 0.0,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        Self {
            dim: d,
            entries: DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { 0.0 }),
            defect: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Asymmetry of the original input, ||M - (M + M^T)/2||_F.
    pub fn asymmetry_defect(&self) -> f64 {
        self.defect
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Frobenius inner product <A, B>.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.entries.dot(&other.entries)
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order and orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub basis: DMatrix<f64>,
    pub values: Vec<f64>,
}

impl EigenDecomposition {
    /// Spectral norm of the source matrix, max |λ|.
    pub fn spectral_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        *self
            .values
            .last()
            .expect("eigendecomposition is never empty")
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }
}

/// Common eigenbasis of a commuting symmetric pair with the paired
/// eigenvalues, ordered by descending primal eigenvalue.
#[derive(Debug, Clone)]
pub struct JointEigenSystem {
    pub basis: DMatrix<f64>,
    /// (λ_i(primal), λ_i(dual)) per basis column.
    pub pairs: Vec<(f64, f64)>,
}

impl JointEigenSystem {
    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// Largest |λ_i(primal)·λ_i(dual)| over all pairs.
    pub fn max_pair_product(&self) -> f64 {
        self.pairs
            .iter()
            .fold(0.0, |a, (p, d)| a.max((p * d).abs()))
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomposition, LinalgError> {
    if m.entries.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::InvalidInput("non-finite entries".into()));
    }
    let eig = m.entries.clone().symmetric_eigen();
    let d = m.dim;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut basis = DMatrix::zeros(d, d);
    let mut values = Vec::with_capacity(d);
    for (col, &src) in order.iter().enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src]);
    }
    Ok(EigenDecomposition { basis, values })
}

/// Simultaneous diagonalization of a commuting pair (P, D).
///
/// Eigendecomposes P, then rediagonalizes the compressed block Q^T D Q
/// within each eigenvalue cluster of P (clusters grouped at relative gap
/// 1e-6). The commutator must satisfy
/// ||PD - DP||_F <= tol (1 + ||P||_F)(1 + ||D||_F).
pub fn joint_diagonalize(
    p: &SymMatrix,
    d: &SymMatrix,
    tol: f64,
) -> Result<JointEigenSystem, LinalgError> {
    if p.dim != d.dim {
        return Err(LinalgError::InvalidInput(format!(
            "dimension mismatch {} vs {}",
            p.dim, d.dim
        )));
    }
    let commutator = (&p.entries * &d.entries - &d.entries * &p.entries).norm();
    let bound = tol * (1.0 + p.frobenius_norm()) * (1.0 + d.frobenius_norm());
    if commutator > bound {
        return Err(LinalgError::NotCommuting {
            commutator,
            tol: bound,
        });
    }

    let n = p.dim;
    let eig_p = sym_eigen(p)?;
    let scale = eig_p.spectral_norm().max(1.0);
    let mut basis = eig_p.basis.clone();

    // Cluster consecutive eigenvalues of P at relative gap 1e-6, then
    // diagonalize the compressed block of D inside each cluster.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (eig_p.values[end - 1] - eig_p.values[end]).abs() <= 1e-6 * scale {
            end += 1;
        }
        let width = end - start;
        if width > 1 {
            let q_c = basis.columns(start, width).into_owned();
            let block = (q_c.transpose() * &d.entries) * &q_c;
            let block_sym = SymMatrix::new(block)?;
            let eig_b = sym_eigen(&block_sym)?;
            let rotated = q_c * eig_b.basis;
            for (k, col) in (start..end).enumerate() {
                basis.set_column(col, &rotated.column(k));
            }
        }
        start = end;
    }

    let pairs = (0..n)
        .map(|i| {
            let q = basis.column(i);
            let lp = (q.transpose() * &p.entries * q)[(0, 0)];
            let ld = (q.transpose() * &d.entries * q)[(0, 0)];
            (lp, ld)
        })
        .collect();
    Ok(JointEigenSystem { basis, pairs })
}

/// Number of eigenvalues with |λ| > tol·max(1, ||M||_2).
pub fn numerical_rank(m: &SymMatrix, tol: f64) -> usize {
    let eig = sym_eigen(m).expect("finite symmetric matrix");
    let cutoff = tol * eig.spectral_norm().max(1.0);
    eig.values.iter().filter(|v| v.abs() > cutoff).count()
}

/// PSD test: true iff λ_min(M) >= -tol·max(1, ||M||_2). Also reports λ_min.
pub fn psd_check(m: &SymMatrix, tol: f64) -> (bool, f64) {
    let eig = sym_eigen(m).expect("finite symmetric matrix");
    let min = eig.min_value();
    (min >= -tol * eig.spectral_norm().max(1.0), min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_sym(rng: &mut StdRng, d: usize) -> SymMatrix {
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::new(m).unwrap()
    }

    #[test]
    fn constructor_symmetrizes_and_records_defect() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 1.0);
        assert!(s.asymmetry_defect() > 1.0);
        assert!(SymMatrix::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn sym_eigen_identity() {
        let eig = sym_eigen(&SymMatrix::identity(2)).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eigen_diagonal_sorted_descending() {
        let eig = sym_eigen(&SymMatrix::from_diagonal(&[3.0, -1.0])).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] + 1.0).abs() < 1e-12);
        // basis is I up to column signs
        for c in 0..2 {
            let col = eig.basis.column(c);
            assert!((col[c].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sym_eigen_exchange_matrix() {
        // ((0,1),(1,0)): eigenvalues 1 and -1 with eigenvectors (1,±1)/√2,
        // from the 2x2 characteristic polynomial λ² - 1.
        let m = SymMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-12);
        assert!((eig.values[1] + 1.0).abs() < 1e-12);
        let q0 = eig.basis.column(0);
        let q1 = eig.basis.column(1);
        let r = 1.0 / 2.0_f64.sqrt();
        assert!((q0[0].abs() - r).abs() < 1e-12 && (q0[1].abs() - r).abs() < 1e-12);
        assert!((q0[0] * q0[1] - 0.5).abs() < 1e-12, "same sign components");
        assert!((q1[0] * q1[1] + 0.5).abs() < 1e-12, "opposite sign components");
    }

    #[test]
    fn joint_diagonalize_zero_partner() {
        let sys = joint_diagonalize(&SymMatrix::identity(2), &SymMatrix::zeros(2), 1e-10).unwrap();
        for (p, d) in &sys.pairs {
            assert!((p - 1.0).abs() < 1e-12);
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn joint_diagonalize_already_diagonal() {
        let p = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let d = SymMatrix::from_diagonal(&[0.0, 5.0]);
        let sys = joint_diagonalize(&p, &d, 1e-10).unwrap();
        assert!((sys.pairs[0].0 - 1.0).abs() < 1e-12 && sys.pairs[0].1.abs() < 1e-12);
        assert!(sys.pairs[1].0.abs() < 1e-12 && (sys.pairs[1].1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn joint_diagonalize_branch_with_zero_slack() {
        // Shape of the traced branch where the slack matrix is identically
        // zero: the pairing is (λ_i(X), 0) in any eigenbasis of X.
        let x = SymMatrix::from_diagonal(&[0.278, 0.722]);
        let w = SymMatrix::zeros(2);
        let sys = joint_diagonalize(&x, &w, 1e-10).unwrap();
        assert!((sys.pairs[0].0 - 0.722).abs() < 1e-12);
        assert!((sys.pairs[1].0 - 0.278).abs() < 1e-12);
        assert!(sys.max_pair_product() < 1e-15);
    }

    #[test]
    fn joint_diagonalize_rejects_noncommuting() {
        let p = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let d = SymMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!(matches!(
            joint_diagonalize(&p, &d, 1e-10),
            Err(LinalgError::NotCommuting { .. })
        ));
    }

    #[test]
    fn joint_diagonalize_clustered_eigenvalues() {
        // P has a repeated eigenvalue; D must still be diagonalized within
        // the 2-dimensional cluster.
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let d = 3;
            let q = random_orthogonal(&mut rng, d);
            let p_diag = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    if i < 2 {
                        2.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                }
            });
            let d_diag = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    [0.3, -0.7, 1.1][i]
                } else {
                    0.0
                }
            });
            let p = SymMatrix::new(&q * p_diag * q.transpose()).unwrap();
            let dd = SymMatrix::new(&q * d_diag * q.transpose()).unwrap();
            let sys = joint_diagonalize(&p, &dd, 1e-8).unwrap();
            let qb = &sys.basis;
            let dp = qb.transpose() * p.matrix() * qb;
            let dd2 = qb.transpose() * dd.matrix() * qb;
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        assert!(dp[(i, j)].abs() < 1e-7, "P not diagonalized");
                        assert!(dd2[(i, j)].abs() < 1e-7, "D not diagonalized");
                    }
                }
            }
        }
    }

    #[test]
    fn numerical_rank_basics() {
        assert_eq!(numerical_rank(&SymMatrix::zeros(2), 1e-8), 0);
        assert_eq!(numerical_rank(&SymMatrix::identity(3), 1e-8), 3);
        // slack matrix diag(0, t-1) at t = 1.5
        assert_eq!(
            numerical_rank(&SymMatrix::from_diagonal(&[0.0, 0.5]), 1e-8),
            1
        );
    }

    #[test]
    fn psd_check_basics() {
        let (ok, min) = psd_check(&SymMatrix::identity(2), 1e-8);
        assert!(ok && (min - 1.0).abs() < 1e-12);
        let (ok, min) = psd_check(&SymMatrix::from_diagonal(&[1.0, -0.5]), 1e-8);
        assert!(!ok && (min + 0.5).abs() < 1e-12);
    }

    fn random_orthogonal(rng: &mut StdRng, d: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let qr = g.qr();
        qr.q()
    }

    #[test]
    fn reconstruction_residual_random() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let d = rng.gen_range(1..=8);
            let m = random_sym(&mut rng, d);
            let eig = sym_eigen(&m).unwrap();
            let lam = DMatrix::from_fn(d, d, |i, j| if i == j { eig.values[i] } else { 0.0 });
            let rec = &eig.basis * lam * eig.basis.transpose();
            let resid = (m.matrix() - rec).norm();
            assert!(resid <= 1e-8 * (1.0 + m.frobenius_norm()));
            let orth = (eig.basis.transpose() * &eig.basis - DMatrix::identity(d, d)).norm();
            assert!(orth <= 1e-10 * d as f64);
        }
    }
}
