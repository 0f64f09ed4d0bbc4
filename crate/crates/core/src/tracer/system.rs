//! The residual system of the homotopy and its exact Jacobian.
//!
//! Unknowns are the full unsymmetrized matrix coordinates plus the payoff
//! values, z = (vec X, vec Y, w, v), with the bonus t as the extra homotopy
//! coordinate. Residual rows (mask-adjusted for each player):
//!
//!   X·W(Y,w,t) = 0   (m² rows; diagonal mask: m diagonal products plus
//!                     off-diagonal-zero constraints)
//!   Y·V(X,v)   = 0   (n² rows, analogous)
//!   tr X − 1 = 0,  tr Y − 1 = 0
//!
//! with W = w·I − Φ_{A(t)}(Y) and V = v·I − Φ'_B(X). The unsymmetrized
//! square system is rank-deficient along antisymmetric directions wherever a
//! slack matrix vanishes identically, so the corrector, tangent and
//! smoothness monitor all act through an orthonormal embedding of the
//! symmetric (or diagonal) coordinates; the full-coordinate residual and
//! Jacobian stay polynomial and are what the finite-difference tests check.

use nalgebra::{DMatrix, DVector};

use crate::game::{self, SdGame, StructureMask};
use crate::tracer::PerturbedGame;

/// Corrector convergence tolerance on the residual norm.
pub const CORRECTOR_TOL: f64 = 1e-10;

/// Relative singular-value cutoff for minimum-norm least-squares solves.
const PINV_CUTOFF: f64 = 1e-12;

/// Maximum Gauss-Newton iterations per correction.
const MAX_CORRECTOR_ITERS: usize = 20;

/// Full-coordinate state of the system.
#[derive(Debug, Clone)]
pub struct FullVars {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w: f64,
    pub v: f64,
    pub t: f64,
}

/// Orthonormal basis of a player's strategy coordinate subspace.
fn mask_basis(dim: usize, mask: StructureMask) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::new();
    for i in 0..dim {
        let mut e = DMatrix::zeros(dim, dim);
        e[(i, i)] = 1.0;
        basis.push(e);
    }
    if !mask.is_diagonal() {
        let r = 1.0 / 2.0_f64.sqrt();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let mut e = DMatrix::zeros(dim, dim);
                e[(i, j)] = r;
                e[(j, i)] = r;
                basis.push(e);
            }
        }
    }
    basis
}

/// The homotopy residual system for one perturbed game.
pub struct System {
    pub pg: PerturbedGame,
    pub m: usize,
    pub n: usize,
    basis1: Vec<DMatrix<f64>>,
    basis2: Vec<DMatrix<f64>>,
}

/// Constraint closing the corrector system.
pub enum Constraint<'a> {
    /// Pseudo-arclength hyperplane through `base` with normal `normal`
    /// (both in reduced coordinates including t).
    Hyperplane {
        base: &'a DVector<f64>,
        normal: &'a DVector<f64>,
    },
    /// Hold t fixed at its current value; solve only over (X, Y, w, v).
    FixedT,
}

impl System {
    pub fn new(pg: PerturbedGame) -> Self {
        let m = pg.base.m();
        let n = pg.base.n();
        let basis1 = mask_basis(m, pg.base.mask1);
        let basis2 = mask_basis(n, pg.base.mask2);
        Self {
            pg,
            m,
            n,
            basis1,
            basis2,
        }
    }

    pub fn game(&self) -> &SdGame {
        &self.pg.base
    }

    pub fn n_equations(&self) -> usize {
        self.m * self.m + self.n * self.n + 2
    }

    /// Reduced dimension without the t coordinate.
    pub fn n_reduced(&self) -> usize {
        self.basis1.len() + self.basis2.len() + 2
    }

    /// Φ_{A(t)}(Y) = Φ_A(Y) + t·(𝟙ᵀY𝟙)·E_kk on raw storage.
    pub fn phi_a_t(&self, y: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let mut phi = game::contract_phi_a(&self.pg.base.a, y);
        phi[(self.pg.k, self.pg.k)] += t * y.sum();
        phi
    }

    pub fn slack_w(&self, y: &DMatrix<f64>, w: f64, t: f64) -> DMatrix<f64> {
        let mut s = -self.phi_a_t(y, t);
        for i in 0..self.m {
            s[(i, i)] += w;
        }
        s
    }

    pub fn slack_v(&self, x: &DMatrix<f64>, v: f64) -> DMatrix<f64> {
        let mut s = -game::contract_phi_b(&self.pg.base.b, x);
        for i in 0..self.n {
            s[(i, i)] += v;
        }
        s
    }

    /// Residual vector, length `n_equations()`.
    pub fn residual(&self, z: &FullVars) -> DVector<f64> {
        let (m, n) = (self.m, self.n);
        let w_mat = self.slack_w(&z.y, z.w, z.t);
        let v_mat = self.slack_v(&z.x, z.v);
        let mut r = DVector::zeros(self.n_equations());
        if self.pg.base.mask1.is_diagonal() {
            for i in 0..m {
                for j in 0..m {
                    r[i * m + j] = if i == j {
                        z.x[(i, i)] * w_mat[(i, i)]
                    } else {
                        z.x[(i, j)]
                    };
                }
            }
        } else {
            let xw = &z.x * &w_mat;
            for i in 0..m {
                for j in 0..m {
                    r[i * m + j] = xw[(i, j)];
                }
            }
        }
        let off = m * m;
        if self.pg.base.mask2.is_diagonal() {
            for p in 0..n {
                for q in 0..n {
                    r[off + p * n + q] = if p == q {
                        z.y[(p, p)] * v_mat[(p, p)]
                    } else {
                        z.y[(p, q)]
                    };
                }
            }
        } else {
            let yv = &z.y * &v_mat;
            for p in 0..n {
                for q in 0..n {
                    r[off + p * n + q] = yv[(p, q)];
                }
            }
        }
        r[off + n * n] = z.x.trace() - 1.0;
        r[off + n * n + 1] = z.y.trace() - 1.0;
        r
    }

    /// Exact Jacobian of the residual, columns over
    /// (vec X row-major, vec Y row-major, w, v, t).
    pub fn jacobian(&self, z: &FullVars) -> DMatrix<f64> {
        let (m, n) = (self.m, self.n);
        let k = self.pg.k;
        let a = &self.pg.base.a;
        let b = &self.pg.base.b;
        let w_mat = self.slack_w(&z.y, z.w, z.t);
        let v_mat = self.slack_v(&z.x, z.v);
        let sum_y = z.y.sum();
        let ncols = m * m + n * n + 3;
        let mut jac = DMatrix::zeros(self.n_equations(), ncols);
        let colx = |p: usize, q: usize| p * m + q;
        let coly = |r: usize, s: usize| m * m + r * n + s;
        let (col_w, col_v, col_t) = (m * m + n * n, m * m + n * n + 1, m * m + n * n + 2);
        // d A(t)_{ajrs} / dY_{rs} contraction uses the perturbed tensor entry
        let a_t = |i: usize, j: usize, r: usize, s: usize| {
            a.at(i, j, r, s) + if i == k && j == k { z.t } else { 0.0 }
        };

        // player 1 rows
        if self.pg.base.mask1.is_diagonal() {
            for i in 0..m {
                for j in 0..m {
                    let row = i * m + j;
                    if i == j {
                        jac[(row, colx(i, i))] = w_mat[(i, i)];
                        for r in 0..n {
                            for s in 0..n {
                                jac[(row, coly(r, s))] = -z.x[(i, i)] * a_t(i, i, r, s);
                            }
                        }
                        jac[(row, col_w)] = z.x[(i, i)];
                        if i == k {
                            jac[(row, col_t)] = -z.x[(i, i)] * sum_y;
                        }
                    } else {
                        jac[(row, colx(i, j))] = 1.0;
                    }
                }
            }
        } else {
            for i in 0..m {
                for j in 0..m {
                    let row = i * m + j;
                    for q in 0..m {
                        jac[(row, colx(i, q))] = w_mat[(q, j)];
                    }
                    for r in 0..n {
                        for s in 0..n {
                            let mut d = 0.0;
                            for aa in 0..m {
                                d -= z.x[(i, aa)] * a_t(aa, j, r, s);
                            }
                            jac[(row, coly(r, s))] = d;
                        }
                    }
                    jac[(row, col_w)] = z.x[(i, j)];
                    if j == k {
                        jac[(row, col_t)] = -z.x[(i, k)] * sum_y;
                    }
                }
            }
        }

        // player 2 rows
        let off = m * m;
        if self.pg.base.mask2.is_diagonal() {
            for p in 0..n {
                for q in 0..n {
                    let row = off + p * n + q;
                    if p == q {
                        jac[(row, coly(p, p))] = v_mat[(p, p)];
                        for i in 0..m {
                            for j in 0..m {
                                jac[(row, colx(i, j))] = -z.y[(p, p)] * b.at(i, j, p, p);
                            }
                        }
                        jac[(row, col_v)] = z.y[(p, p)];
                    } else {
                        jac[(row, coly(p, q))] = 1.0;
                    }
                }
            }
        } else {
            for p in 0..n {
                for q in 0..n {
                    let row = off + p * n + q;
                    for s in 0..n {
                        jac[(row, coly(p, s))] = v_mat[(s, q)];
                    }
                    for i in 0..m {
                        for j in 0..m {
                            let mut d = 0.0;
                            for bb in 0..n {
                                d -= z.y[(p, bb)] * b.at(i, j, bb, q);
                            }
                            jac[(row, colx(i, j))] = d;
                        }
                    }
                    jac[(row, col_v)] = z.y[(p, q)];
                }
            }
        }

        let tr_x_row = off + n * n;
        for i in 0..m {
            jac[(tr_x_row, colx(i, i))] = 1.0;
        }
        let tr_y_row = tr_x_row + 1;
        for p in 0..n {
            jac[(tr_y_row, coly(p, p))] = 1.0;
        }
        jac
    }

    /// Jacobian restricted to the symmetric/diagonal coordinate embedding.
    /// Columns: reduced strategy coordinates, w, v, and optionally t.
    pub fn jacobian_reduced(&self, z: &FullVars, with_t: bool) -> DMatrix<f64> {
        let full = self.jacobian(z);
        self.reduce_columns(&full, with_t)
    }

    pub fn reduce_columns(&self, full: &DMatrix<f64>, with_t: bool) -> DMatrix<f64> {
        let (m, n) = (self.m, self.n);
        let d1 = self.basis1.len();
        let d2 = self.basis2.len();
        let ncols = d1 + d2 + 2 + usize::from(with_t);
        let mut out = DMatrix::zeros(full.nrows(), ncols);
        for (c, e) in self.basis1.iter().enumerate() {
            let mut col = DVector::zeros(full.nrows());
            for i in 0..m {
                for j in 0..m {
                    let v = e[(i, j)];
                    if v != 0.0 {
                        col += full.column(i * m + j) * v;
                    }
                }
            }
            out.set_column(c, &col);
        }
        for (c, e) in self.basis2.iter().enumerate() {
            let mut col = DVector::zeros(full.nrows());
            for p in 0..n {
                for q in 0..n {
                    let v = e[(p, q)];
                    if v != 0.0 {
                        col += full.column(m * m + p * n + q) * v;
                    }
                }
            }
            out.set_column(d1 + c, &col);
        }
        out.set_column(d1 + d2, &full.column(m * m + n * n).into_owned());
        out.set_column(d1 + d2 + 1, &full.column(m * m + n * n + 1).into_owned());
        if with_t {
            out.set_column(d1 + d2 + 2, &full.column(m * m + n * n + 2).into_owned());
        }
        out
    }

    /// Pack a full state into reduced coordinates (including t).
    pub fn to_reduced(&self, z: &FullVars) -> DVector<f64> {
        let d1 = self.basis1.len();
        let d2 = self.basis2.len();
        let mut out = DVector::zeros(d1 + d2 + 3);
        for (c, e) in self.basis1.iter().enumerate() {
            out[c] = e.dot(&z.x);
        }
        for (c, e) in self.basis2.iter().enumerate() {
            out[d1 + c] = e.dot(&z.y);
        }
        out[d1 + d2] = z.w;
        out[d1 + d2 + 1] = z.v;
        out[d1 + d2 + 2] = z.t;
        out
    }

    /// Expand reduced coordinates (including t) back to matrices.
    pub fn to_full(&self, zeta: &DVector<f64>) -> FullVars {
        let d1 = self.basis1.len();
        let d2 = self.basis2.len();
        let mut x = DMatrix::zeros(self.m, self.m);
        for (c, e) in self.basis1.iter().enumerate() {
            x += e * zeta[c];
        }
        let mut y = DMatrix::zeros(self.n, self.n);
        for (c, e) in self.basis2.iter().enumerate() {
            y += e * zeta[d1 + c];
        }
        FullVars {
            x,
            y,
            w: zeta[d1 + d2],
            v: zeta[d1 + d2 + 1],
            t: zeta[d1 + d2 + 2],
        }
    }

    /// Expand the strategy blocks of a reduced direction, returning the
    /// full-coordinate direction over (vec X, vec Y, w, v, t).
    pub fn direction_to_full(&self, dir: &DVector<f64>) -> DVector<f64> {
        let z = self.to_full(dir);
        let (m, n) = (self.m, self.n);
        let mut out = DVector::zeros(m * m + n * n + 3);
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = z.x[(i, j)];
            }
        }
        for p in 0..n {
            for q in 0..n {
                out[m * m + p * n + q] = z.y[(p, q)];
            }
        }
        out[m * m + n * n] = z.w;
        out[m * m + n * n + 1] = z.v;
        out[m * m + n * n + 2] = z.t;
        out
    }

    /// Gauss-Newton correction with minimum-norm least-squares updates.
    /// Returns the corrected reduced state (including t) and the final
    /// residual norm (constraint row included in the convergence test).
    pub fn correct(
        &self,
        start: &DVector<f64>,
        constraint: Constraint<'_>,
        tol: f64,
    ) -> Result<(DVector<f64>, f64, usize), CorrectorFailure> {
        let mut zeta = start.clone();
        let mut best = f64::INFINITY;
        let mut grew = 0;
        for iter in 0..MAX_CORRECTOR_ITERS {
            let z = self.to_full(&zeta);
            let r = self.residual(&z);
            let (aug_norm, delta) = match constraint {
                Constraint::Hyperplane { base, normal } => {
                    let c = normal.dot(&(&zeta - base));
                    let mut rhs = DVector::zeros(r.len() + 1);
                    rhs.rows_mut(0, r.len()).copy_from(&r);
                    rhs[r.len()] = c;
                    let norm = rhs.norm();
                    if norm <= tol {
                        return Ok((zeta, norm, iter));
                    }
                    let jr = self.jacobian_reduced(&z, true);
                    let mut jac = DMatrix::zeros(jr.nrows() + 1, jr.ncols());
                    jac.rows_mut(0, jr.nrows()).copy_from(&jr);
                    jac.row_mut(jr.nrows()).copy_from(&normal.transpose());
                    (norm, min_norm_solve(&jac, &(-rhs)))
                }
                Constraint::FixedT => {
                    let norm = r.norm();
                    if norm <= tol {
                        return Ok((zeta, norm, iter));
                    }
                    let jr = self.jacobian_reduced(&z, false);
                    let step = min_norm_solve(&jr, &(-r));
                    let mut delta = DVector::zeros(zeta.len());
                    delta.rows_mut(0, step.len()).copy_from(&step);
                    (norm, delta)
                }
            };
            if !aug_norm.is_finite() {
                return Err(CorrectorFailure::Diverged);
            }
            if aug_norm > 10.0 * best {
                grew += 1;
                if grew >= 2 {
                    return Err(CorrectorFailure::Diverged);
                }
            } else {
                grew = 0;
            }
            best = best.min(aug_norm);
            if !delta.iter().all(|d| d.is_finite()) {
                return Err(CorrectorFailure::Diverged);
            }
            zeta += delta;
        }
        // final convergence check after the iteration budget
        let z = self.to_full(&zeta);
        let norm = self.residual(&z).norm();
        if norm <= tol {
            Ok((zeta, norm, MAX_CORRECTOR_ITERS))
        } else {
            Err(CorrectorFailure::NotConverged { residual: norm })
        }
    }

    /// Smallest singular value of the square (t-free) sub-Jacobian on the
    /// symmetric embedding: the §6-style smoothness monitor.
    pub fn subjacobian_min_sv(&self, z: &FullVars) -> f64 {
        let jr = self.jacobian_reduced(&z.clone(), false);
        singular_values_sorted(&jr)[0]
    }
}

#[derive(Debug, Clone)]
pub enum CorrectorFailure {
    Diverged,
    NotConverged { residual: f64 },
}

/// Minimum-norm least-squares solution of J·δ = b via SVD with a relative
/// singular-value cutoff.
pub fn min_norm_solve(jac: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = jac.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    svd.solve(b, PINV_CUTOFF * max_sv.max(1.0))
        .expect("svd.solve with u and v computed")
}

/// Singular values of an arbitrary matrix, ascending, padded with zero rows
/// first when the matrix is wide so the count always equals the column count.
pub fn singular_values_sorted(mat: &DMatrix<f64>) -> Vec<f64> {
    let m = pad_to_tall(mat);
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| a.partial_cmp(b).expect("finite singular values"));
    sv
}

/// Right null vector for the smallest singular value, plus all singular
/// values in ascending order (for the one-dimensionality test).
pub fn null_vector(mat: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let m = pad_to_tall(mat);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[a]
            .partial_cmp(&svd.singular_values[b])
            .expect("finite singular values")
    });
    let null = v_t.row(order[0]).transpose();
    let svs = order.iter().map(|&i| svd.singular_values[i]).collect();
    (null, svs)
}

/// Null vector after row equilibration. Large bonus values mix O(t0) and
/// O(1) rows, which wrecks relative singular-value gaps; scaling each row to
/// unit norm leaves the null space unchanged and makes the
/// one-dimensionality test meaningful. Rows that are negligible against the
/// largest row are roundoff debris (they arise where a residual row
/// degenerates at an event) and must not be inflated, so they keep their
/// scale.
pub fn null_vector_equilibrated(mat: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let norms: Vec<f64> = (0..mat.nrows()).map(|i| mat.row(i).norm()).collect();
    let max_norm = norms.iter().fold(0.0_f64, |a, &n| a.max(n));
    if max_norm == 0.0 {
        return null_vector(mat);
    }
    let mut scaled = mat.clone();
    for (i, &norm) in norms.iter().enumerate() {
        if norm > 1e-10 * max_norm {
            let inv = 1.0 / norm;
            for j in 0..scaled.ncols() {
                scaled[(i, j)] *= inv;
            }
        }
    }
    null_vector(&scaled)
}

fn pad_to_tall(mat: &DMatrix<f64>) -> DMatrix<f64> {
    if mat.nrows() >= mat.ncols() {
        mat.clone()
    } else {
        let mut out = DMatrix::zeros(mat.ncols(), mat.ncols());
        out.rows_mut(0, mat.nrows()).copy_from(mat);
        out
    }
}
