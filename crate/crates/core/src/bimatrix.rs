//! Classical Lemke-Howson machinery for bimatrix games: labels,
//! complementary pivoting on the pair of best-response polytopes, support
//! enumeration, the diagonal embedding into semidefinite games and a
//! grid-plus-polish brute force for 2x2 semidefinite games. These serve as
//! independent oracles for the path tracer.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::game::{self, PayoffTensor, SdGame, StructureMask};
use crate::linalg::SymMatrix;
use crate::tracer;

/// Tolerance for zero coordinates and binding best responses in labels.
pub const LABEL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BimatrixError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate game: {0}")]
    DegenerateGame(String),
    #[error("internal error: {0}")]
    InternalError(String),
}

/// Two-player game in strategic form with m x n payoff matrices.
#[derive(Debug, Clone)]
pub struct BimatrixGame {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl BimatrixGame {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, BimatrixError> {
        if a.shape() != b.shape() || a.nrows() == 0 || a.ncols() == 0 {
            return Err(BimatrixError::InvalidInput(format!(
                "payoff shapes {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(BimatrixError::InvalidInput("non-finite payoff".into()));
        }
        Ok(Self { a, b })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Shift making every payoff entry strictly positive; shifting does not
    /// change the best-response structure of either player.
    fn positivity_shift(&self) -> f64 {
        let min = self
            .a
            .iter()
            .chain(self.b.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        1.0 + min.abs()
    }
}

/// Set of labels in {1..m+n} attributed to one player's strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: Vec<usize>,
}

impl LabelSet {
    pub fn union_covers(&self, other: &LabelSet, total: usize) -> bool {
        let mut seen = vec![false; total + 1];
        for &l in self.labels.iter().chain(other.labels.iter()) {
            if l >= 1 && l <= total {
                seen[l] = true;
            }
        }
        (1..=total).all(|l| seen[l])
    }
}

/// Labels of a strategy: zero coordinates plus binding best responses of the
/// opponent (1..m for player 1 rows, m+1..m+n for player 2 columns). The
/// artificial all-zero strategy carries exactly its own coordinate labels.
pub fn labels_of(point: &[f64], game: &BimatrixGame, side: usize) -> LabelSet {
    let (m, n) = (game.m(), game.n());
    let mut labels = Vec::new();
    let artificial = point.iter().all(|&v| v.abs() <= LABEL_TOL);
    match side {
        1 => {
            assert_eq!(point.len(), m);
            for (i, &v) in point.iter().enumerate() {
                if v.abs() <= LABEL_TOL {
                    labels.push(i + 1);
                }
            }
            if !artificial {
                let x = DVector::from_column_slice(point);
                let payoffs = game.b.transpose() * x;
                let best = payoffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for j in 0..n {
                    if best - payoffs[j] <= LABEL_TOL {
                        labels.push(m + j + 1);
                    }
                }
            }
        }
        2 => {
            assert_eq!(point.len(), n);
            for (j, &v) in point.iter().enumerate() {
                if v.abs() <= LABEL_TOL {
                    labels.push(m + j + 1);
                }
            }
            if !artificial {
                let y = DVector::from_column_slice(point);
                let payoffs = &game.a * y;
                let best = payoffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..m {
                    if best - payoffs[i] <= LABEL_TOL {
                        labels.push(i + 1);
                    }
                }
            }
        }
        _ => panic!("side must be 1 or 2"),
    }
    labels.sort_unstable();
    labels.dedup();
    LabelSet { labels }
}

/// Complementary-pivoting result.
#[derive(Debug, Clone)]
pub struct LhResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: f64,
    pub v: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    X(usize),
    SlackP(usize),
    Y(usize),
    SlackQ(usize),
}

impl Var {
    /// Label carried by the variable's vanishing.
    fn label(self, m: usize) -> usize {
        match self {
            Var::X(i) => i + 1,
            Var::SlackQ(i) => i + 1,
            Var::SlackP(j) => m + j + 1,
            Var::Y(j) => m + j + 1,
        }
    }
}

/// Dictionary tableau rows: basic = rhs - M·nonbasic over all columns.
struct Tableau {
    /// coefficient matrix over all candidate variables (columns)
    mat: DMatrix<f64>,
    rhs: DVector<f64>,
    basis: Vec<Var>,
    cols: Vec<Var>,
}

impl Tableau {
    fn col_of(&self, var: Var) -> usize {
        self.cols
            .iter()
            .position(|&c| c == var)
            .expect("variable belongs to this tableau")
    }

    /// Minimum-ratio pivot bringing `entering` into the basis. Returns the
    /// leaving variable; ties in the ratio test are reported as degeneracy.
    fn pivot(&mut self, entering: Var) -> Result<Var, BimatrixError> {
        let c = self.col_of(entering);
        let rows = self.mat.nrows();
        let mut best: Option<(usize, f64)> = None;
        let scale = self.rhs.amax().max(1.0);
        let mut tie = false;
        for r in 0..rows {
            let coef = self.mat[(r, c)];
            if coef > 1e-12 {
                let ratio = self.rhs[r] / coef;
                match best {
                    None => best = Some((r, ratio)),
                    Some((_, b)) => {
                        if ratio < b - 1e-9 * scale {
                            best = Some((r, ratio));
                            tie = false;
                        } else if (ratio - b).abs() <= 1e-9 * scale {
                            tie = true;
                        }
                    }
                }
            }
        }
        let (row, _) = best.ok_or_else(|| {
            BimatrixError::InternalError("unbounded ray in min-ratio test".into())
        })?;
        if tie {
            return Err(BimatrixError::DegenerateGame(
                "tie in the minimum-ratio test".into(),
            ));
        }
        let leaving = self.basis[row];
        // normalize pivot row, eliminate the entering column elsewhere
        let pivot = self.mat[(row, c)];
        for j in 0..self.mat.ncols() {
            self.mat[(row, j)] /= pivot;
        }
        self.rhs[row] /= pivot;
        for r in 0..rows {
            if r != row {
                let f = self.mat[(r, c)];
                if f != 0.0 {
                    for j in 0..self.mat.ncols() {
                        self.mat[(r, j)] -= f * self.mat[(row, j)];
                    }
                    self.rhs[r] -= f * self.rhs[row];
                }
            }
        }
        self.basis[row] = entering;
        Ok(leaving)
    }

    fn value_of(&self, var: Var) -> f64 {
        self.basis
            .iter()
            .position(|&b| b == var)
            .map(|r| self.rhs[r])
            .unwrap_or(0.0)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Classical Lemke-Howson pivoting with missing label k (1-based, a row
/// label of player 1). The game is internally shifted so all payoffs are
/// positive before building the best-response polytopes.
pub fn lemke_howson(game: &BimatrixGame, k: usize) -> Result<LhResult, BimatrixError> {
    let (m, n) = (game.m(), game.n());
    if k < 1 || k > m {
        return Err(BimatrixError::InvalidInput(format!(
            "missing label k = {k} out of range 1..={m}"
        )));
    }
    let shift = game.positivity_shift();
    let a = game.a.map(|x| x + shift);
    let b = game.b.map(|x| x + shift);

    // polytope P = {x >= 0 : B^T x <= 1}: rows are the n slacks s_j
    let mut p_cols: Vec<Var> = (0..m).map(Var::X).collect();
    p_cols.extend((0..n).map(Var::SlackP));
    let mut p_mat = DMatrix::zeros(n, m + n);
    for j in 0..n {
        for i in 0..m {
            p_mat[(j, i)] = b[(i, j)];
        }
        p_mat[(j, m + j)] = 1.0;
    }
    let mut tab_p = Tableau {
        mat: p_mat,
        rhs: DVector::from_element(n, 1.0),
        basis: (0..n).map(Var::SlackP).collect(),
        cols: p_cols,
    };

    // polytope Q = {y >= 0 : A y <= 1}: rows are the m slacks r_i
    let mut q_cols: Vec<Var> = (0..n).map(Var::Y).collect();
    q_cols.extend((0..m).map(Var::SlackQ));
    let mut q_mat = DMatrix::zeros(m, n + m);
    for i in 0..m {
        for j in 0..n {
            q_mat[(i, j)] = a[(i, j)];
        }
        q_mat[(i, n + i)] = 1.0;
    }
    let mut tab_q = Tableau {
        mat: q_mat,
        rhs: DVector::from_element(m, 1.0),
        basis: (0..m).map(Var::SlackQ).collect(),
        cols: q_cols,
    };

    let missing = k;
    let mut entering = Var::X(k - 1);
    let mut in_p = true;
    let mut pivots = 0usize;
    let max_pivots = binomial(m + n, m).max(4);
    loop {
        let leaving = if in_p {
            tab_p.pivot(entering)?
        } else {
            tab_q.pivot(entering)?
        };
        pivots += 1;
        let label = leaving.label(m);
        if label == missing {
            break;
        }
        if pivots > max_pivots {
            return Err(BimatrixError::InternalError(format!(
                "cycle suspected: {pivots} pivots exceed C(m+n, m)"
            )));
        }
        // release the duplicate label in the other polytope
        in_p = !in_p;
        entering = if in_p {
            if label <= m {
                Var::X(label - 1)
            } else {
                Var::SlackP(label - m - 1)
            }
        } else if label <= m {
            Var::SlackQ(label - 1)
        } else {
            Var::Y(label - m - 1)
        };
    }

    let x_raw: Vec<f64> = (0..m).map(|i| tab_p.value_of(Var::X(i))).collect();
    let y_raw: Vec<f64> = (0..n).map(|j| tab_q.value_of(Var::Y(j))).collect();
    let sx: f64 = x_raw.iter().sum();
    let sy: f64 = y_raw.iter().sum();
    if sx <= 0.0 || sy <= 0.0 {
        return Err(BimatrixError::InternalError(
            "terminated at the artificial equilibrium".into(),
        ));
    }
    Ok(LhResult {
        x: x_raw.iter().map(|v| v / sx).collect(),
        y: y_raw.iter().map(|v| v / sy).collect(),
        w: 1.0 / sy - shift,
        v: 1.0 / sx - shift,
        pivots,
    })
}

/// One equilibrium found by support enumeration.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: f64,
    pub v: f64,
}

fn subsets_of_size(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    rec(0, n, size, &mut cur, &mut out);
    out
}

/// Enumerate all equilibria of a small game (m, n <= 4) by solving the
/// support-restricted indifference systems over equal-size support pairs;
/// complete for non-degenerate games. Singular support systems are skipped.
pub fn support_enumeration(game: &BimatrixGame) -> Result<Vec<Equilibrium>, BimatrixError> {
    let (m, n) = (game.m(), game.n());
    if m > 4 || n > 4 {
        return Err(BimatrixError::InvalidInput(
            "support enumeration is limited to m, n <= 4".into(),
        ));
    }
    let tol = 1e-9;
    let mut found: Vec<Equilibrium> = Vec::new();
    for size in 1..=m.min(n) {
        for rows in subsets_of_size(m, size) {
            for cols in subsets_of_size(n, size) {
                // indifference of player 1 across `rows` against y on `cols`
                let mut sys_y = DMatrix::zeros(size + 1, size + 1);
                let mut rhs_y = DVector::zeros(size + 1);
                for (r, &i) in rows.iter().enumerate() {
                    for (c, &j) in cols.iter().enumerate() {
                        sys_y[(r, c)] = game.a[(i, j)];
                    }
                    sys_y[(r, size)] = -1.0; // -w
                }
                for c in 0..size {
                    sys_y[(size, c)] = 1.0;
                }
                rhs_y[size] = 1.0;
                let Some(sol_y) = sys_y.lu().solve(&rhs_y) else {
                    continue;
                };
                // player 2 against x on `rows`
                let mut sys_x = DMatrix::zeros(size + 1, size + 1);
                let mut rhs_x = DVector::zeros(size + 1);
                for (c, &j) in cols.iter().enumerate() {
                    for (r, &i) in rows.iter().enumerate() {
                        sys_x[(c, r)] = game.b[(i, j)];
                    }
                    sys_x[(c, size)] = -1.0; // -v
                }
                for r in 0..size {
                    sys_x[(size, r)] = 1.0;
                }
                rhs_x[size] = 1.0;
                let Some(sol_x) = sys_x.lu().solve(&rhs_x) else {
                    continue;
                };
                let w = sol_y[size];
                let v = sol_x[size];
                let mut y = vec![0.0; n];
                for (c, &j) in cols.iter().enumerate() {
                    y[j] = sol_y[c];
                }
                let mut x = vec![0.0; m];
                for (r, &i) in rows.iter().enumerate() {
                    x[i] = sol_x[r];
                }
                if x.iter().any(|&xi| xi < -tol) || y.iter().any(|&yj| yj < -tol) {
                    continue;
                }
                // best-response feasibility outside the supports
                let xv = DVector::from_column_slice(&x);
                let yv = DVector::from_column_slice(&y);
                let ay = &game.a * &yv;
                let btx = game.b.transpose() * &xv;
                if (0..m).any(|i| ay[i] > w + 1e-8) || (0..n).any(|j| btx[j] > v + 1e-8) {
                    continue;
                }
                let dup = found.iter().any(|e| {
                    e.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum::<f64>()
                        + e.y.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>()
                        < 1e-7
                });
                if !dup {
                    found.push(Equilibrium { x, y, w, v });
                }
            }
        }
    }
    Ok(found)
}

/// Embed a bimatrix game as a diagonal semidefinite game:
/// A_{iikk} = a_{ik}, B_{iikk} = b_{ik}, all other entries zero, both masks
/// diagonal.
pub fn embed_diagonal(game: &BimatrixGame) -> SdGame {
    let (m, n) = (game.m(), game.n());
    let mut a = PayoffTensor::zeros(m, n);
    let mut b = PayoffTensor::zeros(m, n);
    for i in 0..m {
        let mut sa = DMatrix::zeros(n, n);
        let mut sb = DMatrix::zeros(n, n);
        for k in 0..n {
            sa[(k, k)] = game.a[(i, k)];
            sb[(k, k)] = game.b[(i, k)];
        }
        a.set_slice(i, i, &sa);
        b.set_slice(i, i, &sb);
    }
    SdGame::new(a, b, StructureMask::Diagonal, StructureMask::Diagonal)
        .expect("shapes consistent by construction")
}

/// Approximate equilibrium cluster found by the 2x2 brute force.
#[derive(Debug, Clone)]
pub struct BruteCluster {
    pub x: SymMatrix,
    pub y: SymMatrix,
    pub w: f64,
    pub v: f64,
    pub members: usize,
}

/// Parameters of the grid search.
#[derive(Debug, Clone)]
pub struct BruteForceOptions {
    /// Grid spacing of the disk coordinates in [-1, 1].
    pub resolution: f64,
    /// Best-response slack accepted at grid points before polishing.
    pub epsilon: f64,
    /// Frobenius clustering radius applied after polishing.
    pub cluster_radius: f64,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            epsilon: 0.0, // 0 = derive from resolution
            cluster_radius: 1e-3,
        }
    }
}

/// Grid the disk section {(r1, r3): r1² + r3² <= 1} of 2x2 density matrices
/// X = ((1+r3, r1), (r1, 1-r3))/2, keep pairs where both players are within
/// epsilon of a best response, polish with Gauss-Newton on the
/// complementarity equalities, and return cluster representatives.
pub fn brute_force_2x2_sdg(
    game: &SdGame,
    options: &BruteForceOptions,
) -> Result<Vec<BruteCluster>, BimatrixError> {
    if game.m() != 2 || game.n() != 2 {
        return Err(BimatrixError::InvalidInput(
            "brute force supports only 2x2 games".into(),
        ));
    }
    if game.mask1.is_diagonal() || game.mask2.is_diagonal() {
        return Err(BimatrixError::InvalidInput(
            "brute force expects full masks".into(),
        ));
    }
    let res = options.resolution;
    if !(res > 0.0 && res <= 0.5) {
        return Err(BimatrixError::InvalidInput(format!(
            "resolution {res} out of (0, 0.5]"
        )));
    }
    let payoff_scale = game.a.max_abs_entry().max(game.b.max_abs_entry()).max(1.0);
    let eps = if options.epsilon > 0.0 {
        options.epsilon
    } else {
        4.0 * res * payoff_scale
    };

    // disk grid of density matrices, stored flat as (x11, x12, x22) with
    // their integer grid coordinates for cell-based deduplication
    let steps = (2.0 / res).round() as i64;
    let mut grid: Vec<[f64; 3]> = Vec::new();
    let mut cells: Vec<(i64, i64)> = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            let r1 = -1.0 + i as f64 * res;
            let r3 = -1.0 + j as f64 * res;
            if r1 * r1 + r3 * r3 <= 1.0 + 1e-12 {
                grid.push([(1.0 + r3) / 2.0, r1 / 2.0, (1.0 - r3) / 2.0]);
                cells.push((i, j));
            }
        }
    }
    let sym_of = |c: &[f64; 3]| {
        SymMatrix::from_rows(&[&[c[0], c[1]], &[c[1], c[2]]]).expect("entries finite")
    };

    // per-point payoff operators (as (p11, p12, p22)) and top eigenvalues
    let top_eig = |p: &[f64; 3]| -> f64 {
        let mean = 0.5 * (p[0] + p[2]);
        let rad = (0.25 * (p[0] - p[2]).powi(2) + p[1] * p[1]).sqrt();
        mean + rad
    };
    let phi_a: Vec<([f64; 3], f64)> = grid
        .iter()
        .map(|y| {
            let p = game::phi_a(&game.a, &sym_of(y)).expect("dims fixed");
            let flat = [p.get(0, 0), p.get(0, 1), p.get(1, 1)];
            (flat, top_eig(&flat))
        })
        .collect();
    let phi_b: Vec<([f64; 3], f64)> = grid
        .iter()
        .map(|x| {
            let p = game::phi_b_prime(&game.b, &sym_of(x)).expect("dims fixed");
            let flat = [p.get(0, 0), p.get(0, 1), p.get(1, 1)];
            (flat, top_eig(&flat))
        })
        .collect();

    // epsilon-best-response filter over all pairs, deduplicated into coarse
    // 4-dimensional cells so the polish stage stays bounded on degenerate
    // games; keeping the smallest index pair per cell is deterministic
    // regardless of the parallel schedule
    let dedup_radius = (2.0 * res).max(5e-2);
    let q = (dedup_radius / res).ceil().max(1.0) as i64;
    let npts = grid.len();
    // structure-of-arrays for the hot pair scan
    let mut pa = vec![[0.0f64; 3]; 0];
    pa.reserve(npts);
    let mut w_best = Vec::with_capacity(npts);
    for (p, w) in &phi_a {
        pa.push(*p);
        w_best.push(*w);
    }
    let mut pb = Vec::with_capacity(npts);
    let mut v_best = Vec::with_capacity(npts);
    for (p, v) in &phi_b {
        pb.push(*p);
        v_best.push(*v);
    }
    let reps_map = (0..npts)
        .into_par_iter()
        .fold(
            std::collections::BTreeMap::<(i64, i64, i64, i64), (usize, usize)>::new,
            |mut acc, xi| {
                let x = grid[xi];
                let (pbx, vb) = (pb[xi], v_best[xi]);
                for yi in 0..npts {
                    let p = pa[yi];
                    let payoff_a = x[0] * p[0] + 2.0 * x[1] * p[1] + x[2] * p[2];
                    if payoff_a + eps < w_best[yi] {
                        continue;
                    }
                    let y = grid[yi];
                    let payoff_b = pbx[0] * y[0] + 2.0 * pbx[1] * y[1] + pbx[2] * y[2];
                    if payoff_b + eps < vb {
                        continue;
                    }
                    let key = (
                        cells[xi].0 / q,
                        cells[xi].1 / q,
                        cells[yi].0 / q,
                        cells[yi].1 / q,
                    );
                    let entry = acc.entry(key).or_insert((xi, yi));
                    if (xi, yi) < *entry {
                        *entry = (xi, yi);
                    }
                }
                acc
            },
        )
        .reduce(
            std::collections::BTreeMap::new,
            |mut a, b| {
                for (k, v) in b {
                    let entry = a.entry(k).or_insert(v);
                    if v < *entry {
                        *entry = v;
                    }
                }
                a
            },
        );
    let reps: Vec<(usize, usize)> = reps_map.into_values().collect();

    // polish representatives onto the complementarity manifold in parallel
    // (order-stable collect), verify, then cluster
    let polished: Vec<(SymMatrix, SymMatrix, f64, f64)> = reps
        .par_iter()
        .filter_map(|&(xi, yi)| {
            let (x, y, w, v) =
                tracer::polish_equilibrium(game, &sym_of(&grid[xi]), &sym_of(&grid[yi]))?;
            let xd = game::DensityMatrix::new(x.clone(), game.mask1).ok()?;
            let yd = game::DensityMatrix::new(y.clone(), game.mask2).ok()?;
            let cert = game::verify_nash(game, &xd, &yd, game::VERIFY_TOL).ok()?;
            cert.valid.then_some((x, y, w, v))
        })
        .collect();

    let mut clusters: Vec<BruteCluster> = Vec::new();
    for (x, y, w, v) in polished {
        let mut assigned = false;
        for c in clusters.iter_mut() {
            // cheap scalar reject before the full Frobenius distance
            if (c.x.get(0, 0) - x.get(0, 0)).abs() >= options.cluster_radius {
                continue;
            }
            let dist = (c.x.matrix() - x.matrix()).norm() + (c.y.matrix() - y.matrix()).norm();
            if dist < options.cluster_radius {
                c.members += 1;
                assigned = true;
                break;
            }
        }
        if !assigned {
            clusters.push(BruteCluster {
                x,
                y,
                w,
                v,
                members: 1,
            });
        }
    }
    Ok(clusters)
}
