//! The homotopy core: bonus perturbation, start-point construction,
//! pseudo-arclength predictor-corrector stepping and active-set bookkeeping.
//!
//! `trace_path` follows the solution curve of the perturbed complementarity
//! system from a dominant start point at a large bonus t0 down to t = 0,
//! handing event points (paired eigenvalue zeros) to the `events` module for
//! refinement and branch switching.

pub mod system;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::events::{self, EventError, EventKind, EventRecord, PuiseuxDiag};
use crate::game::{
    self, best_response_to_operator, DensityMatrix, NashCertificate, PayoffTensor, SdGame,
    StructureMask,
};
use crate::linalg::{sym_eigen, SymMatrix};
use system::{Constraint, FullVars, System};

/// Eigenvalues with magnitude below 1e-8 (relative) count as zero when
/// assigning and monitoring active sets.
pub const EIGEN_ZERO_TOL: f64 = 1e-8;

/// PSD feasibility slack at accepted points.
pub const FEAS_TOL: f64 = 1e-8;

/// Commutator tolerance handed to the joint diagonalization on path points.
const JOINT_DIAG_TOL: f64 = 1e-6;

/// Trial step length right after a branch switch.
const POST_EVENT_STEP: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum TracerError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("bonus ineffective for k = {k}: {reason} (last t0 tried: {t0})")]
    BonusIneffective { k: usize, t0: f64, reason: String },
    #[error("start point construction failed: {0}")]
    StartFailure(String),
    #[error("game is degenerate at the start point: {0}")]
    DegenerateStart(String),
}

/// Game with the bonus t added to every entry of the slice A_{kk··}.
#[derive(Debug, Clone)]
pub struct PerturbedGame {
    pub base: SdGame,
    /// Bonus strategy index of player 1 (0-based).
    pub k: usize,
    pub t: f64,
}

impl PerturbedGame {
    /// Materialized payoff tensor A(t).
    pub fn tensor_a(&self) -> PayoffTensor {
        let mut a = self.base.a.clone();
        let n = a.n();
        let mut slice = DMatrix::zeros(n, n);
        for r in 0..n {
            for s in 0..n {
                slice[(r, s)] = a.at(self.k, self.k, r, s) + self.t;
            }
        }
        a.set_slice(self.k, self.k, &slice);
        a
    }

    /// The full perturbed game at this bonus value.
    pub fn game_at_t(&self) -> SdGame {
        SdGame::new(
            self.tensor_a(),
            self.base.b.clone(),
            self.base.mask1,
            self.base.mask2,
        )
        .expect("shapes preserved")
    }
}

/// Add the bonus t to the (k,k) slice of A. t = 0 returns the base game
/// tensors unchanged.
pub fn perturb(game: &SdGame, k: usize, t: f64) -> Result<PerturbedGame, TracerError> {
    if k >= game.m() {
        return Err(TracerError::InvalidInput(format!(
            "k = {k} out of range for m = {}",
            game.m()
        )));
    }
    if !(t >= 0.0) {
        return Err(TracerError::InvalidInput(format!("bonus t = {t} must be >= 0")));
    }
    Ok(PerturbedGame {
        base: game.clone(),
        k,
        t,
    })
}

/// Which member of a complementarity eigenpair is the zero one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFlag {
    StrategyZero,
    SlackZero,
}

impl PairFlag {
    pub fn flipped(self) -> Self {
        match self {
            PairFlag::StrategyZero => PairFlag::SlackZero,
            PairFlag::SlackZero => PairFlag::StrategyZero,
        }
    }
}

/// Per-eigenpair zero assignment for both players.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub player1: Vec<PairFlag>,
    pub player2: Vec<PairFlag>,
}

impl ActiveSet {
    pub fn flags(&self, player: usize) -> &[PairFlag] {
        match player {
            1 => &self.player1,
            2 => &self.player2,
            _ => panic!("player index must be 1 or 2"),
        }
    }

    pub fn flags_mut(&mut self, player: usize) -> &mut Vec<PairFlag> {
        match player {
            1 => &mut self.player1,
            2 => &mut self.player2,
            _ => panic!("player index must be 1 or 2"),
        }
    }
}

/// Accepted point on the homotopy path. The joint eigensystems are stored in
/// tracked order: column i of `basis1` carries `pairs1[i]` and
/// `active.player1[i]` across steps.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w: f64,
    pub v: f64,
    pub t: f64,
    pub residual_norm: f64,
    pub active: ActiveSet,
    pub pairs1: Vec<(f64, f64)>,
    pub basis1: DMatrix<f64>,
    pub pairs2: Vec<(f64, f64)>,
    pub basis2: DMatrix<f64>,
}

impl PathPoint {
    pub fn vars(&self) -> FullVars {
        FullVars {
            x: self.x.clone(),
            y: self.y.clone(),
            w: self.w,
            v: self.v,
            t: self.t,
        }
    }

    pub fn pairs(&self, player: usize) -> &[(f64, f64)] {
        match player {
            1 => &self.pairs1,
            2 => &self.pairs2,
            _ => panic!("player index must be 1 or 2"),
        }
    }

    /// Largest |λ_strategy · λ_slack| over both players' tracked pairs.
    pub fn max_pair_product(&self) -> f64 {
        self.pairs1
            .iter()
            .chain(self.pairs2.iter())
            .fold(0.0, |a, (p, d)| a.max((p * d).abs()))
    }
}

/// Unit tangent of the path in both coordinate systems.
#[derive(Debug, Clone)]
pub struct Tangent {
    /// Over (vec X row-major, vec Y row-major, w, v, t).
    pub direction: DVector<f64>,
    pub(crate) reduced: DVector<f64>,
}

impl Tangent {
    pub fn dt(&self) -> f64 {
        self.direction[self.direction.len() - 1]
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("corrector rejected the step: {0}")]
    StepRejected(String),
    #[error("tangent computation found a null space of dimension != 1 (sv gap {gap:.3e})")]
    NearSingular { gap: f64 },
}

/// Options controlling a path trace.
#[derive(Debug, Clone)]
pub struct TraceOptions {
    pub max_steps: usize,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// t_max = tmax_mult · t0.
    pub tmax_mult: f64,
    pub corrector_tol: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            max_steps: 100_000,
            h0: 1e-2,
            h_min: 1e-12,
            h_max: 0.1,
            tmax_mult: 4.0,
            corrector_tol: system::CORRECTOR_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TraceRecord {
    Point(PathPoint),
    Event(EventRecord),
}

#[derive(Debug, Clone)]
pub enum TraceFailure {
    /// Step size fell below the minimum without the corrector converging.
    StallFailure { t: f64, detail: String },
    RangeExceeded { t: f64, t_max: f64 },
    PathLeavesStrategySpace { t: f64 },
    MaxStepsExceeded,
    TrackingAmbiguity { t: f64, detail: String },
    RefinementFailure { t: f64, detail: String },
}

impl TraceFailure {
    pub fn name(&self) -> &'static str {
        match self {
            TraceFailure::StallFailure { .. } => "StallFailure",
            TraceFailure::RangeExceeded { .. } => "RangeExceeded",
            TraceFailure::PathLeavesStrategySpace { .. } => "PathLeavesStrategySpace",
            TraceFailure::MaxStepsExceeded => "MaxStepsExceeded",
            TraceFailure::TrackingAmbiguity { .. } => "TrackingAmbiguity",
            TraceFailure::RefinementFailure { .. } => "RefinementFailure",
        }
    }
}

#[derive(Debug, Clone)]
pub enum TraceOutcome {
    Equilibrium {
        x: SymMatrix,
        y: SymMatrix,
        certificate: NashCertificate,
    },
    Failed(TraceFailure),
}

/// Ordered record of one homotopy run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub k: usize,
    pub t0: f64,
    pub records: Vec<TraceRecord>,
    pub outcome: TraceOutcome,
    /// A best-response tie was broken while constructing the start point.
    pub start_tie_broken: bool,
}

impl Trace {
    pub fn points(&self) -> impl Iterator<Item = &PathPoint> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Point(p) => Some(p),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Event(e) => Some(e),
            _ => None,
        })
    }

    pub fn crossing_events(&self) -> Vec<&EventRecord> {
        self.events()
            .filter(|e| matches!(e.kind, EventKind::PairedCrossing { .. }))
            .collect()
    }
}

// ---------------------------------------------------------------------
// start point
// ---------------------------------------------------------------------

/// Find a bonus t0 making the k-th diagonal strategy dominant: start from
/// 2·m·n·max|A| + 1 and double (at most 10 times) until the perturbed payoff
/// operator against the best response is top-dominated by e_k.
pub fn initial_bonus(game: &SdGame, k: usize) -> Result<f64, TracerError> {
    let pg = perturb(game, k, 0.0)?;
    let sys = System::new(pg);
    let mut t0 = 2.0 * (game.m() * game.n()) as f64 * game.a.max_abs_entry() + 1.0;
    for _ in 0..=10 {
        match bonus_dominates(&sys, game, k, t0) {
            Ok(()) => return Ok(t0),
            Err(_) => t0 *= 2.0,
        }
    }
    let reason = bonus_dominates(&sys, game, k, t0 / 2.0)
        .err()
        .unwrap_or_else(|| "unknown".into());
    Err(TracerError::BonusIneffective {
        k,
        t0: t0 / 2.0,
        reason,
    })
}

/// Dominance check at a candidate t0: the top eigenvector of Φ_{A(t0)}(Y*)
/// must align with e_k (angle below 1e-2) with an eigenvalue gap above
/// 1e-6·scale, where Y* is player 2's best response to E_kk.
fn bonus_dominates(sys: &System, game: &SdGame, k: usize, t0: f64) -> Result<(), String> {
    let x_start = DensityMatrix::pure_state(game.m(), k);
    let (y_star, _) =
        game::best_response_2(game, &x_start).map_err(|e| format!("best response failed: {e}"))?;
    let phi = SymMatrix::new(sys.phi_a_t(y_star.matrix().matrix(), t0))
        .expect("contraction is symmetric");
    if game.mask1.is_diagonal() {
        let diag: Vec<f64> = (0..game.m()).map(|i| phi.get(i, i)).collect();
        let scale = diag.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        for (i, &d) in diag.iter().enumerate() {
            if i != k && diag[k] - d <= 1e-6 * scale {
                return Err(format!(
                    "diagonal entry {i} not dominated: gap {:.3e}",
                    diag[k] - d
                ));
            }
        }
        Ok(())
    } else {
        let eig = sym_eigen(&phi).map_err(|e| e.to_string())?;
        let scale = eig.spectral_norm().max(1.0);
        let gap = eig.values[0] - eig.values.get(1).copied().unwrap_or(f64::NEG_INFINITY);
        if phi.dim() > 1 && gap <= 1e-6 * scale {
            return Err(format!("top eigenvalue gap {gap:.3e} too small"));
        }
        let align = eig.basis.column(0)[k].abs().min(1.0);
        let angle = align.acos();
        if angle > 1e-2 {
            return Err(format!("top eigenvector angle to e_k is {angle:.3e}"));
        }
        Ok(())
    }
}

/// Best-response iteration from (E_kk, BR_2(E_kk)) at t = t0 followed by a
/// Newton correction onto the residual manifold.
pub fn start_point(game: &SdGame, k: usize, t0: f64) -> Result<(System, PathPoint, bool), TracerError> {
    let sys = System::new(perturb(game, k, t0)?);
    let mut x = DensityMatrix::pure_state(game.m(), k);
    let (mut y, mut v) = game::best_response_2(game, &x)
        .map_err(|e| TracerError::StartFailure(format!("best response failed: {e}")))?;
    let mut w = 0.0;
    let mut tie = y.tie_broken;
    let mut converged = false;
    for _ in 0..100 {
        let phi1 = SymMatrix::new(sys.phi_a_t(y.matrix().matrix(), t0))
            .expect("contraction is symmetric");
        let (x_new, w_new) = best_response_to_operator(&phi1, game.mask1)
            .map_err(|e| TracerError::StartFailure(e.to_string()))?;
        let (y_new, v_new) = game::best_response_2(game, &x_new)
            .map_err(|e| TracerError::StartFailure(e.to_string()))?;
        tie |= x_new.tie_broken || y_new.tie_broken;
        let delta = (x_new.matrix().matrix() - x.matrix().matrix()).norm()
            + (y_new.matrix().matrix() - y.matrix().matrix()).norm();
        x = x_new;
        y = y_new;
        w = w_new;
        v = v_new;
        if delta <= 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TracerError::StartFailure(
            "best-response iteration did not settle within 100 rounds".into(),
        ));
    }
    let z0 = FullVars {
        x: x.matrix().matrix().clone(),
        y: y.matrix().matrix().clone(),
        w,
        v,
        t: t0,
    };
    let zeta0 = sys.to_reduced(&z0);
    let (zeta, rnorm, _) = sys
        .correct(&zeta0, Constraint::FixedT, system::CORRECTOR_TOL)
        .map_err(|e| TracerError::StartFailure(format!("Newton correction failed: {e:?}")))?;
    let point = make_point(&sys, &zeta, rnorm, None, None)
        .map_err(|e| TracerError::StartFailure(format!("{e}")))?;
    let (feasible, min_eig) = feasibility(&sys, &point.vars());
    if !feasible {
        return Err(TracerError::StartFailure(format!(
            "start point infeasible: min eigenvalue {min_eig:.3e}"
        )));
    }
    Ok((sys, point, tie))
}

// ---------------------------------------------------------------------
// point construction and feasibility
// ---------------------------------------------------------------------

/// Assign flags at a fresh point: the pair member with the smaller magnitude
/// is the zero one.
fn init_flags(pairs: &[(f64, f64)]) -> Vec<PairFlag> {
    pairs
        .iter()
        .map(|(s, d)| {
            if s.abs() <= d.abs() {
                PairFlag::StrategyZero
            } else {
                PairFlag::SlackZero
            }
        })
        .collect()
}

/// Build a tracked PathPoint from corrected reduced coordinates. With a
/// previous point, eigenpairs are aligned to its bases by eigenvector
/// overlap and flags are inherited (or taken from `flags_override`).
pub(crate) fn make_point(
    sys: &System,
    zeta: &DVector<f64>,
    residual_norm: f64,
    prev: Option<&PathPoint>,
    flags_override: Option<ActiveSet>,
) -> Result<PathPoint, EventError> {
    let z = sys.to_full(zeta);
    let w_mat = SymMatrix::new(sys.slack_w(&z.y, z.w, z.t)).expect("slack symmetric");
    let v_mat = SymMatrix::new(sys.slack_v(&z.x, z.v)).expect("slack symmetric");
    let x_sym = SymMatrix::new(z.x.clone()).expect("square");
    let y_sym = SymMatrix::new(z.y.clone()).expect("square");
    let w_eff = game::effective_slack(&w_mat, sys.game().mask1);
    let v_eff = game::effective_slack(&v_mat, sys.game().mask2);
    let sys1 = game::complementarity_pairs(&x_sym, &w_eff, sys.game().mask1, JOINT_DIAG_TOL)
        .map_err(|e| EventError::Internal(format!("joint diagonalization failed: {e}")))?;
    let sys2 = game::complementarity_pairs(&y_sym, &v_eff, sys.game().mask2, JOINT_DIAG_TOL)
        .map_err(|e| EventError::Internal(format!("joint diagonalization failed: {e}")))?;
    let (pairs1, basis1, pairs2, basis2, active) = match prev {
        Some(p) => {
            let (pairs1, basis1) = events::align_pairs(&p.basis1, &sys1)?;
            let (pairs2, basis2) = events::align_pairs(&p.basis2, &sys2)?;
            let active = flags_override.unwrap_or_else(|| p.active.clone());
            (pairs1, basis1, pairs2, basis2, active)
        }
        None => {
            let active = flags_override.unwrap_or_else(|| ActiveSet {
                player1: init_flags(&sys1.pairs),
                player2: init_flags(&sys2.pairs),
            });
            (sys1.pairs, sys1.basis, sys2.pairs, sys2.basis, active)
        }
    };
    Ok(PathPoint {
        x: z.x,
        y: z.y,
        w: z.w,
        v: z.v,
        t: z.t,
        residual_norm,
        active,
        pairs1,
        basis1,
        pairs2,
        basis2,
    })
}

/// PSD feasibility of strategies and mask-effective slacks at a state;
/// returns the worst eigenvalue.
pub fn feasibility(sys: &System, z: &FullVars) -> (bool, f64) {
    let mats = [
        game::effective_slack(
            &SymMatrix::new(z.x.clone()).expect("square"),
            sys.game().mask1,
        ),
        game::effective_slack(
            &SymMatrix::new(z.y.clone()).expect("square"),
            sys.game().mask2,
        ),
        game::effective_slack(
            &SymMatrix::new(sys.slack_w(&z.y, z.w, z.t)).expect("square"),
            sys.game().mask1,
        ),
        game::effective_slack(
            &SymMatrix::new(sys.slack_v(&z.x, z.v)).expect("square"),
            sys.game().mask2,
        ),
    ];
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for m in &mats {
        let (_, min) = crate::linalg::psd_check(m, FEAS_TOL);
        worst = worst.min(min);
        let scale = sym_eigen(m).map(|e| e.spectral_norm().max(1.0)).unwrap_or(1.0);
        if min < -FEAS_TOL * scale {
            ok = false;
        }
    }
    (ok, worst)
}

// ---------------------------------------------------------------------
// tangent and stepping
// ---------------------------------------------------------------------

/// Unit null vector of the reduced Jacobian (t column included), oriented to
/// continue `previous` or, at the start, to decrease t.
pub fn tangent(
    sys: &System,
    point: &PathPoint,
    previous: Option<&Tangent>,
) -> Result<Tangent, StepError> {
    let jr = sys.jacobian_reduced(&point.vars(), true);
    let (mut null, svs) = system::null_vector_equilibrated(&jr);
    let scale = svs.last().copied().unwrap_or(1.0).max(1.0);
    if svs[1] <= 1e-6 * scale {
        return Err(StepError::NearSingular { gap: svs[1] / scale });
    }
    let t_idx = null.len() - 1;
    let orient = match previous {
        Some(prev) => null.dot(&prev.reduced),
        None => -null[t_idx],
    };
    if orient < 0.0 {
        null = -null;
    }
    let full = sys.direction_to_full(&null);
    Ok(Tangent {
        direction: full,
        reduced: null,
    })
}

/// One predictor-corrector step of arclength h; the corrected point is not
/// feasibility-checked here (the caller may use an infeasible correction as
/// an event bracket).
pub(crate) fn step_raw(
    sys: &System,
    point: &PathPoint,
    tau: &Tangent,
    h: f64,
    tol: f64,
) -> Result<(DVector<f64>, f64, usize), StepError> {
    let base = sys.to_reduced(&point.vars());
    let pred = &base + &tau.reduced * h;
    let (zeta, rnorm, iters) = sys
        .correct(
            &pred,
            Constraint::Hyperplane {
                base: &pred,
                normal: &tau.reduced,
            },
            tol,
        )
        .map_err(|e| StepError::StepRejected(format!("{e:?}")))?;
    Ok((zeta, rnorm, iters))
}

/// Predictor-corrector step that also enforces the PathPoint invariants;
/// h = 0 returns the point unchanged.
pub fn step(sys: &System, point: &PathPoint, tau: &Tangent, h: f64) -> Result<PathPoint, StepError> {
    if h == 0.0 {
        return Ok(point.clone());
    }
    let (zeta, rnorm, _) = step_raw(sys, point, tau, h, system::CORRECTOR_TOL)?;
    let z = sys.to_full(&zeta);
    let (ok, min) = feasibility(sys, &z);
    if !ok {
        return Err(StepError::StepRejected(format!(
            "PSD invariant violated: min eigenvalue {min:.3e}"
        )));
    }
    make_point(sys, &zeta, rnorm, Some(point), None)
        .map_err(|e| StepError::StepRejected(format!("{e}")))
}

// ---------------------------------------------------------------------
// full path trace
// ---------------------------------------------------------------------

struct PuiseuxCollector {
    record_index: usize,
    player: usize,
    pair: usize,
    t_star: f64,
    samples: Vec<(f64, f64)>,
}

impl PuiseuxCollector {
    const MAX_ABS_S: f64 = 0.04;

    fn feed(&mut self, point: &PathPoint) {
        let s = point.t - self.t_star;
        if s.abs() > Self::MAX_ABS_S || s.abs() < 1e-14 {
            return;
        }
        let value = events::monitored_value(point, self.player, self.pair);
        if value != 0.0 {
            self.samples.push((s, value));
        }
    }

    fn finalize(&self, records: &mut [TraceRecord]) {
        if self.samples.len() < 8 {
            return;
        }
        let diag = events::puiseux_fit(&self.samples, 4).ok().map(|(exp, coef)| PuiseuxDiag {
            exponent: exp,
            coefficient: coef,
        });
        if let Some(diag) = diag {
            if let TraceRecord::Event(ev) = &mut records[self.record_index] {
                ev.puiseux = Some(diag);
            }
        }
    }
}

/// Trace the Lemke-Howson path of `game` for bonus strategy k down to t = 0.
pub fn trace_path(game: &SdGame, k: usize, options: &TraceOptions) -> Result<Trace, TracerError> {
    let t0 = initial_bonus(game, k)?;
    let (sys, start, start_tie) = start_point(game, k, t0)?;
    let t_max = options.tmax_mult * t0;
    let mut records: Vec<TraceRecord> = vec![TraceRecord::Point(start.clone())];
    let mut point = start;
    let mut prev_tangent: Option<Tangent> = None;
    let mut h = options.h0;
    let mut fast_accepts = 0usize;
    let mut collector: Option<PuiseuxCollector> = None;

    let fail = |records: Vec<TraceRecord>, failure: TraceFailure, tie: bool| Trace {
        k,
        t0,
        records,
        outcome: TraceOutcome::Failed(failure),
        start_tie_broken: tie,
    };

    for _ in 0..options.max_steps {
        let tau = match tangent(&sys, &point, prev_tangent.as_ref()) {
            Ok(tau) => tau,
            Err(StepError::NearSingular { gap }) => {
                if records.len() == 1 {
                    return Err(TracerError::DegenerateStart(format!(
                        "the path tangent is not unique at the start (sv gap {gap:.3e}){}",
                        if start_tie {
                            "; a best-response tie was broken while starting"
                        } else {
                            ""
                        }
                    )));
                }
                return Ok(fail(
                    records,
                    TraceFailure::StallFailure {
                        t: point.t,
                        detail: format!("tangent near-singular away from any bracket (gap {gap:.3e})"),
                    },
                    start_tie,
                ));
            }
            Err(StepError::StepRejected(d)) => {
                return Ok(fail(
                    records,
                    TraceFailure::StallFailure { t: point.t, detail: d },
                    start_tie,
                ))
            }
        };

        let cand = match step_raw(&sys, &point, &tau, h, options.corrector_tol) {
            Ok(c) => c,
            Err(_) => {
                h *= 0.5;
                fast_accepts = 0;
                if h < options.h_min {
                    return Ok(fail(
                        records,
                        TraceFailure::StallFailure {
                            t: point.t,
                            detail: "corrector kept rejecting down to the minimum step".into(),
                        },
                        start_tie,
                    ));
                }
                continue;
            }
        };
        let (zeta, rnorm, iters) = cand;
        let z = sys.to_full(&zeta);

        if z.t > t_max {
            records.push(TraceRecord::Event(EventRecord {
                kind: EventKind::RangeExceeded,
                t_star: z.t,
                point: point.clone(),
                flipped_index: None,
                puiseux: None,
            }));
            return Ok(fail(
                records,
                TraceFailure::RangeExceeded { t: z.t, t_max },
                start_tie,
            ));
        }

        let cand_point = match make_point(&sys, &zeta, rnorm, Some(&point), None) {
            Ok(p) => p,
            Err(EventError::TrackingAmbiguity { detail }) => {
                h *= 0.5;
                fast_accepts = 0;
                if h < options.h_min {
                    return Ok(fail(
                        records,
                        TraceFailure::TrackingAmbiguity { t: point.t, detail },
                        start_tie,
                    ));
                }
                continue;
            }
            Err(e) => {
                return Ok(fail(
                    records,
                    TraceFailure::RefinementFailure {
                        t: point.t,
                        detail: format!("{e}"),
                    },
                    start_tie,
                ))
            }
        };

        // event detection before acceptance
        let bracket = events::detect_crossing(&point, &cand_point);
        if let Some(bracket) = bracket {
            match events::refine_event(&sys, &point, &tau, &bracket, h) {
                Ok(event) => {
                    if event.point.t <= 0.0 {
                        // t reaches zero before the eigenvalue does
                        match finish_at_zero(&sys, game, &point, &cand_point) {
                            Ok((end_point, cert, x, y)) => {
                                if let Some(c) = collector.take() {
                                    c.finalize(&mut records);
                                }
                                records.push(TraceRecord::Event(EventRecord {
                                    kind: EventKind::HomotopyEnd,
                                    t_star: 0.0,
                                    point: end_point,
                                    flipped_index: None,
                                    puiseux: None,
                                }));
                                return Ok(Trace {
                                    k,
                                    t0,
                                    records,
                                    outcome: TraceOutcome::Equilibrium { x, y, certificate: cert },
                                    start_tie_broken: start_tie,
                                });
                            }
                            Err(detail) => {
                                return Ok(fail(
                                    records,
                                    TraceFailure::RefinementFailure { t: point.t, detail },
                                    start_tie,
                                ))
                            }
                        }
                    }
                    if let Some(c) = collector.take() {
                        c.finalize(&mut records);
                    }
                    let record_index = records.len();
                    records.push(TraceRecord::Event(event.clone()));
                    match events::switch_branch(&sys, &event, &tau, POST_EVENT_STEP) {
                        Ok((new_point, new_tangent, flipped)) => {
                            if let TraceRecord::Event(ev) = &mut records[record_index] {
                                ev.flipped_index = Some(flipped);
                            }
                            collector = Some(PuiseuxCollector {
                                record_index,
                                player: bracket.player,
                                pair: bracket.pair,
                                t_star: event.t_star,
                                samples: Vec::new(),
                            });
                            if let Some(c) = collector.as_mut() {
                                c.feed(&new_point);
                            }
                            records.push(TraceRecord::Point(new_point.clone()));
                            point = new_point;
                            prev_tangent = Some(new_tangent);
                            h = (2.0 * POST_EVENT_STEP).min(options.h_max);
                            fast_accepts = 0;
                            continue;
                        }
                        Err(EventError::BoundaryExit { t }) => {
                            records.push(TraceRecord::Event(EventRecord {
                                kind: EventKind::BoundaryExit,
                                t_star: t,
                                point: event.point.clone(),
                                flipped_index: None,
                                puiseux: None,
                            }));
                            return Ok(fail(
                                records,
                                TraceFailure::PathLeavesStrategySpace { t },
                                start_tie,
                            ));
                        }
                        Err(e) => {
                            return Ok(fail(
                                records,
                                TraceFailure::RefinementFailure {
                                    t: event.t_star,
                                    detail: format!("{e}"),
                                },
                                start_tie,
                            ))
                        }
                    }
                }
                Err(e) => {
                    return Ok(fail(
                        records,
                        TraceFailure::RefinementFailure {
                            t: point.t,
                            detail: format!("{e}"),
                        },
                        start_tie,
                    ))
                }
            }
        }

        // homotopy end: t crossed zero without an eigenvalue event
        if point.t > 0.0 && z.t <= 0.0 {
            match finish_at_zero(&sys, game, &point, &cand_point) {
                Ok((end_point, cert, x, y)) => {
                    if let Some(c) = collector.take() {
                        c.finalize(&mut records);
                    }
                    records.push(TraceRecord::Event(EventRecord {
                        kind: EventKind::HomotopyEnd,
                        t_star: 0.0,
                        point: end_point,
                        flipped_index: None,
                        puiseux: None,
                    }));
                    return Ok(Trace {
                        k,
                        t0,
                        records,
                        outcome: TraceOutcome::Equilibrium { x, y, certificate: cert },
                        start_tie_broken: start_tie,
                    });
                }
                Err(detail) => {
                    return Ok(fail(
                        records,
                        TraceFailure::RefinementFailure { t: point.t, detail },
                        start_tie,
                    ))
                }
            }
        }

        // no event: the corrected point must be feasible to accept
        let (feasible, min_eig) = feasibility(&sys, &z);
        if !feasible {
            h *= 0.5;
            fast_accepts = 0;
            if h < options.h_min {
                return Ok(fail(
                    records,
                    TraceFailure::StallFailure {
                        t: point.t,
                        detail: format!(
                            "infeasible correction (min eigenvalue {min_eig:.3e}) without a monitored crossing"
                        ),
                    },
                    start_tie,
                ));
            }
            continue;
        }

        if let Some(c) = collector.as_mut() {
            c.feed(&cand_point);
            if (cand_point.t - c.t_star).abs() > PuiseuxCollector::MAX_ABS_S {
                let c = collector.take().expect("just checked");
                c.finalize(&mut records);
            }
        }
        records.push(TraceRecord::Point(cand_point.clone()));
        point = cand_point;
        prev_tangent = Some(tau);
        if iters <= 4 {
            fast_accepts += 1;
            if fast_accepts >= 3 {
                h = (2.0 * h).min(options.h_max);
                fast_accepts = 0;
            }
        } else {
            fast_accepts = 0;
        }
    }

    Ok(fail(records, TraceFailure::MaxStepsExceeded, start_tie))
}

/// Newton-correct the path onto t = 0 exactly (from the interpolant between
/// the last feasible point and the crossing candidate) and verify the
/// resulting strategy pair.
fn finish_at_zero(
    sys: &System,
    game: &SdGame,
    prev: &PathPoint,
    cand: &PathPoint,
) -> Result<(PathPoint, NashCertificate, SymMatrix, SymMatrix), String> {
    let zeta_prev = sys.to_reduced(&prev.vars());
    let zeta_cand = sys.to_reduced(&cand.vars());
    let denom = prev.t - cand.t;
    let lambda = if denom.abs() > 1e-300 { prev.t / denom } else { 0.0 };
    let mut zeta = &zeta_prev + (&zeta_cand - &zeta_prev) * lambda.clamp(0.0, 1.0);
    let t_idx = zeta.len() - 1;
    zeta[t_idx] = 0.0;
    let (zeta, rnorm, _) = sys
        .correct(&zeta, Constraint::FixedT, system::CORRECTOR_TOL)
        .map_err(|e| format!("correction onto t = 0 failed: {e:?}"))?;
    let end_point = make_point(sys, &zeta, rnorm, Some(prev), None).map_err(|e| format!("{e}"))?;
    let x = SymMatrix::new(end_point.x.clone()).expect("square");
    let y = SymMatrix::new(end_point.y.clone()).expect("square");
    let xd = DensityMatrix::new(clean_density(&x, game.mask1), game.mask1)
        .map_err(|e| format!("final X not a density matrix: {e}"))?;
    let yd = DensityMatrix::new(clean_density(&y, game.mask2), game.mask2)
        .map_err(|e| format!("final Y not a density matrix: {e}"))?;
    let cert = game::verify_nash(game, &xd, &yd, game::VERIFY_TOL)
        .map_err(|e| format!("verification failed: {e}"))?;
    if !cert.valid {
        return Err(format!(
            "path reached t = 0 but the certificate is invalid: {cert:?}"
        ));
    }
    Ok((end_point, cert, x, y))
}

/// Zero out numerically-dead off-diagonal entries that the diagonal mask
/// requires to vanish exactly.
fn clean_density(m: &SymMatrix, mask: StructureMask) -> SymMatrix {
    if mask.is_diagonal() {
        let d = m.dim();
        SymMatrix::from_diagonal(&(0..d).map(|i| m.get(i, i)).collect::<Vec<_>>())
    } else {
        m.clone()
    }
}

/// Gauss-Newton polish of an approximate equilibrium of the unperturbed
/// game. Returns the polished strategies and payoff values.
pub fn polish_equilibrium(
    game: &SdGame,
    x0: &SymMatrix,
    y0: &SymMatrix,
) -> Option<(SymMatrix, SymMatrix, f64, f64)> {
    let sys = System::new(perturb(game, 0, 0.0).ok()?);
    let phi1 = game::phi_a(&game.a, y0).ok()?;
    let phi2 = game::phi_b_prime(&game.b, x0).ok()?;
    let (_, w0) = best_response_to_operator(&phi1, game.mask1).ok()?;
    let (_, v0) = best_response_to_operator(&phi2, game.mask2).ok()?;
    let z0 = FullVars {
        x: x0.matrix().clone(),
        y: y0.matrix().clone(),
        w: w0,
        v: v0,
        t: 0.0,
    };
    let zeta0 = sys.to_reduced(&z0);
    let (zeta, _, _) = sys.correct(&zeta0, Constraint::FixedT, 1e-11).ok()?;
    let z = sys.to_full(&zeta);
    Some((
        SymMatrix::new(z.x).expect("square"),
        SymMatrix::new(z.y).expect("square"),
        z.w,
        z.v,
    ))
}

#[cfg(test)]
mod tests;
