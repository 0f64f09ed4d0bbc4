//! Event-point machinery: crossing detection along the traced path,
//! refinement of event points, branch switching via active-set flips,
//! Puiseux-exponent fitting and non-degeneracy probes.
//!
//! An event occurs where a complementarity eigenpair acquires a double zero
//! (strict complementarity fails) or where the homotopy parameter reaches
//! zero. Between events exactly one member of each pair is zero; detection
//! watches the nonzero member of every pair for a sign change or a dip below
//! the zero band.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{self, SdGame, StructureMask};
use crate::linalg::{self, SymMatrix};
use crate::tracer::system::{self, Constraint, FullVars, System};
use crate::tracer::{self, PairFlag, PathPoint, Tangent, EIGEN_ZERO_TOL};

/// Relative tolerance for vanishing minors (scaled by matrix-norm powers).
pub const MINOR_TOL: f64 = 1e-7;

/// Overlap margin below which eigenvector matching counts as ambiguous.
const OVERLAP_MARGIN: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("eigenvector tracking ambiguous: {detail}")]
    TrackingAmbiguity { detail: String },
    #[error("event refinement failed: {0}")]
    RefinementFailure(String),
    #[error("no admissible branch at the event (t = {t}): path leaves the strategy space")]
    BoundaryExit { t: f64 },
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Both eigenvalues of one complementarity pair reached zero.
    PairedCrossing { player: usize, eigen_index: usize },
    HomotopyEnd,
    BoundaryExit,
    RangeExceeded,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PairedCrossing { .. } => "paired_crossing",
            EventKind::HomotopyEnd => "homotopy_end",
            EventKind::BoundaryExit => "boundary_exit",
            EventKind::RangeExceeded => "range_exceeded",
        }
    }
}

/// Rational exponent recovered by the Puiseux fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    fn reduced(num: i64, den: i64) -> Self {
        fn gcd(a: i64, b: i64) -> i64 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Rational {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Local branch diagnostic: leading exponent and coefficient of the freed
/// eigenvalue as a function of s = t - t*.
#[derive(Debug, Clone, PartialEq)]
pub struct PuiseuxDiag {
    pub exponent: Rational,
    pub coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct EventRecord {
    pub kind: EventKind,
    pub t_star: f64,
    pub point: PathPoint,
    pub flipped_index: Option<usize>,
    pub puiseux: Option<PuiseuxDiag>,
}

/// Bracketed crossing between two consecutive accepted points.
#[derive(Debug, Clone)]
pub struct Bracket {
    pub player: usize,
    pub pair: usize,
    pub prev_value: f64,
    pub next_value: f64,
    /// Linear-interpolation estimate of the crossing fraction in [0, 1].
    pub fraction: f64,
}

// ---------------------------------------------------------------------
// eigenpair tracking
// ---------------------------------------------------------------------

/// Align the columns of a fresh joint eigensystem to a previous basis by
/// maximal eigenvector overlap, fixing signs for continuity. Ambiguous
/// matches (two overlaps within 1e-3) are an error unless the competing
/// pairs are numerically identical, in which case either assignment is fine.
pub fn align_pairs(
    prev_basis: &DMatrix<f64>,
    raw: &linalg::JointEigenSystem,
) -> Result<(Vec<(f64, f64)>, DMatrix<f64>), EventError> {
    let d = raw.dim();
    let scale = raw
        .pairs
        .iter()
        .fold(1.0_f64, |a, (p, q)| a.max(p.abs()).max(q.abs()));
    let mut used = vec![false; d];
    let mut pairs = Vec::with_capacity(d);
    let mut basis = DMatrix::zeros(d, d);
    for i in 0..d {
        let prev_col = prev_basis.column(i);
        let mut best = (0usize, -1.0_f64);
        let mut second = -1.0_f64;
        for j in 0..d {
            if used[j] {
                continue;
            }
            let o = prev_col.dot(&raw.basis.column(j)).abs();
            if o > best.1 {
                second = best.1;
                best = (j, o);
            } else if o > second {
                second = o;
            }
        }
        let (j, o) = best;
        if second >= 0.0 && o - second <= OVERLAP_MARGIN {
            // benign when the competing pairs are indistinguishable
            let contender = (0..d)
                .filter(|&jj| !used[jj] && jj != j)
                .max_by(|&a, &b| {
                    let oa = prev_col.dot(&raw.basis.column(a)).abs();
                    let ob = prev_col.dot(&raw.basis.column(b)).abs();
                    oa.partial_cmp(&ob).expect("finite overlaps")
                })
                .expect("second candidate exists");
            let (pa, da) = raw.pairs[j];
            let (pb, db) = raw.pairs[contender];
            if (pa - pb).abs() + (da - db).abs() > 1e-6 * scale {
                return Err(EventError::TrackingAmbiguity {
                    detail: format!(
                        "overlaps {o:.6} vs {second:.6} for distinct pairs ({pa:.3e},{da:.3e}) and ({pb:.3e},{db:.3e})"
                    ),
                });
            }
        }
        used[j] = true;
        let sign = if prev_col.dot(&raw.basis.column(j)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        basis.set_column(i, &(raw.basis.column(j) * sign));
        pairs.push(raw.pairs[j]);
    }
    Ok((pairs, basis))
}

/// The nonzero (monitored) member of a tracked pair under its current flag.
pub fn monitored_value(point: &PathPoint, player: usize, pair: usize) -> f64 {
    let (strategy, slack) = point.pairs(player)[pair];
    match point.active.flags(player)[pair] {
        PairFlag::StrategyZero => slack,
        PairFlag::SlackZero => strategy,
    }
}

fn member_scales(point: &PathPoint, player: usize) -> (f64, f64) {
    let pairs = point.pairs(player);
    let s = pairs.iter().fold(1.0_f64, |a, (p, _)| a.max(p.abs()));
    let d = pairs.iter().fold(1.0_f64, |a, (_, q)| a.max(q.abs()));
    (s, d)
}

/// Zero band for the monitored member of a pair.
fn zero_band(point: &PathPoint, player: usize, pair: usize) -> f64 {
    let (s_scale, d_scale) = member_scales(point, player);
    match point.active.flags(player)[pair] {
        PairFlag::StrategyZero => EIGEN_ZERO_TOL * d_scale,
        PairFlag::SlackZero => EIGEN_ZERO_TOL * s_scale,
    }
}

/// Watch every pair's nonzero member between two consecutive accepted
/// points; a sign change or sub-band dip yields a bracket. With several
/// candidates the earliest crossing (smallest interpolation fraction) wins.
pub fn detect_crossing(prev: &PathPoint, next: &PathPoint) -> Option<Bracket> {
    let mut best: Option<Bracket> = None;
    for player in [1usize, 2usize] {
        let flags = prev.active.flags(player);
        for pair in 0..flags.len() {
            let band = zero_band(prev, player, pair);
            let pm = monitored_value(prev, player, pair);
            let nm = monitored_value(next, player, pair);
            if pm <= band {
                continue; // previous point already sits at this event
            }
            let crossed = nm <= 0.0;
            let dipped = nm > 0.0 && nm <= band;
            if !(crossed || dipped) {
                continue;
            }
            let fraction = if crossed {
                (pm / (pm - nm)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let cand = Bracket {
                player,
                pair,
                prev_value: pm,
                next_value: nm,
                fraction,
            };
            if best.as_ref().map_or(true, |b| cand.fraction < b.fraction) {
                best = Some(cand);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------
// event refinement
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairMember {
    Strategy,
    Slack,
}

fn member_matrix(sys: &System, z: &FullVars, player: usize, member: PairMember) -> DMatrix<f64> {
    match (player, member) {
        (1, PairMember::Strategy) => z.x.clone(),
        (1, PairMember::Slack) => sys.slack_w(&z.y, z.w, z.t),
        (2, PairMember::Strategy) => z.y.clone(),
        (2, PairMember::Slack) => sys.slack_v(&z.x, z.v),
        _ => unreachable!("player index is 1 or 2"),
    }
}

/// Gradient row of λ = qᵀМq over the full coordinates (vec X, vec Y, w, v, t)
/// with the eigenvector held fixed (first-order eigenvalue perturbation).
fn member_gradient_full(
    sys: &System,
    z: &FullVars,
    player: usize,
    member: PairMember,
    q: &DVector<f64>,
) -> DMatrix<f64> {
    let (m, n) = (sys.m, sys.n);
    let k = sys.pg.k;
    let a = &sys.game().a;
    let b = &sys.game().b;
    let mut row = DMatrix::zeros(1, m * m + n * n + 3);
    match (player, member) {
        (1, PairMember::Strategy) => {
            for p in 0..m {
                for r in 0..m {
                    row[(0, p * m + r)] = q[p] * q[r];
                }
            }
        }
        (1, PairMember::Slack) => {
            for r in 0..n {
                for s in 0..n {
                    let mut d = 0.0;
                    for i in 0..m {
                        for j in 0..m {
                            d += q[i] * q[j] * a.at(i, j, r, s);
                        }
                    }
                    d += z.t * q[k] * q[k];
                    row[(0, m * m + r * n + s)] = -d;
                }
            }
            row[(0, m * m + n * n)] = 1.0;
            row[(0, m * m + n * n + 2)] = -z.y.sum() * q[k] * q[k];
        }
        (2, PairMember::Strategy) => {
            for p in 0..n {
                for r in 0..n {
                    row[(0, m * m + p * n + r)] = q[p] * q[r];
                }
            }
        }
        (2, PairMember::Slack) => {
            for i in 0..m {
                for j in 0..m {
                    let mut d = 0.0;
                    for kk in 0..n {
                        for l in 0..n {
                            d += q[kk] * q[l] * b.at(i, j, kk, l);
                        }
                    }
                    row[(0, i * m + j)] = -d;
                }
            }
            row[(0, m * m + n * n + 1)] = 1.0;
        }
        _ => unreachable!("player index is 1 or 2"),
    }
    row
}

/// Refresh the tracked eigenvector of a pair at the current iterate.
fn refreshed_eigenvector(
    sys: &System,
    z: &FullVars,
    player: usize,
    q_old: &DVector<f64>,
) -> Result<DVector<f64>, EventError> {
    let mask = if player == 1 {
        sys.game().mask1
    } else {
        sys.game().mask2
    };
    if mask.is_diagonal() {
        return Ok(q_old.clone());
    }
    let (strategy, slack) = if player == 1 {
        (z.x.clone(), sys.slack_w(&z.y, z.w, z.t))
    } else {
        (z.y.clone(), sys.slack_v(&z.x, z.v))
    };
    let s_sym = SymMatrix::new(strategy).expect("square");
    let d_sym = SymMatrix::new(slack).expect("square");
    let joint = game::complementarity_pairs(&s_sym, &d_sym, mask, 1e-4)
        .map_err(|e| EventError::Internal(format!("joint system during refinement: {e}")))?;
    let mut best = (0usize, -1.0);
    for j in 0..joint.dim() {
        let o = q_old.dot(&joint.basis.column(j).into_owned()).abs();
        if o > best.1 {
            best = (j, o);
        }
    }
    let col = joint.basis.column(best.0).into_owned();
    Ok(if q_old.dot(&col) < 0.0 { -col } else { col })
}

/// Localize a bracketed crossing by bisection on the predictor arclength,
/// then polish with Newton on the residual system augmented with the
/// Rayleigh-quotient equation λ_monitored = 0, and certify the refined point
/// against the determinantal conditions.
pub fn refine_event(
    sys: &System,
    prev: &PathPoint,
    tau: &Tangent,
    bracket: &Bracket,
    h: f64,
) -> Result<EventRecord, EventError> {
    let base = sys.to_reduced(&prev.vars());
    let probe = |sigma: f64| -> Result<(DVector<f64>, f64, f64), EventError> {
        let pred = &base + &tau.reduced * sigma;
        let (zeta, rnorm, _) = sys
            .correct(
                &pred,
                Constraint::Hyperplane {
                    base: &pred,
                    normal: &tau.reduced,
                },
                system::CORRECTOR_TOL,
            )
            .map_err(|e| EventError::RefinementFailure(format!("bisection corrector at sigma={sigma:.6e}: {e:?}")))?;
        let p = tracer::make_point(sys, &zeta, rnorm, Some(prev), None)?;
        Ok((zeta, rnorm, monitored_value(&p, bracket.player, bracket.pair)))
    };

    // bisect only when the monitored value actually changed sign; a dip
    // within the zero band starts Newton from the far end directly. The
    // probe corrector degrades right on top of the event point (the plain
    // Jacobian is singular there), so a failing probe ends the bisection
    // and hands the last good iterate to the augmented Newton, which is
    // regular at the event.
    let mut zeta_start = {
        if bracket.next_value <= 0.0 {
            let mut lo = 0.0;
            let mut hi = h;
            let mut zeta_best: Option<DVector<f64>> = None;
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                match probe(mid) {
                    Ok((zeta, _, g)) => {
                        if g <= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                        zeta_best = Some(zeta);
                    }
                    Err(e) => {
                        if zeta_best.is_some() {
                            break;
                        }
                        return Err(e);
                    }
                }
            }
            zeta_best.expect("bracket width is positive")
        } else {
            let (zeta, _, _) = probe(h)?;
            zeta
        }
    };

    // Newton on [residual; λ_strategy; λ_slack] over the reduced coordinates
    // including t. Pinning only the crossing member is singular because that
    // eigenvalue vanishes identically along the outgoing branch; the double
    // zero (both members) isolates the event itself.
    let mut q = prev
        .pairs(bracket.player)
        .get(bracket.pair)
        .map(|_| {
            let basis = if bracket.player == 1 {
                &prev.basis1
            } else {
                &prev.basis2
            };
            basis.column(bracket.pair).into_owned()
        })
        .expect("bracket indices are valid");
    let mut converged = false;
    let mut best = f64::INFINITY;
    for _ in 0..40 {
        let z = sys.to_full(&zeta_start);
        q = refreshed_eigenvector(sys, &z, bracket.player, &q)?;
        let s_mat = member_matrix(sys, &z, bracket.player, PairMember::Strategy);
        let d_mat = member_matrix(sys, &z, bracket.player, PairMember::Slack);
        let lam_s = (q.transpose() * &s_mat * &q)[(0, 0)];
        let lam_d = (q.transpose() * &d_mat * &q)[(0, 0)];
        let r = sys.residual(&z);
        let mut aug = DVector::zeros(r.len() + 2);
        aug.rows_mut(0, r.len()).copy_from(&r);
        aug[r.len()] = lam_s;
        aug[r.len() + 1] = lam_d;
        let norm = aug.norm();
        if norm <= 1e-11 {
            converged = true;
            break;
        }
        if norm > 100.0 * best && best < 1e-6 {
            break;
        }
        best = best.min(norm);
        let row_s = sys.reduce_columns(
            &member_gradient_full(sys, &z, bracket.player, PairMember::Strategy, &q),
            true,
        );
        let row_d = sys.reduce_columns(
            &member_gradient_full(sys, &z, bracket.player, PairMember::Slack, &q),
            true,
        );
        let jr = sys.jacobian_reduced(&z, true);
        let mut jac = DMatrix::zeros(jr.nrows() + 2, jr.ncols());
        jac.rows_mut(0, jr.nrows()).copy_from(&jr);
        jac.row_mut(jr.nrows()).copy_from(&row_s.row(0));
        jac.row_mut(jr.nrows() + 1).copy_from(&row_d.row(0));
        let delta = system::min_norm_solve(&jac, &(-aug));
        if !delta.iter().all(|d| d.is_finite()) {
            return Err(EventError::RefinementFailure("non-finite Newton step".into()));
        }
        zeta_start += delta;
    }
    if !converged {
        return Err(EventError::RefinementFailure(format!(
            "augmented Newton did not converge (best residual {best:.3e})"
        )));
    }

    let z = sys.to_full(&zeta_start);
    let rnorm = sys.residual(&z).norm();
    let point = tracer::make_point(sys, &zeta_start, rnorm, Some(prev), None)?;
    let (s_val, d_val) = point.pairs(bracket.player)[bracket.pair];
    let band = {
        let (s_scale, d_scale) = member_scales(&point, bracket.player);
        EIGEN_ZERO_TOL * s_scale.max(d_scale)
    };
    if s_val.abs() > band || d_val.abs() > band {
        return Err(EventError::RefinementFailure(format!(
            "refined pair is not a double zero: ({s_val:.3e}, {d_val:.3e})"
        )));
    }
    if !certify_event_minors(sys, &point, bracket.player) {
        return Err(EventError::RefinementFailure(
            "determinantal event conditions not satisfied at the refined point".into(),
        ));
    }
    Ok(EventRecord {
        kind: EventKind::PairedCrossing {
            player: bracket.player,
            eigen_index: bracket.pair,
        },
        t_star: point.t,
        point,
        flipped_index: None,
        puiseux: None,
    })
}

// ---------------------------------------------------------------------
// branch switching
// ---------------------------------------------------------------------

/// Flip the flagged pair's assignment and take a trial step along the
/// post-event tangent consistent with the flipped active set. The outgoing
/// tangent is the null vector of the Jacobian augmented with the gradient of
/// the newly-pinned eigenvalue; orientation makes the freed eigenvalue grow.
pub fn switch_branch(
    sys: &System,
    event: &EventRecord,
    incoming: &Tangent,
    h_trial: f64,
) -> Result<(PathPoint, Tangent, usize), EventError> {
    let (player, pair) = match event.kind {
        EventKind::PairedCrossing { player, eigen_index } => (player, eigen_index),
        _ => {
            return Err(EventError::Internal(
                "switch_branch requires a paired-crossing event".into(),
            ))
        }
    };
    let mut flags = event.point.active.clone();
    let new_flag = flags.flags(player)[pair].flipped();
    flags.flags_mut(player)[pair] = new_flag;
    let (pinned, freed) = match new_flag {
        PairFlag::StrategyZero => (PairMember::Strategy, PairMember::Slack),
        PairFlag::SlackZero => (PairMember::Slack, PairMember::Strategy),
    };

    let z = event.point.vars();
    let basis = if player == 1 {
        &event.point.basis1
    } else {
        &event.point.basis2
    };
    let q = basis.column(pair).into_owned();
    let pinned_row = sys.reduce_columns(&member_gradient_full(sys, &z, player, pinned, &q), true);
    let freed_row = sys.reduce_columns(&member_gradient_full(sys, &z, player, freed, &q), true);

    let jr = sys.jacobian_reduced(&z, true);
    let mut jac = DMatrix::zeros(jr.nrows() + 1, jr.ncols());
    jac.rows_mut(0, jr.nrows()).copy_from(&jr);
    jac.row_mut(jr.nrows()).copy_from(&pinned_row.row(0));
    let (mut tau, svs) = system::null_vector_equilibrated(&jac);
    let scale = svs.last().copied().unwrap_or(1.0).max(1.0);
    if svs[1] <= 1e-6 * scale {
        return Err(EventError::RefinementFailure(format!(
            "post-event branch direction not unique (sv gap {:.3e})",
            svs[1] / scale
        )));
    }
    let freed_slope = (freed_row * &tau)[(0, 0)];
    if freed_slope.abs() > 1e-9 {
        if freed_slope < 0.0 {
            tau = -tau;
        }
    } else if tau.dot(&incoming.reduced) < 0.0 {
        tau = -tau;
    }

    let zeta_event = sys.to_reduced(&z);
    for attempt in 0..2 {
        let dir = if attempt == 0 { tau.clone() } else { -tau.clone() };
        let pred = &zeta_event + &dir * h_trial;
        let corrected = sys.correct(
            &pred,
            Constraint::Hyperplane {
                base: &pred,
                normal: &dir,
            },
            system::CORRECTOR_TOL,
        );
        let (zeta, rnorm, _) = match corrected {
            Ok(v) => v,
            Err(_) => continue,
        };
        let znew = sys.to_full(&zeta);
        let (feasible, _) = tracer::feasibility(sys, &znew);
        if !feasible {
            continue;
        }
        let trial = tracer::make_point(sys, &zeta, rnorm, Some(&event.point), Some(flags.clone()))?;
        let (s_val, d_val) = trial.pairs(player)[pair];
        let (s_scale, d_scale) = member_scales(&trial, player);
        let (pinned_val, pinned_scale, freed_val) = match new_flag {
            PairFlag::StrategyZero => (s_val, s_scale, d_val),
            PairFlag::SlackZero => (d_val, d_scale, s_val),
        };
        if pinned_val.abs() > EIGEN_ZERO_TOL * pinned_scale || freed_val < -EIGEN_ZERO_TOL {
            continue;
        }
        let full = sys.direction_to_full(&dir);
        return Ok((
            trial,
            Tangent {
                direction: full,
                reduced: dir,
            },
            pair,
        ));
    }
    Err(EventError::BoundaryExit { t: event.t_star })
}

// ---------------------------------------------------------------------
// Puiseux fitting
// ---------------------------------------------------------------------

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least 8 samples, got {0}")]
    TooFewSamples(usize),
    #[error("|s| range spans a factor of {0:.2}, need at least 100")]
    SpanTooNarrow(f64),
    #[error("samples must share the sign of s and be nonzero")]
    MixedSigns,
    #[error("zero value in samples")]
    ZeroValue,
    #[error("leading-coefficient signs inconsistent across samples")]
    SignInconsistent,
    #[error("fit residual {0:.4} exceeds 0.05 in log space")]
    FitUnreliable(f64),
}

/// Fit value ≈ c·s^(p/q) from samples of (s, value) on one side of an event.
/// The exponent is the least-squares slope in log-log space rounded to the
/// nearest rational with denominator at most `max_denominator`; the
/// coefficient is recovered from the geometric mean. Diagnostic only.
pub fn puiseux_fit(
    samples: &[(f64, f64)],
    max_denominator: i64,
) -> Result<(Rational, f64), FitError> {
    if samples.len() < 8 {
        return Err(FitError::TooFewSamples(samples.len()));
    }
    if samples.iter().any(|(s, _)| *s == 0.0)
        || samples
            .windows(2)
            .any(|w| w[0].0.signum() != w[1].0.signum())
    {
        return Err(FitError::MixedSigns);
    }
    if samples.iter().any(|(_, v)| *v == 0.0) {
        return Err(FitError::ZeroValue);
    }
    let min_s = samples.iter().map(|(s, _)| s.abs()).fold(f64::INFINITY, f64::min);
    let max_s = samples.iter().map(|(s, _)| s.abs()).fold(0.0, f64::max);
    let span = max_s / min_s;
    if span < 100.0 {
        return Err(FitError::SpanTooNarrow(span));
    }
    let us: Vec<f64> = samples.iter().map(|(s, _)| s.abs().ln()).collect();
    let zs: Vec<f64> = samples.iter().map(|(_, v)| v.abs().ln()).collect();
    let n = samples.len() as f64;
    let mu = us.iter().sum::<f64>() / n;
    let mz = zs.iter().sum::<f64>() / n;
    let var: f64 = us.iter().map(|u| (u - mu).powi(2)).sum();
    let cov: f64 = us.iter().zip(&zs).map(|(u, z)| (u - mu) * (z - mz)).sum();
    let slope = cov / var;

    let mut best = Rational::reduced(slope.round() as i64, 1);
    let mut best_err = (slope - best.value()).abs();
    for den in 2..=max_denominator.max(1) {
        let num = (slope * den as f64).round() as i64;
        let cand = Rational::reduced(num, den);
        let err = (slope - cand.value()).abs();
        if err + 1e-12 < best_err {
            best = cand;
            best_err = err;
        }
    }
    let alpha = best.value();

    // signed ratios for integer exponents, |s|-based otherwise
    let ratios: Vec<f64> = samples
        .iter()
        .map(|(s, v)| {
            if best.den == 1 {
                v / s.powi(best.num as i32)
            } else {
                v / s.abs().powf(alpha)
            }
        })
        .collect();
    let sign = ratios[0].signum();
    if ratios.iter().any(|r| r.signum() != sign) {
        return Err(FitError::SignInconsistent);
    }
    let log_mag = ratios.iter().map(|r| r.abs().ln()).sum::<f64>() / n;
    let coefficient = sign * log_mag.exp();

    let resid = samples
        .iter()
        .map(|(s, v)| (v.abs().ln() - (coefficient.abs().ln() + alpha * s.abs().ln())).powi(2))
        .sum::<f64>()
        / n;
    let resid = resid.sqrt();
    if resid > 0.05 {
        return Err(FitError::FitUnreliable(resid));
    }
    Ok((best, coefficient))
}

// ---------------------------------------------------------------------
// determinantal (minor) conditions
// ---------------------------------------------------------------------

/// All level-k minor values of one player's strategy/slack pair.
#[derive(Debug, Clone)]
pub struct MinorCondition {
    pub player: usize,
    pub level: usize,
    pub strategy_minors: Vec<f64>,
    pub slack_minors: Vec<f64>,
    strategy_scale: f64,
    slack_scale: f64,
    strategy_order: usize,
    slack_order: usize,
}

impl MinorCondition {
    /// True when every strategy minor and every slack minor vanishes at the
    /// relative tolerance (scaled by spectral-norm powers).
    pub fn vanishes(&self, tol: f64) -> bool {
        let s_bound = tol * self.strategy_scale.max(1.0).powi(self.strategy_order as i32);
        let d_bound = tol * self.slack_scale.max(1.0).powi(self.slack_order as i32);
        self.strategy_minors.iter().all(|m| m.abs() <= s_bound)
            && self.slack_minors.iter().all(|m| m.abs() <= d_bound)
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// All k x k minors (every row subset against every column subset).
fn minors(mat: &DMatrix<f64>, order: usize) -> Vec<f64> {
    let n = mat.nrows();
    if order == 0 || order > n {
        return Vec::new();
    }
    let subsets = combinations(n, order);
    let mut out = Vec::new();
    for rows in &subsets {
        for cols in &subsets {
            let sub = DMatrix::from_fn(order, order, |i, j| mat[(rows[i], cols[j])]);
            out.push(sub.determinant());
        }
    }
    out
}

fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    SymMatrix::new(mat.clone())
        .ok()
        .and_then(|s| linalg::sym_eigen(&s).ok())
        .map(|e| e.spectral_norm())
        .unwrap_or(1.0)
}

/// Evaluate the determinantal event conditions at a point: for player 1 all
/// levels k pair det_k(X) with det_{m-k+1}(W); for player 2 level l pairs
/// det_{n-l+1}(Y) with det_l(V).
pub fn minor_scan(sys: &System, point: &PathPoint) -> Vec<MinorCondition> {
    let z = point.vars();
    let w_eff = game::effective_slack(
        &SymMatrix::new(sys.slack_w(&z.y, z.w, z.t)).expect("square"),
        sys.game().mask1,
    );
    let v_eff = game::effective_slack(
        &SymMatrix::new(sys.slack_v(&z.x, z.v)).expect("square"),
        sys.game().mask2,
    );
    let mut out = Vec::new();
    let m = sys.m;
    for level in 1..=m {
        out.push(MinorCondition {
            player: 1,
            level,
            strategy_minors: minors(&z.x, level),
            slack_minors: minors(w_eff.matrix(), m - level + 1),
            strategy_scale: spectral_norm(&z.x),
            slack_scale: spectral_norm(w_eff.matrix()),
            strategy_order: level,
            slack_order: m - level + 1,
        });
    }
    let n = sys.n;
    for level in 1..=n {
        out.push(MinorCondition {
            player: 2,
            level,
            strategy_minors: minors(&z.y, n - level + 1),
            slack_minors: minors(v_eff.matrix(), level),
            strategy_scale: spectral_norm(&z.y),
            slack_scale: spectral_norm(v_eff.matrix()),
            strategy_order: n - level + 1,
            slack_order: level,
        });
    }
    out
}

/// Lemma-style certification of a refined event: some level of the flagged
/// player's minor conditions must vanish entirely.
pub fn certify_event_minors(sys: &System, point: &PathPoint, player: usize) -> bool {
    minor_scan(sys, point)
        .iter()
        .any(|c| c.player == player && c.vanishes(MINOR_TOL))
}

// ---------------------------------------------------------------------
// non-degeneracy probe
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ProbeViolation {
    pub sample: usize,
    pub rank_x: usize,
    pub rank_y: usize,
    pub rank_w: usize,
    pub rank_v: usize,
    pub x: SymMatrix,
    pub y: SymMatrix,
}

#[derive(Debug, Clone)]
pub struct EquilibriumProbe {
    pub valid: bool,
    pub strict: bool,
}

/// Falsification report for the rank-based non-degeneracy condition; this is
/// a sampling probe, not a decision procedure.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub samples: usize,
    pub violations: Vec<ProbeViolation>,
    pub equilibria: Vec<EquilibriumProbe>,
}

impl ProbeReport {
    pub fn condition1_holds(&self) -> bool {
        self.violations.is_empty()
    }
}

fn random_rank_k_density(
    rng: &mut ChaCha8Rng,
    dim: usize,
    rank: usize,
    mask: StructureMask,
) -> SymMatrix {
    let mut weights: Vec<f64> = (0..rank).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    if mask.is_diagonal() {
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.shuffle(rng);
        let mut diag = vec![0.0; dim];
        for (w, &i) in weights.iter().zip(idx.iter().take(rank)) {
            diag[i] = *w;
        }
        SymMatrix::from_diagonal(&diag)
    } else {
        let g = DMatrix::from_fn(dim, rank, |_, _| rng.gen_range(-1.0..1.0));
        let q = g.qr().q();
        let mut x = DMatrix::zeros(dim, dim);
        for (c, w) in weights.iter().enumerate() {
            let col = q.column(c);
            x += col * col.transpose() * *w;
        }
        SymMatrix::new(x).expect("projector combination is symmetric")
    }
}

/// Sample strategy pairs of every rank profile and check the rank condition
/// rank V(X) >= n - rank X, rank W(Y) >= m - rank Y at the best-response
/// payoff values; also evaluate strictness at any supplied equilibria.
pub fn nondegeneracy_probe(
    game: &SdGame,
    samples: usize,
    seed: u64,
    equilibria: &[(SymMatrix, SymMatrix)],
) -> ProbeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (game.m(), game.n());
    let mut violations = Vec::new();
    for sample in 0..samples {
        let k1 = rng.gen_range(1..=m);
        let k2 = rng.gen_range(1..=n);
        let x = random_rank_k_density(&mut rng, m, k1, game.mask1);
        let y = random_rank_k_density(&mut rng, n, k2, game.mask2);
        let phi1 = game::phi_a(&game.a, &y).expect("dims fixed");
        let phi2 = game::phi_b_prime(&game.b, &x).expect("dims fixed");
        let (_, w) = game::best_response_to_operator(&phi1, game.mask1).expect("finite");
        let (_, v) = game::best_response_to_operator(&phi2, game.mask2).expect("finite");
        let w_eff = game::effective_slack(
            &game::slack_w(&game.a, &y, w).expect("dims fixed"),
            game.mask1,
        );
        let v_eff = game::effective_slack(
            &game::slack_v(&game.b, &x, v).expect("dims fixed"),
            game.mask2,
        );
        let rank_w = linalg::numerical_rank(&w_eff, linalg::RANK_TOL);
        let rank_v = linalg::numerical_rank(&v_eff, linalg::RANK_TOL);
        if rank_w + k2 < m || rank_v + k1 < n {
            violations.push(ProbeViolation {
                sample,
                rank_x: k1,
                rank_y: k2,
                rank_w,
                rank_v,
                x,
                y,
            });
        }
    }
    let equilibria = equilibria
        .iter()
        .filter_map(|(x, y)| {
            let xd = game::DensityMatrix::new(x.clone(), game.mask1).ok()?;
            let yd = game::DensityMatrix::new(y.clone(), game.mask2).ok()?;
            let cert = game::verify_nash(game, &xd, &yd, game::VERIFY_TOL).ok()?;
            Some(EquilibriumProbe {
                valid: cert.valid,
                strict: cert.strict,
            })
        })
        .collect();
    ProbeReport {
        samples,
        violations,
        equilibria,
    }
}
