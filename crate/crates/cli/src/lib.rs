//! Batch front end for the semidefinite-game solver: game ingestion,
//! solve/verify/oracle/gen/probe subcommands and result export.
//!
//! Exit codes: 0 success, 1 input error, 2 solver failure, 3 verification
//! negative.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdlh::bimatrix::{self, BruteForceOptions};
use sdlh::events::{nondegeneracy_probe, EventKind};
use sdlh::game::{self, NashCertificate, SdGame, StructureMask};
use sdlh::io::{self, AnyGame, GameDocument, StrategyDocument};
use sdlh::linalg::SymMatrix;
use sdlh::tracer::{self, Trace, TraceOptions, TraceOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_NOT_EQUILIBRIUM: i32 = 3;

/// Shared run configuration assembled from the command line.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    /// 1-based bonus strategy index.
    pub k: usize,
    pub tol: f64,
    pub max_steps: usize,
    pub tmax_mult: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(input: PathBuf) -> Self {
        Self {
            input,
            k: 1,
            tol: game::VERIFY_TOL,
            max_steps: 100_000,
            tmax_mult: 4.0,
            seed: 0,
            out: None,
            trace_out: None,
        }
    }

    fn trace_options(&self) -> TraceOptions {
        TraceOptions {
            max_steps: self.max_steps,
            tmax_mult: self.tmax_mult,
            ..TraceOptions::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameDigest {
    pub m: usize,
    pub n: usize,
    pub mask1: StructureMask,
    pub mask2: StructureMask,
    pub sha256: String,
}

fn digest_of(game: &SdGame) -> GameDigest {
    let doc = io::game_to_document(game);
    let canonical = serde_json::to_string(&doc).expect("document serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    GameDigest {
        m: game.m(),
        n: game.n(),
        mask1: game.mask1,
        mask2: game.mask2,
        sha256: format!("{:x}", hasher.finalize()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventSummary {
    pub kind: String,
    pub t_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub player: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen_index: Option<usize>,
}

/// Canonical machine-readable outcome of a solve run. Wall time is carried
/// alongside but never serialized: repeated runs with the same inputs must
/// produce bit-identical documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultDocument {
    pub digest: GameDigest,
    pub k: usize,
    pub seed: u64,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<NashCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<Vec<f64>>>,
    /// Local zero-dimensionality diagnostic at the computed equilibrium:
    /// set when the equilibrium is not an isolated solution of the
    /// complementarity system (smallest singular value of the square
    /// sub-Jacobian at t = 0 below threshold).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate_equilibrium: Option<bool>,
    pub events: Vec<EventSummary>,
    pub steps: usize,
    #[serde(skip)]
    pub wall: std::time::Duration,
}

impl ResultDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes") + "\n"
    }
}

fn matrix_rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim())
        .map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect())
        .collect()
}

fn event_summaries(trace: &Trace) -> Vec<EventSummary> {
    trace
        .events()
        .map(|e| {
            let (player, eigen_index) = match e.kind {
                EventKind::PairedCrossing { player, eigen_index } => {
                    (Some(player), Some(eigen_index))
                }
                _ => (None, None),
            };
            EventSummary {
                kind: e.kind.name().to_string(),
                t_star: e.t_star,
                player,
                eigen_index,
            }
        })
        .collect()
}

fn write_or_stdout(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn load_semidefinite(path: &Path, k: usize) -> Result<SdGame, (i32, String)> {
    let any = io::read_game(path).map_err(|e| (EXIT_INPUT, format!("{e}")))?;
    let game = any.as_semidefinite();
    if k < 1 || k > game.m() {
        return Err((
            EXIT_INPUT,
            format!("k = {k} out of range 1..={}", game.m()),
        ));
    }
    Ok(game)
}

/// Random nearby perturbation probe of zero-dimensionality at the computed
/// equilibrium: the smallest singular value of the square sub-Jacobian at
/// t = 0 vanishes on a positive-dimensional solution set.
fn equilibrium_is_degenerate(game: &SdGame, x: &SymMatrix, y: &SymMatrix, cert: &NashCertificate) -> bool {
    let sys = tracer::system::System::new(
        tracer::perturb(game, 0, 0.0).expect("t = 0 is always valid"),
    );
    let z = tracer::system::FullVars {
        x: x.matrix().clone(),
        y: y.matrix().clone(),
        w: cert.w,
        v: cert.v,
        t: 0.0,
    };
    sys.subjacobian_min_sv(&z) <= 1e-6
}

/// Outcome of a solve run, bundling everything the caller might persist.
pub struct SolveRun {
    pub exit: i32,
    pub document: ResultDocument,
    pub trace: Option<Trace>,
}

pub fn run_solve(config: &RunConfig) -> SolveRun {
    let started = Instant::now();
    let game = match load_semidefinite(&config.input, config.k) {
        Ok(g) => g,
        Err((code, msg)) => {
            return SolveRun {
                exit: code,
                document: input_error_document(&msg),
                trace: None,
            }
        }
    };
    let digest = digest_of(&game);
    match tracer::trace_path(&game, config.k - 1, &config.trace_options()) {
        Ok(trace) => {
            let steps = trace.points().count();
            let events = event_summaries(&trace);
            let (outcome, detail, cert, x, y, degenerate, exit) = match &trace.outcome {
                TraceOutcome::Equilibrium { x, y, certificate } => {
                    let degen = equilibrium_is_degenerate(&game, x, y, certificate);
                    (
                        "equilibrium".to_string(),
                        None,
                        Some(certificate.clone()),
                        Some(matrix_rows(x)),
                        Some(matrix_rows(y)),
                        Some(degen),
                        EXIT_OK,
                    )
                }
                TraceOutcome::Failed(f) => (
                    f.name().to_string(),
                    Some(format!("{f:?}")),
                    None,
                    None,
                    None,
                    None,
                    EXIT_SOLVER,
                ),
            };
            SolveRun {
                exit,
                document: ResultDocument {
                    digest,
                    k: config.k,
                    seed: config.seed,
                    outcome,
                    failure_detail: detail,
                    certificate: cert,
                    x,
                    y,
                    degenerate_equilibrium: degenerate,
                    events,
                    steps,
                    wall: started.elapsed(),
                },
                trace: Some(trace),
            }
        }
        Err(e) => SolveRun {
            exit: EXIT_SOLVER,
            document: ResultDocument {
                digest,
                k: config.k,
                seed: config.seed,
                outcome: "start_failure".into(),
                failure_detail: Some(format!("{e}")),
                certificate: None,
                x: None,
                y: None,
                degenerate_equilibrium: None,
                events: Vec::new(),
                steps: 0,
                wall: started.elapsed(),
            },
            trace: None,
        },
    }
}

fn input_error_document(msg: &str) -> ResultDocument {
    ResultDocument {
        digest: GameDigest {
            m: 0,
            n: 0,
            mask1: StructureMask::FullSymmetric,
            mask2: StructureMask::FullSymmetric,
            sha256: String::new(),
        },
        k: 0,
        seed: 0,
        outcome: "input_error".into(),
        failure_detail: Some(msg.to_string()),
        certificate: None,
        x: None,
        y: None,
        degenerate_equilibrium: None,
        events: Vec::new(),
        steps: 0,
        wall: std::time::Duration::ZERO,
    }
}

pub fn cmd_solve(config: &RunConfig) -> anyhow::Result<i32> {
    let run = run_solve(config);
    if run.exit == EXIT_INPUT {
        eprintln!(
            "input error: {}",
            run.document.failure_detail.as_deref().unwrap_or("unknown")
        );
        return Ok(EXIT_INPUT);
    }
    write_or_stdout(config.out.as_deref(), &run.document.to_json())?;
    if let (Some(path), Some(trace)) = (config.trace_out.as_deref(), run.trace.as_ref()) {
        std::fs::write(path, io::trace_to_lines(trace))?;
    }
    eprintln!(
        "solve: {} after {} accepted points in {:.3}s",
        run.document.outcome,
        run.document.steps,
        run.document.wall.as_secs_f64()
    );
    Ok(run.exit)
}

/// Verification result for a supplied strategy pair.
#[derive(Debug, Serialize)]
pub struct VerifyDocument {
    pub digest: GameDigest,
    pub certificate: NashCertificate,
}

pub fn run_verify(
    config: &RunConfig,
    strategies: &StrategyDocument,
) -> Result<(i32, VerifyDocument), (i32, String)> {
    let any = io::read_game(&config.input).map_err(|e| (EXIT_INPUT, format!("{e}")))?;
    let game = any.as_semidefinite();
    let (x, y) = strategies
        .to_densities(&game)
        .map_err(|e| (EXIT_INPUT, format!("{e}")))?;
    let cert = game::verify_nash(&game, &x, &y, config.tol)
        .map_err(|e| (EXIT_INPUT, format!("{e}")))?;
    let exit = if cert.valid { EXIT_OK } else { EXIT_NOT_EQUILIBRIUM };
    Ok((
        exit,
        VerifyDocument {
            digest: digest_of(&game),
            certificate: cert,
        },
    ))
}

pub fn cmd_verify(config: &RunConfig, strategies_path: &Path) -> anyhow::Result<i32> {
    let strategies = match io::read_strategies(strategies_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("input error: {e}");
            return Ok(EXIT_INPUT);
        }
    };
    match run_verify(config, &strategies) {
        Ok((exit, doc)) => {
            let text = serde_json::to_string_pretty(&doc).expect("serializes") + "\n";
            write_or_stdout(config.out.as_deref(), &text)?;
            Ok(exit)
        }
        Err((code, msg)) => {
            eprintln!("input error: {msg}");
            Ok(code)
        }
    }
}

/// Comparison of the tracer against the classical oracles.
#[derive(Debug, Serialize)]
pub struct OracleDocument {
    pub mode: String,
    pub max_strategy_distance: Option<f64>,
    pub lh_pivots: Option<usize>,
    pub crossing_events: usize,
    pub traced_in_cluster: Option<bool>,
    pub clusters: Option<usize>,
}

pub fn run_oracle(config: &RunConfig) -> Result<(i32, OracleDocument), (i32, String)> {
    let any = io::read_game(&config.input).map_err(|e| (EXIT_INPUT, format!("{e}")))?;
    match any {
        AnyGame::Bimatrix(bg) => {
            if config.k < 1 || config.k > bg.m() {
                return Err((EXIT_INPUT, format!("k = {} out of range", config.k)));
            }
            let lh = bimatrix::lemke_howson(&bg, config.k)
                .map_err(|e| (EXIT_SOLVER, format!("oracle pivoting failed: {e}")))?;
            let sd = bimatrix::embed_diagonal(&bg);
            let trace = tracer::trace_path(&sd, config.k - 1, &config.trace_options())
                .map_err(|e| (EXIT_SOLVER, format!("tracer failed: {e}")))?;
            let TraceOutcome::Equilibrium { x, y, .. } = &trace.outcome else {
                return Err((EXIT_SOLVER, format!("tracer failed: {:?}", trace.outcome)));
            };
            let mut dist: f64 = 0.0;
            for i in 0..bg.m() {
                dist = dist.max((x.get(i, i) - lh.x[i]).abs());
            }
            for j in 0..bg.n() {
                dist = dist.max((y.get(j, j) - lh.y[j]).abs());
            }
            let crossings = trace.crossing_events().len();
            let doc = OracleDocument {
                mode: "bimatrix".into(),
                max_strategy_distance: Some(dist),
                lh_pivots: Some(lh.pivots),
                crossing_events: crossings,
                traced_in_cluster: None,
                clusters: None,
            };
            let exit = if dist <= 1e-6 { EXIT_OK } else { EXIT_SOLVER };
            Ok((exit, doc))
        }
        AnyGame::Semidefinite(sd) => {
            if sd.m() != 2 || sd.n() != 2 || sd.mask1.is_diagonal() || sd.mask2.is_diagonal() {
                return Err((
                    EXIT_INPUT,
                    "semidefinite oracle comparison needs a full-mask 2x2 game".into(),
                ));
            }
            let clusters = bimatrix::brute_force_2x2_sdg(&sd, &BruteForceOptions::default())
                .map_err(|e| (EXIT_SOLVER, format!("brute force failed: {e}")))?;
            let trace = tracer::trace_path(&sd, config.k - 1, &config.trace_options())
                .map_err(|e| (EXIT_SOLVER, format!("tracer failed: {e}")))?;
            let TraceOutcome::Equilibrium { x, y, .. } = &trace.outcome else {
                return Err((EXIT_SOLVER, format!("tracer failed: {:?}", trace.outcome)));
            };
            let in_cluster = clusters.iter().any(|c| {
                (c.x.matrix() - x.matrix()).norm() + (c.y.matrix() - y.matrix()).norm() <= 1e-3
            });
            let doc = OracleDocument {
                mode: "semidefinite".into(),
                max_strategy_distance: None,
                lh_pivots: None,
                crossing_events: trace.crossing_events().len(),
                traced_in_cluster: Some(in_cluster),
                clusters: Some(clusters.len()),
            };
            let exit = if in_cluster { EXIT_OK } else { EXIT_SOLVER };
            Ok((exit, doc))
        }
    }
}

pub fn cmd_oracle(config: &RunConfig) -> anyhow::Result<i32> {
    match run_oracle(config) {
        Ok((exit, doc)) => {
            let text = serde_json::to_string_pretty(&doc).expect("serializes") + "\n";
            write_or_stdout(config.out.as_deref(), &text)?;
            Ok(exit)
        }
        Err((code, msg)) => {
            eprintln!("{msg}");
            Ok(code)
        }
    }
}

/// Deterministic random game generation (entries uniform in [-1, 1],
/// symmetrized over both index pairs).
pub fn generate_game(m: usize, n: usize, seed: u64) -> SdGame {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |dim_m: usize, dim_n: usize| {
        let mut raw = sdlh::game::PayoffTensor::zeros(dim_m, dim_n).to_nested();
        for row in raw.iter_mut().flatten().flatten().flatten() {
            *row = rng.gen_range(-1.0..1.0);
        }
        let mut nested = raw.clone();
        for i in 0..dim_m {
            for j in 0..dim_m {
                for k in 0..dim_n {
                    for l in 0..dim_n {
                        // canonical orbit order keeps the average bitwise
                        // identical across the symmetric index positions
                        let (p, q) = (i.min(j), i.max(j));
                        let (r, s) = (k.min(l), k.max(l));
                        nested[i][j][k][l] = 0.25
                            * (raw[p][q][r][s]
                                + raw[q][p][r][s]
                                + raw[p][q][s][r]
                                + raw[q][p][s][r]);
                    }
                }
            }
        }
        sdlh::game::PayoffTensor::from_nested(&nested).expect("symmetrized tensor validates")
    };
    let a = sample(m, n);
    let b = sample(m, n);
    SdGame::new(a, b, StructureMask::FullSymmetric, StructureMask::FullSymmetric)
        .expect("matching shapes")
}

/// Deterministic random bimatrix game with entries uniform in [-1, 1].
pub fn generate_bimatrix(m: usize, n: usize, seed: u64) -> bimatrix::BimatrixGame {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    bimatrix::BimatrixGame::new(a, b).expect("finite entries")
}

pub fn cmd_gen(
    m: usize,
    n: usize,
    seed: u64,
    bimatrix_mode: bool,
    out: Option<&Path>,
) -> anyhow::Result<i32> {
    if m == 0 || n == 0 || m > 6 || n > 6 {
        eprintln!("input error: dimensions must be in 1..=6");
        return Ok(EXIT_INPUT);
    }
    let doc: GameDocument = if bimatrix_mode {
        io::bimatrix_to_document(&generate_bimatrix(m, n, seed))
    } else {
        io::game_to_document(&generate_game(m, n, seed))
    };
    let text = serde_json::to_string_pretty(&doc).expect("serializes") + "\n";
    write_or_stdout(out, &text)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct ProbeDocument {
    pub samples: usize,
    pub condition1_holds: bool,
    pub violations: usize,
    pub equilibria_checked: usize,
    pub strict_at_equilibria: Vec<bool>,
}

pub fn cmd_probe(config: &RunConfig, samples: usize) -> anyhow::Result<i32> {
    let any = match io::read_game(&config.input) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("input error: {e}");
            return Ok(EXIT_INPUT);
        }
    };
    let game = any.as_semidefinite();
    // include the traced equilibrium when tracing succeeds
    let mut equilibria = Vec::new();
    if let Ok(trace) = tracer::trace_path(&game, config.k - 1, &config.trace_options()) {
        if let TraceOutcome::Equilibrium { x, y, .. } = trace.outcome {
            equilibria.push((x, y));
        }
    }
    let report = nondegeneracy_probe(&game, samples, config.seed, &equilibria);
    let doc = ProbeDocument {
        samples: report.samples,
        condition1_holds: report.condition1_holds(),
        violations: report.violations.len(),
        equilibria_checked: report.equilibria.len(),
        strict_at_equilibria: report.equilibria.iter().map(|e| e.strict).collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("serializes") + "\n";
    write_or_stdout(config.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}
