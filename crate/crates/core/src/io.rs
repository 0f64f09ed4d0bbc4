//! File formats: game documents (semidefinite and bimatrix), strategy
//! documents, and the trace export.
//!
//! Games are structured JSON text with full nested tensors; floats
//! round-trip losslessly through serde's shortest-representation encoding.
//! Traces export as one JSON record per line with 17-significant-digit
//! decimal floats plus typed event records.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bimatrix::BimatrixGame;
use crate::events::EventKind;
use crate::game::{DensityMatrix, GameError, PayoffTensor, SdGame, StructureMask};
use crate::linalg::SymMatrix;
use crate::tracer::{PairFlag, PathPoint, Trace, TraceRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<GameError> for IoError {
    fn from(e: GameError) -> Self {
        IoError::InvalidGame(e.to_string())
    }
}

/// On-disk game document; exactly one of the two payload layouts is present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GameDocument {
    Semidefinite {
        m: usize,
        n: usize,
        a: Vec<Vec<Vec<Vec<f64>>>>,
        b: Vec<Vec<Vec<Vec<f64>>>>,
        mask1: StructureMask,
        mask2: StructureMask,
    },
    Bimatrix {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
}

/// Parsed game of either kind.
#[derive(Debug, Clone)]
pub enum AnyGame {
    Semidefinite(SdGame),
    Bimatrix(BimatrixGame),
}

impl AnyGame {
    /// The semidefinite view: bimatrix games are diagonally embedded.
    pub fn as_semidefinite(&self) -> SdGame {
        match self {
            AnyGame::Semidefinite(g) => g.clone(),
            AnyGame::Bimatrix(g) => crate::bimatrix::embed_diagonal(g),
        }
    }
}

pub fn parse_game(text: &str) -> Result<AnyGame, IoError> {
    let doc: GameDocument =
        serde_json::from_str(text).map_err(|e| IoError::Parse(format!("{e}")))?;
    match doc {
        GameDocument::Semidefinite {
            m,
            n,
            a,
            b,
            mask1,
            mask2,
        } => {
            let ta = PayoffTensor::from_nested(&a)?;
            let tb = PayoffTensor::from_nested(&b)?;
            if ta.m() != m || ta.n() != n || tb.m() != m || tb.n() != n {
                return Err(IoError::InvalidGame(format!(
                    "declared dimensions {m}x{n} do not match tensors {}x{} and {}x{}",
                    ta.m(),
                    ta.n(),
                    tb.m(),
                    tb.n()
                )));
            }
            Ok(AnyGame::Semidefinite(SdGame::new(ta, tb, mask1, mask2)?))
        }
        GameDocument::Bimatrix { a, b } => {
            let to_mat = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>, IoError> {
                let m = rows.len();
                let n = rows.first().map(|r| r.len()).unwrap_or(0);
                if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(IoError::InvalidGame("ragged or empty payoff matrix".into()));
                }
                Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
            };
            let ga = to_mat(&a)?;
            let gb = to_mat(&b)?;
            Ok(AnyGame::Bimatrix(
                BimatrixGame::new(ga, gb).map_err(|e| IoError::InvalidGame(e.to_string()))?,
            ))
        }
    }
}

pub fn read_game(path: &std::path::Path) -> Result<AnyGame, IoError> {
    parse_game(&std::fs::read_to_string(path)?)
}

pub fn game_to_document(game: &SdGame) -> GameDocument {
    GameDocument::Semidefinite {
        m: game.m(),
        n: game.n(),
        a: game.a.to_nested(),
        b: game.b.to_nested(),
        mask1: game.mask1,
        mask2: game.mask2,
    }
}

pub fn bimatrix_to_document(game: &BimatrixGame) -> GameDocument {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    GameDocument::Bimatrix {
        a: rows(&game.a),
        b: rows(&game.b),
    }
}

pub fn write_document(doc: &GameDocument, path: &std::path::Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(doc).expect("document serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Strategy-pair document for verification runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyDocument {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl StrategyDocument {
    pub fn from_matrices(x: &SymMatrix, y: &SymMatrix) -> Self {
        let rows = |m: &SymMatrix| -> Vec<Vec<f64>> {
            (0..m.dim())
                .map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect())
                .collect()
        };
        Self {
            x: rows(x),
            y: rows(y),
        }
    }

    /// Validate against the game's dimensions and masks.
    pub fn to_densities(
        &self,
        game: &SdGame,
    ) -> Result<(DensityMatrix, DensityMatrix), IoError> {
        let build = |rows: &[Vec<f64>], dim: usize, mask: StructureMask, name: &str| {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(IoError::InvalidGame(format!(
                    "{name} must be {dim}x{dim}"
                )));
            }
            let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
            let sym = SymMatrix::new(m).map_err(|e| IoError::InvalidGame(e.to_string()))?;
            DensityMatrix::new(sym, mask).map_err(IoError::from)
        };
        Ok((
            build(&self.x, game.m(), game.mask1, "X")?,
            build(&self.y, game.n(), game.mask2, "Y")?,
        ))
    }
}

pub fn read_strategies(path: &std::path::Path) -> Result<StrategyDocument, IoError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse(format!("{e}")))
}

// ---------------------------------------------------------------------
// trace export
// ---------------------------------------------------------------------

/// 17 significant decimal digits: lossless for f64.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn flag_char(f: PairFlag) -> char {
    match f {
        PairFlag::StrategyZero => 'S',
        PairFlag::SlackZero => 'D',
    }
}

fn point_json(step: usize, p: &PathPoint) -> serde_json::Value {
    let flat = |m: &DMatrix<f64>| -> Vec<String> {
        let mut out = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(fmt17(m[(i, j)]));
            }
        }
        out
    };
    serde_json::json!({
        "record": "point",
        "step": step,
        "t": fmt17(p.t),
        "w": fmt17(p.w),
        "v": fmt17(p.v),
        "x": flat(&p.x),
        "y": flat(&p.y),
        "residual": fmt17(p.residual_norm),
        "active1": p.active.player1.iter().map(|&f| flag_char(f).to_string()).collect::<Vec<_>>(),
        "active2": p.active.player2.iter().map(|&f| flag_char(f).to_string()).collect::<Vec<_>>(),
    })
}

/// Serialize a trace as JSON lines: one record per accepted point, events
/// interleaved as typed records.
pub fn trace_to_lines(trace: &Trace) -> String {
    let mut out = String::new();
    let mut step = 0usize;
    for rec in &trace.records {
        let value = match rec {
            TraceRecord::Point(p) => {
                let v = point_json(step, p);
                step += 1;
                v
            }
            TraceRecord::Event(e) => {
                let mut v = serde_json::json!({
                    "record": "event",
                    "kind": e.kind.name(),
                    "t_star": fmt17(e.t_star),
                });
                if let EventKind::PairedCrossing { player, eigen_index } = e.kind {
                    v["player"] = serde_json::json!(player);
                    v["eigen_index"] = serde_json::json!(eigen_index);
                }
                if let Some(f) = e.flipped_index {
                    v["flipped_index"] = serde_json::json!(f);
                }
                if let Some(p) = &e.puiseux {
                    v["puiseux"] = serde_json::json!({
                        "exponent": format!("{}", p.exponent),
                        "coefficient": fmt17(p.coefficient),
                    });
                }
                v
            }
        };
        out.push_str(&value.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn game_document_roundtrip() {
        let g = fixtures::hybrid_game(0.1);
        let doc = game_to_document(&g);
        let text = serde_json::to_string(&doc).unwrap();
        let back = parse_game(&text).unwrap();
        let AnyGame::Semidefinite(g2) = back else {
            panic!("expected semidefinite game");
        };
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        assert_eq!(g.a.at(i, j, k, l), g2.a.at(i, j, k, l));
                        assert_eq!(g.b.at(i, j, k, l), g2.b.at(i, j, k, l));
                    }
                }
            }
        }
        assert_eq!(g2.mask1, StructureMask::Diagonal);
    }

    #[test]
    fn bimatrix_document_roundtrip() {
        let a = DMatrix::from_row_slice(2, 3, &[0.1, -0.25, 1.0 / 3.0, 0.7, 0.0, -1.5]);
        let b = a.map(|v| v * 0.5 + 0.01);
        let g = BimatrixGame::new(a.clone(), b.clone()).unwrap();
        let text = serde_json::to_string(&bimatrix_to_document(&g)).unwrap();
        let AnyGame::Bimatrix(g2) = parse_game(&text).unwrap() else {
            panic!("expected bimatrix game");
        };
        assert_eq!(g2.a, a);
        assert_eq!(g2.b, b);
    }

    #[test]
    fn malformed_documents_error() {
        assert!(parse_game("not json").is_err());
        assert!(parse_game("{\"kind\":\"semidefinite\",\"m\":2}").is_err());
        // asymmetric tensor rejected
        let mut nested = crate::game::PayoffTensor::zeros(2, 2).to_nested();
        nested[0][1][0][0] = 1.0;
        let doc = serde_json::json!({
            "kind": "semidefinite", "m": 2, "n": 2,
            "a": nested, "b": crate::game::PayoffTensor::zeros(2,2).to_nested(),
            "mask1": "full", "mask2": "full",
        });
        assert!(parse_game(&doc.to_string()).is_err());
    }

    #[test]
    fn fmt17_roundtrips_doubles() {
        for &v in &[
            std::f64::consts::PI,
            -1.0 / 3.0,
            1e-300,
            6.02e23,
            0.1 + 0.2,
        ] {
            let s = fmt17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v, back, "{s} did not round-trip");
        }
    }

    #[test]
    fn trace_lines_are_json_records() {
        let g = fixtures::hybrid_game(0.1);
        let trace = crate::tracer::trace_path(&g, 0, &Default::default()).unwrap();
        let lines = trace_to_lines(&trace);
        let mut points = 0;
        let mut events = 0;
        for line in lines.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            match v["record"].as_str().unwrap() {
                "point" => {
                    points += 1;
                    assert!(v["x"].as_array().unwrap().len() == 4);
                    let t: f64 = v["t"].as_str().unwrap().parse().unwrap();
                    assert!(t.is_finite());
                }
                "event" => events += 1,
                other => panic!("unexpected record {other}"),
            }
        }
        assert!(points > 10);
        assert_eq!(events, 3);
    }
}
