//! Precision-recall evaluation of queries against a database.

use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};

use calc2_core::eval::{pr_curve, PrCurve, ScoredQuery};
use calc2_core::loopdb::{FrameRecord, LoopDatabase, LoopParams};

use crate::corpus::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Top-1 global similarity.
    Raw,
    /// Full detection without temporal filtering; no match scores −1.
    Geometric,
}

impl FromStr for EvalMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(EvalMode::Raw),
            "geometric" => Ok(EvalMode::Geometric),
            other => Err(anyhow!("unknown mode {other:?}: expected raw or geometric")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query: usize,
    pub answer: Option<u64>,
    pub scored: ScoredQuery,
}

/// Scores every query. Database ids are list positions; the exclusion
/// window does not apply across separate sets.
pub fn score_queries(
    database: Vec<FrameRecord>,
    queries: &[FrameRecord],
    truth: &GroundTruth,
    mode: EvalMode,
    params: &LoopParams,
) -> Result<Vec<QueryResult>> {
    let mut db = LoopDatabase::new();
    for r in database {
        db.insert(r)?;
    }
    let params = LoopParams {
        exclusion: 0,
        ..params.clone()
    };
    let mut out = Vec::with_capacity(queries.len());
    for (q, record) in queries.iter().enumerate() {
        let Some(expected) = truth.get(&q) else {
            bail!("ground truth has no entry for query {q}");
        };
        let (answer, score) = match mode {
            EvalMode::Raw => match db.query_raw(&record.descriptor, 1, None, 0)?.first() {
                Some(&(id, s)) => (Some(id), s),
                None => (None, -1.0),
            },
            EvalMode::Geometric => {
                let d = db.detect(record, &params)?;
                (d.matched, d.similarity)
            }
        };
        out.push(QueryResult {
            query: q,
            answer,
            scored: ScoredQuery {
                score,
                correct: answer.is_some_and(|a| expected.contains(&a)),
                has_positive: !expected.is_empty(),
            },
        });
    }
    Ok(out)
}

pub fn curve(results: &[QueryResult]) -> Result<PrCurve> {
    let scored: Vec<ScoredQuery> = results.iter().map(|r| r.scored).collect();
    Ok(pr_curve(&scored)?)
}

/// Fraction of queries whose answer is correct.
pub fn top1_accuracy(results: &[QueryResult]) -> f64 {
    results.iter().filter(|r| r.scored.correct).count() as f64 / results.len().max(1) as f64
}

pub fn write_curve_csv(curve: &PrCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "precision", "recall"])?;
    for p in &curve.points {
        w.write_record(&[p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_answers_csv(results: &[QueryResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query", "answer", "score", "correct"])?;
    for r in results {
        w.write_record(&[
            r.query.to_string(),
            r.answer.map_or("-1".to_string(), |a| a.to_string()),
            r.scored.score.to_string(),
            (r.scored.correct as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
