//! Uninterpolated precision-recall sweep, trapezoidal AUC and the highest
//! recall reached at full precision.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One query's best answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredQuery {
    pub score: f64,
    /// The answer is in the query's ground-truth set.
    pub correct: bool,
    /// The query has at least one ground-truth match (counts toward recall).
    pub has_positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// One point per distinct score, threshold descending.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub r_at_p1: f64,
}

/// Sweeps the acceptance threshold over every observed score. A query is
/// retrieved at threshold `t` when its score is ≥ `t`.
pub fn pr_curve(queries: &[ScoredQuery]) -> Result<PrCurve> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to evaluate".into()));
    }
    if let Some(q) = queries.iter().find(|q| !q.score.is_finite()) {
        return Err(Error::NonFinite {
            part: "query score",
            value: q.score,
        });
    }
    let positives = queries.iter().filter(|q| q.has_positive).count();
    let mut sorted: Vec<&ScoredQuery> = queries.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut retrieved, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            retrieved += 1;
            tp += sorted[i].correct as usize;
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / retrieved as f64,
            recall: if positives == 0 { 0.0 } else { tp as f64 / positives as f64 },
        });
    }
    // trapezoids from recall 0 at the first point's precision
    let mut auc = 0.0;
    let (mut r0, mut p0) = (0.0, points[0].precision);
    for p in &points {
        auc += (p.recall - r0) * (p.precision + p0) / 2.0;
        (r0, p0) = (p.recall, p.precision);
    }
    let r_at_p1 = points
        .iter()
        .filter(|p| p.precision == 1.0)
        .map(|p| p.recall)
        .fold(0.0, f64::max);
    Ok(PrCurve { points, auc, r_at_p1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn q(score: f64, correct: bool) -> ScoredQuery {
        ScoredQuery {
            score,
            correct,
            has_positive: true,
        }
    }

    #[test]
    fn four_query_fixture() {
        let c = pr_curve(&[q(0.9, true), q(0.8, false), q(0.7, true), q(0.6, true)]).unwrap();
        let want = [(1.0, 0.25), (0.5, 0.25), (2.0 / 3.0, 0.5), (0.75, 0.75)];
        assert_eq!(c.points.len(), 4);
        for (p, (prec, rec)) in c.points.iter().zip(want) {
            assert_eq!(p.precision, prec);
            assert_eq!(p.recall, rec);
        }
        assert!((c.auc - 55.0 / 96.0).abs() < 1e-15);
        assert_eq!(c.r_at_p1, 0.25);
    }

    #[test]
    fn perfect_scores() {
        let c = pr_curve(&[q(1.0, true), q(1.0, true), q(1.0, true)]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.r_at_p1, 1.0);
    }

    #[test]
    fn all_wrong() {
        let c = pr_curve(&[q(0.3, false), q(0.2, false), q(-1.0, false)]).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 0.0 && p.recall == 0.0));
        assert_eq!(c.auc, 0.0);
        assert_eq!(c.r_at_p1, 0.0);
    }

    #[test]
    fn recall_is_monotone() {
        let qs: Vec<_> = (0..30).map(|i| q(((i * 7) % 11) as f64 / 10.0, i % 3 != 0)).collect();
        let c = pr_curve(&qs).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].recall >= w[0].recall);
            assert!(w[1].threshold < w[0].threshold);
        }
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(pr_curve(&[]).is_err());
        assert!(pr_curve(&[q(f64::NAN, true)]).is_err());
    }
}
