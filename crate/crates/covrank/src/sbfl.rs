//! Spectrum-based baseline formulas (Ochiai, Dstar) over per-statement
//! execution counts, plus score ranking with average-tie ranks.
//!
//! These consume the pre-enhancement matrix: 1/0 coverage and pass/fail
//! outcomes only. EE marks and column ordering are model inputs, not SBFL
//! inputs.

use crate::dataset::Outcome;
use crate::matrix::CoverageMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectrumCounts {
    /// Failing tests covering the statement.
    pub ef: usize,
    /// Passing tests covering the statement.
    pub ep: usize,
    /// Failing tests not covering the statement.
    pub nf: usize,
    /// Passing tests not covering the statement.
    pub np: usize,
}

/// Per-statement counts from coverage and outcomes. A -1 cell still means
/// "covered" here: EE marking does not change execution facts.
pub fn counts(matrix: &CoverageMatrix, outcomes: &[Outcome]) -> Vec<SpectrumCounts> {
    assert_eq!(outcomes.len(), matrix.cols, "outcomes length != test count");
    (0..matrix.rows)
        .map(|i| {
            let mut c = SpectrumCounts {
                ef: 0,
                ep: 0,
                nf: 0,
                np: 0,
            };
            for j in 0..matrix.cols {
                let covered = matrix.get(i, j) != 0;
                match (covered, outcomes[j]) {
                    (true, Outcome::Fail) => c.ef += 1,
                    (true, Outcome::Pass) => c.ep += 1,
                    (false, Outcome::Fail) => c.nf += 1,
                    (false, Outcome::Pass) => c.np += 1,
                }
            }
            c
        })
        .collect()
}

/// ef / sqrt((ef+nf)(ef+ep)); 0 when ef = 0, including the 0/0 case.
pub fn ochiai(c: &SpectrumCounts) -> f64 {
    if c.ef == 0 {
        return 0.0;
    }
    let denom = (((c.ef + c.nf) * (c.ef + c.ep)) as f64).sqrt();
    c.ef as f64 / denom
}

/// ef^star / (ep + nf); +inf when the denominator is 0 and ef > 0.
pub fn dstar(c: &SpectrumCounts, star: u32) -> f64 {
    assert!(star >= 1, "dstar exponent must be >= 1");
    if c.ef == 0 {
        return 0.0;
    }
    let num = (c.ef as f64).powi(star as i32);
    let den = (c.ep + c.nf) as f64;
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub id: usize,
    pub score: f64,
    /// Average of the occupied positions within the item's tie group.
    pub rank: f64,
}

/// Descending-score ranking; tied scores share the average of their occupied
/// positions, display order is by id within a tie group.
pub fn rank_by_score(scores: &[f64]) -> Vec<RankedItem> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out: Vec<RankedItem> = Vec::with_capacity(scores.len());
    let mut pos = 0;
    while pos < idx.len() {
        let mut end = pos + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[pos]] {
            end += 1;
        }
        // Positions are 1-based: group occupies pos+1 ..= end.
        let avg = (pos + 1 + end) as f64 / 2.0;
        for &i in &idx[pos..end] {
            out.push(RankedItem {
                id: i,
                score: scores[i],
                rank: avg,
            });
        }
        pos = end;
    }
    out
}

/// Rank of the given id in a ranked list.
pub fn rank_of(ranked: &[RankedItem], id: usize) -> Option<f64> {
    ranked.iter().find(|r| r.id == id).map(|r| r.rank)
}

/// Best displayed (1-based) position of the given id, used by the Top-K
/// tie-group rule: a tied faulty element counts at its group's first slot.
pub fn best_position_of(ranked: &[RankedItem], id: usize) -> Option<usize> {
    let target = ranked.iter().find(|r| r.id == id)?;
    Some(
        ranked
            .iter()
            .position(|r| r.score == target.score)
            .expect("tie group exists")
            + 1,
    )
}
