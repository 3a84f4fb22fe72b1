//! Ranking metrics: Top-K recall, mean first rank, mean average rank, and
//! the per-project evaluation report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CovrankError, Result};
use crate::sbfl::RankedItem;

/// Ranked elements of one bug plus the ground-truth faulty ids.
#[derive(Debug, Clone, PartialEq)]
pub struct BugRanking {
    pub bug_id: String,
    pub items: Vec<RankedItem>,
    pub faulty: Vec<usize>,
}

impl BugRanking {
    fn check(&self) -> Result<()> {
        if self.faulty.is_empty() {
            return Err(CovrankError::invariant(
                "BugRanking",
                format!("bug {} has no faulty elements", self.bug_id),
            ));
        }
        Ok(())
    }

    /// Rank of the best-ranked faulty element (average-tie rank).
    pub fn first_rank(&self) -> Result<f64> {
        self.check()?;
        self.faulty
            .iter()
            .filter_map(|&id| crate::sbfl::rank_of(&self.items, id))
            .min_by(|a, b| a.partial_cmp(b).expect("finite ranks"))
            .ok_or_else(|| {
                CovrankError::invariant(
                    "BugRanking",
                    format!("bug {}: faulty ids missing from ranking", self.bug_id),
                )
            })
    }

    /// Mean average-tie rank over all faulty elements.
    pub fn average_rank(&self) -> Result<f64> {
        self.check()?;
        let ranks: Vec<f64> = self
            .faulty
            .iter()
            .filter_map(|&id| crate::sbfl::rank_of(&self.items, id))
            .collect();
        if ranks.len() != self.faulty.len() {
            return Err(CovrankError::invariant(
                "BugRanking",
                format!("bug {}: faulty ids missing from ranking", self.bug_id),
            ));
        }
        Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
    }

    /// A faulty element counts for K when its tie-group's best displayed
    /// position is <= K.
    pub fn hits_top_k(&self, k: usize) -> bool {
        self.faulty
            .iter()
            .filter_map(|&id| crate::sbfl::best_position_of(&self.items, id))
            .any(|pos| pos <= k)
    }
}

/// Count of bugs with at least one faulty element in the top K.
pub fn topk_recall(bugs: &[BugRanking], k: usize) -> usize {
    bugs.iter().filter(|b| b.hits_top_k(k)).count()
}

/// Mean of each bug's first faulty rank.
pub fn mfr(bugs: &[BugRanking]) -> Result<f64> {
    if bugs.is_empty() {
        return Err(CovrankError::EmptyCorpus("mfr over zero bugs".to_string()));
    }
    let mut sum = 0.0;
    for b in bugs {
        sum += b.first_rank()?;
    }
    Ok(sum / bugs.len() as f64)
}

/// Mean of each bug's average faulty rank.
pub fn mar(bugs: &[BugRanking]) -> Result<f64> {
    if bugs.is_empty() {
        return Err(CovrankError::EmptyCorpus("mar over zero bugs".to_string()));
    }
    let mut sum = 0.0;
    for b in bugs {
        sum += b.average_rank()?;
    }
    Ok(sum / bugs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub bugs: usize,
    pub top1: usize,
    pub top3: usize,
    pub top5: usize,
    /// Top-1 as a percentage of bugs.
    pub percent: f64,
    pub mfr: f64,
    pub mar: f64,
}

impl MetricBlock {
    pub fn from_rankings(bugs: &[BugRanking]) -> Result<MetricBlock> {
        let block = MetricBlock {
            bugs: bugs.len(),
            top1: topk_recall(bugs, 1),
            top3: topk_recall(bugs, 3),
            top5: topk_recall(bugs, 5),
            percent: 100.0 * topk_recall(bugs, 1) as f64 / bugs.len().max(1) as f64,
            mfr: mfr(bugs)?,
            mar: mar(bugs)?,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top1 <= self.top3 && self.top3 <= self.top5 && self.top5 <= self.bugs) {
            return Err(CovrankError::invariant(
                "MetricBlock",
                format!(
                    "top1 {} <= top3 {} <= top5 {} <= bugs {} violated",
                    self.top1, self.top3, self.top5, self.bugs
                ),
            ));
        }
        if self.mfr > self.mar + 1e-9 {
            return Err(CovrankError::invariant(
                "MetricBlock",
                format!("mfr {} > mar {}", self.mfr, self.mar),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_project: BTreeMap<String, MetricBlock>,
    pub overall: MetricBlock,
}

impl EvalReport {
    pub fn from_project_rankings(
        per_project: &BTreeMap<String, Vec<BugRanking>>,
    ) -> Result<EvalReport> {
        let mut blocks = BTreeMap::new();
        let mut all = Vec::new();
        for (project, bugs) in per_project {
            blocks.insert(project.clone(), MetricBlock::from_rankings(bugs)?);
            all.extend(bugs.iter().cloned());
        }
        Ok(EvalReport {
            per_project: blocks,
            overall: MetricBlock::from_rankings(&all)?,
        })
    }

    /// Table-style plain-text rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("project      bugs  top1  top3  top5     P%     MFR     MAR\n");
        let mut row = |name: &str, b: &MetricBlock| {
            out.push_str(&format!(
                "{name:<12} {:>5} {:>5} {:>5} {:>5} {:>6.1} {:>7.2} {:>7.2}\n",
                b.bugs, b.top1, b.top3, b.top5, b.percent, b.mfr, b.mar
            ));
        };
        for (project, block) in &self.per_project {
            row(project, block);
        }
        row("overall", &self.overall);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbfl::rank_by_score;

    fn ranking(bug_id: &str, scores: &[f64], faulty: &[usize]) -> BugRanking {
        BugRanking {
            bug_id: bug_id.to_string(),
            items: rank_by_score(scores),
            faulty: faulty.to_vec(),
        }
    }

    #[test]
    fn rank_one_counts_for_all_k() {
        let b = ranking("b0", &[0.9, 0.1, 0.2], &[0]);
        assert!(b.hits_top_k(1));
        assert!(b.hits_top_k(3));
        assert!(b.hits_top_k(5));
    }

    #[test]
    fn rank_four_counts_only_for_five() {
        let b = ranking("b0", &[0.9, 0.8, 0.7, 0.6, 0.5], &[3]);
        assert!(!b.hits_top_k(1));
        assert!(!b.hits_top_k(3));
        assert!(b.hits_top_k(5));
    }

    #[test]
    fn ten_bug_fixture_matches_manual_tally() {
        // Faulty positions by construction: ranks 1,2,3,4,5,6,1,3,5,7.
        let ranks = [1usize, 2, 3, 4, 5, 6, 1, 3, 5, 7];
        let bugs: Vec<BugRanking> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let n = 8;
                let scores: Vec<f64> =
                    (0..n).map(|j| 1.0 - 0.1 * j as f64).collect();
                ranking(&format!("b{i}"), &scores, &[r - 1])
            })
            .collect();
        assert_eq!(topk_recall(&bugs, 1), 2);
        assert_eq!(topk_recall(&bugs, 3), 5);
        assert_eq!(topk_recall(&bugs, 5), 8);
    }

    #[test]
    fn single_faulty_rank_three() {
        let b = ranking("b0", &[0.9, 0.8, 0.7, 0.6], &[2]);
        let bugs = vec![b];
        assert_eq!(mfr(&bugs).unwrap(), 3.0);
        assert_eq!(mar(&bugs).unwrap(), 3.0);
    }

    #[test]
    fn two_faulty_ranks_two_and_six() {
        let scores: Vec<f64> = (0..6).map(|j| 1.0 - 0.1 * j as f64).collect();
        let b = ranking("b0", &scores, &[1, 5]);
        let bugs = vec![b];
        assert_eq!(mfr(&bugs).unwrap(), 2.0);
        assert_eq!(mar(&bugs).unwrap(), 4.0);
    }

    #[test]
    fn random_fixtures_match_loop_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let n = rng.gen_range(3..10);
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0..5) as f64) / 5.0).collect();
            let faulty: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
            if faulty.is_empty() {
                continue;
            }
            let b = ranking("b", &scores, &faulty);
            // Oracle: explicit average-tie ranks from pairwise comparisons.
            let rank_of = |i: usize| -> f64 {
                let better =
                    scores.iter().filter(|&&s| s > scores[i]).count() as f64;
                let equal = scores.iter().filter(|&&s| s == scores[i]).count() as f64;
                better + (1.0 + equal) / 2.0
            };
            let first = faulty.iter().map(|&i| rank_of(i)).fold(f64::INFINITY, f64::min);
            let avg = faulty.iter().map(|&i| rank_of(i)).sum::<f64>() / faulty.len() as f64;
            assert!((b.first_rank().unwrap() - first).abs() < 1e-12);
            assert!((b.average_rank().unwrap() - avg).abs() < 1e-12);
            assert!(first <= avg + 1e-12);
        }
    }

    #[test]
    fn zero_faulty_elements_rejected() {
        let b = ranking("b0", &[0.5, 0.4], &[]);
        assert!(mfr(&[b]).is_err());
    }

    #[test]
    fn report_invariant_and_render() {
        let mut per_project = BTreeMap::new();
        per_project.insert(
            "alpha".to_string(),
            vec![
                ranking("a0", &[0.9, 0.1], &[0]),
                ranking("a1", &[0.1, 0.9], &[0]),
            ],
        );
        let report = EvalReport::from_project_rankings(&per_project).unwrap();
        assert_eq!(report.overall.bugs, 2);
        assert!(report.overall.top1 <= report.overall.top3);
        let table = report.render_table();
        assert!(table.contains("alpha"));
        assert!(table.contains("overall"));
    }
}
