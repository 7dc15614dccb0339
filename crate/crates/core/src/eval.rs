//! Top-K ranking evaluation under the real-plus-N protocol.
//!
//! For each user the test positives are ranked together with N negatives
//! drawn uniformly from the items the user never interacted with (in any
//! split). Gains are binary with discount `1 / log2(rank + 1)`.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionTable, Pair, SplitResult};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{DccfModel, MatrixFactorization};
use crate::rng::{substream, StreamRng, STREAM_EVAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub k: usize,
    pub n_negatives: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            k: 5,
            n_negatives: 100,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_negatives < self.k {
            return Err(Error::Config(format!(
                "need 1 <= k <= n_negatives, got k={} n_negatives={}",
                self.k, self.n_negatives
            )));
        }
        Ok(())
    }
}

/// Anything that can score a user's candidate list. The generator is the
/// user's own evaluation stream, for scorers that sample.
pub trait Scorer: Sync {
    fn score(&self, user: usize, candidates: &[usize], rng: &mut StreamRng) -> Result<Vec<f64>>;
}

impl Scorer for DccfModel {
    fn score(&self, user: usize, candidates: &[usize], rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.score_candidates(user, candidates, rng)
    }
}

impl Scorer for MatrixFactorization {
    fn score(&self, user: usize, candidates: &[usize], _rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|&v| self.score(user, v)).collect())
    }
}

/// Deterministic scorer from a plain function of `(user, item)`.
pub struct FnScorer<F>(pub F);

impl<F: Fn(usize, usize) -> f64 + Sync> Scorer for FnScorer<F> {
    fn score(&self, user: usize, candidates: &[usize], _rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|&v| (self.0)(user, v)).collect())
    }
}

/// Scores each candidate with an independent uniform draw.
pub struct RandomScorer;

impl Scorer for RandomScorer {
    fn score(&self, _user: usize, candidates: &[usize], rng: &mut StreamRng) -> Result<Vec<f64>> {
        use rand::Rng;
        Ok(candidates.iter().map(|_| rng.random::<f64>()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    /// Candidates in rank order.
    pub items: Vec<usize>,
    pub relevant: Vec<bool>,
    /// How many negatives were missing because too few items were eligible.
    pub shortfall: usize,
}

/// Sorts candidates by descending score, ties by ascending item index.
pub fn sort_by_score(candidates: &[usize], scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Divergence(format!("scorer produced {s}")));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(candidates[a].cmp(&candidates[b]))
    });
    Ok(order.into_iter().map(|i| candidates[i]).collect())
}

/// Builds and ranks the candidate list of one user. `excluded` (sorted) are
/// all known positives of the user; `test` are the relevant items.
pub fn rank_candidates<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    test: &[usize],
    excluded: &[usize],
    n_items: usize,
    protocol: &EvalProtocol,
    rng: &mut StreamRng,
) -> Result<RankedList> {
    let eligible: Vec<usize> = (0..n_items)
        .filter(|v| excluded.binary_search(v).is_err() && !test.contains(v))
        .collect();
    let take = protocol.n_negatives.min(eligible.len());
    let mut negatives: Vec<usize> = index::sample(rng, eligible.len(), take)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    negatives.sort_unstable();
    let mut candidates = test.to_vec();
    candidates.extend(negatives);
    let scores = scorer.score(user, &candidates, rng)?;
    let items = sort_by_score(&candidates, &scores)?;
    let relevant = items.iter().map(|v| test.contains(v)).collect();
    Ok(RankedList {
        items,
        relevant,
        shortfall: protocol.n_negatives - take,
    })
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// nDCG@K with binary gains; the ideal list puts all relevant items first.
pub fn ndcg_at_k(relevant: &[bool], k: usize) -> f64 {
    let n_rel = relevant.iter().filter(|&&r| r).count();
    if n_rel == 0 {
        return 0.0;
    }
    let dcg: f64 = relevant
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=n_rel.min(k)).map(discount).sum();
    dcg / idcg
}

/// `(hits / total_relevant, hits / K)`.
pub fn recall_precision_at_k(relevant: &[bool], k: usize, total_relevant: usize) -> (f64, f64) {
    let hits = relevant.iter().take(k).filter(|&&r| r).count() as f64;
    (hits / total_relevant.max(1) as f64, hits / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub users: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub mean_ndcg: f64,
    pub mean_recall: f64,
    pub mean_precision: f64,
    pub shortfall: usize,
}

impl MetricsReport {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Per-user TSV: `user \t ndcg \t recall \t precision`.
    pub fn write_user_tsv(&self, path: &Path, table: &InteractionTable) -> Result<()> {
        let mut out = String::from("user\tndcg\trecall\tprecision\n");
        for i in 0..self.users.len() {
            out.push_str(&format!(
                "{}\t{:?}\t{:?}\t{:?}\n",
                table.users().id(self.users[i]),
                self.ndcg[i],
                self.recall[i],
                self.precision[i]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One line of a metrics JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub model: String,
    pub exposure: String,
    pub split: String,
    pub k: usize,
    pub n_negatives: usize,
    pub seed: u64,
    pub n_users: usize,
    pub ndcg: f64,
    pub recall: f64,
    pub precision: f64,
}

impl ReportRecord {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let line = serde_json::to_string(self).expect("plain record serialises");
        writeln!(w, "{line}")
    }
}

/// Evaluates every user with at least one pair in `test`. `table` supplies
/// the full positive sets used to exclude negatives.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    table: &InteractionTable,
    test: &[Pair],
    protocol: &EvalProtocol,
    exec: Execution,
) -> Result<MetricsReport> {
    protocol.validate()?;
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let by_user = SplitResult::by_user(test, table.n_users());
    let users: Vec<usize> = (0..table.n_users()).filter(|&u| !by_user[u].is_empty()).collect();
    let per_user = exec.map_slice(&users, |&u| -> Result<(f64, f64, f64, usize)> {
        let mut rng = substream(protocol.seed, STREAM_EVAL, u as u64);
        let ranked = rank_candidates(
            scorer,
            u,
            &by_user[u],
            table.positives(u),
            table.n_items(),
            protocol,
            &mut rng,
        )?;
        let (r, p) = recall_precision_at_k(&ranked.relevant, protocol.k, by_user[u].len());
        Ok((ndcg_at_k(&ranked.relevant, protocol.k), r, p, ranked.shortfall))
    });
    let mut report = MetricsReport {
        users: users.clone(),
        ndcg: Vec::with_capacity(users.len()),
        recall: Vec::with_capacity(users.len()),
        precision: Vec::with_capacity(users.len()),
        mean_ndcg: 0.0,
        mean_recall: 0.0,
        mean_precision: 0.0,
        shortfall: 0,
    };
    for res in per_user {
        let (n, r, p, s): (f64, f64, f64, usize) = res?;
        report.ndcg.push(n);
        report.recall.push(r);
        report.precision.push(p);
        report.shortfall += s;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    report.mean_ndcg = mean(&report.ndcg);
    report.mean_recall = mean(&report.recall);
    report.mean_precision = mean(&report.precision);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn ndcg_fixtures() {
        assert_eq!(ndcg_at_k(&flags("100000"), 5), 1.0);
        assert!((ndcg_at_k(&flags("010000"), 5) - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&flags("000001"), 5), 0.0);
        // two relevant at ranks 1 and 3
        let expected = (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&flags("10100"), 5) - expected).abs() < 1e-12);
    }

    #[test]
    fn recall_precision_fixtures() {
        assert_eq!(recall_precision_at_k(&flags("1010000"), 5, 4), (0.5, 0.4));
        assert_eq!(recall_precision_at_k(&flags("11111"), 5, 5), (1.0, 1.0));
        assert_eq!(recall_precision_at_k(&flags("0000011"), 5, 2), (0.0, 0.0));
    }

    #[test]
    fn ties_break_by_item_index() {
        assert_eq!(sort_by_score(&[7, 2, 5], &[1.0, 1.0, 1.0]).unwrap(), vec![2, 5, 7]);
        assert_eq!(sort_by_score(&[7, 2, 5], &[0.0, 1.0, 2.0]).unwrap(), vec![5, 2, 7]);
        assert!(sort_by_score(&[1], &[f64::NAN]).is_err());
    }

    #[test]
    fn negatives_exclude_known_positives_and_record_shortfall() {
        let scorer = FnScorer(|_, v| if v == 3 { 10.0 } else { 0.0 });
        let protocol = EvalProtocol {
            k: 1,
            n_negatives: 10,
            seed: 0,
        };
        let mut rng = substream(0, "e", 0);
        let ranked = rank_candidates(&scorer, 0, &[3], &[1, 3, 4], 8, &protocol, &mut rng).unwrap();
        assert_eq!(ranked.items[0], 3);
        assert!(!ranked.items.contains(&1) && !ranked.items.contains(&4));
        assert_eq!(ranked.items.len(), 6);
        assert_eq!(ranked.shortfall, 5);
    }
}
