//! Stance-calibrated re-ranking.
//!
//! A list is built greedily from the base recommender's top-N candidates,
//! trading summed (min-max normalised) relevance against the KL divergence
//! between a target stance distribution and the list's own stance mix:
//!
//! ```text
//! score(L) = (1 - lambda) * sum_{i in L} rel(i) - lambda * KL(p || (1 - alpha) q(L) + alpha p)
//! ```

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleId, Stance, N_STANCES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceDistribution {
    probs: [f64; N_STANCES],
}

impl StanceDistribution {
    pub fn new(probs: [f64; N_STANCES]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config(format!("stance distribution has invalid entries: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("stance distribution sums to {sum}")));
        }
        Ok(StanceDistribution { probs })
    }

    pub fn uniform() -> Self {
        StanceDistribution {
            probs: [1.0 / N_STANCES as f64; N_STANCES],
        }
    }

    pub fn probs(&self) -> &[f64; N_STANCES] {
        &self.probs
    }

    pub fn get(&self, stance: Stance) -> f64 {
        self.probs[stance.index()]
    }

    /// Additively smoothed distribution from per-stance counts.
    fn of_counts(counts: &[usize; N_STANCES], smoothing: f64) -> Result<Self> {
        let total: usize = counts.iter().sum();
        let denom = total as f64 + N_STANCES as f64 * smoothing;
        if denom <= 0.0 {
            return Err(Error::UndefinedDistribution);
        }
        let mut probs = [0.0; N_STANCES];
        for (p, &c) in probs.iter_mut().zip(counts) {
            *p = (c as f64 + smoothing) / denom;
        }
        Ok(StanceDistribution { probs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetScope {
    /// Each user's own bootstrap clicks.
    #[default]
    User,
    /// Pooled bootstrap clicks of the user's typology.
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams {
    pub lambda: f64,
    pub alpha: f64,
    pub candidate_pool: usize,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            lambda: 0.9,
            alpha: 0.01,
            candidate_pool: 50,
        }
    }
}

impl CalibrationParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("intervention.lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("intervention.alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.candidate_pool < k {
            return Err(Error::Config(format!(
                "intervention.pool ({}) must be at least the list length ({k})",
                self.candidate_pool
            )));
        }
        Ok(())
    }
}

/// Smoothed frequency of stances among clicked articles.
pub fn stance_distribution<I>(clicked: I, smoothing: f64) -> Result<StanceDistribution>
where
    I: IntoIterator<Item = Stance>,
{
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(Error::Config(format!("smoothing must be >= 0, got {smoothing}")));
    }
    let mut counts = [0usize; N_STANCES];
    for s in clicked {
        counts[s.index()] += 1;
    }
    StanceDistribution::of_counts(&counts, smoothing)
}

/// KL(target || q~) with q~ = (1 - alpha) list + alpha target; zero-target terms vanish.
pub fn calibration_divergence(target: &StanceDistribution, list: &StanceDistribution, alpha: f64) -> f64 {
    kl_smoothed(&target.probs, &list.probs, alpha)
}

fn kl_smoothed(p: &[f64; N_STANCES], q: &[f64; N_STANCES], alpha: f64) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (qi + alpha * (pi - qi))).ln())
        .sum();
    kl.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: ArticleId,
    pub stance: Stance,
    pub relevance: f64,
}

fn normalized_relevance(candidates: &[Candidate]) -> Vec<f64> {
    let (lo, hi) = candidates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.relevance), hi.max(c.relevance)));
    if hi > lo {
        candidates.iter().map(|c| (c.relevance - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; candidates.len()]
    }
}

/// Greedy calibrated selection of `k` items. Returns ids ordered by raw
/// relevance (descending, ties by ascending id).
pub fn calibrated_rerank(
    candidates: &[Candidate],
    target: &StanceDistribution,
    params: &CalibrationParams,
    k: usize,
) -> Result<Vec<ArticleId>> {
    if candidates.len() < k {
        return Err(Error::TooFewCandidates {
            available: candidates.len(),
            needed: k,
        });
    }
    let rel = normalized_relevance(candidates);
    let lambda = params.lambda;

    let mut taken = vec![false; candidates.len()];
    let mut counts = [0usize; N_STANCES];
    let mut rel_sum = 0.0;
    let mut chosen: Vec<usize> = Vec::with_capacity(k);

    for step in 0..k {
        let size = (step + 1) as f64;
        let mut best: Option<(f64, ArticleId, usize)> = None;
        for (idx, c) in candidates.iter().enumerate() {
            if taken[idx] {
                continue;
            }
            let mut q = [0.0; N_STANCES];
            for (qs, &n) in q.iter_mut().zip(&counts) {
                *qs = n as f64 / size;
            }
            q[c.stance.index()] += 1.0 / size;
            let score = (1.0 - lambda) * (rel_sum + rel[idx]) - lambda * kl_smoothed(&target.probs, &q, params.alpha);
            let better = match best {
                None => true,
                Some((bs, bid, _)) => match score.total_cmp(&bs) {
                    Ordering::Greater => true,
                    Ordering::Equal => c.id < bid,
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((score, c.id, idx));
            }
        }
        let (_, _, idx) = best.expect("enough candidates checked above");
        taken[idx] = true;
        counts[candidates[idx].stance.index()] += 1;
        rel_sum += rel[idx];
        chosen.push(idx);
    }

    chosen.sort_by(|&a, &b| {
        candidates[b]
            .relevance
            .total_cmp(&candidates[a].relevance)
            .then(candidates[a].id.cmp(&candidates[b].id))
    });
    Ok(chosen.into_iter().map(|i| candidates[i].id).collect())
}
