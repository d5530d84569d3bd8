//! User-side mechanics: preference scores, clicks and opinion drift.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleId, ArticleUtility, PreferenceMatrix, UserId, UserProfile};
use crate::error::{Error, Result};

/// Logistic click link on the per-topic preference score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClickModelParams {
    pub steepness: f64,
    pub midpoint: f64,
}

impl Default for ClickModelParams {
    fn default() -> Self {
        ClickModelParams {
            steepness: 10.0,
            midpoint: 0.3,
        }
    }
}

impl ClickModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.steepness.is_finite() && self.steepness > 0.0) {
            return Err(Error::Config(format!("click.steepness must be positive, got {}", self.steepness)));
        }
        if !(0.0..=1.0).contains(&self.midpoint) {
            return Err(Error::Config(format!("click.midpoint must lie in [0, 1], got {}", self.midpoint)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    /// Mass added to each clicked (topic, stance) cell.
    pub influence: f64,
    /// Rescale touched rows back to unit sum after each drift step.
    pub renormalize: bool,
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.influence.is_finite() && self.influence >= 0.0) {
            return Err(Error::Config(format!("drift.influence must be >= 0, got {}", self.influence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Bootstrap,
    Live,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Bootstrap => "bootstrap",
            Phase::Live => "live",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(Phase::Bootstrap),
            "live" => Ok(Phase::Live),
            other => Err(Error::Config(format!("unknown phase `{other}`"))),
        }
    }
}

/// Where an impression happens: run, iteration (0 during bootstrap), epoch and phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpressionContext {
    pub run_id: u64,
    pub iteration: usize,
    pub epoch: usize,
    pub phase: Phase,
}

impl ImpressionContext {
    pub fn bootstrap(run_id: u64) -> Self {
        ImpressionContext {
            run_id,
            iteration: 0,
            epoch: 0,
            phase: Phase::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub run_id: u64,
    pub iteration: usize,
    pub epoch: usize,
    pub user_id: UserId,
    pub article_id: ArticleId,
    /// 1-based position in the list shown.
    pub position: u32,
    pub clicked: bool,
    pub phase: Phase,
}

/// Append-only record of every impression in a run; the model's training set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionLog {
    records: Vec<InteractionRecord>,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: InteractionRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InteractionRecord> {
        self.records.iter()
    }

    pub fn count_phase(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }
}

impl FromIterator<InteractionRecord> for InteractionLog {
    fn from_iter<I: IntoIterator<Item = InteractionRecord>>(iter: I) -> Self {
        InteractionLog {
            records: iter.into_iter().collect(),
        }
    }
}

/// vec(U) . vec(A): the sum of the user's cells at the article's stance over its topics.
pub fn preference_score(preference: &PreferenceMatrix, article: &ArticleUtility) -> f64 {
    article
        .topics()
        .iter()
        .map(|t| preference.get(t, article.stance))
        .sum()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn click_probability(score: f64, n_topics: usize, params: &ClickModelParams) -> f64 {
    debug_assert!(n_topics >= 1);
    logistic(params.steepness * (score / n_topics as f64 - params.midpoint))
}

/// Shows `article` to `user`, marks it exposed and draws the click.
pub fn simulate_impression<R: Rng + ?Sized>(
    user: &mut UserProfile,
    article: &ArticleUtility,
    position: u32,
    params: &ClickModelParams,
    ctx: ImpressionContext,
    rng: &mut R,
) -> InteractionRecord {
    let p = click_probability(preference_score(&user.preference, article), article.n_topics(), params);
    let clicked = rng.random_bool(p.clamp(0.0, 1.0));
    user.exposed.insert(article.id);
    InteractionRecord {
        run_id: ctx.run_id,
        iteration: ctx.iteration,
        epoch: ctx.epoch,
        user_id: user.id,
        article_id: article.id,
        position,
        clicked,
        phase: ctx.phase,
    }
}

/// U + c.A, without renormalisation.
pub fn apply_drift(preference: &PreferenceMatrix, article: &ArticleUtility, c: f64) -> PreferenceMatrix {
    let mut out = *preference;
    let s = article.stance.index();
    for t in article.topics().iter() {
        out.0[t.index()][s] += c;
    }
    out
}

/// Rescales the rows covered by `article` to unit sum.
pub fn renormalize_rows(preference: &mut PreferenceMatrix, article: &ArticleUtility) {
    for t in article.topics().iter() {
        let row = &mut preference.0[t.index()];
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
}
