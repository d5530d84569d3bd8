//! Matrix-factorization recommender and the random bootstrap exposure policy.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::behavior::InteractionLog;
use crate::corpus::{ArticleId, ArticleUtility, TopicId, UserId, UserProfile, N_TOPICS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfHyper {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub sgd_epochs: usize,
    pub init_scale: f64,
    /// Continue from the previous model instead of reinitialising on retrain.
    pub warm_start: bool,
}

impl Default for MfHyper {
    fn default() -> Self {
        MfHyper {
            latent_dim: 16,
            learning_rate: 0.05,
            l2_reg: 0.01,
            sgd_epochs: 10,
            init_scale: 0.1,
            warm_start: false,
        }
    }
}

impl MfHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("mf.{what}")));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return bad("l2_reg must be nonnegative");
        }
        if self.sgd_epochs == 0 {
            return bad("sgd_epochs must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }
}

/// Latent user and item tables, row-major with `hyper.latent_dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    n_users: usize,
    n_items: usize,
    user_vectors: Vec<f64>,
    item_vectors: Vec<f64>,
    pub hyper: MfHyper,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MfModel {
    /// Gaussian(0, init_scale^2) initialisation of both tables.
    pub fn init<R: Rng + ?Sized>(n_users: usize, n_items: usize, hyper: MfHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let normal = Normal::new(0.0, hyper.init_scale).map_err(|e| Error::Training(e.to_string()))?;
        let d = hyper.latent_dim;
        let user_vectors = (0..n_users * d).map(|_| normal.sample(rng)).collect();
        let item_vectors = (0..n_items * d).map(|_| normal.sample(rng)).collect();
        Ok(MfModel {
            n_users,
            n_items,
            user_vectors,
            item_vectors,
            hyper,
        })
    }

    pub fn from_vectors(user_vectors: Vec<Vec<f64>>, item_vectors: Vec<Vec<f64>>, hyper: MfHyper) -> Result<Self> {
        let d = hyper.latent_dim;
        if user_vectors.iter().chain(&item_vectors).any(|v| v.len() != d) {
            return Err(Error::Training(format!("all embedding rows must have length {d}")));
        }
        Ok(MfModel {
            n_users: user_vectors.len(),
            n_items: item_vectors.len(),
            user_vectors: user_vectors.into_iter().flatten().collect(),
            item_vectors: item_vectors.into_iter().flatten().collect(),
            hyper,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn latent_dim(&self) -> usize {
        self.hyper.latent_dim
    }

    pub fn user_vector(&self, user: UserId) -> &[f64] {
        let d = self.hyper.latent_dim;
        &self.user_vectors[user as usize * d..(user as usize + 1) * d]
    }

    pub fn item_vector(&self, item: ArticleId) -> &[f64] {
        let d = self.hyper.latent_dim;
        &self.item_vectors[item as usize * d..(item as usize + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.user_vectors.iter().chain(&self.item_vectors).all(|v| v.is_finite())
    }

    pub fn predict(&self, user: UserId, item: ArticleId) -> Result<f64> {
        if user as usize >= self.n_users {
            return Err(Error::OutOfRange {
                kind: "user",
                id: user as u64,
                size: self.n_users,
            });
        }
        if item as usize >= self.n_items {
            return Err(Error::OutOfRange {
                kind: "item",
                id: item as u64,
                size: self.n_items,
            });
        }
        Ok(dot(self.user_vector(user), self.item_vector(item)))
    }

    /// Squared error over the log plus L2 on every embedding.
    pub fn objective(&self, log: &InteractionLog) -> f64 {
        let err: f64 = log
            .iter()
            .map(|r| {
                let y = r.clicked as u8 as f64;
                (y - dot(self.user_vector(r.user_id), self.item_vector(r.article_id))).powi(2)
            })
            .sum();
        let norm: f64 = self.user_vectors.iter().chain(&self.item_vectors).map(|v| v * v).sum();
        err + self.hyper.l2_reg * norm
    }

    /// Runs `hyper.sgd_epochs` shuffled passes of SGD over `log` in place.
    fn fit<R: Rng + ?Sized>(&mut self, log: &InteractionLog, rng: &mut R) -> Result<()> {
        let d = self.hyper.latent_dim;
        let lr = self.hyper.learning_rate;
        let reg = self.hyper.l2_reg;
        let records = log.records();
        let mut order: Vec<usize> = (0..records.len()).collect();
        for epoch in 0..self.hyper.sgd_epochs {
            order.shuffle(rng);
            for &idx in &order {
                let r = &records[idx];
                let (u, i) = (r.user_id as usize * d, r.article_id as usize * d);
                let xu = &mut self.user_vectors[u..u + d];
                let yi = &mut self.item_vectors[i..i + d];
                let err = r.clicked as u8 as f64 - dot(xu, yi);
                for (a, b) in xu.iter_mut().zip(yi.iter_mut()) {
                    let (a0, b0) = (*a, *b);
                    *a += lr * (err * b0 - reg * a0);
                    *b += lr * (err * a0 - reg * b0);
                }
            }
            if !self.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite embedding after SGD pass {} of {} on {} records (learning_rate {}, l2_reg {})",
                    epoch + 1,
                    self.hyper.sgd_epochs,
                    records.len(),
                    lr,
                    reg
                )));
            }
        }
        Ok(())
    }
}

fn check_log(log: &InteractionLog, n_users: usize, n_articles: usize) -> Result<()> {
    if log.is_empty() {
        return Err(Error::Training("interaction log is empty".into()));
    }
    for r in log.iter() {
        if r.user_id as usize >= n_users {
            return Err(Error::OutOfRange {
                kind: "user",
                id: r.user_id as u64,
                size: n_users,
            });
        }
        if r.article_id as usize >= n_articles {
            return Err(Error::OutOfRange {
                kind: "item",
                id: r.article_id as u64,
                size: n_articles,
            });
        }
    }
    Ok(())
}

/// Fits a fresh model on `log`: every impression is a row, clicks are label 1
/// and unclicked exposures label 0. Ids never seen keep their initialisation.
pub fn train_mf<R: Rng + ?Sized>(
    log: &InteractionLog,
    n_users: usize,
    n_articles: usize,
    hyper: MfHyper,
    rng: &mut R,
) -> Result<MfModel> {
    check_log(log, n_users, n_articles)?;
    let mut model = MfModel::init(n_users, n_articles, hyper, rng)?;
    model.fit(log, rng)?;
    Ok(model)
}

/// Continues SGD from `previous`.
pub fn train_mf_warm<R: Rng + ?Sized>(previous: &MfModel, log: &InteractionLog, rng: &mut R) -> Result<MfModel> {
    check_log(log, previous.n_users, previous.n_items)?;
    let mut model = previous.clone();
    model.fit(log, rng)?;
    Ok(model)
}

fn by_score_then_id(a: &(ArticleId, f64), b: &(ArticleId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best unexposed articles with their predicted scores, best first,
/// ties broken by ascending id.
pub fn rank_unexposed(model: &MfModel, user: &UserProfile, articles: &[ArticleUtility], k: usize) -> Result<Vec<(ArticleId, f64)>> {
    if user.id as usize >= model.n_users {
        return Err(Error::OutOfRange {
            kind: "user",
            id: user.id as u64,
            size: model.n_users,
        });
    }
    let xu = model.user_vector(user.id);
    let mut scored: Vec<(ArticleId, f64)> = articles
        .iter()
        .filter(|a| !user.exposed.contains(a.id))
        .map(|a| (a.id, dot(xu, model.item_vector(a.id))))
        .collect();
    if scored.len() < k {
        return Err(Error::Exhausted {
            user: user.id,
            available: scored.len(),
            needed: k,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_score_then_id);
        scored.truncate(k);
    }
    scored.sort_by(by_score_then_id);
    Ok(scored)
}

pub fn recommend_topk(model: &MfModel, user: &UserProfile, articles: &[ArticleUtility], k: usize) -> Result<Vec<ArticleId>> {
    Ok(rank_unexposed(model, user, articles, k)?.into_iter().map(|(id, _)| id).collect())
}

/// Article ids grouped by the topics they cover.
#[derive(Debug, Clone)]
pub struct TopicIndex {
    by_topic: Vec<Vec<ArticleId>>,
}

impl TopicIndex {
    pub fn new(articles: &[ArticleUtility]) -> Self {
        let mut by_topic = vec![Vec::new(); N_TOPICS];
        for a in articles {
            for t in a.topics().iter() {
                by_topic[t.index()].push(a.id);
            }
        }
        TopicIndex { by_topic }
    }

    pub fn articles(&self, topic: TopicId) -> &[ArticleId] {
        &self.by_topic[topic.index()]
    }

    /// `per_topic` distinct articles drawn uniformly for each topic in id
    /// order, concatenated, with repeats across topics dropped.
    pub fn sample<R: Rng + ?Sized>(&self, per_topic: usize, rng: &mut R) -> Result<Vec<ArticleId>> {
        let mut seen = crate::corpus::ExposureSet::new();
        let mut out = Vec::with_capacity(per_topic * N_TOPICS);
        for topic in TopicId::all() {
            let pool = self.articles(topic);
            if pool.len() < per_topic {
                return Err(Error::InsufficientTopic {
                    topic: topic.name().to_string(),
                    available: pool.len(),
                    needed: per_topic,
                });
            }
            for idx in rand::seq::index::sample(rng, pool.len(), per_topic) {
                let id = pool[idx];
                if seen.insert(id) {
                    out.push(id);
                }
            }
        }
        Ok(out)
    }
}

pub fn random_exposures_per_topic<R: Rng + ?Sized>(articles: &[ArticleUtility], per_topic: usize, rng: &mut R) -> Result<Vec<ArticleId>> {
    TopicIndex::new(articles).sample(per_topic, rng)
}
