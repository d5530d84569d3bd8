//! The closed loop: bootstrap exposure, live recommendation iterations with
//! drift, periodic retraining, and multi-seed orchestration.
//!
//! Iteration `t` (1-based) belongs to epoch `(t - 1) / retrain_every + 1`.
//! The model is retrained after the last iteration of every epoch, so the
//! model serving epoch `e` has seen the bootstrap log plus epochs `1..e`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

pub use crate::config::ExperimentConfig;

use crate::behavior::{apply_drift, renormalize_rows, simulate_impression, ImpressionContext, InteractionLog, Phase};
use crate::corpus::{generate_articles, generate_users, ArticleId, ArticleUtility, Typology, UserProfile};
use crate::error::{Error, Result};
use crate::intervention::{calibrated_rerank, stance_distribution, Candidate, StanceDistribution, TargetScope};
use crate::metrics::{bootstrap_reference, epoch_group_aggregate, iteration_mps, umps, EpochRow, IterationOutcome};
use crate::recommender::{rank_unexposed, recommend_topk, train_mf, train_mf_warm, MfModel, TopicIndex};
use crate::rng::{stream, SimRng, Stream};

/// The article corpus and the initial user population shared by all repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub articles: Vec<ArticleUtility>,
    pub users: Vec<UserProfile>,
}

impl World {
    pub fn new(articles: Vec<ArticleUtility>, users: Vec<UserProfile>) -> Result<Self> {
        if let Some((i, a)) = articles.iter().enumerate().find(|(i, a)| a.id as usize != *i) {
            return Err(Error::Config(format!("article ids must be 0..n in order; position {i} holds id {}", a.id)));
        }
        if let Some((i, u)) = users.iter().enumerate().find(|(i, u)| u.id as usize != *i) {
            return Err(Error::Config(format!("user ids must be 0..n in order; position {i} holds id {}", u.id)));
        }
        if users.is_empty() || articles.is_empty() {
            return Err(Error::Config("world needs at least one article and one user".into()));
        }
        Ok(World { articles, users })
    }

    /// Synthesizes corpus and population from `config.corpus.seed`.
    ///
    /// Preference cells are rounded to their CSV form, so a run over
    /// `generate`d files and a run that synthesizes inline start from the
    /// same population.
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        let seed = config.corpus.seed;
        let articles = generate_articles(&config.corpus.spec(), &mut stream(seed, Stream::Articles))?;
        let mut users = generate_users(config.users.per_group, &config.templates()?, &mut stream(seed, Stream::Users))?;
        for u in &mut users {
            for row in u.preference.0.iter_mut() {
                for v in row.iter_mut() {
                    *v = crate::io::round_sig(*v);
                }
            }
        }
        World::new(articles, users)
    }

    /// Reads the configured corpus/population files, synthesizing whichever is absent.
    pub fn load_or_generate(config: &ExperimentConfig) -> Result<Self> {
        let generated = if config.corpus.articles_path.is_none() || config.corpus.users_path.is_none() {
            Some(World::generate(config)?)
        } else {
            None
        };
        let articles = match &config.corpus.articles_path {
            Some(p) => crate::io::read_articles(p)?,
            None => generated.as_ref().expect("generated").articles.clone(),
        };
        let users = match &config.corpus.users_path {
            Some(p) => crate::io::read_users(p)?,
            None => generated.as_ref().expect("generated").users.clone(),
        };
        World::new(articles, users)
    }
}

/// Mutable state of a single run.
pub struct RunState<'w> {
    pub seed: u64,
    config: &'w ExperimentConfig,
    articles: &'w [ArticleUtility],
    topic_index: TopicIndex,
    pub users: Vec<UserProfile>,
    pub log: InteractionLog,
    pub model: Option<MfModel>,
    /// Calibration target per user, frozen after bootstrap.
    pub targets: Vec<StanceDistribution>,
    pub iteration: usize,
    pub bootstrap_reference: BTreeMap<Typology, Option<f64>>,
    pub epoch_rows: Vec<EpochRow>,
    /// Number of epochs of live data the current model was trained on.
    pub model_epoch: usize,
    pub retrains: usize,
    pub max_umps_delta_error: f64,
    pub models: Vec<(usize, MfModel)>,
    outcomes: Vec<IterationOutcome>,
    arrivals: SimRng,
    clicks: SimRng,
}

impl<'w> RunState<'w> {
    pub fn new(config: &'w ExperimentConfig, world: &'w World, seed: u64) -> Self {
        RunState {
            seed,
            config,
            articles: &world.articles,
            topic_index: TopicIndex::new(&world.articles),
            users: world.users.clone(),
            log: InteractionLog::new(),
            model: None,
            targets: Vec::new(),
            iteration: 0,
            bootstrap_reference: BTreeMap::new(),
            epoch_rows: Vec::new(),
            model_epoch: 0,
            retrains: 0,
            max_umps_delta_error: 0.0,
            models: Vec::new(),
            outcomes: Vec::new(),
            arrivals: stream(seed, Stream::Arrivals),
            clicks: stream(seed, Stream::Clicks),
        }
    }

    fn wrap(&self, iteration: usize) -> impl FnOnce(Error) -> Error {
        let seed = self.seed;
        move |e| Error::Run {
            seed,
            iteration,
            source: Box::new(e),
        }
    }

    fn train(&mut self, epoch: usize) -> Result<()> {
        let mut rng = stream(self.seed, Stream::Training(epoch));
        let hyper = self.config.mf;
        let model = match (&self.model, hyper.warm_start) {
            (Some(prev), true) => train_mf_warm(prev, &self.log, &mut rng)?,
            _ => train_mf(&self.log, self.users.len(), self.articles.len(), hyper, &mut rng)?,
        };
        if self.config.output.dump_models {
            self.models.push((epoch, model.clone()));
        }
        self.model = Some(model);
        self.model_epoch = epoch;
        Ok(())
    }

    /// Random per-topic exposure for every user, the first model, the
    /// calibration targets and the epoch-0 metrics.
    pub fn bootstrap(&mut self) -> Result<()> {
        let per_topic = self.config.simulation.bootstrap_per_topic;
        let mut rng = stream(self.seed, Stream::Bootstrap);
        let ctx = ImpressionContext::bootstrap(self.seed);
        let click = self.config.click;
        for u in 0..self.users.len() {
            let ids = self.topic_index.sample(per_topic, &mut rng).map_err(self.wrap(0))?;
            for (pos, id) in ids.into_iter().enumerate() {
                let article = &self.articles[id as usize];
                let record = simulate_impression(&mut self.users[u], article, pos as u32 + 1, &click, ctx, &mut self.clicks);
                self.log.push(record);
            }
        }
        self.train(0).map_err(self.wrap(0))?;

        let smoothing = self.config.intervention.target_smoothing;
        let mut clicked: Vec<Vec<_>> = vec![Vec::new(); self.users.len()];
        for r in self.log.iter().filter(|r| r.clicked) {
            clicked[r.user_id as usize].push(self.articles[r.article_id as usize].stance);
        }
        self.targets = match self.config.intervention.target_scope {
            TargetScope::User => clicked
                .iter()
                .map(|c| stance_distribution(c.iter().copied(), smoothing))
                .collect::<Result<_>>()?,
            TargetScope::Group => {
                let mut pooled: BTreeMap<Typology, Vec<_>> = BTreeMap::new();
                for (u, c) in self.users.iter().zip(&clicked) {
                    pooled.entry(u.typology).or_default().extend_from_slice(c);
                }
                let per_group: BTreeMap<Typology, StanceDistribution> = pooled
                    .into_iter()
                    .map(|(t, c)| Ok((t, stance_distribution(c, smoothing)?)))
                    .collect::<Result<_>>()?;
                self.users.iter().map(|u| per_group[&u.typology]).collect()
            }
        };

        self.bootstrap_reference = bootstrap_reference(self.log.records(), &self.users, self.articles);
        let mut rows = epoch_group_aggregate(self.seed, 0, &[], &self.users);
        for row in &mut rows {
            row.mean_mps = self.bootstrap_reference[&row.group];
            row.n_interactions = self.users.iter().filter(|u| u.typology == row.group).count();
            row.n_clicks = self
                .log
                .iter()
                .filter(|r| r.clicked && self.users[r.user_id as usize].typology == row.group)
                .count();
        }
        self.epoch_rows.extend(rows);
        Ok(())
    }

    fn recommend(&self, u: usize) -> Result<Vec<ArticleId>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Training("no model; bootstrap has not run".into()))?;
        let user = &self.users[u];
        let k = self.config.simulation.rec_k;
        let iv = &self.config.intervention;
        if !iv.enabled {
            return recommend_topk(model, user, self.articles, k);
        }
        let available = self.articles.iter().filter(|a| !user.exposed.contains(a.id)).count();
        if available < k {
            return Err(Error::Exhausted {
                user: user.id,
                available,
                needed: k,
            });
        }
        let candidates: Vec<Candidate> = rank_unexposed(model, user, self.articles, iv.pool.min(available))?
            .into_iter()
            .map(|(id, relevance)| Candidate {
                id,
                stance: self.articles[id as usize].stance,
                relevance,
            })
            .collect();
        calibrated_rerank(&candidates, &self.targets[u], &iv.params(), k)
    }

    /// One visit: a uniformly drawn user is shown `rec_k` articles in order,
    /// each click drifting the user's preferences.
    pub fn run_iteration(&mut self) -> Result<()> {
        let t = self.iteration + 1;
        let every = self.config.simulation.retrain_every;
        let epoch = (t - 1) / every + 1;
        let u = self.arrivals.random_range(0..self.users.len());
        let list = self.recommend(u).map_err(self.wrap(t))?;

        let ctx = ImpressionContext {
            run_id: self.seed,
            iteration: t,
            epoch,
            phase: Phase::Live,
        };
        let click = self.config.click;
        let drift = self.config.drift;
        let mut stances = Vec::with_capacity(list.len());
        let mut clicks = Vec::with_capacity(list.len());
        for (pos, &id) in list.iter().enumerate() {
            let article = &self.articles[id as usize];
            let user = &mut self.users[u];
            let record = simulate_impression(user, article, pos as u32 + 1, &click, ctx, &mut self.clicks);
            if record.clicked {
                let before = umps(&user.preference);
                user.preference = apply_drift(&user.preference, article, drift.influence);
                if drift.renormalize && drift.influence > 0.0 {
                    renormalize_rows(&mut user.preference, article);
                } else {
                    let expected = drift.influence * article.stance.value() as f64 * article.n_topics() as f64;
                    let err = (umps(&user.preference) - before - expected).abs();
                    self.max_umps_delta_error = self.max_umps_delta_error.max(err);
                }
            }
            stances.push(article.stance);
            clicks.push(record.clicked);
            self.log.push(record);
        }
        self.outcomes.push(IterationOutcome {
            iteration: t,
            epoch,
            user_id: u as u32,
            typology: self.users[u].typology,
            mps: iteration_mps(&stances, &clicks)?,
            n_clicks: clicks.iter().filter(|c| **c).count(),
        });
        self.iteration = t;

        if t.is_multiple_of(every) {
            self.epoch_rows
                .extend(epoch_group_aggregate(self.seed, epoch, &self.outcomes, &self.users));
            self.outcomes.clear();
            self.train(epoch).map_err(self.wrap(t))?;
            self.retrains += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> RunResult {
        RunResult {
            seed: self.seed,
            epoch_rows: self.epoch_rows,
            bootstrap_reference: self.bootstrap_reference,
            log: self.log,
            final_users: self.users,
            retrains: self.retrains,
            max_umps_delta_error: self.max_umps_delta_error,
            models: self.models,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Doubles as the run id.
    pub seed: u64,
    pub epoch_rows: Vec<EpochRow>,
    pub bootstrap_reference: BTreeMap<Typology, Option<f64>>,
    pub log: InteractionLog,
    pub final_users: Vec<UserProfile>,
    pub retrains: usize,
    /// Largest |observed - c.stance.|topics|| UMPS step over all clicks.
    pub max_umps_delta_error: f64,
    /// `(epoch, model)` for every training, when model dumps are enabled.
    pub models: Vec<(usize, MfModel)>,
}

impl RunResult {
    pub fn rows_for(&self, group: Typology) -> impl Iterator<Item = &EpochRow> {
        self.epoch_rows.iter().filter(move |r| r.group == group)
    }
}

pub fn run_experiment(config: &ExperimentConfig, world: &World, seed: u64) -> Result<RunResult> {
    let mut state = RunState::new(config, world, seed);
    state.bootstrap()?;
    while state.iteration < config.simulation.iterations {
        state.run_iteration()?;
    }
    Ok(state.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Mps,
    Umps,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mps => "mps",
            Metric::Umps => "umps",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mps" => Ok(Metric::Mps),
            "umps" => Ok(Metric::Umps),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub epoch: usize,
    pub group: Typology,
    pub metric: Metric,
    /// Absent when no run has a value (e.g. a group never visited in that epoch).
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub rows: Vec<AggregateRow>,
    pub seeds: Vec<u64>,
}

/// Mean and sample standard deviation over runs for every (epoch, group,
/// metric). Values are first rounded to their 9-significant-digit CSV form so
/// aggregating in memory and from written files agree exactly; runs are
/// combined in run-id order, so input order does not matter.
pub fn aggregate_epoch_rows(rows: &[EpochRow]) -> AggregateResult {
    let mut cells: BTreeMap<(usize, Typology, Metric), BTreeMap<u64, f64>> = BTreeMap::new();
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.run_id).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for r in rows {
        let mps = cells.entry((r.epoch, r.group, Metric::Mps)).or_default();
        if let Some(v) = r.mean_mps {
            mps.insert(r.run_id, crate::io::round_sig(v));
        }
        cells
            .entry((r.epoch, r.group, Metric::Umps))
            .or_default()
            .insert(r.run_id, crate::io::round_sig(r.mean_umps));
    }
    let rows = cells
        .into_iter()
        .map(|((epoch, group, metric), values)| {
            let n = values.len();
            let mean = (n > 0).then(|| values.values().sum::<f64>() / n as f64);
            let std = mean.map(|m| {
                if n < 2 {
                    0.0
                } else {
                    (values.values().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                }
            });
            AggregateRow {
                epoch,
                group,
                metric,
                mean,
                std,
            }
        })
        .collect();
    AggregateResult { rows, seeds }
}

pub struct Repeats {
    pub runs: Vec<RunResult>,
    pub aggregate: AggregateResult,
}

/// Runs seeds `base_seed .. base_seed + repeats` (in parallel when
/// configured) and aggregates them.
pub fn run_repeats(config: &ExperimentConfig, world: &World) -> Result<Repeats> {
    let base = config.simulation.base_seed;
    let seeds: Vec<u64> = (0..config.simulation.repeats as u64).map(|i| base + i).collect();
    let results: Vec<Result<RunResult>> = if config.simulation.parallel {
        seeds.par_iter().map(|&s| run_experiment(config, world, s)).collect()
    } else {
        seeds.iter().map(|&s| run_experiment(config, world, s)).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let all_rows: Vec<EpochRow> = runs.iter().flat_map(|r| r.epoch_rows.iter().copied()).collect();
    let aggregate = aggregate_epoch_rows(&all_rows);
    Ok(Repeats { runs, aggregate })
}
