//! Synthetic article corpus and typology-based user population.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_TOPICS: usize = 14;
pub const N_STANCES: usize = 5;

pub type ArticleId = u32;
pub type UserId = u32;

pub const TOPIC_NAMES: [&str; N_TOPICS] = [
    "abortion",
    "environment",
    "guns",
    "health care",
    "immigration",
    "LGBTQIA",
    "taxes",
    "technology",
    "trade",
    "Trump impeachment",
    "US military",
    "welfare",
    "US 2020 election",
    "racism",
];

/// Political stance from extreme liberal (-2) to extreme conservative (+2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stance(i8);

impl Stance {
    pub const ALL: [Stance; N_STANCES] = [Stance(-2), Stance(-1), Stance(0), Stance(1), Stance(2)];

    pub fn new(value: i8) -> Result<Self> {
        if (-2..=2).contains(&value) {
            Ok(Stance(value))
        } else {
            Err(Error::Config(format!("stance {value} outside -2..=2")))
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index < N_STANCES {
            Ok(Stance(index as i8 - 2))
        } else {
            Err(Error::Config(format!("stance index {index} outside 0..5")))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Column of this stance in a topic x stance matrix.
    pub fn index(self) -> usize {
        (self.0 + 2) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicId(u8);

impl TopicId {
    pub fn new(id: usize) -> Result<Self> {
        if id < N_TOPICS {
            Ok(TopicId(id as u8))
        } else {
            Err(Error::Config(format!("topic id {id} outside 0..{N_TOPICS}")))
        }
    }

    pub fn all() -> impl Iterator<Item = TopicId> {
        (0..N_TOPICS as u8).map(TopicId)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        TOPIC_NAMES[self.index()]
    }
}

/// Set of topics covered by an article, stored as a 14-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TopicSet(u16);

impl TopicSet {
    pub fn empty() -> Self {
        TopicSet(0)
    }

    pub fn insert(&mut self, topic: TopicId) {
        self.0 |= 1 << topic.0;
    }

    pub fn contains(self, topic: TopicId) -> bool {
        self.0 & (1 << topic.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Topics in ascending id order.
    pub fn iter(self) -> impl Iterator<Item = TopicId> {
        TopicId::all().filter(move |t| self.contains(*t))
    }
}

impl FromIterator<TopicId> for TopicSet {
    fn from_iter<I: IntoIterator<Item = TopicId>>(iter: I) -> Self {
        let mut set = TopicSet::empty();
        for t in iter {
            set.insert(t);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArticleUtility {
    pub id: ArticleId,
    topics: TopicSet,
    pub stance: Stance,
}

impl ArticleUtility {
    pub fn new(id: ArticleId, topics: TopicSet, stance: Stance) -> Result<Self> {
        if topics.is_empty() {
            return Err(Error::Config(format!("article {id} covers no topic")));
        }
        Ok(ArticleUtility { id, topics, stance })
    }

    pub fn topics(&self) -> TopicSet {
        self.topics
    }

    pub fn n_topics(&self) -> usize {
        self.topics.len()
    }

    /// The 14x5 binary utility matrix: a one at (topic, stance column) for every covered topic.
    pub fn utility_matrix(&self) -> [[u8; N_STANCES]; N_TOPICS] {
        let mut m = [[0u8; N_STANCES]; N_TOPICS];
        for t in self.topics.iter() {
            m[t.index()][self.stance.index()] = 1;
        }
        m
    }
}

pub fn utility_matrix(article: &ArticleUtility) -> [[u8; N_STANCES]; N_TOPICS] {
    article.utility_matrix()
}

/// A user's 14x5 nonnegative affinity for every (topic, stance) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceMatrix(pub [[f64; N_STANCES]; N_TOPICS]);

impl PreferenceMatrix {
    pub fn zeros() -> Self {
        PreferenceMatrix([[0.0; N_STANCES]; N_TOPICS])
    }

    /// Every row set to `row`.
    pub fn from_row(row: [f64; N_STANCES]) -> Self {
        PreferenceMatrix([row; N_TOPICS])
    }

    pub fn get(&self, topic: TopicId, stance: Stance) -> f64 {
        self.0[topic.index()][stance.index()]
    }

    pub fn set(&mut self, topic: TopicId, stance: Stance, value: f64) {
        self.0[topic.index()][stance.index()] = value;
    }

    pub fn row(&self, topic: TopicId) -> &[f64; N_STANCES] {
        &self.0[topic.index()]
    }

    pub fn rows(&self) -> &[[f64; N_STANCES]; N_TOPICS] {
        &self.0
    }

    /// Cells in row-major (topic-major) order.
    pub fn cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flat_map(|r| r.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Typology {
    SolidLiberal,
    OpportunityDemocrat,
    Bystander,
    MarketSkepticRepublican,
    CoreConservative,
}

impl Typology {
    pub const ALL: [Typology; 5] = [
        Typology::SolidLiberal,
        Typology::OpportunityDemocrat,
        Typology::Bystander,
        Typology::MarketSkepticRepublican,
        Typology::CoreConservative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Typology::SolidLiberal => "solid_liberal",
            Typology::OpportunityDemocrat => "opportunity_democrat",
            Typology::Bystander => "bystander",
            Typology::MarketSkepticRepublican => "market_skeptic_republican",
            Typology::CoreConservative => "core_conservative",
        }
    }
}

impl fmt::Display for Typology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Typology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Typology::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTypology(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypologyTemplate {
    pub typology: Typology,
    /// Stance distribution applied to every topic row.
    pub base_weights: [f64; N_STANCES],
    /// Dirichlet concentration; larger means less per-user noise.
    pub concentration: f64,
}

impl TypologyTemplate {
    pub fn new(typology: Typology, base_weights: [f64; N_STANCES], concentration: f64) -> Result<Self> {
        if base_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("{typology}: weights must be finite and nonnegative")));
        }
        let sum: f64 = base_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("{typology}: weights sum to {sum}, expected 1")));
        }
        if !(concentration.is_finite() && concentration > 0.0) {
            return Err(Error::Config(format!("{typology}: concentration must be positive")));
        }
        Ok(TypologyTemplate {
            typology,
            base_weights,
            concentration,
        })
    }
}

pub type Templates = BTreeMap<Typology, TypologyTemplate>;

pub const DEFAULT_CONCENTRATION: f64 = 50.0;

pub fn default_templates() -> Templates {
    let weights = [
        (Typology::SolidLiberal, [0.45, 0.30, 0.15, 0.07, 0.03]),
        (Typology::OpportunityDemocrat, [0.25, 0.35, 0.25, 0.10, 0.05]),
        (Typology::Bystander, [0.10, 0.20, 0.40, 0.20, 0.10]),
        (Typology::MarketSkepticRepublican, [0.05, 0.10, 0.25, 0.35, 0.25]),
        (Typology::CoreConservative, [0.03, 0.07, 0.15, 0.30, 0.45]),
    ];
    weights
        .into_iter()
        .map(|(t, w)| {
            (
                t,
                TypologyTemplate {
                    typology: t,
                    base_weights: w,
                    concentration: DEFAULT_CONCENTRATION,
                },
            )
        })
        .collect()
}

/// Set of article ids a user has been shown, kept as a growable bitset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExposureSet {
    bits: Vec<u64>,
    len: usize,
}

impl ExposureSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the id was already present.
    pub fn insert(&mut self, id: ArticleId) -> bool {
        let (word, bit) = (id as usize / 64, id % 64);
        if word >= self.bits.len() {
            self.bits.resize(word + 1, 0);
        }
        let mask = 1u64 << bit;
        if self.bits[word] & mask != 0 {
            return false;
        }
        self.bits[word] |= mask;
        self.len += 1;
        true
    }

    pub fn contains(&self, id: ArticleId) -> bool {
        let word = id as usize / 64;
        word < self.bits.len() && self.bits[word] & (1u64 << (id % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = ArticleId> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64u32).filter(move |b| bits & (1u64 << b) != 0).map(move |b| w as u32 * 64 + b)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub id: UserId,
    pub typology: Typology,
    pub preference: PreferenceMatrix,
    pub exposed: ExposureSet,
}

impl UserProfile {
    pub fn new(id: UserId, typology: Typology, preference: PreferenceMatrix) -> Self {
        UserProfile {
            id,
            typology,
            preference,
            exposed: ExposureSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_articles: usize,
    pub multi_topic_prob: f64,
    pub max_topics_per_article: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_articles: 40_000,
            multi_topic_prob: 0.2,
            max_topics_per_article: 2,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_articles == 0 || !self.n_articles.is_multiple_of(N_STANCES) {
            return Err(Error::Config(format!(
                "n_articles must be a positive multiple of {N_STANCES}, got {}",
                self.n_articles
            )));
        }
        if !(0.0..=1.0).contains(&self.multi_topic_prob) {
            return Err(Error::Config(format!(
                "multi_topic_prob must lie in [0, 1], got {}",
                self.multi_topic_prob
            )));
        }
        if self.max_topics_per_article == 0 || self.max_topics_per_article > N_TOPICS {
            return Err(Error::Config(format!(
                "max_topics_per_article must lie in 1..={N_TOPICS}, got {}",
                self.max_topics_per_article
            )));
        }
        if self.n_articles > u32::MAX as usize {
            return Err(Error::Config("n_articles exceeds the id range".into()));
        }
        Ok(())
    }
}

/// Draws the article corpus. Stances are balanced exactly and then shuffled
/// over ids so that id order carries no stance information.
pub fn generate_articles<R: Rng + ?Sized>(spec: &CorpusSpec, rng: &mut R) -> Result<Vec<ArticleUtility>> {
    spec.validate()?;
    let per_stance = spec.n_articles / N_STANCES;
    let mut stances: Vec<Stance> = Stance::ALL
        .iter()
        .flat_map(|s| std::iter::repeat_n(*s, per_stance))
        .collect();
    stances.shuffle(rng);

    let extra = Binomial::new((spec.max_topics_per_article - 1) as u64, spec.multi_topic_prob)
        .map_err(|e| Error::Config(format!("topic-count distribution: {e}")))?;

    let mut articles = Vec::with_capacity(spec.n_articles);
    for (id, stance) in stances.into_iter().enumerate() {
        let count = (1 + extra.sample(rng) as usize).min(N_TOPICS);
        let topics: TopicSet = rand::seq::index::sample(rng, N_TOPICS, count)
            .into_iter()
            .map(|t| TopicId(t as u8))
            .collect();
        articles.push(ArticleUtility::new(id as ArticleId, topics, stance)?);
    }
    Ok(articles)
}

/// Dirichlet draw by normalised Gamma variates; zero-weight components stay at zero.
fn dirichlet_row<R: Rng + ?Sized>(weights: &[f64; N_STANCES], concentration: f64, rng: &mut R) -> Result<[f64; N_STANCES]> {
    let mut row = [0.0; N_STANCES];
    for (cell, &w) in row.iter_mut().zip(weights) {
        if w > 0.0 {
            let gamma = Gamma::new(concentration * w, 1.0)
                .map_err(|e| Error::Config(format!("dirichlet parameter: {e}")))?;
            *cell = gamma.sample(rng);
        }
    }
    let sum: f64 = row.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        // All gamma draws underflowed; fall back to the template mean.
        return Ok(*weights);
    }
    for cell in &mut row {
        *cell /= sum;
    }
    Ok(row)
}

/// `per_group` users per typology, ids assigned group by group in typology order.
pub fn generate_users<R: Rng + ?Sized>(per_group: usize, templates: &Templates, rng: &mut R) -> Result<Vec<UserProfile>> {
    if per_group == 0 {
        return Err(Error::Config("users per group must be positive".into()));
    }
    let mut users = Vec::with_capacity(per_group * Typology::ALL.len());
    for typology in Typology::ALL {
        let template = templates
            .get(&typology)
            .ok_or_else(|| Error::Config(format!("no template for typology {typology}")))?;
        for _ in 0..per_group {
            let mut pref = PreferenceMatrix::zeros();
            for row in pref.0.iter_mut() {
                *row = dirichlet_row(&template.base_weights, template.concentration, rng)?;
            }
            users.push(UserProfile::new(users.len() as UserId, typology, pref));
        }
    }
    Ok(users)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn topic(name: &str) -> TopicId {
        TopicId(TOPIC_NAMES.iter().position(|n| *n == name).unwrap() as u8)
    }

    #[test]
    fn stance_index_bijection() {
        for (i, s) in Stance::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(Stance::from_index(i).unwrap(), *s);
            assert_eq!(Stance::new(s.value()).unwrap(), *s);
            assert_eq!(s.value() as i32, i as i32 - 2);
        }
        assert!(Stance::new(3).is_err());
        assert!(Stance::from_index(5).is_err());
    }

    #[test]
    fn fourteen_unique_topics() {
        let mut names: Vec<_> = TopicId::all().map(|t| t.name()).collect();
        assert_eq!(names.len(), 14);
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 14);
    }

    #[test]
    fn utility_matrix_two_topic_liberal_article() {
        let topics: TopicSet = [topic("abortion"), topic("immigration")].into_iter().collect();
        let a = ArticleUtility::new(0, topics, Stance::new(-2).unwrap()).unwrap();
        let m = utility_matrix(&a);
        for (t, row) in m.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                let expect = (t == 0 || t == 4) && s == 0;
                assert_eq!(v, expect as u8, "cell ({t},{s})");
            }
        }
    }

    #[test]
    fn utility_matrix_single_topic() {
        let a = ArticleUtility::new(3, [topic("guns")].into_iter().collect(), Stance::new(2).unwrap()).unwrap();
        let m = a.utility_matrix();
        assert_eq!(m[2][4], 1);
        let total: u32 = m.iter().flatten().map(|&v| v as u32).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn empty_topic_set_rejected() {
        assert!(ArticleUtility::new(0, TopicSet::empty(), Stance::new(0).unwrap()).is_err());
    }

    #[test]
    fn five_articles_one_per_stance() {
        let spec = CorpusSpec {
            n_articles: 5,
            multi_topic_prob: 0.0,
            max_topics_per_article: 1,
        };
        let arts = generate_articles(&spec, &mut stream(3, Stream::Articles)).unwrap();
        assert_eq!(arts.len(), 5);
        let mut stances: Vec<_> = arts.iter().map(|a| a.stance.value()).collect();
        stances.sort();
        assert_eq!(stances, vec![-2, -1, 0, 1, 2]);
        assert!(arts.iter().all(|a| a.n_topics() == 1));
    }

    #[test]
    fn paper_scale_balance() {
        let spec = CorpusSpec::default();
        let arts = generate_articles(&spec, &mut stream(1, Stream::Articles)).unwrap();
        assert_eq!(arts.len(), 40_000);
        for s in Stance::ALL {
            assert_eq!(arts.iter().filter(|a| a.stance == s).count(), 8_000);
        }
        assert!(arts.iter().all(|a| (1..=2).contains(&a.n_topics())));
        assert!(arts.iter().enumerate().all(|(i, a)| a.id as usize == i));
    }

    #[test]
    fn corpus_spec_errors() {
        let mut spec = CorpusSpec { n_articles: 12, ..CorpusSpec::default() };
        assert!(generate_articles(&spec, &mut stream(0, Stream::Articles)).is_err());
        spec.n_articles = 10;
        spec.max_topics_per_article = 15;
        assert!(generate_articles(&spec, &mut stream(0, Stream::Articles)).is_err());
    }

    #[test]
    fn articles_deterministic() {
        let spec = CorpusSpec {
            n_articles: 500,
            ..CorpusSpec::default()
        };
        let a = generate_articles(&spec, &mut stream(9, Stream::Articles)).unwrap();
        let b = generate_articles(&spec, &mut stream(9, Stream::Articles)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_template_values() {
        let t = default_templates();
        assert_eq!(t.len(), 5);
        assert_eq!(t[&Typology::SolidLiberal].base_weights, [0.45, 0.30, 0.15, 0.07, 0.03]);
        for tpl in t.values() {
            let s: f64 = tpl.base_weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert_eq!(tpl.concentration, 50.0);
            TypologyTemplate::new(tpl.typology, tpl.base_weights, tpl.concentration).unwrap();
        }
        let by = t[&Typology::Bystander].base_weights;
        let argmax = (0..5).max_by(|&a, &b| by[a].total_cmp(&by[b])).unwrap();
        assert_eq!(Stance::from_index(argmax).unwrap().value(), 0);
    }

    #[test]
    fn population_counts_and_rows() {
        let users = generate_users(100, &default_templates(), &mut stream(0, Stream::Users)).unwrap();
        assert_eq!(users.len(), 500);
        for t in Typology::ALL {
            assert_eq!(users.iter().filter(|u| u.typology == t).count(), 100);
        }
        let users = generate_users(10, &default_templates(), &mut stream(1, Stream::Users)).unwrap();
        assert_eq!(users.len(), 50);
        for u in &users {
            for row in u.preference.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn concentration_limit_recovers_template() {
        let mut templates = default_templates();
        for t in templates.values_mut() {
            t.concentration = 1e9;
        }
        let users = generate_users(3, &templates, &mut stream(2, Stream::Users)).unwrap();
        for u in &users {
            let w = templates[&u.typology].base_weights;
            for row in u.preference.rows() {
                for (a, b) in row.iter().zip(w) {
                    assert!((a - b).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn missing_template_is_config_error() {
        let mut templates = default_templates();
        templates.remove(&Typology::Bystander);
        let err = generate_users(2, &templates, &mut stream(0, Stream::Users)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn exposure_set_behaves_like_a_set() {
        let mut s = ExposureSet::new();
        assert!(s.insert(5));
        assert!(s.insert(200));
        assert!(!s.insert(5));
        assert_eq!(s.len(), 2);
        assert!(s.contains(200) && !s.contains(6) && !s.contains(10_000));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![5, 200]);
    }
}
