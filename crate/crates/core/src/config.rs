//! Experiment configuration: TOML sections, the `paper` and `desk` presets,
//! and validation.
//!
//! A config file is overlaid on a preset; keys that are not recognised are
//! rejected, and every error names the offending line when it can be found.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{ClickModelParams, DriftConfig};
use crate::corpus::{default_templates, CorpusSpec, Templates, Typology, TypologyTemplate, N_STANCES, N_TOPICS};
use crate::error::{Error, Result};
use crate::intervention::{CalibrationParams, TargetScope};
use crate::recommender::MfHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_articles: usize,
    pub multi_topic_prob: f64,
    pub max_topics_per_article: usize,
    /// Seed for corpus and population synthesis (shared by every repeat).
    pub seed: u64,
    /// Pre-generated `articles.csv`; synthesized inline when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub articles_path: Option<PathBuf>,
    /// Pre-generated `users.csv`; synthesized inline when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users_path: Option<PathBuf>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let spec = CorpusSpec::default();
        CorpusSection {
            n_articles: spec.n_articles,
            multi_topic_prob: spec.multi_topic_prob,
            max_topics_per_article: spec.max_topics_per_article,
            seed: 0,
            articles_path: None,
            users_path: None,
        }
    }
}

impl CorpusSection {
    pub fn spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_articles: self.n_articles,
            multi_topic_prob: self.multi_topic_prob,
            max_topics_per_article: self.max_topics_per_article,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateEntry {
    pub weights: [f64; N_STANCES],
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UsersSection {
    pub per_group: usize,
    /// File of `[typology]` sections overriding the default templates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_file: Option<PathBuf>,
    /// Inline overrides, applied after `templates_file`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<Typology, TemplateEntry>,
}

impl Default for UsersSection {
    fn default() -> Self {
        UsersSection {
            per_group: 100,
            templates_file: None,
            templates: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub iterations: usize,
    pub retrain_every: usize,
    pub rec_k: usize,
    pub bootstrap_per_topic: usize,
    pub repeats: usize,
    pub base_seed: u64,
    /// Run repeats on the rayon pool.
    pub parallel: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            iterations: 40_000,
            retrain_every: 200,
            rec_k: 5,
            bootstrap_per_topic: 10,
            repeats: 10,
            base_seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionSection {
    pub enabled: bool,
    pub lambda: f64,
    pub alpha: f64,
    pub pool: usize,
    /// Additive smoothing of the bootstrap-click target distribution.
    pub target_smoothing: f64,
    pub target_scope: TargetScope,
}

impl Default for InterventionSection {
    fn default() -> Self {
        let p = CalibrationParams::default();
        InterventionSection {
            enabled: false,
            lambda: p.lambda,
            alpha: p.alpha,
            pool: p.candidate_pool,
            target_smoothing: 0.5,
            target_scope: TargetScope::User,
        }
    }
}

impl InterventionSection {
    pub fn params(&self) -> CalibrationParams {
        CalibrationParams {
            lambda: self.lambda,
            alpha: self.alpha,
            candidate_pool: self.pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub write_interactions: bool,
    /// Write `model_epoch<N>.csv` after every training.
    pub dump_models: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            write_interactions: true,
            dump_models: false,
        }
    }
}

/// Everything a run needs. `Default` is the paper-scale preset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub users: UsersSection,
    pub click: ClickModelParams,
    pub drift: DriftConfig,
    pub mf: MfHyper,
    pub simulation: SimulationSection,
    pub intervention: InterventionSection,
    pub output: OutputSection,
}

/// A validation failure tied to a dotted config key.
#[derive(Debug, Clone)]
struct Invalid {
    key: &'static str,
    msg: String,
}

fn invalid(key: &'static str, msg: impl Into<String>) -> Invalid {
    Invalid { key, msg: msg.into() }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = ExperimentConfig::default();
        if preset == Preset::Desk {
            cfg.corpus.n_articles = 2_000;
            cfg.users.per_group = 10;
            cfg.simulation.iterations = 4_000;
            cfg.simulation.retrain_every = 100;
        }
        cfg
    }

    pub fn n_users(&self) -> usize {
        self.users.per_group * Typology::ALL.len()
    }

    pub fn epochs(&self) -> usize {
        self.simulation.iterations / self.simulation.retrain_every.max(1)
    }

    pub fn calibration(&self) -> CalibrationParams {
        self.intervention.params()
    }

    /// Default templates with the file and inline overrides applied.
    pub fn templates(&self) -> Result<Templates> {
        let mut templates = default_templates();
        if let Some(path) = &self.users.templates_file {
            for (t, e) in load_templates_file(path)? {
                templates.insert(t, TypologyTemplate::new(t, e.weights, e.concentration)?);
            }
        }
        for (&t, e) in &self.users.templates {
            templates.insert(t, TypologyTemplate::new(t, e.weights, e.concentration)?);
        }
        Ok(templates)
    }

    fn check(&self) -> std::result::Result<(), Invalid> {
        let corpus = self.corpus.spec();
        if corpus.n_articles == 0 || !corpus.n_articles.is_multiple_of(N_STANCES) {
            return Err(invalid("corpus.n_articles", format!("{} is not a positive multiple of 5", corpus.n_articles)));
        }
        if !(0.0..=1.0).contains(&corpus.multi_topic_prob) {
            return Err(invalid("corpus.multi_topic_prob", "must lie in [0, 1]"));
        }
        if corpus.max_topics_per_article == 0 || corpus.max_topics_per_article > N_TOPICS {
            return Err(invalid("corpus.max_topics_per_article", "must lie in 1..=14"));
        }
        if self.users.per_group == 0 {
            return Err(invalid("users.per_group", "must be positive"));
        }
        for (t, e) in &self.users.templates {
            TypologyTemplate::new(*t, e.weights, e.concentration).map_err(|e| invalid("users.templates", e.to_string()))?;
        }
        self.click.validate().map_err(|e| invalid("click", e.to_string()))?;
        self.drift.validate().map_err(|e| invalid("drift.influence", e.to_string()))?;
        self.mf.validate().map_err(|e| invalid("mf", e.to_string()))?;

        let sim = &self.simulation;
        if sim.rec_k == 0 {
            return Err(invalid("simulation.rec_k", "must be at least 1"));
        }
        if sim.retrain_every == 0 {
            return Err(invalid("simulation.retrain_every", "must be positive"));
        }
        if !sim.iterations.is_multiple_of(sim.retrain_every) {
            return Err(invalid(
                "simulation.iterations",
                format!("{} is not divisible by retrain_every = {}", sim.iterations, sim.retrain_every),
            ));
        }
        if sim.repeats == 0 {
            return Err(invalid("simulation.repeats", "must be at least 1"));
        }
        if sim.bootstrap_per_topic == 0 {
            return Err(invalid("simulation.bootstrap_per_topic", "must be positive"));
        }
        if self.intervention.enabled {
            self.calibration()
                .validate(sim.rec_k)
                .map_err(|e| invalid("intervention", e.to_string()))?;
        }
        if !(self.intervention.target_smoothing.is_finite() && self.intervention.target_smoothing >= 0.0) {
            return Err(invalid("intervention.target_smoothing", "must be >= 0"));
        }

        // Each user sees the bootstrap sample plus rec_k articles per expected
        // visit; require three times the expected live demand.
        let bootstrap = N_TOPICS * sim.bootstrap_per_topic;
        let visits = sim.iterations.div_ceil(self.n_users());
        let needed = bootstrap + sim.rec_k * visits * 3;
        if self.corpus.articles_path.is_none() && corpus.n_articles < needed {
            return Err(invalid(
                "corpus.n_articles",
                format!(
                    "{} articles risk exhausting user candidate pools: need at least {needed} \
                     ({bootstrap} bootstrap + {} per user x 3)",
                    corpus.n_articles,
                    sim.rec_k * visits
                ),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| Error::Config(format!("{}: {}", e.key, e.msg)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Resolves relative paths against `base`.
    fn rebase_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus.articles_path,
            &mut self.corpus.users_path,
            &mut self.users.templates_file,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// 1-based line of `key` (dotted `section.field`) in `text`, if present.
fn locate(text: &str, key: &str) -> Option<usize> {
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (s, Some(f)),
        None => (key, None),
    };
    let mut in_section = false;
    let mut header_line = None;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.starts_with('[') {
            let name = l.trim_matches(|c| c == '[' || c == ']').trim();
            in_section = name == section || name.starts_with(&format!("{section}."));
            if name == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some(f) = field {
                if l.split('=').next().map(str::trim) == Some(f) {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

/// Parses `text` over `preset` and validates. `origin` is used in messages.
pub fn parse_config(text: &str, preset: Preset, origin: &str) -> Result<ExperimentConfig> {
    let anchored = |e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| line_at(text, s.start));
        match line {
            Some(l) => Error::Config(format!("{origin}:{l}: {}", e.message())),
            None => Error::Config(format!("{origin}: {}", e.message())),
        }
    };
    // Typed parse first: catches unknown keys and type errors with spans.
    toml::from_str::<ExperimentConfig>(text).map_err(anchored)?;
    let overlay: toml::Table = text.parse().map_err(anchored)?;
    let mut table = toml::Table::try_from(ExperimentConfig::preset(preset)).expect("preset serialises");
    merge(&mut table, overlay);
    let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {}", e.message())))?;
    cfg.check().map_err(|e| match locate(text, e.key) {
        Some(l) => Error::Config(format!("{origin}:{l}: {}: {}", e.key, e.msg)),
        None => Error::Config(format!("{origin}: {}: {}", e.key, e.msg)),
    })?;
    Ok(cfg)
}

/// Loads a config file over `preset` (paper when `None`), or just the preset when no file.
pub fn load_config(path: Option<&Path>, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let preset = preset.unwrap_or(Preset::Paper);
    let Some(path) = path else {
        let cfg = ExperimentConfig::preset(preset);
        cfg.validate()?;
        return Ok(cfg);
    };
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text, preset, &path.display().to_string())?;
    cfg.rebase_paths(path.parent().unwrap_or_else(|| Path::new(".")));
    Ok(cfg)
}

/// Reads a templates override file: one `[typology]` table per overridden group.
pub fn load_templates_file(path: &Path) -> Result<BTreeMap<Typology, TemplateEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_templates(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_templates(text: &str) -> Result<BTreeMap<Typology, TemplateEntry>> {
    let parsed: BTreeMap<Typology, TemplateEntry> = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_at(text, s.start));
        Error::Config(format!("line {}: {}", line.unwrap_or(0), e.message()))
    })?;
    for (t, e) in &parsed {
        TypologyTemplate::new(*t, e.weights, e.concentration)?;
    }
    Ok(parsed)
}
