//! CSV and manifest formats.
//!
//! All CSVs are comma-separated with a mandatory header row and `\n` line
//! endings. Reals are written with 9 significant digits; absent values are
//! empty fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::behavior::InteractionLog;
use crate::corpus::{ArticleUtility, PreferenceMatrix, Stance, TopicId, TopicSet, Typology, UserProfile, N_STANCES, N_TOPICS};
use crate::error::{Error, Result};
use crate::metrics::EpochRow;
use crate::recommender::MfModel;
use crate::simulation::{AggregateRow, Metric};

const SIG_DIGITS: usize = 9;

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside 1e-5 ..= 1e9.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to the value its CSV form parses back to.
pub fn round_sig(x: f64) -> f64 {
    fmt_real(x).parse().unwrap_or(x)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_path(path)?)
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| bad(path, format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| bad(path, format!("line {}: cannot parse {name} from `{raw}`", line_of(rec))))
}

fn opt_field(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(idx).map(str::trim) {
        None | Some("") => Ok(None),
        Some(_) => field(path, rec, idx, name).map(Some),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[String]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(path, format!("unexpected header; expected `{}`", expected.join(","))));
    }
    Ok(())
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn write_articles(path: &Path, articles: &[ArticleUtility]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["article_id", "stance", "topics"])?;
    for a in articles {
        let topics: Vec<String> = a.topics().iter().map(|t| t.index().to_string()).collect();
        w.write_record([a.id.to_string(), a.stance.value().to_string(), topics.join(";")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_articles(path: &Path) -> Result<Vec<ArticleUtility>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &strings(&["article_id", "stance", "topics"]))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u32 = field(path, &rec, 0, "article_id")?;
        let stance = Stance::new(field(path, &rec, 1, "stance")?).map_err(|e| bad(path, e.to_string()))?;
        let topics = rec
            .get(2)
            .unwrap_or("")
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .and_then(|t| TopicId::new(t).ok())
                    .ok_or_else(|| bad(path, format!("line {}: bad topic `{s}`", line_of(&rec))))
            })
            .collect::<Result<TopicSet>>()?;
        out.push(ArticleUtility::new(id, topics, stance).map_err(|e| bad(path, e.to_string()))?);
    }
    Ok(out)
}

fn users_header() -> Vec<String> {
    let mut h = strings(&["user_id", "typology"]);
    for t in 0..N_TOPICS {
        for s in 0..N_STANCES {
            h.push(format!("p_{t}_{s}"));
        }
    }
    h
}

pub fn write_users(path: &Path, users: &[UserProfile]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(users_header())?;
    for u in users {
        let mut row = vec![u.id.to_string(), u.typology.name().to_string()];
        row.extend(u.preference.cells().map(fmt_real));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_users(path: &Path) -> Result<Vec<UserProfile>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &users_header())?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u32 = field(path, &rec, 0, "user_id")?;
        let typology: Typology = field(path, &rec, 1, "typology")?;
        let mut pref = PreferenceMatrix::zeros();
        for t in 0..N_TOPICS {
            for s in 0..N_STANCES {
                let v: f64 = field(path, &rec, 2 + t * N_STANCES + s, "preference cell")?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad(path, format!("line {}: negative preference", line_of(&rec))));
                }
                pref.0[t][s] = v;
            }
        }
        out.push(UserProfile::new(id, typology, pref));
    }
    Ok(out)
}

pub fn write_interactions(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run_id", "iteration", "epoch", "user_id", "article_id", "position", "clicked", "phase"])?;
    for r in log.iter() {
        w.write_record([
            r.run_id.to_string(),
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.user_id.to_string(),
            r.article_id.to_string(),
            r.position.to_string(),
            (r.clicked as u8).to_string(),
            r.phase.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const METRICS_HEADER: [&str; 7] = ["run_id", "epoch", "group", "mean_mps", "mean_umps", "n_clicks", "n_interactions"];

pub fn write_metrics_epoch(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.to_string(),
            r.epoch.to_string(),
            r.group.name().to_string(),
            fmt_opt(r.mean_mps),
            fmt_real(r.mean_umps),
            r.n_clicks.to_string(),
            r.n_interactions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_epoch(path: &Path) -> Result<Vec<EpochRow>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &strings(&METRICS_HEADER))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(EpochRow {
                run_id: field(path, &rec, 0, "run_id")?,
                epoch: field(path, &rec, 1, "epoch")?,
                group: field(path, &rec, 2, "group")?,
                mean_mps: opt_field(path, &rec, 3, "mean_mps")?,
                mean_umps: field(path, &rec, 4, "mean_umps")?,
                n_clicks: field(path, &rec, 5, "n_clicks")?,
                n_interactions: field(path, &rec, 6, "n_interactions")?,
            })
        })
        .collect()
}

pub fn write_bootstrap_reference(path: &Path, run_id: u64, reference: &BTreeMap<Typology, Option<f64>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run_id", "group", "bootstrap_mps"])?;
    for (g, v) in reference {
        w.write_record([run_id.to_string(), g.name().to_string(), fmt_opt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

const AGGREGATE_HEADER: [&str; 5] = ["epoch", "group", "metric", "mean", "std"];

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.group.name().to_string(),
            r.metric.name().to_string(),
            fmt_opt(r.mean),
            fmt_opt(r.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &strings(&AGGREGATE_HEADER))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(AggregateRow {
                epoch: field(path, &rec, 0, "epoch")?,
                group: field(path, &rec, 1, "group")?,
                metric: field::<Metric>(path, &rec, 2, "metric")?,
                mean: opt_field(path, &rec, 3, "mean")?,
                std: opt_field(path, &rec, 4, "std")?,
            })
        })
        .collect()
}

/// `entity,id,dim0..dimD` rows, users first.
pub fn write_model(path: &Path, model: &MfModel) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = strings(&["entity", "id"]);
    header.extend((0..model.latent_dim()).map(|d| format!("dim{d}")));
    w.write_record(header)?;
    for u in 0..model.n_users() as u32 {
        let mut row = vec!["user".to_string(), u.to_string()];
        row.extend(model.user_vector(u).iter().map(|&v| fmt_real(v)));
        w.write_record(row)?;
    }
    for i in 0..model.n_items() as u32 {
        let mut row = vec!["item".to_string(), i.to_string()];
        row.extend(model.item_vector(i).iter().map(|&v| fmt_real(v)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain table written as CSV; used for the plot-ready figure files.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(&table.header)?;
    for r in &table.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub corpus_seed: u64,
    pub run_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = toml::to_string(manifest).map_err(|e| bad(dir, e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| bad(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_templates, generate_articles, generate_users, CorpusSpec};
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn real_formatting() {
        assert_eq!(fmt_real(0.0), "0");
        assert_eq!(fmt_real(0.5), "0.5");
        assert_eq!(fmt_real(-1.5), "-1.5");
        assert_eq!(fmt_real(28.0), "28");
        assert_eq!(fmt_real(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_real(-14.98), "-14.98");
        assert_eq!(fmt_real(123456789.4), "123456789");
        assert_eq!(fmt_real(1234567890.0), "1.23456789e9");
        assert_eq!(fmt_real(0.0000123456789), "0.0000123456789");
        assert_eq!(fmt_real(1.5e-7), "1.5e-7");
    }

    proptest! {
        #[test]
        fn nine_digits_round_trip_within_relative_tolerance(x in -1e6f64..1e6) {
            let back: f64 = fmt_real(x).parse().unwrap();
            prop_assert!((back - x).abs() <= 5e-9 * x.abs().max(1e-300));
            prop_assert_eq!(round_sig(back), back);
        }
    }

    #[test]
    fn articles_and_users_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            n_articles: 100,
            multi_topic_prob: 0.5,
            max_topics_per_article: 3,
        };
        let arts = generate_articles(&spec, &mut stream(0, Stream::Articles)).unwrap();
        let p = dir.path().join("articles.csv");
        write_articles(&p, &arts).unwrap();
        assert_eq!(read_articles(&p).unwrap(), arts);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("article_id,stance,topics\n"));
        assert!(text.ends_with('\n'));

        let users = generate_users(2, &default_templates(), &mut stream(0, Stream::Users)).unwrap();
        let p = dir.path().join("users.csv");
        write_users(&p, &users).unwrap();
        let back = read_users(&p).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in back.iter().zip(&users) {
            assert_eq!(a.typology, b.typology);
            for (x, y) in a.preference.cells().zip(b.preference.cells()) {
                assert!((x - y).abs() <= 5e-9 * y);
            }
        }
        let header = fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header.split(',').count(), 72);
        assert!(header.ends_with("p_13_4"));
    }

    #[test]
    fn rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "id,stance,topics\n0,1,2\n").unwrap();
        assert!(matches!(read_articles(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn metrics_absent_mps_is_empty_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![EpochRow {
            run_id: 3,
            epoch: 2,
            group: Typology::Bystander,
            mean_mps: None,
            mean_umps: -0.25,
            n_clicks: 0,
            n_interactions: 0,
        }];
        write_metrics_epoch(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "3,2,bystander,,-0.25,0,0");
        assert_eq!(read_metrics_epoch(&p).unwrap(), rows);
    }
}
