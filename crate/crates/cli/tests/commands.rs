use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[corpus]
n_articles = 1000

[users]
per_group = 2

[simulation]
iterations = 60
retrain_every = 20
repeats = 3

[drift]
influence = 0.03
"#;

fn newsloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_newsloop"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = newsloop(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn generate_desk_writes_corpus_population_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--preset", "desk", "--out", s(&a)]);
    ok(&["generate", "--preset", "desk", "--out", s(&b)]);
    assert_eq!(lines(&a.join("articles.csv")), 2_001);
    assert_eq!(lines(&a.join("users.csv")), 51);
    for f in ["articles.csv", "users.csv", "manifest.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("config_hash"));
    assert!(manifest.contains("artifact_version"));
}

#[test]
fn generate_paper_preset_has_paper_sizes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--preset", "paper", "--out", s(dir.path())]);
    assert_eq!(lines(&dir.path().join("articles.csv")), 40_001);
    assert_eq!(lines(&dir.path().join("users.csv")), 501);
}

#[test]
fn run_is_reproducible_and_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--preset", "desk", "--config", &cfg, "--out", s(&a)]);
    ok(&["run", "--preset", "desk", "--config", &cfg, "--out", s(&b)]);
    for seed in 0..3 {
        let run = Path::new("runs").join(seed.to_string());
        for f in [
            "interactions.csv",
            "metrics_epoch.csv",
            "users_final.csv",
            "bootstrap_reference.csv",
            "manifest.toml",
        ] {
            let (x, y) = (a.join(&run).join(f), b.join(&run).join(f));
            assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap(), "{}", x.display());
        }
    }
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
    assert_eq!(lines(&a.join("users.csv")), 11);
    // 60 iterations x 5 live rows; at most 10 users x 140 bootstrap rows
    // (multi-topic articles drawn for two topics are shown once).
    let log = fs::read_to_string(a.join("runs/0/interactions.csv")).unwrap();
    assert_eq!(log.lines().filter(|l| l.ends_with(",live")).count(), 300);
    let boot = log.lines().filter(|l| l.ends_with(",bootstrap")).count();
    assert!(boot <= 1_400 && boot > 1_300, "{boot}");
    // 4 epochs (bootstrap + 3) x 5 groups.
    assert_eq!(lines(&a.join("runs/0/metrics_epoch.csv")), 1 + 20);
}

#[test]
fn serial_and_parallel_aggregates_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let par = write_config(dir.path(), "par.toml", &SMALL.replace("repeats = 3", "repeats = 3\nparallel = true"));
    let ser = write_config(dir.path(), "ser.toml", &SMALL.replace("repeats = 3", "repeats = 3\nparallel = false"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--preset", "desk", "--config", &par, "--out", s(&a)]);
    ok(&["run", "--preset", "desk", "--config", &ser, "--out", s(&b)]);
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
}

#[test]
fn seed_override_and_generated_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    ok(&["generate", "--preset", "desk", "--out", s(&world), "--config", &write_config(dir.path(), "w.toml", SMALL)]);
    let from_files = SMALL.replace(
        "n_articles = 1000",
        "n_articles = 1000\narticles_path = \"world/articles.csv\"\nusers_path = \"world/users.csv\"",
    );
    let files_cfg = write_config(dir.path(), "files.toml", &from_files);
    let inline_cfg = write_config(dir.path(), "inline.toml", SMALL);

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--preset", "desk", "--config", &files_cfg, "--out", s(&a), "--seed", "7"]);
    ok(&["run", "--preset", "desk", "--config", &inline_cfg, "--out", s(&b), "--seed", "7"]);
    assert!(a.join("runs/7").is_dir() && a.join("runs/9").is_dir() && !a.join("runs/0").exists());
    assert_eq!(
        fs::read(a.join("runs/7/interactions.csv")).unwrap(),
        fs::read(b.join("runs/7/interactions.csv")).unwrap()
    );
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ok(&["run", "--preset", "desk", "--dry-run", "--out", s(&out)]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("10 repeats"), "{text}");
    assert!(text.contains("n_articles = 2000"));
    ok(&["generate", "--preset", "desk", "--dry-run", "--out", s(&out)]);
    assert!(!out.exists());
}

#[test]
fn invalid_config_fails_with_line_and_leaves_no_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let good = write_config(dir.path(), "good.toml", SMALL);
    ok(&["run", "--preset", "desk", "--config", &good, "--out", s(&out)]);
    assert!(out.join("aggregate.csv").exists());

    let bad = write_config(dir.path(), "bad.toml", "[simulation]\niterations = 61\nretrain_every = 20\n");
    let o = newsloop(&["run", "--preset", "desk", "--config", &bad, "--out", s(&out)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:2"), "{err}");

    let unknown = write_config(dir.path(), "unknown.toml", "[simulation]\niterations = 60\nretrian_every = 20\n");
    let o = newsloop(&["run", "--preset", "desk", "--config", &unknown, "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown.toml:3"));

    // Exhaustion pre-check: too few articles for the expected demand.
    let tight = write_config(dir.path(), "tight.toml", "[corpus]\nn_articles = 500\n");
    let o = newsloop(&["run", "--preset", "desk", "--config", &tight, "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus.n_articles"));
}

#[test]
fn aggregate_and_report_consume_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let cal = write_config(dir.path(), "cal.toml", &format!("{SMALL}\n[intervention]\nenabled = true\n"));
    let (base, calibrated) = (dir.path().join("base"), dir.path().join("cal"));
    ok(&["run", "--preset", "desk", "--config", &cfg, "--out", s(&base)]);
    ok(&["run", "--preset", "desk", "--config", &cal, "--out", s(&calibrated)]);

    let agg = dir.path().join("agg");
    ok(&["aggregate", s(&base), "--out", s(&agg)]);
    assert_eq!(fs::read(agg.join("aggregate.csv")).unwrap(), fs::read(base.join("aggregate.csv")).unwrap());
    let per_run = dir.path().join("agg2");
    ok(&["aggregate", s(&base.join("runs/2")), s(&base.join("runs/0")), s(&base.join("runs/1")), "--out", s(&per_run)]);
    assert_eq!(fs::read(per_run.join("aggregate.csv")).unwrap(), fs::read(base.join("aggregate.csv")).unwrap());

    let rep = dir.path().join("rep");
    ok(&[
        "report",
        s(&base.join("aggregate.csv")),
        s(&calibrated.join("aggregate.csv")),
        "--out",
        s(&rep),
    ]);
    let mps = fs::read_to_string(rep.join("fig_mps.csv")).unwrap();
    assert!(mps.starts_with("epoch,solid_liberal_mean,solid_liberal_std,solid_liberal_bootstrap,"));
    assert_eq!(mps.lines().count(), 1 + 3);
    assert_eq!(lines(&rep.join("fig_umps.csv")), 1 + 4);
    let calib = fs::read_to_string(rep.join("fig_calibration.csv")).unwrap();
    assert!(calib.lines().next().unwrap().contains("core_conservative_calibrated_mean"));

    let single = dir.path().join("single");
    ok(&["report", s(&base.join("aggregate.csv")), "--out", s(&single)]);
    assert!(single.join("fig_mps.csv").exists() && !single.join("fig_calibration.csv").exists());
}

#[test]
fn report_rejects_mismatched_epoch_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let short = write_config(dir.path(), "short.toml", &SMALL.replace("iterations = 60", "iterations = 40"));
    let long = write_config(dir.path(), "long.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--preset", "desk", "--config", &short, "--out", s(&a)]);
    ok(&["run", "--preset", "desk", "--config", &long, "--out", s(&b)]);
    let o = newsloop(&[
        "report",
        s(&a.join("aggregate.csv")),
        s(&b.join("aggregate.csv")),
        "--out",
        s(&dir.path().join("rep")),
    ]);
    assert!(!o.status.success());
}
