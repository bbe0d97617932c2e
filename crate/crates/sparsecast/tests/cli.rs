//! End-to-end runs of the `sparsecast` binary on a 3-participant, 7-day
//! cohort that is synthesized and prepared once.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_sparsecast");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_cfg(cmd: &str, cfg: &Path, extra: &[&str]) -> Output {
    let mut a = vec![cmd, "--config", cfg.to_str().unwrap()];
    a.extend_from_slice(extra);
    run(&a)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr:\n{}", stderr(o));
}

/// Config sharing the fixture's data and prepared windows, with private
/// checkpoint and report directories under `dir`.
fn config(dir: &Path, shared: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "seed = 11\n\
         [paths]\n\
         data_dir = {shared}/data\n\
         prepared_dir = {shared}/prepared\n\
         checkpoint_dir = {dir}/checkpoints\n\
         report_dir = {dir}/reports\n\
         [cohort]\nparticipants = 3\ndays = 7\ndose_jitter_min = 10\n\
         [features]\nsets = H, H+K\n\
         [window]\nlength = 60\nhop = 900\n\
         [schedule]\ntrain_chunks = 1, 1\norderings = 2\n\
         [model]\nepochs = 2\n\
         {extra}",
        shared = shared.display(),
        dir = dir.display(),
    );
    let path = dir.join("run.cfg");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(&path, text).unwrap();
    path
}

fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = config(&dir.join("setup"), &dir, "");
        assert_ok(&run_cfg("synth", &cfg, &[]));
        assert_ok(&run_cfg("prepare", &cfg, &[]));
        dir
    })
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn full_pipeline_writes_reports_and_manifests() {
    let shared = fixture();
    let t = scratch();
    let cfg = config(t.path(), shared, "");
    for cmd in ["train", "evaluate", "ablate"] {
        assert_ok(&run_cfg(cmd, &cfg, &[]));
    }
    assert_ok(&run_cfg("personalize", &cfg, &["--participants", "3"]));
    let o = run_cfg("personalize", &cfg, &["--participants", "42"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let reports = t.path().join("reports");
    for f in [
        "train.csv",
        "train_long.csv",
        "evaluate.csv",
        "evaluate_long.csv",
        "ablation.csv",
        "ablation_wide.csv",
        "ablation_long.csv",
        "k_test.csv",
        "personalize.csv",
        "runlog.jsonl",
    ] {
        assert!(reports.join(f).is_file(), "{f} missing");
    }
    // Two specs over two phases.
    let train = csv::Reader::from_path(reports.join("train.csv")).unwrap().into_records().count();
    assert_eq!(train, 4);
    let log = std::fs::read_to_string(reports.join("runlog.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["event"].is_string());
    }
    assert_eq!(log.lines().filter(|l| l.contains("\"train_phase\"")).count(), 4);

    // The manifest hashes match the files on disk.
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(reports.join("manifest_train.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["global"], 11);
    assert!(m["config"].as_str().unwrap().contains("seed = 11"));
    let artifacts = m["artifacts"].as_array().unwrap();
    assert!(!artifacts.is_empty());
    for a in artifacts {
        let bytes = std::fs::read(a["path"].as_str().unwrap()).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(a["sha256"], hex.as_str());
    }
    assert!(!t.path().join("checkpoints/.lock").exists());
}

#[test]
fn synth_manifest_and_participant_table() {
    let shared = fixture();
    let table = std::fs::read_to_string(shared.join("data/participants.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for id in 1..=3 {
        assert!(shared.join(format!("data/sensor_p{id:03}.csv")).is_file());
        assert!(shared.join(format!("data/events_p{id:03}.csv")).is_file());
    }
    let events = std::fs::read_to_string(shared.join("data/events_p001.csv")).unwrap();
    assert_eq!(events.lines().next(), Some("date,taken_ts,prescribed_ts"));
    assert_eq!(events.lines().count(), 8);
    assert!(shared.join("setup/reports/manifest_synth.json").is_file());
    assert!(shared.join("prepared/prepared.json").is_file());
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let shared = fixture();
    let (a, b) = (scratch(), scratch());
    for t in [&a, &b] {
        assert_ok(&run_cfg("train", &config(t.path(), shared, ""), &[]));
    }
    for f in ["h.weights", "h_k.weights"] {
        let x = std::fs::read(a.path().join("checkpoints").join(f)).unwrap();
        let y = std::fs::read(b.path().join("checkpoints").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let ra = std::fs::read(a.path().join("reports/train.csv")).unwrap();
    let rb = std::fs::read(b.path().join("reports/train.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn seed_flag_overrides_the_config() {
    let shared = fixture();
    let (a, b) = (scratch(), scratch());
    assert_ok(&run_cfg("train", &config(a.path(), shared, ""), &[]));
    assert_ok(&run_cfg("train", &config(b.path(), shared, ""), &["--seed", "12"]));
    let x = std::fs::read(a.path().join("checkpoints/h.weights")).unwrap();
    let y = std::fs::read(b.path().join("checkpoints/h.weights")).unwrap();
    assert!(x != y);
}

#[test]
fn ablation_report_has_one_column_per_spec() {
    let shared = fixture();
    let t = scratch();
    assert_ok(&run_cfg("ablate", &config(t.path(), shared, ""), &[]));
    let mut r = csv::Reader::from_path(t.path().join("reports/ablation_wide.csv")).unwrap();
    let headers: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ["ordering", "phase", "label", "H", "H+K"]);
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    // Two orderings and their mean, per phase.
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows.iter().all(|x| x.len() == 5 && !x[3].is_empty() && !x[4].is_empty()));
    let long = csv::Reader::from_path(t.path().join("reports/ablation.csv")).unwrap().into_records().count();
    assert_eq!(long, 2 * 2 * 2);
    let k = std::fs::read_to_string(t.path().join("reports/k_test.csv")).unwrap();
    assert!(k.contains("paired two-sided t-test"));
}

#[test]
fn missing_upstream_artifacts_name_the_command() {
    let t = scratch();
    let cfg = config(t.path(), t.path(), "");
    let o = run_cfg("prepare", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("sparsecast synth"), "{}", stderr(&o));
    for cmd in ["train", "evaluate", "ablate"] {
        let o = run_cfg(cmd, &cfg, &[]);
        assert_eq!(o.status.code(), Some(3));
        assert!(stderr(&o).contains("sparsecast prepare"), "{cmd}: {}", stderr(&o));
    }
    let o = run_cfg("evaluate", &config(t.path(), fixture(), ""), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("sparsecast train"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let t = scratch();
    let bad = t.path().join("bad.cfg");
    std::fs::write(&bad, "seed = 1\n[model]\nepochs = many\n").unwrap();
    let o = run_cfg("synth", &bad, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    std::fs::write(&bad, "[cohort]\ndays = 2\n").unwrap();
    let o = run_cfg("synth", &bad, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));

    let o = run_cfg("synth", &t.path().join("absent.cfg"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["fly", "--config", "x"]).status.code(), Some(2));

    let cfg = config(t.path(), fixture(), "");
    let o = run_cfg("personalize", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_failures_exit_4() {
    let shared = fixture();
    let t = scratch();
    let cfg = config(t.path(), shared, "");
    let ck = t.path().join("checkpoints");
    std::fs::create_dir_all(&ck).unwrap();

    std::fs::write(ck.join(".lock"), "1").unwrap();
    let o = run_cfg("train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("locked"));
    std::fs::remove_file(ck.join(".lock")).unwrap();

    std::fs::write(ck.join("h.weights"), b"sparsecast-weights\ngarbage").unwrap();
    let o = run_cfg("train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    std::fs::remove_file(ck.join("h.weights")).unwrap();

    // A checkpoint from another seed is refused rather than resumed.
    assert_ok(&run_cfg("train", &cfg, &["--seed", "99"]));
    let o = run_cfg("train", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn interrupted_training_resumes_to_the_same_weights() {
    use sparsecast::commands::{checkpoint_path, chunk_container, model_seed, PreparedMeta};
    use sparsecast::config::RunConfig;
    use sparsecast::{container, weights::FileStore};
    use sparsecast_core::trainer::{incremental_train, Phase, TrainOptions, VecSource};
    use sparsecast_core::FeatureSetSpec;

    let shared = fixture();
    let (full, cut) = (scratch(), scratch());
    assert_ok(&run_cfg("train", &config(full.path(), shared, ""), &[]));

    // Stop after the first phase, as a crash would.
    let cfg_path = config(cut.path(), shared, "");
    let cfg = RunConfig::load(&cfg_path, None).unwrap();
    let meta = PreparedMeta::load(&cfg).unwrap();
    let spec = FeatureSetSpec::H;
    let n = meta.phases.len();
    let mut src = VecSource {
        phases: meta.phases.iter().map(|p| Phase { train: p.train.clone(), test: p.test.clone() }).collect(),
        train: (0..n).map(|i| container::load(&chunk_container(&cfg.paths.prepared_dir, spec, i, true)).unwrap()).collect(),
        test: (0..n).map(|i| container::load(&chunk_container(&cfg.paths.prepared_dir, spec, i, false)).unwrap()).collect(),
    };
    std::fs::create_dir_all(&cfg.paths.checkpoint_dir).unwrap();
    let mut store = FileStore::new(checkpoint_path(&cfg, spec));
    let opts = TrainOptions { stop_after_phase: Some(1), evaluate: true, ..TrainOptions::default() };
    let out = incremental_train(&mut src, &mut store, cfg.kind, &cfg.hyper, model_seed(&cfg), &opts).unwrap();
    assert!(!out.finished);

    let o = run_cfg("train", &cfg_path, &[]);
    assert_ok(&o);
    assert!(stderr(&o).contains("H: resumed after phase 1"), "{}", stderr(&o));
    let resumed = std::fs::read(cut.path().join("checkpoints/h.weights")).unwrap();
    let straight = std::fs::read(full.path().join("checkpoints/h.weights")).unwrap();
    assert!(resumed == straight, "resumed weights differ from an uninterrupted run");

    // A finished checkpoint is left alone.
    assert_ok(&run_cfg("train", &cfg_path, &[]));
    assert!(std::fs::read(cut.path().join("checkpoints/h.weights")).unwrap() == straight);
}

#[test]
fn corrupt_inputs_are_data_errors() {
    let shared = fixture();
    let t = scratch();
    let data = t.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    for f in ["participants.csv", "events_p001.csv", "events_p002.csv", "events_p003.csv", "sensor_p002.csv", "sensor_p003.csv"] {
        std::fs::copy(shared.join("data").join(f), data.join(f)).unwrap();
    }
    std::fs::write(data.join("sensor_p001.csv"), "ts_utc,ts_local,yaw\n1,2,3\n").unwrap();
    let cfg = config(t.path(), t.path(), "");
    let o = run_cfg("prepare", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("pitch"), "{}", stderr(&o));

}
