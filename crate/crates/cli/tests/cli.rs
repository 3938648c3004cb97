use std::path::{Path, PathBuf};
use std::process::Command;

use nyssl::data::{load_csv, read_embeddings};
use nyssl::model::NystromModel;
use nyssl_cli::commands::{
    cmd_embed, cmd_generate, cmd_interpret, cmd_probe, cmd_report, cmd_select_landmarks, cmd_sweep, cmd_train,
    read_loss_column, GenerateOptions, Generator, InterpretOptions, MODEL_FILE, REPORT_FILE,
};
use nyssl_cli::config::RunConfig;
use nyssl_cli::manifest::{Manifest, MANIFEST_FILE};

const CONFIG: &str = r#"
name = "blobs"
seed = 2

[data]
path = "blobs.csv"
label_column = "label"

[split]
train_fraction = 0.7
probe_label_fraction = 0.1
validation_fraction = 0.1
seed = 2

[kernel]
kind = "rbf"
bandwidth = 1.0

[landmarks]
method = "uniform"
m = 40

[model]
h = 6

[loss]
kind = "barlow_twins"
lambda_reg = 0.005

[train]
max_epochs = 20
batch_size = 64
patience = 0
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let opts =
            GenerateOptions { kind: Generator::Blobs, n: 300, d: 2, classes: 3, separation: 6.0, noise: 0.1, seed: 2 };
        cmd_generate(&opts, &dir.path().join("blobs.csv")).unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> RunConfig {
        RunConfig::load(&self.path("run.toml")).unwrap().with_overrides(Some(&self.path("runs")), None)
    }

    fn edit_config(&self, name: &str, from: &str, to: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, CONFIG.replace(from, to)).unwrap();
        path
    }
}

fn nyssl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nyssl")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_every_output_and_the_model_reloads() {
    let ws = Workspace::new();
    let cfg = ws.config();
    let out = cmd_train(&cfg).unwrap();
    for file in [
        "model.nysm",
        "train_report.csv",
        "spectrum.csv",
        "spectrum_summary.csv",
        "landmarks.csv",
        "config.toml",
        MANIFEST_FILE,
    ] {
        assert!(out.run_dir.join(file).is_file(), "missing {file}");
    }
    let manifest = Manifest::read(&out.run_dir).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    assert_eq!(manifest.training.as_ref().unwrap().epochs, 20);
    assert_eq!(read_loss_column(&out.run_dir.join(REPORT_FILE)).unwrap(), out.report.losses());

    let reloaded = NystromModel::load(out.run_dir.join(MODEL_FILE)).unwrap();
    assert_eq!(reloaded.a, out.model.a);
    let dump = ws.path("z.nysb");
    let (n, h) = cmd_embed(&out.run_dir.join(MODEL_FILE), &ws.path("blobs.csv"), &dump).unwrap();
    assert_eq!((n, h), (300, 6));
    let z = read_embeddings(&mut std::fs::File::open(&dump).unwrap()).unwrap();
    let raw = load_csv(ws.path("blobs.csv"), Some("label")).unwrap();
    let x = manifest.standardizer.as_ref().unwrap().apply(raw.features()).unwrap();
    assert_eq!(z, out.model.embed(&x).unwrap());
}

#[test]
fn identical_configs_train_identically() {
    let ws = Workspace::new();
    let a = cmd_train(&ws.config()).unwrap();
    let b = cmd_train(&ws.config().with_overrides(Some(&ws.path("again")), None)).unwrap();
    let la = read_loss_column(&a.run_dir.join(REPORT_FILE)).unwrap();
    let lb = read_loss_column(&b.run_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.model.a, b.model.a);
}

#[test]
fn landmark_selection_writes_rows_and_scores() {
    let ws = Workspace::new();
    let cfg = RunConfig::load(&ws.edit_config("lev.toml", "method = \"uniform\"", "method = \"leverage\"")).unwrap();
    let cfg = cfg.with_overrides(Some(&ws.path("runs")), None);
    let lm = cmd_select_landmarks(&cfg).unwrap();
    assert_eq!(lm.m(), 40);
    let dir = cfg.run_dir();
    let rows = std::fs::read_to_string(dir.join("landmarks.csv")).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "landmark,train_row,data_row");
    assert_eq!(rows.lines().count(), 41);
    let scores = std::fs::read_to_string(dir.join("leverage_scores.csv")).unwrap();
    let train_rows = Manifest::read(&dir).unwrap().split.train.len();
    assert_eq!(scores.lines().count(), 1 + train_rows);
}

#[test]
fn probe_and_report_follow_training() {
    let ws = Workspace::new();
    let out = cmd_train(&ws.config()).unwrap();
    let model = out.run_dir.join(MODEL_FILE);
    let r = cmd_probe(&model, &ws.path("blobs.csv"), None, 0, None).unwrap();
    assert!(r.accuracy >= 0.95, "{}", r.accuracy);
    let full = cmd_probe(&model, &ws.path("blobs.csv"), Some(1.0), 0, Some(&ws.path("p.csv"))).unwrap();
    assert!(full.n_labeled_used > r.n_labeled_used);
    let report = cmd_report(&out.run_dir).unwrap();
    assert_eq!(report.final_loss, out.report.losses().last().copied());
    let probe = report.probe.unwrap();
    assert_eq!(probe[0].0, "accuracy");
}

#[test]
fn interpretation_outputs_are_consistent() {
    let ws = Workspace::new();
    let out = cmd_train(&ws.config()).unwrap();
    let opts = InterpretOptions {
        kappa: true,
        influence: Some(7),
        concept: Some("1".into()),
        top: 5,
        out: Some(ws.path("interp")),
        seed: 0,
        exclude_gamma: false,
    };
    let o = cmd_interpret(&out.run_dir.join(MODEL_FILE), &ws.path("blobs.csv"), &opts).unwrap();
    let kappa = o.kappa.unwrap();
    assert!((3..=80).contains(&kappa));
    assert_eq!(o.influence.len(), 5);
    assert!(o.influence.windows(2).all(|w| w[0].iota >= w[1].iota));
    let profile = o.profile.unwrap();
    let sum = profile.records.iter().fold(0.0, |acc, r| acc + r.score.unwrap());
    assert_eq!(profile.psi, sum);
    assert!(o.concept.unwrap().train_accuracy >= 0.9);
    for file in
        ["landmark_ranking.csv", "kappa.json", "influence_7.csv", "cav_1.json", "concept_1_7.csv", "profile_1_7.json"]
    {
        assert!(ws.path("interp").join(file).is_file(), "missing {file}");
    }
    let header = std::fs::read_to_string(ws.path("interp/influence_7.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "test_id,landmark_id,kernel_sim,row_norm,iota,alignment,score");
}

#[test]
fn sweep_picks_the_best_trial_and_is_reproducible() {
    let ws = Workspace::new();
    let cfg = ws.config();
    let seq = cmd_sweep(&cfg, 4, false).unwrap();
    let par = cmd_sweep(&cfg, 4, true).unwrap();
    let scores: Vec<f64> = seq.trials.iter().map(|t| t.score).collect();
    assert_eq!(scores, par.trials.iter().map(|t| t.score).collect::<Vec<_>>());
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(scores[seq.best_trial], max);
    assert_eq!(seq.best, par.best);
    assert_eq!(seq.best.train.lr_init, seq.trials[seq.best_trial].lr);
    let best = RunConfig::load(&cfg.run_dir().join("best_config.toml")).unwrap();
    assert_eq!(best.train, seq.best.train);
}

#[test]
fn sweep_without_validation_rows_is_rejected() {
    let ws = Workspace::new();
    let cfg =
        RunConfig::load(&ws.edit_config("nv.toml", "validation_fraction = 0.1", "validation_fraction = 0.0")).unwrap();
    assert_eq!(cmd_sweep(&cfg, 2, false).unwrap_err().exit_code(), 1);
}

#[test]
fn binary_runs_and_maps_errors_to_exit_codes() {
    let ws = Workspace::new();
    let runs = ws.path("runs");
    let ok = nyssl(&["train", "--config", s(&ws.path("run.toml")), "--out", s(&runs), "--threads", "2"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(runs.join("blobs").join(MODEL_FILE).is_file());

    let missing = ws.edit_config("missing.toml", "blobs.csv", "absent.csv");
    let bad = nyssl(&["train", "--config", s(&missing), "--out", s(&runs)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("data.path"));

    let unknown = ws.edit_config("unknown.toml", "h = 6", "h = 6\ndepth = 2");
    assert_eq!(nyssl(&["train", "--config", s(&unknown)]).status.code(), Some(1));

    let no_model = nyssl(&[
        "embed",
        "--model",
        s(&ws.path("nope.nysm")),
        "--data",
        s(&ws.path("blobs.csv")),
        "--output",
        s(&ws.path("z.nysb")),
    ]);
    assert_eq!(no_model.status.code(), Some(3));

    let model = runs.join("blobs").join(MODEL_FILE);
    let concept = nyssl(&["interpret", "--model", s(&model), "--data", s(&ws.path("blobs.csv")), "--concept", "zebra"]);
    assert_eq!(concept.status.code(), Some(1));

    let overflow = ws.path("overflow.toml");
    let text = CONFIG
        .replace("kind = \"rbf\"\nbandwidth = 1.0", "kind = \"polynomial\"\ndegree = 400\nscale = 10.0")
        .replace("h = 6", "h = 6\ninit = \"random\"");
    std::fs::write(&overflow, text).unwrap();
    let aborted = nyssl(&["train", "--config", s(&overflow), "--out", s(&ws.path("div"))]);
    assert_eq!(aborted.status.code(), Some(2), "{}", String::from_utf8_lossy(&aborted.stderr));
}

#[test]
fn tampered_manifest_is_rejected() {
    let ws = Workspace::new();
    let out = cmd_train(&ws.config()).unwrap();
    let path = out.run_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replace("\"max_epochs\": 20", "\"max_epochs\": 21");
    std::fs::write(&path, text).unwrap();
    let err = cmd_report(&out.run_dir).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("hash"), "{err}");
}

#[test]
fn moons_generator_writes_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let opts =
        GenerateOptions { kind: Generator::Moons, n: 100, d: 2, classes: 2, separation: 0.0, noise: 0.1, seed: 1 };
    let ds = cmd_generate(&opts, &dir.path().join("m.csv")).unwrap();
    let back = load_csv(dir.path().join("m.csv"), Some("label")).unwrap();
    assert_eq!(back.n(), ds.n());
    assert_eq!(back.n_classes(), 2);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(&p).unwrap();
            let bytes = if name == REPORT_FILE { drop_last_column(&bytes) } else { bytes };
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn drop_last_column(csv: &[u8]) -> Vec<u8> {
    let text = String::from_utf8(csv.to_vec()).unwrap();
    text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect::<String>().into_bytes()
}

#[test]
fn repeated_commands_rewrite_identical_outputs() {
    let ws = Workspace::new();
    let cfg = ws.config();
    let data = ws.path("blobs.csv");
    let opts = InterpretOptions {
        kappa: true,
        influence: Some(3),
        concept: Some("2".into()),
        top: 4,
        out: Some(ws.path("interp")),
        seed: 1,
        exclude_gamma: false,
    };
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let out = cmd_train(&cfg).unwrap();
        let model = out.run_dir.join(MODEL_FILE);
        cmd_probe(&model, &data, None, 0, None).unwrap();
        cmd_interpret(&model, &data, &opts).unwrap();
        cmd_report(&out.run_dir).unwrap();
        snapshots.push((snapshot(&out.run_dir), snapshot(&ws.path("interp"))));
    }
    assert_eq!(snapshots[0].0.len(), 9);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn manifest_reconstructs_the_run() {
    let ws = Workspace::new();
    let original = cmd_train(&ws.config()).unwrap();
    let manifest = Manifest::read(&original.run_dir).unwrap();
    let cfg = manifest.run_config().unwrap();
    assert_eq!(cfg.hash(), manifest.config_hash);
    let again = cmd_train(&cfg.with_overrides(Some(&ws.path("rebuilt")), None)).unwrap();
    assert_eq!(again.model.a, original.model.a);
    assert_eq!(again.model.gamma, original.model.gamma);
    assert_eq!(Manifest::read(&again.run_dir).unwrap().split, manifest.split);
}
