//! One function per subcommand. Every command writes under a run directory
//! and returns a summary value; the binary maps errors to exit codes.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nyssl::data::{
    augment_tabular, load_csv, make_blobs, make_moons, write_csv, write_embeddings, Dataset, Split, SplitSpec,
    Standardizer,
};
use nyssl::evaluate::{linear_probe, spectrum, ProbeResult};
use nyssl::interpret::{
    class_coverage_kappa, concept_profile, influence_scores, landmark_embeddings, learn_cav, rank_landmarks,
    write_influence_csv, ConceptProfile, ConceptVector, InfluenceRecord,
};
use nyssl::kernels::{build_kernel_matrix, KernelRole};
use nyssl::landmarks::{
    approx_leverage_scores, select_kmeanspp, select_leverage, select_uniform, write_scores_csv, LandmarkMethod,
    LandmarkSet,
};
use nyssl::linalg::select_rows;
use nyssl::model::NystromModel;
use nyssl::trainer::search::{pick_best, prefers_balanced_accuracy, sample_trials, trial_score};
use nyssl::trainer::{train, TrainConfig, TrainReport, TrialRecord};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, TrainingSummary};

pub const MODEL_FILE: &str = "model.nysm";
pub const REPORT_FILE: &str = "train_report.csv";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const SPECTRUM_SUMMARY_FILE: &str = "spectrum_summary.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const LEVERAGE_FILE: &str = "leverage_scores.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const PROBE_FILE: &str = "probe.csv";
pub const TRIALS_FILE: &str = "sweep_trials.csv";
pub const BEST_CONFIG_FILE: &str = "best_config.toml";
pub const SUMMARY_FILE: &str = "report.json";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(nyssl::Error::from)?;
    write_text(path, &(text + "\n"))
}

/// Data after loading, splitting, standardising (train statistics) and
/// augmenting the training rows.
pub struct Prepared {
    pub full: Dataset,
    pub standardizer: Option<Standardizer>,
    pub split: Split,
    pub train: Dataset,
}

impl Prepared {
    pub fn rows(&self, rows: &[usize]) -> Dataset {
        self.full.subset(rows)
    }
}

pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    cfg.validate()?;
    let raw = load_csv(&cfg.data.path, cfg.data.label_column.as_deref())?;
    if let Some(d) = cfg.kernel.input_dim() {
        if d != raw.d() {
            return Err(CliError::config(format!("kernel.input_dim: {d} but the data has {} features", raw.d())));
        }
    }
    let split = cfg.split.split(raw.n())?;
    let standardizer =
        if cfg.data.standardize { Some(Standardizer::fit(&select_rows(raw.features(), &split.train))?) } else { None };
    let full = match &standardizer {
        Some(s) => s.apply_dataset(&raw)?,
        None => raw,
    };
    let train = augment_tabular(
        &full.subset(&split.train),
        cfg.data.noise_sigma,
        cfg.data.drop_prob,
        cfg.data.views,
        cfg.seed,
    )?;
    if cfg.landmarks.m > train.n() {
        return Err(CliError::config(format!(
            "landmarks.m: {} exceeds the {} training rows",
            cfg.landmarks.m,
            train.n()
        )));
    }
    Ok(Prepared { full, standardizer, split, train })
}

pub fn choose_landmarks(cfg: &RunConfig, train: &Dataset) -> CliResult<LandmarkSet> {
    let (n, m, seed) = (train.n(), cfg.landmarks.m, cfg.seed);
    Ok(match cfg.landmarks.method {
        LandmarkMethod::Uniform => select_uniform(n, m, seed)?,
        LandmarkMethod::Kmeanspp => select_kmeanspp(train.features(), m, seed)?,
        LandmarkMethod::Leverage => {
            let lev = &cfg.landmarks.leverage;
            let k =
                build_kernel_matrix(&cfg.kernel, train.features(), train.features(), 256, KernelRole::SampleSample)?
                    .matrix;
            let scores = approx_leverage_scores(
                |v: &DVector<f64>| &k * v,
                n,
                lev.lambda,
                lev.sketch_size,
                seed,
                lev.cg_tol,
                lev.cg_maxiter,
            )?;
            select_leverage(&scores, m, seed)?
        }
    })
}

/// CSV `landmark,train_row,data_row`.
fn write_landmarks(path: &Path, landmarks: &LandmarkSet, split: &Split) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::Core(e.into());
    out.write_record(["landmark", "train_row", "data_row"]).map_err(err)?;
    for (l, &i) in landmarks.indices.iter().enumerate() {
        out.write_record([l.to_string(), i.to_string(), split.train[i].to_string()]).map_err(err)?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

fn write_landmark_outputs(
    dir: &Path,
    landmarks: &LandmarkSet,
    split: &Split,
    outputs: &mut Vec<String>,
) -> CliResult<()> {
    write_landmarks(&dir.join(LANDMARKS_FILE), landmarks, split)?;
    outputs.push(LANDMARKS_FILE.into());
    if let Some(scores) = &landmarks.scores {
        write_scores_csv(scores, create(&dir.join(LEVERAGE_FILE))?)?;
        outputs.push(LEVERAGE_FILE.into());
    }
    Ok(())
}

pub fn cmd_select_landmarks(cfg: &RunConfig) -> CliResult<LandmarkSet> {
    let prepared = prepare(cfg)?;
    let landmarks = choose_landmarks(cfg, &prepared.train)?;
    let dir = cfg.run_dir();
    ensure_dir(&dir)?;
    let mut manifest =
        Manifest::new(cfg, prepared.full.label_names().to_vec(), prepared.standardizer.clone(), prepared.split.clone());
    write_landmark_outputs(&dir, &landmarks, &prepared.split, &mut manifest.outputs)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string())?;
    manifest.outputs.push(CONFIG_FILE.into());
    manifest.write(&dir)?;
    Ok(landmarks)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub model: NystromModel,
    pub report: TrainReport,
}

fn write_report(dir: &Path, report: &TrainReport) -> CliResult<()> {
    report.write_csv(create(&dir.join(REPORT_FILE))?)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let prepared = prepare(cfg)?;
    let landmarks = choose_landmarks(cfg, &prepared.train)?;
    let dir = cfg.run_dir();
    ensure_dir(&dir)?;
    let mut manifest =
        Manifest::new(cfg, prepared.full.label_names().to_vec(), prepared.standardizer.clone(), prepared.split.clone());
    write_landmark_outputs(&dir, &landmarks, &prepared.split, &mut manifest.outputs)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string())?;
    manifest.outputs.push(CONFIG_FILE.into());

    let model =
        NystromModel::initialize(&cfg.kernel, &prepared.train, landmarks, cfg.model.h, cfg.model.init, cfg.seed)?;
    let (model, report) = match train(&model, &prepared.train, &cfg.train_config()) {
        Ok(out) => out,
        Err(nyssl::Error::TrainingAborted { reason, report }) => {
            write_report(&dir, &report)?;
            manifest.outputs.push(REPORT_FILE.into());
            manifest.training = Some(summary(&report, None));
            manifest.write(&dir)?;
            return Err(nyssl::Error::TrainingAborted { reason, report }.into());
        }
        Err(e) => return Err(e.into()),
    };
    model.save(dir.join(MODEL_FILE))?;
    write_report(&dir, &report)?;
    let spec = spectrum(&model.a);
    spec.write_eigenvalues_csv(create(&dir.join(SPECTRUM_FILE))?)?;
    spec.write_summary_csv(create(&dir.join(SPECTRUM_SUMMARY_FILE))?)?;
    manifest.outputs.extend([MODEL_FILE, REPORT_FILE, SPECTRUM_FILE, SPECTRUM_SUMMARY_FILE].map(String::from));
    manifest.training = Some(summary(&report, Some(spec.effective_rank)));
    manifest.write(&dir)?;
    Ok(TrainOutcome { run_dir: dir, model, report })
}

fn summary(report: &TrainReport, effective_rank: Option<f64>) -> TrainingSummary {
    TrainingSummary {
        epochs: report.epochs.len(),
        initial_loss: report.initial_loss,
        best_epoch: report.best_epoch,
        best_loss: report.best_loss,
        stop_reason: report.stop_reason,
        effective_rank,
    }
}

/// A trained model together with the manifest of its run, when one sits next
/// to the model file.
pub struct LoadedRun {
    pub model: NystromModel,
    pub manifest: Option<Manifest>,
    pub dir: PathBuf,
}

pub fn load_run(model_path: &Path) -> CliResult<LoadedRun> {
    let model = NystromModel::load(model_path).map_err(|e| match e {
        nyssl::Error::Io(io) => CliError::io(model_path, io),
        other => other.into(),
    })?;
    let dir = model_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = if dir.join(crate::manifest::MANIFEST_FILE).is_file() { Some(Manifest::read(&dir)?) } else { None };
    Ok(LoadedRun { model, manifest, dir })
}

impl LoadedRun {
    fn label_column(&self) -> CliResult<Option<String>> {
        match &self.manifest {
            Some(m) => Ok(m.run_config()?.data.label_column),
            None => Ok(None),
        }
    }

    /// Loads `data_path` and applies the run's standardisation.
    pub fn load_data(&self, data_path: &Path, label_column: Option<&str>) -> CliResult<Dataset> {
        if !data_path.is_file() {
            return Err(CliError::config(format!("data: {} does not exist", data_path.display())));
        }
        let column = match label_column {
            Some(c) => Some(c.to_string()),
            None => self.label_column()?,
        };
        let ds = load_csv(data_path, column.as_deref())?;
        let ds = match self.manifest.as_ref().and_then(|m| m.standardizer.as_ref()) {
            Some(s) => s.apply_dataset(&ds)?,
            None => ds,
        };
        if ds.d() != self.model.landmark_features().ncols() {
            return Err(nyssl::Error::DimensionMismatch {
                expected: self.model.landmark_features().ncols(),
                got: ds.d(),
            }
            .into());
        }
        Ok(ds)
    }

    /// The run's split when `n` matches it; otherwise every row is a
    /// training row and a fresh split is drawn for the test rows.
    fn split_for(&self, n: usize, seed: u64) -> CliResult<Split> {
        if let Some(m) = &self.manifest {
            let covered = m.split.train.len() + m.split.validation.len() + m.split.test.len();
            if covered == n {
                return Ok(m.split.clone());
            }
            return Err(CliError::config(format!("data: {n} rows but the run was split over {covered}")));
        }
        Ok(SplitSpec { train_fraction: 0.7, probe_label_fraction: 0.1, validation_fraction: 0.0, seed }.split(n)?)
    }

    /// Row of the data file behind each landmark row of `A`.
    pub fn landmark_data_rows(&self) -> Vec<usize> {
        (0..self.model.a.nrows())
            .map(|r| {
                let s = self.model.landmark_sample(r);
                match &self.manifest {
                    Some(m) => m.split.train[s],
                    None => s,
                }
            })
            .collect()
    }
}

pub fn cmd_embed(model_path: &Path, data_path: &Path, output: &Path) -> CliResult<(usize, usize)> {
    let run = load_run(model_path)?;
    let ds = run.load_data(data_path, None)?;
    let z = run.model.embed(ds.features())?;
    let mut w = create(output)?;
    write_embeddings(&mut w, &z)?;
    std::io::Write::flush(&mut w).map_err(|e| CliError::io(output, e))?;
    Ok((z.nrows(), z.ncols()))
}

pub fn cmd_probe(
    model_path: &Path,
    data_path: &Path,
    label_fraction: Option<f64>,
    seed: u64,
    output: Option<&Path>,
) -> CliResult<ProbeResult> {
    let run = load_run(model_path)?;
    let ds = run.load_data(data_path, None)?;
    let labels = ds.labels().ok_or_else(|| CliError::config("data: probing needs a labelled dataset"))?;
    let fraction = match (label_fraction, &run.manifest) {
        (Some(f), _) => f,
        (None, Some(m)) => m.run_config()?.split.probe_label_fraction,
        (None, None) => 0.1,
    };
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::config("label_fraction: must lie in (0, 1]"));
    }
    let split = run.split_for(ds.n(), seed)?;
    if split.test.is_empty() {
        return Err(CliError::config("split: no test rows to evaluate the probe on"));
    }
    let z = run.model.embed(ds.features())?;
    let pick = |rows: &[usize]| (select_rows(&z, rows), rows.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let (z_train, y_train) = pick(&split.train);
    let (z_test, y_test) = pick(&split.test);
    let result = linear_probe(&z_train, &y_train, &z_test, &y_test, fraction, seed)?;
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| run.dir.join(PROBE_FILE));
    result.write_csv(create(&path)?)?;
    Ok(result)
}

#[derive(Debug, Clone, Default)]
pub struct InterpretOptions {
    pub kappa: bool,
    pub influence: Option<usize>,
    pub concept: Option<String>,
    pub top: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Leave `gamma` out of the landmark embeddings used for concept alignment.
    pub exclude_gamma: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InterpretOutcome {
    pub kappa: Option<usize>,
    pub influence: Vec<InfluenceRecord>,
    pub concept: Option<ConceptVector>,
    pub profile: Option<ConceptProfile>,
    pub out_dir: PathBuf,
}

fn concept_class(ds: &Dataset, name: &str) -> CliResult<usize> {
    if ds.labels().is_none() {
        return Err(CliError::config("concept: the dataset has no labels to define concepts"));
    }
    ds.label_names().iter().position(|l| l == name).ok_or_else(|| {
        CliError::config(format!("concept: unknown concept '{name}' (known: {})", ds.label_names().join(", ")))
    })
}

pub fn cmd_interpret(model_path: &Path, data_path: &Path, opts: &InterpretOptions) -> CliResult<InterpretOutcome> {
    let run = load_run(model_path)?;
    let ds = run.load_data(data_path, None)?;
    let out_dir = opts.out.clone().unwrap_or_else(|| run.dir.join("interpret"));
    ensure_dir(&out_dir)?;
    let mut outcome = InterpretOutcome { out_dir: out_dir.clone(), ..Default::default() };
    let ranking = rank_landmarks(&run.model.a);
    let data_rows = run.landmark_data_rows();
    if data_rows.iter().any(|&r| r >= ds.n()) {
        return Err(CliError::config("data: the landmark rows of this model lie outside the dataset"));
    }

    {
        let path = out_dir.join("landmark_ranking.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        let err = |e: csv::Error| CliError::Core(e.into());
        w.write_record(["rank", "landmark_row", "data_row", "row_norm", "label"]).map_err(err)?;
        for (k, &l) in ranking.order.iter().enumerate() {
            let label = ds.labels().map(|y| ds.label_names()[y[data_rows[l]]].clone()).unwrap_or_default();
            w.write_record([
                k.to_string(),
                l.to_string(),
                data_rows[l].to_string(),
                format!("{:e}", ranking.omega[l]),
                label,
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }

    if opts.kappa {
        let y = ds.labels().ok_or_else(|| CliError::config("kappa: the dataset has no labels"))?;
        let landmark_labels: Vec<usize> = data_rows.iter().map(|&r| y[r]).collect();
        let classes: Vec<usize> = (0..ds.n_classes()).collect();
        let kappa = class_coverage_kappa(&ranking, &landmark_labels, &classes)?;
        write_json(
            &out_dir.join("kappa.json"),
            &serde_json::json!({ "kappa": kappa, "n_classes": classes.len(), "landmark_rows": ranking.order.len() }),
        )?;
        outcome.kappa = Some(kappa);
    }

    let test_point = match opts.influence {
        Some(t) if t >= ds.n() => {
            return Err(CliError::config(format!("influence: row {t} outside the {} data rows", ds.n())))
        }
        Some(t) => Some((t, ds.features().row(t).iter().copied().collect::<Vec<f64>>())),
        None => None,
    };
    let top = opts.top.min(run.model.a.nrows());

    if let Some(name) = &opts.concept {
        let class = concept_class(&ds, name)?;
        let y = ds.labels().expect("checked by concept_class");
        let rows: Vec<usize> = match &run.manifest {
            Some(m) => m.split.train.clone(),
            None => (0..ds.n()).collect(),
        };
        let z = run.model.embed(&select_rows(ds.features(), &rows))?;
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| y[rows[i]] == class);
        let cav = learn_cav(name, &select_rows(&z, &pos), &select_rows(&z, &neg), opts.seed)?;
        write_json(&out_dir.join(format!("cav_{name}.json")), &cav)?;
        if let Some((t, x)) = &test_point {
            let z_m = landmark_embeddings(&run.model, &run.model.k_mm()?, !opts.exclude_gamma);
            let profile = concept_profile(&run.model, &z_m, &cav, x, *t, top)?;
            write_influence_csv(&profile.records, create(&out_dir.join(format!("concept_{name}_{t}.csv")))?)?;
            write_json(
                &out_dir.join(format!("profile_{name}_{t}.json")),
                &serde_json::json!({ "concept": name, "test_id": t, "n": profile.n, "psi": profile.psi }),
            )?;
            outcome.profile = Some(profile);
        }
        outcome.concept = Some(cav);
    }

    if let Some((t, x)) = &test_point {
        let records = influence_scores(&run.model, x, *t, top)?;
        write_influence_csv(&records, create(&out_dir.join(format!("influence_{t}.csv")))?)?;
        outcome.influence = records;
    }
    Ok(outcome)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub best: RunConfig,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
    pub metric: &'static str,
}

/// Probe score on the validation rows for one training configuration.
fn evaluate_trial(
    prepared: &Prepared,
    landmarks: &LandmarkSet,
    cfg: &RunConfig,
    t: &TrainConfig,
    balanced: bool,
) -> nyssl::Result<f64> {
    let model = NystromModel::initialize(
        &cfg.kernel,
        &prepared.train,
        landmarks.clone(),
        cfg.model.h,
        cfg.model.init,
        cfg.seed,
    )?;
    let (model, _) = train(&model, &prepared.train, t)?;
    let labels = prepared.full.labels().expect("checked before the sweep");
    let y_train: Vec<usize> = prepared.split.train.iter().map(|&i| labels[i]).collect();
    let y_val: Vec<usize> = prepared.split.validation.iter().map(|&i| labels[i]).collect();
    let z_train = model.embed(prepared.train.features())?;
    let z_val = model.embed(prepared.rows(&prepared.split.validation).features())?;
    let r = linear_probe(&z_train, &y_train, &z_val, &y_val, cfg.split.probe_label_fraction, cfg.seed)?;
    Ok(if balanced { r.balanced_accuracy } else { r.accuracy })
}

pub fn cmd_sweep(cfg: &RunConfig, trials: usize, parallel: bool) -> CliResult<SweepOutcome> {
    if cfg.split.validation_fraction <= 0.0 {
        return Err(CliError::config("split.validation_fraction: a sweep needs validation rows"));
    }
    let prepared = prepare(cfg)?;
    let labels = prepared.full.labels().ok_or_else(|| CliError::config("data.label_column: a sweep needs labels"))?;
    if prepared.split.validation.is_empty() {
        return Err(CliError::config("split.validation_fraction: the split produced no validation rows"));
    }
    let train_labels: Vec<usize> = prepared.split.train.iter().map(|&i| labels[i]).collect();
    let balanced = prefers_balanced_accuracy(&train_labels);
    let landmarks = choose_landmarks(cfg, &prepared.train)?;
    let samples = sample_trials(&cfg.search, &cfg.train_config(), trials, cfg.seed)?;
    let run = |t: &TrainConfig| trial_score(evaluate_trial(&prepared, &landmarks, cfg, t, balanced));
    let scores: Vec<f64> = if parallel {
        samples.par_iter().map(|(_, t)| run(t)).collect::<nyssl::Result<_>>()?
    } else {
        samples.iter().map(|(_, t)| run(t)).collect::<nyssl::Result<_>>()?
    };
    let outcome = pick_best(samples, &scores);
    let best = cfg.with_train_config(&outcome.best);
    let dir = cfg.run_dir();
    ensure_dir(&dir)?;
    {
        let path = dir.join(TRIALS_FILE);
        let mut w = csv::Writer::from_writer(create(&path)?);
        let err = |e: csv::Error| CliError::Core(e.into());
        w.write_record(["trial", "lambda", "tau", "lr", "score"]).map_err(err)?;
        for t in &outcome.trials {
            w.write_record([
                t.trial.to_string(),
                format!("{:e}", t.lambda),
                format!("{:e}", t.tau),
                format!("{:e}", t.lr),
                format!("{:e}", t.score),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    write_text(&dir.join(BEST_CONFIG_FILE), &best.to_toml_string())?;
    Ok(SweepOutcome {
        best,
        best_trial: outcome.best_trial,
        trials: outcome.trials,
        metric: if balanced { "balanced_accuracy" } else { "accuracy" },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub training: Option<TrainingSummary>,
    pub final_loss: Option<f64>,
    pub probe: Option<Vec<(String, String)>>,
}

pub fn cmd_report(run_dir: &Path) -> CliResult<RunReport> {
    let manifest = Manifest::read(run_dir)?;
    let read_pairs = |path: &Path| -> CliResult<Vec<Vec<String>>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Core(e.into()))?;
        r.records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| CliError::Core(e.into())))
            .collect()
    };
    let report_path = run_dir.join(REPORT_FILE);
    let final_loss = if report_path.is_file() {
        read_pairs(&report_path)?.last().and_then(|row| row.get(1)).and_then(|v| v.parse().ok())
    } else {
        None
    };
    let probe_path = run_dir.join(PROBE_FILE);
    let probe = if probe_path.is_file() {
        Some(
            read_pairs(&probe_path)?
                .into_iter()
                .filter(|r| r.len() == 2)
                .map(|r| (r[0].clone(), r[1].clone()))
                .collect(),
        )
    } else {
        None
    };
    let report = RunReport {
        name: manifest.name.clone(),
        config_hash: manifest.config_hash.clone(),
        training: manifest.training.clone(),
        final_loss,
        probe,
    };
    write_json(&run_dir.join(SUMMARY_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Blobs,
    Moons,
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub kind: Generator,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

pub fn cmd_generate(opts: &GenerateOptions, output: &Path) -> CliResult<Dataset> {
    let ds = match opts.kind {
        Generator::Blobs => make_blobs(opts.n, opts.d, opts.classes, opts.separation, opts.seed)?,
        Generator::Moons => make_moons(opts.n, opts.noise, opts.seed)?,
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_csv(&ds, output)?;
    Ok(ds)
}

/// Reads the `loss` column of a training report CSV.
pub fn read_loss_column(path: &Path) -> CliResult<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Core(e.into()))?;
    let headers = r.headers().map_err(|e| CliError::Core(e.into()))?.clone();
    let col = headers.iter().position(|h| h == "loss").ok_or_else(|| CliError::config("report has no loss column"))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Core(e.into()))?;
            rec[col].parse::<f64>().map_err(|e| CliError::config(format!("loss value: {e}")))
        })
        .collect()
}
