use nalgebra::DVector;

use nyssl::data::{augment_tabular, make_blobs, standardize, Dataset, SplitSpec};
use nyssl::evaluate::linear_probe;
use nyssl::interpret::{class_coverage_kappa, influence_scores, rank_landmarks};
use nyssl::kernels::{build_kernel_matrix, KernelRole, KernelSpec};
use nyssl::landmarks::{exact_leverage_scores, hutchinson_leverage, select_uniform, LandmarkMethod, LandmarkSet};
use nyssl::linalg::sym_eigen_desc;
use nyssl::losses::{LossKind, LossSpec};
use nyssl::model::{InitMethod, NystromModel};
use nyssl::precondition::{PrecondMode, PrecondSpec};
use nyssl::trainer::{train, TrainConfig};

fn blobs(seed: u64) -> Dataset {
    let ds = standardize(&make_blobs(300, 2, 3, 6.0, seed).unwrap()).unwrap();
    augment_tabular(&ds, 0.1, 0.0, 2, seed).unwrap()
}

fn bt_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: 0,
        seed,
        loss: LossSpec::new(LossKind::BarlowTwins { lambda_reg: 5e-3 }, 0.0),
        ..Default::default()
    }
}

fn bt_model(ds: &Dataset, seed: u64) -> NystromModel {
    let lm = select_uniform(ds.n(), 50, seed).unwrap();
    NystromModel::initialize(&KernelSpec::Rbf { bandwidth: 1.0 }, ds, lm, 8, InitMethod::Pci, seed).unwrap()
}

#[test]
fn barlow_twins_halves_the_loss_on_blobs() {
    for seed in 0..5 {
        let ds = blobs(seed);
        let (_, report) = train(&bt_model(&ds, seed), &ds, &bt_config(seed, 30)).unwrap();
        let ratio = report.best_loss.unwrap() / report.initial_loss.unwrap();
        assert!(ratio <= 0.5, "seed {seed}: best/initial = {ratio:.3}");
    }
}

#[test]
fn kpca_with_every_sample_as_landmark_reaches_the_spectral_optimum() {
    let n = 150;
    let h = 3;
    let ds = standardize(&make_blobs(n, 2, 3, 4.0, 11).unwrap()).unwrap();
    let spec = KernelSpec::Rbf { bandwidth: 1.5 };
    let lm = LandmarkSet::new((0..n).collect(), LandmarkMethod::Uniform, None).unwrap();
    let model = NystromModel::initialize(&spec, &ds, lm, h, InitMethod::Random, 3).unwrap();
    let k = build_kernel_matrix(&spec, ds.features(), ds.features(), 64, KernelRole::SampleSample).unwrap().matrix;
    let (vals, _) = sym_eigen_desc(&k);
    let optimum = (k.trace() - vals.rows(0, h).sum()) / n as f64;
    let cfg = TrainConfig {
        max_epochs: 1500,
        anneal_epochs: 1500.0,
        lr_init: 1e-2,
        patience: 0,
        loss: LossSpec::new(LossKind::Kpca, 0.0),
        ..Default::default()
    };
    let (_, report) = train(&model, &ds, &cfg).unwrap();
    let best = report.best_loss.unwrap();
    assert!((best - optimum).abs() <= 0.02 * optimum, "trained {best} vs optimum {optimum}");
}

#[test]
fn general_preconditioning_is_no_worse_and_faster() {
    let mut faster = 0;
    for seed in 0..5 {
        let ds = blobs(seed);
        let run = |mode| {
            let cfg = TrainConfig {
                precond: PrecondSpec { mode, damping: 0.1, ..Default::default() },
                ..bt_config(seed, 50)
            };
            train(&bt_model(&ds, seed), &ds, &cfg).unwrap().1.losses()
        };
        let none = run(PrecondMode::None);
        let general = run(PrecondMode::General);
        let plateau = |l: &[f64]| l[l.len() - 5..].iter().sum::<f64>() / 5.0;
        let (pn, pg) = (plateau(&none), plateau(&general));
        assert!(pg <= 1.05 * pn, "seed {seed}: general plateau {pg} vs none {pn}");
        let target = 1.05 * pn.max(pg);
        let reach = |l: &[f64]| l.iter().position(|v| *v <= target).unwrap_or(usize::MAX);
        if reach(&general) <= reach(&none) {
            faster += 1;
        }
    }
    assert!(faster >= 4, "general reached the plateau first in {faster}/5 seeds");
}

fn leverage_setup(seed: u64) -> nalgebra::DMatrix<f64> {
    let ds = standardize(&make_blobs(300, 5, 3, 3.0, seed).unwrap()).unwrap();
    build_kernel_matrix(
        &KernelSpec::Rbf { bandwidth: 0.5 },
        ds.features(),
        ds.features(),
        128,
        KernelRole::SampleSample,
    )
    .unwrap()
    .matrix
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn hutchinson_leverage_tracks_the_dense_diagonal() {
    for seed in 0..3 {
        let k = leverage_setup(seed);
        let exact = exact_leverage_scores(&k, 1e-3).unwrap();
        let est = hutchinson_leverage(|v: &DVector<f64>| &k * v, 300, 1e-3, 200, seed, 1e-8, 1000).unwrap();
        let rel = median(exact.iter().zip(&est).map(|(a, b)| (a - b).abs() / a).collect());
        assert!(rel < 0.10, "seed {seed}: median relative error {rel}");
    }
}

#[test]
fn hutchinson_leverage_is_unbiased() {
    let ds = standardize(&make_blobs(100, 5, 3, 3.0, 7).unwrap()).unwrap();
    let spec = KernelSpec::Rbf { bandwidth: 0.5 };
    let k = build_kernel_matrix(&spec, ds.features(), ds.features(), 128, KernelRole::SampleSample).unwrap().matrix;
    let exact = exact_leverage_scores(&k, 1e-3).unwrap();
    let runs: Vec<Vec<f64>> = (0..50)
        .map(|r| hutchinson_leverage(|v: &DVector<f64>| &k * v, 100, 1e-3, 10, 100 + r, 1e-12, 2000).unwrap())
        .collect();
    for (j, &truth) in exact.iter().enumerate() {
        let xs: Vec<f64> = runs.iter().map(|r| r[j]).collect();
        let mean = xs.iter().sum::<f64>() / 50.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0;
        let se = (var / 50.0).sqrt();
        assert!((mean - truth).abs() <= 3.0 * se + 1e-12, "entry {j}: mean {mean} exact {truth} se {se}");
    }
}

#[test]
fn probe_accuracy_holds_with_half_and_full_labels() {
    for seed in 0..3 {
        let ds = standardize(&make_blobs(300, 2, 3, 6.0, seed).unwrap()).unwrap();
        let split = SplitSpec { train_fraction: 0.7, probe_label_fraction: 0.1, validation_fraction: 0.0, seed }
            .split(ds.n())
            .unwrap();
        let train_ds = augment_tabular(&ds.subset(&split.train), 0.1, 0.0, 2, seed).unwrap();
        let test_ds = ds.subset(&split.test);
        let (model, _) = train(&bt_model(&train_ds, seed), &train_ds, &bt_config(seed, 30)).unwrap();
        let z_train = model.embed(train_ds.features()).unwrap();
        let z_test = model.embed(test_ds.features()).unwrap();
        for frac in [1.0, 0.5] {
            let r = linear_probe(&z_train, train_ds.labels().unwrap(), &z_test, test_ds.labels().unwrap(), frac, seed)
                .unwrap();
            assert!(r.accuracy >= 0.95, "seed {seed} fraction {frac}: {}", r.accuracy);
        }
    }
}

#[test]
fn top_influence_landmark_shares_the_cluster() {
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..3 {
        let ds = blobs(seed);
        let (model, _) = train(&bt_model(&ds, seed), &ds, &bt_config(seed, 20)).unwrap();
        let labels = ds.labels().unwrap();
        for t in (0..ds.n()).step_by(5) {
            let x: Vec<f64> = ds.features().row(t).iter().copied().collect();
            let top = &influence_scores(&model, &x, t, 1).unwrap()[0];
            total += 1;
            if labels[model.landmark_sample(top.landmark_id)] == labels[t] {
                hits += 1;
            }
        }
    }
    let rate = hits as f64 / total as f64;
    assert!(rate >= 0.9, "top-1 cluster agreement {rate}");
}

#[test]
fn early_stopping_returns_the_best_epoch() {
    let ds = blobs(5);
    let cfg = TrainConfig { patience: 3, lr_init: 0.3, ..bt_config(5, 40) };
    let (model, report) = train(&bt_model(&ds, 5), &ds, &cfg).unwrap();
    let best = report.best_epoch.unwrap();
    assert!(report.epochs.len() - 1 - best <= 3);
    let min = report.losses().into_iter().fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_loss.unwrap(), min);
    assert_eq!(model.a.nrows(), 100);
}

#[test]
fn better_probing_model_needs_no_more_landmarks_to_cover_the_classes() {
    let mut agree = 0;
    for seed in 0..5 {
        let ds = standardize(&make_blobs(300, 2, 3, 3.0, seed).unwrap()).unwrap();
        let split = SplitSpec { train_fraction: 0.7, probe_label_fraction: 0.1, validation_fraction: 0.0, seed }
            .split(ds.n())
            .unwrap();
        let train_ds = augment_tabular(&ds.subset(&split.train), 0.1, 0.0, 2, seed).unwrap();
        let test_ds = ds.subset(&split.test);
        let lm = select_uniform(train_ds.n(), 50, seed).unwrap();
        let y = train_ds.labels().unwrap();
        let variants: Vec<(f64, usize)> = [1.0, 4.0]
            .into_iter()
            .map(|bandwidth| {
                let spec = KernelSpec::Rbf { bandwidth };
                let model = NystromModel::initialize(&spec, &train_ds, lm.clone(), 8, InitMethod::Pci, seed).unwrap();
                let cfg = TrainConfig { batch_size: 64, ..bt_config(seed, 30) };
                let (model, _) = train(&model, &train_ds, &cfg).unwrap();
                let z_train = model.embed(train_ds.features()).unwrap();
                let z_test = model.embed(test_ds.features()).unwrap();
                let acc = linear_probe(&z_train, y, &z_test, test_ds.labels().unwrap(), 0.1, seed).unwrap().accuracy;
                let labels: Vec<usize> = (0..model.a.nrows()).map(|r| y[model.landmark_sample(r)]).collect();
                (acc, class_coverage_kappa(&rank_landmarks(&model.a), &labels, &[0, 1, 2]).unwrap())
            })
            .collect();
        let (better, worse) =
            if variants[0].0 >= variants[1].0 { (variants[0], variants[1]) } else { (variants[1], variants[0]) };
        if better.1 <= worse.1 {
            agree += 1;
        }
    }
    assert!(agree >= 4, "better-probing model had kappa <= the other in {agree}/5 seeds");
}
