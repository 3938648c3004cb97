use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

use super::*;
use crate::kernels::{Kernel, KernelSpec};
use crate::linalg::seeded_rng;

const N: usize = 8;
const M: usize = 5;
const H: usize = 3;
const P: usize = 2;

fn all_kinds() -> Vec<LossKind> {
    vec![
        LossKind::BarlowTwins { lambda_reg: 0.05 },
        LossKind::Vicreg { lambda: 1.5, mu: 2.0, nu: 0.7, tau: None },
        LossKind::Simclr { tau: 0.4 },
        LossKind::Byol { momentum: 0.9 },
        LossKind::SimpleContrastive,
        LossKind::SpectralContrastive,
        LossKind::Kpca,
        LossKind::Kae,
    ]
}

fn setup(kind: LossKind, seed: u64) -> (Objective, Params, Batch) {
    let mut rng = seeded_rng(seed);
    let kernel = Kernel::new(&KernelSpec::Rbf { bandwidth: 1.2 }).unwrap();
    let landmarks = DMatrix::from_fn(M * P, 2, |_, _| rng.random_range(-1.0..1.0));
    let k_mm = kernel.matrix(&landmarks, &landmarks, 4).unwrap();
    let views: Vec<DMatrix<f64>> = (0..P).map(|_| DMatrix::from_fn(N, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
    let batch = Batch {
        k: views.iter().map(|x| kernel.matrix(x, &landmarks, 4).unwrap()).collect(),
        k_diag: views.iter().map(|x| DVector::from_vec(kernel.diagonal(x).unwrap())).collect(),
        negatives: contrastive::derangement(N, &mut rng),
    };
    let mut obj = Objective::new(LossSpec::new(kind, 0.1), k_mm).unwrap();
    let a = DMatrix::from_fn(M * P, H, |_, _| rng.random_range(-1.0..1.0));
    let gamma = DVector::from_fn(H, |_, _| rng.random_range(-0.5..0.5));
    let mut params = obj.init_params(a, gamma);
    if let Some(extra) = params.extra.as_mut() {
        extra.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    if let Some(target) = obj.target.as_mut() {
        target.0.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    (obj, params, batch)
}

fn flat_len(p: &Params) -> usize {
    p.a.len() + p.gamma.len() + p.extra.as_ref().map_or(0, |e| e.len())
}

fn coord_mut(p: &mut Params, i: usize) -> &mut f64 {
    let na = p.a.len();
    let ng = p.gamma.len();
    if i < na {
        &mut p.a.as_mut_slice()[i]
    } else if i < na + ng {
        &mut p.gamma.as_mut_slice()[i - na]
    } else {
        &mut p.extra.as_mut().unwrap().as_mut_slice()[i - na - ng]
    }
}

fn grad_coord(g: &LossValueGrad, i: usize) -> f64 {
    let na = g.grad_a.len();
    let ng = g.grad_gamma.len();
    if i < na {
        g.grad_a.as_slice()[i]
    } else if i < na + ng {
        g.grad_gamma.as_slice()[i - na]
    } else {
        g.grad_extra.as_ref().unwrap().as_slice()[i - na - ng]
    }
}

#[test]
fn gradients_match_central_differences() {
    let step = 1e-6;
    for kind in all_kinds() {
        for seed in 0..3 {
            let (obj, params, batch) = setup(kind.clone(), 100 + seed);
            let g = obj.value_grad(&params, &batch).unwrap();
            let mut rng = seeded_rng(seed);
            let total = flat_len(&params);
            for i in index::sample(&mut rng, total, 20.min(total)).into_iter() {
                let mut plus = params.clone();
                *coord_mut(&mut plus, i) += step;
                let mut minus = params.clone();
                *coord_mut(&mut minus, i) -= step;
                let fd = (obj.value_grad(&plus, &batch).unwrap().value - obj.value_grad(&minus, &batch).unwrap().value)
                    / (2.0 * step);
                let an = grad_coord(&g, i);
                // The floor absorbs round-off of the difference quotient on flat coordinates.
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                assert!(rel < 1e-4, "{} seed {seed} coord {i}: fd {fd} vs analytic {an}", kind.name());
            }
        }
    }
}

#[test]
fn gamma_has_no_effect_on_kpca_or_correlation() {
    for kind in [LossKind::Kpca, LossKind::BarlowTwins { lambda_reg: 0.1 }] {
        let (obj, params, batch) = setup(kind, 7);
        let g = obj.value_grad(&params, &batch).unwrap();
        assert!(g.grad_gamma.amax() < 1e-10);
    }
}

#[test]
fn single_view_pairwise_loss_is_rejected() {
    let (obj, params, mut batch) = setup(LossKind::Simclr { tau: 0.5 }, 1);
    batch.k.truncate(1);
    batch.k_diag.truncate(1);
    assert!(obj.value_grad(&params, &batch).is_err());
}

#[test]
fn kae_inverse_decoder_leaves_only_regularisers() {
    let mut rng = seeded_rng(4);
    let kernel = Kernel::new(&KernelSpec::Rbf { bandwidth: 1.0 }).unwrap();
    let x = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
    let k = kernel.matrix(&x, &x, 4).unwrap();
    let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { rng.random_range(-0.3..0.3) });
    let b = a.clone().try_inverse().unwrap();
    let lam = 0.05;
    let obj = Objective::new(LossSpec::new(LossKind::Kae, lam), k.clone()).unwrap();
    let params = Params { a: a.clone(), gamma: DVector::zeros(4), extra: Some(b.clone()) };
    let batch = Batch { k: vec![k.clone()], k_diag: vec![DVector::from_element(4, 1.0)], negatives: vec![1, 2, 3, 0] };
    let v = obj.value_grad(&params, &batch).unwrap().value;
    let reg = lam * (crate::model::tikhonov(&a, &k) + b.norm_squared());
    assert!((v - reg).abs() < 1e-10);
}

#[test]
fn loss_spec_serde_round_trip() {
    let spec = LossSpec::new(LossKind::Vicreg { lambda: 25.0, mu: 25.0, nu: 1.0, tau: Some(0.1) }, 1e-3);
    let json = serde_json::to_string(&spec).unwrap();
    assert!(json.contains("\"kind\":\"vicreg\""));
    assert_eq!(serde_json::from_str::<LossSpec>(&json).unwrap(), spec);
    let simple: LossSpec = serde_json::from_str(r#"{"kind":"simclr"}"#).unwrap();
    assert_eq!(simple.kind, LossKind::Simclr { tau: 0.5 });
    assert!(LossSpec::new(LossKind::Simclr { tau: 0.0 }, 0.0).validate().is_err());
}
