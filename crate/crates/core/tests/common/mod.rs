#![allow(dead_code)]

use lft::task::{generate_synthetic_domain, Domain, SyntheticDomainSpec};
use lft::{finite_difference_grad, Graph, ParamStore, RngStream, Tensor};

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Resolution of central differences at step 1e-5 for O(1) losses: a few
/// ulps of the loss divided by the step. Disagreements below it are noise.
pub const FD_ATOL: f64 = 1e-9;

/// `rel_err`, except that differences within `FD_ATOL` count as agreement
/// (parameters whose true gradient is exactly zero, such as biases that a
/// following normalization cancels, only ever show roundoff).
pub fn fd_err(analytic: f64, numeric: f64) -> f64 {
    if (analytic - numeric).abs() <= FD_ATOL {
        0.0
    } else {
        rel_err(analytic, numeric)
    }
}

/// Largest `fd_err` over matching entries of two stores.
pub fn max_fd_err(a: &ParamStore, b: &ParamStore) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .flat_map(|((na, x), (nb, y))| {
            assert_eq!(na, nb);
            x.data().iter().zip(y.data()).map(|(&p, &q)| fd_err(p, q)).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

pub fn max_rel_err(a: &ParamStore, b: &ParamStore) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .flat_map(|((na, x), (nb, y))| {
            assert_eq!(na, nb);
            x.data().iter().zip(y.data()).map(|(&p, &q)| rel_err(p, q)).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

pub fn random_tensor(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()).unwrap()
}

/// Reverse-mode gradient of `f` with respect to every tensor of `params`.
pub fn analytic(params: &ParamStore, f: impl Fn(&Graph, &ParamStore) -> lft::Result<Tensor>) -> ParamStore {
    let g = Graph::new();
    let p = params.attach(&g);
    let loss = f(&g, &p).unwrap();
    let wrt: Vec<&Tensor> = p.iter().map(|(_, t)| t).collect();
    let grads = g.backward(&loss, &wrt, false).unwrap();
    p.names().map(String::from).zip(grads).collect()
}

/// Central differences of `f` with step `eps`.
pub fn numeric(params: &ParamStore, eps: f64, f: impl Fn(&Graph, &ParamStore) -> lft::Result<Tensor>) -> ParamStore {
    finite_difference_grad(
        |p| {
            let g = Graph::new();
            Ok(f(&g, p)?.item())
        },
        params,
        eps,
    )
    .unwrap()
}

pub fn domain(master: u64, seed: u64, classes: usize, per_class: usize, warp: f64) -> Domain {
    generate_synthetic_domain(&SyntheticDomainSpec {
        name: format!("d{seed}"),
        master_seed: master,
        domain_seed: seed,
        num_classes: classes,
        per_class,
        warp,
        ..Default::default()
    })
    .unwrap()
}

