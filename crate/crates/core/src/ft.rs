//! Stochastic feature-wise transformation layers.
//!
//! Each insertion point carries unconstrained hyper-parameters `theta_gamma`
//! and `theta_beta` of width `C`. During training a forward pass draws
//! `gamma ~ N(1, softplus(theta_gamma))` and `beta ~ N(0, softplus(theta_beta))`
//! per channel (softplus giving the standard deviation) and applies
//! `z_hat = gamma * z + beta`. Draws are reparameterized so gradients flow
//! back to the hyper-parameters.

use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Graph, ParamStore, Tensor};

pub const DEFAULT_INIT_GAMMA: f64 = 0.3;
pub const DEFAULT_INIT_BETA: f64 = 0.5;

/// Hyper-parameters of one insertion point.
#[derive(Clone, Debug, PartialEq)]
pub struct FtLayer {
    pub theta_gamma: Tensor,
    pub theta_beta: Tensor,
}

impl FtLayer {
    pub fn channels(&self) -> usize {
        self.theta_gamma.numel()
    }
}

/// One [`FtLayer`] per encoder block, in block order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FtParams {
    pub layers: Vec<FtLayer>,
}

pub fn gamma_name(layer: usize) -> String {
    format!("ft.block{layer}.theta_gamma")
}

pub fn beta_name(layer: usize) -> String {
    format!("ft.block{layer}.theta_beta")
}

impl FtParams {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(FtLayer::channels).collect()
    }

    pub fn numel(&self) -> usize {
        self.layers.iter().map(|l| 2 * l.channels()).sum()
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            store.insert(gamma_name(i), l.theta_gamma.clone())?;
            store.insert(beta_name(i), l.theta_beta.clone())?;
        }
        Ok(())
    }

    /// Reads `ft.block{i}.*` entries for `i = 0..` until one is missing.
    pub fn from_store(store: &ParamStore) -> Result<Option<FtParams>> {
        let mut layers = Vec::new();
        while store.contains(&gamma_name(layers.len())) {
            let i = layers.len();
            let theta_gamma = store.get(&gamma_name(i))?.clone();
            let theta_beta = store.get(&beta_name(i))?.clone();
            if theta_gamma.shape() != theta_beta.shape() || theta_gamma.ndim() != 1 {
                return Err(Error::dim(
                    "ft_params",
                    format!(
                        "layer {i}: theta_gamma {:?} vs theta_beta {:?}",
                        theta_gamma.shape(),
                        theta_beta.shape()
                    ),
                ));
            }
            layers.push(FtLayer { theta_gamma, theta_beta });
        }
        Ok(if layers.is_empty() { None } else { Some(FtParams { layers }) })
    }

    /// All hyper-parameter tensors in layer order, gamma before beta.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.theta_gamma, &l.theta_beta])
            .collect()
    }
}

pub fn init_ft_params(channels: &[usize], init_gamma: f64, init_beta: f64) -> Result<FtParams> {
    let layers = channels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c == 0 {
                return Err(Error::dim("init_ft_params", format!("insertion point {i} has zero channels")));
            }
            Ok(FtLayer {
                theta_gamma: Tensor::full(&[c], init_gamma),
                theta_beta: Tensor::full(&[c], init_beta),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FtParams { layers })
}

/// Number of scalar hyper-parameters for the given channel widths.
pub fn ft_param_count(channels: &[usize]) -> usize {
    channels.iter().sum::<usize>() * 2
}

/// Sampled affine terms for one forward pass.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps_gamma: Vec<f64>,
    pub eps_beta: Vec<f64>,
}

pub fn sample_modulation(g: &Graph, theta_gamma: &Tensor, theta_beta: &Tensor, rng: &mut RngStream) -> Result<Modulation> {
    if theta_gamma.shape() != theta_beta.shape() || theta_gamma.ndim() != 1 {
        return Err(Error::dim(
            "sample_modulation",
            format!("theta_gamma {:?} vs theta_beta {:?}", theta_gamma.shape(), theta_beta.shape()),
        ));
    }
    let c = theta_gamma.numel();
    let eps_gamma = rng.normals(c);
    let eps_beta = rng.normals(c);
    modulation_from_noise(g, theta_gamma, theta_beta, eps_gamma, eps_beta)
}

/// Modulation for fixed standard-normal noise.
pub fn modulation_from_noise(
    g: &Graph,
    theta_gamma: &Tensor,
    theta_beta: &Tensor,
    eps_gamma: Vec<f64>,
    eps_beta: Vec<f64>,
) -> Result<Modulation> {
    let c = theta_gamma.numel();
    if eps_gamma.len() != c || eps_beta.len() != c {
        return Err(Error::dim("modulation", format!("noise width differs from {c} channels")));
    }
    let eg = Tensor::vector(eps_gamma.clone());
    let eb = Tensor::vector(eps_beta.clone());
    let gamma = g.add_scalar(&g.mul(&g.softplus(theta_gamma)?, &eg)?, 1.0)?;
    let beta = g.mul(&g.softplus(theta_beta)?, &eb)?;
    Ok(Modulation {
        gamma,
        beta,
        eps_gamma,
        eps_beta,
    })
}

/// `z_hat[b, c] = gamma[c] * z[b, c] + beta[c]`.
pub fn modulate(g: &Graph, z: &Tensor, m: &Modulation) -> Result<Tensor> {
    let c = m.gamma.numel();
    if z.ndim() != 2 || z.shape()[1] != c {
        return Err(Error::dim(
            "modulate",
            format!("activation {:?} does not have {c} channels", z.shape()),
        ));
    }
    g.add(&g.mul(z, &m.gamma)?, &m.beta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuartileRow {
    pub layer: usize,
    pub gamma: [f64; 3],
    pub beta: [f64; 3],
}

/// Quantile by linear interpolation between order statistics at `p * (n - 1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quartiles(t: &Tensor) -> [f64; 3] {
    let mut v: Vec<f64> = t.data().iter().map(|&x| crate::tensor::softplus(x)).collect();
    v.sort_by(f64::total_cmp);
    [quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)]
}

/// Per-layer Q1/median/Q3 of `softplus(theta_gamma)` and `softplus(theta_beta)`.
pub fn quartile_stats(ft: &FtParams) -> Vec<QuartileRow> {
    ft.layers
        .iter()
        .enumerate()
        .map(|(layer, l)| QuartileRow {
            layer,
            gamma: quartiles(&l.theta_gamma),
            beta: quartiles(&l.theta_beta),
        })
        .collect()
}

pub fn write_quartile_csv<W: Write>(rows: &[QuartileRow], mut w: W) -> Result<()> {
    writeln!(w, "layer,gamma_q1,gamma_med,gamma_q3,beta_q1,beta_med,beta_q3")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.layer, r.gamma[0], r.gamma[1], r.gamma[2], r.beta[0], r.beta[1], r.beta[2]
        )?;
    }
    Ok(())
}
