//! Dense feature encoder: each block is affine map, batch normalization,
//! optional feature-wise transformation, then ReLU.

use crate::error::{Error, Result};
use crate::ft::{modulate, sample_modulation, FtParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, ParamStore, Tensor};

/// Variance stabilizer used by [`batch_norm`].
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Feature-wise transformations active (when supplied).
    Train,
    /// Feature-wise transformations bypassed; output is deterministic.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub block_widths: Vec<usize>,
    /// Whether block `i` gets a feature-wise transformation after its norm.
    pub ft_insertion: Vec<bool>,
}

impl EncoderConfig {
    /// Config with a feature-wise transformation on every block.
    pub fn new(input_dim: usize, block_widths: Vec<usize>) -> Self {
        let ft_insertion = vec![true; block_widths.len()];
        Self {
            input_dim,
            block_widths,
            ft_insertion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("encoder input_dim must be positive".into()));
        }
        if self.block_widths.is_empty() {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.block_widths.contains(&0) {
            return Err(Error::Config(format!("zero block width in {:?}", self.block_widths)));
        }
        if self.ft_insertion.len() != self.block_widths.len() {
            return Err(Error::Config(format!(
                "{} ft flags for {} blocks",
                self.ft_insertion.len(),
                self.block_widths.len()
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        *self.block_widths.last().expect("validated encoder has blocks")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
}

const BLOCK_FIELDS: [&str; 4] = ["weight", "bias", "bn_scale", "bn_shift"];

pub fn param_name(block: usize, field: &str) -> String {
    format!("enc.block{block}.{field}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub blocks: Vec<DenseBlock>,
}

/// Glorot-uniform weights, zero biases, identity normalization.
pub fn build_encoder(cfg: &EncoderConfig, rng: &mut RngStream) -> Result<EncoderState> {
    cfg.validate()?;
    let mut fan_in = cfg.input_dim;
    let mut blocks = Vec::with_capacity(cfg.block_widths.len());
    for &width in &cfg.block_widths {
        blocks.push(DenseBlock {
            weight: glorot_uniform(fan_in, width, rng),
            bias: Tensor::zeros(&[width]),
            bn_scale: Tensor::ones(&[width]),
            bn_shift: Tensor::zeros(&[width]),
        });
        fan_in = width;
    }
    Ok(EncoderState {
        config: cfg.clone(),
        blocks,
    })
}

pub(crate) fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

impl EncoderState {
    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            for (field, t) in BLOCK_FIELDS.iter().zip([&b.weight, &b.bias, &b.bn_scale, &b.bn_shift]) {
                store.insert(param_name(i, field), t.clone())?;
            }
        }
        Ok(())
    }

    /// Rebuilds the blocks of `cfg` from `enc.block{i}.*` entries.
    pub fn from_store(cfg: &EncoderConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let mut fan_in = cfg.input_dim;
        let mut blocks = Vec::with_capacity(cfg.block_widths.len());
        for (i, &w) in cfg.block_widths.iter().enumerate() {
            let get = |field: &str, shape: &[usize]| -> Result<Tensor> {
                let t = store.get(&param_name(i, field))?;
                if t.shape() != shape {
                    return Err(Error::dim(
                        "encoder",
                        format!("{} has shape {:?}, expected {shape:?}", param_name(i, field), t.shape()),
                    ));
                }
                Ok(t.clone())
            };
            blocks.push(DenseBlock {
                weight: get("weight", &[fan_in, w])?,
                bias: get("bias", &[w])?,
                bn_scale: get("bn_scale", &[w])?,
                bn_shift: get("bn_shift", &[w])?,
            });
            fan_in = w;
        }
        Ok(Self {
            config: cfg.clone(),
            blocks,
        })
    }

    /// Infers input width and block widths from stored weight shapes.
    pub fn infer_config(store: &ParamStore, ft_insertion: Option<Vec<bool>>) -> Result<EncoderConfig> {
        let mut widths = Vec::new();
        let mut input_dim = None;
        while let Ok(w) = store.get(&param_name(widths.len(), "weight")) {
            if w.ndim() != 2 {
                return Err(Error::dim("encoder", format!("weight of rank {}", w.ndim())));
            }
            input_dim.get_or_insert(w.shape()[0]);
            widths.push(w.shape()[1]);
        }
        let input_dim = input_dim.ok_or_else(|| Error::Lookup("no encoder weights in store".into()))?;
        let ft_insertion = ft_insertion.unwrap_or_else(|| vec![true; widths.len()]);
        let cfg = EncoderConfig {
            input_dim,
            block_widths: widths,
            ft_insertion,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-feature standardization with current-batch statistics, then
/// `scale * x_hat + shift`. Statistics are always taken from the batch.
pub fn batch_norm(g: &Graph, x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(Error::dim("batch_norm", format!("expected (B, C), got {:?}", x.shape())));
    }
    if x.shape()[0] < 2 {
        return Err(Error::Contract("batch_norm needs a batch of at least 2 rows".into()));
    }
    let c = x.shape()[1];
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::dim(
            "batch_norm",
            format!("scale {:?} / shift {:?} for {c} features", scale.shape(), shift.shape()),
        ));
    }
    let mean = g.mean_axis(x, 0)?;
    let centered = g.sub(x, &mean)?;
    let var = g.mean_axis(&g.square(&centered)?, 0)?;
    // (var + eps)^(-1/2) via exp(-ln(.)/2)
    let inv_std = g.exp(&g.scale(&g.log(&g.add_scalar(&var, BN_EPS)?)?, -0.5)?)?;
    let normed = g.mul(&centered, &g.mul(&inv_std, scale)?)?;
    g.add(&normed, shift)
}

/// Embeds a batch of rows. In [`Mode::Train`] with `ft` supplied, each
/// flagged block draws one modulation from `rng`, shared by the whole batch.
pub fn encode(
    g: &Graph,
    state: &EncoderState,
    ft: Option<&FtParams>,
    batch: &Tensor,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let cfg = &state.config;
    if batch.ndim() != 2 || batch.shape()[1] != cfg.input_dim {
        return Err(Error::dim(
            "encode",
            format!("batch {:?} does not have width {}", batch.shape(), cfg.input_dim),
        ));
    }
    let ft = match (mode, ft) {
        (Mode::Train, Some(ft)) => {
            if ft.len() != state.blocks.len() {
                return Err(Error::dim(
                    "encode",
                    format!("{} ft layers for {} blocks", ft.len(), state.blocks.len()),
                ));
            }
            Some(ft)
        }
        _ => None,
    };
    let mut h = batch.clone();
    for (i, block) in state.blocks.iter().enumerate() {
        let z = g.add(&g.matmul(&h, &block.weight)?, &block.bias)?;
        let mut z = batch_norm(g, &z, &block.bn_scale, &block.bn_shift)?;
        if let Some(ft) = ft.filter(|_| cfg.ft_insertion[i]) {
            let layer = &ft.layers[i];
            if layer.channels() != cfg.block_widths[i] {
                return Err(Error::dim(
                    "encode",
                    format!("ft layer {i} has {} channels, block has {}", layer.channels(), cfg.block_widths[i]),
                ));
            }
            let m = sample_modulation(g, &layer.theta_gamma, &layer.theta_beta, rng)?;
            z = modulate(g, &z, &m)?;
        }
        h = g.relu(&z)?;
    }
    Ok(h)
}
