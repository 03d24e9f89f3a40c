//! Encoder pre-training, plain episodic training, and learning-to-learn
//! training of the feature-wise transformation hyper-parameters.
//!
//! The learning-to-learn step updates the model on a pseudo-seen episode
//! with transformations active, keeps the update attached to the graph,
//! scores the updated model on a pseudo-unseen episode with transformations
//! removed, and moves the hyper-parameters down the gradient of that score.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::encoder::{encode, glorot_uniform, EncoderConfig, EncoderState, Mode};
use crate::error::{Error, Result};
use crate::ft::{init_ft_params, FtLayer, FtParams, DEFAULT_INIT_BETA, DEFAULT_INIT_GAMMA};
use crate::heads::{episode_loss, HeadKind};
use crate::model::ModelState;
use crate::rng::RngStream;
use crate::task::{sample_episode, Domain, Episode, DEFAULT_QUERY};
use crate::tensor::{Graph, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// No feature-wise transformation.
    Baseline,
    /// Transformations with fixed hyper-parameters.
    Ft,
    /// Transformations with learned hyper-parameters.
    Lft,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(TrainMode::Baseline),
            "ft" => Ok(TrainMode::Ft),
            "lft" => Ok(TrainMode::Lft),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Ft => "ft",
            TrainMode::Lft => "lft",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    /// Adaptive updates of persistent parameters. The hyper-parameter
    /// gradient is still taken through a plain inner step.
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub inner_steps: usize,
    pub ft_reg_weight: f64,
    pub mode: TrainMode,
    pub ft_init_gamma: f64,
    pub ft_init_beta: f64,
    pub head: HeadKind,
    pub n_way: usize,
    pub n_shot: usize,
    pub n_query: usize,
    pub master_seed: u64,
    pub optimizer: OptimizerKind,
    pub encoder_widths: Vec<usize>,
    /// Per-block ft flags; empty means every block.
    pub ft_blocks: Vec<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            iterations: 40_000,
            inner_steps: 1,
            ft_reg_weight: 1e-8,
            mode: TrainMode::Lft,
            ft_init_gamma: DEFAULT_INIT_GAMMA,
            ft_init_beta: DEFAULT_INIT_BETA,
            head: HeadKind::Proto,
            n_way: 5,
            n_shot: 5,
            n_query: DEFAULT_QUERY,
            master_seed: 0,
            optimizer: OptimizerKind::Sgd,
            encoder_widths: vec![64, 64],
            ft_blocks: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if self.n_way < 2 || self.n_shot == 0 || self.n_query == 0 {
            return Err(Error::Config("episodes need way >= 2, shot >= 1, query >= 1".into()));
        }
        if !(self.ft_reg_weight >= 0.0) {
            return Err(Error::Config("ft_reg_weight must be non-negative".into()));
        }
        if !self.ft_blocks.is_empty() && self.ft_blocks.len() != self.encoder_widths.len() {
            return Err(Error::Config(format!(
                "{} ft_blocks flags for {} encoder blocks",
                self.ft_blocks.len(),
                self.encoder_widths.len()
            )));
        }
        Ok(())
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        let ft_insertion = if self.ft_blocks.is_empty() {
            vec![true; self.encoder_widths.len()]
        } else {
            self.ft_blocks.clone()
        };
        EncoderConfig {
            input_dim,
            block_widths: self.encoder_widths.clone(),
            ft_insertion,
        }
    }

    /// Fresh model for this configuration; ft parameters exist only in ft and lft modes.
    pub fn init_model(&self, input_dim: usize) -> Result<ModelState> {
        self.validate()?;
        let cfg = self.encoder_config(input_dim);
        let ft = match self.mode {
            TrainMode::Baseline => None,
            TrainMode::Ft | TrainMode::Lft => {
                Some(init_ft_params(&self.encoder_widths, self.ft_init_gamma, self.ft_init_beta)?)
            }
        };
        ModelState::init(&cfg, self.head, ft, &mut RngStream::substream(self.master_seed, "init", 0))
    }
}

/// Per-parameter state for the optional Adam mode.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    alpha: f64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>, i32)>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, alpha: f64) -> Self {
        Self {
            kind,
            alpha,
            moments: BTreeMap::new(),
        }
    }

    /// Updated value of parameter `name` given its gradient.
    pub fn step(&mut self, name: &str, param: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let p = param.data();
        let g = grad.data();
        let data: Vec<f64> = match self.kind {
            OptimizerKind::Sgd => p.iter().zip(g).map(|(p, g)| p - self.alpha * g).collect(),
            OptimizerKind::Adam => {
                let (m, v, t) = self
                    .moments
                    .entry(name.to_string())
                    .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()], 0));
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                p.iter()
                    .zip(g)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|((p, g), (m, v))| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        p - self.alpha * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS)
                    })
                    .collect()
            }
        };
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("update of `{name}` produced {bad}")));
        }
        Tensor::new(param.shape(), data)
    }

    pub fn step_store(&mut self, params: &ParamStore, grads: &ParamStore) -> Result<ParamStore> {
        params
            .iter()
            .map(|(k, p)| Ok((k.to_string(), self.step(k, &p.detach(), grads.get(k)?)?)))
            .collect()
    }
}

/// Result of one vanilla gradient step on the encoder and head.
#[derive(Clone, Debug)]
pub struct InnerUpdate {
    /// Model with updated encoder and head; ft parameters unchanged.
    pub model: ModelState,
    pub loss: f64,
    /// Gradient of the loss w.r.t. each encoder/head parameter.
    pub grads: ParamStore,
}

/// `theta' = theta - alpha * grad L(theta)` for every encoder and head tensor.
///
/// `model` should be attached to `g` (see [`ModelState::attach`]). With
/// `create_graph` the updated parameters stay attached, so later losses can
/// be differentiated through the step, including into the ft parameters.
pub fn inner_update(
    g: &Graph,
    model: &ModelState,
    episode: &Episode,
    ft_enabled: bool,
    alpha: f64,
    create_graph: bool,
    rng: &mut RngStream,
) -> Result<InnerUpdate> {
    let loss = model.episode_loss(g, episode, Mode::Train, ft_enabled, rng)?;
    if !loss.item().is_finite() {
        return Err(Error::NonFinite(format!("episode loss {}", loss.item())));
    }
    let params = model.trainable();
    let wrt: Vec<&Tensor> = params.iter().map(|(_, t)| t).collect();
    let grads = g.backward(&loss, &wrt, create_graph)?;
    let mut updated = ParamStore::new();
    let mut grad_store = ParamStore::new();
    for ((name, theta), grad) in params.iter().zip(grads) {
        let next = if create_graph {
            g.sub(theta, &g.scale(&grad, alpha)?)?
        } else {
            let (t, gr) = (theta.detach(), grad.detach());
            g.sub(&t, &g.scale(&gr, alpha)?)?
        };
        updated.insert(name, next)?;
        grad_store.insert(name, grad.detach())?;
    }
    Ok(InnerUpdate {
        model: model.with_trainable(&updated)?,
        loss: loss.item(),
        grads: grad_store,
    })
}

/// Query loss of `episode` with feature-wise transformations removed.
pub fn pseudo_unseen_loss(g: &Graph, model: &ModelState, episode: &Episode) -> Result<Tensor> {
    // Eval mode consumes no randomness; any stream works.
    model.episode_loss(g, episode, Mode::Eval, false, &mut RngStream::new(0))
}

#[derive(Clone, Debug)]
pub struct LftStep {
    pub model: ModelState,
    pub loss_ps: f64,
    pub loss_pu: f64,
    /// Gradient of `L_pu + reg` w.r.t. the ft hyper-parameters.
    pub meta_grad: FtParams,
}

/// One learning-to-learn iteration with plain gradient updates.
pub fn lft_train_step(
    model: &ModelState,
    pseudo_seen: &Episode,
    pseudo_unseen: &Episode,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<LftStep> {
    let mut opt = Optimizer::new(OptimizerKind::Sgd, cfg.alpha);
    lft_step_with(model, pseudo_seen, pseudo_unseen, cfg, rng, &mut opt)
}

/// Learning-to-learn iteration; `opt` applies the persistent updates.
pub fn lft_step_with(
    model: &ModelState,
    pseudo_seen: &Episode,
    pseudo_unseen: &Episode,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    opt: &mut Optimizer,
) -> Result<LftStep> {
    let ft = model
        .ft
        .as_ref()
        .ok_or_else(|| Error::Config("learning-to-learn step needs ft parameters".into()))?;
    let g = Graph::new();
    let attached = model.attach(&g);
    let ft_att = attached.ft.clone().expect("attached copy keeps ft");

    let mut current = attached.clone();
    let mut loss_ps = f64::NAN;
    let mut persisted = model.trainable();
    for step in 0..cfg.inner_steps {
        let upd = inner_update(&g, &current, pseudo_seen, true, cfg.alpha, true, rng)?;
        if step == 0 {
            loss_ps = upd.loss;
        }
        if opt.kind == OptimizerKind::Adam {
            persisted = opt.step_store(&persisted, &upd.grads)?;
        }
        current = upd.model;
    }
    if opt.kind == OptimizerKind::Sgd {
        persisted = current.trainable().detach();
    }

    let loss_pu = pseudo_unseen_loss(&g, &current, pseudo_unseen)?;
    let mut total = loss_pu.clone();
    if cfg.ft_reg_weight > 0.0 {
        for t in ft_att.tensors() {
            let sq = g.sum(&g.square(t)?)?;
            total = g.add(&total, &g.scale(&sq, cfg.ft_reg_weight)?)?;
        }
    }
    let wrt = ft_att.tensors();
    let grads = g.backward(&total, &wrt, false)?;
    if let Some(bad) = grads.iter().flat_map(|t| t.data()).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("meta-gradient entry {bad}")));
    }

    let mut new_layers = Vec::with_capacity(ft.len());
    let mut grad_layers = Vec::with_capacity(ft.len());
    for (i, (layer, pair)) in ft.layers.iter().zip(grads.chunks(2)).enumerate() {
        new_layers.push(FtLayer {
            theta_gamma: opt.step(&crate::ft::gamma_name(i), &layer.theta_gamma, &pair[0])?,
            theta_beta: opt.step(&crate::ft::beta_name(i), &layer.theta_beta, &pair[1])?,
        });
        grad_layers.push(FtLayer {
            theta_gamma: pair[0].clone(),
            theta_beta: pair[1].clone(),
        });
    }
    let next = model
        .with_trainable(&persisted)?
        .with_ft(Some(FtParams { layers: new_layers }));
    Ok(LftStep {
        model: next,
        loss_ps,
        loss_pu: loss_pu.item(),
        meta_grad: FtParams { layers: grad_layers },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub mode: TrainMode,
    pub loss_ps: f64,
    pub loss_pu: Option<f64>,
}

/// CSV training log, flushed every 100 rows.
pub struct TrainLogWriter<W: Write> {
    out: W,
    rows: usize,
}

impl<W: Write> TrainLogWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "iter,mode,loss_ps,loss_pu")?;
        Ok(Self { out, rows: 0 })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        let pu = row.loss_pu.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(self.out, "{},{},{:.6},{}", row.iter, row.mode, row.loss_ps, pu)?;
        self.rows += 1;
        if self.rows % 100 == 0 {
            self.out.flush()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub log: Vec<LogRow>,
    /// Pseudo-seen / pseudo-unseen domain indices per lft iteration.
    pub domain_pairs: Vec<(usize, usize)>,
}

/// Runs `cfg.iterations` iterations of `cfg.mode` over `seen`.
///
/// Iteration `t` draws all of its randomness from the substream
/// `(master_seed, "train", t)`, so runs are reproducible.
pub fn train_loop(
    cfg: &TrainConfig,
    seen: &[Domain],
    init: ModelState,
    mut log_out: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if seen.is_empty() {
        return Err(Error::Config("training needs at least one seen domain".into()));
    }
    let needs_ft = cfg.mode != TrainMode::Baseline;
    if needs_ft && init.ft.is_none() {
        return Err(Error::Config(format!("mode {} needs ft parameters", cfg.mode)));
    }
    if cfg.mode == TrainMode::Lft && seen.len() == 1 {
        log::warn!(
            "learning-to-learn with a single seen domain `{}`: pseudo-seen and pseudo-unseen tasks share it",
            seen[0].name
        );
    }
    let mut writer = match log_out.as_deref_mut() {
        Some(w) => Some(TrainLogWriter::new(w)?),
        None => None,
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.alpha);
    let mut model = init;
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut pairs = Vec::new();
    let sample = |d: &Domain, rng: &mut RngStream| {
        sample_episode(d, d.training_pool(), cfg.n_way, cfg.n_shot, cfg.n_query, rng)
    };

    for t in 0..cfg.iterations {
        let mut rng = RngStream::substream(cfg.master_seed, "train", t as u64);
        let row = match cfg.mode {
            TrainMode::Baseline | TrainMode::Ft => {
                let d = &seen[rng.below(seen.len())];
                let ep = sample(d, &mut rng)?;
                let g = Graph::new();
                let attached = model.attach(&g);
                let upd = inner_update(&g, &attached, &ep, needs_ft, cfg.alpha, false, &mut rng)?;
                let next = opt.step_store(&model.trainable(), &upd.grads)?;
                model = model.with_trainable(&next)?;
                LogRow {
                    iter: t,
                    mode: cfg.mode,
                    loss_ps: upd.loss,
                    loss_pu: None,
                }
            }
            TrainMode::Lft => {
                let (ps, pu) = if seen.len() >= 2 {
                    let ps = rng.below(seen.len());
                    let mut pu = rng.below(seen.len() - 1);
                    if pu >= ps {
                        pu += 1;
                    }
                    (ps, pu)
                } else {
                    (0, 0)
                };
                pairs.push((ps, pu));
                let ep_ps = sample(&seen[ps], &mut rng)?;
                let ep_pu = sample(&seen[pu], &mut rng)?;
                let step = lft_step_with(&model, &ep_ps, &ep_pu, cfg, &mut rng, &mut opt)?;
                model = step.model;
                LogRow {
                    iter: t,
                    mode: cfg.mode,
                    loss_ps: step.loss_ps,
                    loss_pu: Some(step.loss_pu),
                }
            }
        };
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        log.push(row);
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    Ok(TrainOutcome {
        model,
        log,
        domain_pairs: pairs,
    })
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub encoder: EncoderState,
    /// Mean cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Output width of the discarded classifier (number of base classes).
    pub num_classes: usize,
}

/// Trains the encoder jointly with a temporary linear classifier over all
/// base classes of `domain`'s training pool, then discards the classifier.
/// Feature-wise transformations stay off throughout.
pub fn pretrain_encoder(
    encoder: &EncoderState,
    domain: &Domain,
    epochs: usize,
    batch_size: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<PretrainOutcome> {
    if batch_size < 2 {
        return Err(Error::Contract("pre-training batch size must be at least 2".into()));
    }
    let classes = domain.pool_indices(domain.training_pool());
    if classes.is_empty() {
        return Err(Error::Contract(format!("domain `{}` has no training classes", domain.name)));
    }
    let items: Vec<(usize, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(label, &ci)| (0..domain.class_len(ci)).map(move |it| (label, it)))
        .collect();
    if items.len() < 2 {
        return Err(Error::Contract("pre-training needs at least 2 samples".into()));
    }
    let k = classes.len();
    let c = encoder.config.output_dim();
    let mut store = ParamStore::new();
    encoder.register(&mut store)?;
    store.insert("pretrain.weight", glorot_uniform(c, k, &mut rng.derive("pretrain-head", 0)))?;
    store.insert("pretrain.bias", Tensor::zeros(&[k]))?;
    let cfg: EncoderConfig = encoder.config.clone();

    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut x = Vec::with_capacity(chunk.len() * domain.dim());
            let mut y = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (label, it) = items[i];
                x.extend_from_slice(domain.sample(classes[label], it));
                y.push(label);
            }
            let batch = Tensor::from_parts(vec![chunk.len(), domain.dim()], x);
            let g = Graph::new();
            let p = store.attach(&g);
            let enc = EncoderState::from_store(&cfg, &p)?;
            let h = encode(&g, &enc, None, &batch, Mode::Train, rng)?;
            let logits = g.add(&g.matmul(&h, p.get("pretrain.weight")?)?, p.get("pretrain.bias")?)?;
            let loss = episode_loss(&g, &logits, &y)?;
            let wrt: Vec<&Tensor> = p.iter().map(|(_, t)| t).collect();
            let grads = g.backward(&loss, &wrt, false)?;
            let next: ParamStore = store
                .iter()
                .zip(grads)
                .map(|((name, t), gr)| {
                    let data = t.data().iter().zip(gr.data()).map(|(a, b)| a - alpha * b).collect();
                    (name.to_string(), Tensor::from_parts(t.shape().to_vec(), data))
                })
                .collect();
            store = next;
            total += loss.item();
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    Ok(PretrainOutcome {
        encoder: EncoderState::from_store(&cfg, &store)?,
        epoch_losses,
        num_classes: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_constants() {
        let c = TrainConfig::default();
        assert_eq!(c.alpha, 0.001);
        assert_eq!(c.iterations, 40_000);
        assert_eq!(c.inner_steps, 1);
        assert_eq!(c.ft_reg_weight, 1e-8);
        assert_eq!((c.ft_init_gamma, c.ft_init_beta), (0.3, 0.5));
        assert_eq!(c.n_query, 16);
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
    }

    #[test]
    fn sgd_step_on_scalar_surrogate() {
        // L = w^2, w = 1, alpha = 0.1 -> w' = 1 - 0.1 * 2 = 0.8
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        let w = Tensor::scalar(1.0);
        let next = opt.step("w", &w, &Tensor::scalar(2.0)).unwrap();
        assert!((next.item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_alpha() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        let next = opt.step("w", &Tensor::scalar(1.0), &Tensor::scalar(123.0)).unwrap();
        assert!((next.item() - 0.99).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            inner_steps: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            ft_blocks: vec![true],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("LFT".parse::<TrainMode>().unwrap(), TrainMode::Lft);
        assert!("meta".parse::<TrainMode>().is_err());
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
    }

    #[test]
    fn log_writer_format() {
        let mut buf = Vec::new();
        {
            let mut w = TrainLogWriter::new(&mut buf).unwrap();
            w.write(&LogRow {
                iter: 0,
                mode: TrainMode::Ft,
                loss_ps: 1.5,
                loss_pu: None,
            })
            .unwrap();
            w.write(&LogRow {
                iter: 1,
                mode: TrainMode::Lft,
                loss_ps: 1.0,
                loss_pu: Some(0.25),
            })
            .unwrap();
            w.finish().unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iter,mode,loss_ps,loss_pu\n0,ft,1.500000,\n1,lft,1.000000,0.250000\n");
    }
}
