use crate::encoder::{build_encoder, encode, EncoderConfig, EncoderState, Mode};
use crate::error::{Error, Result};
use crate::ft::FtParams;
use crate::heads::{episode_loss, HeadKind, MetricHead, RelationHeadState};
use crate::rng::RngStream;
use crate::task::Episode;
use crate::tensor::{Graph, ParamStore, Tensor};

/// Encoder, metric head and optional feature-wise transformation
/// hyper-parameters of one metric-based model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub encoder: EncoderState,
    pub head: MetricHead,
    pub ft: Option<FtParams>,
}

impl ModelState {
    /// Fresh model; the relation head's hidden width equals the embedding width.
    pub fn init(
        encoder_cfg: &EncoderConfig,
        head: HeadKind,
        ft: Option<FtParams>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let encoder = build_encoder(encoder_cfg, &mut rng.derive("encoder", 0))?;
        let head = match head {
            HeadKind::Proto => MetricHead::Proto,
            HeadKind::Matching => MetricHead::Matching,
            HeadKind::Relation => {
                let c = encoder_cfg.output_dim();
                MetricHead::Relation(RelationHeadState::build(c, c, &mut rng.derive("head", 0))?)
            }
        };
        if let Some(ft) = &ft {
            if ft.channels() != encoder_cfg.block_widths {
                return Err(Error::dim(
                    "model",
                    format!("ft channels {:?} vs blocks {:?}", ft.channels(), encoder_cfg.block_widths),
                ));
            }
        }
        Ok(Self { encoder, head, ft })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        self.encoder.register(&mut store).expect("encoder names are unique");
        if let MetricHead::Relation(h) = &self.head {
            h.register(&mut store).expect("head names are unique");
        }
        if let Some(ft) = &self.ft {
            ft.register(&mut store).expect("ft names are unique");
        }
        store
    }

    pub fn from_store(encoder_cfg: &EncoderConfig, head: HeadKind, store: &ParamStore) -> Result<Self> {
        let encoder = EncoderState::from_store(encoder_cfg, store)?;
        let head = match head {
            HeadKind::Proto => MetricHead::Proto,
            HeadKind::Matching => MetricHead::Matching,
            HeadKind::Relation => MetricHead::Relation(
                RelationHeadState::from_store(store)?
                    .ok_or_else(|| Error::Lookup("relation head parameters missing".into()))?,
            ),
        };
        let ft = FtParams::from_store(store)?;
        Ok(Self { encoder, head, ft })
    }

    /// Same model with every parameter registered as a leaf of `g`.
    pub fn attach(&self, g: &Graph) -> Self {
        let store = self.to_store().attach(g);
        Self::from_store(self.encoder_config(), self.head.kind(), &store).expect("own store is consistent")
    }

    pub fn detach(&self) -> Self {
        let store = self.to_store().detach();
        Self::from_store(self.encoder_config(), self.head.kind(), &store).expect("own store is consistent")
    }

    /// Encoder and head parameters (everything the inner update touches).
    pub fn trainable(&self) -> ParamStore {
        let store = self.to_store();
        store
            .iter()
            .filter(|(k, _)| !k.starts_with("ft."))
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    /// Replaces encoder and head parameters with the entries of `params`.
    pub fn with_trainable(&self, params: &ParamStore) -> Result<Self> {
        let mut store = self.to_store();
        for (k, v) in params.iter() {
            store.set(k, v.clone())?;
        }
        Self::from_store(self.encoder_config(), self.head.kind(), &store)
    }

    pub fn with_ft(&self, ft: Option<FtParams>) -> Self {
        Self { ft, ..self.clone() }
    }

    /// Embeds support and query in one batch; returns (support, query) embeddings.
    pub fn embed_episode(&self, g: &Graph, episode: &Episode, mode: Mode, use_ft: bool, rng: &mut RngStream) -> Result<(Tensor, Tensor)> {
        let ft = if use_ft {
            Some(self.ft.as_ref().ok_or_else(|| Error::Config("model has no ft parameters".into()))?)
        } else {
            None
        };
        let emb = encode(g, &self.encoder, ft, &episode.joint_batch(), mode, rng)?;
        let ns = episode.support_y.len();
        let total = ns + episode.query_y.len();
        Ok((g.slice(&emb, 0, 0, ns)?, g.slice(&emb, 0, ns, total)?))
    }

    pub fn episode_logits(&self, g: &Graph, episode: &Episode, mode: Mode, use_ft: bool, rng: &mut RngStream) -> Result<Tensor> {
        let (s, q) = self.embed_episode(g, episode, mode, use_ft, rng)?;
        self.head.logits(g, &s, &episode.support_y, &q)
    }

    /// Query cross-entropy of `episode`.
    pub fn episode_loss(&self, g: &Graph, episode: &Episode, mode: Mode, use_ft: bool, rng: &mut RngStream) -> Result<Tensor> {
        let logits = self.episode_logits(g, episode, mode, use_ft, rng)?;
        episode_loss(g, &logits, &episode.query_y)
    }
}
