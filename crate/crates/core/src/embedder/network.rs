use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use super::config::{EmbedderConfig, LayerKind, LayerSpec, PoolingVariant};
use crate::autodiff::{BatchNormMode, ConvMode, Graph, NodeId, ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::BwStats;
use crate::rng::{self, Prng};
use crate::tensor::Tensor;

/// A network description together with its parameters. Batch-norm running
/// statistics are stored as non-trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderModel {
    config: EmbedderConfig,
    params: ParamStore,
}

/// Per-utterance side inputs required by the attention variants.
#[derive(Clone, Copy, Debug, Default)]
pub struct SideInput<'a> {
    pub stats: Option<&'a BwStats>,
    pub ivector: Option<&'a [f64]>,
}

/// Side inputs for a whole batch: statistics `[B, M, d]` and i-vectors `[B, R]`.
#[derive(Clone, Debug, Default)]
pub(crate) struct BatchSide {
    pub stats: Option<Tensor>,
    pub ivectors: Option<Tensor>,
}

pub(crate) enum Mode<'r> {
    Train { rng: &'r mut Prng },
    Infer,
}

pub(crate) struct Forward {
    pub embedding: NodeId,
    pub logits: NodeId,
    /// Batch-norm nodes keyed by their parameter prefix.
    pub batchnorms: Vec<(String, NodeId)>,
}

fn he_normal(rng: &mut Prng, shape: &[usize], fan_in: usize) -> Tensor {
    let scale = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng::normal(rng)).collect()).expect("shape matches data")
}

fn glorot_normal(rng: &mut Prng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng::normal(rng)).collect()).expect("shape matches data")
}

fn add_batchnorm(store: &mut ParamStore, prefix: &str, c: usize) -> Result<()> {
    store.add(format!("{prefix}.gamma"), Tensor::full([c], 1.0), true)?;
    store.add(format!("{prefix}.beta"), Tensor::zeros([c]), true)?;
    store.add(format!("{prefix}.mean"), Tensor::zeros([c]), false)?;
    store.add(format!("{prefix}.var"), Tensor::full([c], 1.0), false)?;
    Ok(())
}

/// Builds a freshly initialized model; every draw comes from `seed`.
pub fn build_model(config: &EmbedderConfig, seed: u64) -> Result<EmbedderModel> {
    config.validate()?;
    let mut rng = rng::seeded(seed);
    let mut store = ParamStore::new();
    let mut c_in = config.input_dim;
    for (i, l) in config.frame_layers.iter().enumerate() {
        let p = format!("frame{i}");
        match l.kind {
            LayerKind::Tdnn => {
                let fan = l.kernel_width * c_in;
                store.add(format!("{p}.kernel"), he_normal(&mut rng, &[l.kernel_width, c_in, l.out_channels], fan), true)?;
                store.add(format!("{p}.bias"), Tensor::zeros([l.out_channels]), true)?;
            }
            LayerKind::Mscnn => {
                let block = l.block_size();
                for k in 0..l.num_filter_sets {
                    let s = format!("{p}.set{k}");
                    if l.separable {
                        let dw = he_normal(&mut rng, &[l.kernel_width, c_in], l.kernel_width);
                        store.add(format!("{s}.depthwise"), dw, true)?;
                        store.add(format!("{s}.pointwise"), he_normal(&mut rng, &[1, c_in, block], c_in), true)?;
                    } else {
                        let fan = l.kernel_width * c_in;
                        store.add(format!("{s}.kernel"), he_normal(&mut rng, &[l.kernel_width, c_in, block], fan), true)?;
                    }
                    store.add(format!("{s}.bias"), Tensor::zeros([block]), true)?;
                }
            }
        }
        add_batchnorm(&mut store, &format!("{p}.bn"), l.out_channels)?;
        c_in = l.out_channels;
    }
    let last = c_in;
    let penultimate = config.frame_layers[config.frame_layers.len() - 2].out_channels;
    let pool = &config.pooling;
    match pool.variant {
        PoolingVariant::Stats => {}
        PoolingVariant::SelfAttention => {
            let h = pool.attention_hidden;
            store.add("pool.sa.w", glorot_normal(&mut rng, &[h, last], last, h), true)?;
            store.add("pool.sa.b", Tensor::zeros([h]), true)?;
            store.add("pool.sa.v", glorot_normal(&mut rng, &[1, h], h, 1), true)?;
        }
        PoolingVariant::IvectorAttention => {
            let r = pool.ivector_dim;
            store.add("pool.ia.w", glorot_normal(&mut rng, &[last, r], r, last), true)?;
            store.add("pool.ia.b", Tensor::zeros([last]), true)?;
        }
        PoolingVariant::BaumWelchAttention => {
            let (h, dk, n, m, d) = (pool.stats_hidden, pool.key_dim, pool.num_keys, pool.stats_components, pool.stats_dim);
            store.add("pool.ba.v1", glorot_normal(&mut rng, &[h, d], d, h), true)?;
            store.add("pool.ba.b1", Tensor::zeros([h]), true)?;
            store.add("pool.ba.v2", glorot_normal(&mut rng, &[dk, h], h, dk), true)?;
            if n > 0 {
                store.add("pool.ba.keys", glorot_normal(&mut rng, &[n, dk], dk, n), true)?;
            }
            store.add("pool.ba.query", glorot_normal(&mut rng, &[dk, penultimate], penultimate, dk), true)?;
            store.add("pool.ba.query_bias", Tensor::zeros([dk]), true)?;
            store.add("pool.ba.score_bias", Tensor::zeros([m + n]), true)?;
            store.add("pool.ba.v", glorot_normal(&mut rng, &[1, m + n], m + n, 1), true)?;
        }
    }
    let mut width = 2 * last;
    for (j, &u) in config.utterance_dims.iter().enumerate() {
        store.add(format!("utt{j}.weight"), he_normal(&mut rng, &[u, width], width), true)?;
        store.add(format!("utt{j}.bias"), Tensor::zeros([u]), true)?;
        add_batchnorm(&mut store, &format!("utt{j}.bn"), u)?;
        width = u;
    }
    store.add("output.weight", Tensor::zeros([config.num_speakers, width]), true)?;
    store.add("output.bias", Tensor::zeros([config.num_speakers]), true)?;
    Ok(EmbedderModel { config: config.clone(), params: store })
}

impl EmbedderModel {
    /// Reassembles a model from a configuration and a full parameter set
    /// (e.g. after deserialization); names, shapes and trainable flags must
    /// match a freshly built model.
    pub fn from_parts(config: EmbedderConfig, params: ParamStore) -> Result<Self> {
        let reference = build_model(&config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::ModelMismatch(format!(
                "{} parameters where the configuration needs {}",
                params.len(),
                reference.params.len()
            )));
        }
        for (_, p) in reference.params.iter() {
            let id = params.find(&p.name).ok_or_else(|| Error::ModelMismatch(format!("missing parameter `{}`", p.name)))?;
            let q = params.get(id);
            if q.value.shape() != p.value.shape() || q.trainable != p.trainable {
                return Err(Error::ModelMismatch(format!("parameter `{}` has the wrong shape or flag", p.name)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    fn id(&self, name: &str) -> Result<ParamId> {
        self.params.find(name).ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    fn node(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        let id = self.id(name)?;
        g.param(&self.params, id)
    }

    fn batchnorm(&self, g: &mut Graph, x: NodeId, prefix: &str, mode: &Mode<'_>, out: &mut Vec<(String, NodeId)>) -> Result<NodeId> {
        let gamma = self.node(g, &format!("{prefix}.gamma"))?;
        let beta = self.node(g, &format!("{prefix}.beta"))?;
        let y = match mode {
            Mode::Train { .. } => g.batchnorm(x, gamma, beta, BatchNormMode::Training, self.config.bn_eps)?,
            Mode::Infer => {
                let mean = self.params.value(self.id(&format!("{prefix}.mean"))?).data();
                let var = self.params.value(self.id(&format!("{prefix}.var"))?).data();
                g.batchnorm(x, gamma, beta, BatchNormMode::Inference { mean, var }, self.config.bn_eps)?
            }
        };
        out.push((prefix.into(), y));
        Ok(y)
    }

    fn frame_layer(&self, g: &mut Graph, x: NodeId, i: usize, l: &LayerSpec) -> Result<NodeId> {
        let p = format!("frame{i}");
        let pre = match l.kind {
            LayerKind::Tdnn => {
                let k = self.node(g, &format!("{p}.kernel"))?;
                let b = self.node(g, &format!("{p}.bias"))?;
                g.conv1d(x, k, Some(b), l.dilation, ConvMode::Full)?
            }
            LayerKind::Mscnn => {
                let mut blocks = Vec::with_capacity(l.num_filter_sets);
                for k in 0..l.num_filter_sets {
                    let s = format!("{p}.set{k}");
                    let dilation = (k + 1) * l.dilation;
                    let b = self.node(g, &format!("{s}.bias"))?;
                    let y = if l.separable {
                        let dw = self.node(g, &format!("{s}.depthwise"))?;
                        let pw = self.node(g, &format!("{s}.pointwise"))?;
                        let t = g.conv1d(x, dw, None, dilation, ConvMode::Depthwise)?;
                        g.conv1d(t, pw, Some(b), 1, ConvMode::Pointwise)?
                    } else {
                        let kern = self.node(g, &format!("{s}.kernel"))?;
                        g.conv1d(x, kern, Some(b), dilation, ConvMode::Full)?
                    };
                    blocks.push(y);
                }
                if blocks.len() == 1 {
                    blocks[0]
                } else {
                    g.concat_last(&blocks)?
                }
            }
        };
        g.relu(pre)
    }

    /// Frame-level stack on a `[T, C]` or `[B, T, C]` input node; returns the
    /// post-normalization output of every layer.
    pub(crate) fn frame_nodes(&self, g: &mut Graph, input: NodeId, mode: &Mode<'_>, bns: &mut Vec<(String, NodeId)>) -> Result<Vec<NodeId>> {
        let c = g.value(input).last_dim();
        if c != self.config.input_dim {
            return Err(shape_err("frame_forward", format!("{c}-dim features for a {}-dim model", self.config.input_dim)));
        }
        let mut x = input;
        let mut outs = Vec::with_capacity(self.config.frame_layers.len());
        for (i, l) in self.config.frame_layers.iter().enumerate() {
            let y = self.frame_layer(g, x, i, l)?;
            x = self.batchnorm(g, y, &format!("frame{i}.bn"), mode, bns)?;
            outs.push(x);
        }
        Ok(outs)
    }

    /// Attention scores `[B, T]` (or `[T]`) for the configured variant.
    pub(crate) fn score_nodes(&self, g: &mut Graph, last: NodeId, prev: NodeId, side: &BatchSide) -> Result<Option<NodeId>> {
        let pool = &self.config.pooling;
        let batch_lead = |g: &Graph| g.value(last).shape()[..g.value(last).rank() - 1].to_vec();
        match pool.variant {
            PoolingVariant::Stats => Ok(None),
            PoolingVariant::SelfAttention => {
                let w = self.node(g, "pool.sa.w")?;
                let b = self.node(g, "pool.sa.b")?;
                let v = self.node(g, "pool.sa.v")?;
                let lead = batch_lead(g);
                sa_scores(g, last, w, b, v, &lead).map(Some)
            }
            PoolingVariant::IvectorAttention => {
                let ivecs = side.ivectors.clone().ok_or(Error::MissingInput("i-vector"))?;
                let expected = if g.value(last).rank() == 2 { 1 } else { g.value(last).shape()[0] };
                if ivecs.rank() != 2 || ivecs.shape() != [expected, pool.ivector_dim] {
                    return Err(shape_err("ia_scores", format!("i-vectors {:?} for {expected} x {}", ivecs.shape(), pool.ivector_dim)));
                }
                let ivecs = if g.value(last).rank() == 2 { ivecs.reshape(&[pool.ivector_dim])? } else { ivecs };
                let iv = g.constant(ivecs)?;
                let w = self.node(g, "pool.ia.w")?;
                let b = self.node(g, "pool.ia.b")?;
                let a = g.affine(iv, w, Some(b))?;
                let r = g.tanh(a)?;
                g.cosine_scores(last, r).map(Some)
            }
            PoolingVariant::BaumWelchAttention => {
                let stats = side.stats.clone().ok_or(Error::MissingInput("Baum-Welch statistics"))?;
                let single = g.value(last).rank() == 2;
                let b = if single { 1 } else { g.value(last).shape()[0] };
                if stats.rank() != 3 || stats.shape() != [b, pool.stats_components, pool.stats_dim] {
                    return Err(shape_err(
                        "ba_scores",
                        format!("statistics {:?} for {b} x {} x {}", stats.shape(), pool.stats_components, pool.stats_dim),
                    ));
                }
                let stats = if single { stats.reshape(&[pool.stats_components, pool.stats_dim])? } else { stats };
                let f = g.constant(stats)?;
                let p = BaNodes {
                    v1: self.node(g, "pool.ba.v1")?,
                    b1: self.node(g, "pool.ba.b1")?,
                    v2: self.node(g, "pool.ba.v2")?,
                    keys: if pool.num_keys > 0 { Some(self.node(g, "pool.ba.keys")?) } else { None },
                    query: self.node(g, "pool.ba.query")?,
                    query_bias: self.node(g, "pool.ba.query_bias")?,
                    score_bias: self.node(g, "pool.ba.score_bias")?,
                    v: self.node(g, "pool.ba.v")?,
                };
                let lead = batch_lead(g);
                ba_scores(g, prev, f, &p, &lead).map(Some)
            }
        }
    }

    /// Pooling and utterance-level layers on top of the frame outputs.
    pub(crate) fn utterance_nodes(
        &self,
        g: &mut Graph,
        last: NodeId,
        prev: NodeId,
        side: &BatchSide,
        mode: &mut Mode<'_>,
        bns: &mut Vec<(String, NodeId)>,
    ) -> Result<(Option<NodeId>, NodeId, NodeId, NodeId)> {
        let scores = self.score_nodes(g, last, prev, side)?;
        let pooled = g.attentive_pool(last, scores)?;
        let mut x = pooled;
        let mut embedding = None;
        for j in 0..self.config.utterance_dims.len() {
            let w = self.node(g, &format!("utt{j}.weight"))?;
            let b = self.node(g, &format!("utt{j}.bias"))?;
            let a = g.affine(x, w, Some(b))?;
            embedding.get_or_insert(a);
            let r = g.relu(a)?;
            x = self.batchnorm(g, r, &format!("utt{j}.bn"), mode, bns)?;
            if let Mode::Train { rng } = mode {
                let p = self.config.dropout;
                if p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let n = g.value(x).len();
                    let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
                    x = g.mask(x, mask)?;
                }
            }
        }
        let w = self.node(g, "output.weight")?;
        let b = self.node(g, "output.bias")?;
        let logits = g.affine(x, w, Some(b))?;
        Ok((scores, pooled, embedding.expect("at least one utterance layer"), logits))
    }

    pub(crate) fn forward(&self, g: &mut Graph, input: NodeId, side: &BatchSide, mut mode: Mode<'_>) -> Result<Forward> {
        let mut batchnorms = Vec::new();
        let frame_outputs = self.frame_nodes(g, input, &mode, &mut batchnorms)?;
        let n = frame_outputs.len();
        let (_, _, embedding, logits) =
            self.utterance_nodes(g, frame_outputs[n - 1], frame_outputs[n - 2], side, &mut mode, &mut batchnorms)?;
        Ok(Forward { embedding, logits, batchnorms })
    }

    /// Inference-mode frame outputs of the last (`H_L`) and penultimate
    /// (`H_{L-1}`) frame layers.
    pub fn frame_forward(&self, feats: &FeatureMatrix) -> Result<(Tensor, Tensor)> {
        let layers = self.frame_layer_outputs(feats)?;
        let n = layers.len();
        Ok((layers[n - 1].clone(), layers[n - 2].clone()))
    }

    /// Inference-mode output of every frame layer.
    pub fn frame_layer_outputs(&self, feats: &FeatureMatrix) -> Result<Vec<Tensor>> {
        if feats.is_empty() {
            return Err(Error::Empty("frame_forward"));
        }
        let mut g = Graph::new();
        let x = g.constant(feats.frames().clone())?;
        let outs = self.frame_nodes(&mut g, x, &Mode::Infer, &mut Vec::new())?;
        Ok(outs.into_iter().map(|id| g.value(id).clone()).collect())
    }

    fn side_tensors(&self, side: SideInput<'_>) -> Result<BatchSide> {
        let pool = &self.config.pooling;
        let mut out = BatchSide::default();
        match pool.variant {
            PoolingVariant::BaumWelchAttention => {
                let s = side.stats.ok_or(Error::MissingInput("Baum-Welch statistics"))?;
                if s.num_components() != pool.stats_components || s.dim() != pool.stats_dim {
                    return Err(shape_err(
                        "ba_scores",
                        format!("{} x {} statistics for a {} x {} model", s.num_components(), s.dim(), pool.stats_components, pool.stats_dim),
                    ));
                }
                out.stats = Some(Tensor::new([1, s.num_components(), s.dim()], s.first_order().to_vec())?);
            }
            PoolingVariant::IvectorAttention => {
                let iv = side.ivector.ok_or(Error::MissingInput("i-vector"))?;
                out.ivectors = Some(Tensor::new([1, iv.len()], iv.to_vec())?);
            }
            _ => {}
        }
        Ok(out)
    }

    /// Attention scores of one utterance given its frame outputs; `None` for
    /// plain statistics pooling.
    pub fn attention_scores(&self, last: &Tensor, prev: &Tensor, side: SideInput<'_>) -> Result<Option<Vec<f64>>> {
        let bs = self.side_tensors(side)?;
        let mut g = Graph::new();
        let l = g.constant(last.clone())?;
        let p = g.constant(prev.clone())?;
        Ok(self.score_nodes(&mut g, l, p, &bs)?.map(|id| g.value(id).data().to_vec()))
    }

    /// Pooled vector `[mu, sigma]` and frame weights of one utterance.
    pub fn pool(&self, last: &Tensor, prev: &Tensor, side: SideInput<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let bs = self.side_tensors(side)?;
        let mut g = Graph::new();
        let l = g.constant(last.clone())?;
        let p = g.constant(prev.clone())?;
        let scores = self.score_nodes(&mut g, l, p, &bs)?;
        let pooled = g.attentive_pool(l, scores)?;
        let alphas = g.pooling_weights(pooled).expect("pooling node").to_vec();
        Ok((g.value(pooled).data().to_vec(), alphas))
    }

    /// Embedding from precomputed frame outputs (`H_L`, `H_{L-1}`).
    pub fn embed_frames(&self, last: &Tensor, prev: &Tensor, side: SideInput<'_>) -> Result<Vec<f64>> {
        let bs = self.side_tensors(side)?;
        let mut g = Graph::new();
        let l = g.constant(last.clone())?;
        let p = g.constant(prev.clone())?;
        let (_, _, embedding, _) = self.utterance_nodes(&mut g, l, p, &bs, &mut Mode::Infer, &mut Vec::new())?;
        Ok(g.value(embedding).data().to_vec())
    }

    /// The x-vector of one utterance: the pre-activation output of the first
    /// utterance-level layer, computed in inference mode.
    pub fn extract_embedding(&self, feats: &FeatureMatrix, side: SideInput<'_>) -> Result<Vec<f64>> {
        let bs = self.side_tensors(side)?;
        if feats.is_empty() {
            return Err(Error::Empty("extract_embedding"));
        }
        let mut g = Graph::new();
        let x = g.constant(feats.frames().clone())?;
        let fw = self.forward(&mut g, x, &bs, Mode::Infer)?;
        Ok(g.value(fw.embedding).data().to_vec())
    }

    /// Speaker posteriors' logits for one utterance (inference mode).
    pub fn logits(&self, feats: &FeatureMatrix, side: SideInput<'_>) -> Result<Vec<f64>> {
        let bs = self.side_tensors(side)?;
        let mut g = Graph::new();
        let x = g.constant(feats.frames().clone())?;
        let fw = self.forward(&mut g, x, &bs, Mode::Infer)?;
        Ok(g.value(fw.logits).data().to_vec())
    }
}

/// `v' tanh(W h_t + b)` per frame.
fn sa_scores(g: &mut Graph, h: NodeId, w: NodeId, b: NodeId, v: NodeId, lead: &[usize]) -> Result<NodeId> {
    let a = g.affine(h, w, Some(b))?;
    let t = g.tanh(a)?;
    let e = g.affine(t, v, None)?;
    g.reshape(e, lead)
}

pub(crate) struct BaNodes {
    pub v1: NodeId,
    pub b1: NodeId,
    pub v2: NodeId,
    pub keys: Option<NodeId>,
    pub query: NodeId,
    pub query_bias: NodeId,
    pub score_bias: NodeId,
    pub v: NodeId,
}

/// Keys `[V2 tanh(V1 f_m + b1); w_n]`, queries `tanh(Q h_t + q)` and scores
/// `v' tanh(K q_t + b)`.
fn ba_scores(g: &mut Graph, h_query: NodeId, stats: NodeId, p: &BaNodes, lead: &[usize]) -> Result<NodeId> {
    let a = g.affine(stats, p.v1, Some(p.b1))?;
    let t = g.tanh(a)?;
    let transformed = g.affine(t, p.v2, None)?;
    let keys = match p.keys {
        Some(w) => g.concat_keys(transformed, w)?,
        None => transformed,
    };
    let qa = g.affine(h_query, p.query, Some(p.query_bias))?;
    let q = g.tanh(qa)?;
    let s = g.bmm_nt(q, keys)?;
    let s = g.add_bias(s, p.score_bias)?;
    let s = g.tanh(s)?;
    let e = g.affine(s, p.v, None)?;
    g.reshape(e, lead)
}

/// Self-attention scores `e_t = v' tanh(W h_t + b)` of a `[T, D]` input;
/// `w` is `[N_h, D]`, `b` and `v` are length `N_h`.
pub fn attention_scores_sa(h: &Tensor, w: &Tensor, b: &Tensor, v: &Tensor) -> Result<Vec<f64>> {
    if h.rank() != 2 {
        return Err(shape_err("attention_scores_sa", format!("frames must be [T, D], got {:?}", h.shape())));
    }
    let mut g = Graph::new();
    let hn = g.constant(h.clone())?;
    let wn = g.constant(w.clone())?;
    let bn = g.constant(b.clone())?;
    let vn = g.constant(v.clone().reshape(&[1, v.len()])?)?;
    let id = sa_scores(&mut g, hn, wn, bn, vn, &[h.shape()[0]])?;
    Ok(g.value(id).data().to_vec())
}

/// Cosine similarity of each frame of `[T, D]` with the key `r`.
pub fn attention_scores_ia(h: &Tensor, r: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let hn = g.constant(h.clone())?;
    let rn = g.constant(Tensor::new([r.len()], r.to_vec())?)?;
    let id = g.cosine_scores(hn, rn)?;
    Ok(g.value(id).data().to_vec())
}

/// Parameters of the Baum-Welch statistics attention.
#[derive(Clone, Copy, Debug)]
pub struct BaParams<'a> {
    /// `[H, d]` and `[H]`.
    pub v1: &'a Tensor,
    pub b1: &'a Tensor,
    /// `[d_k, H]`.
    pub v2: &'a Tensor,
    /// Trainable key rows `[N, d_k]`.
    pub keys: &'a Tensor,
    /// Query projection `[d_k, D']` and bias `[d_k]`.
    pub query: &'a Tensor,
    pub query_bias: &'a Tensor,
    /// Score bias and projection, length `M + N`.
    pub score_bias: &'a Tensor,
    pub v: &'a Tensor,
}

/// Baum-Welch statistics attention scores for queries from a `[T, D']`
/// input.
pub fn attention_scores_ba(h_query: &Tensor, stats: &BwStats, p: &BaParams<'_>) -> Result<Vec<f64>> {
    if h_query.rank() != 2 {
        return Err(shape_err("attention_scores_ba", format!("frames must be [T, D'], got {:?}", h_query.shape())));
    }
    let m = stats.num_components();
    let n = if p.keys.rank() == 2 { p.keys.shape()[0] } else { 0 };
    if p.score_bias.len() != m + n || p.v.len() != m + n {
        return Err(shape_err("attention_scores_ba", format!("score bias/projection for {} keys, expected {}", p.v.len(), m + n)));
    }
    let mut g = Graph::new();
    let hq = g.constant(h_query.clone())?;
    let f = g.constant(stats.first_order_matrix())?;
    let nodes = BaNodes {
        v1: g.constant(p.v1.clone())?,
        b1: g.constant(p.b1.clone())?,
        v2: g.constant(p.v2.clone())?,
        keys: if n > 0 { Some(g.constant(p.keys.clone())?) } else { None },
        query: g.constant(p.query.clone())?,
        query_bias: g.constant(p.query_bias.clone())?,
        score_bias: g.constant(p.score_bias.clone())?,
        v: g.constant(p.v.clone().reshape(&[1, m + n])?)?,
    };
    let id = ba_scores(&mut g, hq, f, &nodes, &[h_query.shape()[0]])?;
    Ok(g.value(id).data().to_vec())
}
