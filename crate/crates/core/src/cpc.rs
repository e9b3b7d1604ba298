//! Contrastive predictive coding backbone.
//!
//! A strided convolution stack maps raw samples to latents `z_t`, a single
//! GRU layer summarises `z_1..z_t` into a context `c_t`, and one bilinear
//! head per prediction step `k` scores `(W_k c_t) · z` for the true future
//! latent `z_{t+k}` against negatives drawn from the same sequence. The
//! training objective is the InfoNCE loss summed over `k = 1..K`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::Waveform;
use crate::diff::{conv_out_len, Adam, AdamConfig, DiffError, Graph, NodeId, Tensor};
use crate::features::{FeatureError, FeatureOrigin, FeatureSequence};
use crate::rng::{self, Rng};

#[derive(Debug, thiserror::Error)]
pub enum CpcError {
    #[error("invalid CPC config: {0}")]
    InvalidConfig(String),
    #[error("input of {len} samples is shorter than the required {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("sequence of {len} steps is too short for step {k} with {n_negatives} negatives")]
    SequenceTooShort { len: usize, k: usize, n_negatives: usize },
    #[error("no training utterance is at least {0} samples long")]
    NoUsableUtterances(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpcConfig {
    pub enc_channels: Vec<usize>,
    pub enc_kernels: Vec<usize>,
    pub enc_strides: Vec<usize>,
    pub latent_dim: usize,
    pub context_dim: usize,
    pub k_steps: usize,
    pub n_negatives: usize,
    pub epochs: usize,
    pub batch_utts: usize,
    pub window_samples: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CpcConfig {
    fn default() -> Self {
        Self {
            enc_channels: vec![64, 64, 64],
            enc_kernels: vec![10, 8, 4],
            enc_strides: vec![5, 4, 2],
            latent_dim: 64,
            context_dim: 128,
            k_steps: 12,
            n_negatives: 10,
            epochs: 200,
            batch_utts: 8,
            window_samples: 8000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl CpcConfig {
    pub fn arch(&self) -> CpcArch {
        CpcArch {
            enc_channels: self.enc_channels.clone(),
            enc_kernels: self.enc_kernels.clone(),
            enc_strides: self.enc_strides.clone(),
            context_dim: self.context_dim,
            k_steps: self.k_steps,
        }
    }

    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.enc_channels.len();
        if n == 0 {
            v.push("encoder needs at least one layer".into());
        }
        if self.enc_kernels.len() != n || self.enc_strides.len() != n {
            v.push(format!(
                "enc_channels, enc_kernels, enc_strides lengths differ ({n}, {}, {})",
                self.enc_kernels.len(),
                self.enc_strides.len()
            ));
        }
        if self.enc_channels.contains(&0) || self.enc_kernels.contains(&0) || self.enc_strides.contains(&0) {
            v.push("encoder channels, kernels and strides must be positive".into());
        }
        if self.enc_channels.last() != Some(&self.latent_dim) {
            v.push(format!(
                "latent_dim {} must equal the last encoder channel count",
                self.latent_dim
            ));
        }
        if self.context_dim == 0 {
            v.push("context_dim must be positive".into());
        }
        if self.k_steps == 0 {
            v.push("k_steps must be at least 1".into());
        }
        if self.n_negatives == 0 {
            v.push("n_negatives must be at least 1".into());
        }
        if self.batch_utts == 0 {
            v.push("batch_utts must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("lr must be positive, got {}", self.lr));
        }
        if v.is_empty() {
            let arch = self.arch();
            match arch.output_len(self.window_samples) {
                Some(t) if t > self.k_steps && t > self.n_negatives => {}
                t => v.push(format!(
                    "window of {} samples yields {} latent steps; need more than max(k_steps {}, n_negatives {})",
                    self.window_samples,
                    t.unwrap_or(0),
                    self.k_steps,
                    self.n_negatives
                )),
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), CpcError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CpcError::InvalidConfig(v.join("; ")))
        }
    }
}

/// Architecture hyperparameters stored with the weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpcArch {
    pub enc_channels: Vec<usize>,
    pub enc_kernels: Vec<usize>,
    pub enc_strides: Vec<usize>,
    pub context_dim: usize,
    pub k_steps: usize,
}

impl CpcArch {
    pub fn latent_dim(&self) -> usize {
        *self.enc_channels.last().expect("validated")
    }

    /// Shortest input producing one latent.
    pub fn receptive_field(&self) -> usize {
        self.enc_kernels
            .iter()
            .zip(&self.enc_strides)
            .rev()
            .fold(1, |r, (&k, &s)| (r - 1) * s + k)
    }

    /// Total downsampling factor.
    pub fn hop_samples(&self) -> usize {
        self.enc_strides.iter().product()
    }

    /// Sequence length after each encoder layer.
    pub fn layer_lengths(&self, len: usize) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.enc_kernels.len());
        let mut l = len;
        for (&k, &s) in self.enc_kernels.iter().zip(&self.enc_strides) {
            if l < k {
                return None;
            }
            l = conv_out_len(l, k, s);
            out.push(l);
        }
        Some(out)
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        self.layer_lengths(len).and_then(|v| v.last().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[kernel · c_in, c_out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// GRU with gate order `(reset, update, candidate)` along the `3H` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub b_input: Tensor,
    pub b_hidden: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpcModel {
    pub arch: CpcArch,
    pub encoder: Vec<ConvLayer>,
    pub context: Gru,
    /// One `context_dim × latent_dim` matrix per prediction step.
    pub heads: Vec<Tensor>,
}

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Graph handles for one registration of a model's parameters.
#[derive(Debug, Clone)]
pub struct CpcNodes {
    pub encoder: Vec<(NodeId, NodeId)>,
    pub context: [NodeId; 4],
    pub heads: Vec<NodeId>,
}

impl CpcNodes {
    /// Same order as [`CpcModel::parameters`].
    pub fn ids(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.encoder.iter().flat_map(|&(w, b)| [w, b]).collect();
        v.extend(self.context);
        v.extend(&self.heads);
        v
    }
}

impl CpcModel {
    pub fn new(config: &CpcConfig) -> Result<Self, CpcError> {
        config.validate()?;
        let arch = config.arch();
        let mut rng = rng::derive(config.seed, 1);
        let mut c_in = 1;
        let mut encoder = Vec::new();
        for (&c_out, &k) in arch.enc_channels.iter().zip(&arch.enc_kernels) {
            let fan_in = k * c_in;
            encoder.push(ConvLayer {
                weight: uniform(&mut rng, &[fan_in, c_out], (6.0 / fan_in as f64).sqrt()),
                bias: Tensor::zeros(&[c_out]),
            });
            c_in = c_out;
        }
        let (d, h) = (arch.latent_dim(), arch.context_dim);
        let gb = 1.0 / (h as f64).sqrt();
        let context = Gru {
            w_input: uniform(&mut rng, &[d, 3 * h], gb),
            w_hidden: uniform(&mut rng, &[h, 3 * h], gb),
            b_input: Tensor::zeros(&[3 * h]),
            b_hidden: Tensor::zeros(&[3 * h]),
        };
        let heads = (0..arch.k_steps)
            .map(|_| uniform(&mut rng, &[h, d], 0.1 * gb))
            .collect();
        Ok(Self {
            arch,
            encoder,
            context,
            heads,
        })
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.encoder.len() {
            v.push(format!("encoder.{i}.weight"));
            v.push(format!("encoder.{i}.bias"));
        }
        v.extend(["context.w_input", "context.w_hidden", "context.b_input", "context.b_hidden"].map(String::from));
        v.extend((1..=self.heads.len()).map(|k| format!("head.{k}")));
        v
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoder.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        v.extend([&self.context.w_input, &self.context.w_hidden, &self.context.b_input, &self.context.b_hidden]);
        v.extend(&self.heads);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self
            .encoder
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        let g = &mut self.context;
        v.extend([&mut g.w_input, &mut g.w_hidden, &mut g.b_input, &mut g.b_hidden]);
        v.extend(self.heads.iter_mut());
        v
    }

    /// Rebuilds a model from tensors in [`CpcModel::parameters`] order.
    pub fn from_parameters(arch: CpcArch, mut tensors: Vec<Tensor>) -> Result<Self, CpcError> {
        let n_layers = arch.enc_channels.len();
        let expected = 2 * n_layers + 4 + arch.k_steps;
        if tensors.len() != expected {
            return Err(CpcError::InvalidConfig(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let heads = tensors.split_off(2 * n_layers + 4);
        let gru: Vec<Tensor> = tensors.split_off(2 * n_layers);
        let mut it = tensors.into_iter();
        let encoder = (0..n_layers)
            .map(|_| ConvLayer {
                weight: it.next().expect("counted"),
                bias: it.next().expect("counted"),
            })
            .collect();
        let mut g = gru.into_iter();
        let model = Self {
            encoder,
            context: Gru {
                w_input: g.next().expect("counted"),
                w_hidden: g.next().expect("counted"),
                b_input: g.next().expect("counted"),
                b_hidden: g.next().expect("counted"),
            },
            heads,
            arch,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), CpcError> {
        let mut c_in = 1;
        let bad = |what: &str, t: &Tensor| CpcError::InvalidConfig(format!("{what} has shape {:?}", t.shape()));
        for (i, (layer, (&c_out, &k))) in self
            .encoder
            .iter()
            .zip(self.arch.enc_channels.iter().zip(&self.arch.enc_kernels))
            .enumerate()
        {
            if layer.weight.shape() != [k * c_in, c_out] {
                return Err(bad(&format!("encoder.{i}.weight"), &layer.weight));
            }
            if layer.bias.shape() != [c_out] {
                return Err(bad(&format!("encoder.{i}.bias"), &layer.bias));
            }
            c_in = c_out;
        }
        let (d, h) = (self.arch.latent_dim(), self.arch.context_dim);
        let g = &self.context;
        for (name, t, shape) in [
            ("context.w_input", &g.w_input, vec![d, 3 * h]),
            ("context.w_hidden", &g.w_hidden, vec![h, 3 * h]),
            ("context.b_input", &g.b_input, vec![3 * h]),
            ("context.b_hidden", &g.b_hidden, vec![3 * h]),
        ] {
            if t.shape() != shape.as_slice() {
                return Err(bad(name, t));
            }
        }
        for (k, head) in self.heads.iter().enumerate() {
            if head.shape() != [h, d] {
                return Err(bad(&format!("head.{}", k + 1), head));
            }
        }
        if self.parameters().iter().any(|t| !t.is_finite()) {
            return Err(CpcError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Adds the parameters to `g`, as trainable leaves or as constants.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> CpcNodes {
        let mut leaf = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.input(t.clone()) };
        let encoder = self.encoder.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        let c = &self.context;
        let context = [leaf(&c.w_input), leaf(&c.w_hidden), leaf(&c.b_input), leaf(&c.b_hidden)];
        let heads = self.heads.iter().map(&mut leaf).collect();
        CpcNodes { encoder, context, heads }
    }

    /// Encoder on `[batch, len, 1]` input; returns `[batch, T, latent_dim]`.
    pub fn encode_nodes(&self, g: &mut Graph, nodes: &CpcNodes, input: NodeId) -> Result<NodeId, CpcError> {
        let len = g.shape(input)[1];
        if self.arch.output_len(len).is_none() {
            return Err(CpcError::TooShort {
                len,
                needed: self.arch.receptive_field(),
            });
        }
        let mut x = input;
        for ((w, b), (&k, &s)) in nodes
            .encoder
            .iter()
            .zip(self.arch.enc_kernels.iter().zip(&self.arch.enc_strides))
        {
            let y = g.conv1d(x, *w, *b, k, s)?;
            x = g.relu(y);
        }
        Ok(x)
    }

    /// Causal GRU over `[batch, T, D]` latents from a zero state; returns
    /// `[batch, T, context_dim]`.
    pub fn contextualize_nodes(&self, g: &mut Graph, nodes: &CpcNodes, latents: NodeId) -> Result<NodeId, CpcError> {
        let (b, t, d) = match *g.shape(latents) {
            [b, t, d] => (b, t, d),
            ref s => return Err(DiffError::ShapeMismatch(format!("latents must be [B, T, D], got {s:?}")).into()),
        };
        let h = self.arch.context_dim;
        let [w_in, w_hid, b_in, b_hid] = nodes.context;
        let flat = g.reshape(latents, &[b * t, d])?;
        let proj = g.matmul(flat, w_in)?;
        let proj = g.add_bias(proj, b_in)?;
        let proj = g.reshape(proj, &[b, t, 3 * h])?;

        let mut state = g.input(Tensor::zeros(&[b, h]));
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let xt = g.slice(proj, 1, step, step + 1)?;
            let xt = g.reshape(xt, &[b, 3 * h])?;
            let ht = g.matmul(state, w_hid)?;
            let ht = g.add_bias(ht, b_hid)?;

            let xr = g.slice(xt, 1, 0, h)?;
            let hr = g.slice(ht, 1, 0, h)?;
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);

            let xz = g.slice(xt, 1, h, 2 * h)?;
            let hz = g.slice(ht, 1, h, 2 * h)?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);

            let xn = g.slice(xt, 1, 2 * h, 3 * h)?;
            let hn = g.slice(ht, 1, 2 * h, 3 * h)?;
            let gated = g.mul(r, hn)?;
            let n = g.add(xn, gated)?;
            let n = g.tanh(n);

            // h' = n + z ⊙ (h − n)
            let diff = g.sub(state, n)?;
            let keep = g.mul(z, diff)?;
            state = g.add(n, keep)?;
            outputs.push(state);
        }
        let all = g.concat(&outputs)?;
        Ok(g.reshape(all, &[b, t, h])?)
    }

    pub fn encode(&self, wave: &Waveform) -> Result<FeatureSequence, CpcError> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g, false);
        let input = g.input(Tensor::new(vec![1, wave.len(), 1], wave.samples().to_vec())?);
        let z = self.encode_nodes(&mut g, &nodes, input)?;
        self.to_sequence(&g, z, wave.sample_rate_hz(), FeatureOrigin::CpcLatent)
    }

    pub fn contextualize(&self, latents: &FeatureSequence) -> Result<FeatureSequence, CpcError> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g, false);
        let z = g.input(Tensor::new(
            vec![1, latents.n_frames(), latents.dim()],
            latents.data().to_vec(),
        )?);
        let c = self.contextualize_nodes(&mut g, &nodes, z)?;
        let data = g.value(c).data().to_vec();
        Ok(FeatureSequence::new(
            data,
            latents.n_frames(),
            self.arch.context_dim,
            latents.frame_hop_ms,
            FeatureOrigin::CpcContext,
        )?)
    }

    /// Encoder then context network.
    pub fn context_features(&self, wave: &Waveform) -> Result<FeatureSequence, CpcError> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g, false);
        let input = g.input(Tensor::new(vec![1, wave.len(), 1], wave.samples().to_vec())?);
        let z = self.encode_nodes(&mut g, &nodes, input)?;
        let c = self.contextualize_nodes(&mut g, &nodes, z)?;
        self.to_sequence(&g, c, wave.sample_rate_hz(), FeatureOrigin::CpcContext)
    }

    fn to_sequence(&self, g: &Graph, node: NodeId, sample_rate_hz: u32, origin: FeatureOrigin) -> Result<FeatureSequence, CpcError> {
        let s = g.shape(node);
        let (t, d) = (s[1], s[2]);
        let hop_ms = self.arch.hop_samples() as f64 * 1000.0 / f64::from(sample_rate_hz);
        Ok(FeatureSequence::new(g.value(node).data().to_vec(), t, d, hop_ms, origin)?)
    }
}

/// Draws `n` distinct positions from `0..len` excluding `positive`.
pub fn sample_negatives(len: usize, positive: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, len - 1, n)
        .into_iter()
        .map(|i| if i >= positive { i + 1 } else { i })
        .collect()
}

/// One prediction step's loss node plus its accuracy.
#[derive(Debug, Clone, Copy)]
pub struct StepTerm {
    pub loss: NodeId,
    pub accuracy: f64,
}

/// InfoNCE for step `k` over `[B, T, H]` contexts and `[B, T, D]` latents.
///
/// Every anchor `t < T − k` scores its positive `z_{t+k}` first and then
/// `n_negatives` latents sampled without replacement from the same sequence
/// (positive excluded). The loss is the mean over anchors of
/// `−log softmax(scores)[0]`. Negatives are drawn in (batch, anchor) order.
pub fn info_nce_nodes(
    g: &mut Graph,
    head: NodeId,
    contexts: NodeId,
    latents: NodeId,
    k: usize,
    n_negatives: usize,
    rng: &mut Rng,
) -> Result<StepTerm, CpcError> {
    let (b, t, h) = match *g.shape(contexts) {
        [b, t, h] => (b, t, h),
        ref s => return Err(DiffError::ShapeMismatch(format!("contexts must be [B, T, H], got {s:?}")).into()),
    };
    let d = g.shape(latents)[2];
    if g.shape(latents)[..2] != [b, t] {
        return Err(DiffError::ShapeMismatch("contexts and latents disagree on [B, T]".into()).into());
    }
    if k == 0 || t <= k || t < n_negatives + 1 {
        return Err(CpcError::SequenceTooShort {
            len: t,
            k,
            n_negatives,
        });
    }
    let width = n_negatives + 1;
    let anchors = b * (t - k);
    let mut pred_rows = Vec::with_capacity(anchors * width);
    let mut cand_rows = Vec::with_capacity(anchors * width);
    for bi in 0..b {
        for ti in 0..t - k {
            let pos = ti + k;
            pred_rows.extend(std::iter::repeat_n(bi * t + ti, width));
            cand_rows.push(bi * t + pos);
            cand_rows.extend(sample_negatives(t, pos, n_negatives, rng).into_iter().map(|j| bi * t + j));
        }
    }
    let c_flat = g.reshape(contexts, &[b * t, h])?;
    let z_flat = g.reshape(latents, &[b * t, d])?;
    let pred = g.matmul(c_flat, head)?;
    let pred = g.gather_rows(pred, pred_rows)?;
    let cand = g.gather_rows(z_flat, cand_rows)?;
    let prod = g.mul(pred, cand)?;
    let scores = g.sum_last(prod);
    let scores = g.reshape(scores, &[anchors, width])?;

    let hits = g
        .value(scores)
        .data()
        .chunks(width)
        .filter(|row| row[1..].iter().all(|&s| row[0] > s))
        .count();

    let logp = g.log_softmax(scores);
    let logp = g.reshape(logp, &[anchors * width, 1])?;
    let positives = g.gather_rows(logp, (0..anchors).map(|a| a * width).collect())?;
    let mean = g.mean(positives);
    Ok(StepTerm {
        loss: g.scale(mean, -1.0),
        accuracy: hits as f64 / anchors as f64,
    })
}

/// Per-step losses `l_1..l_K`, their sum and per-step accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub per_step: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub total: f64,
}

impl StepLosses {
    fn zeros(k: usize) -> Self {
        Self {
            per_step: vec![0.0; k],
            accuracy: vec![0.0; k],
            total: 0.0,
        }
    }

    fn add_weighted(&mut self, other: &StepLosses, w: f64) {
        for (a, b) in self.per_step.iter_mut().zip(&other.per_step) {
            *a += w * b;
        }
        for (a, b) in self.accuracy.iter_mut().zip(&other.accuracy) {
            *a += w * b;
        }
        self.total += w * other.total;
    }
}

/// Builds the summed InfoNCE loss for a batch of equal-length windows.
/// Returns the loss node, the model's node handles and per-step values.
pub fn batch_loss(
    model: &CpcModel,
    g: &mut Graph,
    windows: &[&[f64]],
    n_negatives: usize,
    rng: &mut Rng,
) -> Result<(NodeId, CpcNodes, StepLosses), CpcError> {
    let nodes = model.register(g, true);
    let (loss, steps) = batch_loss_with(model, g, &nodes, windows, n_negatives, rng)?;
    Ok((loss, nodes, steps))
}

/// As [`batch_loss`] but with parameters already registered in `g`.
pub fn batch_loss_with(
    model: &CpcModel,
    g: &mut Graph,
    nodes: &CpcNodes,
    windows: &[&[f64]],
    n_negatives: usize,
    rng: &mut Rng,
) -> Result<(NodeId, StepLosses), CpcError> {
    let len = windows[0].len();
    let mut data = Vec::with_capacity(windows.len() * len);
    for w in windows {
        data.extend_from_slice(w);
    }
    let input = g.input(Tensor::new(vec![windows.len(), len, 1], data)?);
    let z = model.encode_nodes(g, nodes, input)?;
    let c = model.contextualize_nodes(g, nodes, z)?;
    let mut terms = Vec::with_capacity(model.arch.k_steps);
    let mut steps = StepLosses::zeros(model.arch.k_steps);
    for (ki, &head) in nodes.heads.iter().enumerate() {
        let term = info_nce_nodes(g, head, c, z, ki + 1, n_negatives, rng)?;
        steps.per_step[ki] = g.value(term.loss).item();
        steps.accuracy[ki] = term.accuracy;
        terms.push(term.loss);
    }
    let stacked = g.concat(&terms)?;
    let total = g.sum(stacked);
    steps.total = g.value(total).item();
    Ok((total, steps))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: CpcModel,
    /// One entry per epoch: the mean over that epoch's batches.
    pub history: Vec<StepLosses>,
    /// Utterances shorter than the crop window.
    pub skipped: usize,
}

fn usable(waveforms: &[Waveform], window: usize) -> (Vec<&Waveform>, usize) {
    let usable: Vec<&Waveform> = waveforms.iter().filter(|w| w.len() >= window).collect();
    let skipped = waveforms.len() - usable.len();
    (usable, skipped)
}

fn crop<'a>(w: &'a Waveform, window: usize, rng: &mut Rng) -> &'a [f64] {
    let start = rng.random_range(0..=w.len() - window);
    &w.samples()[start..start + window]
}

/// Mean summed InfoNCE loss of `model` over one cropped pass, without
/// updating anything.
pub fn evaluate_loss(model: &CpcModel, waveforms: &[Waveform], config: &CpcConfig, seed: u64) -> Result<StepLosses, CpcError> {
    let (usable, _) = usable(waveforms, config.window_samples);
    if usable.is_empty() {
        return Err(CpcError::NoUsableUtterances(config.window_samples));
    }
    let mut rng = rng::seeded(seed);
    let mut mean = StepLosses::zeros(model.arch.k_steps);
    let batches: Vec<&[&Waveform]> = usable.chunks(config.batch_utts).collect();
    for batch in &batches {
        let windows: Vec<&[f64]> = batch.iter().map(|w| crop(w, config.window_samples, &mut rng)).collect();
        let mut g = Graph::new();
        let nodes = model.register(&mut g, false);
        let (_, steps) = batch_loss_with(model, &mut g, &nodes, &windows, config.n_negatives, &mut rng)?;
        mean.add_weighted(&steps, 1.0 / batches.len() as f64);
    }
    Ok(mean)
}

/// CPC training from the given initial weights: per epoch a seeded shuffle,
/// one random crop per utterance, mini-batches, summed InfoNCE, Adam.
pub fn pretrain(model: CpcModel, waveforms: &[Waveform], config: &CpcConfig) -> Result<PretrainOutcome, CpcError> {
    config.validate()?;
    if model.arch != config.arch() {
        return Err(CpcError::InvalidConfig("model architecture differs from config".into()));
    }
    let (usable, skipped) = usable(waveforms, config.window_samples);
    if skipped > 0 {
        log::warn!(
            "skipping {skipped} utterance(s) shorter than the {}-sample window",
            config.window_samples
        );
    }
    if usable.is_empty() && config.epochs > 0 {
        return Err(CpcError::NoUsableUtterances(config.window_samples));
    }
    let mut model = model;
    let mut opt = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut rng = rng::derive(config.seed, 2);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut mean = StepLosses::zeros(model.arch.k_steps);
        let n_batches = order.len().div_ceil(config.batch_utts);
        for batch in order.chunks(config.batch_utts) {
            let windows: Vec<&[f64]> = batch
                .iter()
                .map(|&i| crop(usable[i], config.window_samples, &mut rng))
                .collect();
            let mut g = Graph::new();
            let (loss, nodes, steps) = batch_loss(&model, &mut g, &windows, config.n_negatives, &mut rng)?;
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = nodes
                .ids()
                .into_iter()
                .map(|id| grads.take(id).expect("registered parameter"))
                .collect();
            opt.step(&mut model.parameters_mut(), &grads)?;
            mean.add_weighted(&steps, 1.0 / n_batches as f64);
        }
        log::debug!("cpc epoch {}: total loss {:.4}", epoch + 1, mean.total);
        history.push(mean);
    }
    Ok(PretrainOutcome {
        model,
        history,
        skipped,
    })
}

/// Continues CPC training of an existing model on a new corpus.
pub fn finetune_backbone(model: CpcModel, waveforms: &[Waveform], config: &CpcConfig) -> Result<PretrainOutcome, CpcError> {
    pretrain(model, waveforms, config)
}

/// `epoch,l_1..l_K,total,acc_1..acc_K` with one row per epoch.
pub fn loss_curve_csv(history: &[StepLosses]) -> String {
    let k = history.first().map_or(0, |h| h.per_step.len());
    let mut out = String::from("epoch");
    for i in 1..=k {
        let _ = write!(out, ",l_{i}");
    }
    out.push_str(",total");
    for i in 1..=k {
        let _ = write!(out, ",acc_{i}");
    }
    out.push('\n');
    for (e, h) in history.iter().enumerate() {
        let _ = write!(out, "{}", e + 1);
        for v in &h.per_step {
            let _ = write!(out, ",{v}");
        }
        let _ = write!(out, ",{}", h.total);
        for v in &h.accuracy {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
