//! Convolutional VQ autoencoder over one group of pose columns.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use super::sequence::{MotionSequence, Part, PartTokenSeq, FRAME_DIM, LAYOUT};
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, seeded_rng, AdamConfig, Checkpoint, Conv1d, ConvTranspose1d, Graph, Layer, ParamStore, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub codebook_size: usize,
    pub code_dim: usize,
    /// Temporal reduction; a power of two, one stride-2 block per factor.
    pub downsample: usize,
    pub commitment_weight: f64,
    pub ema_decay: f64,
    pub ema_epsilon: f64,
    pub reset_staleness: u64,
    pub window_length: usize,
    /// Channel width of the convolutional trunk.
    pub hidden: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CodecConfig {
    /// Small trunk for laptop-scale runs.
    pub fn desk() -> Self {
        Self {
            codebook_size: 512,
            code_dim: 32,
            downsample: 4,
            commitment_weight: 0.02,
            ema_decay: 0.99,
            ema_epsilon: 1e-5,
            reset_staleness: 200,
            window_length: 72,
            hidden: 48,
        }
    }

    /// Published widths.
    pub fn paper() -> Self {
        Self {
            code_dim: 512,
            hidden: 512,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 || self.code_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("codebook_size, code_dim and hidden must be positive"));
        }
        if self.downsample < 2 || !self.downsample.is_power_of_two() {
            return Err(Error::invalid(format!(
                "downsample {} is not a power of two >= 2",
                self.downsample
            )));
        }
        if !(self.commitment_weight > 0.0) {
            return Err(Error::invalid("commitment_weight must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema_decay must lie in [0, 1)"));
        }
        if self.window_length < self.downsample || self.window_length % self.downsample != 0 {
            return Err(Error::invalid(
                "window_length must be a positive multiple of downsample",
            ));
        }
        Ok(())
    }

    fn levels(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }
}

/// Which frame columns a codec consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecInput {
    Part(Part),
    /// All 259 columns in one codec (the single-codec ablation).
    Whole,
}

impl CodecInput {
    pub fn columns(self) -> Vec<usize> {
        match self {
            CodecInput::Part(p) => p.columns(),
            CodecInput::Whole => (0..FRAME_DIM).collect(),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            CodecInput::Part(p) => p.dim(),
            CodecInput::Whole => FRAME_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecInput::Part(p) => p.name(),
            CodecInput::Whole => "whole",
        }
    }

    pub fn extract(self, m: &MotionSequence) -> Vec<f64> {
        match self {
            CodecInput::Part(p) => m.part(p),
            CodecInput::Whole => m.data().to_vec(),
        }
    }
}

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on row-major `n × dim` data. Near-constant dimensions get unit scale.
    pub fn fit<'a>(dim: usize, chunks: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for c in chunks {
            for row in c.chunks_exact(dim) {
                n += 1;
                for j in 0..dim {
                    sum[j] += row[j];
                    sq[j] += row[j] * row[j];
                }
            }
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit normalization on empty data"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let v = (s / n as f64 - m * m).max(0.0).sqrt();
                if v < 1e-8 {
                    1.0
                } else {
                    v
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        data.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn invert(&self, data: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        data.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv1d,
    b: Conv1d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            a: Conv1d::new(store, &format!("{name}.a"), ch, ch, 3, 1, 1, rng),
            b: Conv1d::new(store, &format!("{name}.b"), ch, ch, 3, 1, 1, rng),
        }
    }
}

impl Layer for ResBlock {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = g.relu(x);
        let h = self.a.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.b.forward(g, store, h)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    down: Vec<(Conv1d, ResBlock)>,
    out: Conv1d,
}

#[derive(Clone, Debug)]
struct Decoder {
    inp: Conv1d,
    up: Vec<(ResBlock, ConvTranspose1d)>,
    out: Conv1d,
}

/// Trained (or fresh) VQ autoencoder for one [`CodecInput`].
#[derive(Clone, Debug)]
pub struct PartCodec {
    pub input: CodecInput,
    pub config: CodecConfig,
    pub store: ParamStore,
    pub codebook: Codebook,
    pub norm: Normalizer,
    encoder: Encoder,
    decoder: Decoder,
}

#[derive(Serialize, Deserialize)]
struct CodecMeta {
    input: CodecInput,
    config: CodecConfig,
    columns: Vec<usize>,
    layout: String,
}

impl PartCodec {
    /// Fresh parameters; the codebook starts as standard-normal draws.
    pub fn new(input: CodecInput, config: CodecConfig, norm: Normalizer, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != input.dim() {
            return Err(Error::shape("PartCodec::new", input.dim(), norm.mean.len()));
        }
        let (d, h, c) = (input.dim(), config.hidden, config.code_dim);
        let mut store = ParamStore::new();
        let mut down = Vec::new();
        for l in 0..config.levels() {
            let cin = if l == 0 { d } else { h };
            down.push((
                Conv1d::new(&mut store, &format!("enc.down{l}"), cin, h, 4, 2, 1, rng),
                ResBlock::new(&mut store, &format!("enc.res{l}"), h, rng),
            ));
        }
        let out = Conv1d::new(&mut store, "enc.out", h, c, 3, 1, 1, rng);
        let encoder = Encoder { down, out };
        let inp = Conv1d::new(&mut store, "dec.in", c, h, 3, 1, 1, rng);
        let mut up = Vec::new();
        for l in 0..config.levels() {
            up.push((
                ResBlock::new(&mut store, &format!("dec.res{l}"), h, rng),
                ConvTranspose1d::new(&mut store, &format!("dec.up{l}"), h, h, 4, 2, 1, rng),
            ));
        }
        let out = Conv1d::new(&mut store, "dec.out", h, d, 3, 1, 1, rng);
        let decoder = Decoder { inp, up, out };
        let normal = rand_distr::StandardNormal;
        let entries = (0..config.codebook_size * c)
            .map(|_| rng.sample::<f64, _>(normal))
            .collect();
        let codebook = Codebook::new(config.codebook_size, c, entries)?;
        Ok(Self {
            input,
            config,
            store,
            codebook,
            norm,
            encoder,
            decoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.input.dim()
    }

    fn encode_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, res) in &self.encoder.down {
            h = conv.forward(g, &self.store, h)?;
            h = g.relu(h);
            h = res.forward(g, &self.store, h)?;
        }
        self.encoder.out.forward(g, &self.store, h)
    }

    fn decode_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let mut h = self.decoder.inp.forward(g, &self.store, z)?;
        h = g.relu(h);
        for (res, up) in &self.decoder.up {
            h = res.forward(g, &self.store, h)?;
            h = up.forward(g, &self.store, h)?;
            h = g.relu(h);
        }
        self.decoder.out.forward(g, &self.store, h)
    }

    /// Normalized `T' × d` input with `T'` rounded up to a multiple of the
    /// downsample rate by repeating the last frame.
    fn prepare(&self, frames: &[f64]) -> Result<Tensor> {
        let d = self.dim();
        if frames.len() % d != 0 {
            return Err(Error::shape("codec input", format!("[T, {d}]"), frames.len()));
        }
        let t = frames.len() / d;
        let ds = self.config.downsample;
        if t < ds {
            return Err(Error::invalid(format!(
                "sequence of {t} frames is shorter than the downsample rate {ds}"
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codec input".into()));
        }
        let padded_t = t.div_ceil(ds) * ds;
        let mut data = self.norm.apply(frames);
        let last = data[(t - 1) * d..].to_vec();
        for _ in t..padded_t {
            data.extend_from_slice(&last);
        }
        Tensor::matrix(padded_t, d, data)
    }

    /// Pre-quantization encoder output, `⌈T/ds⌉ × code_dim`.
    pub fn latents(&self, frames: &[f64]) -> Result<Tensor> {
        let x = self.prepare(frames)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let z = self.encode_graph(&mut g, xv)?;
        Ok(g.value(z).clone())
    }

    /// Time-averaged latent, used as a clip-level feature vector.
    pub fn pooled_latent(&self, frames: &[f64]) -> Result<Vec<f64>> {
        let z = self.latents(frames)?;
        let mut out = vec![0.0; z.cols()];
        for r in 0..z.rows() {
            for (o, v) in out.iter_mut().zip(z.row(r)) {
                *o += v / z.rows() as f64;
            }
        }
        Ok(out)
    }

    pub fn encode(&self, frames: &[f64]) -> Result<Vec<u32>> {
        let z = self.latents(frames)?;
        let (ids, _) = self.codebook.quantize_rows(&z)?;
        Ok(ids.into_iter().map(|k| k as u32).collect())
    }

    /// `len(ids) · downsample` frames in the original (denormalized) units.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot decode an empty token sequence"));
        }
        if let Some(pos) = ids.iter().position(|&k| k as usize >= self.codebook.size) {
            return Err(Error::invalid(format!(
                "token {} at position {pos} outside codebook of {}",
                ids[pos], self.codebook.size
            )));
        }
        let c = self.codebook.dim;
        let mut z = Vec::with_capacity(ids.len() * c);
        for &k in ids {
            z.extend_from_slice(self.codebook.entry(k as usize));
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::matrix(ids.len(), c, z)?);
        let y = self.decode_graph(&mut g, zv)?;
        Ok(self.norm.invert(g.value(y).data()))
    }

    /// Encode then decode, truncated back to the input length.
    pub fn reconstruct(&self, frames: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.decode(&self.encode(frames)?)?;
        out.truncate(frames.len());
        Ok(out)
    }

    pub fn encode_motion(&self, m: &MotionSequence) -> Result<PartTokenSeq> {
        match self.input {
            CodecInput::Part(part) => Ok(PartTokenSeq {
                part,
                ids: self.encode(&m.part(part))?,
            }),
            CodecInput::Whole => Err(Error::invalid("whole-body codec has no part token sequence")),
        }
    }

    /// One training forward pass: returns (loss, recon, commitment) vars,
    /// the latent matrix and its code assignments.
    fn training_pass(&self, g: &mut Graph, x: Tensor) -> Result<(Var, f64, f64, Tensor, Vec<usize>)> {
        let xv = g.constant(x);
        let z = self.encode_graph(g, xv)?;
        let zt = g.value(z).clone();
        let (ids, q) = self.codebook.quantize_rows(&zt)?;
        let zq = g.straight_through(z, q.clone())?;
        let xr = self.decode_graph(g, zq)?;
        let rec = g.smooth_l1(xr, xv)?;
        let qc = g.constant(q);
        let com = g.mse(z, qc)?;
        let (rv, cv) = (g.value(rec).data()[0], g.value(com).data()[0]);
        let scaled = g.scale(com, self.config.commitment_weight);
        let loss = g.add(rec, scaled)?;
        Ok((loss, rv, cv, zt, ids))
    }

    /// Reconstruction and commitment terms of the training loss on one window.
    pub fn loss_terms(&self, frames: &[f64]) -> Result<(f64, f64)> {
        let x = self.prepare(frames)?;
        let mut g = Graph::new();
        let (_, r, c, _, _) = self.training_pass(&mut g, x)?;
        Ok((r, c))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = CodecMeta {
            input: self.input,
            config: self.config.clone(),
            columns: self.input.columns(),
            layout: LAYOUT.into(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
        ck.tensors.extend(self.store.named_values());
        ck.tensors.extend(self.codebook.to_tensors());
        let d = self.dim();
        ck.push("norm.mean", Tensor::new(vec![d], self.norm.mean.clone())?);
        ck.push("norm.std", Tensor::new(vec![d], self.norm.std.clone())?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: CodecMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.layout != LAYOUT {
            return Err(Error::Format(format!(
                "codec layout {:?} is not {LAYOUT:?}",
                meta.layout
            )));
        }
        let norm = Normalizer {
            mean: ck.get("norm.mean")?.data().to_vec(),
            std: ck.get("norm.std")?.data().to_vec(),
        };
        let mut codec = Self::new(meta.input, meta.config, norm, &mut seeded_rng(0))?;
        codec.store.load_values(&ck.tensors)?;
        codec.codebook = Codebook::from_tensors(&ck.tensors)?;
        if codec.codebook.size != codec.config.codebook_size || codec.codebook.dim != codec.config.code_dim {
            return Err(Error::Format("codebook shape disagrees with codec config".into()));
        }
        Ok(codec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// How the codebook is initialized before training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodebookInit {
    /// Sampled from encoder latents of the training windows.
    Data,
    /// All codes far from the data (collapse experiments).
    Adversarial { distance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub resets: bool,
    pub init: CodebookInit,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            adam: AdamConfig::with_lr(3e-3),
            resets: true,
            init: CodebookInit::Data,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean total loss per step.
    pub losses: Vec<f64>,
    pub recon: Vec<f64>,
    pub commitment: Vec<f64>,
    pub codes_reset: usize,
}

/// Cuts `window_length`-frame windows (hop `stride`) out of every sequence
/// long enough to hold one.
pub fn windows(seqs: &[MotionSequence], input: CodecInput, window_length: usize, stride: usize) -> Vec<Vec<f64>> {
    let d = input.dim();
    let mut out = Vec::new();
    for m in seqs {
        if m.len() < window_length {
            continue;
        }
        let data = input.extract(m);
        let mut s = 0;
        while s + window_length <= m.len() {
            out.push(data[s * d..(s + window_length) * d].to_vec());
            s += stride.max(1);
        }
    }
    out
}

/// The codec `train_codec` starts from: fitted normalizer, random weights
/// and the initial codebook, before any optimizer step.
pub fn untrained_codec(
    input: CodecInput,
    data: &[Vec<f64>],
    config: &CodecConfig,
    opts: &TrainOptions,
) -> Result<PartCodec> {
    Ok(initialize(input, data, config, opts)?.0)
}

fn initialize(
    input: CodecInput,
    data: &[Vec<f64>],
    config: &CodecConfig,
    opts: &TrainOptions,
) -> Result<(PartCodec, crate::numerics::Rng)> {
    config.validate()?;
    opts.adam.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(Error::invalid("training budget and batch size must be at least 1"));
    }
    let want = config.window_length * input.dim();
    if let Some(i) = data.iter().position(|w| w.len() != want) {
        return Err(Error::shape("train_codec window", want, data[i].len()));
    }
    let mut rng = seeded_rng(opts.seed);
    let norm = Normalizer::fit(input.dim(), data.iter().map(Vec::as_slice))?;
    let mut codec = PartCodec::new(input, config.clone(), norm, &mut rng)?;
    codec.codebook = match opts.init {
        CodebookInit::Data => {
            let per = config.window_length / config.downsample;
            let need = config.codebook_size.div_ceil(per).min(data.len());
            let mut pool = Vec::new();
            for i in rand::seq::index::sample(&mut rng, data.len(), need) {
                pool.extend_from_slice(codec.latents(&data[i])?.data());
            }
            Codebook::from_latents(config.codebook_size, config.code_dim, &pool, &mut rng)?
        }
        CodebookInit::Adversarial { distance } => {
            Codebook::adversarial(config.codebook_size, config.code_dim, distance)?
        }
    };
    Ok((codec, rng))
}

/// Trains a fresh codec on raw windows of `window_length × dim`.
pub fn train_codec(
    input: CodecInput,
    data: &[Vec<f64>],
    config: &CodecConfig,
    opts: &TrainOptions,
) -> Result<(PartCodec, TrainLog)> {
    let (mut codec, mut rng) = initialize(input, data, config, opts)?;
    let mut log = TrainLog::default();
    let scale = 1.0 / opts.batch_size as f64;
    for step in 1..=opts.steps {
        let mut latents = Vec::new();
        let mut ids = Vec::new();
        let (mut tl, mut tr, mut tc) = (0.0, 0.0, 0.0);
        for _ in 0..opts.batch_size {
            let w = &data[rng.gen_range(0..data.len())];
            let x = codec.prepare(w)?;
            let mut g = Graph::new();
            let (loss, r, c, z, k) = codec.training_pass(&mut g, x)?;
            let grads = g.backward(loss)?;
            codec.store.accumulate(&grads, scale);
            tl += g.value(loss).data()[0] * scale;
            tr += r * scale;
            tc += c * scale;
            latents.extend_from_slice(z.data());
            ids.extend(k);
        }
        adam_step(&mut codec.store, &opts.adam, step)?;
        let cfg = &codec.config;
        codec
            .codebook
            .ema_update(&latents, &ids, cfg.ema_decay, cfg.ema_epsilon, step);
        if opts.resets {
            log.codes_reset += codec
                .codebook
                .reset_stale(&latents, step, cfg.reset_staleness, &mut rng);
        }
        log.losses.push(tl);
        log.recon.push(tr);
        log.commitment.push(tc);
        if step % 100 == 0 {
            log::debug!(
                "{} codec step {step}: loss {tl:.4} (recon {tr:.4}, commit {tc:.4})",
                input.name()
            );
        }
    }
    Ok((codec, log))
}

/// Distinct codes used when encoding `data`, out of K.
pub fn utilization(codec: &PartCodec, data: &[Vec<f64>]) -> Result<usize> {
    let mut all = Vec::new();
    for w in data {
        all.extend(codec.encode(w)?.into_iter().map(|k| k as usize));
    }
    Ok(codec.codebook.utilization(&all))
}

/// Share of the most used code when encoding `data`.
pub fn max_code_share(codec: &PartCodec, data: &[Vec<f64>]) -> Result<f64> {
    let mut counts = vec![0usize; codec.codebook.size];
    let mut n = 0;
    for w in data {
        for k in codec.encode(w)? {
            counts[k as usize] += 1;
            n += 1;
        }
    }
    Ok(counts.into_iter().max().unwrap_or(0) as f64 / n.max(1) as f64)
}

/// Trailing moving average (used for loss curves).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
