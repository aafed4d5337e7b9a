//! Singer-conditioned vector quantizer for F0 contours.
//!
//! Contours are modelled in normalized log-Hz. Unvoiced stretches are filled
//! by linear interpolation between voiced neighbours before encoding, and
//! decoded contours are continuous; voicing is applied as a separate gate.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{Codebook, CodebookInit, TrainLog, TrainOptions};
use crate::numerics::{adam_step, seeded_rng, Checkpoint, Conv1d, Embedding, Graph, Layer, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0CodecConfig {
    pub codes: usize,
    pub code_dim: usize,
    pub hidden: usize,
    pub singer_dim: usize,
    /// Training window in frames.
    pub window: usize,
    pub commitment_weight: f64,
    pub ema_decay: f64,
    pub ema_epsilon: f64,
    pub reset_staleness: u64,
}

impl Default for F0CodecConfig {
    fn default() -> Self {
        Self {
            codes: 20,
            code_dim: 8,
            hidden: 32,
            singer_dim: 256,
            window: 100,
            commitment_weight: 0.25,
            ema_decay: 0.99,
            ema_epsilon: 1e-5,
            reset_staleness: 100,
        }
    }
}

impl F0CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codes == 0 || self.code_dim == 0 || self.hidden == 0 || self.singer_dim == 0 || self.window == 0 {
            return Err(Error::invalid("F0 codec sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || !(self.ema_epsilon > 0.0) {
            return Err(Error::invalid("EMA decay must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }
}

/// A training contour with its singer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Example {
    pub singer: String,
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

/// Log-F0 with unvoiced frames filled by linear interpolation (constant
/// extension at the ends). `None` when nothing is voiced.
pub fn interpolate_log_f0(f0_hz: &[f64], voiced: &[bool]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..f0_hz.len()).filter(|&i| voiced[i] && f0_hz[i] > 0.0).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = vec![0.0; f0_hz.len()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i <= first {
            f0_hz[first].ln()
        } else if i >= last {
            f0_hz[last].ln()
        } else {
            let j = known.partition_point(|&k| k <= i);
            let (a, b) = (known[j - 1], known[j]);
            if a == i {
                f0_hz[i].ln()
            } else {
                let t = (i - a) as f64 / (b - a) as f64;
                (1.0 - t) * f0_hz[a].ln() + t * f0_hz[b].ln()
            }
        };
    }
    Some(out)
}

#[derive(Clone, Debug)]
pub struct F0Codec {
    pub config: F0CodecConfig,
    pub singers: Vec<String>,
    /// Mean and standard deviation of voiced log-F0 in the training set.
    pub log_mean: f64,
    pub log_std: f64,
    pub store: ParamStore,
    pub codebook: Codebook,
    table: Embedding,
    enc_a: Conv1d,
    enc_b: Conv1d,
    dec_a: Conv1d,
    dec_b: Conv1d,
}

#[derive(Serialize, Deserialize)]
struct F0Meta {
    kind: String,
    config: F0CodecConfig,
    singers: Vec<String>,
    log_mean: f64,
    log_std: f64,
}

impl F0Codec {
    pub fn new(
        config: F0CodecConfig,
        singers: Vec<String>,
        log_mean: f64,
        log_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if singers.is_empty() {
            return Err(Error::invalid("F0 codec needs at least one singer"));
        }
        if !(log_std > 0.0) || !log_mean.is_finite() {
            return Err(Error::invalid("log-F0 statistics must be finite with positive spread"));
        }
        let (e, h, c) = (config.singer_dim, config.hidden, config.code_dim);
        let mut store = ParamStore::new();
        let table = Embedding::new(&mut store, "singer", singers.len(), e, rng);
        let enc_a = Conv1d::new(&mut store, "enc.a", 1 + e, h, 5, 1, 2, rng);
        let enc_b = Conv1d::new(&mut store, "enc.b", h, c, 3, 1, 1, rng);
        let dec_a = Conv1d::new(&mut store, "dec.a", c + e, h, 3, 1, 1, rng);
        let dec_b = Conv1d::new(&mut store, "dec.b", h, 1, 3, 1, 1, rng);
        let normal = rand_distr::StandardNormal;
        let entries = (0..config.codes * c).map(|_| rng.sample::<f64, _>(normal)).collect();
        let codebook = Codebook::new(config.codes, c, entries)?;
        Ok(Self {
            config,
            singers,
            log_mean,
            log_std,
            store,
            codebook,
            table,
            enc_a,
            enc_b,
            dec_a,
            dec_b,
        })
    }

    pub fn singer_index(&self, singer: &str) -> Result<usize> {
        self.singers
            .iter()
            .position(|s| s == singer)
            .ok_or_else(|| Error::invalid(format!("unknown singer {singer:?}")))
    }

    /// Normalized, interpolated log-F0 column.
    fn prepare(&self, f0_hz: &[f64], voiced: &[bool]) -> Result<Tensor> {
        if f0_hz.is_empty() {
            return Err(Error::invalid("empty F0 contour"));
        }
        if f0_hz.len() != voiced.len() {
            return Err(Error::shape("F0 contour", f0_hz.len(), voiced.len()));
        }
        if f0_hz.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("F0 contour must be finite and non-negative".into()));
        }
        let logs = interpolate_log_f0(f0_hz, voiced).unwrap_or_else(|| vec![self.log_mean; f0_hz.len()]);
        let x = logs.iter().map(|v| (v - self.log_mean) / self.log_std).collect();
        Tensor::matrix(f0_hz.len(), 1, x)
    }

    fn singer_rows(&self, g: &mut Graph, singer: usize, n: usize) -> Result<Var> {
        let e = self.table.lookup(g, &self.store, &[singer])?;
        g.repeat_row(e, n)
    }

    fn encode_graph(&self, g: &mut Graph, x: Var, singer: usize) -> Result<Var> {
        let n = g.value(x).rows();
        let s = self.singer_rows(g, singer, n)?;
        let h = g.concat_cols(x, s)?;
        let h = self.enc_a.forward(g, &self.store, h)?;
        let h = g.relu(h);
        self.enc_b.forward(g, &self.store, h)
    }

    fn decode_graph(&self, g: &mut Graph, z: Var, singer: usize) -> Result<Var> {
        let n = g.value(z).rows();
        let s = self.singer_rows(g, singer, n)?;
        let h = g.concat_cols(z, s)?;
        let h = self.dec_a.forward(g, &self.store, h)?;
        let h = g.relu(h);
        self.dec_b.forward(g, &self.store, h)
    }

    pub fn latents(&self, f0_hz: &[f64], voiced: &[bool], singer: &str) -> Result<Tensor> {
        let s = self.singer_index(singer)?;
        let x = self.prepare(f0_hz, voiced)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let z = self.encode_graph(&mut g, xv, s)?;
        Ok(g.value(z).clone())
    }

    /// One pitch id per frame.
    pub fn encode(&self, f0_hz: &[f64], voiced: &[bool], singer: &str) -> Result<Vec<u32>> {
        let z = self.latents(f0_hz, voiced, singer)?;
        let (ids, _) = self.codebook.quantize_rows(&z)?;
        Ok(ids.into_iter().map(|k| k as u32).collect())
    }

    /// Continuous contour in Hz, one value per id.
    pub fn decode(&self, ids: &[u32], singer: &str) -> Result<Vec<f64>> {
        let s = self.singer_index(singer)?;
        if ids.is_empty() {
            return Err(Error::invalid("cannot decode an empty pitch sequence"));
        }
        if let Some(pos) = ids.iter().position(|&k| k as usize >= self.codebook.size) {
            return Err(Error::invalid(format!(
                "pitch id {} at position {pos} outside codebook of {}",
                ids[pos], self.codebook.size
            )));
        }
        let mut z = Vec::with_capacity(ids.len() * self.codebook.dim);
        for &k in ids {
            z.extend_from_slice(self.codebook.entry(k as usize));
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::matrix(ids.len(), self.codebook.dim, z)?);
        let y = self.decode_graph(&mut g, zv, s)?;
        Ok(g.value(y)
            .data()
            .iter()
            .map(|v| (v * self.log_std + self.log_mean).exp())
            .collect())
    }

    /// Decoded contour with unvoiced frames set to 0.
    pub fn decode_gated(&self, ids: &[u32], singer: &str, voiced: &[bool]) -> Result<Vec<f64>> {
        if ids.len() != voiced.len() {
            return Err(Error::shape("decode_gated", ids.len(), voiced.len()));
        }
        let f = self.decode(ids, singer)?;
        Ok(f.into_iter()
            .zip(voiced)
            .map(|(v, &on)| if on { v } else { 0.0 })
            .collect())
    }

    /// Encode then decode, gated by the input voicing.
    pub fn round_trip(&self, f0_hz: &[f64], voiced: &[bool], singer: &str) -> Result<Vec<f64>> {
        let ids = self.encode(f0_hz, voiced, singer)?;
        self.decode_gated(&ids, singer, voiced)
    }

    fn training_pass(&self, g: &mut Graph, x: Tensor, singer: usize) -> Result<(Var, Tensor, Vec<usize>)> {
        let xv = g.constant(x);
        let z = self.encode_graph(g, xv, singer)?;
        let zt = g.value(z).clone();
        let (ids, q) = self.codebook.quantize_rows(&zt)?;
        let zq = g.straight_through(z, q.clone())?;
        let y = self.decode_graph(g, zq, singer)?;
        let rec = g.mse(y, xv)?;
        let qc = g.constant(q);
        let com = g.mse(z, qc)?;
        let com = g.scale(com, self.config.commitment_weight);
        Ok((g.add(rec, com)?, zt, ids))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = F0Meta {
            kind: "f0-codec".into(),
            config: self.config.clone(),
            singers: self.singers.clone(),
            log_mean: self.log_mean,
            log_std: self.log_std,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
        ck.tensors.extend(self.store.named_values());
        ck.tensors.extend(self.codebook.to_tensors());
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: F0Meta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "f0-codec" {
            return Err(Error::Format(format!(
                "expected an f0-codec checkpoint, found {:?}",
                meta.kind
            )));
        }
        let mut c = Self::new(
            meta.config,
            meta.singers,
            meta.log_mean,
            meta.log_std,
            &mut seeded_rng(0),
        )?;
        c.store.load_values(&ck.tensors)?;
        c.codebook = Codebook::from_tensors(&ck.tensors)?;
        if c.codebook.size != c.config.codes || c.codebook.dim != c.config.code_dim {
            return Err(Error::Format("codebook shape disagrees with F0 codec config".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Trains on random windows of the examples. Singers are indexed in sorted
/// order of their ids.
pub fn train_f0_codec(
    examples: &[F0Example],
    config: &F0CodecConfig,
    opts: &TrainOptions,
) -> Result<(F0Codec, TrainLog)> {
    config.validate()?;
    opts.adam.validate()?;
    if opts.steps == 0 || opts.batch_size == 0 {
        return Err(Error::invalid("training budget and batch size must be at least 1"));
    }
    let mut singers: BTreeMap<&str, ()> = BTreeMap::new();
    let mut logs = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.f0_hz.len() != ex.voiced.len() {
            return Err(Error::shape("F0 example", ex.f0_hz.len(), ex.voiced.len()));
        }
        if ex.f0_hz.len() < config.window {
            return Err(Error::invalid(format!(
                "example {i} is shorter than the {}-frame window",
                config.window
            )));
        }
        singers.insert(&ex.singer, ());
        logs.extend(
            ex.f0_hz
                .iter()
                .zip(&ex.voiced)
                .filter(|(f, v)| **v && **f > 0.0)
                .map(|(f, _)| f.ln()),
        );
    }
    if logs.len() < 2 {
        return Err(Error::invalid("F0 training set has fewer than two voiced frames"));
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let std = (logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / logs.len() as f64)
        .sqrt()
        .max(1e-3);
    let singers: Vec<String> = singers.into_keys().map(String::from).collect();
    let mut rng = seeded_rng(opts.seed);
    let mut codec = F0Codec::new(config.clone(), singers, mean, std, &mut rng)?;
    let sample = |rng: &mut crate::numerics::Rng, codec: &F0Codec| -> Result<(Tensor, usize)> {
        let ex = &examples[rng.gen_range(0..examples.len())];
        let s = rng.gen_range(0..=ex.f0_hz.len() - config.window);
        let e = s + config.window;
        let x = codec.prepare(&ex.f0_hz[s..e], &ex.voiced[s..e])?;
        Ok((x, codec.singer_index(&ex.singer)?))
    };
    codec.codebook = match opts.init {
        CodebookInit::Data => {
            let mut pool = Vec::new();
            while pool.len() < config.codes * config.code_dim {
                let (x, s) = sample(&mut rng, &codec)?;
                let mut g = Graph::new();
                let xv = g.constant(x);
                let z = codec.encode_graph(&mut g, xv, s)?;
                pool.extend_from_slice(g.value(z).data());
            }
            Codebook::from_latents(config.codes, config.code_dim, &pool, &mut rng)?
        }
        CodebookInit::Adversarial { distance } => Codebook::adversarial(config.codes, config.code_dim, distance)?,
    };
    let mut log = TrainLog::default();
    let scale = 1.0 / opts.batch_size as f64;
    for step in 1..=opts.steps {
        let mut latents = Vec::new();
        let mut ids = Vec::new();
        let mut total = 0.0;
        for _ in 0..opts.batch_size {
            let (x, s) = sample(&mut rng, &codec)?;
            let mut g = Graph::new();
            let (loss, z, k) = codec.training_pass(&mut g, x, s)?;
            codec.store.accumulate(&g.backward(loss)?, scale);
            total += g.value(loss).data()[0] * scale;
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
        log.losses.push(total);
        if step % 100 == 0 {
            log::debug!("F0 codec step {step}: loss {total:.4}");
        }
    }
    Ok((codec, log))
}
