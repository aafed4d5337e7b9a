//! Prefix-conditioned decoder-only transformer over the unified vocabulary.
//!
//! The lyric is encoded by a small bidirectional encoder; its output rows are
//! placed before the token embeddings and the whole sequence runs through
//! causal pre-norm blocks. The last text row (the end mark) predicts the
//! first stream token.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::{draw, top_k_distribution, SamplerConfig};
use super::text::{text_vocab_size, tokenize_lyric};
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, gelu_value, seeded_rng, AdamConfig, Checkpoint, Dense, Embedding, Graph, Layer, LayerNorm, ParamStore,
    Tensor, TransformerBlock, Var, LN_EPS,
};
use crate::tokens::{decouple, DecoupleConfig, DecoupleWarning, Policy, TokenStream, VocabLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Text rows plus stream tokens.
    pub context_length: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub text_layers: usize,
    /// Longest tokenized lyric accepted.
    pub max_text: usize,
    pub learning_rate: f64,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl LMConfig {
    pub fn desk() -> Self {
        Self {
            layers: 4,
            heads: 4,
            d_model: 128,
            context_length: 1024,
            batch_size: 16,
            epochs: 20,
            text_layers: 1,
            max_text: 256,
            learning_rate: 1e-3,
        }
    }

    /// Full-size shape: 12 layers, 8 heads, batch 384, 100 epochs.
    pub fn paper() -> Self {
        Self {
            layers: 12,
            heads: 8,
            d_model: 512,
            context_length: 4096,
            batch_size: 384,
            epochs: 100,
            text_layers: 2,
            max_text: 512,
            learning_rate: 2e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.batch_size == 0 || self.max_text < 3 {
            return Err(Error::invalid("LM sizes must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.max_text >= self.context_length {
            return Err(Error::invalid("context must be longer than the longest lyric"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Lyric ids and the encoder output rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoding {
    pub tokens: Vec<usize>,
    /// `N_text × d_model`.
    pub h: Tensor,
}

/// A training pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmExample {
    pub clip_id: String,
    pub lyric: String,
    pub stream: TokenStream,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrainOptions {
    pub seed: u64,
    /// Replace every target with a fresh uniform draw at each step
    /// (control run: nothing is learnable).
    pub label_noise: bool,
    /// Stop early once an epoch's mean loss falls below this.
    pub target_loss: Option<f64>,
}

/// Result of sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub stream: TokenStream,
    /// Budget or context ran out before the end token.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub config: LMConfig,
    pub layout: VocabLayout,
    pub store: ParamStore,
    text_embed: Embedding,
    text_pos: Embedding,
    text_blocks: Vec<TransformerBlock>,
    tok_embed: Embedding,
    pos: Embedding,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    head: Dense,
}

#[derive(Serialize, Deserialize)]
struct LmMeta {
    kind: String,
    config: LMConfig,
    layout: VocabLayout,
}

/// A stream the model may be trained on: strict decoupling succeeds with no
/// structural warnings.
pub fn check_well_formed(layout: &VocabLayout, stream: &TokenStream) -> Result<()> {
    stream.validate(layout)?;
    let s = layout.specials();
    if stream.ids.first() != Some(&s.start_vocal) || stream.ids.last() != Some(&s.end) {
        return Err(Error::invalid(
            "stream must start with start_vocal and end with the end token",
        ));
    }
    let cfg = DecoupleConfig {
        policy: Policy::Strict,
        tolerance_seconds: f64::INFINITY,
        ..DecoupleConfig::default()
    };
    let r = decouple(layout, stream, &cfg)?;
    let structural = r
        .warnings
        .iter()
        .any(|w| !matches!(w, DecoupleWarning::DurationMismatch { .. }));
    if structural || r.truncated_tail > 0 {
        return Err(Error::invalid(format!("stream is not well formed: {:?}", r.warnings)));
    }
    Ok(())
}

impl LanguageModel {
    /// Fresh model; the output head starts at zero so the initial prediction
    /// is uniform.
    pub fn new(config: LMConfig, layout: VocabLayout, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        layout.validate()?;
        let d = config.d_model;
        let v = layout.total() as usize;
        let mut store = ParamStore::new();
        let text_embed = Embedding::new(&mut store, "text.embed", text_vocab_size(), d, rng);
        let text_pos = Embedding::new(&mut store, "text.pos", config.max_text, d, rng);
        let text_blocks = (0..config.text_layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("text.block{i}"), d, config.heads, false, rng))
            .collect::<Result<_>>()?;
        let tok_embed = Embedding::new(&mut store, "tok.embed", v, d, rng);
        let pos = Embedding::new(&mut store, "pos", config.context_length, d, rng);
        let blocks = (0..config.layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("block{i}"), d, config.heads, true, rng))
            .collect::<Result<_>>()?;
        let ln_f = LayerNorm::new(&mut store, "ln_f", d);
        let head = Dense::zeros(&mut store, "head", d, v);
        Ok(Self {
            config,
            layout,
            store,
            text_embed,
            text_pos,
            text_blocks,
            tok_embed,
            pos,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.total() as usize
    }

    fn text_tokens(&self, lyric: &str) -> Result<Vec<usize>> {
        let t = tokenize_lyric(lyric)?;
        if t.len() > self.config.max_text {
            return Err(Error::invalid(format!(
                "lyric has {} tokens, limit {}",
                t.len(),
                self.config.max_text
            )));
        }
        Ok(t)
    }

    fn text_graph(&self, g: &mut Graph, tokens: &[usize]) -> Result<Var> {
        let e = self.text_embed.lookup(g, &self.store, tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let p = self.text_pos.lookup(g, &self.store, &positions)?;
        let mut h = g.add(e, p)?;
        for b in &self.text_blocks {
            h = b.forward(g, &self.store, h)?;
        }
        Ok(h)
    }

    pub fn encode_text(&self, lyric: &str) -> Result<TextEncoding> {
        let tokens = self.text_tokens(lyric)?;
        let mut g = Graph::new();
        let h = self.text_graph(&mut g, &tokens)?;
        let h = g.value(h).clone();
        Ok(TextEncoding { tokens, h })
    }

    fn check_prefix(&self, n_text: usize, prefix: &[u32]) -> Result<()> {
        if n_text + prefix.len() > self.config.context_length {
            return Err(Error::invalid(format!(
                "{} text rows + {} tokens exceed the context of {}",
                n_text,
                prefix.len(),
                self.config.context_length
            )));
        }
        if let Some(p) = prefix.iter().position(|&id| id >= self.layout.total()) {
            return Err(Error::invalid(format!(
                "token {} at position {p} outside vocabulary",
                prefix[p]
            )));
        }
        Ok(())
    }

    /// Logits for positions `0..=len(prefix)`: row `i` predicts token `i`.
    fn logits_graph(&self, g: &mut Graph, text: Var, prefix: &[u32]) -> Result<Var> {
        let n_text = g.value(text).rows();
        self.check_prefix(n_text, prefix)?;
        let mut x = text;
        if !prefix.is_empty() {
            let ids: Vec<usize> = prefix.iter().map(|&t| t as usize).collect();
            let e = self.tok_embed.lookup(g, &self.store, &ids)?;
            let positions: Vec<usize> = (n_text..n_text + ids.len()).collect();
            let p = self.pos.lookup(g, &self.store, &positions)?;
            let t = g.add(e, p)?;
            x = g.concat_rows(&[text, t])?;
        }
        for b in &self.blocks {
            x = b.forward(g, &self.store, x)?;
        }
        let x = self.ln_f.forward(g, &self.store, x)?;
        let x = g.slice_rows(x, n_text - 1, n_text + prefix.len())?;
        self.head.forward(g, &self.store, x)
    }

    /// `(len(prefix) + 1) × V` next-token distributions.
    pub fn lm_logits(&self, prefix: &TokenStream, text: &TextEncoding) -> Result<Tensor> {
        let mut g = Graph::new();
        let t = g.constant(text.h.clone());
        let l = self.logits_graph(&mut g, t, &prefix.ids)?;
        Ok(g.value(l).clone())
    }

    /// Teacher-forced mean cross-entropy (nats/token) of one example, on a tape.
    pub fn loss_graph(&self, g: &mut Graph, lyric: &str, stream: &[u32]) -> Result<Var> {
        if stream.is_empty() {
            return Err(Error::invalid("empty stream"));
        }
        let tokens = self.text_tokens(lyric)?;
        let text = self.text_graph(g, &tokens)?;
        let logits = self.logits_graph(g, text, &stream[..stream.len() - 1])?;
        let targets: Vec<usize> = stream.iter().map(|&t| t as usize).collect();
        g.cross_entropy(logits, &targets)
    }

    pub fn loss(&self, lyric: &str, stream: &TokenStream) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, lyric, &stream.ids)?;
        Ok(g.value(l).data()[0])
    }

    /// Samples from `start_vocal` until the end token, `max_tokens` new
    /// tokens, or the context limit.
    pub fn generate(&self, lyric: &str, sampler: &SamplerConfig, max_tokens: usize) -> Result<Generated> {
        sampler.validate(self.vocab_size())?;
        let text = self.encode_text(lyric)?;
        let mut rng = seeded_rng(sampler.seed);
        let mut cache = Cache::new(self.blocks.len());
        let n_text = text.tokens.len();
        for r in 0..n_text {
            self.step(&mut cache, text.h.row(r))?;
        }
        let s = self.layout.specials();
        let mut ids = vec![s.start_vocal];
        let mut truncated = true;
        for _ in 0..max_tokens {
            if n_text + ids.len() > self.config.context_length {
                break;
            }
            let last = *ids.last().expect("nonempty");
            let logits = self.step(&mut cache, &self.token_row(last, n_text + ids.len() - 1))?;
            let p = top_k_distribution(&logits, sampler.top_k, sampler.temperature)?;
            let next = draw(&p, rng.gen::<f64>()) as u32;
            ids.push(next);
            if next == s.end {
                truncated = false;
                break;
            }
        }
        Ok(Generated {
            stream: TokenStream::new(ids),
            truncated,
        })
    }

    fn token_row(&self, id: u32, position: usize) -> Vec<f64> {
        let e = self.store.value(self.tok_embed.table).row(id as usize);
        let p = self.store.value(self.pos.table).row(position);
        e.iter().zip(p).map(|(a, b)| a + b).collect()
    }

    /// One row through the causal stack with cached keys and values;
    /// returns that row's logits.
    fn step(&self, cache: &mut Cache, row: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = row.to_vec();
        for (l, b) in self.blocks.iter().enumerate() {
            let a = self.ln_row(&b.ln_attn, &x);
            let q = self.dense_row(&b.attn.query, &a);
            cache.keys[l].extend(self.dense_row(&b.attn.key, &a));
            cache.values[l].extend(self.dense_row(&b.attn.value, &a));
            let n = cache.keys[l].len() / d;
            let mut att = vec![0.0; d];
            let mut w = vec![0.0; n];
            for h in 0..heads {
                let qh = &q[h * dh..(h + 1) * dh];
                for (j, wj) in w.iter_mut().enumerate() {
                    let kj = &cache.keys[l][j * d + h * dh..j * d + (h + 1) * dh];
                    *wj = qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                crate::numerics::softmax_in_place(&mut w);
                for (j, &wj) in w.iter().enumerate() {
                    let vj = &cache.values[l][j * d + h * dh..j * d + (h + 1) * dh];
                    for (o, v) in att[h * dh..(h + 1) * dh].iter_mut().zip(vj) {
                        *o += wj * v;
                    }
                }
            }
            let o = self.dense_row(&b.attn.output, &att);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let m = self.ln_row(&b.ln_mlp, &x);
            let hdn: Vec<f64> = self.dense_row(&b.fc_in, &m).into_iter().map(gelu_value).collect();
            let o = self.dense_row(&b.fc_out, &hdn);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        }
        let x = self.ln_row(&self.ln_f, &x);
        let out = self.dense_row(&self.head, &x);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(out)
    }

    fn dense_row(&self, layer: &Dense, x: &[f64]) -> Vec<f64> {
        let w = self.store.value(layer.weight);
        let mut y = self.store.value(layer.bias).data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, wv) in y.iter_mut().zip(w.row(i)) {
                *o += xi * wv;
            }
        }
        y
    }

    fn ln_row(&self, ln: &LayerNorm, x: &[f64]) -> Vec<f64> {
        let c = x.len() as f64;
        let mean = x.iter().sum::<f64>() / c;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let is = 1.0 / (var + LN_EPS).sqrt();
        let (g, b) = (self.store.value(ln.gamma).data(), self.store.value(ln.beta).data());
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - mean) * is * g[j] + b[j])
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = LmMeta {
            kind: "lm".into(),
            config: self.config.clone(),
            layout: self.layout.clone(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
        ck.tensors.extend(self.store.named_values());
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: LmMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != "lm" {
            return Err(Error::Format(format!(
                "expected an lm checkpoint, found {:?}",
                meta.kind
            )));
        }
        let mut m = Self::new(meta.config, meta.layout, &mut seeded_rng(0))?;
        m.store.load_values(&ck.tensors)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

struct Cache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl Cache {
    fn new(layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
        }
    }
}

/// Teacher-forced training with Adam. Returns the model and the mean loss
/// (nats/token) of every step.
pub fn train_lm(
    corpus: &[LmExample],
    layout: &VocabLayout,
    config: &LMConfig,
    opts: &LmTrainOptions,
) -> Result<(LanguageModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty training corpus"));
    }
    let mut rng = seeded_rng(opts.seed);
    let mut model = LanguageModel::new(config.clone(), layout.clone(), &mut rng)?;
    for ex in corpus {
        let tag = |e: Error| Error::invalid(format!("clip {}: {e}", ex.clip_id));
        check_well_formed(layout, &ex.stream).map_err(tag)?;
        let n_text = model.text_tokens(&ex.lyric).map_err(tag)?.len();
        model
            .check_prefix(n_text, &ex.stream.ids[..ex.stream.len() - 1])
            .map_err(tag)?;
    }
    let adam = AdamConfig::with_lr(config.learning_rate);
    let vocab = layout.total();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = Vec::new();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let tokens: usize = batch.iter().map(|&i| corpus[i].stream.len()).sum();
            let mut total = 0.0;
            for &i in batch {
                let ex = &corpus[i];
                let noisy;
                let stream = if opts.label_noise {
                    noisy = (0..ex.stream.len())
                        .map(|_| rng.gen_range(0..vocab))
                        .collect::<Vec<_>>();
                    &noisy
                } else {
                    &ex.stream.ids
                };
                let mut g = Graph::new();
                let l = model.loss_graph(&mut g, &ex.lyric, stream)?;
                let w = ex.stream.len() as f64 / tokens as f64;
                model.store.accumulate(&g.backward(l)?, w);
                total += g.value(l).data()[0] * w;
            }
            step += 1;
            adam_step(&mut model.store, &adam, step)?;
            losses.push(total);
            epoch_loss += total * tokens as f64;
            epoch_tokens += tokens;
        }
        let mean = epoch_loss / epoch_tokens as f64;
        log::debug!("lm epoch {epoch}: {mean:.4} nats/token");
        if opts.target_loss.is_some_and(|t| mean < t) {
            break;
        }
    }
    Ok((model, losses))
}
