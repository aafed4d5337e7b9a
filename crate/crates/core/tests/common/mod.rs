#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocalmotion::numerics::{
    Conv1d, ConvTranspose1d, Dense, Embedding, Graph, Layer, LayerNorm, ParamStore, SelfAttention, Tensor,
    TransformerBlock, Var,
};

/// Central finite differences against the tape gradient for every parameter
/// element. Returns the largest relative error seen.
pub fn gradcheck(store: &mut ParamStore, f: &dyn Fn(&ParamStore) -> (Graph, Var), h: f64) -> f64 {
    let (g, loss) = f(store);
    let grads = g.backward(loss).expect("backward");
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = grads
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let (gp, lp) = f(store);
            let fp = gp.value(lp).data()[0];
            store.value_mut(id).data_mut()[i] = orig - h;
            let (gm, lm) = f(store);
            let fm = gm.value(lm).data()[0];
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Reduces any tensor to a scalar through a fixed random projection so that
/// every output element carries a distinct weight.
pub fn project_to_scalar(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7 + seed as f64).sin()).collect();
    let wt = g.constant(Tensor::new(shape, w).unwrap());
    let p = g.mul(y, wt).unwrap();
    g.sum(p)
}

const H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn check_layer<L: Layer>(build: impl Fn(&mut ParamStore, &mut ChaCha8Rng) -> (L, usize, usize)) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (layer, rows, cols) = build(&mut store, &mut rng);
        // The input is a parameter too, so input gradients are checked as well.
        let x = store.add("input", random_input(&mut rng, rows, cols));
        let f = |s: &ParamStore| {
            let mut g = Graph::new();
            let xv = g.param(s, x);
            let y = layer.forward(&mut g, s, xv).unwrap();
            let l = project_to_scalar(&mut g, y, seed);
            (g, l)
        };
        worst = worst.max(gradcheck(&mut store, &f, H));
    }
    worst
}

fn dense() -> f64 {
    check_layer(|s, r| {
        let (i, o) = (r.gen_range(1..5), r.gen_range(1..5));
        (Dense::new(s, "d", i, o, r), r.gen_range(1..4), i)
    })
}

fn conv1d() -> f64 {
    check_layer(|s, r| {
        let (ci, co) = (r.gen_range(1..4), r.gen_range(1..4));
        let k = r.gen_range(1..5);
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..2);
        let t = k + r.gen_range(0..6);
        (Conv1d::new(s, "c", ci, co, k, stride, pad, r), t, ci)
    })
}

fn conv_transpose1d() -> f64 {
    check_layer(|s, r| {
        let (ci, co) = (r.gen_range(1..4), r.gen_range(1..4));
        let k = r.gen_range(2..5);
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..2);
        (
            ConvTranspose1d::new(s, "ct", ci, co, k, stride, pad, r),
            r.gen_range(2..6),
            ci,
        )
    })
}

fn layer_norm() -> f64 {
    check_layer(|s, r| {
        let d = r.gen_range(2..6);
        let ln = LayerNorm::new(s, "ln", d);
        // Perturb the affine parameters away from their identity init.
        for id in [ln.gamma, ln.beta] {
            for v in s.value_mut(id).data_mut() {
                *v += r.gen_range(-0.5..0.5);
            }
        }
        (ln, r.gen_range(1..4), d)
    })
}

fn causal_attention() -> f64 {
    check_layer(|s, r| {
        let heads = r.gen_range(1..3);
        let d = heads * r.gen_range(1..3);
        (
            SelfAttention::new(s, "a", d, heads, true, r).unwrap(),
            r.gen_range(1..5),
            d,
        )
    })
}

fn bidirectional_attention() -> f64 {
    check_layer(|s, r| {
        let heads = r.gen_range(1..3);
        let d = heads * r.gen_range(1..3);
        (
            SelfAttention::new(s, "a", d, heads, false, r).unwrap(),
            r.gen_range(1..5),
            d,
        )
    })
}

fn transformer_block() -> f64 {
    check_layer(|s, r| {
        let d = 4;
        (
            TransformerBlock::new(s, "b", d, 2, true, r).unwrap(),
            r.gen_range(1..4),
            d,
        )
    })
}

struct Elementwise(fn(&mut Graph, Var) -> Var);

impl Layer for Elementwise {
    fn forward(&self, g: &mut Graph, _: &ParamStore, x: Var) -> vocalmotion::Result<Var> {
        Ok((self.0)(g, x))
    }
}

fn elementwise() -> f64 {
    [
        check_layer(|_, r| (Elementwise(|g, x| g.relu(x)), r.gen_range(1..4), 3)),
        check_layer(|_, r| (Elementwise(|g, x| g.gelu(x)), r.gen_range(1..4), 3)),
        check_layer(|_, r| (Elementwise(|g, x| g.softmax(x).unwrap()), r.gen_range(1..4), 4)),
        check_layer(|_, r| (Elementwise(|g, x| g.mean_rows(x).unwrap()), r.gen_range(1..4), 3)),
        check_layer(|_, _| (Elementwise(|g, x| g.repeat_row(x, 3).unwrap()), 1, 4)),
        check_layer(|_, r| (Elementwise(|g, x| g.slice_rows(x, 1, 3).unwrap()), r.gen_range(3..6), 3)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn embedding_lookup() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "e", 5, 3, &mut rng);
        let ids: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        let f = |s: &ParamStore| {
            let mut g = Graph::new();
            let y = emb.lookup(&mut g, s, &ids).unwrap();
            let l = project_to_scalar(&mut g, y, seed);
            (g, l)
        };
        worst = worst.max(gradcheck(&mut store, &f, H));
    }
    worst
}

fn losses() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", random_input(&mut rng, 3, 4));
        let b = store.add("b", random_input(&mut rng, 3, 4));
        let targets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
        let f = |s: &ParamStore| {
            let mut g = Graph::new();
            let (av, bv) = (g.param(s, a), g.param(s, b));
            let l1 = g.smooth_l1(av, bv).unwrap();
            let l2 = g.mse(av, bv).unwrap();
            let l3 = g.cross_entropy(av, &targets).unwrap();
            let cat = g.concat_cols(av, bv).unwrap();
            let rows = g.concat_rows(&[cat, cat]).unwrap();
            let m = g.mean(rows);
            let s1 = g.add(l1, l2).unwrap();
            let s2 = g.add(l3, m).unwrap();
            let l = g.add(s1, s2).unwrap();
            (g, l)
        };
        worst = worst.max(gradcheck(&mut store, &f, H));
    }
    worst
}

/// Every layer and loss family with its worst relative gradient error over
/// `SEEDS` random configurations.
pub const LAYER_CHECKS: &[(&str, fn() -> f64)] = &[
    ("dense", dense),
    ("conv1d", conv1d),
    ("conv_transpose1d", conv_transpose1d),
    ("layer_norm", layer_norm),
    ("causal_attention", causal_attention),
    ("bidirectional_attention", bidirectional_attention),
    ("transformer_block", transformer_block),
    ("elementwise", elementwise),
    ("embedding", embedding_lookup),
    ("losses", losses),
];

/// Sixteen distinct lyrics paired with random well-formed streams.
pub fn toy_corpus(layout: &vocalmotion::tokens::VocabLayout, seed: u64) -> Vec<vocalmotion::lm::LmExample> {
    use vocalmotion::tokens::{interleave_motion, interleave_vocal, mix, TokenKind};
    const WORDS: [&str; 16] = [
        "amber", "bright", "cold", "drift", "echo", "flame", "glow", "haze", "iron", "jade", "keen", "lunar", "mist",
        "north", "onyx", "pulse",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = |k: TokenKind| layout.width(k);
    (0..16)
        .map(|i| {
            let frames = 8;
            let groups = 2;
            let sem: Vec<u32> = (0..frames).map(|_| rng.gen_range(0..w(TokenKind::Hubert))).collect();
            let pitch: Vec<u32> = (0..frames).map(|_| rng.gen_range(0..w(TokenKind::Pitch))).collect();
            let face: Vec<u32> = (0..groups).map(|_| rng.gen_range(0..w(TokenKind::Face))).collect();
            let body: Vec<u32> = (0..groups).map(|_| rng.gen_range(0..w(TokenKind::Body))).collect();
            let hand: Vec<u32> = (0..groups).map(|_| rng.gen_range(0..w(TokenKind::Hand))).collect();
            let v = interleave_vocal(layout, &sem, &pitch).unwrap();
            let m = interleave_motion(layout, &face, &body, &hand).unwrap();
            vocalmotion::lm::LmExample {
                clip_id: format!("toy{i:02}"),
                lyric: format!("{} {} line", WORDS[i], WORDS[(i * 7 + 3) % 16]),
                stream: mix(layout, &v, &m),
            }
        })
        .collect()
}

/// Small model used by the memorization experiments.
pub fn toy_lm_config() -> vocalmotion::lm::LMConfig {
    vocalmotion::lm::LMConfig {
        layers: 2,
        heads: 4,
        d_model: 64,
        context_length: 128,
        batch_size: 16,
        epochs: 400,
        text_layers: 1,
        max_text: 48,
        learning_rate: 3e-3,
    }
}

/// Piecewise log-linear glides between log-uniform targets in 60–500 Hz,
/// with short unvoiced gaps.
pub fn synthetic_contours(n: usize, frames: usize, singers: usize, seed: u64) -> Vec<vocalmotion::vocal::F0Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (60f64.ln(), 500f64.ln());
    (0..n)
        .map(|i| {
            let mut f0 = Vec::with_capacity(frames);
            let mut voiced = Vec::with_capacity(frames);
            let mut cur = rng.gen_range(lo..hi);
            while f0.len() < frames {
                let len = rng.gen_range(10..40);
                let next = rng.gen_range(lo..hi);
                for t in 0..len {
                    f0.push((cur + (next - cur) * t as f64 / len as f64).exp());
                    voiced.push(true);
                }
                cur = next;
                if rng.gen_bool(0.3) {
                    for _ in 0..rng.gen_range(2..8) {
                        f0.push(0.0);
                        voiced.push(false);
                    }
                }
            }
            f0.truncate(frames);
            voiced.truncate(frames);
            vocalmotion::vocal::F0Example {
                singer: format!("singer{}", i % singers),
                f0_hz: f0,
                voiced,
            }
        })
        .collect()
}

/// Pooled round-trip GPE (percent) and voiced log-F0 squared error.
pub fn f0_round_trip(codec: &vocalmotion::vocal::F0Codec, held_out: &[vocalmotion::vocal::F0Example]) -> (f64, f64) {
    let (mut r, mut v, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for ex in held_out {
        let out = codec.round_trip(&ex.f0_hz, &ex.voiced, &ex.singer).unwrap();
        r.extend_from_slice(&ex.f0_hz);
        v.extend_from_slice(&ex.voiced);
        e.extend(out);
    }
    let gpe = vocalmotion::metrics::gpe(&r, &v, &e, &v).unwrap();
    let voiced: Vec<usize> = (0..r.len()).filter(|&i| v[i]).collect();
    let mse = voiced.iter().map(|&i| (r[i].ln() - e[i].ln()).powi(2)).sum::<f64>() / voiced.len() as f64;
    (gpe, mse)
}

/// Training setup shared by the codebook-size sweep.
pub fn f0_sweep_options() -> vocalmotion::motion::TrainOptions {
    vocalmotion::motion::TrainOptions {
        steps: 500,
        batch_size: 8,
        adam: vocalmotion::numerics::AdamConfig::with_lr(3e-3),
        resets: true,
        init: vocalmotion::motion::CodebookInit::Data,
        seed: 5,
    }
}

pub fn f0_sweep_config(codes: usize) -> vocalmotion::vocal::F0CodecConfig {
    vocalmotion::vocal::F0CodecConfig {
        codes,
        window: 50,
        ..Default::default()
    }
}

pub fn sine_sweep(f_start: f64, f_end: f64, seconds: f64, sr: u32) -> Vec<f32> {
    let rate = (f_end - f_start) / seconds;
    (0..(seconds * sr as f64) as usize)
        .map(|i| {
            let t = i as f64 / sr as f64;
            (0.5 * (2.0 * std::f64::consts::PI * (f_start * t + 0.5 * rate * t * t)).sin()) as f32
        })
        .collect()
}

/// Full quadratic-table Levenshtein.
pub fn dp_oracle(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + c);
        }
    }
    d[a.len()][b.len()]
}

/// `n` draws of `mean + L z` with `chol` lower triangular.
pub fn gaussian(n: usize, mean: &[f64], chol: &[Vec<f64>], rng: &mut ChaCha8Rng) -> vocalmotion::metrics::FeatureSet {
    use rand_distr::{Distribution, StandardNormal};
    let d = mean.len();
    let rows = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            (0..d)
                .map(|i| mean[i] + (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>())
                .collect()
        })
        .collect();
    vocalmotion::metrics::FeatureSet::new(rows).unwrap()
}

/// Random mean and a well-conditioned lower-triangular factor.
pub fn random_gaussian_params(d: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mean = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let chol = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| match j.cmp(&i) {
                    std::cmp::Ordering::Less => rng.gen_range(-0.5..0.5),
                    std::cmp::Ordering::Equal => rng.gen_range(0.5..1.5),
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect();
    (mean, chol)
}

/// Closed-form Frechet distance, with `Tr((S1 S2)^½)` taken from the
/// eigenvalues of the non-symmetric product.
pub fn fid_closed_form(m1: &[f64], l1: &[Vec<f64>], m2: &[f64], l2: &[Vec<f64>]) -> f64 {
    use nalgebra::DMatrix;
    let d = m1.len();
    let lm = |l: &[Vec<f64>]| DMatrix::from_fn(d, d, |i, j| l[i][j]);
    let (a, b) = (lm(l1), lm(l2));
    let (s1, s2) = (&a * a.transpose(), &b * b.transpose());
    let eig = (&s1 * &s2).complex_eigenvalues();
    let tr_cross: f64 = eig.iter().map(|z| z.sqrt().re).sum();
    let dm: f64 = m1.iter().zip(m2).map(|(x, y)| (x - y) * (x - y)).sum();
    dm + s1.trace() + s2.trace() - 2.0 * tr_cross
}

/// Random codebook with duplicated entries plus a query that is sometimes an
/// entry or a midpoint, so ties occur.
pub fn quantize_case(rng: &mut ChaCha8Rng) -> (vocalmotion::motion::Codebook, Vec<f64>) {
    let k = rng.gen_range(1..48);
    let d = rng.gen_range(1..8);
    let mut entries: Vec<f64> = (0..k * d).map(|_| (rng.gen_range(-8..8) as f64) * 0.5).collect();
    if k > 2 {
        let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
        let row: Vec<f64> = entries[a * d..(a + 1) * d].to_vec();
        entries[b * d..(b + 1) * d].copy_from_slice(&row);
    }
    let z: Vec<f64> = match rng.gen_range(0..3) {
        0 => (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        1 => {
            let a = rng.gen_range(0..k);
            entries[a * d..(a + 1) * d].to_vec()
        }
        _ => {
            let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
            (0..d)
                .map(|i| 0.5 * (entries[a * d + i] + entries[b * d + i]))
                .collect()
        }
    };
    (vocalmotion::motion::Codebook::new(k, d, entries).unwrap(), z)
}

/// Exhaustive scan: all distances first, then the first index at the minimum.
pub fn brute_force_nearest(cb: &vocalmotion::motion::Codebook, z: &[f64]) -> usize {
    let dists: Vec<f64> = (0..cb.size)
        .map(|k| cb.entry(k).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&v| v == min).unwrap()
}

/// Random local ids for one well-formed (vocal, motion) pair.
pub struct TokenCase {
    pub semantic: Vec<u32>,
    pub pitch: Vec<u32>,
    pub face: Vec<u32>,
    pub body: Vec<u32>,
    pub hand: Vec<u32>,
}

pub fn token_case(layout: &vocalmotion::tokens::VocabLayout, rng: &mut ChaCha8Rng) -> TokenCase {
    use vocalmotion::tokens::TokenKind;
    let (nv, nm) = (rng.gen_range(0..60), rng.gen_range(0..30));
    let mut draw =
        |kind: TokenKind, n: usize| -> Vec<u32> { (0..n).map(|_| rng.gen_range(0..layout.width(kind))).collect() };
    TokenCase {
        semantic: draw(TokenKind::Hubert, nv),
        pitch: draw(TokenKind::Pitch, nv),
        face: draw(TokenKind::Face, nm),
        body: draw(TokenKind::Body, nm),
        hand: draw(TokenKind::Hand, nm),
    }
}

/// Decoupling settings that ignore the vocal/motion duration check.
pub fn lenient_decouple() -> vocalmotion::tokens::DecoupleConfig {
    vocalmotion::tokens::DecoupleConfig {
        tolerance_seconds: f64::INFINITY,
        ..Default::default()
    }
}

/// Joint-space MPJPE of one part after passing it through `codec`, with the
/// other columns left at ground truth.
pub fn part_mpjpe(
    codec: &vocalmotion::motion::PartCodec,
    part: vocalmotion::motion::Part,
    seqs: &[vocalmotion::motion::MotionSequence],
) -> f64 {
    use vocalmotion::metrics::{mpjpe, part_joints};
    let mut total = 0.0;
    for m in seqs {
        let r = codec.reconstruct(&m.part(part)).unwrap();
        let mut rec = m.clone();
        let cols = part.columns();
        for t in 0..m.len() {
            for (j, &c) in cols.iter().enumerate() {
                rec.frame_mut(t)[c] = r[t * cols.len() + j];
            }
        }
        total += mpjpe(&part_joints(&rec, part), &part_joints(m, part)).unwrap();
    }
    total / seqs.len() as f64
}

/// Delays `audio` by `seconds`, keeping its length.
pub fn delayed(audio: &[f32], seconds: f64, sr: u32) -> Vec<f32> {
    let k = ((seconds * sr as f64).round() as usize).min(audio.len());
    let mut out = vec![0.0; k];
    out.extend_from_slice(&audio[..audio.len() - k]);
    out
}
