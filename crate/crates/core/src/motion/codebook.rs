//! Nearest-neighbour codebook with EMA updates and dead-code resets.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Exact nearest entry by squared Euclidean distance; ties go to the lowest
/// index. `entries` is row-major `K × D`.
pub fn nearest(entries: &[f64], dim: usize, z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in entries.chunks_exact(dim).enumerate() {
        let d: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub size: usize,
    pub dim: usize,
    pub entries: Vec<f64>,
    pub ema_count: Vec<f64>,
    pub ema_sum: Vec<f64>,
    /// Step at which each code was last assigned (or reset).
    pub last_used: Vec<u64>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::invalid("codebook needs K >= 1 and D >= 1"));
        }
        if entries.len() != size * dim {
            return Err(Error::shape("Codebook", [size, dim], entries.len()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entries".into()));
        }
        Ok(Self {
            size,
            dim,
            ema_sum: vec![0.0; size * dim],
            ema_count: vec![0.0; size],
            last_used: vec![0; size],
            entries,
        })
    }

    /// Entries drawn from `latents` (rows of width `dim`), without
    /// replacement while enough distinct rows exist.
    pub fn from_latents(size: usize, dim: usize, latents: &[f64], rng: &mut impl Rng) -> Result<Self> {
        let n = latents.len() / dim.max(1);
        if n == 0 {
            return Err(Error::invalid("no latents to initialize the codebook"));
        }
        let mut entries = Vec::with_capacity(size * dim);
        let mut remaining = size;
        while remaining > 0 {
            let take = remaining.min(n);
            for i in sample(rng, n, take) {
                entries.extend_from_slice(&latents[i * dim..(i + 1) * dim]);
            }
            remaining -= take;
        }
        Self::new(size, dim, entries)
    }

    /// Every code placed far from the origin along one direction, so that
    /// data near the origin all maps to code 0.
    pub fn adversarial(size: usize, dim: usize, distance: f64) -> Result<Self> {
        let mut entries = vec![0.0; size * dim];
        for k in 0..size {
            entries[k * dim] = distance * (1.0 + k as f64 / size as f64);
        }
        Self::new(size, dim, entries)
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn quantize(&self, z: &[f64]) -> Result<(usize, &[f64])> {
        if z.len() != self.dim {
            return Err(Error::shape("quantize", self.dim, z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantize input".into()));
        }
        let k = nearest(&self.entries, self.dim, z);
        Ok((k, self.entry(k)))
    }

    /// Quantizes every row of `latents` (`[n, D]`); returns ids and the
    /// matrix of chosen codes.
    pub fn quantize_rows(&self, latents: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        if latents.shape().len() != 2 || latents.cols() != self.dim {
            return Err(Error::shape(
                "quantize_rows",
                format!("[n, {}]", self.dim),
                latents.shape(),
            ));
        }
        let mut ids = Vec::with_capacity(latents.rows());
        let mut codes = Vec::with_capacity(latents.len());
        for r in 0..latents.rows() {
            let (k, c) = self.quantize(latents.row(r))?;
            ids.push(k);
            codes.extend_from_slice(c);
        }
        Ok((ids, Tensor::matrix(latents.rows(), self.dim, codes)?))
    }

    /// One EMA step over a batch of latents and their assignments.
    /// Entries become `ema_sum / ema_count` wherever the count exceeds `eps`.
    pub fn ema_update(&mut self, latents: &[f64], ids: &[usize], decay: f64, eps: f64, step: u64) {
        let d = self.dim;
        let mut counts = vec![0.0; self.size];
        let mut sums = vec![0.0; self.size * d];
        for (i, &k) in ids.iter().enumerate() {
            counts[k] += 1.0;
            for j in 0..d {
                sums[k * d + j] += latents[i * d + j];
            }
            self.last_used[k] = step;
        }
        for k in 0..self.size {
            self.ema_count[k] = decay * self.ema_count[k] + (1.0 - decay) * counts[k];
            for j in 0..d {
                let s = &mut self.ema_sum[k * d + j];
                *s = decay * *s + (1.0 - decay) * sums[k * d + j];
            }
            if self.ema_count[k] > eps {
                for j in 0..d {
                    self.entries[k * d + j] = self.ema_sum[k * d + j] / self.ema_count[k];
                }
            }
        }
    }

    /// Re-seeds codes idle for at least `staleness` steps from random batch
    /// latents. Returns the number of codes reset.
    pub fn reset_stale(&mut self, latents: &[f64], step: u64, staleness: u64, rng: &mut impl Rng) -> usize {
        let d = self.dim;
        let n = latents.len() / d;
        if n == 0 {
            return 0;
        }
        let stale: Vec<usize> = (0..self.size)
            .filter(|&k| step.saturating_sub(self.last_used[k]) >= staleness)
            .collect();
        if stale.is_empty() {
            return 0;
        }
        let mut picks = Vec::with_capacity(stale.len());
        while picks.len() < stale.len() {
            let take = (stale.len() - picks.len()).min(n);
            picks.extend(sample(rng, n, take));
        }
        for (&k, i) in stale.iter().zip(picks) {
            self.entries[k * d..(k + 1) * d].copy_from_slice(&latents[i * d..(i + 1) * d]);
            self.ema_sum[k * d..(k + 1) * d].fill(0.0);
            self.ema_count[k] = 0.0;
            self.last_used[k] = step;
        }
        stale.len()
    }

    /// Number of distinct codes among `ids`.
    pub fn utilization(&self, ids: &[usize]) -> usize {
        let mut seen = vec![false; self.size];
        ids.iter().filter(|&&k| !std::mem::replace(&mut seen[k], true)).count()
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let (k, d) = (self.size, self.dim);
        vec![
            (
                "codebook.entries".into(),
                Tensor::matrix(k, d, self.entries.clone()).expect("K x D"),
            ),
            (
                "codebook.ema_sum".into(),
                Tensor::matrix(k, d, self.ema_sum.clone()).expect("K x D"),
            ),
            (
                "codebook.ema_count".into(),
                Tensor::new(vec![k], self.ema_count.clone()).expect("K"),
            ),
            (
                "codebook.last_used".into(),
                Tensor::new(vec![k], self.last_used.iter().map(|&s| s as f64).collect()).expect("K"),
            ),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("missing {name}")))
        };
        let e = get("codebook.entries")?;
        let (k, d) = (e.rows(), e.cols());
        let mut cb = Self::new(k, d, e.data().to_vec())?;
        cb.ema_sum = get("codebook.ema_sum")?.data().to_vec();
        cb.ema_count = get("codebook.ema_count")?.data().to_vec();
        cb.last_used = get("codebook.last_used")?.data().iter().map(|&s| s as u64).collect();
        if cb.ema_sum.len() != k * d || cb.ema_count.len() != k || cb.last_used.len() != k {
            return Err(Error::Format("codebook statistics have inconsistent sizes".into()));
        }
        Ok(cb)
    }
}
