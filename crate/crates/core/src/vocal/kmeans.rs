//! K-means over feature frames, producing the semantic unit inventory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::nearest;
use crate::numerics::{seeded_rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Fit on at most this many rows, subsampled without replacement.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 500,
            max_iters: 30,
            max_points: 20_000,
            seed: 0,
        }
    }
}

/// Fitted centroids plus the share of voiced frames assigned to each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub dim: usize,
    /// `k × dim` row-major.
    pub centroids: Vec<f64>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
    pub voiced_fraction: Vec<f64>,
    pub reseeded: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeansModel {
    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    pub fn assign_row(&self, row: &[f64]) -> usize {
        nearest(&self.centroids, self.dim, row)
    }

    pub fn assign(&self, features: &Tensor) -> Result<Vec<u32>> {
        if features.cols() != self.dim {
            return Err(Error::shape("kmeans assign", self.dim, features.cols()));
        }
        Ok((0..features.rows())
            .map(|r| self.assign_row(features.row(r)) as u32)
            .collect())
    }

    /// Records the voiced share per centroid from frame-aligned flags.
    /// Centroids that receive no frames get 0.
    pub fn set_voicing<'a>(&mut self, frames: impl IntoIterator<Item = (&'a Tensor, &'a [bool])>) -> Result<()> {
        let mut voiced = vec![0usize; self.k];
        let mut total = vec![0usize; self.k];
        for (f, v) in frames {
            if f.rows() != v.len() {
                return Err(Error::shape("set_voicing", f.rows(), v.len()));
            }
            for (r, &is_v) in v.iter().enumerate() {
                let c = self.assign_row(f.row(r));
                total[c] += 1;
                voiced[c] += is_v as usize;
            }
        }
        self.voiced_fraction = voiced
            .iter()
            .zip(&total)
            .map(|(&v, &t)| if t == 0 { 0.0 } else { v as f64 / t as f64 })
            .collect();
        Ok(())
    }

    pub fn is_voiced(&self, k: usize) -> bool {
        self.voiced_fraction.get(k).is_some_and(|&f| f >= 0.5)
    }
}

/// Lloyd iterations from k-means++ seeding. An empty cluster is moved onto the
/// point farthest from its current centroid.
pub fn fit_kmeans(data: &Tensor, cfg: &KMeansConfig) -> Result<KMeansModel> {
    let (n_all, dim) = (data.rows(), data.cols());
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n_all < cfg.k {
        return Err(Error::invalid(format!(
            "{n_all} frames cannot support {} clusters",
            cfg.k
        )));
    }
    if !data.all_finite() {
        return Err(Error::NonFinite("kmeans input".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let rows: Vec<&[f64]> = if n_all > cfg.max_points.max(cfg.k) {
        let mut idx = rand::seq::index::sample(&mut rng, n_all, cfg.max_points.max(cfg.k)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| data.row(i)).collect()
    } else {
        (0..n_all).map(|i| data.row(i)).collect()
    };
    let n = rows.len();
    let k = cfg.k;

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(rows[rng.gen_range(0..n)]);
    let mut d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(rows[pick]);
        let c = &centroids[centroids.len() - dim..];
        for (d, r) in d2.iter_mut().zip(&rows) {
            *d = d.min(dist2(r, c));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut reseeded = 0;
    for _ in 0..cfg.max_iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        let mut dist = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            let c = nearest(&centroids, dim, r);
            dist[i] = dist2(r, &centroids[c * dim..(c + 1) * dim]);
            total += dist[i];
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        inertia.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(*r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                log::debug!("kmeans: reseeding empty cluster {c} at frame {far}");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(rows[far]);
                dist[far] = 0.0;
                reseeded += 1;
            }
        }
    }
    Ok(KMeansModel {
        k,
        dim,
        centroids,
        inertia,
        voiced_fraction: vec![0.0; k],
        reseeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Tensor {
        let mut rng = seeded_rng(3);
        let mut rows = Vec::new();
        for c in 0..4 {
            for _ in 0..50 {
                rows.push(vec![
                    c as f64 * 10.0 + rng.gen::<f64>(),
                    -(c as f64) * 5.0 + rng.gen::<f64>(),
                ]);
            }
        }
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn inertia_never_increases() {
        let m = fit_kmeans(
            &blobs(),
            &KMeansConfig {
                k: 7,
                ..Default::default()
            },
        )
        .unwrap();
        for w in m.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", m.inertia);
        }
    }

    #[test]
    fn separated_blobs_get_one_centroid_each() {
        let data = blobs();
        let m = fit_kmeans(
            &data,
            &KMeansConfig {
                k: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let ids = m.assign(&data).unwrap();
        for b in 0..4 {
            let first = ids[b * 50];
            assert!(ids[b * 50..(b + 1) * 50].iter().all(|&i| i == first));
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = blobs();
        let m = fit_kmeans(
            &data,
            &KMeansConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for j in 0..2 {
            let mean = (0..data.rows()).map(|r| data.get2(r, j)).sum::<f64>() / data.rows() as f64;
            assert!((m.centroid(0)[j] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn two_tight_blobs() {
        let mut rng = seeded_rng(8);
        let normal = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { 10.0 } else { -10.0 };
            rows.push(vec![c + rng.sample(normal), c + rng.sample(normal)]);
        }
        let m = fit_kmeans(
            &Tensor::from_rows(&rows).unwrap(),
            &KMeansConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        for want in [10.0, -10.0] {
            let hit = (0..2).any(|k| m.centroid(k).iter().all(|v| (v - want).abs() < 0.1));
            assert!(hit, "{:?}", m.centroids);
        }
    }

    #[test]
    fn too_few_frames() {
        let data = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(fit_kmeans(
            &data,
            &KMeansConfig {
                k: 3,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn voicing_share() {
        let data = Tensor::from_rows(&[vec![0.0], vec![0.1], vec![10.0], vec![10.1]]).unwrap();
        let mut m = fit_kmeans(
            &data,
            &KMeansConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let flags = [true, true, false, true];
        m.set_voicing([(&data, &flags[..])]).unwrap();
        let low = m.assign_row(&[0.0]);
        assert_eq!(m.voiced_fraction[low], 1.0);
        assert_eq!(m.voiced_fraction[1 - low], 0.5);
    }
}
