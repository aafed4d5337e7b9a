use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub top_k: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_k: 20,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.top_k == 0 || self.top_k > vocab {
            return Err(Error::invalid(format!("top_k {} outside 1..={vocab}", self.top_k)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Full-vocabulary distribution that keeps the `k` largest logits (lowest
/// index first among ties), divides them by the temperature and
/// renormalizes. Every other entry is exactly 0.
pub fn top_k_distribution(logits: &[f64], top_k: usize, temperature: f64) -> Result<Vec<f64>> {
    if top_k == 0 || !(temperature > 0.0) {
        return Err(Error::invalid("top_k must be at least 1 and temperature positive"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(top_k.min(logits.len()));
    let max = logits[order[0]] / temperature;
    let mut p = vec![0.0; logits.len()];
    let mut z = 0.0;
    for &i in &order {
        p[i] = (logits[i] / temperature - max).exp();
        z += p[i];
    }
    for &i in &order {
        p[i] /= z;
    }
    Ok(p)
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
pub(crate) fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_of_three_by_hand() {
        let p = top_k_distribution(&[2.0, 1.0, 0.0], 2, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e * e / (e * e + e)).abs() < 1e-12);
        assert!((p[1] - e / (e * e + e)).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn top_one_is_argmax_at_any_temperature() {
        for t in [0.01, 1.0, 100.0] {
            let p = top_k_distribution(&[0.3, 2.0, 2.0, -1.0], 1, t).unwrap();
            assert_eq!(p, vec![0.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn support_size_is_k() {
        let l: Vec<f64> = (0..10).map(|i| (i as f64 * 1.7).sin()).collect();
        for k in 1..=12 {
            let p = top_k_distribution(&l, k, 0.7).unwrap();
            assert_eq!(p.iter().filter(|&&x| x > 0.0).count(), k.min(10));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn draw_respects_zeros() {
        let p = [0.0, 0.25, 0.0, 0.75];
        assert_eq!(draw(&p, 0.0), 1);
        assert_eq!(draw(&p, 0.3), 3);
        assert_eq!(draw(&p, 0.999_999), 3);
    }
}
