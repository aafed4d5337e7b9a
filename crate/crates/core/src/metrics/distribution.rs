//! Feature-distribution metrics: FID and diversity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One feature vector per clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let set = Self { rows };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if let Some(i) = self.rows.iter().position(|r| r.len() != d) {
            return Err(Error::shape("FeatureSet", d, self.rows[i].len()));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature set".into()));
        }
        Ok(())
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.rows[i][j])
    }
}

/// Sample mean and unbiased covariance.
fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Eigenvalues of a symmetric matrix with tiny negatives clamped to zero.
/// Anything below `-1e-8 * max(1, λmax)` means the input is not PSD.
fn psd_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = -1e-8 * lmax.max(1.0);
    for l in eig.eigenvalues.iter_mut() {
        if *l < tol {
            return Err(Error::Undefined {
                metric: "fid",
                reason: format!("matrix not positive semi-definite (eigenvalue {l:e})"),
            });
        }
        *l = l.max(0.0);
    }
    Ok(eig)
}

fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussian fits of two feature sets.
///
/// `Tr((Σr Σg)^½)` is evaluated as `Tr((Σr^½ Σg Σr^½)^½)`, which has the
/// same eigenvalues but is symmetric.
pub fn fid(real: &FeatureSet, gen: &FeatureSet) -> Result<f64> {
    real.validate()?;
    gen.validate()?;
    if real.dim() != gen.dim() {
        return Err(Error::shape("fid", real.dim(), gen.dim()));
    }
    if real.len() < 2 || gen.len() < 2 {
        return Err(Error::Undefined {
            metric: "fid",
            reason: "need at least 2 rows in each set".into(),
        });
    }
    let (mu_r, cov_r) = moments(&real.matrix());
    let (mu_g, cov_g) = moments(&gen.matrix());
    let s = psd_sqrt(cov_r.clone())?;
    let cross = psd_eigen(&s * &cov_g * &s)?;
    let tr_cross: f64 = cross.eigenvalues.iter().map(|l| l.sqrt()).sum();
    let diff = mu_r - mu_g;
    let v = diff.dot(&diff) + cov_r.trace() + cov_g.trace() - 2.0 * tr_cross;
    Ok(v.max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityKind {
    /// Mean distance of rows from the feature mean.
    #[default]
    Dispersion,
    /// Mean distance over all unordered row pairs.
    Pairwise,
}

impl DiversityKind {
    pub fn label(self) -> &'static str {
        match self {
            DiversityKind::Dispersion => "mean distance to centroid",
            DiversityKind::Pairwise => "mean pairwise distance",
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn diversity(gen: &FeatureSet, kind: DiversityKind) -> Result<f64> {
    gen.validate()?;
    let n = gen.len();
    if n < 2 {
        return Err(Error::Undefined {
            metric: "diversity",
            reason: "need at least 2 rows".into(),
        });
    }
    Ok(match kind {
        DiversityKind::Dispersion => {
            let d = gen.dim();
            let mut mean = vec![0.0; d];
            for r in &gen.rows {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v / n as f64;
                }
            }
            gen.rows.iter().map(|r| dist(r, &mean)).sum::<f64>() / n as f64
        }
        DiversityKind::Pairwise => {
            let mut total = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    total += dist(&gen.rows[i], &gen.rows[j]);
                }
            }
            total / (n * (n - 1) / 2) as f64
        }
    })
}
