//! Pitch-track error rates.

use crate::error::{Error, Result};

/// Relative deviation beyond which a frame counts as a gross pitch error.
pub const GROSS_ERROR_RATIO: f64 = 0.2;

/// Percentage of mutually voiced frames whose pitch deviates by more than 20%.
pub fn gpe(f0_ref: &[f64], voiced_ref: &[bool], f0_est: &[f64], voiced_est: &[bool]) -> Result<f64> {
    let n = f0_ref.len();
    if voiced_ref.len() != n || f0_est.len() != n || voiced_est.len() != n {
        return Err(Error::shape(
            "gpe",
            n,
            [voiced_ref.len(), f0_est.len(), voiced_est.len()],
        ));
    }
    let mut both = 0usize;
    let mut gross = 0usize;
    for i in 0..n {
        if voiced_ref[i] && voiced_est[i] {
            both += 1;
            if ((f0_est[i] - f0_ref[i]) / f0_ref[i]).abs() > GROSS_ERROR_RATIO {
                gross += 1;
            }
        }
    }
    if both == 0 {
        return Err(Error::Undefined {
            metric: "gpe",
            reason: "no frame is voiced in both tracks".into(),
        });
    }
    Ok(100.0 * gross as f64 / both as f64)
}

/// Percentage of frames with differing voicing decisions.
pub fn vde(voiced_ref: &[bool], voiced_est: &[bool]) -> Result<f64> {
    if voiced_ref.len() != voiced_est.len() {
        return Err(Error::shape("vde", voiced_ref.len(), voiced_est.len()));
    }
    if voiced_ref.is_empty() {
        return Err(Error::Undefined {
            metric: "vde",
            reason: "empty tracks".into(),
        });
    }
    let wrong = voiced_ref.iter().zip(voiced_est).filter(|(a, b)| a != b).count();
    Ok(100.0 * wrong as f64 / voiced_ref.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let v = [true; 4];
        assert_eq!(gpe(&[100.0; 4], &v, &[100.0, 125.0, 119.0, 100.0], &v).unwrap(), 25.0);
        assert_eq!(
            vde(&[true, true, false, false], &[true, false, false, true]).unwrap(),
            50.0
        );
        assert_eq!(gpe(&[100.0; 4], &v, &[100.0; 4], &v).unwrap(), 0.0);
        assert_eq!(vde(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn undefined_without_shared_voicing() {
        assert!(matches!(
            gpe(&[100.0], &[true], &[100.0], &[false]),
            Err(Error::Undefined { .. })
        ));
        assert!(gpe(&[100.0], &[true], &[], &[]).is_err());
    }
}
