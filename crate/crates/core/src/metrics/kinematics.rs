//! Point trajectories, the synthetic pose-to-joint mapping, and the motion
//! reconstruction and facial metrics defined on them.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Part, BODY, EXPRESSION, HAND, JAW, TRANSLATION};

/// Scale from pose units to millimetres in the joint mapping.
pub const MM_PER_UNIT: f64 = 1000.0;

/// `T × P × 3` positions in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSeq {
    pub frames: usize,
    pub points: usize,
    pub fps: f64,
    pub data: Vec<f64>,
}

impl LandmarkSeq {
    pub fn new(frames: usize, points: usize, fps: f64, data: Vec<f64>) -> Result<Self> {
        if points == 0 || frames == 0 {
            return Err(Error::invalid(
                "landmark sequence needs at least one frame and one point",
            ));
        }
        if data.len() != frames * points * 3 {
            return Err(Error::shape("LandmarkSeq", [frames, points, 3], data.len()));
        }
        if !(fps > 0.0) || data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("landmark sequence".into()));
        }
        Ok(Self {
            frames,
            points,
            fps,
            data,
        })
    }

    pub fn point(&self, t: usize, p: usize) -> Vector3<f64> {
        let o = (t * self.points + p) * 3;
        Vector3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.points * 3;
        &self.data[t * n..(t + 1) * n]
    }

    /// Keeps only the listed points.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.points) {
            return Err(Error::invalid(format!(
                "point index {bad} out of range for {} points",
                self.points
            )));
        }
        let mut data = Vec::with_capacity(self.frames * indices.len() * 3);
        for t in 0..self.frames {
            for &p in indices {
                let o = (t * self.points + p) * 3;
                data.extend_from_slice(&self.data[o..o + 3]);
            }
        }
        Self::new(self.frames, indices.len(), self.fps, data)
    }
}

fn triples(frame: &[f64], cols: std::ops::Range<usize>, out: &mut Vec<f64>) {
    let s = &frame[cols];
    for chunk in s.chunks(3) {
        for k in 0..3 {
            out.push(chunk.get(k).copied().unwrap_or(0.0) * MM_PER_UNIT);
        }
    }
}

fn point_count(cols: &[std::ops::Range<usize>]) -> usize {
    cols.iter().map(|r| r.len().div_ceil(3)).sum()
}

fn map_columns(m: &MotionSequence, cols: &[std::ops::Range<usize>]) -> LandmarkSeq {
    let mut data = Vec::with_capacity(m.len() * point_count(cols) * 3);
    for t in 0..m.len() {
        for r in cols {
            triples(m.frame(t), r.clone(), &mut data);
        }
    }
    LandmarkSeq {
        frames: m.len(),
        points: point_count(cols),
        fps: m.fps,
        data,
    }
}

/// Synthetic joint mapping: every consecutive column triple of a pose
/// component is read as one pseudo-joint position (metres → mm), a short
/// final group is zero-padded. Component order is jaw (1), body (21),
/// hand (30), expression (34), translation (1), 87 joints in total.
pub fn joints(m: &MotionSequence) -> LandmarkSeq {
    map_columns(m, &[JAW, BODY, HAND, EXPRESSION, TRANSLATION])
}

/// Joints of a single part, in the same mapping.
pub fn part_joints(m: &MotionSequence, part: Part) -> LandmarkSeq {
    match part {
        Part::Face => map_columns(m, &[JAW, EXPRESSION]),
        Part::Body => map_columns(m, &[BODY, TRANSLATION]),
        Part::Hand => map_columns(m, &[HAND]),
    }
}

/// Facial landmarks: jaw then expression pseudo-joints (35 points).
pub fn face_landmarks(m: &MotionSequence) -> LandmarkSeq {
    part_joints(m, Part::Face)
}

/// Lip landmarks within [`face_landmarks`]: the jaw point and the first ten
/// expression points.
pub const LIP_INDICES: [usize; 11] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

fn check_pair(op: &'static str, a: &LandmarkSeq, b: &LandmarkSeq) -> Result<()> {
    if (a.frames, a.points) != (b.frames, b.points) {
        return Err(Error::shape(op, [b.frames, b.points], [a.frames, a.points]));
    }
    if a.fps != b.fps {
        return Err(Error::invalid(format!("{op}: fps {} vs {}", a.fps, b.fps)));
    }
    Ok(())
}

/// Mean per-joint L2 error.
pub fn mpjpe(gen: &LandmarkSeq, gt: &LandmarkSeq) -> Result<f64> {
    check_pair("mpjpe", gen, gt)?;
    let mut total = 0.0;
    for t in 0..gt.frames {
        for p in 0..gt.points {
            total += (gen.point(t, p) - gt.point(t, p)).norm();
        }
    }
    Ok(total / (gt.frames * gt.points) as f64)
}

/// Similarity transform `s R x + t` minimizing squared error from `src` to
/// `dst` (Umeyama). Returns the aligned copy of `src`.
pub fn similarity_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s <= f64::EPSILON {
        // Degenerate source: all points coincide, best fit is the target mean.
        return vec![mu_d; src.len()];
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut sign = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * vt;
    let scale = (svd.singular_values.component_mul(&sign.diagonal())).sum() / var_s;
    src.iter().map(|s| scale * r * (s - mu_s) + mu_d).collect()
}

/// MPJPE after per-frame similarity alignment of `gen` onto `gt`.
pub fn pa_mpjpe(gen: &LandmarkSeq, gt: &LandmarkSeq) -> Result<f64> {
    check_pair("pa_mpjpe", gen, gt)?;
    let mut total = 0.0;
    for t in 0..gt.frames {
        let g: Vec<_> = (0..gen.points).map(|p| gen.point(t, p)).collect();
        let r: Vec<_> = (0..gt.points).map(|p| gt.point(t, p)).collect();
        let aligned = similarity_align(&g, &r);
        total += aligned.iter().zip(&r).map(|(a, b)| (a - b).norm()).sum::<f64>();
    }
    Ok(total / (gt.frames * gt.points) as f64)
}

/// Mean L2 error of second finite differences (mm per frame²).
pub fn accel_error(gen: &LandmarkSeq, gt: &LandmarkSeq) -> Result<f64> {
    check_pair("accel_error", gen, gt)?;
    if gt.frames < 3 {
        return Err(Error::Undefined {
            metric: "accl",
            reason: "need at least 3 frames".into(),
        });
    }
    let acc = |s: &LandmarkSeq, t: usize, p: usize| s.point(t + 1, p) - 2.0 * s.point(t, p) + s.point(t - 1, p);
    let mut total = 0.0;
    for t in 1..gt.frames - 1 {
        for p in 0..gt.points {
            total += (acc(gen, t, p) - acc(gt, t, p)).norm();
        }
    }
    Ok(total / ((gt.frames - 2) * gt.points) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub mpjpe: f64,
    pub pampjpe: f64,
    pub accl: f64,
}

/// All three reconstruction metrics over the full joint mapping.
pub fn motion_reconstruction(gen: &MotionSequence, gt: &MotionSequence) -> Result<Reconstruction> {
    if gen.len() != gt.len() {
        return Err(Error::shape("motion_reconstruction", gt.len(), gen.len()));
    }
    let (g, r) = (joints(gen), joints(gt));
    Ok(Reconstruction {
        mpjpe: mpjpe(&g, &r)?,
        pampjpe: pa_mpjpe(&g, &r)?,
        accl: accel_error(&g, &r)?,
    })
}

/// Mean squared L2 error over frames and the given lip points (mm²).
pub fn lip_mse(gen: &LandmarkSeq, gt: &LandmarkSeq, lip_indices: &[usize]) -> Result<f64> {
    check_pair("lip_mse", gen, gt)?;
    if lip_indices.is_empty() {
        return Err(Error::invalid("lip_mse needs at least one lip index"));
    }
    let (g, r) = (gen.select(lip_indices)?, gt.select(lip_indices)?);
    let mut total = 0.0;
    for t in 0..r.frames {
        for p in 0..r.points {
            total += (g.point(t, p) - r.point(t, p)).norm_squared();
        }
    }
    Ok(total / (r.frames * r.points) as f64)
}

/// Mean L2 difference of forward-difference velocities (mm/s) over all
/// landmarks.
pub fn lvd(gen: &LandmarkSeq, gt: &LandmarkSeq) -> Result<f64> {
    check_pair("lvd", gen, gt)?;
    if gt.frames < 2 {
        return Err(Error::Undefined {
            metric: "lvd",
            reason: "need at least 2 frames".into(),
        });
    }
    let vel = |s: &LandmarkSeq, t: usize, p: usize| (s.point(t + 1, p) - s.point(t, p)) * s.fps;
    let mut total = 0.0;
    for t in 0..gt.frames - 1 {
        for p in 0..gt.points {
            total += (vel(gen, t, p) - vel(gt, t, p)).norm();
        }
    }
    Ok(total / ((gt.frames - 1) * gt.points) as f64)
}
