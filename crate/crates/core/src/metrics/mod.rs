//! Evaluation metrics for generated motion and vocals.

mod beats;
mod distribution;
mod kinematics;
mod pitch;
mod report;
mod text;

pub use beats::{
    audio_beats, beat_constancy, beat_constancy_from_beats, joint_speed, kinematic_beats, onset_envelope, DEFAULT_SIGMA,
};
pub use distribution::{diversity, fid, DiversityKind, FeatureSet};
pub use kinematics::{
    accel_error, face_landmarks, joints, lip_mse, lvd, motion_reconstruction, mpjpe, pa_mpjpe, part_joints,
    similarity_align, LandmarkSeq, Reconstruction, LIP_INDICES, MM_PER_UNIT,
};
pub use pitch::{gpe, vde, GROSS_ERROR_RATIO};
pub use report::{EvalReport, Table, GENERATION_COLUMNS, RECONSTRUCTION_COLUMNS, VOCAL_COLUMNS};
pub use text::{cer, edit_distance, normalize_transcript};
