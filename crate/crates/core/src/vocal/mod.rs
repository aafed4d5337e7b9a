//! Vocal analysis and the vocal-to-unit codec.

mod analysis;
mod audio;
mod codec;
mod f0codec;
mod kmeans;
mod synth;
mod units;

pub use analysis::{
    analyze, estimate_f0, extract_features, mel_centers, mel_filterbank, VocalAnalysis, DEFAULT_HOP, F0_MAX, F0_MIN,
    LOG_FLOOR, MEL_BINS, RMS_GATE_DBFS, SUPPORTED_RATES, VOICING_THRESHOLD, WINDOW_SECONDS,
};
pub use audio::{read_wav, write_wav};
pub use codec::{VocalClip, VocalCodec};
pub use f0codec::{interpolate_log_f0, train_f0_codec, F0Codec, F0CodecConfig, F0Example};
pub use kmeans::{fit_kmeans, KMeansConfig, KMeansModel};
pub use synth::{resynthesize, synthesize, SynthConfig};
pub use units::{UnitRecord, UnitSeq};
