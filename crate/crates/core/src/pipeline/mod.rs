//! Dataset preparation: synthetic fixture, segmentation, loudness,
//! splits and manifests.

pub mod config;
mod dataset;
pub mod fixture;
mod prep;
pub mod run;

pub use dataset::{build_dataset, load_manifest, BuildConfig, ClipManifest, MANIFEST_FILE};
pub use fixture::{generate, FixtureConfig, LyricLine, Note, Song};
pub use prep::{
    make_splits, normalize_loudness, rms, segment, split_counts, Loudness, Segment, SegmentFlag, Split, DEFAULT_RATIOS,
};
