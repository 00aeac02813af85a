//! Video inpainting by global patch optimisation.
//!
//! The occluded region of a video is filled by alternating an approximate
//! nearest-neighbour search over spatio-temporal patches (PatchMatch) with a
//! reconstruction step that aggregates the matched patches, inside a
//! coarse-to-fine pyramid. Texture features steer the matching towards
//! patches of similar texture, and an optional affine pre-alignment
//! compensates for camera motion.

pub mod analysis;
pub mod distance;
pub mod error;
pub mod features;
pub mod init;
pub mod io;
pub mod motion;
pub mod patchmatch;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod volume;

pub use analysis::{arias_energy, simulate_patch_ambiguity, AmbiguityEstimate, AmbiguityShape, SoftWeights};
pub use distance::{partial_patch_distance_sq, patch_distance_sq, DistanceParams, PatchCost};
pub use error::{Error, Result};
pub use features::{compute_texture_features, default_feature_radius};
pub use io::{load_mask, load_sequence, save_log, save_sequence, ConfigFile, SequenceSpec};
pub use motion::{align_video, estimate_affine, AffineChain, AffineParams, MotionEstimate};
pub use patchmatch::{ann_search, brute_force_nn, random_init, AnnField, SearchParams};
pub use pipeline::{energy, inpaint, inpaint_detailed, EnergyRow, InpaintReport, PipelineConfig};
pub use reconstruct::{reconstruct, ReconstructionMode};
pub use volume::{
    BoolVolume, Dims, OcclusionMask, PatchShape, Shift, ShiftMap, TextureVolume, VideoVolume, Volume, Voxel,
};
