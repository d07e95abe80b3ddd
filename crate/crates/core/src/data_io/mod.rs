//! Dataset layout on disk: numbered PNG frames plus a JSON manifest, PLY
//! checkpoints, PFM ground-truth depth, and a synthetic-sequence generator
//! used as the end-to-end test oracle.

mod manifest;
mod pfm;
mod ply;
mod png_io;
mod synth;

pub use manifest::{load_dataset, save_manifest, DatasetManifest, FrameEntry, Intrinsics};
pub use pfm::{read_pfm, write_pfm};
pub use ply::{export_ply, load_ply};
pub use png_io::{
    read_color_png, read_depth_png, read_mask_png, write_color_png, write_depth_png,
    write_mask_png,
};
pub use synth::{generate_synthetic, GroundTruthFrame, load_gt_sidecar, OccluderBar, SyntheticScene};
