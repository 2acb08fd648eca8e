//! Specialized sequence/attention/patch kernels from which the U-Blocks are
//! composed: selective scans over 2-D traversals, windowed attention, patch
//! merge/expand, and the gated/depthwise conv units.

pub mod attention;
pub mod conv_units;
pub mod patch;
pub mod scan;
pub mod traversal;

pub use attention::{AttentionWeights, WindowAttention};
pub use conv_units::{DepthwiseSeparableConv, GatedSpatialConv};
pub use patch::{depth_to_space, space_to_depth, PatchExpand, PatchMerge};
pub use scan::{ScanConfig, ScanParams, Ss2d};
pub use traversal::{grid_to_seq, seq_to_grid, TraversalOrder};
