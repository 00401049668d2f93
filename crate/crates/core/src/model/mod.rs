//! The dual-head policy: transformer backbone, language-model head, and the
//! recommendation head (inner product against an item embedding table).

pub mod checkpoint;
pub mod config;
pub mod item;
pub mod params;
pub mod transformer;
pub mod tree;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::ModelConfig;
pub use params::{LayerParams, PolicyParams};
pub use transformer::{
    backward_segment, forward, forward_segment, DecodeState, KvCache, KvGrad, SegmentCache,
};
pub use item::{encode_item, encode_items, score_items, HiddenState, ItemEmbeddingTable, Pooling};
pub use tree::{NodeId, SegmentTree};
