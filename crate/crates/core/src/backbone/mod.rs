//! Relation-network temporal backbone: clip features of every relation
//! order, entropy-based clip weights, temporal aggregation and the head.

pub mod checkpoint;
mod model;
mod sequence;

pub use model::{
    clip_weight, sample_subsets, temporal_feature, BatchGraph, ClipFeatureSet, ForwardOptions, ModelDims,
    RelationModule, RelationModuleBank, TargetModel, TemporalFeature, TemporalModel,
};
pub use sequence::FrameFeatureSequence;

#[cfg(test)]
mod tests;
