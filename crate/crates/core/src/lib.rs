pub mod geometry;
pub mod learned_codec;
pub mod metrics;
pub mod octree_codec;
pub mod tensor;
