//! Layer graphs, architecture builders, the classification head, freezing
//! and weight serialization.

pub mod builders;
pub mod graph;
pub mod head;
pub mod weights;

pub use builders::{
    build_inception_s, build_inception_v3, build_resnet50, build_resnet_s, build_vgg16, build_vgg_s, Arch, SmallConfig,
    BACKBONE,
};
pub use graph::{FreezeReport, Init, ModelGraph, Node, NodeId, Op, Param, ParamId, ParamKind};
pub use head::{attach_head, initialize_head, HeadConfig, HeadPool, HEAD};
pub use weights::{decode, encode, load_entries, load_weights, params_checksum, read_weights, save_weights, LoadReport, StoredTensor};
