//! SegNet and U-Net as declarative block lists, plus the executable models
//! and checkpoints built from them.

mod checkpoint;
mod model;
mod spec;

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{image_to_tensor, scoremaps_to_tensor, tensor_to_scoremaps, Model};
pub(crate) use spec::hex;
pub use spec::{
    build_by_name, build_segnet, build_segnet_scaled, build_unet, BlockKind, BlockSpec, InputShape, LayerSpec,
    ModelSpec, ParamCountReport, ShapeChain, PARAM_CONVENTION,
};
