//! The differentiable per-point segmentation model, its trainer and
//! checkpoint format.

mod checkpoint;
mod gradcheck;
mod model;
mod train;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint};
pub use gradcheck::input_gradcheck;
pub use model::{predict_labels, Arch, Fields, InputGrad, ModelVars, NeighborPolicy, SegModel};
pub use train::{train, TrainConfig, TrainLog};
