//! Stage wiring, the Chamfer training loss and the training loop.

mod complete;
pub mod loss;
mod model;
mod train;

pub use complete::{complete, complete_with_checkpoint, CompleteOptions};
pub use loss::chamfer;
pub use model::{
    n2c_forward, refine_forward, Model, N2cGeometry, N2cNet, N2cState, N2cTrace, RefineNet, N2C_PREFIX, REFINE_PREFIX,
};
pub use train::{gt_downsample_seed, scene_loss, scene_noise_seed, train_stage, Scene, Stage, TrainOptions, TrainOutcome, TrainRecord};
