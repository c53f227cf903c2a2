//! Pixel-wise COT regression trained with a masked MAE loss.

mod batch;
mod loss;
mod model;
mod train;

pub use batch::{copy_paste_augment, cot_boundary_count, hflip_augment, TrainBatch};
pub use loss::{masked_mae, masked_mae_grad, MaeNormalization};
pub use model::{pixel_features, CotRegressor, PixelMlp, NUM_FEATURES};
pub use train::{
    batch_loss_and_grad, pixel_mse, predict_cot_image, train_regressor, InputSpec, LabelMode, RegressorConfig,
    StagedLabels, TrainFrame,
};
