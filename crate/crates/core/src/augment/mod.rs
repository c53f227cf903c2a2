//! Label augmentation: extending path labels over terrain masks, then
//! labeling poorly reconstructed masks as non-traversable.

mod confidence;
mod extend;
mod masks;
mod recon;

pub use confidence::{select_decision_boundary, BoundaryPolicy, DecisionBoundary, MIN_THETA};
pub use extend::{
    extend_labels_by_masks, label_nontraversable_by_confidence, label_unknown_as_nontraversable, mask_status,
    MaskStatus,
};
pub use masks::{connected_components, FileMaskProvider, MaskProvider, MaskSet, OracleMaskProvider};
pub use recon::{
    downsample_mask, loss_and_grad, mask_errors, reconstruction_losses, train_reconstruction_model, ReconConfig,
    ReconEpoch, ReconLossOptions, ReconLosses, ReconSample, ReconTrace, ReconstructionModel,
};
