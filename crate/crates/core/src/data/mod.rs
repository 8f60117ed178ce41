//! Raster transforms for the training data: label masks, resizing, border
//! class, paired augmentation, patch grids and a synthetic gland generator.

pub mod augment;
pub mod border;
pub mod image;
pub mod mask;
pub mod patches;
pub mod resize;
pub mod synth;

pub use augment::{augment, AugmentParams, Transform};
pub use border::add_border_class;
pub use image::Image;
pub use mask::{onehot_encode, LabelMask};
pub use patches::{patch_grid, PatchRecord};
pub use resize::{resize_image_bilinear, resize_mask_nearest};
pub use synth::{synth_dataset, SynthConfig, SynthSample};
