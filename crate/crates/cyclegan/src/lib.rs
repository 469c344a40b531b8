//! Per-stain cycle-GAN models translating triplex images into synthetic
//! singleplex images, trained on unpaired patches in the optical-density or
//! RGB domain.

mod ablate;
mod config;
mod domain;
mod error;
mod infer;
mod nets;
mod pool;
mod train;

pub use ablate::{ablate_domain, ablation_report, evaluate_arm, l1_error, sharpness, AblationArm, AblationReport};
pub use config::{CycleGanConfig, DiscriminatorKind, Domain};
pub use domain::{crop, image_to_tensor, planar_to_image, stack, tensor_to_image, unstack};
pub use error::{CycleGanError, Result};
pub use infer::{checkpoint_path, infer_singleplex, load_models, save_models, tile_apply, tile_origins, GanSynthesizer};
pub use nets::{CycleGanModels, Discriminator, Generator, PREFIXES};
pub use pool::ImagePool;
pub use train::{train, LossRecord, TrainData, TrainState};
