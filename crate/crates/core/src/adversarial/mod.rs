//! Monte-Carlo dropout discriminators, the curriculum over their number, and the
//! gradient-reversal training loop for every adaptation method.

mod config;
mod loss;
mod masks;
mod schedule;
mod train;

pub use config::{
    AdaptationConfig, Architecture, MaskResample, Method, DEFAULT_CURRICULUM_RATE,
    DEFAULT_DROPOUT, DEFAULT_LAMBDA,
};
pub use loss::{
    discriminator_forward_k, domain_gradient_at_features, domain_loss, joint_loss, Aggregation,
    DomainLoss, JointLoss,
};
pub use masks::{sample_masks, MaskSet};
pub use schedule::{curriculum_k, CurriculumSchedule};
pub use train::{
    batch_gradients, discriminator_count, multi_head_baseline, train_adaptation, AdaptModel,
    BatchLosses, ModelGradients, ModelSpecs, TrainOutput,
};
