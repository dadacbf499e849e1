//! Flow-matching generation of codec latents: conditioning encoders, the
//! multimodal transformer with rate-aligned rotary positions, the CFM
//! objective, an Euler sampler and the training loop.

pub mod conditioning;
pub mod config;
pub mod features;
pub mod flow;
pub mod lr;
pub mod mmdit;
pub mod rope;
pub mod sanity;
pub mod trainer;

pub use conditioning::{
    timestep_embedding, timestep_lipschitz, ConditionBundle, Conditioner, DurationSpec, ModalityInput, ModalityKind,
    Vocab,
};
pub use config::{scaling_dims, ModelConfig, TrainConfig, HEAD_DIM};
pub use features::FeatureFile;
pub use flow::{cfm_loss, euler_integrate, euler_sample, FlowSample, ModelField, VelocityField, DEFAULT_STEPS};
pub use lr::{inverse_lr, inverse_lr_at, LrSchedule};
pub use mmdit::{FlowHead, FlowModel, JointBlock, SingleBlock};
pub use rope::{aligned_rope_apply, rope_angles, RopeConfig};
pub use trainer::{compose_pairwise_batch, FlowExample, FlowTrainer, LatentStats, StepReport, TrainedFlow};
