//! Mel-spectrogram codec: a convolutional VAE with 2× temporal compression,
//! its four-stage training loop with a two-scale adversarial critic and R1
//! regularization, a fixed-shape GEMM decoder, and a mono-to-stereo renderer.

pub mod config;
pub mod disc;
pub mod infer;
pub mod losses;
pub mod schedule;
pub mod stereo;
pub mod trainer;
pub mod vae;

pub use config::{CodecConfig, CodecTrainConfig, StageSchedule};
pub use disc::{r1_penalty, Critic, Discriminator};
pub use infer::PlannedDecoder;
pub use schedule::{stage_weights, StageWeights};
pub use stereo::{render_stereo, split_log, MonoToStereo};
pub use trainer::{training_tensors, CodecModel, CodecTrainer, StepReport};
pub use vae::{MelVae, VaePosterior};
