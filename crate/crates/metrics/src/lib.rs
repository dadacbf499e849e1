//! Objective metrics for generated audio: waveform and spectral distances,
//! Fréchet distance and posterior KL over classifier outputs, the small
//! event classifier that produces those outputs, and the evaluation report.

pub mod classifier;
pub mod frechet;
pub mod posterior;
pub mod report;
pub mod signal;

pub use classifier::{embed_and_classify, ClassifierConfig, ToyClassifier};
pub use frechet::{frechet_distance, EmbeddingSet};
pub use posterior::{kl_posterior, ClassifierPosterior};
pub use report::{evaluate_manifest, EvalPair, EvalReport};
pub use signal::{lsd, mcd, mel_stft_loss, sdr, si_sdr, stft_magnitude, Magnitude, MetricConfig, Spectral};
