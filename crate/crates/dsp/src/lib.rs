//! Audio plumbing: WAV files, STFT and log-mel analysis, Griffin-Lim
//! inversion, a procedural nine-class event corpus and the concatenation
//! rule that turns single-event clips into multi-event ones.

pub mod augment;
pub mod griffin_lim;
pub mod mel;
pub mod stft;
pub mod synth;
pub mod wav;

pub use augment::{temporal_augment_concat, Clip, ConcatRule};
pub use griffin_lim::{griffin_lim, griffin_lim_invert};
pub use mel::{mel_spectrogram, MelAnalyzer, MelConfig, MelSpectrogram};
pub use synth::{synth_event_clip, Event, EventClass, EventTrack, N_CLASSES};
pub use wav::{wav_read, wav_write, Waveform};
