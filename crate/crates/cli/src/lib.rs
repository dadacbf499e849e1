//! Command implementations behind the `foley` binary: corpus synthesis, codec
//! and flow training, generation, evaluation and inference benchmarking.

pub mod commands;
pub mod corpus;

use std::path::Path;

use foley_core::config::ConfigFile;
use foley_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use commands::{
    bench_infer, evaluate, generate, train_classifier, train_codec, train_flow, Condition, GenerateConfig,
    CODEC_CKPT, CODEC_CSV, FLOW_CKPT, FLOW_CSV,
};
pub use corpus::{synth_corpus, DatasetManifest, ManifestRow, ModalityMask, SynthConfig};

pub const SECTIONS: &[&str] = &["synth", "codec", "codec_train", "flow", "flow_train", "classifier", "eval", "generate"];

/// The parsed `--config` file.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    file: ConfigFile,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        file.ensure_sections(SECTIONS)?;
        Ok(Self { file })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file = ConfigFile::parse(text)?;
        file.ensure_sections(SECTIONS)?;
        Ok(Self { file })
    }

    pub fn section<C: Serialize + DeserializeOwned + Default>(&self, name: &str) -> Result<C> {
        self.file.apply(name, &C::default())
    }
}

/// Process exit status for an error: 2 bad input, 3 bad config, 4 numeric failure, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Dimension(_) | Error::Json(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Config(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}
