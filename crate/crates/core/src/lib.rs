//! Feature extraction and anomaly scoring for machine-sound anomaly
//! detection.
//!
//! The processing chain is
//!
//! ```text
//! WAV -> condition / pre-emphasis / STFT -> filter bank + log
//!     -> SimAM enhancement -> embedding -> dual-domain 1-NN -> metrics
//! ```
//!
//! Filter banks come in three layouts (`ofb` mel-spaced, `mfb` evenly
//! spaced, `gfb` gammatone). Enhancement is parameter free and can be
//! global, tiled, or chosen per machine type.

pub mod backend;
mod codec;
pub mod corpus;
pub mod dsp;
pub mod embed;
pub mod enhance;
pub mod error;
pub mod featfile;
pub mod filterbank;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use backend::{AnomalyScore, BackendParams, DetectorPair, DomainStats, StatsPopulation};
pub use corpus::{ClipMetadata, Condition, Domain, Split, Waveform};
pub use dsp::{FrameParams, PowerSpectrogram, Window};
pub use embed::{Embedding, EmbeddingSet, Provenance};
pub use enhance::{Enhancement, ModeMap, Scope, SimamParams, WeightMap};
pub use error::{Error, Result};
pub use filterbank::{BankSpec, FilterBank, FilterKind, LogMelSpectrogram};
pub use matrix::Matrix;
pub use metrics::{LabeledScore, MachineReport, SummaryReport};
pub use synth::{AnomalyKind, SynthConfig};
pub use pipeline::{EvalOutcome, PipelineConfig};
