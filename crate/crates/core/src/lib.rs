//! Hierarchical attention networks for dialog emotion analysis.
//!
//! A [`Model`] reads a dialog one utterance at a time. Each utterance is
//! encoded by an utterance capsule that conditions its words on speaker and
//! intent embeddings and emits an emotion distribution; a causal dialog
//! capsule folds the utterance representations into a running state and,
//! at the end, attends over them to classify user satisfaction and the
//! emotion curve of the dialog.
//!
//! ```
//! use chat_capsule::data::{encode_dialog, synthetic, LabelSchema};
//! use chat_capsule::embed::build_vocab;
//! use chat_capsule::{Model, ModelConfig};
//!
//! let schema = LabelSchema::customer_service();
//! let dialogs = synthetic::gen_synthetic(4, 7, &schema);
//! let vocab = build_vocab(dialogs.iter().flat_map(|d| d.utterances.iter().map(|u| &u.tokens[..])), 1)?;
//! let model = Model::new(ModelConfig::toy(schema), vocab, None)?;
//!
//! let encoded = encode_dialog(&dialogs[0], model.vocab());
//! let pred = model.forward_dialog(&encoded.utterances)?;
//! assert_eq!(pred.utterance_probs.len(), dialogs[0].len());
//! # Ok::<(), chat_capsule::Error>(())
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dialog;
pub mod dropout;
pub mod embed;
mod error;
pub mod gradcheck;
mod init;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod utterance;

pub use error::{Error, Result};
pub use model::{
    Architecture, DialogGold, DialogPrediction, LossBreakdown, Model, ModelConfig, StreamOutput,
    StreamSession,
};
pub use tensor::{Tape, Tensor, Var};
pub use utterance::UtteranceInput;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/model.md")]
    struct ModelChapter;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
}
