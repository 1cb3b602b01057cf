//! Dialog corpora: the data model, file readers, the planted-label
//! generator, and batch assembly.

mod batch;
mod dailydialog;
mod interchange;
pub mod synthetic;

pub use batch::{batch_pad, encode_dialog, pad_together, EncodedDialog, PaddedBatch, PaddedDialog};
pub use dailydialog::{load_dailydialog, Split};
pub use interchange::{parse_interchange, read_interchange, write_interchange, RawUtterance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The closed label sets a corpus and a model agree on.
///
/// Index order is significant: it is the class order of every distribution
/// and confusion matrix, and it is recorded in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub emotions: Vec<String>,
    pub satisfaction: Vec<String>,
    pub curves: Vec<String>,
    pub speakers: Vec<String>,
    pub intents: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub const SATISFACTION: [&str; 3] = ["Negative", "Neutral", "Positive"];
pub const CURVES: [&str; 5] = ["Concave", "Still", "Up", "Down", "Convex"];

impl LabelSchema {
    /// Six-emotion customer-service schema with `User`/`Staff` speakers.
    pub fn customer_service() -> Self {
        LabelSchema {
            emotions: strings(&[
                "Anger",
                "Dissatisfaction",
                "Worry",
                "Emotionlessness",
                "Happiness",
                "Comfort",
            ]),
            satisfaction: strings(&SATISFACTION),
            curves: strings(&CURVES),
            speakers: strings(&["User", "Staff"]),
            intents: strings(&[
                "Inquire",
                "Inform",
                "Complain",
                "Request",
                "Thank",
                "Apologize",
                "Reassure",
            ]),
        }
    }

    /// DailyDialog: seven emotions, four dialog acts, two anonymous speakers.
    pub fn daily_dialog() -> Self {
        LabelSchema {
            emotions: strings(&[
                "no_emotion",
                "anger",
                "disgust",
                "fear",
                "happiness",
                "sadness",
                "surprise",
            ]),
            satisfaction: strings(&SATISFACTION),
            curves: strings(&CURVES),
            speakers: strings(&["A", "B"]),
            intents: strings(&["inform", "question", "directive", "commissive"]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, set) in [
            ("emotion", &self.emotions),
            ("satisfaction", &self.satisfaction),
            ("curve", &self.curves),
            ("speaker", &self.speakers),
            ("intent", &self.intents),
        ] {
            if set.is_empty() {
                return Err(Error::Schema(format!("{what} label set is empty")));
            }
            let mut sorted = set.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != set.len() {
                return Err(Error::Schema(format!("{what} label set has duplicates")));
            }
        }
        Ok(())
    }
}

pub(crate) fn label_index(set: &[String], label: &str) -> Option<usize> {
    set.iter().position(|l| l == label)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub speaker: usize,
    pub intent: usize,
    pub emotion: usize,
}

/// An ordered, labeled conversation. Label fields are indices into a
/// [`LabelSchema`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialog {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub satisfaction: Option<usize>,
    pub curve: Option<usize>,
}

impl Dialog {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Checks label indices against `schema` and the non-empty invariants.
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::Contract(format!("dialog {} has no utterances", self.id)));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.tokens.is_empty() {
                return Err(Error::Contract(format!(
                    "dialog {} utterance {i} has no tokens",
                    self.id
                )));
            }
            if u.speaker >= schema.speakers.len()
                || u.intent >= schema.intents.len()
                || u.emotion >= schema.emotions.len()
            {
                return Err(Error::Schema(format!(
                    "dialog {} utterance {i} has a label outside the schema",
                    self.id
                )));
            }
        }
        if self.satisfaction.is_some_and(|s| s >= schema.satisfaction.len())
            || self.curve.is_some_and(|c| c >= schema.curves.len())
        {
            return Err(Error::Schema(format!(
                "dialog {} has a dialog-level label outside the schema",
                self.id
            )));
        }
        Ok(())
    }
}

/// Token sequences of every utterance, for vocabulary building.
pub fn tokens_of(dialogs: &[Dialog]) -> impl Iterator<Item = &[String]> {
    dialogs
        .iter()
        .flat_map(|d| d.utterances.iter().map(|u| u.tokens.as_slice()))
}

/// Whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
