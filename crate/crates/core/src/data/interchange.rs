//! Line-delimited JSON interchange format.
//!
//! One dialog per line:
//!
//! ```text
//! {"id": "d1", "satisfaction": "Positive", "curve": "Up",
//!  "utterances": [{"text": "...", "speaker": "User", "intent": "Inquire", "emotion": "Worry"}]}
//! ```
//!
//! `satisfaction` and `curve` are optional. Text is tokenized on whitespace.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{label_index, tokenize, Dialog, LabelSchema, Utterance};
use crate::embed::Vocab;
use crate::error::{Error, Result};
use crate::utterance::UtteranceInput;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawUtterance {
    pub text: String,
    pub speaker: String,
    pub intent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
}

impl RawUtterance {
    /// Maps text and profile labels to model input. The emotion, if any,
    /// is ignored.
    pub fn encode(&self, schema: &LabelSchema, vocab: &Vocab) -> Result<UtteranceInput> {
        let tokens = tokenize(&self.text);
        if tokens.is_empty() {
            return Err(Error::Contract("utterance text is empty".into()));
        }
        let speaker = label_index(&schema.speakers, &self.speaker)
            .ok_or_else(|| Error::Schema(format!("unknown speaker {:?}", self.speaker)))?;
        let intent = label_index(&schema.intents, &self.intent)
            .ok_or_else(|| Error::Schema(format!("unknown intent {:?}", self.intent)))?;
        Ok(UtteranceInput::new(vocab.encode(&tokens), speaker, intent))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialog {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    satisfaction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    curve: Option<String>,
    utterances: Vec<RawUtterance>,
}

const MAX_LISTED: usize = 20;

/// Reads an interchange file.
pub fn parse_interchange(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Vec<Dialog>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_interchange(BufReader::new(file), path, schema)
}

/// Reads interchange lines from any reader; `origin` labels error messages.
pub fn read_interchange(
    reader: impl BufRead,
    origin: impl AsRef<Path>,
    schema: &LabelSchema,
) -> Result<Vec<Dialog>> {
    let origin = origin.as_ref();
    let mut dialogs = Vec::new();
    let mut offenders = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                msg: e.to_string(),
            })?;
        let raw: RawDialog = serde_json::from_value(value).map_err(|e| {
            Error::Schema(format!("{}:{lineno}: {e}", origin.display()))
        })?;
        if let Some(d) = convert(raw, schema, lineno, &mut offenders)? {
            dialogs.push(d);
        }
    }
    if !offenders.is_empty() {
        let more = offenders.len().saturating_sub(MAX_LISTED);
        let mut msg = format!("unknown labels in {}: ", origin.display());
        msg.push_str(&offenders[..offenders.len().min(MAX_LISTED)].join("; "));
        if more > 0 {
            msg.push_str(&format!("; and {more} more"));
        }
        return Err(Error::Schema(msg));
    }
    Ok(dialogs)
}

fn convert(
    raw: RawDialog,
    schema: &LabelSchema,
    lineno: usize,
    offenders: &mut Vec<String>,
) -> Result<Option<Dialog>> {
    if raw.utterances.is_empty() {
        return Err(Error::Schema(format!("line {lineno}: dialog {} has no utterances", raw.id)));
    }
    let mut lookup = |set: &[String], what: &str, label: &str| -> usize {
        label_index(set, label).unwrap_or_else(|| {
            offenders.push(format!("line {lineno}: {what} {label:?}"));
            usize::MAX
        })
    };
    let mut utterances = Vec::with_capacity(raw.utterances.len());
    for (k, u) in raw.utterances.iter().enumerate() {
        let Some(emotion) = &u.emotion else {
            return Err(Error::Schema(format!(
                "line {lineno}: utterance {k} is missing \"emotion\""
            )));
        };
        let tokens = tokenize(&u.text);
        if tokens.is_empty() {
            return Err(Error::Schema(format!(
                "line {lineno}: utterance {k} has empty text"
            )));
        }
        utterances.push(Utterance {
            tokens,
            speaker: lookup(&schema.speakers, "speaker", &u.speaker),
            intent: lookup(&schema.intents, "intent", &u.intent),
            emotion: lookup(&schema.emotions, "emotion", emotion),
        });
    }
    let satisfaction = raw
        .satisfaction
        .as_deref()
        .map(|s| lookup(&schema.satisfaction, "satisfaction", s));
    let curve = raw.curve.as_deref().map(|c| lookup(&schema.curves, "curve", c));
    let dialog = Dialog {
        id: raw.id,
        utterances,
        satisfaction,
        curve,
    };
    let clean = dialog.utterances.iter().all(|u| {
        u.speaker != usize::MAX && u.intent != usize::MAX && u.emotion != usize::MAX
    }) && dialog.satisfaction != Some(usize::MAX)
        && dialog.curve != Some(usize::MAX);
    Ok(clean.then_some(dialog))
}

fn to_raw(d: &Dialog, schema: &LabelSchema) -> RawDialog {
    RawDialog {
        id: d.id.clone(),
        satisfaction: d.satisfaction.map(|s| schema.satisfaction[s].clone()),
        curve: d.curve.map(|c| schema.curves[c].clone()),
        utterances: d
            .utterances
            .iter()
            .map(|u| RawUtterance {
                text: u.tokens.join(" "),
                speaker: schema.speakers[u.speaker].clone(),
                intent: schema.intents[u.intent].clone(),
                emotion: Some(schema.emotions[u.emotion].clone()),
            })
            .collect(),
    }
}

/// Writes dialogs, one JSON object per line.
pub fn write_interchange(
    mut out: impl Write,
    dialogs: &[Dialog],
    schema: &LabelSchema,
) -> std::io::Result<()> {
    for d in dialogs {
        serde_json::to_writer(&mut out, &to_raw(d, schema))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<Vec<Dialog>> {
        read_interchange(s.as_bytes(), "mem", &LabelSchema::customer_service())
    }

    #[test]
    fn minimal_line() {
        let d = read(
            r#"{"id":"a","utterances":[{"text":"hi there","speaker":"User","intent":"Inform","emotion":"Worry"}]}"#,
        )
        .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].len(), 1);
        assert_eq!(d[0].utterances[0].tokens, ["hi", "there"]);
        assert_eq!(d[0].utterances[0].emotion, 2);
        assert_eq!(d[0].satisfaction, None);
    }

    #[test]
    fn missing_emotion_is_schema_error() {
        let err = read(r#"{"id":"a","utterances":[{"text":"hi","speaker":"User","intent":"Inform"}]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = concat!(
            "\n",
            r#"{"id":"a","utterances":[{"text":"hi","speaker":"User","intent":"Inform","emotion":"Worry"}]}"#,
            "\n{oops"
        );
        match read(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_labels_are_listed() {
        let text = concat!(
            r#"{"id":"a","curve":"Zigzag","utterances":[{"text":"hi","speaker":"Robot","intent":"Inform","emotion":"Worry"}]}"#,
            "\n",
            r#"{"id":"b","utterances":[{"text":"hi","speaker":"User","intent":"Inform","emotion":"Bliss"}]}"#
        );
        let msg = read(text).unwrap_err().to_string();
        for needle in ["Zigzag", "Robot", "Bliss", "line 2"] {
            assert!(msg.contains(needle), "{msg}");
        }
    }
}
