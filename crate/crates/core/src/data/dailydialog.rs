//! Reader for the raw DailyDialog release.
//!
//! Each split consists of three line-aligned files:
//!
//! * `dialogues_<split>.txt`: utterances of one dialog joined by `__eou__`
//! * `dialogues_emotion_<split>.txt`: one emotion id (0–6) per utterance
//! * `dialogues_act_<split>.txt`: one dialog-act id (1–4) per utterance
//!
//! The files are looked up in `<dir>/<split>/` first and then in `<dir>/`.

use std::path::{Path, PathBuf};

use super::{tokenize, Dialog, LabelSchema, Utterance};
use crate::error::{Error, Result};

const EOU: &str = "__eou__";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }
}

fn locate(dir: &Path, split: Split, stem: &str) -> Result<PathBuf> {
    let name = format!("{stem}_{}.txt", split.name());
    let candidates = [dir.join(split.name()).join(&name), dir.join(&name)];
    candidates
        .iter()
        .find(|p| p.is_file())
        .cloned()
        .ok_or_else(|| {
            Error::io(
                &candidates[0],
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("{name} not found")),
            )
        })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.trim().is_empty())
        .collect())
}

fn parse_ids(path: &Path, lineno: usize, line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected an integer label, found {t:?}"),
            })
        })
        .collect()
}

/// Loads one split. Speakers alternate `A`/`B` starting with `A`.
pub fn load_dailydialog(dir: impl AsRef<Path>, split: Split) -> Result<Vec<Dialog>> {
    let dir = dir.as_ref();
    let schema = LabelSchema::daily_dialog();
    let text_path = locate(dir, split, "dialogues")?;
    let emo_path = locate(dir, split, "dialogues_emotion")?;
    let act_path = locate(dir, split, "dialogues_act")?;
    let texts = read_lines(&text_path)?;
    let emos = read_lines(&emo_path)?;
    let acts = read_lines(&act_path)?;
    if texts.len() != emos.len() || texts.len() != acts.len() {
        return Err(Error::Alignment {
            dialog: texts.len().min(emos.len()).min(acts.len()),
            msg: format!(
                "line counts differ: {} dialogs, {} emotion lines, {} act lines",
                texts.len(),
                emos.len(),
                acts.len()
            ),
        });
    }

    let mut dialogs = Vec::with_capacity(texts.len());
    for (idx, ((text, emo), act)) in texts.iter().zip(&emos).zip(&acts).enumerate() {
        let lineno = idx + 1;
        let mut segments: Vec<&str> = text.split(EOU).map(str::trim).collect();
        while segments.last().is_some_and(|s| s.is_empty()) {
            segments.pop();
        }
        let emotions = parse_ids(&emo_path, lineno, emo)?;
        let act_ids = parse_ids(&act_path, lineno, act)?;
        if segments.len() != emotions.len() || segments.len() != act_ids.len() {
            return Err(Error::Alignment {
                dialog: idx,
                msg: format!(
                    "{} utterances, {} emotion labels, {} act labels",
                    segments.len(),
                    emotions.len(),
                    act_ids.len()
                ),
            });
        }
        let mut utterances = Vec::with_capacity(segments.len());
        for (k, seg) in segments.iter().enumerate() {
            let emotion = emotions[k];
            if emotion >= schema.emotions.len() {
                return Err(Error::Parse {
                    path: emo_path.clone(),
                    line: lineno,
                    msg: format!("emotion id {emotion} outside 0..=6"),
                });
            }
            let act = act_ids[k];
            if !(1..=schema.intents.len()).contains(&act) {
                return Err(Error::Parse {
                    path: act_path.clone(),
                    line: lineno,
                    msg: format!("act id {act} outside 1..=4"),
                });
            }
            let mut tokens = tokenize(seg);
            if tokens.is_empty() {
                // a handful of raw lines contain empty turns
                tokens.push(".".to_string());
            }
            utterances.push(Utterance {
                tokens,
                speaker: k % 2,
                intent: act - 1,
                emotion,
            });
        }
        if utterances.is_empty() {
            return Err(Error::Alignment {
                dialog: idx,
                msg: "dialog has no utterances".into(),
            });
        }
        dialogs.push(Dialog {
            id: format!("{}-{idx}", split.name()),
            utterances,
            satisfaction: None,
            curve: None,
        });
    }
    Ok(dialogs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_split(dir: &Path, split: &str, text: &str, emo: &str, act: &str) {
        std::fs::write(dir.join(format!("dialogues_{split}.txt")), text).unwrap();
        std::fs::write(dir.join(format!("dialogues_emotion_{split}.txt")), emo).unwrap();
        std::fs::write(dir.join(format!("dialogues_act_{split}.txt")), act).unwrap();
    }

    #[test]
    fn two_utterance_line() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "train", "Hello ! __eou__ Hi . __eou__\n", "0 4 \n", "1 1 \n");
        let d = load_dailydialog(dir.path(), Split::Train).unwrap();
        assert_eq!(d.len(), 1);
        let u = &d[0].utterances;
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].tokens, ["Hello", "!"]);
        assert_eq!((u[0].emotion, u[1].emotion), (0, 4));
        assert_eq!((u[0].speaker, u[1].speaker), (0, 1));
        assert_eq!((u[0].intent, u[1].intent), (0, 0));
        let schema = LabelSchema::daily_dialog();
        assert_eq!(schema.emotions[u[1].emotion], "happiness");
        assert_eq!(d[0].satisfaction, None);
    }

    #[test]
    fn label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_split(
            dir.path(),
            "test",
            "a __eou__ b __eou__\nc __eou__ d __eou__\n",
            "0 0\n0 4 1\n",
            "1 1\n1 1\n",
        );
        match load_dailydialog(dir.path(), Split::Test).unwrap_err() {
            Error::Alignment { dialog, .. } => assert_eq!(dialog, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn split_subdirectory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("validation");
        std::fs::create_dir(&sub).unwrap();
        write_split(&sub, "validation", "x __eou__\n", "6\n", "4\n");
        let d = load_dailydialog(dir.path(), Split::Validation).unwrap();
        assert_eq!(d[0].utterances[0].intent, 3);
    }

    #[test]
    fn missing_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dailydialog(dir.path(), Split::Train),
            Err(Error::Io { .. })
        ));
    }
}
