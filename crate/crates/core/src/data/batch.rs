use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dialog;
use crate::embed::{Vocab, PAD};
use crate::utterance::UtteranceInput;

/// A dialog mapped to vocabulary indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDialog {
    pub id: String,
    pub utterances: Vec<UtteranceInput>,
    pub emotions: Vec<usize>,
    pub satisfaction: Option<usize>,
    pub curve: Option<usize>,
}

impl EncodedDialog {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// A padded view with no padding.
    pub fn as_padded(&self) -> PaddedDialog {
        PaddedDialog {
            utterances: self.utterances.clone(),
            utt_mask: vec![true; self.utterances.len()],
            emotions: self.emotions.iter().map(|&e| Some(e)).collect(),
            satisfaction: self.satisfaction,
            curve: self.curve,
        }
    }
}

pub fn encode_dialog(d: &Dialog, vocab: &Vocab) -> EncodedDialog {
    EncodedDialog {
        id: d.id.clone(),
        utterances: d
            .utterances
            .iter()
            .map(|u| UtteranceInput::new(vocab.encode(&u.tokens), u.speaker, u.intent))
            .collect(),
        emotions: d.utterances.iter().map(|u| u.emotion).collect(),
        satisfaction: d.satisfaction,
        curve: d.curve,
    }
}

/// One dialog padded to a batch's token and utterance extents.
///
/// Padding utterances have an all-false token mask, `utt_mask` false and no
/// emotion label.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedDialog {
    pub utterances: Vec<UtteranceInput>,
    pub utt_mask: Vec<bool>,
    pub emotions: Vec<Option<usize>>,
    pub satisfaction: Option<usize>,
    pub curve: Option<usize>,
}

impl PaddedDialog {
    pub fn real_utterances(&self) -> usize {
        self.utt_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    /// Positions of the member dialogs in the input slice.
    pub indices: Vec<usize>,
    pub dialogs: Vec<PaddedDialog>,
    pub max_tokens: usize,
    pub max_utterances: usize,
}

fn pad_utterance(u: &UtteranceInput, n: usize) -> UtteranceInput {
    let mut word_indices = u.word_indices.clone();
    let mut mask = u.mask.clone();
    word_indices.resize(n, PAD);
    mask.resize(n, false);
    UtteranceInput {
        word_indices,
        speaker_id: u.speaker_id,
        intent_id: u.intent_id,
        mask,
    }
}

fn pad_batch(dialogs: &[EncodedDialog], indices: Vec<usize>) -> PaddedBatch {
    let max_utterances = indices.iter().map(|&i| dialogs[i].len()).max().unwrap_or(0);
    let max_tokens = indices
        .iter()
        .flat_map(|&i| dialogs[i].utterances.iter().map(|u| u.len()))
        .max()
        .unwrap_or(0);
    let padded = indices
        .iter()
        .map(|&i| {
            let d = &dialogs[i];
            let mut utterances: Vec<_> = d
                .utterances
                .iter()
                .map(|u| pad_utterance(u, max_tokens))
                .collect();
            let mut utt_mask = vec![true; d.len()];
            let mut emotions: Vec<_> = d.emotions.iter().map(|&e| Some(e)).collect();
            while utterances.len() < max_utterances {
                utterances.push(UtteranceInput {
                    word_indices: vec![PAD; max_tokens],
                    speaker_id: 0,
                    intent_id: 0,
                    mask: vec![false; max_tokens],
                });
                utt_mask.push(false);
                emotions.push(None);
            }
            PaddedDialog {
                utterances,
                utt_mask,
                emotions,
                satisfaction: d.satisfaction,
                curve: d.curve,
            }
        })
        .collect();
    PaddedBatch {
        indices,
        dialogs: padded,
        max_tokens,
        max_utterances,
    }
}

/// Shuffles with `seed`, buckets by utterance count, and pads each batch.
///
/// Batch order is shuffled as well; the result is a pure function of the
/// inputs.
pub fn batch_pad(dialogs: &[EncodedDialog], batch_size: usize, seed: u64) -> Vec<PaddedBatch> {
    let batch_size = batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dialogs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| dialogs[i].len());
    let mut batches: Vec<PaddedBatch> = order
        .chunks(batch_size)
        .map(|chunk| pad_batch(dialogs, chunk.to_vec()))
        .collect();
    batches.shuffle(&mut rng);
    batches
}

/// Pads `dialogs` as a single batch, keeping their order.
pub fn pad_together(dialogs: &[EncodedDialog]) -> PaddedBatch {
    pad_batch(dialogs, (0..dialogs.len()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialog(lens: &[usize]) -> EncodedDialog {
        EncodedDialog {
            id: "d".into(),
            utterances: lens
                .iter()
                .map(|&n| UtteranceInput::new(vec![2; n], 0, 0))
                .collect(),
            emotions: vec![0; lens.len()],
            satisfaction: Some(0),
            curve: Some(0),
        }
    }

    #[test]
    fn uniform_batch_has_full_masks() {
        let ds = vec![dialog(&[3, 3]), dialog(&[3, 3])];
        let b = pad_together(&ds);
        for d in &b.dialogs {
            assert!(d.utt_mask.iter().all(|&m| m));
            assert!(d.utterances.iter().all(|u| u.mask.iter().all(|&m| m)));
        }
    }

    #[test]
    fn short_dialog_gets_masked_utterances() {
        let ds = vec![dialog(&[1, 1]), dialog(&[1, 2, 1, 1, 1])];
        let b = pad_together(&ds);
        assert_eq!(b.max_utterances, 5);
        assert_eq!(b.max_tokens, 2);
        let first = &b.dialogs[0];
        assert_eq!(first.utt_mask, [true, true, false, false, false]);
        assert!(first.utterances[2..].iter().all(|u| u.mask.iter().all(|&m| !m)));
        assert_eq!(first.utterances[0].mask, [true, false]);
        assert_eq!(first.emotions[3], None);
    }

    #[test]
    fn batching_covers_every_dialog_once() {
        let ds: Vec<_> = (1..=10).map(|n| dialog(&vec![2; n])).collect();
        let batches = batch_pad(&ds, 3, 42);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(batches, batch_pad(&ds, 3, 42));
    }
}
