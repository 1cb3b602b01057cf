mod common;

use std::io::Cursor;

use chat_capsule::data::synthetic::gen_synthetic;
use chat_capsule::data::{
    batch_pad, encode_dialog, load_dailydialog, pad_together, read_interchange, tokens_of, write_interchange,
    Dialog, LabelSchema, Split, Utterance,
};
use chat_capsule::embed::build_vocab;
use chat_capsule::Error;
use common::*;

fn schema() -> LabelSchema {
    LabelSchema::customer_service()
}

#[test]
fn fifty_dialogs_round_trip_through_the_interchange_format() {
    let s = schema();
    let mut dialogs = gen_synthetic(50, 5, &s);
    // Exercise absent dialog labels too.
    dialogs[3].satisfaction = None;
    dialogs[7].curve = None;
    let mut buf = Vec::new();
    write_interchange(&mut buf, &dialogs, &s).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 50);
    let back = read_interchange(Cursor::new(buf), "mem", &s).unwrap();
    assert_eq!(back, dialogs);
}

#[test]
fn interchange_rejects_labels_outside_the_schema() {
    let line = r#"{"id":"x","utterances":[{"text":"hi there","speaker":"User","intent":"Inform","emotion":"Joy"}]}"#;
    let err = read_interchange(Cursor::new(line), "mem", &schema()).unwrap_err();
    assert!(matches!(err, Error::Schema(_)), "{err}");
    assert!(err.to_string().contains("Joy"), "{err}");
}

// Independent re-statement of the labeling rules, keyed on label names.
fn oracle_valence(name: &str) -> i32 {
    match name {
        "Anger" | "Dissatisfaction" | "Worry" => -1,
        "Emotionlessness" => 0,
        "Happiness" | "Comfort" => 1,
        other => panic!("unexpected emotion {other}"),
    }
}

fn oracle_labels(d: &Dialog, s: &LabelSchema) -> (String, String) {
    let v: Vec<i32> = d
        .utterances
        .iter()
        .filter(|u| s.speakers[u.speaker] == "User")
        .map(|u| oracle_valence(&s.emotions[u.emotion]))
        .collect();
    let last3 = &v[v.len().saturating_sub(3)..];
    let mean = last3.iter().sum::<i32>() as f64 / last3.len().max(1) as f64;
    let sat = if mean > 0.0 {
        "Positive"
    } else if mean < 0.0 {
        "Negative"
    } else {
        "Neutral"
    };
    let flat = v.iter().all(|&x| x == v[0]);
    let rising = v.windows(2).all(|w| w[1] >= w[0]);
    let falling = v.windows(2).all(|w| w[1] <= w[0]);
    let (first, last) = (v[0], *v.last().unwrap());
    let lo = *v.iter().min().unwrap();
    let hi = *v.iter().max().unwrap();
    let curve = if flat {
        "Still"
    } else if rising {
        "Up"
    } else if falling {
        "Down"
    } else if lo < first && lo < last {
        "Concave"
    } else if hi > first && hi > last {
        "Convex"
    } else if last > first {
        "Up"
    } else if last < first {
        "Down"
    } else {
        "Still"
    };
    (sat.to_string(), curve.to_string())
}

#[test]
fn generator_labels_agree_with_an_independent_rule_evaluator() {
    let s = schema();
    for seed in 0..5 {
        for d in gen_synthetic(200, seed, &s) {
            d.validate(&s).unwrap();
            let (sat, curve) = oracle_labels(&d, &s);
            assert_eq!(s.satisfaction[d.satisfaction.unwrap()], sat, "{}", d.id);
            assert_eq!(s.curves[d.curve.unwrap()], curve, "{}", d.id);
        }
    }
}

fn user_dialog(emotions: &[&str]) -> Dialog {
    let s = schema();
    Dialog {
        id: "rule".into(),
        utterances: emotions
            .iter()
            .map(|e| Utterance {
                tokens: vec!["x".into()],
                speaker: 0,
                intent: 0,
                emotion: s.emotions.iter().position(|n| n == e).unwrap(),
            })
            .collect(),
        satisfaction: None,
        curve: None,
    }
}

#[test]
fn rule_examples() {
    let s = schema();
    let flat = user_dialog(&["Emotionlessness"; 4]);
    assert_eq!(oracle_labels(&flat, &s), ("Neutral".into(), "Still".into()));
    let (sat, curve) = chat_capsule::data::synthetic::dialog_labels(&flat.utterances);
    assert_eq!((s.satisfaction[sat].as_str(), s.curves[curve].as_str()), ("Neutral", "Still"));

    let rising = user_dialog(&["Anger", "Worry", "Emotionlessness", "Happiness", "Comfort"]);
    let (sat, curve) = chat_capsule::data::synthetic::dialog_labels(&rising.utterances);
    assert_eq!((s.satisfaction[sat].as_str(), s.curves[curve].as_str()), ("Positive", "Up"));
    assert_eq!(oracle_labels(&rising, &s), ("Positive".into(), "Up".into()));
}

#[test]
fn generator_is_seeded() {
    let s = schema();
    assert_eq!(gen_synthetic(20, 3, &s), gen_synthetic(20, 3, &s));
    assert_ne!(gen_synthetic(20, 3, &s), gen_synthetic(20, 4, &s));
}

#[test]
fn generator_speakers_mostly_alternate() {
    let s = schema();
    let dialogs = gen_synthetic(300, 9, &s);
    let (mut switches, mut pairs) = (0, 0);
    for d in &dialogs {
        for w in d.utterances.windows(2) {
            pairs += 1;
            switches += usize::from(w[0].speaker != w[1].speaker);
        }
    }
    let rate = switches as f64 / pairs as f64;
    assert!(rate > 0.7 && rate < 1.0, "switch rate {rate}");
}

fn encoded(n: usize, seed: u64) -> (Vec<chat_capsule::data::EncodedDialog>, usize) {
    let s = schema();
    let dialogs = gen_synthetic(n, seed, &s);
    let vocab = build_vocab(tokens_of(&dialogs), 1).unwrap();
    let len = vocab.len();
    (dialogs.iter().map(|d| encode_dialog(d, &vocab)).collect(), len)
}

#[test]
fn batched_and_unbatched_forwards_agree() {
    let (enc, v) = encoded(40, 2);
    let model = toy_model(3, v);
    for batch in batch_pad(&enc, 8, 1) {
        let preds = model.forward_batch(&batch).unwrap();
        for (&i, p) in batch.indices.iter().zip(&preds) {
            let alone = model.forward_dialog(&enc[i].utterances).unwrap();
            assert_eq!(p.utterance_probs.len(), enc[i].len());
            for (a, b) in p.utterance_probs.iter().zip(&alone.utterance_probs) {
                assert!(max_abs_diff(a, b) <= 1e-9);
            }
            assert!(max_abs_diff(&p.satisfaction, &alone.satisfaction) <= 1e-9);
            assert!(max_abs_diff(&p.curve, &alone.curve) <= 1e-9);
        }
    }
}

#[test]
fn padding_does_not_change_the_loss() {
    let (enc, v) = encoded(12, 3);
    let model = toy_model(4, v);
    let padded = pad_together(&enc);
    assert!(padded.dialogs.iter().any(|d| d.real_utterances() < d.utterances.len()));
    let unpadded: Vec<_> = enc.iter().map(|d| d.as_padded()).collect();
    let a = model.batch_loss(&padded.dialogs).unwrap();
    let b = model.batch_loss(&unpadded).unwrap();
    assert!((a.j - b.j).abs() <= 1e-9 && (a.u - b.u).abs() <= 1e-9);
}

#[test]
fn padding_shapes() {
    let (enc, _) = encoded(6, 4);
    let batch = pad_together(&enc);
    for d in &batch.dialogs {
        assert_eq!(d.utterances.len(), batch.max_utterances);
        for (u, &real) in d.utterances.iter().zip(&d.utt_mask) {
            assert_eq!(u.len(), batch.max_tokens);
            if !real {
                assert!(u.mask.iter().all(|&m| !m));
            }
        }
    }
}

#[test]
fn batch_order_depends_only_on_the_seed() {
    let (enc, _) = encoded(50, 5);
    let order = |seed| batch_pad(&enc, 8, seed).into_iter().flat_map(|b| b.indices).collect::<Vec<_>>();
    assert_eq!(order(1), order(1));
    assert_ne!(order(1), order(2));
    let mut all = order(3);
    all.sort();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
}

fn write_split(dir: &std::path::Path, split: &str, text: &str, emo: &str, act: &str) {
    std::fs::write(dir.join(format!("dialogues_{split}.txt")), text).unwrap();
    std::fs::write(dir.join(format!("dialogues_emotion_{split}.txt")), emo).unwrap();
    std::fs::write(dir.join(format!("dialogues_act_{split}.txt")), act).unwrap();
}

#[test]
fn dailydialog_format() {
    let dir = tempfile::tempdir().unwrap();
    write_split(
        dir.path(),
        "test",
        "Hello ! __eou__ Hi . __eou__\nHow are you ? __eou__ Fine __eou__ Good __eou__\n",
        "0 4\n0 0 4\n",
        "1 1\n2 1 1\n",
    );
    let d = load_dailydialog(dir.path(), Split::Test).unwrap();
    let s = LabelSchema::daily_dialog();
    assert_eq!(d.len(), 2);
    assert_eq!(d[0].len(), 2);
    assert_eq!(d[0].utterances[0].tokens, vec!["Hello", "!"]);
    assert_eq!(s.emotions[d[0].utterances[0].emotion], "no_emotion");
    assert_eq!(s.emotions[d[0].utterances[1].emotion], "happiness");
    assert_eq!(s.speakers[d[0].utterances[0].speaker], "A");
    assert_eq!(s.speakers[d[0].utterances[1].speaker], "B");
    assert_eq!(s.speakers[d[1].utterances[2].speaker], "A");
    assert_eq!(s.intents[d[1].utterances[0].intent], "question");
    assert!(d.iter().all(|x| x.satisfaction.is_none() && x.curve.is_none()));
}

#[test]
fn dailydialog_misaligned_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), "train", "Hello ! __eou__ Hi . __eou__\n", "0 4 1\n", "1 1\n");
    match load_dailydialog(dir.path(), Split::Train) {
        Err(Error::Alignment { dialog, .. }) => assert_eq!(dialog, 0),
        other => panic!("expected an alignment error, got {other:?}"),
    }
}
