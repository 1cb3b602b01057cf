mod common;

use chat_capsule::data::{pad_together, LabelSchema};
use chat_capsule::model::{loss_total, LossScale};
use chat_capsule::{Architecture, DialogGold, Error, Model, ModelConfig, Tape, UtteranceInput};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn hand_config() -> ModelConfig {
    ModelConfig {
        d_word: 2,
        d_model: 2,
        d_h: 2,
        d_a: 2,
        ..ModelConfig::toy(LabelSchema::customer_service())
    }
}

#[test]
fn two_utterance_dialog_matches_scalar_oracle_end_to_end() {
    let mut model = model_with(hand_config(), 6);
    randomize(&mut model, 41, 1.0);
    let d = [
        UtteranceInput::new(vec![2, 3, 5], 0, 1),
        UtteranceInput::new(vec![4, 2], 1, 6),
    ];
    let got = model.forward_dialog(&d).unwrap();
    let want = oracle_capsule(&model, &d);
    let diff = prediction_diff(&got, &want);
    assert!(diff < 1e-12, "{diff:e}");
}

#[test]
fn random_dialogs_match_scalar_oracle() {
    let schema = LabelSchema::customer_service();
    let mut r = rng(42);
    for seed in 0..20 {
        let mut model = toy_model(seed, 15);
        randomize(&mut model, seed + 100, 0.8);
        let len = r.gen_range(1..6);
        let d = random_dialog(&mut r, 15, &schema, len, 6);
        let diff = prediction_diff(&model.forward_dialog(&d).unwrap(), &oracle_capsule(&model, &d));
        assert!(diff < 1e-12, "seed {seed}: {diff:e}");
    }
}

#[test]
fn one_utterance_dialog_uses_zero_feedback() {
    let model = toy_model(7, 10);
    let u = UtteranceInput::new(vec![2, 3, 4], 1, 2);
    let p = model.forward_dialog(std::slice::from_ref(&u)).unwrap();
    assert_eq!(p.alpha_d, vec![1.0]);
    let want = oracle_capsule(&model, std::slice::from_ref(&u));
    assert!(prediction_diff(&p, &want) < 1e-12);
}

#[test]
fn appending_an_utterance_leaves_earlier_emotions_unchanged() {
    let model = toy_model(8, 12);
    let schema = LabelSchema::customer_service();
    let mut d = random_dialog(&mut rng(1), 12, &schema, 4, 5);
    let before = model.forward_dialog(&d).unwrap();
    d.push(d[3].clone());
    let after = model.forward_dialog(&d).unwrap();
    for i in 0..4 {
        assert_eq!(bits(&before.utterance_probs[i]), bits(&after.utterance_probs[i]));
    }
}

#[test]
fn empty_dialog_is_a_contract_error() {
    let model = toy_model(8, 12);
    assert!(matches!(model.forward_dialog(&[]), Err(Error::Contract(_))));
}

#[test]
fn out_of_range_speaker_is_rejected() {
    let model = toy_model(8, 12);
    let u = UtteranceInput::new(vec![2], 9, 0);
    assert!(matches!(model.forward_dialog(&[u]), Err(Error::Bounds { .. })));
}

#[test]
fn one_hot_correct_predictions_have_zero_loss() {
    let pred = chat_capsule::DialogPrediction {
        utterance_probs: vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]],
        satisfaction: vec![0.0, 0.0, 1.0],
        curve: vec![0.0, 1.0, 0.0, 0.0, 0.0],
        alpha_u: vec![],
        alpha_d: vec![],
    };
    let gold = DialogGold {
        emotions: vec![1, 0],
        satisfaction: Some(2),
        curve: Some(1),
    };
    let l = loss_total(&[pred], &[gold]).unwrap();
    assert_eq!(l.total(), 0.0);
}

#[test]
fn uniform_predictions_lose_ln6_ln3_ln5() {
    let mut model = toy_model(9, 10);
    zero_params(&mut model);
    let u = UtteranceInput::new(vec![2, 3], 0, 0);
    let pred = model.forward_dialog(std::slice::from_ref(&u)).unwrap();
    let gold = DialogGold {
        emotions: vec![4],
        satisfaction: Some(0),
        curve: Some(3),
    };
    let expected = 6f64.ln() + 3f64.ln() + 5f64.ln();
    let l = loss_total(&[pred], &[gold]).unwrap();
    assert!((l.total() - expected).abs() < 1e-12);

    // The training loss agrees.
    let enc = chat_capsule::data::EncodedDialog {
        id: "u".into(),
        utterances: vec![u],
        emotions: vec![4],
        satisfaction: Some(0),
        curve: Some(3),
    };
    let bl = model.batch_loss(&[enc.as_padded()]).unwrap();
    assert!((bl.total() - expected).abs() < 1e-12);
}

#[test]
fn out_of_range_gold_label_is_an_error() {
    let model = toy_model(9, 10);
    let pred = model.forward_dialog(&[UtteranceInput::new(vec![2], 0, 0)]).unwrap();
    let gold = DialogGold {
        emotions: vec![6],
        satisfaction: None,
        curve: None,
    };
    assert!(loss_total(&[pred], &[gold]).is_err());
}

#[test]
fn loss_is_the_sum_of_its_parts() {
    let schema = LabelSchema::customer_service();
    let mut r = rng(3);
    let model = toy_model(10, 15);
    let dialogs: Vec<_> = (0..5)
        .map(|_| {
            let len = r.gen_range(1..5);
            random_labeled(&mut r, 15, &schema, len, 5)
        })
        .collect();
    let preds: Vec<_> = dialogs.iter().map(|d| model.forward_dialog(&d.utterances).unwrap()).collect();
    let golds: Vec<DialogGold> = dialogs.iter().map(DialogGold::from).collect();
    let total = loss_total(&preds, &golds).unwrap();

    // Separately computed J and U.
    let n_utt: usize = dialogs.iter().map(|d| d.len()).sum();
    let j: f64 = preds
        .iter()
        .zip(&golds)
        .flat_map(|(p, g)| p.utterance_probs.iter().zip(&g.emotions).map(|(q, &e)| -q[e].ln()))
        .sum::<f64>()
        / n_utt as f64;
    let sat: f64 = preds.iter().zip(&golds).map(|(p, g)| -p.satisfaction[g.satisfaction.unwrap()].ln()).sum::<f64>() / 5.0;
    let cur: f64 = preds.iter().zip(&golds).map(|(p, g)| -p.curve[g.curve.unwrap()].ln()).sum::<f64>() / 5.0;
    assert!((total.j - j).abs() < 1e-12);
    assert!((total.u - (sat + cur)).abs() < 1e-12);
    assert!((total.total() - (j + sat + cur)).abs() < 1e-12);

    // The tape loss with fused cross-entropy agrees with the probability form.
    let padded: Vec<_> = dialogs.iter().map(|d| d.as_padded()).collect();
    let tape_loss = model.batch_loss(&padded).unwrap();
    assert!((tape_loss.total() - total.total()).abs() < 1e-12);
}

#[test]
fn loss_scale_counts_only_real_labeled_items() {
    let schema = LabelSchema::customer_service();
    let mut r = rng(5);
    let mut a = random_labeled(&mut r, 10, &schema, 2, 3);
    let b = random_labeled(&mut r, 10, &schema, 5, 3);
    a.curve = None;
    let batch = pad_together(&[a, b]);
    let s = LossScale::for_dialogs(&batch.dialogs);
    assert_eq!(s.utterance, 1.0 / 7.0);
    assert_eq!(s.satisfaction, 0.5);
    assert_eq!(s.curve, 1.0);
}

#[test]
fn streaming_reproduces_the_full_forward() {
    let schema = LabelSchema::customer_service();
    let mut r = rng(6);
    let model = toy_model(11, 20);
    for _ in 0..10 {
        let d = random_dialog(&mut r, 20, &schema, 5, 6);
        let full = model.forward_dialog(&d).unwrap();
        let mut s = model.stream();
        for (i, u) in d.iter().enumerate() {
            let out = s.push(u).unwrap();
            assert_eq!(bits(&out.probs), bits(&full.utterance_probs[i]));
            assert_eq!(bits(&out.alpha_u), bits(&full.alpha_u[i]));
            // Running dialog heads equal a fresh forward over the prefix.
            let prefix = model.forward_dialog(&d[..=i]).unwrap();
            assert_eq!(bits(&out.satisfaction), bits(&prefix.satisfaction));
            assert_eq!(bits(&out.curve), bits(&prefix.curve));
        }
    }
}

#[test]
fn first_streamed_utterance_matches_single_utterance_forward() {
    let model = toy_model(12, 10);
    let u = UtteranceInput::new(vec![3, 4, 5], 0, 3);
    let single = model.forward_dialog(std::slice::from_ref(&u)).unwrap();
    let mut s = model.stream();
    let out = s.push(&u).unwrap();
    assert_eq!(out.probs, single.utterance_probs[0]);
    assert_eq!(out.satisfaction, single.satisfaction);
}

#[test]
fn session_reset_and_close() {
    let model = toy_model(12, 10);
    let u = UtteranceInput::new(vec![3, 4], 1, 1);
    let mut s = model.stream();
    let first = s.push(&u).unwrap();
    s.push(&u).unwrap();
    s.reset();
    assert_eq!(s.state().step, 0);
    assert!(s.state().h.data().iter().all(|&x| x == 0.0));
    assert_eq!(s.push(&u).unwrap(), first);
    s.close();
    assert!(matches!(s.push(&u), Err(Error::Usage(_))));
    s.reset();
    assert_eq!(s.push(&u).unwrap(), first);
}

#[test]
fn failed_push_leaves_session_unchanged() {
    let model = toy_model(12, 10);
    let mut s = model.stream();
    s.push(&UtteranceInput::new(vec![2], 0, 0)).unwrap();
    let before = s.state().clone();
    assert!(s.push(&UtteranceInput::new(vec![2], 0, 99)).is_err());
    assert_eq!(s.state(), &before);
}

fn baseline(seed: u64, vocab_len: usize) -> Model {
    let mut cfg = ModelConfig::toy(LabelSchema::customer_service());
    cfg.architecture = Architecture::LstmBaseline;
    cfg.seed = seed;
    model_with(cfg, vocab_len)
}

#[test]
fn baseline_zero_parameters_are_uniform_everywhere() {
    let mut model = baseline(1, 10);
    zero_params(&mut model);
    let d = random_dialog(&mut rng(2), 10, &LabelSchema::customer_service(), 3, 4);
    let p = model.forward_dialog(&d).unwrap();
    for q in &p.utterance_probs {
        assert!(q.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-15));
    }
    assert!(p.satisfaction.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    assert!(p.curve.iter().all(|x| (x - 0.2).abs() < 1e-15));
    assert!(p.alpha_u.is_empty() && p.alpha_d.is_empty());
}

#[test]
fn baseline_single_token_is_one_cell_step_and_a_head() {
    let mut model = baseline(2, 10);
    randomize(&mut model, 3, 1.0);
    let u = UtteranceInput::new(vec![7], 0, 0);
    let p = model.forward_dialog(std::slice::from_ref(&u)).unwrap();
    let words = param(&model, "word_embedding");
    let (h, _) = lstm_step(
        param(&model, "utterance_rnn.weight"),
        param(&model, "utterance_rnn.bias"),
        words.row(7),
        &[0.0; 8],
        &[0.0; 8],
    );
    let expect = softmax(&add(&matvec(param(&model, "emotion_head.weight"), &h), param(&model, "emotion_head.bias").data()));
    assert!(max_abs_diff(&p.utterance_probs[0], &expect) < 1e-12);
    assert!(prediction_diff(&p, &oracle_baseline(&model, &[u])) < 1e-12);
}

#[test]
fn baseline_matches_scalar_oracle_on_random_dialogs() {
    let schema = LabelSchema::customer_service();
    let mut r = rng(4);
    let model = baseline(3, 15);
    for _ in 0..10 {
        let len = r.gen_range(1..5);
        let d = random_dialog(&mut r, 15, &schema, len, 5);
        assert!(prediction_diff(&model.forward_dialog(&d).unwrap(), &oracle_baseline(&model, &d)) < 1e-12);
    }
}

#[test]
fn baseline_ignores_speakers_and_intents() {
    let schema = LabelSchema::customer_service();
    let model = baseline(4, 15);
    let d = random_dialog(&mut rng(5), 15, &schema, 4, 5);
    let mut permuted = d.clone();
    for u in &mut permuted {
        u.speaker_id = 1 - u.speaker_id;
        u.intent_id = (u.intent_id + 3) % schema.intents.len();
    }
    assert_eq!(model.forward_dialog(&d).unwrap(), model.forward_dialog(&permuted).unwrap());
    let mut s = model.stream();
    let out = s.push(&d[0]).unwrap();
    assert_eq!(out.probs, model.forward_dialog(&d[..1]).unwrap().utterance_probs[0]);
}

#[test]
fn ablations_differ_only_where_expected() {
    let d = random_dialog(&mut rng(9), 12, &LabelSchema::customer_service(), 3, 4);
    let base = toy_model(20, 12);
    let tokens: usize = d.iter().map(|u| u.len()).sum();
    assert_eq!(base.count_cosines(&d).unwrap(), 2 * tokens);

    let mut cfg = base.config().clone();
    cfg.use_rectifier = false;
    let no_rect = model_with(cfg.clone(), 12);
    assert_eq!(no_rect.count_cosines(&d).unwrap(), 0);
    // Same parameter inventory with and without the rectifier.
    let names = |m: &Model| m.params().iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
    assert_eq!(names(&base), names(&no_rect));

    cfg.use_feedback = false;
    let neither = model_with(cfg, 12);
    assert_eq!(param(&neither, "emotion_head.weight").shape(), &[6, 8]);
    assert_eq!(param(&base, "emotion_head.weight").shape(), &[6, 16]);
}

#[test]
fn bidirectional_encoder_doubles_the_utterance_width() {
    let mut cfg = ModelConfig::toy(LabelSchema::customer_service());
    cfg.bidirectional_utterance = true;
    let model = model_with(cfg, 12);
    assert!(model.params().find("utterance_rnn.bwd.weight").is_some());
    assert_eq!(param(&model, "emotion_head.weight").shape(), &[6, 24]);
    let d = random_dialog(&mut rng(9), 12, &LabelSchema::customer_service(), 3, 4);
    let p = model.forward_dialog(&d).unwrap();
    assert_eq!(p.utterance_probs.len(), 3);
}

#[test]
fn same_seed_same_parameters() {
    let a = toy_model(77, 12);
    let b = toy_model(77, 12);
    let c = toy_model(78, 12);
    let flat = |m: &Model| m.params().iter().flat_map(|(_, p)| bits(p.value.data())).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn pad_row_of_the_word_table_is_zero_and_frozen() {
    let model = toy_model(5, 10);
    assert!(param(&model, "word_embedding").row(0).iter().all(|&x| x == 0.0));
    let id = model.params().find("word_embedding").unwrap();
    assert_eq!(model.params().get(id).frozen_row, Some(0));
}

#[test]
fn graph_records_one_tape_per_forward() {
    let model = toy_model(5, 10);
    let d = [UtteranceInput::new(vec![2, 3], 0, 0)];
    let mut tape = Tape::new();
    let g = model.build_graph(&mut tape, &d, &[true], None).unwrap();
    let n = tape.len();
    assert!(n > 0);
    let p = Model::extract(&tape, &g);
    assert_eq!(p, model.forward_dialog(&d).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn emotions_are_causal(seed in 0u64..10_000, len in 2usize..6, cut in 1usize..5) {
        let schema = LabelSchema::customer_service();
        let model = toy_model(seed % 7, 15);
        let mut r = rng(seed);
        let d = random_dialog(&mut r, 15, &schema, len, 5);
        let cut = cut.min(len - 1);
        let mut changed = d.clone();
        for u in &mut changed[cut..] {
            *u = random_utterance(&mut r, 15, &schema, 5);
        }
        let a = model.forward_dialog(&d).unwrap();
        let b = model.forward_dialog(&changed).unwrap();
        for i in 0..cut {
            prop_assert_eq!(bits(&a.utterance_probs[i]), bits(&b.utterance_probs[i]));
        }
    }

    #[test]
    fn distributions_are_normalized(seed in 0u64..10_000) {
        let schema = LabelSchema::customer_service();
        let model = toy_model(seed % 5, 15);
        let mut r = rng(seed);
        let len = r.gen_range(1..5);
        let mut d = random_dialog(&mut r, 15, &schema, len, 6);
        for u in &mut d {
            for m in u.mask.iter_mut().skip(1) {
                *m = r.gen_bool(0.7);
            }
        }
        let p = model.forward_dialog(&d).unwrap();
        let sums_to_one = |xs: &[f64]| (xs.iter().sum::<f64>() - 1.0).abs() <= 1e-6;
        for (u, a) in d.iter().zip(&p.alpha_u) {
            prop_assert!(sums_to_one(a));
            for (x, m) in a.iter().zip(&u.mask) {
                if !m {
                    prop_assert_eq!(*x, 0.0);
                }
            }
        }
        for q in &p.utterance_probs {
            prop_assert!(sums_to_one(q));
        }
        prop_assert!(sums_to_one(&p.alpha_d));
        prop_assert!(sums_to_one(&p.satisfaction));
        prop_assert!(sums_to_one(&p.curve));
    }
}
