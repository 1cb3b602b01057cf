mod common;

use chat_capsule::data::LabelSchema;
use chat_capsule::lstm::lstm_cell;
use chat_capsule::tensor::{Tape, Tensor};
use chat_capsule::{ModelConfig, UtteranceInput};
use common::*;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_word: 3,
        d_model: 2,
        d_h: 2,
        d_a: 2,
        ..ModelConfig::toy(LabelSchema::customer_service())
    }
}

#[test]
fn lstm_zero_parameters_give_zero_state() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(&[0.7, -3.0]));
    let h = tape.constant(Tensor::zeros(&[2]));
    let c = tape.constant(Tensor::zeros(&[2]));
    let w = tape.constant(Tensor::zeros(&[8, 4]));
    let b = tape.constant(Tensor::zeros(&[8]));
    let (h, c) = lstm_cell(&mut tape, x, h, c, w, b).unwrap();
    assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
}

#[test]
fn lstm_single_step_matches_gate_formulas() {
    // Rows: i0 i1 f0 f1 g0 g1 o0 o1; columns: x0 x1 h0 h1.
    let w = [
        0.1, -0.2, 0.3, 0.0, //
        0.5, 0.4, -0.1, 0.2, //
        -0.3, 0.1, 0.0, 0.6, //
        0.2, 0.2, 0.2, 0.2, //
        0.7, -0.5, 0.1, -0.4, //
        -0.6, 0.3, 0.9, 0.05, //
        0.0, 0.8, -0.7, 0.3, //
        0.4, -0.9, 0.2, 0.1,
    ];
    let b = [0.01, -0.02, 1.0, 1.0, 0.0, 0.1, -0.1, 0.2];
    let x = [0.5, -1.5];
    let h0 = [0.2, -0.3];
    let c0 = [1.0, 0.5];

    // Independent scalar evaluation.
    let z: Vec<f64> = (0..8)
        .map(|r| b[r] + w[r * 4] * x[0] + w[r * 4 + 1] * x[1] + w[r * 4 + 2] * h0[0] + w[r * 4 + 3] * h0[1])
        .collect();
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut expect_h = [0.0; 2];
    let mut expect_c = [0.0; 2];
    for k in 0..2 {
        expect_c[k] = s(z[2 + k]) * c0[k] + s(z[k]) * z[4 + k].tanh();
        expect_h[k] = s(z[6 + k]) * expect_c[k].tanh();
    }

    let mut tape = Tape::new();
    let vx = tape.constant(Tensor::vector(&x));
    let vh = tape.constant(Tensor::vector(&h0));
    let vc = tape.constant(Tensor::vector(&c0));
    let vw = tape.constant(Tensor::matrix(8, 4, w.to_vec()).unwrap());
    let vb = tape.constant(Tensor::vector(&b));
    let (h, c) = lstm_cell(&mut tape, vx, vh, vc, vw, vb).unwrap();
    assert!(max_abs_diff(tape.value(h).data(), &expect_h) < 1e-15);
    assert!(max_abs_diff(tape.value(c).data(), &expect_c) < 1e-15);
}

#[test]
fn lstm_dimension_mismatch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2]));
    let h = tape.constant(Tensor::zeros(&[2]));
    let c = tape.constant(Tensor::zeros(&[3]));
    let w = tape.constant(Tensor::zeros(&[8, 4]));
    let b = tape.constant(Tensor::zeros(&[8]));
    assert!(lstm_cell(&mut tape, x, h, c, w, b).is_err());
}

#[test]
fn single_token_utterance_attends_fully() {
    let model = toy_model(3, 12);
    let p = model.forward_dialog(&[UtteranceInput::new(vec![5], 0, 2)]).unwrap();
    assert_eq!(p.alpha_u, vec![vec![1.0]]);
    assert_eq!(p.alpha_d, vec![1.0]);
}

#[test]
fn masked_second_token_gets_no_attention() {
    let model = toy_model(3, 12);
    let mut u = UtteranceInput::new(vec![5, 7], 1, 0);
    u.mask = vec![true, false];
    let p = model.forward_dialog(&[u]).unwrap();
    assert_eq!(p.alpha_u, vec![vec![1.0, 0.0]]);
    // The masked token's identity is irrelevant.
    let mut v = UtteranceInput::new(vec![5, 3], 1, 0);
    v.mask = vec![true, false];
    assert_eq!(model.forward_dialog(&[v]).unwrap(), p);
}

#[test]
fn utterance_encoding_matches_scalar_oracle() {
    let mut model = model_with(tiny_config(), 6);
    randomize(&mut model, 17, 1.0);
    let u = UtteranceInput::new(vec![2, 5, 3], 1, 4);
    let got = model.forward_dialog(std::slice::from_ref(&u)).unwrap();
    let want = oracle_encode(&model, &u);
    assert_eq!(want.alpha_u.len(), 3);
    assert!(max_abs_diff(&got.alpha_u[0], &want.alpha_u) < 1e-12);
}

#[test]
fn utterance_encoding_oracle_with_rectifier_off() {
    let mut cfg = tiny_config();
    cfg.use_rectifier = false;
    let mut model = model_with(cfg, 6);
    randomize(&mut model, 18, 1.0);
    let u = UtteranceInput::new(vec![4, 4, 2, 5], 0, 1);
    let got = model.forward_dialog(std::slice::from_ref(&u)).unwrap();
    let want = oracle_capsule(&model, std::slice::from_ref(&u));
    assert!(prediction_diff(&got, &want) < 1e-12);
}

#[test]
fn emotion_head_zero_weights_is_uniform() {
    let mut model = toy_model(1, 10);
    set_param(&mut model, "emotion_head.weight", &vec![0.0; 6 * 16]);
    set_param(&mut model, "emotion_head.bias", &[0.0; 6]);
    let p = model.forward_dialog(&[UtteranceInput::new(vec![2, 3], 0, 0)]).unwrap();
    for x in &p.utterance_probs[0] {
        assert!((x - 1.0 / 6.0).abs() < 1e-15);
    }
}

#[test]
fn emotion_head_saturated_bias_is_one_hot() {
    let mut model = toy_model(1, 10);
    set_param(&mut model, "emotion_head.bias", &[0.0, 0.0, 0.0, 100.0, 0.0, 0.0]);
    let p = model.forward_dialog(&[UtteranceInput::new(vec![2, 3], 0, 0)]).unwrap();
    assert!(p.utterance_probs[0][3] > 1.0 - 1e-12);
    assert_eq!(chat_capsule::metrics::argmax(&p.utterance_probs[0]), 3);
}

#[test]
fn emotion_head_without_feedback_reads_r_u_only() {
    let mut cfg = tiny_config();
    cfg.use_feedback = false;
    let mut model = model_with(cfg, 6);
    assert_eq!(param(&model, "emotion_head.weight").shape(), &[6, 2]);
    randomize(&mut model, 5, 1.0);
    let d = [
        UtteranceInput::new(vec![2, 3], 0, 0),
        UtteranceInput::new(vec![4], 1, 3),
    ];
    let got = model.forward_dialog(&d).unwrap();
    assert!(prediction_diff(&got, &oracle_capsule(&model, &d)) < 1e-12);
    // Without feedback the second utterance's emotion ignores the first.
    let alone = model.forward_dialog(&d[1..]).unwrap();
    assert_eq!(got.utterance_probs[1], alone.utterance_probs[0]);
}

#[test]
fn dialog_encoder_with_zero_parameters_stays_at_zero() {
    let mut model = toy_model(2, 10);
    let rnn = model.params().find("dialog_rnn.weight").unwrap();
    model.params_mut().value_mut(rnn).data_mut().fill(0.0);
    let rnn_b = model.params().find("dialog_rnn.bias").unwrap();
    model.params_mut().value_mut(rnn_b).data_mut().fill(0.0);
    let mut s = model.stream();
    for k in 0..4 {
        s.push(&UtteranceInput::new(vec![2 + k], k % 2, k)).unwrap();
        assert!(s.state().h.data().iter().all(|&x| x == 0.0));
        assert_eq!(s.state().step, k + 1);
    }
}

#[test]
fn dialog_step_matches_scalar_oracle() {
    let mut model = model_with(tiny_config(), 6);
    randomize(&mut model, 23, 1.0);
    let u = UtteranceInput::new(vec![3, 2], 0, 5);
    let mut s = model.stream();
    s.push(&u).unwrap();
    let enc = oracle_encode(&model, &u);
    let vo = row(param(&model, "speaker_embedding"), 0);
    let ve = row(param(&model, "intent_embedding"), 5);
    let (h, c) = lstm_step(
        param(&model, "dialog_rnn.weight"),
        param(&model, "dialog_rnn.bias"),
        &concat(&[&enc.r_u, &vo, &ve]),
        &[0.0, 0.0],
        &[0.0, 0.0],
    );
    assert!(max_abs_diff(s.state().h.data(), &h) < 1e-12);
    assert!(max_abs_diff(s.state().c.data(), &c) < 1e-12);
}

#[test]
fn shared_prefix_gives_identical_states() {
    let model = toy_model(4, 20);
    let schema = LabelSchema::customer_service();
    let mut r = rng(8);
    let prefix = random_dialog(&mut r, 20, &schema, 3, 5);
    let mut a = model.stream();
    let mut b = model.stream();
    for u in &prefix {
        a.push(u).unwrap();
        b.push(u).unwrap();
        assert_eq!(a.state(), b.state());
    }
    a.push(&random_utterance(&mut r, 20, &schema, 5)).unwrap();
    b.push(&random_utterance(&mut r, 20, &schema, 5)).unwrap();
    assert_eq!(a.state().step, b.state().step);
}

#[test]
fn context_attention_zero_scores_is_uniform() {
    let mut model = toy_model(6, 10);
    set_param(&mut model, "dialog_attn.score", &[0.0; 8]);
    let d: Vec<_> = (0..4).map(|k| UtteranceInput::new(vec![2 + k], 0, 0)).collect();
    let p = model.forward_dialog(&d).unwrap();
    assert_eq!(p.alpha_d, vec![0.25; 4]);
}

#[test]
fn context_attention_matches_scalar_oracle() {
    let mut model = model_with(tiny_config(), 8);
    randomize(&mut model, 29, 1.5);
    let schema = LabelSchema::customer_service();
    let d = random_dialog(&mut rng(30), 8, &schema, 4, 4);
    let got = model.forward_dialog(&d).unwrap();
    let want = oracle_capsule(&model, &d);
    assert!(max_abs_diff(&got.alpha_d, &want.alpha_d) < 1e-12);
    assert!(max_abs_diff(&got.satisfaction, &want.satisfaction) < 1e-12);
    assert!(max_abs_diff(&got.curve, &want.curve) < 1e-12);
}

#[test]
fn dialog_heads_zero_parameters_are_uniform() {
    let mut model = toy_model(6, 10);
    for name in ["satisfaction_head.weight", "satisfaction_head.bias", "curve_head.weight", "curve_head.bias"] {
        let id = model.params().find(name).unwrap();
        model.params_mut().value_mut(id).data_mut().fill(0.0);
    }
    let p = model.forward_dialog(&[UtteranceInput::new(vec![2], 0, 0)]).unwrap();
    assert!(p.satisfaction.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    assert!(p.curve.iter().all(|x| (x - 0.2).abs() < 1e-15));
}

#[test]
fn dialog_heads_saturated_bias() {
    let mut model = toy_model(6, 10);
    set_param(&mut model, "satisfaction_head.bias", &[0.0, 100.0, 0.0]);
    set_param(&mut model, "curve_head.bias", &[0.0, 0.0, 0.0, 0.0, 100.0]);
    let p = model.forward_dialog(&[UtteranceInput::new(vec![2], 0, 0)]).unwrap();
    assert!(p.satisfaction[1] > 1.0 - 1e-12);
    assert!(p.curve[4] > 1.0 - 1e-12);
}
