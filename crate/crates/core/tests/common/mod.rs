#![allow(dead_code)]

//! Independent scalar re-implementation of the models, plus fixtures.
//!
//! Nothing here touches the tape: every quantity is recomputed from the
//! parameter values with plain loops.

use chat_capsule::data::{EncodedDialog, LabelSchema};
use chat_capsule::embed::Vocab;
use chat_capsule::metrics::Prf;
use chat_capsule::tensor::Tensor;
use chat_capsule::{DialogPrediction, Model, ModelConfig, UtteranceInput};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vocab(n: usize) -> Vocab {
    let mut toks = vec!["<pad>".to_string(), "<unk>".to_string()];
    toks.extend((2..n).map(|i| format!("t{i}")));
    Vocab::from_tokens(toks)
}

pub fn toy_model(seed: u64, vocab_len: usize) -> Model {
    let mut cfg = ModelConfig::toy(LabelSchema::customer_service());
    cfg.seed = seed;
    Model::new(cfg, vocab(vocab_len), None).unwrap()
}

pub fn model_with(cfg: ModelConfig, vocab_len: usize) -> Model {
    Model::new(cfg, vocab(vocab_len), None).unwrap()
}

/// A random dialog whose token indices avoid PAD.
pub fn random_dialog(
    r: &mut impl Rng,
    vocab_len: usize,
    schema: &LabelSchema,
    len: usize,
    max_tokens: usize,
) -> Vec<UtteranceInput> {
    (0..len)
        .map(|_| random_utterance(r, vocab_len, schema, max_tokens))
        .collect()
}

pub fn random_utterance(
    r: &mut impl Rng,
    vocab_len: usize,
    schema: &LabelSchema,
    max_tokens: usize,
) -> UtteranceInput {
    let n = r.gen_range(1..=max_tokens);
    UtteranceInput::new(
        (0..n).map(|_| r.gen_range(1..vocab_len)).collect(),
        r.gen_range(0..schema.speakers.len()),
        r.gen_range(0..schema.intents.len()),
    )
}

pub fn random_labeled(
    r: &mut impl Rng,
    vocab_len: usize,
    schema: &LabelSchema,
    len: usize,
    max_tokens: usize,
) -> EncodedDialog {
    EncodedDialog {
        id: format!("r{}", r.gen::<u32>()),
        utterances: random_dialog(r, vocab_len, schema, len, max_tokens),
        emotions: (0..len).map(|_| r.gen_range(0..schema.emotions.len())).collect(),
        satisfaction: Some(r.gen_range(0..schema.satisfaction.len())),
        curve: Some(r.gen_range(0..schema.curves.len())),
    }
}

/// Overwrites every parameter with uniform(-scale, scale) values, keeping
/// the PAD row of the word table at zero.
pub fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let p = model.params_mut().get_mut(id);
        let frozen = p.frozen_row;
        let cols = p.value.cols();
        for (k, x) in p.value.data_mut().iter_mut().enumerate() {
            *x = if frozen == Some(k / cols) {
                0.0
            } else {
                r.gen_range(-scale..scale)
            };
        }
    }
}

pub fn zero_params(model: &mut Model) {
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        model.params_mut().value_mut(id).data_mut().fill(0.0);
    }
}

pub fn set_param(model: &mut Model, name: &str, data: &[f64]) {
    let id = model.params().find(name).unwrap_or_else(|| panic!("no {name}"));
    let t = model.params_mut().value_mut(id);
    assert_eq!(t.numel(), data.len(), "{name}");
    t.data_mut().copy_from_slice(data);
}

pub fn param<'m>(model: &'m Model, name: &str) -> &'m Tensor {
    model
        .params()
        .value(model.params().find(name).unwrap_or_else(|| panic!("no {name}")))
}

// ------------------------------------------------------------ scalar math

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|r| (0..cols).map(|c| w.data()[r * cols + c] * x[c]).sum())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn masked_softmax(z: &[f64], mask: &[bool]) -> Vec<f64> {
    let live: Vec<f64> = z.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    let p = softmax(&live);
    let mut it = p.into_iter();
    mask.iter().map(|&m| if m { it.next().unwrap() } else { 0.0 }).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// One LSTM step with gates stacked `[i, f, g, o]` and the weight acting
/// on `[x, h]`.
pub fn lstm_step(weight: &Tensor, bias: &Tensor, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let xh: Vec<f64> = x.iter().chain(h).cloned().collect();
    let z = add(&matvec(weight, &xh), bias.data());
    let mut h2 = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    for k in 0..d {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[d + k]);
        let g = z[2 * d + k].tanh();
        let o = sigmoid(z[3 * d + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

pub fn row(t: &Tensor, r: usize) -> Vec<f64> {
    t.row(r).to_vec()
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

// ------------------------------------------------------------ full models

/// Per-utterance pieces of the scalar capsule forward.
pub struct OracleUtterance {
    pub h_u: Vec<Vec<f64>>,
    pub alpha_u: Vec<f64>,
    pub r_u: Vec<f64>,
}

pub fn oracle_encode(model: &Model, u: &UtteranceInput) -> OracleUtterance {
    let cfg = model.config();
    let words = param(model, "word_embedding");
    let proj = param(model, "input_projection");
    let vo = row(param(model, "speaker_embedding"), u.speaker_id);
    let ve = row(param(model, "intent_embedding"), u.intent_id);
    let wu = param(model, "utterance_rnn.fwd.weight");
    let bu = param(model, "utterance_rnn.fwd.bias");
    let (mut h, mut c) = (vec![0.0; cfg.d_h], vec![0.0; cfg.d_h]);
    let mut cols = Vec::new();
    for (j, &idx) in u.word_indices.iter().enumerate() {
        if !u.mask[j] {
            cols.push(vec![0.0; cfg.d_h]);
            continue;
        }
        let w = matvec(proj, words.row(idx));
        let x = if cfg.use_rectifier {
            let co = cosine(&w, &vo);
            let ce = cosine(&w, &ve);
            let so: Vec<f64> = vo.iter().map(|v| v * co).collect();
            let se: Vec<f64> = ve.iter().map(|v| v * ce).collect();
            concat(&[&w, &so, &se])
        } else {
            concat(&[&w, &vo, &ve])
        };
        let (h2, c2) = lstm_step(wu, bu, &x, &h, &c);
        h = h2;
        c = c2;
        cols.push(h.clone());
    }
    let a1 = param(model, "utterance_attn.hidden");
    let a2 = param(model, "utterance_attn.speaker");
    let a3 = param(model, "utterance_attn.intent");
    let ws = param(model, "utterance_attn.score");
    let sp = matvec(a2, &vo);
    let it = matvec(a3, &ve);
    let scores: Vec<f64> = cols
        .iter()
        .map(|col| {
            let m: Vec<f64> = add(&add(&matvec(a1, col), &sp), &it)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            dot(ws.data(), &m)
        })
        .collect();
    let alpha_u = masked_softmax(&scores, &u.mask);
    let mut r_u = vec![0.0; cfg.d_h];
    for (col, a) in cols.iter().zip(&alpha_u) {
        for k in 0..cfg.d_h {
            r_u[k] += col[k] * a;
        }
    }
    OracleUtterance {
        h_u: cols,
        alpha_u,
        r_u,
    }
}

pub fn oracle_capsule(model: &Model, utterances: &[UtteranceInput]) -> DialogPrediction {
    let cfg = model.config();
    let hw = param(model, "emotion_head.weight");
    let hb = param(model, "emotion_head.bias");
    let dw = param(model, "dialog_rnn.weight");
    let db = param(model, "dialog_rnn.bias");
    let (mut h, mut c) = (vec![0.0; cfg.d_h], vec![0.0; cfg.d_h]);
    let mut probs = Vec::new();
    let mut alphas = Vec::new();
    let mut states = Vec::new();
    for u in utterances {
        let enc = oracle_encode(model, u);
        let head_in = if cfg.use_feedback {
            concat(&[&enc.r_u, &h])
        } else {
            enc.r_u.clone()
        };
        probs.push(softmax(&add(&matvec(hw, &head_in), hb.data())));
        alphas.push(enc.alpha_u);
        let vo = row(param(model, "speaker_embedding"), u.speaker_id);
        let ve = row(param(model, "intent_embedding"), u.intent_id);
        let (h2, c2) = lstm_step(dw, db, &concat(&[&enc.r_u, &vo, &ve]), &h, &c);
        h = h2;
        c = c2;
        states.push(h.clone());
    }
    let wd = param(model, "dialog_attn.score");
    let e: Vec<f64> = states.iter().map(|s| dot(wd.data(), s)).collect();
    let alpha_d = softmax(&e);
    let mut r_d = vec![0.0; cfg.d_h];
    for (s, a) in states.iter().zip(&alpha_d) {
        for k in 0..cfg.d_h {
            r_d[k] += s[k] * a;
        }
    }
    DialogPrediction {
        utterance_probs: probs,
        satisfaction: heads(model, "satisfaction_head", &r_d),
        curve: heads(model, "curve_head", &r_d),
        alpha_u: alphas,
        alpha_d,
    }
}

fn heads(model: &Model, name: &str, r: &[f64]) -> Vec<f64> {
    let w = param(model, &format!("{name}.weight"));
    let b = param(model, &format!("{name}.bias"));
    softmax(&add(&matvec(w, r), b.data()))
}

pub fn oracle_baseline(model: &Model, utterances: &[UtteranceInput]) -> DialogPrediction {
    let d = model.config().d_h;
    let words = param(model, "word_embedding");
    let uw = param(model, "utterance_rnn.weight");
    let ub = param(model, "utterance_rnn.bias");
    let dw = param(model, "dialog_rnn.weight");
    let db = param(model, "dialog_rnn.bias");
    let hw = param(model, "emotion_head.weight");
    let hb = param(model, "emotion_head.bias");
    let (mut hd, mut cd) = (vec![0.0; d], vec![0.0; d]);
    let mut probs = Vec::new();
    for u in utterances {
        let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
        for (j, &idx) in u.word_indices.iter().enumerate() {
            if u.mask[j] {
                let (h2, c2) = lstm_step(uw, ub, words.row(idx), &h, &c);
                h = h2;
                c = c2;
            }
        }
        probs.push(softmax(&add(&matvec(hw, &h), hb.data())));
        let (h2, c2) = lstm_step(dw, db, &h, &hd, &cd);
        hd = h2;
        cd = c2;
    }
    DialogPrediction {
        utterance_probs: probs,
        satisfaction: heads(model, "satisfaction_head", &hd),
        curve: heads(model, "curve_head", &hd),
        alpha_u: Vec::new(),
        alpha_d: Vec::new(),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn prediction_diff(a: &DialogPrediction, b: &DialogPrediction) -> f64 {
    let mut d = max_abs_diff(&a.satisfaction, &b.satisfaction).max(max_abs_diff(&a.curve, &b.curve));
    assert_eq!(a.utterance_probs.len(), b.utterance_probs.len());
    for (x, y) in a.utterance_probs.iter().zip(&b.utterance_probs) {
        d = d.max(max_abs_diff(x, y));
    }
    assert_eq!(a.alpha_u.len(), b.alpha_u.len());
    for (x, y) in a.alpha_u.iter().zip(&b.alpha_u) {
        d = d.max(max_abs_diff(x, y));
    }
    d.max(max_abs_diff(&a.alpha_d, &b.alpha_d))
}

pub fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

/// Per-class recomputation straight from the definitions.
pub fn oracle_prf(k: usize, counts: &[u64]) -> Prf {
    let at = |g: usize, p: usize| counts[g * k + p] as f64;
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut ps = 0.0;
    let mut rs = 0.0;
    let mut fs = 0.0;
    let mut correct = 0.0;
    for c in 0..k {
        let tp = at(c, c);
        correct += tp;
        let predicted: f64 = (0..k).map(|g| at(g, c)).sum();
        let actual: f64 = (0..k).map(|p| at(c, p)).sum();
        let p = if predicted == 0.0 { 0.0 } else { tp / predicted };
        let r = if actual == 0.0 { 0.0 } else { tp / actual };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ps += p;
        rs += r;
        fs += f;
    }
    let kf = k as f64;
    Prf {
        precision: ps / kf,
        recall: rs / kf,
        f1: fs / kf,
        accuracy: correct / total,
    }
}
