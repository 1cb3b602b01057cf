mod common;

use std::collections::BTreeMap;

use chat_capsule::data::{pad_together, LabelSchema};
use chat_capsule::embed::{build_vocab, load_pretrained, EmbeddingTable, PAD, UNK};
use chat_capsule::optim::{adam_step, default_groups, validate_groups, Adam, AdamState, ParamGroup};
use chat_capsule::tensor::{ParamGroupKind, ParamStore, Tape, Tensor};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn vocab_order_matches_an_independent_frequency_sort() {
    let mut r = rng(12);
    // Zipf-like counts over 100 token types, emitted in random order.
    let mut stream: Vec<String> = Vec::new();
    for k in 0..100usize {
        let count = (200.0 / (k + 1) as f64).ceil() as usize;
        stream.extend(std::iter::repeat_n(format!("w{k}"), count));
    }
    for i in (1..stream.len()).rev() {
        stream.swap(i, r.gen_range(0..=i));
    }
    let sentences: Vec<Vec<String>> = stream.chunks(7).map(<[String]>::to_vec).collect();
    let vocab = build_vocab(sentences.iter().map(Vec::as_slice), 1).unwrap();

    // Oracle: count, remember first position, sort by (-count, first).
    let mut seen: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (pos, t) in stream.iter().enumerate() {
        seen.entry(t).or_insert((0, pos)).0 += 1;
    }
    let mut expected: Vec<(&str, usize, usize)> = seen.into_iter().map(|(t, (c, p))| (t, c, p)).collect();
    expected.sort_by_key(|&(_, c, p)| (std::cmp::Reverse(c), p));

    assert_eq!(vocab.len(), 102);
    assert_eq!(vocab.get("<pad>"), PAD);
    assert_eq!(vocab.get("<unk>"), UNK);
    for (i, (t, _, _)) in expected.iter().enumerate() {
        assert_eq!(vocab.token(i + 2), Some(*t));
    }
    assert_eq!(vocab.get("never-seen"), UNK);
}

#[test]
fn vocab_is_bijective_over_regular_entries() {
    let sentences = [vec!["a", "b", "c"], vec!["c", "d", "a", "a"]];
    let vocab = build_vocab(sentences.iter().map(Vec::as_slice), 1).unwrap();
    for i in 2..vocab.len() {
        assert_eq!(vocab.get(vocab.token(i).unwrap()), i);
    }
}

#[test]
fn half_covered_vocabulary_reports_half_coverage() {
    let sentences = [(0..20).map(|i| format!("tok{i}")).collect::<Vec<_>>()];
    let vocab = build_vocab(sentences.iter().map(Vec::as_slice), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vec.txt");
    let mut text = String::from("13 3\n");
    let mut r = rng(2);
    let mut file_rows = BTreeMap::new();
    for i in (0..20).step_by(2) {
        let v: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        text += &format!("tok{i} {} {} {}\n", v[0], v[1], v[2]);
        file_rows.insert(format!("tok{i}"), v);
    }
    // Tokens outside the vocabulary do not count.
    for extra in ["zebra", "yak", "xylophone"] {
        text += &format!("{extra} 0.5 0.5 0.5\n");
    }
    std::fs::write(&path, &text).unwrap();

    // Recount covered vocabulary entries straight from the file's lines.
    let covered = text
        .lines()
        .skip(1)
        .filter(|l| {
            let t = l.split_whitespace().next().unwrap();
            vocab.get(t) != UNK
        })
        .count();
    let expected = covered as f64 / (vocab.len() - 2) as f64;

    let pre = load_pretrained(&path, &vocab, 3, &mut rng(3)).unwrap();
    assert_eq!(pre.coverage, expected);
    assert_eq!(pre.coverage, 0.5);
    for (tok, v) in &file_rows {
        assert_eq!(bits(pre.table.table.row(vocab.get(tok))), bits(v));
    }
    assert!(pre.table.table.row(PAD).iter().all(|&x| x == 0.0));
    for i in (1..20).step_by(2) {
        let row = pre.table.table.row(vocab.get(&format!("tok{i}")));
        assert!(row.iter().all(|x| x.abs() <= 0.1));
    }
}

#[test]
fn random_gather_matches_row_copies() {
    let mut r = rng(5);
    let table = EmbeddingTable::random(30, 4, true, &mut r);
    let rows_src = table.table.clone();
    let mut store = ParamStore::new();
    let emb = table.register(&mut store, "w", ParamGroupKind::WordVectors);
    for _ in 0..20 {
        let idx: Vec<usize> = (0..r.gen_range(1..10)).map(|_| r.gen_range(0..30)).collect();
        let mut tape = Tape::new();
        let g = emb.lookup(&mut tape, &store, &idx).unwrap();
        let naive: Vec<f64> = idx.iter().flat_map(|&i| rows_src.row(i).to_vec()).collect();
        assert_eq!(tape.value(g).data(), naive.as_slice());
        assert_eq!(tape.shape(g), &[idx.len(), 4]);
    }
}

#[test]
fn gather_gradients_touch_only_gathered_rows() {
    let mut store = ParamStore::new();
    let emb = EmbeddingTable::random(6, 2, true, &mut rng(1)).register(&mut store, "w", ParamGroupKind::WordVectors);
    let mut tape = Tape::new();
    let g = emb.lookup(&mut tape, &store, &[0, 3, 3, 5]).unwrap();
    let s = tape.sum(g);
    tape.backward(s, &mut store).unwrap();
    let grad = store.get(emb.id).value.grad.clone().unwrap();
    assert_eq!(grad, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn adam_multi_step_matches_scalar_recurrence() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(&[0.3, -1.0]), ParamGroupKind::Main);
    let groups = vec![ParamGroup {
        name: "main".into(),
        params: vec![id],
        lr: 0.01,
    }];
    let mut state = AdamState::new(&store);
    let grads = [[1.0, -2.0], [0.5, 0.0], [-3.0, 1e-3], [0.0, 7.0], [2.0, -2.0]];
    let (mut theta, mut m, mut v) = ([0.3f64, -1.0], [0.0f64; 2], [0.0f64; 2]);
    for (t, g) in grads.iter().enumerate() {
        store.get_mut(id).value.grad = Some(g.to_vec());
        adam_step(&groups, &mut state, &mut store).unwrap();
        let t = (t + 1) as i32;
        for k in 0..2 {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            theta[k] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(max_abs_diff(store.value(id).data(), &theta) < 1e-15);
        assert_eq!(state.t, t as u64);
        assert!(store.get(id).value.grad.is_none());
    }
}

#[test]
fn default_groups_partition_every_trainable_tensor() {
    let model = toy_model(1, 10);
    let groups = default_groups(model.params(), 1e-3, 1e-4);
    validate_groups(&groups, model.params()).unwrap();
    let mut seen = vec![0; model.params().len()];
    for g in &groups {
        assert!(g.lr > 0.0);
        for id in &g.params {
            seen[id.index()] += 1;
        }
    }
    assert!(seen.iter().all(|&n| n == 1));
    let word = groups.iter().find(|g| g.name == "word_vectors").unwrap();
    assert_eq!(word.params.len(), 1);
    assert_eq!(model.params().get(word.params[0]).name, "word_embedding");
}

#[test]
fn pad_row_stays_zero_through_training() {
    let schema = LabelSchema::customer_service();
    let mut r = rng(3);
    let mut model = toy_model(2, 12);
    let mut adam = Adam::new(model.params(), 1e-2, 1e-2).unwrap();
    let dialogs: Vec<_> = (0..6).map(|_| random_labeled(&mut r, 12, &schema, 3, 5)).collect();
    // Padding tokens in the batch look up the PAD row.
    let batch = pad_together(&dialogs);
    for step in 0..20 {
        model.accumulate_batch_gradients(&batch, Some(step)).unwrap();
        adam.step(model.params_mut()).unwrap();
    }
    assert!(param(&model, "word_embedding").row(PAD).iter().all(|&x| x == 0.0));
    assert_eq!(adam.state.t, 20);
    for ((_, p), m) in model.params().iter().zip(&adam.state.m) {
        assert_eq!(p.value.numel(), m.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn learning_rates_scale_first_steps(g in -100.0f64..100.0, lr in 1e-5f64..1e-1) {
        prop_assume!(g.abs() > 1e-3);
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(0.0), ParamGroupKind::Main);
        let b = store.add("b", Tensor::scalar(0.0), ParamGroupKind::WordVectors);
        let groups = default_groups(&store, lr, lr / 10.0);
        let mut state = AdamState::new(&store);
        store.get_mut(a).value.grad = Some(vec![g]);
        store.get_mut(b).value.grad = Some(vec![g]);
        adam_step(&groups, &mut state, &mut store).unwrap();
        let (da, db) = (store.value(a).item(), store.value(b).item());
        prop_assert!((da / db - 10.0).abs() < 1e-9);
        // First step magnitude is lr up to epsilon effects.
        prop_assert!((da.abs() - lr).abs() <= lr * 1e-6);
    }
}
