mod common;

use chat_capsule::gradcheck::{gradcheck, relative_error, toy_fixture, GradcheckOptions};
use chat_capsule::ModelConfig;
use common::*;

#[test]
fn toy_fixture_passes_and_covers_every_tensor() {
    let (mut model, dialogs) = toy_fixture(1).unwrap();
    let report = gradcheck(&mut model, &dialogs, &GradcheckOptions::default()).unwrap();
    assert!(report.passed(), "{report}");
    assert_eq!(report.tensors.len(), model.params().len());
    for t in &report.tensors {
        assert!(t.checked > 0, "{} was never checked", t.name);
        assert!(t.checked + t.kinked <= t.numel);
    }
}

#[test]
fn a_corrupted_gradient_is_named() {
    let (mut model, dialogs) = toy_fixture(2).unwrap();
    let opts = GradcheckOptions {
        corrupt: Some("emotion_head.weight".into()),
        ..Default::default()
    };
    let report = gradcheck(&mut model, &dialogs, &opts).unwrap();
    assert!(!report.passed());
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    assert_eq!(failed, ["emotion_head.weight"]);
}

#[test]
fn checking_leaves_parameters_untouched() {
    let (mut model, dialogs) = toy_fixture(4).unwrap();
    let before: Vec<u64> = model.params().iter().flat_map(|(_, p)| bits(p.value.data())).collect();
    gradcheck(&mut model, &dialogs, &GradcheckOptions::default()).unwrap();
    let after: Vec<u64> = model.params().iter().flat_map(|(_, p)| bits(p.value.data())).collect();
    assert_eq!(before, after);
}

#[test]
fn variants_pass_too() {
    for (rect, feed, bi) in [(false, true, false), (false, false, false), (true, true, true)] {
        let (model, dialogs) = toy_fixture(5).unwrap();
        let mut cfg: ModelConfig = model.config().clone();
        cfg.use_rectifier = rect;
        cfg.use_feedback = feed;
        cfg.bidirectional_utterance = bi;
        let mut variant = chat_capsule::Model::new(cfg, model.vocab().clone(), None).unwrap();
        let report = gradcheck(&mut variant, &dialogs, &GradcheckOptions::default()).unwrap();
        assert!(report.passed(), "rect={rect} feed={feed} bi={bi}\n{report}");
    }
}

#[test]
fn zero_parameters_pass() {
    let (mut model, dialogs) = toy_fixture(1).unwrap();
    zero_params(&mut model);
    let report = gradcheck(&mut model, &dialogs, &GradcheckOptions::default()).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn relative_error_examples() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert_eq!(relative_error(2.0, 1.0), 0.5);
    // Tiny values are compared on an absolute scale.
    assert_eq!(relative_error(1e-9, 0.0), 1e-3);
}

#[test]
fn empty_input_is_rejected() {
    let (mut model, _) = toy_fixture(1).unwrap();
    assert!(gradcheck(&mut model, &[], &GradcheckOptions::default()).is_err());
}
