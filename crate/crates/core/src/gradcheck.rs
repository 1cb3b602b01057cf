//! Finite-difference verification of full-model gradients.

use std::fmt;

use crate::data::{encode_dialog, pad_together, synthetic, tokens_of, EncodedDialog, LabelSchema};
use crate::embed::{build_vocab, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// Floor of the relative-error denominator. Central differences of an
/// `O(1)` loss carry roundoff near `1e-11`, so derivatives much smaller
/// than this cannot be resolved relatively.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Entries where both derivatives are below this magnitude are not counted.
pub const NEGLIGIBLE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Entries compared.
    pub checked: usize,
    /// Entries skipped because the `±h` probes put a ReLU on different
    /// sides of its kink.
    pub kinked: usize,
    pub numel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(move |t| !(t.max_rel_error <= self.threshold))
    }

    pub fn worst(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            let verdict = if t.max_rel_error <= self.threshold { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<28} {:>12.3e}  {:>5}/{:<5} kinks {:<3} {verdict}",
                t.name, t.max_rel_error, t.checked, t.numel, t.kinked
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub threshold: f64,
    /// Test hook: perturbs the analytic gradient of the named tensor.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: DEFAULT_STEP,
            threshold: DEFAULT_THRESHOLD,
            corrupt: None,
        }
    }
}

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(SCALE_FLOOR)
}

/// Compares backpropagated gradients of the dropout-free batch loss on
/// `dialogs` with central differences, for every trainable tensor.
pub fn gradcheck(model: &mut Model, dialogs: &[EncodedDialog], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if dialogs.is_empty() {
        return Err(Error::Usage("gradcheck needs at least one dialog".into()));
    }
    let batch = pad_together(dialogs);
    model.params_mut().clear_grads();
    model.accumulate_batch_gradients(&batch, None)?;

    let ids: Vec<_> = model.params().ids().collect();
    if let Some(name) = &opts.corrupt {
        let id = model
            .params()
            .find(name)
            .ok_or_else(|| Error::Usage(format!("no parameter named {name}")))?;
        let g = model.params_mut().get_mut(id).value.grad.get_or_insert_with(Vec::new);
        if let Some(x) = g.iter_mut().find(|x| x.abs() > NEGLIGIBLE) {
            *x = *x * 1.5 + 1e-3;
        }
    }

    let mut tensors = Vec::new();
    let mut up_relus = Vec::new();
    let mut down_relus = Vec::new();
    for id in ids {
        let p = model.params().get(id);
        if !p.trainable {
            continue;
        }
        let name = p.name.clone();
        let numel = p.value.numel();
        let cols = p.value.cols();
        let frozen = p.frozen_row;
        let analytic = p.value.grad.clone().unwrap_or_else(|| vec![0.0; numel]);
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut kinked = 0;
        for k in 0..numel {
            if frozen == Some(k / cols) {
                continue;
            }
            let orig = model.params().value(id).data()[k];
            model.params_mut().value_mut(id).data_mut()[k] = orig + opts.step;
            up_relus.clear();
            let up = model.batch_loss_traced(&batch.dialogs, &mut up_relus)?.total();
            model.params_mut().value_mut(id).data_mut()[k] = orig - opts.step;
            down_relus.clear();
            let down = model.batch_loss_traced(&batch.dialogs, &mut down_relus)?.total();
            model.params_mut().value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[k];
            if a.abs() < NEGLIGIBLE && numeric.abs() < NEGLIGIBLE {
                continue;
            }
            if up_relus != down_relus {
                kinked += 1;
                continue;
            }
            checked += 1;
            let e = relative_error(a, numeric);
            if e.is_nan() || e > worst {
                worst = if e.is_nan() { f64::INFINITY } else { e };
            }
        }
        tensors.push(TensorCheck {
            name,
            max_rel_error: worst,
            checked,
            kinked,
            numel,
        });
    }
    model.params_mut().clear_grads();
    Ok(GradcheckReport {
        threshold: opts.threshold,
        tensors,
    })
}


/// The standard check problem: the toy configuration (every width 8, all
/// switches on) with a 20-entry vocabulary and two 2-utterance planted
/// dialogs.
pub fn toy_fixture(seed: u64) -> Result<(Model, Vec<EncodedDialog>)> {
    let schema = LabelSchema::customer_service();
    let mut dialogs = synthetic::gen_synthetic(8, seed, &schema);
    let full = build_vocab(tokens_of(&dialogs), 1)?;
    dialogs.truncate(2);
    for d in &mut dialogs {
        d.utterances.truncate(2);
    }
    let vocab = Vocab::from_tokens(full.tokens().iter().skip(2).take(18));
    let mut config = ModelConfig::toy(schema);
    config.seed = seed;
    let model = Model::new(config, vocab, None)?;
    let encoded = dialogs.iter().map(|d| encode_dialog(d, model.vocab())).collect();
    Ok((model, encoded))
}
