//! Confusion matrices and macro-averaged precision, recall and F1.

use std::fmt;

use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// `K × K` counts, rows gold, columns predicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::dim("confusion matrix", &[counts.len()], &[k, k]));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gold: usize, pred: usize) -> Result<()> {
        for (what, i) in [("gold", gold), ("predicted", pred)] {
            if i >= self.k {
                return Err(Error::Contract(format!(
                    "{what} class {i} outside 0..{}",
                    self.k
                )));
            }
        }
        self.counts[gold * self.k + pred] += 1;
        Ok(())
    }

    /// Scores a distribution by its argmax.
    pub fn accumulate_probs(&mut self, gold: usize, probs: &[f64]) -> Result<()> {
        self.accumulate(gold, argmax(probs))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::dim("confusion merge", &[self.k], &[other.k]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Macro scores over all configured classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class scores are averaged with equal weight, including classes that
/// never occur (which score 0). F1 is averaged per class, not recomputed
/// from the averaged precision and recall.
pub fn macro_prf(cm: &ConfusionMatrix) -> Result<Prf> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("empty confusion matrix".into()));
    }
    let k = cm.k;
    let (mut p_sum, mut r_sum, mut f_sum, mut trace) = (0.0, 0.0, 0.0, 0);
    for c in 0..k {
        let tp = cm.get(c, c);
        let predicted: u64 = (0..k).map(|g| cm.get(g, c)).sum();
        let gold: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, gold);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
        trace += tp;
    }
    let k = k as f64;
    Ok(Prf {
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
        accuracy: ratio(trace, total),
    })
}

/// Scores of one evaluation run. Dialog-level entries are `None` when the
/// corpus carries no such labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub utterance: Prf,
    pub satisfaction: Option<Prf>,
    pub curve: Option<Prf>,
    pub dialogs: usize,
    pub utterances: usize,
}

impl Report {
    pub fn from_matrices(
        utt: &ConfusionMatrix,
        sat: &ConfusionMatrix,
        curve: &ConfusionMatrix,
        dialogs: usize,
    ) -> Result<Self> {
        let opt = |cm: &ConfusionMatrix| (cm.total() > 0).then(|| macro_prf(cm)).transpose();
        Ok(Report {
            utterance: macro_prf(utt)?,
            satisfaction: opt(sat)?,
            curve: opt(curve)?,
            dialogs,
            utterances: utt.total() as usize,
        })
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("dialogs={}\nutterances={}\n", self.dialogs, self.utterances);
        for (name, prf) in self.sections() {
            out.push_str(&format!(
                "{name}.precision={}\n{name}.recall={}\n{name}.f1={}\n{name}.accuracy={}\n",
                prf.precision, prf.recall, prf.f1, prf.accuracy
            ));
        }
        out
    }

    fn sections(&self) -> Vec<(&'static str, Prf)> {
        let mut s = vec![("utterance", self.utterance)];
        if let Some(p) = self.satisfaction {
            s.push(("satisfaction", p));
        }
        if let Some(p) = self.curve {
            s.push(("curve", p));
        }
        s
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} dialogs, {} utterances", self.dialogs, self.utterances)?;
        writeln!(f, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1", "accuracy")?;
        for (name, p) in self.sections() {
            writeln!(
                f,
                "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                name, p.precision, p.recall, p.f1, p.accuracy
            )?;
        }
        Ok(())
    }
}
