//! Adam with per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamGroupKind, ParamId, ParamStore};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// A set of parameters sharing one learning rate.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<ParamId>,
    pub lr: f64,
}

/// Moment estimates and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }

    /// Checks that moment shapes line up with `store`.
    pub fn check_compatible(&self, store: &ParamStore) -> Result<()> {
        let ok = self.m.len() == store.len()
            && self.v.len() == store.len()
            && store.iter().all(|(id, p)| {
                self.m[id.index()].len() == p.value.numel()
                    && self.v[id.index()].len() == p.value.numel()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Format(
                "optimizer state does not match the parameter layout".into(),
            ))
        }
    }
}

/// Checks that every trainable parameter sits in exactly one group and that
/// every rate is positive.
pub fn validate_groups(groups: &[ParamGroup], store: &ParamStore) -> Result<()> {
    let mut seen = vec![0usize; store.len()];
    for g in groups {
        if !(g.lr > 0.0) {
            return Err(Error::Contract(format!(
                "group {} has non-positive learning rate {}",
                g.name, g.lr
            )));
        }
        for id in &g.params {
            seen[id.index()] += 1;
        }
    }
    let bad = seen
        .iter()
        .enumerate()
        .find(|&(i, &n)| n > 1 || (n == 0 && store.get(ParamId(i)).trainable));
    if let Some((i, n)) = bad {
        return Err(Error::Contract(format!(
            "parameter {} belongs to {n} groups",
            store.get(ParamId(i)).name
        )));
    }
    Ok(())
}

/// The two standard groups: word vectors and everything else.
pub fn default_groups(store: &ParamStore, lr_main: f64, lr_word: f64) -> Vec<ParamGroup> {
    let pick = |kind| {
        store
            .iter()
            .filter(|(_, p)| p.trainable && p.group == kind)
            .map(|(id, _)| id)
            .collect::<Vec<_>>()
    };
    vec![
        ParamGroup {
            name: "main".into(),
            params: pick(ParamGroupKind::Main),
            lr: lr_main,
        },
        ParamGroup {
            name: "word_vectors".into(),
            params: pick(ParamGroupKind::WordVectors),
            lr: lr_word,
        },
    ]
}

/// One Adam update of every grouped parameter, then clears all gradients.
///
/// Fails before touching anything if a grouped parameter has no gradient.
pub fn adam_step(groups: &[ParamGroup], state: &mut AdamState, store: &mut ParamStore) -> Result<()> {
    state.check_compatible(store)?;
    for g in groups {
        for &id in &g.params {
            if store.get(id).value.grad.is_none() {
                return Err(Error::Contract(format!(
                    "parameter {} has no gradient",
                    store.get(id).name
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for g in groups {
        for &id in &g.params {
            let p = store.get_mut(id);
            let grad = p.value.grad.take().expect("checked above");
            let m = &mut state.m[id.index()];
            let v = &mut state.v[id.index()];
            for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
                let gk = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *theta -= g.lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    store.clear_grads();
    Ok(())
}

/// Groups plus state, as owned by a training loop.
#[derive(Clone, Debug)]
pub struct Adam {
    pub groups: Vec<ParamGroup>,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, lr_main: f64, lr_word: f64) -> Result<Self> {
        let groups = default_groups(store, lr_main, lr_word);
        let groups: Vec<_> = groups.into_iter().filter(|g| !g.params.is_empty()).collect();
        validate_groups(&groups, store)?;
        Ok(Adam {
            groups,
            state: AdamState::new(store),
        })
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        adam_step(&self.groups, &mut self.state, store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(values: &[f64]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .enumerate()
            .map(|(i, &v)| s.add(&format!("p{i}"), Tensor::scalar(v), ParamGroupKind::Main))
            .collect();
        (s, ids)
    }

    fn group(name: &str, params: Vec<ParamId>, lr: f64) -> ParamGroup {
        ParamGroup {
            name: name.into(),
            params,
            lr,
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, ids) = scalar_store(&[0.5, -2.0]);
        let mut st = AdamState::new(&s);
        s.zero_grads();
        adam_step(&[group("g", ids.clone(), 1e-3)], &mut st, &mut s).unwrap();
        assert_eq!(s.value(ids[0]).item(), 0.5);
        assert_eq!(s.value(ids[1]).item(), -2.0);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn single_step_matches_scalar_formula() {
        let (mut s, ids) = scalar_store(&[0.0]);
        let mut st = AdamState::new(&s);
        s.get_mut(ids[0]).value.grad = Some(vec![1.0]);
        adam_step(&[group("g", ids.clone(), 1e-3)], &mut st, &mut s).unwrap();
        // independent evaluation of the update rule at t = 1
        let m = (1.0 - 0.9) * 1.0;
        let v = (1.0 - 0.999) * 1.0 * 1.0;
        let m_hat = m / (1.0 - 0.9f64);
        let v_hat = v / (1.0 - 0.999f64);
        let expected = 0.0 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_eq!(s.value(ids[0]).item(), expected);
        assert!((expected + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn group_rates_scale_updates() {
        let (mut s, ids) = scalar_store(&[1.0, 1.0]);
        let mut st = AdamState::new(&s);
        let groups = [group("a", vec![ids[0]], 1e-3), group("b", vec![ids[1]], 1e-4)];
        for _ in 0..3 {
            s.get_mut(ids[0]).value.grad = Some(vec![0.3]);
            s.get_mut(ids[1]).value.grad = Some(vec![0.3]);
            adam_step(&groups, &mut st, &mut s).unwrap();
        }
        let da = 1.0 - s.value(ids[0]).item();
        let db = 1.0 - s.value(ids[1]).item();
        assert!((da / db - 10.0).abs() < 1e-9);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let (mut s, ids) = scalar_store(&[0.0, 0.0]);
        let mut st = AdamState::new(&s);
        s.get_mut(ids[0]).value.grad = Some(vec![1.0]);
        let err = adam_step(&[group("g", ids, 1e-3)], &mut st, &mut s).unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
        // nothing moved
        assert_eq!(st.t, 0);
    }

    #[test]
    fn grads_cleared_after_step() {
        let (mut s, ids) = scalar_store(&[0.0, 1.0]);
        let mut st = AdamState::new(&s);
        s.zero_grads();
        adam_step(&[group("g", ids, 1e-3)], &mut st, &mut s).unwrap();
        assert!(s.iter().all(|(_, p)| p.value.grad.is_none()));
    }

    #[test]
    fn groups_must_partition() {
        let (s, ids) = scalar_store(&[0.0, 1.0]);
        let bad = [group("g", vec![ids[0]], 1e-3)];
        assert!(validate_groups(&bad, &s).is_err());
        let dup = [group("g", ids.clone(), 1e-3), group("h", vec![ids[0]], 1e-3)];
        assert!(validate_groups(&dup, &s).is_err());
        let neg = [group("g", ids, -1.0)];
        assert!(validate_groups(&neg, &s).is_err());
    }

    #[test]
    fn constant_gradient_step_bound() {
        let (mut s, ids) = scalar_store(&[0.0]);
        let mut st = AdamState::new(&s);
        let lr = 1e-3;
        let mut prev = 0.0;
        for _ in 0..200 {
            s.get_mut(ids[0]).value.grad = Some(vec![2.5]);
            adam_step(&[group("g", ids.clone(), lr)], &mut st, &mut s).unwrap();
            let now = s.value(ids[0]).item();
            assert!((now - prev).abs() <= lr * (1.0 + 1e-6));
            prev = now;
        }
    }

    #[test]
    fn order_within_group_is_irrelevant() {
        let (mut a, ia) = scalar_store(&[0.1, 0.2, 0.3]);
        let (mut b, ib) = scalar_store(&[0.1, 0.2, 0.3]);
        let mut sa = AdamState::new(&a);
        let mut sb = AdamState::new(&b);
        let rev: Vec<_> = ib.iter().rev().cloned().collect();
        for step in 0..4 {
            for (k, (&x, &y)) in ia.iter().zip(&ib).enumerate() {
                let g = (step as f64 + 1.0) * (k as f64 - 1.0);
                a.get_mut(x).value.grad = Some(vec![g]);
                b.get_mut(y).value.grad = Some(vec![g]);
            }
            adam_step(&[group("g", ia.clone(), 1e-2)], &mut sa, &mut a).unwrap();
            adam_step(&[group("g", rev.clone(), 1e-2)], &mut sb, &mut b).unwrap();
        }
        for (x, y) in ia.iter().zip(&ib) {
            assert_eq!(a.value(*x).item(), b.value(*y).item());
        }
    }
}
