//! Dialog-level capsule: a causal LSTM over `[r_u, v_o, v_e]`, context
//! attention over its states, and the satisfaction and curve heads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::uniform_fan_in;
use crate::lstm::{LstmParams, LstmVars};
use crate::tensor::{ParamGroupKind, ParamId, ParamStore, Tape, Tensor, Var};

/// Concrete dialog-encoder state between utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogState {
    pub h: Tensor,
    pub c: Tensor,
    /// Utterances consumed so far.
    pub step: usize,
}

impl DialogState {
    pub fn zero(d_h: usize) -> Self {
        DialogState {
            h: Tensor::zeros(&[d_h]),
            c: Tensor::zeros(&[d_h]),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DialogDims {
    pub d_u: usize,
    pub d_model: usize,
    pub d_h: usize,
    pub n_satisfaction: usize,
    pub n_curves: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DialogCapsuleParams {
    pub dims: DialogDims,
    pub rnn: LstmParams,
    pub attn_score: ParamId,
    pub sat_weight: ParamId,
    pub sat_bias: ParamId,
    pub curve_weight: ParamId,
    pub curve_bias: ParamId,
}

impl DialogCapsuleParams {
    pub fn init(store: &mut ParamStore, dims: DialogDims, rng: &mut impl Rng) -> Self {
        let main = ParamGroupKind::Main;
        let rnn = LstmParams::init(store, "dialog_rnn", dims.d_u + 2 * dims.d_model, dims.d_h, rng);
        let attn_score = store.add("dialog_attn.score", uniform_fan_in(1, dims.d_h, rng), main);
        let sat_weight = store.add(
            "satisfaction_head.weight",
            uniform_fan_in(dims.n_satisfaction, dims.d_h, rng),
            main,
        );
        let sat_bias = store.add(
            "satisfaction_head.bias",
            Tensor::zeros(&[dims.n_satisfaction]),
            main,
        );
        let curve_weight = store.add(
            "curve_head.weight",
            uniform_fan_in(dims.n_curves, dims.d_h, rng),
            main,
        );
        let curve_bias = store.add("curve_head.bias", Tensor::zeros(&[dims.n_curves]), main);
        DialogCapsuleParams {
            dims,
            rnn,
            attn_score,
            sat_weight,
            sat_bias,
            curve_weight,
            curve_bias,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> DialogCapsule {
        DialogCapsule {
            rnn: self.rnn.bind(tape, store),
            attn_score: tape.param(store, self.attn_score),
            sat_weight: tape.param(store, self.sat_weight),
            sat_bias: tape.param(store, self.sat_bias),
            curve_weight: tape.param(store, self.curve_weight),
            curve_bias: tape.param(store, self.curve_bias),
        }
    }
}

/// The dialog capsule bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct DialogCapsule {
    rnn: LstmVars,
    attn_score: Var,
    sat_weight: Var,
    sat_bias: Var,
    curve_weight: Var,
    curve_bias: Var,
}

/// Output of [`DialogCapsule::context_attention`].
#[derive(Clone, Copy, Debug)]
pub struct DialogEncoding {
    /// `[d_h × M]`
    pub h_d: Var,
    pub alpha_d: Var,
    pub r_d: Var,
}

impl DialogCapsule {
    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        self.rnn.zero_state(tape)
    }

    /// One encoder step on `[r_u, v_o, v_e]`; returns the new `(h, c)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        h: Var,
        c: Var,
        r_u: Var,
        v_o: Var,
        v_e: Var,
    ) -> Result<(Var, Var)> {
        let x = tape.concat(&[r_u, v_o, v_e])?;
        self.rnn.cell(tape, x, h, c)
    }

    /// Attention over encoder states. `cols[k]` is `None` for padding
    /// utterances, which receive weight exactly zero.
    pub fn context_attention(&self, tape: &mut Tape, cols: &[Option<Var>]) -> Result<DialogEncoding> {
        if cols.is_empty() {
            return Err(Error::Contract(
                "context attention needs at least one utterance".into(),
            ));
        }
        let d_h = self.rnn.d_h();
        let mask: Vec<bool> = cols.iter().map(Option::is_some).collect();
        let vars: Vec<Var> = cols
            .iter()
            .map(|c| c.unwrap_or_else(|| tape.constant(Tensor::zeros(&[d_h]))))
            .collect();
        let h_d = tape.stack_cols(&vars)?;
        let e = tape.matmul(self.attn_score, h_d)?;
        let e = tape.reshape(e, &[cols.len()])?;
        let alpha_d = tape.masked_softmax(e, &mask)?;
        let r_d = tape.matmul(h_d, alpha_d)?;
        Ok(DialogEncoding { h_d, alpha_d, r_d })
    }

    /// Satisfaction and curve logits from `r_d`.
    pub fn heads(&self, tape: &mut Tape, r_d: Var) -> Result<(Var, Var)> {
        let s = tape.matmul(self.sat_weight, r_d)?;
        let s = tape.add(s, self.sat_bias)?;
        let c = tape.matmul(self.curve_weight, r_d)?;
        let c = tape.add(c, self.curve_bias)?;
        Ok((s, c))
    }
}
