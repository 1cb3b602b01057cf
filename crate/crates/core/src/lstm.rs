//! LSTM cell on the tape.
//!
//! Gate layout inside the stacked weight matrix is `[input, forget,
//! candidate, output]`, each block `d_h` rows tall. The weight multiplies
//! the concatenation `[x, h_prev]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamGroupKind, ParamId, ParamStore, Tape, Tensor, Var};

/// Parameter handles of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

/// An LSTM layer's parameters materialized on a particular tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    weight: Var,
    bias: Var,
    d_in: usize,
    d_h: usize,
}

impl LstmParams {
    /// Registers `{prefix}.weight` `[4·d_h × (d_in + d_h)]` and
    /// `{prefix}.bias` `[4·d_h]` with the forget-gate bias set to one.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = d_in + d_h;
        let weight = crate::init::uniform_fan_in(4 * d_h, fan_in, rng);
        let mut bias = vec![0.0; 4 * d_h];
        for b in &mut bias[d_h..2 * d_h] {
            *b = 1.0;
        }
        let weight = store.add(&format!("{prefix}.weight"), weight, ParamGroupKind::Main);
        let bias = store.add(
            &format!("{prefix}.bias"),
            Tensor::vector(&bias),
            ParamGroupKind::Main,
        );
        LstmParams {
            weight,
            bias,
            d_in,
            d_h,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        LstmVars {
            weight: tape.param(store, self.weight),
            bias: tape.param(store, self.bias),
            d_in: self.d_in,
            d_h: self.d_h,
        }
    }
}

impl LstmVars {
    pub fn d_h(&self) -> usize {
        self.d_h
    }

    /// Zero `(h, c)` state as tape constants.
    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[self.d_h]));
        let c = tape.constant(Tensor::zeros(&[self.d_h]));
        (h, c)
    }

    /// One step: returns `(h, c)`.
    pub fn cell(&self, tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        lstm_cell(tape, x, h_prev, c_prev, self.weight, self.bias)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }
}

/// Standard gated LSTM step with explicit weight and bias nodes.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weight: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let d_h = tape.shape(h_prev)[0];
    if tape.shape(c_prev) != [d_h] || tape.shape(bias) != [4 * d_h] {
        return Err(Error::dim("lstm_cell", tape.shape(h_prev), tape.shape(c_prev)));
    }
    let xh = tape.concat(&[x, h_prev])?;
    let z = tape.matmul(weight, xh)?;
    let z = tape.add(z, bias)?;
    let zi = tape.slice(z, 0, d_h)?;
    let zf = tape.slice(z, d_h, d_h)?;
    let zg = tape.slice(z, 2 * d_h, d_h)?;
    let zo = tape.slice(z, 3 * d_h, d_h)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs a layer over `inputs`, skipping `None` positions.
///
/// Skipped positions carry the previous state forward and yield `None`.
/// With `reverse` the sequence is consumed back to front; outputs stay
/// aligned with input positions.
pub fn run_masked(
    layer: &LstmVars,
    tape: &mut Tape,
    inputs: &[Option<Var>],
    reverse: bool,
) -> Result<Vec<Option<Var>>> {
    let (mut h, mut c) = layer.zero_state(tape);
    let mut out = vec![None; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        let Some(x) = inputs[t] else {
            continue;
        };
        let (h2, c2) = layer.cell(tape, x, h, c)?;
        h = h2;
        c = c2;
        out[t] = Some(h);
    }
    Ok(out)
}
