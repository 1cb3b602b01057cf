//! Utterance-level capsule: rectifier, utterance encoder, profile-guided
//! attention and the feedback emotion head.
//!
//! For an utterance of `N` tokens with projected word vectors `w_j`,
//! speaker embedding `v_o` and intent embedding `v_e`:
//!
//! ```text
//! w'_j = [w_j, v_o · cos(w_j, v_o), v_e · cos(w_j, v_e)]
//! H_u  = LSTM(w'_1 … w'_N)                              (d_u × N)
//! M_u  = ReLU(W_u1 H_u + W_u2 tile(v_o, N) + W_u3 tile(v_e, N))
//! α_u  = masked_softmax(w_u M_u)
//! r_u  = H_u α_u
//! P_i  = softmax(W_p [r_u, h_d] + b_p)
//! ```
//!
//! `h_d` is the dialog-encoder state after the previous utterances (zero
//! for the first utterance), so `P_i` depends only on the dialog prefix.

use rand::Rng;

use crate::dropout::Dropout;
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::init::uniform_fan_in;
use crate::lstm::{run_masked, LstmParams, LstmVars};
use crate::tensor::{ParamGroupKind, ParamId, ParamStore, Tape, Tensor, Var};

/// One utterance as model input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceInput {
    pub word_indices: Vec<usize>,
    pub speaker_id: usize,
    pub intent_id: usize,
    /// `true` marks a real token.
    pub mask: Vec<bool>,
}

impl UtteranceInput {
    /// Unpadded input: every token is real.
    pub fn new(word_indices: Vec<usize>, speaker_id: usize, intent_id: usize) -> Self {
        let mask = vec![true; word_indices.len()];
        UtteranceInput {
            word_indices,
            speaker_id,
            intent_id,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.word_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_indices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_indices.is_empty() || self.mask.len() != self.word_indices.len() {
            return Err(Error::Contract(format!(
                "utterance has {} tokens and a mask of length {}",
                self.word_indices.len(),
                self.mask.len()
            )));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::InvalidMask);
        }
        Ok(())
    }
}

/// Graph handles of an encoded utterance.
#[derive(Clone, Copy, Debug)]
pub struct UtteranceEncoding {
    /// `[d_u × N]`; masked columns are zero.
    pub h_u: Var,
    /// `[d_u]`
    pub r_u: Var,
    /// `[N]`
    pub alpha_u: Var,
}

/// Scales the profile vectors by their cosine with the word vector and
/// concatenates: `[w, v_o·cos(w, v_o), v_e·cos(w, v_e)]`.
pub fn rectify(tape: &mut Tape, w: Var, v_o: Var, v_e: Var) -> Result<Var> {
    let co = tape.cosine(w, v_o)?;
    let ce = tape.cosine(w, v_e)?;
    let vo = tape.scale_by(v_o, co)?;
    let ve = tape.scale_by(v_e, ce)?;
    tape.concat(&[w, vo, ve])
}

/// Sizes and switches of the utterance capsule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UtteranceDims {
    pub d_word: usize,
    pub d_model: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub n_emotions: usize,
    pub bidirectional: bool,
    pub use_rectifier: bool,
    pub use_feedback: bool,
}

impl UtteranceDims {
    /// Width of `H_u` columns and `r_u`.
    pub fn d_u(&self) -> usize {
        if self.bidirectional {
            2 * self.d_h
        } else {
            self.d_h
        }
    }

    /// Width of the emotion head input.
    pub fn head_in(&self) -> usize {
        if self.use_feedback {
            self.d_u() + self.d_h
        } else {
            self.d_u()
        }
    }
}

/// Parameter handles of the utterance capsule.
#[derive(Clone, Copy, Debug)]
pub struct UtteranceCapsuleParams {
    pub dims: UtteranceDims,
    pub projection: ParamId,
    pub rnn_fwd: LstmParams,
    pub rnn_bwd: Option<LstmParams>,
    pub attn_hidden: ParamId,
    pub attn_speaker: ParamId,
    pub attn_intent: ParamId,
    pub attn_score: ParamId,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

impl UtteranceCapsuleParams {
    pub fn init(store: &mut ParamStore, dims: UtteranceDims, rng: &mut impl Rng) -> Self {
        let main = ParamGroupKind::Main;
        let projection = store.add(
            "input_projection",
            uniform_fan_in(dims.d_model, dims.d_word, rng),
            main,
        );
        let rnn_in = 3 * dims.d_model;
        let rnn_fwd = LstmParams::init(store, "utterance_rnn.fwd", rnn_in, dims.d_h, rng);
        let rnn_bwd = dims
            .bidirectional
            .then(|| LstmParams::init(store, "utterance_rnn.bwd", rnn_in, dims.d_h, rng));
        let d_u = dims.d_u();
        let attn_hidden = store.add("utterance_attn.hidden", uniform_fan_in(dims.d_a, d_u, rng), main);
        let attn_speaker = store.add(
            "utterance_attn.speaker",
            uniform_fan_in(dims.d_a, dims.d_model, rng),
            main,
        );
        let attn_intent = store.add(
            "utterance_attn.intent",
            uniform_fan_in(dims.d_a, dims.d_model, rng),
            main,
        );
        let attn_score = store.add("utterance_attn.score", uniform_fan_in(1, dims.d_a, rng), main);
        let head_weight = store.add(
            "emotion_head.weight",
            uniform_fan_in(dims.n_emotions, dims.head_in(), rng),
            main,
        );
        let head_bias = store.add("emotion_head.bias", Tensor::zeros(&[dims.n_emotions]), main);
        UtteranceCapsuleParams {
            dims,
            projection,
            rnn_fwd,
            rnn_bwd,
            attn_hidden,
            attn_speaker,
            attn_intent,
            attn_score,
            head_weight,
            head_bias,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<UtteranceCapsule> {
        let projection = tape.param(store, self.projection);
        let projection_t = tape.transpose(projection)?;
        Ok(UtteranceCapsule {
            dims: self.dims,
            projection_t,
            rnn_fwd: self.rnn_fwd.bind(tape, store),
            rnn_bwd: self.rnn_bwd.map(|p| p.bind(tape, store)),
            attn_hidden: tape.param(store, self.attn_hidden),
            attn_speaker: tape.param(store, self.attn_speaker),
            attn_intent: tape.param(store, self.attn_intent),
            attn_score: tape.param(store, self.attn_score),
            head_weight: tape.param(store, self.head_weight),
            head_bias: tape.param(store, self.head_bias),
        })
    }
}

/// The utterance capsule bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct UtteranceCapsule {
    pub dims: UtteranceDims,
    projection_t: Var,
    rnn_fwd: LstmVars,
    rnn_bwd: Option<LstmVars>,
    attn_hidden: Var,
    attn_speaker: Var,
    attn_intent: Var,
    attn_score: Var,
    head_weight: Var,
    head_bias: Var,
}

impl UtteranceCapsule {
    /// Projected word vectors `[N × d_model]`, with dropout when given.
    pub fn project_words(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        words: &Embedding,
        input: &UtteranceInput,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let raw = words.lookup(tape, store, &input.word_indices)?;
        let projected = tape.matmul(raw, self.projection_t)?;
        match dropout {
            Some(d) => d.apply(tape, projected),
            None => Ok(projected),
        }
    }

    /// Rectifier, encoder and attention for one utterance.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        words: &Embedding,
        input: &UtteranceInput,
        v_o: Var,
        v_e: Var,
        dropout: Option<&mut Dropout>,
    ) -> Result<UtteranceEncoding> {
        input.validate()?;
        let n = input.len();
        let projected = self.project_words(tape, store, words, input, dropout)?;

        let mut inputs = Vec::with_capacity(n);
        for j in 0..n {
            if !input.mask[j] {
                inputs.push(None);
                continue;
            }
            let w = tape.row(projected, j)?;
            let x = if self.dims.use_rectifier {
                rectify(tape, w, v_o, v_e)?
            } else {
                tape.concat(&[w, v_o, v_e])?
            };
            inputs.push(Some(x));
        }

        let fwd = run_masked(&self.rnn_fwd, tape, &inputs, false)?;
        let bwd = match &self.rnn_bwd {
            Some(layer) => Some(run_masked(layer, tape, &inputs, true)?),
            None => None,
        };
        let d_u = self.dims.d_u();
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let col = match (fwd[j], bwd.as_ref().map(|b| b[j])) {
                (Some(f), None) => f,
                (Some(f), Some(Some(b))) => tape.concat(&[f, b])?,
                _ => tape.constant(Tensor::zeros(&[d_u])),
            };
            cols.push(col);
        }
        let h_u = tape.stack_cols(&cols)?;

        let hidden = tape.matmul(self.attn_hidden, h_u)?;
        let vo_tiled = tape.tile(v_o, n)?;
        let ve_tiled = tape.tile(v_e, n)?;
        let speaker = tape.matmul(self.attn_speaker, vo_tiled)?;
        let intent = tape.matmul(self.attn_intent, ve_tiled)?;
        let m = tape.add(hidden, speaker)?;
        let m = tape.add(m, intent)?;
        let m = tape.relu(m);
        let scores = tape.matmul(self.attn_score, m)?;
        let scores = tape.reshape(scores, &[n])?;
        let alpha_u = tape.masked_softmax(scores, &input.mask)?;
        let r_u = tape.matmul(h_u, alpha_u)?;
        Ok(UtteranceEncoding { h_u, r_u, alpha_u })
    }

    /// Emotion logits from `r_u` and, with feedback on, the dialog state
    /// preceding this utterance.
    pub fn emotion_logits(&self, tape: &mut Tape, r_u: Var, h_d_prev: Var) -> Result<Var> {
        let input = if self.dims.use_feedback {
            tape.concat(&[r_u, h_d_prev])?
        } else {
            r_u
        };
        let z = tape.matmul(self.head_weight, input)?;
        tape.add(z, self.head_bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, xs: &[f64]) -> Var {
        tape.leaf(Tensor::vector(xs))
    }

    #[test]
    fn rectify_identical_vector_keeps_profile() {
        let mut tape = Tape::new();
        let w = vec_leaf(&mut tape, &[0.3, -1.2, 2.0]);
        let vo = vec_leaf(&mut tape, &[0.3, -1.2, 2.0]);
        let ve = vec_leaf(&mut tape, &[1.0, 0.0, 0.0]);
        let out = rectify(&mut tape, w, vo, ve).unwrap();
        let d = tape.value(out).data();
        assert_eq!(d.len(), 9);
        for k in 0..3 {
            assert!((d[3 + k] - tape.value(vo).data()[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn rectify_orthogonal_zeroes_profile() {
        let mut tape = Tape::new();
        let w = vec_leaf(&mut tape, &[1.0, 0.0]);
        let vo = vec_leaf(&mut tape, &[0.0, 2.0]);
        let ve = vec_leaf(&mut tape, &[0.0, -3.0]);
        let out = rectify(&mut tape, w, vo, ve).unwrap();
        assert_eq!(&tape.value(out).data()[2..], [0.0; 4]);
    }

    #[test]
    fn rectify_antipodal_flips_sign() {
        let mut tape = Tape::new();
        let ve_vals = [0.5, -0.25, 1.5];
        let w = vec_leaf(&mut tape, &[-0.5, 0.25, -1.5]);
        let vo = vec_leaf(&mut tape, &[1.0, 1.0, 1.0]);
        let ve = vec_leaf(&mut tape, &ve_vals);
        let out = rectify(&mut tape, w, vo, ve).unwrap();
        let d = tape.value(out).data();
        for k in 0..3 {
            assert!((d[6 + k] + ve_vals[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn rectify_scale_invariant_in_word() {
        let vo_vals = [0.7, -0.1, 0.4];
        let ve_vals = [-0.2, 0.9, 0.3];
        let w_vals = [0.5, 0.2, -0.8];
        let run = |c: f64| {
            let mut tape = Tape::new();
            let w: Vec<f64> = w_vals.iter().map(|x| x * c).collect();
            let w = vec_leaf(&mut tape, &w);
            let vo = vec_leaf(&mut tape, &vo_vals);
            let ve = vec_leaf(&mut tape, &ve_vals);
            let out = rectify(&mut tape, w, vo, ve).unwrap();
            tape.value(out).data()[3..].to_vec()
        };
        let base = run(1.0);
        for c in [0.01, 3.0, 250.0] {
            for (a, b) in base.iter().zip(run(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_validation() {
        assert!(UtteranceInput::new(vec![], 0, 0).validate().is_err());
        let mut u = UtteranceInput::new(vec![2, 3], 0, 0);
        u.mask = vec![false, false];
        assert!(matches!(u.validate(), Err(Error::InvalidMask)));
    }
}
