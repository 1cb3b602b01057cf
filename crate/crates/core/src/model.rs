//! Full dialog models: the hierarchical capsule network and the plain LSTM
//! baseline, their joint loss, and streaming prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDialog, LabelSchema, PaddedBatch, PaddedDialog};
use crate::dialog::{DialogCapsuleParams, DialogDims, DialogState};
use crate::dropout::Dropout;
use crate::embed::{Embedding, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::init::uniform_fan_in;
use crate::lstm::{run_masked, LstmParams};
use crate::tensor::{ParamGroupKind, ParamId, ParamStore, Tape, Tensor, Var};
use crate::utterance::{UtteranceCapsuleParams, UtteranceDims, UtteranceInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    ChatCapsule,
    LstmBaseline,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chat-capsule" | "capsule" => Ok(Architecture::ChatCapsule),
            "lstm-baseline" | "lstm" | "baseline" => Ok(Architecture::LstmBaseline),
            other => Err(Error::Usage(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub d_word: usize,
    pub d_model: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub schema: LabelSchema,
    pub dropout: f64,
    pub use_rectifier: bool,
    pub use_feedback: bool,
    pub bidirectional_utterance: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: `d_word = 50`, `d_model = d_h = d_a = 32`.
    pub fn desk(schema: LabelSchema) -> Self {
        ModelConfig {
            architecture: Architecture::ChatCapsule,
            d_word: 50,
            d_model: 32,
            d_h: 32,
            d_a: 32,
            schema,
            dropout: 0.5,
            use_rectifier: true,
            use_feedback: true,
            bidirectional_utterance: false,
            seed: 0,
        }
    }

    /// Tiny configuration for gradient checks: every width is 8.
    pub fn toy(schema: LabelSchema) -> Self {
        ModelConfig {
            d_word: 8,
            d_model: 8,
            d_h: 8,
            d_a: 8,
            ..ModelConfig::desk(schema)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if [self.d_word, self.d_model, self.d_h, self.d_a].contains(&0) {
            return Err(Error::Usage("model widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn utterance_dims(&self) -> UtteranceDims {
        UtteranceDims {
            d_word: self.d_word,
            d_model: self.d_model,
            d_h: self.d_h,
            d_a: self.d_a,
            n_emotions: self.schema.emotions.len(),
            bidirectional: self.bidirectional_utterance,
            use_rectifier: self.use_rectifier,
            use_feedback: self.use_feedback,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct CapsuleLayout {
    words: Embedding,
    speakers: Embedding,
    intents: Embedding,
    utterance: UtteranceCapsuleParams,
    dialog: DialogCapsuleParams,
}

#[derive(Clone, Copy, Debug)]
struct BaselineLayout {
    words: Embedding,
    utterance_rnn: LstmParams,
    head_weight: ParamId,
    head_bias: ParamId,
    dialog_rnn: LstmParams,
    sat_weight: ParamId,
    sat_bias: ParamId,
    curve_weight: ParamId,
    curve_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
enum Layout {
    Capsule(CapsuleLayout),
    Baseline(BaselineLayout),
}

/// Graph handles of one dialog forward pass. Per-utterance entries are
/// `None` at padding utterances.
#[derive(Clone, Debug)]
pub struct DialogGraph {
    pub utt_logits: Vec<Option<Var>>,
    pub utt_probs: Vec<Option<Var>>,
    pub alpha_u: Vec<Option<Var>>,
    pub alpha_d: Option<Var>,
    pub sat_logits: Var,
    pub sat_probs: Var,
    pub curve_logits: Var,
    pub curve_probs: Var,
}

/// Materialized outputs for the real utterances of a dialog.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogPrediction {
    pub utterance_probs: Vec<Vec<f64>>,
    pub satisfaction: Vec<f64>,
    pub curve: Vec<f64>,
    /// Empty for the baseline.
    pub alpha_u: Vec<Vec<f64>>,
    /// Empty for the baseline.
    pub alpha_d: Vec<f64>,
}

/// Gold labels of a dialog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogGold {
    pub emotions: Vec<usize>,
    pub satisfaction: Option<usize>,
    pub curve: Option<usize>,
}

impl From<&EncodedDialog> for DialogGold {
    fn from(d: &EncodedDialog) -> Self {
        DialogGold {
            emotions: d.emotions.clone(),
            satisfaction: d.satisfaction,
            curve: d.curve,
        }
    }
}

/// Per-term weights that turn summed cross-entropies into batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossScale {
    pub utterance: f64,
    pub satisfaction: f64,
    pub curve: f64,
}

impl LossScale {
    /// Averages utterance terms over the labeled real utterances of the
    /// batch and each dialog-level term over the dialogs carrying it.
    pub fn for_dialogs(dialogs: &[PaddedDialog]) -> Self {
        let n_utt: usize = dialogs
            .iter()
            .map(|d| {
                d.emotions
                    .iter()
                    .zip(&d.utt_mask)
                    .filter(|(e, &m)| m && e.is_some())
                    .count()
            })
            .sum();
        let n_sat = dialogs.iter().filter(|d| d.satisfaction.is_some()).count();
        let n_curve = dialogs.iter().filter(|d| d.curve.is_some()).count();
        let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        LossScale {
            utterance: inv(n_utt),
            satisfaction: inv(n_sat),
            curve: inv(n_curve),
        }
    }
}

/// Loss of a batch split into its utterance (`j`) and dialog (`u`) parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub j: f64,
    pub u: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.j + self.u
    }
}

/// A trainable dialog model with its vocabulary and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Builds and initializes a model. `words` replaces the random word
    /// table (e.g. pretrained vectors); its shape must be `|V| × d_word`.
    pub fn new(config: ModelConfig, vocab: Vocab, words: Option<EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let word_table = match words {
            Some(t) => {
                if t.table.shape() != [vocab.len(), config.d_word] {
                    return Err(Error::dim(
                        "word table",
                        t.table.shape(),
                        &[vocab.len(), config.d_word],
                    ));
                }
                t
            }
            None => EmbeddingTable::random(vocab.len(), config.d_word, true, &mut rng),
        };
        let words = word_table.register(&mut params, "word_embedding", ParamGroupKind::WordVectors);
        let schema = &config.schema;
        let layout = match config.architecture {
            Architecture::ChatCapsule => {
                let speakers = EmbeddingTable::random(schema.speakers.len(), config.d_model, false, &mut rng)
                    .register(&mut params, "speaker_embedding", ParamGroupKind::Main);
                let intents = EmbeddingTable::random(schema.intents.len(), config.d_model, false, &mut rng)
                    .register(&mut params, "intent_embedding", ParamGroupKind::Main);
                let udims = config.utterance_dims();
                let utterance = UtteranceCapsuleParams::init(&mut params, udims, &mut rng);
                let dialog = DialogCapsuleParams::init(
                    &mut params,
                    DialogDims {
                        d_u: udims.d_u(),
                        d_model: config.d_model,
                        d_h: config.d_h,
                        n_satisfaction: schema.satisfaction.len(),
                        n_curves: schema.curves.len(),
                    },
                    &mut rng,
                );
                Layout::Capsule(CapsuleLayout {
                    words,
                    speakers,
                    intents,
                    utterance,
                    dialog,
                })
            }
            Architecture::LstmBaseline => {
                let main = ParamGroupKind::Main;
                let d_h = config.d_h;
                let utterance_rnn = LstmParams::init(&mut params, "utterance_rnn", config.d_word, d_h, &mut rng);
                let n_e = schema.emotions.len();
                let head_weight = params.add("emotion_head.weight", uniform_fan_in(n_e, d_h, &mut rng), main);
                let head_bias = params.add("emotion_head.bias", Tensor::zeros(&[n_e]), main);
                let dialog_rnn = LstmParams::init(&mut params, "dialog_rnn", d_h, d_h, &mut rng);
                let n_s = schema.satisfaction.len();
                let n_c = schema.curves.len();
                let sat_weight = params.add("satisfaction_head.weight", uniform_fan_in(n_s, d_h, &mut rng), main);
                let sat_bias = params.add("satisfaction_head.bias", Tensor::zeros(&[n_s]), main);
                let curve_weight = params.add("curve_head.weight", uniform_fan_in(n_c, d_h, &mut rng), main);
                let curve_bias = params.add("curve_head.bias", Tensor::zeros(&[n_c]), main);
                Layout::Baseline(BaselineLayout {
                    words,
                    utterance_rnn,
                    head_weight,
                    head_bias,
                    dialog_rnn,
                    sat_weight,
                    sat_bias,
                    curve_weight,
                    curve_bias,
                })
            }
        };
        Ok(Model {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, u: &UtteranceInput) -> Result<()> {
        u.validate()?;
        let schema = &self.config.schema;
        if u.speaker_id >= schema.speakers.len() {
            return Err(Error::Bounds {
                what: "speaker labels",
                index: u.speaker_id,
                len: schema.speakers.len(),
            });
        }
        if u.intent_id >= schema.intents.len() {
            return Err(Error::Bounds {
                what: "intent labels",
                index: u.intent_id,
                len: schema.intents.len(),
            });
        }
        Ok(())
    }

    /// Records the forward pass of one (possibly padded) dialog on `tape`.
    ///
    /// Utterances with `utt_mask[i] == false` are padding: they are not
    /// encoded, do not advance the dialog state, and receive zero context
    /// attention.
    pub fn build_graph(
        &self,
        tape: &mut Tape,
        utterances: &[UtteranceInput],
        utt_mask: &[bool],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<DialogGraph> {
        if utterances.len() != utt_mask.len() {
            return Err(Error::Contract("utterance mask length differs from dialog length".into()));
        }
        if !utt_mask.iter().any(|&m| m) {
            return Err(Error::Contract("dialog has no utterances".into()));
        }
        for (u, _) in utterances.iter().zip(utt_mask).filter(|(_, &m)| m) {
            self.check_input(u)?;
        }
        match &self.layout {
            Layout::Capsule(l) => self.capsule_graph(l, tape, utterances, utt_mask, &mut dropout),
            Layout::Baseline(l) => self.baseline_graph(l, tape, utterances, utt_mask, &mut dropout),
        }
    }

    fn capsule_graph(
        &self,
        l: &CapsuleLayout,
        tape: &mut Tape,
        utterances: &[UtteranceInput],
        utt_mask: &[bool],
        dropout: &mut Option<&mut Dropout>,
    ) -> Result<DialogGraph> {
        let store = &self.params;
        let ucap = l.utterance.bind(tape, store)?;
        let dcap = l.dialog.bind(tape, store);
        let (mut h, mut c) = dcap.zero_state(tape);
        let n = utterances.len();
        let mut utt_logits = vec![None; n];
        let mut utt_probs = vec![None; n];
        let mut alpha_u = vec![None; n];
        let mut cols = vec![None; n];
        for (i, u) in utterances.iter().enumerate() {
            if !utt_mask[i] {
                continue;
            }
            let v_o = l.speakers.lookup_one(tape, store, u.speaker_id)?;
            let v_e = l.intents.lookup_one(tape, store, u.intent_id)?;
            let enc = ucap.encode(tape, store, &l.words, u, v_o, v_e, dropout.as_deref_mut())?;
            let logits = ucap.emotion_logits(tape, enc.r_u, h)?;
            utt_probs[i] = Some(tape.softmax(logits)?);
            utt_logits[i] = Some(logits);
            alpha_u[i] = Some(enc.alpha_u);
            let (h2, c2) = dcap.step(tape, h, c, enc.r_u, v_o, v_e)?;
            h = h2;
            c = c2;
            cols[i] = Some(h);
        }
        let enc = dcap.context_attention(tape, &cols)?;
        let (sat_logits, curve_logits) = dcap.heads(tape, enc.r_d)?;
        let sat_probs = tape.softmax(sat_logits)?;
        let curve_probs = tape.softmax(curve_logits)?;
        Ok(DialogGraph {
            utt_logits,
            utt_probs,
            alpha_u,
            alpha_d: Some(enc.alpha_d),
            sat_logits,
            sat_probs,
            curve_logits,
            curve_probs,
        })
    }

    fn baseline_graph(
        &self,
        l: &BaselineLayout,
        tape: &mut Tape,
        utterances: &[UtteranceInput],
        utt_mask: &[bool],
        dropout: &mut Option<&mut Dropout>,
    ) -> Result<DialogGraph> {
        let store = &self.params;
        let urnn = l.utterance_rnn.bind(tape, store);
        let drnn = l.dialog_rnn.bind(tape, store);
        let head_w = tape.param(store, l.head_weight);
        let head_b = tape.param(store, l.head_bias);
        let n = utterances.len();
        let mut utt_logits = vec![None; n];
        let mut utt_probs = vec![None; n];
        let (mut h, mut c) = drnn.zero_state(tape);
        for (i, u) in utterances.iter().enumerate() {
            if !utt_mask[i] {
                continue;
            }
            let mut x = l.words.lookup(tape, store, &u.word_indices)?;
            if let Some(d) = dropout.as_deref_mut() {
                x = d.apply(tape, x)?;
            }
            let mut inputs = Vec::with_capacity(u.len());
            for j in 0..u.len() {
                inputs.push(if u.mask[j] { Some(tape.row(x, j)?) } else { None });
            }
            let states = run_masked(&urnn, tape, &inputs, false)?;
            let last = states.iter().rev().find_map(|s| *s).expect("validated mask");
            let z = tape.matmul(head_w, last)?;
            let logits = tape.add(z, head_b)?;
            utt_probs[i] = Some(tape.softmax(logits)?);
            utt_logits[i] = Some(logits);
            let (h2, c2) = drnn.cell(tape, last, h, c)?;
            h = h2;
            c = c2;
        }
        let sw = tape.param(store, l.sat_weight);
        let sb = tape.param(store, l.sat_bias);
        let cw = tape.param(store, l.curve_weight);
        let cb = tape.param(store, l.curve_bias);
        let s = tape.matmul(sw, h)?;
        let sat_logits = tape.add(s, sb)?;
        let cz = tape.matmul(cw, h)?;
        let curve_logits = tape.add(cz, cb)?;
        let sat_probs = tape.softmax(sat_logits)?;
        let curve_probs = tape.softmax(curve_logits)?;
        Ok(DialogGraph {
            utt_logits,
            utt_probs,
            alpha_u: vec![None; n],
            alpha_d: None,
            sat_logits,
            sat_probs,
            curve_logits,
            curve_probs,
        })
    }

    /// Reads prediction values off a recorded graph.
    pub fn extract(tape: &Tape, g: &DialogGraph) -> DialogPrediction {
        let values = |v: &Option<Var>| v.map(|v| tape.value(v).data().to_vec());
        DialogPrediction {
            utterance_probs: g.utt_probs.iter().filter_map(values).collect(),
            satisfaction: tape.value(g.sat_probs).data().to_vec(),
            curve: tape.value(g.curve_probs).data().to_vec(),
            alpha_u: g.alpha_u.iter().filter_map(values).collect(),
            alpha_d: g.alpha_d.map(|a| tape.value(a).data().to_vec()).unwrap_or_default(),
        }
    }

    /// Inference on a full dialog (no dropout).
    pub fn forward_dialog(&self, utterances: &[UtteranceInput]) -> Result<DialogPrediction> {
        let mask = vec![true; utterances.len()];
        self.forward_masked(utterances, &mask)
    }

    /// Inference on a padded dialog; returns outputs for real utterances.
    pub fn forward_masked(&self, utterances: &[UtteranceInput], utt_mask: &[bool]) -> Result<DialogPrediction> {
        if utterances.is_empty() {
            return Err(Error::Contract("dialog has no utterances".into()));
        }
        let mut tape = Tape::new();
        let g = self.build_graph(&mut tape, utterances, utt_mask, None)?;
        Ok(Self::extract(&tape, &g))
    }

    /// Inference on every dialog of a padded batch.
    pub fn forward_batch(&self, batch: &PaddedBatch) -> Result<Vec<DialogPrediction>> {
        batch
            .dialogs
            .iter()
            .map(|d| self.forward_masked(&d.utterances, &d.utt_mask))
            .collect()
    }

    /// Records the scaled loss of `dialog` on `tape`. Returns the loss node
    /// (if any term applies) with its utterance and dialog parts.
    pub fn graph_loss(
        tape: &mut Tape,
        g: &DialogGraph,
        dialog: &PaddedDialog,
        scale: &LossScale,
    ) -> Result<Option<(Var, LossBreakdown)>> {
        let mut terms: Vec<Var> = Vec::new();
        let mut j = 0.0;
        let mut u = 0.0;
        for (i, gold) in dialog.emotions.iter().enumerate() {
            let (Some(gold), Some(logits)) = (gold, g.utt_logits[i]) else {
                continue;
            };
            let ce = tape.softmax_cross_entropy(logits, *gold)?;
            let t = tape.scale(ce, scale.utterance);
            j += tape.value(t).item();
            terms.push(t);
        }
        for (gold, logits, s) in [
            (dialog.satisfaction, g.sat_logits, scale.satisfaction),
            (dialog.curve, g.curve_logits, scale.curve),
        ] {
            if let Some(gold) = gold {
                let ce = tape.softmax_cross_entropy(logits, gold)?;
                let t = tape.scale(ce, s);
                u += tape.value(t).item();
                terms.push(t);
            }
        }
        let Some((&first, rest)) = terms.split_first() else {
            return Ok(None);
        };
        let mut total = first;
        for &t in rest {
            total = tape.add(total, t)?;
        }
        Ok(Some((total, LossBreakdown { j, u })))
    }

    /// Forward and backward over a batch; gradients are added into the
    /// parameter store in dialog order. With `dropout_seed`, dropout is
    /// active and dialog `k` of the batch uses a stream derived from the
    /// seed and `k`.
    pub fn accumulate_batch_gradients(
        &mut self,
        batch: &PaddedBatch,
        dropout_seed: Option<u64>,
    ) -> Result<LossBreakdown> {
        let scale = LossScale::for_dialogs(&batch.dialogs);
        let mut total = LossBreakdown { j: 0.0, u: 0.0 };
        let mut tape = Tape::new();
        for (k, d) in batch.dialogs.iter().enumerate() {
            tape.reset();
            let mut dropout = dropout_seed
                .filter(|_| self.config.dropout > 0.0)
                .map(|s| Dropout::new(self.config.dropout, mix_seed(s, k as u64)));
            let g = self.build_graph(&mut tape, &d.utterances, &d.utt_mask, dropout.as_mut())?;
            if let Some((loss, parts)) = Self::graph_loss(&mut tape, &g, d, &scale)? {
                tape.backward(loss, &mut self.params)?;
                total.j += parts.j;
                total.u += parts.u;
            }
        }
        Ok(total)
    }

    /// Batch loss without gradients or dropout.
    pub fn batch_loss(&self, dialogs: &[PaddedDialog]) -> Result<LossBreakdown> {
        self.batch_loss_traced(dialogs, &mut Vec::new())
    }

    /// [`Model::batch_loss`], also appending the ReLU activation pattern of
    /// every dialog's graph to `relus`.
    pub fn batch_loss_traced(&self, dialogs: &[PaddedDialog], relus: &mut Vec<bool>) -> Result<LossBreakdown> {
        let scale = LossScale::for_dialogs(dialogs);
        let mut total = LossBreakdown { j: 0.0, u: 0.0 };
        for d in dialogs {
            let mut tape = Tape::new();
            let g = self.build_graph(&mut tape, &d.utterances, &d.utt_mask, None)?;
            if let Some((_, parts)) = Self::graph_loss(&mut tape, &g, d, &scale)? {
                total.j += parts.j;
                total.u += parts.u;
            }
            relus.extend(tape.relu_pattern());
        }
        Ok(total)
    }

    /// Number of cosine operations in the graph of `dialog`.
    pub fn count_cosines(&self, utterances: &[UtteranceInput]) -> Result<usize> {
        let mut tape = Tape::new();
        self.build_graph(&mut tape, utterances, &vec![true; utterances.len()], None)?;
        Ok(tape.count_cosines())
    }

    /// Starts a streaming session.
    pub fn stream(&self) -> StreamSession<'_> {
        StreamSession::new(self)
    }
}

/// SplitMix64-style seed derivation.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `-ln p[gold]` summed into the same means as training, from
/// probabilities alone.
pub fn loss_total(preds: &[DialogPrediction], golds: &[DialogGold]) -> Result<LossBreakdown> {
    if preds.len() != golds.len() {
        return Err(Error::Contract("predictions and labels differ in length".into()));
    }
    let ce = |p: &[f64], gold: usize| -> Result<f64> {
        p.get(gold).map(|v| -v.ln()).ok_or(Error::Bounds {
            what: "class distribution",
            index: gold,
            len: p.len(),
        })
    };
    let n_utt: usize = golds.iter().map(|g| g.emotions.len()).sum();
    let n_sat = golds.iter().filter(|g| g.satisfaction.is_some()).count();
    let n_curve = golds.iter().filter(|g| g.curve.is_some()).count();
    let (mut j, mut sat, mut curve) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        if p.utterance_probs.len() != g.emotions.len() {
            return Err(Error::Contract("utterance count differs from labels".into()));
        }
        for (probs, &gold) in p.utterance_probs.iter().zip(&g.emotions) {
            j += ce(probs, gold)?;
        }
        if let Some(s) = g.satisfaction {
            sat += ce(&p.satisfaction, s)?;
        }
        if let Some(c) = g.curve {
            curve += ce(&p.curve, c)?;
        }
    }
    let mean = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(LossBreakdown {
        j: mean(j, n_utt),
        u: mean(sat, n_sat) + mean(curve, n_curve),
    })
}

/// Output of one streaming step.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput {
    /// Emotion distribution of the utterance just fed.
    pub probs: Vec<f64>,
    /// Running satisfaction estimate over the prefix so far.
    pub satisfaction: Vec<f64>,
    /// Running curve estimate over the prefix so far.
    pub curve: Vec<f64>,
    /// Empty for the baseline.
    pub alpha_u: Vec<f64>,
}

/// Incremental inference over a dialog, one utterance at a time.
///
/// The session holds the dialog-encoder state and the encoder outputs seen so
/// far; each emission depends only on the utterances already fed.
#[derive(Clone, Debug)]
pub struct StreamSession<'m> {
    model: &'m Model,
    state: DialogState,
    columns: Vec<Tensor>,
    closed: bool,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m Model) -> Self {
        StreamSession {
            model,
            state: DialogState::zero(model.config.d_h),
            columns: Vec::new(),
            closed: false,
        }
    }

    pub fn state(&self) -> &DialogState {
        &self.state
    }

    /// Feeds the next utterance. On error the session is left unchanged.
    pub fn push(&mut self, u: &UtteranceInput) -> Result<StreamOutput> {
        if self.closed {
            return Err(Error::Usage("stream session is closed; reset it first".into()));
        }
        self.model.check_input(u)?;
        let mut tape = Tape::new();
        let store = &self.model.params;
        let h_prev = tape.constant(self.state.h.clone());
        let c_prev = tape.constant(self.state.c.clone());
        let out = match &self.model.layout {
            Layout::Capsule(l) => {
                let ucap = l.utterance.bind(&mut tape, store)?;
                let dcap = l.dialog.bind(&mut tape, store);
                let v_o = l.speakers.lookup_one(&mut tape, store, u.speaker_id)?;
                let v_e = l.intents.lookup_one(&mut tape, store, u.intent_id)?;
                let enc = ucap.encode(&mut tape, store, &l.words, u, v_o, v_e, None)?;
                let logits = ucap.emotion_logits(&mut tape, enc.r_u, h_prev)?;
                let probs = tape.softmax(logits)?;
                let (h, c) = dcap.step(&mut tape, h_prev, c_prev, enc.r_u, v_o, v_e)?;
                let mut cols: Vec<Option<Var>> = self
                    .columns
                    .iter()
                    .map(|t| Some(tape.constant(t.clone())))
                    .collect();
                cols.push(Some(h));
                let denc = dcap.context_attention(&mut tape, &cols)?;
                let (s, cv) = dcap.heads(&mut tape, denc.r_d)?;
                let sp = tape.softmax(s)?;
                let cp = tape.softmax(cv)?;
                (probs, Some(enc.alpha_u), sp, cp, h, c)
            }
            Layout::Baseline(l) => {
                let urnn = l.utterance_rnn.bind(&mut tape, store);
                let drnn = l.dialog_rnn.bind(&mut tape, store);
                let head_w = tape.param(store, l.head_weight);
                let head_b = tape.param(store, l.head_bias);
                let x = l.words.lookup(&mut tape, store, &u.word_indices)?;
                let mut inputs = Vec::with_capacity(u.len());
                for j in 0..u.len() {
                    inputs.push(if u.mask[j] { Some(tape.row(x, j)?) } else { None });
                }
                let states = run_masked(&urnn, &mut tape, &inputs, false)?;
                let last = states.iter().rev().find_map(|s| *s).expect("validated mask");
                let z = tape.matmul(head_w, last)?;
                let logits = tape.add(z, head_b)?;
                let probs = tape.softmax(logits)?;
                let (h, c) = drnn.cell(&mut tape, last, h_prev, c_prev)?;
                let sw = tape.param(store, l.sat_weight);
                let sb = tape.param(store, l.sat_bias);
                let cw = tape.param(store, l.curve_weight);
                let cb = tape.param(store, l.curve_bias);
                let s = tape.matmul(sw, h)?;
                let s = tape.add(s, sb)?;
                let cz = tape.matmul(cw, h)?;
                let cz = tape.add(cz, cb)?;
                let sp = tape.softmax(s)?;
                let cp = tape.softmax(cz)?;
                (probs, None, sp, cp, h, c)
            }
        };
        let (probs, alpha, sp, cp, h, c) = out;
        let output = StreamOutput {
            probs: tape.value(probs).data().to_vec(),
            satisfaction: tape.value(sp).data().to_vec(),
            curve: tape.value(cp).data().to_vec(),
            alpha_u: alpha.map(|a| tape.value(a).data().to_vec()).unwrap_or_default(),
        };
        let h_val = tape.value(h).clone();
        self.columns.push(h_val.clone());
        self.state = DialogState {
            h: h_val,
            c: tape.value(c).clone(),
            step: self.state.step + 1,
        };
        Ok(output)
    }

    /// Ends the dialog; further pushes fail until [`StreamSession::reset`].
    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Clears all dialog state for a new dialog.
    pub fn reset(&mut self) {
        self.state = DialogState::zero(self.model.config.d_h);
        self.columns.clear();
        self.closed = false;
    }
}
