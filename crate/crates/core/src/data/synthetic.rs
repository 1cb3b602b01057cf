//! Planted-label customer-service dialogs.
//!
//! Dialogs alternate `User` and `Staff` turns (with occasional consecutive
//! turns by one speaker). Every utterance carries keywords from a pool
//! specific to its emotion plus shared filler, except "echo" user turns,
//! which carry only a continuation marker and filler and repeat the emotion
//! of the user's previous turn. Intents follow the emotion's primary intent
//! 70% of the time.
//!
//! Dialog labels are a pure function of the emitted user emotions:
//!
//! * valence: Anger, Dissatisfaction, Worry → −1; Emotionlessness → 0;
//!   Happiness, Comfort → +1
//! * satisfaction: sign of the summed valence of the last three user turns
//!   (all user turns when there are fewer than three)
//! * curve over the user valence sequence `v`: all equal → Still;
//!   non-decreasing → Up; non-increasing → Down; otherwise Concave when the
//!   minimum lies strictly below both endpoints, else Convex when the
//!   maximum lies strictly above both endpoints, else the sign of
//!   `last − first` (Up, Down, or Still).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dialog, LabelSchema, Utterance};

pub const USER: usize = 0;
pub const STAFF: usize = 1;

const ANGER: usize = 0;
const DISSATISFACTION: usize = 1;
const WORRY: usize = 2;
const EMOTIONLESS: usize = 3;
const HAPPINESS: usize = 4;
const COMFORT: usize = 5;

const POOLS: [&[&str]; 6] = [
    &["furious", "outrageous", "unacceptable", "ridiculous", "angry", "scam", "terrible", "rage"],
    &["disappointed", "slow", "useless", "poor", "annoying", "unhappy", "mediocre", "broken"],
    &["worried", "afraid", "nervous", "uncertain", "anxious", "concerned", "risky", "lost"],
    &["order", "number", "address", "account", "tracking", "invoice", "details", "record"],
    &["great", "wonderful", "thanks", "excellent", "perfect", "awesome", "glad", "happy"],
    &["relieved", "reassured", "calm", "understand", "sorry", "assure", "gently", "settled"],
];

const FILLER: &[&str] = &[
    "the", "a", "my", "is", "it", "to", "for", "this", "that", "you", "we", "please", "can",
    "will", "of", "and", "on", "in", "with", "be", "have", "just", "so", "now", "today",
];

const ECHO: &[&str] = &["still", "again", "same", "as", "before"];

/// Primary intent per emotion, as an index into the customer-service intents.
const PRIMARY_INTENT: [usize; 6] = [2, 2, 0, 1, 4, 6];

/// Valence of an emotion in the customer-service schema.
pub fn valence(emotion: usize) -> i32 {
    match emotion {
        ANGER | DISSATISFACTION | WORRY => -1,
        EMOTIONLESS => 0,
        _ => 1,
    }
}

/// Satisfaction index (Negative, Neutral, Positive) from user valences.
pub fn satisfaction_rule(user_valences: &[i32]) -> usize {
    let tail = &user_valences[user_valences.len().saturating_sub(3)..];
    let s: i32 = tail.iter().sum();
    match s.signum() {
        -1 => 0,
        0 => 1,
        _ => 2,
    }
}

/// Curve index (Concave, Still, Up, Down, Convex) from user valences.
pub fn curve_rule(v: &[i32]) -> usize {
    const CONCAVE: usize = 0;
    const STILL: usize = 1;
    const UP: usize = 2;
    const DOWN: usize = 3;
    const CONVEX: usize = 4;
    if v.is_empty() || v.iter().all(|&x| x == v[0]) {
        return STILL;
    }
    if v.windows(2).all(|w| w[0] <= w[1]) {
        return UP;
    }
    if v.windows(2).all(|w| w[0] >= w[1]) {
        return DOWN;
    }
    let (first, last) = (v[0], v[v.len() - 1]);
    let min = *v.iter().min().unwrap();
    let max = *v.iter().max().unwrap();
    if min < first && min < last {
        CONCAVE
    } else if max > first && max > last {
        CONVEX
    } else {
        match (last - first).signum() {
            1 => UP,
            -1 => DOWN,
            _ => STILL,
        }
    }
}

/// Satisfaction and curve labels of a dialog, derived from its user turns.
pub fn dialog_labels(utterances: &[Utterance]) -> (usize, usize) {
    let v: Vec<i32> = utterances
        .iter()
        .filter(|u| u.speaker == USER)
        .map(|u| valence(u.emotion))
        .collect();
    (satisfaction_rule(&v), curve_rule(&v))
}

/// Whether a valence sequence has a single unambiguous shape.
fn is_clean(v: &[i32]) -> bool {
    let monotone = v.windows(2).all(|w| w[0] <= w[1]) || v.windows(2).all(|w| w[0] >= w[1]);
    if monotone {
        return true;
    }
    let (first, last) = (v[0], v[v.len() - 1]);
    let min = *v.iter().min().unwrap();
    let max = *v.iter().max().unwrap();
    let dip = min < first && min < last;
    let bump = max > first && max > last;
    dip != bump
}

fn user_valences(rng: &mut impl Rng) -> Vec<i32> {
    let want_sat = rng.gen_range(0..3);
    let want_curve = rng.gen_range(0..5);
    let mut last = Vec::new();
    for _ in 0..400 {
        let k = rng.gen_range(3..=6);
        let v: Vec<i32> = (0..k).map(|_| rng.gen_range(-1..=1)).collect();
        if !is_clean(&v) {
            continue;
        }
        if satisfaction_rule(&v) == want_sat && curve_rule(&v) == want_curve {
            return v;
        }
        last = v;
    }
    last
}

fn emotion_for(valence: i32, rng: &mut impl Rng) -> usize {
    match valence {
        -1 => *[ANGER, DISSATISFACTION, WORRY].choose(rng).unwrap(),
        0 => EMOTIONLESS,
        _ => *[HAPPINESS, COMFORT].choose(rng).unwrap(),
    }
}

fn intent_for(emotion: usize, n_intents: usize, rng: &mut impl Rng) -> usize {
    if rng.gen_bool(0.7) {
        PRIMARY_INTENT[emotion]
    } else {
        rng.gen_range(0..n_intents)
    }
}

fn pick<'a>(pool: &[&'a str], n: usize, rng: &mut impl Rng) -> Vec<&'a str> {
    (0..n).map(|_| *pool.choose(rng).unwrap()).collect()
}

fn keyword_tokens(emotion: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut toks = pick(POOLS[emotion], rng.gen_range(1..=2), rng);
    toks.extend(pick(FILLER, rng.gen_range(2..=5), rng));
    toks.shuffle(rng);
    toks.into_iter().map(String::from).collect()
}

fn echo_tokens(rng: &mut impl Rng) -> Vec<String> {
    let mut toks = pick(ECHO, 1, rng);
    toks.extend(pick(FILLER, rng.gen_range(2..=4), rng));
    toks.shuffle(rng);
    toks.into_iter().map(String::from).collect()
}

fn staff_turn(n_intents: usize, rng: &mut impl Rng) -> Utterance {
    let emotion = match rng.gen_range(0..10) {
        0..=4 => EMOTIONLESS,
        5..=7 => COMFORT,
        _ => HAPPINESS,
    };
    Utterance {
        tokens: keyword_tokens(emotion, rng),
        speaker: STAFF,
        intent: intent_for(emotion, n_intents, rng),
        emotion,
    }
}

fn one_dialog(id: String, rng: &mut impl Rng, n_intents: usize) -> Dialog {
    let valences = user_valences(rng);
    let mut utterances = Vec::new();
    let mut prev_user: Option<(i32, usize)> = None;
    for &v in &valences {
        let (emotion, tokens) = match prev_user {
            Some((pv, pe)) if pv == v && rng.gen_bool(0.35) => (pe, echo_tokens(rng)),
            _ => {
                let e = emotion_for(v, rng);
                (e, keyword_tokens(e, rng))
            }
        };
        utterances.push(Utterance {
            tokens,
            speaker: USER,
            intent: intent_for(emotion, n_intents, rng),
            emotion,
        });
        prev_user = Some((v, emotion));
        let staff_turns = match rng.gen_range(0..20) {
            0..=2 => 0,
            3..=16 => 1,
            _ => 2,
        };
        for _ in 0..staff_turns {
            utterances.push(staff_turn(n_intents, rng));
        }
    }
    let (satisfaction, curve) = dialog_labels(&utterances);
    Dialog {
        id,
        utterances,
        satisfaction: Some(satisfaction),
        curve: Some(curve),
    }
}

/// Generates `n_dialogs` planted-label dialogs under the customer-service
/// schema. Output depends only on `n_dialogs` and `seed`.
pub fn gen_synthetic(n_dialogs: usize, seed: u64, schema: &LabelSchema) -> Vec<Dialog> {
    debug_assert_eq!(schema.emotions.len(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_dialogs)
        .map(|i| one_dialog(format!("syn-{seed}-{i}"), &mut rng, schema.intents.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_neutral_dialog() {
        assert_eq!(satisfaction_rule(&[0, 0, 0, 0]), 1);
        assert_eq!(curve_rule(&[0, 0, 0, 0]), 1);
    }

    #[test]
    fn rising_dialog() {
        let v = [-1, -1, 0, 1, 1];
        assert_eq!(satisfaction_rule(&v), 2);
        assert_eq!(curve_rule(&v), 2);
    }

    #[test]
    fn shapes() {
        assert_eq!(curve_rule(&[1, 0, -1]), 3);
        assert_eq!(curve_rule(&[1, -1, 1]), 0);
        assert_eq!(curve_rule(&[-1, 1, 0]), 4);
        assert_eq!(satisfaction_rule(&[1, -1]), 1);
    }

    #[test]
    fn deterministic_and_valid() {
        let schema = LabelSchema::customer_service();
        let a = gen_synthetic(30, 7, &schema);
        let b = gen_synthetic(30, 7, &schema);
        assert_eq!(a, b);
        for d in &a {
            d.validate(&schema).unwrap();
            assert!(d.utterances.iter().any(|u| u.speaker == USER));
        }
        assert_ne!(a, gen_synthetic(30, 8, &schema));
    }

    #[test]
    fn classes_are_covered() {
        let schema = LabelSchema::customer_service();
        let ds = gen_synthetic(500, 1, &schema);
        let mut sat = [0; 3];
        let mut curve = [0; 5];
        for d in &ds {
            sat[d.satisfaction.unwrap()] += 1;
            curve[d.curve.unwrap()] += 1;
        }
        assert!(sat.iter().all(|&n| n > 60), "{sat:?}");
        assert!(curve.iter().all(|&n| n > 40), "{curve:?}");
    }
}
