//! Vocabulary, embedding tables, and pretrained word-vector loading.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamGroupKind, ParamId, ParamStore, Tape, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ index map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Vocabulary holding the reserved entries followed by `tokens`
    /// (duplicates and reserved names are skipped).
    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocab {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        for t in tokens {
            let t = t.as_ref();
            if !v.index.contains_key(t) {
                v.index.insert(t.to_string(), v.tokens.len());
                v.tokens.push(t.to_string());
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t.as_ref())).collect()
    }

    /// One token per line; line number is the index.
    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Format(
                "vocabulary must start with the padding and unknown tokens".into(),
            ));
        }
        let v = Vocab::from_tokens(&tokens[2..]);
        if v.len() != tokens.len() {
            return Err(Error::Format("vocabulary lists a token twice".into()));
        }
        Ok(v)
    }
}

/// Indexes tokens seen at least `min_count` times, most frequent first,
/// ties broken by first occurrence.
pub fn build_vocab<'a, I, S>(corpus: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if min_count == 0 {
        return Err(Error::Contract("min_count must be at least 1".into()));
    }
    // token -> (count, first occurrence)
    let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut pos = 0usize;
    for seq in corpus {
        for t in seq {
            let e = stats.entry(t.as_ref()).or_insert((0, pos));
            e.0 += 1;
            pos += 1;
        }
    }
    let mut kept: Vec<(&str, usize, usize)> = stats
        .into_iter()
        .filter(|&(t, (c, _))| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _, _)| t)))
}

/// Bound for uniform initialization of uncovered rows and profile tables.
pub const INIT_BOUND: f64 = 0.1;

/// An embedding matrix before it is registered as a parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
    pub trainable: bool,
    /// Row kept at zero and excluded from updates.
    pub pad_row: Option<usize>,
}

impl EmbeddingTable {
    /// `U(-0.1, 0.1)` table, with a zero padding row when `pad` is set.
    pub fn random(rows: usize, dim: usize, pad: bool, rng: &mut impl Rng) -> Self {
        let mut table = crate::init::uniform(&[rows, dim], INIT_BOUND, rng);
        if pad {
            table.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
        }
        EmbeddingTable {
            table,
            trainable: true,
            pad_row: pad.then_some(PAD),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn register(self, store: &mut ParamStore, name: &str, group: ParamGroupKind) -> Embedding {
        let dim = self.dim();
        let rows = self.table.rows();
        let id = store.add(name, self.table, group);
        if let Some(r) = self.pad_row {
            store.set_frozen_row(id, r);
        }
        store.get_mut(id).trainable = self.trainable;
        Embedding { id, rows, dim }
    }
}

/// A registered embedding table.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub id: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    /// Gathers rows `indices` as an `[n × d]` tensor.
    pub fn lookup(&self, tape: &mut Tape, store: &ParamStore, indices: &[usize]) -> Result<Var> {
        tape.gather(store, self.id, indices)
    }

    /// Single row as a 1-D tensor.
    pub fn lookup_one(&self, tape: &mut Tape, store: &ParamStore, index: usize) -> Result<Var> {
        let m = tape.gather(store, self.id, &[index])?;
        tape.reshape(m, &[self.dim])
    }
}

/// Result of [`load_pretrained`].
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub table: EmbeddingTable,
    /// Fraction of non-reserved vocabulary entries found in the file.
    pub coverage: f64,
}

/// Reads whitespace-separated text vectors (`token v1 … vd` per line, with
/// an optional `count dim` header line).
///
/// Rows of tokens absent from the file are drawn from `U(-0.1, 0.1)`; the
/// padding row is zero. The first occurrence of a token wins.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    d_word: usize,
    rng: &mut impl Rng,
) -> Result<Pretrained> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::random(vocab.len(), d_word, true, rng);
    let mut covered = vec![false; vocab.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if dim != d_word {
                    return Err(Error::Format(format!(
                        "{}: header declares dimension {dim}, expected {d_word}",
                        path.display()
                    )));
                }
                continue;
            }
        }
        if fields.len() != d_word + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected a token and {d_word} values, found {} fields", fields.len()),
            });
        }
        let mut values = Vec::with_capacity(d_word);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("not a number: {f:?}"),
            })?;
            values.push(v);
        }
        let idx = vocab.get(fields[0]);
        if idx == PAD || idx == UNK && fields[0] != UNK_TOKEN || covered[idx] {
            continue;
        }
        covered[idx] = true;
        table.table.data_mut()[idx * d_word..(idx + 1) * d_word].copy_from_slice(&values);
    }
    let real = vocab.len().saturating_sub(2);
    let hits = covered.iter().skip(2).filter(|&&c| c).count();
    let coverage = if real == 0 { 0.0 } else { hits as f64 / real as f64 };
    Ok(Pretrained { table, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn vocab_order_and_min_count() {
        let corpus = [toks("a a b")];
        let v = build_vocab(corpus.iter().map(|s| s.as_slice()), 1).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
        let v = build_vocab(corpus.iter().map(|s| s.as_slice()), 2).unwrap();
        assert_eq!(v.get("a"), 2);
        assert_eq!(v.get("b"), UNK);
    }

    #[test]
    fn empty_corpus_has_reserved_only() {
        let v = build_vocab(std::iter::empty::<&[String]>(), 1).unwrap();
        assert_eq!(v.len(), 2);
        assert!(build_vocab(std::iter::empty::<&[String]>(), 0).is_err());
    }

    #[test]
    fn vocab_lines_round_trip() {
        let v = Vocab::from_tokens(["x", "y", "z"]);
        assert_eq!(Vocab::from_lines(&v.to_lines()).unwrap(), v);
        assert!(Vocab::from_lines("x\ny\n").is_err());
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), content).unwrap();
        f
    }

    #[test]
    fn full_coverage_copies_rows() {
        let v = Vocab::from_tokens(["cat", "dog"]);
        let f = write("2 3\ncat 0.5 -1.25 3\ndog 1e-3 2 0\n");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = load_pretrained(f.path(), &v, 3, &mut rng).unwrap();
        assert_eq!(p.coverage, 1.0);
        assert_eq!(p.table.table.row(2), [0.5, -1.25, 3.0]);
        assert_eq!(p.table.table.row(3), [1e-3, 2.0, 0.0]);
        assert_eq!(p.table.table.row(PAD), [0.0; 3]);
    }

    #[test]
    fn empty_file_zero_coverage() {
        let v = Vocab::from_tokens(["cat", "dog"]);
        let f = write("");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = load_pretrained(f.path(), &v, 4, &mut rng).unwrap();
        assert_eq!(p.coverage, 0.0);
        assert_eq!(p.table.table.row(PAD), [0.0; 4]);
        assert!(p.table.table.row(2).iter().all(|x| x.abs() < 0.1 && *x != 0.0));
    }

    #[test]
    fn malformed_and_mismatched() {
        let v = Vocab::from_tokens(["cat"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = write("cat 1 2\ncat 1 x\n");
        match load_pretrained(f.path(), &v, 2, &mut rng).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        let f = write("10 7\ncat 1 2\n");
        assert!(matches!(
            load_pretrained(f.path(), &v, 2, &mut rng),
            Err(Error::Format(_))
        ));
        let f = write("cat 1 2 3\n");
        assert!(matches!(
            load_pretrained(f.path(), &v, 2, &mut rng),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn lookup_pad_is_zero_and_repeat_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let emb = EmbeddingTable::random(5, 3, true, &mut rng).register(
            &mut store,
            "words",
            ParamGroupKind::WordVectors,
        );
        let mut tape = Tape::new();
        let x = emb.lookup(&mut tape, &store, &[PAD]).unwrap();
        assert_eq!(tape.value(x).data(), [0.0; 3]);

        let single = {
            let mut tape = Tape::new();
            let x = emb.lookup(&mut tape, &store, &[3]).unwrap();
            let l = tape.sum(x);
            let mut s = store.clone();
            tape.backward(l, &mut s).unwrap();
            s.value(emb.id).grad.clone().unwrap()
        };
        let double = {
            let mut tape = Tape::new();
            let x = emb.lookup(&mut tape, &store, &[3, 3, PAD]).unwrap();
            let l = tape.sum(x);
            let mut s = store.clone();
            tape.backward(l, &mut s).unwrap();
            s.value(emb.id).grad.clone().unwrap()
        };
        for (a, b) in single.iter().zip(&double) {
            assert_eq!(2.0 * a, *b);
        }
        // untouched rows and the padding row get nothing
        assert!(double[..3].iter().all(|&g| g == 0.0));
        assert!(double[3..9].iter().all(|&g| g == 0.0));
        assert!(double[9..12].iter().all(|&g| g == 1.0 * 2.0));
    }

    #[test]
    fn lookup_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let emb = EmbeddingTable::random(4, 2, true, &mut rng).register(
            &mut store,
            "words",
            ParamGroupKind::WordVectors,
        );
        let mut tape = Tape::new();
        assert!(matches!(
            emb.lookup(&mut tape, &store, &[4]),
            Err(Error::Bounds { index: 4, .. })
        ));
    }
}
