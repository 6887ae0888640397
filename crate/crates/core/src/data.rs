//! Tokenization, vocabularies and dataset loaders.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];
const PUNCTUATION: [char; 6] = ['.', ',', '!', '?', '\'', '"'];

/// Lowercases, isolates `. , ! ? ' "` as separate tokens and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars().flat_map(char::to_lowercase) {
        if PUNCTUATION.contains(&ch) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

/// Splits a logical form on parentheses, commas and whitespace. Parentheses
/// and commas become tokens of their own; case is preserved.
pub fn tokenize_logical_form(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch == '(' || ch == ')' || ch == ',' || ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Joins tokens with single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Token/id mapping with fixed special ids `PAD=0, SOS=1, EOS=2, UNK=3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    /// A vocabulary holding only the specials.
    pub fn new() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { index, tokens }
    }

    /// Builds from tokenized sentences. Tokens seen fewer than `min_count`
    /// times are left out (and so map to UNK); ids follow first occurrence.
    pub fn build<S: AsRef<[String]>>(sentences: &[S], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for s in sentences {
            for t in s.as_ref() {
                let c = counts.entry(t.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(t.as_str());
                }
                *c += 1;
            }
        }
        let mut v = Vocab::new();
        for t in order {
            if counts[t] >= min_count {
                v.insert(t);
            }
        }
        v
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Format(
                "vocabulary does not start with the special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { index, tokens })
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map(String::as_str)
            .unwrap_or(SPECIALS[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids for `tokens` followed by EOS.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).chain([EOS]).collect()
    }

    /// Tokens for `ids`, stopping at the first EOS and skipping PAD/SOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != SOS)
            .map(|&i| self.token(i).to_owned())
            .collect()
    }
}

/// A tokenized (source, target) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// Text pairs read from a file plus the number of malformed lines skipped.
#[derive(Clone, Debug, Default)]
pub struct TextCorpus {
    pub pairs: Vec<TextPair>,
    pub skipped: usize,
}

/// Id-encoded pairs (each sequence ending in EOS) with their vocabularies.
#[derive(Clone, Debug)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

impl ParallelCorpus {
    /// Builds both vocabularies from `text` and encodes it.
    pub fn build(text: &[TextPair], min_count: usize) -> Self {
        let src: Vec<&[String]> = text.iter().map(|p| p.source.as_slice()).collect();
        let tgt: Vec<&[String]> = text.iter().map(|p| p.target.as_slice()).collect();
        let src_vocab = Vocab::build(&src, min_count);
        let tgt_vocab = Vocab::build(&tgt, min_count);
        ParallelCorpus::encode(text, src_vocab, tgt_vocab)
    }

    /// Encodes with existing vocabularies; unseen tokens become UNK.
    pub fn encode(text: &[TextPair], src_vocab: Vocab, tgt_vocab: Vocab) -> Self {
        let pairs = text
            .iter()
            .map(|p| (src_vocab.encode(&p.source), tgt_vocab.encode(&p.target)))
            .collect();
        ParallelCorpus {
            pairs,
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<Vec<usize>> {
        self.pairs.iter().map(|(s, _)| s.clone()).collect()
    }
}

fn read_pairs(
    path: &Path,
    limit: Option<usize>,
    target_tokenizer: fn(&str) -> Vec<String>,
) -> Result<TextCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = TextCorpus::default();
    for (lineno, line) in text.lines().enumerate() {
        if limit.is_some_and(|l| corpus.pairs.len() >= l) {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(src), Some(tgt)) = (cols.next(), cols.next()) else {
            log::warn!(
                "{}:{}: no TAB separator, skipped",
                path.display(),
                lineno + 1
            );
            corpus.skipped += 1;
            continue;
        };
        let source = tokenize(src);
        let target = target_tokenizer(tgt);
        if source.is_empty() || target.is_empty() {
            log::warn!("{}:{}: empty side, skipped", path.display(), lineno + 1);
            corpus.skipped += 1;
            continue;
        }
        corpus.pairs.push(TextPair { source, target });
    }
    if corpus.skipped > 0 {
        log::warn!(
            "{}: skipped {} malformed lines",
            path.display(),
            corpus.skipped
        );
    }
    Ok(corpus)
}

/// Reads `source TAB target` lines (extra columns ignored), keeping the
/// first `limit` well-formed pairs.
pub fn read_tsv_pairs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<TextCorpus> {
    read_pairs(path.as_ref(), limit, tokenize)
}

/// Reads `question TAB logical-form` lines. Questions use [`tokenize`],
/// logical forms [`tokenize_logical_form`].
pub fn read_geoquery(path: impl AsRef<Path>, limit: Option<usize>) -> Result<TextCorpus> {
    read_pairs(path.as_ref(), limit, tokenize_logical_form)
}

/// [`read_tsv_pairs`] followed by vocabulary construction.
pub fn load_tsv_pairs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<ParallelCorpus> {
    Ok(ParallelCorpus::build(
        &read_tsv_pairs(path, limit)?.pairs,
        1,
    ))
}

/// [`read_geoquery`] followed by vocabulary construction.
pub fn load_geoquery(path: impl AsRef<Path>) -> Result<ParallelCorpus> {
    Ok(ParallelCorpus::build(&read_geoquery(path, None)?.pairs, 1))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("Hello, world!"),
            toks(&["hello", ",", "world", "!"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("J'ai \"faim\"."),
            toks(&["j", "'", "ai", "\"", "faim", "\"", "."])
        );
    }

    #[test]
    fn tokenize_is_stable_under_rejoin() {
        for s in [
            "Hello, world!",
            "Va !",
            "What's   up?? \"x\"",
            "Élan vital.",
        ] {
            let t = tokenize(s);
            assert_eq!(tokenize(&detokenize(&t)), t);
        }
    }

    #[test]
    fn logical_form_rules() {
        assert_eq!(
            tokenize_logical_form("answer(A)"),
            toks(&["answer", "(", "A", ")"])
        );
        let t = tokenize_logical_form("answer(A,(state(A), next_to(A,B)))");
        assert_eq!(tokenize_logical_form(&detokenize(&t)), t);
        assert_eq!(t.iter().filter(|x| *x == ",").count(), 3);
    }

    #[test]
    fn vocab_specials_and_order() {
        let v = Vocab::build(&[toks(&["a", "b", "a"])], 1);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("<eos>"), EOS);

        let v = Vocab::build(&[toks(&["a", "b", "a"])], 2);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("never"), UNK);
    }

    #[test]
    fn vocab_roundtrip_through_tokens() {
        let v = Vocab::build(&[toks(&["x", "y"])], 1);
        let w = Vocab::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(v, w);
        assert!(Vocab::from_tokens(toks(&["a"])).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let s = toks(&["go", "home", "."]);
        let v = Vocab::build(std::slice::from_ref(&s), 1);
        let ids = v.encode(&s);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(v.decode(&ids), s);
        assert_eq!(v.encode(&v.decode(&ids)), ids);
    }

    #[test]
    fn tsv_loader() {
        let f = temp_file("Go.\tVa !\tCC-BY 2.0\nbroken line\n\nHi.\tSalut.\n");
        let c = read_tsv_pairs(f.path(), None).unwrap();
        assert_eq!(c.skipped, 1);
        assert_eq!(c.pairs.len(), 2);
        assert_eq!(c.pairs[0].source, toks(&["go", "."]));
        assert_eq!(c.pairs[0].target, toks(&["va", "!"]));

        let pc = load_tsv_pairs(f.path(), None).unwrap();
        let (src, tgt) = &pc.pairs[0];
        assert_eq!(src, &vec![4, 5, EOS]);
        assert_eq!(pc.tgt_vocab.decode(tgt), toks(&["va", "!"]));

        assert!(read_tsv_pairs(f.path(), Some(0)).unwrap().pairs.is_empty());
        assert_eq!(read_tsv_pairs(f.path(), Some(1)).unwrap().pairs.len(), 1);
    }

    #[test]
    fn geoquery_loader() {
        let f = temp_file("what is x\tanswer(A)\n");
        let c = read_geoquery(f.path(), None).unwrap();
        assert_eq!(c.pairs[0].target, toks(&["answer", "(", "A", ")"]));
        assert_eq!(c.pairs[0].source, toks(&["what", "is", "x"]));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_tsv_pairs("/no/such/file.tsv", None).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.tsv"));
    }
}
