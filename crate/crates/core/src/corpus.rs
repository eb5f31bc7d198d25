//! Message-response pair ingestion, LDA document loading, and vocabularies.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const PAD: usize = 3;
pub const RESERVED: [&str; 4] = ["<unk>", "<s>", "</s>", "<pad>"];

pub const DEFAULT_MAX_LEN: usize = 50;
pub const DEFAULT_MAX_DUP: usize = 50;
pub const DEFAULT_VOCAB_SIZE: usize = 30_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{0}: corpus is empty")]
    Empty(String),
    #[error("coverage is undefined: no tokens on the {0:?} side")]
    UndefinedCoverage(Side),
    #[error("vocabulary size must be at least 1")]
    ZeroVocabulary,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenizedPair {
    pub message: Vec<String>,
    pub response: Vec<String>,
}

impl TokenizedPair {
    pub fn new(message: &str, response: &str) -> Self {
        Self {
            message: tokenize(message),
            response: tokenize(response),
        }
    }

    pub fn side(&self, side: Side) -> &[String] {
        match side {
            Side::Message => &self.message,
            Side::Response => &self.response,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Message,
    Response,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Reads a `message<TAB>response` file and applies [`filter_pairs`].
pub fn load_pairs(path: &Path, max_len: usize, max_dup: usize) -> Result<Vec<TokenizedPair>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let pairs = parse_pairs(&text, &path.display().to_string())?;
    Ok(filter_pairs(pairs, max_len, max_dup))
}

/// Parses pair lines. Blank lines are skipped; any other line must hold
/// exactly one TAB with at least one token on each side.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<TokenizedPair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: String| CorpusError::Parse {
            path: origin.to_owned(),
            line: i + 1,
            reason,
        };
        let tabs = line.matches('\t').count();
        if tabs != 1 {
            return Err(parse(format!("expected exactly one TAB, found {tabs}")));
        }
        let (m, r) = line.split_once('\t').expect("one tab");
        let pair = TokenizedPair::new(m, r);
        if pair.message.is_empty() || pair.response.is_empty() {
            return Err(parse("message and response must both be non-empty".into()));
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(CorpusError::Empty(origin.to_owned()));
    }
    Ok(pairs)
}

/// Drops pairs with a side longer than `max_len` tokens, and drops every copy
/// of a pair that occurs more than `max_dup` times. Order is preserved.
pub fn filter_pairs(pairs: Vec<TokenizedPair>, max_len: usize, max_dup: usize) -> Vec<TokenizedPair> {
    let mut occurrences: HashMap<&TokenizedPair, usize> = HashMap::new();
    for p in &pairs {
        *occurrences.entry(p).or_default() += 1;
    }
    let keep: Vec<bool> = pairs
        .iter()
        .map(|p| p.message.len() <= max_len && p.response.len() <= max_len && occurrences[p] <= max_dup)
        .collect();
    pairs
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// One line of an LDA document file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub user: Option<String>,
    pub tokens: Vec<String>,
}

/// Reads an LDA document file: one document per line with an optional
/// leading `user<TAB>` field. Blank lines are skipped.
pub fn load_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_documents(&text, &path.display().to_string())
}

pub fn parse_documents(text: &str, origin: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (user, body) = match line.split_once('\t') {
            Some((u, b)) => {
                if b.contains('\t') {
                    return Err(CorpusError::Parse {
                        path: origin.to_owned(),
                        line: i + 1,
                        reason: "more than one TAB".into(),
                    });
                }
                (Some(u.trim().to_owned()), b)
            }
            None => (None, line),
        };
        let tokens = tokenize(body);
        if tokens.is_empty() {
            return Err(CorpusError::Parse {
                path: origin.to_owned(),
                line: i + 1,
                reason: "document has no tokens".into(),
            });
        }
        docs.push(Document { user, tokens });
    }
    if docs.is_empty() {
        return Err(CorpusError::Empty(origin.to_owned()));
    }
    Ok(docs)
}

/// Counts token occurrences and returns `(token, count)` sorted by count
/// descending, then token ascending.
pub fn rank_by_frequency<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_owned(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Token ↔ id map with four reserved ids (UNK, BOS, EOS, PAD) at 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::with_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the reserved header followed by `tokens` in
    /// order. Reserved spellings and repeats are skipped.
    pub fn with_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for r in RESERVED {
            v.ids.insert(r.to_owned(), v.tokens.len());
            v.tokens.push(r.to_owned());
        }
        v.extend(tokens);
        v
    }

    /// The `size` most frequent tokens on `side`, ties broken lexicographically.
    pub fn build(pairs: &[TokenizedPair], side: Side, size: usize) -> Result<Self, CorpusError> {
        if size == 0 {
            return Err(CorpusError::ZeroVocabulary);
        }
        if pairs.is_empty() {
            return Err(CorpusError::Empty("pairs".into()));
        }
        let ranked = rank_by_frequency(
            pairs
                .iter()
                .flat_map(|p| p.side(side))
                .map(String::as_str)
                .filter(|t| !RESERVED.contains(t)),
        );
        Ok(Self::with_tokens(ranked.into_iter().take(size).map(|(t, _)| t)))
    }

    /// Appends tokens not already present; returns how many were added.
    pub fn extend<S: Into<String>>(&mut self, tokens: impl IntoIterator<Item = S>) -> usize {
        let before = self.tokens.len();
        for t in tokens {
            let t = t.into();
            if !self.ids.contains_key(&t) {
                self.ids.insert(t.clone(), self.tokens.len());
                self.tokens.push(t);
            }
        }
        self.tokens.len() - before
    }

    /// Number of non-reserved entries.
    pub fn size(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    /// Total number of ids, reserved included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Encodes a response for training: ids followed by EOS.
    pub fn encode_response<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = self.encode(tokens);
        ids.push(EOS);
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_owned())
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(io_err(path))?;
        fs::write(path, buf).map_err(io_err(path))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CorpusError> {
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        for (i, r) in RESERVED.iter().enumerate() {
            if lines.get(i) != Some(r) {
                return Err(CorpusError::Parse {
                    path: origin.to_owned(),
                    line: i + 1,
                    reason: format!("expected reserved symbol {r}"),
                });
            }
        }
        let mut v = Self::default();
        for (i, t) in lines.iter().enumerate().skip(RESERVED.len()) {
            if t.is_empty() || t.chars().any(char::is_whitespace) || v.contains(t) {
                return Err(CorpusError::Parse {
                    path: origin.to_owned(),
                    line: i + 1,
                    reason: format!("invalid or repeated token {t:?}"),
                });
            }
            v.extend([*t]);
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Fraction of corpus tokens on `side` that map to a non-UNK id.
pub fn coverage(vocab: &Vocabulary, pairs: &[TokenizedPair], side: Side) -> Result<f64, CorpusError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for t in pairs.iter().flat_map(|p| p.side(side)) {
        total += 1;
        if vocab.id(t).is_some_and(|id| id != UNK) {
            hit += 1;
        }
    }
    if total == 0 {
        return Err(CorpusError::UndefinedCoverage(side));
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub pair_count: usize,
    pub message_tokens: usize,
    pub response_tokens: usize,
    pub message_coverage: f64,
    pub response_coverage: f64,
}

impl CorpusStats {
    pub fn compute(
        pairs: &[TokenizedPair],
        message_vocab: &Vocabulary,
        response_vocab: &Vocabulary,
    ) -> Result<Self, CorpusError> {
        Ok(Self {
            pair_count: pairs.len(),
            message_tokens: pairs.iter().map(|p| p.message.len()).sum(),
            response_tokens: pairs.iter().map(|p| p.response.len()).sum(),
            message_coverage: coverage(message_vocab, pairs, Side::Message)?,
            response_coverage: coverage(response_vocab, pairs, Side::Response)?,
        })
    }
}
