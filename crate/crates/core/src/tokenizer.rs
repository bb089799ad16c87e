//! Byte-pair-encoding tokenizer producing fixed-length token sequences.
//!
//! Two vocabulary flavours are supported:
//!
//! * byte-level vocabularies exported from a pretrained text encoder, where
//!   each word is mapped byte-wise onto printable code points and its last
//!   symbol carries the `</w>` end-of-word marker;
//! * plain character-level vocabularies (no token ends in `</w>`), used by
//!   the reference backend and by small hand-written vocabularies.
//!
//! The flavour is detected from the vocabulary contents at load time.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_CONTEXT_LENGTH: usize = 77;
pub const WORD_MARKER: &str = "</w>";

const SOT_NAMES: [&str; 2] = ["<|startoftext|>", "<sot>"];
const EOT_NAMES: [&str; 2] = ["<|endoftext|>", "<eot>"];
const PAD_NAMES: [&str; 2] = ["<|pad|>", "<pad>"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(String, String), usize>,
    sot_id: u32,
    eot_id: u32,
    pad_id: u32,
    context_length: usize,
    byte_level: bool,
}

/// Exactly `context_length` ids: start marker, content, end marker, padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    eot_index: usize,
}

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Position of the end-of-text id.
    pub fn eot_index(&self) -> usize {
        self.eot_index
    }

    /// Wrap raw ids, checking the start/end/padding layout against `vocab`.
    pub fn from_ids(ids: Vec<u32>, vocab: &Vocabulary) -> Result<Self> {
        if ids.len() != vocab.context_length {
            return Err(Error::Dimension {
                what: "token sequence",
                expected: vocab.context_length,
                actual: ids.len(),
            });
        }
        if ids[0] != vocab.sot_id {
            return Err(Error::InvalidArgument(
                "token sequence must start with the start-of-text id".into(),
            ));
        }
        let eots: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == vocab.eot_id)
            .map(|(i, _)| i)
            .collect();
        if eots.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "token sequence must contain exactly one end-of-text id, found {}",
                eots.len()
            )));
        }
        if ids[eots[0] + 1..].iter().any(|&id| id != vocab.pad_id) {
            return Err(Error::InvalidArgument(
                "token sequence has non-padding ids after end-of-text".into(),
            ));
        }
        Ok(TokenSequence {
            ids,
            eot_index: eots[0],
        })
    }
}

impl Vocabulary {
    /// Build a vocabulary from tokens (id = position) and ranked merges.
    pub fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        Self::build(tokens, merges, Path::new("<memory>"))
    }

    /// Character-level vocabulary over printable ASCII with no merges.
    pub fn character_level() -> Self {
        let mut tokens: Vec<String> = ["<sot>", "<eot>", "<pad>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend((0x21u8..=0x7e).map(|b| (b as char).to_string()));
        Self::from_parts(tokens, Vec::new()).expect("built-in vocabulary is valid")
    }

    pub fn with_context_length(mut self, context_length: usize) -> Result<Self> {
        if context_length < 2 {
            return Err(Error::InvalidArgument(format!(
                "context length must be at least 2, got {context_length}"
            )));
        }
        self.context_length = context_length;
        Ok(self)
    }

    fn build(tokens: Vec<String>, merges: Vec<(String, String)>, origin: &Path) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.into_iter().enumerate() {
            if token_to_id.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("duplicate token {tok:?}"),
                ));
            }
        }
        let lookup = |names: &[&str]| names.iter().find_map(|n| token_to_id.get(*n).copied());
        let sot_id = lookup(&SOT_NAMES)
            .ok_or_else(|| Error::format(origin, "vocabulary has no start-of-text token"))?;
        let eot_id = lookup(&EOT_NAMES)
            .ok_or_else(|| Error::format(origin, "vocabulary has no end-of-text token"))?;
        let pad_id = lookup(&PAD_NAMES)
            .ok_or_else(|| Error::format(origin, "vocabulary has no padding token"))?;

        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let joined = format!("{a}{b}");
            if !token_to_id.contains_key(&joined) {
                return Err(Error::format(
                    origin,
                    format!("merge {a:?} + {b:?} produces {joined:?}, which is not in the vocabulary"),
                ));
            }
            merge_ranks.entry((a.clone(), b.clone())).or_insert(rank);
        }
        let byte_level = token_to_id.keys().any(|t| t.ends_with(WORD_MARKER));

        Ok(Vocabulary {
            token_to_id,
            merges,
            merge_ranks,
            sot_id,
            eot_id,
            pad_id,
            context_length: DEFAULT_CONTEXT_LENGTH,
            byte_level,
        })
    }

    pub fn token_count(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn sot_id(&self) -> u32 {
        self.sot_id
    }

    pub fn eot_id(&self) -> u32 {
        self.eot_id
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    pub fn is_byte_level(&self) -> bool {
        self.byte_level
    }

    /// Split one pre-token into its BPE symbols.
    pub fn bpe(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = if self.byte_level {
            word.bytes().map(|b| byte_to_char(b).to_string()).collect()
        } else {
            word.chars().map(|c| c.to_string()).collect()
        };
        if symbols.is_empty() {
            return symbols;
        }
        if self.byte_level {
            symbols.last_mut().unwrap().push_str(WORD_MARKER);
        }

        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Tokenize `text` into a padded sequence of exactly `context_length` ids.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let normalized = normalize(text);
        if normalized.is_empty() {
            return Err(Error::Empty("text to encode"));
        }
        let mut content = Vec::new();
        for piece in pretokenize(&normalized) {
            for sym in self.bpe(piece) {
                let id = self.id(&sym).ok_or(Error::UnknownToken(sym))?;
                content.push(id);
            }
        }
        content.truncate(self.context_length - 2);
        let eot_index = content.len() + 1;

        let mut ids = Vec::with_capacity(self.context_length);
        ids.push(self.sot_id);
        ids.extend(content);
        ids.push(self.eot_id);
        ids.resize(self.context_length, self.pad_id);
        Ok(TokenSequence { ids, eot_index })
    }
}

/// Read a vocabulary file (one token per line, id = line index) and a merges
/// file (one space-separated pair per line, rank = line index).
pub fn load_vocabulary(vocab_path: &Path, merges_path: &Path) -> Result<Vocabulary> {
    let vocab_text = fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
    let tokens: Vec<String> = vocab_text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect();
    let mut seen = HashSet::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        if !seen.insert(t.as_str()) {
            return Err(Error::parse(vocab_path, i + 1, format!("duplicate token {t:?}")));
        }
    }

    let merges_text = fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
    let mut merges = Vec::new();
    for (i, raw) in merges_text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if i == 0 && line.starts_with("#version") {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        match fields.as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() => merges.push((a.to_string(), b.to_string())),
            _ => {
                return Err(Error::parse(
                    merges_path,
                    i + 1,
                    format!("expected two space-separated symbols, got {line:?}"),
                ))
            }
        }
    }

    let vocab = Vocabulary::build(tokens, merges, vocab_path)?;
    log::info!(
        "loaded vocabulary: {} tokens, {} merges",
        vocab.token_count(),
        vocab.merge_count()
    );
    Ok(vocab)
}

/// Lowercase, collapse whitespace runs, trim.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

/// Split normalized text into pre-tokens: contractions, letter runs, single
/// digits, and runs of other non-space characters.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
            continue;
        }
        let len = if let Some(ctr) = CONTRACTIONS.iter().find(|p| rest.starts_with(**p)) {
            ctr.len()
        } else if c.is_alphabetic() {
            run_len(rest, |ch| ch.is_alphabetic())
        } else if c.is_numeric() {
            c.len_utf8()
        } else {
            run_len(rest, |ch| !ch.is_whitespace() && !ch.is_alphabetic() && !ch.is_numeric())
        };
        out.push(&rest[..len]);
        rest = &rest[len..];
    }
    out
}

fn run_len(s: &str, pred: impl Fn(char) -> bool) -> usize {
    s.char_indices()
        .find(|&(_, ch)| !pred(ch))
        .map_or(s.len(), |(i, _)| i)
}

/// Reversible byte → printable code point mapping used by byte-level vocabularies.
fn byte_to_char(b: u8) -> char {
    let printable = |b: u8| (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || b >= 0xAE;
    if printable(b) {
        char::from(b)
    } else {
        let offset = (0u8..b).filter(|&x| !printable(x)).count() as u32;
        char::from_u32(256 + offset).unwrap()
    }
}
