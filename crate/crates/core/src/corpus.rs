//! Text ingestion: dictionary-driven segmentation, vocabulary construction,
//! and frequency subsampling.
//!
//! Segmentation is greedy longest-match against a user dictionary. Spans the
//! dictionary does not cover fall back to single characters (CJK) or maximal
//! alphanumeric runs (Latin); whitespace only separates tokens and is never
//! emitted.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::Result;

/// One user-dictionary entry. Priority is the zero-based position in the
/// dictionary file; lower wins on (hypothetical) equal-length conflicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub term: String,
    pub priority: u32,
}

/// Segmentation dictionary: unique, non-empty terms in file order.
#[derive(Debug, Clone, Default)]
pub struct UserDictionary {
    entries: Vec<DictEntry>,
    // first char -> candidate entry indexes, longest term first
    by_first_char: HashMap<char, Vec<usize>>,
    max_len: usize,
}

impl UserDictionary {
    /// Builds a dictionary from terms in priority order. Empty terms are
    /// rejected; duplicates are rejected (use [`load_dictionary`] for
    /// duplicate-tolerant file loading).
    pub fn new<S: AsRef<str>>(terms: &[S]) -> Result<Self> {
        let mut dict = UserDictionary::default();
        for term in terms {
            let term = term.as_ref();
            if !dict.insert(term) {
                return Err(Error::Config(format!("duplicate dictionary term: {term}")));
            }
        }
        Ok(dict)
    }

    /// Inserts a term; returns false if it was already present or empty.
    fn insert(&mut self, term: &str) -> bool {
        if term.is_empty() || self.contains(term) {
            return false;
        }
        let idx = self.entries.len();
        self.entries.push(DictEntry {
            term: term.to_string(),
            priority: idx as u32,
        });
        let chars: Vec<char> = term.chars().collect();
        self.max_len = self.max_len.max(chars.len());
        let bucket = self.by_first_char.entry(chars[0]).or_default();
        bucket.push(idx);
        // longest first, then priority order (stable: earlier index wins ties)
        let entries = &self.entries;
        bucket.sort_by_key(|&i| {
            (
                std::cmp::Reverse(entries[i].term.chars().count()),
                entries[i].priority,
            )
        });
        true
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.iter().any(|e| e.term == term)
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.term.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest dictionary match starting at `pos` in `chars`, if any.
    fn longest_match(&self, chars: &[char], pos: usize) -> Option<&str> {
        let bucket = self.by_first_char.get(&chars[pos])?;
        'candidate: for &idx in bucket {
            let term = &self.entries[idx].term;
            let mut i = pos;
            for tc in term.chars() {
                if i >= chars.len() || chars[i] != tc {
                    continue 'candidate;
                }
                i += 1;
            }
            return Some(term);
        }
        None
    }
}

/// Loads a dictionary file: UTF-8, one term per line, `#` starts a comment.
/// Returns the dictionary and the list of duplicate terms that were skipped.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<(UserDictionary, Vec<String>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::format(path.display().to_string(), format!("invalid UTF-8: {e}")))?;
    let mut dict = UserDictionary::default();
    let mut duplicates = Vec::new();
    for line in text.lines() {
        let term = match line.find('#') {
            Some(i) => line[..i].trim(),
            None => line.trim(),
        };
        if term.is_empty() {
            continue;
        }
        if !dict.insert(term) {
            duplicates.push(term.to_string());
        }
    }
    Ok((dict, duplicates))
}

/// Tokenized text: one token list per sentence, boundaries preserved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub sentences: Vec<Vec<String>>,
}

impl TokenSeq {
    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn iter_tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(|t| t.as_str())
    }
}

/// Segments `text` (one sentence per line) with greedy longest dictionary
/// match. Non-dictionary spans fall back to single characters, except maximal
/// ASCII-alphanumeric runs which stay whole words. Whitespace separates
/// tokens and is dropped, so joining a sentence's tokens reproduces the
/// source line with its whitespace removed.
pub fn tokenize(text: &str, dict: &UserDictionary) -> TokenSeq {
    let mut sentences = Vec::new();
    for line in text.lines() {
        let chars: Vec<char> = line.chars().collect();
        let mut tokens = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let c = chars[pos];
            if c.is_whitespace() {
                pos += 1;
                continue;
            }
            if let Some(term) = dict.longest_match(&chars, pos) {
                tokens.push(term.to_string());
                pos += term.chars().count();
                continue;
            }
            if c.is_ascii_alphanumeric() {
                // maximal alphanumeric run, stopping where a dictionary match begins
                let start = pos;
                pos += 1;
                while pos < chars.len()
                    && chars[pos].is_ascii_alphanumeric()
                    && dict.longest_match(&chars, pos).is_none()
                {
                    pos += 1;
                }
                tokens.push(chars[start..pos].iter().collect());
            } else {
                tokens.push(c.to_string());
                pos += 1;
            }
        }
        if !line.is_empty() {
            sentences.push(tokens);
        }
    }
    TokenSeq { sentences }
}

/// Vocabulary over a token stream. Ids are dense in `[0, len)`, assigned in
/// first-occurrence order among tokens that survive the `min_count` filter.
/// `total_count` counts every token seen before filtering.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    by_token: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<u64>,
    pub total_count: u64,
    pub min_count: u64,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.by_token.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Relative frequency f(w) = count(w) / T of a kept token.
    pub fn frequency(&self, id: usize) -> f64 {
        self.counts[id] as f64 / self.total_count as f64
    }
}

/// Counts tokens and keeps those with count >= `min_count`.
pub fn build_vocabulary(corpus: &TokenSeq, min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be >= 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    let mut total = 0u64;
    for tok in corpus.iter_tokens() {
        total += 1;
        let entry = counts.entry(tok).or_insert(0);
        if *entry == 0 {
            first_seen.push(tok);
        }
        *entry += 1;
    }
    let mut vocab = Vocabulary {
        min_count,
        total_count: total,
        ..Vocabulary::default()
    };
    for tok in first_seen {
        let c = counts[tok];
        if c >= min_count {
            let id = vocab.tokens.len();
            vocab.by_token.insert(tok.to_string(), id);
            vocab.tokens.push(tok.to_string());
            vocab.counts.push(c);
        }
    }
    Ok(vocab)
}

/// Randomly discards frequent tokens: a token with relative frequency
/// f(w) > sample is dropped with probability 1 - sqrt(sample / f(w)).
/// Tokens at or below the threshold, and tokens missing from the
/// vocabulary, pass through without consuming randomness, so the output is
/// bit-reproducible for a given seed.
pub fn subsample(corpus: &TokenSeq, vocab: &Vocabulary, sample: f64, seed: u64) -> Result<TokenSeq> {
    if !(sample > 0.0 && sample <= 1.0) {
        return Err(Error::Config(format!(
            "sample must be in (0, 1], got {sample}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TokenSeq::default();
    for sentence in &corpus.sentences {
        let mut kept = Vec::with_capacity(sentence.len());
        for tok in sentence {
            let keep = match vocab.id(tok) {
                Some(id) => {
                    let f = vocab.frequency(id);
                    if f <= sample {
                        true
                    } else {
                        let p_discard = 1.0 - (sample / f).sqrt();
                        rng.gen::<f64>() >= p_discard
                    }
                }
                None => true,
            };
            if keep {
                kept.push(tok.clone());
            }
        }
        out.sentences.push(kept);
    }
    Ok(out)
}
