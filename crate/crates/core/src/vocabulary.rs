//! Word segmentation, frequency counting, top-K word vocabularies and
//! sequence encoding.
//!
//! Segmentation splits on whitespace and then peels punctuation characters off
//! both ends of every chunk, each as its own token. A punctuation character is
//! any character that is neither alphanumeric nor whitespace. Punctuation
//! inside a chunk (`don't`, `e.g`) stays attached.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;

/// Default sequence length, including `[CLS]` and `[SEP]`.
pub const DEFAULT_MAX_LENGTH: usize = 512;

const HEADER_PREFIX: &str = "#wordvocab v1 lowercase=";

pub type WordCounts = HashMap<String, u64>;

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIAL
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn segment_words(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let lead = chars.iter().take_while(|&&c| is_punct(c)).count();
        if lead == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|&&c| is_punct(c)).count();
        out.extend(chars[..lead].iter().map(|c| c.to_string()));
        let core: String = chars[lead..chars.len() - trail].iter().collect();
        out.push(if lowercase { core.to_lowercase() } else { core });
        out.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    out
}

/// Exact counts of segmented words over every document.
pub fn count_frequencies<I, S>(docs: I, lowercase: bool) -> WordCounts
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = WordCounts::new();
    for doc in docs {
        for w in segment_words(doc.as_ref(), lowercase) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Same result as [`count_frequencies`], sharded across the rayon pool.
pub fn count_frequencies_parallel<S: AsRef<str> + Sync>(docs: &[S], lowercase: bool) -> WordCounts {
    docs.par_chunks(256)
        .map(|chunk| count_frequencies(chunk, lowercase))
        .reduce(WordCounts::new, merge_counts)
}

fn merge_counts(mut a: WordCounts, b: WordCounts) -> WordCounts {
    if a.len() < b.len() {
        return merge_counts(b, a);
    }
    for (w, c) in b {
        *a.entry(w).or_insert(0) += c;
    }
    a
}

/// Reads a UTF-8 corpus with one document per line.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        let doc = std::str::from_utf8(&buf).map_err(|e| Error::Document {
            name: format!("{} line {line_no}", path.display()),
            reason: e.to_string(),
        })?;
        docs.push(doc.to_owned());
    }
    Ok(docs)
}

/// Counts a corpus file; an undecodable line aborts with an error naming it.
pub fn count_corpus_file(path: &Path, lowercase: bool) -> Result<WordCounts> {
    let docs = read_corpus(path)?;
    Ok(count_frequencies_parallel(&docs, lowercase))
}

/// Rank-ordered word list: the five specials, then corpus words by count
/// descending with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    frequency: Vec<u64>,
    id_of: HashMap<String, u32>,
    lowercase: bool,
}

impl WordVocab {
    /// Keeps the `k` most frequent words.
    pub fn build(freqs: &WordCounts, k: usize, lowercase: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("vocabulary size K must be at least 1"));
        }
        let mut ranked: Vec<(&str, u64)> = freqs
            .iter()
            .filter(|(w, _)| !w.is_empty() && !SPECIAL_TOKENS.contains(&w.as_str()))
            .map(|(w, &c)| (w.as_str(), c))
            .collect();
        let cmp = |a: &(&str, u64), b: &(&str, u64)| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0));
        if ranked.len() > k {
            ranked.select_nth_unstable_by(k - 1, cmp);
            ranked.truncate(k);
        }
        ranked.sort_unstable_by(cmp);
        let entries = SPECIAL_TOKENS
            .iter()
            .map(|s| (s.to_string(), 0))
            .chain(ranked.into_iter().map(|(w, c)| (w.to_owned(), c)));
        Self::from_entries(entries, lowercase)
    }

    fn from_entries(entries: impl Iterator<Item = (String, u64)>, lowercase: bool) -> Result<Self> {
        let mut words = Vec::new();
        let mut frequency = Vec::new();
        let mut id_of = HashMap::new();
        for (w, c) in entries {
            let id = u32::try_from(words.len())
                .map_err(|_| Error::contract("vocabulary exceeds u32 id space"))?;
            if id_of.insert(w.clone(), id).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary word {w:?}")));
            }
            words.push(w);
            frequency.push(c);
        }
        Ok(Self {
            words,
            frequency,
            id_of,
            lowercase,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.id_of.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, id: u32) -> Option<u64> {
        self.frequency.get(id as usize).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `[CLS] w₁ … wₙ [SEP] [PAD]…` padded to exactly `max_length`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S], max_length: usize) -> Result<EncodedSequence> {
        if max_length < 3 {
            return Err(Error::contract(format!("max_length {max_length} < 3")));
        }
        let kept = words.len().min(max_length - 2);
        let mut ids = Vec::with_capacity(max_length);
        ids.push(CLS_ID);
        ids.extend(words[..kept].iter().map(|w| self.id_or_unk(w.as_ref())));
        ids.push(SEP_ID);
        let mut attention_mask = vec![1u8; ids.len()];
        ids.resize(max_length, PAD_ID);
        attention_mask.resize(max_length, 0);
        Ok(EncodedSequence {
            ids,
            attention_mask,
            word_count: kept,
        })
    }

    /// Words for the non-special ids, in order.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .filter(|&&id| !is_special(id))
            .map(|&id| {
                self.word(id).map(str::to_owned).ok_or(Error::Index {
                    what: "word id",
                    index: id as usize,
                    bound: self.len(),
                })
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HEADER_PREFIX}{}", self.lowercase)?;
        for (word, freq) in self.words.iter().zip(&self.frequency) {
            writeln!(w, "{word}\t{freq}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::format(path, 1, "empty vocabulary file")),
        };
        let lowercase = match header.strip_prefix(HEADER_PREFIX) {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(Error::format(path, 1, format!("bad header {header:?}"))),
        };
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let (word, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, line_no, "expected word<TAB>frequency"))?;
            let freq: u64 = freq
                .parse()
                .map_err(|_| Error::format(path, line_no, format!("bad frequency {freq:?}")))?;
            if let Some(special) = SPECIAL_TOKENS.get(i) {
                if word != *special {
                    return Err(Error::format(
                        path,
                        line_no,
                        format!("expected special token {special}, found {word:?}"),
                    ));
                }
            }
            entries.push((word.to_owned(), freq));
        }
        if entries.len() < SPECIAL_TOKENS.len() {
            return Err(Error::format(path, entries.len() + 2, "missing special tokens"));
        }
        Self::from_entries(entries.into_iter(), lowercase).map_err(|e| Error::format(path, 0, e.to_string()))
    }
}

/// Model input for one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// Words between `[CLS]` and `[SEP]`, including `[UNK]`s.
    pub word_count: usize,
}

impl EncodedSequence {
    /// Length of the attended prefix, `[CLS]` through `[SEP]`.
    pub fn real_len(&self) -> usize {
        self.word_count + 2
    }

    /// Positions holding words.
    pub fn word_positions(&self) -> std::ops::Range<usize> {
        1..self.word_count + 1
    }

    pub fn mask_bools(&self) -> Vec<bool> {
        self.attention_mask.iter().map(|&m| m == 1).collect()
    }
}
