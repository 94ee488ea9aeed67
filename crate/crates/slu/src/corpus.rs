//! Annotated utterances, vocabularies, BIO span handling and pre-trained
//! word-embedding files.
//!
//! Dataset file format (UTF-8 text): blocks separated by blank lines; the
//! first line of a block is `# intent: <label>`; each following line is
//! `<token>\t<BIO-tag>`. Embedding files are one entry per line,
//! space-separated, word first.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SluError};
use crate::numerics::{init_matrix, Init, Mat};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// One annotated utterance: tokens, aligned BIO slot tags, intent label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub slot_tags: Vec<String>,
    pub intent: String,
}

impl Utterance {
    pub fn new(tokens: Vec<String>, slot_tags: Vec<String>, intent: String) -> Result<Self> {
        if tokens.is_empty() || tokens.len() != slot_tags.len() {
            return Err(SluError::InvalidArgument(format!(
                "utterance needs equal non-zero token/tag counts, got {}/{}",
                tokens.len(),
                slot_tags.len()
            )));
        }
        for t in &slot_tags {
            if !valid_bio(t) {
                return Err(SluError::InvalidArgument(format!("malformed BIO tag {t}")));
            }
        }
        Ok(Utterance {
            tokens,
            slot_tags,
            intent,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn valid_bio(tag: &str) -> bool {
    tag == "O"
        || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.len() > 2)
}

/// Bidirectional string <-> index map with reserved PAD=0 and UNK=1 slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            items: Vec::new(),
            index: HashMap::new(),
        };
        v.add("<pad>");
        v.add("<unk>");
        v
    }

    pub fn add(&mut self, item: &str) -> usize {
        if let Some(&i) = self.index.get(item) {
            return i;
        }
        let i = self.items.len();
        self.items.push(item.to_string());
        self.index.insert(item.to_string(), i);
        i
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    /// Index of `item`, or UNK when unseen.
    pub fn lookup(&self, item: &str) -> usize {
        self.get(item).unwrap_or(UNK)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }

    /// Stable content fingerprint, used to detect checkpoint/vocabulary drift.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for item in &self.items {
            for b in item.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

/// The four vocabularies a model is bound to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabs {
    pub word: Vocab,
    pub char: Vocab,
    pub tag: Vocab,
    pub intent: Vocab,
}

/// A collection of utterances plus the vocabularies built over them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub vocabs: Vocabs,
}

impl Dataset {
    /// Build a dataset and its vocabularies (training split).
    /// Word lookup is lowercased; characters keep original casing.
    pub fn build(utterances: Vec<Utterance>) -> Self {
        let mut vocabs = Vocabs {
            word: Vocab::new(),
            char: Vocab::new(),
            tag: Vocab::new(),
            intent: Vocab::new(),
        };
        vocabs.tag.add("O");
        for u in &utterances {
            for t in &u.tokens {
                vocabs.word.add(&t.to_lowercase());
                for c in t.chars() {
                    vocabs.char.add(&c.to_string());
                }
            }
            for tag in &u.slot_tags {
                vocabs.tag.add(tag);
            }
            vocabs.intent.add(&u.intent);
        }
        Dataset { utterances, vocabs }
    }

    /// Wrap utterances with vocabularies from a training split (dev/test).
    pub fn with_vocabs(utterances: Vec<Utterance>, vocabs: Vocabs) -> Self {
        Dataset { utterances, vocabs }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Parse the block format described in the module docs.
pub fn parse_utterances(text: &str, path: &str) -> Result<Vec<Utterance>> {
    let mut utterances = Vec::new();
    let mut intent: Option<String> = None;
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut block_start = 0usize;

    let flush = |intent: &mut Option<String>,
                 tokens: &mut Vec<String>,
                 tags: &mut Vec<String>,
                 line: usize|
     -> Result<Option<Utterance>> {
        match intent.take() {
            None => Ok(None),
            Some(label) => {
                if tokens.is_empty() {
                    return Err(SluError::Parse {
                        path: path.to_string(),
                        line,
                        message: "block has an intent but no tokens".into(),
                    });
                }
                let u = Utterance::new(
                    std::mem::take(tokens),
                    std::mem::take(tags),
                    label,
                )
                .map_err(|e| SluError::Parse {
                    path: path.to_string(),
                    line,
                    message: e.to_string(),
                })?;
                Ok(Some(u))
            }
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        let n = lineno + 1;
        if line.is_empty() {
            if let Some(u) = flush(&mut intent, &mut tokens, &mut tags, block_start)? {
                utterances.push(u);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# intent:") {
            if intent.is_some() {
                return Err(SluError::Parse {
                    path: path.to_string(),
                    line: n,
                    message: "intent line inside an open block (missing blank line?)".into(),
                });
            }
            intent = Some(rest.trim().to_string());
            block_start = n;
            continue;
        }
        if intent.is_none() {
            return Err(SluError::Parse {
                path: path.to_string(),
                line: n,
                message: "token line before any `# intent:` header".into(),
            });
        }
        let mut parts = line.split('\t');
        let (tok, tag) = match (parts.next(), parts.next(), parts.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => (tok, tag),
            _ => {
                return Err(SluError::Parse {
                    path: path.to_string(),
                    line: n,
                    message: format!("expected `<token>\\t<BIO-tag>`, got {line:?}"),
                })
            }
        };
        if !valid_bio(tag) {
            return Err(SluError::Parse {
                path: path.to_string(),
                line: n,
                message: format!("malformed BIO tag {tag:?}"),
            });
        }
        tokens.push(tok.to_string());
        tags.push(tag.to_string());
    }
    if let Some(u) = flush(&mut intent, &mut tokens, &mut tags, block_start)? {
        utterances.push(u);
    }
    Ok(utterances)
}

/// Load a dataset file and build vocabularies (or wrap with given ones).
pub fn parse_dataset(path: &Path, vocabs: Option<Vocabs>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let utterances = parse_utterances(&text, &path.display().to_string())?;
    Ok(match vocabs {
        Some(v) => Dataset::with_vocabs(utterances, v),
        None => Dataset::build(utterances),
    })
}

/// Inverse of `parse_utterances`.
pub fn serialize_utterances(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        let _ = writeln!(out, "# intent: {}", u.intent);
        for (tok, tag) in u.tokens.iter().zip(&u.slot_tags) {
            let _ = writeln!(out, "{tok}\t{tag}");
        }
        out.push('\n');
    }
    out
}

/// Typed span: token positions [start, end] inclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Extract maximal typed spans from a BIO sequence with the reference
/// CoNLL-2002 script's lenient segmentation: an I-X that does not continue
/// a running X span opens a new one.
pub fn bio_spans(tags: &[String]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (starts_new, label) = match tag.split_once('-') {
            Some(("B", l)) => (true, Some(l)),
            Some(("I", l)) => {
                let continues = matches!(&open, Some((_, ol)) if ol == l);
                (!continues, Some(l))
            }
            _ => (false, None),
        };
        match label {
            None => {
                if let Some((start, l)) = open.take() {
                    spans.push(Span {
                        start,
                        end: i - 1,
                        label: l,
                    });
                }
            }
            Some(l) => {
                if starts_new {
                    if let Some((start, ol)) = open.take() {
                        spans.push(Span {
                            start,
                            end: i - 1,
                            label: ol,
                        });
                    }
                    open = Some((i, l.to_string()));
                }
            }
        }
    }
    if let Some((start, l)) = open {
        spans.push(Span {
            start,
            end: tags.len() - 1,
            label: l,
        });
    }
    spans
}

/// Word-embedding rows aligned to a vocabulary.
#[derive(Debug)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Mat,
    /// Fraction of non-reserved vocab entries found in the file.
    pub coverage: f64,
    pub trainable: bool,
}

/// Load a text-format embedding file against a word vocabulary.
/// In-vocab rows are copied from the file; missing rows are drawn from
/// N(0, 0.1^2) seeded per row; the PAD row stays zero.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    trainable: bool,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path)?;
    load_embeddings_from_str(&text, &path.display().to_string(), vocab, dim, trainable, seed)
}

pub fn load_embeddings_from_str(
    text: &str,
    path: &str,
    vocab: &Vocab,
    dim: usize,
    trainable: bool,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let mut rows = init_matrix(seed, "embed.word", vocab.len(), dim, Init::Normal(0.1));
    rows.row_mut(PAD).fill(0.0);
    let mut found = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap();
        let Some(idx) = vocab.get(word) else {
            // skim the rest; dimension errors on unused lines still matter
            if parts.count() != dim {
                return Err(SluError::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("expected {dim} floats for {word:?}"),
                });
            }
            continue;
        };
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SluError::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: format!("bad float: {e}"),
            })?;
        if values.len() != dim {
            return Err(SluError::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: format!("expected {dim} floats, got {}", values.len()),
            });
        }
        for (c, v) in values.into_iter().enumerate() {
            rows[(idx, c)] = v;
        }
        found += 1;
    }
    let real_words = vocab.len().saturating_sub(2);
    let coverage = if real_words == 0 {
        0.0
    } else {
        found as f64 / real_words as f64
    };
    Ok(EmbeddingMatrix {
        dim,
        rows,
        coverage,
        trainable,
    })
}
