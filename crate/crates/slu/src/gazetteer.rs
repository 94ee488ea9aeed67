//! Phrase inventories and integer gazetteer features.
//!
//! Types are 1-indexed. For a matched phrase of type i, the first matched
//! token receives feature 2i-1 and the remaining tokens 2i; unmatched
//! tokens receive 0. Overlaps resolve greedily left to right: at the
//! leftmost unconsumed position take the longest match (ties by lowest
//! type index), then continue after it.
//!
//! Gazetteer file format: sections headed `[<type-name>]`, one phrase per
//! line; section order defines the type index i.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, SluError};

/// One gazetteer type: a name and its phrase list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerType {
    pub name: String,
    /// Each phrase is a non-empty token sequence.
    pub phrases: Vec<Vec<String>>,
}

/// Ordered list of gazetteer types; position defines the 1-based index i.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GazetteerSet {
    pub types: Vec<GazetteerType>,
}

impl GazetteerSet {
    /// Number of distinct feature values: {0} plus 2 per type.
    pub fn num_features(&self) -> usize {
        2 * self.types.len() + 1
    }
}

/// Parse the section format described in the module docs.
pub fn parse_gazetteer(text: &str, path: &str) -> Result<GazetteerSet> {
    let mut set = GazetteerSet::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            set.types.push(GazetteerType {
                name: name.trim().to_string(),
                phrases: Vec::new(),
            });
            continue;
        }
        let Some(current) = set.types.last_mut() else {
            return Err(SluError::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: "phrase before any [type] header".into(),
            });
        };
        current
            .phrases
            .push(line.split_whitespace().map(|t| t.to_lowercase()).collect());
    }
    Ok(set)
}

pub fn load_gazetteer(path: &Path) -> Result<GazetteerSet> {
    let text = fs::read_to_string(path)?;
    parse_gazetteer(&text, &path.display().to_string())
}

#[derive(Debug, Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    /// (type index i >= 1, phrase length) for phrases ending here.
    /// Kept minimal per length: lowest type index wins a tie.
    terminal: Option<usize>,
}

/// Token-level trie over all phrases of a gazetteer set, lowercased.
#[derive(Debug)]
pub struct GazetteerMatcher {
    nodes: Vec<TrieNode>,
    num_types: usize,
}

impl GazetteerMatcher {
    /// Compile a phrase set. Empty phrases are rejected.
    pub fn compile(set: &GazetteerSet) -> Result<Self> {
        let mut m = GazetteerMatcher {
            nodes: vec![TrieNode::default()],
            num_types: set.types.len(),
        };
        for (ti, gtype) in set.types.iter().enumerate() {
            let type_index = ti + 1;
            for phrase in &gtype.phrases {
                if phrase.is_empty() {
                    return Err(SluError::InvalidArgument(format!(
                        "empty phrase in gazetteer type {}",
                        gtype.name
                    )));
                }
                let mut node = 0usize;
                for tok in phrase {
                    let tok = tok.to_lowercase();
                    node = match m.nodes[node].children.get(&tok) {
                        Some(&next) => next,
                        None => {
                            let next = m.nodes.len();
                            m.nodes.push(TrieNode::default());
                            m.nodes[node].children.insert(tok, next);
                            next
                        }
                    };
                }
                // Lowest type index wins when two types share a phrase.
                match m.nodes[node].terminal {
                    Some(existing) if existing <= type_index => {}
                    _ => m.nodes[node].terminal = Some(type_index),
                }
            }
        }
        Ok(m)
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    /// Longest match starting at `start`: (type index, length).
    fn longest_match(&self, tokens: &[String], start: usize) -> Option<(usize, usize)> {
        let mut node = 0usize;
        let mut best: Option<(usize, usize)> = None;
        for (len, tok) in tokens[start..].iter().enumerate() {
            match self.nodes[node].children.get(tok) {
                Some(&next) => {
                    node = next;
                    if let Some(ti) = self.nodes[node].terminal {
                        best = Some((ti, len + 1));
                    }
                }
                None => break,
            }
        }
        best
    }

    /// Integer gazetteer feature per token.
    pub fn featurize(&self, tokens: &[String]) -> Vec<usize> {
        let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut features = vec![0usize; tokens.len()];
        let mut pos = 0usize;
        while pos < lowered.len() {
            match self.longest_match(&lowered, pos) {
                Some((ti, len)) => {
                    features[pos] = 2 * ti - 1;
                    for f in features.iter_mut().skip(pos + 1).take(len - 1) {
                        *f = 2 * ti;
                    }
                    pos += len;
                }
                None => pos += 1,
            }
        }
        features
    }
}

/// Brute-force reference: same greedy left-to-right longest-match policy,
/// but scanning every phrase at every position. Used by tests to pin the
/// trie's behavior.
pub fn featurize_naive(set: &GazetteerSet, tokens: &[String]) -> Vec<usize> {
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut features = vec![0usize; tokens.len()];
    let mut pos = 0usize;
    while pos < lowered.len() {
        let mut best: Option<(usize, usize)> = None; // (len, type index)
        for (ti, gtype) in set.types.iter().enumerate() {
            for phrase in &gtype.phrases {
                let len = phrase.len();
                if pos + len > lowered.len() {
                    continue;
                }
                let matches = phrase
                    .iter()
                    .zip(&lowered[pos..pos + len])
                    .all(|(a, b)| a.to_lowercase() == *b);
                if !matches {
                    continue;
                }
                let cand = (len, ti + 1);
                best = Some(match best {
                    None => cand,
                    Some((bl, bt)) => {
                        if len > bl || (len == bl && ti + 1 < bt) {
                            cand
                        } else {
                            (bl, bt)
                        }
                    }
                });
            }
        }
        match best {
            Some((len, ti)) => {
                features[pos] = 2 * ti - 1;
                for f in features.iter_mut().skip(pos + 1).take(len - 1) {
                    *f = 2 * ti;
                }
                pos += len;
            }
            None => pos += 1,
        }
    }
    features
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    fn set_from(pairs: &[(&str, &[&str])]) -> GazetteerSet {
        GazetteerSet {
            types: pairs
                .iter()
                .map(|(name, phrases)| GazetteerType {
                    name: name.to_string(),
                    phrases: phrases.iter().map(|p| toks(p)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn worked_example_from_feature_rule() {
        let set = set_from(&[
            ("g1", &["new york"]),
            ("g2", &["san francisco international"]),
        ]);
        let m = GazetteerMatcher::compile(&set).unwrap();
        let f = m.featurize(&toks("fly from new york to san francisco international"));
        assert_eq!(f, vec![0, 0, 1, 2, 0, 3, 4, 4]);
    }

    #[test]
    fn longest_match_wins() {
        let set = set_from(&[("g1", &["new york", "new york city"])]);
        let m = GazetteerMatcher::compile(&set).unwrap();
        let f = m.featurize(&toks("to new york city now"));
        assert_eq!(f, vec![0, 1, 2, 2, 0]);
    }

    #[test]
    fn empty_set_gives_zeros() {
        let m = GazetteerMatcher::compile(&GazetteerSet::default()).unwrap();
        assert_eq!(m.featurize(&toks("a b c")), vec![0, 0, 0]);
    }

    #[test]
    fn single_token_phrase() {
        let set = set_from(&[("g1", &["boston"])]);
        let m = GazetteerMatcher::compile(&set).unwrap();
        assert_eq!(m.featurize(&toks("to Boston please")), vec![0, 1, 0]);
    }

    #[test]
    fn empty_phrase_rejected() {
        let set = GazetteerSet {
            types: vec![GazetteerType {
                name: "g1".into(),
                phrases: vec![vec![]],
            }],
        };
        assert!(GazetteerMatcher::compile(&set).is_err());
    }

    #[test]
    fn parse_section_format() {
        let text = "[city]\nnew york\nboston\n\n[airline]\ndelta\n";
        let set = parse_gazetteer(text, "mem").unwrap();
        assert_eq!(set.types.len(), 2);
        assert_eq!(set.types[0].name, "city");
        assert_eq!(set.types[0].phrases.len(), 2);
        assert_eq!(set.types[1].phrases, vec![toks("delta")]);
    }

    #[test]
    fn feature_values_in_valid_range_and_odd_first() {
        let set = set_from(&[("a", &["x y", "y"]), ("b", &["z", "x y z"])]);
        let m = GazetteerMatcher::compile(&set).unwrap();
        let f = m.featurize(&toks("x y z y w z x"));
        let n = set.types.len();
        for (i, &v) in f.iter().enumerate() {
            assert!(v <= 2 * n);
            if v > 0 && v % 2 == 0 {
                assert!(i > 0 && (f[i - 1] == v || f[i - 1] == v - 1));
            }
        }
    }

    #[test]
    fn trie_matches_naive_oracle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let alphabet: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        for _ in 0..300 {
            let n_types = rng.gen_range(1..4);
            let set = GazetteerSet {
                types: (0..n_types)
                    .map(|t| GazetteerType {
                        name: format!("g{t}"),
                        phrases: (0..rng.gen_range(1..8))
                            .map(|_| {
                                (0..rng.gen_range(1..4))
                                    .map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone())
                                    .collect()
                            })
                            .collect(),
                    })
                    .collect(),
            };
            let m = GazetteerMatcher::compile(&set).unwrap();
            let utterance: Vec<String> = (0..rng.gen_range(1..15))
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone())
                .collect();
            assert_eq!(
                m.featurize(&utterance),
                featurize_naive(&set, &utterance),
                "set {set:?} utterance {utterance:?}"
            );
        }
    }
}
