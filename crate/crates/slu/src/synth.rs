//! Synthetic cross-lingual corpus pair for transfer experiments: one toy
//! grammar rendered in a "source language" and a "target language" whose
//! surface tokens are systematically renamed (prefix `de_`) but share the
//! source tokens' fixed embedding vectors, standing in for a multilingual
//! embedding space.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Dataset, EmbeddingMatrix, Utterance, Vocab, PAD};
use crate::numerics::Mat;

const TYPES: [&str; 3] = ["city", "airline", "period"];
const WORDS_PER_TYPE: usize = 60;

/// Entity surface form `j` of type `ti`: single token, except every fifth
/// entity which is a two-token phrase (exercises B-/I- tags).
fn entity_tokens(prefix: &str, ti: usize, j: usize) -> Vec<String> {
    let t = TYPES[ti];
    if j % 5 == 0 {
        vec![format!("{prefix}{t}{j}a"), format!("{prefix}{t}{j}b")]
    } else {
        vec![format!("{prefix}{t}{j}")]
    }
}

fn template(prefix: &str, ti: usize, variant: usize, entity: Vec<String>) -> Utterance {
    // Context words are deliberately type-agnostic: the slot type and the
    // intent can only be inferred from the entity word itself.
    let t = TYPES[ti];
    let fix = |w: &str| format!("{prefix}{w}");
    let (mut tokens, mut tags): (Vec<String>, Vec<String>) = match variant % 3 {
        0 => (vec![fix("show"), fix("me")], vec!["O".into(), "O".into()]),
        1 => (vec![fix("about")], vec!["O".into()]),
        _ => (vec![fix("i"), fix("want"), fix("any")], vec!["O".into(); 3]),
    };
    for (i, tok) in entity.into_iter().enumerate() {
        tokens.push(tok);
        tags.push(format!("{}-{t}", if i == 0 { "B" } else { "I" }));
    }
    if variant % 2 == 0 {
        tokens.push(fix("please"));
        tags.push("O".into());
    }
    Utterance::new(tokens, tags, t.to_string()).unwrap()
}

fn generate_split(
    prefix: &str,
    n: usize,
    entity_range: std::ops::Range<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<Utterance> {
    (0..n)
        .map(|_| {
            let ti = rng.gen_range(0..TYPES.len());
            let j = rng.gen_range(entity_range.clone());
            let variant = rng.gen_range(0..6);
            template(prefix, ti, variant, entity_tokens(prefix, ti, j))
        })
        .collect()
}

/// The full synthetic experiment: source training data, small target
/// training set, target dev/test whose entity words never occur in target
/// training, and a fixed shared embedding table over the union vocabulary.
pub struct SynthData {
    pub source_train: Dataset,
    pub source_dev: Dataset,
    pub target_train: Dataset,
    pub target_dev: Dataset,
    pub target_test: Dataset,
    pub embeddings: EmbeddingMatrix,
}

/// Deterministic vector for a word, keyed by its surface form with the
/// target-language prefix stripped, so `de_cityX` == `cityX`.
fn shared_vector(word: &str, dim: usize) -> Vec<f64> {
    let base = word.strip_prefix("de_").unwrap_or(word);
    let mut h: u64 = 0xcbf29ce484222325;
    for b in base.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let dist = Normal::new(0.0, 0.5).unwrap();
    (0..dim).map(|_| dist.sample(&mut rng)).collect()
}

fn shared_embeddings(vocab: &Vocab, dim: usize) -> EmbeddingMatrix {
    let mut rows = Array2::zeros((vocab.len(), dim));
    for (i, word) in vocab.iter().enumerate() {
        if i == PAD {
            continue;
        }
        for (j, v) in shared_vector(word, dim).into_iter().enumerate() {
            rows[(i, j)] = v;
        }
    }
    EmbeddingMatrix { dim, rows, coverage: 1.0, trainable: false }
}

pub fn generate(seed: u64, embedding_dim: usize) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_17_2a_91);
    // Source uses the full entity inventory; target training only sees the
    // first half, while target dev/test draw exclusively from the second
    // half (every test entity is unseen in target training).
    let source_train = generate_split("", 4000, 0..WORDS_PER_TYPE, &mut rng);
    let source_dev = generate_split("", 300, 0..WORDS_PER_TYPE, &mut rng);
    let target_train = generate_split("de_", 500, 0..WORDS_PER_TYPE / 2, &mut rng);
    let target_dev = generate_split("de_", 200, WORDS_PER_TYPE / 2..WORDS_PER_TYPE, &mut rng);
    let target_test = generate_split("de_", 300, WORDS_PER_TYPE / 2..WORDS_PER_TYPE, &mut rng);

    // One vocabulary over both languages (the shared embedding space).
    let mut all = source_train.clone();
    all.extend(source_dev.iter().cloned());
    all.extend(target_train.iter().cloned());
    all.extend(target_dev.iter().cloned());
    all.extend(target_test.iter().cloned());
    let union = Dataset::build(all);
    let vocabs = union.vocabs;
    let embeddings = shared_embeddings(&vocabs.word, embedding_dim);

    SynthData {
        source_train: Dataset::with_vocabs(source_train, vocabs.clone()),
        source_dev: Dataset::with_vocabs(source_dev, vocabs.clone()),
        target_train: Dataset::with_vocabs(target_train, vocabs.clone()),
        target_dev: Dataset::with_vocabs(target_dev, vocabs.clone()),
        target_test: Dataset::with_vocabs(target_test, vocabs),
        embeddings,
    }
}

/// Tensor check helper: the word table rows of paired source/target words.
pub fn paired_word_rows(vocab: &Vocab, rows: &Mat) -> Vec<(usize, usize)> {
    vocab
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            w.strip_prefix("de_").and_then(|base| vocab.get(base)).map(|s| (s, i))
        })
        .map(|(s, t)| {
            debug_assert_eq!(rows.row(s), rows.row(t));
            (s, t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_have_expected_sizes_and_shared_vocab() {
        let data = generate(1, 12);
        assert_eq!(data.source_train.len(), 4000);
        assert_eq!(data.target_train.len(), 500);
        assert_eq!(data.target_test.len(), 300);
        assert_eq!(data.source_train.vocabs, data.target_test.vocabs);
    }

    #[test]
    fn paired_words_share_embedding_rows() {
        let data = generate(2, 8);
        let vocab = &data.source_train.vocabs.word;
        let pairs = paired_word_rows(vocab, &data.embeddings.rows);
        assert!(pairs.len() > 100, "only {} paired words", pairs.len());
        for (s, t) in pairs {
            assert_eq!(data.embeddings.rows.row(s), data.embeddings.rows.row(t));
        }
    }

    #[test]
    fn target_test_entities_are_unseen_in_target_training() {
        let data = generate(3, 8);
        let train_entities: std::collections::HashSet<&str> = data
            .target_train
            .utterances
            .iter()
            .flat_map(|u| {
                u.tokens.iter().zip(&u.slot_tags).filter(|(_, t)| *t != "O").map(|(w, _)| w.as_str())
            })
            .collect();
        for u in &data.target_test.utterances {
            for (w, t) in u.tokens.iter().zip(&u.slot_tags) {
                if t != "O" {
                    assert!(!train_entities.contains(w.as_str()), "{w} leaked into training");
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7, 8);
        let b = generate(7, 8);
        assert_eq!(a.source_train.utterances, b.source_train.utterances);
        assert_eq!(a.target_test.utterances, b.target_test.utterances);
        assert_eq!(a.embeddings.rows, b.embeddings.rows);
    }
}
