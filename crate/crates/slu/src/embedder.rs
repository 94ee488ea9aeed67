//! Input embedding: one fixed-width vector per token, the concatenation of
//! word embedding, char-CNN embedding and gazetteer embedding, each optional.

use crate::config::EmbedderConfig;
use crate::corpus::{EmbeddingMatrix, Vocabs};
use crate::error::{Result, SluError};
use crate::numerics::{concat_cols, concat_rows, conv1d_same, Graph, Init, ParamStore, Var};

/// Register every embedder parameter. `pretrained` overrides the word table.
pub fn init_params(
    store: &mut ParamStore,
    cfg: &EmbedderConfig,
    vocabs: &Vocabs,
    num_gaz_types: usize,
    pretrained: Option<&EmbeddingMatrix>,
) {
    if cfg.use_word {
        match pretrained {
            Some(emb) => {
                assert_eq!(emb.dim, cfg.word_dim, "pretrained dim != word_dim");
                assert_eq!(emb.rows.dim().0, vocabs.word.len());
                store.define_with("embed.word", emb.rows.clone());
            }
            None => store.define("embed.word", vocabs.word.len(), cfg.word_dim, Init::Normal(0.1)),
        }
    }
    if cfg.use_char {
        store.define("embed.char.table", vocabs.char.len(), cfg.char_dim, Init::Normal(0.1));
        for &w in &cfg.char_windows {
            store.define(
                &format!("embed.char.conv{w}.kernel"),
                w * cfg.char_dim,
                cfg.char_filters,
                Init::Glorot,
            );
            store.define(&format!("embed.char.conv{w}.bias"), 1, cfg.char_filters, Init::Zeros);
        }
    }
    if cfg.use_gazetteer {
        // Row 0 is the learned "no match" embedding.
        store.define("embed.gaz.table", 2 * num_gaz_types + 1, cfg.gaz_dim, Init::Normal(0.1));
    }
}

/// Char-CNN embedding for one token: embed characters, run each window-size
/// convolution, ReLU, max-pool over positions, concatenate.
pub fn char_cnn<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EmbedderConfig,
    vocabs: &Vocabs,
    token: &str,
) -> Var<'g> {
    let ids: Vec<usize> = token
        .chars()
        .take(cfg.max_token_chars)
        .map(|c| vocabs.char.lookup(&c.to_string()))
        .collect();
    debug_assert!(!ids.is_empty(), "char_cnn on empty token");
    let chars = g.param(store, "embed.char.table").gather_rows(&ids);
    let pooled: Vec<Var<'g>> = cfg
        .char_windows
        .iter()
        .map(|&w| {
            let kernel = g.param(store, &format!("embed.char.conv{w}.kernel"));
            let bias = g.param(store, &format!("embed.char.conv{w}.bias"));
            conv1d_same(chars, kernel, bias, w).relu().max_axis0()
        })
        .collect();
    concat_cols(&pooled)
}

/// Embed a whole utterance: T x output_dim, components concatenated in the
/// fixed order word ‖ char ‖ gazetteer.
pub fn embed_utterance<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EmbedderConfig,
    vocabs: &Vocabs,
    tokens: &[String],
    gaz_features: Option<&[usize]>,
) -> Result<Var<'g>> {
    if tokens.is_empty() {
        return Err(SluError::InvalidArgument("embed_utterance: no tokens".into()));
    }
    if cfg.use_gazetteer != gaz_features.is_some() {
        return Err(SluError::InvalidArgument(
            "gazetteer features must be provided iff use_gazetteer".into(),
        ));
    }
    let mut parts: Vec<Var<'g>> = Vec::new();
    if cfg.use_word {
        let ids: Vec<usize> = tokens
            .iter()
            .map(|t| vocabs.word.lookup(&t.to_lowercase()))
            .collect();
        parts.push(g.param(store, "embed.word").gather_rows(&ids));
    }
    if cfg.use_char {
        let rows: Vec<Var<'g>> = tokens
            .iter()
            .map(|t| char_cnn(g, store, cfg, vocabs, t))
            .collect();
        parts.push(concat_rows(&rows));
    }
    if let Some(features) = gaz_features {
        if features.len() != tokens.len() {
            return Err(SluError::InvalidArgument(format!(
                "gazetteer features length {} != tokens {}",
                features.len(),
                tokens.len()
            )));
        }
        let table = g.param(store, "embed.gaz.table");
        let n_rows = table.rows();
        for &f in features {
            if f >= n_rows {
                return Err(SluError::InvalidArgument(format!(
                    "gazetteer feature {f} exceeds table size {n_rows}"
                )));
            }
        }
        parts.push(table.gather_rows(features));
    }
    Ok(concat_cols(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_utterances, Dataset};
    use crate::numerics::grad_check;

    fn toy_setup(cfg: &EmbedderConfig) -> (Vocabs, ParamStore) {
        let text = "# intent: a\nwhere\tO\nis\tO\nMCO\tB-airport_code\n\n# intent: b\nfly\tO\nboston\tB-city\n";
        let ds = Dataset::build(parse_utterances(text, "mem").unwrap());
        let mut store = ParamStore::new(9);
        init_params(&mut store, cfg, &ds.vocabs, 2, None);
        (ds.vocabs, store)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn char_cnn_output_width_is_windows_times_filters() {
        let cfg = EmbedderConfig::default();
        let (vocabs, store) = toy_setup(&cfg);
        let g = Graph::new();
        let v = char_cnn(&g, &store, &cfg, &vocabs, "boston");
        assert_eq!(v.dim(), (1, 150));
        // 1-char token exercises the zero-padding path.
        let v = char_cnn(&g, &store, &cfg, &vocabs, "a");
        assert_eq!(v.dim(), (1, 150));
        assert!(v.value().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn char_cnn_is_deterministic_and_discriminative() {
        let cfg = EmbedderConfig::default();
        let (vocabs, store) = toy_setup(&cfg);
        let g = Graph::new();
        let a1 = char_cnn(&g, &store, &cfg, &vocabs, "boston");
        let a2 = char_cnn(&g, &store, &cfg, &vocabs, "boston");
        let b = char_cnn(&g, &store, &cfg, &vocabs, "fly");
        assert_eq!(*a1.value(), *a2.value());
        assert_ne!(*a1.value(), *b.value());
    }

    #[test]
    fn output_dims_match_config_arithmetic() {
        let mut cfg = EmbedderConfig::default();
        cfg.use_gazetteer = false;
        let (vocabs, store) = toy_setup(&cfg);
        let g = Graph::new();
        let out = embed_utterance(&g, &store, &cfg, &vocabs, &toks("where is MCO"), None).unwrap();
        assert_eq!(out.dim(), (3, 250));

        let mut cfg = EmbedderConfig::default();
        cfg.use_gazetteer = true;
        let (vocabs, store) = toy_setup(&cfg);
        let g = Graph::new();
        let out =
            embed_utterance(&g, &store, &cfg, &vocabs, &toks("where is MCO"), Some(&[0, 1, 2]))
                .unwrap();
        assert_eq!(out.dim(), (3, 300));
    }

    #[test]
    fn word_only_equals_embedding_row() {
        let mut cfg = EmbedderConfig::default();
        cfg.use_char = false;
        let (vocabs, store) = toy_setup(&cfg);
        let g = Graph::new();
        let out = embed_utterance(&g, &store, &cfg, &vocabs, &toks("boston"), None).unwrap();
        let row = store.get("embed.word");
        let idx = vocabs.word.get("boston").unwrap();
        assert_eq!(out.value().row(0), row.row(idx));
    }

    #[test]
    fn unknown_gaz_feature_rejected() {
        let mut cfg = EmbedderConfig::default();
        cfg.use_gazetteer = true;
        let (vocabs, store) = toy_setup(&cfg);
        let g = Graph::new();
        // 2 types -> max feature 4
        let err = embed_utterance(&g, &store, &cfg, &vocabs, &toks("fly"), Some(&[5]));
        assert!(err.is_err());
    }

    #[test]
    fn disabling_a_component_leaves_other_slices_identical() {
        let mut full = EmbedderConfig::default();
        full.use_gazetteer = true;
        let (vocabs, store_full) = toy_setup(&full);
        let mut word_char = EmbedderConfig::default();
        word_char.use_gazetteer = false;
        // Same seed: the shared tables are identical by name-keyed init.
        let mut store_wc = ParamStore::new(9);
        init_params(&mut store_wc, &word_char, &vocabs, 2, None);

        let g = Graph::new();
        let a = embed_utterance(&g, &store_full, &full, &vocabs, &toks("fly boston"), Some(&[0, 1]))
            .unwrap();
        let b = embed_utterance(&g, &store_wc, &word_char, &vocabs, &toks("fly boston"), None)
            .unwrap();
        let av = a.value();
        let bv = b.value();
        assert_eq!(av.slice(ndarray::s![.., ..250]), bv.view());
    }

    #[test]
    fn gradients_flow_to_word_and_char_tables() {
        let mut cfg = EmbedderConfig::default();
        cfg.char_windows = vec![2, 3];
        cfg.char_filters = 4;
        cfg.char_dim = 3;
        cfg.word_dim = 5;
        let text = "# intent: a\nfly\tO\nboston\tB-city\n";
        let ds = Dataset::build(parse_utterances(text, "mem").unwrap());
        let mut store = ParamStore::new(1);
        init_params(&mut store, &cfg, &ds.vocabs, 0, None);
        let g = Graph::new();
        let out = embed_utterance(&g, &store, &cfg, &ds.vocabs, &toks("fly boston"), None).unwrap();
        let loss = out.tanh().sum_all();
        g.backward(loss).unwrap();
        let grads = g.param_grads(&store);
        let word_grad: f64 = grads
            .iter()
            .find(|(n, _)| n == "embed.word")
            .map(|(_, g)| g.iter().map(|v| v.abs()).sum())
            .unwrap();
        let char_grad: f64 = grads
            .iter()
            .find(|(n, _)| n == "embed.char.table")
            .map(|(_, g)| g.iter().map(|v| v.abs()).sum())
            .unwrap();
        assert!(word_grad > 0.0);
        assert!(char_grad > 0.0);
    }

    #[test]
    fn embedder_grad_check() {
        let mut cfg = EmbedderConfig::default();
        cfg.char_windows = vec![2, 3];
        cfg.char_filters = 3;
        cfg.char_dim = 2;
        cfg.word_dim = 4;
        cfg.use_gazetteer = true;
        cfg.gaz_dim = 3;
        let text = "# intent: a\nfly\tO\nboston\tB-city\n";
        let ds = Dataset::build(parse_utterances(text, "mem").unwrap());
        let mut store = ParamStore::new(5);
        init_params(&mut store, &cfg, &ds.vocabs, 1, None);
        let tokens = toks("fly boston");
        let report = grad_check(
            &mut store,
            &|g, s| {
                let out = embed_utterance(g, s, &cfg, &ds.vocabs, &tokens, Some(&[0, 1]))?;
                Ok(out.tanh().sum_all())
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-7, "err {}", report.max_rel_err);
    }
}
