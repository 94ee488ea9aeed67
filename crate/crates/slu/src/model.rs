//! Model assembly: embedder -> encoder -> intent/slot heads over one
//! parameter store, with per-utterance forward and prediction.

use crate::config::{ModelConfig, SlotHeadKind};
use crate::corpus::{EmbeddingMatrix, Utterance, Vocabs};
use crate::gazetteer::GazetteerMatcher;
use crate::numerics::{dropout, Graph, Mode, ParamStore, Var};
use crate::{embedder, encoder, heads};
use crate::{Result, SluError};

/// An utterance with everything precomputed that the forward pass needs:
/// index-mapped labels and (when enabled) gazetteer feature rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tokens: Vec<String>,
    pub tag_ids: Vec<usize>,
    pub intent_id: usize,
    pub gaz: Option<Vec<usize>>,
}

/// Map an utterance onto model vocabularies, running the gazetteer matcher
/// when provided. Unseen tags and intents map to UNK.
pub fn prepare(
    u: &Utterance,
    vocabs: &Vocabs,
    matcher: Option<&GazetteerMatcher>,
) -> Prepared {
    Prepared {
        tokens: u.tokens.clone(),
        tag_ids: u.slot_tags.iter().map(|t| vocabs.tag.lookup(t)).collect(),
        intent_id: vocabs.intent.lookup(&u.intent),
        gaz: matcher.map(|m| m.featurize(&u.tokens)),
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocabs: Vocabs,
    pub num_gaz_types: usize,
    pub store: ParamStore,
}

impl Model {
    /// Build a model with freshly initialized parameters. `pretrained`
    /// overrides the word embedding table when given.
    pub fn new(
        cfg: ModelConfig,
        vocabs: Vocabs,
        num_gaz_types: usize,
        pretrained: Option<&EmbeddingMatrix>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.embedder.use_gazetteer && num_gaz_types == 0 {
            return Err(SluError::InvalidArgument(
                "model: use_gazetteer is set but no gazetteer types were given".into(),
            ));
        }
        let mut store = ParamStore::new(seed);
        embedder::init_params(&mut store, &cfg.embedder, &vocabs, num_gaz_types, pretrained);
        encoder::init_params(&mut store, &cfg.encoder, cfg.embedder.output_dim());
        let d = cfg.encoder.output_dim();
        heads::init_intent_params(&mut store, d, &cfg.heads, vocabs.intent.len());
        heads::init_slot_params(&mut store, d, &cfg.heads, vocabs.tag.len());
        Ok(Model { cfg, vocabs, num_gaz_types, store })
    }

    /// Rebuild a model around an existing parameter store (checkpoint load).
    pub fn from_store(
        cfg: ModelConfig,
        vocabs: Vocabs,
        num_gaz_types: usize,
        store: ParamStore,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Model { cfg, vocabs, num_gaz_types, store })
    }

    /// Contextual token representations for one utterance (T x d).
    pub fn encode_utterance<'g>(
        &self,
        g: &'g Graph,
        p: &Prepared,
        mode: &Mode,
    ) -> Result<Var<'g>> {
        let embedded = embedder::embed_utterance(
            g,
            &self.store,
            &self.cfg.embedder,
            &self.vocabs,
            &p.tokens,
            p.gaz.as_deref(),
        )?;
        let embedded = dropout(embedded, self.cfg.dropout_keep, mode);
        encoder::encode(g, &self.store, &self.cfg.encoder, embedded, mode)
    }

    /// Intent logits (1 x |intents|) and slot logits (T x |tags|).
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        p: &Prepared,
        mode: &Mode,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let reps = self.encode_utterance(g, p, mode)?;
        let keep = self.cfg.dropout_keep;
        let il = heads::intent_logits(g, &self.store, &self.cfg.heads, reps, keep, mode)?;
        let sl = heads::slot_logits(g, &self.store, &self.cfg.heads, reps, keep, mode);
        Ok((il, sl))
    }

    /// Deterministic prediction: argmax intent, Viterbi or per-token argmax
    /// slot tags. `forbidden` constrains CRF decoding (may be empty).
    pub fn predict(
        &self,
        p: &Prepared,
        forbidden: &[(usize, usize)],
    ) -> Result<(usize, Vec<usize>)> {
        let g = Graph::new();
        let (il, sl) = self.forward(&g, p, &Mode::eval())?;
        let intent = argmax(il.value().row(0).iter().copied());
        let tags = match self.cfg.heads.slot_head {
            SlotHeadKind::Crf => {
                let trans = self.store.get("slot.crf.trans");
                heads::crf_viterbi(&sl.value(), trans, forbidden)?.0
            }
            _ => {
                let em = sl.value();
                (0..em.nrows()).map(|t| argmax(em.row(t).iter().copied())).collect()
            }
        };
        Ok((intent, tags))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EncoderKind;
    use crate::corpus::Dataset;

    fn toy_dataset() -> Dataset {
        let utterances = vec![
            Utterance::new(
                vec!["show".into(), "flights".into(), "to".into(), "boston".into()],
                vec!["O".into(), "O".into(), "O".into(), "B-city".into()],
                "flight".into(),
            )
            .unwrap(),
            Utterance::new(
                vec!["fares".into(), "from".into(), "new".into(), "york".into()],
                vec!["O".into(), "O".into(), "B-city".into(), "I-city".into()],
                "airfare".into(),
            )
            .unwrap(),
        ];
        Dataset::build(utterances)
    }

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.embedder.word_dim = 8;
        cfg.embedder.char_dim = 4;
        cfg.embedder.char_windows = vec![2, 3];
        cfg.embedder.char_filters = 3;
        cfg.encoder.kind = EncoderKind::BiRnnHighwayLstm;
        cfg.encoder.depth = 1;
        cfg.encoder.hidden = 5;
        cfg.heads.ffn_hidden = 6;
        cfg
    }

    #[test]
    fn forward_shapes_match_vocabs() {
        let ds = toy_dataset();
        let cfg = tiny_config();
        let model = Model::new(cfg, ds.vocabs.clone(), 0, None, 1).unwrap();
        let p = prepare(&ds.utterances[0], &model.vocabs, None);
        let g = Graph::new();
        let (il, sl) = model.forward(&g, &p, &Mode::eval()).unwrap();
        assert_eq!(il.dim(), (1, model.vocabs.intent.len()));
        assert_eq!(sl.dim(), (4, model.vocabs.tag.len()));
    }

    #[test]
    fn predict_is_deterministic() {
        let ds = toy_dataset();
        let model = Model::new(tiny_config(), ds.vocabs.clone(), 0, None, 7).unwrap();
        let p = prepare(&ds.utterances[1], &model.vocabs, None);
        let a = model.predict(&p, &[]).unwrap();
        let b = model.predict(&p, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_parameters() {
        let ds = toy_dataset();
        let m1 = Model::new(tiny_config(), ds.vocabs.clone(), 0, None, 3).unwrap();
        let m2 = Model::new(tiny_config(), ds.vocabs.clone(), 0, None, 3).unwrap();
        for (name, value) in m1.store.iter() {
            assert_eq!(value, m2.store.get(name), "{name}");
        }
    }

    #[test]
    fn gazetteer_flag_without_types_is_rejected() {
        let ds = toy_dataset();
        let mut cfg = tiny_config();
        cfg.embedder.use_gazetteer = true;
        assert!(Model::new(cfg, ds.vocabs, 0, None, 1).is_err());
    }
}
