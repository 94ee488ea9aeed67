//! Span-level slot F1 (CoNLL-2002 scoring rules), intent accuracy, and
//! aggregated multi-seed evaluation reports.

use serde::{Deserialize, Serialize};

use crate::config::SlotHeadKind;
use crate::corpus::{bio_spans, Dataset};
use crate::gazetteer::GazetteerMatcher;
use crate::model::{prepare, Model};
use crate::{Result, SluError};

/// Span counts plus derived metrics for one evaluation pass.
/// Metrics are fractions in [0, 1]; multiply by 100 for table form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub intent_accuracy: f64,
    pub gold_spans: usize,
    pub pred_spans: usize,
    pub correct_spans: usize,
    pub utterances: usize,
}

impl EvalReport {
    /// One-line human-readable summary, percentages to one decimal.
    pub fn table_row(&self) -> String {
        format!(
            "slot P {:.1} R {:.1} F1 {:.1} | intent acc {:.1} | spans {}/{}/{} over {} utts",
            self.slot_precision * 100.0,
            self.slot_recall * 100.0,
            self.slot_f1 * 100.0,
            self.intent_accuracy * 100.0,
            self.correct_spans,
            self.pred_spans,
            self.gold_spans,
            self.utterances
        )
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Span precision/recall/F1 over per-utterance BIO tag sequences. A
/// predicted span is correct iff start, end and type all match a gold span.
pub fn conll_f1(
    pred: &[Vec<String>],
    gold: &[Vec<String>],
) -> Result<(f64, f64, f64)> {
    let (counts, _) = span_counts(pred, gold)?;
    Ok(counts)
}

fn span_counts(
    pred: &[Vec<String>],
    gold: &[Vec<String>],
) -> Result<((f64, f64, f64), (usize, usize, usize))> {
    if pred.len() != gold.len() {
        return Err(SluError::InvalidArgument(format!(
            "conll_f1: {} predicted utterances vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    let mut correct = 0usize;
    let mut guessed = 0usize;
    let mut total = 0usize;
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(SluError::InvalidArgument(format!(
                "conll_f1: utterance {i}: {} predicted tags vs {} gold",
                p.len(),
                g.len()
            )));
        }
        let ps = bio_spans(p);
        let gs = bio_spans(g);
        correct += ps.iter().filter(|s| gs.contains(s)).count();
        guessed += ps.len();
        total += gs.len();
    }
    let p = if guessed > 0 { correct as f64 / guessed as f64 } else { 0.0 };
    let r = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
    Ok(((p, r, f1(p, r)), (correct, guessed, total)))
}

/// Fraction of exact intent matches.
pub fn intent_accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != golds.len() {
        return Err(SluError::InvalidArgument(format!(
            "intent_accuracy: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Evaluate a model on a dataset: deterministic forward passes, Viterbi
/// decoding when the slot head is a CRF, per-token argmax otherwise.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    matcher: Option<&GazetteerMatcher>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(SluError::InvalidArgument("evaluate: empty dataset".into()));
    }
    let forbidden: Vec<(usize, usize)> = Vec::new();
    let mut pred_tags: Vec<Vec<String>> = Vec::with_capacity(data.len());
    let mut gold_tags: Vec<Vec<String>> = Vec::with_capacity(data.len());
    let mut pred_intents = Vec::with_capacity(data.len());
    let mut gold_intents = Vec::with_capacity(data.len());
    for u in &data.utterances {
        let p = prepare(u, &model.vocabs, matcher);
        let (intent, tags) = model.predict(&p, &forbidden)?;
        pred_intents.push(intent);
        gold_intents.push(p.intent_id);
        pred_tags.push(tags.iter().map(|&t| model.vocabs.tag.word(t).to_string()).collect());
        gold_tags.push(u.slot_tags.clone());
    }
    let ((sp, sr, sf), (correct, guessed, total)) = span_counts(&pred_tags, &gold_tags)?;
    Ok(EvalReport {
        slot_precision: sp,
        slot_recall: sr,
        slot_f1: sf,
        intent_accuracy: intent_accuracy(&pred_intents, &gold_intents)?,
        gold_spans: total,
        pred_spans: guessed,
        correct_spans: correct,
        utterances: data.len(),
    })
}

/// Means over per-seed reports (counts are summed, metrics averaged).
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(SluError::InvalidArgument("aggregate: no reports".into()));
    }
    let n = reports.len() as f64;
    Ok(EvalReport {
        slot_precision: reports.iter().map(|r| r.slot_precision).sum::<f64>() / n,
        slot_recall: reports.iter().map(|r| r.slot_recall).sum::<f64>() / n,
        slot_f1: reports.iter().map(|r| r.slot_f1).sum::<f64>() / n,
        intent_accuracy: reports.iter().map(|r| r.intent_accuracy).sum::<f64>() / n,
        gold_spans: reports.iter().map(|r| r.gold_spans).sum(),
        pred_spans: reports.iter().map(|r| r.pred_spans).sum(),
        correct_spans: reports.iter().map(|r| r.correct_spans).sum(),
        utterances: reports.iter().map(|r| r.utterances).sum(),
    })
}

/// Decoding uses Viterbi only for CRF heads; exposed for CLI messaging.
pub fn decoder_name(kind: SlotHeadKind) -> &'static str {
    match kind {
        SlotHeadKind::Crf => "viterbi",
        _ => "argmax",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = vec![tags(&["B-city", "I-city", "O"])];
        let (p, r, f) = conll_f1(&gold, &gold).unwrap();
        assert_eq!((p, r, f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions_gives_zero_by_convention() {
        let pred = vec![tags(&["O", "O", "O"])];
        let gold = vec![tags(&["B-city", "I-city", "O"])];
        let (p, r, f) = conll_f1(&pred, &gold).unwrap();
        assert_eq!((p, r, f), (0.0, 0.0, 0.0));
    }

    #[test]
    fn boundary_and_type_errors() {
        // Utterance 1: correct span. Utterance 2: boundary error.
        // Utterance 3: type error.
        let gold = vec![
            tags(&["B-city", "O"]),
            tags(&["B-city", "I-city", "O"]),
            tags(&["B-time", "O"]),
        ];
        let pred = vec![
            tags(&["B-city", "O"]),
            tags(&["B-city", "O", "O"]),
            tags(&["B-city", "O"]),
        ];
        let (p, r, f) = conll_f1(&pred, &gold).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        assert!((r - 1.0 / 3.0).abs() < 1e-12);
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_names_the_utterance() {
        let pred = vec![tags(&["O"]), tags(&["O", "O"])];
        let gold = vec![tags(&["O"]), tags(&["O"])];
        let err = conll_f1(&pred, &gold).unwrap_err();
        assert!(err.to_string().contains("utterance 1"), "{err}");
    }

    #[test]
    fn reorder_invariance() {
        let gold = vec![
            tags(&["B-city", "O"]),
            tags(&["B-time", "I-time"]),
            tags(&["O", "B-city", "I-city"]),
        ];
        let pred = vec![
            tags(&["B-city", "O"]),
            tags(&["O", "I-time"]),
            tags(&["O", "B-city", "O"]),
        ];
        let base = conll_f1(&pred, &gold).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..3).collect();
            order.shuffle(&mut rng);
            let p2: Vec<_> = order.iter().map(|&i| pred[i].clone()).collect();
            let g2: Vec<_> = order.iter().map(|&i| gold[i].clone()).collect();
            assert_eq!(conll_f1(&p2, &g2).unwrap(), base);
        }
    }

    #[test]
    fn adding_correct_span_never_decreases_f1() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let kinds = ["O", "B-a", "I-a", "B-b", "I-b"];
        for _ in 0..50 {
            let len = 1 + (rand::Rng::gen_range(&mut rng, 0..8) as usize);
            let gold: Vec<Vec<String>> = vec![(0..len)
                .map(|_| kinds[rand::Rng::gen_range(&mut rng, 0..kinds.len())].to_string())
                .collect()];
            let pred: Vec<Vec<String>> = vec![(0..len)
                .map(|_| kinds[rand::Rng::gen_range(&mut rng, 0..kinds.len())].to_string())
                .collect()];
            let (_, _, f_before) = conll_f1(&pred, &gold).unwrap();
            let mut pred2 = pred.clone();
            let mut gold2 = gold.clone();
            let extra = tags(&["B-c", "I-c"]);
            pred2.push(extra.clone());
            gold2.push(extra);
            let (_, _, f_after) = conll_f1(&pred2, &gold2).unwrap();
            assert!(f_after >= f_before - 1e-12);
        }
    }

    #[test]
    fn intent_accuracy_basics() {
        assert_eq!(intent_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(intent_accuracy(&[1, 2, 3], &[4, 5, 6]).unwrap(), 0.0);
        let preds = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        let golds = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        assert!((intent_accuracy(&preds, &golds).unwrap() - 0.7).abs() < 1e-12);
        assert!(intent_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn aggregate_means_per_seed_values() {
        let mk = |f1: f64, acc: f64| EvalReport {
            slot_precision: f1,
            slot_recall: f1,
            slot_f1: f1,
            intent_accuracy: acc,
            gold_spans: 10,
            pred_spans: 9,
            correct_spans: 8,
            utterances: 5,
        };
        let agg = aggregate(&[mk(0.8, 0.9), mk(0.6, 0.7)]).unwrap();
        assert!((agg.slot_f1 - 0.7).abs() < 1e-12);
        assert!((agg.intent_accuracy - 0.8).abs() < 1e-12);
        assert_eq!(agg.utterances, 10);
    }

    #[test]
    fn frozen_regression_corpus() {
        #[derive(serde::Deserialize)]
        struct Case {
            pred: Vec<Vec<String>>,
            gold: Vec<Vec<String>>,
            precision: f64,
            recall: f64,
            f1: f64,
        }
        let raw = include_str!("../tests/data/conll_regression.json");
        let cases: Vec<Case> = serde_json::from_str(raw).unwrap();
        assert_eq!(cases.len(), 50);
        for (i, c) in cases.iter().enumerate() {
            let (p, r, f) = conll_f1(&c.pred, &c.gold).unwrap();
            assert!((p - c.precision).abs() < 1e-9, "case {i} precision");
            assert!((r - c.recall).abs() < 1e-9, "case {i} recall");
            assert!((f - c.f1).abs() < 1e-9, "case {i} f1");
        }
    }
}
