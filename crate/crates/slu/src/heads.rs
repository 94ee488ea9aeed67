//! Intent and slot heads: attention pooling + FFN + softmax for intents,
//! per-token FFN + softmax or linear-chain CRF for slots.

use crate::attention::{init_pool_params, multidim_pool};
use crate::config::HeadConfig;
use crate::numerics::{
    cross_entropy_smoothed, dropout, mean_of, sum_of, Graph, Init, Mat, Mode, ParamStore, Var,
};
use crate::{Result, SluError};

/// Register intent head parameters: pooling network, FFN stack and the
/// output projection to the intent vocabulary.
pub fn init_intent_params(store: &mut ParamStore, d: usize, cfg: &HeadConfig, n_intents: usize) {
    init_pool_params(store, "intent.attention", d);
    init_ffn(store, "intent.ffn", d, cfg);
    store.define("intent.out.w", cfg.ffn_hidden, n_intents, Init::Glorot);
    store.define("intent.out.b", 1, n_intents, Init::Zeros);
}

/// Register slot head parameters. With a CRF slot head this also defines
/// the (K+2)x(K+2) transition matrix (start state = K, stop state = K+1).
pub fn init_slot_params(store: &mut ParamStore, d: usize, cfg: &HeadConfig, n_tags: usize) {
    init_ffn(store, "slot.ffn", d, cfg);
    store.define("slot.out.w", cfg.ffn_hidden, n_tags, Init::Glorot);
    store.define("slot.out.b", 1, n_tags, Init::Zeros);
    if cfg.slot_head == crate::config::SlotHeadKind::Crf {
        store.define("slot.crf.trans", n_tags + 2, n_tags + 2, Init::Zeros);
    }
}

fn init_ffn(store: &mut ParamStore, prefix: &str, d: usize, cfg: &HeadConfig) {
    let mut width = d;
    for l in 0..cfg.ffn_layers {
        store.define(&format!("{prefix}.l{l}.w"), width, cfg.ffn_hidden, Init::Glorot);
        store.define(&format!("{prefix}.l{l}.b"), 1, cfg.ffn_hidden, Init::Zeros);
        width = cfg.ffn_hidden;
    }
}

fn ffn<'g>(
    g: &'g Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &HeadConfig,
    x: Var<'g>,
    keep: f64,
    mode: &Mode,
) -> Var<'g> {
    let mut h = x;
    for l in 0..cfg.ffn_layers {
        let w = g.param(store, &format!("{prefix}.l{l}.w"));
        let b = g.param(store, &format!("{prefix}.l{l}.b"));
        h = dropout(h.matmul(w).add_row(b).relu(), keep, mode);
    }
    h
}

/// Intent logits for one utterance: pool the T x d encoder output into a
/// single vector, then FFN + output projection. Returns a 1 x |intents| row.
pub fn intent_logits<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &HeadConfig,
    reps: Var<'g>,
    keep: f64,
    mode: &Mode,
) -> Result<Var<'g>> {
    let pooled = multidim_pool(g, store, "intent.attention", reps)?;
    let h = ffn(g, store, "intent.ffn", cfg, pooled, keep, mode);
    let w = g.param(store, "intent.out.w");
    let b = g.param(store, "intent.out.b");
    Ok(h.matmul(w).add_row(b))
}

/// Intent distribution (softmax over the logits row).
pub fn intent_probs<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &HeadConfig,
    reps: Var<'g>,
    keep: f64,
    mode: &Mode,
) -> Result<Var<'g>> {
    Ok(intent_logits(g, store, cfg, reps, keep, mode)?.softmax_rows())
}

/// Smoothed cross-entropy loss of the intent logits against the gold label.
pub fn intent_loss<'g>(logits: Var<'g>, gold: usize, epsilon: f64) -> Result<Var<'g>> {
    cross_entropy_smoothed(logits, gold, epsilon)
}

/// Per-token slot logits: T x d encoder output -> T x |tags|.
pub fn slot_logits<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &HeadConfig,
    reps: Var<'g>,
    keep: f64,
    mode: &Mode,
) -> Var<'g> {
    let h = ffn(g, store, "slot.ffn", cfg, reps, keep, mode);
    let w = g.param(store, "slot.out.w");
    let b = g.param(store, "slot.out.b");
    h.matmul(w).add_row(b)
}

/// Mean over tokens of the (optionally smoothed) per-token cross-entropy.
pub fn slot_softmax_loss<'g>(logits: Var<'g>, tags: &[usize], epsilon: f64) -> Result<Var<'g>> {
    if tags.len() != logits.rows() {
        return Err(SluError::InvalidArgument(format!(
            "slot loss: {} tags for {} tokens",
            tags.len(),
            logits.rows()
        )));
    }
    let mut losses = Vec::with_capacity(tags.len());
    for (t, &tag) in tags.iter().enumerate() {
        losses.push(cross_entropy_smoothed(logits.row(t), tag, epsilon)?);
    }
    Ok(mean_of(&losses))
}

fn check_crf_shapes(t_len: usize, k: usize, trans_dim: (usize, usize)) -> Result<()> {
    if t_len == 0 || k == 0 {
        return Err(SluError::InvalidArgument("crf: empty emission matrix".into()));
    }
    if trans_dim != (k + 2, k + 2) {
        return Err(SluError::InvalidArgument(format!(
            "crf: transitions are {}x{}, expected {}x{}",
            trans_dim.0,
            trans_dim.1,
            k + 2,
            k + 2
        )));
    }
    Ok(())
}

/// Negative log-likelihood of a tag sequence under a linear-chain CRF.
///
/// `emissions` is T x K, `trans` is (K+2) x (K+2) with the start state at
/// row K and the stop state at column K+1. Differentiable in both.
pub fn crf_nll<'g>(emissions: Var<'g>, tags: &[usize], trans: Var<'g>) -> Result<Var<'g>> {
    let (t_len, k) = emissions.dim();
    check_crf_shapes(t_len, k, trans.dim())?;
    if tags.len() != t_len {
        return Err(SluError::InvalidArgument(format!(
            "crf: {} tags for {} tokens",
            tags.len(),
            t_len
        )));
    }
    for &tag in tags {
        if tag >= k {
            return Err(SluError::InvalidArgument(format!("crf: tag {tag} out of range {k}")));
        }
    }
    let (start, stop) = (k, k + 1);

    // Score of the gold path: start transition, emissions, pairwise
    // transitions, stop transition.
    let mut parts = vec![trans.row(start).slice_cols(tags[0], tags[0] + 1)];
    for (t, &tag) in tags.iter().enumerate() {
        parts.push(emissions.row(t).slice_cols(tag, tag + 1));
        if t + 1 < t_len {
            parts.push(trans.row(tag).slice_cols(tags[t + 1], tags[t + 1] + 1));
        }
    }
    parts.push(trans.row(tags[t_len - 1]).slice_cols(stop, stop + 1));
    let gold_score = sum_of(&parts);

    // log Z by the forward algorithm in log space.
    let trans_kk = trans.slice_rows(0, k).slice_cols(0, k);
    let mut alpha = emissions.row(0).add(trans.row(start).slice_cols(0, k));
    for t in 1..t_len {
        // scores[i][j] = alpha[i] + trans[i][j]; reduce over i.
        let scores = trans_kk.add_col(alpha.transpose());
        alpha = scores.logsumexp_axis0().add(emissions.row(t));
    }
    let to_stop = trans.slice_rows(0, k).slice_cols(stop, stop + 1).transpose();
    let log_z = alpha.add(to_stop).transpose().logsumexp_axis0();
    Ok(log_z.sub(gold_score))
}

/// Plain-f64 score of a tag sequence (same score function as `crf_nll`).
pub fn crf_score(emissions: &Mat, trans: &Mat, tags: &[usize]) -> f64 {
    let (t_len, k) = emissions.dim();
    assert_eq!(tags.len(), t_len, "crf_score: tag / token count mismatch");
    let (start, stop) = (k, k + 1);
    let mut score = trans[(start, tags[0])] + trans[(tags[t_len - 1], stop)];
    for (t, &tag) in tags.iter().enumerate() {
        score += emissions[(t, tag)];
        if t + 1 < t_len {
            score += trans[(tag, tags[t + 1])];
        }
    }
    score
}

/// Viterbi decoding. `forbidden` lists (from, to) tag pairs that may not
/// occur in the decoded sequence (used for the optional O -> I-X decode
/// constraint); pass an empty slice for unconstrained decoding.
pub fn crf_viterbi(
    emissions: &Mat,
    trans: &Mat,
    forbidden: &[(usize, usize)],
) -> Result<(Vec<usize>, f64)> {
    let (t_len, k) = emissions.dim();
    check_crf_shapes(t_len, k, trans.dim())?;
    let (start, stop) = (k, k + 1);
    let mut delta: Vec<f64> = (0..k).map(|j| trans[(start, j)] + emissions[(0, j)]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; k];
        let mut ptr = vec![0usize; k];
        for j in 0..k {
            for i in 0..k {
                if forbidden.contains(&(i, j)) {
                    continue;
                }
                let s = delta[i] + trans[(i, j)];
                if s > next[j] {
                    next[j] = s;
                    ptr[j] = i;
                }
            }
            next[j] += emissions[(t, j)];
        }
        delta = next;
        back.push(ptr);
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (j, &d) in delta.iter().enumerate() {
        let s = d + trans[(j, stop)];
        if s > best_score {
            best_score = s;
            best = j;
        }
    }
    let mut path = vec![best];
    for ptr in back.iter().rev() {
        path.push(ptr[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((path, best_score))
}

/// Tag index pairs (O, I-X) for every I-X tag, for constrained decoding.
pub fn o_to_inside_pairs<I, S>(tags: I) -> Vec<(usize, usize)>
where
    I: IntoIterator<Item = S> + Clone,
    S: AsRef<str>,
{
    let names: Vec<String> = tags.into_iter().map(|s| s.as_ref().to_string()).collect();
    let o = match names.iter().position(|n| n == "O") {
        Some(i) => i,
        None => return Vec::new(),
    };
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("I-"))
        .map(|(i, _)| (o, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SlotHeadKind;
    use crate::numerics::{grad_check, softmax};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
    }

    fn all_sequences(t_len: usize, k: usize) -> Vec<Vec<usize>> {
        let mut seqs = vec![Vec::new()];
        for _ in 0..t_len {
            let mut next = Vec::new();
            for s in &seqs {
                for tag in 0..k {
                    let mut s2 = s.clone();
                    s2.push(tag);
                    next.push(s2);
                }
            }
            seqs = next;
        }
        seqs
    }

    fn brute_log_z(em: &Mat, trans: &Mat) -> f64 {
        let (t_len, k) = em.dim();
        let scores: Vec<f64> =
            all_sequences(t_len, k).iter().map(|s| crf_score(em, trans, s)).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    fn head_cfg(kind: SlotHeadKind) -> HeadConfig {
        HeadConfig { ffn_hidden: 7, ffn_layers: 2, slot_head: kind, label_smoothing: 0.1 }
    }

    #[test]
    fn pool_single_token_is_identity() {
        let mut store = ParamStore::new(3);
        init_pool_params(&mut store, "intent.attention", 4);
        let g = Graph::new();
        let reps = g.constant(Mat::from_shape_vec((1, 4), vec![0.3, -1.2, 2.0, 0.7]).unwrap());
        let out = multidim_pool(&g, &store, "intent.attention", reps).unwrap();
        let v = out.value();
        for (a, b) in v.iter().zip([0.3, -1.2, 2.0, 0.7]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_output_is_convex_combination_per_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new(9);
        init_pool_params(&mut store, "intent.attention", 5);
        for _ in 0..50 {
            let t_len = rng.gen_range(1..=6);
            let x = rand_mat(&mut rng, t_len, 5);
            let g = Graph::new();
            let out = multidim_pool(&g, &store, "intent.attention", g.constant(x.clone())).unwrap();
            let v = out.value();
            for j in 0..5 {
                let col = x.column(j);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(v[(0, j)] >= lo - 1e-9 && v[(0, j)] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn intent_probs_sum_to_one() {
        let cfg = head_cfg(SlotHeadKind::SoftmaxSmoothing);
        let mut store = ParamStore::new(5);
        init_pool_params(&mut store, "intent.attention", 6);
        init_intent_params_ffn_only(&mut store, 6, &cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::new();
        let reps = g.constant(rand_mat(&mut rng, 5, 6));
        let probs = intent_probs(&g, &store, &cfg, reps, 1.0, &Mode::eval()).unwrap();
        let s: f64 = probs.value().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    // init_intent_params also registers the pool; this helper avoids the
    // double-define in tests that want custom pool setup.
    fn init_intent_params_ffn_only(
        store: &mut ParamStore,
        d: usize,
        cfg: &HeadConfig,
        n_intents: usize,
    ) {
        super::init_ffn(store, "intent.ffn", d, cfg);
        store.define("intent.out.w", cfg.ffn_hidden, n_intents, Init::Glorot);
        store.define("intent.out.b", 1, n_intents, Init::Zeros);
    }

    #[test]
    fn single_intent_vocab_gives_probability_one() {
        let cfg = head_cfg(SlotHeadKind::Softmax);
        let mut store = ParamStore::new(5);
        init_intent_params(&mut store, 4, &cfg, 1);
        let g = Graph::new();
        let reps = g.constant(Mat::from_elem((3, 4), 0.5));
        let probs = intent_probs(&g, &store, &cfg, reps, 1.0, &Mode::eval()).unwrap();
        assert_eq!(probs.dim(), (1, 1));
        assert!((probs.value()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intent_loss_matches_closed_form() {
        let g = Graph::new();
        let logits_v = vec![0.4, -1.1, 2.3];
        let logits = g.constant(Mat::from_shape_vec((1, 3), logits_v.clone()).unwrap());
        let loss = intent_loss(logits, 2, 0.1).unwrap().item();
        let p = softmax(&logits_v).unwrap();
        let k = 3.0;
        let expected: f64 = (0..3)
            .map(|j| {
                let w = if j == 2 { 1.0 - 0.1 + 0.1 / k } else { 0.1 / k };
                -w * p[j].ln()
            })
            .sum();
        assert!((loss - expected).abs() < 1e-10);
    }

    #[test]
    fn slot_rows_sum_to_one_and_plain_ce_matches() {
        let cfg = head_cfg(SlotHeadKind::Softmax);
        let mut store = ParamStore::new(17);
        init_slot_params(&mut store, 5, &cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Graph::new();
        let reps = g.constant(rand_mat(&mut rng, 6, 5));
        let logits = slot_logits(&g, &store, &cfg, reps, 1.0, &Mode::eval());
        let probs = logits.softmax_rows().value().to_owned();
        for t in 0..6 {
            let s: f64 = probs.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let tags = [0usize, 3, 1, 1, 2, 0];
        let loss = slot_softmax_loss(logits, &tags, 0.0).unwrap().item();
        let manual: f64 =
            tags.iter().enumerate().map(|(t, &tag)| -probs[(t, tag)].ln()).sum::<f64>() / 6.0;
        assert!((loss - manual).abs() < 1e-10);
    }

    #[test]
    fn smoothing_increases_loss_on_confident_prediction() {
        let g = Graph::new();
        let logits = g.constant(Mat::from_shape_vec((1, 4), vec![5.0, 0.0, 0.0, 0.0]).unwrap());
        let plain = intent_loss(logits, 0, 0.0).unwrap().item();
        let smoothed = intent_loss(logits, 0, 0.1).unwrap().item();
        assert!(smoothed > plain);
    }

    #[test]
    fn crf_single_token_zero_transitions_is_softmax_ce() {
        let g = Graph::new();
        let em_v = vec![0.7, -0.2, 1.4];
        let em = g.constant(Mat::from_shape_vec((1, 3), em_v.clone()).unwrap());
        let trans = g.constant(Mat::zeros((5, 5)));
        let nll = crf_nll(em, &[1], trans).unwrap().item();
        let p = softmax(&em_v).unwrap();
        assert!((nll - (-p[1].ln())).abs() < 1e-10);
    }

    #[test]
    fn crf_uniform_model_nll_is_t_log_k() {
        let g = Graph::new();
        let em = g.constant(Mat::zeros((4, 3)));
        let trans = g.constant(Mat::zeros((5, 5)));
        let nll = crf_nll(em, &[0, 2, 1, 0], trans).unwrap().item();
        assert!((nll - 4.0 * 3.0f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn crf_log_z_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let t_len = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=4);
            let em = rand_mat(&mut rng, t_len, k);
            let trans = rand_mat(&mut rng, k + 2, k + 2);
            let tags: Vec<usize> = (0..t_len).map(|_| rng.gen_range(0..k)).collect();
            let g = Graph::new();
            let nll = crf_nll(g.constant(em.clone()), &tags, g.constant(trans.clone()))
                .unwrap()
                .item();
            let log_z = nll + crf_score(&em, &trans, &tags);
            assert!((log_z - brute_log_z(&em, &trans)).abs() < 1e-6);
            assert!(nll >= -1e-9);
            // The CRF is a proper distribution over tag sequences.
            let total: f64 = all_sequences(t_len, k)
                .iter()
                .map(|s| (crf_score(&em, &trans, s) - log_z).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn viterbi_matches_brute_force_and_beats_gold() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..40 {
            let t_len = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=4);
            let em = rand_mat(&mut rng, t_len, k);
            let trans = rand_mat(&mut rng, k + 2, k + 2);
            let (path, score) = crf_viterbi(&em, &trans, &[]).unwrap();
            assert!((score - crf_score(&em, &trans, &path)).abs() < 1e-12);
            let best = all_sequences(t_len, k)
                .into_iter()
                .max_by(|a, b| {
                    crf_score(&em, &trans, a).total_cmp(&crf_score(&em, &trans, b))
                })
                .unwrap();
            assert_eq!(path, best);
            let gold: Vec<usize> = (0..t_len).map(|_| rng.gen_range(0..k)).collect();
            assert!(score >= crf_score(&em, &trans, &gold) - 1e-12);
        }
    }

    #[test]
    fn viterbi_zero_transitions_is_per_token_argmax() {
        let em = Mat::from_shape_vec((3, 3), vec![1.0, 0.0, 0.2, 0.1, 2.0, 0.3, 0.5, 0.1, 3.0])
            .unwrap();
        let trans = Mat::zeros((5, 5));
        let (path, _) = crf_viterbi(&em, &trans, &[]).unwrap();
        assert_eq!(path, vec![0, 1, 2]);
    }

    #[test]
    fn forbidden_pairs_block_o_to_inside() {
        // Tags: 0=O, 1=B-X, 2=I-X. Emissions pull toward O then I-X.
        let em =
            Mat::from_shape_vec((2, 3), vec![5.0, 0.0, 0.0, 0.0, 0.1, 5.0]).unwrap();
        let trans = Mat::zeros((5, 5));
        let (free, _) = crf_viterbi(&em, &trans, &[]).unwrap();
        assert_eq!(free, vec![0, 2]);
        let pairs = o_to_inside_pairs(["O", "B-X", "I-X"]);
        assert_eq!(pairs, vec![(0, 2)]);
        let (constrained, _) = crf_viterbi(&em, &trans, &pairs).unwrap();
        assert_ne!(constrained[0] == 0, constrained[1] == 2);
    }

    #[test]
    fn crf_rejects_bad_shapes() {
        let g = Graph::new();
        let em = g.constant(Mat::zeros((2, 3)));
        let trans = g.constant(Mat::zeros((4, 4)));
        assert!(crf_nll(em, &[0, 1], trans).is_err());
        let em = g.constant(Mat::zeros((2, 3)));
        let trans = g.constant(Mat::zeros((5, 5)));
        assert!(crf_nll(em, &[0], trans).is_err());
        let em = g.constant(Mat::zeros((2, 3)));
        let trans = g.constant(Mat::zeros((5, 5)));
        assert!(crf_nll(em, &[0, 3], trans).is_err());
    }

    #[test]
    fn grad_check_full_head_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cfg = head_cfg(SlotHeadKind::Crf);
        let mut store = ParamStore::new(31);
        init_intent_params(&mut store, 4, &cfg, 3);
        init_slot_params(&mut store, 4, &cfg, 3);
        let reps_v = rand_mat(&mut rng, 5, 4);
        let tags = [0usize, 2, 1, 1, 0];
        let report = grad_check(
            &mut store,
            &|g, store| {
                let reps = g.constant(reps_v.clone());
                let il = intent_logits(g, store, &cfg, reps, 1.0, &Mode::eval())?;
                let intent = intent_loss(il, 1, 0.1)?;
                let reps = g.constant(reps_v.clone());
                let em = slot_logits(g, store, &cfg, reps, 1.0, &Mode::eval());
                let slot = crf_nll(em, &tags, g.param(store, "slot.crf.trans"))?;
                Ok(intent.scale(0.2).add(slot.scale(0.8)))
            },
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-6,
            "worst {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }
}
