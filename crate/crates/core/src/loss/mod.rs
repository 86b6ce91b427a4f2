//! Training objectives: demonstration-conditioned imitation, paired-demo
//! InfoNCE over task embeddings, and an augmentation-based self-supervised
//! InfoNCE on final frames.
//!
//! Each function appends onto an existing [`Forward`] tape and returns a
//! scalar tensor, so the trainer composes a weighted total and runs one
//! backward pass.

use crate::data::augment::augment;
use crate::data::Trajectory;
use crate::env::{Action, EnvKind, Image};
use crate::nn::{EncoderVariant, Forward};
use crate::seed;
use crate::tensor::TensorId;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch mixes environment kinds or does not match the model")]
    MixedEnvKinds,
    #[error("contrastive batch needs at least 2 pairs; got {0}")]
    NeedsNegatives(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("self-supervised loss is defined only for the final-frame encoder")]
    WrongEncoderVariant,
}

/// One imitation pair: imitate `target` at the given action timesteps,
/// conditioned on the task embedding of `cond`.
pub struct ImitationPair<'a> {
    pub cond: &'a Trajectory,
    pub target: &'a Trajectory,
    pub timesteps: Vec<usize>,
}

fn frame_refs(t: &Trajectory) -> Vec<&Image> {
    t.frames.iter().collect()
}

/// Mean (over pairs, then timesteps) of the per-step action error: MSE of
/// the tanh policy mean for continuous control, cross-entropy over the 5
/// logits for discrete. Pairs may have different timestep counts; each
/// pair still contributes equally.
pub fn loss_imitation(
    f: &mut Forward,
    pairs: &[ImitationPair],
    token_stride: usize,
) -> Result<TensorId, LossError> {
    if pairs.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let model = f.model();
    let kind = model.cfg.kind;
    for p in pairs {
        if p.cond.kind() != kind || p.target.kind() != kind {
            return Err(LossError::MixedEnvKinds);
        }
        assert!(!p.timesteps.is_empty(), "a pair must imitate at least one timestep");
        for &t in &p.timesteps {
            assert!(t < p.target.actions.len(), "timestep {t} out of range");
        }
    }

    let tokens: Vec<_> = pairs
        .iter()
        .map(|p| model.demo_tokens(&frame_refs(p.cond), token_stride))
        .collect();
    let z = f.encode_demos(&tokens);

    // One policy row per (pair, timestep); z rows are repeated per pair.
    let mut inputs = Vec::new();
    let mut z_rows = Vec::new();
    let mut row_weight = Vec::new();
    let mut targets_cont = Vec::new();
    let mut targets_disc = Vec::new();
    let per_pair = 1.0 / pairs.len() as f64;
    for (i, p) in pairs.iter().enumerate() {
        let frames = frame_refs(p.target);
        for &t in &p.timesteps {
            inputs.extend_from_slice(&model.stack_input(&frames, t));
            z_rows.push(i);
            row_weight.push(per_pair / p.timesteps.len() as f64);
            match p.target.actions[t] {
                Action::Nav(a) => targets_cont.extend_from_slice(&a),
                Action::Pad(a) => targets_disc.push(a as usize),
            }
        }
    }
    let n = z_rows.len();
    let state = f.encode_stacks(inputs, n);
    let z_expanded = f.g.gather_rows(z, &z_rows).expect("z per row");
    let out = f.policy(state, z_expanded);

    match kind {
        EnvKind::SemanticNav => {
            // Mean over the two action dims folds into the row weight.
            let target = f.g.leaf(targets_cont, vec![n, 2], false).expect("target actions");
            let diff = f.g.sub(out, target).expect("action error");
            let sq = f.g.mul(diff, diff).expect("squared error");
            let per_row = f.g.sum_rows(sq);
            let w: Vec<f64> = row_weight.iter().map(|v| v / 2.0).collect();
            let w = f.g.leaf(w, vec![n], false).expect("weights");
            let weighted = f.g.mul(per_row, w).expect("weighted rows");
            Ok(f.g.sum_all(weighted))
        }
        EnvKind::PinPad => {
            let logp = f.g.log_softmax_rows(out);
            let picked = f.g.gather_elems(logp, &targets_disc).expect("taken actions");
            let w = f.g.leaf(row_weight, vec![n], false).expect("weights");
            let weighted = f.g.mul(picked, w).expect("weighted rows");
            let sum = f.g.sum_all(weighted);
            Ok(f.g.affine(sum, -1.0, 0.0))
        }
    }
}

/// Symmetric InfoNCE over task embeddings. `demos` holds 2B trajectories
/// arranged as consecutive positive pairs (2i, 2i+1), each pair from one
/// task. Cosine similarity, temperature `tau`.
pub fn loss_contrastive(
    f: &mut Forward,
    demos: &[&Trajectory],
    tau: f64,
    token_stride: usize,
) -> Result<TensorId, LossError> {
    if demos.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    assert!(demos.len() % 2 == 0, "contrastive batch must hold whole pairs");
    if demos.len() < 4 {
        return Err(LossError::NeedsNegatives(demos.len() / 2));
    }
    let kind = f.model().cfg.kind;
    if demos.iter().any(|d| d.kind() != kind) {
        return Err(LossError::MixedEnvKinds);
    }
    let tokens: Vec<_> = demos
        .iter()
        .map(|d| f.model().demo_tokens(&frame_refs(d), token_stride))
        .collect();
    let z = f.encode_demos(&tokens);
    let positives: Vec<usize> = (0..demos.len()).map(|i| i ^ 1).collect();
    infonce(f, z, &positives, tau)
}

/// Self-supervised InfoNCE: two independent augmentations of each frame,
/// embedded by the shared encoder and a one-layer projection head.
/// Defined only for the final-frame encoder variant.
pub fn loss_selfsup(
    f: &mut Forward,
    frames: &[&Image],
    tau: f64,
    aug_seed: u64,
) -> Result<TensorId, LossError> {
    if f.model().cfg.encoder != EncoderVariant::FinalFrame {
        return Err(LossError::WrongEncoderVariant);
    }
    if frames.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if frames.len() < 2 {
        return Err(LossError::NeedsNegatives(frames.len()));
    }
    let model = f.model();
    let mut inputs = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        for view in 0..2u64 {
            let s = seed::derive(aug_seed, &[seed::tag("selfsup-view"), i as u64, view]);
            let img = augment(frame, s);
            inputs.extend_from_slice(&model.stack_input(&[&img], 0));
        }
    }
    let emb = f.encode_stacks(inputs, frames.len() * 2);
    let proj = f.ssl_project(emb);
    let positives: Vec<usize> = (0..frames.len() * 2).map(|i| i ^ 1).collect();
    infonce(f, proj, &positives, tau)
}

/// Core InfoNCE on an [m, D] embedding tensor: for each row i with positive
/// `positives[i]`, -log softmax over cosine similarities to all other rows
/// at temperature `tau`, averaged over rows. The self-similarity is masked
/// with a large negative constant before the softmax.
pub fn infonce(
    f: &mut Forward,
    z: TensorId,
    positives: &[usize],
    tau: f64,
) -> Result<TensorId, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::BadTemperature(tau));
    }
    let m = f.g.shape(z)[0];
    assert_eq!(positives.len(), m);
    for (i, &p) in positives.iter().enumerate() {
        assert!(p < m && p != i, "positive index {p} invalid for row {i}");
    }

    // Cosine similarity: normalize rows with a tiny epsilon inside the
    // square root so an all-zero embedding stays finite without
    // perturbing well-scaled rows.
    let sq = f.g.mul(z, z).expect("z squared");
    let sumsq = f.g.sum_rows(sq);
    let shifted = f.g.affine(sumsq, 1.0, 1e-24);
    let norm = f.g.sqrt(shifted);
    let inv = f.g.recip(norm);
    let zn = f.g.mul_col(z, inv).expect("normalized rows");
    let sims = f.g.matmul_nt(zn, zn).expect("similarity matrix");
    let logits = f.g.affine(sims, 1.0 / tau, 0.0);

    let mut mask = vec![0.0; m * m];
    for i in 0..m {
        mask[i * m + i] = -1e30;
    }
    let mask = f.g.leaf(mask, vec![m, m], false).expect("self mask");
    let masked = f.g.add(logits, mask).expect("masked logits");
    let logp = f.g.log_softmax_rows(masked);
    let pos = f.g.gather_elems(logp, positives).expect("positive logits");
    let mean = f.g.mean_all(pos);
    Ok(f.g.affine(mean, -1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Scene, TaskSpec};
    use crate::nn::{Model, ModelConfig};

    fn nav_demo(seed: u64) -> Trajectory {
        let cfg = EnvConfig::default_for(EnvKind::SemanticNav);
        let task = TaskSpec::Nav(Scene { target: 1, distractor: 6 });
        crate::data::collect::collect(&cfg, &task, 1, seed).unwrap().demos.remove(0)
    }

    fn pad_demo(seed: u64) -> Trajectory {
        let cfg = EnvConfig::default_for(EnvKind::PinPad);
        let task = TaskSpec::Pad { first: 0, second: 3 };
        crate::data::collect::collect(&cfg, &task, 1, seed).unwrap().demos.remove(0)
    }

    fn zero_leaf_model(kind: EnvKind) -> Model {
        // Zeroed policy head makes outputs exactly zero (tanh(0)) or
        // uniform logits, giving closed-form loss values.
        let mut m = Model::new(ModelConfig::defaults(kind), 0);
        m.params.get_mut("policy.head.w").data.fill(0.0);
        m.params.get_mut("policy.head.b").data.fill(0.0);
        m
    }

    #[test]
    fn perfect_continuous_predictions_give_zero_loss() {
        let model = zero_leaf_model(EnvKind::SemanticNav);
        let mut demo = nav_demo(1);
        for a in demo.actions.iter_mut() {
            *a = Action::Nav([0.0, 0.0]);
        }
        let timesteps = (0..demo.actions.len()).collect();
        let mut f = model.forward(false);
        let pairs = [ImitationPair { cond: &demo, target: &demo, timesteps }];
        let loss = loss_imitation(&mut f, &pairs, 1).unwrap();
        assert_eq!(f.g.scalar(loss), 0.0);
    }

    #[test]
    fn uniform_logits_cost_ln_five_per_step() {
        let model = zero_leaf_model(EnvKind::PinPad);
        let demo = pad_demo(2);
        let timesteps = (0..demo.actions.len()).collect();
        let mut f = model.forward(false);
        let pairs = [ImitationPair { cond: &demo, target: &demo, timesteps }];
        let loss = loss_imitation(&mut f, &pairs, 1).unwrap();
        assert!((f.g.scalar(loss) - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unequal_timestep_counts_still_weight_pairs_equally() {
        let model = zero_leaf_model(EnvKind::PinPad);
        let d1 = pad_demo(3);
        let d2 = pad_demo(4);
        let mut f = model.forward(false);
        let pairs = [
            ImitationPair { cond: &d1, target: &d1, timesteps: vec![0] },
            ImitationPair { cond: &d2, target: &d2, timesteps: (0..d2.actions.len()).collect() },
        ];
        let loss = loss_imitation(&mut f, &pairs, 2).unwrap();
        // Uniform logits cost ln 5 at every step, so any weighting that
        // averages per pair then per batch must land exactly on ln 5.
        assert!((f.g.scalar(loss) - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixed_env_kinds_are_rejected() {
        let model = zero_leaf_model(EnvKind::PinPad);
        let nav = nav_demo(5);
        let mut f = model.forward(false);
        let pairs = [ImitationPair { cond: &nav, target: &nav, timesteps: vec![0] }];
        assert!(matches!(loss_imitation(&mut f, &pairs, 1), Err(LossError::MixedEnvKinds)));
        let none: [ImitationPair; 0] = [];
        assert!(matches!(loss_imitation(&mut f, &none, 1), Err(LossError::EmptyBatch)));
    }

    fn infonce_on_rows(rows: Vec<f64>, m: usize, d: usize, tau: f64) -> f64 {
        let model = zero_leaf_model(EnvKind::SemanticNav);
        let mut f = model.forward(false);
        let z = f.g.leaf(rows, vec![m, d], false).unwrap();
        let positives: Vec<usize> = (0..m).map(|i| i ^ 1).collect();
        let loss = infonce(&mut f, z, &positives, tau).unwrap();
        f.g.scalar(loss)
    }

    #[test]
    fn orthogonal_pairs_match_the_closed_form() {
        // Two pairs on orthogonal axes: positive similarity 1, negatives 0.
        // Per anchor: -log(e^10 / (e^10 + 2)) = ln(1 + 2e^-10).
        let rows = vec![
            1.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        ];
        let got = infonce_on_rows(rows, 4, 4, 0.1);
        let expected = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
    }

    #[test]
    fn identical_embeddings_cost_ln_of_candidate_count() {
        let rows = vec![0.3; 6 * 8];
        let got = infonce_on_rows(rows, 6, 8, 0.1);
        assert!((got - 5.0f64.ln()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn cosine_makes_the_loss_scale_invariant() {
        let base: Vec<f64> = (0..4 * 8).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let a = infonce_on_rows(base.clone(), 4, 8, 0.1);
        let mut scaled = base;
        for v in scaled[8..16].iter_mut() {
            *v *= 7.0;
        }
        let b = infonce_on_rows(scaled, 4, 8, 0.1);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn raising_positive_similarity_strictly_lowers_the_loss() {
        let mk = |theta: f64| {
            vec![
                1.0, 0.0,
                theta.cos(), theta.sin(),
                0.0, 1.0,
                0.0, -1.0,
            ]
        };
        let further = infonce_on_rows(mk(0.8), 4, 2, 0.1);
        let closer = infonce_on_rows(mk(0.4), 4, 2, 0.1);
        assert!(closer < further, "loss must fall as the positive aligns");
    }

    #[test]
    fn contrastive_needs_two_pairs_and_matching_kinds() {
        let model = zero_leaf_model(EnvKind::PinPad);
        let d = pad_demo(6);
        let mut f = model.forward(false);
        assert!(matches!(
            loss_contrastive(&mut f, &[&d, &d], 0.1, 2),
            Err(LossError::NeedsNegatives(1))
        ));
        let nav = nav_demo(7);
        assert!(matches!(
            loss_contrastive(&mut f, &[&d, &d, &nav, &nav], 0.1, 2),
            Err(LossError::MixedEnvKinds)
        ));
        assert!(matches!(
            infonce_bad_tau(&model),
            Err(LossError::BadTemperature(_))
        ));
    }

    fn infonce_bad_tau(model: &Model) -> Result<TensorId, LossError> {
        let mut f = model.forward(false);
        let z = f.g.leaf(vec![1.0; 8], vec![4, 2], false).unwrap();
        infonce(&mut f, z, &[1, 0, 3, 2], 0.0)
    }

    #[test]
    fn selfsup_constant_projection_costs_ln_candidates() {
        let mut cfg = ModelConfig::defaults(EnvKind::SemanticNav);
        cfg.selfsup_head = true;
        let mut model = Model::new(cfg, 0);
        // Identical projections regardless of augmentation: zero weights,
        // constant bias; every similarity is 1, so loss = ln(2B-1).
        model.params.get_mut("ssl.w").data.fill(0.0);
        model.params.get_mut("ssl.b").data.fill(1.0);
        let frames: Vec<Image> = (0..3).map(|i| Image::filled(64, 64, [i * 50, 10, 200])).collect();
        let refs: Vec<&Image> = frames.iter().collect();
        let mut f = model.forward(false);
        let loss = loss_selfsup(&mut f, &refs, 0.1, 9).unwrap();
        assert!((f.g.scalar(loss) - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn selfsup_rejects_degenerate_batches_and_wrong_variant() {
        let mut cfg = ModelConfig::defaults(EnvKind::SemanticNav);
        cfg.selfsup_head = true;
        let model = Model::new(cfg, 0);
        let img = Image::filled(64, 64, [1, 2, 3]);
        let mut f = model.forward(false);
        assert!(matches!(
            loss_selfsup(&mut f, &[&img], 0.1, 0),
            Err(LossError::NeedsNegatives(1))
        ));
        let pad = Model::new(ModelConfig::defaults(EnvKind::PinPad), 0);
        let img16 = Image::filled(16, 16, [1, 2, 3]);
        let mut f = pad.forward(false);
        assert!(matches!(
            loss_selfsup(&mut f, &[&img16, &img16], 0.1, 0),
            Err(LossError::WrongEncoderVariant)
        ));
    }

    #[test]
    fn selfsup_gradient_reaches_encoder_and_head() {
        let mut cfg = ModelConfig::defaults(EnvKind::SemanticNav);
        cfg.selfsup_head = true;
        let model = Model::new(cfg, 11);
        let a = Image::filled(64, 64, [200, 30, 10]);
        let b = Image::filled(64, 64, [10, 180, 220]);
        let mut f = model.forward(true);
        let loss = loss_selfsup(&mut f, &[&a, &b], 0.1, 3).unwrap();
        let grads = f.backward_grads(loss);
        let by_name = |name: &str| {
            let i = model.params.position(name).unwrap();
            grads[i].iter().map(|v| v.abs()).sum::<f64>()
        };
        assert!(by_name("ssl.w") > 0.0, "projection head gradient missing");
        assert!(by_name("conv1.w") > 0.0, "encoder gradient missing");
    }
}
