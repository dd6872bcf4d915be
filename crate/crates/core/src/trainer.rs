//! Training loop: BERT-style masking, AdamW with linear warmup + cosine
//! decay, fixed-step training over a mono- or bilingual data mix, and a
//! model-independent held-out evaluation protocol.
//!
//! Evaluation masks are a pure function of (sentence text, mask seed), never
//! of the model, so every checkpoint in a sweep is scored on identical masked
//! positions and the resulting losses are comparable cells of one matrix.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::digest::Fnv1a;
use crate::model::{backward, forward, mlm_loss, Batch, Model, ModelError};
use crate::tokenizer::{Vocab, MASK_ID, N_SPECIALS, PAD_ID};

/// Masking ratio used by the deterministic evaluation protocol.
pub const EVAL_MASK_RATIO: f64 = 0.15;

const EVAL_BATCH: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("data mix is empty")]
    EmptyMix,
    #[error("data mix languages must have equal sentence counts ({0} vs {1})")]
    UnequalMix(usize, usize),
    #[error("sequence has no maskable (non-special) token")]
    NoMaskable,
    #[error("step {step} out of range (total_steps {total})")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite loss at step {step}; aborting")]
    NonFiniteLoss { step: usize },
    #[error("vocabulary size {vocab} does not match model vocab_size {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("eval corpus for `{0}` is empty")]
    EmptyEval(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimization hyperparameters for one training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.total_steps == 0 {
            return fail("total_steps must be positive");
        }
        if self.warmup_steps > self.total_steps {
            return fail("warmup_steps must not exceed total_steps");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail("mask_ratio must lie in (0, 1)");
        }
        if self.peak_lr <= 0.0 {
            return fail("peak_lr must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if let Some(c) = self.grad_clip_norm {
            if c <= 0.0 {
                return fail("grad_clip_norm must be positive when set");
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 10_000,
            warmup_steps: 2_500,
            peak_lr: 1e-5,
            batch_size: 16,
            mask_ratio: 0.15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

/// Outcome of one training job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub final_eval_losses: BTreeMap<String, f64>,
    pub wall_clock_seconds: f64,
    pub steps_completed: usize,
}

/// One or two languages' encoded train splits with equal sentence counts.
/// Bilingual batches draw each sentence from either language with
/// probability 1/2 (sampling with replacement within a language).
#[derive(Debug, Clone)]
pub struct DataMix {
    entries: Vec<(String, Vec<Vec<u32>>)>,
}

impl DataMix {
    pub fn new(entries: Vec<(String, Vec<Vec<u32>>)>) -> Result<Self, TrainError> {
        if entries.is_empty() || entries.iter().any(|(_, s)| s.is_empty()) {
            return Err(TrainError::EmptyMix);
        }
        let first = entries[0].1.len();
        for (_, sentences) in &entries {
            if sentences.len() != first {
                return Err(TrainError::UnequalMix(first, sentences.len()));
            }
        }
        Ok(DataMix { entries })
    }

    pub fn codes(&self) -> Vec<&str> {
        self.entries.iter().map(|(c, _)| c.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn draw<'a>(&'a self, rng: &mut ChaCha8Rng) -> (&'a str, &'a [u32]) {
        let lang = if self.entries.len() == 1 {
            0
        } else {
            rng.random_range(0..self.entries.len())
        };
        let (code, sentences) = &self.entries[lang];
        let idx = rng.random_range(0..sentences.len());
        (code, &sentences[idx])
    }
}

/// Infinite stream of sampled batches over the mix; each item is the list of
/// encoded sentences for one step. Deterministic in the seed.
pub fn mix_batches(
    mix: &DataMix,
    batch_size: usize,
    seed: u64,
) -> impl Iterator<Item = Vec<(&str, &[u32])>> + '_ {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || (0..batch_size).map(|_| mix.draw(&mut rng)).collect())
}

/// BERT-style masking over one encoded sequence. Each non-special position is
/// selected independently with probability `mask_ratio`; selected positions
/// become `[mask]` with probability 0.8, a uniform random non-special id with
/// probability 0.1, and stay unchanged otherwise. If nothing was selected,
/// exactly one uniformly chosen non-special position is forced.
pub fn apply_masking(
    ids: &[u32],
    mask_ratio: f64,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<i64>), TrainError> {
    let maskable: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id as usize >= N_SPECIALS)
        .map(|(i, _)| i)
        .collect();
    if maskable.is_empty() {
        return Err(TrainError::NoMaskable);
    }
    let mut inputs = ids.to_vec();
    let mut labels = vec![-1i64; ids.len()];
    let mut selected: Vec<usize> = Vec::new();
    for &pos in &maskable {
        if rng.random::<f64>() < mask_ratio {
            selected.push(pos);
        }
    }
    if selected.is_empty() {
        selected.push(maskable[rng.random_range(0..maskable.len())]);
    }
    for &pos in &selected {
        labels[pos] = ids[pos] as i64;
        let u: f64 = rng.random();
        if u < 0.8 {
            inputs[pos] = MASK_ID;
        } else if u < 0.9 {
            inputs[pos] = rng.random_range(N_SPECIALS as u32..vocab_size as u32);
        }
        // else: keep the original token.
    }
    Ok((inputs, labels))
}

/// Learning rate at a step: linear warmup to `peak_lr` over `warmup_steps`,
/// then cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64, TrainError> {
    if step >= config.total_steps {
        return Err(TrainError::StepOutOfRange {
            step,
            total: config.total_steps,
        });
    }
    if step < config.warmup_steps {
        return Ok(config.peak_lr * step as f64 / config.warmup_steps as f64);
    }
    let decay_span = (config.total_steps - config.warmup_steps).max(1) as f64;
    let progress = (step - config.warmup_steps) as f64 / decay_span;
    Ok(config.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One AdamW update with bias correction and decoupled weight decay, applied
/// elementwise to a parameter slice.
pub(crate) fn adamw_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    lr: f64,
    config: &TrainConfig,
) {
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + config.adam_eps) + config.weight_decay * params[i]);
    }
}

fn assemble_batch(sentences: &[(Vec<u32>, Vec<i64>)]) -> Batch {
    let b = sentences.len();
    let t = sentences.iter().map(|(ids, _)| ids.len()).max().unwrap_or(1);
    let mut input_ids = Array2::from_elem((b, t), PAD_ID as usize);
    let mut mask = Array2::from_elem((b, t), false);
    let mut labels = Array2::from_elem((b, t), -1i64);
    for (bi, (ids, labs)) in sentences.iter().enumerate() {
        for (ti, &id) in ids.iter().enumerate() {
            input_ids[[bi, ti]] = id as usize;
            mask[[bi, ti]] = true;
            labels[[bi, ti]] = labs[ti];
        }
    }
    Batch {
        input_ids,
        attention_mask: mask,
        labels,
    }
}

fn global_grad_norm(grads: &Model) -> f64 {
    grads
        .param_slices()
        .iter()
        .map(|(_, s)| s.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Run exactly `total_steps` AdamW updates over batches sampled from the mix.
/// Fully deterministic in (model seed, data, config seed): two runs produce
/// bit-identical parameters.
pub fn train(
    mut model: Model,
    mix: &DataMix,
    config: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    config.validate()?;
    if mix.is_empty() {
        return Err(TrainError::EmptyMix);
    }
    let start = Instant::now();
    let vocab_size = model.config.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut m_state = Model::zeros(model.config.clone());
    let mut v_state = Model::zeros(model.config.clone());
    let mut history = Vec::with_capacity(config.total_steps);

    for step in 0..config.total_steps {
        let mut rows = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let (_, ids) = mix.draw(&mut rng);
            let masked = apply_masking(ids, config.mask_ratio, vocab_size, &mut rng)?;
            rows.push(masked);
        }
        let batch = assemble_batch(&rows);
        let (logits, cache) = forward(&model, &batch)?;
        let (loss, dlogits) = mlm_loss(&logits, &batch.labels)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        let mut grads = backward(&model, &batch, &cache, &dlogits)?;

        if let Some(clip) = config.grad_clip_norm {
            let norm = global_grad_norm(&grads);
            if norm > clip {
                let scale = clip / norm;
                for (_, slice) in grads.param_slices_mut() {
                    for g in slice.iter_mut() {
                        *g *= scale;
                    }
                }
            }
        }

        let lr = lr_at(step, config)?;
        let t = step + 1;
        let mut param_view = model.param_slices_mut();
        let grad_view = grads.param_slices();
        let mut m_view = m_state.param_slices_mut();
        let mut v_view = v_state.param_slices_mut();
        for i in 0..param_view.len() {
            adamw_update_slice(
                param_view[i].1,
                grad_view[i].1,
                m_view[i].1,
                v_view[i].1,
                t,
                lr,
                config,
            );
        }
        drop(param_view);
        history.push(loss);
    }

    let report = TrainReport {
        loss_history: history,
        final_eval_losses: BTreeMap::new(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        steps_completed: config.total_steps,
    };
    Ok((model, report))
}

/// Mask positions for one evaluation sentence: a pure function of the
/// sentence text and the mask seed, independent of any model.
pub fn eval_masked_indices(ids: &[u32], sentence: &str, mask_seed: u64) -> Vec<usize> {
    let mut h = Fnv1a::new();
    h.update_u64(mask_seed);
    h.update(sentence.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
    let maskable: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id as usize >= N_SPECIALS)
        .map(|(i, _)| i)
        .collect();
    if maskable.is_empty() {
        return Vec::new();
    }
    let mut selected: Vec<usize> = maskable
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < EVAL_MASK_RATIO)
        .collect();
    if selected.is_empty() {
        selected.push(maskable[rng.random_range(0..maskable.len())]);
    }
    selected
}

/// Mean masked-token cross-entropy of a frozen model over an eval corpus.
/// Selected positions are replaced by `[mask]`; the average runs over all
/// masked positions in the corpus (per-token, not per-sentence).
pub fn evaluate(
    model: &Model,
    eval_corpus: &Corpus,
    vocab: &Vocab,
    mask_seed: u64,
) -> Result<f64, TrainError> {
    if eval_corpus.is_empty() {
        return Err(TrainError::EmptyEval(eval_corpus.code.clone()));
    }
    if vocab.len() != model.config.vocab_size {
        return Err(TrainError::VocabMismatch {
            vocab: vocab.len(),
            model: model.config.vocab_size,
        });
    }
    let encoded = vocab.encode_corpus(eval_corpus, model.config.max_len);
    let mut total_loss = 0.0;
    let mut total_masked = 0usize;
    let mut pending: Vec<(Vec<u32>, Vec<i64>)> = Vec::with_capacity(EVAL_BATCH);

    let flush = |pending: &mut Vec<(Vec<u32>, Vec<i64>)>,
                     total_loss: &mut f64,
                     total_masked: &mut usize|
     -> Result<(), TrainError> {
        if pending.is_empty() {
            return Ok(());
        }
        let batch = assemble_batch(pending);
        let n = batch.n_labeled();
        let (logits, _) = forward(model, &batch)?;
        let (mean_loss, _) = mlm_loss(&logits, &batch.labels)?;
        *total_loss += mean_loss * n as f64;
        *total_masked += n;
        pending.clear();
        Ok(())
    };

    for (ids, sentence) in encoded.iter().zip(&eval_corpus.sentences) {
        let positions = eval_masked_indices(ids, sentence, mask_seed);
        if positions.is_empty() {
            continue;
        }
        let mut inputs = ids.clone();
        let mut labels = vec![-1i64; ids.len()];
        for &pos in &positions {
            labels[pos] = ids[pos] as i64;
            inputs[pos] = MASK_ID;
        }
        pending.push((inputs, labels));
        if pending.len() == EVAL_BATCH {
            flush(&mut pending, &mut total_loss, &mut total_masked)?;
        }
    }
    flush(&mut pending, &mut total_loss, &mut total_masked)?;
    if total_masked == 0 {
        return Err(TrainError::EmptyEval(eval_corpus.code.clone()));
    }
    Ok(total_loss / total_masked as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split, SyntheticLanguageSpec};
    use crate::model::ModelConfig;
    use crate::tokenizer::{train_bpe, CLS_ID, SEP_ID};

    fn quick_config(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            warmup_steps: steps / 5,
            peak_lr: 3e-3,
            batch_size: 8,
            seed,
            ..TrainConfig::default()
        }
    }

    fn tiny_language() -> (crate::corpus::Corpus, crate::corpus::Corpus, Vocab) {
        let spec = SyntheticLanguageSpec {
            code: "tiny_Latn".to_string(),
            vocab_size: 60,
            token_id_offset: 0,
            zipf_exponent: 1.1,
            markov_order: 1,
            avg_sentence_len: 5,
            seed: 21,
        };
        let corpus = generate_synthetic(&spec, 260).unwrap();
        let pair = split(&corpus, 40, 3).unwrap();
        let vocab = train_bpe(&[&pair.train], 140).unwrap();
        (pair.train, pair.eval, vocab)
    }

    #[test]
    fn masking_monte_carlo_matches_stated_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ids: Vec<u32> = std::iter::once(CLS_ID)
            .chain((0..50).map(|i| 5 + (i % 40)))
            .chain(std::iter::once(SEP_ID))
            .collect();
        let mut selected = 0usize;
        let mut maskable = 0usize;
        let (mut masked, mut random, mut kept) = (0usize, 0usize, 0usize);
        for _ in 0..10_000 {
            let (inputs, labels) = apply_masking(&ids, 0.15, 100, &mut rng).unwrap();
            for (i, &id) in ids.iter().enumerate() {
                if (id as usize) < N_SPECIALS {
                    assert_eq!(labels[i], -1);
                    continue;
                }
                maskable += 1;
                if labels[i] >= 0 {
                    selected += 1;
                    if inputs[i] == MASK_ID {
                        masked += 1;
                    } else if inputs[i] == id {
                        kept += 1;
                    } else {
                        random += 1;
                    }
                } else {
                    assert_eq!(inputs[i], id);
                }
            }
        }
        let frac = selected as f64 / maskable as f64;
        assert!((frac - 0.15).abs() <= 0.015, "selected fraction {frac}");
        let share = |x: usize| x as f64 / selected as f64;
        assert!((share(masked) - 0.8).abs() <= 0.03, "mask share {}", share(masked));
        assert!((share(random) - 0.1).abs() <= 0.03, "random share {}", share(random));
        assert!((share(kept) - 0.1).abs() <= 0.03, "keep share {}", share(kept));
    }

    #[test]
    fn masking_requires_maskable_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            apply_masking(&[CLS_ID, SEP_ID], 0.15, 100, &mut rng),
            Err(TrainError::NoMaskable)
        ));
    }

    #[test]
    fn masking_always_selects_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ids = [CLS_ID, 7, SEP_ID];
        for _ in 0..200 {
            let (_, labels) = apply_masking(&ids, 0.01, 100, &mut rng).unwrap();
            assert!(labels.iter().any(|&l| l >= 0));
        }
    }

    #[test]
    fn lr_schedule_anchors() {
        let config = TrainConfig {
            total_steps: 10_000,
            warmup_steps: 2_500,
            peak_lr: 1e-5,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &config).unwrap(), 0.0);
        assert!((lr_at(2_500, &config).unwrap() - 1e-5).abs() < 1e-20);
        let mid = lr_at(6_250, &config).unwrap();
        assert!((mid - 0.5e-5).abs() < 1e-18, "midpoint {mid}");
        assert!(lr_at(10_000, &config).is_err());
        // Continuity just after warmup.
        let after = lr_at(2_501, &config).unwrap();
        assert!((after - 1e-5).abs() < 1e-8);
    }

    #[test]
    fn adamw_first_step_matches_hand_computation() {
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = [1.0f64];
        let g = [0.5f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        let lr = 0.1;
        adamw_update_slice(&mut p, &g, &mut m, &mut v, 1, lr, &config);
        // With bias correction at t=1: m_hat = g, v_hat = g^2, so the update
        // is -lr * g / (|g| + eps).
        let expected = 1.0 - lr * 0.5 / (0.5 + config.adam_eps);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    #[test]
    fn adamw_weight_decay_is_decoupled() {
        let config = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let mut p = [2.0f64];
        let g = [0.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adamw_update_slice(&mut p, &g, &mut m, &mut v, 1, 0.5, &config);
        // Zero gradient: the only movement is -lr * wd * p.
        assert!((p[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn mix_draws_are_balanced_and_deterministic() {
        let a: Vec<Vec<u32>> = (0..50).map(|_| vec![CLS_ID, 10, SEP_ID]).collect();
        let b: Vec<Vec<u32>> = (0..50).map(|_| vec![CLS_ID, 20, SEP_ID]).collect();
        let mix = DataMix::new(vec![("a".into(), a), ("b".into(), b)]).unwrap();
        let mut counts = (0usize, 0usize);
        for batch in mix_batches(&mix, 100, 9).take(100) {
            for (code, _) in batch {
                if code == "a" {
                    counts.0 += 1;
                } else {
                    counts.1 += 1;
                }
            }
        }
        let total = (counts.0 + counts.1) as f64;
        let share = counts.0 as f64 / total;
        assert!((share - 0.5).abs() <= 0.03, "share {share}");

        let s1: Vec<Vec<u32>> = mix_batches(&mix, 4, 7)
            .take(5)
            .flatten()
            .map(|(_, ids)| ids.to_vec())
            .collect();
        let s2: Vec<Vec<u32>> = mix_batches(&mix, 4, 7)
            .take(5)
            .flatten()
            .map(|(_, ids)| ids.to_vec())
            .collect();
        assert_eq!(s1, s2);
    }

    #[test]
    fn monolingual_mix_draws_one_language() {
        let a: Vec<Vec<u32>> = (0..10).map(|_| vec![CLS_ID, 10, SEP_ID]).collect();
        let mix = DataMix::new(vec![("a".into(), a)]).unwrap();
        for batch in mix_batches(&mix, 16, 3).take(10) {
            assert!(batch.iter().all(|(code, _)| *code == "a"));
        }
    }

    #[test]
    fn mix_rejects_unequal_counts() {
        let a: Vec<Vec<u32>> = (0..10).map(|_| vec![CLS_ID, 10, SEP_ID]).collect();
        let b: Vec<Vec<u32>> = (0..11).map(|_| vec![CLS_ID, 20, SEP_ID]).collect();
        assert!(matches!(
            DataMix::new(vec![("a".into(), a), ("b".into(), b)]),
            Err(TrainError::UnequalMix(_, _))
        ));
    }

    #[test]
    fn training_learns_and_is_deterministic() {
        let (train_corpus, eval_corpus, vocab) = tiny_language();
        let model_config = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ffn: 64,
            max_len: 24,
            vocab_size: vocab.len(),
            seed: 11,
        };
        let encoded = vocab.encode_corpus(&train_corpus, model_config.max_len);
        let mix = DataMix::new(vec![("tiny_Latn".into(), encoded)]).unwrap();
        let config = quick_config(300, 77);

        let initial = Model::init(&model_config).unwrap();
        let loss_before = evaluate(&initial, &eval_corpus, &vocab, 123).unwrap();

        let (trained, report) = train(initial.clone(), &mix, &config).unwrap();
        assert_eq!(report.steps_completed, 300);
        assert_eq!(report.loss_history.len(), 300);
        let loss_after = evaluate(&trained, &eval_corpus, &vocab, 123).unwrap();
        assert!(
            loss_after < loss_before,
            "no learning: {loss_before} -> {loss_after}"
        );

        // Bit-identical rerun.
        let (trained2, _) = train(initial, &mix, &config).unwrap();
        assert_eq!(trained.to_checkpoint_bytes(), trained2.to_checkpoint_bytes());
    }

    #[test]
    fn untrained_eval_loss_is_near_ln_vocab() {
        let (_, eval_corpus, vocab) = tiny_language();
        let model_config = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ffn: 64,
            max_len: 24,
            vocab_size: vocab.len(),
            seed: 5,
        };
        let model = Model::init(&model_config).unwrap();
        let loss = evaluate(&model, &eval_corpus, &vocab, 99).unwrap();
        let expected = (vocab.len() as f64).ln();
        assert!(
            (loss - expected).abs() <= 0.05 * expected,
            "loss {loss} vs ln(V) {expected}"
        );
    }

    #[test]
    fn evaluation_is_deterministic_and_model_independent() {
        let (_, eval_corpus, vocab) = tiny_language();
        let model_config = ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ffn: 32,
            max_len: 24,
            vocab_size: vocab.len(),
            seed: 5,
        };
        let a = Model::init(&model_config).unwrap();
        let l1 = evaluate(&a, &eval_corpus, &vocab, 42).unwrap();
        let l2 = evaluate(&a, &eval_corpus, &vocab, 42).unwrap();
        assert_eq!(l1, l2);

        // Mask positions depend only on (sentence, seed).
        let encoded = vocab.encode_corpus(&eval_corpus, 24);
        for (ids, sentence) in encoded.iter().zip(&eval_corpus.sentences).take(10) {
            let p1 = eval_masked_indices(ids, sentence, 42);
            let p2 = eval_masked_indices(ids, sentence, 42);
            assert_eq!(p1, p2);
            assert!(!p1.is_empty());
            let p3 = eval_masked_indices(ids, sentence, 43);
            let _ = p3; // different seed may or may not differ per sentence
        }
    }
}
