//! Linear-probe evaluation on frozen encoder embeddings: a synthetic
//! per-language classification task, a multinomial logistic-regression head
//! trained to convergence, and the low-vs-high-interference accuracy delta
//! that tests whether the interference matrix predicts downstream drops.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::analytics::InterferenceMatrix;
use crate::corpus::{Corpus, Provenance, SyntheticLanguageSpec};
use crate::digest::derive_seed;
use crate::model::Model;
use crate::similarity::extract_embeddings;
use crate::sweep::{bi_job_id, mono_job_id, SweepManifest};
use crate::tokenizer::Vocab;

const TILT: f64 = 8.0;
const L2_PENALTY: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 2_000;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("probe task needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("probe task needs at least 20 examples per class, got {0}")]
    TooFewExamples(usize),
    #[error("degenerate task: {0}")]
    Degenerate(String),
    #[error("no checkpoint recorded for job `{0}`")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Similarity(#[from] crate::similarity::SimilarityError),
}

/// Labeled synthetic classification task: class `c` draws its words from a
/// tilted copy of the language's unigram distribution, so classes are
/// distinguishable from sentence content alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTask {
    pub code: String,
    pub classes: usize,
    pub examples: Vec<(String, usize)>,
}

impl ProbeTask {
    pub fn sentences(&self) -> Corpus {
        Corpus {
            code: self.code.clone(),
            sentences: self.examples.iter().map(|(s, _)| s.clone()).collect(),
            provenance: Provenance::Synthetic,
        }
    }
}

/// Accuracy over seeds for one (checkpoint, task) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub per_seed: Vec<f64>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Build a balanced k-class task over one language's vocabulary. Class `c`
/// boosts lexemes with `lexeme % k == c`, sampling words independently from
/// the tilted distribution. Deterministic in `seed`.
pub fn make_probe_task(
    spec: &SyntheticLanguageSpec,
    k: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<ProbeTask, ProbeError> {
    if k < 2 {
        return Err(ProbeError::TooFewClasses(k));
    }
    if n_per_class < 20 {
        return Err(ProbeError::TooFewExamples(n_per_class));
    }
    spec.validate()?;
    let v = spec.vocab_size;
    let mut class_cdfs = Vec::with_capacity(k);
    for c in 0..k {
        let mut cdf = Vec::with_capacity(v);
        let mut acc = 0.0;
        for lex in 0..v {
            let base = ((lex + 1) as f64).powf(-spec.zipf_exponent);
            let w = if lex % k == c { base * TILT } else { base };
            acc += w;
            cdf.push(acc);
        }
        let total = acc;
        for x in &mut cdf {
            *x /= total;
        }
        class_cdfs.push(cdf);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(spec.avg_sentence_len as f64).expect("positive mean");
    let script = spec.script().to_string();
    let mut examples = Vec::with_capacity(k * n_per_class);
    for c in 0..k {
        for _ in 0..n_per_class {
            let len = (poisson.sample(&mut rng) as usize).clamp(3, 2 * spec.avg_sentence_len);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let u: f64 = rng.random();
                let lex = class_cdfs[c].partition_point(|&x| x < u).min(v - 1);
                words.push(crate::corpus::render_word(
                    &script,
                    spec.token_id_offset + lex as u64,
                )?);
            }
            examples.push((words.join(" "), c));
        }
    }
    Ok(ProbeTask {
        code: spec.code.clone(),
        classes: k,
        examples,
    })
}

/// Multinomial logistic regression by full-batch gradient descent with
/// backtracking step control, L2 penalty on the weights (not the bias), run
/// to gradient tolerance.
pub(crate) fn train_logreg(features: &Array2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let (n, d) = features.dim();
    let inv_n = 1.0 / n as f64;
    // Row d is the bias.
    let mut w: Array2<f64> = Array2::zeros((d + 1, k));

    let loss_and_grad = |w: &Array2<f64>| -> (f64, Array2<f64>) {
        let weights = w.slice(ndarray::s![..d, ..]);
        let bias = w.row(d);
        let mut scores = features.dot(&weights);
        scores += &bias;
        // Row-wise softmax into probabilities, accumulating the mean NLL.
        let mut loss = 0.0;
        for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            loss += -(row[labels[i]] / sum).ln() * inv_n;
            for v in row.iter_mut() {
                *v /= sum;
            }
            row[labels[i]] -= 1.0;
        }
        let err = scores.mapv(|v| v * inv_n);
        let mut grad: Array2<f64> = Array2::zeros((d + 1, k));
        grad.slice_mut(ndarray::s![..d, ..])
            .assign(&features.t().dot(&err));
        grad.row_mut(d).assign(&err.sum_axis(ndarray::Axis(0)));
        for c in 0..k {
            for j in 0..d {
                loss += 0.5 * L2_PENALTY * w[[j, c]] * w[[j, c]];
                grad[[j, c]] += L2_PENALTY * w[[j, c]];
            }
        }
        (loss, grad)
    };

    let (mut loss, mut grad) = loss_and_grad(&w);
    let mut lr = 1.0;
    for _ in 0..MAX_ITERS {
        let grad_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_max < GRAD_TOL {
            break;
        }
        let mut stepped = false;
        for _ in 0..60 {
            let candidate = &w - &grad.mapv(|g| g * lr);
            let (new_loss, new_grad) = loss_and_grad(&candidate);
            if new_loss <= loss {
                w = candidate;
                loss = new_loss;
                grad = new_grad;
                lr *= 1.1;
                stepped = true;
                break;
            }
            lr *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    w
}

pub(crate) fn predict_logreg(w: &Array2<f64>, features: &Array2<f64>) -> Vec<usize> {
    let (n, d) = features.dim();
    let k = w.ncols();
    (0..n)
        .map(|i| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..k {
                let mut s = w[[d, c]];
                for j in 0..d {
                    s += features[[i, j]] * w[[j, c]];
                }
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect()
}

fn standardize(train: &mut Array2<f64>, test: &mut Array2<f64>) {
    let (n, d) = train.dim();
    for j in 0..d {
        let mean = train.column(j).sum() / n as f64;
        let var = train
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt().max(1e-12);
        for v in train.column_mut(j).iter_mut() {
            *v = (*v - mean) / std;
        }
        for v in test.column_mut(j).iter_mut() {
            *v = (*v - mean) / std;
        }
    }
}

/// Class-stratified 80/20 split, logistic-regression probe on frozen
/// mean-pooled embeddings, mean test accuracy over seeds.
pub fn eval_probe(
    model: &Model,
    task: &ProbeTask,
    vocab: &Vocab,
    seeds: &[u64],
) -> Result<ProbeResult, ProbeError> {
    if task.classes < 2 {
        return Err(ProbeError::TooFewClasses(task.classes));
    }
    if task.examples.is_empty() || seeds.is_empty() {
        return Err(ProbeError::Degenerate("no examples or seeds".to_string()));
    }
    let corpus = task.sentences();
    let embeddings = extract_embeddings(model, &corpus, vocab)?;
    let d = embeddings.dim();
    let labels: Vec<usize> = task.examples.iter().map(|(_, c)| *c).collect();

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(ProbeError::Degenerate(
            "fewer than 2 classes present".to_string(),
        ));
    }

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut train_size = 0;
    let mut test_size = 0;
    for &seed in seeds {
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (&class, indices) in &by_class {
            let mut shuffled = indices.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("class{class}")));
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let n_test = (shuffled.len() / 5).max(1);
            test_idx.extend_from_slice(&shuffled[..n_test]);
            train_idx.extend_from_slice(&shuffled[n_test..]);
        }
        train_size = train_idx.len();
        test_size = test_idx.len();

        let gather = |idx: &[usize]| {
            let mut m = Array2::zeros((idx.len(), d));
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..d {
                    m[[r, j]] = embeddings.vectors[[i, j]];
                }
            }
            m
        };
        let mut train_x = gather(&train_idx);
        let mut test_x = gather(&test_idx);
        standardize(&mut train_x, &mut test_x);
        let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let test_y: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();

        let w = train_logreg(&train_x, &train_y, task.classes);
        let predictions = predict_logreg(&w, &test_x);
        let correct = predictions
            .iter()
            .zip(&test_y)
            .filter(|(p, y)| p == y)
            .count();
        per_seed.push(correct as f64 / test_y.len() as f64);
    }
    let accuracy = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    Ok(ProbeResult {
        accuracy,
        per_seed,
        train_size,
        test_size,
    })
}

/// `mean(low-interference accuracies) - mean(high-interference accuracies)`;
/// positive when the matrix's prediction held.
pub fn delta_from_accuracies(low: &[f64], high: &[f64]) -> f64 {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    mean(low) - mean(high)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartnerOutcome {
    pub partner: String,
    pub condition: String,
    pub accuracy: f64,
    pub per_seed: Vec<f64>,
}

/// Full low-vs-high comparison for one target language.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaReport {
    pub target: String,
    pub seeds: Vec<u64>,
    pub monolingual_accuracy: f64,
    pub monolingual_per_seed: Vec<f64>,
    pub partners: Vec<PartnerOutcome>,
    pub low_average: f64,
    pub high_average: f64,
    pub delta: f64,
}

/// Partners for the delta comparison, classified by the target's row of the
/// interference matrix: low interference = highest values, high interference
/// = lowest values.
pub fn pick_partners(
    interference: &InterferenceMatrix,
    target: &str,
    n_low: usize,
    n_high: usize,
) -> Result<(Vec<String>, Vec<String>), ProbeError> {
    let m = interference.matrix();
    let row = m
        .index_of(target)
        .ok_or_else(|| ProbeError::Degenerate(format!("unknown target `{target}`")))?;
    let mut scored: Vec<(String, f64)> = Vec::new();
    for (c, label) in m.labels().iter().enumerate() {
        if c == row {
            continue;
        }
        if let Some(v) = m.get(row, c) {
            scored.push((label.clone(), v));
        }
    }
    if scored.len() < n_low + n_high {
        return Err(ProbeError::Degenerate(format!(
            "need {} partners, row has {}",
            n_low + n_high,
            scored.len()
        )));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite"));
    let low = scored[..n_low].iter().map(|(c, _)| c.clone()).collect();
    let high = scored[scored.len() - n_high..]
        .iter()
        .map(|(c, _)| c.clone())
        .collect();
    Ok((low, high))
}

fn checkpoint_for(
    manifest: &SweepManifest,
    out_dir: &Path,
    job_id: &str,
) -> Result<Model, ProbeError> {
    let job = manifest
        .jobs
        .iter()
        .find(|j| j.id == job_id)
        .ok_or_else(|| ProbeError::MissingCheckpoint(job_id.to_string()))?;
    let rel = job
        .checkpoint
        .as_ref()
        .ok_or_else(|| ProbeError::MissingCheckpoint(job_id.to_string()))?;
    Ok(Model::load_checkpoint(&out_dir.join(rel))?)
}

/// Evaluate the probe on the target's monolingual checkpoint and on each
/// bilingual checkpoint, then report the low-vs-high accuracy delta.
#[allow(clippy::too_many_arguments)]
pub fn interference_delta(
    target: &str,
    low_partners: &[String],
    high_partners: &[String],
    manifest: &SweepManifest,
    out_dir: &Path,
    task: &ProbeTask,
    vocab: &Vocab,
    seeds: &[u64],
) -> Result<DeltaReport, ProbeError> {
    let mono = checkpoint_for(manifest, out_dir, &mono_job_id(target))?;
    let mono_result = eval_probe(&mono, task, vocab, seeds)?;

    let mut partners = Vec::new();
    let mut low_acc = Vec::new();
    let mut high_acc = Vec::new();
    for (list, condition) in [(low_partners, "low"), (high_partners, "high")] {
        for partner in list {
            let model = checkpoint_for(manifest, out_dir, &bi_job_id(target, partner))?;
            let result = eval_probe(&model, task, vocab, seeds)?;
            if condition == "low" {
                low_acc.push(result.accuracy);
            } else {
                high_acc.push(result.accuracy);
            }
            partners.push(PartnerOutcome {
                partner: partner.clone(),
                condition: condition.to_string(),
                accuracy: result.accuracy,
                per_seed: result.per_seed,
            });
        }
    }
    let low_average = low_acc.iter().sum::<f64>() / low_acc.len().max(1) as f64;
    let high_average = high_acc.iter().sum::<f64>() / high_acc.len().max(1) as f64;
    Ok(DeltaReport {
        target: target.to_string(),
        seeds: seeds.to_vec(),
        monolingual_accuracy: mono_result.accuracy,
        monolingual_per_seed: mono_result.per_seed,
        partners,
        low_average,
        high_average,
        delta: delta_from_accuracies(&low_acc, &high_acc),
    })
}
