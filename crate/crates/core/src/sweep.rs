//! Sweep orchestration: plans the N monolingual + N(N-1)/2 bilingual jobs,
//! executes them on a worker pool, and records results in a durable manifest.
//!
//! Every job's seed derives from (global seed, job id), so the results table
//! is bit-identical regardless of worker count, interleaving, or interruption.
//! The manifest is rewritten atomically (temp file + rename) after each job
//! completion; a killed sweep resumes from whatever prefix reached disk.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::analytics::ResultsTable;
use crate::corpus::Corpus;
use crate::digest::{derive_seed, fnv1a, Fnv1a};
use crate::model::{Model, ModelConfig};
use crate::registry::{registry_to_csv, Registry};
use crate::tokenizer::Vocab;
use crate::trainer::{evaluate, train, TrainConfig, TrainReport};

pub use crate::trainer::{mix_batches, DataMix};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MIXING_SCHEME: &str = "per-sentence 50/50 sampling with replacement";

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep needs at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("manifest io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt manifest: {0}")]
    Corrupt(String),
    #[error("manifest {field} hash mismatch: manifest has {manifest}, current run has {current}")]
    HashMismatch {
        field: &'static str,
        manifest: String,
        current: String,
    },
    #[error("job `{job}` references unknown language `{code}`")]
    UnknownLanguage { job: String, code: String },
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// One training job: `mono:<code>` or `bi:<a>+<b>` with the pair sorted so
/// each unordered pair appears exactly once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub languages: Vec<String>,
    pub config_hash: String,
    pub status: JobStatus,
    #[serde(default)]
    pub result: BTreeMap<String, f64>,
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

pub fn mono_job_id(code: &str) -> String {
    format!("mono:{code}")
}

pub fn bi_job_id(a: &str, b: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("bi:{lo}+{hi}")
}

/// File-name-safe form of a job id.
pub fn job_file_stem(id: &str) -> String {
    id.replace([':', '+'], "_")
}

/// Durable record of planned and completed jobs plus the results table
/// keyed (evaluated language, secondary language).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub registry_hash: String,
    pub config_hash: String,
    pub global_seed: u64,
    pub eval_mask_seed: u64,
    pub mixing: String,
    pub jobs: Vec<Job>,
    pub results: ResultsTable,
}

impl SweepManifest {
    pub fn is_complete(&self) -> bool {
        self.jobs.iter().all(|j| j.status == JobStatus::Done)
    }

    pub fn failed_jobs(&self) -> Vec<&Job> {
        self.jobs
            .iter()
            .filter(|j| j.status == JobStatus::Failed)
            .collect()
    }

    pub fn results_table(&self) -> &ResultsTable {
        &self.results
    }

    /// Serialize deterministically (sorted maps, stable job order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SweepError> {
        atomic_write(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<SweepManifest, SweepError> {
        let text = std::fs::read_to_string(path).map_err(|source| SweepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let manifest: SweepManifest =
            serde_json::from_str(&text).map_err(|e| SweepError::Corrupt(e.to_string()))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(SweepError::Corrupt(format!(
                "schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }
}

/// Write via a temp file in the same directory and rename over the target, so
/// readers and crash recovery only ever see complete files.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), SweepError> {
    let io_err = |source: std::io::Error| SweepError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp.{}",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Everything a worker needs, shared read-only across the pool.
pub struct SweepContext<'a> {
    pub registry: &'a Registry,
    pub vocab: &'a Vocab,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub encoded_train: BTreeMap<String, Vec<Vec<u32>>>,
    pub eval_corpora: BTreeMap<String, Corpus>,
    pub global_seed: u64,
    pub eval_mask_seed: u64,
    pub out_dir: PathBuf,
    data_hash: u64,
}

impl<'a> SweepContext<'a> {
    pub fn new(
        registry: &'a Registry,
        vocab: &'a Vocab,
        model_config: ModelConfig,
        train_config: TrainConfig,
        train_corpora: &BTreeMap<String, Corpus>,
        eval_corpora: BTreeMap<String, Corpus>,
        global_seed: u64,
        out_dir: PathBuf,
    ) -> Result<Self, SweepError> {
        let mut data_hasher = Fnv1a::new();
        for code in registry.codes() {
            let train = train_corpora
                .get(&code)
                .ok_or_else(|| SweepError::UnknownLanguage {
                    job: "plan".to_string(),
                    code: code.clone(),
                })?;
            let eval = eval_corpora
                .get(&code)
                .ok_or_else(|| SweepError::UnknownLanguage {
                    job: "plan".to_string(),
                    code: code.clone(),
                })?;
            data_hasher.update(code.as_bytes());
            data_hasher.update_u64(train.content_hash());
            data_hasher.update_u64(eval.content_hash());
        }
        let encoded_train: BTreeMap<String, Vec<Vec<u32>>> = train_corpora
            .iter()
            .map(|(code, corpus)| {
                (
                    code.clone(),
                    vocab.encode_corpus(corpus, model_config.max_len),
                )
            })
            .collect();
        let eval_mask_seed = derive_seed(global_seed, "eval-mask");
        Ok(SweepContext {
            registry,
            vocab,
            model_config,
            train_config,
            encoded_train,
            eval_corpora,
            global_seed,
            eval_mask_seed,
            out_dir,
            data_hash: data_hasher.finish(),
        })
    }

    /// Digest of (model config, train config, vocab, corpora): the guard that
    /// keeps resumed sweeps from silently mixing incompatible runs.
    pub fn config_hash(&self) -> String {
        let mut h = Fnv1a::new();
        h.update(serde_json::to_string(&self.model_config).unwrap().as_bytes());
        h.update(serde_json::to_string(&self.train_config).unwrap().as_bytes());
        h.update_u64(self.vocab.file_hash());
        h.update_u64(self.data_hash);
        format!("{:016x}", h.finish())
    }

    pub fn registry_hash(&self) -> String {
        format!("{:016x}", fnv1a(registry_to_csv(self.registry).as_bytes()))
    }

    fn checkpoint_rel_path(&self, job_id: &str) -> String {
        format!("checkpoints/{}.ckpt", job_file_stem(job_id))
    }

    fn report_rel_path(&self, job_id: &str) -> String {
        format!("reports/{}.json", job_file_stem(job_id))
    }

    /// Train and evaluate one job. Returns per-language eval losses and the
    /// relative checkpoint path.
    pub fn execute_job(&self, job: &Job) -> Result<(BTreeMap<String, f64>, String), SweepError> {
        let job_seed = derive_seed(self.global_seed, &job.id);
        let mut model_config = self.model_config.clone();
        model_config.seed = derive_seed(job_seed, "model");
        let mut train_config = self.train_config.clone();
        train_config.seed = derive_seed(job_seed, "train");

        let mut entries = Vec::new();
        for code in &job.languages {
            let sentences =
                self.encoded_train
                    .get(code)
                    .ok_or_else(|| SweepError::UnknownLanguage {
                        job: job.id.clone(),
                        code: code.clone(),
                    })?;
            entries.push((code.clone(), sentences.clone()));
        }
        let mix = DataMix::new(entries)?;
        let model = Model::init(&model_config)?;
        let (trained, mut report) = train(model, &mix, &train_config)?;

        let mut losses = BTreeMap::new();
        for code in &job.languages {
            let eval = self
                .eval_corpora
                .get(code)
                .ok_or_else(|| SweepError::UnknownLanguage {
                    job: job.id.clone(),
                    code: code.clone(),
                })?;
            let loss = evaluate(&trained, eval, self.vocab, self.eval_mask_seed)?;
            losses.insert(code.clone(), loss);
        }
        report.final_eval_losses = losses.clone();

        let ckpt_rel = self.checkpoint_rel_path(&job.id);
        let ckpt_path = self.out_dir.join(&ckpt_rel);
        std::fs::create_dir_all(ckpt_path.parent().unwrap()).map_err(|source| SweepError::Io {
            path: ckpt_path.display().to_string(),
            source,
        })?;
        trained.save_checkpoint(&ckpt_path)?;
        let report_path = self.out_dir.join(self.report_rel_path(&job.id));
        std::fs::create_dir_all(report_path.parent().unwrap()).map_err(|source| {
            SweepError::Io {
                path: report_path.display().to_string(),
                source,
            }
        })?;
        write_report(&report_path, &report)?;

        Ok((losses, ckpt_rel))
    }
}

fn write_report(path: &Path, report: &TrainReport) -> Result<(), SweepError> {
    atomic_write(
        path,
        serde_json::to_string_pretty(report)
            .expect("report serializes")
            .as_bytes(),
    )
}

/// Plan the full sweep: one monolingual job per language in registry order,
/// then one bilingual job per unordered pair in lexicographic order. All jobs
/// start pending.
pub fn plan(registry: &Registry, ctx: &SweepContext) -> Result<SweepManifest, SweepError> {
    let n = registry.len();
    if n < 2 {
        return Err(SweepError::TooFewLanguages(n));
    }
    let config_hash = ctx.config_hash();
    let mut jobs = Vec::with_capacity(n + n * (n - 1) / 2);
    for code in registry.codes() {
        jobs.push(Job {
            id: mono_job_id(&code),
            languages: vec![code],
            config_hash: config_hash.clone(),
            status: JobStatus::Pending,
            result: BTreeMap::new(),
            checkpoint: None,
            error: None,
        });
    }
    let codes = registry.codes();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&codes[i], &codes[j]);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            pairs.push((lo.clone(), hi.clone()));
        }
    }
    pairs.sort();
    for (a, b) in pairs {
        jobs.push(Job {
            id: bi_job_id(&a, &b),
            languages: vec![a, b],
            config_hash: config_hash.clone(),
            status: JobStatus::Pending,
            result: BTreeMap::new(),
            checkpoint: None,
            error: None,
        });
    }
    Ok(SweepManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        registry_hash: ctx.registry_hash(),
        config_hash,
        global_seed: ctx.global_seed,
        eval_mask_seed: ctx.eval_mask_seed,
        mixing: MIXING_SCHEME.to_string(),
        jobs,
        results: ResultsTable::new(),
    })
}

/// Load a manifest for continuation, refusing to proceed if the registry or
/// config hashes differ from the current inputs. Done jobs stay done;
/// pending/failed jobs will be rescheduled by [`run`].
pub fn resume(
    manifest_path: &Path,
    ctx: &SweepContext,
) -> Result<SweepManifest, SweepError> {
    let mut manifest = SweepManifest::load(manifest_path)?;
    let current_config = ctx.config_hash();
    if manifest.config_hash != current_config {
        return Err(SweepError::HashMismatch {
            field: "config",
            manifest: manifest.config_hash,
            current: current_config,
        });
    }
    let current_registry = ctx.registry_hash();
    if manifest.registry_hash != current_registry {
        return Err(SweepError::HashMismatch {
            field: "registry",
            manifest: manifest.registry_hash,
            current: current_registry,
        });
    }
    for job in &mut manifest.jobs {
        if job.status == JobStatus::Running || job.status == JobStatus::Failed {
            job.status = JobStatus::Pending;
            job.error = None;
        }
    }
    Ok(manifest)
}

/// Execute all non-done jobs with at most `workers` concurrent workers, using
/// a custom executor. The manifest is persisted atomically after every job
/// completion. Failures are recorded per job and do not stop the sweep.
pub fn run_with_executor<F>(
    mut manifest: SweepManifest,
    workers: usize,
    manifest_path: &Path,
    executor: F,
) -> Result<SweepManifest, SweepError>
where
    F: Fn(&Job) -> Result<(BTreeMap<String, f64>, Option<String>), String> + Sync,
{
    let todo: Vec<usize> = manifest
        .jobs
        .iter()
        .enumerate()
        .filter(|(_, j)| j.status != JobStatus::Done)
        .map(|(i, _)| i)
        .collect();
    if todo.is_empty() {
        manifest.save(manifest_path)?;
        return Ok(manifest);
    }
    let workers = workers.max(1).min(todo.len());
    let queue: Mutex<VecDeque<usize>> = Mutex::new(todo.iter().copied().collect());
    let (tx, rx) = mpsc::channel::<(usize, Result<(BTreeMap<String, f64>, Option<String>), String>)>();
    let jobs_snapshot: Vec<Job> = manifest.jobs.clone();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let jobs = &jobs_snapshot;
            let executor = &executor;
            scope.spawn(move || loop {
                let next = queue.lock().unwrap().pop_front();
                let Some(idx) = next else { break };
                let outcome = executor(&jobs[idx]);
                if tx.send((idx, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for (idx, outcome) in rx {
            {
                let job = &mut manifest.jobs[idx];
                match outcome {
                    Ok((losses, checkpoint)) => {
                        job.status = JobStatus::Done;
                        job.checkpoint = checkpoint;
                        job.error = None;
                        job.result = losses.clone();
                        let secondary: BTreeMap<String, String> = match job.languages.as_slice() {
                            [only] => BTreeMap::from([(only.clone(), only.clone())]),
                            [a, b] => BTreeMap::from([
                                (a.clone(), b.clone()),
                                (b.clone(), a.clone()),
                            ]),
                            _ => BTreeMap::new(),
                        };
                        for (evaluated, loss) in losses {
                            let sec = secondary[&evaluated].clone();
                            manifest
                                .results
                                .entry(evaluated)
                                .or_default()
                                .insert(sec, loss);
                        }
                    }
                    Err(message) => {
                        job.status = JobStatus::Failed;
                        job.error = Some(message);
                        job.result.clear();
                    }
                }
            }
            manifest.save(manifest_path)?;
        }
        Ok::<(), SweepError>(())
    })?;

    Ok(manifest)
}

/// Execute all non-done jobs with the real trainer-backed executor.
pub fn run(
    manifest: SweepManifest,
    ctx: &SweepContext,
    workers: usize,
    manifest_path: &Path,
) -> Result<SweepManifest, SweepError> {
    run_with_executor(manifest, workers, manifest_path, |job| {
        ctx.execute_job(job)
            .map(|(losses, ckpt)| (losses, Some(ckpt)))
            .map_err(|e| e.to_string())
    })
}
