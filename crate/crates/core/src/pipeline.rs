//! End-to-end orchestration used by the CLI: corpus generation, tokenizer
//! training, sweep execution, analysis outputs, similarity reports, and the
//! probe comparison. Each step reads and writes well-defined files under the
//! configured output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    aggregate_by_group, assemble_loss_matrix, asymmetry, convergence_profile, friendliness,
    interference, resource_stats, robustness, InterferenceMatrix, LossMatrix,
    OutlierReport,
};
use crate::config::RunConfig;
use crate::corpus::{
    generate_synthetic, load_text, make_parallel_eval, split, Corpus, SyntheticLanguageSpec,
};
use crate::matrix::vector_to_csv;
use crate::model::Model;
use crate::probe::{interference_delta, make_probe_task, pick_partners, DeltaReport};
use crate::registry::{load_registry, GroupKey, Registry};
use crate::report::{render_heatmap, top_bottom, GroupMatrixJson, Summary};
use crate::similarity::{
    extract_embeddings, load_external_embeddings, row_compare, similarity_matrix, EmbeddingSet,
    RowComparison,
};
use crate::sweep::{mono_job_id, plan, resume, run, SweepContext, SweepManifest};
use crate::tokenizer::{train_bpe, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Registry(#[from] crate::registry::RegistryError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Sweep(#[from] crate::sweep::SweepError),
    #[error(transparent)]
    Analytics(#[from] crate::analytics::AnalyticsError),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
    #[error(transparent)]
    Similarity(#[from] crate::similarity::SimilarityError),
    #[error(transparent)]
    Probe(#[from] crate::probe::ProbeError),
    #[error(transparent)]
    Report(#[from] crate::report::ReportError),
    #[error("io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn train_corpus_path(out_dir: &Path, code: &str) -> PathBuf {
    out_dir.join("corpora").join(format!("{code}.train.txt"))
}

pub fn eval_corpus_path(out_dir: &Path, code: &str) -> PathBuf {
    out_dir.join("corpora").join(format!("{code}.eval.txt"))
}

pub fn parallel_corpus_path(out_dir: &Path, code: &str) -> PathBuf {
    out_dir.join("corpora").join("parallel").join(format!("{code}.txt"))
}

pub fn vocab_path(out_dir: &Path) -> PathBuf {
    out_dir.join("vocab.txt")
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}

pub fn registry_from_config(config: &RunConfig) -> Result<Registry, PipelineError> {
    Ok(load_registry(&config.paths.registry)?)
}

fn synthetic_specs(registry: &Registry) -> Result<Vec<SyntheticLanguageSpec>, PipelineError> {
    registry
        .specs()
        .iter()
        .filter(|s| s.corpus_source.starts_with("synthetic:"))
        .map(|s| Ok(SyntheticLanguageSpec::from_source(&s.code, &s.corpus_source)?))
        .collect()
}

/// Outcome of corpus generation; parallel sets exist only when every language
/// is synthetic with compatible shape parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParallelStatus {
    Written(usize),
    Skipped(String),
}

/// Materialize train/eval splits (and, when possible, the index-aligned
/// parallel eval sets) for every registry language.
pub fn gen_corpus(config: &RunConfig, registry: &Registry) -> Result<ParallelStatus, PipelineError> {
    let out_dir = &config.paths.out_dir;
    let total = config.corpus.train_sentences + config.corpus.eval_sentences;
    for spec in registry.specs() {
        let corpus = if spec.corpus_source.starts_with("synthetic:") {
            let synth = SyntheticLanguageSpec::from_source(&spec.code, &spec.corpus_source)?;
            generate_synthetic(&synth, total)?
        } else {
            load_text(Path::new(&spec.corpus_source), &spec.code)?
        };
        if corpus.len() <= config.corpus.eval_sentences {
            return Err(PipelineError::Invalid(format!(
                "corpus for `{}` has {} sentences, need more than eval_sentences={}",
                spec.code,
                corpus.len(),
                config.corpus.eval_sentences
            )));
        }
        let pair = split(&corpus, config.corpus.eval_sentences, config.corpus.split_seed)?;
        write_file(&train_corpus_path(out_dir, &spec.code), &pair.train.to_text())?;
        write_file(&eval_corpus_path(out_dir, &spec.code), &pair.eval.to_text())?;
    }

    let synth = synthetic_specs(registry)?;
    if synth.len() != registry.len() {
        return Ok(ParallelStatus::Skipped(
            "not all languages are synthetic".to_string(),
        ));
    }
    match make_parallel_eval(&synth, config.corpus.parallel_sentences) {
        Ok(parallel) => {
            for (code, corpus) in &parallel {
                write_file(&parallel_corpus_path(out_dir, code), &corpus.to_text())?;
            }
            Ok(ParallelStatus::Written(synth.len()))
        }
        Err(e) => Ok(ParallelStatus::Skipped(e.to_string())),
    }
}

pub fn load_train_corpora(
    config: &RunConfig,
    registry: &Registry,
) -> Result<BTreeMap<String, Corpus>, PipelineError> {
    let mut out = BTreeMap::new();
    for code in registry.codes() {
        let corpus = load_text(&train_corpus_path(&config.paths.out_dir, &code), &code)?;
        out.insert(code, corpus);
    }
    Ok(out)
}

pub fn load_eval_corpora(
    config: &RunConfig,
    registry: &Registry,
) -> Result<BTreeMap<String, Corpus>, PipelineError> {
    let mut out = BTreeMap::new();
    for code in registry.codes() {
        let corpus = load_text(&eval_corpus_path(&config.paths.out_dir, &code), &code)?;
        out.insert(code, corpus);
    }
    Ok(out)
}

/// Train the shared BPE vocabulary over the union of all train splits and
/// write it to `vocab.txt`.
pub fn train_tokenizer(config: &RunConfig, registry: &Registry) -> Result<Vocab, PipelineError> {
    let corpora = load_train_corpora(config, registry)?;
    let refs: Vec<&Corpus> = corpora.values().collect();
    let vocab = train_bpe(&refs, config.tokenizer.vocab_size)?;
    vocab.save(&vocab_path(&config.paths.out_dir))?;
    Ok(vocab)
}

pub fn load_vocab(config: &RunConfig) -> Result<Vocab, PipelineError> {
    Ok(Vocab::load(&vocab_path(&config.paths.out_dir))?)
}

/// Assemble the shared sweep context from files on disk. The model's
/// vocab_size follows the trained vocabulary.
pub fn build_context<'a>(
    config: &RunConfig,
    registry: &'a Registry,
    vocab: &'a Vocab,
) -> Result<SweepContext<'a>, PipelineError> {
    let train_corpora = load_train_corpora(config, registry)?;
    let eval_corpora = load_eval_corpora(config, registry)?;
    let mut model_config = config.model.clone();
    model_config.vocab_size = vocab.len();
    model_config.validate()?;
    config.train.validate().map_err(crate::sweep::SweepError::Train)?;
    Ok(SweepContext::new(
        registry,
        vocab,
        model_config,
        config.train.clone(),
        &train_corpora,
        eval_corpora,
        config.sweep.global_seed,
        config.paths.out_dir.clone(),
    )?)
}

pub fn sweep_plan(config: &RunConfig, registry: &Registry) -> Result<SweepManifest, PipelineError> {
    let vocab = load_vocab(config)?;
    let ctx = build_context(config, registry, &vocab)?;
    let manifest = plan(registry, &ctx)?;
    manifest.save(&manifest_path(&config.paths.out_dir))?;
    Ok(manifest)
}

/// Run (or continue) the sweep. With `resume_existing`, the on-disk manifest
/// is validated against the current config hashes and unfinished jobs rerun.
pub fn sweep_run(
    config: &RunConfig,
    registry: &Registry,
    workers: usize,
    resume_existing: bool,
) -> Result<SweepManifest, PipelineError> {
    let vocab = load_vocab(config)?;
    let ctx = build_context(config, registry, &vocab)?;
    let path = manifest_path(&config.paths.out_dir);
    let manifest = if resume_existing || path.exists() {
        resume(&path, &ctx)?
    } else {
        plan(registry, &ctx)?
    };
    Ok(run(manifest, &ctx, workers, &path)?)
}

pub fn load_manifest(config: &RunConfig) -> Result<SweepManifest, PipelineError> {
    Ok(SweepManifest::load(&manifest_path(&config.paths.out_dir))?)
}

/// Everything `analyze` derives and writes.
pub struct AnalysisOutputs {
    pub loss: LossMatrix,
    pub interference_full: InterferenceMatrix,
    pub interference_used: InterferenceMatrix,
    pub registry_used: Registry,
    pub outliers: OutlierReport,
    pub excluded: Vec<String>,
    pub robustness: Vec<(String, f64)>,
    pub friendliness: Vec<(String, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OutliersFile {
    metric: String,
    q1: f64,
    q3: f64,
    iqr: f64,
    lower: f64,
    upper: f64,
    outliers: Vec<String>,
    mean_row_loss: Vec<(String, f64)>,
    exclusion_applied: bool,
    excluded_languages: Vec<String>,
}

/// Build L and I, screen convergence outliers, and write the analysis files:
/// loss_matrix.csv, interference_matrix.csv, robustness.csv,
/// friendliness.csv, outliers.json, group_matrix_script.csv,
/// group_matrix_family.csv.
pub fn analyze(
    config: &RunConfig,
    registry: &Registry,
    manifest: &SweepManifest,
) -> Result<AnalysisOutputs, PipelineError> {
    let out_dir = &config.paths.out_dir;
    let loss = assemble_loss_matrix(manifest.results_table(), registry)?;
    let (means, outliers) = convergence_profile(&loss)?;
    let interference_full = interference(&loss)?;

    let excluded: Vec<String> = if config.analysis.exclude_outliers {
        outliers.outliers.clone()
    } else {
        Vec::new()
    };
    // Exclusion applies symmetrically: outlier rows and columns both leave
    // every aggregate below.
    let (interference_used, registry_used) = if excluded.is_empty() {
        (interference_full.clone(), registry.clone())
    } else {
        (
            interference_full.without(&excluded),
            registry.without(&excluded)?,
        )
    };

    let rob = robustness(&interference_used)?;
    let fri = friendliness(&interference_used)?;

    loss.matrix().save_csv(&out_dir.join("loss_matrix.csv"))?;
    interference_full
        .matrix()
        .save_csv(&out_dir.join("interference_matrix.csv"))?;
    write_file(&out_dir.join("robustness.csv"), &vector_to_csv("robustness", &rob))?;
    write_file(
        &out_dir.join("friendliness.csv"),
        &vector_to_csv("friendliness", &fri),
    )?;
    let outliers_file = OutliersFile {
        metric: outliers.metric.clone(),
        q1: outliers.q1,
        q3: outliers.q3,
        iqr: outliers.iqr,
        lower: outliers.lower,
        upper: outliers.upper,
        outliers: outliers.outliers.clone(),
        mean_row_loss: means,
        exclusion_applied: config.analysis.exclude_outliers,
        excluded_languages: excluded.clone(),
    };
    write_file(
        &out_dir.join("outliers.json"),
        &serde_json::to_string_pretty(&outliers_file).expect("serializes"),
    )?;

    for (key, name) in [(GroupKey::Script, "script"), (GroupKey::Family, "family")] {
        let grouping = registry_used.group_by(key);
        match aggregate_by_group(&interference_used, &grouping, config.analysis.min_group_size) {
            Ok(group) => {
                group
                    .matrix
                    .save_csv(&out_dir.join(format!("group_matrix_{name}.csv")))?;
            }
            Err(crate::analytics::AnalyticsError::NoGroups(_)) => {
                // Small registries may have no group of the required size;
                // still emit an empty matrix file for the output contract.
                crate::matrix::LabeledMatrix::new(vec![])
                    .save_csv(&out_dir.join(format!("group_matrix_{name}.csv")))?;
            }
            Err(e) => return Err(e.into()),
        }
    }

    Ok(AnalysisOutputs {
        loss,
        interference_full,
        interference_used,
        registry_used,
        outliers,
        excluded,
        robustness: rob,
        friendliness: fri,
    })
}

/// Render heatmaps and the `summary.json` scorecard from the analysis.
pub fn report(
    config: &RunConfig,
    registry: &Registry,
    manifest: &SweepManifest,
) -> Result<Summary, PipelineError> {
    let out_dir = &config.paths.out_dir;
    let analysis = analyze(config, registry, manifest)?;

    write_file(
        &out_dir.join("interference_heatmap.svg"),
        &render_heatmap(analysis.interference_full.matrix(), "interference matrix")?,
    )?;
    write_file(
        &out_dir.join("loss_heatmap.svg"),
        &render_heatmap(analysis.loss.matrix(), "loss matrix")?,
    )?;

    let (_, max_asym) = asymmetry(&analysis.interference_used);
    let mut group_matrices = BTreeMap::new();
    for (key, name) in [(GroupKey::Script, "script"), (GroupKey::Family, "family")] {
        let grouping = analysis.registry_used.group_by(key);
        if let Ok(group) =
            aggregate_by_group(&analysis.interference_used, &grouping, config.analysis.min_group_size)
        {
            write_file(
                &out_dir.join(format!("group_matrix_{name}_heatmap.svg")),
                &render_heatmap(&group.matrix, &format!("interference by {name}"))?,
            )?;
            group_matrices.insert(name.to_string(), GroupMatrixJson::from_group(&group));
        }
    }
    let resources = resource_stats(&analysis.interference_used, &analysis.registry_used)?;

    let (rob_top, rob_bottom) = top_bottom(&analysis.robustness, 5);
    let (fri_top, fri_bottom) = top_bottom(&analysis.friendliness, 5);
    let mut metadata = BTreeMap::new();
    metadata.insert("mixing".to_string(), manifest.mixing.clone());
    metadata.insert(
        "evaluation".to_string(),
        "per-masked-token mean cross-entropy; mask positions are a pure function of (sentence, mask seed)".to_string(),
    );
    metadata.insert(
        "outlier_exclusion".to_string(),
        "excluded languages leave both rows and columns of every aggregate".to_string(),
    );
    let summary = Summary {
        n_languages: registry.len(),
        robustness_top5: rob_top,
        robustness_bottom5: rob_bottom,
        friendliness_top5: fri_top,
        friendliness_bottom5: fri_bottom,
        max_asymmetry: max_asym,
        outliers: analysis.outliers.clone(),
        excluded_languages: analysis.excluded.clone(),
        group_matrices,
        resource_stats: resources,
        metadata,
    };
    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("serializes"),
    )?;
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub source: String,
    pub rows: Vec<RowComparison>,
}

fn load_parallel_corpora(
    config: &RunConfig,
    registry: &Registry,
) -> Result<Vec<Corpus>, PipelineError> {
    registry
        .codes()
        .iter()
        .map(|code| {
            let path = parallel_corpus_path(&config.paths.out_dir, code);
            if !path.exists() {
                return Err(PipelineError::Invalid(format!(
                    "no parallel eval corpus for `{code}` at {} (run gen-corpus with an all-synthetic registry)",
                    path.display()
                )));
            }
            Ok(load_text(&path, code)?)
        })
        .collect()
}

/// Build the similarity matrix, compare each row against the interference
/// matrix, and write similarity_matrix.csv, row_compare_<code>.csv, and
/// similarity_report.json.
pub fn similarity_report(
    config: &RunConfig,
    registry: &Registry,
    manifest: &SweepManifest,
    external_dir: Option<&Path>,
) -> Result<SimilarityReport, PipelineError> {
    let out_dir = &config.paths.out_dir;
    let sets: Vec<EmbeddingSet> = match external_dir {
        Some(dir) => registry
            .codes()
            .iter()
            .map(|code| {
                let set = load_external_embeddings(&dir.join(format!("{code}.emb")))?;
                if set.code != *code {
                    return Err(PipelineError::Invalid(format!(
                        "embedding file for `{code}` declares code `{}`",
                        set.code
                    )));
                }
                Ok(set)
            })
            .collect::<Result<_, PipelineError>>()?,
        None => {
            let vocab = load_vocab(config)?;
            let parallel = load_parallel_corpora(config, registry)?;
            registry
                .codes()
                .iter()
                .zip(parallel)
                .map(|(code, corpus)| {
                    let job_id = mono_job_id(code);
                    let job = manifest
                        .jobs
                        .iter()
                        .find(|j| j.id == job_id && j.checkpoint.is_some())
                        .ok_or_else(|| {
                            PipelineError::Invalid(format!("no checkpoint for `{job_id}`"))
                        })?;
                    let model =
                        Model::load_checkpoint(&out_dir.join(job.checkpoint.as_ref().unwrap()))?;
                    let set = extract_embeddings(&model, &corpus, &vocab)?;
                    let emb_dir = out_dir.join("embeddings");
                    std::fs::create_dir_all(&emb_dir).map_err(|source| PipelineError::Io {
                        path: emb_dir.display().to_string(),
                        source,
                    })?;
                    crate::similarity::save_embeddings(&set, &emb_dir.join(format!("{code}.emb")))?;
                    Ok(set)
                })
                .collect::<Result<_, PipelineError>>()?
        }
    };

    let sim = similarity_matrix(&sets)?;
    sim.matrix().save_csv(&out_dir.join("similarity_matrix.csv"))?;

    let loss = assemble_loss_matrix(manifest.results_table(), registry)?;
    let interference_matrix = interference(&loss)?;
    let mut rows = Vec::new();
    for code in registry.codes() {
        match row_compare(&interference_matrix, &sim, &code) {
            Ok(cmp) => {
                let mut csv = String::from("partner,similarity,interference\n");
                for (partner, s, i) in &cmp.pairs {
                    csv.push_str(&format!(
                        "{partner},{},{}\n",
                        crate::matrix::format_cell(*s),
                        crate::matrix::format_cell(*i)
                    ));
                }
                write_file(&out_dir.join(format!("row_compare_{code}.csv")), &csv)?;
                rows.push(cmp);
            }
            Err(crate::similarity::SimilarityError::TooFewEntries { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let report = SimilarityReport {
        source: if external_dir.is_some() {
            "external_file".to_string()
        } else {
            "own_model".to_string()
        },
        rows,
    };
    write_file(
        &out_dir.join("similarity_report.json"),
        &serde_json::to_string_pretty(&report).expect("serializes"),
    )?;
    Ok(report)
}

/// Pick low/high-interference partners for the target from the interference
/// matrix, evaluate the probe on the corresponding checkpoints, and write
/// `delta_report.json`.
pub fn probe_delta(
    config: &RunConfig,
    registry: &Registry,
    manifest: &SweepManifest,
    target_override: Option<&str>,
) -> Result<DeltaReport, PipelineError> {
    let out_dir = &config.paths.out_dir;
    let target = target_override
        .map(|s| s.to_string())
        .or_else(|| config.probe.target.clone())
        .unwrap_or_else(|| registry.codes()[0].clone());
    let spec = registry
        .get(&target)
        .ok_or_else(|| PipelineError::Invalid(format!("unknown probe target `{target}`")))?;
    if !spec.corpus_source.starts_with("synthetic:") {
        return Err(PipelineError::Invalid(format!(
            "probe target `{target}` must be synthetic to build a labeled task"
        )));
    }
    let synth = SyntheticLanguageSpec::from_source(&spec.code, &spec.corpus_source)?;

    let loss = assemble_loss_matrix(manifest.results_table(), registry)?;
    let interference_matrix = interference(&loss)?;
    let (low, high) = pick_partners(
        &interference_matrix,
        &target,
        config.probe.n_low,
        config.probe.n_high,
    )?;

    let task = make_probe_task(
        &synth,
        config.probe.classes,
        config.probe.examples_per_class,
        config.probe.task_seed,
    )?;
    let vocab = load_vocab(config)?;
    let report = interference_delta(
        &target,
        &low,
        &high,
        manifest,
        out_dir,
        &task,
        &vocab,
        &config.probe.seeds,
    )?;
    write_file(
        &out_dir.join("delta_report.json"),
        &serde_json::to_string_pretty(&report).expect("serializes"),
    )?;
    Ok(report)
}
