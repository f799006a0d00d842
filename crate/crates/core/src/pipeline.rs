//! End-to-end pipeline stages over a working directory.
//!
//! Stage graph: synth → train-retrieval → build-labels → train-align → align
//! → train-summarizer → summarize → select → evaluate. Every stage reads its
//! inputs from the workdir, writes artifacts with embedded manifests, and is
//! byte-identical on re-runs with unchanged inputs. The `wo_ita` variant
//! skips alignment training and retrieves pseudo captions directly from the
//! document with the retrieval model.

use crate::alignment::{
    align_document_with, build_labels, one_pass_align, one_pass_dedup_align, train_alignment,
    train_one_pass, AlignmentConfig, AlignmentModel, AttentionMode, CrossAttention, RougeVariant,
    Scorer,
};
use crate::artifacts::{
    read_artifact, write_artifact, AlignmentRecord, ArtifactError, ArtifactManifest, LabelRecord,
    ReferenceEntry, SelectionRecord, SummaryRecord,
};
use crate::checkpoint::{Checkpoint, CheckpointError, Manifest};
use crate::corpus::{
    generate_synthetic, load_corpus, save_corpus, CorpusError, DocumentSet, Split,
    SyntheticConfig,
};
use crate::encoders::EncoderStack;
use crate::eval::{evaluate_run, select_image, simple_summary_experiment, MetricsReport};
use crate::retrieval::{
    pairs_from_documents, retrieve_from_document, retrieve_reference_captions, train_retrieval,
    RetrievalConfig, RetrievalModel,
};
use crate::rng::fnv1a64;
use crate::summarizer::{
    summarize, SummarizerConfig, SummarizerModel, TrainingExample, Vocab,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    InvalidConfig(Vec<String>),
    #[error("missing prerequisite {path}; run `{producer}` first")]
    MissingPrerequisite { path: PathBuf, producer: String },
    #[error("artifact config hashes differ ({found:?}); re-run the pipeline with one config or pass --allow-mixed")]
    MixedConfigHashes { found: Vec<String> },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Runtime(String),
}

impl From<crate::retrieval::RetrievalError> for PipelineError {
    fn from(e: crate::retrieval::RetrievalError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<crate::alignment::AlignmentError> for PipelineError {
    fn from(e: crate::alignment::AlignmentError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<crate::summarizer::SummarizerError> for PipelineError {
    fn from(e: crate::summarizer::SummarizerError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<crate::eval::EvalError> for PipelineError {
    fn from(e: crate::eval::EvalError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

/// Exit codes surfaced by the CLI: 1 validation, 2 missing prerequisite,
/// 3 runtime failure.
impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::InvalidConfig(_) => 1,
            PipelineError::MissingPrerequisite { .. } => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentVariant {
    CoarseToFine,
    OnePass,
    OnePassDedup,
    WoIta,
}

impl std::fmt::Display for AlignmentVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AlignmentVariant::CoarseToFine => "coarse_to_fine",
            AlignmentVariant::OnePass => "one_pass",
            AlignmentVariant::OnePassDedup => "one_pass_dedup",
            AlignmentVariant::WoIta => "wo_ita",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    /// Corpus directory; defaults to `<workdir>/corpus`.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    /// Checkpoint directory; defaults to `<workdir>/checkpoints`.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsConfig {
    /// Shared encoder/model width D.
    pub model_dim: usize,
    /// Retrieval similarity space width.
    pub retrieval_dim: usize,
    /// Image encoder depth and heads.
    pub image_layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub retrieval_lr: f64,
    pub retrieval_epochs: usize,
    pub retrieval_batch: usize,
    pub retrieval_margin: f64,
    pub alignment_lr: f64,
    pub alignment_backbone_lr: f64,
    pub alignment_epochs: usize,
    pub alignment_batch_docs: usize,
    pub summarizer_lr: f64,
    pub summarizer_epochs: usize,
    pub summarizer_batch_docs: usize,
    /// Validation-loss checkpointing cadence, in epochs.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub beam_size: usize,
    pub max_doc_len: usize,
    pub max_cap_len: usize,
    pub max_summary_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizerArch {
    pub model_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub dims: DimsConfig,
    pub synth: SyntheticConfig,
    /// Validation/test split sizes for the synth stage (train size comes from
    /// `synth.num_docs`).
    pub valid_docs: usize,
    pub test_docs: usize,
    pub training: TrainingConfig,
    pub decoding: DecodingConfig,
    pub summarizer: SummarizerArch,
    pub variant: AlignmentVariant,
    pub attention: AttentionMode,
    /// Coarse pass at inference: absent → top-n by probability; present →
    /// probability threshold, padded/truncated to min(n, m).
    #[serde(default)]
    pub coarse_threshold: Option<f64>,
    pub seed: u64,
    /// Largest k of the simple-summary experiment table.
    pub simple_summary_max_k: usize,
}

impl PipelineConfig {
    /// A complete desk-scale configuration rooted at `workdir`.
    pub fn desk_default(workdir: &Path) -> Self {
        PipelineConfig {
            paths: PathsConfig { workdir: workdir.to_path_buf(), corpus_dir: None, checkpoint_dir: None },
            dims: DimsConfig { model_dim: 16, retrieval_dim: 16, image_layers: 1, heads: 2 },
            synth: SyntheticConfig {
                num_docs: 200,
                vocab_size: 150,
                sentences_per_doc: (8, 12),
                images_per_doc: (3, 5),
                feature_dim: 16,
                noise_level: 0.1,
                seed: 42,
            },
            valid_docs: 20,
            test_docs: 40,
            training: TrainingConfig {
                retrieval_lr: 1e-2,
                retrieval_epochs: 30,
                retrieval_batch: 32,
                retrieval_margin: 0.2,
                alignment_lr: 1e-2,
                alignment_backbone_lr: 3e-5,
                alignment_epochs: 15,
                alignment_batch_docs: 2,
                summarizer_lr: 3e-3,
                summarizer_epochs: 30,
                summarizer_batch_docs: 4,
                checkpoint_every: 1,
            },
            decoding: DecodingConfig {
                beam_size: 5,
                max_doc_len: 160,
                max_cap_len: 80,
                max_summary_len: 56,
            },
            summarizer: SummarizerArch { model_dim: 32, enc_layers: 2, dec_layers: 2, ff_hidden: 64 },
            variant: AlignmentVariant::CoarseToFine,
            attention: AttentionMode::RowRatio,
            coarse_threshold: None,
            seed: 42,
            simple_summary_max_k: 5,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = self.synth.validate();
        if self.dims.model_dim < 2 {
            out.push("dims.model_dim must be at least 2".into());
        }
        if self.dims.model_dim < self.synth.feature_dim {
            out.push("dims.model_dim must be >= synth.feature_dim (the sentence encoder embeds lexicon space isometrically)".into());
        }
        if self.dims.retrieval_dim == 0 {
            out.push("dims.retrieval_dim must be positive".into());
        }
        if self.dims.image_layers == 0 {
            out.push("dims.image_layers must be at least 1".into());
        }
        if self.dims.heads == 0 || self.dims.model_dim % self.dims.heads != 0 {
            out.push("dims.heads must divide dims.model_dim".into());
        }
        if self.valid_docs == 0 || self.test_docs == 0 {
            out.push("valid_docs and test_docs must be positive".into());
        }
        if self.decoding.beam_size == 0 {
            out.push("decoding.beam_size must be at least 1".into());
        }
        if self.decoding.max_doc_len == 0
            || self.decoding.max_cap_len == 0
            || self.decoding.max_summary_len == 0
        {
            out.push("decoding length caps must be positive".into());
        }
        if self.summarizer.enc_layers == 0 || self.summarizer.dec_layers == 0 {
            out.push("summarizer layer counts must be at least 1".into());
        }
        if self.summarizer.model_dim == 0 || self.summarizer.model_dim % self.dims.heads != 0 {
            out.push("summarizer.model_dim must be positive and divisible by dims.heads".into());
        }
        if self.training.checkpoint_every == 0 {
            out.push("training.checkpoint_every must be at least 1".into());
        }
        if self.simple_summary_max_k == 0 {
            out.push("simple_summary_max_k must be at least 1".into());
        }
        out
    }

    fn validated(&self) -> Result<(), PipelineError> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::InvalidConfig(problems))
        }
    }

    /// Stable hash of the full configuration, embedded in every artifact.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization cannot fail");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.corpus_dir.clone().unwrap_or_else(|| self.paths.workdir.join("corpus"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.paths
            .checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.paths.workdir.join("checkpoints"))
    }

    pub fn corpus_path(&self, split: Split) -> PathBuf {
        self.corpus_dir().join(format!("{split}.jsonl"))
    }

    pub fn labels_path(&self, split: Split) -> PathBuf {
        self.paths.workdir.join("labels").join(format!("{split}.jsonl"))
    }

    pub fn alignments_path(&self, split: Split) -> PathBuf {
        self.paths.workdir.join("alignments").join(format!("{split}.jsonl"))
    }

    pub fn summaries_path(&self) -> PathBuf {
        self.paths.workdir.join("summaries").join("test.jsonl")
    }

    pub fn selections_path(&self) -> PathBuf {
        self.paths.workdir.join("selections").join("test.jsonl")
    }

    pub fn retrieval_ckpt(&self) -> PathBuf {
        self.checkpoint_dir().join("retrieval.ckpt")
    }

    pub fn alignment_ckpt(&self) -> PathBuf {
        self.checkpoint_dir().join("alignment.ckpt")
    }

    pub fn summarizer_ckpt(&self) -> PathBuf {
        self.checkpoint_dir().join("summarizer.ckpt")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.workdir.join("reports")
    }

    fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            dim_r: self.dims.retrieval_dim,
            margin: self.training.retrieval_margin,
            lr: self.training.retrieval_lr,
            epochs: self.training.retrieval_epochs,
            batch_size: self.training.retrieval_batch,
            seed: self.seed,
        }
    }

    fn alignment_config(&self) -> AlignmentConfig {
        AlignmentConfig {
            attention: self.attention,
            rouge_variant: RougeVariant::RougeL,
            lr: self.training.alignment_lr,
            backbone_lr: self.training.alignment_backbone_lr,
            epochs: self.training.alignment_epochs,
            batch_docs: self.training.alignment_batch_docs,
            init_jitter: 0.02,
            coarse_threshold: self.coarse_threshold,
            seed: self.seed,
        }
    }

    fn summarizer_config(&self) -> SummarizerConfig {
        SummarizerConfig {
            model_dim: self.summarizer.model_dim,
            heads: self.dims.heads,
            ff_hidden: self.summarizer.ff_hidden,
            enc_layers: self.summarizer.enc_layers,
            dec_layers: self.summarizer.dec_layers,
            max_doc_len: self.decoding.max_doc_len,
            max_cap_len: self.decoding.max_cap_len,
            max_summary_len: self.decoding.max_summary_len,
            lr: self.training.summarizer_lr,
            epochs: self.training.summarizer_epochs,
            batch_docs: self.training.summarizer_batch_docs,
            seed: self.seed,
        }
    }

    fn fresh_encoders(&self) -> EncoderStack {
        EncoderStack::new(
            self.synth.feature_dim,
            self.dims.model_dim,
            self.dims.image_layers,
            self.dims.heads,
            self.seed,
        )
    }
}

fn require(path: &Path, producer: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingPrerequisite {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        })
    }
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn load_split(config: &PipelineConfig, split: Split, producer: &str) -> Result<DocumentSet, PipelineError> {
    let path = config.corpus_path(split);
    require(&path, producer)?;
    Ok(load_corpus(&path, split)?.set)
}

/// Generates the three corpus splits.
pub fn cmd_synth(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    for (split, docs) in [
        (Split::Train, config.synth.num_docs),
        (Split::Valid, config.valid_docs),
        (Split::Test, config.test_docs),
    ] {
        let mut synth = config.synth.clone();
        synth.num_docs = docs;
        let set = generate_synthetic(&synth, split)?;
        let path = config.corpus_path(split);
        ensure_parent(&path)?;
        save_corpus(&set, &path)?;
    }
    Ok(())
}

// Checkpoint helpers: tensors are stored by deterministic parameter order.

fn export_params(ckpt: &mut Checkpoint, prefix: &str, params: Vec<&crate::mat::Mat>) {
    for (i, value) in params.into_iter().enumerate() {
        ckpt.insert(&format!("{prefix}.{i:03}"), value.clone());
    }
}

fn import_params(
    ckpt: &Checkpoint,
    prefix: &str,
    params: Vec<&mut crate::nn::Param>,
) -> Result<(), PipelineError> {
    for (i, param) in params.into_iter().enumerate() {
        let tensor = ckpt.tensor(&format!("{prefix}.{i:03}"))?;
        param.load(tensor.clone());
    }
    Ok(())
}

fn snapshot<'a>(params: impl IntoIterator<Item = &'a mut crate::nn::Param>) -> Vec<&'a crate::mat::Mat> {
    params.into_iter().map(|p| &p.value as &crate::mat::Mat).collect()
}

/// Trains the retrieval heads on the generator's (image, caption) pairs.
pub fn cmd_train_retrieval(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    let train = load_split(config, Split::Train, "synth")?;
    let encoders = config.fresh_encoders();
    let pairs = pairs_from_documents(&train.documents);
    let model = train_retrieval(&pairs, &encoders, &config.retrieval_config())?;

    let manifest = Manifest::new("retrieval", config.seed, &config.config_hash())
        .with_dim("dim_r", config.dims.retrieval_dim)
        .with_dim("margin", config.training.retrieval_margin)
        .with_dim("model_dim", config.dims.model_dim)
        .with_dim("feature_dim", config.synth.feature_dim);
    let mut ckpt = Checkpoint::new(manifest);
    let mut model = model;
    export_params(&mut ckpt, "retrieval", snapshot(model.params_mut()));
    let path = config.retrieval_ckpt();
    ensure_parent(&path)?;
    ckpt.save(&path)?;
    Ok(())
}

fn load_retrieval(config: &PipelineConfig) -> Result<RetrievalModel, PipelineError> {
    let path = config.retrieval_ckpt();
    require(&path, "train-retrieval")?;
    let ckpt = Checkpoint::load(&path)?;
    ckpt.expect_kind("retrieval")?;
    let mut model = RetrievalModel::new(
        config.synth.feature_dim,
        config.dims.model_dim,
        &config.retrieval_config(),
    );
    import_params(&ckpt, "retrieval", model.params_mut())?;
    Ok(model)
}

/// Retrieves reference captions from golden summaries and builds selection
/// labels for the train and valid splits.
pub fn cmd_build_labels(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    let retrieval = load_retrieval(config)?;
    let encoders = config.fresh_encoders();
    for split in [Split::Train, Split::Valid] {
        let set = load_split(config, split, "synth")?;
        let mut records = Vec::with_capacity(set.len());
        for doc in &set.documents {
            let refs = retrieve_reference_captions(doc, &retrieval, &encoders)?;
            let labels = build_labels(doc, &refs, RougeVariant::RougeL)?;
            records.push(LabelRecord {
                doc_id: doc.doc_id.clone(),
                references: refs
                    .iter()
                    .enumerate()
                    .map(|(j, r)| ReferenceEntry {
                        image: j,
                        summary_sentence: r.source_index,
                        score: r.score,
                        tokens: r.tokens.clone(),
                    })
                    .collect(),
                labels: labels.y,
            });
        }
        let path = config.labels_path(split);
        ensure_parent(&path)?;
        write_artifact(
            &path,
            &ArtifactManifest::new("labels", &config.config_hash(), config.seed),
            &records,
        )?;
    }
    Ok(())
}

fn load_labels(
    config: &PipelineConfig,
    split: Split,
) -> Result<Vec<LabelRecord>, PipelineError> {
    let path = config.labels_path(split);
    require(&path, "build-labels")?;
    let (_, records) = read_artifact::<LabelRecord>(&path, "labels")?;
    Ok(records)
}

/// Trains the alignment model for the configured variant. `wo_ita` needs no
/// alignment training and returns immediately.
pub fn cmd_train_align(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    if config.variant == AlignmentVariant::WoIta {
        return Ok(());
    }
    let train = load_split(config, Split::Train, "synth")?;
    let valid = load_split(config, Split::Valid, "synth")?;
    let train_labels = load_labels(config, Split::Train)?;
    let valid_labels = load_labels(config, Split::Valid)?;
    let train_refs: Vec<_> = align_refs(&train, &train_labels)?;
    let valid_refs: Vec<_> = align_refs(&valid, &valid_labels)?;

    let mut encoders = config.fresh_encoders();
    let acfg = config.alignment_config();
    let (mut model, _report) = match config.variant {
        AlignmentVariant::CoarseToFine => {
            train_alignment(&train, &train_refs, &valid, &valid_refs, &mut encoders, &acfg)?
        }
        AlignmentVariant::OnePass | AlignmentVariant::OnePassDedup => {
            train_one_pass(&train, &train_refs, &valid, &valid_refs, &mut encoders, &acfg)?
        }
        AlignmentVariant::WoIta => unreachable!(),
    };

    let manifest = Manifest::new("alignment", config.seed, &config.config_hash())
        .with_dim("model_dim", config.dims.model_dim)
        .with_dim("image_layers", config.dims.image_layers)
        .with_dim("variant", config.variant);
    let mut ckpt = Checkpoint::new(manifest);
    export_params(&mut ckpt, "cross", snapshot(model.cross.params_mut()));
    export_params(&mut ckpt, "scorer", snapshot(model.scorer.params_mut()));
    export_params(&mut ckpt, "image", snapshot(encoders.image.params_mut()));
    export_params(&mut ckpt, "sentence", snapshot(encoders.sentence.params_mut()));
    let path = config.alignment_ckpt();
    ensure_parent(&path)?;
    ckpt.save(&path)?;
    Ok(())
}

fn align_refs(
    set: &DocumentSet,
    labels: &[LabelRecord],
) -> Result<Vec<crate::retrieval::ReferenceCaptionSet>, PipelineError> {
    let by_id: BTreeMap<&str, &LabelRecord> =
        labels.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    set.documents
        .iter()
        .map(|doc| {
            by_id
                .get(doc.doc_id.as_str())
                .map(|r| r.reference_caption_set())
                .ok_or_else(|| PipelineError::MissingPrerequisite {
                    path: PathBuf::from(format!("labels for {}", doc.doc_id)),
                    producer: "build-labels".to_string(),
                })
        })
        .collect()
}

fn load_alignment_model(
    config: &PipelineConfig,
) -> Result<(AlignmentModel, EncoderStack), PipelineError> {
    let path = config.alignment_ckpt();
    require(&path, "train-align")?;
    let ckpt = Checkpoint::load(&path)?;
    ckpt.expect_kind("alignment")?;
    let mut model = AlignmentModel {
        cross: CrossAttention::new(
            config.dims.model_dim,
            config.attention,
            0.0,
            &mut crate::rng::seeded(0, "scratch"),
        ),
        scorer: Scorer::new(config.dims.model_dim, &mut crate::rng::seeded(0, "scratch")),
    };
    let mut encoders = config.fresh_encoders();
    import_params(&ckpt, "cross", model.cross.params_mut())?;
    import_params(&ckpt, "scorer", model.scorer.params_mut())?;
    import_params(&ckpt, "image", encoders.image.params_mut())?;
    import_params(&ckpt, "sentence", encoders.sentence.params_mut())?;
    Ok((model, encoders))
}

/// Emits pseudo captions for every split under the configured variant.
pub fn cmd_align(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    let aligner: Box<
        dyn Fn(&crate::corpus::MultimodalDocument) -> Result<AlignmentRecord, PipelineError>,
    > = match config.variant {
        AlignmentVariant::WoIta => {
            let retrieval = load_retrieval(config)?;
            let encoders = config.fresh_encoders();
            Box::new(move |doc| {
                let refs = retrieve_from_document(doc, &retrieval, &encoders)?;
                Ok(AlignmentRecord {
                    doc_id: doc.doc_id.clone(),
                    alignments: refs
                        .iter()
                        .enumerate()
                        .map(|(j, r)| crate::artifacts::AlignmentEntry {
                            image: j,
                            sentence: r.source_index,
                            caption: r.tokens.clone(),
                            weight: r.score,
                        })
                        .collect(),
                })
            })
        }
        variant => {
            let (model, encoders) = load_alignment_model(config)?;
            let coarse_threshold = config.coarse_threshold;
            Box::new(move |doc| {
                let assignment = match variant {
                    AlignmentVariant::CoarseToFine => {
                        align_document_with(doc, &model, &encoders, coarse_threshold)?
                    }
                    AlignmentVariant::OnePass => one_pass_align(doc, &model, &encoders)?,
                    AlignmentVariant::OnePassDedup => {
                        one_pass_dedup_align(doc, &model, &encoders)?
                    }
                    AlignmentVariant::WoIta => unreachable!(),
                };
                Ok(AlignmentRecord::from_assignment(&assignment))
            })
        }
    };

    for split in [Split::Train, Split::Valid, Split::Test] {
        let set = load_split(config, split, "synth")?;
        let mut records = Vec::with_capacity(set.len());
        for doc in &set.documents {
            records.push(aligner(doc)?);
        }
        let path = config.alignments_path(split);
        ensure_parent(&path)?;
        write_artifact(
            &path,
            &ArtifactManifest::new("alignments", &config.config_hash(), config.seed),
            &records,
        )?;
    }
    Ok(())
}

fn load_alignments(
    config: &PipelineConfig,
    split: Split,
) -> Result<(ArtifactManifest, Vec<AlignmentRecord>), PipelineError> {
    let path = config.alignments_path(split);
    require(&path, "align")?;
    Ok(read_artifact::<AlignmentRecord>(&path, "alignments")?)
}

fn summarizer_examples(
    config: &PipelineConfig,
    set: &DocumentSet,
    records: &[AlignmentRecord],
    vocab: &Vocab,
) -> Result<Vec<TrainingExample>, PipelineError> {
    let by_id: BTreeMap<&str, &AlignmentRecord> =
        records.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    let scfg = config.summarizer_config();
    set.documents
        .iter()
        .map(|doc| {
            let record = by_id.get(doc.doc_id.as_str()).ok_or_else(|| {
                PipelineError::MissingPrerequisite {
                    path: PathBuf::from(format!("alignments for {}", doc.doc_id)),
                    producer: "align".to_string(),
                }
            })?;
            Ok(TrainingExample::new(
                &doc.doc_id,
                &doc.sentences,
                &record.pseudo_captions(),
                &doc.golden_summary,
                vocab,
                &scfg,
            )?)
        })
        .collect()
}

/// Trains the dual-source summarizer on golden summaries, conditioning on the
/// document and the aligned pseudo captions.
pub fn cmd_train_summarizer(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    let train = load_split(config, Split::Train, "synth")?;
    let valid = load_split(config, Split::Valid, "synth")?;
    let (_, train_align) = load_alignments(config, Split::Train)?;
    let (_, valid_align) = load_alignments(config, Split::Valid)?;

    let vocab = Vocab::build(train.documents.iter().flat_map(|d| d.sentences.iter()));
    let train_examples = summarizer_examples(config, &train, &train_align, &vocab)?;
    let valid_examples = summarizer_examples(config, &valid, &valid_align, &vocab)?;
    let (mut model, _report) =
        crate::summarizer::train_summarizer(vocab.clone(), &train_examples, &valid_examples, &config.summarizer_config())?;

    let mut manifest = Manifest::new("summarizer", config.seed, &config.config_hash())
        .with_dim("model_dim", config.summarizer_config().model_dim)
        .with_dim("enc_layers", config.summarizer.enc_layers)
        .with_dim("dec_layers", config.summarizer.dec_layers);
    manifest.vocab = vocab.tokens().to_vec();
    let mut ckpt = Checkpoint::new(manifest);
    export_params(&mut ckpt, "summarizer", snapshot(model.params_mut()));
    let path = config.summarizer_ckpt();
    ensure_parent(&path)?;
    ckpt.save(&path)?;
    Ok(())
}

fn load_summarizer(config: &PipelineConfig) -> Result<SummarizerModel, PipelineError> {
    let path = config.summarizer_ckpt();
    require(&path, "train-summarizer")?;
    let ckpt = Checkpoint::load(&path)?;
    ckpt.expect_kind("summarizer")?;
    let vocab = Vocab::from_tokens(ckpt.manifest.vocab.clone());
    let mut model = SummarizerModel::new(vocab, config.summarizer_config());
    import_params(&ckpt, "summarizer", model.params_mut())?;
    Ok(model)
}

/// Beam-decodes summaries for the test split.
pub fn cmd_summarize(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    let test = load_split(config, Split::Test, "synth")?;
    let (_, alignments) = load_alignments(config, Split::Test)?;
    let model = load_summarizer(config)?;
    let by_id: BTreeMap<&str, &AlignmentRecord> =
        alignments.iter().map(|r| (r.doc_id.as_str(), r)).collect();

    let scfg = config.summarizer_config();
    let mut records = Vec::with_capacity(test.len());
    for doc in &test.documents {
        let record = by_id.get(doc.doc_id.as_str()).ok_or_else(|| {
            PipelineError::MissingPrerequisite {
                path: PathBuf::from(format!("alignments for {}", doc.doc_id)),
                producer: "align".to_string(),
            }
        })?;
        let inputs = crate::summarizer::DualSourceInputs::new(
            &doc.sentences,
            &record.pseudo_captions(),
            &model.vocab,
            &scfg,
        )?;
        let output = summarize(&model, &inputs, config.decoding.beam_size, true)
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
        records.push(SummaryRecord::from_output(&doc.doc_id, &output));
    }
    let path = config.summaries_path();
    ensure_parent(&path)?;
    write_artifact(
        &path,
        &ArtifactManifest::new("summaries", &config.config_hash(), config.seed),
        &records,
    )?;
    Ok(())
}

/// Selects the salient image per document by caption/summary ROUGE-L.
pub fn cmd_select(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validated()?;
    let (_, alignments) = load_alignments(config, Split::Test)?;
    let summaries_path = config.summaries_path();
    require(&summaries_path, "summarize")?;
    let (_, summaries) = read_artifact::<SummaryRecord>(&summaries_path, "summaries")?;
    let by_id: BTreeMap<&str, &SummaryRecord> =
        summaries.iter().map(|r| (r.doc_id.as_str(), r)).collect();

    let mut records = Vec::new();
    for alignment in &alignments {
        let Some(summary) = by_id.get(alignment.doc_id.as_str()) else {
            continue;
        };
        let selection =
            select_image(&alignment.pseudo_captions(), &(*summary).clone().into_output())?;
        records.push(SelectionRecord { doc_id: alignment.doc_id.clone(), selection });
    }
    let path = config.selections_path();
    ensure_parent(&path)?;
    write_artifact(
        &path,
        &ArtifactManifest::new("selections", &config.config_hash(), config.seed),
        &records,
    )?;
    Ok(())
}

/// Full evaluation: metric report plus the simple-summary experiment table.
pub fn cmd_evaluate(config: &PipelineConfig, allow_mixed: bool) -> Result<MetricsReport, PipelineError> {
    config.validated()?;
    let test = load_split(config, Split::Test, "synth")?;
    let (align_manifest, alignments) = load_alignments(config, Split::Test)?;
    let summaries_path = config.summaries_path();
    require(&summaries_path, "summarize")?;
    let (summary_manifest, summaries) =
        read_artifact::<SummaryRecord>(&summaries_path, "summaries")?;
    let selections_path = config.selections_path();
    require(&selections_path, "select")?;
    let (selection_manifest, selections) =
        read_artifact::<SelectionRecord>(&selections_path, "selections")?;

    let mut hashes: Vec<String> = vec![
        align_manifest.config_hash.clone(),
        summary_manifest.config_hash.clone(),
        selection_manifest.config_hash.clone(),
    ];
    hashes.dedup();
    if hashes.len() > 1 && !allow_mixed {
        return Err(PipelineError::MixedConfigHashes { found: hashes });
    }

    let retrieval = load_retrieval(config)?;
    let encoders = config.fresh_encoders();

    let alignment_map: BTreeMap<String, _> = alignments
        .iter()
        .map(|r| (r.doc_id.clone(), r.clone().into_assignment()))
        .collect();
    let summary_map: BTreeMap<String, _> = summaries
        .iter()
        .map(|r| (r.doc_id.clone(), r.clone().into_output()))
        .collect();
    let selection_map: BTreeMap<String, _> =
        selections.iter().map(|r| (r.doc_id.clone(), r.selection.clone())).collect();

    let report = evaluate_run(
        &test.documents,
        &alignment_map,
        &summary_map,
        &selection_map,
        &retrieval,
        &encoders,
    );

    let reports = config.reports_dir();
    std::fs::create_dir_all(&reports)?;
    std::fs::write(
        reports.join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail"),
    )?;
    std::fs::write(reports.join("metrics.txt"), report.human_summary())?;

    // Simple-summary experiment: pseudo captions vs golden captions.
    let pseudo: Vec<Vec<Vec<String>>> = test
        .documents
        .iter()
        .map(|doc| {
            alignment_map
                .get(&doc.doc_id)
                .map(|a| a.pseudo_captions.clone())
                .unwrap_or_default()
        })
        .collect();
    let golden: Vec<Vec<Vec<String>>> = test
        .documents
        .iter()
        .map(|doc| doc.golden_captions.clone().unwrap_or_default())
        .collect();
    let pseudo_rows =
        simple_summary_experiment(&test.documents, &pseudo, config.simple_summary_max_k)?;
    let golden_rows =
        simple_summary_experiment(&test.documents, &golden, config.simple_summary_max_k)?;
    let mut table = String::from(
        "source\tk\trouge1_p\trouge1_r\trouge1_f\trouge2_p\trouge2_r\trouge2_f\trougeL_p\trougeL_r\trougeL_f\tdocs\tshort_docs\n",
    );
    for (source, rows) in [("pseudo", &pseudo_rows), ("golden", &golden_rows)] {
        for row in rows {
            table.push_str(&format!(
                "{source}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
                row.k,
                row.rouge1.precision,
                row.rouge1.recall,
                row.rouge1.f1,
                row.rouge2.precision,
                row.rouge2.recall,
                row.rouge2.f1,
                row.rouge_l.precision,
                row.rouge_l.recall,
                row.rouge_l.f1,
                row.docs_counted,
                row.docs_short,
            ));
        }
    }
    std::fs::write(reports.join("simple_summary.tsv"), table)?;
    Ok(report)
}

/// Runs every stage in order.
pub fn cmd_pipeline(config: &PipelineConfig) -> Result<MetricsReport, PipelineError> {
    cmd_synth(config)?;
    cmd_train_retrieval(config)?;
    cmd_build_labels(config)?;
    cmd_train_align(config)?;
    cmd_align(config)?;
    cmd_train_summarizer(config)?;
    cmd_summarize(config)?;
    cmd_select(config)?;
    cmd_evaluate(config, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_lists_every_violation() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = PipelineConfig::desk_default(dir.path());
        config.dims.retrieval_dim = 0;
        config.decoding.beam_size = 0;
        config.valid_docs = 0;
        let problems = config.validate();
        assert!(problems.len() >= 3, "{problems:?}");
        let err = cmd_synth(&config).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn stages_fail_with_actionable_prerequisite_errors() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::desk_default(dir.path());
        // align before anything exists → the missing piece is train-align
        // (checkpoint checked first under the default variant).
        let err = cmd_align(&config).unwrap_err();
        match &err {
            PipelineError::MissingPrerequisite { producer, .. } => {
                assert_eq!(producer, "train-align");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.exit_code(), 2);

        let err = cmd_train_retrieval(&config).unwrap_err();
        match &err {
            PipelineError::MissingPrerequisite { producer, .. } => assert_eq!(producer, "synth"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::desk_default(dir.path());
        let a = config.config_hash();
        let b = config.config_hash();
        assert_eq!(a, b);
        let mut other = config.clone();
        other.seed += 1;
        assert_ne!(a, other.config_hash());
    }
}
