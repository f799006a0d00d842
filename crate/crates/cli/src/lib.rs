//! Library half of the `pictsum` binary: config loading with environment
//! overrides, subcommand dispatch, and exit-code mapping. Lives in a lib so
//! integration tests can drive the same code paths the binary runs.

use pictsum_core::pipeline::{
    cmd_align, cmd_build_labels, cmd_evaluate, cmd_pipeline, cmd_select, cmd_summarize,
    cmd_synth, cmd_train_align, cmd_train_retrieval, cmd_train_summarizer, AlignmentVariant,
    PipelineConfig, PipelineError,
};
use std::path::{Path, PathBuf};

/// Environment variable overriding `paths.workdir` (paths only, by design).
pub const ENV_WORKDIR: &str = "PICTSUM_WORKDIR";
/// Environment variable overriding `paths.corpus_dir`.
pub const ENV_CORPUS_DIR: &str = "PICTSUM_CORPUS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantArg {
    CoarseToFine,
    OnePass,
    OnePassDedup,
    WoIta,
}

impl From<VariantArg> for AlignmentVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::CoarseToFine => AlignmentVariant::CoarseToFine,
            VariantArg::OnePass => AlignmentVariant::OnePass,
            VariantArg::OnePassDedup => AlignmentVariant::OnePassDedup,
            VariantArg::WoIta => AlignmentVariant::WoIta,
        }
    }
}

#[derive(Debug, clap::Parser)]
#[command(
    name = "pictsum",
    about = "Coarse-to-fine image-text alignment pipeline for multimodal summarization",
    version
)]
pub struct Cli {
    /// TOML pipeline configuration. Without it, the built-in desk-scale
    /// defaults are used (workdir required via --workdir or PICTSUM_WORKDIR).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured working directory.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Overrides the configured alignment variant.
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus splits.
    Synth,
    /// Train the cross-modal retrieval heads.
    TrainRetrieval,
    /// Retrieve reference captions from golden summaries and build labels.
    BuildLabels,
    /// Train the alignment model for the configured variant.
    TrainAlign,
    /// Emit pseudo captions for every split.
    Align,
    /// Train the dual-source summarizer.
    TrainSummarizer,
    /// Beam-decode summaries for the test split.
    Summarize,
    /// Select the salient image per test document.
    Select,
    /// Produce the metrics report and the simple-summary table.
    Evaluate {
        /// Accept artifacts whose config hashes differ.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Run every stage in order.
    Pipeline,
    /// Validate the configuration and print its hash.
    CheckConfig,
}

/// Loads the config file (or desk defaults), then applies flag and
/// environment overrides. Environment variables override file paths only;
/// flags take precedence over both.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| {
                PipelineError::InvalidConfig(vec![format!(
                    "cannot read config {}: {e}",
                    path.display()
                )])
            })?;
            toml::from_str::<PipelineConfig>(&raw).map_err(|e| {
                PipelineError::InvalidConfig(vec![format!(
                    "cannot parse config {}: {e}",
                    path.display()
                )])
            })?
        }
        None => {
            let workdir = cli
                .workdir
                .clone()
                .or_else(|| std::env::var_os(ENV_WORKDIR).map(PathBuf::from))
                .ok_or_else(|| {
                    PipelineError::InvalidConfig(vec![
                        "no config file given; provide --config, or --workdir / PICTSUM_WORKDIR for the built-in defaults".into(),
                    ])
                })?;
            PipelineConfig::desk_default(&workdir)
        }
    };
    if let Some(dir) = std::env::var_os(ENV_WORKDIR) {
        config.paths.workdir = PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os(ENV_CORPUS_DIR) {
        config.paths.corpus_dir = Some(PathBuf::from(dir));
    }
    if let Some(workdir) = &cli.workdir {
        config.paths.workdir = workdir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(variant) = cli.variant {
        config.variant = variant.into();
    }
    Ok(config)
}

/// Runs one subcommand; the Err carries the documented exit code.
pub fn run(cli: &Cli) -> Result<(), PipelineError> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&config)?,
        Command::TrainRetrieval => cmd_train_retrieval(&config)?,
        Command::BuildLabels => cmd_build_labels(&config)?,
        Command::TrainAlign => {
            if config.variant == AlignmentVariant::WoIta {
                println!("variant wo_ita retrieves captions directly; no alignment training needed");
            }
            cmd_train_align(&config)?;
        }
        Command::Align => cmd_align(&config)?,
        Command::TrainSummarizer => cmd_train_summarizer(&config)?,
        Command::Summarize => cmd_summarize(&config)?,
        Command::Select => cmd_select(&config)?,
        Command::Evaluate { allow_mixed } => {
            let report = cmd_evaluate(&config, *allow_mixed)?;
            print!("{}", report.human_summary());
            println!("reports written under {}", config.reports_dir().display());
        }
        Command::Pipeline => {
            let report = cmd_pipeline(&config)?;
            print!("{}", report.human_summary());
            println!("reports written under {}", config.reports_dir().display());
        }
        Command::CheckConfig => {
            let problems = config.validate();
            if !problems.is_empty() {
                return Err(PipelineError::InvalidConfig(problems));
            }
            println!("config ok; hash {}", config.config_hash());
        }
    }
    Ok(())
}

/// Writes the fully resolved desk-default config as TOML, for bootstrapping
/// config files.
pub fn default_config_toml(workdir: &Path) -> String {
    toml::to_string_pretty(&PipelineConfig::desk_default(workdir))
        .expect("config serialization cannot fail")
}
