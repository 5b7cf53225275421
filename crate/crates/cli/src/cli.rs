use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "morphproj", version, about = "Cross-lingual morphological tag projection")]
pub struct Cli {
    /// Worker threads; 1 runs everything sequentially. Outputs do not depend on it.
    #[arg(long, global = true, env = "MORPHPROJ_THREADS")]
    pub threads: Option<usize>,

    /// File of `key=value` lines supplying defaults for flags not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// More log output (repeatable). `RUST_LOG` takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align a bitext with Model 1 in both directions.
    Align(AlignArgs),
    /// Project source tags through alignments into a type dictionary and training lattices.
    Project(ProjectArgs),
    /// Induce word clusters with the exchange algorithm.
    Cluster(ClusterArgs),
    /// Train a tagger from projected, oracle or gold constraints.
    Train(TrainArgs),
    /// Train a tagger on an annotated corpus.
    SupervisedTrain(SupervisedArgs),
    /// Tag text with a trained model.
    Tag(TagArgs),
    /// Score predictions against gold annotation.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Align(_) => "align",
            Command::Project(_) => "project",
            Command::Cluster(_) => "cluster",
            Command::Train(_) => "train",
            Command::SupervisedTrain(_) => "supervised-train",
            Command::Tag(_) => "tag",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    /// Bitext, one `source ||| target` pair per line.
    #[arg(long)]
    pub bitext: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Drop pairs with a side longer than this; 0 keeps everything.
    #[arg(long, default_value_t = 80)]
    pub max_sentence_len: usize,
    #[arg(long)]
    pub out_forward: PathBuf,
    #[arg(long)]
    pub out_reverse: PathBuf,
    /// The pairs that survived filtering, line-aligned with the alignment files.
    #[arg(long)]
    pub out_bitext: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Constraints {
    #[serde(rename = "type")]
    Type,
    #[value(name = "type+token")]
    #[serde(rename = "type+token")]
    TypeToken,
    #[serde(rename = "unambiguous")]
    Unambiguous,
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "gold")]
    Gold,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    /// Bitext the alignments were computed on (see `align --out-bitext`).
    #[arg(long)]
    pub bitext: PathBuf,
    /// Tagged source side in CoNLL-U, one sentence per bitext line.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub forward: PathBuf,
    #[arg(long)]
    pub reverse: PathBuf,
    /// Minimum link posterior in both directions.
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    /// Minimum tag probability for a dictionary entry.
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = Constraints::Type)]
    pub constraints: Constraints,
    /// Target-token budget for the lattice corpus, in whole sentences.
    #[arg(long, default_value_t = 2_000_000)]
    pub max_tokens: usize,
    #[arg(long)]
    pub out_dictionary: PathBuf,
    #[arg(long)]
    pub out_lattices: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TextFormat {
    /// One tokenized sentence per line.
    Raw,
    Conllu,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = TextFormat::Raw)]
    pub format: TextFormat,
    #[arg(long, default_value_t = 256)]
    pub num_clusters: usize,
    /// Cluster only this many of the most frequent words.
    #[arg(long, default_value_t = 100_000)]
    pub max_words: usize,
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Wsabie,
    Hmm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Harmonic,
    Uniform,
}

#[derive(Debug, Args)]
pub struct WsabieOpts {
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    /// Column norm cap for both embedding matrices.
    #[arg(long, default_value_t = 1.0)]
    pub norm_cap: f64,
    #[arg(long, value_enum, default_value_t = Weighting::Harmonic)]
    pub weighting: Weighting,
    /// Words on each side whose embeddings are concatenated.
    #[arg(long, default_value_t = 5)]
    pub context: usize,
    /// Words on each side whose clusters are features.
    #[arg(long, default_value_t = 1)]
    pub cluster_window: usize,
}

#[derive(Debug, Args)]
pub struct HmmOpts {
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 10)]
    pub lbfgs_memory: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Relative objective change at which L-BFGS stops.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Words seen at most this often share signature classes.
    #[arg(long, default_value_t = 1)]
    pub rare_threshold: usize,
    /// Drop the shared POS-pair transition weights.
    #[arg(long)]
    pub no_pos_pairs: bool,
    /// Drop the digit and capitalisation emission features.
    #[arg(long)]
    pub no_shape_features: bool,
}

#[derive(Debug, Args)]
pub struct FeatureInputs {
    /// Word embeddings, one `word v1 ... vD` line each (ranking tagger only).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Word clusters, one `word<TAB>id` line each.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelOpts {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub wsabie: WsabieOpts,
    #[command(flatten)]
    pub hmm: HmmOpts,
    #[command(flatten)]
    pub features: FeatureInputs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Defaults to the mode recorded in `--lattices`.
    #[arg(long, value_enum)]
    pub constraints: Option<Constraints>,
    /// Lattice corpus from `project` (type, type+token, unambiguous).
    #[arg(long)]
    pub lattices: Option<PathBuf>,
    /// Annotated target corpus (oracle dictionary or gold supervision).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Raw target text to train on with the oracle dictionary.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Training-token budget, in whole sentences.
    #[arg(long, default_value_t = 2_000_000)]
    pub max_tokens: usize,
    #[command(flatten)]
    pub model: ModelOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SupervisedArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Keep gold tags for only the first N tokens, in corpus order.
    #[arg(long)]
    pub first_n_tokens: Option<usize>,
    /// Comma-separated attribute types to keep; others are stripped.
    #[arg(long, value_delimiter = ',')]
    pub restrict_attributes: Option<Vec<String>>,
    #[command(flatten)]
    pub model: ModelOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TagArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = TextFormat::Raw)]
    pub format: TextFormat,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Restrict the HMM's decoding to this type dictionary.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    Intersected,
    Pos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Average over attribute types seen in gold or predictions.
    Observed,
    /// Average over every type shared by the training corpora.
    Shared,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub predicted: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Standard)]
    pub mode: Mode,
    /// Source-language training corpus, for the shared attribute sets.
    #[arg(long)]
    pub source_train: Option<PathBuf>,
    /// Target-language training corpus, for the shared sets and POS remapping.
    #[arg(long)]
    pub target_train: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Scope::Observed)]
    pub scope: Scope,
    #[arg(long)]
    pub out: PathBuf,
}
