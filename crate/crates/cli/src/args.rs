//! Command-line syntax.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rexloop_core::corpus::DEFAULT_MAX_LEN;
use rexloop_core::trigrams::AttributionTarget;
use rexloop_core::workspace::DEFAULT_TOP_K;
use rexloop_core::{Activation, Hyperparams, OtherMode};

#[derive(Debug, Parser)]
#[command(name = "rexloop", version, about = "Relation extraction with distant supervision and trigram review")]
pub struct Cli {
    /// Log debug output, including per-epoch training progress.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label corpus sentences with knowledge-base triples and group them into
    /// entity-pair bags.
    Align(AlignArgs),
    /// Train a ranking CNN on a tagged dataset and write a checkpoint.
    Train(TrainArgs),
    /// Rank the trigrams that drive each relation's score.
    Trigrams(TrigramArgs),
    /// Drop training sentences that contain banned trigrams.
    Filter(FilterArgs),
    /// Score a checkpoint on a labeled test set.
    Eval(EvalArgs),
    /// Create a workspace directory for feedback rounds.
    Init(InitArgs),
    /// Train the next feedback round of a workspace.
    Round(RoundArgs),
    /// Run the HTTP workbench.
    Serve(ServeArgs),
    /// Generate a synthetic dataset with planted trigram signatures.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Triples as `head<TAB>relation<TAB>tail`.
    #[arg(long)]
    pub kb: PathBuf,
    /// Relation schema: one relation per line plus `!negative` and
    /// `!directional` directives.
    #[arg(long)]
    pub schema: PathBuf,
    /// Plain corpus, one sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Sentences with more tokens are skipped.
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Tagged examples output.
    #[arg(long)]
    pub out: PathBuf,
    /// Bag file output [default: <out> with extension `bags.jsonl`].
    #[arg(long)]
    pub bags_out: Option<PathBuf>,
    /// Alignment statistics as JSON.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Tagged training examples.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Bag file from `align`; members must be examples of `--data`.
    #[arg(long, requires = "mil")]
    pub bags: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    /// Per-epoch loss, accuracy and timing as JSON lines.
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Embedded,
    Omitted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Identity,
}

#[derive(Debug, Default, Args)]
pub struct HyperArgs {
    /// JSON file with hyperparameters; missing fields take defaults.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Multi-instance training over entity-pair bags.
    #[arg(long)]
    pub mil: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of convolution filters.
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub pos_dim: Option<usize>,
    /// Relative-position clipping distance.
    #[arg(long)]
    pub clip: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Words seen fewer times map to the unknown token.
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub other_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
}

impl HyperArgs {
    /// Applies the flags on top of `base`.
    pub fn apply(&self, base: Hyperparams) -> Hyperparams {
        let mut h = base;
        h.mil |= self.mil;
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { h.$field = v; })*
            };
        }
        set!(epochs => epochs, seed => seed, lr => learning_rate, filters => filters,
             word_dim => word_dim, pos_dim => pos_dim, clip => clip, max_len => max_len,
             min_count => min_count, init_scale => init_scale);
        if let Some(mode) = self.other_mode {
            h.other_mode = match mode {
                ModeArg::Embedded => OtherMode::Embedded,
                ModeArg::Omitted => OtherMode::Omitted,
            };
        }
        if let Some(act) = self.activation {
            h.activation = match act {
                ActivationArg::Tanh => Activation::Tanh,
                ActivationArg::Identity => Activation::Identity,
            };
        }
        h
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Gold,
    Predicted,
}

impl From<TargetArg> for AttributionTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Gold => AttributionTarget::Gold,
            TargetArg::Predicted => AttributionTarget::Predicted,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrigramArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tagged examples to attribute.
    #[arg(long)]
    pub data: PathBuf,
    /// Trigrams kept per relation.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Attribute to the gold class or to the predicted class.
    #[arg(long, value_enum, default_value = "gold")]
    pub target: TargetArg,
    /// Ranked trigrams as JSON lines; a table goes to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Banned trigrams as `relation<TAB>w1 w2 w3`; `*` bans for every relation.
    #[arg(long)]
    pub banned: PathBuf,
    /// Schema for reading bare labels; without it they are read verbatim.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Removal counts as JSON.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Metrics as JSON; a table goes to stdout either way.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Correct/wrong shares per sentence-length bucket as CSV.
    #[arg(long)]
    pub length_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub bucket_width: usize,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Directory to create; its name is the workspace id.
    #[arg(long)]
    pub workspace: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Trigrams kept per relation and round.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct RoundArgs {
    #[arg(long)]
    pub workspace: PathBuf,
    /// Banned trigrams for this round; without it the recorded verdicts
    /// apply. The baseline round is trained first when missing.
    #[arg(long)]
    pub banned: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "REXLOOP_PORT", default_value_t = rexloop_service::DEFAULT_PORT)]
    pub port: u16,
    /// Directory holding one subdirectory per workspace.
    #[arg(long, env = "REXLOOP_DATA_DIR")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub relations: usize,
    /// Planted signature trigrams per relation.
    #[arg(long, default_value_t = 3)]
    pub signatures: usize,
    /// Training sentences per relation; the test set gets half.
    #[arg(long, default_value_t = 32)]
    pub per_relation: usize,
    /// Training sentences of the negative class; the test set gets half.
    #[arg(long, default_value_t = 40)]
    pub negatives: usize,
    /// Sentences per entity pair.
    #[arg(long, default_value_t = 1)]
    pub bag_size: usize,
    /// Share of bags whose members, except one, carry another relation's
    /// signature.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Relation that receives decoy sentences.
    #[arg(long)]
    pub decoy_relation: Option<usize>,
    #[arg(long, default_value_t = 40, requires = "decoy_relation")]
    pub decoy_sentences: usize,
    /// Share of other sentences that also carry the decoy phrase.
    #[arg(long, default_value_t = 0.5, requires = "decoy_relation")]
    pub decoy_background: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_base_hyperparameters() {
        let cli = Cli::try_parse_from([
            "rexloop", "train", "--data", "d", "--schema", "s", "--checkpoint-out", "c", "--epochs", "0", "--lr", "0.5",
            "--other-mode", "embedded", "--mil",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else {
            panic!("parsed the wrong subcommand");
        };
        let h = args.hyper.apply(Hyperparams::desk());
        assert_eq!(h.epochs, 0);
        assert_eq!(h.learning_rate, 0.5);
        assert_eq!(h.other_mode, OtherMode::Embedded);
        assert!(h.mil);
        assert_eq!(h.filters, Hyperparams::desk().filters);
    }

    #[test]
    fn bags_require_mil() {
        let err = Cli::try_parse_from([
            "rexloop", "train", "--data", "d", "--schema", "s", "--checkpoint-out", "c", "--bags", "b",
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn serve_port_defaults() {
        let cli = Cli::try_parse_from(["rexloop", "serve", "--data-dir", "x"]).unwrap();
        let Command::Serve(args) = cli.command else {
            panic!("parsed the wrong subcommand");
        };
        assert_eq!(args.port, rexloop_service::DEFAULT_PORT);
    }
}
