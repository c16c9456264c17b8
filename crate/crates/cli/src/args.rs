use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tensorframe::equiharness::Mode;
use tensorframe::molgraph::Split;
use tensorframe::svtnet::Variant;
use tensorframe::trainer::Metric;

/// Local-frame equivariant polarizability models: data generation, training,
/// evaluation and equivariance checks.
#[derive(Debug, Parser)]
#[command(name = "tensorframe", version)]
pub struct Cli {
    /// Worker threads [default: all cores]. `--threads 1` is fully serial and
    /// bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// File of `key=value` lines supplying defaults for the subcommand's
    /// flags; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that relative dataset paths are resolved against.
    #[arg(long, global = true, env = "TENSORFRAME_DATA_DIR", value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn data_path(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with bond-additive polarizability targets.
    GenSynthetic(GenArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Metric table of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Model or pipeline equivariance report; exit code 1 if the mean
    /// relative error is not below the threshold.
    CheckEquivariance(EquiArgs),
    /// Dump the local frames of one molecule.
    InspectFrames(InspectArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub min_atoms: usize,
    #[arg(long, default_value_t = 16)]
    pub max_atoms: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = Variant::Tensorial)]
    pub model: Variant,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    /// Scalar channels [default: 128 tensorial, 331 scalar].
    #[arg(long)]
    pub cs: Option<usize>,
    /// Vector channels [default: 4 tensorial, 0 scalar].
    #[arg(long)]
    pub cv: Option<usize>,
    /// Tensor channels [default: 32 tensorial, 0 scalar].
    #[arg(long)]
    pub ct: Option<usize>,
    /// Å
    #[arg(long, default_value_t = 4.0)]
    pub cutoff: f64,
    /// Fixed output multiplier, bohr³ [default: mean per-atom isotropic
    /// polarizability of the training split].
    #[arg(long)]
    pub output_scale: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = Metric::Tensor)]
    pub loss: Metric,
    /// Seeds initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds the grouped 80/10/10 train/val/test split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Validate every N epochs.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Per-epoch history: epoch, train loss, validation tensor/trace/aniso/frob.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    All,
    One(Split),
}

impl std::str::FromStr for SplitSel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            Ok(SplitSel::All)
        } else {
            s.parse().map(SplitSel::One)
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: SplitSel,
    /// Split seed [default: the one recorded in the checkpoint].
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EquiArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "model")]
    pub mode: Mode,
    #[arg(long, default_value_t = 64)]
    pub rotations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pass bound on the mean [default: 1e-6 model, 1e-3 pipeline].
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mol_id: String,
    /// Conformer to pick [default: first record of the molecule].
    #[arg(long)]
    pub conformer: Option<String>,
    /// Å
    #[arg(long, default_value_t = 4.0)]
    pub cutoff: f64,
}
