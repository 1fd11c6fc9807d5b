//! Argument shapes shared by the subcommands.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use eadyn_core::error::Result;
use eadyn_core::influence::WeightParams;
use eadyn_core::instance::{beta_c, Instance};

/// Inverse temperature, given directly or as a fraction of the uniqueness
/// threshold `beta_c(d) = sqrt(2 pi) / d`.
#[derive(Args, Debug)]
pub struct BetaArg {
    /// Inverse temperature.
    #[arg(long, conflicts_with = "beta_frac")]
    pub beta: Option<f64>,
    /// Inverse temperature as a multiple of beta_c(d) = sqrt(2 pi) / d.
    #[arg(long)]
    pub beta_frac: Option<f64>,
}

impl BetaArg {
    pub fn resolve(&self, d: f64) -> Result<f64> {
        match (self.beta, self.beta_frac) {
            (Some(b), None) => Ok(b),
            (None, Some(f)) => Ok(f * beta_c(d)),
            _ => Err(eadyn_core::error::Error::invalid(
                "pass exactly one of --beta and --beta-frac",
            )),
        }
    }
}

/// Structural radii. Defaults come from the size formulas at the instance's
/// n and the chosen d; each flag overrides one radius and is echoed into
/// the manifest.
#[derive(Args, Debug, Default)]
pub struct RadiiArgs {
    /// Max path length examined by the block-vertex predicate.
    #[arg(long)]
    pub block_range: Option<u32>,
    /// Cycles of length up to this count as short (>= 3).
    #[arg(long)]
    pub short_cycle_max_len: Option<u32>,
    /// Radius of the ball grown around each short cycle.
    #[arg(long)]
    pub cycle_buffer_radius: Option<u32>,
    /// Required distance between two short cycles.
    #[arg(long)]
    pub cycle_separation: Option<u32>,
    /// Reach that fails the build around a heavy vertex.
    #[arg(long)]
    pub tree_reach: Option<u32>,
    /// Reach that fails the build around a buffered cycle.
    #[arg(long)]
    pub cycle_reach: Option<u32>,
    /// Cap every radius at a lower bound on the graph diameter.
    #[arg(long)]
    pub cap_at_diameter: bool,
}

impl RadiiArgs {
    pub fn resolve(&self, epsilon: f64, d: f64, instance: &Instance) -> Result<WeightParams> {
        let mut p = WeightParams::from_formulas(epsilon, d, instance.n())?;
        if self.cap_at_diameter {
            p = p.capped_at(instance.graph.diameter_lower_bound());
        }
        if let Some(v) = self.block_range {
            p.block_range = v;
        }
        if let Some(v) = self.short_cycle_max_len {
            p.short_cycle_max_len = v;
        }
        if let Some(v) = self.cycle_buffer_radius {
            p.cycle_buffer_radius = v;
        }
        if let Some(v) = self.cycle_separation {
            p.cycle_separation = v;
        }
        if let Some(v) = self.tree_reach {
            p.tree_reach = v;
        }
        if let Some(v) = self.cycle_reach {
            p.cycle_reach = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of vertices.
    #[arg(long)]
    pub n: usize,
    /// Target mean degree; edges appear independently with p = d / n.
    #[arg(long)]
    pub d: f64,
    #[command(flatten)]
    pub beta: BetaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instance file to write (default: instance.ea in the output dir).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub instance: PathBuf,
    /// Slack parameter in (0, 1) for the weight machinery.
    #[arg(long)]
    pub epsilon: f64,
    /// Degree scale for weights and radii (default: the graph's mean degree).
    #[arg(long)]
    pub d: Option<f64>,
    #[command(flatten)]
    pub radii: RadiiArgs,
    /// Per-vertex CSV to write (default: analysis.csv in the output dir).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PartitionArgs {
    pub instance: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    /// Degree scale for weights and radii (default: the graph's mean degree).
    #[arg(long)]
    pub d: Option<f64>,
    #[command(flatten)]
    pub radii: RadiiArgs,
    /// Partition file to write on success (default: partition.json).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitKind {
    Plus,
    Minus,
    Random,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub instance: PathBuf,
    /// Partition file; runs block dynamics instead of single-site updates.
    #[arg(long, conflicts_with = "glauber")]
    pub partition: Option<PathBuf>,
    /// Single-site heat-bath dynamics (the default).
    #[arg(long)]
    pub glauber: bool,
    #[arg(long)]
    pub steps: u64,
    /// Record a trace row every this many steps.
    #[arg(long, default_value_t = 1)]
    pub stride: u64,
    #[arg(long, value_enum, default_value_t = InitKind::Plus)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV to write (default: trace.csv in the output dir).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CoupleExperiment {
    /// One-step path-coupling trials from adjacent configurations.
    Contraction,
    /// Grand coupling from all-plus and all-minus until the chains meet.
    Coalescence,
}

#[derive(Args, Debug)]
pub struct CoupleArgs {
    pub instance: PathBuf,
    /// Partition file (default: the all-singleton partition).
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub experiment: CoupleExperiment,
    #[arg(long)]
    pub trials: u64,
    /// Step cap per coalescence run (default: ceil(20 n ln n)).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Slack parameter recorded with the singleton fallback partition.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-trial CSV to write (default: couple.csv in the output dir).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SpectralArgs {
    pub instance: PathBuf,
    /// Partition file; diagnoses the block dynamics and checks the
    /// relaxation-time comparison bound against worst-case boundaries.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Total-variation threshold defining the mixing time.
    #[arg(long, default_value_t = 0.367_879_441_171_442_33)]
    pub threshold: f64,
    /// JSON report to write (optional; the report always prints).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HalfNormalArgs {
    /// Number of half-normal terms in the sum.
    #[arg(long)]
    pub terms: u32,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Relative overshoot above the mean.
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PhiArgs {
    #[arg(long, default_value_t = 8.0)]
    pub max_x: f64,
    #[arg(long, default_value_t = 10_001)]
    pub points: usize,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    #[arg(long)]
    pub d: f64,
    #[arg(long)]
    pub epsilon: f64,
    /// Graph size n for the Binomial(n, d/n) degree draw.
    #[arg(long)]
    pub graph_size: u64,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InfluenceMeanArgs {
    #[command(flatten)]
    pub beta: BetaArg,
    #[arg(long)]
    pub d: f64,
    /// Monte Carlo draws cross-checking the quadrature (0 skips the check).
    #[arg(long, default_value_t = 0)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Reduced-size advisory sweep instead of the full configurations.
    #[arg(long)]
    pub quick: bool,
    /// Run a single scenario (1 through 10) instead of all of them.
    #[arg(long)]
    pub criterion: Option<u32>,
    /// Print results as a JSON array instead of one line per scenario.
    #[arg(long)]
    pub json: bool,
}
