//! Command-line front end for `lesionkit`.
//!
//! Every subcommand writes its outputs atomically and leaves a JSON run
//! manifest next to them (`<output>.run.json`, or `run.json` inside an output
//! directory). `lesionkit rerun <manifest>` repeats the run and checks that
//! the outputs are byte-identical.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionkit::Connectivity;
use serde::Serialize;

mod cmd;
pub mod runlog;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "lesionkit", version, about = "Small-lesion segmentation label tooling")]
pub struct Cli {
    /// Worker threads for per-case parallelism (0 = all cores).
    #[arg(long, global = true, env = "LESIONKIT_WORKERS", default_value_t = 0)]
    pub workers: usize,

    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub run_manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Relabel a binary mask into size (msl) or distance (dbl) categories.
    Relabel(RelabelArgs),
    /// Turn a probability volume, probability map or label mask into a binary mask.
    Binarize(BinarizeArgs),
    /// Fuse MSL and DBL predictions inside small candidate components.
    Ensemble(EnsembleArgs),
    /// Drop small components whose peak probability is below a threshold.
    Postprocess(PostprocessArgs),
    /// Voxel-wise Dice and lesion-wise detection scores.
    Evaluate(EvaluateArgs),
    /// Lesion and voxel counts per category over a set of masks.
    Stats(StatsArgs),
    /// Assign cases to k folds with balanced lesion volume.
    Split(SplitArgs),
    /// Draw a random and a lesion-centred patch.
    Sample(SampleArgs),
    /// Grid search over mixing rate and postprocessing threshold.
    Sweep(SweepArgs),
    /// Generate synthetic cases with MSL-like and DBL-like predictions.
    Synth(SynthArgs),
    /// Repeat a run from its manifest and verify the outputs.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Msl,
    Dbl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitsArg {
    Voxels,
    Mm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchArg {
    AnyOverlap,
    OneToOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    MslDiceCe,
    MslDiceFocal,
    DblDiceCe,
    DblDiceFocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Balanced,
    Random,
}

fn parse_conn(s: &str) -> Result<Connectivity, String> {
    s.parse().map_err(|e: lesionkit::Error| e.to_string())
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_triplet(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("{p:?} is not a count")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err(format!("expected three positive values x,y,z, got {s:?}")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConnArg {
    /// Voxel neighbourhood: 6, 18 or 26.
    #[arg(long, default_value = "26", value_parser = parse_conn)]
    #[serde(serialize_with = "ser_conn")]
    pub connectivity: Connectivity,
}

fn ser_conn<S: serde::Serializer>(c: &Connectivity, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u32(c.neighbors())
}

#[derive(Debug, Args, Serialize)]
pub struct RelabelArgs {
    /// Binary lesion mask.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Band thresholds, comma separated (msl default 100,1000,10000; dbl default 2).
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<f64>>,
    #[command(flatten)]
    pub conn: ConnArg,
    /// Distance units for dbl.
    #[arg(long, value_enum, default_value = "voxels")]
    pub units: UnitsArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BinarizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Foreground iff probability is strictly above this.
    #[arg(long, default_value = "0.5", value_parser = parse_unit)]
    pub threshold: f64,
    /// Rescale class probabilities that do not sum to one.
    #[arg(long)]
    pub renormalize: bool,
    /// Also write the foreground probability map.
    #[arg(long)]
    pub foreground: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EnsembleArgs {
    /// MSL prediction: 4D class probabilities or 3D foreground map.
    #[arg(long)]
    pub msl: PathBuf,
    /// DBL prediction: 4D class probabilities or 3D foreground map.
    #[arg(long)]
    pub dbl: PathBuf,
    /// Weight of the MSL map inside small components.
    #[arg(long, default_value = "0.8", value_parser = parse_unit)]
    pub lambda: f64,
    /// Components below this voxel count are fused.
    #[arg(long, default_value_t = 1000)]
    pub cutoff: usize,
    /// Binarization threshold.
    #[arg(long, default_value = "0.5", value_parser = parse_unit)]
    pub threshold: f64,
    #[command(flatten)]
    pub conn: ConnArg,
    #[arg(long)]
    pub renormalize: bool,
    /// Fused foreground probability map.
    #[arg(long)]
    pub fused: Option<PathBuf>,
    /// Binary mask of the fused map.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub mask: PathBuf,
    /// Probabilities the mask came from: 4D class probabilities or 3D map.
    #[arg(long)]
    pub prob: PathBuf,
    /// Minimum peak probability of a kept small component.
    #[arg(long, value_parser = parse_unit, conflicts_with = "scheme")]
    pub threshold: Option<f64>,
    /// Use the tuned threshold of a single-model configuration.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long, default_value_t = 1000)]
    pub cutoff: usize,
    #[command(flatten)]
    pub conn: ConnArg,
    #[arg(long)]
    pub renormalize: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, requires = "gt", conflicts_with = "cases")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Case id for a single --pred/--gt pair.
    #[arg(long, default_value = "case")]
    pub case_id: String,
    /// CSV with columns case_id,pred,gt; paths relative to the CSV.
    #[arg(long, required_unless_present = "pred")]
    pub cases: Option<PathBuf>,
    /// Add an aggregate over cases whose lesions are all below --mini-cutoff.
    #[arg(long)]
    pub mini_subset: bool,
    #[arg(long, default_value_t = 1000)]
    pub mini_cutoff: usize,
    #[arg(long = "match", value_enum, default_value = "any-overlap")]
    pub rule: MatchArg,
    #[command(flatten)]
    pub conn: ConnArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Binary masks.
    #[arg(long, num_args = 1.., conflicts_with = "cases")]
    pub masks: Vec<PathBuf>,
    /// CSV with columns case_id,mask; paths relative to the CSV.
    #[arg(long, required_unless_present = "masks")]
    pub cases: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<f64>>,
    #[command(flatten)]
    pub conn: ConnArg,
    #[arg(long, value_enum, default_value = "voxels")]
    pub units: UnitsArg,
    /// Lesion volume histogram (volume,count).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// CSV with case_id and total_lesion_volume or mask_path.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, short, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "balanced")]
    pub method: SplitMethod,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Patch size x,y,z.
    #[arg(long, default_value = "128,128,128", value_parser = parse_triplet)]
    pub size: [usize; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of patch pairs.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// CSV with columns case_id,msl,dbl,gt; paths relative to the CSV.
    #[arg(long)]
    pub cases: PathBuf,
    /// Mixing rates (default 0, 0.1, ..., 1).
    #[arg(long, value_delimiter = ',', value_parser = parse_unit)]
    pub lambdas: Option<Vec<f64>>,
    /// Postprocessing thresholds (default 0.5, 0.55, ..., 0.95).
    #[arg(long, value_delimiter = ',', value_parser = parse_unit)]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    pub cutoff: usize,
    #[arg(long, default_value = "0.5", value_parser = parse_unit)]
    pub binarize_threshold: f64,
    #[arg(long, default_value_t = 1000)]
    pub mini_cutoff: usize,
    #[arg(long = "match", value_enum, default_value = "any-overlap")]
    pub rule: MatchArg,
    #[command(flatten)]
    pub conn: ConnArg,
    #[arg(long)]
    pub renormalize: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Volume shape x,y,z.
    #[arg(long, default_value = "64,64,64", value_parser = parse_triplet)]
    pub dims: [usize; 3],
    /// Lesions of 10..100 voxels per case.
    #[arg(long, default_value_t = 3)]
    pub tiny: usize,
    /// Lesions of 100..1000 voxels per case.
    #[arg(long, default_value_t = 2)]
    pub small: usize,
    /// Lesions of 1000..4000 voxels per case.
    #[arg(long, default_value_t = 1)]
    pub medium: usize,
    /// Spurious blobs in both predictions.
    #[arg(long, default_value_t = 0)]
    pub false_positives: usize,
    /// Predictions equal to the ground truth.
    #[arg(long)]
    pub clean: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Skip the input and output digest checks.
    #[arg(long)]
    pub no_verify: bool,
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprintln!("lesionkit: {}", one_line(&e.render().to_string()));
                    EXIT_USAGE
                }
            };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match cmd::run(cli, args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("lesionkit: error: {}", one_line(&format!("{e:#}")));
            EXIT_FAILURE
        }
    }
}

fn one_line(msg: &str) -> String {
    let lines: Vec<&str> = msg
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .collect();
    lines.join("; ").trim_start_matches("error: ").to_string()
}
