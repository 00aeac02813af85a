use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vinpaint::analysis::{AmbiguityShape, AMBIGUITY_TABLE};
use vinpaint::io::{ambiguity_csv, parse_patch_size, save_warps, warps_csv, DEFAULT_PATTERN};
use vinpaint::motion::estimate_chain;
use vinpaint::{
    inpaint_detailed, load_mask, load_sequence, save_log, save_sequence, simulate_patch_ambiguity, ConfigFile,
    OcclusionMask, PatchShape, PipelineConfig, ReconstructionMode, SequenceSpec,
};

#[derive(Parser)]
#[command(name = "vinpaint", about = "Video inpainting by global patch optimisation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the masked region of a frame sequence.
    Inpaint(Box<InpaintArgs>),
    /// Estimate the probability that a random patch is closer to a constant
    /// patch than to another random patch.
    AmbiguityTable(AmbiguityArgs),
    /// Estimate the dominant motion only and write the per-frame warps.
    EstimateMotion(MotionArgs),
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum Recon {
    Weighted,
    Unweighted,
}

#[derive(Args)]
struct InpaintArgs {
    /// Directory of input frames.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Directory of mask frames; a pixel is occluded when any channel exceeds 127.
    #[arg(long, value_name = "DIR")]
    mask: PathBuf,
    /// Directory for the output frames, named like the input.
    #[arg(long, value_name = "DIR")]
    output: PathBuf,
    /// File name pattern of the frames [default: frame_%05d.png]
    #[arg(long)]
    pattern: Option<String>,
    /// File of `key = value` settings; command-line flags take precedence.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
    /// Write the per-iteration convergence log as CSV.
    #[arg(long, value_name = "PATH")]
    log_energy: Option<PathBuf>,
    /// Write the per-frame affine warps as CSV.
    #[arg(long, value_name = "PATH")]
    dump_warps: Option<PathBuf>,
    /// Worker threads; 1 runs strictly sequentially [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Tuning {
    /// Patch size X,Y,T (odd extents) [default: 5,5,5]
    #[arg(long, value_name = "X,Y,T", value_parser = parse_shape)]
    patch_size: Option<PatchShape>,
    /// Weight of the texture features in the patch distance [default: 50]
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of pyramid levels [default: auto]
    #[arg(long)]
    levels: Option<usize>,
    /// Shrink factor of the random search radius [default: 0.5]
    #[arg(long)]
    rho: Option<f64>,
    /// PatchMatch iterations per search [default: 10]
    #[arg(long)]
    pm_iters: Option<usize>,
    /// Maximum search/reconstruction alternations per level [default: 20]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop a level once the mean colour change falls to this value [default: 0.1]
    #[arg(long)]
    stop_eps: Option<f64>,
    /// Match on colour only.
    #[arg(long)]
    no_texture: bool,
    /// Skip the dominant-motion realignment.
    #[arg(long)]
    no_align: bool,
    /// Reconstruction during the iterations [default: weighted]
    #[arg(long, value_enum)]
    recon: Option<Recon>,
    /// Seed of every random choice [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AmbiguityArgs {
    /// Comma-separated patch shapes such as 3x3,5x5,3x3x3 [default: the seven standard shapes]
    #[arg(long, value_delimiter = ',')]
    shapes: Vec<String>,
    /// Monte Carlo trials per shape.
    #[arg(long, default_value_t = 10_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Grey-level standard deviation.
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MotionArgs {
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Pixels to ignore when estimating.
    #[arg(long, value_name = "DIR")]
    mask: Option<PathBuf>,
    #[arg(long)]
    pattern: Option<String>,
    /// Write the warps here instead of standard output.
    #[arg(long, value_name = "PATH")]
    dump_warps: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_shape(s: &str) -> Result<PatchShape, String> {
    parse_patch_size(s).map_err(|e| e.to_string())
}

fn set_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

impl Tuning {
    fn apply(&self, c: &mut PipelineConfig) {
        if let Some(v) = self.patch_size {
            c.shape = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.levels {
            c.levels = Some(v);
        }
        if let Some(v) = self.rho {
            c.rho = v;
        }
        if let Some(v) = self.pm_iters {
            c.pm_iters = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.stop_eps {
            c.stop_eps = v;
        }
        if self.no_texture {
            c.texture = false;
        }
        if self.no_align {
            c.align = false;
        }
        if let Some(r) = self.recon {
            c.mode = match r {
                Recon::Weighted => ReconstructionMode::Weighted,
                Recon::Unweighted => ReconstructionMode::Unweighted,
            };
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
    }
}

fn inpaint(args: InpaintArgs) -> Result<()> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    set_threads(args.threads.or(file.threads))?;
    let mut config = PipelineConfig::default();
    file.apply(&mut config);
    args.tuning.apply(&mut config);
    config.validate()?;

    let pattern = args.pattern.or(file.pattern).unwrap_or_else(|| DEFAULT_PATTERN.to_string());
    let input = SequenceSpec::new(&args.input).with_pattern(&pattern);
    let first = input.frame_indices()?[0];
    let video = load_sequence(&input)?;
    let mask = load_mask(&SequenceSpec::new(&args.mask).with_pattern(&pattern), video.dims())?;
    let report = inpaint_detailed(&video, &mask.occluded, &config)?;

    let mut output = SequenceSpec::new(&args.output).with_pattern(&pattern);
    output.start = Some(first);
    save_sequence(&report.output, &output)?;
    if let Some(p) = &args.log_energy {
        save_log(&report.log, p)?;
    }
    if let Some(p) = &args.dump_warps {
        let chain = report
            .chain
            .clone()
            .unwrap_or_else(|| vinpaint::AffineChain::identity(video.dims().frames));
        save_warps(&chain, p)?;
    }
    Ok(())
}

fn ambiguity_table(args: AmbiguityArgs) -> Result<()> {
    set_threads(args.threads)?;
    anyhow::ensure!(args.trials >= 1, "--trials must be at least 1");
    anyhow::ensure!(args.sigma >= 0.0, "--sigma must be nonnegative");
    let names: Vec<String> = if args.shapes.is_empty() {
        AMBIGUITY_TABLE.iter().map(|(n, _)| n.to_string()).collect()
    } else {
        args.shapes.clone()
    };
    let mut rows = Vec::new();
    for name in names {
        let shape = AmbiguityShape::parse(&name)?;
        let est = simulate_patch_ambiguity(shape.components(), 128.0, args.sigma, args.trials, args.seed);
        let published = AMBIGUITY_TABLE
            .iter()
            .find(|(n, _)| *n == shape.to_string())
            .map(|(_, p)| *p)
            .filter(|_| args.sigma == 5.0);
        rows.push((shape.to_string(), est, published));
    }
    let csv = ambiguity_csv(&rows);
    match &args.output {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn estimate_motion(args: MotionArgs) -> Result<()> {
    set_threads(args.threads)?;
    let pattern = args.pattern.unwrap_or_else(|| DEFAULT_PATTERN.to_string());
    let video = load_sequence(&SequenceSpec::new(&args.input).with_pattern(&pattern))?;
    let mask = match &args.mask {
        Some(m) => load_mask(&SequenceSpec::new(m).with_pattern(&pattern), video.dims())?,
        None => OcclusionMask::empty(video.dims()),
    };
    let chain = estimate_chain(&video, &mask)?;
    match &args.dump_warps {
        Some(p) => save_warps(&chain, p)?,
        None => print!("{}", warps_csv(&chain)),
    }
    Ok(())
}

/// The error and its causes on one line, skipping causes already quoted.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Inpaint(a) => inpaint(*a),
        Command::AmbiguityTable(a) => ambiguity_table(a),
        Command::EstimateMotion(a) => estimate_motion(a),
        Command::Version => {
            println!("vinpaint {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
