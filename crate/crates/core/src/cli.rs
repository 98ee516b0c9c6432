//! Command-line interface.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or file-format error.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ebsw::{projected_distances, DiscreteMeasure, EnergyFunction};
use crate::engine::{self, fmt_g9, StylizeJob};
use crate::features::{Extractor, ExtractorSpec};
use crate::slicing::{derive_seed, sample_projections};
use crate::swdloss::{iw_swd, swd, LossConfig, WeightGradient, WeightMode};
use crate::tensors::{load_mask, read_fmap, FeatureMap, ImageBuffer};
use crate::tiling::{run_multiview_edit, stylizer_by_name, write_outputs, ViewSet};
use crate::{samples, Error, Result};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(
    name = "swdstyle",
    version,
    about = "Sliced-Wasserstein feature matching and stylization"
)]
pub struct Cli {
    /// Worker threads (also read from SWDSTYLE_THREADS).
    #[arg(long, global = true, env = "SWDSTYLE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sliced distance between two images or two FMAP feature maps.
    ///
    /// Prints `value` and the value on stdout. In importance mode a blank
    /// line and a `layer,projection,distance,weight` CSV block follow.
    Compare(CompareArgs),
    /// Optimize the content image toward the style image(s).
    ///
    /// The trace CSV has header `iteration,total,layer<id>...,ms`.
    Stylize(StylizeArgs),
    /// Uniform full-budget vs importance 5%-budget runs on the same job.
    ///
    /// Writes `uniform.csv` and `importance.csv` (trace header
    /// `iteration,total,layer<id>...,ms`) and `summary.csv` (header
    /// `metric,value`).
    Bench(BenchArgs),
    /// Tiled-reference multi-view editing over a directory of views.
    ///
    /// Views are `<id>.png` with depth `<id>.depth.png`. Writes stylized
    /// `<id>.png` files and a tab-separated `manifest.txt` with columns
    /// view_id, input, output, prompt, seed.
    Tile(TileArgs),
    /// Write the bundled procedural sample inputs.
    Samples(SamplesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Uniform,
    Importance,
}

impl From<Mode> for WeightMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Uniform => WeightMode::Uniform,
            Mode::Importance => WeightMode::Importance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradMode {
    Detached,
    Full,
}

/// `--seed` value: a number or `random`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedArg {
    Fixed(u64),
    Random,
}

impl SeedArg {
    pub fn resolve(self) -> u64 {
        match self {
            SeedArg::Fixed(s) => s,
            SeedArg::Random => rand::random(),
        }
    }
}

fn parse_seed(s: &str) -> std::result::Result<SeedArg, String> {
    if s == "random" {
        return Ok(SeedArg::Random);
    }
    s.parse()
        .map(SeedArg::Fixed)
        .map_err(|_| format!("expected an integer or `random`, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Treat inputs as FMAP feature maps.
    #[arg(long, conflicts_with = "image")]
    pub fmap: bool,
    /// Treat inputs as images and compare their extracted features (default).
    #[arg(long)]
    pub image: bool,
    /// Directions per layer; defaults to 5% of each layer's width.
    #[arg(long)]
    pub projections: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Uniform)]
    pub mode: Mode,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<SeedArg>,
    /// Order p of the projected Wasserstein term.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub content: PathBuf,
    /// Style image; repeat to give one per mask region.
    #[arg(long = "style", required = true)]
    pub styles: Vec<PathBuf>,
    /// 8-bit grayscale label mask for the content image.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Label mask for the style image, aligned with `--mask` labels.
    #[arg(long)]
    pub style_mask: Option<PathBuf>,
    #[arg(long)]
    pub exclude_label: Option<u8>,
    #[arg(long, default_value_t = engine::DEFAULT_ITERATIONS)]
    pub iters: usize,
    #[arg(long, default_value_t = engine::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = Mode::Importance)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0.05)]
    pub proj_frac: f64,
    /// Explicit per-layer direction counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub projections: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.1)]
    pub content_weight: f64,
    #[arg(long, value_enum, default_value_t = GradMode::Detached)]
    pub weight_gradient: GradMode,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<SeedArg>,
    /// Save `<out stem>.<iteration>.png` every N iterations.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long, default_value_t = 1500)]
    pub iters: usize,
    #[arg(long, default_value_t = engine::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub content_weight: f64,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<SeedArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long, default_value = "")]
    pub prompt: String,
    #[arg(long, default_value = "identity", value_parser = ["identity", "palette", "adain"])]
    pub stylizer: String,
    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<SeedArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplesArgs {
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_format() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Compare(a) => cmd_compare(&a),
        Command::Stylize(a) => cmd_stylize(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Tile(a) => cmd_tile(&a),
        Command::Samples(a) => samples::write_samples(&a.out),
    }
}

fn resolve_seed(seed: Option<SeedArg>) -> u64 {
    let s = seed.unwrap_or(SeedArg::Fixed(DEFAULT_SEED)).resolve();
    eprintln!("seed: {s}");
    s
}

fn load_features(path: &Path, fmap: bool, ex: &Extractor) -> Result<Vec<FeatureMap>> {
    if fmap {
        Ok(vec![read_fmap(path)?])
    } else {
        ex.extract(&ImageBuffer::load_rgb(path)?)
    }
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    if !(args.p >= 1.0 && args.p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "--p must be >= 1, got {}",
            args.p
        )));
    }
    if args.projections == Some(0) {
        return Err(Error::InvalidArgument("--projections must be >= 1".into()));
    }
    let ex = Extractor::new(ExtractorSpec::default())?;
    let a = load_features(&args.a, args.fmap, &ex)?;
    let b = load_features(&args.b, args.fmap, &ex)?;
    let config = LossConfig::default();
    let mut value = 0.0;
    let mut rows = Vec::new();
    for (l, (fa, fb)) in a.iter().zip(&b).enumerate() {
        if fa.channels() != fb.channels() {
            return Err(Error::Dimension(format!(
                "layer {} has {} vs {} channels",
                fa.layer_id(),
                fa.channels(),
                fb.channels()
            )));
        }
        let k = args
            .projections
            .unwrap_or_else(|| config.projection_count(l, fa.channels()));
        let proj = sample_projections(fa.channels(), k, derive_seed(seed, 0, l as u64))?;
        let (v, weights, distances) = if args.p == 2.0 {
            match args.mode {
                Mode::Uniform => (swd(fa, fb, &proj)?.0, None, None),
                Mode::Importance => {
                    let (v, _, w) = iw_swd(fa, fb, &proj)?;
                    let d = crate::slicing::project(fa, &proj)?;
                    let dq = crate::slicing::project(fb, &proj)?;
                    let dist = d
                        .iter()
                        .zip(&dq)
                        .map(|(p, q)| {
                            let q = crate::swdloss::quantile_resample(q, p.len())?;
                            Ok(crate::swdloss::sw1d(p, &q)?.0)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (v, Some(w), Some(dist))
                }
            }
        } else {
            let mu = DiscreteMeasure::uniform(fa.channels(), fa.data().to_vec())?;
            let nu = DiscreteMeasure::uniform(fb.channels(), fb.data().to_vec())?;
            let d = projected_distances(&mu, &nu, args.p, &proj)?;
            match args.mode {
                Mode::Uniform => (d.iter().sum::<f64>() / d.len() as f64, None, None),
                Mode::Importance => {
                    let (_, w) = crate::ebsw::is_ebsw_from_distances(
                        &d,
                        args.p,
                        &EnergyFunction::exponential(),
                    )?;
                    let v = w.iter().zip(&d).map(|(w, d)| w * d).sum();
                    (v, Some(w), Some(d))
                }
            }
        };
        value += v;
        if let (Some(w), Some(d)) = (weights, distances) {
            for (j, (w, d)) in w.iter().zip(&d).enumerate() {
                rows.push(format!(
                    "{},{j},{},{}",
                    fa.layer_id(),
                    fmt_g9(*d),
                    fmt_g9(*w)
                ));
            }
        }
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "{} vs {} layers",
            a.len(),
            b.len()
        )));
    }
    let mut out = format!("value\n{}\n", fmt_g9(value));
    if args.mode == Mode::Importance {
        out.push_str("\nlayer,projection,distance,weight\n");
        for r in rows {
            out.push_str(&r);
            out.push('\n');
        }
    }
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(out.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

pub fn cmd_stylize(args: &StylizeArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let content = ImageBuffer::load_rgb(&args.content)?;
    let styles = args
        .styles
        .iter()
        .map(ImageBuffer::load_rgb)
        .collect::<Result<Vec<_>>>()?;
    let mut job = StylizeJob::new(content, styles[0].clone());
    job.styles = styles;
    job.content_mask = args.mask.as_ref().map(load_mask).transpose()?;
    job.style_mask = args.style_mask.as_ref().map(load_mask).transpose()?;
    job.loss = LossConfig {
        mode: args.mode.into(),
        projection_fraction: args.proj_frac,
        projection_counts: args.projections.clone(),
        content_weight: args.content_weight,
        exclude_label: args.exclude_label,
        weight_gradient: match args.weight_gradient {
            GradMode::Detached => WeightGradient::Detached,
            GradMode::Full => WeightGradient::Full,
        },
    };
    job.iterations = args.iters;
    job.learning_rate = args.lr;
    job.seed = seed;
    job.snapshot_every = args.snapshot_every;
    let outcome = engine::stylize(&job)?;
    outcome.image.save_png(&args.out)?;
    if let Some(trace) = &args.trace {
        outcome.trace.write_csv(trace)?;
    }
    let stem = args.out.with_extension("");
    for (it, img) in &outcome.snapshots {
        img.save_png(format!("{}.{it:05}.png", stem.display()))?;
    }
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let mut job = StylizeJob::new(
        ImageBuffer::load_rgb(&args.content)?,
        ImageBuffer::load_rgb(&args.style)?,
    );
    job.iterations = args.iters;
    job.learning_rate = args.lr;
    job.loss.content_weight = args.content_weight;
    job.seed = seed;
    let report = engine::benchmark_iw_vs_vanilla(&job)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    report
        .uniform
        .trace
        .write_csv(args.out.join("uniform.csv"))?;
    report
        .importance
        .trace
        .write_csv(args.out.join("importance.csv"))?;
    let path = args.out.join("summary.csv");
    let summary = report.summary_csv();
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_tile(args: &TileArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let stylizer = stylizer_by_name(&args.stylizer)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown stylizer {}", args.stylizer)))?;
    let views = ViewSet::load_dir(&args.views)?;
    let outcome = run_multiview_edit(&views, &args.prompt, stylizer.as_ref(), seed)?;
    write_outputs(&outcome, &args.views, &args.out, &args.prompt, seed)?;
    Ok(())
}
