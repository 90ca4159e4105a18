use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use latent_motion::block_match::{estimate_motion, BlockMatchConfig};
use latent_motion::error::{Error, Result};
use latent_motion::experiment::{
    default_image, run_fieldviz, run_histogram, run_sweep, write_histogram_csv, write_latent_fields_csv,
    write_samples_csv, write_sweep_csv, Bounds, HistogramSpec, Pipeline, SweepSpec, TransformKind,
};
use latent_motion::flow_verify::run_suite;
use latent_motion::image_io::{load_image, save_mask};
use latent_motion::latent_mc::{end_to_end_predict_with, Exclusion, PredictOptions};
use latent_motion::metrics::nrmse;
use latent_motion::motion::{warp_affine, AffineParams};
use latent_motion::nn::spec::NetworkSpec;
use latent_motion::nn::weights::WeightStore;
use latent_motion::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "latent-motion", version, about = "Motion analysis in CNN feature tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the 1-D flow-preservation checks and print a table.
    VerifyFlow,
    /// Block-match a reference image against a target and export the field.
    Estimate(EstimateArgs),
    /// Predict the feature tensor of a warped image from the reference tensor.
    Predict(PredictArgs),
    /// NRMSE across a range of one transform parameter.
    Sweep(SweepArgs),
    /// NRMSE over randomly drawn affine transforms.
    Histogram(HistogramArgs),
    /// Input-space and per-channel latent motion fields for one frame pair.
    Fieldviz(FieldvizArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Network description file; the built-in toy network if omitted.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Seed for generated weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// LFW1 weight file; overrides --seed.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Number of layers to run (default: all).
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct ImageArgs {
    /// Reference image (PGM/PPM); a generated 64x64 texture if omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Seed for the generated texture.
    #[arg(long, default_value_t = 0)]
    texture_seed: u64,
}

#[derive(Args, Debug, Clone)]
struct AffineArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    ty: f64,
    #[arg(long, default_value_t = 1.0)]
    sx: f64,
    #[arg(long, default_value_t = 1.0)]
    sy: f64,
    /// Degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    shx: f64,
    /// Degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    shy: f64,
    /// Degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    rot: f64,
}

impl AffineArgs {
    fn params(&self) -> Result<AffineParams> {
        let p = AffineParams {
            tx: self.tx,
            ty: self.ty,
            sx: self.sx,
            sy: self.sy,
            shx: self.shx,
            shy: self.shy,
            rot: self.rot,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ExclusionArg {
    Source,
    Entering,
    Interior,
}

impl From<ExclusionArg> for Exclusion {
    fn from(e: ExclusionArg) -> Self {
        match e {
            ExclusionArg::Source => Exclusion::Source,
            ExclusionArg::Entering => Exclusion::Entering,
            ExclusionArg::Interior => Exclusion::Interior,
        }
    }
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    image: ImageArgs,
    /// Which latent cells are excluded from the metric.
    #[arg(long, value_enum, default_value = "interior")]
    exclusion: ExclusionArg,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    image: ImageArgs,
    /// Target image; otherwise the reference warped by the affine flags.
    #[arg(long)]
    target: Option<PathBuf>,
    #[command(flatten)]
    affine: AffineArgs,
    /// Block-matching preset: `input` (31x31, +-11) or `latent` (3x3, +-5).
    #[arg(long, default_value = "input")]
    preset: String,
    /// Overrides the preset block size.
    #[arg(long)]
    block: Option<usize>,
    /// Overrides the preset search range.
    #[arg(long)]
    range: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    affine: AffineArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// translate-x, translate-y, rotate, scale, shear-x or shear-y.
    #[arg(long)]
    kind: String,
    #[arg(long, allow_hyphen_values = true)]
    start: f64,
    #[arg(long, allow_hyphen_values = true)]
    stop: f64,
    #[arg(long)]
    step: f64,
}

#[derive(Args, Debug)]
struct HistogramArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Seed for parameter sampling.
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    /// Override one bound, e.g. `rot=-20:20`. Names: tx ty sx sy shx shy rot.
    #[arg(long = "bound", value_name = "NAME=LO:HI", allow_hyphen_values = true)]
    bounds: Vec<String>,
}

#[derive(Args, Debug)]
struct FieldvizArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    image: ImageArgs,
    /// Target image; otherwise the reference warped by the affine flags.
    #[arg(long)]
    target: Option<PathBuf>,
    #[command(flatten)]
    affine: AffineArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_model(m: &ModelArgs) -> Result<(NetworkSpec, WeightStore)> {
    let net = match &m.net {
        Some(path) => NetworkSpec::from_file(path)?,
        None => NetworkSpec::toy(),
    };
    let weights = match &m.weights {
        Some(path) => WeightStore::load(path)?,
        None => WeightStore::seeded(&net, m.seed),
    };
    weights.check_binding(&net)?;
    Ok((net, weights))
}

fn load_reference(a: &ImageArgs, channels: usize) -> Result<Tensor> {
    match &a.image {
        Some(path) => load_image(path),
        None => default_image(channels, a.texture_seed),
    }
}

fn load_target(reference: &Tensor, target: &Option<PathBuf>, affine: &AffineArgs) -> Result<Tensor> {
    match target {
        Some(path) => load_image(path),
        None => Ok(warp_affine(reference, &affine.params()?)?.0),
    }
}

fn build_pipeline(a: &PipelineArgs) -> Result<Pipeline> {
    let (net, weights) = load_model(&a.model)?;
    let image = load_reference(&a.image, net.input_channels())?;
    let options = PredictOptions {
        layer: a.model.layer,
        exclusion: a.exclusion.into(),
    };
    Pipeline::new(net, weights, image, options)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(BufWriter::new(file))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parse_bound(spec: &mut HistogramSpec, text: &str) -> Result<()> {
    let bad = || Error::Config(format!("bad bound `{text}`, expected NAME=LO:HI"));
    let (name, range) = text.split_once('=').ok_or_else(bad)?;
    let (lo, hi) = range.split_once(':').ok_or_else(bad)?;
    let b = Bounds::new(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
    let slot = match name.trim() {
        "tx" => &mut spec.tx,
        "ty" => &mut spec.ty,
        "sx" => &mut spec.sx,
        "sy" => &mut spec.sy,
        "shx" => &mut spec.shx,
        "shy" => &mut spec.shy,
        "rot" => &mut spec.rot,
        other => return Err(Error::Config(format!("unknown bound `{other}`"))),
    };
    *slot = b;
    Ok(())
}

fn verify_flow() -> Result<bool> {
    let outcomes = run_suite()?;
    println!("{:<48} {:>14} {:>14}  result", "check", "value", "bound");
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} checks, {failed} failed", outcomes.len());
    Ok(failed == 0)
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let mut cfg = BlockMatchConfig::preset(&a.preset)?;
    cfg = BlockMatchConfig::new(a.block.unwrap_or(cfg.block), a.range.unwrap_or(cfg.range))?;
    let reference = load_reference(&a.image, 1)?;
    let target = load_target(&reference, &a.target, &a.affine)?;
    let field = estimate_motion(&reference.mean_channel(), &target.mean_channel(), &cfg)?;
    make_dir(&a.out)?;
    field.write_csv(create(&a.out, "field.csv")?)?;
    if let Some(m) = field.median() {
        println!("median vector ({}, {}) over {} valid positions", m.vx, m.vy, field.count_valid());
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let p = build_pipeline(&a.pipeline)?;
    let params = a.affine.params()?;
    let out = end_to_end_predict_with(&p.net, &p.weights, &p.image, &params, &p.options)?;
    let report = nrmse(&out.prediction.predicted, &out.actual, &out.prediction.valid)?;
    let dir = &a.pipeline.out;
    make_dir(dir)?;
    out.prediction.predicted.save(dir.join("predicted.lft"))?;
    out.actual.save(dir.join("actual.lft"))?;
    save_mask(&out.prediction.valid, dir.join("mask.pgm"))?;
    report.write_csv(create(dir, "metrics.csv")?)?;
    println!(
        "nrmse {} over {} valid elements ({} excluded)",
        report.nrmse, report.n_valid, report.n_excluded
    );
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let spec = SweepSpec::new(a.kind.parse::<TransformKind>()?, a.start, a.stop, a.step)?;
    let p = build_pipeline(&a.pipeline)?;
    let rows = run_sweep(&p, &spec)?;
    make_dir(&a.pipeline.out)?;
    write_sweep_csv(&rows, create(&a.pipeline.out, "sweep.csv")?)?;
    println!("{} rows written to {}", rows.len(), a.pipeline.out.join("sweep.csv").display());
    Ok(())
}

fn histogram(a: &HistogramArgs) -> Result<()> {
    let mut spec = HistogramSpec {
        count: a.count,
        seed: a.sample_seed,
        ..HistogramSpec::default()
    };
    for b in &a.bounds {
        parse_bound(&mut spec, b)?;
    }
    let p = build_pipeline(&a.pipeline)?;
    let (samples, bins) = run_histogram(&p, &spec)?;
    let dir = &a.pipeline.out;
    make_dir(dir)?;
    write_samples_csv(&samples, create(dir, "samples.csv")?)?;
    write_histogram_csv(&bins, create(dir, "histogram.csv")?)?;
    println!("{} samples written to {}", samples.len(), dir.display());
    Ok(())
}

fn fieldviz(a: &FieldvizArgs) -> Result<()> {
    let (net, weights) = load_model(&a.model)?;
    let reference = load_reference(&a.image, net.input_channels())?;
    let target = load_target(&reference, &a.target, &a.affine)?;
    let viz = run_fieldviz(
        &net,
        &weights,
        &reference,
        &target,
        a.model.layer,
        &BlockMatchConfig::input(),
        &BlockMatchConfig::latent(),
    )?;
    make_dir(&a.out)?;
    viz.input.write_csv(create(&a.out, "input_field.csv")?)?;
    write_latent_fields_csv(&viz.latent, create(&a.out, "latent_fields.csv")?)?;
    println!("input field and {} latent fields written to {}", viz.latent.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::VerifyFlow => return verify_flow(),
        Command::Estimate(a) => estimate(a)?,
        Command::Predict(a) => predict(a)?,
        Command::Sweep(a) => sweep(a)?,
        Command::Histogram(a) => histogram(a)?,
        Command::Fieldviz(a) => fieldviz(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
