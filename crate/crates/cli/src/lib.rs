//! Subcommands of the `plateval` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use plateval::classify::{evaluate, train, Kernel, LabeledDataset, SvmModel, SvmParams, FEATURE_DIM};
use plateval::imagecore::load_image;
use plateval::pipeline::{assess_image, demo_model, demo_svm_params, write_artifacts, AssessmentReport};
use plateval::synth::{known_labels, write_patch_dataset, write_plate, PlateSpec, PATCH_VARIANTS};
use plateval::{ColorSpace, Connectivity, Error, PipelineConfig, Result, Taxonomy};

#[derive(Debug, Parser)]
#[command(name = "plateval", version, about = "Rates how balanced a meal is from a top-down plate photo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assess one plate photo.
    Assess(AssessArgs),
    /// Train a classifier from `dataset/<label>/*.png`.
    Train(TrainArgs),
    /// Score a classifier on a labeled dataset.
    Eval(EvalArgs),
    /// Render synthetic plates or training patches.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    Rgb,
    Hsv,
    Lab,
}

impl From<Space> for ColorSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Rgb => ColorSpace::Rgb,
            Space::Hsv => ColorSpace::Hsv,
            Space::Lab => ColorSpace::Lab,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AssessArgs {
    pub image: PathBuf,
    /// Number of color clusters.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Space::Hsv)]
    pub space: Space,
    #[arg(long, default_value_t = 4, value_parser = parse_connectivity)]
    pub connectivity: u8,
    /// CIELAB distance under which adjacent regions merge.
    #[arg(long, default_value_t = 12.0)]
    pub merge_threshold: f64,
    /// Minimum region size in pixels [default: 0.5% of the plate].
    #[arg(long)]
    pub min_region: Option<usize>,
    /// Classifier JSON [default: built-in model].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Label to category mapping JSON.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write report.json, overlay, label image, palette and masks here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn parse_connectivity(s: &str) -> std::result::Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err("must be 4 or 8".into()),
    }
}

impl AssessArgs {
    pub fn new(image: impl Into<PathBuf>) -> Self {
        Self {
            image: image.into(),
            k: 8,
            space: Space::Hsv,
            connectivity: 4,
            merge_threshold: 12.0,
            min_region: None,
            model: None,
            taxonomy: None,
            seed: 0,
            out_dir: None,
            json: false,
        }
    }

    pub fn config(&self) -> Result<PipelineConfig> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        Ok(PipelineConfig {
            color_space: self.space.into(),
            k: self.k,
            connectivity: Connectivity::try_from(self.connectivity)?,
            merge_threshold: self.merge_threshold,
            min_region_px: self.min_region,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    /// Where to write the model JSON.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelKind::Rbf)]
    pub kernel: KernelKind,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "C", alias = "c")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub dataset: PathBuf,
    /// Classifier JSON [default: built-in model].
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Plate description JSON.
    #[arg(required_unless_present = "dataset", conflicts_with = "dataset")]
    pub spec: Option<PathBuf>,
    /// Output PNG; ground truth goes next to it as `<stem>.truth.json`.
    #[arg(long, short, requires = "spec")]
    pub out: Option<PathBuf>,
    /// Write single-object training patches for every known label here.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = PATCH_VARIANTS)]
    pub variants: usize,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoPlateFound => 2,
        Error::NoFoodItems => 3,
        Error::Dataset(_) | Error::Model(_) | Error::EmptySamples => 4,
        _ => 1,
    }
}

fn load_model(path: Option<&Path>) -> Result<SvmModel> {
    let Some(path) = path else {
        return Ok(demo_model().clone());
    };
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let model = SvmModel::load(path).map_err(|e| match e {
        Error::Io(_) | Error::FileNotFound(_) => e,
        other => Error::Model(format!("{}: {other}", path.display())),
    })?;
    if model.dim != FEATURE_DIM {
        return Err(Error::Model(format!("model expects {} features, extractor gives {FEATURE_DIM}", model.dim)));
    }
    Ok(model)
}

/// Runs an assessment and returns the report.
pub fn assess(args: &AssessArgs) -> Result<AssessmentReport> {
    let config = args.config()?;
    let model = load_model(args.model.as_deref())?;
    let taxonomy = match &args.taxonomy {
        Some(path) => Taxonomy::load(path)?,
        None => Taxonomy::default(),
    };
    let image = load_image(&args.image)?;
    let assessment = assess_image(&image, &model, &taxonomy, &config)?;
    let artifacts = match &args.out_dir {
        Some(dir) => Some(write_artifacts(&assessment, dir)?),
        None => None,
    };
    let report = AssessmentReport::new(args.image.display().to_string(), &image, &assessment, &config, artifacts);
    if let Some(dir) = &args.out_dir {
        std::fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(report)
}

fn summary(report: &AssessmentReport) -> String {
    let a = &report.assessment;
    let mut s = String::new();
    let _ = writeln!(s, "{}", report.input);
    for item in &a.items {
        let _ = writeln!(s, "  region {:>3}  {:<12} {:>6.1}%", item.region_id, item.label, item.fraction * 100.0);
    }
    let sh = &a.shares;
    let _ = writeln!(
        s,
        "fruit {:.1}  vegetable {:.1}  protein {:.1}  whole grain {:.1}  junk {:.1}",
        sh.fruit, sh.vegetable, sh.protein, sh.whole_grain, sh.junk
    );
    let _ = writeln!(s, "balance {}  healthy {}%  {}", report.balance_rounded, report.healthy_percent, a.band.name);
    for r in &a.recommendations {
        let _ = writeln!(s, "  - {r}");
    }
    s
}

/// `assess`: the text printed to stdout.
pub fn cmd_assess(args: &AssessArgs) -> Result<String> {
    let report = assess(args)?;
    Ok(if args.json { report.to_json() + "\n" } else { summary(&report) })
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let data = LabeledDataset::load_dir(&args.dataset)?;
    if data.labels().len() < 2 {
        return Err(Error::Dataset(format!("{} needs at least two classes", args.dataset.display())));
    }
    let defaults = demo_svm_params();
    let kernel = match args.kernel {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => match (args.gamma, defaults.kernel) {
            (Some(gamma), _) => Kernel::Rbf { gamma },
            (None, kernel) => kernel,
        },
    };
    let params = SvmParams { kernel, c: args.c.unwrap_or(defaults.c), ..defaults };
    let model = train(&data, &params)?;
    std::fs::write(&args.out, model.to_json())?;
    Ok(format!("trained {} classes on {} samples -> {}\n", model.labels.len(), data.len(), args.out.display()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let model = load_model(args.model.as_deref())?;
    let data = LabeledDataset::load_dir(&args.dataset)?;
    let metrics = evaluate(&model, &data)?;
    if args.json {
        return Ok(metrics.to_json() + "\n");
    }
    let mut s = format!("{:<12} {:>9} {:>9} {:>9} {:>7}\n", "label", "precision", "recall", "accuracy", "support");
    for c in &metrics.per_class {
        let _ =
            writeln!(s, "{:<12} {:>9.3} {:>9.3} {:>9.3} {:>7}", c.label, c.precision, c.recall, c.accuracy, c.support);
    }
    let _ = writeln!(s, "overall accuracy {:.3}", metrics.overall_accuracy);
    Ok(s)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    if let Some(dir) = &args.dataset {
        let labels: Vec<&str> = known_labels().collect();
        write_patch_dataset(dir, &labels, args.variants)?;
        return Ok(format!("wrote {} labels x {} images to {}\n", labels.len(), args.variants, dir.display()));
    }
    let spec_path = args.spec.as_ref().expect("clap requires spec without dataset");
    let text = std::fs::read_to_string(spec_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(spec_path.clone()),
        _ => Error::Io(e),
    })?;
    let spec = PlateSpec::from_json(&text)?;
    let out = args.out.clone().unwrap_or_else(|| spec_path.with_extension("png"));
    let truth = write_plate(&spec, &out)?;
    Ok(truth.to_json() + "\n")
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Assess(a) => cmd_assess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
    }
}
