//! Command-line entry point wiring the library: dataset generation, offline
//! SLIC, scribble expansion, pseudo-label refinement, training, ablation,
//! evaluation, and curve plotting.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sp3::error::{Result, SpError};
use sp3::grid::{LabelGrid, ScribbleSet};
use sp3::manifest::DatasetManifest;
use sp3::metrics::evaluate;
use sp3::plot::{plot_curves, RunLog};
use sp3::propagation::{expand_scribbles, refine_pseudo_label, ThresholdState};
use sp3::slic::{slic_segment, Image, SuperpixelMap};
use sp3::synth::{generate, ShapeFamily, SynthSpec};
use sp3::tensor::{tensor_read, tensor_write, Tensor};
use sp3::trainer::{
    ablation_run, evaluate_split, load_dataset, predict_labels, train, AblationVariant,
    TrainConfig, VariantSwitches,
};

#[derive(Parser)]
#[command(name = "sp3", version, about = "Superpixel-propagated pseudo-label segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images, labels, scribbles, manifest).
    GenData(GenDataArgs),
    /// Compute SLIC superpixels for one image or a whole manifest.
    Slic(SlicArgs),
    /// Expand scribbles to superpixel-dense labels.
    Expand(ExpandArgs),
    /// Refine a pseudo-label with threshold-filtered superpixels.
    Refine(RefineArgs),
    /// Train the dual-head model on a manifest.
    Train(TrainArgs),
    /// Run an ablation grid and emit a CSV of test metrics.
    Ablate(AblateArgs),
    /// Evaluate a prediction against ground truth.
    Eval(EvalArgs),
    /// Plot training curves from a log CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Shape family: rings (C=4) or blob (C=2).
    #[arg(long)]
    family: String,
    /// Number of training samples; val gets n/5 and test 2n/5 (at least 1).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 0.06)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SlicArgs {
    /// Single image (SPT1 2-D f64) to segment.
    #[arg(long, conflicts_with = "manifest")]
    image: Option<PathBuf>,
    /// Manifest whose samples all get superpixels at their declared paths.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 250)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output id grid for single-image mode; a sizes sidecar lands next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpandArgs {
    /// Superpixel id grid (SPT1).
    #[arg(long)]
    sp: PathBuf,
    /// Scribble JSON.
    #[arg(long)]
    scribbles: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    sp: PathBuf,
    /// Pseudo-label grid (SPT1 u8, no IGNORE pixels).
    #[arg(long)]
    pseudo: PathBuf,
    /// Threshold state JSON {"tau0", "lambda", "t", "T": [...]}.
    #[arg(long)]
    thresholds: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    labeled_ratio: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    tau0: f64,
    #[arg(long, default_value_t = 0.99)]
    lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for log.csv, curves, weights, config, predictions.
    #[arg(long)]
    out: PathBuf,
    /// Supervise with raw scribbles instead of expanded ones.
    #[arg(long)]
    no_expand: bool,
    /// Disable the pseudo-label loss.
    #[arg(long)]
    no_pseudo: bool,
    /// Train on labeled samples only.
    #[arg(long)]
    no_unlabeled: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Grid JSON: {"seeds": [...], "config": {...}, "variants": [...]}.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Log CSV written by `sp3 train`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_rayon();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// SP3_THREADS bounds worker parallelism; default is the machine's cores.
fn init_rayon() {
    if let Ok(v) = std::env::var("SP3_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Slic(args) => slic_cmd(args),
        Command::Expand(args) => expand_cmd(args),
        Command::Refine(args) => refine_cmd(args),
        Command::Train(args) => train_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Plot(args) => plot_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let family = match args.family.as_str() {
        "rings" => ShapeFamily::NestedRings,
        "blob" => ShapeFamily::IrregularBlob,
        other => {
            return Err(SpError::InvalidParameter(format!(
                "unknown family '{other}' (expected rings or blob)"
            )))
        }
    };
    let spec = SynthSpec {
        family,
        size: args.size,
        noise_sigma: args.noise,
        train: args.n,
        val: (args.n / 5).max(1),
        test: (args.n * 2 / 5).max(1),
        seed: args.seed,
    };
    let manifest = generate(&spec, &args.out)?;
    println!(
        "wrote {} samples ({} classes) under {}",
        manifest.samples.len(),
        manifest.classes,
        args.out.display()
    );
    Ok(())
}

fn read_image(path: &Path) -> Result<Image> {
    match tensor_read(path)? {
        Tensor::F64 { dims, data } if dims.len() == 2 => {
            Image::new(dims[0] as usize, dims[1] as usize, data)
        }
        _ => Err(SpError::Format {
            offset: 4,
            message: format!("{}: expected 2-D f64 image", path.display()),
        }),
    }
}

fn write_superpixels(map: &SuperpixelMap, out: &Path) -> Result<()> {
    let dims = vec![map.height() as u32, map.width() as u32];
    let tensor = if map.n() <= 256 {
        Tensor::U8 {
            dims,
            data: map.sp_ids().iter().map(|&v| v as u8).collect(),
        }
    } else {
        Tensor::U32 {
            dims,
            data: map.sp_ids().to_vec(),
        }
    };
    tensor_write(out, &tensor)?;
    let sidecar = out.with_extension("json");
    let payload = serde_json::json!({ "n": map.n(), "sizes": map.sizes() });
    fs::write(sidecar, serde_json::to_string_pretty(&payload)?)?;
    Ok(())
}

fn slic_cmd(args: SlicArgs) -> Result<()> {
    match (&args.image, &args.manifest) {
        (Some(image_path), None) => {
            let out = args.out.clone().ok_or_else(|| {
                SpError::InvalidParameter("--out is required with --image".into())
            })?;
            let image = read_image(image_path)?;
            let map = slic_segment(&image, args.n, args.compactness, args.iters, args.seed)?;
            write_superpixels(&map, &out)?;
            println!("{} superpixels -> {}", map.n(), out.display());
            Ok(())
        }
        (None, Some(manifest_path)) => {
            let manifest = DatasetManifest::load(manifest_path)?;
            let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
            let mut done = 0;
            for entry in &manifest.samples {
                let rel = entry.superpixels.as_ref().ok_or_else(|| {
                    SpError::InvalidParameter(format!(
                        "sample {} declares no superpixel path",
                        entry.id
                    ))
                })?;
                let image = read_image(&base.join(&entry.image))?;
                let map = slic_segment(&image, args.n, args.compactness, args.iters, args.seed)?;
                let out = base.join(rel);
                if let Some(dir) = out.parent() {
                    fs::create_dir_all(dir)?;
                }
                write_superpixels(&map, &out)?;
                done += 1;
            }
            println!("segmented {done} images");
            Ok(())
        }
        _ => Err(SpError::InvalidParameter(
            "pass exactly one of --image or --manifest".into(),
        )),
    }
}

fn read_superpixel_grid(path: &Path) -> Result<SuperpixelMap> {
    sp3::trainer::read_superpixels(path)
}

fn expand_cmd(args: ExpandArgs) -> Result<()> {
    let sp = read_superpixel_grid(&args.sp)?;
    let scribbles: ScribbleSet = serde_json::from_str(&fs::read_to_string(&args.scribbles)?)?;
    let expanded = expand_scribbles(&sp, &scribbles)?;
    tensor_write(&args.out, &expanded.to_tensor())?;
    println!(
        "expanded {} stroke pixels to {} labeled pixels",
        scribbles.total_pixels(),
        expanded.count_labeled()
    );
    Ok(())
}

fn refine_cmd(args: RefineArgs) -> Result<()> {
    let sp = read_superpixel_grid(&args.sp)?;
    let state: ThresholdState = serde_json::from_str(&fs::read_to_string(&args.thresholds)?)?;
    let pseudo = LabelGrid::from_tensor(&tensor_read(&args.pseudo)?, state.classes())?;
    let refined = refine_pseudo_label(&sp, &pseudo, &state)?;
    tensor_write(&args.out, &refined.to_tensor())?;
    println!("refined pseudo-label -> {}", args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let config = TrainConfig {
        iterations: args.iters,
        batch_size: args.batch,
        mu: args.mu,
        learning_rate: args.lr,
        tau0: args.tau0,
        lambda: args.lambda,
        dropout_rate: args.dropout,
        labeled_ratio: args.labeled_ratio,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let switches = VariantSwitches {
        expand_scribbles: !args.no_expand,
        pseudo_label: !args.no_pseudo,
        use_unlabeled: !args.no_unlabeled,
        ..VariantSwitches::default()
    };
    let out_dir = &args.out;
    fs::create_dir_all(out_dir)?;
    let output = train(&dataset, &config, &switches)?;

    plot_curves(&output.log, out_dir)?;
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config": config,
            "switches": switches,
        }))?,
    )?;
    let weights = Tensor::F64 {
        dims: vec![
            2,
            dataset.classes as u32,
            (sp3::model::FEATURES + 1) as u32,
        ],
        data: output
            .model
            .head1
            .iter()
            .chain(output.model.head2.iter())
            .copied()
            .collect(),
    };
    tensor_write(out_dir.join("weights.spt"), &weights)?;

    // predictions and metrics on the test split
    let pred_dir = out_dir.join("preds");
    fs::create_dir_all(&pred_dir)?;
    for sample in &dataset.test {
        let pred = predict_labels(&output.model, sample)?;
        tensor_write(pred_dir.join(format!("{}.spt", sample.id)), &pred.to_tensor())?;
    }
    if !dataset.test.is_empty() {
        let metrics = evaluate_split(&output.model, &dataset.test, dataset.classes)?;
        fs::write(
            out_dir.join("test_metrics.json"),
            serde_json::to_string_pretty(&metrics)?,
        )?;
        println!(
            "final val dice {:.4}, test dice {:.4} -> {}",
            output.log.rows.last().map(|r| r.val_dice).unwrap_or(0.0),
            metrics.dice,
            out_dir.display()
        );
    }
    Ok(())
}

#[derive(Deserialize)]
struct AblationGrid {
    seeds: Vec<u64>,
    #[serde(default)]
    config: Option<TrainConfig>,
    variants: Vec<AblationVariant>,
}

fn ablate_cmd(args: AblateArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    let grid: AblationGrid = serde_json::from_str(&fs::read_to_string(&args.grid)?)?;
    let config = grid.config.unwrap_or_default();
    let outcomes = ablation_run(&dataset, &config, &grid.variants, &grid.seeds)?;
    let mut csv = String::from(
        "name,expand_scribbles,pseudo_label,uncertainty,use_unlabeled,threshold,seeds,dice,ji,hd95,asd\n",
    );
    for o in &outcomes {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{:?},{},{:?},{},{},{},{},{}\n",
            o.name,
            o.switches.expand_scribbles,
            o.switches.pseudo_label,
            o.switches.uncertainty,
            o.switches.use_unlabeled,
            o.switches.threshold,
            o.per_seed.len(),
            o.mean_dice,
            o.mean_ji,
            opt(o.mean_hd95),
            opt(o.mean_asd),
        ));
    }
    fs::write(&args.out, csv)?;
    println!("wrote {} variant rows to {}", outcomes.len(), args.out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let pred = LabelGrid::from_tensor(&tensor_read(&args.pred)?, args.classes)?;
    let truth = LabelGrid::from_tensor(&tensor_read(&args.truth)?, args.classes)?;
    let report = evaluate(&pred, &truth, args.classes)?;
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "dice {:.4} ji {:.4} (foreground means) -> {}",
        report.mean_dice,
        report.mean_ji,
        args.out.display()
    );
    Ok(())
}

fn plot_cmd(args: PlotArgs) -> Result<()> {
    let log = RunLog::read_csv(&args.log)?;
    let files = plot_curves(&log, &args.out)?;
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}
