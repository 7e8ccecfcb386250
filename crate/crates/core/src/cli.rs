//! Command-line front end. Exit codes: 0 success, 2 usage or configuration
//! error, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{ablate, Variant};
use crate::checkpoint;
use crate::config::KeyValues;
use crate::crf::CrfConfig;
use crate::data::{
    gen_synthetic, write_voc_format, Dataset, ShapeClass, SyntheticConfig, VocDataset, VocOptions,
};
use crate::data::{LABELS_FILE, VAL_FILE};
use crate::error::{Error, Result};
use crate::eval::{evaluate, heatmap, save_heatmap};
use crate::head::PoolingMode;
use crate::model::ModelConfig;
use crate::train::{train, MetricsReport, TrainConfig};

pub const CHECKPOINT_FILE: &str = "ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_LOG: &str = "metrics.log";
pub const DIVERGENCE_FILE: &str = "divergence.json";

#[derive(Debug, Parser)]
#[command(
    name = "apc",
    version,
    about = "Weakly supervised segmentation from image-level labels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic shapes dataset in the folder layout.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint, metrics log and report.
    Train(TrainArgs),
    /// Score a checkpoint against dataset masks.
    Eval(EvalArgs),
    /// Compare pooling modes with and without the contrast loss.
    Ablate(AblateArgs),
    /// Render per-class patch probability maps for one image.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images listed in labels.txt.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Extra held-out images listed in val.txt.
    #[arg(long, default_value_t = 0)]
    pub n_val: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// Comma-separated shape names (circle, square, triangle) or a count.
    #[arg(long, default_value = "3")]
    pub classes: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty output folder.
    #[arg(long)]
    pub force: bool,
}

/// Training options. Unset flags fall back to the config file, then to the
/// defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct TrainOpts {
    /// Plain-text `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// desk or compact.
    #[arg(long)]
    pub model: Option<String>,
    /// gap, gmp, topk or akp.
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_high: Option<f64>,
    #[arg(long)]
    pub lr_low: Option<f64>,
    #[arg(long, overrides_with = "no_pcl")]
    pub pcl: bool,
    #[arg(long, overrides_with = "pcl")]
    pub no_pcl: bool,
    /// Mark patches scored in [beta, eps) as ignored by the segmentation loss.
    #[arg(long)]
    pub ignore_band: bool,
    /// Refine evaluation predictions with the mean-field CRF.
    #[arg(long)]
    pub crf: bool,
}

const CONFIG_KEYS: &[&str] = &[
    "model",
    "pooling",
    "k",
    "theta",
    "eps",
    "beta",
    "lambda1",
    "lambda2",
    "epochs",
    "batch",
    "seed",
    "lr-high",
    "lr-low",
    "pcl",
    "ignore-band",
    "crf",
];

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &KeyValues, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

impl TrainOpts {
    /// Resolves the options for a dataset with `n_classes` foreground classes.
    pub fn resolve(&self, n_classes: usize) -> Result<TrainConfig> {
        let file = match &self.config {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::default(),
        };
        file.check_known(CONFIG_KEYS)?;
        let model = match pick(self.model.clone(), &file, "model")?.as_deref() {
            None | Some("desk") => ModelConfig::desk(n_classes),
            Some("compact") => ModelConfig::compact(n_classes),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown model `{other}` (expected desk or compact)"
                )))
            }
        };
        let mut cfg = TrainConfig::new(model);
        if let Some(p) = pick(self.pooling.clone(), &file, "pooling")? {
            cfg.pooling.mode = p.parse::<PoolingMode>()?;
        }
        macro_rules! set {
            ($field:expr, $flag:expr, $key:literal) => {
                if let Some(v) = pick($flag, &file, $key)? {
                    $field = v;
                }
            };
        }
        set!(cfg.pooling.k, self.k, "k");
        set!(cfg.pooling.theta, self.theta, "theta");
        set!(cfg.eps, self.eps, "eps");
        set!(cfg.beta, self.beta, "beta");
        set!(cfg.weights.seg, self.lambda1, "lambda1");
        set!(cfg.weights.pce, self.lambda2, "lambda2");
        set!(cfg.max_epochs, self.epochs, "epochs");
        set!(cfg.batch_size, self.batch, "batch");
        set!(cfg.seed, self.seed, "seed");
        set!(cfg.lr_high, self.lr_high, "lr-high");
        set!(cfg.lr_low, self.lr_low, "lr-low");
        let pcl_flag = if self.pcl {
            Some(true)
        } else if self.no_pcl {
            Some(false)
        } else {
            None
        };
        set!(cfg.pcl_enabled, pcl_flag, "pcl");
        set!(
            cfg.ignore_band,
            self.ignore_band.then_some(true),
            "ignore-band"
        );
        if pick(self.crf.then_some(true), &file, "crf")?.unwrap_or(false) {
            cfg.crf = Some(CrfConfig::default());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate after every epoch instead of only after the last one.
    #[arg(long)]
    pub eval_every_epoch: bool,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Labels file to score; val.txt when present, else labels.txt.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub crf: bool,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Write the table as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Image id from the labels file.
    #[arg(long)]
    pub image: String,
    /// Class id (0 is background); repeat for several maps.
    #[arg(long = "class", required = true)]
    pub classes: Vec<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Checkpoint(_)
        | Error::MalformedLabels { .. }
        | Error::MissingImages(_)
        | Error::DimensionMismatch { .. } => 2,
        _ => 3,
    }
}

fn parse_classes(spec: &str) -> Result<Vec<ShapeClass>> {
    if let Ok(n) = spec.trim().parse::<usize>() {
        if n == 0 || n > ShapeClass::ALL.len() {
            return Err(Error::Config(format!(
                "--classes {n} outside 1..={}",
                ShapeClass::ALL.len()
            )));
        }
        return Ok(ShapeClass::ALL[..n].to_vec());
    }
    spec.split(',')
        .map(|name| {
            ShapeClass::ALL
                .into_iter()
                .find(|c| c.name() == name.trim())
                .ok_or_else(|| {
                    Error::Config(format!("unknown shape `{name}` (circle, square, triangle)"))
                })
        })
        .collect()
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let classes = parse_classes(&args.classes)?;
    if args.out.exists() && fs::read_dir(&args.out)?.next().is_some() && !args.force {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to write into it",
            args.out.display()
        )));
    }
    let cfg = SyntheticConfig {
        seed: args.seed,
        n_images: args.n + args.n_val,
        image_size: args.size,
        classes,
        ..Default::default()
    };
    cfg.validate(1)?;
    let data = gen_synthetic(&cfg)?;
    let names: Vec<&str> = ShapeClass::ALL[..data.n_classes]
        .iter()
        .map(|c| c.name())
        .collect();
    let (train_set, val_set) = data.split_at(args.n);
    write_voc_format(&args.out, LABELS_FILE, &train_set.samples, &names)?;
    if args.n_val > 0 {
        write_voc_format(&args.out, VAL_FILE, &val_set.samples, &names)?;
    } else if args.out.join(VAL_FILE).exists() {
        fs::remove_file(args.out.join(VAL_FILE))?;
    }
    println!(
        "wrote {} images ({} held out) to {}",
        args.n + args.n_val,
        args.n_val,
        args.out.display()
    );
    Ok(())
}

fn open_split(root: &Path, labels_file: &str) -> Result<VocDataset> {
    VocDataset::open(
        root,
        &VocOptions {
            labels_file: Some(labels_file.to_string()),
            ..Default::default()
        },
    )
}

/// The held-out split when `val.txt` exists, otherwise the training list.
fn default_eval_split(root: &Path) -> &'static str {
    if root.join(VAL_FILE).is_file() {
        VAL_FILE
    } else {
        LABELS_FILE
    }
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join(METRICS_LOG), report.log_lines().join("\n") + "\n")?;
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<MetricsReport> {
    let train_set = open_split(&args.data, LABELS_FILE)?;
    let eval_name = default_eval_split(&args.data);
    let eval_set = open_split(&args.data, eval_name)?;
    let mut cfg = args.opts.resolve(train_set.n_classes())?;
    cfg.eval_every_epoch = args.eval_every_epoch;
    fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    let result = train(&train_set, Some(&eval_set), &cfg, &mut |model, m| {
        checkpoint::save(model, &ckpt)?;
        let miou = m
            .eval
            .as_ref()
            .map_or("-".to_string(), |e| format!("{:.4}", e.miou()));
        println!(
            "epoch {} loss {:.5} miou({eval_name}) {miou}",
            m.epoch, m.mean_loss
        );
        Ok(())
    });
    match result {
        Ok((_, report)) => {
            write_report(&args.out, &report)?;
            if let Some(miou) = report.miou() {
                println!("miou={miou}");
            }
            println!("report written to {}", args.out.join(REPORT_FILE).display());
            Ok(report)
        }
        Err(Error::Divergence(snap)) => {
            let path = args.out.join(DIVERGENCE_FILE);
            fs::write(&path, serde_json::to_string_pretty(&snap)?)?;
            eprintln!("diagnostic snapshot written to {}", path.display());
            Err(Error::Divergence(snap))
        }
        Err(e) => Err(e),
    }
}

pub fn eval_cmd(args: &EvalArgs) -> Result<f64> {
    let model = checkpoint::load(&args.ckpt)?;
    let split = args
        .split
        .clone()
        .unwrap_or_else(|| default_eval_split(&args.data).to_string());
    let ds = open_split(&args.data, &split)?;
    let pseudo = crate::losses::PseudoLabelConfig {
        beta: args.beta,
        ..Default::default()
    };
    let crf = args.crf.then(CrfConfig::default);
    let report = evaluate(&model, &ds, &pseudo, crf.as_ref())?;
    for (c, iou) in report.decoder.per_class_iou.iter().enumerate() {
        if let Some(iou) = iou {
            println!("class={c} iou={iou}");
        }
    }
    println!("pseudo_miou={}", report.pseudo.miou);
    println!("miou={}", report.decoder.miou);
    Ok(report.decoder.miou)
}

pub fn ablate_cmd(args: &AblateArgs) -> Result<()> {
    let train_set = open_split(&args.data, LABELS_FILE)?;
    let eval_set = open_split(&args.data, default_eval_split(&args.data))?;
    let base = args.opts.resolve(train_set.n_classes())?;
    let seeds: Vec<u64> = (0..args.seeds).map(|s| base.seed + s).collect();
    let table = ablate(
        &train_set,
        &eval_set,
        &base,
        &Variant::grid(),
        &seeds,
        &mut |v, seed, r| {
            eprintln!(
                "{} seed {seed}: miou {:.4}",
                v.label(),
                r.miou().unwrap_or(f64::NAN)
            );
        },
    )?;
    print!("{}", table.render());
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

pub fn heatmap_cmd(args: &HeatmapArgs) -> Result<Vec<PathBuf>> {
    let model = checkpoint::load(&args.ckpt)?;
    let mut found = None;
    for split in [LABELS_FILE, VAL_FILE] {
        if !args.data.join(split).is_file() {
            continue;
        }
        let ds = open_split(&args.data, split)?;
        if let Some(i) = ds.position(&args.image) {
            found = Some(ds.get(i)?);
            break;
        }
    }
    let sample = found
        .ok_or_else(|| Error::Config(format!("image `{}` is not in the dataset", args.image)))?;
    fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    for &class in &args.classes {
        let map = heatmap(&model, &sample.image, class)?;
        let path = args
            .out
            .join(format!("heatmap_{}_class{class}.png", args.image));
        save_heatmap(&map, &path)?;
        println!("{}", path.display());
        written.push(path);
    }
    Ok(written)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a).map(drop),
        Command::Eval(a) => eval_cmd(a).map(drop),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Heatmap(a) => heatmap_cmd(a).map(drop),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "theta = 0.5\nk = 4\npooling = gmp\npcl = false\n").unwrap();
        let opts = TrainOpts {
            config: Some(path),
            theta: Some(0.7),
            ..Default::default()
        };
        let cfg = opts.resolve(3).unwrap();
        assert_eq!(cfg.pooling.theta, 0.7);
        assert_eq!(cfg.pooling.k, 4);
        assert_eq!(cfg.pooling.mode, PoolingMode::Gmp);
        assert!(!cfg.pcl_enabled);
    }

    #[test]
    fn defaults_match_training_defaults() {
        let cfg = TrainOpts::default().resolve(3).unwrap();
        assert_eq!(cfg, TrainConfig::new(ModelConfig::desk(3)));
        assert_eq!((cfg.pooling.k, cfg.pooling.theta, cfg.eps), (6, 0.9, 0.85));
        assert_eq!((cfg.weights.seg, cfg.weights.pce), (0.02, 0.01));
    }

    #[test]
    fn negative_theta_is_a_config_error() {
        let opts = TrainOpts {
            theta: Some(-1.0),
            ..Default::default()
        };
        let err = opts.resolve(3).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn class_lists() {
        assert_eq!(
            parse_classes("2").unwrap(),
            vec![ShapeClass::Circle, ShapeClass::Square]
        );
        assert_eq!(
            parse_classes("triangle").unwrap(),
            vec![ShapeClass::Triangle]
        );
        assert!(parse_classes("hexagon").is_err());
    }
}
