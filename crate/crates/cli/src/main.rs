use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hxnet::algebra::cayley_dickson_table;
use hxnet::data::{
    denormalize_and_quantize, generate_toy_city, save_tensor, Dataset, GeneratorConfig, Manifest, Split,
    WindowSpec, HORIZON_OFFSETS,
};
use hxnet::layers::{equivalent_real_param_count, hxconv_param_count, HxConv2d};
use hxnet::model::ModelConfig;
use hxnet::tensor::{conv2d, Conv2dSpec, Prng};
use hxnet::train::{evaluate, select_windows, Checkpoint, EvalReport, TrainConfig, Trainer, METRICS_HEADER};
use hxnet::verify::{run_selftest, verify_table};
use hxnet::Tensor;

/// Exit code for failed verification.
const VERIFY_FAILED: u8 = 2;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CliConfig {
    model: ModelConfig,
    train: TrainConfig,
    data: DataConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataConfig {
    /// Dataset directory, used when `--data` is absent.
    path: Option<PathBuf>,
    /// Replace the manifest's split lists.
    train_days: Option<Vec<usize>>,
    val_days: Option<Vec<usize>>,
}

fn config_help() -> String {
    let defaults = serde_json::to_string_pretty(&CliConfig::default()).expect("serializable");
    format!("Training config keys and their defaults (JSON, unknown keys are rejected):\n{defaults}")
}

#[derive(Parser)]
#[command(name = "hxnet", version, about = "Sedenion convolution networks for spatiotemporal forecasting", after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the signed index multiplication table.
    Table {
        #[arg(long, value_parser = ["1", "2", "4", "8", "16"])]
        dim: String,
        /// Check the table (at 16, against the published table as well).
        #[arg(long)]
        verify: bool,
    },
    /// Run the built-in algebra and layer checks.
    Selftest,
    /// Generate a synthetic toy-city dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Days held out for validation (the last ones).
        #[arg(long, default_value_t = 1)]
        val_days: usize,
        #[arg(long, default_value_t = 4)]
        lanes: usize,
        #[arg(long, default_value_t = 0.002)]
        incident_rate: f64,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes metrics.csv, last.ckpt and best.ckpt.
    #[command(after_help = config_help())]
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/last.ckpt` if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Forecast one window; writes a u8 [6, 8, H, W] HXT1 tensor.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        day: usize,
        /// Index of the first of the twelve input frames.
        #[arg(long)]
        t: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split; prints a CSV header and row.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Compare parameter counts and forward time against the equivalent real convolution.
    Bench {
        /// Ci,Co,k[,H,W] with channels per component.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Table { dim, verify } => table(dim.parse()?, verify),
        Command::Selftest => Ok(selftest()),
        Command::Gen { out, height, width, days, seed, val_days, lanes, incident_rate, force } => {
            let gen = GeneratorConfig { height, width, num_days: days, seed, num_lanes: lanes, incident_rate };
            generate(&out, gen, val_days, force)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, data, out, resume } => {
            train(config.as_deref(), data.as_deref(), &out, resume)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict { ckpt, data, day, t, out } => {
            predict(&ckpt, &data, day, t, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { ckpt, data, split } => {
            let report = eval(&ckpt, &data, split)?;
            println!("{}", EvalReport::csv_header());
            println!("{}", report.csv_row(&split.to_string()));
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { spec, iters } => {
            bench(&spec, iters)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn table(dim: usize, verify: bool) -> Result<ExitCode> {
    let table = cayley_dickson_table(dim)?;
    print!("{}", table.to_text());
    if !verify {
        return Ok(ExitCode::SUCCESS);
    }
    if let Err(e) = table.validate() {
        eprintln!("FAIL: {e}");
        return Ok(ExitCode::from(VERIFY_FAILED));
    }
    if dim != 16 {
        println!("OK: latin square with real row and column");
        return Ok(ExitCode::SUCCESS);
    }
    let (_, diff) = verify_table();
    if diff.is_empty() {
        println!("OK: 256/256 entries match Eq.(1)");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("FAIL: {}/256 entries differ", diff.len());
        for (r, c, got, want) in diff {
            eprintln!("  ({r},{c}): generated {got}, published {want}");
        }
        Ok(ExitCode::from(VERIFY_FAILED))
    }
}

fn selftest() -> ExitCode {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(VERIFY_FAILED)
    }
}

fn generate(out: &Path, gen: GeneratorConfig, val_days: usize, force: bool) -> Result<()> {
    let multiple = ModelConfig::default().spatial_multiple();
    if gen.height % multiple != 0 {
        bail!("height not divisible by {multiple}");
    }
    if gen.width % multiple != 0 {
        bail!("width not divisible by {multiple}");
    }
    if val_days > gen.num_days {
        bail!("--val-days {val_days} exceeds --days {}", gen.num_days);
    }
    let (days, static_map) = generate_toy_city(&gen)?;
    let mut manifest = Manifest::with_split(gen.height, gen.width, gen.num_days, gen.seed, val_days);
    manifest.num_lanes = Some(gen.num_lanes);
    manifest.incident_rate = Some(gen.incident_rate);
    Dataset::new(manifest, static_map, days)?.write(out, force)?;
    println!("wrote {} days to {}", gen.num_days, out.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    let Some(path) = path else { return Ok(CliConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn open_dataset(path: &Path, data: &DataConfig) -> Result<Dataset> {
    let mut ds = Dataset::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    if data.train_days.is_some() || data.val_days.is_some() {
        let mut manifest = ds.manifest.clone();
        if let Some(t) = &data.train_days {
            manifest.train = t.clone();
        }
        if let Some(v) = &data.val_days {
            manifest.val = v.clone();
        }
        ds = Dataset::new(manifest, ds.static_map, ds.days)?;
    }
    Ok(ds)
}

fn train(config: Option<&Path>, data: Option<&Path>, out: &Path, resume: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let data_path = data
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.path.clone())
        .context("no dataset: pass --data or set data.path in the config")?;
    let dataset = open_dataset(&data_path, &cfg.data)?;
    let last = out.join("last.ckpt");
    let mut trainer = if resume && last.exists() {
        let mut t = Trainer::from_checkpoint(&Checkpoint::load(&last)?)?;
        t.config.max_epochs = cfg.train.max_epochs;
        eprintln!("resuming after epoch {}", t.epoch);
        t
    } else {
        Trainer::new(cfg.model, cfg.train)?
    };
    eprintln!("{METRICS_HEADER}");
    trainer.fit_with(&dataset, Some(out), |m| eprintln!("{}", m.csv_row()))?;
    if let Some(b) = trainer.best_epoch {
        println!("best epoch {b}, val_mse {}", trainer.history[b - 1].val_mse);
    }
    Ok(())
}

fn predict(ckpt: &Path, data: &Path, day: usize, t: usize, out: &Path) -> Result<()> {
    let mut model = Trainer::load_model(ckpt)?;
    let dataset = Dataset::open(data)?;
    let window = WindowSpec::new(t, &HORIZON_OFFSETS);
    let batch = dataset.batch(&[(day, window)])?;
    let pred = model.predict(&batch.static_input, &batch.dynamic)?;
    let one = pred.index_first(0)?;
    save_tensor(out, &denormalize_and_quantize(&one)?)?;
    println!("wrote {:?} u8 forecast to {}", one.shape(), out.display());
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, split: Split) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(ckpt)?;
    let cfg = ckpt.meta.train.clone();
    let mut model = Trainer::from_checkpoint(&ckpt)?.model;
    let dataset = Dataset::open(data)?;
    let all = dataset.windows(split, &HORIZON_OFFSETS, cfg.window_stride);
    let max = match split {
        Split::Train => cfg.max_train_windows,
        Split::Val => cfg.max_val_windows,
    };
    Ok(evaluate(&mut model, &dataset, &select_windows(&all, max), cfg.batch_size)?)
}

fn bench(spec: &str, iters: usize) -> Result<()> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad --spec `{spec}`"))?;
    let (ci, co, k, h, w) = match parts[..] {
        [ci, co, k] => (ci, co, k, 32, 32),
        [ci, co, k, h, w] => (ci, co, k, h, w),
        _ => bail!("--spec takes Ci,Co,k or Ci,Co,k,H,W"),
    };
    if ci == 0 || co == 0 || k == 0 || h < k || w < k {
        bail!("--spec needs positive channels and a kernel no larger than the input");
    }
    let spec = Conv2dSpec::new(ci, co, k, 1, k / 2);
    let hx_params = hxconv_param_count(&spec, false);
    let real_params = equivalent_real_param_count(&spec, false);
    println!("ci,co,k,h,w,hx_params,real_params,ratio,hx_ms,real_ms");
    let mut row = format!("{ci},{co},{k},{h},{w},{hx_params},{real_params},{:.1}", real_params as f64 / hx_params as f64);
    if iters == 0 {
        row += ",,";
    } else {
        let mut rng = Prng::new(0);
        let layer = HxConv2d::new(spec.clone(), false, &mut rng);
        let x = Tensor::from_vec(&[1, 16 * ci, h, w], (0..16 * ci * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
        let real_spec = layer.real_spec();
        let real_w = Tensor::from_vec(
            &real_spec.weight_shape(),
            (0..real_params).map(|_| rng.uniform(-0.1, 0.1)).collect(),
        )?;
        let hx_ms = time_ms(iters, || layer.infer(&x).map(drop))?;
        let real_ms = time_ms(iters, || conv2d(&x, &real_w, &real_spec).map(drop))?;
        row += &format!(",{hx_ms:.3},{real_ms:.3}");
    }
    println!("{row}");
    Ok(())
}

fn time_ms(iters: usize, mut f: impl FnMut() -> hxnet::Result<()>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..iters {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / iters as f64)
}
