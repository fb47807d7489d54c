use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use psdet::config::RunConfig;
use psdet::eval::{benchmark, evaluate};
use psdet::model::{complexity_report, train, CascadeModel};
use psdet::pipeline::{detect, render_overlay, write_detection_json};
use psdet::raster::Image;
use psdet::synthgen::{generate_split, Dataset, Split};
use psdet::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "psdet", version, about = "Two-stage parking-slot vertex detector")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores); 1 is bit-deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// key=value configuration file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Single key=value override, applied after --config; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
#[command(after_long_help = config_help())]
enum Command {
    /// Generate a labeled synthetic dataset.
    Gen {
        /// Scenes per slot type; half of each type (rounded down) go to the test split.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Train both stages on the training split.
    Train {
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Stop after this many steps (overrides train.max_steps).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Detect vertices and slots in images.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Also write an overlay PNG next to each JSON.
        #[arg(long)]
        overlay: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Measure end-to-end detection latency single-threaded and, when --threads > 1, on the wider pool.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn config_help() -> String {
    format!(
        "Configuration keys (--config file or --set), with defaults:\n{}",
        RunConfig::documentation()
    )
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.train.seed = common.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let mut cfg = resolve_config(common)?;
    if let Command::Train { steps: Some(n), .. } = &cli.command {
        cfg.train.max_steps = Some(*n);
    }
    let threads = if common.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        common.threads
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    eprintln!("# effective configuration");
    eprintln!("seed={}", common.seed);
    eprintln!("threads={threads}");
    eprintln!("out={}", common.out.display());
    eprint!("{}", cfg.effective());

    create_dir(&common.out)?;
    match &cli.command {
        Command::Gen { count } => {
            let summary = generate_split(&common.out, *count, common.seed)?;
            println!(
                "wrote {} train / {} test scenes to {}",
                summary.train,
                summary.test,
                common.out.display()
            );
        }
        Command::Train { data, .. } => {
            let samples = Dataset::open(data)?.load_split(Split::Train)?;
            info!("training on {} samples", samples.len());
            let model = CascadeModel::new(cfg.stage1, cfg.stage2, common.seed)?;
            let mut tc = cfg.train.clone();
            tc.checkpoint_dir = Some(common.out.join("checkpoints"));
            let outcome = train(&samples, model, &tc)?;
            let model_path = common.out.join("model.scm1");
            outcome.model.save(&model_path)?;
            write_file(&common.out.join("loss.csv"), outcome.curve_csv())?;
            write_file(&common.out.join("config.txt"), cfg.effective())?;
            if let Some(last) = outcome.curve.last() {
                println!(
                    "trained {} epochs: stage1 loss {:.4}, stage2 loss {:.4}; saved {}",
                    outcome.curve.len(),
                    last.stage1,
                    last.stage2,
                    model_path.display()
                );
            }
        }
        Command::Infer { model, overlay, images } => {
            let model = CascadeModel::load(model)?;
            for path in images {
                let image = Image::load(path)?;
                let det = detect(&model, &image, &cfg.pipeline)?;
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                write_detection_json(&common.out.join(format!("{stem}.json")), &det)?;
                if *overlay {
                    render_overlay(&image, &det).save(&common.out.join(format!("{stem}_overlay.png")))?;
                }
                println!(
                    "{}: {} vertices, {} slots",
                    path.display(),
                    det.vertices.len(),
                    det.slots.len()
                );
            }
        }
        Command::Eval { data, model, split } => {
            let model = CascadeModel::load(model)?;
            let samples = Dataset::open(data)?.load_split((*split).into())?;
            let ev = evaluate(&samples, |s| detect(&model, &s.image, &cfg.pipeline), &cfg.eval)?;
            let json = serde_json::to_string_pretty(&ev.to_json()).map_err(|e| Error::Format(e.to_string()))?;
            write_file(&common.out.join("report.json"), json + "\n")?;
            let table = ev.table();
            write_file(&common.out.join("report.txt"), &table)?;
            print!("{table}");
        }
        Command::Bench {
            data,
            model,
            warmup,
            iters,
        } => {
            let model = CascadeModel::load(model)?;
            let dataset = Dataset::open(data)?;
            let images: Vec<Image> = dataset.load_split(Split::Test)?.into_iter().map(|s| s.image).collect();
            // single-threaded first, then the configured pool when it is wider
            let mut counts = vec![1];
            if threads > 1 {
                counts.push(threads);
            }
            let mut runs = Vec::new();
            for &n in &counts {
                let rec = benchmark(&images, *warmup, *iters, n, |im| {
                    detect(&model, im, &cfg.pipeline).map(|_| ())
                })?;
                let name = if n == 1 {
                    "bench.csv".to_string()
                } else {
                    format!("bench_{n}threads.csv")
                };
                write_file(&common.out.join(name), rec.csv())?;
                println!(
                    "threads={} median={:.2}ms p95={:.2}ms fps={:.1}",
                    rec.threads, rec.median_ms, rec.p95_ms, rec.fps
                );
                runs.push(serde_json::json!({
                    "threads": rec.threads,
                    "iterations": rec.latencies.len(),
                    "median_ms": rec.median_ms,
                    "p95_ms": rec.p95_ms,
                    "fps": rec.fps,
                }));
            }
            let c = complexity_report(&model);
            let summary = serde_json::json!({
                "runs": runs,
                "payload_bytes": model.to_bytes().len(),
                "single_stage_macs": c.single_stage_macs,
                "cascade_macs_8_proposals": c.cascade_macs(8),
            });
            let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
            write_file(&common.out.join("bench.json"), text + "\n")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
