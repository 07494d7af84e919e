use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use flashguard_core::detector::{self, DetectorModel, GridDims, TriggerArray};
use flashguard_core::manifest::{self, DatasetRow, InjectionRow, KSample};
use flashguard_core::mitigation::{self, KLevelModel, MitigationConfig};
use flashguard_core::pipeline::{self, PipelineConfig};
use flashguard_core::{oracle, synth, video};

#[derive(Parser)]
#[command(name = "flashguard", version, about = "Flash-risk detection and mitigation for raw video")]
struct Cli {
    /// Seed for every generator; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Pipeline config JSON. Its grid and mitigation settings also act as
    /// defaults for the single-stage commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and label the trigger-detection corpus.
    GenDataset {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write only manifest.csv and specs.jsonl.
        #[arg(long)]
        no_videos: bool,
    },
    /// Generate the white-flash injection corpus manifest.
    GenInjection {
        #[arg(long, default_value_t = 200)]
        n_colors: usize,
        /// Comma-separated white-overlay intensities in percent.
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90")]
        intensities: Vec<u8>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the videos; otherwise rows are regenerated on demand.
        #[arg(long)]
        write_videos: bool,
    },
    /// Run the flash oracle on a video and print its report.
    Analyze {
        #[arg(long)]
        video: PathBuf,
    },
    /// Train the detector on a dataset manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        rows: RowRange,
        #[arg(long, default_value_t = detector::DEFAULT_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = detector::DEFAULT_LEARNING_RATE)]
        lr: f64,
    },
    /// Evaluate a detector against the oracle labels of a manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        rows: RowRange,
    },
    /// Run the trigger array and print per-frame mask rectangles as JSON lines.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        grid: Option<GridDims>,
    },
    /// Find the minimum darkening for every injection video.
    Sweep {
        #[arg(long)]
        injection_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the k-level model to sweep samples.
    FitK {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect and mitigate flashing in a video.
    Mitigate {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kmodel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mask log path (JSON lines); defaults to `<out>.masks.jsonl`.
        #[arg(long)]
        mask_log: Option<PathBuf>,
        #[arg(long)]
        grid: Option<GridDims>,
        #[arg(long)]
        no_smoothing: bool,
        #[arg(long)]
        no_darkening: bool,
    },
    /// Run every stage end to end and write summary.json.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_trigger: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        n_colors: Option<usize>,
    },
    /// Time the per-frame stages on one generated 10 s strobe.
    Bench {
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

/// Slice of manifest rows: `skip` leading rows, then at most `take`.
#[derive(Args)]
struct RowRange {
    #[arg(long, default_value_t = 0)]
    skip: usize,
    #[arg(long)]
    take: Option<usize>,
}

impl RowRange {
    fn select(&self, rows: Vec<DatasetRow>) -> Result<Vec<DatasetRow>> {
        let selected: Vec<_> = rows
            .into_iter()
            .skip(self.skip)
            .take(self.take.unwrap_or(usize::MAX))
            .collect();
        if selected.is_empty() {
            bail!("row selection is empty");
        }
        Ok(selected)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => manifest::read_json::<PipelineConfig>(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if !matches!(cli.command, Command::Pipeline { .. }) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .context("configuring worker pool")?;
    }

    match cli.command {
        Command::GenDataset { n, out, no_videos } => {
            let rows = synth::gen_dataset(n, cfg.trigger_seed(), &out, !no_videos)?;
            let risky = rows.iter().filter(|r| r.oracle_risky).count();
            print_json(&json!({ "videos": rows.len(), "oracle_risky": risky, "out": out }))
        }
        Command::GenInjection {
            n_colors,
            intensities,
            out,
            write_videos,
        } => {
            let rows = synth::gen_injection(n_colors, &intensities, cfg.injection_seed(), &out, write_videos)?;
            print_json(&json!({ "videos": rows.len(), "out": out }))
        }
        Command::Analyze { video } => print_json(&oracle::count_flashes(&video::read_video(&video)?)?),
        Command::Train {
            manifest: path,
            out,
            rows,
            epochs,
            lr,
        } => {
            let rows = rows.select(manifest::read_csv(&path)?)?;
            let model = pipeline::train_on_rows(&rows, epochs, lr)?;
            manifest::write_json(&out, &model)?;
            print_json(&json!({ "model": model, "threshold": model.threshold(), "rows": rows.len() }))
        }
        Command::Eval { model, manifest: path, rows } => {
            let model: DetectorModel = manifest::read_json(&model)?;
            let rows = rows.select(manifest::read_csv(&path)?)?;
            print_json(&detector::evaluate(&model, &rows)?)
        }
        Command::Detect { model, video, grid } => {
            let model: DetectorModel = manifest::read_json(&model)?;
            let v = video::read_video(&video)?;
            let mut array = TriggerArray::new(v.width(), v.height(), v.fps(), grid.unwrap_or(cfg.grid), model)?;
            let mut out = BufWriter::new(io::stdout().lock());
            for (i, frame) in v.frames().enumerate() {
                array.update(frame);
                serde_json::to_writer(&mut out, &json!({ "frame": i, "rects": array.regions() }))?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Sweep {
            injection_manifest,
            out,
        } => {
            let rows: Vec<InjectionRow> = manifest::read_csv(&injection_manifest)?;
            let base = injection_manifest.parent().unwrap_or(Path::new("."));
            let samples = mitigation::run_k_sweep(&rows, base)?;
            manifest::write_csv(&out, &samples)?;
            print_json(&json!({ "samples": samples.len(), "out": out }))
        }
        Command::FitK { samples, out } => {
            let samples: Vec<KSample> = manifest::read_csv(&samples)?;
            let model = mitigation::fit_k_model(&samples)?;
            manifest::write_json(&out, &model)?;
            print_json(&model)
        }
        Command::Mitigate {
            video: input,
            model,
            kmodel,
            out,
            mask_log,
            grid,
            no_smoothing,
            no_darkening,
        } => {
            let model: DetectorModel = manifest::read_json(&model)?;
            let k_model: KLevelModel = manifest::read_json(&kmodel)?;
            let mitigation_cfg = MitigationConfig {
                smoothing: cfg.mitigation.smoothing && !no_smoothing,
                darkening: cfg.mitigation.darkening && !no_darkening,
                ..cfg.mitigation
            };
            let v = video::read_video(&input)?;
            let result = mitigation::mitigate_stream(&v, &model, &k_model, &mitigation_cfg, grid.unwrap_or(cfg.grid))?;
            video::write_video(&result.video, &out)?;
            let log_path = mask_log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".masks.jsonl");
                p.into()
            });
            manifest::write_json_lines(&log_path, &result.log)?;
            let pre = oracle::count_flashes(&v)?;
            let post = oracle::count_flashes(&result.video)?;
            print_json(&json!({
                "out": out,
                "mask_log": log_path,
                "pre_flash_frames": pre.flash_frame_indices.len(),
                "post_flash_frames": post.flash_frame_indices.len(),
                "post_risky": post.risky,
                "efficacy": mitigation::efficacy(&pre, &post).ok(),
            }))
        }
        Command::Pipeline {
            out,
            n_trigger,
            n_train,
            n_test,
            n_colors,
        } => {
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            cfg.n_trigger = n_trigger.unwrap_or(cfg.n_trigger);
            cfg.n_train = n_train.unwrap_or(cfg.n_train);
            cfg.n_test = n_test.unwrap_or(cfg.n_test);
            cfg.n_colors = n_colors.unwrap_or(cfg.n_colors);
            let summary = pipeline::run_full_pipeline(&cfg)?;
            print_json(&summary)
        }
        Command::Bench { repeats } => bench(repeats.max(1), cfg.grid, &cfg.mitigation),
    }
}

fn bench(repeats: usize, grid: GridDims, mitigation_cfg: &MitigationConfig) -> Result<()> {
    let spec = synth::TriggerVideoSpec {
        background_flashing: true,
        background_rate: 10,
        background_colors: [[0, 0, 0], [255, 255, 255]],
        has_shape: false,
        ..synth::TriggerVideoSpec::from_seed(0)
    };
    let v = synth::gen_trigger_video(&spec)?;
    let model = DetectorModel {
        w: 1.0,
        bias: -30.0,
        feature_mean: 0.0,
        feature_std: 1.0,
    };
    let k_model = KLevelModel {
        b0: 60.0,
        b_l: 0.0,
        b_a: 0.0,
        b_b: 0.0,
        b_i: 0.0,
        pearson_k_l: None,
    };
    let frames = (v.frame_count() * repeats) as f64;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        let start = Instant::now();
        for _ in 0..repeats {
            f()?;
        }
        Ok(frames / start.elapsed().as_secs_f64())
    };
    let oracle_fps = time(&|| oracle::count_flashes(&v).map(drop).map_err(Into::into))?;
    let feature_fps = time(&|| detector::video_feature(&v).map(drop).map_err(Into::into))?;
    let array_fps = time(&|| detector::run_trigger_array(&v, &model, grid).map(drop).map_err(Into::into))?;
    let mitigate_fps = time(&|| {
        mitigation::mitigate_stream(&v, &model, &k_model, mitigation_cfg, grid)
            .map(drop)
            .map_err(Into::into)
    })?;
    print_json(&json!({
        "frames_per_second": {
            "oracle": oracle_fps,
            "video_feature": feature_fps,
            "trigger_array": array_fps,
            "mitigate_stream": mitigate_fps,
        },
        "video": { "width": v.width(), "height": v.height(), "frames": v.frame_count() },
        "repeats": repeats,
    }))
}

fn print_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
