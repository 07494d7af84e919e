//! End-to-end reproduction run: generate, label, train, evaluate, sweep,
//! fit, mitigate, report. Every stage writes plain files under `out_dir`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{self, DetectorModel, EvalMetrics, GridDims};
use crate::error::{Error, Result};
use crate::manifest::{self, DatasetRow};
use crate::mitigation::{self, KLevelModel, MitigationConfig};
use crate::oracle::{self, RASTER_HEIGHT, RASTER_WIDTH};
use crate::synth::{self, TriggerVideoSpec};

/// Sub-seed tags, XORed into the config seed per stage.
const TRIGGER_TAG: u64 = 0x7472_6967_6765_7200;
const INJECTION_TAG: u64 = 0x696e_6a65_6374_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n_trigger: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_colors: usize,
    pub intensities: Vec<u8>,
    pub grid: GridDims,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mitigation: MitigationConfig,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Also write trigger videos as FGRV1 files.
    pub write_videos: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 2024,
            n_trigger: 1000,
            n_train: 800,
            n_test: 200,
            n_colors: 200,
            intensities: synth::INJECTION_INTENSITIES.to_vec(),
            grid: GridDims::DEFAULT,
            epochs: detector::DEFAULT_EPOCHS,
            learning_rate: detector::DEFAULT_LEARNING_RATE,
            mitigation: MitigationConfig::default(),
            out_dir: PathBuf::from("out"),
            jobs: 0,
            write_videos: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_test > self.n_trigger {
            return Err(Error::Config(format!(
                "n_train + n_test = {} exceeds n_trigger = {}",
                self.n_train + self.n_test,
                self.n_trigger
            )));
        }
        if self.n_test == 0 || self.n_train == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        if self.n_colors == 0 || self.intensities.is_empty() {
            return Err(Error::Config("the injection sweep needs colors and intensities".into()));
        }
        if let Some(bad) = self.intensities.iter().find(|i| !(10..=90).contains(*i) || *i % 10 != 0) {
            return Err(Error::Config(format!("intensity {bad} is not a multiple of 10 in 10..=90")));
        }
        if self.learning_rate <= 0.0 || self.epochs == 0 {
            return Err(Error::Config("training needs epochs > 0 and a positive learning rate".into()));
        }
        self.grid
            .check_fits(RASTER_WIDTH, RASTER_HEIGHT)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.mitigation.validate()
    }

    pub fn trigger_seed(&self) -> u64 {
        self.seed ^ TRIGGER_TAG
    }

    pub fn injection_seed(&self) -> u64 {
        self.seed ^ INJECTION_TAG
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub train_risky: usize,
    pub train_total: usize,
    pub test_risky: usize,
    pub test_total: usize,
}

/// Per-video result of the mitigation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyRow {
    pub path: String,
    pub pre_flash_frames: usize,
    pub post_flash_frames: usize,
    pub pre_flashes: usize,
    pub post_flashes: usize,
    pub post_risky: bool,
    pub efficacy: f64,
    pub content_preserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReduction {
    pub analysis_raster: f64,
    pub reference_1024x768: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub class_balance: ClassBalance,
    pub model: DetectorModel,
    pub eval: EvalMetrics,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    #[serde(rename = "pearson_kL")]
    pub pearson_k_l: Option<f64>,
    pub k_model: KLevelModel,
    pub k_samples: usize,
    pub mitigated_videos: usize,
    pub mean_efficacy: Option<f64>,
    /// Efficacy over all flash frames of all mitigated videos together.
    pub pooled_efficacy: Option<f64>,
    pub still_risky_after_mitigation: usize,
    pub content_preservation_violations: usize,
    pub sampling_reduction: SamplingReduction,
    pub notes: Vec<String>,
    /// Wall-clock milliseconds per stage; the only nondeterministic field.
    pub timings_ms: BTreeMap<String, u64>,
}

fn stage<T>(name: &'static str, timings: &mut BTreeMap<String, u64>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    let start = Instant::now();
    let out = f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })?;
    timings.insert(name.to_string(), start.elapsed().as_millis() as u64);
    Ok(out)
}

/// Runs every stage in order on a worker pool of `cfg.jobs` threads and
/// writes `summary.json`. Artifacts of completed stages stay on disk when a
/// later stage fails.
pub fn run_full_pipeline(cfg: &PipelineConfig) -> Result<Summary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<Summary> {
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    log::info!("config: {}", serde_json::to_string(cfg).expect("config serializes"));
    manifest::write_json(out.join("config.json"), cfg)?;
    let mut timings = BTreeMap::new();
    let mut notes = Vec::new();

    let (specs, rows) = stage("dataset", &mut timings, || {
        let specs = synth::trigger_specs(cfg.n_trigger, cfg.trigger_seed());
        let rows = synth::build_dataset(&specs, out, cfg.write_videos)?;
        manifest::write_csv(out.join("manifest.csv"), &rows)?;
        manifest::write_json_lines(out.join("specs.jsonl"), &specs)?;
        Ok((specs, rows))
    })?;
    let (train, rest) = rows.split_at(cfg.n_train);
    let test = &rest[..cfg.n_test];
    let test_specs = &specs[cfg.n_train..cfg.n_train + cfg.n_test];
    let class_balance = ClassBalance {
        train_risky: train.iter().filter(|r| r.oracle_risky).count(),
        train_total: train.len(),
        test_risky: test.iter().filter(|r| r.oracle_risky).count(),
        test_total: test.len(),
    };

    let model = stage("train", &mut timings, || {
        let model = train_on_rows(train, cfg.epochs, cfg.learning_rate)?;
        manifest::write_json(out.join("model.json"), &model)?;
        Ok(model)
    })?;

    let eval = stage("eval", &mut timings, || {
        let eval = detector::evaluate(&model, test)?;
        manifest::write_json(out.join("eval.json"), &eval)?;
        Ok(eval)
    })?;
    let (tpr, tnr) = (eval.true_positive_rate(), eval.true_negative_rate());
    if tpr < tnr - 0.05 {
        notes.push(format!(
            "true-positive rate {tpr:.3} is more than 0.05 below the true-negative rate {tnr:.3}"
        ));
    }
    if model.threshold().is_none() {
        notes.push("trained weight is not positive; no flash threshold exists".into());
    }

    let samples = stage("sweep", &mut timings, || {
        let rows = synth::gen_injection(cfg.n_colors, &cfg.intensities, cfg.injection_seed(), out, false)?;
        let samples = mitigation::run_k_sweep(&rows, out)?;
        manifest::write_csv(out.join("samples.csv"), &samples)?;
        Ok(samples)
    })?;

    let k_model = stage("fit-k", &mut timings, || {
        let k_model = mitigation::fit_k_model(&samples)?;
        manifest::write_json(out.join("kmodel.json"), &k_model)?;
        Ok(k_model)
    })?;
    if k_model.pearson_k_l.is_none() {
        notes.push("minimum k or L* is constant over the sweep; pearson_kL is undefined".into());
    }

    let efficacy_rows = stage("mitigate", &mut timings, || {
        let risky: Vec<(&DatasetRow, &TriggerVideoSpec)> = test
            .iter()
            .zip(test_specs)
            .filter(|(r, _)| r.oracle_risky)
            .collect();
        let rows = risky
            .par_iter()
            .map(|(row, spec)| mitigate_one(row, spec, &model, &k_model, cfg))
            .collect::<Result<Vec<_>>>()?;
        manifest::write_csv(out.join("efficacy.csv"), &rows)?;
        Ok(rows)
    })?;

    let mean_efficacy = (!efficacy_rows.is_empty())
        .then(|| efficacy_rows.iter().map(|r| r.efficacy).sum::<f64>() / efficacy_rows.len() as f64);
    let pre_total: usize = efficacy_rows.iter().map(|r| r.pre_flash_frames).sum();
    let post_total: usize = efficacy_rows.iter().map(|r| r.post_flash_frames).sum();
    let pooled_efficacy = (pre_total > 0).then(|| 100.0 * (1.0 - post_total as f64 / pre_total as f64));
    if efficacy_rows.is_empty() {
        notes.push("no oracle-risky test videos; efficacy is undefined".into());
    }

    let summary = Summary {
        class_balance,
        model,
        eval,
        true_positive_rate: tpr,
        true_negative_rate: tnr,
        pearson_k_l: k_model.pearson_k_l,
        k_model,
        k_samples: samples.len(),
        mitigated_videos: efficacy_rows.len(),
        mean_efficacy,
        pooled_efficacy,
        still_risky_after_mitigation: efficacy_rows.iter().filter(|r| r.post_risky).count(),
        content_preservation_violations: efficacy_rows.iter().filter(|r| !r.content_preserved).count(),
        sampling_reduction: SamplingReduction {
            analysis_raster: detector::sampling_reduction(RASTER_WIDTH, RASTER_HEIGHT, cfg.grid.cols, cfg.grid.rows)?,
            reference_1024x768: detector::sampling_reduction(1024, 768, cfg.grid.cols, cfg.grid.rows)?,
        },
        notes,
        timings_ms: timings,
    };
    manifest::write_json(out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Trains the detector on manifest rows (feature `f_avg`, oracle label).
pub fn train_on_rows(rows: &[DatasetRow], epochs: usize, learning_rate: f64) -> Result<DetectorModel> {
    let features: Vec<f64> = rows.iter().map(|r| r.f_avg).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.oracle_risky).collect();
    detector::train_logistic(&features, &labels, epochs, learning_rate)
}

fn mitigate_one(
    row: &DatasetRow,
    spec: &TriggerVideoSpec,
    model: &DetectorModel,
    k_model: &KLevelModel,
    cfg: &PipelineConfig,
) -> Result<EfficacyRow> {
    let v = synth::gen_trigger_video(spec)?;
    let pre = oracle::count_flashes(&v)?;
    let out = mitigation::mitigate_stream(&v, model, k_model, &cfg.mitigation, cfg.grid)?;
    let post = oracle::count_flashes(&out.video)?;
    Ok(EfficacyRow {
        path: row.path.clone(),
        pre_flash_frames: pre.flash_frame_indices.len(),
        post_flash_frames: post.flash_frame_indices.len(),
        pre_flashes: pre.flashes.len(),
        post_flashes: post.flashes.len(),
        post_risky: post.risky,
        efficacy: mitigation::efficacy(&pre, &post)?,
        content_preserved: mitigation::unmasked_pixels_unchanged(&v, &out.video, &out.log),
    })
}

/// Reads a summary back, for tooling that compares runs.
pub fn read_summary(dir: &Path) -> Result<Summary> {
    manifest::read_json(dir.join("summary.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let over = PipelineConfig {
            n_train: 900,
            ..Default::default()
        };
        assert!(matches!(over.validate(), Err(Error::Config(_))));
        let bad_intensity = PipelineConfig {
            intensities: vec![15],
            ..Default::default()
        };
        assert!(bad_intensity.validate().is_err());
        let bad_grid = PipelineConfig {
            grid: GridDims::new(400, 10),
            ..Default::default()
        };
        assert!(bad_grid.validate().is_err());
    }

    #[test]
    fn invalid_config_fails_before_any_work() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            n_trigger: 10,
            n_train: 8,
            n_test: 8,
            out_dir: dir.path().join("run"),
            ..Default::default()
        };
        assert!(run_full_pipeline(&cfg).is_err());
        assert!(!cfg.out_dir.exists());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let partial: PipelineConfig = serde_json::from_str(r#"{"seed": 7, "n_trigger": 300}"#).unwrap();
        assert_eq!((partial.seed, partial.n_trigger, partial.n_train), (7, 300, 800));
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let mut t = BTreeMap::new();
        let err = stage("fit-k", &mut t, || -> Result<()> { Err(Error::Fit("x".into())) }).unwrap_err();
        assert!(err.to_string().starts_with("stage `fit-k` failed"));
        assert!(t.is_empty());
    }
}
