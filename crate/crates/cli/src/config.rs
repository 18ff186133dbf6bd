//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file and `--set` overrides may only
//! name keys of the schema below. Lists are comma-separated.

use std::path::Path;
use std::str::FromStr;

use deeplm::cohortsim::SimConfig;
use deeplm::convnet::{NetworkArch, ScoringConfig, TrainConfig};
use deeplm::instances::{InstanceConfig, LabelRule};
use deeplm::kv::KeyValues;
use deeplm::landmark::{BootstrapConfig, LandmarkGrid, ModelSpec, Validation, CNN_COVARIATE};
use deeplm::pipeline::{CnnConfig, DayModelConfig};
use deeplm::saliency::ClusterConfig;

use crate::error::{CliError, Result};

/// `(key, default, description)`.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("seed", "1", "master seed; every stage derives its randomness from it"),
    ("sim.n_patients", "500", "admissions to simulate"),
    ("sim.mean_los_hours", "168", "mean length of stay"),
    ("sim.icuai_daily_rate", "0.04", "infection hazard per day"),
    ("sim.signature_lead_hours", "36", "hours of pre-onset drift"),
    ("sim.signature_strength", "1", "drift multiplier in [0, 2]"),
    ("sim.signature_profile", "sirs", "sirs | tachy_hyperventilation"),
    ("sim.missing_rate", "0.05", "fraction of monitor minutes missing"),
    ("sim.death_fraction", "0.15", "share of non-infectious exits that are deaths"),
    ("instances.width_hours", "24", "window width"),
    ("instances.shifts", "0,8,16", "window family offsets in hours"),
    ("instances.label_rule", "adjacent", "adjacent | all_preceding"),
    ("instances.bin_minutes", "9", "PAA bin width"),
    ("instances.undersample_ratio", "8", "controls kept per case"),
    ("cnn.blocks", "5", "conv blocks"),
    ("cnn.filters", "128", "filters per block"),
    ("cnn.kernel_size", "3", "convolution width"),
    ("cnn.pool_size", "2", "max-pool width"),
    ("cnn.dropout", "0.25", "dropout rate"),
    ("cnn.epochs", "30", "training epochs"),
    ("cnn.batch_size", "32", "minibatch size"),
    ("cnn.learning_rate", "0.001", "ADAM step size"),
    ("cnn.folds", "5", "patient folds for cross-fitting"),
    ("cnn.precision", "f64", "f64 | f32"),
    ("score.stride_hours", "8", "stride of the scored windows"),
    ("landmark.s0", "48", "first landmark (hours)"),
    ("landmark.s1", "240", "last landmark (hours)"),
    ("landmark.n", "25", "number of landmarks"),
    ("landmark.w", "24", "prediction window (hours)"),
    ("landmark.covariates", "fever,crp,ventilation,age,sex", "low-frequency covariates of both models"),
    ("landmark.standardize", "true", "centre and scale covariates before fitting"),
    ("landmark.max_iter", "50", "Newton iterations"),
    ("landmark.validation", "split", "split | kfold | insample"),
    ("landmark.test_fraction", "0.3", "held-out patient share for split validation"),
    ("landmark.folds", "10", "folds for kfold validation"),
    ("bootstrap.replicates", "200", "patient bootstrap replicates"),
    ("bootstrap.level", "0.95", "interval coverage"),
    ("evaluate.warning_level", "0.08", "CIF threshold for the lead time"),
    ("evaluate.quartile_landmarks", "48,96,144", "landmarks (hours) of the quartile CIF curves"),
    ("evaluate.curve_points", "49", "time points per quartile curve"),
    ("saliency.days", "3,7,10", "landmark days with their own CNN"),
    ("saliency.half_width_hours", "48", "windows ending this close to the day form its pool"),
    ("saliency.window_hours", "8", "salient window width"),
    ("saliency.layer_weights", "", "per-block weights; empty means 1, 2, ..."),
    ("saliency.alpha", "0.05", "KS test level"),
    ("saliency.export_per_day", "20", "instances per day whose maps are written out"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    kv: KeyValues,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {reason}"))
}

impl Default for Config {
    fn default() -> Self {
        let mut kv = KeyValues::new();
        for (k, v, _) in SCHEMA {
            kv.set(k, v);
        }
        Self { kv }
    }
}

impl Config {
    /// Defaults, then the file, then `overrides` (`key=value`), then `seed`.
    pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let kv = KeyValues::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg.merge(&kv)?;
        }
        for o in overrides {
            let kv = KeyValues::parse(o).map_err(|e| CliError::Config(format!("--set {o}: {e}")))?;
            cfg.merge(&kv)?;
        }
        if let Some(s) = seed {
            cfg.kv.set("seed", s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn merge(&mut self, kv: &KeyValues) -> Result<()> {
        for key in kv.keys() {
            if !SCHEMA.iter().any(|(k, _, _)| *k == key) {
                return Err(bad(key, "unknown key"));
            }
        }
        self.kv.extend(kv);
        Ok(())
    }

    /// Builds every typed view once so errors surface before any stage runs.
    fn validate(&self) -> Result<()> {
        self.sim()?;
        self.cnn()?;
        self.precision()?;
        self.scoring()?;
        self.grid()?.validate()?;
        self.validation()?;
        self.bootstrap()?;
        self.day_models()?;
        self.cluster()?;
        self.warning_level()?;
        self.quartile_landmarks()?;
        self.curve_points()?;
        self.export_per_day()?;
        Ok(())
    }

    /// Resolved configuration, sorted by key.
    pub fn to_text(&self) -> String {
        self.kv.to_text()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.kv.get_str(key).unwrap_or_default();
        raw.parse().map_err(|_| bad(key, format!("cannot parse `{raw}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.kv.get_str(key).unwrap_or_default();
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad(key, format!("cannot parse `{s}`"))))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").unwrap_or(1)
    }

    pub fn sim(&self) -> Result<SimConfig> {
        let mut kv = KeyValues::new();
        for (k, _, _) in SCHEMA {
            if let Some(short) = k.strip_prefix("sim.") {
                kv.set(short, self.kv.get_str(k).unwrap_or_default());
            }
        }
        kv.set("seed", self.seed());
        SimConfig::from_kv(&kv).map_err(|e| CliError::Config(format!("sim.{e}")))
    }

    pub fn instances(&self) -> Result<InstanceConfig> {
        let label_rule = match self.kv.get_str("instances.label_rule").unwrap_or_default() {
            "adjacent" => LabelRule::Adjacent,
            "all_preceding" => LabelRule::AllPreceding,
            other => return Err(bad("instances.label_rule", format!("unknown rule `{other}`"))),
        };
        let width_hours: f64 = self.get("instances.width_hours")?;
        if !(width_hours > 0.0) {
            return Err(bad("instances.width_hours", "must be > 0"));
        }
        let shifts: Vec<f64> = self.list("instances.shifts")?;
        if shifts.is_empty() || shifts.iter().any(|s| !(*s >= 0.0 && *s < width_hours)) {
            return Err(bad("instances.shifts", "need offsets in [0, width)"));
        }
        Ok(InstanceConfig {
            width_hours,
            shifts,
            label_rule,
        })
    }

    pub fn cnn(&self) -> Result<CnnConfig> {
        let instances = self.instances()?;
        let bin_minutes: usize = self.get("instances.bin_minutes")?;
        let n_cols = instances.n_columns();
        if bin_minutes == 0 || n_cols % bin_minutes != 0 {
            return Err(bad("instances.bin_minutes", format!("must divide {n_cols}")));
        }
        let arch = NetworkArch {
            n_blocks: self.get("cnn.blocks")?,
            filters: self.get("cnn.filters")?,
            kernel_size: self.get("cnn.kernel_size")?,
            pool_size: self.get("cnn.pool_size")?,
            dropout_rate: self.get("cnn.dropout")?,
            input_length: n_cols / bin_minutes,
            ..NetworkArch::default()
        };
        arch.validate().map_err(|e| bad("cnn", e))?;
        let train = TrainConfig {
            epochs: self.get("cnn.epochs")?,
            batch_size: self.get("cnn.batch_size")?,
            learning_rate: self.get("cnn.learning_rate")?,
            seed: self.seed(),
        };
        if train.epochs == 0 || train.batch_size == 0 || !(train.learning_rate > 0.0) {
            return Err(bad("cnn", "epochs, batch size and learning rate must be positive"));
        }
        let folds: usize = self.get("cnn.folds")?;
        if folds < 2 {
            return Err(bad("cnn.folds", "need at least 2"));
        }
        let undersample_ratio: usize = self.get("instances.undersample_ratio")?;
        if undersample_ratio == 0 {
            return Err(bad("instances.undersample_ratio", "must be >= 1"));
        }
        Ok(CnnConfig {
            arch,
            train,
            folds,
            undersample_ratio,
            bin_minutes,
            instances,
        })
    }

    pub fn precision(&self) -> Result<Precision> {
        match self.kv.get_str("cnn.precision").unwrap_or_default() {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            other => Err(bad("cnn.precision", format!("expected f32 or f64, got `{other}`"))),
        }
    }

    pub fn scoring(&self) -> Result<ScoringConfig> {
        let stride: f64 = self.get("score.stride_hours")?;
        if !(stride > 0.0) {
            return Err(bad("score.stride_hours", "must be > 0"));
        }
        Ok(self.cnn()?.scoring(stride))
    }

    pub fn grid(&self) -> Result<LandmarkGrid> {
        Ok(LandmarkGrid {
            s0: self.get("landmark.s0")?,
            s1: self.get("landmark.s1")?,
            n: self.get("landmark.n")?,
            w: self.get("landmark.w")?,
        })
    }

    /// The covariates-only model and the one that adds the CNN score.
    pub fn model_specs(&self) -> Result<[ModelSpec; 2]> {
        let covs: Vec<String> = self.list("landmark.covariates")?;
        if covs.iter().any(|c| c == CNN_COVARIATE) {
            return Err(bad("landmark.covariates", format!("`{CNN_COVARIATE}` is added by the second model")));
        }
        let mut base = ModelSpec::new(&covs.iter().map(String::as_str).collect::<Vec<_>>());
        base.standardize = self.get("landmark.standardize")?;
        base.fit.max_iter = self.get("landmark.max_iter")?;
        let mut ext = base.clone();
        ext.covariates.push(CNN_COVARIATE.to_string());
        Ok([base, ext])
    }

    pub fn validation(&self) -> Result<Validation> {
        let seed = self.seed();
        match self.kv.get_str("landmark.validation").unwrap_or_default() {
            "split" => {
                let test_fraction: f64 = self.get("landmark.test_fraction")?;
                if !(test_fraction > 0.0 && test_fraction < 1.0) {
                    return Err(bad("landmark.test_fraction", "must lie in (0, 1)"));
                }
                Ok(Validation::Split { test_fraction, seed })
            }
            "kfold" => {
                let k: usize = self.get("landmark.folds")?;
                if k < 2 {
                    return Err(bad("landmark.folds", "need at least 2"));
                }
                Ok(Validation::KFold { k, seed })
            }
            "insample" => Ok(Validation::InSample),
            other => Err(bad("landmark.validation", format!("unknown mode `{other}`"))),
        }
    }

    pub fn bootstrap(&self) -> Result<BootstrapConfig> {
        let b = BootstrapConfig {
            replicates: self.get("bootstrap.replicates")?,
            level: self.get("bootstrap.level")?,
            seed: self.seed(),
            ..BootstrapConfig::default()
        };
        if b.replicates < 50 {
            return Err(bad("bootstrap.replicates", "need at least 50"));
        }
        if !(b.level > 0.0 && b.level < 1.0) {
            return Err(bad("bootstrap.level", "must lie in (0, 1)"));
        }
        Ok(b)
    }

    pub fn warning_level(&self) -> Result<f64> {
        let w: f64 = self.get("evaluate.warning_level")?;
        if !(w > 0.0 && w < 1.0) {
            return Err(bad("evaluate.warning_level", "must lie in (0, 1)"));
        }
        Ok(w)
    }

    pub fn quartile_landmarks(&self) -> Result<Vec<f64>> {
        self.list("evaluate.quartile_landmarks")
    }

    pub fn curve_points(&self) -> Result<usize> {
        let n: usize = self.get("evaluate.curve_points")?;
        if n < 2 {
            return Err(bad("evaluate.curve_points", "need at least 2"));
        }
        Ok(n)
    }

    pub fn day_models(&self) -> Result<DayModelConfig> {
        let days: Vec<u32> = self.list("saliency.days")?;
        if days.is_empty() {
            return Err(bad("saliency.days", "need at least one day"));
        }
        let half_width_hours: f64 = self.get("saliency.half_width_hours")?;
        if !(half_width_hours > 0.0) {
            return Err(bad("saliency.half_width_hours", "must be > 0"));
        }
        Ok(DayModelConfig {
            cnn: self.cnn()?,
            days,
            half_width_hours,
            seed: self.seed(),
        })
    }

    pub fn cluster(&self) -> Result<ClusterConfig> {
        let weights: Vec<f64> = self.list("saliency.layer_weights")?;
        let blocks: usize = self.get("cnn.blocks")?;
        if !weights.is_empty() && weights.len() != blocks {
            return Err(bad("saliency.layer_weights", format!("need {blocks} weights, one per block")));
        }
        let alpha: f64 = self.get("saliency.alpha")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(bad("saliency.alpha", "must lie in (0, 1)"));
        }
        let window_hours: f64 = self.get("saliency.window_hours")?;
        if !(window_hours > 0.0) {
            return Err(bad("saliency.window_hours", "must be > 0"));
        }
        Ok(ClusterConfig {
            layer_weights: (!weights.is_empty()).then_some(weights),
            window_hours,
            bin_minutes: self.get("instances.bin_minutes")?,
            alpha,
        })
    }

    pub fn export_per_day(&self) -> Result<usize> {
        self.get("saliency.export_per_day")
    }
}

/// The documented schema as a commented config file.
pub fn schema_text() -> String {
    let mut out = String::new();
    for (k, v, doc) in SCHEMA {
        out.push_str(&format!("# {doc}\n{k} = {v}\n"));
    }
    out
}
