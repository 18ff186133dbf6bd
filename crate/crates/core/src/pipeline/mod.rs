//! Glue between the stages: CNN instance pools, patient-level cross-fitting
//! of risk scores, per-day saliency models and the sine toy problem.

mod toy;

pub use toy::{sine_toy, ToySample};

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cohortsim::{Cause, PatientRecord};
use crate::convnet::{
    assign_folds, kfold_evaluate, network_input, score_patient, FoldAssignment, FoldData, KFoldReport, Network,
    NetworkArch, ScoringConfig, TrainConfig,
};
use crate::error::{Error, Result};
use crate::instances::{
    materialize, paa, plan_instances, undersample_indices, ChannelRange, ChannelScaler, InstanceConfig, InstancePlan,
    TimeSeriesInstance,
};
use crate::landmark::ScoreSeries;
use crate::saliency::DayModels;
use crate::scalar::Scalar;

/// A PAA-reduced instance in physical units with the extremes of its
/// minute-level vitals, so fold scalers can be fit without the full matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub reduced: TimeSeriesInstance,
    pub range: ChannelRange,
}

/// Training instances for the CNN. Per fold, the scaler is fit on the
/// minute-level extremes of the training items only.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnPool {
    pub items: Vec<PoolItem>,
}

impl CnnPool {
    pub fn from_instances(instances: Vec<TimeSeriesInstance>, bin_minutes: usize) -> Result<Self> {
        let items = instances
            .into_par_iter()
            .map(|inst| {
                let mut range = ChannelRange::default();
                range.observe(&inst);
                Ok(PoolItem {
                    reduced: paa(&inst, bin_minutes)?,
                    range,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items })
    }

    /// Materializes and reduces the planned windows.
    pub fn from_plans(cohort: &[PatientRecord], plans: &[InstancePlan], n_cols: usize, bin_minutes: usize) -> Result<Self> {
        let items = plans
            .par_iter()
            .map(|plan| {
                let inst = materialize(plan, &cohort[plan.patient_index], n_cols);
                let mut range = ChannelRange::default();
                range.observe(&inst);
                Ok(PoolItem {
                    reduced: paa(&inst, bin_minutes)?,
                    range,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items })
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.reduced.label).collect()
    }
}

impl<T: Scalar> FoldData<T> for CnnPool {
    type Prep = ChannelScaler;

    fn len(&self) -> usize {
        self.items.len()
    }
    fn label(&self, i: usize) -> u8 {
        self.items[i].reduced.label
    }
    fn group(&self, i: usize) -> u32 {
        self.items[i].reduced.patient_id
    }
    fn fit_prep(&self, train: &[usize]) -> Result<ChannelScaler> {
        let mut range = ChannelRange::default();
        for &i in train {
            range.merge(&self.items[i].range);
        }
        range.to_scaler()
    }
    fn input(&self, prep: &ChannelScaler, i: usize) -> Vec<T> {
        network_input(&self.items[i].reduced, prep)
    }
}

/// Labelled windows of the cohort that pass `keep`, undersampled to
/// `ratio` controls per case.
pub fn select_plans(
    cohort: &[PatientRecord],
    config: &InstanceConfig,
    ratio: usize,
    seed: u64,
    keep: impl Fn(&InstancePlan) -> bool,
) -> Result<Vec<InstancePlan>> {
    let plans: Vec<InstancePlan> = plan_instances(cohort, config)?.into_iter().filter(|p| keep(p)).collect();
    let labels: Vec<u8> = plans.iter().map(|p| p.label).collect();
    Ok(undersample_indices(&labels, ratio, seed)?
        .into_iter()
        .map(|i| plans[i])
        .collect())
}

/// Patient-level folds over the whole cohort, stratified by infection.
/// Every patient gets a fold, so each one can later be scored by the
/// network that did not train on it.
pub fn patient_folds(cohort: &[PatientRecord], k: usize, seed: u64) -> Result<FoldAssignment> {
    let groups: Vec<(u32, bool)> = cohort.iter().map(|p| (p.id, p.cause == Cause::Infection)).collect();
    assign_folds(&groups, k, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub arch: NetworkArch,
    pub train: TrainConfig,
    pub folds: usize,
    pub undersample_ratio: usize,
    pub bin_minutes: usize,
    pub instances: InstanceConfig,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            arch: NetworkArch::default(),
            train: TrainConfig::default(),
            folds: 5,
            undersample_ratio: 8,
            bin_minutes: 9,
            instances: InstanceConfig::default(),
        }
    }
}

impl CnnConfig {
    pub fn scoring(&self, stride_hours: f64) -> ScoringConfig {
        ScoringConfig {
            width_hours: self.instances.width_hours,
            stride_hours,
            bin_minutes: self.bin_minutes,
        }
    }
}

/// Undersampled instance pool of the whole cohort.
pub fn build_pool(cohort: &[PatientRecord], config: &CnnConfig, seed: u64) -> Result<CnnPool> {
    let plans = select_plans(cohort, &config.instances, config.undersample_ratio, seed, |_| true)?;
    CnnPool::from_plans(cohort, &plans, config.instances.n_columns(), config.bin_minutes)
}

/// One network per patient fold, trained on the pool items of the other
/// folds.
pub fn train_cross_fitted<T: Scalar>(
    pool: &CnnPool,
    folds: &FoldAssignment,
    config: &CnnConfig,
) -> Result<KFoldReport<T, ChannelScaler>> {
    kfold_evaluate(pool, folds, config.arch, &config.train)
}

/// Score series of every patient from the network of the patient's own
/// fold, which never saw that patient in training.
pub fn cross_fit_scores<T: Scalar>(
    cohort: &[PatientRecord],
    folds: &FoldAssignment,
    models: &[(Network<T>, ChannelScaler)],
    scoring: &ScoringConfig,
) -> Result<ScoreSeries> {
    let scored = cohort
        .par_iter()
        .map(|p| {
            let f = folds
                .fold(p.id)
                .ok_or_else(|| Error::Data(format!("patient {} has no fold", p.id)))?;
            let (net, scaler) = models
                .get(f)
                .ok_or_else(|| Error::Data(format!("no model for fold {f}")))?;
            let series = score_patient(net, p, scoring, scaler)?;
            Ok((p.id, series.into_iter().map(|(t, s)| (t, s.as_f64())).collect()))
        })
        .collect::<Result<Vec<(u32, Vec<(f64, f64)>)>>>()?;
    Ok(scored.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayModelConfig {
    pub cnn: CnnConfig,
    /// Landmark days with their own network.
    pub days: Vec<u32>,
    /// Windows whose end lies within this many hours of the landmark form
    /// the day's pool.
    pub half_width_hours: f64,
    pub seed: u64,
}

impl Default for DayModelConfig {
    fn default() -> Self {
        Self {
            cnn: CnnConfig::default(),
            days: vec![3, 7, 10],
            half_width_hours: 48.0,
            seed: 0,
        }
    }
}

/// Per landmark day: a k-fold CNN on the windows around that day, with
/// each held-out raw window tagged by the fold model that scores it.
/// Returns the fold AUROCs of each day as well.
pub fn train_day_models<T: Scalar>(
    cohort: &[PatientRecord],
    config: &DayModelConfig,
) -> Result<Vec<(DayModels<T>, Vec<f64>)>> {
    let cnn = &config.cnn;
    let mut out = Vec::with_capacity(config.days.len());
    for &day in &config.days {
        let t = day as f64 * 24.0;
        let day_seed = config.seed.wrapping_add(day as u64);
        let plans = select_plans(cohort, &cnn.instances, cnn.undersample_ratio, day_seed, |p| {
            (p.interval.end - t).abs() <= config.half_width_hours
        })
        .map_err(|e| Error::Data(format!("day {day}: {e}")))?;
        let pool = CnnPool::from_plans(cohort, &plans, cnn.instances.n_columns(), cnn.bin_minutes)?;
        let mut has_case: BTreeMap<u32, bool> = BTreeMap::new();
        for p in &plans {
            *has_case.entry(p.patient_id).or_default() |= p.label == 1;
        }
        let groups: Vec<(u32, bool)> = has_case.into_iter().collect();
        let folds = assign_folds(&groups, cnn.folds, day_seed).map_err(|e| Error::Data(format!("day {day}: {e}")))?;
        let train = TrainConfig {
            seed: cnn.train.seed.wrapping_add(day as u64),
            ..cnn.train
        };
        let report = kfold_evaluate::<T, _>(&pool, &folds, cnn.arch, &train)?;
        let aurocs = report.aurocs();
        let n_cols = cnn.instances.n_columns();
        let mut test = Vec::new();
        let mut models = Vec::with_capacity(report.folds.len());
        for (m, fold) in report.folds.into_iter().enumerate() {
            for &i in &fold.test_indices {
                let plan = &plans[i];
                test.push((m, materialize(plan, &cohort[plan.patient_index], n_cols)));
            }
            models.push((fold.network, fold.prep));
        }
        out.push((DayModels { day, models, test }, aurocs));
    }
    Ok(out)
}
