use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cox::{fit_landmark_supermodel, CoxFitConfig};
use super::predict::{auroc_global, CompetingRisksModel};
use super::SuperDataset;
use crate::convnet::assign_folds;
use crate::error::{Error, Result};
use crate::metrics::auroc;

/// Covariates and fitting options of one landmark model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub covariates: Vec<String>,
    pub standardize: bool,
    pub fit: CoxFitConfig,
}

impl ModelSpec {
    pub fn new(covariates: &[&str]) -> Self {
        Self {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            standardize: true,
            fit: CoxFitConfig::default(),
        }
    }

    pub fn fit(&self, ds: &SuperDataset) -> Result<CompetingRisksModel> {
        CompetingRisksModel::new(
            fit_landmark_supermodel(ds, 1, &self.covariates, self.standardize, &self.fit)?,
            fit_landmark_supermodel(ds, 2, &self.covariates, self.standardize, &self.fit)?,
        )
    }
}

/// How predictions used for AUROC are separated from the fitting data.
/// Patients, not rows, are split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Validation {
    InSample,
    Split { test_fraction: f64, seed: u64 },
    KFold { k: usize, seed: u64 },
}

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Validation::InSample => write!(f, "in-sample"),
            Validation::Split { test_fraction, seed } => {
                write!(f, "patient split, test fraction {test_fraction}, seed {seed}")
            }
            Validation::KFold { k, seed } => write!(f, "{k}-fold by patient, seed {seed}"),
        }
    }
}

impl Default for Validation {
    fn default() -> Self {
        Validation::Split {
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkEvaluation {
    /// `F̂₁(t_LM + w)` per row of the dataset; NaN for rows not evaluated.
    pub horizon_cif: Vec<f64>,
    /// Validation round that scored each row.
    pub round: Vec<Option<usize>>,
    pub per_landmark: Vec<Option<f64>>,
    /// Evaluated rows per landmark.
    pub risk_set_sizes: Vec<usize>,
    pub global: f64,
    /// Landmarks whose AUROC is undefined (one class only).
    pub undefined: Vec<usize>,
}

fn infected_patients(ds: &SuperDataset) -> Vec<(u32, bool)> {
    let mut map: BTreeMap<u32, bool> = BTreeMap::new();
    for r in &ds.rows {
        *map.entry(r.patient_id).or_default() |= r.status == 1;
    }
    map.into_iter().collect()
}

/// Test-patient sets of each validation round.
fn test_sets(ds: &SuperDataset, validation: Validation) -> Result<Vec<HashSet<u32>>> {
    let groups = infected_patients(ds);
    match validation {
        Validation::InSample => Ok(vec![groups.iter().map(|g| g.0).collect()]),
        Validation::Split { test_fraction, seed } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::config("validation.test_fraction", "must lie in (0, 1)"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut test = HashSet::new();
            for stratum in [true, false] {
                let mut ids: Vec<u32> = groups.iter().filter(|g| g.1 == stratum).map(|g| g.0).collect();
                ids.shuffle(&mut rng);
                let n = (ids.len() as f64 * test_fraction).round() as usize;
                test.extend(ids.into_iter().take(n));
            }
            Ok(vec![test])
        }
        Validation::KFold { k, seed } => {
            let folds = assign_folds(&groups, k, seed)?;
            let mut sets = vec![HashSet::new(); k];
            for (id, f) in folds.fold_of {
                sets[f].insert(id);
            }
            Ok(sets)
        }
    }
}

/// Per-landmark and global AUROC of `(round, landmark, score, case)` rows.
/// Within a landmark, AUROC is computed per validation round and averaged
/// with the rounds' risk-set sizes as weights: rows scored by different
/// fold models have different baselines and are not ranked against each
/// other.
pub(crate) fn summarize(
    n_landmarks: usize,
    rows: impl Iterator<Item = (usize, usize, f64, bool)>,
) -> Result<(Vec<Option<f64>>, Vec<usize>, f64)> {
    let mut cells: BTreeMap<(usize, usize), (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    let mut sizes = vec![0; n_landmarks];
    for (round, k, s, case) in rows {
        if !s.is_nan() {
            let cell = cells.entry((k, round)).or_default();
            cell.0.push(s);
            cell.1.push(case as u8);
            sizes[k] += 1;
        }
    }
    let mut acc = vec![(0.0, 0usize); n_landmarks];
    for ((k, _), (scores, labels)) in &cells {
        match auroc(scores, labels) {
            Ok(a) => {
                acc[*k].0 += a * scores.len() as f64;
                acc[*k].1 += scores.len();
            }
            Err(Error::Metric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let per: Vec<Option<f64>> = acc
        .into_iter()
        .map(|(sum, n)| if n > 0 { Some(sum / n as f64) } else { None })
        .collect();
    let global = auroc_global(&per, &sizes)?;
    Ok((per, sizes, global))
}

/// Fits the competing-risks pair on training patients and scores the
/// held-out rows by their infection CIF at the horizon.
pub fn evaluate(ds: &SuperDataset, spec: &ModelSpec, validation: Validation) -> Result<LandmarkEvaluation> {
    let sets = test_sets(ds, validation)?;
    let in_sample = validation == Validation::InSample;
    let parts: Vec<Result<Vec<(usize, f64)>>> = sets
        .par_iter()
        .map(|test| {
            let train = if in_sample {
                ds.clone()
            } else {
                ds.filter_patients(|id| !test.contains(&id))
            };
            let model = spec.fit(&train)?;
            let idx: Vec<usize> = (0..ds.rows.len()).filter(|&i| test.contains(&ds.rows[i].patient_id)).collect();
            let held = SuperDataset {
                grid: ds.grid,
                covariate_names: ds.covariate_names.clone(),
                rows: idx.iter().map(|&i| ds.rows[i].clone()).collect(),
            };
            let cif = model.horizon_cif(&held)?;
            Ok(idx.into_iter().zip(cif).collect())
        })
        .collect();
    let mut horizon_cif = vec![f64::NAN; ds.rows.len()];
    let mut round = vec![None; ds.rows.len()];
    for (f, part) in parts.into_iter().enumerate() {
        for (i, c) in part? {
            horizon_cif[i] = c;
            round[i] = Some(f);
        }
    }
    let (per_landmark, risk_set_sizes, global) = summarize(
        ds.grid.n,
        ds.rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| round[i].map(|f| (f, r.k, horizon_cif[i], r.status == 1))),
    )?;
    let undefined = (0..ds.grid.n).filter(|&k| per_landmark[k].is_none()).collect();
    Ok(LandmarkEvaluation {
        horizon_cif,
        round,
        per_landmark,
        risk_set_sizes,
        global,
        undefined,
    })
}

fn resampled_summary(
    ds: &SuperDataset,
    eval: &LandmarkEvaluation,
    draw: &[u32],
) -> Result<(Vec<Option<f64>>, Vec<usize>, f64)> {
    if eval.horizon_cif.len() != ds.rows.len() || eval.round.len() != ds.rows.len() {
        return Err(Error::Argument(format!(
            "evaluation has {} rows, dataset {}",
            eval.horizon_cif.len(),
            ds.rows.len()
        )));
    }
    let mut rows_of: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.rows.iter().enumerate() {
        rows_of.entry(r.patient_id).or_default().push(i);
    }
    let picked = draw.iter().flat_map(|id| rows_of.get(id).into_iter().flatten().copied());
    summarize(
        ds.grid.n,
        picked.filter_map(|i| eval.round[i].map(|f| (f, ds.rows[i].k, eval.horizon_cif[i], ds.rows[i].status == 1))),
    )
}

/// AUROC_global recomputed on a bootstrap draw of patients, keeping each
/// row's prediction fixed. Duplicated patients contribute their rows
/// repeatedly.
pub fn resampled_global_auroc(ds: &SuperDataset, eval: &LandmarkEvaluation, draw: &[u32]) -> Result<f64> {
    Ok(resampled_summary(ds, eval, draw)?.2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            seed: 0,
            max_failure_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub lo: f64,
    pub hi: f64,
    /// Successful replicate estimates in replicate order.
    pub estimates: Vec<f64>,
    pub failed: usize,
}

impl BootstrapResult {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Percentile bootstrap over `n_units` resampling units (patients). The
/// statistic receives the drawn unit indices; replicates run in parallel
/// with one random stream each.
pub fn bootstrap_ci<F>(n_units: usize, config: &BootstrapConfig, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if config.replicates < 50 {
        return Err(Error::Argument(format!("need at least 50 replicates, got {}", config.replicates)));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::Argument(format!("level {} outside (0, 1)", config.level)));
    }
    if n_units == 0 {
        return Err(Error::EmptyInput("nothing to resample".into()));
    }
    let results: Vec<Result<f64>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64 + 1);
            let draw: Vec<usize> = (0..n_units).map(|_| rng.random_range(0..n_units)).collect();
            statistic(&draw).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Metric("non-finite statistic".into()))
                }
            })
        })
        .collect();
    let mut estimates = Vec::with_capacity(results.len());
    let mut failed = 0;
    let mut last = String::new();
    for r in results {
        match r {
            Ok(v) => estimates.push(v),
            Err(e) => {
                failed += 1;
                last = e.to_string();
            }
        }
    }
    if estimates.is_empty() || failed as f64 > config.max_failure_rate * config.replicates as f64 {
        return Err(Error::Bootstrap {
            failed,
            total: config.replicates,
            last,
        });
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - config.level;
    Ok(BootstrapResult {
        lo: quantile_sorted(&sorted, alpha / 2.0),
        hi: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        estimates,
        failed,
    })
}

/// Relative AUROC change per landmark when one covariate is removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactMatrix {
    pub covariates: Vec<String>,
    pub t_lm: Vec<f64>,
    /// `values[c][k]`; `None` where either AUROC is undefined or the
    /// reduced fit failed.
    pub values: Vec<Vec<Option<f64>>>,
    pub failures: Vec<String>,
}

impl ImpactMatrix {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["covariate".to_string()];
        header.extend(self.t_lm.iter().map(|t| t.to_string()));
        out.write_record(&header)?;
        for (c, name) in self.covariates.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.values[c].iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn covariate_impact(ds: &SuperDataset, spec: &ModelSpec, validation: Validation) -> Result<ImpactMatrix> {
    let full = evaluate(ds, spec, validation)?;
    let reduced: Vec<Result<LandmarkEvaluation>> = spec
        .covariates
        .par_iter()
        .map(|drop| {
            let mut r = spec.clone();
            r.covariates.retain(|c| c != drop);
            evaluate(ds, &r, validation)
        })
        .collect();
    let mut values = Vec::new();
    let mut failures = Vec::new();
    for (name, red) in spec.covariates.iter().zip(reduced) {
        match red {
            Ok(red) => values.push(
                (0..ds.grid.n)
                    .map(|k| match (full.per_landmark[k], red.per_landmark[k]) {
                        (Some(f), Some(r)) if r > 0.0 => Some((f - r) / r),
                        _ => None,
                    })
                    .collect(),
            ),
            Err(e) => {
                failures.push(format!("without {name}: {e}"));
                values.push(vec![None; ds.grid.n]);
            }
        }
    }
    Ok(ImpactMatrix {
        covariates: spec.covariates.clone(),
        t_lm: ds.grid.times(),
        values,
        failures,
    })
}

/// Mean infection CIF over `[t_LM, t_LM + w]` for the quartile groups of
/// the cause-1 linear predictor at one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct QuartileCurves {
    pub t_lm: f64,
    pub times: Vec<f64>,
    /// Lowest quartile first.
    pub curves: [Vec<f64>; 4],
    pub counts: [usize; 4],
}

impl QuartileCurves {
    /// Hours after the landmark at which quartile `q` first reaches `threshold`.
    pub fn crossing(&self, q: usize, threshold: f64) -> Option<f64> {
        self.curves[q]
            .iter()
            .position(|&c| c >= threshold)
            .map(|i| self.times[i] - self.t_lm)
    }
}

pub fn quartile_cif_curves(
    model: &CompetingRisksModel,
    ds: &SuperDataset,
    k: usize,
    n_points: usize,
) -> Result<QuartileCurves> {
    if n_points < 2 {
        return Err(Error::Argument("need at least two time points".into()));
    }
    let names = model.covariates().to_vec();
    let t_lm = ds.grid.time(k);
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    let times: Vec<f64> = (0..n_points)
        .map(|i| t_lm + ds.grid.w * i as f64 / (n_points - 1) as f64)
        .collect();
    for r in ds.rows.iter().filter(|r| r.k == k) {
        let z = ds.row_values(r, &names)?;
        let lp = model.models[0].linear_predictor(&z, t_lm);
        let curve = model.curve(&z, k)?;
        let cif = times.iter().map(|&t| curve.at(t).map(|v| v.1)).collect::<Result<Vec<_>>>()?;
        rows.push((lp, cif));
    }
    if rows.len() < 4 {
        return Err(Error::Data(format!("only {} rows at landmark {k}", rows.len())));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = rows.len();
    let mut curves: [Vec<f64>; 4] = Default::default();
    let mut counts = [0usize; 4];
    for c in curves.iter_mut() {
        *c = vec![0.0; n_points];
    }
    for (rank, (_, cif)) in rows.iter().enumerate() {
        let q = rank * 4 / n;
        counts[q] += 1;
        for (acc, v) in curves[q].iter_mut().zip(cif) {
            *acc += v;
        }
    }
    for q in 0..4 {
        for v in &mut curves[q] {
            *v /= counts[q] as f64;
        }
    }
    Ok(QuartileCurves {
        t_lm,
        times,
        curves,
        counts,
    })
}

/// Percentile intervals of each landmark's AUROC over patient bootstrap
/// draws with predictions held fixed. `None` where fewer than half of the
/// replicates define the landmark's AUROC.
pub fn landmark_auroc_intervals(
    ds: &SuperDataset,
    eval: &LandmarkEvaluation,
    config: &BootstrapConfig,
) -> Result<Vec<Option<(f64, f64)>>> {
    let ids = ds.patient_ids();
    let per: Vec<Vec<Option<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64 + 1);
            let draw: Vec<u32> = (0..ids.len()).map(|_| ids[rng.random_range(0..ids.len())]).collect();
            resampled_summary(ds, eval, &draw)
                .map(|s| s.0)
                .unwrap_or_else(|_| vec![None; ds.grid.n])
        })
        .collect();
    let alpha = 1.0 - config.level;
    Ok((0..ds.grid.n)
        .map(|k| {
            let mut v: Vec<f64> = per.iter().filter_map(|r| r[k]).collect();
            if v.len() * 2 < config.replicates {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some((quantile_sorted(&v, alpha / 2.0), quantile_sorted(&v, 1.0 - alpha / 2.0)))
        })
        .collect())
}

/// Validation AUROCs of a baseline and an extended model and a bootstrap
/// interval for the difference of their AUROC_global.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparison {
    pub baseline: LandmarkEvaluation,
    pub extended: LandmarkEvaluation,
    /// Extended minus baseline AUROC_global.
    pub difference: f64,
    pub interval: BootstrapResult,
}

/// Both models are validated on the same patient splits; the bootstrap
/// resamples patients and keeps every row's held-out prediction fixed.
pub fn compare_models(
    ds: &SuperDataset,
    baseline: &ModelSpec,
    extended: &ModelSpec,
    validation: Validation,
    bootstrap: &BootstrapConfig,
) -> Result<ModelComparison> {
    let base = evaluate(ds, baseline, validation)?;
    let ext = evaluate(ds, extended, validation)?;
    compare_evaluations(ds, base, ext, bootstrap)
}

/// The comparison of two evaluations of the same landmark rows, e.g. one
/// computed on a dataset without the score column.
pub fn compare_evaluations(
    ds: &SuperDataset,
    baseline: LandmarkEvaluation,
    extended: LandmarkEvaluation,
    bootstrap: &BootstrapConfig,
) -> Result<ModelComparison> {
    let ids = ds.patient_ids();
    let interval = bootstrap_ci(ids.len(), bootstrap, |draw| {
        let draw: Vec<u32> = draw.iter().map(|&i| ids[i]).collect();
        Ok(resampled_global_auroc(ds, &extended, &draw)? - resampled_global_auroc(ds, &baseline, &draw)?)
    })?;
    Ok(ModelComparison {
        difference: extended.global - baseline.global,
        baseline,
        extended,
        interval,
    })
}
