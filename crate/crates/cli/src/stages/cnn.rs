use std::path::Path;

use deeplm::cohortsim::{cohort_summary, generate_cohort, write_cohort, PatientRecord};
use deeplm::convnet::{FoldAssignment, Network};
use deeplm::instances::{
    materialize, paa, read_instance_store, write_instance_store, ChannelRange, ChannelScaler,
};
use deeplm::pipeline::{cross_fit_scores, patient_folds, select_plans, train_cross_fitted, CnnPool, PoolItem};
use deeplm::scalar::Scalar;

use super::*;
use crate::config::{Config, Precision};
use crate::manifest::StageRun;

pub fn simulate(root: &Path, cfg: &Config) -> Result<()> {
    let sim = cfg.sim()?;
    let mut run = StageRun::start(root, COHORT, cfg)?;
    let cohort = generate_cohort(&sim)?;
    let files = write_cohort(&run.dir(), &cohort, Some(&sim))?;
    run.outputs(files);
    let s = cohort_summary(&cohort)?;
    let path = run.out_path("summary.csv")?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["statistic", "value"])?;
    for (k, v) in [
        ("patients", s.n.to_string()),
        ("infected", s.infected.to_string()),
        ("not_infected", s.not_infected.to_string()),
        ("daily_infection_rate", s.daily_infection_rate.to_string()),
        ("median_onset_days", cell(s.median_onset_days)),
        ("median_los_days", s.median_los_days.to_string()),
        ("missing_fraction", s.missing_fraction.to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    run.finish()?;
    Ok(())
}

/// Labelled, undersampled windows of the whole cohort as an instance store.
pub fn extract(root: &Path, cfg: &Config) -> Result<()> {
    let cnn = cfg.cnn()?;
    let mut run = StageRun::start(root, INSTANCES, cfg)?;
    let cohort = load_cohort(&mut run)?;
    let plans = select_plans(&cohort, &cnn.instances, cnn.undersample_ratio, cfg.seed(), |_| true)?;
    let n_cols = cnn.instances.n_columns();
    let files = write_instance_store(
        &run.dir(),
        plans.iter().map(|p| materialize(p, &cohort[p.patient_index], n_cols)),
    )?;
    run.outputs(files);
    run.finish()?;
    Ok(())
}

fn read_pool(dir: &Path, bin_minutes: usize) -> Result<CnnPool> {
    let mut items = Vec::new();
    for stored in read_instance_store(dir)? {
        let inst = stored?.instance;
        let mut range = ChannelRange::default();
        range.observe(&inst);
        items.push(PoolItem {
            reduced: paa(&inst, bin_minutes)?,
            range,
        });
    }
    Ok(CnnPool { items })
}

fn fold_file(f: usize) -> (String, String) {
    (format!("fold_{f}.ckpt"), format!("fold_{f}_scaler.csv"))
}

fn write_folds(path: &Path, cohort: &[PatientRecord], folds: &FoldAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "fold"])?;
    for p in cohort {
        if let Some(f) = folds.fold(p.id) {
            w.write_record(&[p.id.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_folds(path: &Path, k: usize) -> Result<FoldAssignment> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut fold_of = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u32 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad_file(path))?;
        let f: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad_file(path))?;
        if f >= k {
            return Err(bad_file(path));
        }
        fold_of.insert(id, f);
    }
    Ok(FoldAssignment { k, fold_of })
}

fn train_typed<T: Scalar>(run: &mut StageRun, pool: &CnnPool, folds: &FoldAssignment, cnn: &deeplm::pipeline::CnnConfig) -> Result<()> {
    let report = train_cross_fitted::<T>(pool, folds, cnn)?;
    let mut log = csv::Writer::from_path(run.out_path("training_log.csv")?)?;
    log.write_record(["fold", "epoch", "loss"])?;
    let mut cv = csv::Writer::from_path(run.out_path("cv_auroc.csv")?)?;
    cv.write_record(["fold", "auroc", "n_test", "n_test_cases"])?;
    for fold in &report.folds {
        for (e, loss) in fold.loss_history.iter().enumerate() {
            log.write_record(&[fold.fold.to_string(), (e + 1).to_string(), loss.to_string()])?;
        }
        let cases = fold.test_indices.iter().filter(|&&i| pool.items[i].reduced.label == 1).count();
        cv.write_record(&[
            fold.fold.to_string(),
            fold.auroc.to_string(),
            fold.test_indices.len().to_string(),
            cases.to_string(),
        ])?;
        let (ckpt, scaler) = fold_file(fold.fold);
        write_model(&run.out_path(&ckpt)?, &fold.network)?;
        write_scaler(&run.out_path(&scaler)?, &fold.prep)?;
    }
    log.flush()?;
    cv.flush()?;
    Ok(())
}

/// One network per patient fold; every patient of the cohort is assigned a
/// fold so the score stage can cross-fit.
pub fn train_cnn(root: &Path, cfg: &Config) -> Result<()> {
    let cnn = cfg.cnn()?;
    let mut run = StageRun::start(root, CNN, cfg)?;
    let cohort = load_cohort(&mut run)?;
    let folds = patient_folds(&cohort, cnn.folds, cfg.seed())?;
    let store = run.input_tree(INSTANCES, "instances/")?;
    let pool = read_pool(&store, cnn.bin_minutes)?;
    write_folds(&run.out_path("folds.csv")?, &cohort, &folds)?;
    match cfg.precision()? {
        Precision::F32 => train_typed::<f32>(&mut run, &pool, &folds, &cnn)?,
        Precision::F64 => train_typed::<f64>(&mut run, &pool, &folds, &cnn)?,
    }
    run.finish()?;
    Ok(())
}

fn score_typed<T: Scalar>(run: &mut StageRun, cohort: &[PatientRecord], folds: &FoldAssignment, cfg: &Config) -> Result<()> {
    let mut models: Vec<(Network<T>, ChannelScaler)> = Vec::with_capacity(folds.k);
    for f in 0..folds.k {
        let (ckpt, scaler) = fold_file(f);
        let net = read_model::<T>(&run.input(CNN, &format!("cnn/{ckpt}"))?)?;
        let scaler = read_scaler(&run.input(CNN, &format!("cnn/{scaler}"))?)?;
        models.push((net, scaler));
    }
    let scores = cross_fit_scores(cohort, folds, &models, &cfg.scoring()?)?;
    let mut w = csv::Writer::from_path(run.out_path("scores.csv")?)?;
    w.write_record(["patient_id", "window_end", "score"])?;
    for (id, series) in &scores {
        for (t, s) in series {
            w.write_record(&[id.to_string(), t.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Risk-score series of every patient, each from the fold network that did
/// not train on that patient.
pub fn score(root: &Path, cfg: &Config) -> Result<()> {
    let cnn = cfg.cnn()?;
    let mut run = StageRun::start(root, SCORES, cfg)?;
    let cohort = load_cohort(&mut run)?;
    let folds = read_folds(&run.input(CNN, "cnn/folds.csv")?, cnn.folds)?;
    let missing: Vec<u32> = cohort.iter().map(|p| p.id).filter(|id| folds.fold(*id).is_none()).take(5).collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!("patients {missing:?} have no CNN fold; rerun train-cnn")));
    }
    match cfg.precision()? {
        Precision::F32 => score_typed::<f32>(&mut run, &cohort, &folds, cfg)?,
        Precision::F64 => score_typed::<f64>(&mut run, &cohort, &folds, cfg)?,
    }
    run.finish()?;
    Ok(())
}
