use std::fs;
use std::path::Path;

use deeplm::cohortsim::PatientRecord;
use deeplm::convnet::network_input;
use deeplm::instances::{materialize, paa, InstancePlan, Interval, TimeSeriesInstance};
use deeplm::pipeline::train_day_models;
use deeplm::saliency::{
    cluster_report, default_layer_weights, extract_salient_window, gamma_fit_diagnostic, saliency_map,
    write_saliency_csv, DayModels,
};
use deeplm::scalar::Scalar;

use super::*;
use crate::config::{Config, Precision};
use crate::manifest::StageRun;

fn day_dir(day: u32) -> String {
    format!("day_{day}")
}

fn write_test_list(path: &Path, test: &[(usize, TimeSeriesInstance)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "patient_id", "start", "end", "shift_hours", "label"])?;
    for (m, inst) in test {
        let iv = &inst.interval;
        w.write_record(&[
            m.to_string(),
            inst.patient_id.to_string(),
            iv.start.to_string(),
            iv.end.to_string(),
            iv.shift_hours.to_string(),
            inst.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn read_test_list(path: &Path, cohort: &[PatientRecord], n_cols: usize) -> Result<Vec<(usize, TimeSeriesInstance)>> {
    let index: std::collections::HashMap<u32, usize> = cohort.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> { rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad_file(path)) };
        let id = num(1)? as u32;
        let patient_index = *index
            .get(&id)
            .ok_or_else(|| CliError::Data(format!("{}: patient {id} is not in the cohort", path.display())))?;
        let plan = InstancePlan {
            patient_id: id,
            patient_index,
            interval: Interval {
                start: num(2)?,
                end: num(3)?,
                shift_hours: num(4)?,
            },
            label: num(5)? as u8,
        };
        out.push((num(0)? as usize, materialize(&plan, &cohort[patient_index], n_cols)));
    }
    Ok(out)
}

fn saliency_typed<T: Scalar>(run: &mut StageRun, cohort: &[PatientRecord], cfg: &Config) -> Result<()> {
    let dcfg = cfg.day_models()?;
    let ccfg = cfg.cluster()?;
    let weights = ccfg
        .layer_weights
        .clone()
        .unwrap_or_else(|| default_layer_weights(dcfg.cnn.arch.n_blocks));
    let per_day = cfg.export_per_day()?;
    let days = train_day_models::<T>(cohort, &dcfg)?;
    let mut windows = csv::Writer::from_path(run.out_path("windows.csv")?)?;
    windows.write_record([
        "day",
        "patient_id",
        "instance_start",
        "label",
        "model",
        "score",
        "window_start_position",
        "window_positions",
        "window_start_hours",
        "window_end_hours",
    ])?;
    let mut aurocs = csv::Writer::from_path(run.out_path("day_auroc.csv")?)?;
    aurocs.write_record(["day", "fold", "auroc"])?;
    let mut diagnostics = Vec::new();
    for (day, fold_aurocs) in &days {
        let dir = day_dir(day.day);
        for (f, a) in fold_aurocs.iter().enumerate() {
            aurocs.write_record(&[day.day.to_string(), f.to_string(), a.to_string()])?;
        }
        for (m, (net, scaler)) in day.models.iter().enumerate() {
            write_model(&run.out_path(&format!("{dir}/model_{m}.ckpt"))?, net)?;
            write_scaler(&run.out_path(&format!("{dir}/model_{m}_scaler.csv"))?, scaler)?;
        }
        write_test_list(&run.out_path(&format!("{dir}/test_instances.csv"))?, &day.test)?;
        let mut exported = [0usize; 2];
        let mut layer_maps: Vec<(usize, Vec<f64>)> = Vec::new();
        for (i, (m, raw)) in day.test.iter().enumerate() {
            let (net, scaler) = &day.models[*m];
            let x = network_input::<T>(&paa(raw, ccfg.bin_minutes)?, scaler);
            let (score, map) = saliency_map(net, &x, &weights)?;
            let window = extract_salient_window(&map.combined, ccfg.window_hours, ccfg.bin_minutes as f64)?;
            windows.write_record(&[
                day.day.to_string(),
                raw.patient_id.to_string(),
                raw.interval.start.to_string(),
                raw.label.to_string(),
                m.to_string(),
                score.to_string(),
                window.start.to_string(),
                window.len.to_string(),
                window.start_hours.to_string(),
                window.end_hours.to_string(),
            ])?;
            let l = raw.label as usize;
            if exported[l] < per_day {
                exported[l] += 1;
                let path = run.out_path(&format!("{dir}/maps/instance_{i:05}_label{l}.csv"))?;
                write_saliency_csv(fs::File::create(path)?, &map, &window)?;
                let (_, acts) = net.activations(&x)?;
                for a in acts {
                    layer_maps.push((net.arch().filters, a.iter().map(|v| v.as_f64()).collect()));
                }
            }
        }
        if !layer_maps.is_empty() {
            let d = gamma_fit_diagnostic(&layer_maps, ccfg.alpha)?;
            diagnostics.push(serde_json::json!({
                "day": day.day,
                "columns_tested": d.tested,
                "columns_skipped": d.skipped,
                "rejected_after_bonferroni": d.rejected,
                "min_p_value": d.min_p_value,
            }));
        }
    }
    windows.flush()?;
    aurocs.flush()?;
    fs::write(
        run.out_path("gamma_diagnostic.json")?,
        serde_json::to_vec_pretty(&serde_json::Value::Array(diagnostics))?,
    )?;
    Ok(())
}

/// Trains one CNN per landmark day, then writes the salient window of every
/// held-out instance and full saliency maps for a sample of them.
pub fn saliency(root: &Path, cfg: &Config) -> Result<()> {
    let mut run = StageRun::start(root, SALIENCY, cfg)?;
    let cohort = load_cohort(&mut run)?;
    match cfg.precision()? {
        Precision::F32 => saliency_typed::<f32>(&mut run, &cohort, cfg)?,
        Precision::F64 => saliency_typed::<f64>(&mut run, &cohort, cfg)?,
    }
    run.finish()?;
    Ok(())
}

fn cluster_typed<T: Scalar>(run: &mut StageRun, cohort: &[PatientRecord], cfg: &Config) -> Result<()> {
    let dcfg = cfg.day_models()?;
    let n_cols = dcfg.cnn.instances.n_columns();
    let mut days = Vec::with_capacity(dcfg.days.len());
    for &day in &dcfg.days {
        let dir = format!("{SALIENCY}/{}", day_dir(day));
        let test = read_test_list(&run.input(SALIENCY, &format!("{dir}/test_instances.csv"))?, cohort, n_cols)?;
        let mut models = Vec::with_capacity(dcfg.cnn.folds);
        for m in 0..dcfg.cnn.folds {
            let net = read_model::<T>(&run.input(SALIENCY, &format!("{dir}/model_{m}.ckpt"))?)?;
            let scaler = read_scaler(&run.input(SALIENCY, &format!("{dir}/model_{m}_scaler.csv"))?)?;
            models.push((net, scaler));
        }
        days.push(DayModels { day, models, test });
    }
    let report = cluster_report(&days, &cfg.cluster()?)?;
    report.write_histogram_csv(fs::File::create(run.out_path("histogram.csv")?)?)?;
    report.write_records_csv(fs::File::create(run.out_path("records.csv")?)?)?;
    report.write_summary_json(fs::File::create(run.out_path("summary.json")?)?)?;
    Ok(())
}

/// Condition class of every held-out instance's salient window, class
/// histograms by label and the infected-versus-not KS test per day.
pub fn cluster(root: &Path, cfg: &Config) -> Result<()> {
    let mut run = StageRun::start(root, "cluster", cfg)?;
    let cohort = load_cohort(&mut run)?;
    match cfg.precision()? {
        Precision::F32 => cluster_typed::<f32>(&mut run, &cohort, cfg)?,
        Precision::F64 => cluster_typed::<f64>(&mut run, &cohort, cfg)?,
    }
    run.finish()?;
    Ok(())
}
