use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use deeplm::landmark::{
    build_super_dataset, compare_evaluations, covariate_impact, evaluate as evaluate_model, landmark_auroc_intervals,
    quartile_cif_curves, CompetingRisksModel, LandmarkCoxModel, LandmarkEvaluation, ModelComparison, ModelSpec,
    SuperDataset,
};
use serde::Serialize;

use super::*;
use crate::config::Config;
use crate::manifest::StageRun;
use crate::plot::{heatmap as plot_heatmap, line_chart, Series};

/// π₁ uses the low-frequency covariates only, π₂ adds the CNN score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Pi1,
    Pi2,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Pi1,
    Pi2,
}

impl Model {
    fn name(self) -> &'static str {
        match self {
            Model::Pi1 => "pi1",
            Model::Pi2 => "pi2",
        }
    }

    fn spec(self, cfg: &Config) -> Result<ModelSpec> {
        let [base, ext] = cfg.model_specs()?;
        Ok(match self {
            Model::Pi1 => base,
            Model::Pi2 => ext,
        })
    }
}

fn models(choice: ModelChoice) -> Vec<Model> {
    match choice {
        ModelChoice::Pi1 => vec![Model::Pi1],
        ModelChoice::Pi2 => vec![Model::Pi2],
        ModelChoice::Both => vec![Model::Pi1, Model::Pi2],
    }
}

/// The super-dataset of `model`. Only π₂ touches the score file.
fn dataset(run: &mut StageRun, model: Model, cfg: &Config) -> Result<SuperDataset> {
    let cohort = load_cohort(run)?;
    let scores = match model {
        Model::Pi1 => None,
        Model::Pi2 => Some(load_scores(run)?),
    };
    Ok(build_super_dataset(&cohort, scores.as_ref(), &cfg.grid()?)?)
}

pub fn landmark_fit(root: &Path, cfg: &Config, choice: ModelChoice) -> Result<()> {
    for model in models(choice) {
        let mut run = StageRun::start(root, &format!("landmark/{}", model.name()), cfg)?;
        let ds = dataset(&mut run, model, cfg)?;
        let mut w = BufWriter::new(fs::File::create(run.out_path("super_dataset.csv")?)?);
        ds.write_csv(&mut w)?;
        w.flush()?;
        let fitted = model.spec(cfg)?.fit(&ds)?;
        for m in &fitted.models {
            let mut w = BufWriter::new(fs::File::create(run.out_path(&format!("model_cause{}.txt", m.cause))?)?);
            m.write_text(&mut w)?;
            w.flush()?;
        }
        run.finish()?;
    }
    Ok(())
}

fn read_fitted(run: &mut StageRun, model: Model) -> Result<CompetingRisksModel> {
    let stage = format!("landmark/{}", model.name());
    let mut read = |cause: u8| -> Result<LandmarkCoxModel> {
        let path = run.input(&stage, &format!("{stage}/model_cause{cause}.txt"))?;
        Ok(LandmarkCoxModel::read_text(BufReader::new(fs::File::open(path)?))?)
    };
    let (c1, c2) = (read(1)?, read(2)?);
    Ok(CompetingRisksModel::new(c1, c2)?)
}

#[derive(Serialize)]
struct GlobalSummary<'a> {
    model: &'a str,
    auroc_global: f64,
    evaluated_rows: usize,
    undefined_landmarks: Vec<f64>,
}

/// Per-landmark AUROC with bootstrap bars, the global summary and the
/// quartile CIF curves with their warning lead times.
fn write_model_outputs(
    run: &mut StageRun,
    model: Model,
    ds: &SuperDataset,
    ev: &LandmarkEvaluation,
    fitted: &CompetingRisksModel,
    cfg: &Config,
) -> Result<()> {
    let intervals = landmark_auroc_intervals(ds, ev, &cfg.bootstrap()?)?;
    let times = ds.grid.times();
    let mut w = csv::Writer::from_path(run.out_path("auroc_by_landmark.csv")?)?;
    w.write_record(["k", "t_lm", "risk_set", "auroc", "lo", "hi"])?;
    for k in 0..ds.grid.n {
        w.write_record(&[
            k.to_string(),
            times[k].to_string(),
            ev.risk_set_sizes[k].to_string(),
            cell(ev.per_landmark[k]),
            cell(intervals[k].map(|i| i.0)),
            cell(intervals[k].map(|i| i.1)),
        ])?;
    }
    w.flush()?;
    let series = auroc_series(model.name(), &times, ev, &intervals);
    line_chart(
        &run.out_path("auroc_by_landmark.svg")?,
        &format!("AUROC by landmark, {}", model.name()),
        "landmark (h)",
        "AUROC",
        &[series],
        Some(0.5),
    )?;
    let summary = GlobalSummary {
        model: model.name(),
        auroc_global: ev.global,
        evaluated_rows: ev.risk_set_sizes.iter().sum(),
        undefined_landmarks: ev.undefined.iter().map(|&k| times[k]).collect(),
    };
    fs::write(run.out_path("global.json")?, serde_json::to_vec_pretty(&summary)?)?;

    let warning = cfg.warning_level()?;
    let n_points = cfg.curve_points()?;
    let mut curves = csv::Writer::from_path(run.out_path("quartile_cif.csv")?)?;
    curves.write_record(["t_lm", "quartile", "time", "cif"])?;
    let mut leads = csv::Writer::from_path(run.out_path("lead_times.csv")?)?;
    leads.write_record(["t_lm", "quartile", "n", "warning_level", "hours_to_warning"])?;
    for t_lm in cfg.quartile_landmarks()? {
        let k = times
            .iter()
            .position(|t| (t - t_lm).abs() < 1e-9)
            .ok_or_else(|| CliError::Config(format!("`evaluate.quartile_landmarks`: {t_lm} is not on the landmark grid")))?;
        let q = quartile_cif_curves(fitted, ds, k, n_points)?;
        let mut plotted = Vec::with_capacity(4);
        for (i, curve) in q.curves.iter().enumerate() {
            for (t, c) in q.times.iter().zip(curve) {
                curves.write_record(&[t_lm.to_string(), (i + 1).to_string(), t.to_string(), c.to_string()])?;
            }
            leads.write_record(&[
                t_lm.to_string(),
                (i + 1).to_string(),
                q.counts[i].to_string(),
                warning.to_string(),
                cell(q.crossing(i, warning)),
            ])?;
            plotted.push(Series {
                name: format!("Q{} (n = {})", i + 1, q.counts[i]),
                points: q.times.iter().copied().zip(curve.iter().copied()).collect(),
                bars: Vec::new(),
            });
        }
        line_chart(
            &run.out_path(&format!("quartile_cif_{t_lm}.svg"))?,
            &format!("infection CIF by linear-predictor quartile, landmark {t_lm} h"),
            "time (h)",
            "cumulative incidence",
            &plotted,
            Some(warning),
        )?;
    }
    curves.flush()?;
    leads.flush()?;
    Ok(())
}

fn auroc_series(name: &str, times: &[f64], ev: &LandmarkEvaluation, intervals: &[Option<(f64, f64)>]) -> Series {
    Series {
        name: name.to_string(),
        points: (0..times.len())
            .filter_map(|k| ev.per_landmark[k].map(|a| (times[k], a)))
            .collect(),
        bars: (0..times.len())
            .filter_map(|k| intervals[k].map(|(lo, hi)| (times[k], lo, hi)))
            .collect(),
    }
}

#[derive(Serialize)]
struct ComparisonSummary {
    validation: String,
    auroc_global_pi1: f64,
    auroc_global_pi2: f64,
    difference: f64,
    level: f64,
    lo: f64,
    hi: f64,
    excludes_zero: bool,
    replicates: usize,
    failed_replicates: usize,
}

fn write_comparison(run: &mut StageRun, ds: &SuperDataset, cmp: &ModelComparison, cfg: &Config) -> Result<()> {
    let boot = cfg.bootstrap()?;
    let summary = ComparisonSummary {
        validation: cfg.validation()?.to_string(),
        auroc_global_pi1: cmp.baseline.global,
        auroc_global_pi2: cmp.extended.global,
        difference: cmp.difference,
        level: boot.level,
        lo: cmp.interval.lo,
        hi: cmp.interval.hi,
        excludes_zero: !cmp.interval.contains(0.0),
        replicates: boot.replicates,
        failed_replicates: cmp.interval.failed,
    };
    fs::write(run.out_path("comparison.json")?, serde_json::to_vec_pretty(&summary)?)?;
    let mut w = csv::Writer::from_path(run.out_path("bootstrap_differences.csv")?)?;
    w.write_record(["replicate", "difference"])?;
    for (i, d) in cmp.interval.estimates.iter().enumerate() {
        w.write_record(&[i.to_string(), d.to_string()])?;
    }
    w.flush()?;

    let times = ds.grid.times();
    let i1 = landmark_auroc_intervals(ds, &cmp.baseline, &boot)?;
    let i2 = landmark_auroc_intervals(ds, &cmp.extended, &boot)?;
    let mut w = csv::Writer::from_path(run.out_path("auroc_by_landmark.csv")?)?;
    w.write_record(["k", "t_lm", "risk_set", "pi1", "pi1_lo", "pi1_hi", "pi2", "pi2_lo", "pi2_hi"])?;
    let mut rel = csv::Writer::from_path(run.out_path("relative_increase.csv")?)?;
    rel.write_record(["k", "t_lm", "pi1", "pi2", "relative_increase"])?;
    let mut rel_points = Vec::new();
    for k in 0..ds.grid.n {
        let (a1, a2) = (cmp.baseline.per_landmark[k], cmp.extended.per_landmark[k]);
        w.write_record(&[
            k.to_string(),
            times[k].to_string(),
            cmp.extended.risk_set_sizes[k].to_string(),
            cell(a1),
            cell(i1[k].map(|i| i.0)),
            cell(i1[k].map(|i| i.1)),
            cell(a2),
            cell(i2[k].map(|i| i.0)),
            cell(i2[k].map(|i| i.1)),
        ])?;
        let r = match (a1, a2) {
            (Some(a1), Some(a2)) if a1 > 0.0 => Some((a2 - a1) / a1),
            _ => None,
        };
        if let Some(r) = r {
            rel_points.push((times[k], r));
        }
        rel.write_record(&[k.to_string(), times[k].to_string(), cell(a1), cell(a2), cell(r)])?;
    }
    w.flush()?;
    rel.flush()?;
    line_chart(
        &run.out_path("auroc_by_landmark.svg")?,
        "AUROC by landmark",
        "landmark (h)",
        "AUROC",
        &[
            auroc_series("pi1: covariates", &times, &cmp.baseline, &i1),
            auroc_series("pi2: covariates + CNN score", &times, &cmp.extended, &i2),
        ],
        Some(0.5),
    )?;
    line_chart(
        &run.out_path("relative_increase.svg")?,
        "relative AUROC increase of pi2 over pi1",
        "landmark (h)",
        "(pi2 - pi1) / pi1",
        &[Series {
            name: "relative increase".into(),
            points: rel_points,
            bars: Vec::new(),
        }],
        Some(0.0),
    )?;
    Ok(())
}

/// Validates the chosen models on held-out patients. With both models the
/// difference of their AUROC_global gets a bootstrap interval as well.
pub fn evaluate(root: &Path, cfg: &Config, choice: ModelChoice) -> Result<()> {
    let validation = cfg.validation()?;
    match choice {
        ModelChoice::Pi1 | ModelChoice::Pi2 => {
            let model = models(choice)[0];
            let mut run = StageRun::start(root, &format!("evaluate/{}", model.name()), cfg)?;
            let ds = dataset(&mut run, model, cfg)?;
            let fitted = read_fitted(&mut run, model)?;
            let ev = evaluate_model(&ds, &model.spec(cfg)?, validation)?;
            write_model_outputs(&mut run, model, &ds, &ev, &fitted, cfg)?;
            run.finish()?;
        }
        ModelChoice::Both => {
            let mut r1 = StageRun::start(root, "evaluate/pi1", cfg)?;
            let ds1 = dataset(&mut r1, Model::Pi1, cfg)?;
            let f1 = read_fitted(&mut r1, Model::Pi1)?;
            let mut r2 = StageRun::start(root, "evaluate/pi2", cfg)?;
            let ds2 = dataset(&mut r2, Model::Pi2, cfg)?;
            let f2 = read_fitted(&mut r2, Model::Pi2)?;
            let mut rc = StageRun::start(root, "evaluate/compare", cfg)?;
            load_cohort(&mut rc)?;
            load_scores(&mut rc)?;
            read_fitted(&mut rc, Model::Pi1)?;
            read_fitted(&mut rc, Model::Pi2)?;
            // π₁ is evaluated on the dataset built without the score file;
            // both datasets have the same rows.
            let ev1 = evaluate_model(&ds1, &Model::Pi1.spec(cfg)?, validation)?;
            let ev2 = evaluate_model(&ds2, &Model::Pi2.spec(cfg)?, validation)?;
            let cmp = compare_evaluations(&ds2, ev1, ev2, &cfg.bootstrap()?)?;
            write_model_outputs(&mut r1, Model::Pi1, &ds1, &cmp.baseline, &f1, cfg)?;
            write_model_outputs(&mut r2, Model::Pi2, &ds2, &cmp.extended, &f2, cfg)?;
            write_comparison(&mut rc, &ds2, &cmp, cfg)?;
            r1.finish()?;
            r2.finish()?;
            rc.finish()?;
        }
    }
    Ok(())
}

/// Change in validation AUROC per landmark when each covariate is dropped.
pub fn heatmap(root: &Path, cfg: &Config, choice: ModelChoice) -> Result<()> {
    let validation = cfg.validation()?;
    for model in models(choice) {
        let mut run = StageRun::start(root, &format!("heatmap/{}", model.name()), cfg)?;
        let ds = dataset(&mut run, model, cfg)?;
        let impact = covariate_impact(&ds, &model.spec(cfg)?, validation)?;
        impact.write_csv(fs::File::create(run.out_path("impact.csv")?)?)?;
        fs::write(run.out_path("failures.txt")?, impact.failures.join("\n"))?;
        plot_heatmap(
            &run.out_path("impact.svg")?,
            &format!("AUROC change when dropping each covariate, {}", model.name()),
            &impact.covariates,
            &impact.t_lm,
            &impact.values,
        )?;
        run.finish()?;
    }
    Ok(())
}
