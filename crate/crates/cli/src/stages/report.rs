use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::*;
use crate::config::Config;
use crate::manifest::{read_manifest, StageRun};

fn records(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        out.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(out)
}

fn json(path: &Path) -> Result<serde_json::Value> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn has_stage(root: &Path, stage: &str) -> bool {
    read_manifest(root, stage).is_ok()
}

fn fmt_num(v: &serde_json::Value) -> String {
    v.as_f64().map(|x| format!("{x:.4}")).unwrap_or_else(|| v.to_string())
}

/// Markdown digest of whatever stages have run. The cohort is required.
pub fn report(root: &Path, cfg: &Config) -> Result<()> {
    let mut run = StageRun::start(root, "report", cfg)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n\nseed {}\n", cfg.seed());

    let _ = writeln!(md, "## Cohort\n\n| statistic | value |\n|---|---|");
    for r in records(&run.input(COHORT, "cohort/summary.csv")?)? {
        let _ = writeln!(md, "| {} | {} |", r[0], r[1]);
    }

    if has_stage(root, CNN) {
        let _ = writeln!(md, "\n## CNN cross-validation\n\n| fold | AUROC | test instances | cases |\n|---|---|---|---|");
        for r in records(&run.input(CNN, "cnn/cv_auroc.csv")?)? {
            let a: f64 = r[1].parse().unwrap_or(f64::NAN);
            let _ = writeln!(md, "| {} | {a:.4} | {} | {} |", r[0], r[2], r[3]);
        }
    }

    if has_stage(root, "evaluate/compare") {
        let c = json(&run.input("evaluate/compare", "evaluate/compare/comparison.json")?)?;
        let _ = writeln!(
            md,
            "\n## Landmark models\n\nvalidation: {}\n\n| model | AUROC_global |\n|---|---|\n| pi1 (covariates) | {} |\n| pi2 (covariates + CNN score) | {} |\n\ndifference {} with {} bootstrap interval [{}, {}]",
            c["validation"].as_str().unwrap_or_default(),
            fmt_num(&c["auroc_global_pi1"]),
            fmt_num(&c["auroc_global_pi2"]),
            fmt_num(&c["difference"]),
            fmt_num(&c["level"]),
            fmt_num(&c["lo"]),
            fmt_num(&c["hi"]),
        );
    } else {
        for m in ["pi1", "pi2"] {
            let stage = format!("evaluate/{m}");
            if has_stage(root, &stage) {
                let g = json(&run.input(&stage, &format!("{stage}/global.json"))?)?;
                let _ = writeln!(md, "\n## Landmark model {m}\n\nAUROC_global {}", fmt_num(&g["auroc_global"]));
            }
        }
    }
    for m in ["pi2", "pi1"] {
        let stage = format!("evaluate/{m}");
        if has_stage(root, &stage) {
            let _ = writeln!(md, "\n### Lead time to the warning level ({m})\n\n| landmark | quartile | n | hours |\n|---|---|---|---|");
            for r in records(&run.input(&stage, &format!("{stage}/lead_times.csv"))?)? {
                let hours = if r[4].is_empty() { "not reached".to_string() } else { r[4].clone() };
                let _ = writeln!(md, "| {} | Q{} | {} | {hours} |", r[0], r[1], r[2]);
            }
            break;
        }
    }

    if has_stage(root, "cluster") {
        let s = json(&run.input("cluster", "cluster/summary.json")?)?;
        let _ = writeln!(md, "\n## Saliency clusters\n\n| day | KS statistic | p-value | rejects at {} |\n|---|---|---|---|", fmt_num(&s["alpha"]));
        for d in s["days"].as_array().into_iter().flatten() {
            let ks = &d["ks"];
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                d["day"],
                fmt_num(&ks["statistic"]),
                ks["p_value"].as_f64().map(|p| format!("{p:.3e}")).unwrap_or_else(|| "n/a".into()),
                d["rejects"],
            );
        }
    }

    fs::write(run.out_path("report.md")?, md)?;
    run.finish()?;
    Ok(())
}
