//! One function per subcommand. Stages communicate only through files in
//! the run directory.

mod cnn;
mod explain;
mod landmark;
mod report;

pub use cnn::{extract, score, simulate, train_cnn};
pub use explain::{cluster, saliency};
pub use landmark::{evaluate, heatmap, landmark_fit, ModelChoice};
pub use report::report;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use deeplm::cohortsim::{read_cohort, Cohort};
use deeplm::convnet::{read_checkpoint, write_checkpoint, Network};
use deeplm::instances::ChannelScaler;
use deeplm::landmark::ScoreSeries;
use deeplm::scalar::Scalar;

use crate::error::{CliError, Result};
use crate::manifest::StageRun;

pub const COHORT: &str = "cohort";
pub const INSTANCES: &str = "instances";
pub const CNN: &str = "cnn";
pub const SCORES: &str = "scores";
pub const SCORES_FILE: &str = "scores/scores.csv";
pub const SALIENCY: &str = "saliency";

pub(crate) fn load_cohort(run: &mut StageRun) -> Result<Cohort> {
    let dir = run.input_tree(COHORT, "cohort/")?;
    Ok(read_cohort(&dir)?)
}

pub(crate) fn load_scores(run: &mut StageRun) -> Result<ScoreSeries> {
    let path = run.input(SCORES, SCORES_FILE)?;
    let mut rdr = csv::Reader::from_path(&path)?;
    let mut out = ScoreSeries::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Data(format!("{}: bad row {:?}", path.display(), rec)))
        };
        out.entry(field(0)? as u32).or_default().push((field(1)?, field(2)?));
    }
    Ok(out)
}

pub(crate) fn write_scaler(path: &Path, scaler: &ChannelScaler) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["channel", "min", "max"])?;
    for (c, (lo, hi)) in scaler.bounds.iter().enumerate() {
        w.write_record(&[c.to_string(), lo.to_string(), hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_scaler(path: &Path) -> Result<ChannelScaler> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut bounds = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let lo: f64 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad_file(path))?;
        let hi: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad_file(path))?;
        bounds.push((lo, hi));
    }
    let bounds = bounds.try_into().map_err(|_| bad_file(path))?;
    Ok(ChannelScaler::new(bounds)?)
}

pub(crate) fn write_model<T: Scalar>(path: &Path, net: &Network<T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read_model<T: Scalar>(path: &Path) -> Result<Network<T>> {
    Ok(read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))?)
}

pub(crate) fn bad_file(path: &Path) -> CliError {
    CliError::Data(format!("{}: malformed", path.display()))
}

/// `None` as an empty cell.
pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
