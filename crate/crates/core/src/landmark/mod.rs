//! Landmark competing-risks super-model: stacked landmark datasets,
//! stratified cause-specific Cox fits with quadratic landmark interactions,
//! plug-in cumulative incidence and dynamic AUROC.

mod cox;
mod eval;
mod predict;

pub use cox::{
    expand_design, fit_landmark_supermodel, CoxData, CoxDerivatives, CoxFitConfig, ConvergenceReport, Design,
    LandmarkCoxModel,
};
pub use eval::{
    bootstrap_ci, compare_evaluations, compare_models, covariate_impact, evaluate, landmark_auroc_intervals, quartile_cif_curves,
    resampled_global_auroc, BootstrapConfig, BootstrapResult, ImpactMatrix, LandmarkEvaluation, ModelComparison,
    ModelSpec, QuartileCurves, Validation,
};
pub use predict::{auroc_at_landmark, auroc_global, CifCurve, CompetingRisksModel};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::cohortsim::{PatientRecord, LOWFREQ_NAMES};
use crate::error::{Error, Result};

/// Name under which the CNN score enters a covariate list.
pub const CNN_COVARIATE: &str = "z_cnn";

/// Hours per unit of the landmark time used inside the quadratic terms.
pub const TAU_UNIT_HOURS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkGrid {
    pub s0: f64,
    pub s1: f64,
    pub n: usize,
    /// Prediction window width.
    pub w: f64,
}

impl Default for LandmarkGrid {
    fn default() -> Self {
        Self {
            s0: 48.0,
            s1: 240.0,
            n: 25,
            w: 24.0,
        }
    }
}

impl LandmarkGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("landmark.n", "need at least one landmark"));
        }
        if !(self.s0 >= 0.0) || !(self.s1 >= self.s0) {
            return Err(Error::config("landmark.s1", "need 0 <= s0 <= s1"));
        }
        if self.n == 1 && self.s1 != self.s0 {
            return Err(Error::config("landmark.n", "a single landmark needs s0 == s1"));
        }
        if self.n > 1 && self.s1 == self.s0 {
            return Err(Error::config("landmark.s1", "several landmarks need s1 > s0"));
        }
        if !(self.w > 0.0) {
            return Err(Error::config("landmark.w", "window width must be > 0"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        if self.n > 1 {
            (self.s1 - self.s0) / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.s0 + k as f64 * self.spacing()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.time(k)).collect()
    }
}

/// Per-patient CNN score series: `(window end, score)` in increasing time.
pub type ScoreSeries = BTreeMap<u32, Vec<(f64, f64)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SuperRow {
    pub patient_id: u32,
    /// Landmark index into the grid.
    pub k: usize,
    pub t_lm: f64,
    /// Values in `SuperDataset::covariate_names` order.
    pub covariates: Vec<f64>,
    pub z_cnn: Option<f64>,
    /// `min(T, t_lm + w)`.
    pub time: f64,
    /// 0 censored at the horizon, otherwise the cause code.
    pub status: u8,
}

/// Stacked landmark rows, sorted by landmark index then patient id.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperDataset {
    pub grid: LandmarkGrid,
    pub covariate_names: Vec<String>,
    pub rows: Vec<SuperRow>,
}

/// Where a named covariate is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    Column(usize),
    Cnn,
}

/// Latest score whose window ends at or before `t`.
pub fn resolve_score(series: &[(f64, f64)], t: f64) -> Option<f64> {
    series.iter().rev().find(|(end, _)| *end <= t + 1e-9).map(|s| s.1)
}

pub fn build_super_dataset(
    cohort: &[PatientRecord],
    scores: Option<&ScoreSeries>,
    grid: &LandmarkGrid,
) -> Result<SuperDataset> {
    grid.validate()?;
    let mut rows = Vec::new();
    let mut unresolved = Vec::new();
    for (k, t_lm) in grid.times().into_iter().enumerate() {
        for p in cohort {
            let exit = p.exit_time();
            if exit <= t_lm {
                continue;
            }
            let horizon = t_lm + grid.w;
            let (time, status) = if exit <= horizon {
                (exit, p.cause.code())
            } else {
                (horizon, 0)
            };
            let z_cnn = match scores {
                Some(s) => match s.get(&p.id).and_then(|series| resolve_score(series, t_lm)) {
                    Some(z) => Some(z),
                    None => {
                        unresolved.push((p.id, t_lm));
                        None
                    }
                },
                None => None,
            };
            rows.push(SuperRow {
                patient_id: p.id,
                k,
                t_lm,
                covariates: p.lowfreq_at(t_lm).to_vec(),
                z_cnn,
                time,
                status,
            });
        }
    }
    if !unresolved.is_empty() {
        let listed: Vec<String> = unresolved.iter().take(10).map(|(id, t)| format!("({id}, {t})")).collect();
        return Err(Error::Data(format!(
            "{} at-risk rows have no CNN score, e.g. (patient, t_LM) = {}",
            unresolved.len(),
            listed.join(", ")
        )));
    }
    rows.sort_by_key(|r| (r.k, r.patient_id));
    Ok(SuperDataset {
        grid: *grid,
        covariate_names: LOWFREQ_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

impl SuperDataset {
    pub fn has_scores(&self) -> bool {
        self.rows.first().is_some_and(|r| r.z_cnn.is_some())
    }

    pub(crate) fn source(&self, name: &str) -> Result<Source> {
        if name == CNN_COVARIATE {
            if !self.has_scores() {
                return Err(Error::Data("covariate z_cnn requested but the dataset has no CNN scores".into()));
            }
            return Ok(Source::Cnn);
        }
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .map(Source::Column)
            .ok_or_else(|| Error::Argument(format!("unknown covariate {name:?}")))
    }

    pub(crate) fn value(row: &SuperRow, source: Source) -> f64 {
        match source {
            Source::Column(c) => row.covariates[c],
            Source::Cnn => row.z_cnn.unwrap_or(f64::NAN),
        }
    }

    /// Raw values of the named covariates for one row.
    pub fn row_values(&self, row: &SuperRow, names: &[String]) -> Result<Vec<f64>> {
        names.iter().map(|n| Ok(Self::value(row, self.source(n)?))).collect()
    }

    /// Number of rows at each landmark.
    pub fn risk_set_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.grid.n];
        for r in &self.rows {
            sizes[r.k] += 1;
        }
        sizes
    }

    pub fn patient_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.patient_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Rows of the listed patients, with multiplicity. Each draw becomes a
    /// distinct pseudo-patient numbered by its position in `draw`.
    pub fn resample(&self, draw: &[u32]) -> SuperDataset {
        let mut by_patient: BTreeMap<u32, Vec<&SuperRow>> = BTreeMap::new();
        for r in &self.rows {
            by_patient.entry(r.patient_id).or_default().push(r);
        }
        let mut rows = Vec::new();
        for (pos, id) in draw.iter().enumerate() {
            for r in by_patient.get(id).into_iter().flatten() {
                rows.push(SuperRow {
                    patient_id: pos as u32,
                    ..(*r).clone()
                });
            }
        }
        rows.sort_by_key(|r| (r.k, r.patient_id));
        SuperDataset {
            grid: self.grid,
            covariate_names: self.covariate_names.clone(),
            rows,
        }
    }

    pub fn filter_patients(&self, keep: impl Fn(u32) -> bool) -> SuperDataset {
        SuperDataset {
            grid: self.grid,
            covariate_names: self.covariate_names.clone(),
            rows: self.rows.iter().filter(|r| keep(r.patient_id)).cloned().collect(),
        }
    }

    /// CSV with header `patient_id,k,t_LM,time,status,z_cnn,<covariates>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["patient_id", "k", "t_LM", "time", "status", "z_cnn"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.patient_id.to_string(),
                r.k.to_string(),
                r.t_lm.to_string(),
                r.time.to_string(),
                r.status.to_string(),
                r.z_cnn.map(|z| z.to_string()).unwrap_or_default(),
            ];
            rec.extend(r.covariates.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, grid: LandmarkGrid) -> Result<SuperDataset> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers()?.clone();
        if header.len() < 6 || &header[0] != "patient_id" || &header[5] != "z_cnn" {
            return Err(Error::Format("unexpected super-dataset header".into()));
        }
        let covariate_names: Vec<String> = header.iter().skip(6).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {:?} in column {}", &rec[i], &header[i])))
            };
            let k = num(1)? as usize;
            if k >= grid.n {
                return Err(Error::Format(format!("landmark index {k} outside the grid")));
            }
            rows.push(SuperRow {
                patient_id: num(0)? as u32,
                k,
                t_lm: num(2)?,
                time: num(3)?,
                status: num(4)? as u8,
                z_cnn: if rec[5].is_empty() { None } else { Some(num(5)?) },
                covariates: (6..rec.len()).map(num).collect::<Result<_>>()?,
            });
        }
        if rows.iter().any(|r| r.z_cnn.is_some() != rows[0].z_cnn.is_some()) {
            return Err(Error::Format("z_cnn must be present on every row or on none".into()));
        }
        Ok(SuperDataset {
            grid,
            covariate_names,
            rows,
        })
    }
}
