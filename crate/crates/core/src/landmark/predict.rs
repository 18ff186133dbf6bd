use super::cox::LandmarkCoxModel;
use super::SuperDataset;
use crate::error::{Error, Result};
use crate::metrics::auroc;

/// Cause-specific models for infection (cause 1) and discharge or death
/// (cause 2) fitted on the same super dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CompetingRisksModel {
    pub models: [LandmarkCoxModel; 2],
}

/// Plug-in survival and cumulative incidence at each jump time of a
/// landmark stratum, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct CifCurve {
    pub t_lm: f64,
    pub w: f64,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub cif: [Vec<f64>; 2],
}

impl CifCurve {
    /// `(Ŝ, F̂₁, F̂₂)` at time `t`.
    pub fn at(&self, t: f64) -> Result<(f64, f64, f64)> {
        if !(t >= self.t_lm && t <= self.t_lm + self.w) {
            return Err(Error::Argument(format!(
                "t={t} outside the prediction window [{}, {}]",
                self.t_lm,
                self.t_lm + self.w
            )));
        }
        let n = self.times.partition_point(|&s| s <= t);
        Ok(if n == 0 {
            (1.0, 0.0, 0.0)
        } else {
            (self.survival[n - 1], self.cif[0][n - 1], self.cif[1][n - 1])
        })
    }
}

impl CompetingRisksModel {
    pub fn new(cause1: LandmarkCoxModel, cause2: LandmarkCoxModel) -> Result<Self> {
        if cause1.cause != 1 || cause2.cause != 2 {
            return Err(Error::Argument("expected models for causes 1 and 2".into()));
        }
        if cause1.covariates != cause2.covariates || cause1.grid != cause2.grid {
            return Err(Error::Argument("cause models use different covariates or grids".into()));
        }
        Ok(Self {
            models: [cause1, cause2],
        })
    }

    pub fn covariates(&self) -> &[String] {
        &self.models[0].covariates
    }

    /// Curve for raw covariates `z` (model covariate order) at landmark `k`.
    pub fn curve(&self, z: &[f64], k: usize) -> Result<CifCurve> {
        let grid = self.models[0].grid;
        if k >= grid.n {
            return Err(Error::Argument(format!("landmark index {k} outside the grid")));
        }
        if z.len() != self.covariates().len() {
            return Err(Error::Argument(format!(
                "{} covariate values for {} covariates",
                z.len(),
                self.covariates().len()
            )));
        }
        let t_lm = grid.time(k);
        let hr = [
            self.models[0].linear_predictor(z, t_lm).exp(),
            self.models[1].linear_predictor(z, t_lm).exp(),
        ];
        let (b1, b2) = (&self.models[0].baselines[k], &self.models[1].baselines[k]);
        let (mut i, mut j) = (0, 0);
        let mut curve = CifCurve {
            t_lm,
            w: grid.w,
            times: Vec::with_capacity(b1.len() + b2.len()),
            survival: Vec::new(),
            cif: [Vec::new(), Vec::new()],
        };
        let (mut s, mut f1, mut f2) = (1.0, 0.0, 0.0);
        while i < b1.len() || j < b2.len() {
            let t1 = b1.get(i).map_or(f64::INFINITY, |b| b.0);
            let t2 = b2.get(j).map_or(f64::INFINITY, |b| b.0);
            let t = t1.min(t2);
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            if t1 == t {
                d1 = b1[i].1 * hr[0];
                i += 1;
            }
            if t2 == t {
                d2 = b2[j].1 * hr[1];
                j += 1;
            }
            f1 += s * d1;
            f2 += s * d2;
            s *= 1.0 - d1 - d2;
            curve.times.push(t);
            curve.survival.push(s);
            curve.cif[0].push(f1);
            curve.cif[1].push(f2);
        }
        Ok(curve)
    }

    pub fn predict_survival(&self, z: &[f64], k: usize, t: f64) -> Result<f64> {
        Ok(self.curve(z, k)?.at(t)?.0)
    }

    pub fn predict_cif(&self, z: &[f64], cause: u8, k: usize, t: f64) -> Result<f64> {
        let (_, f1, f2) = self.curve(z, k)?.at(t)?;
        match cause {
            1 => Ok(f1),
            2 => Ok(f2),
            _ => Err(Error::Argument(format!("unknown cause {cause}"))),
        }
    }

    /// `F̂₁(t_LM + w)` for every row of `ds`.
    pub fn horizon_cif(&self, ds: &SuperDataset) -> Result<Vec<f64>> {
        let names = self.covariates().to_vec();
        ds.rows
            .iter()
            .map(|r| {
                let z = ds.row_values(r, &names)?;
                let c = self.curve(&z, r.k)?;
                Ok(c.at(c.t_lm + c.w)?.1)
            })
            .collect()
    }
}

/// AUROC of `scores` (aligned with `ds.rows`) among the rows at landmark
/// `k`; rows with a NaN score are skipped. Cases have status 1.
pub fn auroc_at_landmark(ds: &SuperDataset, scores: &[f64], k: usize) -> Result<f64> {
    if scores.len() != ds.rows.len() {
        return Err(Error::Argument(format!("{} scores for {} rows", scores.len(), ds.rows.len())));
    }
    let mut s = Vec::new();
    let mut y = Vec::new();
    for (r, &v) in ds.rows.iter().zip(scores) {
        if r.k == k && !v.is_nan() {
            s.push(v);
            y.push((r.status == 1) as u8);
        }
    }
    auroc(&s, &y)
}

/// Risk-set weighted mean of the defined per-landmark AUROCs.
pub fn auroc_global(per_landmark: &[Option<f64>], risk_set_sizes: &[usize]) -> Result<f64> {
    if per_landmark.len() != risk_set_sizes.len() {
        return Err(Error::Argument("one risk-set size per landmark required".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, &r) in per_landmark.iter().zip(risk_set_sizes) {
        if let Some(a) = a {
            num += r as f64 * a;
            den += r as f64;
        }
    }
    if den == 0.0 {
        return Err(Error::Metric("AUROC is undefined at every landmark".into()));
    }
    Ok(num / den)
}
