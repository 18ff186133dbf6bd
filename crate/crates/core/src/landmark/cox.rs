use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::{LandmarkGrid, SuperDataset, TAU_UNIT_HOURS};
use crate::error::{Error, Result};

/// Covariates expanded with their landmark-time interactions: for every
/// kept covariate the columns `z, z·τ, z·τ²`, where `z` is optionally
/// standardised and `τ = t_LM / 24` (days).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub covariates: Vec<String>,
    /// Covariates dropped because their column is constant.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
    pub standardized: bool,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub columns: Vec<String>,
    pub n: usize,
    /// Row-major `n × p`.
    pub x: Vec<f64>,
}

impl Design {
    pub fn p(&self) -> usize {
        3 * self.covariates.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }
}

fn expand_into(out: &mut Vec<f64>, raw: &[f64], center: &[f64], scale: &[f64], t_lm: f64) {
    let tau = t_lm / TAU_UNIT_HOURS;
    for c in 0..raw.len() {
        let z = (raw[c] - center[c]) / scale[c];
        out.extend([z, z * tau, z * tau * tau]);
    }
}

pub fn expand_design(ds: &SuperDataset, covariates: &[String], standardize: bool) -> Result<Design> {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    let mut sources = Vec::new();
    let mut center = Vec::new();
    let mut scale = Vec::new();
    for name in covariates {
        if kept.contains(name) {
            return Err(Error::Argument(format!("covariate {name:?} listed twice")));
        }
        let src = ds.source(name)?;
        let values: Vec<f64> = ds.rows.iter().map(|r| SuperDataset::value(r, src)).collect();
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "covariate {name:?} is not finite for patient {} at t_LM={}",
                ds.rows[bad].patient_id, ds.rows[bad].t_lm
            )));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || lo == hi {
            warnings.push(format!("covariate {name:?} is constant and was excluded"));
            excluded.push(name.clone());
            continue;
        }
        let (m, s) = if standardize {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        } else {
            (0.0, 1.0)
        };
        kept.push(name.clone());
        sources.push(src);
        center.push(m);
        scale.push(s);
    }
    let mut columns = Vec::new();
    for name in &kept {
        columns.extend([name.clone(), format!("{name}*tau"), format!("{name}*tau^2")]);
    }
    let mut x = Vec::with_capacity(ds.rows.len() * 3 * kept.len());
    let mut raw = vec![0.0; kept.len()];
    for r in &ds.rows {
        for (c, &src) in sources.iter().enumerate() {
            raw[c] = SuperDataset::value(r, src);
        }
        expand_into(&mut x, &raw, &center, &scale, r.t_lm);
    }
    Ok(Design {
        covariates: kept,
        excluded,
        warnings,
        standardized: standardize,
        center,
        scale,
        columns,
        n: ds.rows.len(),
        x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxFitConfig {
    pub max_iter: usize,
    pub score_tol: f64,
    pub rel_loglik_tol: f64,
    pub max_halvings: usize,
    /// Coefficients beyond this magnitude are taken as a sign of monotone
    /// likelihood; they are capped and the fit stops with a warning.
    pub coef_cap: f64,
    /// A converged coefficient beyond this magnitude is reported as a
    /// likely monotone likelihood.
    pub separation_threshold: f64,
}

impl Default for CoxFitConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            score_tol: 1e-8,
            rel_loglik_tol: 1e-10,
            max_halvings: 40,
            coef_cap: 25.0,
            separation_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub loglik: f64,
    pub null_loglik: f64,
    pub max_abs_score: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxDerivatives {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Row-major `p × p` Hessian of the log partial likelihood.
    pub hessian: Vec<f64>,
}

/// Stratified right-censored data for a Breslow partial likelihood.
#[derive(Debug, Clone)]
pub struct CoxData {
    x: Vec<f64>,
    p: usize,
    time: Vec<f64>,
    event: Vec<bool>,
    /// Row indices of each stratum ordered by decreasing time.
    strata: Vec<Vec<usize>>,
}

impl CoxData {
    pub fn new(x: Vec<f64>, p: usize, time: Vec<f64>, event: Vec<bool>, stratum: &[usize]) -> Result<Self> {
        let n = time.len();
        if event.len() != n || stratum.len() != n || x.len() != n * p {
            return Err(Error::Argument(format!(
                "inconsistent lengths: {n} times, {} events, {} strata, {} design values for p={p}",
                event.len(),
                stratum.len(),
                x.len()
            )));
        }
        if time.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("non-finite event time".into()));
        }
        let n_strata = stratum.iter().max().map_or(0, |m| m + 1);
        let mut strata = vec![Vec::new(); n_strata];
        for (i, &s) in stratum.iter().enumerate() {
            strata[s].push(i);
        }
        for rows in &mut strata {
            rows.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        }
        Ok(Self {
            x,
            p,
            time,
            event,
            strata,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Calls `f` with each run of equal times in `rows`, latest first, so
    /// the risk set of a run is everything up to the run's end.
    fn tie_groups(&self, rows: &[usize], mut f: impl FnMut(std::ops::Range<usize>)) {
        let mut i = 0;
        while i < rows.len() {
            let t = self.time[rows[i]];
            let mut j = i;
            while j < rows.len() && self.time[rows[j]] == t {
                j += 1;
            }
            f(i..j);
            i = j;
        }
    }

    pub fn loglik(&self, beta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for rows in &self.strata {
            if rows.is_empty() {
                continue;
            }
            let eta: Vec<f64> = rows.iter().map(|&i| self.eta(i, beta)).collect();
            let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            self.tie_groups(rows, |g| {
                for a in g.clone() {
                    s0 += (eta[a] - m).exp();
                }
                let mut d = 0.0;
                for a in g {
                    if self.event[rows[a]] {
                        d += 1.0;
                        ll += eta[a];
                    }
                }
                if d > 0.0 {
                    ll -= d * (s0.ln() + m);
                }
            });
        }
        ll
    }

    pub fn derivatives(&self, beta: &[f64]) -> CoxDerivatives {
        let p = self.p;
        let mut ll = 0.0;
        let mut score = vec![0.0; p];
        let mut hessian = vec![0.0; p * p];
        for rows in &self.strata {
            if rows.is_empty() {
                continue;
            }
            let eta: Vec<f64> = rows.iter().map(|&i| self.eta(i, beta)).collect();
            let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![0.0; p * p];
            self.tie_groups(rows, |g| {
                for a in g.clone() {
                    let r = (eta[a] - m).exp();
                    let x = self.row(rows[a]);
                    s0 += r;
                    for u in 0..p {
                        let rx = r * x[u];
                        s1[u] += rx;
                        for v in 0..=u {
                            s2[u * p + v] += rx * x[v];
                        }
                    }
                }
                let mut d = 0.0;
                for a in g {
                    if self.event[rows[a]] {
                        d += 1.0;
                        ll += eta[a];
                        for (s, x) in score.iter_mut().zip(self.row(rows[a])) {
                            *s += x;
                        }
                    }
                }
                if d > 0.0 {
                    ll -= d * (s0.ln() + m);
                    for u in 0..p {
                        let au = s1[u] / s0;
                        score[u] -= d * au;
                        for v in 0..=u {
                            hessian[u * p + v] -= d * (s2[u * p + v] / s0 - au * s1[v] / s0);
                        }
                    }
                }
            });
        }
        for u in 0..p {
            for v in 0..u {
                hessian[v * p + u] = hessian[u * p + v];
            }
        }
        CoxDerivatives {
            loglik: ll,
            score,
            hessian,
        }
    }

    /// Newton–Raphson with step halving from `beta = 0`.
    pub fn fit(&self, config: &CoxFitConfig) -> Result<(Vec<f64>, ConvergenceReport)> {
        if self.n_events() == 0 {
            return Err(Error::Data("no events to fit".into()));
        }
        let p = self.p;
        let mut beta = vec![0.0; p];
        let mut d = self.derivatives(&beta);
        let mut report = ConvergenceReport {
            null_loglik: d.loglik,
            ..Default::default()
        };
        let max_abs = |s: &[f64]| s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if p == 0 {
            report.loglik = d.loglik;
            report.converged = true;
            return Ok((beta, report));
        }
        let solve = |d: &CoxDerivatives| -> Option<Vec<f64>> {
            let info = DMatrix::from_row_slice(p, p, &d.hessian).map(|h| -h);
            let chol = info.cholesky()?;
            let step = chol.solve(&DVector::from_row_slice(&d.score));
            step.iter().all(|v| v.is_finite()).then(|| step.iter().copied().collect())
        };
        if solve(&d).is_none() {
            return Err(Error::Data(
                "design is not full rank: the information matrix at zero is singular".into(),
            ));
        }
        for iter in 0..config.max_iter {
            report.iterations = iter;
            if max_abs(&d.score) < config.score_tol {
                report.converged = true;
                break;
            }
            let Some(step) = solve(&d) else {
                return Err(Error::Convergence {
                    iterations: iter,
                    gradient_norm: max_abs(&d.score),
                });
            };
            let mut scale = 1.0;
            let mut candidate: Vec<f64>;
            let mut ll_new;
            let mut halvings = 0;
            loop {
                candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
                ll_new = self.loglik(&candidate);
                if ll_new.is_finite() && ll_new >= d.loglik - 1e-12 * (1.0 + d.loglik.abs()) {
                    break;
                }
                halvings += 1;
                if halvings > config.max_halvings {
                    return Err(Error::Convergence {
                        iterations: iter,
                        gradient_norm: max_abs(&d.score),
                    });
                }
                scale *= 0.5;
            }
            let rel = (ll_new - d.loglik).abs() / d.loglik.abs().max(f64::MIN_POSITIVE);
            beta = candidate;
            if beta.iter().any(|b| b.abs() > config.coef_cap) {
                for b in &mut beta {
                    *b = b.clamp(-config.coef_cap, config.coef_cap);
                }
                d = self.derivatives(&beta);
                report.iterations = iter + 1;
                report.warnings.push(format!(
                    "coefficients diverged beyond {} (monotone likelihood); capped",
                    config.coef_cap
                ));
                break;
            }
            d = self.derivatives(&beta);
            report.iterations = iter + 1;
            if rel < config.rel_loglik_tol {
                report.converged = true;
                break;
            }
        }
        if !report.converged && report.warnings.is_empty() {
            return Err(Error::Convergence {
                iterations: report.iterations,
                gradient_norm: max_abs(&d.score),
            });
        }
        if report.converged {
            for (i, b) in beta.iter().enumerate() {
                if b.abs() > config.separation_threshold {
                    report.warnings.push(format!(
                        "coefficient {i} reached {b:.3}; the likelihood may be monotone"
                    ));
                }
            }
        }
        report.loglik = d.loglik;
        report.max_abs_score = max_abs(&d.score);
        Ok((beta, report))
    }

    /// Inverse observed information at `beta`, row-major.
    pub fn covariance(&self, beta: &[f64]) -> Option<Vec<f64>> {
        let p = self.p;
        let d = self.derivatives(beta);
        let info = DMatrix::from_row_slice(p, p, &d.hessian).map(|h| -h);
        let inv = info.cholesky()?.inverse();
        Some(inv.transpose().iter().copied().collect())
    }

    /// Breslow increments `(event time, d / Σ_risk exp(η))` per stratum.
    pub fn baseline(&self, beta: &[f64]) -> Vec<Vec<(f64, f64)>> {
        self.strata
            .iter()
            .map(|rows| {
                let mut out = Vec::new();
                let mut s0 = 0.0;
                self.tie_groups(rows, |g| {
                    let mut d = 0.0;
                    for a in g.clone() {
                        s0 += self.eta(rows[a], beta).exp();
                        if self.event[rows[a]] {
                            d += 1.0;
                        }
                    }
                    if d > 0.0 {
                        out.push((self.time[rows[g.start]], d / s0));
                    }
                });
                out.reverse();
                out
            })
            .collect()
    }
}

/// Cause-specific landmark super-model with landmark-stratified baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkCoxModel {
    pub cause: u8,
    pub grid: LandmarkGrid,
    pub covariates: Vec<String>,
    pub excluded: Vec<String>,
    pub standardized: bool,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[β⁽⁰⁾, β⁽¹⁾, β⁽²⁾]` per covariate, in the standardised basis with τ in days.
    pub coefficients: Vec<[f64; 3]>,
    /// Standard errors matching `coefficients`; NaN if the information
    /// matrix could not be inverted.
    pub std_errors: Vec<[f64; 3]>,
    /// Breslow increments per landmark index, increasing in time.
    pub baselines: Vec<Vec<(f64, f64)>>,
    pub report: ConvergenceReport,
}

pub fn fit_landmark_supermodel(
    ds: &SuperDataset,
    cause: u8,
    covariates: &[String],
    standardize: bool,
    config: &CoxFitConfig,
) -> Result<LandmarkCoxModel> {
    ds.grid.validate()?;
    let design = expand_design(ds, covariates, standardize)?;
    let time: Vec<f64> = ds.rows.iter().map(|r| r.time).collect();
    let event: Vec<bool> = ds.rows.iter().map(|r| r.status == cause).collect();
    let stratum: Vec<usize> = ds.rows.iter().map(|r| r.k).collect();
    if stratum.iter().any(|&k| k >= ds.grid.n) {
        return Err(Error::Data("landmark index outside the grid".into()));
    }
    if event.iter().all(|e| !e) {
        return Err(Error::Data(format!("no events of cause {cause} in the super dataset")));
    }
    let p = design.p();
    let data = CoxData::new(design.x, p, time, event, &stratum)?;
    let (beta, mut report) = data.fit(config)?;
    report.warnings.splice(0..0, design.warnings.iter().cloned());
    let se: Vec<f64> = match data.covariance(&beta) {
        Some(cov) => (0..p).map(|i| cov[i * p + i].sqrt()).collect(),
        None => vec![f64::NAN; p],
    };
    let mut baselines = data.baseline(&beta);
    baselines.resize(ds.grid.n, Vec::new());
    Ok(LandmarkCoxModel {
        cause,
        grid: ds.grid,
        covariates: design.covariates,
        excluded: design.excluded,
        standardized: design.standardized,
        center: design.center,
        scale: design.scale,
        coefficients: beta.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        std_errors: se.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        baselines,
        report,
    })
}

impl LandmarkCoxModel {
    /// Time-varying coefficient of covariate `c` in the standardised basis.
    pub fn beta_at(&self, c: usize, t_lm: f64) -> f64 {
        let tau = t_lm / TAU_UNIT_HOURS;
        let [b0, b1, b2] = self.coefficients[c];
        b0 + b1 * tau + b2 * tau * tau
    }

    /// Coefficient of covariate `c` per raw unit at `t_lm`.
    pub fn raw_beta_at(&self, c: usize, t_lm: f64) -> f64 {
        self.beta_at(c, t_lm) / self.scale[c]
    }

    /// Linear predictor for raw covariates `z` in `self.covariates` order.
    pub fn linear_predictor(&self, z: &[f64], t_lm: f64) -> f64 {
        (0..self.covariates.len())
            .map(|c| self.beta_at(c, t_lm) * (z[c] - self.center[c]) / self.scale[c])
            .sum()
    }

    /// The same predictor assembled from design columns.
    pub fn design_predictor(&self, z: &[f64], t_lm: f64) -> f64 {
        let mut row = Vec::new();
        expand_into(&mut row, z, &self.center, &self.scale, t_lm);
        row.iter().zip(self.coefficients.iter().flatten()).map(|(a, b)| a * b).sum()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut s = String::new();
        let g = &self.grid;
        let _ = writeln!(s, "cause {}", self.cause);
        let _ = writeln!(s, "grid {} {} {} {}", g.s0, g.s1, g.n, g.w);
        let _ = writeln!(s, "tau_unit_hours {TAU_UNIT_HOURS}");
        let _ = writeln!(s, "standardized {}", self.standardized);
        let r = &self.report;
        let _ = writeln!(
            s,
            "fit converged={} iterations={} loglik={} null_loglik={} max_abs_score={}",
            r.converged, r.iterations, r.loglik, r.null_loglik, r.max_abs_score
        );
        for warning in &r.warnings {
            let _ = writeln!(s, "warning {warning}");
        }
        for name in &self.excluded {
            let _ = writeln!(s, "excluded {name}");
        }
        let _ = writeln!(s, "# coef name center scale beta0 beta1 beta2 se0 se1 se2");
        for (c, name) in self.covariates.iter().enumerate() {
            let [b0, b1, b2] = self.coefficients[c];
            let [s0, s1, s2] = self.std_errors[c];
            let _ = writeln!(
                s,
                "coef {name} {} {} {b0} {b1} {b2} {s0} {s1} {s2}",
                self.center[c], self.scale[c]
            );
        }
        let _ = writeln!(s, "# baseline k time increment");
        for (k, incs) in self.baselines.iter().enumerate() {
            for (t, d) in incs {
                let _ = writeln!(s, "baseline {k} {t} {d}");
            }
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: &str| Error::Format(format!("bad model line {line:?}"));
        let mut model = LandmarkCoxModel {
            cause: 0,
            grid: LandmarkGrid::default(),
            covariates: Vec::new(),
            excluded: Vec::new(),
            standardized: false,
            center: Vec::new(),
            scale: Vec::new(),
            coefficients: Vec::new(),
            std_errors: Vec::new(),
            baselines: Vec::new(),
            report: ConvergenceReport::default(),
        };
        for line in r.lines() {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> { f.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(&line)) };
            match f.first().copied() {
                None | Some("#") | Some("tau_unit_hours") => {}
                Some("cause") => model.cause = num(1)? as u8,
                Some("grid") => {
                    model.grid = LandmarkGrid {
                        s0: num(1)?,
                        s1: num(2)?,
                        n: num(3)? as usize,
                        w: num(4)?,
                    };
                    model.baselines = vec![Vec::new(); model.grid.n];
                }
                Some("standardized") => model.standardized = f.get(1) == Some(&"true"),
                Some("fit") => {
                    for kv in &f[1..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| bad(&line))?;
                        let x = || v.parse::<f64>().map_err(|_| bad(&line));
                        match k {
                            "converged" => model.report.converged = v == "true",
                            "iterations" => model.report.iterations = x()? as usize,
                            "loglik" => model.report.loglik = x()?,
                            "null_loglik" => model.report.null_loglik = x()?,
                            "max_abs_score" => model.report.max_abs_score = x()?,
                            _ => return Err(bad(&line)),
                        }
                    }
                }
                Some("warning") => model.report.warnings.push(line["warning ".len()..].to_string()),
                Some("excluded") => model.excluded.push(f.get(1).ok_or_else(|| bad(&line))?.to_string()),
                Some("coef") => {
                    model.covariates.push(f.get(1).ok_or_else(|| bad(&line))?.to_string());
                    model.center.push(num(2)?);
                    model.scale.push(num(3)?);
                    model.coefficients.push([num(4)?, num(5)?, num(6)?]);
                    model.std_errors.push([num(7)?, num(8)?, num(9)?]);
                }
                Some("baseline") => {
                    let k = num(1)? as usize;
                    let slot = model.baselines.get_mut(k).ok_or_else(|| bad(&line))?;
                    slot.push((num(2)?, num(3)?));
                }
                Some(_) => return Err(bad(&line)),
            }
        }
        if model.cause == 0 {
            return Err(Error::Format("model text lacks a cause line".into()));
        }
        Ok(model)
    }
}
