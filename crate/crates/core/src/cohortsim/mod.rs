//! Synthetic ICU cohort generator.
//!
//! Each admission gets minute-resolution vital signs (HR, MAP, pulse
//! pressure, SaO2, RR) built from a per-patient baseline, a diurnal
//! sinusoid and AR(1) noise, plus monitor dropouts. Patients who acquire an
//! infection carry a piecewise-linear drift that starts
//! `signature_lead_hours` before onset. Event times come from constant
//! cause-specific hazards: infections can only occur after
//! [`ICU_ACQUIRED_AFTER_HOURS`], and every stay lasts at least
//! [`MIN_LOS_HOURS`].
//!
//! Generation is a pure function of the config; every patient draws from
//! its own ChaCha stream keyed by `(seed, id)`, so patients can be built in
//! parallel without changing the output.

mod io;

pub use io::{read_cohort, write_cohort};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Infections before this time are community acquired and not modelled.
pub const ICU_ACQUIRED_AFTER_HOURS: f64 = 48.0;
/// Admissions shorter than this are excluded from the cohort.
pub const MIN_LOS_HOURS: f64 = 48.0;
/// Low-frequency covariates are sampled on this grid.
pub const LOWFREQ_STEP_HOURS: f64 = 8.0;

pub const N_VITALS: usize = 5;
pub const VITAL_NAMES: [&str; N_VITALS] = ["hr", "map", "pulse_pressure", "sao2", "rr"];
/// Physiological clamp range per vital, in physical units.
pub const VITAL_RANGES: [(f64, f64); N_VITALS] =
    [(41.0, 239.0), (30.0, 160.0), (10.0, 120.0), (60.0, 100.0), (4.0, 60.0)];

pub const N_LOWFREQ: usize = 5;
pub const LOWFREQ_NAMES: [&str; N_LOWFREQ] = ["fever", "crp", "ventilation", "age", "sex"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vital {
    HeartRate = 0,
    MeanArterialPressure = 1,
    PulsePressure = 2,
    SaO2 = 3,
    RespiratoryRate = 4,
}

/// Which vitals drift ahead of an infection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureProfile {
    /// HR up, MAP down, SaO2 down, RR up.
    Sirs,
    /// HR up and RR up only.
    TachyHyperventilation,
}

impl SignatureProfile {
    /// Full-strength drift per vital, in physical units.
    pub fn amplitudes(self) -> [f64; N_VITALS] {
        match self {
            SignatureProfile::Sirs => [25.0, -12.0, 0.0, -3.0, 8.0],
            SignatureProfile::TachyHyperventilation => [25.0, 0.0, 0.0, 0.0, 8.0],
        }
    }

    fn name(self) -> &'static str {
        match self {
            SignatureProfile::Sirs => "sirs",
            SignatureProfile::TachyHyperventilation => "tachy_hyperventilation",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "sirs" => Some(SignatureProfile::Sirs),
            "tachy_hyperventilation" => Some(SignatureProfile::TachyHyperventilation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_patients: usize,
    pub mean_los_hours: f64,
    pub icuai_daily_rate: f64,
    pub signature_lead_hours: f64,
    pub signature_strength: f64,
    pub signature_profile: SignatureProfile,
    pub missing_rate: f64,
    /// Fraction of non-infectious stay ends that are deaths.
    pub death_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            mean_los_hours: 168.0,
            icuai_daily_rate: 0.04,
            signature_lead_hours: 36.0,
            signature_strength: 1.0,
            signature_profile: SignatureProfile::Sirs,
            missing_rate: 0.05,
            death_fraction: 0.15,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 1 {
            return Err(Error::config("n_patients", "must be at least 1"));
        }
        if !(self.mean_los_hours > MIN_LOS_HOURS) || !self.mean_los_hours.is_finite() {
            return Err(Error::config(
                "mean_los_hours",
                format!("must exceed the minimum stay of {MIN_LOS_HOURS} h"),
            ));
        }
        if !(self.icuai_daily_rate >= 0.0) || !self.icuai_daily_rate.is_finite() {
            return Err(Error::config("icuai_daily_rate", "must be finite and >= 0"));
        }
        if !(self.signature_lead_hours > 0.0) {
            return Err(Error::config("signature_lead_hours", "must be > 0"));
        }
        if !(0.0..=2.0).contains(&self.signature_strength) {
            return Err(Error::config("signature_strength", "must lie in [0, 2]"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config("missing_rate", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.death_fraction) {
            return Err(Error::config("death_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_patients", self.n_patients);
        kv.set("mean_los_hours", self.mean_los_hours);
        kv.set("icuai_daily_rate", self.icuai_daily_rate);
        kv.set("signature_lead_hours", self.signature_lead_hours);
        kv.set("signature_strength", self.signature_strength);
        kv.set("signature_profile", self.signature_profile.name());
        kv.set("missing_rate", self.missing_rate);
        kv.set("death_fraction", self.death_fraction);
        kv.set("seed", self.seed);
        kv
    }

    /// Overrides defaults with any simulation keys present in `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        if let Some(v) = kv.get("n_patients")? {
            c.n_patients = v;
        }
        if let Some(v) = kv.get("mean_los_hours")? {
            c.mean_los_hours = v;
        }
        if let Some(v) = kv.get("icuai_daily_rate")? {
            c.icuai_daily_rate = v;
        }
        if let Some(v) = kv.get("signature_lead_hours")? {
            c.signature_lead_hours = v;
        }
        if let Some(v) = kv.get("signature_strength")? {
            c.signature_strength = v;
        }
        if let Some(s) = kv.get_str("signature_profile") {
            c.signature_profile = SignatureProfile::parse(s)
                .ok_or_else(|| Error::config("signature_profile", format!("unknown profile `{s}`")))?;
        }
        if let Some(v) = kv.get("missing_rate")? {
            c.missing_rate = v;
        }
        if let Some(v) = kv.get("death_fraction")? {
            c.death_fraction = v;
        }
        if let Some(v) = kv.get("seed")? {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Infection = 1,
    DischargeOrDeath = 2,
}

impl Cause {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Cause::Infection),
            2 => Some(Cause::DischargeOrDeath),
            _ => None,
        }
    }
}

/// Low-frequency covariates at one 8-hour sampling point.
pub type LowFreq = [f64; N_LOWFREQ];

/// One admission.
///
/// `channels[v][m]` is the value of vital `v` at minute `m`; `NaN` marks a
/// missing slot. `lowfreq[k]` holds the covariates sampled at `8k` hours.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: u32,
    pub end_time: f64,
    pub cause: Cause,
    pub died: bool,
    pub infection_time: Option<f64>,
    pub channels: [Vec<f32>; N_VITALS],
    pub lowfreq: Vec<LowFreq>,
}

impl PatientRecord {
    pub fn n_minutes(&self) -> usize {
        minute_slots(self.end_time)
    }

    pub fn value(&self, vital: Vital, minute: usize) -> Option<f32> {
        let v = self.channels[vital as usize][minute];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_missing(&self, minute: usize) -> bool {
        self.channels.iter().any(|c| c[minute].is_nan())
    }

    /// Time at which the patient leaves the infection risk set.
    pub fn exit_time(&self) -> f64 {
        self.infection_time.unwrap_or(self.end_time)
    }

    /// Covariates frozen at time `t`: the latest sample taken at or before `t`.
    pub fn lowfreq_at(&self, t: f64) -> &LowFreq {
        let k = ((t / LOWFREQ_STEP_HOURS).floor().max(0.0) as usize).min(self.lowfreq.len() - 1);
        &self.lowfreq[k]
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.end_time > 0.0) {
            return Err(Error::DataConsistency(format!("patient {}: end_time must be > 0", self.id)));
        }
        if let Some(t) = self.infection_time {
            if self.cause != Cause::Infection {
                return Err(Error::DataConsistency(format!(
                    "patient {}: infection_time set but cause is {}",
                    self.id,
                    self.cause.code()
                )));
            }
            if !(t > 0.0 && t <= self.end_time) {
                return Err(Error::DataConsistency(format!(
                    "patient {}: infection_time {t} outside (0, {}]",
                    self.id, self.end_time
                )));
            }
        } else if self.cause == Cause::Infection {
            return Err(Error::DataConsistency(format!(
                "patient {}: cause 1 without infection_time",
                self.id
            )));
        }
        let n = self.n_minutes();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::DataConsistency(format!(
                "patient {}: every channel needs {n} minute slots",
                self.id
            )));
        }
        if self.lowfreq.is_empty() {
            return Err(Error::DataConsistency(format!("patient {}: no low-frequency samples", self.id)));
        }
        Ok(())
    }
}

pub type Cohort = Vec<PatientRecord>;

/// Number of minute slots covering `[0, end_time)`.
pub fn minute_slots(end_time: f64) -> usize {
    (end_time * 60.0 - 1e-9).ceil().max(0.0) as usize
}

/// Offset added to each vital `hours_to_onset` hours before an infection.
///
/// Zero before the ramp starts, linear over the lead period, full strength
/// from onset onwards.
pub fn drift_offset(
    profile: SignatureProfile,
    strength: f64,
    lead_hours: f64,
    hours_to_onset: f64,
) -> [f64; N_VITALS] {
    let frac = ((lead_hours - hours_to_onset) / lead_hours).clamp(0.0, 1.0);
    profile.amplitudes().map(|a| strength * a * frac)
}

pub fn generate_cohort(config: &SimConfig) -> Result<Cohort> {
    config.validate()?;
    let cohort: Cohort = (0..config.n_patients as u32)
        .into_par_iter()
        .map(|id| generate_patient(config, id))
        .collect();
    Ok(cohort)
}

fn patient_rng(seed: u64, id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("valid normal");
    for _ in 0..64 {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

// Per-vital (mean, sd, lo, hi) of patient baselines.
const BASELINES: [(f64, f64, f64, f64); N_VITALS] = [
    (80.0, 10.0, 55.0, 115.0),
    (85.0, 9.0, 60.0, 115.0),
    (50.0, 9.0, 25.0, 80.0),
    (97.0, 1.3, 92.0, 100.0),
    (18.0, 3.0, 10.0, 28.0),
];
const DIURNAL_AMPLITUDE: [f64; N_VITALS] = [4.0, 4.0, 3.0, 0.5, 1.5];
const NOISE_SD: [f64; N_VITALS] = [4.0, 4.0, 3.0, 0.8, 1.5];
const AR_COEF: f64 = 0.95;
const MEAN_GAP_MINUTES: f64 = 20.0;
const VENTILATION_RISK_RATIO: f64 = 2.5;

fn generate_patient(config: &SimConfig, id: u32) -> PatientRecord {
    let mut rng = patient_rng(config.seed, id);

    // Static characteristics.
    let age = truncated_normal(&mut rng, 62.0, 14.0, 18.0, 95.0);
    let sex = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
    let ventilated = rng.random::<f64>() < 0.5;
    let extubation = if ventilated {
        Exp::new(1.0 / 96.0).unwrap().sample(&mut rng)
    } else {
        0.0
    };

    // Event times.
    let los_excess = Exp::new(1.0 / (config.mean_los_hours - MIN_LOS_HOURS))
        .unwrap()
        .sample(&mut rng);
    let end_time = MIN_LOS_HOURS + los_excess;
    let died = rng.random::<f64>() < config.death_fraction;
    let mean_rr = 0.5 + 0.5 * VENTILATION_RISK_RATIO;
    let hourly = config.icuai_daily_rate / 24.0
        * if ventilated { VENTILATION_RISK_RATIO } else { 1.0 }
        / mean_rr;
    let onset_draw = if hourly > 0.0 {
        ICU_ACQUIRED_AFTER_HOURS + Exp::new(hourly).unwrap().sample(&mut rng)
    } else {
        f64::INFINITY
    };
    let infection_time = (onset_draw < end_time).then_some(onset_draw);
    let cause = if infection_time.is_some() { Cause::Infection } else { Cause::DischargeOrDeath };

    // Low-frequency covariates every 8 hours.
    let n_low = (end_time / LOWFREQ_STEP_HOURS).floor() as usize + 1;
    let mut lowfreq = Vec::with_capacity(n_low);
    let mut log_crp: f64 = Normal::new(3.5, 0.6).unwrap().sample(&mut rng);
    let walk = Normal::new(0.0, 0.25).unwrap();
    for k in 0..n_low {
        let t = k as f64 * LOWFREQ_STEP_HOURS;
        let pre_onset = infection_time.is_some_and(|on| t <= on && on - t <= 24.0);
        if k > 0 {
            log_crp += walk.sample(&mut rng);
        }
        let crp = (log_crp + if pre_onset { 0.5 } else { 0.0 }).exp();
        let p_fever = if pre_onset { 0.3 } else { 0.1 };
        let fever = if rng.random::<f64>() < p_fever { 1.0 } else { 0.0 };
        let vent = if ventilated && t < extubation { 1.0 } else { 0.0 };
        lowfreq.push([fever, crp, vent, age, sex]);
    }

    // Vital signs.
    let n = minute_slots(end_time);
    let mut channels: [Vec<f32>; N_VITALS] = Default::default();
    let amplitude = config.signature_profile.amplitudes();
    for (v, channel) in channels.iter_mut().enumerate() {
        let (m, sd, lo, hi) = BASELINES[v];
        let base = truncated_normal(&mut rng, m, sd, lo, hi);
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let innov = Normal::new(0.0, NOISE_SD[v] * (1.0 - AR_COEF * AR_COEF).sqrt()).unwrap();
        let mut ar = Normal::new(0.0, NOISE_SD[v]).unwrap().sample(&mut rng);
        let (clo, chi) = VITAL_RANGES[v];
        channel.reserve_exact(n);
        for minute in 0..n {
            let t = minute as f64 / 60.0;
            ar = AR_COEF * ar + innov.sample(&mut rng);
            let diurnal = DIURNAL_AMPLITUDE[v] * (std::f64::consts::TAU * t / 24.0 + phase).sin();
            let drift = match infection_time {
                Some(on) if amplitude[v] != 0.0 => {
                    drift_offset(
                        config.signature_profile,
                        config.signature_strength,
                        config.signature_lead_hours,
                        on - t,
                    )[v]
                }
                _ => 0.0,
            };
            channel.push((base + diurnal + ar + drift).clamp(clo, chi) as f32);
        }
    }

    // Monitor dropouts: two-state Markov chain shared by all vitals.
    if config.missing_rate > 0.0 {
        let recover = 1.0 / MEAN_GAP_MINUTES;
        let drop = config.missing_rate * recover / (1.0 - config.missing_rate);
        let mut missing = rng.random::<f64>() < config.missing_rate;
        for minute in 0..n {
            if missing {
                for c in channels.iter_mut() {
                    c[minute] = f32::NAN;
                }
            }
            let u: f64 = rng.random();
            missing = if missing { u >= recover } else { u < drop };
        }
    }

    PatientRecord {
        id,
        end_time,
        cause,
        died: died && cause == Cause::DischargeOrDeath,
        infection_time,
        channels,
        lowfreq,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub infected: usize,
    pub not_infected: usize,
    /// Infections per patient-day at risk after the acquisition cut-off.
    pub daily_infection_rate: f64,
    pub median_onset_days: Option<f64>,
    pub median_los_days: f64,
    pub missing_fraction: f64,
}

pub fn cohort_summary(cohort: &[PatientRecord]) -> Result<SummaryStats> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput("cohort has no patients".into()));
    }
    let infected = cohort.iter().filter(|p| p.infection_time.is_some()).count();
    let exposure_days: f64 = cohort
        .iter()
        .map(|p| (p.exit_time() - ICU_ACQUIRED_AFTER_HOURS).max(0.0) / 24.0)
        .sum();
    let daily_infection_rate = if exposure_days > 0.0 {
        infected as f64 / exposure_days
    } else {
        0.0
    };
    let mut onsets: Vec<f64> = cohort.iter().filter_map(|p| p.infection_time).map(|t| t / 24.0).collect();
    let mut los: Vec<f64> = cohort.iter().map(|p| p.end_time / 24.0).collect();
    let (mut miss, mut total) = (0usize, 0usize);
    for p in cohort {
        let n = p.n_minutes();
        total += n;
        miss += (0..n).filter(|&m| p.is_missing(m)).count();
    }
    Ok(SummaryStats {
        n: cohort.len(),
        infected,
        not_infected: cohort.len() - infected,
        daily_infection_rate,
        median_onset_days: (!onsets.is_empty()).then(|| median(&mut onsets)),
        median_los_days: median(&mut los),
        missing_fraction: if total > 0 { miss as f64 / total as f64 } else { 0.0 },
    })
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
