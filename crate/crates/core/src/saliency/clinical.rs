use std::fmt;

use crate::cohortsim::Vital;
use crate::error::{Error, Result};
use crate::instances::{TimeSeriesInstance, MISSING_ROW};

use super::SalientWindow;

/// Critical-condition thresholds on window means.
pub const TACHYCARDIA_HR: f64 = 90.0;
pub const HYPOTENSION_MAP: f64 = 80.0;
pub const DESATURATION_SAO2: f64 = 95.0;
pub const HYPERVENTILATION_RR: f64 = 24.0;

pub const N_CLASSES: usize = 16;

/// Condition names in bit order.
pub const CONDITION_NAMES: [&str; 4] = ["Tachycardia", "Hypotension", "Desaturation", "Hyperventilation"];

/// One of the 16 combinations of critical conditions, as a bitmask:
/// bit 0 tachycardia, bit 1 hypotension, bit 2 desaturation, bit 3
/// hyperventilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct ConditionClass(u8);

impl ConditionClass {
    pub const NONE: ConditionClass = ConditionClass(0);

    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < N_CLASSES {
            Ok(Self(id))
        } else {
            Err(Error::Argument(format!("condition class {id} outside 0..16")))
        }
    }

    pub fn from_flags(tachycardia: bool, hypotension: bool, desaturation: bool, hyperventilation: bool) -> Self {
        Self(tachycardia as u8 | (hypotension as u8) << 1 | (desaturation as u8) << 2 | (hyperventilation as u8) << 3)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn has(self, bit: usize) -> bool {
        self.0 >> bit & 1 == 1
    }

    /// Present conditions, listed from the highest bit down.
    pub fn conditions(self) -> Vec<&'static str> {
        (0..4).rev().filter(|&b| self.has(b)).map(|b| CONDITION_NAMES[b]).collect()
    }
}

impl fmt::Display for ConditionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            f.write_str("None")
        } else {
            f.write_str(&self.conditions().join(", "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Classification {
    pub class: ConditionClass,
    pub mean_hr: f64,
    pub mean_map: f64,
    pub mean_sao2: f64,
    pub mean_rr: f64,
    /// The monitor was off for the whole window; the means are carried
    /// forward from earlier observations.
    pub imputed_only: bool,
}

/// Classifies the window of a raw (physical units, LOCF-imputed) instance
/// by its vital-sign means.
pub fn classify_conditions(raw: &TimeSeriesInstance, window: &SalientWindow) -> Result<Classification> {
    let span = raw.interval.width();
    if !(span > 0.0) {
        return Err(Error::Argument("instance has an empty interval".into()));
    }
    let per_hour = raw.n_cols as f64 / span;
    let a = (window.start_hours * per_hour).round() as usize;
    let b = ((window.end_hours * per_hour).round() as usize).min(raw.n_cols);
    if window.start_hours < 0.0 || a >= b {
        return Err(Error::Argument(format!(
            "window [{}, {}] h outside the {span} h instance",
            window.start_hours, window.end_hours
        )));
    }
    let mean = |v: Vital| {
        let row = &raw.row(v as usize)[a..b];
        row.iter().sum::<f64>() / row.len() as f64
    };
    let (hr, map, sao2, rr) = (
        mean(Vital::HeartRate),
        mean(Vital::MeanArterialPressure),
        mean(Vital::SaO2),
        mean(Vital::RespiratoryRate),
    );
    if [hr, map, sao2, rr].iter().any(|x| !x.is_finite()) {
        return Err(Error::Data(format!("non-finite vital means in patient {} window", raw.patient_id)));
    }
    Ok(Classification {
        class: ConditionClass::from_flags(
            hr >= TACHYCARDIA_HR,
            map <= HYPOTENSION_MAP,
            sao2 <= DESATURATION_SAO2,
            rr >= HYPERVENTILATION_RR,
        ),
        mean_hr: hr,
        mean_map: map,
        mean_sao2: sao2,
        mean_rr: rr,
        imputed_only: raw.row(MISSING_ROW)[a..b].iter().all(|&m| m >= 1.0),
    })
}
