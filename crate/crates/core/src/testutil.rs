use crate::cohortsim::{minute_slots, Cause, PatientRecord, N_LOWFREQ, N_VITALS};

pub(crate) fn synthetic_patient(id: u32, end_time: f64, infection: Option<f64>, died: bool) -> PatientRecord {
    let n = minute_slots(end_time);
    let channels: [Vec<f32>; N_VITALS] = std::array::from_fn(|v| (0..n).map(|m| (v * 1000 + m % 1000) as f32).collect());
    PatientRecord {
        id,
        end_time,
        cause: if infection.is_some() { Cause::Infection } else { Cause::DischargeOrDeath },
        died,
        infection_time: infection,
        channels,
        lowfreq: vec![[0.0; N_LOWFREQ]; (end_time / 8.0) as usize + 1],
    }
}
