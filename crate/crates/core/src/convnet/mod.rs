//! 1-D convolutional risk model: hand-written forward and backward passes,
//! ADAM, patient-grouped k-fold evaluation and sliding-window scoring.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use network::{bce_loss, ForwardPass, Gradients, Mode, Network, NetworkArch, SampleCache};
pub use train::{
    adam_step, assign_folds, kfold_evaluate, train, AdamState, FoldAssignment, FoldData, FoldModel, KFoldReport,
    Sample, TrainConfig, TrainReport,
};

pub use crate::metrics::auroc;

use crate::cohortsim::PatientRecord;
use crate::error::{Error, Result};
use crate::instances::{materialize, paa, ChannelScaler, InstancePlan, Interval, TimeSeriesInstance, MISSING_ROW, N_CHANNELS};
use crate::scalar::Scalar;

/// Rescales the vital rows of a (PAA-reduced) instance and flattens it to
/// a network input. The missingness row is passed through.
///
/// Rescaling is affine per channel, so applying it after PAA equals
/// applying it before.
pub fn network_input<T: Scalar>(instance: &TimeSeriesInstance, scaler: &ChannelScaler) -> Vec<T> {
    let mut out = Vec::with_capacity(N_CHANNELS * instance.n_cols);
    for c in 0..N_CHANNELS {
        for &x in instance.row(c) {
            out.push(T::of(if c == MISSING_ROW { x } else { scaler.apply(c, x) }));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub width_hours: f64,
    pub stride_hours: f64,
    pub bin_minutes: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            width_hours: 24.0,
            stride_hours: 8.0,
            bin_minutes: 9,
        }
    }
}

/// Scores every full window starting at admission with the given stride.
/// Returns `(window end, score)` pairs; stays shorter than one window
/// yield an empty list.
pub fn score_patient<T: Scalar>(
    net: &Network<T>,
    patient: &PatientRecord,
    config: &ScoringConfig,
    scaler: &ChannelScaler,
) -> Result<Vec<(f64, T)>> {
    if !(config.stride_hours > 0.0) {
        return Err(Error::Argument("stride must be > 0".into()));
    }
    let n_cols = (config.width_hours * 60.0).round() as usize;
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * config.stride_hours;
        let end = start + config.width_hours;
        if end > patient.end_time + 1e-9 {
            break;
        }
        let plan = InstancePlan {
            patient_id: patient.id,
            patient_index: 0,
            interval: Interval {
                start,
                end,
                shift_hours: start % config.width_hours,
            },
            label: 0,
        };
        let reduced = paa(&materialize(&plan, patient, n_cols), config.bin_minutes)?;
        let x = network_input::<T>(&reduced, scaler);
        out.push((end, net.predict(&x)?));
        k += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
