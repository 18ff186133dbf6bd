//! Time-series instances: 24-hour windows of the five vitals plus a
//! missingness row, cut from each admission on three interleaved grids
//! (offsets 0, 8 and 16 hours) and labelled against the first infection.

mod store;

pub use store::{read_instance_store, write_instance_store, StoredInstance};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohortsim::{PatientRecord, N_VITALS, VITAL_RANGES};
use crate::error::{Error, Result};

/// Vitals plus the missingness indicator.
pub const N_CHANNELS: usize = N_VITALS + 1;
pub const MISSING_ROW: usize = N_VITALS;
/// Hours removed from the end of a stay that ended in death.
pub const DEATH_TRIM_HOURS: f64 = 24.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    /// Offset of the grid this window belongs to (0, 8 or 16 h by default).
    pub shift_hours: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Windows `[t0 + δ + (k-1)w, min(t0 + δ + kw, t_end)]` for every shift δ.
///
/// Trailing windows are truncated at `t_end`; a shifted grid contributes
/// nothing when `t_end <= t0 + δ`.
pub fn partition_windows(t0: f64, t_end: f64, width: f64, shifts: &[f64]) -> Result<Vec<Interval>> {
    if !(width > 0.0) {
        return Err(Error::Argument(format!("window width must be > 0, got {width}")));
    }
    if !(t_end > t0) {
        return Err(Error::Argument(format!("t_end ({t_end}) must exceed t0 ({t0})")));
    }
    if let Some(&bad) = shifts.iter().find(|&&d| !(0.0..width).contains(&d)) {
        return Err(Error::Argument(format!("shift {bad} outside [0, {width})")));
    }
    let mut out = Vec::new();
    for &delta in shifts {
        let mut start = t0 + delta;
        while start < t_end - EPS {
            let end = (start + width).min(t_end);
            out.push(Interval {
                start,
                end,
                shift_hours: delta,
            });
            start += width;
        }
    }
    Ok(out)
}

/// How windows before the onset window are labelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Only the window immediately before the onset window is a case.
    Adjacent,
    /// Every earlier window of the same grid is a case.
    AllPreceding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub width_hours: f64,
    pub shifts: Vec<f64>,
    pub label_rule: LabelRule,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            width_hours: 24.0,
            shifts: vec![0.0, 8.0, 16.0],
            label_rule: LabelRule::Adjacent,
        }
    }
}

impl InstanceConfig {
    pub fn n_columns(&self) -> usize {
        (self.width_hours * 60.0).round() as usize
    }
}

pub trait Labeled {
    fn label(&self) -> u8;
}

/// A labelled window that has not been materialized yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstancePlan {
    pub patient_id: u32,
    /// Position of the patient in the cohort slice the plan was built from.
    pub patient_index: usize,
    pub interval: Interval,
    pub label: u8,
}

impl Labeled for InstancePlan {
    fn label(&self) -> u8 {
        self.label
    }
}

/// A `N_CHANNELS × n_cols` row-major matrix with its window and label.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesInstance {
    pub patient_id: u32,
    pub interval: Interval,
    pub label: u8,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Labeled for TimeSeriesInstance {
    fn label(&self) -> u8 {
        self.label
    }
}

impl TimeSeriesInstance {
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.data[channel * self.n_cols..(channel + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.data[channel * self.n_cols..(channel + 1) * self.n_cols]
    }
}

/// Labels and windows for every patient, without touching the vitals.
pub fn plan_instances(cohort: &[PatientRecord], config: &InstanceConfig) -> Result<Vec<InstancePlan>> {
    if cohort.is_empty() {
        return Err(Error::EmptyInput("cohort has no patients".into()));
    }
    let w = config.width_hours;
    let mut plans = Vec::new();
    for (index, p) in cohort.iter().enumerate() {
        p.check()?;
        let t_last = if p.died { p.end_time - DEATH_TRIM_HOURS } else { p.end_time };
        if t_last <= 0.0 {
            continue;
        }
        for iv in partition_windows(0.0, t_last, w, &config.shifts)? {
            if iv.width() < w - EPS {
                continue;
            }
            let k = ((iv.start - iv.shift_hours) / w).round() as i64;
            let label = match p.infection_time {
                None => 0,
                Some(onset) => {
                    if onset < iv.shift_hours {
                        continue;
                    }
                    let k_on = ((onset - iv.shift_hours) / w).floor() as i64;
                    if k > k_on {
                        continue;
                    }
                    let case = match config.label_rule {
                        LabelRule::Adjacent => k >= k_on - 1,
                        LabelRule::AllPreceding => true,
                    };
                    u8::from(case)
                }
            };
            plans.push(InstancePlan {
                patient_id: p.id,
                patient_index: index,
                interval: iv,
                label,
            });
        }
    }
    Ok(plans)
}

/// Nominal values used only when a channel has no observation at all.
const NOMINAL: [f64; N_VITALS] = [80.0, 85.0, 50.0, 97.0, 18.0];

/// Last observation carried forward over a NaN-marked series; leading gaps
/// take the first observed value.
pub fn locf(series: &[f64]) -> Vec<f64> {
    let first = series.iter().copied().find(|x| !x.is_nan());
    let mut last = first.unwrap_or(f64::NAN);
    series
        .iter()
        .map(|&x| {
            if !x.is_nan() {
                last = x;
            }
            last
        })
        .collect()
}

/// Cuts one window out of the patient record with LOCF imputation.
pub fn materialize(plan: &InstancePlan, patient: &PatientRecord, n_cols: usize) -> TimeSeriesInstance {
    debug_assert_eq!(plan.patient_id, patient.id);
    let start = (plan.interval.start * 60.0).round() as usize;
    let mut data = vec![0.0; N_CHANNELS * n_cols];
    let n_total = patient.n_minutes();
    for v in 0..N_VITALS {
        let ch = &patient.channels[v];
        // Value carried into the window: last observation before it, else
        // the first observation anywhere in the stay.
        let carried = ch[..start.min(n_total)]
            .iter()
            .rev()
            .find(|x| !x.is_nan())
            .or_else(|| ch[start.min(n_total)..].iter().find(|x| !x.is_nan()))
            .map(|&x| x as f64)
            .unwrap_or(NOMINAL[v]);
        let mut last = carried;
        let row = &mut data[v * n_cols..(v + 1) * n_cols];
        for (j, out) in row.iter_mut().enumerate() {
            let m = start + j;
            if m < n_total && !ch[m].is_nan() {
                last = ch[m] as f64;
            }
            *out = last;
        }
    }
    let miss = &mut data[MISSING_ROW * n_cols..];
    for (j, out) in miss.iter_mut().enumerate() {
        let m = start + j;
        *out = if m >= n_total || patient.is_missing(m) { 1.0 } else { 0.0 };
    }
    TimeSeriesInstance {
        patient_id: plan.patient_id,
        interval: plan.interval,
        label: plan.label,
        n_cols,
        data,
    }
}

pub fn build_instances(cohort: &[PatientRecord], config: &InstanceConfig) -> Result<Vec<TimeSeriesInstance>> {
    let n_cols = config.n_columns();
    Ok(plan_instances(cohort, config)?
        .iter()
        .map(|plan| materialize(plan, &cohort[plan.patient_index], n_cols))
        .collect())
}

/// Per-vital `(min, max)` bounds mapping each channel onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScaler {
    pub bounds: [(f64, f64); N_VITALS],
}

impl ChannelScaler {
    pub fn new(bounds: [(f64, f64); N_VITALS]) -> Result<Self> {
        for (channel, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) {
                return Err(Error::Scaler { channel, value: lo });
            }
        }
        Ok(Self { bounds })
    }

    /// The clamp ranges of the simulator (HR 41–239 bpm, ...).
    pub fn physiological() -> Self {
        Self { bounds: VITAL_RANGES }
    }

    #[inline]
    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        let (lo, hi) = self.bounds[channel];
        (2.0 * x - lo - hi) / (hi - lo)
    }
}

/// Running per-channel extremes; merging partial fits equals one global fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRange {
    pub bounds: [(f64, f64); N_VITALS],
}

impl Default for ChannelRange {
    fn default() -> Self {
        Self {
            bounds: [(f64::INFINITY, f64::NEG_INFINITY); N_VITALS],
        }
    }
}

impl ChannelRange {
    pub fn observe(&mut self, instance: &TimeSeriesInstance) {
        for v in 0..N_VITALS {
            for &x in instance.row(v) {
                let b = &mut self.bounds[v];
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
        }
    }

    pub fn merge(&mut self, other: &ChannelRange) {
        for (a, b) in self.bounds.iter_mut().zip(&other.bounds) {
            a.0 = a.0.min(b.0);
            a.1 = a.1.max(b.1);
        }
    }

    pub fn to_scaler(&self) -> Result<ChannelScaler> {
        ChannelScaler::new(self.bounds)
    }
}

pub fn fit_scaler<'a, I>(instances: I) -> Result<ChannelScaler>
where
    I: IntoIterator<Item = &'a TimeSeriesInstance>,
{
    let mut range = ChannelRange::default();
    let mut any = false;
    for inst in instances {
        range.observe(inst);
        any = true;
    }
    if !any {
        return Err(Error::EmptyInput("no instances to fit a scaler on".into()));
    }
    range.to_scaler()
}

/// Maps every vital row through the scaler; the missingness row is untouched.
pub fn rescale(instance: &TimeSeriesInstance, scaler: &ChannelScaler) -> TimeSeriesInstance {
    let mut out = instance.clone();
    for v in 0..N_VITALS {
        for x in out.row_mut(v) {
            *x = scaler.apply(v, *x);
        }
    }
    out
}

/// Piecewise aggregate approximation: per-bin means of every row. The
/// missingness row becomes the missing fraction of each bin.
pub fn paa(instance: &TimeSeriesInstance, bin_minutes: usize) -> Result<TimeSeriesInstance> {
    if bin_minutes == 0 || instance.n_cols % bin_minutes != 0 {
        return Err(Error::Argument(format!(
            "{} columns not divisible into bins of {bin_minutes}",
            instance.n_cols
        )));
    }
    let n_bins = instance.n_cols / bin_minutes;
    let mut data = Vec::with_capacity(N_CHANNELS * n_bins);
    let denom = bin_minutes as f64;
    for c in 0..N_CHANNELS {
        for chunk in instance.row(c).chunks_exact(bin_minutes) {
            data.push(chunk.iter().sum::<f64>() / denom);
        }
    }
    Ok(TimeSeriesInstance {
        patient_id: instance.patient_id,
        interval: instance.interval,
        label: instance.label,
        n_cols: n_bins,
        data,
    })
}

/// Keeps every case and `ratio × cases` controls drawn without replacement.
/// Returns the retained indices in ascending order.
pub fn undersample_indices(labels: &[u8], ratio: usize, seed: u64) -> Result<Vec<usize>> {
    if ratio < 1 {
        return Err(Error::Argument("undersampling ratio must be >= 1".into()));
    }
    let cases: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if cases.is_empty() {
        return Err(Error::EmptyClass("no case instances to undersample against".into()));
    }
    let controls: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    let keep = (ratio * cases.len()).min(controls.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, controls.len(), keep)
        .into_iter()
        .map(|j| controls[j])
        .collect();
    chosen.extend(cases);
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn undersample<I: Labeled + Clone>(items: &[I], ratio: usize, seed: u64) -> Result<Vec<I>> {
    let labels: Vec<u8> = items.iter().map(Labeled::label).collect();
    Ok(undersample_indices(&labels, ratio, seed)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohortsim::Cause;
    use crate::testutil::synthetic_patient;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64, d: f64) -> Interval {
        Interval {
            start: s,
            end: e,
            shift_hours: d,
        }
    }

    /// Direct evaluation of the window-set definition, used as an oracle.
    fn windows_oracle(t0: f64, t_end: f64, w: f64, shifts: &[f64]) -> Vec<Interval> {
        let mut out = vec![];
        for &d in shifts {
            if t_end < t0 + d {
                continue;
            }
            for k in 1..1000 {
                let s = t0 + d + (k as f64 - 1.0) * w;
                if s >= t_end {
                    break;
                }
                out.push(iv(s, (t0 + d + k as f64 * w).min(t_end), d));
            }
        }
        out
    }

    #[test]
    fn partition_examples() {
        let got = partition_windows(0.0, 48.0, 24.0, &[0.0, 8.0, 16.0]).unwrap();
        assert_eq!(
            got,
            vec![
                iv(0.0, 24.0, 0.0),
                iv(24.0, 48.0, 0.0),
                iv(8.0, 32.0, 8.0),
                iv(32.0, 48.0, 8.0),
                iv(16.0, 40.0, 16.0),
                iv(40.0, 48.0, 16.0),
            ]
        );
        assert_eq!(got, windows_oracle(0.0, 48.0, 24.0, &[0.0, 8.0, 16.0]));
        assert_eq!(partition_windows(0.0, 24.0, 24.0, &[0.0]).unwrap(), vec![iv(0.0, 24.0, 0.0)]);
        assert_eq!(
            partition_windows(0.0, 20.0, 24.0, &[0.0, 8.0, 16.0]).unwrap(),
            vec![iv(0.0, 20.0, 0.0), iv(8.0, 20.0, 8.0), iv(16.0, 20.0, 16.0)]
        );
    }

    #[test]
    fn partition_errors() {
        assert!(partition_windows(0.0, 10.0, 0.0, &[0.0]).is_err());
        assert!(partition_windows(5.0, 5.0, 24.0, &[0.0]).is_err());
        assert!(partition_windows(0.0, 50.0, 24.0, &[24.0]).is_err());
    }

    proptest! {
        #[test]
        fn partition_matches_oracle(t_end in 1.0f64..400.0, w in prop::sample::select(vec![24.0, 48.0])) {
            let shifts = [0.0, 8.0, 16.0];
            prop_assert_eq!(
                partition_windows(0.0, t_end, w, &shifts).unwrap(),
                windows_oracle(0.0, t_end, w, &shifts)
            );
        }

        #[test]
        fn family_zero_covers_span(t_end in 1.0f64..400.0) {
            let ws = partition_windows(0.0, t_end, 24.0, &[0.0]).unwrap();
            prop_assert_eq!(ws[0].start, 0.0);
            prop_assert!((ws.last().unwrap().end - t_end).abs() < 1e-12);
            for pair in ws.windows(2) {
                prop_assert_eq!(pair[0].end, pair[1].start);
            }
        }

        #[test]
        fn locf_is_idempotent(xs in prop::collection::vec(prop::option::weighted(0.7, -100.0f64..100.0), 1..200)) {
            let raw: Vec<f64> = xs.iter().map(|x| x.unwrap_or(f64::NAN)).collect();
            let once = locf(&raw);
            let twice = locf(&once);
            prop_assert_eq!(
                once.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                twice.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn never_infected_are_controls() {
        let cohort = vec![synthetic_patient(0, 48.0, None, false)];
        let plans = plan_instances(&cohort, &InstanceConfig::default()).unwrap();
        // Full windows only: [0,24], [24,48], [8,32], [16,40].
        assert_eq!(plans.len(), 4);
        assert!(plans.iter().all(|p| p.label == 0));
    }

    #[test]
    fn onset_window_and_predecessor_are_cases() {
        let cohort = vec![synthetic_patient(0, 60.0, Some(30.0), false)];
        let plans = plan_instances(&cohort, &InstanceConfig::default()).unwrap();
        let fam0: Vec<_> = plans.iter().filter(|p| p.interval.shift_hours == 0.0).collect();
        assert_eq!(fam0.len(), 2);
        assert_eq!((fam0[0].interval.start, fam0[0].label), (0.0, 1));
        assert_eq!((fam0[1].interval.start, fam0[1].label), (24.0, 1));
        // Grid 8: onset in [8,32] (k=0) -> later windows dropped.
        let fam8: Vec<_> = plans.iter().filter(|p| p.interval.shift_hours == 8.0).collect();
        assert_eq!(fam8.len(), 1);
        assert_eq!(fam8[0].label, 1);
    }

    #[test]
    fn adjacent_versus_all_preceding() {
        let cohort = vec![synthetic_patient(0, 200.0, Some(130.0), false)];
        let adj = plan_instances(&cohort, &InstanceConfig::default()).unwrap();
        let fam0: Vec<u8> = adj.iter().filter(|p| p.interval.shift_hours == 0.0).map(|p| p.label).collect();
        // Windows k = 0..=5, onset window k = 5.
        assert_eq!(fam0, vec![0, 0, 0, 0, 1, 1]);
        let all = plan_instances(
            &cohort,
            &InstanceConfig {
                label_rule: LabelRule::AllPreceding,
                ..InstanceConfig::default()
            },
        )
        .unwrap();
        assert!(all.iter().all(|p| p.label == 1));
    }

    #[test]
    fn death_trims_last_day() {
        let cohort = vec![synthetic_patient(0, 100.0, None, true)];
        let cfg = InstanceConfig::default();
        let inst = build_instances(&cohort, &cfg).unwrap();
        assert!(!inst.is_empty());
        for i in &inst {
            assert!(i.interval.end <= 76.0);
            assert_eq!(i.n_cols, 1440);
            assert_eq!(i.data.len(), 6 * 1440);
        }
    }

    #[test]
    fn inconsistent_infection_is_rejected() {
        let mut p = synthetic_patient(0, 60.0, Some(30.0), false);
        p.cause = Cause::DischargeOrDeath;
        assert!(matches!(
            plan_instances(&[p], &InstanceConfig::default()),
            Err(Error::DataConsistency(_))
        ));
    }

    #[test]
    fn materialize_imputes_and_flags() {
        let mut p = synthetic_patient(3, 48.0, None, false);
        for v in 0..N_VITALS {
            for m in 0..10 {
                p.channels[v][m] = f32::NAN;
            }
            p.channels[v][100] = f32::NAN;
        }
        let plan = InstancePlan {
            patient_id: 3,
            patient_index: 0,
            interval: iv(0.0, 24.0, 0.0),
            label: 0,
        };
        let inst = materialize(&plan, &p, 1440);
        // Leading gap back-filled with the first observation (minute 10).
        assert_eq!(inst.row(0)[0], 10.0);
        assert_eq!(inst.row(0)[9], 10.0);
        assert_eq!(inst.row(0)[100], 99.0);
        assert_eq!(inst.row(MISSING_ROW)[5], 1.0);
        assert_eq!(inst.row(MISSING_ROW)[100], 1.0);
        assert_eq!(inst.row(MISSING_ROW)[50], 0.0);
        assert!(inst.data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rescale_maps_bounds() {
        let mut b = VITAL_RANGES;
        b[0] = (41.0, 239.0);
        let s = ChannelScaler::new(b).unwrap();
        assert_eq!(s.apply(0, 41.0), -1.0);
        assert_eq!(s.apply(0, 140.0), 0.0);
        assert_eq!(s.apply(0, 239.0), 1.0);
        b[2] = (5.0, 5.0);
        assert!(matches!(ChannelScaler::new(b), Err(Error::Scaler { channel: 2, .. })));
    }

    #[test]
    fn rescale_keeps_missing_row() {
        let cohort = vec![synthetic_patient(0, 30.0, None, false)];
        let inst = build_instances(&cohort, &InstanceConfig::default()).unwrap();
        let scaler = fit_scaler(&inst).unwrap();
        let r = rescale(&inst[0], &scaler);
        assert_eq!(r.row(MISSING_ROW), inst[0].row(MISSING_ROW));
        for v in 0..N_VITALS {
            assert!(r.row(v).iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    fn flat(n_cols: usize, f: impl Fn(usize, usize) -> f64) -> TimeSeriesInstance {
        TimeSeriesInstance {
            patient_id: 0,
            interval: iv(0.0, 24.0, 0.0),
            label: 0,
            n_cols,
            data: (0..N_CHANNELS * n_cols).map(|i| f(i / n_cols, i % n_cols)).collect(),
        }
    }

    #[test]
    fn paa_examples() {
        let c = paa(&flat(1440, |_, _| 3.25), 9).unwrap();
        assert_eq!(c.n_cols, 160);
        assert!(c.data.iter().all(|&x| x == 3.25));

        let ramp = paa(&flat(1440, |_, j| j as f64), 9).unwrap();
        for k in 0..160 {
            assert_eq!(ramp.row(0)[k], 9.0 * k as f64 + 4.0);
        }

        let miss = paa(&flat(1440, |c, j| if c == MISSING_ROW && j < 9 { 1.0 } else { 0.0 }), 9).unwrap();
        assert_eq!(miss.row(MISSING_ROW)[0], 1.0);
        assert!(miss.row(MISSING_ROW)[1..].iter().all(|&x| x == 0.0));

        assert!(paa(&flat(1440, |_, _| 0.0), 7).is_err());
    }

    #[derive(Clone)]
    struct L(u8);
    impl Labeled for L {
        fn label(&self) -> u8 {
            self.0
        }
    }

    #[test]
    fn undersample_examples() {
        let mut items: Vec<L> = (0..200).map(|_| L(0)).collect();
        items.extend((0..10).map(|_| L(1)));
        let out = undersample(&items, 8, 1).unwrap();
        assert_eq!(out.iter().filter(|x| x.0 == 1).count(), 10);
        assert_eq!(out.iter().filter(|x| x.0 == 0).count(), 80);

        let mut few: Vec<L> = (0..50).map(|_| L(0)).collect();
        few.extend((0..10).map(|_| L(1)));
        assert_eq!(undersample(&few, 8, 1).unwrap().len(), 60);

        let labels: Vec<u8> = items.iter().map(|x| x.0).collect();
        assert_eq!(
            undersample_indices(&labels, 8, 42).unwrap(),
            undersample_indices(&labels, 8, 42).unwrap()
        );
        assert!(matches!(undersample_indices(&[0, 0, 0], 8, 1), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn no_case_for_uninfected_patients() {
        let cfg = crate::cohortsim::SimConfig {
            n_patients: 30,
            mean_los_hours: 120.0,
            icuai_daily_rate: 0.2,
            seed: 21,
            ..Default::default()
        };
        let cohort = crate::cohortsim::generate_cohort(&cfg).unwrap();
        let plans = plan_instances(&cohort, &InstanceConfig::default()).unwrap();
        for p in &plans {
            if p.label == 1 {
                assert_eq!(cohort[p.patient_index].cause, Cause::Infection);
            }
            if let Some(on) = cohort[p.patient_index].infection_time {
                assert!(p.interval.start <= on);
            }
        }
    }
}
