use std::io::Write;

use rayon::prelude::*;

use crate::convnet::{network_input, Network};
use crate::error::{Error, Result};
use crate::instances::{paa, ChannelScaler, TimeSeriesInstance};
use crate::scalar::Scalar;

use super::{
    classify_conditions, default_layer_weights, extract_salient_window, ks_two_sample, saliency_map, Classification,
    KsResult, SalientWindow, N_CLASSES,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// `None` uses [`default_layer_weights`].
    pub layer_weights: Option<Vec<f64>>,
    pub window_hours: f64,
    pub bin_minutes: usize,
    pub alpha: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            layer_weights: None,
            window_hours: 8.0,
            bin_minutes: 9,
            alpha: 0.05,
        }
    }
}

/// The cross-validated networks of one landmark day and their held-out
/// raw instances, each tagged with the index of the model that did not
/// see it in training.
#[derive(Debug, Clone)]
pub struct DayModels<T> {
    pub day: u32,
    pub models: Vec<(Network<T>, ChannelScaler)>,
    pub test: Vec<(usize, TimeSeriesInstance)>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClusterRecord {
    pub patient_id: u32,
    pub instance_start: f64,
    pub label: u8,
    pub score: f64,
    pub window: SalientWindow,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DayClusters {
    pub day: u32,
    /// `histogram[label][class]`.
    pub histogram: [[usize; N_CLASSES]; 2],
    /// Infected versus non-infected class distributions; `None` when a
    /// label has no instances.
    pub ks: Option<KsResult>,
    pub rejects: Option<bool>,
    pub imputed_only: usize,
    #[serde(skip)]
    pub records: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClusterReport {
    pub alpha: f64,
    pub days: Vec<DayClusters>,
}

fn process<T: Scalar>(
    net: &Network<T>,
    scaler: &ChannelScaler,
    raw: &TimeSeriesInstance,
    weights: &[f64],
    config: &ClusterConfig,
) -> Result<ClusterRecord> {
    let reduced = paa(raw, config.bin_minutes)?;
    let x = network_input::<T>(&reduced, scaler);
    let (score, map) = saliency_map(net, &x, weights)?;
    let window = extract_salient_window(&map.combined, config.window_hours, config.bin_minutes as f64)?;
    Ok(ClusterRecord {
        patient_id: raw.patient_id,
        instance_start: raw.interval.start,
        label: raw.label,
        score,
        window,
        classification: classify_conditions(raw, &window)?,
    })
}

/// Saliency window and condition class of every held-out instance, class
/// histograms by label and a KS test between the labels, per day.
pub fn cluster_report<T: Scalar>(days: &[DayModels<T>], config: &ClusterConfig) -> Result<ClusterReport> {
    let mut out = Vec::with_capacity(days.len());
    for day in days {
        let first = day
            .models
            .first()
            .ok_or_else(|| Error::config(&format!("cluster.day{}", day.day), "no trained model for this day"))?;
        let n_blocks = first.0.arch().n_blocks;
        let weights = match &config.layer_weights {
            Some(w) => w.clone(),
            None => default_layer_weights(n_blocks),
        };
        let records = day
            .test
            .par_iter()
            .map(|(m, raw)| {
                let (net, scaler) = day.models.get(*m).ok_or_else(|| {
                    Error::Argument(format!("instance refers to model {m} of {}", day.models.len()))
                })?;
                process(net, scaler, raw, &weights, config)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut histogram = [[0usize; N_CLASSES]; 2];
        let mut samples: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
        for r in &records {
            let l = (r.label == 1) as usize;
            histogram[l][r.classification.class.id() as usize] += 1;
            samples[l].push(r.classification.class.id());
        }
        let ks = ks_two_sample(&samples[1], &samples[0]).ok();
        out.push(DayClusters {
            day: day.day,
            histogram,
            ks,
            rejects: ks.map(|k| k.p_value < config.alpha),
            imputed_only: records.iter().filter(|r| r.classification.imputed_only).count(),
            records,
        });
    }
    Ok(ClusterReport {
        alpha: config.alpha,
        days: out,
    })
}

impl ClusterReport {
    pub fn day(&self, day: u32) -> Option<&DayClusters> {
        self.days.iter().find(|d| d.day == day)
    }

    /// `day,label,class,count` for every cell, empty ones included.
    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["day", "label", "class", "count"])?;
        for d in &self.days {
            for (label, row) in d.histogram.iter().enumerate() {
                for (class, count) in row.iter().enumerate() {
                    out.write_record(&[d.day.to_string(), label.to_string(), class.to_string(), count.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_records_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "day",
            "patient_id",
            "instance_start",
            "label",
            "score",
            "window_start_hours",
            "window_end_hours",
            "class",
            "mean_hr",
            "mean_map",
            "mean_sao2",
            "mean_rr",
            "imputed_only",
        ])?;
        for d in &self.days {
            for r in &d.records {
                let c = &r.classification;
                out.write_record(&[
                    d.day.to_string(),
                    r.patient_id.to_string(),
                    r.instance_start.to_string(),
                    r.label.to_string(),
                    r.score.to_string(),
                    r.window.start_hours.to_string(),
                    r.window.end_hours.to_string(),
                    c.class.id().to_string(),
                    c.mean_hr.to_string(),
                    c.mean_map.to_string(),
                    c.mean_sao2.to_string(),
                    c.mean_rr.to_string(),
                    (c.imputed_only as u8).to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Format(e.to_string()))
    }
}
