//! SMOE-scale saliency over the CNN's activated feature maps, the most
//! salient sub-window of an instance and its clinical-condition class.

mod clinical;
mod cluster;
mod stats;

pub use clinical::{
    classify_conditions, Classification, ConditionClass, CONDITION_NAMES, DESATURATION_SAO2, HYPERVENTILATION_RR,
    HYPOTENSION_MAP, N_CLASSES, TACHYCARDIA_HR,
};
pub use cluster::{cluster_report, ClusterConfig, ClusterRecord, ClusterReport, DayClusters, DayModels};
pub use stats::{
    digamma, estimate_gamma_shape, gamma_fit_diagnostic, gamma_shape_initial, kolmogorov_q, ks_one_sample,
    ks_two_sample, trigamma, GammaFitDiagnostic, KsResult,
};

use std::io::Write;

use crate::convnet::Network;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to activations before taking logs.
pub const EPS: f64 = 1e-7;

/// SMOE scale of a `depth × len` map laid out `[depth][position]`: per
/// position, `m · mean_j ln(m / max(χ_j, EPS))` with `m` the depth mean.
/// Constant columns, all-zero ones included, give exactly 0.
pub fn smoe_scale<T: Scalar>(map: &[T], depth: usize) -> Result<Vec<f64>> {
    if depth < 2 {
        return Err(Error::Contract(format!("SMOE needs depth >= 2, got {depth}")));
    }
    if map.is_empty() || map.len() % depth != 0 {
        return Err(Error::Contract(format!("{} values do not form {depth} rows", map.len())));
    }
    let len = map.len() / depth;
    let d = depth as f64;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut sum = 0.0;
        for j in 0..depth {
            let x = map[j * len + i].as_f64();
            if !(x >= 0.0) {
                return Err(Error::Contract(format!("activation {x} at depth {j}, position {i} is not >= 0")));
            }
            sum += x;
        }
        let mean = sum / d;
        let first = map[i].as_f64();
        if mean == 0.0 || (0..depth).all(|j| map[j * len + i].as_f64() == first) {
            out.push(0.0);
            continue;
        }
        let logs: f64 = (0..depth).map(|j| (mean / map[j * len + i].as_f64().max(EPS)).ln()).sum();
        out.push(mean * logs / d);
    }
    Ok(out)
}

/// Default layer weights `1, 2, ..., n`.
pub fn default_layer_weights(n_layers: usize) -> Vec<f64> {
    (1..=n_layers).map(|l| l as f64).collect()
}

fn min_max(map: &[f64]) -> Vec<f64> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        map.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; map.len()]
    }
}

/// Min-max normalizes each layer, repeats every value to cover `out_len`
/// positions and takes the weighted mean across layers.
pub fn combine_saliency(layers: &[Vec<f64>], weights: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if layers.is_empty() || layers.len() != weights.len() {
        return Err(Error::Contract(format!("{} layer maps but {} weights", layers.len(), weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Argument("layer weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Argument("layer weights are all zero".into()));
    }
    let mut out = vec![0.0; out_len];
    for (l, (map, &w)) in layers.iter().zip(weights).enumerate() {
        if map.is_empty() || out_len % map.len() != 0 {
            return Err(Error::Contract(format!(
                "layer {l} has {} positions, not a divisor of {out_len}",
                map.len()
            )));
        }
        if map.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("layer {l} has non-finite saliency")));
        }
        let factor = out_len / map.len();
        for (i, v) in min_max(map).into_iter().enumerate() {
            for o in &mut out[i * factor..(i + 1) * factor] {
                *o += w * v;
            }
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Per-layer SMOE vectors and their combination over input positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub layers: Vec<Vec<f64>>,
    pub combined: Vec<f64>,
}

/// Forward pass with the activation cache, SMOE scale of every block's
/// post-ReLU map and the weighted combination. Returns the score as well.
pub fn saliency_map<T: Scalar>(net: &Network<T>, x: &[T], weights: &[f64]) -> Result<(f64, SaliencyMap)> {
    let (score, acts) = net.activations(x)?;
    let depth = net.arch().filters;
    let layers = acts.iter().map(|a| smoe_scale(a, depth)).collect::<Result<Vec<_>>>()?;
    let combined = combine_saliency(&layers, weights, net.arch().input_length)?;
    Ok((score.as_f64(), SaliencyMap { layers, combined }))
}

/// A run of positions of a combined map, with its span in hours from the
/// instance start.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SalientWindow {
    pub start: usize,
    pub len: usize,
    pub start_hours: f64,
    pub end_hours: f64,
}

impl SalientWindow {
    pub fn contains_position(&self, p: usize) -> bool {
        p >= self.start && p < self.start + self.len
    }
}

/// Number of positions covering `width_hours`, rounded up.
pub fn window_positions(width_hours: f64, minutes_per_position: f64) -> usize {
    let exact = width_hours * 60.0 / minutes_per_position;
    // Guard against 8.000000001-style rounding pushing the ceiling up.
    (exact - 1e-9).ceil().max(1.0) as usize
}

/// The contiguous window of `width_hours` with the largest saliency sum;
/// the earliest one on ties.
pub fn extract_salient_window(map: &[f64], width_hours: f64, minutes_per_position: f64) -> Result<SalientWindow> {
    if !(width_hours > 0.0) || !(minutes_per_position > 0.0) {
        return Err(Error::Argument("window width and resolution must be > 0".into()));
    }
    let len = window_positions(width_hours, minutes_per_position);
    if len > map.len() {
        return Err(Error::Argument(format!(
            "a {width_hours} h window needs {len} positions, map has {}",
            map.len()
        )));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for start in 0..=map.len() - len {
        // Summed afresh so equal windows compare equal.
        let s: f64 = map[start..start + len].iter().sum();
        if s > best.0 {
            best = (s, start);
        }
    }
    let start = best.1;
    let hours = |p: usize| p as f64 * minutes_per_position / 60.0;
    Ok(SalientWindow {
        start,
        len,
        start_hours: hours(start),
        end_hours: hours(start + len),
    })
}

/// CSV with one row per input position: the covering value of every layer's
/// SMOE vector, the combined value and whether the position is in `window`.
pub fn write_saliency_csv<W: Write>(w: W, map: &SaliencyMap, window: &SalientWindow) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["position".to_string()];
    header.extend((1..=map.layers.len()).map(|l| format!("layer_{l}")));
    header.push("combined".into());
    header.push("in_window".into());
    out.write_record(&header)?;
    let n = map.combined.len();
    for p in 0..n {
        let mut rec = vec![p.to_string()];
        for layer in &map.layers {
            rec.push(layer[p * layer.len() / n].to_string());
        }
        rec.push(map.combined[p].to_string());
        rec.push((window.contains_position(p) as u8).to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
