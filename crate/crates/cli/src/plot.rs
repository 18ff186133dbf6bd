//! SVG renderings of the CSV artifacts.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};

fn draw_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Data(format!("plot: {e:?}"))
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, lo, hi)` error bars.
    pub bars: Vec<(f64, f64, f64)>,
}

fn bounds(series: &[Series], hline: Option<f64>) -> ((f64, f64), (f64, f64)) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    let mut take = |x: f64, y: f64| {
        xs = (xs.0.min(x), xs.1.max(x));
        ys = (ys.0.min(y), ys.1.max(y));
    };
    for s in series {
        s.points.iter().for_each(|&(x, y)| take(x, y));
        s.bars.iter().for_each(|&(x, lo, hi)| {
            take(x, lo);
            take(x, hi);
        });
    }
    if let Some(h) = hline {
        ys = (ys.0.min(h), ys.1.max(h));
    }
    if !xs.0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |(lo, hi): (f64, f64)| {
        let d = if hi > lo { (hi - lo) * 0.05 } else { 0.5 };
        (lo - d, hi + d)
    };
    (pad(xs), pad(ys))
}

/// Lines with optional error bars and a dashed horizontal reference line.
pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series], hline: Option<f64>) -> Result<()> {
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let ((x0, x1), (y0, y1)) = bounds(series, hline);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(draw_err)?;
    if let Some(h) = hline {
        chart
            .draw_series(DashedLineSeries::new(vec![(x0, h), (x1, h)], 6, 4, BLACK.stroke_width(1)))
            .map_err(draw_err)?;
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(s.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(s.bars.iter().map(|&(x, lo, hi)| {
                ErrorBar::new_vertical(x, lo, (lo + hi) / 2.0, hi, color.stroke_width(1), 6)
            }))
            .map_err(draw_err)?;
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn heat_color(v: f64, max_abs: f64) -> RGBColor {
    let t = if max_abs > 0.0 { (v / max_abs).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |c: u8, t: f64| (255.0 - (255.0 - c as f64) * t) as u8;
    if t >= 0.0 {
        RGBColor(fade(178, t), fade(24, t), fade(43, t))
    } else {
        RGBColor(fade(33, -t), fade(102, -t), fade(172, -t))
    }
}

/// Diverging heat map, rows top to bottom; empty cells are grey.
pub fn heatmap(path: &Path, title: &str, rows: &[String], cols: &[f64], values: &[Vec<Option<f64>>]) -> Result<()> {
    let root = SVGBackend::new(path, (900, 120 + 40 * rows.len() as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let max_abs = values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let n_rows = rows.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title} (|max| = {max_abs:.3})"), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(110)
        .build_cartesian_2d(0..cols.len(), 0..n_rows)
        .map_err(draw_err)?;
    let labels: Vec<String> = rows.to_vec();
    let cols_owned: Vec<f64> = cols.to_vec();
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("landmark (h)")
        .x_label_formatter(&|i| cols_owned.get(*i).map(|t| format!("{t}")).unwrap_or_default())
        .y_label_formatter(&|i| {
            n_rows
                .checked_sub(i + 1)
                .and_then(|r| labels.get(r))
                .cloned()
                .unwrap_or_default()
        })
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(values.iter().enumerate().flat_map(|(r, row)| {
            row.iter().enumerate().map(move |(c, v)| {
                let y = n_rows - 1 - r;
                let fill = match v {
                    Some(v) => heat_color(*v, max_abs),
                    None => RGBColor(200, 200, 200),
                };
                Rectangle::new([(c, y), (c + 1, y + 1)], fill.filled())
            })
        }))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}
