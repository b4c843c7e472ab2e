//! Delimited tables and static SVG plots for evaluation reports.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use plotters::prelude::*;

use crate::error::{Error, Result};

/// Writes a tab-separated table with a header row.
pub fn write_tsv<S: Display>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::invalid(format!(
                "row has {} cells, header has {}",
                r.len(),
                header.len()
            )));
        }
        let cells: Vec<String> = r.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn plot_err(e: impl Display) -> Error {
    Error::Io(std::io::Error::other(format!("plot rendering failed: {e}")))
}

const PALETTE: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

fn bounds<'a>(it: impl Iterator<Item = &'a (f64, f64)>) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in it {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

/// Line plot of one or more named series.
pub fn plot_lines(path: &Path, title: &str, x_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let (x0, x1, y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter()));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), &color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Overlaid histograms (as step outlines) sharing one set of bins.
pub fn plot_histograms(path: &Path, title: &str, x_label: &str, series: &[(&str, Vec<f64>)], bins: usize) -> Result<()> {
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let lines: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(name, vals)| {
            let mut counts = vec![0usize; bins];
            for v in vals.iter().filter(|v| v.is_finite()) {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let mut pts = vec![(lo, 0.0)];
            for (b, &c) in counts.iter().enumerate() {
                let left = lo + b as f64 * width;
                pts.push((left, c as f64));
                pts.push((left + width, c as f64));
            }
            pts.push((hi, 0.0));
            (*name, pts)
        })
        .collect();
    plot_lines(path, title, x_label, &lines)
}

/// Grey-scale rendering of a 2D array, downsampled by striding to at most
/// `max_side` pixels per axis.
pub fn plot_image(path: &Path, img: &Array2<f64>, max_side: usize) -> Result<()> {
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("cannot plot an empty image"));
    }
    let stride = h.max(w).div_ceil(max_side.max(1));
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = 4u32;
    let root = SVGBackend::new(path, (ow as u32 * px, oh as u32 * px)).into_drawing_area();
    for y in 0..oh {
        for x in 0..ow {
            let v = img[[y * stride, x * stride]];
            let g = (((v - lo) / span).clamp(0.0, 1.0) * 255.0) as u8;
            let (x0, y0) = (x as i32 * px as i32, y as i32 * px as i32);
            root.draw(&Rectangle::new(
                [(x0, y0), (x0 + px as i32, y0 + px as i32)],
                RGBColor(g, g, g).filled(),
            ))
            .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
