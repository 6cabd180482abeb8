//! PNG renderings of run and sweep artifacts. Charts carry no text; file
//! names say what they show.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use log::warn;
use plotters::prelude::*;

use crate::contrast::{read_contrast_table, ContrastReport};
use crate::error::{Error, Result};
use crate::experiment::SWEEP_TABLE;
use crate::grid::Grid;
use crate::io::{read_real_field, read_text};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotSummary {
    pub written: Vec<PathBuf>,
    pub warnings: usize,
}

impl PlotSummary {
    fn skip(&mut self, what: &str, why: impl std::fmt::Display) {
        warn!("skipping {what}: {why}");
        self.warnings += 1;
    }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("plot: {e}"))
}

/// Blue-white-red diverging map on `[lo, hi]`.
fn colour(v: f64, lo: f64, hi: f64) -> Rgb<u8> {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (s, s, 1.0)
    } else {
        let s = (1.0 - t) / 0.5;
        (1.0, s, s)
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

const PANEL_SCALE: u32 = 3;

fn blit(img: &mut RgbImage, grid: &Grid, values: &[f64], range: (f64, f64), ox: u32, oy: u32) {
    for k in 0..grid.len() {
        let (i, j) = grid.coords(k);
        // y grows upward in the grid, downward in the image
        let px = ox + i as u32 * PANEL_SCALE;
        let py = oy + (grid.ly - 1 - j) as u32 * PANEL_SCALE;
        let c = colour(values[k], range.0, range.1);
        for dy in 0..PANEL_SCALE {
            for dx in 0..PANEL_SCALE {
                img.put_pixel(px + dx, py + dy, c);
            }
        }
    }
}

fn range_of<'a>(fields: impl IntoIterator<Item = &'a [f64]>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for f in fields {
        for v in f.iter().filter(|v| v.is_finite()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    (lo, hi)
}

/// Writes one field as a colour image.
pub fn render_field(path: &Path, grid: &Grid, values: &[f64]) -> Result<()> {
    render_panels(path, grid, &[Some(values)], 1)
}

/// Panels in row-major order on a common colour scale; `None` leaves a gap.
pub fn render_panels(path: &Path, grid: &Grid, panels: &[Option<&[f64]>], cols: usize) -> Result<()> {
    let rows = panels.len().div_ceil(cols);
    let (w, h) = (grid.lx as u32 * PANEL_SCALE, grid.ly as u32 * PANEL_SCALE);
    let gap = 4;
    let mut img = RgbImage::from_pixel(cols as u32 * (w + gap) - gap, rows as u32 * (h + gap) - gap, Rgb([40, 40, 40]));
    let range = range_of(panels.iter().flatten().copied());
    for (n, p) in panels.iter().enumerate() {
        if let Some(v) = p {
            blit(&mut img, grid, v, range, (n % cols) as u32 * (w + gap), (n / cols) as u32 * (h + gap));
        }
    }
    img.save(path).map_err(plot_err)
}

fn parse_columns(text: &str, want: usize) -> Result<Vec<Vec<f64>>> {
    let mut cols = vec![Vec::new(); want];
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let vals: Vec<f64> = line.split(',').map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| Error::Format(e.to_string()))?;
        if vals.len() < want {
            return Err(Error::Format(format!("expected {want} columns in '{line}'")));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    Ok(cols)
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = range_of([v]);
    if !(hi > lo) {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

const CHART: (u32, u32) = (640, 480);

type Area<'a> = DrawingArea<BitMapBackend<'a>, plotters::coord::Shift>;

/// Draws into an RGB buffer and encodes it as PNG.
fn chart_png(path: &Path, draw: impl FnOnce(&Area) -> Result<()>) -> Result<()> {
    let mut buf = vec![0u8; (CHART.0 * CHART.1 * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, CHART).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        draw(&root)?;
        root.present().map_err(plot_err)?;
    }
    RgbImage::from_raw(CHART.0, CHART.1, buf).expect("buffer size").save(path).map_err(plot_err)
}

/// Ensemble ESF (black) with the fitted edge (red dashes).
pub fn render_esf(path: &Path, csv: &str) -> Result<()> {
    let c = parse_columns(csv, 3)?;
    let (x, esf, fit) = (&c[0], &c[1], &c[2]);
    if x.len() < 2 {
        return Err(Error::Format("ESF table has fewer than two rows".into()));
    }
    let all: Vec<f64> = esf.iter().chain(fit.iter()).copied().collect();
    let (ylo, yhi) = bounds(&all);
    chart_png(path, |root| {
        let mut chart = ChartBuilder::on(root)
            .margin(20)
            .build_cartesian_2d(x[0]..x[x.len() - 1], ylo..yhi)
            .map_err(plot_err)?;
        chart.configure_mesh().disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0).draw().map_err(plot_err)?;
        chart.draw_series(LineSeries::new(x.iter().copied().zip(esf.iter().copied()), BLACK.stroke_width(2))).map_err(plot_err)?;
        chart
            .draw_series(DashedLineSeries::new(x.iter().copied().zip(fit.iter().copied()), 8, 5, RED.stroke_width(2)))
            .map_err(plot_err)?;
        Ok(())
    })
}

/// Log-log L-curve with the points marked.
pub fn render_lcurve(path: &Path, csv: &str) -> Result<()> {
    let c = parse_columns(csv, 3)?;
    let pts: Vec<(f64, f64)> = c[1].iter().zip(&c[2]).filter(|(r, s)| **r > 0.0 && **s > 0.0).map(|(r, s)| (r.log10(), s.log10())).collect();
    if pts.len() < 2 {
        return Err(Error::Format("L-curve has fewer than two usable points".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (xlo, xhi) = bounds(&xs);
    let (ylo, yhi) = bounds(&ys);
    chart_png(path, |root| {
        let mut chart = ChartBuilder::on(root).margin(20).build_cartesian_2d(xlo..xhi, ylo..yhi).map_err(plot_err)?;
        chart.configure_mesh().disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0).draw().map_err(plot_err)?;
        chart.draw_series(LineSeries::new(pts.clone(), BLACK)).map_err(plot_err)?;
        chart.draw_series(pts.iter().map(|p| Circle::new(*p, 3, BLACK.filled()))).map_err(plot_err)?;
        Ok(())
    })
}

/// One curve family: metric against number of angles, PS solid and PI
/// dashed, circles without noise and triangles with.
fn render_curves(path: &Path, rows: &[&ContrastReport], metric: fn(&ContrastReport) -> f64) -> Result<()> {
    let mut series: BTreeMap<(String, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let v = metric(r);
        if v.is_finite() {
            series.entry((r.sensor_type.clone(), r.noise_pct.to_bits())).or_default().push((r.n_angles as f64, v));
        }
    }
    if series.is_empty() {
        return Err(Error::Format("no finite values to plot".into()));
    }
    let xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    let ys: Vec<f64> = series.values().flatten().map(|p| p.1).collect();
    let (xlo, xhi) = bounds(&xs);
    let (ylo, yhi) = bounds(&ys);
    chart_png(path, |root| {
    let mut chart = ChartBuilder::on(root).margin(20).build_cartesian_2d(xlo..xhi, ylo..yhi).map_err(plot_err)?;
    chart.configure_mesh().disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0).draw().map_err(plot_err)?;
    for ((kind, noise), mut pts) in series {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let noisy = f64::from_bits(noise) > 0.0;
        let col = if noisy { RED } else { BLUE };
        if kind == "pi" {
            chart.draw_series(DashedLineSeries::new(pts.clone(), 10, 6, col.stroke_width(2))).map_err(plot_err)?;
        } else {
            chart.draw_series(LineSeries::new(pts.clone(), col.stroke_width(2))).map_err(plot_err)?;
        }
        if noisy {
            chart.draw_series(pts.iter().map(|p| TriangleMarker::new(*p, 6, col.filled()))).map_err(plot_err)?;
        } else {
            chart.draw_series(pts.iter().map(|p| Circle::new(*p, 5, col.filled()))).map_err(plot_err)?;
        }
    }
    Ok(())
    })
}

fn try_plot(summary: &mut PlotSummary, what: &str, path: PathBuf, f: impl FnOnce(&Path) -> Result<()>) {
    match f(&path) {
        Ok(()) => summary.written.push(path),
        Err(e) => summary.skip(what, e),
    }
}

/// Renders whatever the run or sweep directory holds.
pub fn plot_outputs(dir: impl AsRef<Path>) -> Result<PlotSummary> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", dir.display())));
    }
    let mut s = PlotSummary::default();
    let fig = dir.join("figures");
    std::fs::create_dir_all(&fig).map_err(|e| Error::io(&fig, e))?;

    for (name, out) in [("truth.field", "phantom.png"), ("recon.field", "reconstruction.png")] {
        match read_real_field(dir.join(name)) {
            Ok((g, v)) => try_plot(&mut s, name, fig.join(out), |p| render_field(p, &g, &v)),
            Err(e) => s.skip(name, e),
        }
    }
    for (name, out, f) in [
        ("esf.csv", "esf.png", render_esf as fn(&Path, &str) -> Result<()>),
        ("lcurve.csv", "lcurve.png", render_lcurve),
    ] {
        match read_text(dir.join(name)) {
            Ok(t) => try_plot(&mut s, name, fig.join(out), |p| f(p, &t)),
            Err(e) => s.skip(name, e),
        }
    }

    if let Ok(text) = read_text(dir.join(SWEEP_TABLE)) {
        let rows = read_contrast_table(&text)?;
        // curve families per sensor width and frequency count
        let mut families: BTreeMap<(u64, usize), Vec<&ContrastReport>> = BTreeMap::new();
        for r in &rows {
            families.entry((r.sensor_width_mm.to_bits(), r.n_freqs)).or_default().push(r);
        }
        for ((w, nf), members) in &families {
            let tag = format!("d{}_f{nf}", f64::from_bits(*w));
            try_plot(&mut s, "fwhm curves", fig.join(format!("fwhm_{tag}.png")), |p| render_curves(p, members, |r| r.fwhm_mm_inv));
            try_plot(&mut s, "contrast curves", fig.join(format!("cmax_{tag}.png")), |p| render_curves(p, members, |r| r.c_max));
        }
        // PS/PI by noise quadrants on a shared scale
        let mut groups: BTreeMap<(u64, usize, usize), Vec<&ContrastReport>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.sensor_width_mm.to_bits(), r.n_angles, r.n_freqs)).or_default().push(r);
        }
        for ((w, na, nf), members) in &groups {
            let mut quad: Vec<Option<(Grid, Vec<f64>)>> = vec![None, None, None, None];
            for r in members {
                let slot = usize::from(r.sensor_type == "pi") + 2 * usize::from(r.noise_pct > 0.0);
                match read_real_field(dir.join("sweep").join(format!("{}.field", r.label))) {
                    Ok(f) => quad[slot] = Some(f),
                    Err(e) => s.skip(&r.label, e),
                }
            }
            let Some(grid) = quad.iter().flatten().map(|q| q.0).next() else { continue };
            let panels: Vec<Option<&[f64]>> = quad.iter().map(|q| q.as_ref().map(|q| q.1.as_slice())).collect();
            let name = format!("recon_d{}_a{na}_f{nf}.png", f64::from_bits(*w));
            try_plot(&mut s, &name.clone(), fig.join(name), |p| render_panels(p, &grid, &panels, 2));
        }
        for r in &rows {
            if let Ok(t) = read_text(dir.join("sweep").join(format!("{}_esf.csv", r.label))) {
                try_plot(&mut s, &r.label, fig.join(format!("esf_{}.png", r.label)), |p| render_esf(p, &t));
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_real_field;

    #[test]
    fn empty_directory_warns_only() {
        let d = tempfile::tempdir().unwrap();
        let s = plot_outputs(d.path()).unwrap();
        assert!(s.written.is_empty());
        assert!(s.warnings > 0);
    }

    #[test]
    fn renders_fields_and_curves() {
        let d = tempfile::tempdir().unwrap();
        let g = Grid::centered(8, 6, 1.0, 1.0).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|k| k as f64).collect();
        write_real_field(d.path().join("truth.field"), &g, &v, "").unwrap();
        let mut esf = String::from("position_mm,esf,fit\n");
        for i in 0..10 {
            let x = i as f64 - 4.5;
            esf.push_str(&format!("{x},{},{}\n", (x > 0.0) as u8, 0.5 + x / 10.0));
        }
        std::fs::write(d.path().join("esf.csv"), esf).unwrap();
        let s = plot_outputs(d.path()).unwrap();
        assert_eq!(s.written.len(), 2, "{s:?}");
        let img = image::open(&s.written[0]).unwrap();
        assert_eq!((img.width(), img.height()), (8 * PANEL_SCALE, 6 * PANEL_SCALE));
    }

    #[test]
    fn colour_scale_ends() {
        assert_eq!(colour(0.0, 0.0, 1.0), Rgb([0, 0, 255]));
        assert_eq!(colour(1.0, 0.0, 1.0), Rgb([255, 0, 0]));
        assert_eq!(colour(3.0, 3.0, 3.0), Rgb([255, 255, 255]));
    }
}
