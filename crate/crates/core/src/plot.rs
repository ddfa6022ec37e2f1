//! SVG figures of a run: states, control input, measured output and the
//! demodulated virtual output. Full views are decimated; zoom panels keep
//! every recorded sample.

use std::ops::Range;
use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::sim::SimTrace;

const MAX_POINTS: usize = 4000;
const ZOOM_PERIODS: f64 = 6.0;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io {
        context: "drawing SVG".into(),
        message: e.to_string(),
    }
}

struct Series<'a> {
    label: &'a str,
    color: RGBColor,
    points: Vec<(f64, f64)>,
}

fn decimated(t: &[f64], v: impl Fn(usize) -> f64, range: Option<Range<f64>>) -> Vec<(f64, f64)> {
    let idx: Vec<usize> = match &range {
        Some(r) => (0..t.len()).filter(|&i| r.contains(&t[i])).collect(),
        None => (0..t.len()).collect(),
    };
    let step = if range.is_some() {
        1
    } else {
        idx.len().div_ceil(MAX_POINTS).max(1)
    };
    idx.iter()
        .step_by(step)
        .map(|&i| (t[i], v(i)))
        .filter(|p| p.1.is_finite())
        .collect()
}

fn bounds(series: &[Series]) -> (Range<f64>, Range<f64>) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 < x1) {
        x1 = x0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0).max(1e-12);
    (x0..x1, (y0 - pad)..(y1 + pad))
}

fn panel(area: &DrawingArea<SVGBackend, Shift>, title: &str, series: &[Series]) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Ok(());
    }
    let (xr, yr) = bounds(series);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(8)
        .x_label_area_size(28)
        .y_label_area_size(70)
        .build_cartesian_2d(xr, yr)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .draw()
        .map_err(plot_err)?;
    for s in series {
        let color = s.color;
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color))
            .map_err(plot_err)?
            .label(s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(plot_err)
}

fn figure(
    path: &Path,
    rows: usize,
    draw: impl Fn(&[DrawingArea<SVGBackend, Shift>]) -> Result<()>,
) -> Result<()> {
    let root = SVGBackend::new(path, (960, 300 * rows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((rows, 1));
    draw(&areas)?;
    root.present().map_err(plot_err)
}

/// A short window of `ZOOM_PERIODS` periods after the second scenario event,
/// or at the end of the run if it is too short.
fn zoom_window(tr: &SimTrace) -> Range<f64> {
    let t_last = tr.t.last().copied().unwrap_or(0.0);
    let width = ZOOM_PERIODS * tr.epsilon;
    let start = (0.75 * t_last).min(t_last - width).max(0.0);
    start..start + width
}

/// Writes `states.svg`, `control.svg`, `output.svg` and `virtual.svg` into
/// `dir` and returns their paths. `ideal` adds the averaged trajectories.
pub fn write_figures(
    dir: &Path,
    actual: &SimTrace,
    ideal: Option<&SimTrace>,
) -> Result<Vec<PathBuf>> {
    let t = &actual.t;
    let zoom = zoom_window(actual);
    let noisy = actual.y_noisy != actual.y_clean;
    let mut written = Vec::new();

    let path = dir.join("states.svg");
    figure(&path, 3, |areas| {
        for (j, area) in areas.iter().enumerate() {
            let mut s = vec![Series {
                label: ["x1", "x2", "x3"][j],
                color: BLUE,
                points: decimated(t, |i| actual.x_at(i)[j], None),
            }];
            if let Some(b) = ideal {
                s.push(Series {
                    label: ["x1 averaged", "x2 averaged", "x3 averaged"][j],
                    color: RED,
                    points: decimated(&b.t, |i| b.x_at(i)[j], None),
                });
            }
            if j == 0 {
                s.push(Series {
                    label: "x1ref",
                    color: BLACK,
                    points: decimated(t, |i| actual.x1ref[i], None),
                });
            }
            panel(area, ["x1", "x2", "x3"][j], &s)?;
        }
        Ok(())
    })?;
    written.push(path);

    let path = dir.join("control.svg");
    figure(&path, 2, |areas| {
        panel(
            &areas[0],
            "u",
            &[Series {
                label: "u",
                color: BLUE,
                points: decimated(t, |i| actual.u[i], None),
            }],
        )?;
        panel(
            &areas[1],
            "u and u_pwm (zoom)",
            &[
                Series {
                    label: "u_pwm",
                    color: RED,
                    points: decimated(t, |i| actual.u_pwm[i], Some(zoom.clone())),
                },
                Series {
                    label: "u",
                    color: BLUE,
                    points: decimated(t, |i| actual.u[i], Some(zoom.clone())),
                },
            ],
        )
    })?;
    written.push(path);

    let path = dir.join("output.svg");
    figure(&path, 2, |areas| {
        let mut full = Vec::new();
        let mut close = Vec::new();
        if noisy {
            full.push(Series {
                label: "y noisy",
                color: RGBColor(160, 160, 160),
                points: decimated(t, |i| actual.y_noisy[i], None),
            });
            close.push(Series {
                label: "y noisy",
                color: RGBColor(160, 160, 160),
                points: decimated(t, |i| actual.y_noisy[i], Some(zoom.clone())),
            });
        }
        full.push(Series {
            label: "y",
            color: BLUE,
            points: decimated(t, |i| actual.y_clean[i], None),
        });
        close.push(Series {
            label: "y",
            color: BLUE,
            points: decimated(t, |i| actual.y_clean[i], Some(zoom.clone())),
        });
        panel(&areas[0], "measured output", &full)?;
        panel(&areas[1], "measured output (zoom)", &close)
    })?;
    written.push(path);

    let path = dir.join("virtual.svg");
    let eps = actual.epsilon;
    figure(&path, 1, |areas| {
        panel(
            &areas[0],
            "x1ref, x1 and demodulated yv / eps",
            &[
                Series {
                    label: "yv_hat / eps",
                    color: RGBColor(120, 180, 120),
                    points: decimated(t, |i| actual.yhat_v[i] / eps, None),
                },
                Series {
                    label: "x1",
                    color: BLUE,
                    points: decimated(t, |i| actual.x_at(i)[0], None),
                },
                Series {
                    label: "x1ref",
                    color: BLACK,
                    points: decimated(t, |i| actual.x1ref[i], None),
                },
            ],
        )
    })?;
    written.push(path);
    Ok(written)
}
