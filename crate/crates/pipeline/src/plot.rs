//! Static SVG figures.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::JitterCurve;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Bar chart of mean position error per joint.
pub fn per_joint_bars(path: &Path, names: &[String], errors_cm: &[f64]) -> Result<()> {
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let top = errors_cm.iter().copied().fold(0.0f64, f64::max).max(1e-3) * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean position error per joint (cm)", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(90)
        .y_label_area_size(50)
        .build_cartesian_2d((0..errors_cm.len()).into_segmented(), 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(errors_cm.len())
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => names.get(*i).cloned().unwrap_or_default(),
            _ => String::new(),
        })
        .x_label_style(("sans-serif", 11).into_font().transform(FontTransform::Rotate90))
        .y_desc("cm")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(errors_cm.iter().enumerate().map(|(i, &e)| {
            let mut bar = Rectangle::new([(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), e)], BLUE.mix(0.6).filled());
            bar.set_margin(0, 0, 3, 3);
            bar
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Per-frame jerk of predicted, unrefined and ground-truth motion.
pub fn jitter_curves(path: &Path, curve: &JitterCurve) -> Result<()> {
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let series = [
        ("refined", &curve.predicted, BLUE),
        ("unrefined", &curve.unrefined, RED),
        ("ground truth", &curve.ground_truth, BLACK),
    ];
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let top = series.iter().flat_map(|s| s.1.iter().copied()).fold(0.0f64, f64::max).max(1e-3) * 1.1;
    let fps = if curve.fps > 0.0 { curve.fps } else { 1.0 };
    let mut chart = ChartBuilder::on(&root)
        .caption("Jitter over time", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..(len as f64 / fps), 0.0..top)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("time (s)").y_desc("jerk (10^2 m/s^3)").draw().map_err(plot_err)?;
    for (label, values, color) in series {
        chart
            .draw_series(LineSeries::new(values.iter().enumerate().map(|(t, &v)| (t as f64 / fps, v)), color))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}
