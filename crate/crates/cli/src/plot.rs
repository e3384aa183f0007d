use std::path::Path;

use iitnet::stage::StageLabel;
use iitnet::{Error, Result};
use plotters::prelude::*;

/// Vertical order of a hypnogram, top to bottom.
const LEVELS: [StageLabel; 5] = [
    StageLabel::W,
    StageLabel::Rem,
    StageLabel::N1,
    StageLabel::N2,
    StageLabel::N3,
];

fn level(s: StageLabel) -> i32 {
    4 - LEVELS.iter().position(|&l| l == s).unwrap() as i32
}

fn level_name(y: &i32) -> String {
    usize::try_from(4 - *y)
        .ok()
        .and_then(|i| LEVELS.get(i))
        .map_or(String::new(), |s| s.name().to_string())
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("plotting failed: {e}"))
}

fn steps(stages: &[StageLabel]) -> Vec<(f64, i32)> {
    let mut pts = Vec::with_capacity(stages.len() * 2);
    for (i, &s) in stages.iter().enumerate() {
        pts.push((i as f64, level(s)));
        pts.push((i as f64 + 1.0, level(s)));
    }
    pts
}

/// Step plot of predicted stages, above the expert track when one is given.
pub fn hypnogram_svg(path: &Path, title: &str, predicted: &[StageLabel], expert: Option<&[StageLabel]>) -> Result<()> {
    let tracks: Vec<(&str, &[StageLabel], RGBColor)> = match expert {
        Some(e) => vec![("Expert", e, BLACK), ("Predicted", predicted, RED)],
        None => vec![("Predicted", predicted, RED)],
    };
    let height = 60 + 200 * tracks.len() as u32;
    let root = SVGBackend::new(path, (1000, height)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, ("sans-serif", 18)).map_err(plot_err)?;
    let n = predicted.len().max(1) as f64;
    for (area, (name, stages, color)) in root.split_evenly((tracks.len(), 1)).iter().zip(tracks) {
        let mut chart = ChartBuilder::on(area)
            .caption(name, ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(28)
            .y_label_area_size(44)
            .build_cartesian_2d(0.0..n, -1i32..5i32)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_desc("epoch")
            .y_labels(7)
            .y_label_formatter(&level_name)
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(steps(stages), color.stroke_width(1)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Accuracy, MF1 and kappa against sequence length.
pub fn curve_svg(path: &Path, rows: &[(usize, f64, f64, f64)]) -> Result<()> {
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let lo = rows.iter().map(|r| r.0).min().unwrap_or(1) as f64;
    let hi = rows.iter().map(|r| r.0).max().unwrap_or(1) as f64;
    let ymin = rows
        .iter()
        .flat_map(|r| [r.1, r.2, r.3])
        .fold(1.0f64, f64::min)
        .min(0.9)
        .max(0.0);
    let mut chart = ChartBuilder::on(&root)
        .caption("performance by sequence length", ("sans-serif", 16))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d((lo - 0.5)..(hi + 0.5), (ymin - 0.05).max(0.0)..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("L")
        .x_labels(rows.len().max(2))
        .draw()
        .map_err(plot_err)?;
    let series: [(&str, RGBColor, fn(&(usize, f64, f64, f64)) -> f64); 3] = [
        ("accuracy", BLUE, |r| r.1),
        ("MF1", RED, |r| r.2),
        ("kappa", GREEN, |r| r.3),
    ];
    for (name, color, get) in series {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, get(r))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
