use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::warn;
use plotters::prelude::*;
use plotters::style::FontStyle;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::training::EpochRecord;

pub const PLOT_DATA_HEADER: [&str; 6] = ["series", "epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"];

const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
];

// First series green, second red, then the rest.
const SERIES_COLORS: [RGBColor; 6] = [
    RGBColor(34, 139, 34),
    RGBColor(200, 30, 30),
    RGBColor(30, 80, 200),
    RGBColor(230, 140, 0),
    RGBColor(128, 0, 128),
    RGBColor(0, 150, 150),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotArtifacts {
    /// Raster image; `None` when drawing failed.
    pub image: Option<PathBuf>,
    /// CSV of exactly the plotted points.
    pub data: PathBuf,
}

/// Registers a system TrueType font for plot text once per process. Returns
/// whether text can be drawn.
fn font_available() -> bool {
    static LOADED: OnceLock<bool> = OnceLock::new();
    *LOADED.get_or_init(|| {
        for path in FONT_CANDIDATES {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        warn!("no usable font found; plots are drawn without text");
        false
    })
}

/// Writes validation accuracy and loss against epoch, one series per label,
/// as a PNG at `image_path` plus a CSV sidecar (same path, `.csv`) holding
/// the plotted values exactly as they appear in the history files.
pub fn plot_learning_curves(
    histories: &[(String, Vec<EpochRecord>)],
    image_path: &Path,
    caption: &str,
) -> Result<PlotArtifacts, ExperimentError> {
    if histories.is_empty() {
        return Err(ExperimentError::Plot("no histories to plot".into()));
    }
    if let Some((label, _)) = histories.iter().find(|(_, h)| h.is_empty()) {
        return Err(ExperimentError::Plot(format!("series `{label}` has an empty history")));
    }
    for (i, (label, _)) in histories.iter().enumerate() {
        if histories[..i].iter().any(|(l, _)| l == label) {
            return Err(ExperimentError::Plot(format!("series `{label}` appears twice")));
        }
    }
    if let Some(dir) = image_path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let data = image_path.with_extension("csv");
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&data)?;
    w.write_record(PLOT_DATA_HEADER)?;
    for (label, history) in histories {
        for r in history {
            w.write_record([
                label.clone(),
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_accuracy.to_string(),
                r.val_loss.to_string(),
                r.val_accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let image = match draw(histories, image_path, caption) {
        Ok(()) => Some(image_path.to_path_buf()),
        Err(e) => {
            warn!("could not draw {}: {e}", image_path.display());
            None
        }
    };
    Ok(PlotArtifacts { image, data })
}

type DrawResult = Result<(), Box<dyn std::error::Error>>;

fn draw(histories: &[(String, Vec<EpochRecord>)], path: &Path, caption: &str) -> DrawResult {
    let text = font_available();
    let root = BitMapBackend::new(path, (1200, 520)).into_drawing_area();
    root.fill(&WHITE)?;
    let root = if text { root.titled(caption, ("sans-serif", 22))? } else { root };
    let (left, right) = root.split_horizontally(600);
    let max_epoch = histories.iter().flat_map(|(_, h)| h.iter().map(|r| r.epoch)).max().unwrap_or(1).max(2) as f64;
    let max_loss = histories
        .iter()
        .flat_map(|(_, h)| h.iter().map(|r| r.val_loss))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-3)
        * 1.1;
    panel(&left, histories, text, "validation accuracy", (1.0, max_epoch), (0.0, 1.0), |r| r.val_accuracy)?;
    panel(&right, histories, text, "validation loss", (1.0, max_epoch), (0.0, max_loss), |r| r.val_loss)?;
    root.present()?;
    Ok(())
}

fn panel(
    area: &DrawingArea<BitMapBackend<'_>, plotters::coord::Shift>,
    histories: &[(String, Vec<EpochRecord>)],
    text: bool,
    y_desc: &str,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    value: impl Fn(&EpochRecord) -> f64,
) -> DrawResult {
    let mut builder = ChartBuilder::on(area);
    builder.margin(15);
    if text {
        builder.x_label_area_size(40).y_label_area_size(55);
    }
    let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1)?;
    if text {
        chart.configure_mesh().x_desc("epoch").y_desc(y_desc).draw()?;
    }
    for (i, (label, history)) in histories.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let points: Vec<(f64, f64)> = history.iter().map(|r| (r.epoch as f64, value(r))).collect();
        let series = chart.draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))?;
        if text {
            series.label(label.as_str()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart.draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
    }
    if text {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    }
    Ok(())
}
