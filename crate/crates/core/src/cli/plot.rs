//! Headless SVG line plots of the training and validation logs.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::recpo::{StepRecord, ValRecord};

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Draws one series; `points` must be non-empty.
pub fn line_plot(path: &Path, title: &str, y_label: &str, points: &[(f64, f64)]) -> Result<()> {
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if hi - lo > 1e-12 {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(&mut points.iter().map(|p| p.0));
    let (y0, y1) = span(&mut points.iter().map(|p| p.1));
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Renders every curve of a run directory into `reports/plots/` and returns
/// the written files. Fails without writing anything when the step log is
/// missing or empty.
pub fn plot_curves(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics = run_dir.join("metrics.jsonl");
    if !metrics.exists() {
        return Err(Error::InvalidArgument(format!("{} does not exist", metrics.display())));
    }
    let steps: Vec<StepRecord> = read_jsonl(&metrics)?;
    if steps.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no step records", metrics.display())));
    }
    let val_path = run_dir.join("val_metrics.jsonl");
    let vals: Vec<ValRecord> = if val_path.exists() { read_jsonl(&val_path)? } else { Vec::new() };
    let out_dir = run_dir.join("reports").join("plots");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let step_series: [(&str, &str, &str, fn(&StepRecord) -> f64); 4] = [
        ("train_reward", "Train Reward", "mean fused reward", |r| r.mean_train_reward),
        ("train_length", "Train Length", "mean reasoning tokens", |r| r.mean_reasoning_length),
        ("loss", "Loss", "loss", |r| r.loss),
        ("grad_norm", "Gradient Norm", "L2 norm", |r| r.grad_norm),
    ];
    let mut written = Vec::new();
    for (file, title, y, get) in step_series {
        let pts: Vec<(f64, f64)> = steps.iter().map(|r| (r.step as f64, get(r))).collect();
        let path = out_dir.join(format!("{file}.svg"));
        line_plot(&path, title, y, &pts)?;
        written.push(path);
    }
    if !vals.is_empty() {
        let val_series: [(&str, &str, &str, fn(&ValRecord) -> f64); 3] = [
            ("val_reward", "Val Reward", "mean fused reward", |r| r.mean_fused_reward),
            ("val_length", "Val Length", "mean reasoning tokens", |r| r.mean_reasoning_length),
            ("val_ndcg5", "Val NDCG@5", "NDCG@5", |r| r.ndcg_at_5),
        ];
        for (file, title, y, get) in val_series {
            let pts: Vec<(f64, f64)> = vals.iter().map(|r| (r.step as f64, get(r))).collect();
            let path = out_dir.join(format!("{file}.svg"));
            line_plot(&path, title, y, &pts)?;
            written.push(path);
        }
    }
    Ok(written)
}
