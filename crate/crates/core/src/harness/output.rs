use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::summary::{learning_curves, smooth, CellSummary};
use super::trial::EpisodeRecord;

pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "returns.svg";
pub const SMOOTHING_WINDOW: usize = 50;

pub const EPISODE_HEADER: [&str; 9] = [
    "trial",
    "episode",
    "attacker_return",
    "defender_return",
    "length",
    "cause",
    "attacker",
    "tau",
    "model",
];

const SUMMARY_HEADER: [&str; 12] = [
    "attacker",
    "tau",
    "model",
    "trials",
    "episodes",
    "mean_attacker_return",
    "std_error",
    "ci95_low",
    "ci95_high",
    "mean_defender_return",
    "se_defined",
    "curve",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Floats are written in shortest round-trip form.
pub fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(EPISODE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.trial.to_string(),
            r.episode.to_string(),
            r.attacker_return.to_string(),
            r.defender_return.to_string(),
            r.length.to_string(),
            r.cause.to_string(),
            r.attacker.to_string(),
            r.tau.to_string(),
            r.model.clone(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(EPISODE_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_summary(path: &Path, summary: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(path, e))?;
    for s in summary {
        w.write_record([
            s.attacker.to_string(),
            s.tau.to_string(),
            s.model.clone(),
            s.trials.to_string(),
            s.episodes.to_string(),
            s.mean.to_string(),
            s.std_error.to_string(),
            s.ci_low.to_string(),
            s.ci_high.to_string(),
            s.mean_defender.to_string(),
            s.se_defined.to_string(),
            curve_label(s.attacker.name(), s.tau),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn curve_label(kind: &str, tau: f64) -> String {
    format!("{kind} (tau={tau})")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

/// Line plot of the smoothed per-episode average attacker return, one curve
/// per attacker kind and temperature.
pub fn render_plot(records: &[EpisodeRecord]) -> String {
    let curves: Vec<(String, Vec<f64>)> = learning_curves(records)
        .into_iter()
        .map(|((kind, tau), ys)| (curve_label(kind.name(), tau), smooth(&ys, SMOOTHING_WINDOW)))
        .collect();

    let (width, height) = (800.0, 480.0);
    let (left, right, top, bottom) = (70.0, 200.0, 30.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let n = curves.iter().map(|c| c.1.len()).max().unwrap_or(0).max(2);
    let all = curves.iter().flat_map(|c| c.1.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |i: usize| left + plot_w * i as f64 / (n - 1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    for k in 0..=4 {
        let i = (n - 1) * k / 4;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{i}</text>"#,
            x(i),
            top + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">episode</text>"#,
        left + plot_w / 2.0,
        height - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">attacker return (window {SMOOTHING_WINDOW})</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (c, (label, ys)) in curves.iter().enumerate() {
        let colour = PALETTE[c % PALETTE.len()];
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 * (c as f64 + 1.0);
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{colour}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}">{label}</text>"#, lx + 26.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the three result files into `dir`, creating it if needed.
pub fn emit_outputs(dir: &Path, records: &[EpisodeRecord], summary: &[CellSummary]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let episodes = dir.join(EPISODES_FILE);
    let summary_path = dir.join(SUMMARY_FILE);
    let plot = dir.join(PLOT_FILE);
    write_episodes(&episodes, records)?;
    write_summary(&summary_path, summary)?;
    std::fs::write(&plot, render_plot(records)).map_err(|e| Error::io(&plot, e))?;
    Ok(vec![episodes, summary_path, plot])
}
