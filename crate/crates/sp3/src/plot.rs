//! Training run logs and their CSV/SVG emission. The CSV is the source of
//! truth; every SVG is a pure function of it, so re-plotting the same CSV
//! reproduces the bytes exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, SpError};

/// One logged iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub iteration: usize,
    pub l_sup: f64,
    pub l_pseu: f64,
    /// Per-class thresholds after this iteration's update.
    pub thresholds: Vec<f64>,
    /// Fraction of batch superpixels relabeled during refinement.
    pub sampling_rate: f64,
    /// Most recent validation dice (carried between validations).
    pub val_dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub classes: usize,
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            rows: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(SpError::EmptyLog);
        }
        let mut prev = 0usize;
        for row in &self.rows {
            if row.iteration <= prev && prev != 0 {
                return Err(SpError::InvalidParameter(format!(
                    "iterations not strictly increasing at {}",
                    row.iteration
                )));
            }
            prev = row.iteration;
            let finite = row.l_sup.is_finite()
                && row.l_pseu.is_finite()
                && row.sampling_rate.is_finite()
                && row.val_dice.is_finite()
                && row.thresholds.iter().all(|t| t.is_finite());
            if !finite {
                return Err(SpError::InvalidParameter(format!(
                    "non-finite value in log row {}",
                    row.iteration
                )));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["iteration".to_string(), "l_sup".into(), "l_pseu".into()];
        for c in 0..self.classes {
            cols.push(format!("t_{c}"));
        }
        cols.push("sampling_rate".into());
        cols.push("val_dice".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header());
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iteration.to_string());
            out.push(',');
            out.push_str(&row.l_sup.to_string());
            out.push(',');
            out.push_str(&row.l_pseu.to_string());
            for t in &row.thresholds {
                out.push(',');
                out.push_str(&t.to_string());
            }
            out.push(',');
            out.push_str(&row.sampling_rate.to_string());
            out.push(',');
            out.push_str(&row.val_dice.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SpError::InvalidParameter("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 6 || cols[0] != "iteration" {
            return Err(SpError::InvalidParameter(format!(
                "unexpected CSV header '{header}'"
            )));
        }
        let classes = cols.len() - 5;
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(SpError::InvalidParameter(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    cols.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    SpError::InvalidParameter(format!("line {}: bad number '{s}'", lineno + 2))
                })
            };
            rows.push(RunRow {
                iteration: fields[0].parse().map_err(|_| {
                    SpError::InvalidParameter(format!("line {}: bad iteration", lineno + 2))
                })?,
                l_sup: parse(fields[1])?,
                l_pseu: parse(fields[2])?,
                thresholds: fields[3..3 + classes]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<_>>()?,
                sampling_rate: parse(fields[3 + classes])?,
                val_dice: parse(fields[4 + classes])?,
            });
        }
        let log = Self { classes, rows };
        log.validate()?;
        Ok(log)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

/// Render one panel: named series over iteration.
fn panel_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
        .collect();
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        SVG_W / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L:.2}\" y1=\"{MARGIN_T:.2}\" x2=\"{MARGIN_L:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MARGIN_T + plot_h
    ));
    // extents
    svg.push_str(&format!(
        "<text x=\"{MARGIN_L:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x0}</text>\n",
        SVG_H - 24.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x1}</text>\n",
        MARGIN_L + plot_w,
        SVG_H - 24.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
        MARGIN_L - 6.0,
        MARGIN_T + plot_h + 4.0,
        trim(y0)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
        MARGIN_L - 6.0,
        MARGIN_T + 4.0,
        trim(y1)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">iteration</text>\n",
        MARGIN_L + plot_w / 2.0,
        SVG_H - 8.0
    ));

    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if pts.len() == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(pts[0].0),
                sy(pts[0].1)
            ));
        } else {
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">{label}</text>\n",
            MARGIN_L + plot_w - 110.0,
            MARGIN_T + 14.0 * (i as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn trim(v: f64) -> String {
    format!("{v:.4}")
}

/// Write one SVG per panel (validation dice, per-class thresholds, sampling
/// rate) plus the CSV alongside. Returns the written paths.
pub fn plot_curves(log: &RunLog, out_dir: &Path) -> Result<Vec<PathBuf>> {
    log.validate()?;
    fs::create_dir_all(out_dir)?;
    let iters: Vec<f64> = log.rows.iter().map(|r| r.iteration as f64).collect();
    let mut written = Vec::new();

    let csv_path = out_dir.join("log.csv");
    log.write_csv(&csv_path)?;
    written.push(csv_path);

    let dice: Vec<(f64, f64)> = iters
        .iter()
        .zip(&log.rows)
        .map(|(&x, r)| (x, r.val_dice))
        .collect();
    let path = out_dir.join("dice_vs_iter.svg");
    fs::write(&path, panel_svg("validation dice", &[("val_dice".into(), dice)]))?;
    written.push(path);

    let mut threshold_series = Vec::new();
    for c in 0..log.classes {
        let pts: Vec<(f64, f64)> = iters
            .iter()
            .zip(&log.rows)
            .map(|(&x, r)| (x, r.thresholds[c]))
            .collect();
        threshold_series.push((format!("t_{c}"), pts));
    }
    let path = out_dir.join("threshold_vs_iter.svg");
    fs::write(&path, panel_svg("dynamic threshold per class", &threshold_series))?;
    written.push(path);

    let rate: Vec<(f64, f64)> = iters
        .iter()
        .zip(&log.rows)
        .map(|(&x, r)| (x, r.sampling_rate))
        .collect();
    let path = out_dir.join("sampling_rate_vs_iter.svg");
    fs::write(
        &path,
        panel_svg("superpixel sampling rate", &[("sampling_rate".into(), rate)]),
    )?;
    written.push(path);

    Ok(written)
}
