//! Scaling aggregates: CSV tables keyed by run provenance and static SVG
//! plots. Every figure is written as a `.csv` plus a `.svg` that embeds the
//! same CSV as a sidecar, so plots are self-describing and round-trip.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Plain CSV table. Fields must not contain commas or newlines (entity
/// names never do; they are whitespace-joined tokens).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn sort(&mut self) {
        self.rows.sort();
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("csv", "empty"))?;
        let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if row.len() != columns.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("expected {} fields, got {}", columns.len(), row.len()),
                });
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
    Plus,
}

impl Marker {
    pub fn for_index(i: usize) -> Marker {
        [
            Marker::Circle,
            Marker::Square,
            Marker::Triangle,
            Marker::Diamond,
            Marker::Cross,
            Marker::Plus,
        ][i % 6]
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub marker: Marker,
    /// Marker radius in px; encodes parameter count in the scaling figures.
    pub marker_size: f64,
    pub color_index: usize,
    pub draw_line: bool,
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const W: f64 = 760.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 190.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * span {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let ax = x.abs();
    if ax >= 1e4 || ax < 1e-3 {
        format!("{x:.2e}")
    } else {
        let s = format!("{x:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

fn marker_svg(m: Marker, x: f64, y: f64, r: f64, color: &str) -> String {
    match m {
        Marker::Circle => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{color}"/>"#),
        Marker::Square => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            x - r,
            y - r,
             2.0 * r,
            2.0 * r
        ),
        Marker::Triangle => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        Marker::Diamond => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        ),
        Marker::Cross => format!(
            r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="{color}" stroke-width="1.6"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
        Marker::Plus => format!(
            r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="{color}" stroke-width="1.6"/>"#,
            x - r,
            y,
            x + r,
            y,
            x,
            y - r,
            x,
            y + r
        ),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a line/scatter plot. The CSV sidecar is embedded verbatim inside
/// a `<metadata>` CDATA block so the figure carries its own data.
pub fn render_svg(spec: &PlotSpec, csv_sidecar: &str) -> String {
    let tx = |x: f64| if spec.log_x { x.max(1e-300).log10() } else { x };
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in &spec.series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(tx(x));
                ys.push(y);
            }
        }
    }
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (mut y0, mut y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let xpad = 0.04 * (x1 - x0);
    let ypad = 0.06 * (y1 - y0);
    let (x0, x1, y0, y1) = (x0 - xpad, x1 + xpad, y0 - ypad, y1 + ypad);
    let px = |x: f64| ML + (tx(x) - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        svg,
        "<metadata id=\"csv-sidecar\"><![CDATA[\n{csv_sidecar}]]></metadata>"
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        ML + (W - ML - MR) / 2.0,
        xml_escape(&spec.title)
    );

    // axes
    let _ = writeln!(
        svg,
        r##"<rect x="{ML}" y="{MT}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##,
        W - ML - MR,
        H - MT - MB
    );
    // y ticks
    for t in nice_ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{ML}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            W - MR
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            ML - 6.0,
            y + 4.0,
            fmt_num(t)
        );
    }
    // x ticks
    if spec.log_x {
        let lo = x0.floor() as i64;
        let hi = x1.ceil() as i64;
        for e in lo..=hi {
            let xv = e as f64;
            if xv < x0 || xv > x1 {
                continue;
            }
            let x = ML + (xv - x0) / (x1 - x0) * (W - ML - MR);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.1}" y1="{MT}" x2="{x:.1}" y2="{:.1}" stroke="#eee"/>"##,
                H - MB
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">1e{e}</text>"#,
                H - MB + 16.0
            );
        }
    } else {
        for t in nice_ticks(x0, x1) {
            let x = ML + (t - x0) / (x1 - x0) * (W - ML - MR);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                H - MB + 16.0,
                fmt_num(t)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        ML + (W - ML - MR) / 2.0,
        H - 14.0,
        xml_escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        xml_escape(&spec.y_label)
    );

    // series
    for s in &spec.series {
        let color = PALETTE[s.color_index % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        if s.draw_line && pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.4"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in &pts {
            let _ = writeln!(svg, "{}", marker_svg(s.marker, x, y, s.marker_size, color));
        }
    }

    // legend
    for (i, s) in spec.series.iter().enumerate() {
        let y = MT + 14.0 + i as f64 * 16.0;
        let x = W - MR + 12.0;
        let color = PALETTE[s.color_index % PALETTE.len()];
        let _ = writeln!(svg, "{}", marker_svg(s.marker, x, y - 4.0, 4.0, color));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 10.0,
            xml_escape(&s.label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Pulls the embedded CSV back out of a rendered figure.
pub fn extract_csv_sidecar(svg: &str) -> Option<String> {
    let start = svg.find("<![CDATA[\n")? + "<![CDATA[\n".len();
    let end = svg[start..].find("]]>")? + start;
    Some(svg[start..end].to_string())
}

/// Writes `name.csv` and `name.svg` (with the CSV embedded) into `dir`.
pub fn write_figure(dir: &Path, name: &str, table: &Table, spec: &PlotSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = table.to_csv();
    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = dir.join(format!("{name}.svg"));
    std::fs::write(&svg_path, render_svg(spec, &csv)).map_err(|e| Error::io(&svg_path, e))
}

/// One rate measurement: a (model, level, epochs) cell evaluated on one
/// prompt split at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub model: String,
    pub params: usize,
    pub level: String,
    pub epochs: u32,
    pub flops: f64,
    pub split: String,
    pub temperature: f64,
    pub rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_records: usize,
}

pub const RATE_COLUMNS: [&str; 11] = [
    "model",
    "params",
    "level",
    "epochs",
    "flops",
    "split",
    "temperature",
    "rate",
    "precision",
    "recall",
    "n_records",
];

impl RateRow {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.params.to_string(),
            self.level.clone(),
            self.epochs.to_string(),
            format!("{}", self.flops),
            self.split.clone(),
            format!("{}", self.temperature),
            format!("{}", self.rate),
            format!("{}", self.precision),
            format!("{}", self.recall),
            self.n_records.to_string(),
        ]
    }

    pub fn from_row(row: &[String]) -> Result<Self> {
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::invalid("rate row", format!("bad number {:?}", row[i])))
        };
        Ok(RateRow {
            model: row[0].clone(),
            params: row[1]
                .parse()
                .map_err(|_| Error::invalid("rate row", "bad params"))?,
            level: row[2].clone(),
            epochs: row[3]
                .parse()
                .map_err(|_| Error::invalid("rate row", "bad epochs"))?,
            flops: f(4)?,
            split: row[5].clone(),
            temperature: f(6)?,
            rate: f(7)?,
            precision: f(8)?,
            recall: f(9)?,
            n_records: row[10]
                .parse()
                .map_err(|_| Error::invalid("rate row", "bad n_records"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub model: String,
    pub params: usize,
    pub level: String,
    pub epochs: u32,
    pub flops: f64,
    pub train_loss: f64,
    pub ivs_loss: f64,
}

pub const LOSS_COLUMNS: [&str; 7] = [
    "model",
    "params",
    "level",
    "epochs",
    "flops",
    "train_loss",
    "ivs_loss",
];

impl LossRow {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.params.to_string(),
            self.level.clone(),
            self.epochs.to_string(),
            format!("{}", self.flops),
            format!("{}", self.train_loss),
            format!("{}", self.ivs_loss),
        ]
    }

    pub fn from_row(row: &[String]) -> Result<Self> {
        Ok(LossRow {
            model: row[0].clone(),
            params: row[1]
                .parse()
                .map_err(|_| Error::invalid("loss row", "bad params"))?,
            level: row[2].clone(),
            epochs: row[3]
                .parse()
                .map_err(|_| Error::invalid("loss row", "bad epochs"))?,
            flops: row[4]
                .parse()
                .map_err(|_| Error::invalid("loss row", "bad flops"))?,
            train_loss: row[5]
                .parse()
                .map_err(|_| Error::invalid("loss row", "bad train_loss"))?,
            ivs_loss: row[6]
                .parse()
                .map_err(|_| Error::invalid("loss row", "bad ivs_loss"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRow {
    pub model: String,
    pub params: usize,
    pub level: String,
    pub epochs: u32,
    pub task: String,
    pub det_type: String,
    pub layer: usize,
    pub test_aucpr: f64,
    pub test_accuracy: f64,
    pub prevalence: f64,
    pub lm_rate: f64,
    pub pvs_aucpr: f64,
    pub val_aucpr: f64,
    pub skipped: bool,
}

pub const DETECTOR_COLUMNS: [&str; 14] = [
    "model",
    "params",
    "level",
    "epochs",
    "task",
    "type",
    "layer",
    "test_aucpr",
    "test_accuracy",
    "prevalence",
    "lm_rate",
    "pvs_aucpr",
    "val_aucpr",
    "skipped",
];

impl DetectorRow {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.params.to_string(),
            self.level.clone(),
            self.epochs.to_string(),
            self.task.clone(),
            self.det_type.clone(),
            self.layer.to_string(),
            format!("{}", self.test_aucpr),
            format!("{}", self.test_accuracy),
            format!("{}", self.prevalence),
            format!("{}", self.lm_rate),
            format!("{}", self.pvs_aucpr),
            format!("{}", self.val_aucpr),
            self.skipped.to_string(),
        ]
    }

    pub fn from_row(row: &[String]) -> Result<Self> {
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::invalid("detector row", format!("bad number {:?}", row[i])))
        };
        Ok(DetectorRow {
            model: row[0].clone(),
            params: row[1]
                .parse()
                .map_err(|_| Error::invalid("detector row", "bad params"))?,
            level: row[2].clone(),
            epochs: row[3]
                .parse()
                .map_err(|_| Error::invalid("detector row", "bad epochs"))?,
            task: row[4].clone(),
            det_type: row[5].clone(),
            layer: row[6]
                .parse()
                .map_err(|_| Error::invalid("detector row", "bad layer"))?,
            test_aucpr: f(7)?,
            test_accuracy: f(8)?,
            prevalence: f(9)?,
            lm_rate: f(10)?,
            pvs_aucpr: f(11)?,
            val_aucpr: f(12)?,
            skipped: row[13] == "true",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub model: String,
    pub params: usize,
    pub level: String,
    pub epochs: u32,
    pub task: String,
    pub det_type: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

pub const CURVE_COLUMNS: [&str; 9] = [
    "model",
    "params",
    "level",
    "epochs",
    "task",
    "type",
    "threshold",
    "precision",
    "recall",
];

impl CurveRow {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.params.to_string(),
            self.level.clone(),
            self.epochs.to_string(),
            self.task.clone(),
            self.det_type.clone(),
            format!("{}", self.threshold),
            format!("{}", self.precision),
            format!("{}", self.recall),
        ]
    }

    pub fn from_row(row: &[String]) -> Result<Self> {
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::invalid("curve row", format!("bad number {:?}", row[i])))
        };
        Ok(CurveRow {
            model: row[0].clone(),
            params: row[1]
                .parse()
                .map_err(|_| Error::invalid("curve row", "bad params"))?,
            level: row[2].clone(),
            epochs: row[3]
                .parse()
                .map_err(|_| Error::invalid("curve row", "bad epochs"))?,
            task: row[4].clone(),
            det_type: row[5].clone(),
            threshold: f(6)?,
            precision: f(7)?,
            recall: f(8)?,
        })
    }
}

fn table_of<T>(columns: &[&str], items: &[T], to_row: impl Fn(&T) -> Vec<String>) -> Table {
    let mut t = Table::new(columns);
    for item in items {
        t.push(to_row(item));
    }
    t.sort();
    t
}

fn epochs_marker_index(epochs: u32, grid: &[u32]) -> usize {
    grid.iter().position(|&e| e == epochs).unwrap_or(0)
}

fn size_radius(params: usize) -> f64 {
    2.0 + (params.max(1) as f64).log10()
}

fn validate_provenance(rows: &[RateRow]) -> Result<()> {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.params == 0 || !r.flops.is_finite() || r.flops <= 0.0)
        .map(|r| format!("{}@{}ep{}", r.model, r.level, r.epochs))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(
            "scaling rows",
            format!("missing provenance for runs: {}", bad.join(", ")),
        ))
    }
}

/// Emits every figure CSV/SVG pair into `report/`. The epochs grid drives
/// the marker-type convention; marker size encodes parameter count.
pub fn aggregate_scaling(
    out_dir: &Path,
    rates: &[RateRow],
    losses: &[LossRow],
    detectors: &[DetectorRow],
    curves: &[CurveRow],
    epoch_grid: &[u32],
) -> Result<()> {
    validate_provenance(rates)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // fig2: hallucination rate vs training FLOPs, seen and unseen
    {
        let table = table_of(&RATE_COLUMNS, rates, RateRow::to_row);
        let mut series = Vec::new();
        let mut cells: Vec<(String, String)> = rates
            .iter()
            .map(|r| (r.model.clone(), r.level.clone()))
            .collect();
        cells.sort();
        cells.dedup();
        for split in ["seen", "ivs"] {
            for (ci, (model, level)) in cells.iter().enumerate() {
                let mut pts: Vec<(f64, f64, u32, usize)> = rates
                    .iter()
                    .filter(|r| {
                        &r.model == model
                            && &r.level == level
                            && r.split == split
                            && r.temperature == 1.0
                    })
                    .map(|r| (r.flops, r.rate, r.epochs, r.params))
                    .collect();
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                if pts.is_empty() {
                    continue;
                }
                let params = pts[0].3;
                series.push(Series {
                    label: format!("{model}@{level} {split}"),
                    points: pts.iter().map(|&(x, y, _, _)| (x, y)).collect(),
                    marker: Marker::for_index(if split == "seen" { 0 } else { 1 }),
                    marker_size: size_radius(params),
                    color_index: ci,
                    draw_line: true,
                });
            }
        }
        write_figure(
            out_dir,
            "fig2_rate_vs_flops",
            &table,
            &PlotSpec {
                title: "Hallucination rate vs training FLOPs (temp 1.0)".into(),
                x_label: "training FLOPs".into(),
                y_label: "hallucination rate".into(),
                log_x: true,
                series,
            },
        )?;
    }

    // fig3: training loss vs FLOPs
    {
        let table = table_of(&LOSS_COLUMNS, losses, LossRow::to_row);
        let mut cells: Vec<(String, String)> = losses
            .iter()
            .map(|r| (r.model.clone(), r.level.clone()))
            .collect();
        cells.sort();
        cells.dedup();
        let mut series = Vec::new();
        for (ci, (model, level)) in cells.iter().enumerate() {
            let mut pts: Vec<(f64, f64)> = losses
                .iter()
                .filter(|r| &r.model == model && &r.level == level)
                .map(|r| (r.flops, r.train_loss))
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            series.push(Series {
                label: format!("{model}@{level}"),
                points: pts,
                marker: Marker::Circle,
                marker_size: 3.0,
                color_index: ci,
                draw_line: true,
            });
        }
        write_figure(
            out_dir,
            "fig3_loss_vs_flops",
            &table,
            &PlotSpec {
                title: "Training loss vs training FLOPs".into(),
                x_label: "training FLOPs".into(),
                y_label: "cross-entropy (nats/token)".into(),
                log_x: true,
                series,
            },
        )?;
    }

    // fig4: precision and recall vs temperature on seen prompts
    {
        let table = table_of(&RATE_COLUMNS, rates, RateRow::to_row);
        let mut cells: Vec<(String, String, u32, usize)> = rates
            .iter()
            .filter(|r| r.split == "seen")
            .map(|r| (r.model.clone(), r.level.clone(), r.epochs, r.params))
            .collect();
        cells.sort();
        cells.dedup();
        let mut series = Vec::new();
        for (ci, (model, level, epochs, params)) in cells.iter().enumerate() {
            for (kind, dashed) in [("precision", false), ("recall", true)] {
                let mut pts: Vec<(f64, f64)> = rates
                    .iter()
                    .filter(|r| {
                        &r.model == model
                            && &r.level == level
                            && r.epochs == *epochs
                            && r.split == "seen"
                    })
                    .map(|r| {
                        (
                            r.temperature,
                            if kind == "precision" {
                                r.precision
                            } else {
                                r.recall
                            },
                        )
                    })
                    .collect();
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                series.push(Series {
                    label: format!("{kind} {model}@{level} {epochs}ep"),
                    points: pts,
                    marker: Marker::for_index(epochs_marker_index(*epochs, epoch_grid)),
                    marker_size: size_radius(*params),
                    color_index: ci * 2 + usize::from(dashed),
                    draw_line: true,
                });
            }
        }
        write_figure(
            out_dir,
            "fig4_pr_temp",
            &table,
            &PlotSpec {
                title: "Precision and recall vs sampling temperature".into(),
                x_label: "temperature".into(),
                y_label: "precision / recall".into(),
                log_x: false,
                series,
            },
        )?;
    }

    // fig5: detector accuracy vs LM size
    let det_table = table_of(&DETECTOR_COLUMNS, detectors, DetectorRow::to_row);
    {
        let mut series = Vec::new();
        let mut kinds: Vec<(String, String)> = detectors
            .iter()
            .filter(|d| !d.skipped)
            .map(|d| (d.task.clone(), d.det_type.clone()))
            .collect();
        kinds.sort();
        kinds.dedup();
        for (ci, (task, det_type)) in kinds.iter().enumerate() {
            let mut pts: Vec<(f64, f64)> = detectors
                .iter()
                .filter(|d| !d.skipped && &d.task == task && &d.det_type == det_type)
                .map(|d| (d.params as f64, d.test_accuracy))
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            series.push(Series {
                label: format!("{task}/{det_type}"),
                points: pts,
                marker: Marker::for_index(ci),
                marker_size: 4.0,
                color_index: ci,
                draw_line: true,
            });
        }
        write_figure(
            out_dir,
            "fig5_accuracy",
            &det_table,
            &PlotSpec {
                title: "Detection accuracy vs LM size".into(),
                x_label: "non-embedding parameters".into(),
                y_label: "accuracy at threshold 0.5".into(),
                log_x: true,
                series,
            },
        )?;
    }

    // fig6: AUC-PR vs LM hallucination rate
    {
        let mut series = Vec::new();
        let mut kinds: Vec<(String, String)> = detectors
            .iter()
            .filter(|d| !d.skipped)
            .map(|d| (d.task.clone(), d.det_type.clone()))
            .collect();
        kinds.sort();
        kinds.dedup();
        for (ci, (task, det_type)) in kinds.iter().enumerate() {
            let rows: Vec<&DetectorRow> = detectors
                .iter()
                .filter(|d| !d.skipped && &d.task == task && &d.det_type == det_type)
                .collect();
            for d in rows {
                series.push(Series {
                    label: format!("{task}/{det_type} {}@{}", d.model, d.level),
                    points: vec![(d.lm_rate, d.test_aucpr)],
                    marker: Marker::for_index(ci),
                    marker_size: size_radius(d.params),
                    color_index: ci,
                    draw_line: false,
                });
            }
        }
        write_figure(
            out_dir,
            "fig6_aucpr_vs_rate",
            &det_table,
            &PlotSpec {
                title: "Detector AUC-PR vs LM hallucination rate".into(),
                x_label: "LM hallucination rate".into(),
                y_label: "test AUC-PR".into(),
                log_x: false,
                series,
            },
        )?;
    }

    // fig7: PR curves of the sentence-task full detectors
    {
        let table = table_of(&CURVE_COLUMNS, curves, CurveRow::to_row);
        let mut cells: Vec<(String, String, usize)> = curves
            .iter()
            .map(|c| (c.model.clone(), c.level.clone(), c.params))
            .collect();
        cells.sort();
        cells.dedup();
        let mut series = Vec::new();
        for (ci, (model, level, params)) in cells.iter().enumerate() {
            let mut pts: Vec<(f64, f64)> = curves
                .iter()
                .filter(|c| &c.model == model && &c.level == level)
                .map(|c| (c.recall, c.precision))
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            series.push(Series {
                label: format!("{model}@{level}"),
                points: pts,
                marker: Marker::Circle,
                marker_size: (size_radius(*params) - 1.0).max(1.5),
                color_index: ci,
                draw_line: true,
            });
        }
        write_figure(
            out_dir,
            "fig7_pr_curves",
            &table,
            &PlotSpec {
                title: "Detector PR curves (sentence task, full detectors)".into(),
                x_label: "recall".into(),
                y_label: "precision".into(),
                log_x: false,
                series,
            },
        )?;
    }

    // fig9: token-head AUC-PR per layer tap
    {
        let mut series = Vec::new();
        let mut cells: Vec<(String, String)> = detectors
            .iter()
            .filter(|d| !d.skipped && d.task == "token" && d.det_type == "head")
            .map(|d| (d.model.clone(), d.level.clone()))
            .collect();
        cells.sort();
        cells.dedup();
        for (ci, (model, level)) in cells.iter().enumerate() {
            let mut pts: Vec<(f64, f64)> = detectors
                .iter()
                .filter(|d| {
                    !d.skipped
                        && d.task == "token"
                        && d.det_type == "head"
                        && &d.model == model
                        && &d.level == level
                })
                .map(|d| (d.layer as f64, d.test_aucpr))
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            series.push(Series {
                label: format!("{model}@{level}"),
                points: pts,
                marker: Marker::Circle,
                marker_size: 3.5,
                color_index: ci,
                draw_line: true,
            });
        }
        write_figure(
            out_dir,
            "fig9_layer_sweep",
            &det_table,
            &PlotSpec {
                title: "Token-task head detector AUC-PR by layer tap".into(),
                x_label: "transformer block".into(),
                y_label: "test AUC-PR".into(),
                log_x: false,
                series,
            },
        )?;
    }

    // fig10: unseen rate vs seen rate per checkpoint
    {
        let table = table_of(&RATE_COLUMNS, rates, RateRow::to_row);
        let mut cells: Vec<(String, String, usize)> = rates
            .iter()
            .map(|r| (r.model.clone(), r.level.clone(), r.params))
            .collect();
        cells.sort();
        cells.dedup();
        let mut series = vec![Series {
            label: "y = x".into(),
            points: vec![(0.0, 0.0), (1.0, 1.0)],
            marker: Marker::Plus,
            marker_size: 0.5,
            color_index: 7,
            draw_line: true,
        }];
        for (ci, (model, level, params)) in cells.iter().enumerate() {
            let mut pts = Vec::new();
            let mut epochs: Vec<u32> = rates
                .iter()
                .filter(|r| &r.model == model && &r.level == level)
                .map(|r| r.epochs)
                .collect();
            epochs.sort_unstable();
            epochs.dedup();
            for e in epochs {
                let seen = rates.iter().find(|r| {
                    &r.model == model
                        && &r.level == level
                        && r.epochs == e
                        && r.split == "seen"
                        && r.temperature == 1.0
                });
                let ivs = rates.iter().find(|r| {
                    &r.model == model
                        && &r.level == level
                        && r.epochs == e
                        && r.split == "ivs"
                        && r.temperature == 1.0
                });
                if let (Some(s), Some(u)) = (seen, ivs) {
                    pts.push((s.rate, u.rate));
                }
            }
            series.push(Series {
                label: format!("{model}@{level}"),
                points: pts,
                marker: Marker::for_index(ci),
                marker_size: size_radius(*params),
                color_index: ci,
                draw_line: false,
            });
        }
        write_figure(
            out_dir,
            "fig10_seen_vs_unseen",
            &table,
            &PlotSpec {
                title: "Unseen vs seen hallucination rate (temp 1.0)".into(),
                x_label: "seen (training split) rate".into(),
                y_label: "unseen (IVS) rate".into(),
                log_x: false,
                series,
            },
        )?;
    }

    Ok(())
}
