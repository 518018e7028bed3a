//! Charts from result CSVs: risk against length, and true vs predicted
//! label trajectories.

use std::path::{Path, PathBuf};

use lengen_core::eval::EVAL_CSV_HEADER;

use crate::error::{HarnessError, Result};
use crate::svg::{LineChart, Series};

/// Components drawn in a trajectory overlay.
const TRAJECTORY_COMPONENTS: usize = 3;

/// One parsed row of a results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub model: String,
    pub family: String,
    pub t: usize,
    pub risk_mean: f64,
    pub risk_std: f64,
}

fn report_err(file: &Path, row: usize, detail: impl Into<String>) -> HarnessError {
    HarnessError::Report {
        file: file.to_path_buf(),
        row,
        detail: detail.into(),
    }
}

type Records = (Vec<String>, Vec<(usize, csv::StringRecord)>);

fn read_records(path: &Path) -> Result<Records> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    records_from(path, file)
}

/// Header and numbered records; `path` only labels errors.
fn records_from<R: std::io::Read>(path: &Path, source: R) -> Result<Records> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| report_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        rows.push((row, rec.map_err(|e| report_err(path, row, e.to_string()))?));
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(col)
        .ok_or_else(|| report_err(path, row, format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| report_err(path, row, format!("cannot parse {name} from {raw:?}")))
}

/// Reads a results CSV with the standard curve header. Empty files and
/// malformed rows are errors naming the file and row (header is row 1).
pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let (header, records) = read_records(path)?;
    if header != EVAL_CSV_HEADER {
        return Err(report_err(
            path,
            1,
            format!("expected header {:?}, found {header:?}", EVAL_CSV_HEADER.join(",")),
        ));
    }
    if records.is_empty() {
        return Err(report_err(path, 2, "no lengths to plot"));
    }
    records
        .iter()
        .map(|(row, rec)| {
            if rec.len() != EVAL_CSV_HEADER.len() {
                return Err(report_err(
                    path,
                    *row,
                    format!("expected {} fields, found {}", EVAL_CSV_HEADER.len(), rec.len()),
                ));
            }
            let out = CurveRow {
                model: rec[0].to_string(),
                family: rec[1].to_string(),
                t: field(path, *row, rec, 2, "t")?,
                risk_mean: field(path, *row, rec, 3, "risk_mean")?,
                risk_std: field(path, *row, rec, 4, "risk_std")?,
            };
            if out.t == 0 || !out.risk_mean.is_finite() {
                return Err(report_err(path, *row, "length must be >= 1 and risk finite"));
            }
            Ok(out)
        })
        .collect()
}

/// One series per `model` label, in order of first appearance.
pub fn risk_chart(rows: &[CurveRow], subtitle: &str, vlines: Vec<(f64, String)>) -> LineChart {
    let mut labels: Vec<String> = Vec::new();
    for r in rows {
        let label = format!("{} ({})", r.model, r.family);
        if !labels.contains(&label) {
            labels.push(label);
        }
    }
    let series = labels
        .iter()
        .map(|label| {
            let points = rows
                .iter()
                .filter(|r| &format!("{} ({})", r.model, r.family) == label)
                .map(|r| (r.t as f64, r.risk_mean))
                .collect();
            Series::new(label.clone(), points)
        })
        .collect();
    LineChart {
        title: "Test loss against sequence length".into(),
        subtitle: subtitle.into(),
        x_label: "sequence length t".into(),
        y_label: "mean squared error".into(),
        log_y: true,
        series,
        vlines,
    }
}

/// Overlay of true (solid) and predicted (dashed) label components along
/// one sequence, from a `t,true0..,pred0..` CSV.
pub fn trajectory_chart(path: &Path, subtitle: &str) -> Result<LineChart> {
    trajectory_chart_from(path, read_records(path)?, subtitle)
}

/// [`trajectory_chart`] for CSV bytes not yet on disk.
pub fn trajectory_chart_bytes(label: &Path, bytes: &[u8], subtitle: &str) -> Result<LineChart> {
    trajectory_chart_from(label, records_from(label, bytes)?, subtitle)
}

fn trajectory_chart_from(path: &Path, (header, records): Records, subtitle: &str) -> Result<LineChart> {
    let m = header.iter().filter(|h| h.starts_with("true")).count();
    if header.first().map(String::as_str) != Some("t") || m == 0 || header.len() != 1 + 2 * m {
        return Err(report_err(path, 1, format!("not a trajectory header: {header:?}")));
    }
    if records.is_empty() {
        return Err(report_err(path, 2, "no positions to plot"));
    }
    let shown = m.min(TRAJECTORY_COMPONENTS);
    let mut series = Vec::new();
    for c in 0..shown {
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (row, rec) in &records {
            if rec.len() != header.len() {
                return Err(report_err(path, *row, format!("expected {} fields, found {}", header.len(), rec.len())));
            }
            let t: f64 = field(path, *row, rec, 0, "t")?;
            truth.push((t, field(path, *row, rec, 1 + c, &header[1 + c])?));
            pred.push((t, field(path, *row, rec, 1 + m + c, &header[1 + m + c])?));
        }
        series.push(Series::new(format!("true y[{c}]"), truth));
        series.push(Series::new(format!("predicted y[{c}]"), pred).dashed());
    }
    Ok(LineChart {
        title: "Label trajectory: teacher vs student".into(),
        subtitle: subtitle.into(),
        x_label: "position t".into(),
        y_label: "label component".into(),
        log_y: false,
        series,
        vlines: Vec::new(),
    })
}

/// Run summary stored next to a CSV, used as the chart subtitle.
fn sibling_summary(path: &Path) -> String {
    let manifest = path.with_file_name("manifest.json");
    std::fs::read_to_string(manifest)
        .ok()
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| v.get("summary").and_then(|s| s.as_str()).map(str::to_owned))
        .unwrap_or_else(|| path.display().to_string())
}

/// Renders an SVG for each input CSV into `out_dir`, choosing the chart by
/// the CSV header. Returns the written paths.
pub fn emit_plots(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(HarnessError::Config("no input files to plot".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();
    for input in inputs {
        let subtitle = sibling_summary(input);
        let (header, _) = read_records(input)?;
        let chart = if header == EVAL_CSV_HEADER {
            risk_chart(&read_curve_csv(input)?, &subtitle, Vec::new())
        } else {
            trajectory_chart(input, &subtitle)?
        };
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
        let target = out_dir.join(format!("{stem}.svg"));
        std::fs::write(&target, chart.render()?).map_err(|e| HarnessError::io(&target, e))?;
        written.push(target);
    }
    Ok(written)
}
