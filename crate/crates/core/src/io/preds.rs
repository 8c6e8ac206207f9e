//! Prediction matrices as CSV.
//!
//! The header row lists class ids. An optional leading `video_id` column
//! groups rows by video (in order of first appearance); without it the whole
//! file is one video.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampler::PredictionMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPredictions {
    pub video_id: String,
    pub preds: PredictionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub class_ids: Vec<String>,
    pub videos: Vec<VideoPredictions>,
}

fn format_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: line,
        reason: reason.into(),
    }
}

/// Parse CSV text. `default_id` names the video when there is no
/// `video_id` column. Format errors carry the 1-based line number as offset.
pub fn parse_csv_preds(text: &str, default_id: &str, path: &Path) -> Result<PredictionTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| format_err(path, 1, e.to_string()))?
        .clone();
    let grouped = headers.get(0).is_some_and(|h| h.eq_ignore_ascii_case("video_id"));
    let class_ids: Vec<String> = headers.iter().skip(usize::from(grouped)).map(str::to_string).collect();
    if class_ids.is_empty() {
        return Err(format_err(path, 1, "no class columns"));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| format_err(path, line, e.to_string()))?;
        let id = if grouped { record.get(0).unwrap_or("").to_string() } else { default_id.to_string() };
        let values: Vec<f64> = record
            .iter()
            .skip(usize::from(grouped))
            .map(|f| f.parse::<f64>().map_err(|_| format_err(path, line, format!("not a number: `{f}`"))))
            .collect::<Result<_>>()?;
        if values.len() != class_ids.len() {
            return Err(format_err(
                path,
                line,
                format!("expected {} probabilities, found {}", class_ids.len(), values.len()),
            ));
        }
        let slot = match order.iter().position(|v| *v == id) {
            Some(s) => s,
            None => {
                order.push(id);
                rows.push(Vec::new());
                order.len() - 1
            }
        };
        rows[slot].push(values);
    }
    if order.is_empty() {
        return Err(format_err(path, 2, "no prediction rows"));
    }
    let videos = order
        .into_iter()
        .zip(rows)
        .map(|(video_id, r)| {
            Ok(VideoPredictions {
                preds: PredictionMatrix::new(Matrix::from_rows(&r)?)?,
                video_id,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PredictionTable { class_ids, videos })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
}

pub fn read_csv_preds(path: &Path) -> Result<PredictionTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_preds(&text, &stem(path), path)
}

/// Reads CSV, or `EMB1` when the file ends in `.emb1` (one video named after
/// the file, classes numbered from 0).
pub fn read_preds(path: &Path) -> Result<PredictionTable> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("emb1")) {
        let m = super::emb1::read_emb1(path)?;
        let class_ids = (0..m.cols()).map(|c| c.to_string()).collect();
        Ok(PredictionTable {
            class_ids,
            videos: vec![VideoPredictions {
                video_id: stem(path),
                preds: PredictionMatrix::new(m)?,
            }],
        })
    } else {
        read_csv_preds(path)
    }
}

pub fn write_csv_preds(path: &Path, table: &PredictionTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut header = vec!["video_id".to_string()];
    header.extend(table.class_ids.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for v in &table.videos {
        for r in v.preds.probs().iter_rows() {
            let mut rec = vec![v.video_id.clone()];
            rec.extend(r.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec).map_err(io_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    super::write_bytes(path, &bytes)
}
