use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scored, labeled time interval in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start_s: f64,
    pub end_s: f64,
    pub label: usize,
    pub score: f64,
}

impl Detection {
    pub fn new(start_s: f64, end_s: f64, label: usize, score: f64) -> Self {
        Self {
            start_s,
            end_s,
            label,
            score,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.start_s, self.end_s)
    }
}

/// Score descending; ties broken by earlier start, then lower label, then
/// earlier end.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start_s.total_cmp(&b.start_s))
        .then(a.label.cmp(&b.label))
        .then(a.end_s.total_cmp(&b.end_s))
}

pub fn sort_ranked(dets: &mut [Detection]) {
    dets.sort_by(rank_order);
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    #[serde(flatten)]
    pub detection: Detection,
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Annotation {
            record: i + 1,
            message: e.to_string(),
        })?;
        let d = &rec.detection;
        if !(d.start_s.is_finite() && d.end_s.is_finite() && d.end_s > d.start_s) {
            return Err(Error::Annotation {
                record: i + 1,
                message: format!("prediction interval [{}, {}] is degenerate", d.start_s, d.end_s),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
