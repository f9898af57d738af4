use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One action occurrence, used for both ground truth and predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub start_s: f64,
    pub end_s: f64,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Set on copies produced by annotation augmentation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
}

impl ActionInstance {
    pub fn new(start_s: f64, end_s: f64, label: usize) -> Self {
        Self {
            start_s,
            end_s,
            label,
            score: None,
            duplicate: false,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    /// Frames per second of the source video.
    pub fps: f64,
    /// Frames between consecutive feature steps.
    pub feature_stride: u32,
    pub duration_s: f64,
    #[serde(default)]
    pub instances: Vec<ActionInstance>,
}

/// Conversion between feature steps and seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub fps: f64,
    pub feature_stride: u32,
}

impl Timing {
    pub fn new(fps: f64, feature_stride: u32) -> Self {
        Self { fps, feature_stride }
    }

    pub fn step_seconds(&self) -> f64 {
        self.feature_stride as f64 / self.fps
    }

    pub fn to_seconds(&self, steps: f64) -> f64 {
        steps * self.feature_stride as f64 / self.fps
    }

    pub fn to_steps(&self, seconds: f64) -> f64 {
        seconds * self.fps / self.feature_stride as f64
    }
}

impl VideoAnnotation {
    /// Seconds covered by one feature step.
    pub fn step_seconds(&self) -> f64 {
        self.feature_stride as f64 / self.fps
    }

    pub fn timing(&self) -> Timing {
        Timing::new(self.fps, self.feature_stride)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if self.feature_stride < 1 {
            return Err("feature_stride must be at least 1".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(format!("invalid duration_s {}", self.duration_s));
        }
        for (i, inst) in self.instances.iter().enumerate() {
            let ok = inst.start_s.is_finite()
                && inst.end_s.is_finite()
                && 0.0 <= inst.start_s
                && inst.start_s < inst.end_s
                && inst.end_s <= self.duration_s;
            if !ok {
                return Err(format!(
                    "instance {i} [{}, {}] violates 0 <= start < end <= duration ({})",
                    inst.start_s, inst.end_s, self.duration_s
                ));
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines annotation records; blank lines are skipped. Errors
/// carry the 1-based record (line) number.
pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<VideoAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let record = i + 1;
        let line = line.map_err(|e| Error::Annotation {
            record,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: VideoAnnotation = serde_json::from_str(&line).map_err(|e| Error::Annotation {
            record,
            message: e.to_string(),
        })?;
        ann.validate()
            .map_err(|message| Error::Annotation { record, message })?;
        out.push(ann);
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<VideoAnnotation>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(BufReader::new(f))
}

pub fn write_annotations(mut w: impl Write, records: &[VideoAnnotation]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<annotations>", e))?;
    }
    Ok(())
}

pub fn save_annotations(path: impl AsRef<Path>, records: &[VideoAnnotation]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_annotations(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Instance count per category over all videos; labels `>= num_classes` are
/// counted into an extended histogram.
pub fn class_histogram(records: &[VideoAnnotation], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0usize; num_classes];
    for inst in records.iter().flat_map(|r| &r.instances) {
        if inst.label >= h.len() {
            h.resize(inst.label + 1, 0);
        }
        h[inst.label] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(instances: Vec<ActionInstance>) -> VideoAnnotation {
        VideoAnnotation {
            video_id: "v0".into(),
            fps: 28.0,
            feature_stride: 4,
            duration_s: 10.0,
            instances,
        }
    }

    #[test]
    fn empty_instances_round_trip() {
        let v = vec![video(vec![])];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &v).unwrap();
        assert_eq!(parse_annotations(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn instances_round_trip() {
        let mut dup = ActionInstance::new(3.0, 4.5, 1);
        dup.duplicate = true;
        let v = vec![video(vec![ActionInstance::new(0.0, 2.0, 0), dup])];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &v).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.matches("duplicate").count(), 1);
        assert_eq!(parse_annotations(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn zero_length_instance_rejected_with_record() {
        let good = serde_json::to_string(&video(vec![])).unwrap();
        let bad = serde_json::to_string(&video(vec![ActionInstance::new(2.0, 2.0, 0)])).unwrap();
        let text = format!("{good}\n\n{bad}\n");
        let err = parse_annotations(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Annotation { record: 3, .. }), "{err}");
    }

    #[test]
    fn out_of_range_instance_rejected() {
        let v = video(vec![ActionInstance::new(9.0, 11.0, 0)]);
        assert!(v.validate().is_err());
        let text = "{not json}\n";
        assert!(matches!(
            parse_annotations(text.as_bytes()),
            Err(Error::Annotation { record: 1, .. })
        ));
    }

    #[test]
    fn histogram() {
        let v = video(vec![
            ActionInstance::new(0.0, 1.0, 0),
            ActionInstance::new(1.0, 2.0, 0),
            ActionInstance::new(2.0, 3.0, 2),
        ]);
        assert_eq!(class_histogram(&[v], 3), vec![2, 0, 1]);
    }

    proptest::proptest! {
        #[test]
        fn timestamps_round_trip_exactly(start in 0.0..5.0f64, len in 1e-9..5.0f64, label in 0usize..20) {
            let records = vec![video(vec![ActionInstance::new(start, start + len, label)])];
            let mut text = Vec::new();
            write_annotations(&mut text, &records).unwrap();
            proptest::prop_assert_eq!(parse_annotations(text.as_slice()).unwrap(), records);
        }
    }
}
