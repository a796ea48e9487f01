//! Ground-truth and prediction CSV readers.
//!
//! Ground truth: `frame,x_min,y_min,x_max,y_max,distance_m,class`.
//! Predictions: `frame,x_min,y_min,x_max,y_max,class,confidence`.
//!
//! A ground-truth row whose `class` is empty (the other fields after `frame`
//! may be empty too) declares a frame without annotated objects, so that it
//! still counts towards the empty column.

use std::io::Read;
use std::path::Path;

use percheck_core::cm::ClassSet;
use percheck_core::detection::{BoundingBox, Corpus, DetectionRecord, PredictionRecord};

use crate::error::{CliError, Result};

pub const GT_HEADER: [&str; 7] = ["frame", "x_min", "y_min", "x_max", "y_max", "distance_m", "class"];
pub const PRED_HEADER: [&str; 7] = ["frame", "x_min", "y_min", "x_max", "y_max", "class", "confidence"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub records: Vec<DetectionRecord>,
    pub empty_frames: Vec<String>,
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(&e, 1))?;
    let found: Vec<&str> = header.iter().collect();
    // A zero-byte file has no header and no rows.
    if !found.is_empty() && found != expected {
        return Err(CliError::Parse {
            line: 1,
            msg: format!("expected header `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

fn csv_err(e: &csv::Error, fallback: usize) -> CliError {
    let line = e
        .position()
        .map_or(fallback, |p| p.line() as usize);
    CliError::Parse {
        line,
        msg: e.to_string(),
    }
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    line: usize,
}

impl Row<'_> {
    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn field(&self, i: usize) -> &str {
        &self.record[i]
    }

    fn number(&self, i: usize, name: &str) -> Result<f64> {
        self.field(i)
            .parse::<f64>()
            .map_err(|_| self.err(format!("`{name}`: `{}` is not a number", self.field(i))))
    }

    fn bbox(&self) -> Result<BoundingBox> {
        BoundingBox::new(
            self.number(1, "x_min")?,
            self.number(2, "y_min")?,
            self.number(3, "x_max")?,
            self.number(4, "y_max")?,
        )
        .map_err(|e| self.err(e.to_string()))
    }

    fn class(&self, i: usize, classes: &ClassSet) -> Result<usize> {
        let name = self.field(i);
        classes.index_of(name).ok_or_else(|| {
            self.err(format!(
                "unknown class `{name}` (expected one of {})",
                classes.names().join(", ")
            ))
        })
    }
}

pub fn read_ground_truth<R: Read>(input: R, classes: &ClassSet) -> Result<GroundTruth> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &GT_HEADER)?;
    let mut out = GroundTruth::default();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(&e, 0)),
        }
        let row = Row {
            line: record.position().map_or(0, |p| p.line() as usize),
            record: &record,
        };
        let frame = row.field(0);
        if frame.is_empty() {
            return Err(row.err("empty frame token"));
        }
        if row.field(6).is_empty() {
            out.empty_frames.push(frame.to_string());
            continue;
        }
        let distance = row.number(5, "distance_m")?;
        let rec = DetectionRecord::new(frame, row.bbox()?, distance, row.class(6, classes)?)
            .map_err(|e| row.err(e.to_string()))?;
        out.records.push(rec);
    }
    Ok(out)
}

pub fn read_predictions<R: Read>(input: R, classes: &ClassSet) -> Result<Vec<PredictionRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &PRED_HEADER)?;
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(&e, 0)),
        }
        let row = Row {
            line: record.position().map_or(0, |p| p.line() as usize),
            record: &record,
        };
        if row.field(0).is_empty() {
            return Err(row.err("empty frame token"));
        }
        let rec = PredictionRecord::new(
            row.field(0),
            row.bbox()?,
            row.class(5, classes)?,
            row.number(6, "confidence")?,
        )
        .map_err(|e| row.err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads both files and groups them into a corpus.
pub fn load_corpus(gt_path: &Path, pred_path: &Path, classes: &ClassSet) -> Result<Corpus> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| CliError::io(p, e));
    let gt = read_ground_truth(open(gt_path)?, classes).map_err(|e| e.in_file(gt_path))?;
    let preds = read_predictions(open(pred_path)?, classes).map_err(|e| e.in_file(pred_path))?;
    Ok(Corpus::from_records(gt.records, preds, gt.empty_frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassSet {
        ClassSet::new(["ped", "obs"]).unwrap()
    }

    #[test]
    fn reads_ground_truth_and_empty_frames() {
        let text = "frame,x_min,y_min,x_max,y_max,distance_m,class\n\
                    f1,0,0,10,10,5.5,ped\n\
                    f2,,,,,,\n\
                    f1, 20,20,30,30 ,12,obs\n";
        let gt = read_ground_truth(text.as_bytes(), &classes()).unwrap();
        assert_eq!(gt.records.len(), 2);
        assert_eq!(gt.records[1].class, 1);
        assert_eq!(gt.records[1].distance, 12.0);
        assert_eq!(gt.empty_frames, vec!["f2".to_string()]);
    }

    #[test]
    fn errors_name_the_line() {
        let text = "frame,x_min,y_min,x_max,y_max,distance_m,class\n\
                    f1,0,0,10,10,5,ped\n\
                    f1,0,0,10,10,-1,ped\n";
        match read_ground_truth(text.as_bytes(), &classes()) {
            Err(CliError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("distance"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let text = "frame,x_min,y_min,x_max,y_max,class,confidence\nf,0,0,1,1,car,0.5\n";
        match read_predictions(text.as_bytes(), &classes()) {
            Err(CliError::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("car"));
            }
            other => panic!("{other:?}"),
        }
        let text = "frame,x_min,y_min,x_max,y_max,class,confidence\nf,0,0,1,1,ped,x\n";
        assert!(matches!(
            read_predictions(text.as_bytes(), &classes()),
            Err(CliError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_wrong_header() {
        let text = "frame,x_min,y_min,x_max,y_max,class,distance_m\n";
        assert!(matches!(
            read_ground_truth(text.as_bytes(), &classes()),
            Err(CliError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_prediction_file_is_fine() {
        let text = "frame,x_min,y_min,x_max,y_max,class,confidence\n";
        assert!(read_predictions(text.as_bytes(), &classes()).unwrap().is_empty());
    }
}
