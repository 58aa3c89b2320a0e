use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{ensure, Error, Result};

/// A polyline annotation of a tube, in annotation order.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct LineAnnotation {
    pub case_id: String,
    pub points: Vec<(f64, f64)>,
}

/// Bottom-most point of the line (largest `y`, image rows grow downward).
/// Ties go to the later point.
pub fn line_to_tip(line: &LineAnnotation) -> Result<(f64, f64)> {
    ensure!(
        !line.points.is_empty(),
        InvalidArgument,
        "line annotation for {} has no points",
        line.case_id
    );
    let mut best = line.points[0];
    for &p in &line.points[1..] {
        if p.1 >= best.1 {
            best = p;
        }
    }
    Ok(best)
}

/// Reads JSON-lines `{"case_id": ..., "points": [[x, y], ...]}`; blank lines are skipped.
pub fn read_line_annotations(path: impl AsRef<Path>) -> Result<Vec<LineAnnotation>> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message,
        };
        let ann: LineAnnotation = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if ann.points.is_empty() {
            return Err(parse_err("line annotation has no points".into()));
        }
        out.push(ann);
    }
    Ok(out)
}
