use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "case_id",
    "patient_id",
    "target_class",
    "x",
    "y",
    "pixel_spacing_mm",
    "image_path",
    "height",
    "width",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    Carina,
    EttTip,
}

impl TargetClass {
    pub fn name(self) -> &'static str {
        match self {
            TargetClass::Carina => "carina",
            TargetClass::EttTip => "ett_tip",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "carina" => Some(TargetClass::Carina),
            "ett_tip" => Some(TargetClass::EttTip),
            _ => None,
        }
    }
}

/// One annotated case.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub case_id: String,
    pub patient_id: String,
    pub image_path: String,
    pub target_class: TargetClass,
    /// `(x, y)` in pixels; `None` when the case has no target.
    pub point: Option<(f64, f64)>,
    pub pixel_spacing_mm: Option<f64>,
    /// `(H, W)`
    pub image_dims: (usize, usize),
}

impl SampleRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (h, w) = self.image_dims;
        if h == 0 || w == 0 {
            return Err(format!("image dims {h}×{w} must be positive"));
        }
        if let Some((x, y)) = self.point {
            if !(0.0..w as f64).contains(&x) || !(0.0..h as f64).contains(&y) {
                return Err(format!("point ({x}, {y}) outside {h}×{w} image"));
            }
        }
        if let Some(s) = self.pixel_spacing_mm {
            if !(s > 0.0 && s.is_finite()) {
                return Err(format!("pixel spacing {s} must be positive"));
            }
        }
        Ok(())
    }

    /// Image diagonal `√(H² + W²)` in pixels.
    pub fn diagonal(&self) -> f64 {
        let (h, w) = self.image_dims;
        (h as f64).hypot(w as f64)
    }
}

fn opt_float(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("not a number: {s:?}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<SampleRecord, String> {
    if row.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()));
    }
    let target_class =
        TargetClass::parse(&row[2]).ok_or_else(|| format!("unknown target_class {:?}", &row[2]))?;
    let point = match (opt_float(&row[3])?, opt_float(&row[4])?) {
        (Some(x), Some(y)) => Some((x, y)),
        (None, None) => None,
        _ => return Err("x and y must both be present or both empty".into()),
    };
    let dim = |s: &str| s.parse::<usize>().map_err(|_| format!("invalid dimension {s:?}"));
    let rec = SampleRecord {
        case_id: row[0].to_string(),
        patient_id: row[1].to_string(),
        target_class,
        point,
        pixel_spacing_mm: opt_float(&row[5])?,
        image_path: row[6].to_string(),
        image_dims: (dim(&row[7])?, dim(&row[8])?),
    };
    if rec.case_id.is_empty() || rec.patient_id.is_empty() {
        return Err("case_id and patient_id are required".into());
    }
    rec.validate()?;
    Ok(rec)
}

/// Reads records; image files are not touched.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err(1, format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        out.push(parse_row(&row).map_err(|m| parse_err(line, m))?);
    }
    Ok(out)
}

pub fn write_records(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for r in records {
        r.validate()
            .map_err(|m| Error::InvalidArgument(format!("record {}: {m}", r.case_id)))?;
    }
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.case_id.clone(),
            r.patient_id.clone(),
            r.target_class.name().to_string(),
            fmt_opt(r.point.map(|p| p.0)),
            fmt_opt(r.point.map(|p| p.1)),
            fmt_opt(r.pixel_spacing_mm),
            r.image_path.clone(),
            r.image_dims.0.to_string(),
            r.image_dims.1.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
