//! On-disk datasets: `records.csv` plus images referenced relative to the dataset directory.

use std::path::{Path, PathBuf};

use pointsentinel_core::ingest::{load_image, read_records, GrayImage, SampleRecord};

use crate::error::CliResult;

pub const RECORDS_FILE: &str = "records.csv";

pub struct Case {
    pub record: SampleRecord,
    pub image: GrayImage,
}

pub fn records_path(dir: &Path) -> PathBuf {
    dir.join(RECORDS_FILE)
}

pub fn load_records(dir: &Path) -> CliResult<Vec<SampleRecord>> {
    Ok(read_records(records_path(dir))?)
}

pub fn load_cases(dir: &Path, records: Vec<SampleRecord>) -> CliResult<Vec<Case>> {
    records
        .into_iter()
        .map(|record| {
            let image = load_image(dir.join(&record.image_path))?;
            if image.dims() != record.image_dims {
                return Err(crate::error::invalid!(
                    "case {}: image is {:?}, record says {:?}",
                    record.case_id,
                    image.dims(),
                    record.image_dims
                ));
            }
            Ok(Case { record, image })
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> CliResult<Vec<Case>> {
    let records = load_records(dir)?;
    load_cases(dir, records)
}
