//! Sample records, line annotations, patient-level splits and image I/O.

mod image;
mod lines;
mod records;
mod split;

pub use image::{decode_pgm, encode_pgm16, load_image, save_image, GrayImage};
pub use lines::{line_to_tip, read_line_annotations, LineAnnotation};
pub use records::{read_records, write_records, SampleRecord, TargetClass, CSV_HEADER};
pub use split::split_by_patient;
