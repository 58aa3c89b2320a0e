use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SampleRecord;
use crate::error::{ensure, Result};

/// Patient-disjoint `(train, test)` split.
///
/// Patients are sorted before the seeded shuffle, so the result does not
/// depend on record order. The train side gets `round(train_frac · n)`
/// patients, kept within `1..n` so neither side is empty.
pub fn split_by_patient(
    records: &[SampleRecord],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    ensure!(
        train_frac > 0.0 && train_frac < 1.0,
        InvalidArgument,
        "train_frac {train_frac} must lie in (0, 1)"
    );
    let mut patients: Vec<&str> = records
        .iter()
        .map(|r| r.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = patients.len();
    ensure!(n >= 2, InvalidArgument, "need at least 2 patients to split, found {n}");
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let train_ids: BTreeSet<&str> = patients[..n_train].iter().copied().collect();
    let (train, test) = records
        .iter()
        .cloned()
        .partition(|r| train_ids.contains(r.patient_id.as_str()));
    Ok((train, test))
}
