use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pointsentinel_core::evalkit::delong_test;
use pointsentinel_core::nn::HeadVariant;

use crate::error::{invalid, CliError, CliResult};
use crate::evaluate::{presence_scores_path, METRICS_FILE, METRIC_COLUMNS};
use crate::{Cli, Log};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_DELONG_FILE: &str = "comparison_delong.csv";

type Key = (String, String);

/// `metrics.csv` of one run, keyed by `(head, seed)`.
pub struct MetricsTable {
    pub rows: BTreeMap<Key, Vec<Option<f64>>>,
}

pub fn read_metrics(run: &Path) -> CliResult<MetricsTable> {
    let path = run.join(METRICS_FILE);
    let mut r = csv::Reader::from_path(&path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid!("{}: missing column {name:?}", path.display()))
    };
    let head_col = col("head")?;
    let seed_col = col("seed")?;
    let cols = METRIC_COLUMNS.iter().map(|c| col(c)).collect::<CliResult<Vec<_>>>()?;
    let mut rows = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let key = (rec[head_col].to_string(), rec[seed_col].to_string());
        let values = cols
            .iter()
            .zip(METRIC_COLUMNS)
            .map(|(&c, name)| {
                let s = rec.get(c).unwrap_or("").trim();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| {
                        invalid!("{}: row {}: column {name}: bad number {s:?}", path.display(), line + 2)
                    })
                }
            })
            .collect::<CliResult<Vec<_>>>()?;
        if rows.insert(key.clone(), values).is_some() {
            return Err(invalid!("{}: duplicate row {}/{}", path.display(), key.0, key.1));
        }
    }
    Ok(MetricsTable { rows })
}

/// Presence scores of one job: `(case_id, label, score)`.
fn read_presence_scores(path: &Path) -> CliResult<Vec<(String, bool, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let bad = || invalid!("{}: malformed presence row {:?}", path.display(), rec);
            let label = match rec.get(1) {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad()),
            };
            let score = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            Ok((rec[0].to_string(), label, score))
        })
        .collect()
}

pub struct DelongRow {
    pub head: String,
    pub seed: String,
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p: f64,
}

fn compare_presence(run_a: &Path, run_b: &Path, key: &Key) -> CliResult<Option<DelongRow>> {
    let (Ok(head), Ok(seed)) = (key.0.parse::<HeadVariant>(), key.1.parse::<u64>()) else {
        return Ok(None);
    };
    let (pa, pb) = (presence_scores_path(run_a, head, seed), presence_scores_path(run_b, head, seed));
    if !(pa.exists() && pb.exists()) {
        return Ok(None);
    }
    let (a, b) = (read_presence_scores(&pa)?, read_presence_scores(&pb)?);
    let same_cases = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1 == y.1);
    if !same_cases {
        return Err(invalid!(
            "{} and {} score different presence cases",
            pa.display(),
            pb.display()
        ));
    }
    let labels: Vec<bool> = a.iter().map(|x| x.1).collect();
    let sa: Vec<f64> = a.iter().map(|x| x.2).collect();
    let sb: Vec<f64> = b.iter().map(|x| x.2).collect();
    let d = delong_test(&sa, &sb, &labels)?;
    Ok(Some(DelongRow {
        head: key.0.clone(),
        seed: key.1.clone(),
        auc_a: d.auc_a,
        auc_b: d.auc_b,
        z: d.z,
        p: d.p_two_sided,
    }))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn run(cli: &Cli, run_a: &Path, run_b: &Path, log: Log) -> CliResult<()> {
    let a = read_metrics(run_a)?;
    let b = read_metrics(run_b)?;
    if a.rows.keys().ne(b.rows.keys()) {
        return Err(invalid!(
            "{} and {} cover different head/seed rows",
            run_a.display(),
            run_b.display()
        ));
    }

    let mut table = vec![["head", "seed", "metric", "value_a", "value_b", "delta"].map(String::from).to_vec()];
    for (key, va) in &a.rows {
        let vb = &b.rows[key];
        for (k, name) in METRIC_COLUMNS.iter().enumerate() {
            let delta = va[k].zip(vb[k]).map(|(x, y)| y - x);
            table.push(vec![
                key.0.clone(),
                key.1.clone(),
                name.to_string(),
                fmt_opt(va[k]),
                fmt_opt(vb[k]),
                fmt_opt(delta),
            ]);
        }
    }
    let delong = a
        .rows
        .keys()
        .map(|key| compare_presence(run_a, run_b, key))
        .collect::<CliResult<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();

    for row in &table {
        log.info(row.join("\t"));
    }
    for d in &delong {
        log.info(format!(
            "delong {} seed {}: auc {:.4} vs {:.4}, z {:.3}, p {:.4}",
            d.head, d.seed, d.auc_a, d.auc_b, d.z, d.p
        ));
    }

    if let Some(out) = &cli.output_dir {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = out.join(COMPARISON_FILE);
        if path.exists() && !cli.overwrite {
            return Err(invalid!("{} already exists (pass --overwrite to replace it)", path.display()));
        }
        let mut w = csv::Writer::from_path(&path)?;
        for row in &table {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        let path = out.join(COMPARISON_DELONG_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["head", "seed", "auc_a", "auc_b", "z", "p"])?;
        for d in &delong {
            w.write_record([
                d.head.clone(),
                d.seed.clone(),
                d.auc_a.to_string(),
                d.auc_b.to_string(),
                d.z.to_string(),
                d.p.to_string(),
            ])?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
