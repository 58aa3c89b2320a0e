use std::fs;
use std::path::{Path, PathBuf};

use pointsentinel_core::evalkit::{
    bootstrap_auc_ci, delong_test, error_stats, localization_error, precision_auc, precision_curve, roc_auc,
    ErrorStats,
};
use pointsentinel_core::nn::{map_confidence, DetectionModel, HeadVariant, PredictedPoint};
use pointsentinel_core::trainer::load_checkpoint;

use crate::config::{job_name, ExperimentSpec};
use crate::dataset::{load_dataset, Case};
use crate::error::{invalid, CliError, CliResult};
use crate::svg::{precision_plot, Series};
use crate::train::{checkpoint_path, jobs, load_spec};
use crate::{job_threads, par_map, Cli, Log};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PRESENCE_FILE: &str = "presence.csv";
pub const DELONG_FILE: &str = "delong.csv";
pub const PLOT_FILE: &str = "precision.svg";

/// Columns of `metrics.csv` after `head` and `seed`. AUCs are in percent.
pub const METRIC_COLUMNS: [&str; 13] = [
    "n_cases",
    "precision_auc",
    "ci_lo",
    "ci_hi",
    "precision_auc_mm",
    "mm_mean",
    "mm_median",
    "mm_std",
    "mm_min",
    "mm_q1",
    "mm_q3",
    "mm_max",
    "roc_auc",
];

/// Label of the per-head row averaging all seeds.
pub const MEAN_ROW: &str = "mean";

pub fn presence_scores_path(out: &Path, head: HeadVariant, seed: u64) -> PathBuf {
    out.join("presence").join(format!("{}.csv", job_name(head, seed)))
}

/// Evaluation of one trained job.
pub struct JobResult {
    pub head: HeadVariant,
    pub seed: u64,
    pub predictions: Vec<PredictedPoint>,
    pub relative_errors: Vec<f64>,
    pub mm_errors: Option<Vec<f64>>,
    /// `(threshold, fraction)` on the relative scale.
    pub curve: Vec<(f64, f64)>,
    /// Metric values in [`METRIC_COLUMNS`] order.
    pub metrics: Vec<Option<f64>>,
    /// Max-map scores on the presence set, for map heads.
    pub presence_scores: Option<Vec<f64>>,
}

fn stats_values(stats: Option<&ErrorStats>) -> [Option<f64>; 7] {
    match stats {
        Some(s) => [s.mean, s.median, s.std, s.min, s.q1, s.q3, s.max].map(Some),
        None => [None; 7],
    }
}

fn load_model(out: &Path, head: HeadVariant, seed: u64) -> CliResult<DetectionModel> {
    let path = checkpoint_path(out, head, seed);
    if !path.exists() {
        return Err(CliError::Io(format!("missing checkpoint {}", path.display())));
    }
    Ok(load_checkpoint(&path)?.best_model()?)
}

/// Predicts on the test (and presence) sets and computes every metric of one job.
pub fn evaluate_job(
    spec: &ExperimentSpec,
    model: &DetectionModel,
    seed: u64,
    test: &[Case],
    presence: Option<&[Case]>,
) -> CliResult<JobResult> {
    let e = &spec.eval;
    let head = model.head();
    let predictions = test
        .iter()
        .map(|c| Ok(model.predict(&c.image)?.point))
        .collect::<CliResult<Vec<_>>>()?;
    let errors = predictions
        .iter()
        .zip(test)
        .map(|(p, c)| localization_error(p, &c.record))
        .collect::<Result<Vec<_>, _>>()?;
    let relative_errors: Vec<f64> = errors.iter().map(|e| e.relative).collect();
    let mm_errors: Option<Vec<f64>> = errors.iter().map(|e| e.absolute_mm).collect();

    let curve = precision_curve(&relative_errors, e.delta_max_relative, e.n_thresholds)?;
    let ci = bootstrap_auc_ci(&relative_errors, e.delta_max_relative, e.n_bootstrap, e.alpha, e.bootstrap_seed)?;
    let (auc_mm, stats) = match &mm_errors {
        Some(mm) => (Some(precision_auc(mm, e.delta_max_mm)?), Some(error_stats(mm)?)),
        None => (None, None),
    };

    let presence_scores = match presence {
        Some(cases) if head.is_map() => Some(
            cases
                .iter()
                .map(|c| {
                    let map = model.predict(&c.image)?.map.expect("map head");
                    Ok(map_confidence(&map))
                })
                .collect::<CliResult<Vec<f64>>>()?,
        ),
        _ => None,
    };
    let roc = match (&presence_scores, presence) {
        (Some(scores), Some(cases)) => {
            let (pos, neg) = split_scores(scores, cases);
            Some(roc_auc(&pos, &neg)?.auc)
        }
        _ => None,
    };

    let mut metrics = vec![
        Some(test.len() as f64),
        Some(100.0 * curve.auc),
        Some(100.0 * ci.lo),
        Some(100.0 * ci.hi),
        auc_mm.map(|a| 100.0 * a),
    ];
    metrics.extend(stats_values(stats.as_ref()));
    metrics.push(roc);
    Ok(JobResult {
        head,
        seed,
        predictions,
        relative_errors,
        mm_errors,
        curve: curve.thresholds.into_iter().zip(curve.fractions).collect(),
        metrics,
        presence_scores,
    })
}

fn labels(cases: &[Case]) -> Vec<bool> {
    cases.iter().map(|c| c.record.point.is_some()).collect()
}

fn split_scores(scores: &[f64], cases: &[Case]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (s, c) in scores.iter().zip(cases) {
        if c.record.point.is_some() {
            pos.push(*s);
        } else {
            neg.push(*s);
        }
    }
    (pos, neg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map_or_else(String::new, |x| x.to_string())
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Seed-mean of every metric column; empty when any seed lacks the value.
fn mean_row(results: &[&JobResult]) -> Vec<Option<f64>> {
    (0..METRIC_COLUMNS.len())
        .map(|k| {
            let vals: Option<Vec<f64>> = results.iter().map(|r| r.metrics[k]).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

fn write_metrics(path: &Path, spec: &ExperimentSpec, results: &[JobResult]) -> CliResult<()> {
    let mut w = writer(path)?;
    let mut header = vec!["head", "seed"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for &head in &spec.heads {
        let rows: Vec<&JobResult> = results.iter().filter(|r| r.head == head).collect();
        for r in &rows {
            let mut rec = vec![head.to_string(), r.seed.to_string()];
            rec.extend(r.metrics.iter().map(|v| fmt_opt(*v)));
            w.write_record(&rec)?;
        }
        let mut rec = vec![head.to_string(), MEAN_ROW.to_string()];
        rec.extend(mean_row(&rows).into_iter().map(fmt_opt));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

fn write_job_files(out: &Path, r: &JobResult, test: &[Case], presence: Option<&[Case]>) -> CliResult<()> {
    let name = job_name(r.head, r.seed);
    let path = out.join("curves").join(format!("{name}.csv"));
    let mut w = writer(&path)?;
    w.write_record(["threshold", "fraction"])?;
    for (t, f) in &r.curve {
        w.write_record([t.to_string(), f.to_string()])?;
    }
    finish(w, &path)?;

    let path = out.join("predictions").join(format!("{name}.csv"));
    let mut w = writer(&path)?;
    w.write_record(["case_id", "x", "y", "score", "gt_x", "gt_y", "relative_error", "error_mm"])?;
    for (i, (p, c)) in r.predictions.iter().zip(test).enumerate() {
        let (gx, gy) = c.record.point.expect("test cases carry points");
        w.write_record([
            c.record.case_id.clone(),
            p.x.to_string(),
            p.y.to_string(),
            fmt_opt(Some(p.score)),
            gx.to_string(),
            gy.to_string(),
            r.relative_errors[i].to_string(),
            fmt_opt(r.mm_errors.as_ref().map(|m| m[i])),
        ])?;
    }
    finish(w, &path)?;

    if let (Some(scores), Some(cases)) = (&r.presence_scores, presence) {
        let path = presence_scores_path(out, r.head, r.seed);
        let mut w = writer(&path)?;
        w.write_record(["case_id", "label", "score"])?;
        for (s, c) in scores.iter().zip(cases) {
            let label = if c.record.point.is_some() { "1" } else { "0" };
            w.write_record([c.record.case_id.as_str(), label, &s.to_string()])?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

fn write_presence(out: &Path, results: &[JobResult], cases: &[Case], pairs: &[(HeadVariant, HeadVariant)]) -> CliResult<()> {
    let path = out.join(PRESENCE_FILE);
    let mut w = writer(&path)?;
    w.write_record(["head", "seed", "roc_auc", "variance", "n_pos", "n_neg"])?;
    for r in results {
        if let Some(scores) = &r.presence_scores {
            let (pos, neg) = split_scores(scores, cases);
            let roc = roc_auc(&pos, &neg)?;
            w.write_record([
                r.head.to_string(),
                r.seed.to_string(),
                roc.auc.to_string(),
                roc.variance.to_string(),
                roc.n_pos.to_string(),
                roc.n_neg.to_string(),
            ])?;
        }
    }
    finish(w, &path)?;

    let path = out.join(DELONG_FILE);
    let mut w = writer(&path)?;
    w.write_record(["head_a", "head_b", "seed", "auc_a", "auc_b", "z", "p"])?;
    let labels = labels(cases);
    for &(a, b) in pairs {
        for ra in results.iter().filter(|r| r.head == a) {
            let Some(rb) = results.iter().find(|r| r.head == b && r.seed == ra.seed) else {
                continue;
            };
            let (Some(sa), Some(sb)) = (&ra.presence_scores, &rb.presence_scores) else {
                continue;
            };
            let d = delong_test(sa, sb, &labels)?;
            w.write_record([
                a.to_string(),
                b.to_string(),
                ra.seed.to_string(),
                d.auc_a.to_string(),
                d.auc_b.to_string(),
                d.z.to_string(),
                d.p_two_sided.to_string(),
            ])?;
        }
    }
    finish(w, &path)
}

fn write_plot(out: &Path, spec: &ExperimentSpec, results: &[JobResult]) -> CliResult<()> {
    let series: Vec<Series> = spec
        .heads
        .iter()
        .map(|&head| {
            let rows: Vec<&JobResult> = results.iter().filter(|r| r.head == head).collect();
            let n = rows.len() as f64;
            let points = (0..rows[0].curve.len())
                .map(|k| (rows[0].curve[k].0, rows.iter().map(|r| r.curve[k].1).sum::<f64>() / n))
                .collect();
            Series {
                label: head.to_string(),
                points,
            }
        })
        .collect();
    let svg = precision_plot(
        &format!("{}: precision plot (seed mean)", spec.name),
        "relative localization error threshold",
        spec.eval.delta_max_relative,
        &series,
    );
    let path = out.join(PLOT_FILE);
    fs::write(&path, svg).map_err(|e| CliError::io(&path, e))
}

pub fn run(cli: &Cli, spec_path: &Path, log: Log) -> CliResult<()> {
    let spec = load_spec(cli, spec_path)?;
    let out = spec.output_dir.clone();
    if out.join(METRICS_FILE).exists() && !cli.overwrite {
        return Err(invalid!(
            "{} already exists (pass --overwrite to replace it)",
            out.join(METRICS_FILE).display()
        ));
    }
    for &(a, b) in &spec.eval.delong_pairs {
        if !(a.is_map() && b.is_map()) {
            return Err(invalid!("DeLong pair {a}/{b}: only map heads produce presence scores"));
        }
    }
    let models = jobs(&spec)
        .into_iter()
        .map(|(head, seed)| Ok((load_model(&out, head, seed)?, seed)))
        .collect::<CliResult<Vec<_>>>()?;

    let test = load_dataset(&spec.test_dataset)?;
    if test.iter().any(|c| c.record.point.is_none()) {
        return Err(invalid!("test dataset {} has cases without a target point", spec.test_dataset.display()));
    }
    let presence = match &spec.presence_dataset {
        Some(dir) => {
            let cases = load_dataset(dir)?;
            let n_pos = cases.iter().filter(|c| c.record.point.is_some()).count();
            if n_pos == 0 || n_pos == cases.len() {
                return Err(invalid!("presence dataset {} needs positive and negative cases", dir.display()));
            }
            Some(cases)
        }
        None => None,
    };

    let results = par_map(&models, job_threads()?, |(model, seed)| {
        evaluate_job(&spec, model, *seed, &test, presence.as_deref())
            .map_err(|e| e.context(format!("{} seed {seed}", model.head())))
    })
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;

    for dir in ["curves", "predictions", "presence"] {
        let dir = out.join(dir);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    for r in &results {
        write_job_files(&out, r, &test, presence.as_deref())?;
    }
    if let Some(cases) = &presence {
        write_presence(&out, &results, cases, &spec.eval.delong_pairs)?;
    }
    write_plot(&out, &spec, &results)?;
    write_metrics(&out.join(METRICS_FILE), &spec, &results)?;

    for r in &results {
        let roc = r.metrics[12].map_or(String::new(), |a| format!(" presence auroc {a:.4}"));
        log.info(format!(
            "{} seed {}: precision auc {:.2}% [{:.2}, {:.2}]{roc}",
            r.head,
            r.seed,
            r.metrics[1].unwrap_or(f64::NAN),
            r.metrics[2].unwrap_or(f64::NAN),
            r.metrics[3].unwrap_or(f64::NAN)
        ));
    }
    log.info(format!("wrote {}", out.join(METRICS_FILE).display()));
    Ok(())
}
