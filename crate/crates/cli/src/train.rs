use std::fs;
use std::path::{Path, PathBuf};

use pointsentinel_core::ingest::split_by_patient;
use pointsentinel_core::nn::HeadVariant;
use pointsentinel_core::trainer::{load_checkpoint, save_checkpoint, train_epochs, Checkpoint, EpochRecord, Sample};

use crate::config::{job_name, load_json, ExperimentSpec};
use crate::dataset::{load_cases, load_records};
use crate::error::{invalid, CliError, CliResult};
use crate::{job_threads, par_map, Cli, Log};

/// An experiment spec with command-line overrides applied.
pub fn load_spec(cli: &Cli, path: &Path) -> CliResult<ExperimentSpec> {
    let mut spec: ExperimentSpec = load_json(path)?;
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    if let Some(dir) = &cli.output_dir {
        spec.output_dir = dir.clone();
    }
    spec.validate()?;
    Ok(spec)
}

pub fn jobs(spec: &ExperimentSpec) -> Vec<(HeadVariant, u64)> {
    spec.heads
        .iter()
        .flat_map(|&h| spec.seeds.iter().map(move |&s| (h, s)))
        .collect()
}

pub fn checkpoint_path(out: &Path, head: HeadVariant, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("{}.ckpt", job_name(head, seed)))
}

pub fn log_path(out: &Path, head: HeadVariant, seed: u64) -> PathBuf {
    out.join("logs").join(format!("{}.csv", job_name(head, seed)))
}

fn write_log(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    if history.is_empty() {
        w.write_record(["epoch", "train_loss", "val_precision_auc"])?;
    }
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Training and validation samples: the training dataset split by patient.
pub fn training_sets(spec: &ExperimentSpec) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let records = load_records(&spec.train_dataset)?;
    let (train, val) = split_by_patient(&records, 1.0 - spec.val_frac, spec.split_seed)?;
    let to_samples = |records| -> CliResult<Vec<Sample>> {
        load_cases(&spec.train_dataset, records)?
            .into_iter()
            .map(|c| Ok(Sample::from_record(&c.record, c.image)?))
            .collect()
    };
    Ok((to_samples(train)?, to_samples(val)?))
}

struct JobContext<'a> {
    spec: &'a ExperimentSpec,
    train: &'a [Sample],
    val: &'a [Sample],
    resume: bool,
    overwrite: bool,
    stop_after: Option<usize>,
    log: Log,
}

fn run_job(ctx: &JobContext, head: HeadVariant, seed: u64) -> CliResult<()> {
    let out = &ctx.spec.output_dir;
    let path = checkpoint_path(out, head, seed);
    let cfg = ctx.spec.job_config(head, seed);
    let mut ckpt = if path.exists() && ctx.resume {
        let ckpt = load_checkpoint(&path)?;
        if ckpt.config != cfg {
            return Err(invalid!(
                "{}: checkpoint was trained with a different configuration",
                path.display()
            ));
        }
        ckpt
    } else if path.exists() && !ctx.overwrite {
        return Err(invalid!(
            "{} already exists (pass --resume or --overwrite)",
            path.display()
        ));
    } else {
        Checkpoint::initial(cfg)?
    };
    let log_file = log_path(out, head, seed);
    let target = ctx.stop_after.map_or(ckpt.config.epochs, |k| k.min(ckpt.config.epochs));
    write_log(&log_file, &ckpt.history)?;
    while ckpt.epoch < target {
        // one epoch at a time so every epoch leaves a checkpoint behind
        let full = ckpt.config.epochs;
        ckpt.config.epochs = ckpt.epoch + 1;
        let step = train_epochs(&mut ckpt, ctx.train, ctx.val, |_| {});
        ckpt.config.epochs = full;
        step?;
        save_checkpoint(&ckpt, &path)?;
        write_log(&log_file, &ckpt.history)?;
        let rec = ckpt.history.last().expect("epoch recorded");
        ctx.log.info(format!(
            "{head} seed {seed}: epoch {}/{full} loss {:.5} val precision {:.4}",
            rec.epoch, rec.train_loss, rec.val_precision_auc
        ));
    }
    Ok(())
}

pub fn run(cli: &Cli, spec_path: &Path, resume: bool, stop_after: Option<usize>, log: Log) -> CliResult<()> {
    let spec = load_spec(cli, spec_path)?;
    let out = &spec.output_dir;
    for dir in [out.join("checkpoints"), out.join("logs")] {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let (train, val) = training_sets(&spec)?;
    log.info(format!(
        "{}: {} training and {} validation cases",
        spec.name,
        train.len(),
        val.len()
    ));
    let ctx = JobContext {
        spec: &spec,
        train: &train,
        val: &val,
        resume,
        overwrite: cli.overwrite,
        stop_after,
        log,
    };
    let jobs = jobs(&spec);
    let results = par_map(&jobs, job_threads()?, |&(head, seed)| {
        run_job(&ctx, head, seed).map_err(|e| e.context(format!("{head} seed {seed}")))
    });
    results.into_iter().collect::<CliResult<Vec<()>>>()?;
    log.info(format!("trained {} jobs into {}", jobs.len(), out.display()));
    Ok(())
}
