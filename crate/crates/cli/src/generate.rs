use std::fs;
use std::path::Path;

use pointsentinel_core::ingest::{save_image, write_records};
use pointsentinel_core::synthgen::{generate_dataset, make_presence_set};

use crate::config::{load_json, GenerateConfig};
use crate::dataset::{records_path, RECORDS_FILE};
use crate::error::{invalid, CliError, CliResult};
use crate::{Cli, Log};

pub fn run(cli: &Cli, config_path: &Path, log: Log) -> CliResult<()> {
    let mut cfg: GenerateConfig = load_json(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
    }
    let out = cli
        .output_dir
        .as_deref()
        .ok_or_else(|| invalid!("generate needs --output-dir"))?;
    let scenes = match &cfg.presence {
        Some(p) => make_presence_set(&cfg.scene, p.n_pos, p.n_neg)?,
        None => generate_dataset(&cfg.scene, cfg.n, cfg.patient_group_size)?,
    };

    let records_file = records_path(out);
    if records_file.exists() {
        if !cli.overwrite {
            return Err(invalid!(
                "{} already exists (pass --overwrite to replace it)",
                records_file.display()
            ));
        }
        let images = out.join("images");
        if images.exists() {
            fs::remove_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
        }
    }
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    for s in &scenes {
        save_image(out.join(&s.record.image_path), &s.image)?;
    }
    let records: Vec<_> = scenes.iter().map(|s| s.record.clone()).collect();
    write_records(&records, &records_file)?;

    let targets = scenes.iter().filter(|s| s.has_target).count();
    let distractors = scenes.iter().filter(|s| s.has_distractor).count();
    log.info(format!(
        "wrote {} cases ({targets} with target, {distractors} with distractor) to {}/{RECORDS_FILE}",
        scenes.len(),
        out.display()
    ));
    Ok(())
}
