//! The shipped default recipe (`recipes/default`), read the way the CLI reads it.

use std::path::{Path, PathBuf};

use pointsentinel_core::ingest::{decode_pgm, encode_pgm16, split_by_patient, SampleRecord};
use pointsentinel_core::nn::HeadVariant;
use pointsentinel_core::synthgen::{generate_dataset, make_presence_set, SceneConfig, SyntheticScene};
use pointsentinel_core::trainer::{Sample, TrainConfig};
use serde_json::Value;

pub fn recipe_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes/default")
}

fn read(name: &str) -> Value {
    let path = recipe_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

pub struct Recipe {
    pub heads: Vec<HeadVariant>,
    pub seeds: Vec<u64>,
    pub val_frac: f64,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub delta: f64,
}

pub fn experiment() -> Recipe {
    let v = read("experiment.json");
    Recipe {
        heads: serde_json::from_value(v["heads"].clone()).unwrap(),
        seeds: serde_json::from_value(v["seeds"].clone()).unwrap(),
        val_frac: v["val_frac"].as_f64().unwrap(),
        split_seed: v["split_seed"].as_u64().unwrap(),
        train: serde_json::from_value(v["train"].clone()).unwrap(),
        delta: v["eval"]["delta_max_relative"].as_f64().unwrap(),
    }
}

/// Scenes described by one of the data configs, as the CLI would generate them.
pub fn scenes(name: &str) -> Vec<SyntheticScene> {
    let v = read(name);
    let scene: SceneConfig = serde_json::from_value(v["scene"].clone()).unwrap();
    let mut scenes = match v.get("presence") {
        Some(p) => make_presence_set(
            &scene,
            p["n_pos"].as_u64().unwrap() as usize,
            p["n_neg"].as_u64().unwrap() as usize,
        ),
        None => generate_dataset(
            &scene,
            v["n"].as_u64().unwrap() as usize,
            v["patient_group_size"].as_u64().unwrap() as usize,
        ),
    }
    .unwrap();
    // the CLI stores 16-bit PGMs; train on what it would read back
    for s in &mut scenes {
        s.image = decode_pgm(&encode_pgm16(&s.image)).unwrap();
    }
    scenes
}

/// Training and validation samples from the recipe's training data.
pub fn training_sets(recipe: &Recipe) -> (Vec<Sample>, Vec<Sample>) {
    let scenes = scenes("train-data.json");
    let records: Vec<SampleRecord> = scenes.iter().map(|s| s.record.clone()).collect();
    let (train, val) = split_by_patient(&records, 1.0 - recipe.val_frac, recipe.split_seed).unwrap();
    let by_id = |recs: Vec<SampleRecord>| -> Vec<Sample> {
        recs.iter()
            .map(|r| {
                let s = scenes.iter().find(|s| s.record.case_id == r.case_id).unwrap();
                Sample::from_scene(s).unwrap()
            })
            .collect()
    };
    (by_id(train), by_id(val))
}
