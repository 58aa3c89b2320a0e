mod common;

use std::path::Path;

use common::*;
use pointsentinel_core::evalkit::{delong_test, precision_auc};

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// Minimal well-formedness check: balanced tags, one root, quoted attributes.
fn assert_well_formed_xml(text: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0;
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in <{tag}>");
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched </{name}>");
        } else if !tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
            stack.push(tag.split_whitespace().next().unwrap().to_string());
        } else if stack.is_empty() {
            roots += 1;
        }
        rest = &rest[end + 1..];
    }
    assert!(stack.is_empty(), "unclosed {stack:?}");
    assert_eq!(roots, 1);
}

fn train_and_evaluate(root: &Path, spec_text: &str) {
    write(&root.join("spec.json"), spec_text);
    ok(&["train", "spec.json", "-q"], root);
    ok(&["evaluate", "spec.json", "-q"], root);
}

#[test]
fn train_writes_checkpoint_and_log_per_job() {
    let ws = workspace();
    let root = ws.path();
    write(&root.join("spec.json"), &spec(&["spatial_softmax"], &[1, 2], 3, ""));
    ok(&["train", "spec.json", "-q"], root);
    let ckpts = files_in(&root.join("run/checkpoints"));
    assert_eq!(ckpts.len(), 2);
    for seed in [1, 2] {
        let (header, rows) = read_csv(&root.join(format!("run/logs/spatial_softmax-seed{seed}.csv")));
        assert_eq!(header, ["epoch", "train_loss", "val_precision_auc"]);
        assert_eq!(rows.len(), 3);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r[0], (i + 1).to_string());
            assert!(r[1].parse::<f64>().unwrap().is_finite());
            assert!((0.0..=1.0).contains(&r[2].parse::<f64>().unwrap()));
        }
    }
    let again = run(&["train", "spec.json", "-q"], root);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let ws = workspace();
    let root = ws.path();
    write(&root.join("spec.json"), &spec(&["pixelwise"], &[3], 4, ""));
    ok(&["train", "spec.json", "-q", "--output-dir", "full"], root);
    ok(&["train", "spec.json", "-q", "--output-dir", "split", "--stop-after", "2"], root);
    let (_, partial) = read_csv(&root.join("split/logs/pixelwise-seed3.csv"));
    assert_eq!(partial.len(), 2);
    ok(&["train", "spec.json", "-q", "--output-dir", "split", "--resume"], root);
    let name = "checkpoints/pixelwise-seed3.ckpt";
    assert_eq!(
        std::fs::read(root.join("full").join(name)).unwrap(),
        std::fs::read(root.join("split").join(name)).unwrap()
    );
    assert_eq!(
        std::fs::read(root.join("full/logs/pixelwise-seed3.csv")).unwrap(),
        std::fs::read(root.join("split/logs/pixelwise-seed3.csv")).unwrap()
    );
}

#[test]
fn divergence_exits_with_code_three_naming_the_job() {
    let ws = workspace();
    let root = ws.path();
    let text = spec(&["regression"], &[7], 3, r#", "optimizer": "sgd""#)
        .replace(r#""learning_rate": 0.003"#, r#""learning_rate": 1e30"#);
    write(&root.join("spec.json"), &text);
    let out = run(&["train", "spec.json", "-q"], root);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("regression") && err.contains("seed 7"), "{err}");
}

#[test]
fn evaluate_outputs_and_recomputed_metrics() {
    let ws = workspace();
    let root = ws.path();
    let heads = ["regression", "pixelwise", "spatial_softmax"];
    train_and_evaluate(root, &spec(&heads, &[1, 2], 2, ""));
    let run_dir = root.join("run");

    let (header, rows) = read_csv(&run_dir.join("metrics.csv"));
    assert_eq!(rows.len(), heads.len() * 2 + heads.len());
    let auc_col = column(&header, "precision_auc");
    let roc_col = column(&header, "roc_auc");
    for head in heads {
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == head).collect();
        assert_eq!(mine.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["1", "2", "mean"]);
        let mut seed_aucs = Vec::new();
        for r in &mine[..2] {
            let (ph, preds) = read_csv(&run_dir.join(format!("predictions/{head}-seed{}.csv", r[1])));
            let err_col = column(&ph, "relative_error");
            let errors: Vec<f64> = preds.iter().map(|p| p[err_col].parse().unwrap()).collect();
            let expected = 100.0 * precision_auc(&errors, 0.15).unwrap();
            let got: f64 = r[auc_col].parse().unwrap();
            assert_eq!(got, expected, "{head} seed {}", r[1]);
            seed_aucs.push(got);
            assert_eq!(r[roc_col].is_empty(), head == "regression");
            let lo: f64 = r[column(&header, "ci_lo")].parse().unwrap();
            let hi: f64 = r[column(&header, "ci_hi")].parse().unwrap();
            assert!(lo <= got && got <= hi);
            assert!(!r[column(&header, "mm_median")].is_empty());
        }
        let mean: f64 = mine[2][auc_col].parse().unwrap();
        assert!((mean - (seed_aucs[0] + seed_aucs[1]) / 2.0).abs() < 1e-12);
    }

    let svg = std::fs::read_to_string(run_dir.join("precision.svg")).unwrap();
    assert_well_formed_xml(&svg);
    assert_eq!(svg.matches("<polyline").count(), heads.len());

    let (ch, curve) = read_csv(&run_dir.join("curves/spatial_softmax-seed1.csv"));
    assert_eq!(ch, ["threshold", "fraction"]);
    assert_eq!(curve.len(), 21);

    let (_, presence) = read_csv(&run_dir.join("presence.csv"));
    assert_eq!(presence.len(), 4);
    let (dh, delong) = read_csv(&run_dir.join("delong.csv"));
    assert_eq!(delong.len(), 2);
    let (_, ss) = read_csv(&run_dir.join("presence/spatial_softmax-seed1.csv"));
    let (_, pc) = read_csv(&run_dir.join("presence/pixelwise-seed1.csv"));
    let labels: Vec<bool> = ss.iter().map(|r| r[1] == "1").collect();
    let score = |rows: &[Vec<String>]| rows.iter().map(|r| r[2].parse().unwrap()).collect::<Vec<f64>>();
    let d = delong_test(&score(&ss), &score(&pc), &labels).unwrap();
    let row = delong.iter().find(|r| r[2] == "1").unwrap();
    assert_eq!(row[column(&dh, "p")].parse::<f64>().unwrap(), d.p_two_sided);

    let refused = run(&["evaluate", "spec.json", "-q"], root);
    assert_eq!(refused.status.code(), Some(1));
    ok(&["evaluate", "spec.json", "-q", "--overwrite"], root);
    let (_, rows_again) = read_csv(&run_dir.join("metrics.csv"));
    assert_eq!(rows, rows_again);
}

#[test]
fn evaluate_without_checkpoint_fails() {
    let ws = workspace();
    let root = ws.path();
    write(&root.join("spec.json"), &spec(&["pixelwise"], &[1], 1, ""));
    let out = run(&["evaluate", "spec.json", "-q"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));
}

#[test]
fn compare_runs() {
    let ws = workspace();
    let root = ws.path();
    train_and_evaluate(root, &spec(&["pixelwise", "spatial_softmax"], &[1], 2, ""));
    // same checkpoints scored against a looser threshold
    let loose = spec(&["pixelwise", "spatial_softmax"], &[1], 2, "")
        .replace(r#""n_bootstrap": 200"#, r#""n_bootstrap": 200, "delta_max_relative": 0.3"#);
    write(&root.join("loose.json"), &loose);
    std::fs::create_dir_all(root.join("loose/checkpoints")).unwrap();
    for f in files_in(&root.join("run/checkpoints")) {
        std::fs::copy(&f, root.join("loose/checkpoints").join(f.file_name().unwrap())).unwrap();
    }
    ok(&["evaluate", "loose.json", "-q", "--output-dir", "loose"], root);
    std::fs::remove_dir_all(root.join("loose/presence")).unwrap();

    ok(&["compare", "run", "run", "-q", "--output-dir", "self"], root);
    let (_, rows) = read_csv(&root.join("self/comparison.csv"));
    assert!(!rows.is_empty());
    for r in &rows {
        assert!(r[5].is_empty() || r[5].parse::<f64>().unwrap() == 0.0, "{r:?}");
    }
    let (_, delong) = read_csv(&root.join("self/comparison_delong.csv"));
    assert_eq!(delong.len(), 2);
    assert!(delong.iter().all(|r| r[5].parse::<f64>().unwrap() == 1.0));

    ok(&["compare", "run", "loose", "-q", "--output-dir", "cmp"], root);
    let (_, ma) = read_csv(&root.join("run/metrics.csv"));
    let (mh, mb) = read_csv(&root.join("loose/metrics.csv"));
    let (_, rows) = read_csv(&root.join("cmp/comparison.csv"));
    for r in &rows {
        let col = column(&mh, &r[2]);
        let a = ma.iter().find(|m| m[0] == r[0] && m[1] == r[1]).unwrap();
        let b = mb.iter().find(|m| m[0] == r[0] && m[1] == r[1]).unwrap();
        if a[col].is_empty() || b[col].is_empty() {
            assert!(r[5].is_empty());
        } else {
            let delta = b[col].parse::<f64>().unwrap() - a[col].parse::<f64>().unwrap();
            assert_eq!(r[5].parse::<f64>().unwrap(), delta, "{r:?}");
        }
    }
    let (_, rows) = read_csv(&root.join("cmp/comparison.csv"));
    assert!(rows.iter().any(|r| r[2] == "precision_auc" && r[5].parse::<f64>().unwrap() > 0.0));

    let text = std::fs::read_to_string(root.join("loose/metrics.csv")).unwrap();
    let broken = text.replacen("mm_median", "mm_middle", 1);
    std::fs::write(root.join("loose/metrics.csv"), broken).unwrap();
    let out = run(&["compare", "run", "loose"], root);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column \"mm_median\""));
}
