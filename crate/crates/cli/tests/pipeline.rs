mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::json;

use common::{files_with_ext, workspace, write_brainscore, Workspace};
use texgram::{Overrides, Pipeline, PipelineConfig, Stage};
use texgram_core::engine::{save_model_bundle, InputSpec, LayerKind, LayerNode, NetworkGraph};
use texgram_core::Tensor;

const MODELS: [(&str, u64); 3] = [("alpha", 11), ("beta", 12), ("gamma", 13)];

fn run(ws: &Workspace, stage: Stage, o: Overrides) -> Result<Pipeline, texgram::PipelineError> {
    let settings = PipelineConfig::load(&ws.config)?.apply(o)?;
    let mut p = Pipeline::new(settings);
    p.run(stage)?;
    Ok(p)
}

fn cli(ws: &Workspace, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_texgram"))
        .args(args)
        .arg("--config")
        .arg(&ws.config)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn full_workspace() -> Workspace {
    let ws = workspace(&MODELS, 10, 16, &[6, 8], json!({"brainscore_csv": "brainscore.csv", "mi_method": "plugin"}));
    write_brainscore(&ws.path("brainscore.csv"), &["alpha", "beta", "gamma", "unused"]);
    ws
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn full_run_emits_report_and_is_reproducible() {
    let ws = full_workspace();
    run(&ws, Stage::Report, Overrides::default()).unwrap();
    let report = ws.path("out/report");

    let corr = csv_rows(&report.join("correlation.csv"));
    assert_eq!(corr[0], "metric,r,p,n,significant");
    assert_eq!(corr.len(), 8);
    assert!(corr[1].starts_with("average_vision,") && corr[7].starts_with("IT,"));
    assert!(corr[1..].iter().all(|r| r.ends_with(",3,true") || r.ends_with(",3,false")));

    for f in ["mi_per_layer.svg", "mi_per_layer.csv", "correlation_scatter.svg", "correlation_scatter.csv", "mi.csv", "best_mi.csv"] {
        assert!(report.join(f).is_file(), "missing {f}");
    }
    for (m, _) in MODELS {
        for l in 1..=2 {
            let png = report.join(format!("heatmaps/{m}_layer{l}.png"));
            assert_eq!(image::image_dimensions(&png).unwrap(), (30, 30));
            assert_eq!(csv_rows(&png.with_extension("csv")).len(), 31);
        }
    }
    let per_layer = csv_rows(&report.join("mi_per_layer.csv"));
    assert_eq!(per_layer.len(), 1 + 3 * 2, "one row per model and tap");
    let mi = csv_rows(&report.join("mi.csv"));
    assert_eq!(mi.len(), 1 + 3 * 2 * 2);
    assert!(mi[1..].iter().all(|r| r.split(',').count() == 5));

    // cache hits reproduce every CSV byte for byte
    let before = files_with_ext(&ws.path("out"), "csv");
    fs::remove_dir_all(ws.path("out")).unwrap();
    run(&ws, Stage::Report, Overrides::default()).unwrap();
    assert_eq!(files_with_ext(&ws.path("out"), "csv"), before);

    // dropping downstream entries recomputes them identically
    for stage in ["cluster", "mi", "correlate"] {
        fs::remove_dir_all(ws.path(&format!("cache/{stage}"))).unwrap();
    }
    fs::remove_dir_all(ws.path("out")).unwrap();
    run(&ws, Stage::Report, Overrides::default()).unwrap();
    assert_eq!(files_with_ext(&ws.path("out"), "csv"), before);
}

#[test]
fn separable_families_reach_the_mi_ceiling() {
    let ws = workspace(&[("desk", 5)], 10, 16, &[8, 8], json!({"mi_method": "plugin"}));
    let mut p = run(&ws, Stage::Mi, Overrides::default()).unwrap();
    let (all, best) = p.mi_all().unwrap();
    assert_eq!(all.len(), 4);
    assert!((best[0].mi_bits - 3f64.log2()).abs() < 1e-9, "{best:?}");
    let best_file = csv_rows(&ws.path("out/best_mi.csv"));
    assert_eq!(best_file[0], "model,method,layer_index,mi_bits");
    assert!(best_file[1].starts_with("desk,plugin,"));
}

#[test]
fn cluster_outputs_respect_k_and_layer() {
    let ws = workspace(&[("m", 3)], 6, 12, &[4, 4, 4], json!({}));
    run(&ws, Stage::Cluster, Overrides { layer: Some(2), k: Some(4), ..Default::default() }).unwrap();
    let dir = ws.path("out/cluster/m");
    assert!(!dir.join("layer1_assignment.csv").exists());
    let rows = csv_rows(&dir.join("layer2_assignment.csv"));
    assert_eq!(rows[0], "item_id,cluster");
    assert_eq!(rows.len(), 19);
    let labels: std::collections::BTreeSet<&str> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 4);
    let dend = csv_rows(&dir.join("layer2_dendrogram.csv"));
    assert_eq!(dend[0], "merge_index,left,right,height,size");
    assert_eq!(dend.len(), 18);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.path("out/rdm/m/layer2.json")).unwrap()).unwrap();
    assert_eq!(side["size"], 18);
    assert_eq!(side["layer"], "relu2");
    assert_eq!(side["distance_variant"], "upper-tri");
    assert_eq!(fs::metadata(ws.path("out/rdm/m/layer2.bin")).unwrap().len(), 4 * 18 * 18);
    let taps = csv_rows(&ws.path("out/gram/m/taps.csv"));
    assert_eq!(taps[1], "1,relu1,4,12,12,10");
}

#[test]
fn synthesis_stage_writes_image_and_trace() {
    let ws = workspace(&[("m", 8)], 2, 12, &[4, 6], json!({"synthesis": {"exemplars": ["data/banded/banded_000.png"], "iterations": 20}}));
    run(&ws, Stage::Synthesize, Overrides { seed: Some(3), ..Default::default() }).unwrap();
    let png = ws.path("out/synthesis/m/banded_000.png");
    assert_eq!(image::image_dimensions(&png).unwrap(), (12, 12));
    let trace = csv_rows(&ws.path("out/synthesis/m/banded_000_trace.csv"));
    assert_eq!(trace[0], "iteration,total,relu1,relu2");
    assert!(trace.len() > 2);
    let first: f64 = trace[1].split(',').nth(1).unwrap().parse().unwrap();
    let last: f64 = trace.last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last < first);
}

#[test]
fn exit_codes() {
    let ws = full_workspace();
    let ok = cli(&ws, &["mi", "--model", "beta", "--mi-method", "nsb"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    assert_eq!(cli(&ws, &["mi", "--model", "nobody"]).status.code(), Some(2));
    assert_eq!(cli(&ws, &["mi", "--distance", "cosine"]).status.code(), Some(2));
    assert_eq!(cli(&ws, &["rdm", "--layer", "9"]).status.code(), Some(2));
    let missing = Command::new(env!("CARGO_BIN_EXE_texgram")).args(["mi", "--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    // tampering with a cached artifact is a data error
    let entry = fs::read_dir(ws.path("cache/mi")).unwrap().next().unwrap().unwrap().path();
    fs::write(entry.join("mi.csv"), "model\n").unwrap();
    let stale = cli(&ws, &["mi", "--model", "beta"]);
    assert_eq!(stale.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&stale.stderr).contains("stale cache entry"));

    fs::create_dir(ws.path("data/hollow")).unwrap();
    let empty = cli(&ws, &["extract"]);
    assert_eq!(empty.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("`hollow`"));
}

#[test]
fn overflowing_activations_are_a_numerical_failure() {
    let ws = workspace(&[], 2, 8, &[2], json!({}));
    let spec = InputSpec { shape: [3, 8, 8], ..InputSpec::imagenet() };
    let conv = LayerKind::Conv2d {
        weight: Tensor::filled(vec![2, 3, 3, 3], 1e18),
        bias: None,
        stride: [1, 1],
        padding: [1, 1],
    };
    let net = NetworkGraph::new("huge", spec, vec![LayerNode::new("conv", conv, &["input"])], vec!["conv".into()]).unwrap();
    save_model_bundle(&net, &ws.path("bundles/huge")).unwrap();
    fs::write(&ws.config, json!({"models": [{"name": "huge", "bundle": "bundles/huge"}], "dataset_root": "data"}).to_string()).unwrap();
    let out = cli(&ws, &["gram"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
