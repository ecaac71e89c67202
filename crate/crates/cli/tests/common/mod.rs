#![allow(dead_code)]

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use texgram_core::engine::{save_model_bundle, InputSpec};
use texgram_core::synthetic::conv_relu_stack;

pub const FAMILIES: [&str; 3] = ["banded", "checkered", "mottled"];

/// One image of a texture family. Families differ in colour balance and
/// spatial frequency; phase, offsets and pixel noise vary per image.
pub fn texture(family: usize, index: usize, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 * family as u64 + index as u64);
    let phase = rng.random::<f64>() * TAU;
    let (ox, oy) = (rng.random_range(0..8u32), rng.random_range(0..8u32));
    let waves: Vec<(f64, f64, f64)> =
        (0..3).map(|_| (rng.random_range(0.02..0.08), rng.random_range(0.02..0.08), rng.random::<f64>() * TAU)).collect();
    let mut img = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let noise = rng.random_range(-12.0..12.0);
            let (xf, yf) = (x as f64, y as f64);
            let px = match family {
                0 => {
                    let s = 0.5 + 0.5 * (TAU * yf / 8.0 + phase).sin();
                    [200.0 * s + 40.0, 60.0 * s + 30.0, 40.0]
                }
                1 => {
                    let on = (((x + ox) / 2) + ((y + oy) / 2)) % 2 == 0;
                    if on { [30.0, 60.0, 220.0] } else { [10.0, 20.0, 90.0] }
                }
                _ => {
                    let s: f64 = waves.iter().map(|(fx, fy, p)| (TAU * (fx * xf + fy * yf) + p).sin()).sum::<f64>() / 3.0;
                    [70.0, 150.0 + 60.0 * s, 80.0 + 20.0 * s]
                }
            };
            img.put_pixel(x, y, Rgb(px.map(|v: f64| (v + noise).clamp(0.0, 255.0) as u8)));
        }
    }
    img
}

pub fn write_dataset(root: &Path, per_class: usize, size: u32) {
    for (f, name) in FAMILIES.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            texture(f, i, size).save(dir.join(format!("{name}_{i:03}.png"))).unwrap();
        }
    }
}

pub fn desk_spec(side: usize) -> InputSpec {
    InputSpec { shape: [3, side, side], ..InputSpec::imagenet() }
}

/// Random-weight conv/relu stack with one tap per relu.
pub fn write_bundle(dir: &Path, seed: u64, name: &str, side: usize, channels: &[usize]) {
    let net = conv_relu_stack(seed, name, desk_spec(side), channels, None).unwrap();
    save_model_bundle(&net, dir).unwrap();
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Workspace {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// Dataset, bundles and a config file in a fresh temporary directory. Each
/// entry of `models` is `(name, seed)`.
pub fn workspace(models: &[(&str, u64)], per_class: usize, side: usize, channels: &[usize], extra: serde_json::Value) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"), per_class, 48);
    let mut entries = Vec::new();
    for (name, seed) in models {
        write_bundle(&dir.path().join("bundles").join(name), *seed, name, side, channels);
        entries.push(json!({"name": name, "bundle": format!("bundles/{name}")}));
    }
    let mut cfg = json!({
        "models": entries,
        "dataset_root": "data",
        "cache_dir": "cache",
        "output_dir": "out",
    });
    if let (Some(obj), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            obj.insert(k.clone(), v.clone());
        }
    }
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    Workspace { dir, config }
}

/// Brain-Score rows for the given model names with made-up scores.
pub fn write_brainscore(path: &Path, models: &[&str]) {
    let mut text = String::from("model,average_vision,neural_vision,behavior_vision,V1,V2,V4,IT\n");
    for (i, m) in models.iter().enumerate() {
        let v: Vec<String> = (0..7).map(|j| format!("{:.3}", 0.1 + 0.05 * ((i * 3 + j * 5) % 7) as f64)).collect();
        text.push_str(&format!("{m},{}\n", v.join(",")));
    }
    fs::write(path, text).unwrap();
}

/// All files below `dir` with the given extension, as (relative path, bytes), sorted.
pub fn files_with_ext(dir: &Path, ext: &str) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, d: &Path, ext: &str, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, ext, out);
            } else if p.extension().is_some_and(|e| e == ext) {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, ext, &mut out);
    out.sort();
    out
}
