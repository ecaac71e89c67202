//! Stage orchestration over the cache.
//!
//! extract → gram → rdm → cluster → mi → correlate → report, with synthesize
//! hanging off the model bundles. Each stage reads only the cached artifacts
//! of its upstream stages and publishes a copy of its outputs under the
//! output directory.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use texgram_core::clustering::{cut_tree, ward_linkage_rdm};
use texgram_core::engine::{forward_with_taps, load_model_bundle, InputSpec, NetworkGraph};
use texgram_core::gram::{gram_matrix, gram_vectorize, read_gram_record, write_gram_record, GramVector};
use texgram_core::infotheory::{mutual_information, ContingencyTable, EntropyMethod};
use texgram_core::rdm::{compute_rdm, sort_by_class, Rdm, RdmOptions};
use texgram_core::stats::{correlate_mi_brainscore, BrainScoreRecord, CorrelationResult};
use texgram_core::synthesis::{synthesize_texture, SynthesisConfig, Termination};
use texgram_core::Tensor;

use crate::brainscore::ingest_brainscore_csv;
use crate::cache::{dir_fingerprint, file_sha256, Cache, Entry};
use crate::config::{ModelEntry, Settings};
use crate::dataset::{ingest_dataset, DatasetIndex};
use crate::error::{PipelineError, Result};
use crate::figures::{self, ScatterPanel, Series};
use crate::preprocess::{preprocess_image, tensor_to_image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Extract,
    Gram,
    Rdm,
    Cluster,
    Mi,
    Correlate,
    Synthesize,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Extract => "extract",
            Stage::Gram => "gram",
            Stage::Rdm => "rdm",
            Stage::Cluster => "cluster",
            Stage::Mi => "mi",
            Stage::Correlate => "correlate",
            Stage::Synthesize => "synthesize",
            Stage::Report => "report",
        })
    }
}

/// One row of the MI report.
#[derive(Debug, Clone, PartialEq)]
pub struct MiRow {
    pub model: String,
    pub layer_index: usize,
    pub method: EntropyMethod,
    pub mi_bits: f64,
    pub posterior_sd: Option<f64>,
}

struct Dataset {
    index: DatasetIndex,
    hashes: Vec<String>,
}

struct Model {
    entry: ModelEntry,
    net: NetworkGraph,
    fingerprint: String,
}

pub struct Pipeline {
    settings: Settings,
    cache: Cache,
    dataset: Option<Dataset>,
    models: Vec<Model>,
    entries: HashMap<(String, String), Entry>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(PipelineError::io(p))?;
    }
    fs::write(path, bytes).map_err(PipelineError::io(path))
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    if let Some(p) = to.parent() {
        fs::create_dir_all(p).map_err(PipelineError::io(p))?;
    }
    fs::copy(from, to).map(|_| ()).map_err(PipelineError::io(to))
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(PipelineError::io(path))?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_path(dir: &Path, layer: usize, item: usize) -> PathBuf {
    dir.join(format!("l{layer}")).join(format!("{item:06}.gram"))
}

impl Pipeline {
    pub fn new(settings: Settings) -> Self {
        let cache = Cache::new(&settings.config.cache_dir);
        Self { settings, cache, dataset: None, models: Vec::new(), entries: HashMap::new() }
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    fn out(&self) -> &Path {
        &self.settings.config.output_dir
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        info!("stage {stage}");
        self.load_models()?;
        match stage {
            Stage::Extract => {
                for m in 0..self.models.len() {
                    self.extract(m)?;
                }
            }
            Stage::Gram => {
                for m in 0..self.models.len() {
                    self.gram(m)?;
                }
            }
            Stage::Rdm => {
                for (m, l) in self.selected_layers() {
                    self.rdm(m, l)?;
                }
            }
            Stage::Cluster => {
                for (m, l) in self.selected_layers() {
                    self.cluster(m, l)?;
                }
            }
            Stage::Mi => {
                self.mi_all()?;
            }
            Stage::Correlate => {
                self.correlate()?;
            }
            Stage::Synthesize => self.synthesize_all()?,
            Stage::Report => {
                self.report()?;
            }
        }
        Ok(())
    }

    fn load_models(&mut self) -> Result<()> {
        if !self.models.is_empty() {
            return Ok(());
        }
        for entry in &self.settings.config.models {
            let mut net = load_model_bundle(&entry.bundle)?;
            if let Some(taps) = &entry.taps {
                net = net.with_taps(taps.clone()).map_err(|e| PipelineError::Config(format!("model `{}`: {e}", entry.name)))?;
            }
            if let Some(l) = self.settings.layer {
                if l > net.taps().len() {
                    return Err(PipelineError::Config(format!(
                        "--layer {l} exceeds the {} taps of `{}`",
                        net.taps().len(),
                        entry.name
                    )));
                }
            }
            let fingerprint = Cache::key("bundle", &(dir_fingerprint(&entry.bundle)?, net.taps()));
            self.models.push(Model { entry: entry.clone(), net, fingerprint });
        }
        Ok(())
    }

    fn selected_layers(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for (m, model) in self.models.iter().enumerate() {
            for l in 1..=model.net.taps().len() {
                if self.settings.layer.is_none_or(|want| want == l) {
                    v.push((m, l));
                }
            }
        }
        v
    }

    fn dataset(&mut self) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let index = ingest_dataset(&self.settings.config.dataset_root)?;
            info!("dataset: {} images in {} classes", index.items.len(), index.class_names.len());
            let hashes = index.items.par_iter().map(|i| file_sha256(&i.path)).collect::<Result<Vec<_>>>()?;
            self.dataset = Some(Dataset { index, hashes });
        }
        Ok(self.dataset.as_ref().unwrap())
    }

    fn memo<F>(&mut self, stage: &str, key: String, build: F) -> Result<Entry>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        if let Some(e) = self.entries.get(&(stage.to_string(), key.clone())) {
            return Ok(e.clone());
        }
        let e = self.cache.get_or_build(stage, &key, build)?;
        info!("{stage} {}: {}", if e.hit { "cache hit" } else { "computed" }, e.dir.display());
        self.entries.insert((stage.to_string(), key), e.clone());
        Ok(e)
    }

    /// Preprocessed input tensors for the model's input spec.
    fn extract(&mut self, m: usize) -> Result<Entry> {
        let spec = self.models[m].net.input_spec().clone();
        let ds = self.dataset()?;
        let index = ds.index.clone();
        let spec_bits: Vec<u32> = spec.mean.iter().chain(&spec.std).map(|v| v.to_bits()).collect();
        let ids = index.ids();
        let key = Cache::key("extract", &(&ids, &ds.hashes, &index.class_names, spec.shape, spec_bits));
        let hashes = ds.hashes.clone();
        let entry = self.memo("extract", key, |dir| {
            let mut w = csv::Writer::from_path(dir.join("index.csv"))?;
            w.write_record(["item_id", "class_id", "class_name", "sha256"])?;
            for (item, h) in index.items.iter().zip(&hashes) {
                w.write_record([item.id.as_str(), &item.class_id.to_string(), &index.class_names[item.class_id], h])?;
            }
            w.flush().map_err(PipelineError::io(dir))?;
            let inputs = dir.join("inputs");
            fs::create_dir(&inputs).map_err(PipelineError::io(&inputs))?;
            index.items.par_iter().enumerate().try_for_each(|(i, item)| {
                let t = preprocess_image(&item.path, &spec)?;
                let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                write_file(&inputs.join(format!("{i:06}.bin")), bytes)
            })
        })?;
        copy_file(&entry.path("index.csv"), &self.out().join("index.csv"))?;
        Ok(entry)
    }

    fn load_input(entry: &Entry, i: usize, spec: &InputSpec) -> Result<Tensor> {
        let data = read_f32(&entry.path(&format!("inputs/{i:06}.bin")))?;
        Tensor::new(spec.shape.to_vec(), data).map_err(|e| PipelineError::Data(format!("cached input {i}: {e}")))
    }

    /// Gram cache records for every image and tap.
    fn gram(&mut self, m: usize) -> Result<Entry> {
        let extract = self.extract(m)?;
        let n = self.dataset()?.index.items.len();
        let model = &self.models[m];
        let key = Cache::key("gram", &(&extract.key, &model.fingerprint));
        let net = model.net.clone();
        let name = model.entry.name.clone();
        let entry = self.memo("gram", key, |dir| {
            let mut w = csv::Writer::from_path(dir.join("taps.csv"))?;
            w.write_record(["layer_index", "layer_name", "channels", "height", "width", "gram_dim"])?;
            for (l, tap) in net.taps().iter().enumerate() {
                let [c, h, wd] = net.node_shape(tap).expect("validated tap");
                let dim = c * (c + 1) / 2;
                w.write_record([(l + 1).to_string(), tap.clone(), c.to_string(), h.to_string(), wd.to_string(), dim.to_string()])?;
                let sub = dir.join(format!("l{}", l + 1));
                fs::create_dir(&sub).map_err(PipelineError::io(&sub))?;
            }
            w.flush().map_err(PipelineError::io(dir))?;
            info!("{name}: forward passes over {n} images");
            (0..n).into_par_iter().try_for_each(|i| {
                let input = Self::load_input(&extract, i, net.input_spec())?;
                let taps = forward_with_taps(&net, &input)?;
                for (l, f) in taps.iter().enumerate() {
                    let v = gram_vectorize(&gram_matrix(f)?);
                    if v.values().iter().any(|x| !x.is_finite() || x.abs() > f32::MAX as f64) {
                        return Err(PipelineError::Numerical(format!("{name}: Gram matrix of item {i} at tap {} is not finite in f32", l + 1)));
                    }
                    write_gram_record(&record_path(dir, l + 1, i), &v)?;
                }
                Ok(())
            })
        })?;
        let name = &self.models[m].entry.name;
        copy_file(&entry.path("taps.csv"), &self.out().join("gram").join(name).join("taps.csv"))?;
        Ok(entry)
    }

    fn rdm(&mut self, m: usize, layer: usize) -> Result<Entry> {
        let gram = self.gram(m)?;
        let ids = self.dataset()?.index.ids();
        let cfg = &self.settings.config;
        let options = RdmOptions { variant: cfg.distance, standardize: cfg.standardize };
        let key = Cache::key("rdm", &(&gram.key, layer, options.variant.as_str(), options.standardize));
        let model = &self.models[m];
        let (name, tap) = (model.entry.name.clone(), model.net.taps()[layer - 1].clone());
        let entry = self.memo("rdm", key, |dir| {
            let vectors = (0..ids.len())
                .into_par_iter()
                .map(|i| read_gram_record(&record_path(&gram.dir, layer, i)).map_err(PipelineError::from))
                .collect::<Result<Vec<GramVector>>>()?;
            let rdm = compute_rdm(&vectors, &ids, options)?;
            rdm.write(&dir.join("rdm"), &name, &tap)?;
            Ok(())
        })?;
        let dest = self.out().join("rdm").join(&self.models[m].entry.name);
        for ext in ["bin", "json"] {
            copy_file(&entry.path(&format!("rdm.{ext}")), &dest.join(format!("layer{layer}.{ext}")))?;
        }
        Ok(entry)
    }

    fn k(&mut self) -> Result<usize> {
        let classes = self.dataset()?.index.class_names.len();
        Ok(self.settings.config.k.unwrap_or(classes))
    }

    fn cluster(&mut self, m: usize, layer: usize) -> Result<Entry> {
        let rdm = self.rdm(m, layer)?;
        let k = self.k()?;
        let key = Cache::key("cluster", &(&rdm.key, k));
        let entry = self.memo("cluster", key, |dir| {
            let (rdm, _, _) = Rdm::read(&rdm.path("rdm"))?;
            if k > rdm.size() {
                return Err(PipelineError::Config(format!("k = {k} exceeds the {} items", rdm.size())));
            }
            let d = ward_linkage_rdm(&rdm)?;
            let cut = cut_tree(&d, k)?;
            let dend = dir.join("dendrogram.csv");
            let mut buf = Vec::new();
            d.write_csv(&mut buf).map_err(PipelineError::io(&dend))?;
            write_file(&dend, buf)?;
            let mut buf = Vec::new();
            cut.write_csv(&mut buf, rdm.item_ids()).map_err(PipelineError::io(dir))?;
            write_file(&dir.join("assignment.csv"), buf)
        })?;
        let dest = self.out().join("cluster").join(&self.models[m].entry.name);
        copy_file(&entry.path("dendrogram.csv"), &dest.join(format!("layer{layer}_dendrogram.csv")))?;
        copy_file(&entry.path("assignment.csv"), &dest.join(format!("layer{layer}_assignment.csv")))?;
        Ok(entry)
    }

    fn read_assignment(path: &Path, ids: &[String]) -> Result<Vec<usize>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut labels = Vec::with_capacity(ids.len());
        for (row, want) in r.records().zip(ids) {
            let row = row?;
            if &row[0] != want {
                return Err(PipelineError::Data(format!("{}: item `{}` where `{want}` was expected", path.display(), &row[0])));
            }
            labels.push(row[1].parse().map_err(|_| PipelineError::Data(format!("{}: bad cluster label", path.display())))?);
        }
        if labels.len() != ids.len() {
            return Err(PipelineError::Data(format!("{}: {} rows for {} items", path.display(), labels.len(), ids.len())));
        }
        Ok(labels)
    }

    /// MI between class labels and the k-cluster cut at every tap, by both methods.
    fn mi(&mut self, m: usize) -> Result<Entry> {
        let layers = self.models[m].net.taps().len();
        let clusters = (1..=layers).map(|l| self.cluster(m, l)).collect::<Result<Vec<_>>>()?;
        let extract = self.extract(m)?;
        let k = self.k()?;
        let ds = self.dataset()?;
        let (ids, labels, classes) = (ds.index.ids(), ds.index.labels(), ds.index.class_names.len());
        let cluster_keys: Vec<&str> = clusters.iter().map(|e| e.key.as_str()).collect();
        let key = Cache::key("mi", &(&cluster_keys, &extract.key));
        let name = self.models[m].entry.name.clone();
        self.memo("mi", key, |dir| {
            let mut w = csv::Writer::from_path(dir.join("mi.csv"))?;
            w.write_record(["model", "layer_index", "method", "mi_bits", "posterior_sd"])?;
            for (l, c) in clusters.iter().enumerate() {
                let found = Self::read_assignment(&c.path("assignment.csv"), &ids)?;
                let table = ContingencyTable::from_labels(classes, k, &labels, &found)?;
                for method in [EntropyMethod::PlugIn, EntropyMethod::Nsb] {
                    let mi = mutual_information(&table, method)?;
                    if !mi.value.is_finite() {
                        return Err(PipelineError::Numerical(format!("{name} layer {}: {method} MI is not finite", l + 1)));
                    }
                    let sd = match method {
                        EntropyMethod::PlugIn => None,
                        EntropyMethod::Nsb => {
                            let var: f64 = [mi.h_x, mi.h_y, mi.h_xy].iter().map(|h| h.posterior_sd.unwrap_or(0.0).powi(2)).sum();
                            Some(var.sqrt())
                        }
                    };
                    w.write_record([name.clone(), (l + 1).to_string(), method.to_string(), mi.value.to_string(), opt(sd)])?;
                }
            }
            w.flush().map_err(PipelineError::io(dir))
        })
    }

    fn read_mi(entry: &Entry) -> Result<Vec<MiRow>> {
        let path = entry.path("mi.csv");
        let mut r = csv::Reader::from_path(&path)?;
        let bad = |what: &str| PipelineError::Data(format!("{}: bad {what}", path.display()));
        r.records()
            .map(|row| {
                let row = row?;
                Ok(MiRow {
                    model: row[0].to_string(),
                    layer_index: row[1].parse().map_err(|_| bad("layer_index"))?,
                    method: row[2].parse().map_err(|_| bad("method"))?,
                    mi_bits: row[3].parse().map_err(|_| bad("mi_bits"))?,
                    posterior_sd: if row[4].is_empty() { None } else { Some(row[4].parse().map_err(|_| bad("posterior_sd"))?) },
                })
            })
            .collect()
    }

    /// All MI rows plus the best layer per model for the configured method.
    pub fn mi_all(&mut self) -> Result<(Vec<MiRow>, Vec<MiRow>)> {
        let method = self.settings.config.mi_method;
        let mut all = Vec::new();
        let mut best = Vec::new();
        for m in 0..self.models.len() {
            let rows = Self::read_mi(&self.mi(m)?)?;
            let top = rows
                .iter()
                .filter(|r| r.method == method)
                .fold(None::<&MiRow>, |b, r| match b {
                    Some(b) if b.mi_bits >= r.mi_bits => Some(b),
                    _ => Some(r),
                })
                .cloned()
                .ok_or_else(|| PipelineError::Data(format!("no {method} MI rows for `{}`", self.models[m].entry.name)))?;
            best.push(top);
            all.extend(rows);
        }
        if self.settings.config.clamp_mi {
            for r in &mut best {
                r.mi_bits = r.mi_bits.max(0.0);
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "layer_index", "method", "mi_bits", "posterior_sd"])?;
        for r in &all {
            w.write_record([r.model.clone(), r.layer_index.to_string(), r.method.to_string(), r.mi_bits.to_string(), opt(r.posterior_sd)])?;
        }
        write_file(&self.out().join("mi.csv"), w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "method", "layer_index", "mi_bits"])?;
        for r in &best {
            w.write_record([r.model.clone(), r.method.to_string(), r.layer_index.to_string(), r.mi_bits.to_string()])?;
        }
        write_file(&self.out().join("best_mi.csv"), w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?)?;
        Ok((all, best))
    }

    /// Seven correlation rows, one per Brain-Score metric.
    pub fn correlate(&mut self) -> Result<Vec<(String, CorrelationResult)>> {
        let entry = self.correlate_entry()?;
        read_correlation(&entry.path("correlation.csv"))
    }

    fn correlate_entry(&mut self) -> Result<Entry> {
        let path = self.settings.config.brainscore_csv.clone().ok_or_else(|| {
            PipelineError::Config("the correlate stage needs `brainscore_csv` in the config".into())
        })?;
        let records = ingest_brainscore_csv(&path)?;
        let (_, best) = self.mi_all()?;
        let mi_keys: Vec<String> = (0..self.models.len()).map(|m| self.mi(m).map(|e| e.key)).collect::<Result<_>>()?;
        let method = self.settings.config.mi_method.to_string();
        let key = Cache::key("correlate", &(&mi_keys, &method, self.settings.config.clamp_mi, file_sha256(&path)?));
        let values: Vec<(String, f64)> = best.iter().map(|r| (r.model.clone(), r.mi_bits)).collect();
        let entry = self.memo("correlate", key, |dir| {
            let mut w = csv::Writer::from_path(dir.join("correlation.csv"))?;
            w.write_record(["metric", "r", "p", "n", "significant"])?;
            for metric in BrainScoreRecord::METRICS {
                let c = correlate_mi_brainscore(&values, &records, metric)?;
                w.write_record([metric.to_string(), opt(c.r), opt(c.p), c.n.to_string(), c.significant().to_string()])?;
            }
            w.flush().map_err(PipelineError::io(dir))?;
            let mut w = csv::Writer::from_path(dir.join("scatter.csv"))?;
            let mut head = vec!["model".to_string(), "best_mi_bits".to_string()];
            head.extend(BrainScoreRecord::METRICS.iter().map(|s| s.to_string()));
            w.write_record(&head)?;
            for (model, v) in &values {
                let rec = records.iter().find(|r| &r.model == model).expect("checked by correlate_mi_brainscore");
                let mut row = vec![model.clone(), v.to_string()];
                row.extend(BrainScoreRecord::METRICS.iter().map(|s| rec.metric(s).unwrap().to_string()));
                w.write_record(&row)?;
            }
            w.flush().map_err(PipelineError::io(dir))
        })?;
        copy_file(&entry.path("correlation.csv"), &self.out().join("correlation.csv"))?;
        Ok(entry)
    }

    fn synthesize_all(&mut self) -> Result<()> {
        let exemplars = self.settings.config.synthesis.exemplars.clone();
        if exemplars.is_empty() {
            return Err(PipelineError::Config("synthesis.exemplars is empty".into()));
        }
        for m in 0..self.models.len() {
            for ex in &exemplars {
                self.synthesize(m, ex)?;
            }
        }
        Ok(())
    }

    pub fn synthesize(&mut self, m: usize, exemplar: &Path) -> Result<Entry> {
        let s = &self.settings.config.synthesis;
        let cfg = SynthesisConfig {
            seed: self.settings.config.seed,
            max_iterations: s.iterations,
            history_size: s.history_size,
            grad_tolerance: s.grad_tolerance,
            layer_weights: s.layer_weights.clone(),
            ..SynthesisConfig::default()
        };
        #[derive(Serialize)]
        struct KeyParts<'a> {
            model: &'a str,
            exemplar: String,
            seed: u64,
            iterations: usize,
            history: usize,
            tol: u64,
            weights: Option<Vec<u64>>,
        }
        let model = &self.models[m];
        let parts = KeyParts {
            model: &model.fingerprint,
            exemplar: file_sha256(exemplar)?,
            seed: cfg.seed,
            iterations: cfg.max_iterations,
            history: cfg.history_size,
            tol: cfg.grad_tolerance.to_bits(),
            weights: cfg.layer_weights.as_ref().map(|w| w.iter().map(|v| v.to_bits()).collect()),
        };
        let key = Cache::key("synthesize", &parts);
        let net = model.net.clone();
        let name = model.entry.name.clone();
        let entry = self.memo("synthesize", key, |dir| {
            let target = preprocess_image(exemplar, net.input_spec())?;
            info!("{name}: synthesizing from {}", exemplar.display());
            let (img, report) = synthesize_texture(&net, &target, &cfg)?;
            if !report.total.is_finite() {
                return Err(PipelineError::Numerical(format!("{name}: synthesis loss is not finite")));
            }
            if report.termination == Termination::LineSearchFailed {
                warn!("{name}: line search failed after {} iterations; keeping the best image", report.trace.len() - 1);
            }
            let png = dir.join("synth.png");
            tensor_to_image(&img, net.input_spec())?
                .save(&png)
                .map_err(|e| PipelineError::Data(format!("cannot write {}: {e}", png.display())))?;
            let mut buf = Vec::new();
            report.write_trace_csv(&mut buf).map_err(PipelineError::io(dir))?;
            write_file(&dir.join("trace.csv"), buf)?;
            let summary = serde_json::json!({
                "model": name,
                "exemplar": exemplar.file_name().map(|f| f.to_string_lossy().into_owned()),
                "termination": format!("{:?}", report.termination),
                "iterations": report.trace.len() - 1,
                "evaluations": report.evaluations,
                "initial_loss": report.trace.first().map(|r| r.total),
                "final_loss": report.total,
            });
            write_file(&dir.join("summary.json"), serde_json::to_vec_pretty(&summary).expect("json"))
        })?;
        let stem = exemplar.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dest = self.out().join("synthesis").join(&self.models[m].entry.name);
        copy_file(&entry.path("synth.png"), &dest.join(format!("{stem}.png")))?;
        copy_file(&entry.path("trace.csv"), &dest.join(format!("{stem}_trace.csv")))?;
        Ok(entry)
    }

    /// Heatmaps, the MI-per-layer plot, the correlation grid and their CSV twins.
    pub fn report(&mut self) -> Result<PathBuf> {
        let dir = self.out().join("report");
        fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
        let (all, best) = self.mi_all()?;
        for name in ["mi.csv", "best_mi.csv"] {
            copy_file(&self.out().join(name), &dir.join(name))?;
        }

        let labels = self.dataset()?.index.labels();
        if self.settings.config.figures.heatmaps {
            let max = self.settings.config.figures.max_heatmap_size;
            for (m, l) in self.selected_layers() {
                let e = self.rdm(m, l)?;
                let (rdm, _, _) = Rdm::read(&e.path("rdm"))?;
                let (sorted, _) = sort_by_class(&rdm, &labels)?;
                let (vals, side) = figures::block_average(sorted.values(), sorted.size(), max);
                let names: Vec<String> = if side == sorted.size() {
                    sorted.item_ids().to_vec()
                } else {
                    (0..side).map(|b| format!("block{b}")).collect()
                };
                let stem = dir.join("heatmaps").join(format!("{}_layer{l}", self.models[m].entry.name));
                write_file(&stem.with_extension("csv"), matrix_csv(&names, &vals)?)?;
                figures::write_heatmap_png(&vals, side, &stem.with_extension("png"))?;
            }
        }

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "layer_index", "plugin_bits", "nsb_bits", "nsb_posterior_sd"])?;
        let mut series = Vec::new();
        let shown = |v: f64| if self.settings.config.clamp_mi { v.max(0.0) } else { v };
        for model in &self.models {
            let name = &model.entry.name;
            let mut plug = Vec::new();
            let mut nsb = Vec::new();
            for l in 1..=model.net.taps().len() {
                let find = |meth| all.iter().find(|r| &r.model == name && r.layer_index == l && r.method == meth);
                let (p, n) = (find(EntropyMethod::PlugIn), find(EntropyMethod::Nsb));
                w.write_record([
                    name.clone(),
                    l.to_string(),
                    opt(p.map(|r| shown(r.mi_bits))),
                    opt(n.map(|r| shown(r.mi_bits))),
                    opt(n.and_then(|r| r.posterior_sd)),
                ])?;
                plug.extend(p.map(|r| (l as f64, shown(r.mi_bits))));
                nsb.extend(n.map(|r| (l as f64, shown(r.mi_bits))));
            }
            series.push(Series { name: format!("{name} (NSB)"), points: nsb });
            series.push(Series { name: format!("{name} (plug-in)"), points: plug });
        }
        write_file(&dir.join("mi_per_layer.csv"), w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))?)?;
        write_file(&dir.join("mi_per_layer.svg"), figures::line_plot_svg("MI across CNN layers", "layer", "MI (bits)", &series))?;

        if self.settings.config.brainscore_csv.is_some() {
            let centry = self.correlate_entry()?;
            let rows = read_correlation(&centry.path("correlation.csv"))?;
            copy_file(&self.out().join("correlation.csv"), &dir.join("correlation.csv"))?;
            let records = ingest_brainscore_csv(self.settings.config.brainscore_csv.as_ref().unwrap())?;
            let method = self.settings.config.mi_method;
            let mut panels = Vec::new();
            for (metric, c) in &rows {
                let points: Vec<(String, f64, f64)> = best
                    .iter()
                    .map(|b| {
                        let rec = records.iter().find(|r| r.model == b.model).expect("correlated");
                        (b.model.clone(), b.mi_bits, rec.metric(metric).unwrap())
                    })
                    .collect();
                let title = match (c.r, c.p) {
                    (Some(r), Some(p)) => format!("{metric}: r = {r:.3}, p = {p:.3}"),
                    (Some(r), None) => format!("{metric}: r = {r:.3}"),
                    _ => format!("{metric}: r undefined"),
                };
                panels.push(ScatterPanel {
                    title,
                    xlabel: format!("best MI, {method} (bits)"),
                    ylabel: metric.clone(),
                    fit: least_squares(&points),
                    points,
                });
            }
            write_file(&dir.join("correlation_scatter.svg"), figures::scatter_grid_svg("Best-layer MI vs Brain-Score", &panels))?;
            copy_file(&centry.path("scatter.csv"), &dir.join("correlation_scatter.csv"))?;
        } else {
            warn!("no brainscore_csv configured; skipping the correlation figure");
        }
        info!("report written to {}", dir.display());
        Ok(dir)
    }
}

fn read_correlation(path: &Path) -> Result<Vec<(String, CorrelationResult)>> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = || PipelineError::Data(format!("{}: malformed row", path.display()));
    r.records()
        .map(|row| {
            let row = row?;
            let num = |s: &str| if s.is_empty() { Ok(None) } else { s.parse().map(Some).map_err(|_| bad()) };
            Ok((
                row[0].to_string(),
                CorrelationResult { r: num(&row[1])?, p: num(&row[2])?, n: row[3].parse().map_err(|_| bad())? },
            ))
        })
        .collect()
}

fn least_squares(points: &[(String, f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.1).sum::<f64>() / n;
    let my = points.iter().map(|p| p.2).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.1 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.1 - mx) * (p.2 - my)).sum();
    (sxx > 0.0).then(|| {
        let a = sxy / sxx;
        (a, my - a * mx)
    })
}

fn matrix_csv(names: &[String], values: &[f32]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["item_id".to_string()];
    head.extend(names.iter().cloned());
    w.write_record(&head)?;
    for (name, row) in names.iter().zip(values.chunks(names.len().max(1))) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| PipelineError::Data(e.to_string()))
}
