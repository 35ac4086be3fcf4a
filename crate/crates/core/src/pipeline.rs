//! The resumable end-to-end driver: fingerprint, configure, train folds,
//! predict with the ensemble, optionally post-process, evaluate.
//!
//! Every stage reads its inputs back from the run directory and finishes by
//! writing `stages/<name>.done`, so a resumed run sees exactly what a fresh
//! one would.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::autoconfig::{configure_pipeline_with, ArchRules, MemoryBudget, PipelineConfig};
use crate::canonical::{read_json, to_canonical_line, write_canonical};
use crate::error::{arg_err, Error, Result};
use crate::eval::{
    confusion, mean_defined, metrics_from_confusion, tukey_summary, wilcoxon_two_tailed, ConfusionCounts,
    SegmentationMetrics, METRIC_NAMES,
};
use crate::fingerprint::{compute_fingerprint, normalize_patch, DatasetFingerprint};
use crate::infer::{binarize, predict_patch, tiled_predict, EnsembleModel};
use crate::net::save_checkpoint;
use crate::postproc::{apply_rule, PostRule, StructuringElement};
use crate::raster::{
    load_mask, load_mask_file, load_patch, save_mask, save_probability, write_atomic, Blend, CloudMask, Manifest,
};
use crate::train::{curve_csv, make_folds, train_fold, FoldSplit, TrainHyper, TrainSample};

/// Values that replace what the rule engine derived.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub base_channels: Option<usize>,
    pub epochs: Option<usize>,
    pub batches_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f32>,
    pub momentum: Option<f32>,
    pub overlap: Option<f32>,
    pub blend: Option<Blend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths resolve against the run config's directory.
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget_gb")]
    pub budget_gb: f64,
    /// Post-processing of the ensemble masks; `none` skips the stage.
    #[serde(default = "default_post_rule")]
    pub post_rule: PostRule,
    #[serde(default)]
    pub overrides: Overrides,
}

fn default_folds() -> usize {
    4
}

fn default_budget_gb() -> f64 {
    24.0
}

fn default_post_rule() -> PostRule {
    PostRule::None
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.train_manifest, &mut c.test_manifest] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }
}

pub const STAGES: [&str; 6] = ["fingerprint", "configure", "train", "predict", "postprocess", "evaluate"];

/// Which stages ran and which were skipped on resume.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineReport {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

/// Fixed file names inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn marker(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.done"))
    }
    pub fn fingerprint(&self) -> PathBuf {
        self.root.join("fingerprint.json")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("pipeline.json")
    }
    pub fn trace(&self) -> PathBuf {
        self.root.join("pipeline.trace.txt")
    }
    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.json")
    }
    pub fn checkpoint(&self, fold: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("fold{fold}"))
    }
    pub fn curve(&self, fold: usize) -> PathBuf {
        self.root.join(format!("fold{fold}_curve.csv"))
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }
    pub fn fold_predictions(&self, fold: usize) -> PathBuf {
        self.predictions().join(format!("fold{fold}"))
    }
    pub fn postprocessed(&self) -> PathBuf {
        self.root.join("postprocessed")
    }
    pub fn mask(dir: &Path, patch_id: &str) -> PathBuf {
        dir.join(format!("{patch_id}.mask.cseg"))
    }
    pub fn prob(dir: &Path, patch_id: &str) -> PathBuf {
        dir.join(format!("{patch_id}.prob.cseg"))
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Loads a manifest's patches normalized with `fp`, with their masks.
pub fn load_samples(manifest: &Manifest, fp: &DatasetFingerprint) -> Result<Vec<TrainSample>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let patch = normalize_patch(&load_patch(manifest, rec)?, fp)?;
            let mask = load_mask(manifest, rec)?.ok_or_else(|| {
                Error::Consistency(format!("training patch {} has no mask", rec.patch_id))
            })?;
            if mask.shape() != patch.shape() {
                return Err(Error::Consistency(format!("mask of {} differs in shape", rec.patch_id)));
            }
            Ok(TrainSample { patch, mask })
        })
        .collect()
}

pub fn stage_fingerprint(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let train = Manifest::load(&cfg.train_manifest)?;
    compute_fingerprint(&train)?.save(&run.fingerprint())
}

pub fn stage_configure(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let fp = DatasetFingerprint::load(&run.fingerprint())?;
    let mut rules = ArchRules::default();
    let o = &cfg.overrides;
    if let Some(b) = o.base_channels {
        rules.base_channels = b;
    }
    let mut configured = configure_pipeline_with(&fp, &MemoryBudget::from_gb(cfg.budget_gb)?, cfg.folds, &rules)?;
    let c = &mut configured.config;
    let mut notes = Vec::new();
    if let Some(b) = o.base_channels {
        notes.push(format!("override: base channels {b}"));
    }
    macro_rules! apply {
        ($field:ident) => {
            if let Some(v) = o.$field {
                c.$field = v;
                notes.push(format!("override: {} <- {:?}", stringify!($field), v));
            }
        };
    }
    apply!(epochs);
    apply!(batches_per_epoch);
    apply!(batch_size);
    apply!(lr0);
    apply!(momentum);
    apply!(overlap);
    apply!(blend);
    c.validate()?;
    for n in notes {
        configured.note(n);
    }
    configured.config.save(&run.config())?;
    write_text(&run.trace(), &configured.trace_text())
}

pub fn stage_train(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let fp = DatasetFingerprint::load(&run.fingerprint())?;
    let config = PipelineConfig::load(&run.config())?;
    let train = Manifest::load(&cfg.train_manifest)?;
    let split = make_folds(&train, config.n_folds, cfg.seed)?;
    write_canonical(&run.folds(), &split)?;
    let samples = load_samples(&train, &fp)?;
    let index: std::collections::HashMap<&str, &TrainSample> =
        samples.iter().map(|s| (s.patch.patch_id.as_str(), s)).collect();
    let pick = |ids: &[String]| -> Vec<&TrainSample> { ids.iter().map(|id| index[id.as_str()]).collect() };
    let hyper = TrainHyper::from_config(&config, cfg.seed);
    let hash = config.hash();
    (0..split.k).into_par_iter().try_for_each(|fold| {
        let (tr, va) = (pick(&split.train_ids(fold)), pick(split.val_ids(fold)));
        let (model, curve) = train_fold(&config, &tr, &va, &hyper, fold)?;
        save_checkpoint(&model, &hash, &run.checkpoint(fold))?;
        write_text(&run.curve(fold), &curve_csv(&curve))
    })
}

pub fn stage_predict(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let fp = DatasetFingerprint::load(&run.fingerprint())?;
    let config = PipelineConfig::load(&run.config())?;
    let dirs: Vec<PathBuf> = (0..config.n_folds).map(|f| run.checkpoint(f)).collect();
    let ensemble = EnsembleModel::load(&dirs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), config.clone())?;
    let test = Manifest::load(&cfg.test_manifest)?;
    let out = run.predictions();
    mkdir(&out)?;
    for f in 0..ensemble.k() {
        mkdir(&run.fold_predictions(f))?;
    }
    let start = Instant::now();
    test.records.par_iter().try_for_each(|rec| -> Result<()> {
        let patch = normalize_patch(&load_patch(&test, rec)?, &fp)?;
        let members: Vec<_> = ensemble.members.iter().collect();
        let prob = if patch.shape() == config.patch_size {
            // one tile: reuse the member maps for the per-fold masks
            let maps = members.iter().map(|m| predict_patch(m, &patch)).collect::<Result<Vec<_>>>()?;
            for (f, m) in maps.iter().enumerate() {
                save_mask(&binarize(m, config.threshold)?, &RunDir::mask(&run.fold_predictions(f), &rec.patch_id))?;
            }
            crate::infer::ensemble_mean(&maps)?
        } else {
            for (f, m) in members.iter().enumerate() {
                let map = tiled_predict(&[m], config.patch_size, &patch, config.overlap, config.blend)?;
                save_mask(&binarize(&map, config.threshold)?, &RunDir::mask(&run.fold_predictions(f), &rec.patch_id))?;
            }
            tiled_predict(&members, config.patch_size, &patch, config.overlap, config.blend)?
        };
        save_probability(&prob, &RunDir::prob(&out, &rec.patch_id))?;
        save_mask(&binarize(&prob, config.threshold)?, &RunDir::mask(&out, &rec.patch_id))
    })?;
    let secs = start.elapsed().as_secs_f64();
    log::info!(
        "predicted {} patches in {secs:.2} s ({:.2} patches/s)",
        test.len(),
        test.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}

pub fn stage_postprocess(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let test = Manifest::load(&cfg.test_manifest)?;
    let out = run.postprocessed();
    mkdir(&out)?;
    let se = StructuringElement::default();
    test.records.par_iter().try_for_each(|rec| {
        let m = load_mask_file(&RunDir::mask(&run.predictions(), &rec.patch_id))?;
        save_mask(&apply_rule(&m, cfg.post_rule, &se), &RunDir::mask(&out, &rec.patch_id))
    })
}

/// Per-patch metrics for one mask directory, in manifest order.
pub fn score_dir(test: &Manifest, dir: &Path) -> Result<Vec<(String, ConfusionCounts, SegmentationMetrics)>> {
    test.records
        .par_iter()
        .map(|rec| {
            let gt = load_mask(test, rec)?
                .ok_or_else(|| Error::Consistency(format!("test patch {} has no mask", rec.patch_id)))?;
            let pred: CloudMask = load_mask_file(&RunDir::mask(dir, &rec.patch_id))?;
            let c = confusion(&pred, &gt)?;
            Ok((rec.patch_id.clone(), c, metrics_from_confusion(&c)))
        })
        .collect()
}

pub fn metrics_jsonl(rows: &[(String, ConfusionCounts, SegmentationMetrics)]) -> Result<String> {
    let mut out = String::new();
    for (id, _, m) in rows {
        let mut v = serde_json::to_value(m).map_err(|e| Error::json("metrics", e))?;
        v["patch_id"] = json!(id);
        v["undefined"] = json!(m.undefined());
        out.push_str(&to_canonical_line(&v)?);
        out.push('\n');
    }
    Ok(out)
}

/// Tukey summaries of every metric over its defined values, pooled metrics
/// from summed counts, and exclusion counts.
pub fn summarize(rows: &[(String, ConfusionCounts, SegmentationMetrics)]) -> Result<Value> {
    let mut metrics = Map::new();
    for name in METRIC_NAMES {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.2.get(name)).collect();
        let undefined = rows.len() - vals.len();
        let summary = if vals.is_empty() { Value::Null } else { serde_json::to_value(tukey_summary(&vals)?).unwrap() };
        metrics.insert(name.to_string(), json!({"summary": summary, "undefined": undefined}));
    }
    let pooled = rows.iter().fold(ConfusionCounts::default(), |a, r| a + r.1);
    Ok(json!({
        "n_patches": rows.len(),
        "metrics": metrics,
        "pooled": metrics_from_confusion(&pooled),
        "pooled_counts": pooled,
    }))
}

fn paired_ji(
    a: &[(String, ConfusionCounts, SegmentationMetrics)],
    b: &[(String, ConfusionCounts, SegmentationMetrics)],
) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| Some((x.2.ji?, y.2.ji?)))
        .unzip()
}

fn wilcoxon_value(a: &[f64], b: &[f64]) -> Value {
    match wilcoxon_two_tailed(a, b) {
        Ok(r) => serde_json::to_value(r).unwrap(),
        Err(e) => json!({"error": e.to_string(), "n_pairs": a.len()}),
    }
}

pub fn mean_ji(rows: &[(String, ConfusionCounts, SegmentationMetrics)]) -> Option<f64> {
    mean_defined(rows.iter().map(|r| r.2.ji)).0
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into())
}

pub fn stage_evaluate(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let config = PipelineConfig::load(&run.config())?;
    let test = Manifest::load(&cfg.test_manifest)?;
    let ens = score_dir(&test, &run.predictions())?;
    write_text(&run.root.join("metrics.jsonl"), &metrics_jsonl(&ens)?)?;
    let mut folds = Vec::new();
    for f in 0..config.n_folds {
        folds.push(score_dir(&test, &run.fold_predictions(f))?);
    }
    let pp = if run.postprocessed().is_dir() && cfg.post_rule != PostRule::None {
        let rows = score_dir(&test, &run.postprocessed())?;
        write_text(&run.root.join("metrics_pp.jsonl"), &metrics_jsonl(&rows)?)?;
        Some(rows)
    } else {
        None
    };

    let mut summary = Map::new();
    summary.insert("ensemble".into(), summarize(&ens)?);
    summary.insert(
        "folds".into(),
        Value::Array(
            folds
                .iter()
                .enumerate()
                .map(|(i, r)| json!({"fold": i, "mean_ji": mean_ji(r), "pooled": metrics_from_confusion(&r.iter().fold(ConfusionCounts::default(), |a, x| a + x.1))}))
                .collect(),
        ),
    );
    let mut sig = Map::new();
    for (i, r) in folds.iter().enumerate() {
        let (a, b) = paired_ji(&ens, r);
        sig.insert(format!("ensemble_vs_fold{i}"), wilcoxon_value(&a, &b));
    }
    let mut report = String::new();
    report.push_str(&format!("patches evaluated: {}\n", ens.len()));
    report.push_str(&format!("ensemble mean JI: {}\n", fmt_opt(mean_ji(&ens))));
    for (i, r) in folds.iter().enumerate() {
        report.push_str(&format!("fold {i} mean JI: {}\n", fmt_opt(mean_ji(r))));
    }
    if let Some(pp) = &pp {
        summary.insert("postprocessed".into(), summarize(pp)?);
        summary.insert("post_rule".into(), serde_json::to_value(cfg.post_rule).unwrap());
        let (a, b) = paired_ji(pp, &ens);
        sig.insert("postprocessed_vs_plain".into(), wilcoxon_value(&a, &b));
        let (m_pp, m) = (mean_ji(pp), mean_ji(&ens));
        report.push_str(&format!("post-processed mean JI: {}\n", fmt_opt(m_pp)));
        let delta = m_pp.zip(m).map(|(x, y)| x - y);
        report.push_str(&format!(
            "delta JI (post-processed - plain): {}\n",
            delta.map(|d| format!("{d:+.4}")).unwrap_or_else(|| "undefined".into())
        ));
        if let Some(p) = sig["postprocessed_vs_plain"].get("p").and_then(Value::as_f64) {
            report.push_str(&format!("Wilcoxon two-tailed p (post-processed vs plain): {p:.4}\n"));
        }
    }
    write_canonical(&run.root.join("summary.json"), &Value::Object(summary))?;
    write_canonical(&run.root.join("significance.json"), &Value::Object(sig))?;
    write_text(&run.root.join("report.txt"), &report)
}

fn run_stage(run: &RunDir, cfg: &RunConfig, stage: &str) -> Result<()> {
    match stage {
        "fingerprint" => stage_fingerprint(run, cfg),
        "configure" => stage_configure(run, cfg),
        "train" => stage_train(run, cfg),
        "predict" => stage_predict(run, cfg),
        "postprocess" => stage_postprocess(run, cfg),
        "evaluate" => stage_evaluate(run, cfg),
        _ => Err(arg_err!("unknown stage {stage}")),
    }
}

/// Runs every stage whose marker is missing (all of them with `force`).
/// Once a stage re-runs, all later stages re-run too.
pub fn run_pipeline(cfg: &RunConfig, run_dir: &Path, force: bool) -> Result<PipelineReport> {
    let run = RunDir::new(run_dir);
    mkdir(&run.root.join("stages"))?;
    if force {
        for s in STAGES {
            let _ = std::fs::remove_file(run.marker(s));
        }
    }
    let mut report = PipelineReport::default();
    let mut dirty = false;
    for stage in STAGES {
        if stage == "postprocess" && cfg.post_rule == PostRule::None {
            continue;
        }
        if !dirty && run.marker(stage).exists() {
            report.skipped.push(stage.to_string());
            continue;
        }
        dirty = true;
        let _ = std::fs::remove_file(run.marker(stage));
        log::info!("stage {stage}");
        run_stage(&run, cfg, stage)?;
        write_text(&run.marker(stage), "")?;
        report.executed.push(stage.to_string());
    }
    Ok(report)
}

/// Fold split as recorded by the train stage.
pub fn load_folds(run: &RunDir) -> Result<FoldSplit> {
    read_json(&run.folds())
}
