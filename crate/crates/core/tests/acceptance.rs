//! One PASS/FAIL line per acceptance criterion. Names given on the command
//! line select criteria by substring.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cloudseg::autoconfig::{configure_pipeline, estimate_memory, MemoryBudget};
use cloudseg::baseline::{band_threshold, otsu_threshold};
use cloudseg::eval::{
    confusion, metrics_from_confusion, mos_aggregate, wilcoxon_two_tailed, JiPair, MosChoice, MosGroup, MosResponse,
};
use cloudseg::fingerprint::{normalize_patch, BandStats, DatasetFingerprint};
use cloudseg::infer::tiled_predict;
use cloudseg::net::load_checkpoint;
use cloudseg::pipeline::{mean_ji, run_pipeline, score_dir, Overrides, RunConfig, RunDir};
use cloudseg::postproc::{adaptive_op, adaptive_postprocess, dilate, erode, morph, MorphOp, PostRule, StructuringElement};
use cloudseg::raster::{
    blend_weights, load_mask, load_patch, split_map, stitch_scene, Blend, CloudMask, Manifest, MultiBandPatch,
    PatchGrid, ProbabilityMap,
};
use cloudseg::synth::{generate_scene, generate_synthetic_dataset, SynthSpec, REFLECTANCE_SCALE};
use common::oracle::*;
use common::*;
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Harness {
    filters: Vec<String>,
    failed: usize,
    ran: usize,
}

impl Harness {
    fn selected(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    fn run(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Check) {
        if !self.selected(name) {
            return;
        }
        self.ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let t = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if t <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0} s limit", limit.as_secs_f64())),
            Err(e) => (false, e),
        };
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} {name} ({:.2} s, limit {:.0} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            t.as_secs_f64(),
            limit.as_secs_f64()
        );
    }
}

fn metric_oracle() -> Check {
    let mut r = rng(101);
    let mut defined = 0;
    for case in 0..1000 {
        let density = r.random_range(0.0..1.0);
        let pred = random_mask(16, 16, density, &mut r);
        let gt = random_mask(16, 16, r.random_range(0.0..1.0), &mut r);
        let c = confusion(&pred, &gt).map_err(|e| e.to_string())?;
        ensure((c.tp, c.fp, c.fn_, c.tn) == confusion_oracle(&pred, &gt), || format!("case {case}: counts differ"))?;
        let m = metrics_from_confusion(&c);
        ensure(m.values() == metrics_oracle(&pred, &gt), || format!("case {case}: metrics differ"))?;
        if let (Some(ji), Some(pr), Some(re)) = (m.ji, m.pr, m.re) {
            defined += 1;
            ensure(ji <= pr.min(re), || format!("case {case}: JI {ji} > min(Pr {pr}, Re {re})"))?;
        }
    }
    Ok(format!("1000 pairs identical to the pixel loop; JI <= min(Pr,Re) on {defined} defined cases"))
}

fn morphology_oracle() -> Check {
    let mut r = rng(102);
    let full = StructuringElement::default();
    for case in 0..1000 {
        let m = if case % 2 == 0 { blobby_mask(16, 16, &mut r) } else { random_mask(16, 16, r.random_range(0.0..1.0), &mut r) };
        let mut taps = [[false; 3]; 3];
        for row in &mut taps {
            for t in row {
                *t = r.random_bool(0.6);
            }
        }
        taps[1][1] = true;
        let se = StructuringElement::new(taps).map_err(|e| e.to_string())?;
        ensure(dilate(&m, &se) == dilate_oracle(&m, &taps), || format!("case {case}: dilation"))?;
        ensure(erode(&m, &se) == erode_oracle(&m, &taps), || format!("case {case}: erosion"))?;
        ensure(morph(&m, MorphOp::Open, &se) == open_oracle(&m, &taps), || format!("case {case}: opening"))?;
        ensure(morph(&m, MorphOp::Close, &se) == close_oracle(&m, &taps), || format!("case {case}: closing"))?;
        ensure(adaptive_postprocess(&m) == adaptive_oracle(&m), || format!("case {case}: adaptive rule"))?;
        let open = morph(&m, MorphOp::Open, &full);
        let close = morph(&m, MorphOp::Close, &full);
        ensure(morph(&open, MorphOp::Open, &full) == open, || format!("case {case}: opening not idempotent"))?;
        ensure(morph(&close, MorphOp::Close, &full) == close, || format!("case {case}: closing not idempotent"))?;
        ensure(
            erode(&m, &full).is_subset_of(&open)
                && open.is_subset_of(&m)
                && m.is_subset_of(&close)
                && close.is_subset_of(&dilate(&m, &full)),
            || format!("case {case}: erode <= open <= mask <= close <= dilate violated"),
        )?;
    }
    let half = CloudMask::from_fn(16, 16, |y, _| y < 8);
    let above = CloudMask::from_fn(16, 16, |y, x| y < 8 || (y == 8 && x == 0));
    ensure(adaptive_op(&half) == MorphOp::Open, || "exactly 50% cloud must open".into())?;
    ensure(adaptive_op(&above) == MorphOp::Close, || "129/256 cloud must close".into())?;
    Ok("1000 masks match the padded-window oracle; idempotence and ordering hold; 128/256 opens, 129/256 closes".into())
}

fn gradient_checks() -> Check {
    let mut worst = BTreeMap::new();
    let mut record = |name: &str, e: f64| {
        let w = worst.entry(name.to_string()).or_insert(0.0f64);
        *w = w.max(e);
    };
    for seed in 0..4 {
        record("conv3x3", conv_gradcheck(2, 3, 3, 1, seed));
        record("conv3x3/2", conv_gradcheck(2, 3, 3, 2, seed));
        record("conv1x1", conv_gradcheck(3, 2, 1, 1, seed));
        record("upconv", upconv_gradcheck(3, 2, seed));
        record("instance_norm", norm_gradcheck(3, seed));
        record("leaky_relu", leaky_gradcheck(seed));
        record("dice_ce_loss", loss_gradcheck(seed));
    }
    let mut r = rng(99);
    let (mut checked, mut kinked) = (0, 0);
    for case in 0..4 {
        for t in model_gradcheck(tiny_arch(&mut r), 1, 16, case) {
            ensure(t.checked > 0, || format!("{}: no entry away from a kink", t.name))?;
            checked += t.checked;
            kinked += t.kinked;
            record("tiny_unet", t.worst);
        }
    }
    let bad: Vec<String> = worst.iter().filter(|(_, &e)| !(e < REL_TOL)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    ensure(bad.is_empty(), || format!("above {REL_TOL:e}: {}", bad.join(", ")))?;
    let summary: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok(format!(
        "worst relative error per kind: {}; full nets: {checked} entries checked, {kinked} skipped at activation kinks",
        summary.join(", ")
    ))
}

fn stitching_identity() -> Check {
    let mut r = rng(104);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let (sh, sw) = (r.random_range(8..90), r.random_range(8..90));
        let (ph, pw) = (r.random_range(8..=sh.min(48)), r.random_range(8..=sw.min(48)));
        let overlap = r.random_range(0.0..0.9);
        let vals = (0..sh * sw).map(|_| r.random_range(0.0..=1.0)).collect();
        let map = ProbabilityMap::new(sh, sw, vals).map_err(|e| e.to_string())?;
        let grid = PatchGrid::new(None, (sh, sw), (ph, pw), overlap).map_err(|e| e.to_string())?;
        ensure(grid.coverage().iter().all(|&c| c >= 1), || "uncovered pixel".into())?;
        for blend in [Blend::Uniform, Blend::Gaussian] {
            let out = stitch_scene(&split_map(&map, &grid).unwrap(), &grid, blend).map_err(|e| e.to_string())?;
            for (a, b) in out.values().iter().zip(map.values()) {
                worst = worst.max((a - b).abs() as f64);
            }
            if blend == Blend::Gaussian {
                let w = blend_weights(blend, ph, pw);
                let mut den = vec![0.0f64; sh * sw];
                let mut num = vec![0.0f64; sh * sw];
                for &(t, l) in &grid.offsets {
                    for y in 0..ph {
                        for x in 0..pw {
                            den[(t + y) * sw + l + x] += w[y * pw + x];
                        }
                    }
                }
                for &(t, l) in &grid.offsets {
                    for y in 0..ph {
                        for x in 0..pw {
                            let i = (t + y) * sw + l + x;
                            num[i] += w[y * pw + x] / den[i];
                        }
                    }
                }
                let off = num.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
                ensure(off <= 1e-6, || format!("normalized weights sum off by {off:e}"))?;
            }
        }
    }
    ensure(worst <= 1e-6, || format!("round trip error {worst:e}"))?;
    Ok(format!("300 grids, both blends: worst round-trip error {worst:.1e}; normalized Gaussian weights sum to 1 within 1e-6"))
}

fn autoconfig_check() -> Check {
    let fp = |h: usize, w: usize, n: usize, bands: usize| DatasetFingerprint {
        n_patches: n,
        band_count: bands,
        median_shape: (h, w),
        bands: vec![BandStats { mean: 0.1, std: 0.05, p0_5: 0.0, p99_5: 0.4 }; bands],
        class_imbalance: 0.4,
        n_pixels: (h * w * n) as u64,
        percentile_stride: 1,
    };
    let cases = [
        (384, 5, vec![32, 64, 128, 256, 512, 512]),
        (512, 5, vec![32, 64, 128, 256, 512, 512]),
        (16, 1, vec![32, 64]),
    ];
    for (m, d, ch) in cases {
        let c = configure_pipeline(&fp(m, m, 8000, 4), &MemoryBudget::default(), 5).map_err(|e| e.to_string())?.config;
        ensure(c.patch_size == (m, m) && c.n_downsamplings == d && c.channels_per_stage == ch, || {
            format!("median {m}: got patch {:?}, d {}, channels {:?}", c.patch_size, c.n_downsamplings, c.channels_per_stage)
        })?;
    }
    let mut r = rng(105);
    let mut emitted = 0;
    for case in 0..10_000 {
        let f = fp(r.random_range(16..1100), r.random_range(16..1100), r.random_range(1..5000), r.random_range(1..13));
        let b = MemoryBudget {
            bytes_available: r.random_range(1u64 << 20..64 << 30),
            safety_factor: r.random_range(0.1f32..=1.0),
        };
        let Ok(c) = configure_pipeline(&f, &b, 4) else { continue };
        let c = c.config;
        emitted += 1;
        let unit = 1usize << c.n_downsamplings;
        ensure(c.patch_size.0 % unit == 0 && c.patch_size.1 % unit == 0, || format!("case {case}: divisibility"))?;
        let need = estimate_memory(&c, c.batch_size);
        ensure(need == memory_oracle(&c, c.batch_size), || format!("case {case}: memory model differs from hand formula"))?;
        ensure(need as f64 <= b.safety_factor as f64 * b.bytes_available as f64, || format!("case {case}: infeasible"))?;
    }
    Ok(format!("three reference shapes exact; {emitted}/10000 fuzzed budgets produced configs, all divisible and feasible"))
}

fn wilcoxon_check() -> Check {
    let mut r = rng(106);
    let mut exact = 0;
    let mut refused = 0;
    for case in 0..500 {
        let n = r.random_range(1..=12);
        let tied = case % 2 == 0;
        let draw = |r: &mut rand_chacha::ChaCha8Rng| if tied { r.random_range(0..5) as f64 * 0.25 } else { r.random_range(-1.0..1.0) };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let b: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let (nz, w, p) = wilcoxon_enumeration(&a, &b);
        match wilcoxon_two_tailed(&a, &b) {
            Ok(res) => {
                ensure(res.n == nz, || format!("case {case}: n {} vs {nz}", res.n))?;
                if nz > 0 {
                    ensure(res.w_plus == w && (res.p - p).abs() < 1e-12, || {
                        format!("case {case}: W+ {} p {} vs enumeration W+ {w} p {p}", res.w_plus, res.p)
                    })?;
                    exact += 1;
                }
            }
            Err(_) => {
                ensure((1..5).contains(&nz), || format!("case {case}: refused with {nz} non-zero differences"))?;
                refused += 1;
            }
        }
    }
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
    let p5 = wilcoxon_two_tailed(&a, &b).map_err(|e| e.to_string())?.p;
    ensure(p5 == 0.0625, || format!("n=5 all-positive p = {p5}"))?;
    Ok(format!(
        "{exact} cases equal to 2^n enumeration, {refused} refused with fewer than 5 non-zero differences; n=5 p = {p5}"
    ))
}

fn mos_check() -> Check {
    let ji = |id: &str, a, b| JiPair { image_id: id.into(), ji_a: a, ji_b: b };
    let table = vec![ji("i1", 0.9, 0.8), ji("i2", 0.5, 0.7), ji("i3", 0.6, 0.6), ji("i4", 0.2, 0.9)];
    use MosChoice::*;
    let answers = [("i1", vec![A, A, B, Both]), ("i2", vec![B, B, None, A]), ("i3", vec![Both, Both]), ("i4", vec![B])];
    let responses: Vec<MosResponse> = answers
        .iter()
        .flat_map(|(id, cs)| cs.iter().map(move |&c| MosResponse { image_id: id.to_string(), choice: c }))
        .collect();
    let t = mos_aggregate(&responses, &table).map_err(|e| e.to_string())?;
    // hand-computed from the per-image percentages above
    let expected = [
        (MosGroup::ABetter, 1, [50.0, 25.0, 25.0, 0.0]),
        (MosGroup::BBetter, 2, [12.5, 75.0, 0.0, 12.5]),
        (MosGroup::All, 4, [18.75, 43.75, 31.25, 6.25]),
    ];
    for (row, (g, n, pct)) in t.rows.iter().zip(expected) {
        ensure(row.group == g && row.n_images == n, || format!("{:?}: group or count {}", row.group, row.n_images))?;
        let got = row.pct.ok_or("missing percentages")?;
        ensure(got.iter().zip(pct).all(|(a, b)| (a - b).abs() < 1e-9), || format!("{g:?}: {got:?} vs {pct:?}"))?;
    }
    let mut r = rng(109);
    for _ in 0..500 {
        let n = r.random_range(1..10);
        let tab: Vec<JiPair> = (0..n)
            .map(|i| ji(&format!("x{i}"), r.random_range(0..3) as f64 / 2.0, r.random_range(0..3) as f64 / 2.0))
            .collect();
        let resp: Vec<MosResponse> = (0..r.random_range(0..30))
            .map(|_| MosResponse {
                image_id: format!("x{}", r.random_range(0..n)),
                choice: [A, B, Both, None][r.random_range(0..4)],
            })
            .collect();
        let t = mos_aggregate(&resp, &tab).map_err(|e| e.to_string())?;
        for row in &t.rows {
            if let Some(p) = row.pct {
                let s: f64 = p.iter().sum();
                ensure((s - 100.0).abs() <= 0.01, || format!("row sums to {s}"))?;
            }
        }
    }
    Ok("hand rows reproduced (ties only in the all-images row); 500 random tables sum to 100 +- 0.01".into())
}

struct E2e {
    _tmp: tempfile::TempDir,
    cfg: RunConfig,
    run: PathBuf,
    elapsed: Duration,
    ensemble_ji: f64,
    fold_ji: Vec<f64>,
    test_spec: SynthSpec,
}

fn e2e_config(train: &Path, test: &Path) -> RunConfig {
    RunConfig {
        train_manifest: train.join("manifest.jsonl"),
        test_manifest: test.join("manifest.jsonl"),
        folds: 4,
        seed: 7,
        budget_gb: 24.0,
        post_rule: PostRule::Adaptive,
        overrides: Overrides {
            base_channels: Some(8),
            epochs: Some(15),
            ..Overrides::default()
        },
    }
}

fn run_e2e() -> Result<E2e, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (train, test) = (tmp.path().join("train"), tmp.path().join("test"));
    let train_spec = SynthSpec { seed: 1, ..SynthSpec::default() };
    let test_spec = SynthSpec { n_scenes: 12, seed: 2, ..SynthSpec::default() };
    let start = Instant::now();
    generate_synthetic_dataset(&train_spec, &train).map_err(|e| e.to_string())?;
    generate_synthetic_dataset(&test_spec, &test).map_err(|e| e.to_string())?;
    let cfg = e2e_config(&train, &test);
    let run = tmp.path().join("run");
    run_pipeline(&cfg, &run, false).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rd = RunDir::new(&run);
    let test_m = Manifest::load(&cfg.test_manifest).map_err(|e| e.to_string())?;
    let ji_of = |dir: &Path| -> Result<f64, String> {
        mean_ji(&score_dir(&test_m, dir).map_err(|e| e.to_string())?).ok_or_else(|| "no defined JI".to_string())
    };
    let ensemble_ji = ji_of(&rd.predictions())?;
    let fold_ji = (0..4).map(|f| ji_of(&rd.fold_predictions(f))).collect::<Result<Vec<_>, _>>()?;
    Ok(E2e { _tmp: tmp, cfg, run, elapsed, ensemble_ji, fold_ji, test_spec })
}

fn e2e_check(e: &E2e) -> Check {
    let worst = e.fold_ji.iter().cloned().fold(f64::INFINITY, f64::min);
    let folds: Vec<String> = e.fold_ji.iter().map(|j| format!("{j:.4}")).collect();
    let detail = format!(
        "held-out patch-mean JI {:.4} (>= 0.85), folds [{}], pipeline {:.0} s (< 1200 s)",
        e.ensemble_ji,
        folds.join(", "),
        e.elapsed.as_secs_f64()
    );
    ensure(e.ensemble_ji >= 0.85, || format!("{detail}: JI below 0.85"))?;
    ensure(e.ensemble_ji >= worst, || format!("{detail}: ensemble below worst fold {worst:.4}"))?;
    ensure(e.elapsed < Duration::from_secs(1200), || format!("{detail}: too slow"))?;
    Ok(detail)
}

/// Scene reflectance quantized exactly as the dataset writer stores it.
fn stored_scene(spec: &SynthSpec, i: usize) -> (MultiBandPatch, CloudMask) {
    let (scene, mask) = generate_scene(spec, i).unwrap();
    let (b, h, w, vals) = scene.clone().into_parts();
    let q = vals.iter().map(|v| (v * REFLECTANCE_SCALE).round().clamp(0.0, u16::MAX as f32)).collect();
    (MultiBandPatch::new(scene.patch_id, scene.scene_id, b, h, w, q).unwrap(), mask)
}

fn boundary_band_check(e: &E2e) -> Check {
    let rd = RunDir::new(&e.run);
    let fp = DatasetFingerprint::load(&rd.fingerprint()).map_err(|e| e.to_string())?;
    let config = cloudseg::autoconfig::PipelineConfig::load(&rd.config()).map_err(|e| e.to_string())?;
    let models = (0..config.n_folds)
        .map(|f| load_checkpoint(&rd.checkpoint(f), None).map(|m| m.0))
        .collect::<cloudseg::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let members: Vec<_> = models.iter().collect();
    let (mut err0, mut err5, mut n) = (0.0f64, 0.0f64, 0usize);
    for i in 0..e.test_spec.n_scenes {
        let (raw, gt) = stored_scene(&e.test_spec, i);
        let scene = normalize_patch(&raw, &fp).map_err(|e| e.to_string())?;
        let p0 = tiled_predict(&members, config.patch_size, &scene, 0.0, config.blend).map_err(|e| e.to_string())?;
        let p5 = tiled_predict(&members, config.patch_size, &scene, 0.5, config.blend).map_err(|e| e.to_string())?;
        let grid = PatchGrid::new(None, scene.shape(), config.patch_size, 0.0).map_err(|e| e.to_string())?;
        let (h, w) = scene.shape();
        // pixels within 4 px of an interior overlap-0 seam
        let near = |v: usize, seams: &[usize]| seams.iter().any(|&s| v + 4 >= s && v < s + 4);
        let rows: Vec<usize> = grid.offsets.iter().map(|o| o.0).filter(|&t| t > 0).collect();
        let cols: Vec<usize> = grid.offsets.iter().map(|o| o.1).filter(|&l| l > 0).collect();
        for y in 0..h {
            for x in 0..w {
                if near(y, &rows) || near(x, &cols) {
                    let t = gt.get(y, x) as u8 as f64;
                    err0 += (p0.get(y, x) as f64 - t).abs();
                    err5 += (p5.get(y, x) as f64 - t).abs();
                    n += 1;
                }
            }
        }
    }
    let (m0, m5) = (err0 / n as f64, err5 / n as f64);
    let detail = format!("mean |p - truth| on {n} seam-band pixels: overlap 0 {m0:.4}, overlap 0.5 {m5:.4}");
    ensure(m5 < m0, || detail.clone())?;
    Ok(detail)
}

fn otsu_dataset_ji(m: &Manifest, band: usize) -> Result<f64, String> {
    let mut patches = Vec::new();
    for rec in &m.records {
        let p = load_patch(m, rec).map_err(|e| e.to_string())?;
        let gt = load_mask(m, rec).map_err(|e| e.to_string())?.ok_or("missing mask")?;
        patches.push((p, gt));
    }
    let pooled: Vec<f32> = patches.iter().flat_map(|(p, _)| p.band(band).iter().copied()).collect();
    let tau = otsu_threshold(&pooled).ok_or("constant band")?;
    let jis = patches
        .iter()
        .map(|(p, gt)| {
            let (h, w) = p.shape();
            let pred = band_threshold(p.band(band), h, w, tau).unwrap();
            metrics_from_confusion(&confusion(&pred, gt).unwrap()).ji
        })
        .collect::<Vec<_>>();
    cloudseg::eval::mean_defined(jis).0.ok_or_else(|| "no defined JI".into())
}

/// Blue band: the background varies least there, so clouds stand out most.
const BASELINE_BAND: usize = 0;

fn baseline_check(e: &E2e) -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let thick = SynthSpec { haze_fraction: 0.0, ..e.test_spec.clone() };
    let thick_m = generate_synthetic_dataset(&thick, tmp.path()).map_err(|e| e.to_string())?;
    let ji_thick = otsu_dataset_ji(&thick_m, BASELINE_BAND)?;
    let haze_m = Manifest::load(&e.cfg.test_manifest).map_err(|e| e.to_string())?;
    let ji_haze = otsu_dataset_ji(&haze_m, BASELINE_BAND)?;
    let detail = format!(
        "Otsu JI thick-only {ji_thick:.4} (>= 0.95); with haze {ji_haze:.4} vs trained ensemble {:.4}",
        e.ensemble_ji
    );
    ensure(ji_thick >= 0.95 && ji_haze < e.ensemble_ji, || detail.clone())?;
    Ok(detail)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism_check(e: &E2e) -> Check {
    let second = e.run.with_file_name("run_again");
    run_pipeline(&e.cfg, &second, false).map_err(|e| e.to_string())?;
    let (a, b) = (snapshot(&e.run), snapshot(&second));
    ensure(a.keys().eq(b.keys()), || "runs wrote different file sets".into())?;
    let differing: Vec<String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure(differing.is_empty(), || format!("differing files: {}", differing.join(", ")))?;
    let count = |pred: &dyn Fn(&str) -> bool| a.keys().filter(|k| pred(&k.to_string_lossy())).count();
    Ok(format!(
        "second run identical in all {} files ({} checkpoint tensors, {} masks, {} metrics files)",
        a.len(),
        count(&|k| k.starts_with("checkpoints/")),
        count(&|k| k.ends_with(".cseg") && !k.starts_with("checkpoints/")),
        count(&|k| k.starts_with("metrics") || k == "summary.json" || k == "significance.json")
    ))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut h = Harness { filters, failed: 0, ran: 0 };
    let secs = Duration::from_secs;

    h.run("metric_oracle", secs(5), metric_oracle);
    h.run("morphology_oracle", secs(10), morphology_oracle);
    h.run("gradient_checks", secs(60), gradient_checks);
    h.run("stitching_round_trip", secs(30), stitching_identity);
    h.run("autoconfig", secs(10), autoconfig_check);
    h.run("wilcoxon", secs(30), wilcoxon_check);
    h.run("mos_aggregation", secs(5), mos_check);

    let needs_run = ["end_to_end", "stitching_boundary_band", "baseline", "determinism"];
    if needs_run.iter().any(|n| h.selected(n)) {
        match run_e2e() {
            Ok(e) => {
                h.run("end_to_end", secs(1200), || e2e_check(&e));
                h.run("stitching_boundary_band", secs(30), || boundary_band_check(&e));
                h.run("baseline", secs(60), || baseline_check(&e));
                h.run("determinism", secs(1200), || determinism_check(&e));
            }
            Err(err) => {
                for n in needs_run {
                    h.run(n, secs(1), || Err(format!("pipeline run failed: {err}")));
                }
            }
        }
    }
    println!("{} of {} acceptance criteria passed", h.ran - h.failed, h.ran);
    if h.failed > 0 {
        std::process::exit(1);
    }
}
