use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cloudseg::autoconfig::{configure_pipeline_with, ArchRules, MemoryBudget};
use cloudseg::baseline::{band_threshold, otsu_threshold};
use cloudseg::eval::{mos_aggregate, mos_table_csv, parse_ji_csv, parse_responses_csv};
use cloudseg::fingerprint::{compute_fingerprint, DatasetFingerprint};
use cloudseg::pipeline::{self, RunConfig, RunDir};
use cloudseg::postproc::{apply_rule, PostRule, StructuringElement};
use cloudseg::raster::{
    load_mask, load_mask_file, load_patch, load_tensor, plane_dims, render_overlay, save_mask, write_atomic, Manifest,
    MultiBandPatch,
};
use cloudseg::synth::{generate_synthetic_dataset, SynthSpec};
use cloudseg::{Error, Result};

#[derive(Parser)]
#[command(name = "cloudseg", version, about = "Self-configuring cloud segmentation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run directory holding artifacts and stage markers.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Training memory budget in GiB.
    #[arg(long, global = true)]
    budget_gb: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics of a training manifest.
    Fingerprint {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Derive the pipeline configuration from the run's fingerprint.
    Configure {
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long)]
        base_channels: Option<usize>,
    },
    /// Train every fold of the configured pipeline.
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Ensemble prediction for every patch of a manifest.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Morphological clean-up of a directory of masks.
    Postprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "adaptive")]
        rule: PostRule,
    },
    /// Single-band threshold detector.
    Baseline {
        #[arg(long)]
        band: PathBuf,
        #[arg(long, conflicts_with = "otsu")]
        tau: Option<f32>,
        #[arg(long)]
        otsu: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics, summaries and significance tests for the run's predictions.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Also score the post-processed masks made with this rule.
        #[arg(long, default_value = "none")]
        post_rule: PostRule,
    },
    /// Aggregate opinion-score responses.
    MosReport {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        ji: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic cloud dataset.
    Synth {
        #[arg(long, default_value_t = 50)]
        scenes: usize,
        #[arg(long, default_value = "128,128", value_parser = parse_pair)]
        size: (usize, usize),
        #[arg(long, default_value = "64,64", value_parser = parse_pair)]
        patch: (usize, usize),
        #[arg(long, default_value_t = 4)]
        bands: usize,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long, default_value_t = 0.2)]
        haze: f64,
        #[arg(long, default_value_t = 0.01)]
        noise: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from a run config, resuming after completed stages.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
        /// Overrides the config's post-processing rule.
        #[arg(long)]
        post_rule: Option<PostRule>,
    },
    /// Colour composite with a mask painted on, as PPM.
    Render {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        patch_id: String,
        #[arg(long)]
        mask: PathBuf,
        /// Band indices used as red, green, blue.
        #[arg(long, default_value = "2,1,0")]
        rgb: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected H,W")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

fn run_config_for(manifest: &Path, g: &Global) -> RunConfig {
    RunConfig {
        train_manifest: manifest.to_path_buf(),
        test_manifest: manifest.to_path_buf(),
        folds: 4,
        seed: g.seed.unwrap_or(0),
        budget_gb: g.budget_gb.unwrap_or(24.0),
        post_rule: PostRule::None,
        overrides: Default::default(),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let run = RunDir::new(&g.run_dir);
    match cli.command {
        Command::Fingerprint { manifest } => {
            mkdir(&run.root)?;
            compute_fingerprint(&Manifest::load(&manifest)?)?.save(&run.fingerprint())
        }
        Command::Configure { folds, base_channels } => {
            let fp = DatasetFingerprint::load(&run.fingerprint())?;
            let mut rules = ArchRules::default();
            if let Some(b) = base_channels {
                rules.base_channels = b;
            }
            let budget = match g.budget_gb {
                Some(gb) => MemoryBudget::from_gb(gb)?,
                None => MemoryBudget::default(),
            };
            let c = configure_pipeline_with(&fp, &budget, folds, &rules)?;
            c.config.save(&run.config())?;
            write_atomic(&run.trace(), c.trace_text().as_bytes())?;
            print!("{}", c.trace_text());
            Ok(())
        }
        Command::Train { manifest } => pipeline::stage_train(&run, &run_config_for(&manifest, g)),
        Command::Predict { manifest } => pipeline::stage_predict(&run, &run_config_for(&manifest, g)),
        Command::Postprocess { input, output, rule } => {
            mkdir(&output)?;
            let se = StructuringElement::default();
            let entries = std::fs::read_dir(&input).map_err(|e| Error::io(format!("listing {}", input.display()), e))?;
            let mut names: Vec<String> = entries
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".mask.cseg"))
                .collect();
            names.sort();
            for n in names {
                let m = load_mask_file(&input.join(&n))?;
                save_mask(&apply_rule(&m, rule, &se), &output.join(&n))?;
            }
            Ok(())
        }
        Command::Baseline { band, tau, otsu, out } => {
            let t = load_tensor(&band)?;
            let (h, w) = plane_dims(&t)?;
            let values = t.to_f32();
            let tau = match (tau, otsu) {
                (Some(v), _) => v,
                // a constant band has no split: everything is clear
                _ => otsu_threshold(&values).unwrap_or(f32::INFINITY),
            };
            log::info!("threshold {tau}");
            save_mask(&band_threshold(&values, h, w, tau)?, &out)
        }
        Command::Evaluate { manifest, post_rule } => {
            let mut cfg = run_config_for(&manifest, g);
            cfg.post_rule = post_rule;
            pipeline::stage_evaluate(&run, &cfg)
        }
        Command::MosReport { responses, ji, out } => {
            let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e));
            let table = mos_aggregate(&parse_responses_csv(&read(&responses)?)?, &parse_ji_csv(&read(&ji)?)?)?;
            let csv = mos_table_csv(&table);
            match out {
                Some(p) => write_atomic(&p, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Synth { scenes, size, patch, bands, density, haze, noise, out } => {
            let spec = SynthSpec {
                n_scenes: scenes,
                height: size.0,
                width: size.1,
                band_count: bands,
                density,
                haze_fraction: haze,
                noise_std: noise,
                seed: g.seed.unwrap_or(0),
                patch,
            };
            let m = generate_synthetic_dataset(&spec, &out)?;
            log::info!("wrote {} patches to {}", m.len(), out.display());
            Ok(())
        }
        Command::Pipeline { config, force, post_rule } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(b) = g.budget_gb {
                cfg.budget_gb = b;
            }
            if let Some(r) = post_rule {
                cfg.post_rule = r;
            }
            let report = pipeline::run_pipeline(&cfg, &run.root, force)?;
            for s in &report.skipped {
                log::info!("stage {s}: already complete");
            }
            Ok(())
        }
        Command::Render { manifest, patch_id, mask, rgb, out } => {
            let m = Manifest::load(&manifest)?;
            let rec = m.find(&patch_id).ok_or_else(|| Error::Argument(format!("no patch {patch_id}")))?;
            let patch = load_patch(&m, rec)?;
            let idx = rgb
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Argument(format!("bad band index {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if idx.len() != 3 || idx.iter().any(|&i| i >= patch.bands()) {
                return Err(Error::Argument(format!("--rgb needs three band indices below {}", patch.bands())));
            }
            let (h, w) = patch.shape();
            let planes = idx.iter().map(|&i| patch.band(i).to_vec()).collect();
            let composite = MultiBandPatch::from_planes(patch_id.clone(), None, h, w, planes)?;
            let pred = load_mask_file(&mask)?;
            let gt = load_mask(&m, rec)?;
            render_overlay(&composite, &pred, gt.as_ref(), &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
