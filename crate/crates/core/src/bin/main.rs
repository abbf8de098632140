//! Command-line pipeline: synthesize data, train the basic model, graft
//! branches, train few-shot groups, translate images and export attention
//! panels.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cartoonbranch::data::synth::{generate_synthetic, SynthSpec};
use cartoonbranch::data::{image_to_tensor, load_image, load_manifest, tensor_to_image};
use cartoonbranch::io::{export_attention, load, save, CheckpointMeta, FORMAT_VERSION};
use cartoonbranch::loss::LossWeights;
use cartoonbranch::model::{ArchConfig, Direction, GroupId, SplitConfig};
use cartoonbranch::train::{
    train_basic, train_fewshot, write_jsonl, Stage, TrainConfig,
};
use cartoonbranch::{Error, Result};

/// Single-file run configuration; every section is optional and defaults
/// match the full-scale setup.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    train: TrainConfig,
    arch: ArchConfig,
    split: SplitConfig,
    weights: LossWeights,
}

#[derive(Parser)]
#[command(
    name = "cartoonbranch",
    about = "Few-shot face-to-cartoon translation with branched generators",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run config; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's rng seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's iteration count
    #[arg(long)]
    iters: Option<usize>,
    /// Few-shot routing mode: default, mixed, finetune_all, no_selective
    #[arg(long)]
    ablation: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(path) => toml::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(iters) = self.iters {
            cfg.train.iterations = iters;
        }
        if let Some(ablation) = &self.ablation {
            cfg.train.ablation = ablation.parse()?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the procedural multi-group dataset
    SynthData {
        /// Dataset root to create
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        per_group: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Allow writing into an existing directory
        #[arg(long)]
        force: bool,
    },
    /// Stage 1: train the single-branch model on group 0
    TrainBasic {
        /// Dataset root (group<k>/{real,cartoon})
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint, metrics and resolved config
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Graft untrained branches for new groups onto a basic checkpoint
    Graft {
        #[arg(long)]
        ckpt: PathBuf,
        /// Total number of groups after grafting
        #[arg(long)]
        groups: usize,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Stage 2: train grafted branches with the configured routing mode
    TrainFewshot {
        #[arg(long)]
        data: PathBuf,
        /// Basic (or already grafted) checkpoint to start from
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Translate one image through a chosen branch
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        group: usize,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Export five-column CAM attention panels for input images
    Attention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        group: usize,
        #[arg(long, default_value = "real2cartoon")]
        direction: Direction,
        /// Input images (one panel per image)
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint's manifest
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn check_fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        return Err(Error::WouldOverwrite(dir.to_path_buf()));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_run_artifacts(
    out: &Path,
    cfg: &RunConfig,
    trainer: &cartoonbranch::train::Trainer,
    trace: &[cartoonbranch::train::MetricRecord],
    stage: Stage,
) -> Result<()> {
    let resolved = toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("config.toml"), resolved)?;
    write_jsonl(trace, std::fs::File::create(out.join("metrics.jsonl"))?)?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        arch: trainer.models.arch.clone(),
        split: trainer.models.split,
        group_ids: (0..trainer.models.n_groups()).collect(),
        weights: trainer.weights,
        seed: cfg.train.seed,
        stage,
        ablation: cfg.train.ablation,
    };
    save(&out.join("checkpoint.ckpt"), &trainer.models, &meta, true)?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::SynthData {
            out,
            groups,
            per_group,
            image_size,
            seed,
            force,
        } => {
            check_fresh_dir(&out, force)?;
            let spec = SynthSpec {
                groups,
                per_group,
                image_size,
                seed,
            };
            let manifest = generate_synthetic(&out, &spec)?;
            println!(
                "wrote {} groups x {} images per domain under {}",
                manifest.n_groups(),
                per_group,
                out.display()
            );
        }
        Cmd::TrainBasic {
            data,
            out,
            force,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            check_fresh_dir(&out, force)?;
            let manifest = load_manifest(&data)?;
            let (trainer, trace) = train_basic(
                &manifest,
                &cfg.arch,
                &cfg.split,
                cfg.weights,
                cfg.train,
            )?;
            write_run_artifacts(&out, &cfg, &trainer, &trace, Stage::Basic)?;
            println!(
                "trained basic model for {} steps; artifacts in {}",
                trace.len(),
                out.display()
            );
        }
        Cmd::Graft {
            ckpt,
            groups,
            out,
            force,
        } => {
            let (mut models, mut meta) = load(&ckpt)?;
            if groups <= models.n_groups() {
                return Err(Error::Config(format!(
                    "--groups {groups} must exceed the checkpoint's {} branches",
                    models.n_groups()
                )));
            }
            let new: Vec<GroupId> = (models.n_groups()..groups).map(GroupId).collect();
            models.gen = cartoonbranch::branch::graft_branches(
                &mut models.store,
                &models.gen,
                &new,
            )?;
            models.resize_cls_heads(groups, 0.02, meta.seed);
            meta.group_ids = (0..groups).collect();
            meta.stage = Stage::FewShot;
            save(&out, &models, &meta, force)?;
            println!("grafted to {groups} groups -> {}", out.display());
        }
        Cmd::TrainFewshot {
            data,
            ckpt,
            out,
            force,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            check_fresh_dir(&out, force)?;
            let manifest = load_manifest(&data)?;
            let (models, _meta) = load(&ckpt)?;
            let (trainer, trace) = train_fewshot(&manifest, models, cfg.weights, cfg.train)?;
            write_run_artifacts(&out, &cfg, &trainer, &trace, Stage::FewShot)?;
            println!(
                "trained few-shot stage for {} steps; artifacts in {}",
                trace.len(),
                out.display()
            );
        }
        Cmd::Translate {
            ckpt,
            group,
            direction,
            input,
            output,
            force,
        } => {
            if output.exists() && !force {
                return Err(Error::WouldOverwrite(output));
            }
            let (models, _) = load(&ckpt)?;
            let img = load_image(&input)?;
            let x = image_to_tensor(&img, models.arch.image_size);
            let mut t = cartoonbranch::autodiff::Tape::new();
            let xv = t.value(x);
            let outv = models.gen.translate(
                &models.store,
                &mut t,
                xv,
                GroupId(group),
                direction,
                false,
            )?;
            tensor_to_image(t.val(outv.image)).save(&output).map_err(Error::from)?;
            println!("translated {} -> {}", input.display(), output.display());
        }
        Cmd::Attention {
            ckpt,
            group,
            direction,
            input,
            out,
        } => {
            let (models, _) = load(&ckpt)?;
            let images = input
                .iter()
                .map(|p| Ok(image_to_tensor(&load_image(p)?, models.arch.image_size)))
                .collect::<Result<Vec<_>>>()?;
            let files = export_attention(&models, &images, GroupId(group), direction, &out)?;
            println!("wrote {} attention panels under {}", files.len(), out.display());
        }
        Cmd::Inspect { ckpt } => {
            let (models, meta) = load(&ckpt)?;
            println!("format_version: {}", meta.format_version);
            println!("stage: {:?}", meta.stage);
            println!("ablation: {:?}", meta.ablation);
            println!("group_ids: {:?}", meta.group_ids);
            println!(
                "split: enc_res_specific={} dec_res_specific={}",
                meta.split.enc_res_specific, meta.split.dec_res_specific
            );
            println!(
                "arch: image_size={} base_width={} n_down={} n_res_enc={} n_res_dec={} disc_layers={}",
                meta.arch.image_size,
                meta.arch.base_width,
                meta.arch.n_down,
                meta.arch.n_res_enc,
                meta.arch.n_res_dec,
                meta.arch.disc_layers
            );
            println!("seed: {}", meta.seed);
            println!("parameters: {}", models.store.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
