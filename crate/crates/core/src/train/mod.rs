//! Two-stage training: a single-branch basic model on the data-rich group,
//! then branch grafting plus selective backpropagation for few-shot groups.

pub mod adam;

use std::collections::HashMap;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::branch::{graft_branches, partition, routed_loss_backward, DetachPolicy, ParamPartition};
use crate::data::{sample_batch, AugmentConfig, DatasetManifest, TrainBatch};
use crate::error::{Error, Result};
use crate::loss::{
    adv_loss_d, adv_loss_g, cam_loss_d, cam_loss_g, cycle_loss, face_id_loss, group_cls_loss,
    identity_loss, total_d, total_g, LossBundle, LossWeights,
};
use crate::model::{
    ArchConfig, BranchedGenerator, Direction, Discriminator, Domain, FaceEmbedder, GroupId,
    SplitConfig,
};

/// Which training stage a run config describes.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Basic,
    FewShot,
}

/// Few-shot routing variants: the full method plus its §ablation baselines.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Branch routing with selective backpropagation (the full method).
    Default,
    /// All groups pooled through the single basic branch; no routing.
    Mixed,
    /// Fine-tune every parameter on the few-shot groups only; no routing.
    FinetuneAll,
    /// Branch routing, but shared parameters also learn from few-shot groups.
    NoSelective,
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(AblationMode::Default),
            "mixed" => Ok(AblationMode::Mixed),
            "finetune_all" => Ok(AblationMode::FinetuneAll),
            "no_selective" => Ok(AblationMode::NoSelective),
            other => Err(Error::Config(format!(
                "unknown ablation mode '{other}' (expected default, mixed, finetune_all or no_selective)"
            ))),
        }
    }
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Discriminator learning rate; `None` means same as `lr`.
    pub lr_d: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub init_std: f64,
    pub iterations: usize,
    pub seed: u64,
    pub resize: usize,
    pub crop: usize,
    pub horizontal_flip_prob: f64,
    pub ablation: AblationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_d: None,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weight_decay: 1e-4,
            init_std: 0.02,
            iterations: 0,
            seed: 0,
            resize: 286,
            crop: 256,
            horizontal_flip_prob: 0.5,
            ablation: AblationMode::Default,
        }
    }
}

impl TrainConfig {
    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            resize: self.resize,
            crop: self.crop,
            horizontal_flip_prob: self.horizontal_flip_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.augment().validate()?;
        if self.lr <= 0.0 || self.init_std <= 0.0 {
            return Err(Error::Config("lr and init_std must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable pieces sharing one parameter store.
pub struct Models {
    pub arch: ArchConfig,
    pub split: SplitConfig,
    pub store: ParamStore,
    pub gen: BranchedGenerator,
    pub disc_real: Discriminator,
    pub disc_cartoon: Discriminator,
    pub embedder: FaceEmbedder,
}

impl Models {
    pub fn build(
        arch: &ArchConfig,
        split: &SplitConfig,
        n_groups: usize,
        init_std: f64,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let embedder = FaceEmbedder::build(&mut store, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = BranchedGenerator::build(&mut store, arch, split, n_groups, init_std, &mut rng);
        let disc_real =
            Discriminator::build(&mut store, arch, Domain::Real, n_groups, init_std, &mut rng);
        let disc_cartoon =
            Discriminator::build(&mut store, arch, Domain::Cartoon, n_groups, init_std, &mut rng);
        Ok(Models {
            arch: arch.clone(),
            split: *split,
            store,
            gen,
            disc_real,
            disc_cartoon,
            embedder,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.gen.n_groups()
    }

    pub fn disc_for(&self, domain: Domain) -> &Discriminator {
        match domain {
            Domain::Real => &self.disc_real,
            Domain::Cartoon => &self.disc_cartoon,
        }
    }

    /// AdaLIN mixing coefficients, kept in [0, 1] by the optimizer.
    pub fn rho_ids(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.contains(".rho"))
            .map(|(id, _)| id)
            .collect()
    }

    /// Replaces both group-classifier heads with freshly initialized ones
    /// sized to `n_groups`; used when grafting a basic checkpoint.
    pub fn resize_cls_heads(&mut self, n_groups: usize, init_std: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC15_0DD);
        let width = self.disc_real.trunk_width(&self.arch);
        for disc in [&mut self.disc_real, &mut self.disc_cartoon] {
            let w = crate::model::sample_weight(vec![n_groups, width], init_std, &mut rng);
            let slot = self.store.value_mut(disc.cls.w);
            *slot = w;
            slot.quantize_f32();
            *self.store.value_mut(disc.cls.b) = Array::zeros(vec![n_groups]);
            disc.n_groups = n_groups;
        }
    }
}

/// Re-draws all generator and discriminator parameters in place. Refused for
/// grafted models: their branches were seeded from a trained basic model, and
/// silently discarding that is almost certainly a bug.
pub fn init_params(models: &mut Models, init_std: f64, seed: u64) -> Result<()> {
    if models.n_groups() > 1 {
        return Err(Error::Contract(
            "refusing to re-initialize a grafted multi-branch model; build a fresh one instead"
                .into(),
        ));
    }
    *models = Models::build(&models.arch, &models.split, 1, init_std, seed)?;
    Ok(())
}

/// Per-step metric record; one JSON line each in the training trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    #[serde(flatten)]
    pub bundle: LossBundle,
    pub total_g: f64,
    pub total_d: f64,
    pub shared_grad_norm: f64,
    pub specific_grad_norms: Vec<f64>,
    pub wall_ms: f64,
}

pub fn write_jsonl(records: &[MetricRecord], mut w: impl std::io::Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub struct Trainer {
    pub models: Models,
    pub part: ParamPartition,
    pub weights: LossWeights,
    pub cfg: TrainConfig,
    pub step: usize,
    opt_g: Adam,
    opt_d: Adam,
}

impl Trainer {
    pub fn new(models: Models, weights: LossWeights, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let part = partition(&models.store, &models.gen)?;
        let mut opt_g = Adam::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);
        opt_g.clamp01.extend(models.rho_ids());
        let lr_d = cfg.lr_d.unwrap_or(cfg.lr);
        let opt_d = Adam::new(lr_d, cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);
        Ok(Trainer {
            models,
            part,
            weights,
            cfg,
            step: 0,
            opt_g,
            opt_d,
        })
    }

    /// Routing for one sample: which branch it flows through, and whether the
    /// shared stacks are detached for it.
    fn route(&self, group: GroupId) -> (GroupId, bool) {
        match self.cfg.ablation {
            AblationMode::Default => (group, DetachPolicy::selective().detach(group)),
            AblationMode::NoSelective => (group, false),
            AblationMode::Mixed | AblationMode::FinetuneAll => (GroupId(0), false),
        }
    }

    fn grads_with_prefix(
        &self,
        grads: &HashMap<ParamId, Array>,
        prefix: &str,
    ) -> HashMap<ParamId, Array> {
        grads
            .iter()
            .filter(|(id, _)| self.models.store.get(**id).name.starts_with(prefix))
            .map(|(id, g)| (*id, g.clone()))
            .collect()
    }

    /// One optimization step on a batch with one unpaired sample per group:
    /// discriminators first, then the generator, losses summed over samples
    /// and both directions.
    pub fn train_step(&mut self, batch: &TrainBatch) -> Result<MetricRecord> {
        let t0 = Instant::now();
        self.step += 1;
        let mut bundle = LossBundle::default();

        // --- discriminator update (fakes held constant) ---
        let mut fakes: Vec<[Array; 2]> = Vec::with_capacity(batch.items.len());
        for item in &batch.items {
            let (route, detach) = self.route(item.group);
            let mut ft = Tape::new();
            let per_dir = Direction::BOTH.map(|dir| {
                let src = match dir.source() {
                    Domain::Real => item.real.clone(),
                    Domain::Cartoon => item.cartoon.clone(),
                };
                let x = ft.value(src);
                self.models
                    .gen
                    .translate(&self.models.store, &mut ft, x, route, dir, detach)
                    .map(|out| ft.val(out.image).clone())
            });
            let [a, b] = per_dir;
            fakes.push([a?, b?]);
        }

        let mut t = Tape::new();
        let mut d_total: Option<Var> = None;
        for (item, fake_pair) in batch.items.iter().zip(&fakes) {
            for dir in Direction::BOTH {
                let tgt = match dir.target() {
                    Domain::Real => item.real.clone(),
                    Domain::Cartoon => item.cartoon.clone(),
                };
                let real_v = t.value(tgt);
                let fake_v = t.value(fake_pair[dir.index()].clone());
                let disc = self.models.disc_for(dir.target());
                let d_real = disc.discriminate(&self.models.store, &mut t, real_v)?;
                let d_fake = disc.discriminate(&self.models.store, &mut t, fake_v)?;
                let adv = adv_loss_d(&mut t, d_real.patch_logits, d_fake.patch_logits)?;
                let cam = cam_loss_d(&mut t, d_real.cam_logit, d_fake.cam_logit);
                let cls = group_cls_loss(&mut t, d_real.group_logits, item.group)?;
                bundle.adv_d += t.val(adv).item();
                bundle.cam_d += t.val(cam).item();
                bundle.cls_real += t.val(cls).item();
                let s1 = t.add(adv, cam);
                let s2 = t.add(s1, cls);
                d_total = Some(match d_total {
                    Some(acc) => t.add(acc, s2),
                    None => s2,
                });
            }
        }
        let d_total = d_total.ok_or_else(|| Error::Contract("empty batch".into()))?;
        let d_grads = t.backward(d_total);
        let d_by_param = t.param_grads(&d_grads);
        let d_by_param = self.grads_with_prefix(&d_by_param, "disc.");
        self.opt_d.step(&mut self.models.store, &d_by_param);

        // --- generator update ---
        let mut t = Tape::new();
        let mut g_total: Option<Var> = None;
        let w = self.weights;
        for item in &batch.items {
            let (route, detach) = self.route(item.group);
            let real = t.value(item.real.clone());
            let cartoon = t.value(item.cartoon.clone());
            let mut fake_imgs = [None, None];
            for dir in Direction::BOTH {
                let (src, tgt) = match dir {
                    Direction::Real2Cartoon => (real, cartoon),
                    Direction::Cartoon2Real => (cartoon, real),
                };
                let store = &self.models.store;
                let fake = self
                    .models
                    .gen
                    .translate(store, &mut t, src, route, dir, detach)?;
                let back = self.models.gen.translate(
                    store,
                    &mut t,
                    fake.image,
                    route,
                    dir.reverse(),
                    detach,
                )?;
                let idt = self
                    .models
                    .gen
                    .translate(store, &mut t, tgt, route, dir, detach)?;
                fake_imgs[dir.index()] = Some(fake.image);

                let disc = self.models.disc_for(dir.target());
                let d_fake = disc.discriminate(store, &mut t, fake.image)?;
                let adv = adv_loss_g(&mut t, d_fake.patch_logits)?;
                let cyc = cycle_loss(&mut t, src, back.image)?;
                let idl = identity_loss(&mut t, tgt, idt.image)?;
                let eta_src = t.sigmoid(fake.cam_logit);
                let eta_tgt = t.sigmoid(idt.cam_logit);
                let cam = cam_loss_g(&mut t, eta_src, eta_tgt)?;
                let cls = group_cls_loss(&mut t, d_fake.group_logits, item.group)?;

                bundle.adv_g += t.val(adv).item();
                bundle.cycle += t.val(cyc).item();
                bundle.identity += t.val(idl).item();
                bundle.cam_g += t.val(cam).item();
                bundle.cls_fake += t.val(cls).item();

                for (term, weight) in [
                    (adv, w.adv),
                    (cyc, w.cycle),
                    (idl, w.identity),
                    (cam, w.cam),
                    (cls, w.cls),
                ] {
                    let scaled = t.scale(term, weight);
                    g_total = Some(match g_total {
                        Some(acc) => t.add(acc, scaled),
                        None => scaled,
                    });
                }
            }
            let fake_cartoon = fake_imgs[Direction::Real2Cartoon.index()].unwrap();
            let fake_real = fake_imgs[Direction::Cartoon2Real.index()].unwrap();
            let face = face_id_loss(
                &mut t,
                &self.models.store,
                &self.models.embedder,
                real,
                fake_cartoon,
                cartoon,
                fake_real,
            )?;
            bundle.face += t.val(face).item();
            let scaled = t.scale(face, w.face);
            g_total = Some(match g_total {
                Some(acc) => t.add(acc, scaled),
                None => scaled,
            });
        }
        let g_total = g_total.ok_or_else(|| Error::Contract("empty batch".into()))?;
        let report = routed_loss_backward(&mut t, g_total, &self.part)?;
        let g_by_param = self.grads_with_prefix(&report.grads, "gen.");
        self.opt_g.step(&mut self.models.store, &g_by_param);

        bundle.check_finite(self.step)?;
        Ok(MetricRecord {
            step: self.step,
            total_g: total_g(&bundle, &w),
            total_d: total_d(&bundle),
            bundle,
            shared_grad_norm: report.shared_norm,
            specific_grad_norms: report.specific_norms,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Stage one: train a single-branch model on group 0 only.
pub fn train_basic(
    manifest: &DatasetManifest,
    arch: &ArchConfig,
    split: &SplitConfig,
    weights: LossWeights,
    cfg: TrainConfig,
) -> Result<(Trainer, Vec<MetricRecord>)> {
    let models = Models::build(arch, split, 1, cfg.init_std, cfg.seed)?;
    let mut trainer = Trainer::new(models, weights, cfg)?;
    let aug = cfg.augment();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let batch = sample_batch(manifest, &mut rng, &[GroupId(0)], &aug)?;
        trace.push(trainer.train_step(&batch)?);
    }
    Ok((trainer, trace))
}

/// Stage two: graft branches for the few-shot groups (mode permitting) and
/// train on all groups with the configured routing.
pub fn train_fewshot(
    manifest: &DatasetManifest,
    mut models: Models,
    weights: LossWeights,
    cfg: TrainConfig,
) -> Result<(Trainer, Vec<MetricRecord>)> {
    let n_groups = manifest.n_groups();
    if n_groups < 2 {
        return Err(Error::Config(
            "few-shot training needs at least two groups".into(),
        ));
    }
    let grafts = match cfg.ablation {
        AblationMode::Default | AblationMode::NoSelective => {
            let new: Vec<GroupId> = (models.n_groups()..n_groups).map(GroupId).collect();
            models.gen = graft_branches(&mut models.store, &models.gen, &new)?;
            true
        }
        AblationMode::Mixed | AblationMode::FinetuneAll => false,
    };
    let _ = grafts;
    models.resize_cls_heads(n_groups, cfg.init_std, cfg.seed);

    let active: Vec<GroupId> = match cfg.ablation {
        AblationMode::FinetuneAll => (1..n_groups).map(GroupId).collect(),
        _ => (0..n_groups).map(GroupId).collect(),
    };
    let mut trainer = Trainer::new(models, weights, cfg)?;
    let aug = cfg.augment();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let batch = sample_batch(manifest, &mut rng, &active, &aug)?;
        trace.push(trainer.train_step(&batch)?);
    }
    Ok((trainer, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BatchItem;

    const SIZE: usize = 8;

    fn mini_cfg() -> TrainConfig {
        TrainConfig {
            resize: SIZE + 2,
            crop: SIZE,
            iterations: 0,
            ..TrainConfig::default()
        }
    }

    fn test_image(seed: u64) -> Array {
        // deterministic pseudo-image in [-1, 1]
        let n = 3 * SIZE * SIZE;
        let data = (0..n)
            .map(|i| {
                let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed);
                ((x >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect();
        Array::new(vec![3, SIZE, SIZE], data)
    }

    fn batch_of(groups: &[usize]) -> TrainBatch {
        TrainBatch {
            items: groups
                .iter()
                .map(|g| BatchItem {
                    group: GroupId(*g),
                    real: test_image(17 + *g as u64),
                    cartoon: test_image(91 + *g as u64),
                })
                .collect(),
        }
    }

    fn grafted_trainer(mode: AblationMode) -> Trainer {
        let arch = ArchConfig::miniature(SIZE);
        let mut models = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 7).unwrap();
        models.gen =
            graft_branches(&mut models.store, &models.gen, &[GroupId(1)]).unwrap();
        models.resize_cls_heads(2, 0.05, 7);
        let cfg = TrainConfig {
            ablation: mode,
            ..mini_cfg()
        };
        Trainer::new(models, LossWeights::default(), cfg).unwrap()
    }

    #[test]
    fn basic_step_produces_finite_metrics() {
        let arch = ArchConfig::miniature(SIZE);
        let models = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 3).unwrap();
        let mut trainer = Trainer::new(models, LossWeights::default(), mini_cfg()).unwrap();
        let rec = trainer.train_step(&batch_of(&[0])).unwrap();
        assert_eq!(rec.step, 1);
        assert!(rec.total_g.is_finite() && rec.total_d.is_finite());
        assert!(rec.shared_grad_norm > 0.0);
        assert!(rec.specific_grad_norms[0] > 0.0);
    }

    #[test]
    fn fewshot_step_leaves_shared_params_bitwise_unchanged() {
        let mut trainer = grafted_trainer(AblationMode::Default);
        let shared_before: Vec<Array> = trainer
            .part
            .shared
            .iter()
            .map(|id| trainer.models.store.value(*id).clone())
            .collect();
        // batch contains only the few-shot group
        let rec = trainer.train_step(&batch_of(&[1])).unwrap();
        assert_eq!(rec.shared_grad_norm, 0.0);
        assert!(rec.specific_grad_norms[1] > 0.0);
        for (id, before) in trainer.part.shared.iter().zip(&shared_before) {
            assert_eq!(trainer.models.store.value(*id), before);
        }
    }

    #[test]
    fn no_selective_updates_shared_params_from_fewshot_group() {
        let mut trainer = grafted_trainer(AblationMode::NoSelective);
        let rec = trainer.train_step(&batch_of(&[1])).unwrap();
        assert!(rec.shared_grad_norm > 0.0);
    }

    #[test]
    fn mixed_mode_routes_through_branch_zero() {
        let mut trainer = grafted_trainer(AblationMode::Mixed);
        let rec = trainer.train_step(&batch_of(&[0, 1])).unwrap();
        // nothing flows through branch 1, everything through branch 0
        assert_eq!(rec.specific_grad_norms[1], 0.0);
        assert!(rec.specific_grad_norms[0] > 0.0);
        assert!(rec.shared_grad_norm > 0.0);
    }

    #[test]
    fn init_params_refuses_grafted_model() {
        let arch = ArchConfig::miniature(SIZE);
        let mut models = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 7).unwrap();
        models.gen =
            graft_branches(&mut models.store, &models.gen, &[GroupId(1)]).unwrap();
        assert!(matches!(
            init_params(&mut models, 0.05, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn init_params_is_deterministic() {
        let arch = ArchConfig::miniature(SIZE);
        let mut a = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 3).unwrap();
        let mut b = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 4).unwrap();
        init_params(&mut a, 0.05, 11).unwrap();
        init_params(&mut b, 0.05, 11).unwrap();
        for (id, p) in a.store.iter() {
            assert_eq!(p.value, *b.store.value(id), "param {} differs", p.name);
        }
    }

    #[test]
    fn metric_record_serializes_flat_jsonl() {
        let rec = MetricRecord {
            step: 3,
            bundle: LossBundle::default(),
            total_g: 1.0,
            total_d: 2.0,
            shared_grad_norm: 0.5,
            specific_grad_norms: vec![0.1, 0.2],
            wall_ms: 12.0,
        };
        let mut buf = Vec::new();
        write_jsonl(std::slice::from_ref(&rec), &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line.matches('\n').count(), 1);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["step"], 3);
        assert_eq!(v["cycle"], 0.0); // bundle fields are flattened
    }
}
