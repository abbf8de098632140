use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

use super::config::{ArchConfig, Domain};
use super::generator::{init_conv, init_linear, ConvP, LinP};

/// Per-domain critic: stride-2 conv trunk, patch adversarial head, scalar CAM
/// auxiliary head and a G-way group-classification head.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub domain: Domain,
    pub n_groups: usize,
    pub trunk: Vec<ConvP>,
    pub adv: ConvP,
    pub cam_gap: LinP,
    pub cam_gmp: LinP,
    pub cls: LinP,
}

pub struct DiscOut {
    pub patch_logits: Var,
    pub cam_logit: Var,
    pub group_logits: Var,
}

impl Discriminator {
    pub fn build(
        store: &mut ParamStore,
        cfg: &ArchConfig,
        domain: Domain,
        n_groups: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let p = format!("disc.{}", domain.tag());
        let mut trunk = Vec::new();
        let mut ch = 3;
        let mut width = cfg.base_width;
        for k in 0..cfg.disc_layers {
            trunk.push(init_conv(
                store,
                &format!("{p}.trunk{k}"),
                width,
                ch,
                4,
                std,
                rng,
            ));
            ch = width;
            width *= 2;
        }
        let adv = init_conv(store, &format!("{p}.adv"), 1, ch, 1, std, rng);
        let cam_gap = init_linear(store, &format!("{p}.cam.gap"), 1, ch, std, rng);
        let cam_gmp = init_linear(store, &format!("{p}.cam.gmp"), 1, ch, std, rng);
        let cls = Self::build_cls_head(store, domain, ch, n_groups, std, rng);
        Discriminator {
            domain,
            n_groups,
            trunk,
            adv,
            cam_gap,
            cam_gmp,
            cls,
        }
    }

    /// The cls head is rebuilt (freshly initialized, sized to the new group
    /// count) when a basic checkpoint is grafted for few-shot training.
    pub fn build_cls_head(
        store: &mut ParamStore,
        domain: Domain,
        trunk_width: usize,
        n_groups: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> LinP {
        init_linear(
            store,
            &format!("disc.{}.cls", domain.tag()),
            n_groups,
            trunk_width,
            std,
            rng,
        )
    }

    pub fn trunk_width(&self, cfg: &ArchConfig) -> usize {
        cfg.base_width << (cfg.disc_layers - 1)
    }

    pub fn discriminate(
        &self,
        store: &ParamStore,
        t: &mut Tape,
        x: Var,
    ) -> Result<DiscOut> {
        let shape = t.shape(x).to_vec();
        if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
            return Err(Error::shape(
                "[3, s, s]",
                format!("{shape:?}"),
                "discriminator input",
            ));
        }
        let mut f = x;
        for conv in &self.trunk {
            let w = t.leaf(store, conv.w);
            let b = t.leaf(store, conv.b);
            f = t.conv2d(f, w, b, 2, 1);
            f = t.lrelu(f, 0.2);
        }
        let aw = t.leaf(store, self.adv.w);
        let ab = t.leaf(store, self.adv.b);
        let patch_logits = t.conv2d(f, aw, ab, 1, 0);

        let gap = t.mean_hw(f);
        let gmp = t.max_hw(f);
        let gw = t.leaf(store, self.cam_gap.w);
        let gb = t.leaf(store, self.cam_gap.b);
        let mw = t.leaf(store, self.cam_gmp.w);
        let mb = t.leaf(store, self.cam_gmp.b);
        let gap_logit = t.linear(gap, gw, gb);
        let gmp_logit = t.linear(gmp, mw, mb);
        let cam_v = t.add(gap_logit, gmp_logit);
        let cam_logit = t.pick(cam_v, 0);

        let cw = t.leaf(store, self.cls.w);
        let cb = t.leaf(store, self.cls.b);
        let group_logits = t.linear(gap, cw, cb);

        Ok(DiscOut {
            patch_logits,
            cam_logit,
            group_logits,
        })
    }
}
