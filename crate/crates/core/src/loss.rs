//! The six loss families and their weighted aggregation into the generator
//! and discriminator objectives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{FaceEmbedder, GroupId};

pub const LOG_EPS: f64 = 1e-7;

/// Weights of the full generator objective:
/// `L_G = l1*adv + l2*cycle + l3*identity + l4*cam + l5*face + l6*cls_fake`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub cycle: f64,
    pub identity: f64,
    pub cam: f64,
    pub face: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adv: 1.0,
            cycle: 10.0,
            identity: 10.0,
            cam: 1000.0,
            face: 1.0,
            cls: 100.0,
        }
    }
}

/// Scalar loss components of one step, each summed over both directions
/// where applicable.
#[derive(Copy, Clone, Debug, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub adv_g: f64,
    pub adv_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub cam_g: f64,
    pub cam_d: f64,
    pub face: f64,
    pub cls_real: f64,
    pub cls_fake: f64,
}

impl LossBundle {
    pub fn check_finite(&self, step: usize) -> Result<()> {
        for (name, v) in [
            ("adv_g", self.adv_g),
            ("adv_d", self.adv_d),
            ("cycle", self.cycle),
            ("identity", self.identity),
            ("cam_g", self.cam_g),
            ("cam_d", self.cam_d),
            ("face", self.face),
            ("cls_real", self.cls_real),
            ("cls_fake", self.cls_fake),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    component: name.into(),
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// `L_G` as the weighted sum of the generator-side components.
pub fn total_g(bundle: &LossBundle, w: &LossWeights) -> f64 {
    w.adv * bundle.adv_g
        + w.cycle * bundle.cycle
        + w.identity * bundle.identity
        + w.cam * bundle.cam_g
        + w.face * bundle.face
        + w.cls * bundle.cls_fake
}

/// `L_D`: adversarial + real-group classification, plus the discriminator's
/// CAM auxiliary objective which is trained jointly.
pub fn total_d(bundle: &LossBundle) -> f64 {
    bundle.adv_d + bundle.cls_real + bundle.cam_d
}

/// Least-squares discriminator loss: `mean((real-1)^2) + mean(fake^2)`.
pub fn adv_loss_d(t: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<Var> {
    if t.val(real_logits).numel() == 0 || t.val(fake_logits).numel() == 0 {
        return Err(Error::Contract("empty logit map".into()));
    }
    let rm1 = t.add_scalar(real_logits, -1.0);
    let rsq = t.mul(rm1, rm1);
    let r = t.mean_all(rsq);
    let fsq = t.mul(fake_logits, fake_logits);
    let f = t.mean_all(fsq);
    Ok(t.add(r, f))
}

/// Least-squares generator loss: `mean((fake-1)^2)`.
pub fn adv_loss_g(t: &mut Tape, fake_logits: Var) -> Result<Var> {
    if t.val(fake_logits).numel() == 0 {
        return Err(Error::Contract("empty logit map".into()));
    }
    let fm1 = t.add_scalar(fake_logits, -1.0);
    let sq = t.mul(fm1, fm1);
    Ok(t.mean_all(sq))
}

/// Mean absolute difference (L1).
pub fn cycle_loss(t: &mut Tape, x: Var, x_rec: Var) -> Result<Var> {
    if t.shape(x) != t.shape(x_rec) {
        return Err(Error::shape(
            format!("{:?}", t.shape(x)),
            format!("{:?}", t.shape(x_rec)),
            "cycle loss",
        ));
    }
    let d = t.sub(x, x_rec);
    let a = t.abs(d);
    Ok(t.mean_all(a))
}

/// Same contract as `cycle_loss`, applied to `x` vs `T(x)` for `x` already in
/// the target domain.
pub fn identity_loss(t: &mut Tape, x: Var, t_of_x: Var) -> Result<Var> {
    cycle_loss(t, x, t_of_x)
}

/// Generator CAM loss on sigmoid-squashed logits:
/// `-(mean log eta_src + mean log(1 - eta_tgt))`.
pub fn cam_loss_g(t: &mut Tape, eta_on_source: Var, eta_on_target: Var) -> Result<Var> {
    for eta in [eta_on_source, eta_on_target] {
        if t.val(eta).data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("cam eta outside [0, 1]".into()));
        }
    }
    let s = t.clamp(eta_on_source, LOG_EPS, 1.0 - LOG_EPS);
    let ls = t.ln(s);
    let mls = t.mean_all(ls);
    let tg = t.scale(eta_on_target, -1.0);
    let tg = t.add_scalar(tg, 1.0);
    let tg = t.clamp(tg, LOG_EPS, 1.0 - LOG_EPS);
    let lt = t.ln(tg);
    let mlt = t.mean_all(lt);
    let s = t.add(mls, mlt);
    Ok(t.scale(s, -1.0))
}

/// Discriminator CAM loss on raw logits, least-squares targets real=1 fake=0:
/// `mean((eta_real-1)^2) + mean(eta_fake^2)`.
pub fn cam_loss_d(t: &mut Tape, eta_real: Var, eta_fake: Var) -> Var {
    let rm1 = t.add_scalar(eta_real, -1.0);
    let rsq = t.mul(rm1, rm1);
    let r = t.mean_all(rsq);
    let fsq = t.mul(eta_fake, eta_fake);
    let f = t.mean_all(fsq);
    t.add(r, f)
}

/// Cosine-distance identity preservation under a frozen embedder:
/// `(1 - cos(F(x_s), F(y_fake))) + (1 - cos(F(x_t), F(x_fake_back)))`.
pub fn face_id_loss(
    t: &mut Tape,
    store: &crate::autodiff::ParamStore,
    embedder: &FaceEmbedder,
    x_s: Var,
    y_fake: Var,
    x_t: Var,
    x_fake_back: Var,
) -> Result<Var> {
    let e_s = embedder.embed(store, t, x_s)?;
    let e_fake = embedder.embed(store, t, y_fake)?;
    let e_t = embedder.embed(store, t, x_t)?;
    let e_back = embedder.embed(store, t, x_fake_back)?;
    let cos1 = t.dot(e_s, e_fake);
    let cos2 = t.dot(e_t, e_back);
    let c = t.add(cos1, cos2);
    let neg = t.scale(c, -1.0);
    Ok(t.add_scalar(neg, 2.0))
}

/// Softmax cross-entropy of the discriminator's group head.
pub fn group_cls_loss(t: &mut Tape, group_logits: Var, true_group: GroupId) -> Result<Var> {
    let n = t.val(group_logits).numel();
    if true_group.0 >= n {
        return Err(Error::UnknownGroup(true_group.0));
    }
    // max-shift for numerical stability; constant shift leaves gradients exact
    let m = t
        .val(group_logits)
        .data
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = t.add_scalar(group_logits, -m);
    let e = t.exp(shifted);
    let mean = t.mean_all(e);
    let sum = t.scale(mean, n as f64);
    let lse = t.ln(sum);
    let picked = t.pick(shifted, true_group.0);
    Ok(t.sub(lse, picked))
}
