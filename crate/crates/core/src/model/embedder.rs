use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

use super::config::ArchConfig;
use super::generator::{init_conv, init_linear, ConvP, LinP};

/// Frozen stand-in for a pretrained face-recognition model F. A small seeded
/// convolutional encoder followed by L2 normalization; its parameters are
/// never trained and gradients flow only to its inputs.
#[derive(Clone, Debug)]
pub struct FaceEmbedder {
    pub conv1: ConvP,
    pub conv2: ConvP,
    pub fc: LinP,
}

pub const EMBEDDER_SEED: u64 = 0xFACE_1D;

impl FaceEmbedder {
    pub fn build(store: &mut ParamStore, cfg: &ArchConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDER_SEED);
        let std = 0.1;
        let conv1 = init_conv(store, "embed.conv1", 8, 3, 3, std, &mut rng);
        let conv2 = init_conv(store, "embed.conv2", 16, 8, 3, std, &mut rng);
        let fc = init_linear(store, "embed.fc", cfg.embed_dim, 16, std, &mut rng);
        store.freeze_prefix("embed.");
        FaceEmbedder { conv1, conv2, fc }
    }

    /// Embeds an image into a unit-norm vector.
    pub fn embed(&self, store: &ParamStore, t: &mut Tape, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape("[3, s, s]", format!("{shape:?}"), "embedder input"));
        }
        let w1 = t.leaf_detached(store, self.conv1.w);
        let b1 = t.leaf_detached(store, self.conv1.b);
        let mut f = t.conv2d(x, w1, b1, 2, 1);
        f = t.relu(f);
        let w2 = t.leaf_detached(store, self.conv2.w);
        let b2 = t.leaf_detached(store, self.conv2.b);
        f = t.conv2d(f, w2, b2, 2, 1);
        f = t.relu(f);
        let gap = t.mean_hw(f);
        let fw = t.leaf_detached(store, self.fc.w);
        let fb = t.leaf_detached(store, self.fc.b);
        let e = t.linear(gap, fw, fb);
        let n2 = t.dot(e, e);
        if t.val(n2).item() < 1e-12 {
            return Err(Error::Contract("zero-norm face embedding".into()));
        }
        let norm = t.sqrt(n2);
        let dim = t.shape(e)[0];
        let norm_b = t.bcast_all(norm, vec![dim]);
        Ok(t.div(e, norm_b))
    }
}
