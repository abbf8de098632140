//! Generator and discriminator architectures: specific encoder/decoder
//! branches around a shared residual core with CAM attention and AdaLIN
//! normalization.

mod config;
mod discriminator;
mod embedder;
mod generator;
pub mod norm;

pub use config::{ArchConfig, Direction, Domain, GroupId, SplitConfig};
pub use discriminator::{DiscOut, Discriminator};
pub use embedder::{FaceEmbedder, EMBEDDER_SEED};
pub use generator::{
    build_branch, channel_mean, init_conv, init_linear, sample_weight, AdaResBlockP, AdalinMlpP, BranchStack,
    BranchedGenerator, CamP, ConvP, GeneratorDir, LinP, ResBlockP, SharedOut, SharedStack,
    TranslateOut,
};
