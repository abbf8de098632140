use serde::{Deserialize, Serialize};

/// Translation direction between the two domains.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// real faces -> cartoon faces (s -> t)
    Real2Cartoon,
    /// cartoon faces -> real faces (t -> s)
    Cartoon2Real,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Real2Cartoon, Direction::Cartoon2Real];

    pub fn index(self) -> usize {
        match self {
            Direction::Real2Cartoon => 0,
            Direction::Cartoon2Real => 1,
        }
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::Real2Cartoon => Direction::Cartoon2Real,
            Direction::Cartoon2Real => Direction::Real2Cartoon,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::Real2Cartoon => "r2c",
            Direction::Cartoon2Real => "c2r",
        }
    }

    /// The domain this direction translates into.
    pub fn target(self) -> Domain {
        match self {
            Direction::Real2Cartoon => Domain::Cartoon,
            Direction::Cartoon2Real => Domain::Real,
        }
    }

    pub fn source(self) -> Domain {
        self.target().other()
    }
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real2cartoon" | "r2c" => Ok(Direction::Real2Cartoon),
            "cartoon2real" | "c2r" => Ok(Direction::Cartoon2Real),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

/// One side of the unpaired translation task.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Real,
    Cartoon,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Real, Domain::Cartoon];

    pub fn other(self) -> Domain {
        match self {
            Domain::Real => Domain::Cartoon,
            Domain::Cartoon => Domain::Real,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::Real => "real",
            Domain::Cartoon => "cartoon",
        }
    }

    pub fn dir_name(self) -> &'static str {
        self.tag()
    }
}

/// Index of a fine-grained group; group 0 is the data-rich common group.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupId(pub usize);

/// Where the shared/specific boundary sits inside the residual core. The
/// specific encoder always owns the input conv and downsampling stack, the
/// specific decoder the upsampling stack and output conv; these counts move
/// additional residual blocks from the shared core into every branch.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Encoder-side residual blocks owned by each branch (taken from
    /// `n_res_enc`).
    pub enc_res_specific: usize,
    /// Decoder-side residual blocks owned by each branch (taken from
    /// `n_res_dec`).
    pub dec_res_specific: usize,
}

/// Architecture hyperparameters shared by generator and discriminators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input/output resolution (square).
    pub image_size: usize,
    /// Channel width after the input conv; doubles per downsampling block.
    pub base_width: usize,
    /// Stride-2 blocks in the specific encoder (and upsampling blocks in the
    /// specific decoder).
    pub n_down: usize,
    /// Residual blocks in the shared encoder.
    pub n_res_enc: usize,
    /// AdaLIN residual blocks in the shared decoder.
    pub n_res_dec: usize,
    /// Stride-2 conv layers in the discriminator trunk.
    pub disc_layers: usize,
    /// Face embedder output dimension.
    pub embed_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 256,
            base_width: 32,
            n_down: 2,
            n_res_enc: 4,
            n_res_dec: 4,
            disc_layers: 5,
            embed_dim: 32,
        }
    }
}

impl ArchConfig {
    /// Small configuration for tests and desk-scale runs.
    pub fn miniature(image_size: usize) -> Self {
        ArchConfig {
            image_size,
            base_width: 8,
            n_down: 2,
            n_res_enc: 2,
            n_res_dec: 2,
            disc_layers: 3,
            embed_dim: 16,
        }
    }

    /// Total spatial downsampling factor of the specific encoder.
    pub fn down_factor(&self) -> usize {
        1 << self.n_down
    }

    /// Channel width of the shared core.
    pub fn core_width(&self) -> usize {
        self.base_width << self.n_down
    }

    /// Spatial size of the shared core feature maps.
    pub fn core_size(&self) -> usize {
        self.image_size / self.down_factor()
    }

    /// Discriminator patch-map size for a given input resolution.
    pub fn disc_patch_size(&self, input: usize) -> usize {
        let mut s = input;
        for _ in 0..self.disc_layers {
            s = (s + 2 - 4) / 2 + 1; // k=4, stride=2, pad=1
        }
        s
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.image_size % self.down_factor() != 0 {
            return Err(crate::Error::Config(format!(
                "image_size {} not divisible by downsampling factor {}",
                self.image_size,
                self.down_factor()
            )));
        }
        if self.core_size() < 1 || self.disc_patch_size(self.image_size) < 1 {
            return Err(crate::Error::Config(
                "image_size too small for configured depth".into(),
            ));
        }
        Ok(())
    }
}
