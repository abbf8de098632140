use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

use super::config::{ArchConfig, Direction, GroupId, SplitConfig};
use super::norm::{adalin, instance_norm};

#[derive(Clone, Debug)]
pub struct ConvP {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct LinP {
    pub w: ParamId,
    pub b: ParamId,
}

/// Group-specific encoder/decoder stacks (E^i, G^i) for one direction.
#[derive(Clone, Debug)]
pub struct BranchStack {
    pub enc_in: ConvP,
    pub enc_down: Vec<ConvP>,
    pub enc_res: Vec<ResBlockP>,
    pub dec_res: Vec<ResBlockP>,
    pub dec_up: Vec<ConvP>,
    pub dec_out: ConvP,
}

#[derive(Clone, Debug)]
pub struct ResBlockP {
    pub c1: ConvP,
    pub c2: ConvP,
}

#[derive(Clone, Debug)]
pub struct AdaResBlockP {
    pub c1: ConvP,
    pub rho1: ParamId,
    pub c2: ConvP,
    pub rho2: ParamId,
}

#[derive(Clone, Debug)]
pub struct CamP {
    pub gap_w: ParamId,
    pub gmp_w: ParamId,
    pub fuse: ConvP,
}

#[derive(Clone, Debug)]
pub struct AdalinMlpP {
    pub fc1: LinP,
    pub gamma: LinP,
    pub beta: LinP,
}

/// Shared stacks (E^S, CAM, AdaLIN MLP, G^S) for one direction.
#[derive(Clone, Debug)]
pub struct SharedStack {
    pub res: Vec<ResBlockP>,
    pub cam: CamP,
    pub mlp: AdalinMlpP,
    pub dec: Vec<AdaResBlockP>,
}

#[derive(Clone, Debug)]
pub struct GeneratorDir {
    pub specific: Vec<BranchStack>,
    pub shared: SharedStack,
}

/// Per-direction translator: one shared core plus one specific branch per
/// registered group.
#[derive(Clone, Debug)]
pub struct BranchedGenerator {
    pub cfg: ArchConfig,
    pub split: SplitConfig,
    pub dirs: [GeneratorDir; 2],
}

pub struct SharedOut {
    pub features: Var,
    pub cam_logit: Var,
    /// Channel-mean of the attended features; visualization only, carries no
    /// gradient.
    pub attention: Array,
}

pub struct TranslateOut {
    pub image: Var,
    pub cam_logit: Var,
    pub attention: Array,
}

/// Draws an `N(0, std^2)` weight tensor of the given shape.
pub fn sample_weight(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Array {
    let normal = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Array::new(shape, (0..n).map(|_| normal.sample(rng)).collect())
}

pub fn init_conv(
    store: &mut ParamStore,
    name: &str,
    co: usize,
    ci: usize,
    k: usize,
    std: f64,
    rng: &mut impl Rng,
) -> ConvP {
    let normal = Normal::new(0.0, std).unwrap();
    let w = Array::new(
        vec![co, ci, k, k],
        (0..co * ci * k * k).map(|_| normal.sample(rng)).collect(),
    );
    ConvP {
        w: store.add(format!("{name}.w"), w),
        b: store.add(format!("{name}.b"), Array::zeros(vec![co])),
    }
}

pub fn init_linear(
    store: &mut ParamStore,
    name: &str,
    out: usize,
    inp: usize,
    std: f64,
    rng: &mut impl Rng,
) -> LinP {
    let normal = Normal::new(0.0, std).unwrap();
    let w = Array::new(
        vec![out, inp],
        (0..out * inp).map(|_| normal.sample(rng)).collect(),
    );
    LinP {
        w: store.add(format!("{name}.w"), w),
        b: store.add(format!("{name}.b"), Array::zeros(vec![out])),
    }
}

fn init_vec_weight(
    store: &mut ParamStore,
    name: &str,
    n: usize,
    std: f64,
    rng: &mut impl Rng,
) -> ParamId {
    let normal = Normal::new(0.0, std).unwrap();
    store.add(
        name,
        Array::new(vec![1, n], (0..n).map(|_| normal.sample(rng)).collect()),
    )
}

pub fn build_branch(
    store: &mut ParamStore,
    cfg: &ArchConfig,
    split: &SplitConfig,
    dir: Direction,
    group: usize,
    std: f64,
    rng: &mut impl Rng,
) -> BranchStack {
    let p = format!("gen.{}.spec.g{}", dir.tag(), group);
    let w0 = cfg.base_width;
    let c = cfg.core_width();
    let enc_in = init_conv(store, &format!("{p}.enc.in"), w0, 3, 7, std, rng);
    let mut enc_down = Vec::new();
    for d in 0..cfg.n_down {
        let ci = w0 << d;
        enc_down.push(init_conv(
            store,
            &format!("{p}.enc.down{d}"),
            ci * 2,
            ci,
            3,
            std,
            rng,
        ));
    }
    let mut enc_res = Vec::new();
    for k in 0..split.enc_res_specific {
        enc_res.push(ResBlockP {
            c1: init_conv(store, &format!("{p}.enc.res{k}.c1"), c, c, 3, std, rng),
            c2: init_conv(store, &format!("{p}.enc.res{k}.c2"), c, c, 3, std, rng),
        });
    }
    let mut dec_res = Vec::new();
    for k in 0..split.dec_res_specific {
        dec_res.push(ResBlockP {
            c1: init_conv(store, &format!("{p}.dec.res{k}.c1"), c, c, 3, std, rng),
            c2: init_conv(store, &format!("{p}.dec.res{k}.c2"), c, c, 3, std, rng),
        });
    }
    let mut dec_up = Vec::new();
    for u in 0..cfg.n_down {
        let ci = cfg.core_width() >> u;
        dec_up.push(init_conv(
            store,
            &format!("{p}.dec.up{u}"),
            ci / 2,
            ci,
            3,
            std,
            rng,
        ));
    }
    let dec_out = init_conv(store, &format!("{p}.dec.out"), 3, w0, 7, std, rng);
    BranchStack {
        enc_in,
        enc_down,
        enc_res,
        dec_res,
        dec_up,
        dec_out,
    }
}

fn build_shared(
    store: &mut ParamStore,
    cfg: &ArchConfig,
    split: &SplitConfig,
    dir: Direction,
    std: f64,
    rng: &mut impl Rng,
) -> SharedStack {
    let p = format!("gen.{}.shared", dir.tag());
    let c = cfg.core_width();
    let mut res = Vec::new();
    for k in 0..cfg.n_res_enc - split.enc_res_specific {
        res.push(ResBlockP {
            c1: init_conv(store, &format!("{p}.res{k}.c1"), c, c, 3, std, rng),
            c2: init_conv(store, &format!("{p}.res{k}.c2"), c, c, 3, std, rng),
        });
    }
    let cam = CamP {
        gap_w: init_vec_weight(store, &format!("{p}.cam.gap.w"), c, std, rng),
        gmp_w: init_vec_weight(store, &format!("{p}.cam.gmp.w"), c, std, rng),
        fuse: init_conv(store, &format!("{p}.cam.fuse"), c, 2 * c, 1, std, rng),
    };
    let flat = c * cfg.core_size() * cfg.core_size();
    let mlp = AdalinMlpP {
        fc1: init_linear(store, &format!("{p}.mlp.fc1"), c, flat, std, rng),
        gamma: init_linear(store, &format!("{p}.mlp.gamma"), c, c, std, rng),
        beta: init_linear(store, &format!("{p}.mlp.beta"), c, c, std, rng),
    };
    let mut dec = Vec::new();
    for k in 0..cfg.n_res_dec - split.dec_res_specific {
        // rho starts at 1: instance-norm-like behaviour at initialization
        dec.push(AdaResBlockP {
            c1: init_conv(store, &format!("{p}.dec{k}.c1"), c, c, 3, std, rng),
            rho1: store.add(format!("{p}.dec{k}.rho1"), Array::full(vec![c], 1.0)),
            c2: init_conv(store, &format!("{p}.dec{k}.c2"), c, c, 3, std, rng),
            rho2: store.add(format!("{p}.dec{k}.rho2"), Array::full(vec![c], 1.0)),
        });
    }
    SharedStack { res, cam, mlp, dec }
}

impl BranchedGenerator {
    /// Builds a generator with `n_groups` branches per direction, weights
    /// drawn N(0, std^2), biases zero.
    pub fn build(
        store: &mut ParamStore,
        cfg: &ArchConfig,
        split: &SplitConfig,
        n_groups: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(n_groups >= 1, "at least one group required");
        assert!(
            split.enc_res_specific <= cfg.n_res_enc && split.dec_res_specific <= cfg.n_res_dec,
            "split boundary exceeds residual depth"
        );
        let dirs = [Direction::Real2Cartoon, Direction::Cartoon2Real].map(|dir| {
            let shared = build_shared(store, cfg, split, dir, std, rng);
            let specific = (0..n_groups)
                .map(|g| build_branch(store, cfg, split, dir, g, std, rng))
                .collect();
            GeneratorDir { specific, shared }
        });
        BranchedGenerator {
            cfg: cfg.clone(),
            split: *split,
            dirs,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.dirs[0].specific.len()
    }

    pub fn check_group(&self, group: GroupId) -> Result<()> {
        if group.0 >= self.n_groups() {
            return Err(Error::UnknownGroup(group.0));
        }
        Ok(())
    }

    fn check_image(&self, t: &Tape, x: Var) -> Result<()> {
        let s = self.cfg.image_size;
        let got = t.shape(x).to_vec();
        if got != vec![3, s, s] {
            return Err(Error::shape(
                format!("[3, {s}, {s}]"),
                format!("{got:?}"),
                "generator input",
            ));
        }
        Ok(())
    }

    fn leaf(t: &mut Tape, store: &ParamStore, id: ParamId, detach: bool) -> Var {
        if detach {
            t.leaf_detached(store, id)
        } else {
            t.leaf(store, id)
        }
    }

    fn conv_block(
        t: &mut Tape,
        store: &ParamStore,
        p: &ConvP,
        x: Var,
        stride: usize,
        pad: usize,
        detach: bool,
    ) -> Var {
        let w = Self::leaf(t, store, p.w, detach);
        let b = Self::leaf(t, store, p.b, detach);
        t.conv2d(x, w, b, stride, pad)
    }

    fn res_block(t: &mut Tape, store: &ParamStore, blk: &ResBlockP, x: Var, detach: bool) -> Var {
        let mut h = Self::conv_block(t, store, &blk.c1, x, 1, 1, detach);
        h = instance_norm(t, h);
        h = t.relu(h);
        h = Self::conv_block(t, store, &blk.c2, h, 1, 1, detach);
        h = instance_norm(t, h);
        t.add(x, h)
    }

    /// E^i: group-specific encoder.
    pub fn encode_specific(
        &self,
        store: &ParamStore,
        t: &mut Tape,
        x: Var,
        group: GroupId,
        dir: Direction,
    ) -> Result<Var> {
        self.check_group(group)?;
        self.check_image(t, x)?;
        let branch = &self.dirs[dir.index()].specific[group.0];
        let mut f = Self::conv_block(t, store, &branch.enc_in, x, 1, 3, false);
        f = instance_norm(t, f);
        f = t.relu(f);
        for down in &branch.enc_down {
            f = Self::conv_block(t, store, down, f, 2, 1, false);
            f = instance_norm(t, f);
            f = t.relu(f);
        }
        for blk in &branch.enc_res {
            f = Self::res_block(t, store, blk, f, false);
        }
        Ok(f)
    }

    fn check_rho(&self, store: &ParamStore, dir: Direction) -> Result<()> {
        for blk in &self.dirs[dir.index()].shared.dec {
            for rho in [blk.rho1, blk.rho2] {
                let v = store.value(rho);
                if v.data.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::Contract(format!(
                        "rho parameter {} outside [0, 1]",
                        store.get(rho).name
                    )));
                }
            }
        }
        Ok(())
    }

    /// E^S -> CAM -> G^S. With `detach` the forward values are identical but
    /// no shared parameter receives gradient.
    pub fn shared_forward(
        &self,
        store: &ParamStore,
        t: &mut Tape,
        f: Var,
        dir: Direction,
        detach: bool,
    ) -> Result<SharedOut> {
        let c = self.cfg.core_width();
        let s = self.cfg.core_size();
        let got = t.shape(f).to_vec();
        if got != vec![c, s, s] {
            return Err(Error::shape(
                format!("[{c}, {s}, {s}]"),
                format!("{got:?}"),
                "shared core input",
            ));
        }
        self.check_rho(store, dir)?;
        let shared = &self.dirs[dir.index()].shared;

        let mut x = f;
        for blk in &shared.res {
            x = Self::res_block(t, store, blk, x, detach);
        }

        // CAM attention
        let gap = t.mean_hw(x);
        let gmp = t.max_hw(x);
        let gap_w = Self::leaf(t, store, shared.cam.gap_w, detach);
        let gmp_w = Self::leaf(t, store, shared.cam.gmp_w, detach);
        let gap_logit = t.matvec(gap, gap_w);
        let gmp_logit = t.matvec(gmp, gmp_w);
        let cam_logit_v = t.add(gap_logit, gmp_logit);
        let cam_logit = t.pick(cam_logit_v, 0);

        let gap_wv = t.reshape(gap_w, vec![c]);
        let gmp_wv = t.reshape(gmp_w, vec![c]);
        let gap_wb = t.bcast_c(gap_wv, s, s);
        let gmp_wb = t.bcast_c(gmp_wv, s, s);
        let att_gap = t.mul(x, gap_wb);
        let att_gmp = t.mul(x, gmp_wb);
        let cat = t.concat_c(att_gap, att_gmp);
        let mut fused = Self::conv_block(t, store, &shared.cam.fuse, cat, 1, 0, detach);
        fused = t.relu(fused);

        let attention = channel_mean(t.val(fused));

        // gamma/beta from the flattened attended features
        let flat = t.reshape(fused, vec![c * s * s]);
        let fc1w = Self::leaf(t, store, shared.mlp.fc1.w, detach);
        let fc1b = Self::leaf(t, store, shared.mlp.fc1.b, detach);
        let mut hid = t.linear(flat, fc1w, fc1b);
        hid = t.relu(hid);
        let gw = Self::leaf(t, store, shared.mlp.gamma.w, detach);
        let gb = Self::leaf(t, store, shared.mlp.gamma.b, detach);
        let gamma = t.linear(hid, gw, gb);
        let bw = Self::leaf(t, store, shared.mlp.beta.w, detach);
        let bb = Self::leaf(t, store, shared.mlp.beta.b, detach);
        let beta = t.linear(hid, bw, bb);

        let mut y = fused;
        for blk in &shared.dec {
            let rho1 = Self::leaf(t, store, blk.rho1, detach);
            let rho2 = Self::leaf(t, store, blk.rho2, detach);
            let mut h = Self::conv_block(t, store, &blk.c1, y, 1, 1, detach);
            h = adalin(t, h, gamma, beta, rho1);
            h = t.relu(h);
            h = Self::conv_block(t, store, &blk.c2, h, 1, 1, detach);
            h = adalin(t, h, gamma, beta, rho2);
            y = t.add(y, h);
        }

        Ok(SharedOut {
            features: y,
            cam_logit,
            attention,
        })
    }

    /// G^i: group-specific decoder.
    pub fn decode_specific(
        &self,
        store: &ParamStore,
        t: &mut Tape,
        f: Var,
        group: GroupId,
        dir: Direction,
    ) -> Result<Var> {
        self.check_group(group)?;
        let c = self.cfg.core_width();
        let s = self.cfg.core_size();
        let got = t.shape(f).to_vec();
        if got != vec![c, s, s] {
            return Err(Error::shape(
                format!("[{c}, {s}, {s}]"),
                format!("{got:?}"),
                "specific decoder input",
            ));
        }
        let branch = &self.dirs[dir.index()].specific[group.0];
        let mut y = f;
        for blk in &branch.dec_res {
            y = Self::res_block(t, store, blk, y, false);
        }
        for up in &branch.dec_up {
            y = t.upsample2x(y);
            y = Self::conv_block(t, store, up, y, 1, 1, false);
            y = instance_norm(t, y);
            y = t.relu(y);
        }
        y = Self::conv_block(t, store, &branch.dec_out, y, 1, 3, false);
        Ok(t.tanh(y))
    }

    /// Full composition T^i = G^i(G^S(E^S(E^i(x)))). `detach_shared` detaches
    /// the shared stacks, which is the selective-backpropagation route for
    /// few-shot groups.
    pub fn translate(
        &self,
        store: &ParamStore,
        t: &mut Tape,
        x: Var,
        group: GroupId,
        dir: Direction,
        detach_shared: bool,
    ) -> Result<TranslateOut> {
        let f = self.encode_specific(store, t, x, group, dir)?;
        let shared = self.shared_forward(store, t, f, dir, detach_shared)?;
        let image = self.decode_specific(store, t, shared.features, group, dir)?;
        Ok(TranslateOut {
            image,
            cam_logit: shared.cam_logit,
            attention: shared.attention,
        })
    }
}

/// Mean over channels of a `[c,h,w]` map, producing `[1,h,w]`.
pub fn channel_mean(a: &Array) -> Array {
    let (c, h, w) = a.chw();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&a.data[ch * h * w..(ch + 1) * h * w]) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= c as f64;
    }
    Array::new(vec![1, h, w], out)
}
