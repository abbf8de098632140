use std::collections::HashMap;

use super::array::Array;
use super::params::{ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub usize);

type BackFn = Box<dyn FnOnce(&[Array], &Array, &mut [Vec<f64>], &mut [bool])>;

/// Per-node gradients from one backward sweep.
pub struct Grads {
    g: Vec<Vec<f64>>,
}

impl Grads {
    pub fn raw(&self, v: Var) -> &[f64] {
        &self.g[v.0]
    }
}

/// Reverse-mode tape. Every forward operation records its inputs and a
/// backward closure; `backward` replays them in reverse. Single-threaded and
/// deterministic: node order fully defines accumulation order.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Array>,
    backs: Vec<Option<BackFn>>,
    bound: Vec<Option<ParamId>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array, back: Option<BackFn>, bound: Option<ParamId>) -> Var {
        self.vals.push(value);
        self.backs.push(back);
        self.bound.push(bound);
        Var(self.vals.len() - 1)
    }

    pub fn val(&self, v: Var) -> &Array {
        &self.vals[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.vals[v.0].shape
    }

    /// Leaf bound to a parameter: gradients reach the store entry.
    pub fn leaf(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), None, Some(id))
    }

    /// Leaf carrying a parameter's value without the binding. Forward output
    /// is identical to `leaf`; the parameter receives no gradient. This is the
    /// detached-clone route used by selective backpropagation.
    pub fn leaf_detached(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), None, None)
    }

    /// Tracked input (or constant) node.
    pub fn value(&mut self, a: Array) -> Var {
        self.push(a, None, None)
    }

    /// Copies a node's value and severs it from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let a = self.vals[v.0].clone();
        self.push(a, None, None)
    }

    pub fn backward(&mut self, root: Var) -> Grads {
        assert_eq!(self.vals[root.0].numel(), 1, "backward root must be scalar");
        let n = self.vals.len();
        let mut g: Vec<Vec<f64>> = self.vals.iter().map(|v| vec![0.0; v.numel()]).collect();
        let mut touched = vec![false; n];
        g[root.0][0] = 1.0;
        touched[root.0] = true;
        for i in (0..=root.0).rev() {
            if !touched[i] {
                continue;
            }
            if let Some(back) = self.backs[i].take() {
                let gi = std::mem::take(&mut g[i]);
                let ga = Array::new(self.vals[i].shape.clone(), gi);
                back(&self.vals, &ga, &mut g, &mut touched);
                g[i] = ga.data;
            }
        }
        Grads { g }
    }

    pub fn grad(&self, grads: &Grads, v: Var) -> Array {
        Array::new(self.vals[v.0].shape.clone(), grads.g[v.0].clone())
    }

    /// Accumulates node gradients onto their bound parameters. Parameters with
    /// no bound node on this tape are absent, i.e. exactly zero.
    pub fn param_grads(&self, grads: &Grads) -> HashMap<ParamId, Array> {
        let mut out: HashMap<ParamId, Array> = HashMap::new();
        for (i, bound) in self.bound.iter().enumerate() {
            if let Some(id) = bound {
                let entry = out
                    .entry(*id)
                    .or_insert_with(|| Array::zeros(self.vals[i].shape.clone()));
                for (e, gv) in entry.data.iter_mut().zip(&grads.g[i]) {
                    *e += gv;
                }
            }
        }
        out
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        // (ga_coeff, gb_coeff) as functions of (x, y)
        df: impl Fn(f64, f64) -> (f64, f64) + 'static,
    ) -> Var {
        let (xa, xb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(xa.shape, xb.shape, "binary op shape mismatch");
        let data: Vec<f64> = xa.data.iter().zip(&xb.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = xa.shape.clone();
        let back: BackFn = Box::new(move |vals, gout, g, touched| {
            let (xa, xb) = (&vals[a.0], &vals[b.0]);
            touched[a.0] = true;
            touched[b.0] = true;
            for i in 0..gout.data.len() {
                let (da, db) = df(xa.data[i], xb.data[i]);
                g[a.0][i] += gout.data[i] * da;
                g[b.0][i] += gout.data[i] * db;
            }
        });
        self.push(Array::new(shape, data), Some(back), None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, |x, y| (1.0 / y, -x / (y * y)))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static, // (x, y) -> dy/dx
    ) -> Var {
        let xa = &self.vals[a.0];
        let data: Vec<f64> = xa.data.iter().map(|x| f(*x)).collect();
        let shape = xa.shape.clone();
        let out_idx = self.vals.len();
        let back: BackFn = Box::new(move |vals, gout, g, touched| {
            let xa = &vals[a.0];
            let y = &vals[out_idx];
            touched[a.0] = true;
            for i in 0..gout.data.len() {
                g[a.0][i] += gout.data[i] * df(xa.data[i], y.data[i]);
            }
        });
        self.push(Array::new(shape, data), Some(back), None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, |_, _| 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn lrelu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            a,
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    // ---- reductions / broadcasts ----

    pub fn mean_all(&mut self, a: Var) -> Var {
        let xa = &self.vals[a.0];
        let n = xa.numel() as f64;
        let m = xa.data.iter().sum::<f64>() / n;
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[a.0] = true;
            let gv = gout.data[0] / n;
            for e in g[a.0].iter_mut() {
                *e += gv;
            }
        });
        self.push(Array::scalar(m), Some(back), None)
    }

    /// Per-channel mean over spatial dims: `[c,h,w] -> [c]`.
    pub fn mean_hw(&mut self, a: Var) -> Var {
        let xa = &self.vals[a.0];
        let (c, h, w) = xa.chw();
        let hw = h * w;
        let data: Vec<f64> = (0..c)
            .map(|ch| xa.data[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[a.0] = true;
            for ch in 0..c {
                let gv = gout.data[ch] / hw as f64;
                for e in g[a.0][ch * hw..(ch + 1) * hw].iter_mut() {
                    *e += gv;
                }
            }
        });
        self.push(Array::new(vec![c], data), Some(back), None)
    }

    /// Per-channel max over spatial dims: `[c,h,w] -> [c]` (global max pool).
    pub fn max_hw(&mut self, a: Var) -> Var {
        let xa = &self.vals[a.0];
        let (c, h, w) = xa.chw();
        let hw = h * w;
        let mut data = Vec::with_capacity(c);
        let mut arg = Vec::with_capacity(c);
        for ch in 0..c {
            let slice = &xa.data[ch * hw..(ch + 1) * hw];
            let (mut best_i, mut best) = (0usize, slice[0]);
            for (i, v) in slice.iter().enumerate().skip(1) {
                if *v > best {
                    best = *v;
                    best_i = i;
                }
            }
            data.push(best);
            arg.push(ch * hw + best_i);
        }
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[a.0] = true;
            for ch in 0..c {
                g[a.0][arg[ch]] += gout.data[ch];
            }
        });
        self.push(Array::new(vec![c], data), Some(back), None)
    }

    /// Broadcast `[c]` to `[c,h,w]`.
    pub fn bcast_c(&mut self, v: Var, h: usize, w: usize) -> Var {
        let xv = &self.vals[v.0];
        assert_eq!(xv.shape.len(), 1, "bcast_c expects vector");
        let c = xv.shape[0];
        let hw = h * w;
        let mut data = vec![0.0; c * hw];
        for ch in 0..c {
            data[ch * hw..(ch + 1) * hw].fill(xv.data[ch]);
        }
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[v.0] = true;
            for ch in 0..c {
                g[v.0][ch] += gout.data[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
        });
        self.push(Array::new(vec![c, h, w], data), Some(back), None)
    }

    /// Broadcast a scalar to an arbitrary shape.
    pub fn bcast_all(&mut self, s: Var, shape: Vec<usize>) -> Var {
        assert_eq!(self.vals[s.0].numel(), 1, "bcast_all expects scalar");
        let v = self.vals[s.0].data[0];
        let n: usize = shape.iter().product();
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[s.0] = true;
            g[s.0][0] += gout.data.iter().sum::<f64>();
        });
        self.push(Array::new(shape, vec![v; n]), Some(back), None)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let xa = &self.vals[a.0];
        assert_eq!(xa.numel(), shape.iter().product::<usize>());
        let data = xa.data.clone();
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[a.0] = true;
            for (e, gv) in g[a.0].iter_mut().zip(&gout.data) {
                *e += gv;
            }
        });
        self.push(Array::new(shape, data), Some(back), None)
    }

    pub fn pick(&mut self, v: Var, k: usize) -> Var {
        let xv = &self.vals[v.0];
        assert!(k < xv.numel(), "pick index out of range");
        let val = xv.data[k];
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[v.0] = true;
            g[v.0][k] += gout.data[0];
        });
        self.push(Array::scalar(val), Some(back), None)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(xa.shape, xb.shape, "dot shape mismatch");
        let val = xa.data.iter().zip(&xb.data).map(|(x, y)| x * y).sum();
        let back: BackFn = Box::new(move |vals, gout, g, touched| {
            touched[a.0] = true;
            touched[b.0] = true;
            let gv = gout.data[0];
            for i in 0..vals[a.0].data.len() {
                g[a.0][i] += gv * vals[b.0].data[i];
                g[b.0][i] += gv * vals[a.0].data[i];
            }
        });
        self.push(Array::scalar(val), Some(back), None)
    }

    /// Channel concatenation of two `[c,h,w]` maps.
    pub fn concat_c(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (&self.vals[a.0], &self.vals[b.0]);
        let (ca, h, w) = xa.chw();
        let (cb, hb, wb) = xb.chw();
        assert_eq!((h, w), (hb, wb), "concat_c spatial mismatch");
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(&xa.data);
        data.extend_from_slice(&xb.data);
        let na = ca * h * w;
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[a.0] = true;
            touched[b.0] = true;
            for i in 0..na {
                g[a.0][i] += gout.data[i];
            }
            for i in na..gout.data.len() {
                g[b.0][i - na] += gout.data[i];
            }
        });
        self.push(Array::new(vec![ca + cb, h, w], data), Some(back), None)
    }

    // ---- neural ops ----

    /// 2-D convolution, zero padding. `x: [ci,h,w]`, `w: [co,ci,kh,kw]`,
    /// `b: [co]` -> `[co,ho,wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (xv, wv, bv) = (&self.vals[x.0], &self.vals[w.0], &self.vals[b.0]);
        let (ci, h, wd) = xv.chw();
        assert_eq!(wv.shape.len(), 4, "conv weight must be 4-d");
        let (co, wci, kh, kw) = (wv.shape[0], wv.shape[1], wv.shape[2], wv.shape[3]);
        assert_eq!(ci, wci, "conv channel mismatch");
        assert_eq!(bv.shape, vec![co], "conv bias mismatch");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv input too small");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let mut out = vec![0.0; co * ho * wo];
        conv_forward(
            &xv.data, &wv.data, &bv.data, &mut out, ci, h, wd, co, kh, kw, stride, pad, ho, wo,
        );
        let back: BackFn = Box::new(move |vals, gout, g, touched| {
            touched[x.0] = true;
            touched[w.0] = true;
            touched[b.0] = true;
            let xv = &vals[x.0];
            let wv = &vals[w.0];
            // split mutable grads for x, w, b
            conv_backward(
                &xv.data, &wv.data, &gout.data, g, x.0, w.0, b.0, ci, h, wd, co, kh, kw, stride,
                pad, ho, wo,
            );
        });
        self.push(Array::new(vec![co, ho, wo], out), Some(back), None)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = &self.vals[x.0];
        let (c, h, w) = xv.chw();
        let (h2, w2) = (h * 2, w * 2);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[ch * h2 * w2 + i * w2 + j] = xv.data[ch * h * w + (i / 2) * w + j / 2];
                }
            }
        }
        let back: BackFn = Box::new(move |_, gout, g, touched| {
            touched[x.0] = true;
            for ch in 0..c {
                for i in 0..h2 {
                    for j in 0..w2 {
                        g[x.0][ch * h * w + (i / 2) * w + j / 2] +=
                            gout.data[ch * h2 * w2 + i * w2 + j];
                    }
                }
            }
        });
        self.push(Array::new(vec![c, h2, w2], out), Some(back), None)
    }

    /// Fully-connected layer. `x: [n]`, `w: [m,n]`, `b: [m]` -> `[m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (&self.vals[x.0], &self.vals[w.0], &self.vals[b.0]);
        assert_eq!(xv.shape.len(), 1, "linear input must be vector");
        let n = xv.shape[0];
        assert_eq!(wv.shape.len(), 2, "linear weight must be matrix");
        let (m, wn) = (wv.shape[0], wv.shape[1]);
        assert_eq!(n, wn, "linear dims mismatch");
        assert_eq!(bv.shape, vec![m], "linear bias mismatch");
        let mut out = vec![0.0; m];
        for r in 0..m {
            let row = &wv.data[r * n..(r + 1) * n];
            out[r] = bv.data[r] + row.iter().zip(&xv.data).map(|(a, b)| a * b).sum::<f64>();
        }
        let back: BackFn = Box::new(move |vals, gout, g, touched| {
            touched[x.0] = true;
            touched[w.0] = true;
            touched[b.0] = true;
            let xv = &vals[x.0];
            let wv = &vals[w.0];
            for r in 0..m {
                let gr = gout.data[r];
                g[b.0][r] += gr;
                for cidx in 0..n {
                    g[w.0][r * n + cidx] += gr * xv.data[cidx];
                    g[x.0][cidx] += gr * wv.data[r * n + cidx];
                }
            }
        });
        self.push(Array::new(vec![m], out), Some(back), None)
    }

    /// Matrix-vector product without bias. `x: [n]`, `w: [m,n]` -> `[m]`.
    pub fn matvec(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (&self.vals[x.0], &self.vals[w.0]);
        let n = xv.shape[0];
        let (m, wn) = (wv.shape[0], wv.shape[1]);
        assert_eq!(n, wn, "matvec dims mismatch");
        let mut out = vec![0.0; m];
        for r in 0..m {
            out[r] = wv.data[r * n..(r + 1) * n]
                .iter()
                .zip(&xv.data)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let back: BackFn = Box::new(move |vals, gout, g, touched| {
            touched[x.0] = true;
            touched[w.0] = true;
            let xv = &vals[x.0];
            let wv = &vals[w.0];
            for r in 0..m {
                let gr = gout.data[r];
                for cidx in 0..n {
                    g[w.0][r * n + cidx] += gr * xv.data[cidx];
                    g[x.0][cidx] += gr * wv.data[r * n + cidx];
                }
            }
        });
        self.push(Array::new(vec![m], out), Some(back), None)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    for o in 0..co {
        out[o * ho * wo..(o + 1) * ho * wo].fill(b[o]);
        for c in 0..ci {
            let xc = &x[c * h * wd..(c + 1) * h * wd];
            let wk = &w[(o * ci + c) * kh * kw..(o * ci + c + 1) * kh * kw];
            for i in 0..ho {
                let base_i = (i * stride) as isize - pad as isize;
                for u in 0..kh {
                    let ii = base_i + u as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let xrow = &xc[ii as usize * wd..(ii as usize + 1) * wd];
                    let orow = &mut out[o * ho * wo + i * wo..o * ho * wo + (i + 1) * wo];
                    for v in 0..kw {
                        let wv = wk[u * kw + v];
                        if wv == 0.0 {
                            continue;
                        }
                        for j in 0..wo {
                            let jj = (j * stride + v) as isize - pad as isize;
                            if jj < 0 || jj >= wd as isize {
                                continue;
                            }
                            orow[j] += wv * xrow[jj as usize];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &mut [Vec<f64>],
    xi: usize,
    wi: usize,
    bi: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    for o in 0..co {
        let go = &gout[o * ho * wo..(o + 1) * ho * wo];
        g[bi][o] += go.iter().sum::<f64>();
    }
    for o in 0..co {
        let go = &gout[o * ho * wo..(o + 1) * ho * wo];
        for c in 0..ci {
            let xc = &x[c * h * wd..(c + 1) * h * wd];
            let wk = &w[(o * ci + c) * kh * kw..(o * ci + c + 1) * kh * kw];
            for i in 0..ho {
                let base_i = (i * stride) as isize - pad as isize;
                for u in 0..kh {
                    let ii = base_i + u as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let row = ii as usize * wd;
                    for j in 0..wo {
                        let gv = go[i * wo + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for v in 0..kw {
                            let jj = (j * stride + v) as isize - pad as isize;
                            if jj < 0 || jj >= wd as isize {
                                continue;
                            }
                            let xidx = row + jj as usize;
                            g[wi][(o * ci + c) * kh * kw + u * kw + v] += gv * xc[xidx];
                            g[xi][c * h * wd + xidx] += gv * wk[u * kw + v];
                        }
                    }
                }
            }
        }
    }
}
