use crate::autodiff::{Tape, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Instance normalization without affine parameters: per-channel
/// standardization over the spatial dimensions.
pub fn instance_norm(t: &mut Tape, f: Var) -> Var {
    let (_, h, w) = {
        let a = t.val(f);
        a.chw()
    };
    let mu = t.mean_hw(f);
    let mu_b = t.bcast_c(mu, h, w);
    let centered = t.sub(f, mu_b);
    let sq = t.mul(centered, centered);
    let var = t.mean_hw(sq);
    let var_eps = t.add_scalar(var, NORM_EPS);
    let std = t.sqrt(var_eps);
    let std_b = t.bcast_c(std, h, w);
    t.div(centered, std_b)
}

/// Layer normalization without affine parameters: standardization over
/// channels and spatial dimensions jointly.
pub fn layer_norm(t: &mut Tape, f: Var) -> Var {
    let shape = t.shape(f).to_vec();
    let mu = t.mean_all(f);
    let mu_b = t.bcast_all(mu, shape.clone());
    let centered = t.sub(f, mu_b);
    let sq = t.mul(centered, centered);
    let var = t.mean_all(sq);
    let var_eps = t.add_scalar(var, NORM_EPS);
    let std = t.sqrt(var_eps);
    let std_b = t.bcast_all(std, shape);
    t.div(centered, std_b)
}

/// Adaptive layer-instance normalization: per-channel mix
/// `rho * IN(f) + (1 - rho) * LN(f)`, scaled by `gamma` and shifted by `beta`.
/// `gamma`, `beta`, `rho` are per-channel vectors; `rho` must lie in [0, 1].
pub fn adalin(t: &mut Tape, f: Var, gamma: Var, beta: Var, rho: Var) -> Var {
    let (_, h, w) = t.val(f).chw();
    let inf = instance_norm(t, f);
    let lnf = layer_norm(t, f);
    let rho_b = t.bcast_c(rho, h, w);
    let neg = t.scale(rho, -1.0);
    let one_minus = t.add_scalar(neg, 1.0);
    let om_b = t.bcast_c(one_minus, h, w);
    let a = t.mul(rho_b, inf);
    let b = t.mul(om_b, lnf);
    let mix = t.add(a, b);
    let gamma_b = t.bcast_c(gamma, h, w);
    let beta_b = t.bcast_c(beta, h, w);
    let scaled = t.mul(gamma_b, mix);
    t.add(scaled, beta_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Array, Tape};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_map(c: usize, h: usize, w: usize, seed: u64) -> Array {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::new(
            vec![c, h, w],
            (0..c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
    }

    /// Straightforward reimplementation used as the oracle.
    fn in_oracle(f: &Array) -> Array {
        let (c, h, w) = f.chw();
        let hw = (h * w) as f64;
        let mut out = f.clone();
        for ch in 0..c {
            let s = &f.data[ch * h * w..(ch + 1) * h * w];
            let mu = s.iter().sum::<f64>() / hw;
            let var = s.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hw;
            let std = (var + NORM_EPS).sqrt();
            for (o, v) in out.data[ch * h * w..(ch + 1) * h * w].iter_mut().zip(s) {
                *o = (v - mu) / std;
            }
        }
        out
    }

    fn ln_oracle(f: &Array) -> Array {
        let n = f.numel() as f64;
        let mu = f.data.iter().sum::<f64>() / n;
        let var = f.data.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let std = (var + NORM_EPS).sqrt();
        Array::new(
            f.shape.clone(),
            f.data.iter().map(|v| (v - mu) / std).collect(),
        )
    }

    #[test]
    fn adalin_rho_one_is_instance_norm() {
        let f = rand_map(3, 4, 4, 7);
        let mut t = Tape::new();
        let fv = t.value(f.clone());
        let gamma = t.value(Array::full(vec![3], 1.0));
        let beta = t.value(Array::full(vec![3], 0.0));
        let rho = t.value(Array::full(vec![3], 1.0));
        let out = adalin(&mut t, fv, gamma, beta, rho);
        assert!(t.val(out).max_abs_diff(&in_oracle(&f)) < 1e-6);
    }

    #[test]
    fn adalin_rho_zero_is_layer_norm() {
        let f = rand_map(3, 4, 4, 8);
        let mut t = Tape::new();
        let fv = t.value(f.clone());
        let gamma = t.value(Array::full(vec![3], 1.0));
        let beta = t.value(Array::full(vec![3], 0.0));
        let rho = t.value(Array::full(vec![3], 0.0));
        let out = adalin(&mut t, fv, gamma, beta, rho);
        assert!(t.val(out).max_abs_diff(&ln_oracle(&f)) < 1e-6);
    }

    #[test]
    fn adalin_half_mixes_equally() {
        let f = rand_map(2, 3, 3, 9);
        let mut t = Tape::new();
        let fv = t.value(f.clone());
        let gamma = t.value(Array::full(vec![2], 1.0));
        let beta = t.value(Array::full(vec![2], 0.0));
        let rho = t.value(Array::full(vec![2], 0.5));
        let out = adalin(&mut t, fv, gamma, beta, rho);
        let inn = in_oracle(&f);
        let lnn = ln_oracle(&f);
        let expect = Array::new(
            f.shape.clone(),
            inn.data
                .iter()
                .zip(&lnn.data)
                .map(|(a, b)| 0.5 * a + 0.5 * b)
                .collect(),
        );
        assert!(t.val(out).max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn adalin_gamma_beta_affine() {
        let f = rand_map(2, 3, 3, 10);
        let mut t = Tape::new();
        let fv = t.value(f.clone());
        let gamma = t.value(Array::new(vec![2], vec![2.0, 3.0]));
        let beta = t.value(Array::new(vec![2], vec![-1.0, 0.5]));
        let rho = t.value(Array::full(vec![2], 1.0));
        let out = adalin(&mut t, fv, gamma, beta, rho);
        let inn = in_oracle(&f);
        for ch in 0..2 {
            let (g, b) = ([2.0, 3.0][ch], [-1.0, 0.5][ch]);
            for i in 0..9 {
                let expect = g * inn.data[ch * 9 + i] + b;
                assert!((t.val(out).data[ch * 9 + i] - expect).abs() < 1e-9);
            }
        }
    }
}
