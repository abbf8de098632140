use std::collections::{HashMap, HashSet};

use crate::autodiff::{Array, ParamId, ParamStore};

struct Moment {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

/// Adam with L2 weight decay. A parameter is only touched (values, decay and
/// optimizer state alike) on steps where it receives a nonzero gradient, so
/// detached shared parameters stay bitwise unchanged through few-shot-only
/// updates.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Parameters clamped to [0, 1] after every update (AdaLIN rho).
    pub clamp01: HashSet<ParamId>,
    state: HashMap<ParamId, Moment>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            clamp01: HashSet::new(),
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Array>) {
        let mut ids: Vec<ParamId> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            if store.get(id).frozen {
                continue;
            }
            let g = &grads[&id];
            if g.data.iter().all(|v| *v == 0.0) {
                continue;
            }
            let n = g.numel();
            let st = self.state.entry(id).or_insert_with(|| Moment {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t as i32);
            let bc2 = 1.0 - self.beta2.powi(st.t as i32);
            let w = store.value_mut(id);
            for i in 0..n {
                let gi = g.data[i] + self.weight_decay * w.data[i];
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * gi;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = st.m[i] / bc1;
                let vh = st.v[i] / bc2;
                w.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            if self.clamp01.contains(&id) {
                for v in &mut w.data {
                    *v = v.clamp(0.0, 1.0);
                }
            }
            w.quantize_f32();
        }
    }
}
