//! Shared/specific parameter partition, branch grafting and the
//! selective-backpropagation routing.

use std::collections::HashMap;

use crate::autodiff::{Array, Grads, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{build_branch, BranchedGenerator, Direction, GroupId};

/// Disjoint cover of all generator parameters into the shared cell and one
/// cell per group.
#[derive(Clone, Debug)]
pub struct ParamPartition {
    pub shared: Vec<ParamId>,
    pub specific: Vec<Vec<ParamId>>,
}

impl ParamPartition {
    pub fn n_groups(&self) -> usize {
        self.specific.len()
    }

    /// Total generator parameter element count.
    pub fn total_numel(&self, store: &ParamStore) -> usize {
        store.numel(&self.shared)
            + self
                .specific
                .iter()
                .map(|cell| store.numel(cell))
                .sum::<usize>()
    }
}

/// Which groups detach the shared stacks during backpropagation. In the
/// default selective mode every group except 0 detaches.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct DetachPolicy {
    pub selective: bool,
}

impl DetachPolicy {
    pub fn selective() -> Self {
        DetachPolicy { selective: true }
    }

    /// Ablation: shared stacks live for every group.
    pub fn none() -> Self {
        DetachPolicy { selective: false }
    }

    pub fn detach(&self, group: GroupId) -> bool {
        self.selective && group.0 != 0
    }
}

/// Per-partition gradient norms from one backward pass.
#[derive(Clone, Debug)]
pub struct GradientReport {
    pub shared_norm: f64,
    pub specific_norms: Vec<f64>,
    pub grads: HashMap<ParamId, Array>,
}

/// Computes the shared/specific partition of a model's generator parameters
/// by identifier-set algebra over the parameter names.
pub fn partition(store: &ParamStore, model: &BranchedGenerator) -> Result<ParamPartition> {
    let shared: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.name.starts_with("gen.") && p.name.contains(".shared."))
        .map(|(id, _)| id)
        .collect();
    let specific: Vec<Vec<ParamId>> = (0..model.n_groups())
        .map(|g| {
            let tag = format!(".spec.g{g}.");
            store
                .iter()
                .filter(|(_, p)| p.name.starts_with("gen.") && p.name.contains(&tag))
                .map(|(id, _)| id)
                .collect()
        })
        .collect();

    // disjoint-cover check over all generator parameters
    let total: usize = store
        .iter()
        .filter(|(_, p)| p.name.starts_with("gen."))
        .count();
    let covered = shared.len() + specific.iter().map(Vec::len).sum::<usize>();
    if covered != total {
        return Err(Error::Contract(format!(
            "partition does not cover generator parameters: {covered} of {total}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for id in shared.iter().chain(specific.iter().flatten()) {
        if !seen.insert(*id) {
            return Err(Error::Contract(format!(
                "parameter {} in more than one partition cell",
                store.get(*id).name
            )));
        }
    }
    Ok(ParamPartition { shared, specific })
}

/// Adds value-copied branches for `new_groups` to a model (typically a
/// single-branch basic model). New branches clone group 0's specific stacks,
/// so every new group translates identically to group 0 until trained.
pub fn graft_branches(
    store: &mut ParamStore,
    model: &BranchedGenerator,
    new_groups: &[GroupId],
) -> Result<BranchedGenerator> {
    let n0 = model.n_groups();
    let mut expected = n0;
    let mut sorted: Vec<usize> = new_groups.iter().map(|g| g.0).collect();
    sorted.sort_unstable();
    for (i, g) in sorted.iter().enumerate() {
        if sorted[..i].contains(g) {
            return Err(Error::DuplicateGroup(*g));
        }
        if *g != expected {
            return Err(Error::Contract(format!(
                "group ids must be dense: expected {expected}, got {g}"
            )));
        }
        expected += 1;
    }

    let mut out = model.clone();
    // placeholder init only: every value is overwritten by the group-0 copy
    let mut init_rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    for dir in Direction::BOTH {
        for g in &sorted {
            let branch = build_branch(
                store,
                &model.cfg,
                &model.split,
                dir,
                *g,
                1.0,
                &mut init_rng,
            );
            // copy group-0 values onto the fresh branch, name for name
            let src_prefix = format!("gen.{}.spec.g0.", dir.tag());
            let dst_prefix = format!("gen.{}.spec.g{}.", dir.tag(), g);
            let dst_ids = store.ids_with_prefix(&dst_prefix);
            for dst in dst_ids {
                let suffix = store.get(dst).name[dst_prefix.len()..].to_string();
                let src = store
                    .id(&format!("{src_prefix}{suffix}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing source {suffix}")))?;
                let value = store.value(src).clone();
                if value.shape != store.value(dst).shape {
                    return Err(Error::shape(
                        format!("{:?}", store.value(dst).shape),
                        format!("{:?}", value.shape),
                        "graft copy",
                    ));
                }
                *store.value_mut(dst) = value;
            }
            out.dirs[dir.index()].specific.push(branch);
        }
    }
    Ok(out)
}

/// Backpropagates a scalar loss and reports per-partition gradient norms.
/// Shared norms are exactly zero whenever the loss was computed through
/// detached shared stacks.
pub fn routed_loss_backward(
    tape: &mut Tape,
    loss: Var,
    part: &ParamPartition,
) -> Result<GradientReport> {
    let grads: Grads = tape.backward(loss);
    let by_param = tape.param_grads(&grads);
    if by_param.is_empty() {
        return Err(Error::Contract(
            "loss is not connected to any model parameter".into(),
        ));
    }
    let norm_of = |ids: &[ParamId]| -> f64 {
        ids.iter()
            .filter_map(|id| by_param.get(id))
            .map(|g| g.sq_norm())
            .sum::<f64>()
            .sqrt()
    };
    Ok(GradientReport {
        shared_norm: norm_of(&part.shared),
        specific_norms: part.specific.iter().map(|c| norm_of(c)).collect(),
        grads: by_param,
    })
}
