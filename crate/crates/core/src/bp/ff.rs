//! Closed-form message kernel for the flow-only graph F_f.
//!
//! Scalar messages live on directed edges. For the directed edge (i -> j):
//!
//! * `fac_to_var[(i -> j)]` is the message from the conservation factor H_i
//!   into the link variable, expressed over f_ij (flow out of i);
//! * `var_to_fac[(i -> j)]` is the message from the link variable into the
//!   factor H_j at the head, also over f_ij — it is the tail-side factor
//!   message times the link's leaf factor.
//!
//! The conservation factor observes z_gi = Σ_j f_ij, so integrating out the
//! other flows adds variances and means directly: the leave-one-out sums
//! γ, ε below. Incoming messages arrive in head orientation (f_ji = -f_ij),
//! which turns the subtraction into `z_gi + ε_(ij)`.

use crate::gaussian::{product1, Gaussian1, GaussianError};
use crate::graph::FactorGraph;

use super::{SweepCtx, INIT_VARIANCE};

#[derive(Debug, Clone)]
pub struct FfStore {
    pub(crate) fac_to_var: Vec<Gaussian1>,
    pub(crate) var_to_fac: Vec<Gaussian1>,
}

pub(super) fn init(fg: &FactorGraph) -> FfStore {
    let uniform = Gaussian1 { mean: 0.0, variance: INIT_VARIANCE };
    let nd = fg.net().n_directed();
    FfStore {
        fac_to_var: vec![uniform; nd],
        var_to_fac: vec![uniform; nd],
    }
}

/// Leaf factor of link `li` expressed over the flow in the direction of edge
/// `(tail -> head)`: the canonical observation with the sign of the
/// orientation.
fn leaf(fg: &FactorGraph, li: usize, forward: bool) -> Gaussian1 {
    let t = fg.flow_tables();
    Gaussian1 {
        mean: if forward { t.z_f[li] } else { -t.z_f[li] },
        variance: t.s2_f[li],
    }
}

pub(super) fn sweep(
    fg: &FactorGraph,
    prev: &FfStore,
    ctx: &SweepCtx,
) -> Result<FfStore, GaussianError> {
    let net = fg.net();
    let t = fg.flow_tables();
    let nd = net.n_directed();
    let mut next = prev.clone();

    // Phase 1: variable -> factor, from previous factor -> variable.
    for i in 0..net.n_vertices() {
        for (pos, &(j, li)) in net.neighbors(i).iter().enumerate() {
            let d = net.dir_offset(i) + pos;
            let msg = product1(&prev.fac_to_var[d], &leaf(fg, li, i < j))?;
            next.var_to_fac[d] = ctx.store1(nd + d, prev.var_to_fac[d], msg);
        }
    }

    // Phase 2: factor -> variable, with leave-one-out sums over the fresh
    // incoming messages (head orientation).
    for i in 0..net.n_vertices() {
        let mut gamma = 0.0;
        let mut eps = 0.0;
        for &(j, _) in net.neighbors(i) {
            let m = &next.var_to_fac[net.dir_index(j, i)];
            gamma += m.variance;
            eps += m.mean;
        }
        for (pos, &(j, _)) in net.neighbors(i).iter().enumerate() {
            let d = net.dir_offset(i) + pos;
            let m = &next.var_to_fac[net.dir_index(j, i)];
            let msg = Gaussian1::new(
                t.z_g[i] + (eps - m.mean),
                t.s2_g[i] + (gamma - m.variance),
            )?;
            next.fac_to_var[d] = ctx.store1(d, prev.fac_to_var[d], msg);
        }
    }
    Ok(next)
}

/// Belief over the canonical flow of each link: the tail-side factor message
/// times the flipped head-side variable message (which carries the leaf
/// exactly once). Recomputed fresh from the current factor messages.
pub(super) fn collect(fg: &FactorGraph, store: &FfStore) -> Result<Vec<Gaussian1>, GaussianError> {
    let net = fg.net();
    let mut out = Vec::with_capacity(net.n_links());
    for (li, l) in net.links().iter().enumerate() {
        let fwd = &store.fac_to_var[net.dir_index(l.lo, l.hi)];
        let rev = product1(
            &store.fac_to_var[net.dir_index(l.hi, l.lo)],
            &leaf(fg, li, false),
        )?;
        out.push(product1(fwd, &rev.negated())?);
    }
    Ok(out)
}
