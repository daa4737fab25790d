//! Closed-form message kernel for the clustered graph F_c.
//!
//! Pair messages live on directed edges, component order (tail copy, head
//! copy). For the directed edge (i -> j):
//!
//! * `fac_to_var[(i -> j)]` is the message from the H_i·δ factor into the
//!   pair variable of link {i, j}, over (v_i copy, v_j copy);
//! * `var_to_fac[(i -> j)]` is the message from that pair variable into the
//!   factor at the head, H_j: the tail-side factor message times the link's
//!   leaf factor, same component order.
//!
//! The H_i·δ factor pins all copies of v_i to one integrated variable x and
//! couples the neighbor copies y_k only through the injection observation
//! z_gi ~ c_gi|i x + Σ_k c_gi|k y_k. Eliminating each y_k of an incoming
//! message under its own pair Gaussian contributes, per neighbor, the Schur
//! quantities
//!
//! ```text
//! p_k = A_k - b_k^2 / a_k            marginal precision of x
//! i_k = h2_k - (b_k / a_k) h1_k      marginal information of x
//! γ_k = c_k^2 / a_k                  extra variance of the observation
//! δ_k = c_k b_k / a_k                coefficient shifted onto x
//! ε_k = c_k h1_k / a_k               offset absorbed into the observation
//! ```
//!
//! where [[a_k, b_k], [b_k, A_k]] is the precision and (h1_k, h2_k) the
//! information vector of the incoming message over (y_k, x). Leave-one-out
//! sums of these five quantities give the outgoing pair message in closed
//! form; nothing larger than a 2x2 matrix is ever inverted.

use crate::gaussian::{product2, Gaussian2, GaussianError};
use crate::graph::FactorGraph;

use super::{SweepCtx, INIT_VARIANCE};

#[derive(Debug, Clone)]
pub struct FcStore {
    pub(crate) fac_to_var: Vec<Gaussian2>,
    pub(crate) var_to_fac: Vec<Gaussian2>,
}

pub(super) fn init(fg: &FactorGraph) -> FcStore {
    let uniform = Gaussian2 {
        mean: [0.0, 0.0],
        cov: [[INIT_VARIANCE, 0.0], [0.0, INIT_VARIANCE]],
    };
    let nd = fg.net().n_directed();
    FcStore {
        fac_to_var: vec![uniform; nd],
        var_to_fac: vec![uniform; nd],
    }
}

/// Multiplies a pair message by the link leaf factor
/// (z - c1 x1 - c2 x2)^2 / 2σ² in precision form.
fn msg_times_leaf(
    m: &Gaussian2,
    c1: f64,
    c2: f64,
    z: f64,
    s2: f64,
) -> Result<Gaussian2, GaussianError> {
    let (mut p, mut h) = m.to_information()?;
    let w = 1.0 / s2;
    p[0][0] += w * c1 * c1;
    p[0][1] += w * c1 * c2;
    p[1][0] += w * c1 * c2;
    p[1][1] += w * c2 * c2;
    h[0] += w * z * c1;
    h[1] += w * z * c2;
    Gaussian2::from_information(p, h)
}

/// Leaf-coefficient pair of link `li` in (tail, head) component order.
fn leaf_coeffs(fg: &FactorGraph, li: usize, forward: bool) -> (f64, f64) {
    let t = fg.vertex_tables();
    if forward {
        (t.c_f_lo[li], t.c_f_hi[li])
    } else {
        (t.c_f_hi[li], t.c_f_lo[li])
    }
}

pub(super) fn sweep(
    fg: &FactorGraph,
    prev: &FcStore,
    ctx: &SweepCtx,
) -> Result<FcStore, GaussianError> {
    let net = fg.net();
    let t = fg.vertex_tables();
    let nd = net.n_directed();
    let mut next = prev.clone();

    // Phase 1: variable -> factor.
    for i in 0..net.n_vertices() {
        for (pos, &(j, li)) in net.neighbors(i).iter().enumerate() {
            let d = net.dir_offset(i) + pos;
            let (c1, c2) = leaf_coeffs(fg, li, i < j);
            let msg = msg_times_leaf(&prev.fac_to_var[d], c1, c2, t.z_f[li], t.s2_f[li])?;
            next.var_to_fac[d] = ctx.store2(nd + d, prev.var_to_fac[d], msg);
        }
    }

    // Phase 2: factor -> variable. Incoming message on (k -> i) has component
    // order (y_k = copy of v_k, x = copy of v_i).
    let mut schur: Vec<[f64; 5]> = Vec::new();
    for i in 0..net.n_vertices() {
        schur.clear();
        let (mut sp, mut si, mut sg, mut sd, mut se) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (pos, &(k, _)) in net.neighbors(i).iter().enumerate() {
            let m = &next.var_to_fac[net.dir_index(k, i)];
            let (p, h) = m.to_information()?;
            let (a, b, big_a) = (p[0][0], p[0][1], p[1][1]);
            let c = t.c_g_nbr[net.dir_offset(i) + pos];
            let p_k = big_a - b * b / a;
            let i_k = h[1] - (b / a) * h[0];
            let g_k = c * c / a;
            let d_k = c * b / a;
            let e_k = c * h[0] / a;
            schur.push([p_k, i_k, g_k, d_k, e_k]);
            sp += p_k;
            si += i_k;
            sg += g_k;
            sd += d_k;
            se += e_k;
        }
        for (pos, _) in net.neighbors(i).iter().enumerate() {
            let d = net.dir_offset(i) + pos;
            let [p_j, i_j, g_j, d_j, e_j] = schur[pos];
            let q = 1.0 / t.s2_v[i] + (sp - p_j);
            let r = t.z_v[i] / t.s2_v[i] + (si - i_j);
            let st2 = t.s2_g[i] + (sg - g_j);
            let alpha = t.c_g_self[i] - (sd - d_j);
            let cj = t.c_g_nbr[d];
            let off = -alpha / (q * cj);
            let cov = [
                [1.0 / q, off],
                [off, st2 / (cj * cj) + alpha * alpha / (q * cj * cj)],
            ];
            let mean = [
                r / q,
                (t.z_g[i] - (se - e_j)) / cj - alpha * r / (q * cj),
            ];
            let msg = Gaussian2::new(mean, cov)?;
            next.fac_to_var[d] = ctx.store2(d, prev.fac_to_var[d], msg);
        }
    }
    Ok(next)
}

/// Variable-node belief of each link in canonical orientation: the lo-side
/// factor message times the flipped hi-side variable message (leaf included
/// exactly once), recomputed fresh from the current factor messages.
pub(super) fn collect(fg: &FactorGraph, store: &FcStore) -> Result<Vec<Gaussian2>, GaussianError> {
    let net = fg.net();
    let t = fg.vertex_tables();
    let mut out = Vec::with_capacity(net.n_links());
    for (li, l) in net.links().iter().enumerate() {
        let fwd = &store.fac_to_var[net.dir_index(l.lo, l.hi)];
        let (c1, c2) = leaf_coeffs(fg, li, false);
        let rev = msg_times_leaf(
            &store.fac_to_var[net.dir_index(l.hi, l.lo)],
            c1,
            c2,
            t.z_f[li],
            t.s2_f[li],
        )?;
        out.push(product2(fwd, &rev.flipped())?);
    }
    Ok(out)
}

/// Flip symmetry helper used by tests: the same belief collected in the
/// opposite orientation.
#[cfg(test)]
pub(crate) fn collect_reversed(
    fg: &FactorGraph,
    store: &FcStore,
) -> Result<Vec<Gaussian2>, GaussianError> {
    let net = fg.net();
    let t = fg.vertex_tables();
    let mut out = Vec::with_capacity(net.n_links());
    for (li, l) in net.links().iter().enumerate() {
        let fwd = &store.fac_to_var[net.dir_index(l.hi, l.lo)];
        let (c1, c2) = leaf_coeffs(fg, li, true);
        let rev = msg_times_leaf(
            &store.fac_to_var[net.dir_index(l.lo, l.hi)],
            c1,
            c2,
            t.z_f[li],
            t.s2_f[li],
        )?;
        out.push(product2(fwd, &rev.flipped())?);
    }
    Ok(out)
}
