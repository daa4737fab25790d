//! Message kernel for the naive graph F_v, transcribed from the closed-form
//! update procedure.
//!
//! Variable nodes are the vertex variables. The vertex-value observation
//! (z_vi, σ²_vi) is folded directly into the vertex belief as an always-on
//! leaf, the injection observation forms the vertex factor H_i, and each link
//! carries a factor H_(ij). Scalar messages live per vertex (to/from the own
//! vertex factor) and per directed edge:
//!
//! * `var_to_vfac[(u -> v)]` — m_{u → H_v}, variable u into the neighbor's
//!   vertex factor;
//! * `vfac_to_var[(u -> v)]` — m_{H_u → v};
//! * `var_to_lfac[(u -> v)]` — m_{u → H_(uv)}, variable u into the link
//!   factor of {u, v};
//! * `lfac_to_var[(u -> v)]` — m_{H_(uv) → v}.
//!
//! Phase 1 forms the vertex beliefs from the previous factor messages and
//! derives all variable→factor messages by quotients; phase 2 emits the
//! factor→variable messages with leave-one-out sums γ, ε. The per-sweep
//! belief cache (K_i, μ_i) is kept in the store.

use crate::gaussian::{quotient1, Gaussian1, Gaussian2, GaussianError};
use crate::graph::FactorGraph;

use super::{SweepCtx, INIT_VARIANCE};

#[derive(Debug, Clone)]
pub struct FvStore {
    /// Per-vertex belief cache (K_i, μ_i), recomputed each sweep.
    pub(crate) belief: Vec<Gaussian1>,
    pub(crate) var_to_self: Vec<Gaussian1>,
    pub(crate) self_to_var: Vec<Gaussian1>,
    pub(crate) var_to_vfac: Vec<Gaussian1>,
    pub(crate) vfac_to_var: Vec<Gaussian1>,
    pub(crate) var_to_lfac: Vec<Gaussian1>,
    pub(crate) lfac_to_var: Vec<Gaussian1>,
}

pub(super) fn init(fg: &FactorGraph) -> FvStore {
    let uniform = Gaussian1 { mean: 0.0, variance: INIT_VARIANCE };
    let n = fg.net().n_vertices();
    let nd = fg.net().n_directed();
    FvStore {
        belief: vec![uniform; n],
        var_to_self: vec![uniform; n],
        self_to_var: vec![uniform; n],
        var_to_vfac: vec![uniform; nd],
        vfac_to_var: vec![uniform; nd],
        var_to_lfac: vec![uniform; nd],
        lfac_to_var: vec![uniform; nd],
    }
}

/// Coefficients of the link factor of `li` as (tail, head) for a directed
/// traversal `forward` = (tail == lo).
fn link_coeffs(fg: &FactorGraph, li: usize, forward: bool) -> (f64, f64) {
    let t = fg.vertex_tables();
    if forward {
        (t.c_f_lo[li], t.c_f_hi[li])
    } else {
        (t.c_f_hi[li], t.c_f_lo[li])
    }
}

pub(super) fn sweep(
    fg: &FactorGraph,
    prev: &FvStore,
    ctx: &SweepCtx,
) -> Result<FvStore, GaussianError> {
    let net = fg.net();
    let t = fg.vertex_tables();
    let n = net.n_vertices();
    let nd = net.n_directed();
    let mut next = prev.clone();

    // Phase 1: vertex beliefs from previous factor messages, then
    // variable -> factor quotients.
    for i in 0..n {
        let mut prec = 1.0 / t.s2_v[i] + prev.self_to_var[i].precision();
        let mut info = t.z_v[i] / t.s2_v[i]
            + prev.self_to_var[i].mean * prev.self_to_var[i].precision();
        for &(j, _) in net.neighbors(i) {
            let dv = net.dir_index(j, i);
            prec += prev.vfac_to_var[dv].precision() + prev.lfac_to_var[dv].precision();
            info += prev.vfac_to_var[dv].mean * prev.vfac_to_var[dv].precision()
                + prev.lfac_to_var[dv].mean * prev.lfac_to_var[dv].precision();
        }
        let belief = Gaussian1::new(info / prec, 1.0 / prec)?;
        next.belief[i] = belief;
        next.var_to_self[i] = ctx.store1(
            4 * nd + n + i,
            prev.var_to_self[i],
            quotient1(&belief, &prev.self_to_var[i])?,
        );
        for (pos, &(j, _)) in net.neighbors(i).iter().enumerate() {
            let d = net.dir_offset(i) + pos;
            let dv = net.dir_index(j, i);
            next.var_to_vfac[d] = ctx.store1(
                2 * nd + d,
                prev.var_to_vfac[d],
                quotient1(&belief, &prev.vfac_to_var[dv])?,
            );
            next.var_to_lfac[d] = ctx.store1(
                3 * nd + d,
                prev.var_to_lfac[d],
                quotient1(&belief, &prev.lfac_to_var[dv])?,
            );
        }
    }

    // Phase 2: factor -> variable from the fresh phase-1 messages.
    for i in 0..n {
        let cs = t.c_g_self[i];
        let mut gamma = cs * cs * next.var_to_self[i].variance;
        let mut eps = cs * next.var_to_self[i].mean;
        for (pos, &(j, _)) in net.neighbors(i).iter().enumerate() {
            let c = t.c_g_nbr[net.dir_offset(i) + pos];
            let m = &next.var_to_vfac[net.dir_index(j, i)];
            gamma += c * c * m.variance;
            eps += c * m.mean;
        }
        let self_term_k = cs * cs * next.var_to_self[i].variance;
        let self_term_m = cs * next.var_to_self[i].mean;
        next.self_to_var[i] = ctx.store1(
            4 * nd + i,
            prev.self_to_var[i],
            Gaussian1::new(
                (t.z_g[i] - eps + self_term_m) / cs,
                (t.s2_g[i] + gamma - self_term_k) / (cs * cs),
            )?,
        );
        for (pos, &(j, li)) in net.neighbors(i).iter().enumerate() {
            let d = net.dir_offset(i) + pos;
            let c = t.c_g_nbr[d];
            let m = &next.var_to_vfac[net.dir_index(j, i)];
            next.vfac_to_var[d] = ctx.store1(
                d,
                prev.vfac_to_var[d],
                Gaussian1::new(
                    (t.z_g[i] - (eps - c * m.mean)) / c,
                    (t.s2_g[i] + (gamma - c * c * m.variance)) / (c * c),
                )?,
            );
            // Link factor H_(ij): observes z_f - c_t θ_i - c_h θ_j.
            let (c_t, c_h) = link_coeffs(fg, li, i < j);
            let inc = &next.var_to_lfac[d];
            next.lfac_to_var[d] = ctx.store1(
                nd + d,
                prev.lfac_to_var[d],
                Gaussian1::new(
                    (t.z_f[li] - c_t * inc.mean) / c_h,
                    (t.s2_f[li] + c_t * c_t * inc.variance) / (c_h * c_h),
                )?,
            );
        }
    }
    Ok(next)
}

/// Link-factor belief b_H(ij)(θ_i, θ_j) per link: the two variable→factor
/// messages times the link factor itself, assembled in precision form.
pub(super) fn collect(fg: &FactorGraph, store: &FvStore) -> Result<Vec<Gaussian2>, GaussianError> {
    let net = fg.net();
    let t = fg.vertex_tables();
    let mut out = Vec::with_capacity(net.n_links());
    for (li, l) in net.links().iter().enumerate() {
        let m_lo = &store.var_to_lfac[net.dir_index(l.lo, l.hi)];
        let m_hi = &store.var_to_lfac[net.dir_index(l.hi, l.lo)];
        let (c_lo, c_hi) = (t.c_f_lo[li], t.c_f_hi[li]);
        let w = 1.0 / t.s2_f[li];
        let p = [
            [m_lo.precision() + w * c_lo * c_lo, w * c_lo * c_hi],
            [w * c_lo * c_hi, m_hi.precision() + w * c_hi * c_hi],
        ];
        let h = [
            m_lo.mean * m_lo.precision() + w * t.z_f[li] * c_lo,
            m_hi.mean * m_hi.precision() + w * t.z_f[li] * c_hi,
        ];
        out.push(Gaussian2::from_information(p, h)?);
    }
    Ok(out)
}
