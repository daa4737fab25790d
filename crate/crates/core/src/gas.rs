//! Gas steady state: the flow law, its linearization, the flow-to-pressure
//! guess propagation, and the modified Gauss-Newton outer loop with a BP
//! inner solver.
//!
//! Variables are squared pressures v = p². The flow law is
//! Q_ij = a_ij · sgn(v_i - v_j) · |v_i - v_j|^0.5; continuity demands
//! g_i = Σ_j Q_ij at every vertex with known injection; anchors pin v = v̄.
//! Each outer step linearizes the flow law around the current guess, solves
//! the resulting quadratic cost by Gaussian BP on F_c (or F_v), extracts a
//! new flow guess from the link beliefs, and re-anchors the linearization
//! point by propagating pressures from the anchors through the flow guess.
//! That flow-consistent re-anchoring is what makes the loop exact in a
//! single step on tree networks.

use std::sync::Arc;

use thiserror::Error;

use crate::bp::{self, BeliefSet, BpOptions, Status};
use crate::graph::{
    build_fc, build_ff_from_flow_tables, build_fv, FlowTables, GraphKind, LinearGaussianFactor,
    ProblemSpec, VertexFactors,
};
use crate::network::{Network, NetworkKind};
use crate::power::UNMEASURED_SIGMA2;

/// Clamp on |v_i - v_j| inside the derivative of the flow law; keeps the
/// linearized factors bounded at the square-root singularity.
pub const DERIVATIVE_CLAMP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GasError {
    #[error("no pressure anchor available")]
    NoAnchor,
    #[error("inner BP failed to converge at GN step {step}")]
    InnerDiverged {
        step: usize,
        status: Status,
        trace: Vec<GnTraceRow>,
    },
    #[error("flow-only initial guess did not converge")]
    InitialGuess(Status),
    #[error("the GN inner solve runs on Fv or Fc, not Ff")]
    UnsupportedGraph,
    #[error("link sets differ")]
    KeyMismatch,
    #[error("not a gas network")]
    NotGas,
}

/// First-order expansion of the flow law at (v_i*, v_j*).
#[derive(Debug, Clone, Copy)]
pub struct FlowLinearization {
    pub q0: f64,
    pub dq_dvi: f64,
    pub dq_dvj: f64,
}

/// Eq.-15 flow law: Q = a · sgn(v_i - v_j) · |v_i - v_j|^0.5.
pub fn gas_flow(a: f64, v_i: f64, v_j: f64) -> f64 {
    let d = v_i - v_j;
    a * d.signum() * d.abs().sqrt()
}

/// First-order expansion of the flow law; the derivative is clamped at
/// |v_i - v_j| = [`DERIVATIVE_CLAMP`] so the slope stays finite at the
/// singular point.
pub fn linearize_flow(a: f64, v_i_star: f64, v_j_star: f64) -> FlowLinearization {
    let slope = 0.5 * a / (v_i_star - v_j_star).abs().max(DERIVATIVE_CLAMP).sqrt();
    FlowLinearization {
        q0: gas_flow(a, v_i_star, v_j_star),
        dq_dvi: slope,
        dq_dvj: -slope,
    }
}

/// Anchors of a gas network: (vertex, known squared pressure).
pub fn gas_anchors(net: &Network) -> Vec<(usize, f64)> {
    net.vertices()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.vertex_value.map(|x| (i, x)))
        .collect()
}

/// Vertices with known injections: (vertex, injection).
pub fn gas_known_injections(net: &Network) -> Vec<(usize, f64)> {
    net.vertices()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.injection.map(|g| (i, g)))
        .collect()
}

/// Turns a flow guess Q* into a pressure guess v* by breadth-first traversal
/// from the anchors, inverting the flow law link by link:
/// v_j = v_i - sgn(Q*) (Q*/a)². Anchors are seeded first (ascending vertex
/// index); the first assignment of a vertex wins.
pub fn guess_v_from_q(
    net: &Network,
    q_star: &[f64],
    anchors: &[(usize, f64)],
) -> Result<Vec<f64>, GasError> {
    if anchors.is_empty() {
        return Err(GasError::NoAnchor);
    }
    let n = net.n_vertices();
    let mut v = vec![0.0; n];
    let mut done = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    let mut seeds: Vec<(usize, f64)> = anchors.to_vec();
    seeds.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    for &(i, vbar) in &seeds {
        if !done[i] {
            v[i] = vbar;
            done[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &(j, li) in net.neighbors(i) {
            if done[j] {
                continue;
            }
            let a = net.links()[li].coeff;
            let q = if i < j { q_star[li] } else { -q_star[li] };
            v[j] = v[i] - q.signum() * (q / a) * (q / a);
            done[j] = true;
            queue.push_back(j);
        }
    }
    debug_assert!(done.iter().all(|&d| d), "network is connected");
    Ok(v)
}

/// Assembles the linearized quadratic subproblem over {v_i} with the
/// coefficient tables of the gas Gauss-Newton step: known injections get
/// unit-variance factors over the linearized flows, anchors get (v̄, 1)
/// value factors, everything unknown gets the 10^8 variance convention, and
/// each link carries a weak (v_i - v_j) leaf.
pub fn build_gn_subproblem(
    net: &Arc<Network>,
    v_star: &[f64],
    anchors: &[(usize, f64)],
    known_injections: &[(usize, f64)],
) -> ProblemSpec {
    let n = net.n_vertices();
    let mut known_g = vec![None; n];
    for &(i, g) in known_injections {
        known_g[i] = Some(g);
    }
    let mut anchor_v = vec![None; n];
    for &(i, vbar) in anchors {
        anchor_v[i] = Some(vbar);
    }

    let mut vertex_factors = Vec::with_capacity(n);
    for i in 0..n {
        let mut coeffs = vec![(i, 0.0)];
        let injection = if let Some(g) = known_g[i] {
            let mut z = g;
            let mut c_self = 0.0;
            for &(j, li) in net.neighbors(i) {
                let lin = linearize_flow(net.links()[li].coeff, v_star[i], v_star[j]);
                z -= lin.q0 - lin.dq_dvi * v_star[i] - lin.dq_dvj * v_star[j];
                c_self += lin.dq_dvi;
                coeffs.push((j, lin.dq_dvj));
            }
            coeffs[0].1 = c_self;
            LinearGaussianFactor::new(z, 1.0, coeffs)
        } else {
            coeffs[0].1 = 1.0;
            for &(j, _) in net.neighbors(i) {
                coeffs.push((j, 1.0));
            }
            LinearGaussianFactor::new(0.0, UNMEASURED_SIGMA2, coeffs)
        };
        let value = match anchor_v[i] {
            Some(vbar) => LinearGaussianFactor::new(vbar, 1.0, vec![(i, 1.0)]),
            None => LinearGaussianFactor::new(0.0, UNMEASURED_SIGMA2, vec![(i, 1.0)]),
        };
        vertex_factors.push(VertexFactors { injection, value });
    }
    let link_factors = net
        .links()
        .iter()
        .map(|l| LinearGaussianFactor::new(0.0, UNMEASURED_SIGMA2, vec![(l.lo, 1.0), (l.hi, -1.0)]))
        .collect();
    ProblemSpec::new(Arc::clone(net), vertex_factors, link_factors)
        .expect("gas coefficient tables are structurally valid")
}

/// Initial flow guess from the flow-only approximation: BP on the pure
/// conservation problem (known injections at unit variance, weak flow
/// leaves); loop degrees of freedom stay at zero under the weak prior.
pub fn flow_only_initial_guess(net: &Arc<Network>) -> Result<Vec<f64>, GasError> {
    let n = net.n_vertices();
    let mut z_g = vec![0.0; n];
    let mut s2_g = vec![UNMEASURED_SIGMA2; n];
    for (i, g) in gas_known_injections(net) {
        z_g[i] = g;
        s2_g[i] = 1.0;
    }
    let tables = FlowTables {
        z_g,
        s2_g,
        z_f: vec![0.0; net.n_links()],
        s2_f: vec![UNMEASURED_SIGMA2; net.n_links()],
    };
    let fg = build_ff_from_flow_tables(Arc::clone(net), tables);
    let (beliefs, trace) = bp::run(&fg, &BpOptions::default());
    if !trace.status.is_converged() {
        return Err(GasError::InitialGuess(trace.status));
    }
    match beliefs {
        BeliefSet::Scalar(v) => Ok(v.into_iter().map(|g| g.mean).collect()),
        BeliefSet::Pair(_) => unreachable!("flow-only graph yields scalar beliefs"),
    }
}

/// Max direct residual of the steady-state equations at `v`: continuity at
/// every known-injection vertex and anchor deviation.
pub fn gas_residual(net: &Network, v: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    for (i, g) in gas_known_injections(net) {
        let mut acc = g;
        for &(j, li) in net.neighbors(i) {
            acc -= gas_flow(net.links()[li].coeff, v[i], v[j]);
        }
        r = r.max(acc.abs());
    }
    for (i, vbar) in gas_anchors(net) {
        r = r.max((v[i] - vbar).abs());
    }
    r
}

/// State of the modified Gauss-Newton loop: flow guess per canonical link,
/// squared-pressure guess per vertex, steps executed, final residual.
#[derive(Debug, Clone)]
pub struct GnState {
    pub q_star: Vec<f64>,
    pub v_star: Vec<f64>,
    pub step: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct GnOptions {
    pub max_gn_steps: usize,
    pub inner: BpOptions,
    /// Inner factor graph: `Fv` or `Fc` (`Ff` is rejected — the flow-only
    /// problem is underdetermined for the gas equations).
    pub graph_kind: GraphKind,
    /// GasLib-134 comparison mode: only the lexicographically first anchor
    /// (by vertex id) seeds the pressure traversal; all anchors still enter
    /// the subproblem factors.
    pub single_anchor: bool,
    /// Outer stop: both max |ΔQ*| and max |Δv*| below this.
    pub outer_tol: f64,
}

impl GnOptions {
    pub fn new(graph_kind: GraphKind) -> GnOptions {
        GnOptions {
            max_gn_steps: 20,
            inner: BpOptions::default(),
            graph_kind,
            single_anchor: false,
            outer_tol: 1e-6,
        }
    }
}

/// One row of the GN trace: `gn_step, bp_iters, delta, residual` (delta is
/// the Eq.-19 error against a caller-provided flow reference, when given).
#[derive(Debug, Clone, Copy)]
pub struct GnTraceRow {
    pub gn_step: usize,
    pub bp_iters: usize,
    pub delta: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct GnRun {
    pub state: GnState,
    pub trace: Vec<GnTraceRow>,
    pub converged: bool,
}

/// The modified Gauss-Newton loop: flow-only initial guess, then per step
/// guess_v_from_q → linearize → BP on the quadratic subproblem → new flow
/// guess from the link beliefs, until both guesses move less than
/// `outer_tol` or the step budget runs out. An inner run that does not
/// converge raises [`GasError::InnerDiverged`] with the partial trace.
pub fn run_modified_gn(
    net: &Arc<Network>,
    opts: &GnOptions,
    reference_flows: Option<&[f64]>,
) -> Result<GnRun, GasError> {
    if net.kind() != NetworkKind::Gas {
        return Err(GasError::NotGas);
    }
    if opts.graph_kind == GraphKind::Ff {
        return Err(GasError::UnsupportedGraph);
    }
    let all_anchors = gas_anchors(net);
    if all_anchors.is_empty() {
        return Err(GasError::NoAnchor);
    }
    let seed_anchors: Vec<(usize, f64)> = if opts.single_anchor {
        let first = all_anchors
            .iter()
            .min_by(|a, b| net.vertex_id(a.0).cmp(net.vertex_id(b.0)))
            .copied()
            .expect("non-empty");
        vec![first]
    } else {
        all_anchors.clone()
    };
    let known = gas_known_injections(net);

    let mut q = flow_only_initial_guess(net)?;
    let mut v = guess_v_from_q(net, &q, &seed_anchors)?;
    let mut trace = Vec::new();

    for step in 1..=opts.max_gn_steps {
        let lins: Vec<FlowLinearization> = net
            .links()
            .iter()
            .map(|l| linearize_flow(l.coeff, v[l.lo], v[l.hi]))
            .collect();
        let spec = build_gn_subproblem(net, &v, &all_anchors, &known);
        let fg = match opts.graph_kind {
            GraphKind::Fc => build_fc(&spec),
            GraphKind::Fv => build_fv(&spec),
            GraphKind::Ff => unreachable!(),
        };
        let (beliefs, inner_trace) = bp::run(&fg, &opts.inner);
        if !inner_trace.status.is_converged() {
            return Err(GasError::InnerDiverged {
                step,
                status: inner_trace.status,
                trace,
            });
        }
        let pair = match &beliefs {
            BeliefSet::Pair(p) => p,
            BeliefSet::Scalar(_) => unreachable!("Fv/Fc collect pair beliefs"),
        };
        // New flow guess: the linearized flow evaluated on the belief means.
        let new_q: Vec<f64> = net
            .links()
            .iter()
            .zip(pair)
            .zip(&lins)
            .map(|((l, b), lin)| {
                lin.q0 + lin.dq_dvi * (b.mean[0] - v[l.lo]) + lin.dq_dvj * (b.mean[1] - v[l.hi])
            })
            .collect();
        let new_v = guess_v_from_q(net, &new_q, &seed_anchors)?;
        let dq = q
            .iter()
            .zip(&new_q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        let dv = v
            .iter()
            .zip(&new_v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        q = new_q;
        v = new_v;
        let residual = gas_residual(net, &v);
        trace.push(GnTraceRow {
            gn_step: step,
            bp_iters: inner_trace.sweeps(),
            delta: reference_flows.map(|r| mean_sq_diff(&q, r)),
            residual,
        });
        if dq < opts.outer_tol && dv < opts.outer_tol {
            return Ok(GnRun {
                state: GnState { q_star: q, v_star: v, step, residual },
                trace,
                converged: true,
            });
        }
    }
    let residual = gas_residual(net, &v);
    Ok(GnRun {
        state: GnState {
            q_star: q,
            v_star: v,
            step: opts.max_gn_steps,
            residual,
        },
        trace,
        converged: false,
    })
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Eq.-19 average squared flow error against a reference.
pub fn delta_gas(q_est: &[f64], q_oracle: &[f64]) -> Result<f64, GasError> {
    if q_est.len() != q_oracle.len() || q_est.is_empty() {
        return Err(GasError::KeyMismatch);
    }
    Ok(mean_sq_diff(q_est, q_oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LinkRecord, VertexRecord};

    #[test]
    fn flow_law_spot_values() {
        assert!((gas_flow(50.0, 2500.0, 2499.0) - 50.0).abs() < 1e-12);
        assert_eq!(gas_flow(50.0, 2500.0, 2500.0), 0.0);
        assert!((gas_flow(500.0, 2400.0, 2500.0) + 5000.0).abs() < 1e-9);
        // Odd under endpoint swap.
        assert_eq!(gas_flow(7.0, 3.0, 10.0), -gas_flow(7.0, 10.0, 3.0));
    }

    #[test]
    fn linearization_spot_values() {
        let lin = linearize_flow(50.0, 2500.0, 2499.0);
        assert!((lin.dq_dvi - 25.0).abs() < 1e-12);
        assert!((lin.dq_dvj + 25.0).abs() < 1e-12);
        assert!((lin.q0 - 50.0).abs() < 1e-12);
        // Degenerate point: slope clamped to a / (2 sqrt(eps)), finite.
        let lin = linearize_flow(50.0, 2500.0, 2500.0);
        assert!(lin.dq_dvi.is_finite());
        assert!((lin.dq_dvi - 25.0 / DERIVATIVE_CLAMP.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn linearization_matches_central_differences() {
        let (a, vi, vj) = (50.0, 2502.0, 2498.0);
        let lin = linearize_flow(a, vi, vj);
        let h = 1e-4;
        let fd_i = (gas_flow(a, vi + h, vj) - gas_flow(a, vi - h, vj)) / (2.0 * h);
        let fd_j = (gas_flow(a, vi, vj + h) - gas_flow(a, vi, vj - h)) / (2.0 * h);
        assert!((lin.dq_dvi - fd_i).abs() < 1e-6 * fd_i.abs());
        assert!((lin.dq_dvj - fd_j).abs() < 1e-6 * fd_j.abs());
    }

    fn pipe_pair() -> Arc<Network> {
        Arc::new(
            Network::from_records(
                NetworkKind::Gas,
                vec![
                    VertexRecord { id: "s".into(), injection: None, vertex_value: Some(2500.0) },
                    VertexRecord { id: "m".into(), injection: Some(0.0), vertex_value: None },
                    VertexRecord { id: "t".into(), injection: Some(-10.0), vertex_value: None },
                ],
                vec![
                    LinkRecord { from: "s".into(), to: "m".into(), coeff: 50.0 },
                    LinkRecord { from: "m".into(), to: "t".into(), coeff: 50.0 },
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn guess_propagation_inverts_flow_law() {
        let net = pipe_pair();
        let anchors = gas_anchors(&net);
        let v = guess_v_from_q(&net, &[50.0, 50.0], &anchors).unwrap();
        assert_eq!(v[0], 2500.0);
        assert_eq!(v[1], 2499.0);
        assert_eq!(v[2], 2498.0);
        // Zero flows: everything at the anchor value.
        let v = guess_v_from_q(&net, &[0.0, 0.0], &anchors).unwrap();
        assert!(v.iter().all(|&x| x == 2500.0));
    }

    #[test]
    fn flow_only_guess_on_path() {
        // Conservation on a path: injections (+10 via anchor, 0, -10) force
        // both link flows to 10.
        let net = pipe_pair();
        let q = flow_only_initial_guess(&net).unwrap();
        assert!((q[0] - 10.0).abs() < 1e-5, "q = {q:?}");
        assert!((q[1] - 10.0).abs() < 1e-5, "q = {q:?}");
    }

    #[test]
    fn zero_injections_give_zero_flows() {
        let net = Arc::new(
            Network::from_records(
                NetworkKind::Gas,
                vec![
                    VertexRecord { id: "s".into(), injection: None, vertex_value: Some(2500.0) },
                    VertexRecord { id: "t".into(), injection: Some(0.0), vertex_value: None },
                ],
                vec![LinkRecord { from: "s".into(), to: "t".into(), coeff: 50.0 }],
            )
            .unwrap(),
        );
        let q = flow_only_initial_guess(&net).unwrap();
        assert!(q[0].abs() < 1e-9);
    }

    #[test]
    fn gn_subproblem_follows_coefficient_tables() {
        let net = pipe_pair();
        let v_star = vec![2500.0, 2499.0, 2498.0];
        let spec = build_gn_subproblem(&net, &v_star, &gas_anchors(&net), &gas_known_injections(&net));
        // Anchor vertex: value factor (v̄, 1).
        assert_eq!(spec.vertex_factors[0].value.z, 2500.0);
        assert_eq!(spec.vertex_factors[0].value.sigma2, 1.0);
        // Unknown injection at the anchor: variance 1e8.
        assert_eq!(spec.vertex_factors[0].injection.sigma2, UNMEASURED_SIGMA2);
        // Known-injection vertex: self coefficient is the slope sum.
        let inj = &spec.vertex_factors[1].injection;
        assert_eq!(inj.sigma2, 1.0);
        let lin = linearize_flow(50.0, 2499.0, 2500.0);
        let expect = lin.dq_dvi + linearize_flow(50.0, 2499.0, 2498.0).dq_dvi;
        let self_c = inj.coeffs.iter().find(|&&(v, _)| v == 1).unwrap().1;
        assert!((self_c - expect).abs() < 1e-12);
    }
}
