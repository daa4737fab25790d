//! Dense exact reference solvers.
//!
//! For linear-Gaussian problems the posterior over the n vertex variables has
//! information matrix J = Σ_a c_a c_aᵀ / σ²_a and information vector
//! h = Σ_a z_a c_a / σ²_a; the mean solves J μ = h and the covariance is J⁻¹.
//! Both are computed densely (the largest benchmark has 300 vertices):
//! Cholesky first, full-pivot LU as the fallback, `SingularSystem` if both
//! fail. Per-link flow marginals come from the joint pair marginal including
//! the correlation term; they are meaningful for the linear (power) flow law.
//!
//! For the gas equations, [`solve_gas_exact`] minimizes the squared residual
//! of the flow law and continuity equations by damped Gauss-Newton with a
//! backtracking line search, warm-started from the linearized (laminar)
//! pressure solve, with a bounded number of deterministic perturbation
//! restarts. This path shares no inference code with the BP engines.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::bp::flow_belief_from_pair;
use crate::gaussian::{Gaussian1, Gaussian2};
use crate::graph::{FactorGraph, GraphKind, ProblemSpec};
use crate::network::{Network, NetworkKind};
use crate::prng;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("information matrix is singular")]
    SingularSystem,
    #[error("gas reference solver did not converge")]
    NoConvergence,
}

/// Exact posterior of a linear-Gaussian problem: mean vector, full
/// covariance, and per-link flow marginals (mean and standard deviation via
/// the flow variance).
#[derive(Debug, Clone)]
pub struct DenseGaussianSolution {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub link_flows: Vec<Gaussian1>,
}

impl DenseGaussianSolution {
    /// Joint marginal of the variable pair (i, j).
    pub fn pair_marginal(&self, i: usize, j: usize) -> Gaussian2 {
        Gaussian2 {
            mean: [self.mean[i], self.mean[j]],
            cov: [
                [self.cov[(i, i)], self.cov[(i, j)]],
                [self.cov[(j, i)], self.cov[(j, j)]],
            ],
        }
    }
}

fn solve_information(
    n: usize,
    rows: &[(Vec<(usize, f64)>, f64, f64)],
) -> Result<(Vec<f64>, DMatrix<f64>), OracleError> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    let mut h = DVector::<f64>::zeros(n);
    for (coeffs, z, s2) in rows {
        let w = 1.0 / s2;
        for &(a, ca) in coeffs {
            h[a] += w * z * ca;
            for &(b, cb) in coeffs {
                j[(a, b)] += w * ca * cb;
            }
        }
    }
    if let Some(chol) = j.clone().cholesky() {
        let mean = chol.solve(&h);
        let cov = chol.inverse();
        return Ok((mean.iter().copied().collect(), cov));
    }
    let lu = j.full_piv_lu();
    match (lu.solve(&h), lu.try_inverse()) {
        (Some(mean), Some(cov)) => Ok((mean.iter().copied().collect(), cov)),
        _ => Err(OracleError::SingularSystem),
    }
}

/// Exact marginals of a vertex-variable problem: least-squares mean,
/// covariance by inversion, link flow marginals from the pair joints.
pub fn exact_marginals(spec: &ProblemSpec) -> Result<DenseGaussianSolution, OracleError> {
    let net = &spec.net;
    let mut rows = Vec::with_capacity(2 * net.n_vertices() + net.n_links());
    for vf in &spec.vertex_factors {
        rows.push((vf.injection.coeffs.clone(), vf.injection.z, vf.injection.sigma2));
        rows.push((vf.value.coeffs.clone(), vf.value.z, vf.value.sigma2));
    }
    for lf in &spec.link_factors {
        rows.push((lf.coeffs.clone(), lf.z, lf.sigma2));
    }
    let (mean, cov) = solve_information(net.n_vertices(), &rows)?;
    let solution = DenseGaussianSolution { mean, cov, link_flows: Vec::new() };
    let link_flows = net
        .links()
        .iter()
        .map(|l| {
            flow_belief_from_pair(&solution.pair_marginal(l.lo, l.hi), l.coeff)
                .map_err(|_| OracleError::SingularSystem)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DenseGaussianSolution { link_flows, ..solution })
}

/// Exact per-link flow marginals of a flow-only problem (variables are the
/// canonical link flows; conservation rows per vertex, leaf rows per link).
pub fn exact_flow_marginals(fg: &FactorGraph) -> Result<Vec<Gaussian1>, OracleError> {
    assert_eq!(fg.kind(), GraphKind::Ff, "flow marginals need a flow-only graph");
    let net = fg.net();
    let t = fg.flow_tables();
    let m = net.n_links();
    let mut rows = Vec::with_capacity(net.n_vertices() + m);
    for i in 0..net.n_vertices() {
        let coeffs = net
            .neighbors(i)
            .iter()
            .map(|&(j, li)| (li, if i < j { 1.0 } else { -1.0 }))
            .collect();
        rows.push((coeffs, t.z_g[i], t.s2_g[i]));
    }
    for li in 0..m {
        rows.push((vec![(li, 1.0)], t.z_f[li], t.s2_f[li]));
    }
    let (mean, cov) = solve_information(m, &rows)?;
    Ok((0..m)
        .map(|li| Gaussian1 { mean: mean[li], variance: cov[(li, li)] })
        .collect())
}

/// Exact gas steady state: per-link flows (canonical orientation) and
/// per-vertex squared pressures satisfying the flow law and continuity.
pub fn solve_gas_exact(net: &Network) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    assert_eq!(net.kind(), NetworkKind::Gas, "gas oracle needs a gas network");
    let n = net.n_vertices();
    let anchors: Vec<(usize, f64)> = net
        .vertices()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.vertex_value.map(|x| (i, x)))
        .collect();
    let known: Vec<(usize, f64)> = net
        .vertices()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.injection.map(|g| (i, g)))
        .collect();

    // Warm start: the linearized (laminar) flow law Q = a (v_i - v_j) gives a
    // well-posed least-squares system for the pressure profile.
    let mut rows = Vec::with_capacity(known.len() + anchors.len());
    for &(i, g) in &known {
        let mut coeffs = vec![(i, 0.0)];
        let mut diag = 0.0;
        for &(j, li) in net.neighbors(i) {
            let a = net.links()[li].coeff;
            coeffs.push((j, -a));
            diag += a;
        }
        coeffs[0].1 = diag;
        rows.push((coeffs, g, 1.0));
    }
    for &(i, vbar) in &anchors {
        rows.push((vec![(i, 1.0)], vbar, 1.0));
    }
    let (warm, _) = solve_information(n, &rows)?;

    let scale = known
        .iter()
        .map(|&(_, g)| g.abs())
        .fold(1.0_f64, f64::max);
    let tol = 1e-12 * scale;

    for restart in 0..6u64 {
        let mut v: Vec<f64> = warm
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if restart == 0 {
                    x
                } else {
                    x + prng::standard_normal(restart, 90, i as u64)
                }
            })
            .collect();
        if newton_refine(net, &anchors, &known, &mut v, tol) {
            let q = net
                .links()
                .iter()
                .map(|l| crate::gas::gas_flow(l.coeff, v[l.lo], v[l.hi]))
                .collect();
            return Ok((q, v));
        }
    }
    Err(OracleError::NoConvergence)
}

fn residuals(
    net: &Network,
    anchors: &[(usize, f64)],
    known: &[(usize, f64)],
    v: &[f64],
) -> Vec<f64> {
    let mut r = Vec::with_capacity(known.len() + anchors.len());
    for &(i, g) in known {
        let mut acc = g;
        for &(j, li) in net.neighbors(i) {
            acc -= crate::gas::gas_flow(net.links()[li].coeff, v[i], v[j]);
        }
        r.push(acc);
    }
    for &(i, vbar) in anchors {
        r.push(vbar - v[i]);
    }
    r
}

fn newton_refine(
    net: &Network,
    anchors: &[(usize, f64)],
    known: &[(usize, f64)],
    v: &mut Vec<f64>,
    tol: f64,
) -> bool {
    let n = net.n_vertices();
    let n_rows = known.len() + anchors.len();
    for _ in 0..80 {
        let r = residuals(net, anchors, known, v);
        let max_r = r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if max_r < tol {
            return true;
        }
        let mut jac = DMatrix::<f64>::zeros(n_rows, n);
        for (row, &(i, _)) in known.iter().enumerate() {
            for &(j, li) in net.neighbors(i) {
                let a = net.links()[li].coeff;
                let slope = 0.5 * a / (v[i] - v[j]).abs().max(1e-12).sqrt();
                jac[(row, i)] -= slope;
                jac[(row, j)] += slope;
            }
        }
        for (k, &(i, _)) in anchors.iter().enumerate() {
            jac[(known.len() + k, i)] = -1.0;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let rv = DVector::from_vec(r.clone());
        let rhs = &jt * &rv;
        let Some(chol) = jtj.cholesky() else { return false };
        let step = chol.solve(&rhs);
        // Backtracking: residual norm must decrease.
        let cost0: f64 = r.iter().map(|x| x * x).sum();
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = v
                .iter()
                .enumerate()
                .map(|(k, &x)| x - alpha * step[k])
                .collect();
            let cost: f64 = residuals(net, anchors, known, &trial)
                .iter()
                .map(|x| x * x)
                .sum();
            if cost < cost0 {
                *v = trial;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return false;
        }
    }
    let r = residuals(net, anchors, known, v);
    r.iter().fold(0.0_f64, |m, x| m.max(x.abs())) < tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LinkRecord, VertexRecord};
    use std::sync::Arc;

    #[test]
    fn single_vertex_single_measurement() {
        // One variable, one observation row: mean z, variance sigma2.
        let (mean, cov) = solve_information(1, &[(vec![(0, 1.0)], 2.5, 0.04)]).unwrap();
        assert!((mean[0] - 2.5).abs() < 1e-12);
        assert!((cov[(0, 0)] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn means_invariant_under_common_variance_rescale() {
        let rows = vec![
            (vec![(0, 1.0), (1, -1.0)], 0.7, 0.3),
            (vec![(0, 1.0)], 1.0, 0.5),
            (vec![(1, 2.0)], -0.4, 0.8),
        ];
        let scaled: Vec<_> = rows
            .iter()
            .map(|(c, z, s2)| (c.clone(), *z, s2 * 37.5))
            .collect();
        let (m1, _) = solve_information(2, &rows).unwrap();
        let (m2, _) = solve_information(2, &scaled).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    fn single_pipe() -> Network {
        Network::from_records(
            NetworkKind::Gas,
            vec![
                VertexRecord { id: "s".into(), injection: None, vertex_value: Some(2500.0) },
                VertexRecord { id: "t".into(), injection: Some(-50.0), vertex_value: None },
            ],
            vec![LinkRecord { from: "s".into(), to: "t".into(), coeff: 50.0 }],
        )
        .unwrap()
    }

    #[test]
    fn gas_single_link_closed_form() {
        let (q, v) = solve_gas_exact(&single_pipe()).unwrap();
        // Anchor 2500, sink draws 50 with a = 50: neighbor at 2499, Q = 50.
        assert!((v[0] - 2500.0).abs() < 1e-9);
        assert!((v[1] - 2499.0).abs() < 1e-9);
        assert!((q[0] - 50.0).abs() < 1e-9);
    }
}
