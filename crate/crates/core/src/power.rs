//! DC state estimation: measurement synthesis, posterior assembly, and the
//! Δ_μ / Δ_σ accuracy metrics.
//!
//! Measurements are scalar Gaussian observations of flows f_ij = B_ij(θ_i -
//! θ_j), injections g_i = Σ_j f_ij, and (with PMUs) the angles themselves.
//! An absent measurement is encoded as z = 0 with variance 10^8, which also
//! handles the gauge freedom of the no-PMU scenario: the same uninformative
//! pseudo-measurement enters the BP problem and the dense oracle, so the two
//! stay comparable.

use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::bp::{flow_belief_from_pair, BeliefSet};
use crate::gaussian::{Gaussian1, GaussianError};
use crate::graph::{LinearGaussianFactor, ProblemSpec, VertexFactors};
use crate::network::Network;
use crate::prng;

/// Variance encoding "no knowledge" of a quantity (much lower loses accuracy,
/// much higher risks over/underflow).
pub const UNMEASURED_SIGMA2: f64 = 1e8;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("vertex {0:?} has no truth angle")]
    MissingTruth(String),
    #[error("link sets differ")]
    KeyMismatch,
    #[error("measurement file: {0}")]
    MeasurementFile(String),
}

/// Per-vertex and per-link scalar observations, (z, sigma2) pairs indexed in
/// network order; absent measurements are (0, 10^8).
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub injections: Vec<(f64, f64)>,
    pub flows: Vec<(f64, f64)>,
    pub angles: Vec<(f64, f64)>,
}

impl MeasurementSet {
    /// All-absent template for a network.
    pub fn unmeasured(net: &Network) -> MeasurementSet {
        MeasurementSet {
            injections: vec![(0.0, UNMEASURED_SIGMA2); net.n_vertices()],
            flows: vec![(0.0, UNMEASURED_SIGMA2); net.n_links()],
            angles: vec![(0.0, UNMEASURED_SIGMA2); net.n_vertices()],
        }
    }

    /// Parses the measurement file format: JSON arrays `injections`, `flows`,
    /// `angles` of `{target, z, sigma2}` records. Injection and angle targets
    /// are vertex ids; flow targets are `"from:to"` with z oriented from→to.
    /// Unlisted quantities stay unmeasured.
    pub fn from_json(net: &Network, text: &str) -> Result<MeasurementSet, PowerError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Rec {
            target: String,
            z: f64,
            sigma2: f64,
        }
        #[derive(Deserialize, Default)]
        #[serde(deny_unknown_fields, default)]
        struct File {
            injections: Vec<Rec>,
            flows: Vec<Rec>,
            angles: Vec<Rec>,
        }
        let file: File =
            serde_json::from_str(text).map_err(|e| PowerError::MeasurementFile(e.to_string()))?;
        let mut m = MeasurementSet::unmeasured(net);
        let vertex = |id: &str| {
            net.vertex_index(id)
                .ok_or_else(|| PowerError::MeasurementFile(format!("unknown vertex {id:?}")))
        };
        let check = |r: &Rec| {
            if r.sigma2.is_finite() && r.sigma2 > 0.0 && r.z.is_finite() {
                Ok(())
            } else {
                Err(PowerError::MeasurementFile(format!(
                    "bad observation for {:?}",
                    r.target
                )))
            }
        };
        for r in &file.injections {
            check(r)?;
            m.injections[vertex(&r.target)?] = (r.z, r.sigma2);
        }
        for r in &file.angles {
            check(r)?;
            m.angles[vertex(&r.target)?] = (r.z, r.sigma2);
        }
        for r in &file.flows {
            check(r)?;
            let (from, to) = r.target.split_once(':').ok_or_else(|| {
                PowerError::MeasurementFile(format!("flow target {:?} is not \"from:to\"", r.target))
            })?;
            let (a, b) = (vertex(from)?, vertex(to)?);
            let li = net
                .neighbors(a)
                .iter()
                .find_map(|&(j, li)| (j == b).then_some(li))
                .ok_or_else(|| {
                    PowerError::MeasurementFile(format!("no link {:?}", r.target))
                })?;
            // Canonical orientation is lo -> hi; flip the sign if needed.
            let z = if a < b { r.z } else { -r.z };
            m.flows[li] = (z, r.sigma2);
        }
        Ok(m)
    }
}

/// Measurement-synthesis scenario of the benchmark experiments.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub with_pmu: bool,
    pub flow_injection_sigma2: f64,
    pub angle_sigma2: f64,
    pub seed: u64,
}

impl Scenario {
    /// Paper defaults: flow/injection variance 1e-3, angle variance 1e-6.
    pub fn new(with_pmu: bool, seed: u64) -> Scenario {
        Scenario {
            with_pmu,
            flow_injection_sigma2: 1e-3,
            angle_sigma2: 1e-6,
            seed,
        }
    }
}

/// Ground-truth angles from the fixture's `vertex_value` column.
pub fn truth_angles(net: &Network) -> Result<Vec<f64>, PowerError> {
    net.vertices()
        .iter()
        .map(|v| {
            v.vertex_value
                .ok_or_else(|| PowerError::MissingTruth(v.id.clone()))
        })
        .collect()
}

/// Draws a full measurement set around the DC quantities implied by the truth
/// angles, using the seeded counter PRNG (streams: 0 flows, 1 injections,
/// 2 angles).
pub fn synthesize_measurements(
    net: &Network,
    truth_angles: &[f64],
    sc: &Scenario,
) -> Result<MeasurementSet, PowerError> {
    if truth_angles.len() != net.n_vertices() {
        return Err(PowerError::MissingTruth("<length mismatch>".into()));
    }
    let mut m = MeasurementSet::unmeasured(net);
    let s_fg = sc.flow_injection_sigma2.sqrt();
    let flows: Vec<f64> = net
        .links()
        .iter()
        .map(|l| l.coeff * (truth_angles[l.lo] - truth_angles[l.hi]))
        .collect();
    for (li, &f) in flows.iter().enumerate() {
        m.flows[li] = (
            f + s_fg * prng::standard_normal(sc.seed, 0, li as u64),
            sc.flow_injection_sigma2,
        );
    }
    for i in 0..net.n_vertices() {
        let g: f64 = net
            .neighbors(i)
            .iter()
            .map(|&(j, li)| if i < j { flows[li] } else { -flows[li] })
            .sum();
        m.injections[i] = (
            g + s_fg * prng::standard_normal(sc.seed, 1, i as u64),
            sc.flow_injection_sigma2,
        );
        if sc.with_pmu {
            m.angles[i] = (
                truth_angles[i] + sc.angle_sigma2.sqrt() * prng::standard_normal(sc.seed, 2, i as u64),
                sc.angle_sigma2,
            );
        }
    }
    Ok(m)
}

/// Assembles the state-estimation posterior over angles: per vertex the
/// injection factor with coefficients c_gi|i = Σ_j B_ij, c_gi|j = -B_ij plus
/// the angle factor, per link the flow factor with coefficients ±B_ij. The
/// prior over angles is uniform.
pub fn build_se_problem(net: &Arc<Network>, m: &MeasurementSet) -> ProblemSpec {
    let mut vertex_factors = Vec::with_capacity(net.n_vertices());
    for i in 0..net.n_vertices() {
        let mut coeffs = vec![(i, 0.0)];
        let mut total = 0.0;
        for &(j, li) in net.neighbors(i) {
            let b = net.links()[li].coeff;
            coeffs.push((j, -b));
            total += b;
        }
        coeffs[0].1 = total;
        vertex_factors.push(VertexFactors {
            injection: LinearGaussianFactor::new(m.injections[i].0, m.injections[i].1, coeffs),
            value: LinearGaussianFactor::new(m.angles[i].0, m.angles[i].1, vec![(i, 1.0)]),
        });
    }
    let link_factors = net
        .links()
        .iter()
        .enumerate()
        .map(|(li, l)| {
            LinearGaussianFactor::new(
                m.flows[li].0,
                m.flows[li].1,
                vec![(l.lo, l.coeff), (l.hi, -l.coeff)],
            )
        })
        .collect();
    ProblemSpec::new(Arc::clone(net), vertex_factors, link_factors)
        .expect("DC coefficient tables are structurally valid")
}

/// Per-link flow beliefs from a belief set: scalar beliefs pass through, pair
/// beliefs go through the correlated marginal f = B(θ_i - θ_j).
pub fn flow_beliefs(net: &Network, beliefs: &BeliefSet) -> Result<Vec<Gaussian1>, GaussianError> {
    match beliefs {
        BeliefSet::Scalar(v) => Ok(v.clone()),
        BeliefSet::Pair(v) => v
            .iter()
            .zip(net.links())
            .map(|(b, l)| flow_belief_from_pair(b, l.coeff))
            .collect(),
    }
}

/// Δ_μ: average squared error of the belief means against the reference.
pub fn delta_mu(est: &[Gaussian1], oracle: &[Gaussian1]) -> Result<f64, PowerError> {
    if est.len() != oracle.len() || est.is_empty() {
        return Err(PowerError::KeyMismatch);
    }
    Ok(est
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a.mean - b.mean) * (a.mean - b.mean))
        .sum::<f64>()
        / est.len() as f64)
}

/// Δ_σ: average squared error of the belief standard deviations.
pub fn delta_sigma(est: &[Gaussian1], oracle: &[Gaussian1]) -> Result<f64, PowerError> {
    if est.len() != oracle.len() || est.is_empty() {
        return Err(PowerError::KeyMismatch);
    }
    Ok(est
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a.sd() - b.sd()) * (a.sd() - b.sd()))
        .sum::<f64>()
        / est.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LinkRecord, NetworkKind, VertexRecord};

    fn two_bus() -> Arc<Network> {
        Arc::new(
            Network::from_records(
                NetworkKind::PowerDc,
                vec![
                    VertexRecord { id: "b1".into(), injection: None, vertex_value: Some(0.2) },
                    VertexRecord { id: "b2".into(), injection: None, vertex_value: Some(0.1) },
                ],
                vec![LinkRecord { from: "b1".into(), to: "b2".into(), coeff: 1.0 }],
            )
            .unwrap(),
        )
    }

    #[test]
    fn se_coefficients_follow_dc_tables() {
        let net = two_bus();
        let m = MeasurementSet::unmeasured(&net);
        let spec = build_se_problem(&net, &m);
        let inj = &spec.vertex_factors[0].injection;
        assert_eq!(inj.coeffs, vec![(0, 1.0), (1, -1.0)]);
        // Unmeasured angle stays at the high-variance convention.
        assert_eq!(spec.vertex_factors[1].value.sigma2, UNMEASURED_SIGMA2);
    }

    #[test]
    fn noiseless_limit_reproduces_dc_quantities() {
        let net = two_bus();
        let truth = truth_angles(&net).unwrap();
        let mut sc = Scenario::new(true, 7);
        sc.flow_injection_sigma2 = 1e-30;
        sc.angle_sigma2 = 1e-30;
        let m = synthesize_measurements(&net, &truth, &sc).unwrap();
        assert!((m.flows[0].0 - 0.1).abs() < 1e-9);
        assert!((m.injections[0].0 - 0.1).abs() < 1e-9);
        assert!((m.injections[1].0 + 0.1).abs() < 1e-9);
        assert!((m.angles[0].0 - 0.2).abs() < 1e-9);
    }

    #[test]
    fn synthesis_is_seed_deterministic() {
        let net = two_bus();
        let truth = truth_angles(&net).unwrap();
        let sc = Scenario::new(true, 42);
        let a = synthesize_measurements(&net, &truth, &sc).unwrap();
        let b = synthesize_measurements(&net, &truth, &sc).unwrap();
        assert_eq!(a.flows[0], b.flows[0]);
        assert_eq!(a.injections, b.injections);
        assert_eq!(a.angles, b.angles);
    }

    #[test]
    fn synthesis_noise_has_requested_variance() {
        let net = two_bus();
        let truth = truth_angles(&net).unwrap();
        let n = 10_000;
        let mut acc = 0.0;
        for seed in 0..n {
            let sc = Scenario::new(false, seed);
            let m = synthesize_measurements(&net, &truth, &sc).unwrap();
            let err = m.flows[0].0 - 0.1;
            acc += err * err;
        }
        let var = acc / n as f64;
        assert!(
            (var - 1e-3).abs() < 0.05 * 1e-3,
            "empirical variance {var} not within 5% of 1e-3"
        );
    }

    #[test]
    fn delta_metrics_spot_values() {
        let a = vec![Gaussian1 { mean: 1.0, variance: 1.0 }; 411];
        let mut b = a.clone();
        for g in &mut b {
            g.mean += 0.1;
        }
        assert_eq!(delta_mu(&a, &a).unwrap(), 0.0);
        assert!((delta_mu(&b, &a).unwrap() - 0.01).abs() < 1e-12);
        let mut c = a.clone();
        for g in &mut c {
            // sd off by a constant 0.01
            let sd = g.variance.sqrt() + 0.01;
            g.variance = sd * sd;
        }
        assert!((delta_sigma(&c, &a).unwrap() - 1e-4).abs() < 1e-12);
        assert!(delta_mu(&a[..2], &a).is_err());
    }

    #[test]
    fn measurement_file_round_trip() {
        let net = two_bus();
        let text = r#"{
            "injections": [{"target": "b1", "z": 0.5, "sigma2": 0.001}],
            "flows": [{"target": "b2:b1", "z": -0.1, "sigma2": 0.001}],
            "angles": []
        }"#;
        let m = MeasurementSet::from_json(&net, text).unwrap();
        assert_eq!(m.injections[0], (0.5, 0.001));
        // Reversed target orientation flips the sign onto canonical lo->hi.
        assert_eq!(m.flows[0], (0.1, 0.001));
        assert_eq!(m.angles[0], (0.0, UNMEASURED_SIGMA2));
    }
}
