//! Experiment drivers shared by the CLI and the acceptance suite: seeded
//! state-estimation runs with per-iteration accuracy traces against the dense
//! oracle, gas Gauss-Newton comparisons, and a per-iteration timing probe.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::bp::{self, BpOptions, Status};
use crate::gas::{self, GasError, GnOptions, GnTraceRow};
use crate::gaussian::Gaussian1;
use crate::graph::{build_fc, build_ff, build_fv, FactorGraph, GraphError, GraphKind, ProblemSpec};
use crate::network::Network;
use crate::oracle::{self, OracleError};
use crate::power::{self, PowerError, Scenario};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Gas(#[from] GasError),
}

/// Per-iteration record of a state-estimation run. The accuracy columns are
/// NaN on iterations where the flow marginal was not extractable (diverging
/// runs).
#[derive(Debug, Clone, Copy)]
pub struct SeRow {
    pub iter: usize,
    pub belief_delta: f64,
    pub delta_mu: f64,
    pub delta_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SeRun {
    pub kind: GraphKind,
    pub seed: u64,
    pub status: Status,
    pub rows: Vec<SeRow>,
    /// Sweeps actually executed.
    pub sweeps: usize,
    /// Wall time per executed sweep (includes belief collection and the
    /// accuracy tracking; use [`time_per_iteration`] for engine-only cost).
    pub secs_per_iter: f64,
    pub final_delta_mu: f64,
    pub final_delta_sigma: f64,
}

pub fn build_graph(spec: &ProblemSpec, kind: GraphKind) -> Result<FactorGraph, GraphError> {
    match kind {
        GraphKind::Fv => Ok(build_fv(spec)),
        GraphKind::Fc => Ok(build_fc(spec)),
        GraphKind::Ff => build_ff(spec),
    }
}

/// One seeded state-estimation run: synthesize measurements, solve the dense
/// reference, run BP on the requested graph, and track Δ_μ / Δ_σ of the flow
/// beliefs against the reference at every iteration.
pub fn run_se(
    net: &Arc<Network>,
    scenario: &Scenario,
    kind: GraphKind,
    opts: &BpOptions,
) -> Result<SeRun, ExperimentError> {
    let truth = power::truth_angles(net)?;
    let m = power::synthesize_measurements(net, &truth, scenario)?;
    let spec = power::build_se_problem(net, &m);
    let reference = oracle::exact_marginals(&spec)?;
    let fg = build_graph(&spec, kind)?;

    let mut metric_rows: Vec<(f64, f64)> = Vec::new();
    let start = Instant::now();
    let (_, trace) = bp::run_observed(&fg, opts, |_, beliefs| {
        let row = match power::flow_beliefs(net, beliefs) {
            Ok(flows) => (
                power::delta_mu(&flows, &reference.link_flows).unwrap_or(f64::NAN),
                power::delta_sigma(&flows, &reference.link_flows).unwrap_or(f64::NAN),
            ),
            Err(_) => (f64::NAN, f64::NAN),
        };
        metric_rows.push(row);
    });
    let elapsed = start.elapsed().as_secs_f64();

    let rows: Vec<SeRow> = trace
        .rows
        .iter()
        .zip(&metric_rows)
        .map(|(r, &(dm, ds))| SeRow {
            iter: r.iter,
            belief_delta: r.belief_delta,
            delta_mu: dm,
            delta_sigma: ds,
        })
        .collect();
    let (final_delta_mu, final_delta_sigma) = rows
        .last()
        .map(|r| (r.delta_mu, r.delta_sigma))
        .unwrap_or((f64::NAN, f64::NAN));
    let sweeps = trace.sweeps();
    Ok(SeRun {
        kind,
        seed: scenario.seed,
        status: trace.status,
        rows,
        sweeps,
        secs_per_iter: if sweeps > 0 { elapsed / sweeps as f64 } else { 0.0 },
        final_delta_mu,
        final_delta_sigma,
    })
}

/// Engine-only per-iteration wall time: `iters` sweeps plus belief
/// collection, no metric tracking.
pub fn time_per_iteration(fg: &FactorGraph, iters: usize) -> f64 {
    let opts = BpOptions {
        max_iters: iters,
        tolerance: 0.0,
        ..BpOptions::default()
    };
    let start = Instant::now();
    let (_, trace) = bp::run(fg, &opts);
    let executed = trace.sweeps().max(1);
    start.elapsed().as_secs_f64() / executed as f64
}

/// Outcome of a gas GN experiment; inner-solver divergence is a recorded
/// result, not an error.
#[derive(Debug, Clone)]
pub enum GasOutcome {
    Finished(gas::GnRun),
    InnerDiverged {
        step: usize,
        status: Status,
        trace: Vec<GnTraceRow>,
    },
}

#[derive(Debug, Clone)]
pub struct GasExperiment {
    pub kind: GraphKind,
    pub outcome: GasOutcome,
    /// Eq.-19 error of the final flow guess against the dense nonlinear
    /// oracle (None when the run never produced a guess or the oracle was
    /// not computed).
    pub final_delta: Option<f64>,
    pub cumulative_bp_iters: usize,
    pub reference_flows: Option<Vec<f64>>,
}

/// Runs the modified GN loop against the dense gas oracle.
pub fn run_gas(
    net: &Arc<Network>,
    opts: &GnOptions,
    with_reference: bool,
) -> Result<GasExperiment, ExperimentError> {
    let reference = if with_reference {
        Some(oracle::solve_gas_exact(net)?.0)
    } else {
        None
    };
    match gas::run_modified_gn(net, opts, reference.as_deref()) {
        Ok(run) => {
            let cumulative = run.trace.iter().map(|r| r.bp_iters).sum();
            let final_delta = reference
                .as_deref()
                .map(|r| gas::delta_gas(&run.state.q_star, r))
                .transpose()?;
            Ok(GasExperiment {
                kind: opts.graph_kind,
                outcome: GasOutcome::Finished(run),
                final_delta,
                cumulative_bp_iters: cumulative,
                reference_flows: reference,
            })
        }
        Err(GasError::InnerDiverged { step, status, trace }) => {
            let cumulative = trace.iter().map(|r| r.bp_iters).sum::<usize>()
                + opts.inner.max_iters.min(match status {
                    Status::Diverged(n) => n,
                    _ => opts.inner.max_iters,
                });
            Ok(GasExperiment {
                kind: opts.graph_kind,
                outcome: GasOutcome::InnerDiverged { step, status, trace },
                final_delta: None,
                cumulative_bp_iters: cumulative,
                reference_flows: reference,
            })
        }
        Err(e) => Err(e.into()),
    }
}
