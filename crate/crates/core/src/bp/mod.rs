//! Synchronous Gaussian belief propagation on the three factor graphs.
//!
//! One sweep is two synchronous phases, exactly as in the closed-form update
//! procedures: first every variable→factor message is recomputed from the
//! previous sweep's factor→variable messages (folding in the link leaf
//! factor), then every factor→variable message is recomputed from those fresh
//! variable→factor messages. All reads in a phase target the pre-phase
//! snapshot and all writes target disjoint slots, so the visiting order of
//! edges cannot affect the result.
//!
//! Probabilistic damping draws one fair coin per directed message per sweep
//! (keyed by the seed, the message slot, and the iteration); on a tails the
//! freshly computed message is replaced by the half-way blend with the cached
//! one, mean and variance alike. Damping is accepted for any graph kind but
//! is only needed by `Fv` in practice.
//!
//! Convergence is judged on the collected per-link beliefs: `SweepDelta`
//! stops when the largest change of any belief mean or (co)variance entry
//! between consecutive sweeps drops below the tolerance; `HalvingDelta` stops
//! at iteration T when the mean squared difference between the belief means
//! at T and at T/2 does, which also catches slowly oscillating runs.

mod fc;
mod ff;
mod fv;

use crate::gaussian::{Gaussian1, Gaussian2, GaussianError};
use crate::graph::{FactorGraph, GraphKind};
use crate::prng;

pub(crate) use fc::FcStore;
pub(crate) use ff::FfStore;
pub(crate) use fv::FvStore;

/// Any belief mean beyond this magnitude marks the run as diverged.
pub const DIVERGENCE_MEAN_BOUND: f64 = 1e12;

/// Initial variance of every message (near-uniform).
pub(crate) const INIT_VARIANCE: f64 = 1e6;

/// Message damping mode: off, or the seeded probabilistic coin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Damping {
    Off,
    Coin(u64),
}

/// Stopping rule for [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Max absolute change of belief parameters between consecutive sweeps.
    SweepDelta,
    /// Mean squared difference of belief means between iterations T and T/2.
    HalvingDelta,
}

#[derive(Debug, Clone, Copy)]
pub struct BpOptions {
    pub max_iters: usize,
    pub tolerance: f64,
    pub damping: Damping,
    pub stop_rule: StopRule,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            max_iters: 10_000,
            tolerance: 1e-9,
            damping: Damping::Off,
            stop_rule: StopRule::SweepDelta,
        }
    }
}

/// Terminal state of a run.
///
/// `Converged(n)` under `SweepDelta` means the beliefs were stationary after
/// sweep `n` (verified by sweep `n + 1`); under `HalvingDelta` it is the
/// iteration `T` at which the halving criterion fired. `Diverged` records the
/// sweep at which a Gaussian validity check failed or a belief mean left
/// [`DIVERGENCE_MEAN_BOUND`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged(usize),
    MaxIters,
    Diverged(usize),
}

impl Status {
    pub fn is_converged(&self) -> bool {
        matches!(self, Status::Converged(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Converged(_) => "converged",
            Status::MaxIters => "max_iters",
            Status::Diverged(_) => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub belief_delta: f64,
}

/// Per-iteration belief-change record plus the final status.
#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub status: Status,
}

impl ConvergenceTrace {
    /// Number of sweeps actually executed.
    pub fn sweeps(&self) -> usize {
        self.rows.len()
    }

    /// Serializes as CSV with header `iter,belief_delta,status`; extra metric
    /// columns can be appended by callers via `extra`.
    pub fn to_csv(&self, extra_header: &[&str], extra: impl Fn(usize) -> Vec<f64>) -> String {
        let mut out = String::from("iter,belief_delta,status");
        for h in extra_header {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for (k, row) in self.rows.iter().enumerate() {
            let status = if k + 1 == self.rows.len() {
                self.status.label()
            } else {
                "running"
            };
            out.push_str(&format!("{},{:e},{}", row.iter, row.belief_delta, status));
            for v in extra(k) {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// All messages of one factor graph, one per directed factor-graph edge
/// (`Fv` additionally caches the scalar vertex beliefs).
#[derive(Debug, Clone)]
pub enum MessageStore {
    Fv(FvStore),
    Fc(FcStore),
    Ff(FfStore),
}

/// One Gaussian belief per network link, in the canonical (lo, hi) link
/// orientation: a scalar flow belief for `Ff`, a pair belief over the two
/// endpoint variables for `Fv` and `Fc`.
#[derive(Debug, Clone)]
pub enum BeliefSet {
    Scalar(Vec<Gaussian1>),
    Pair(Vec<Gaussian2>),
}

impl BeliefSet {
    pub fn len(&self) -> usize {
        match self {
            BeliefSet::Scalar(v) => v.len(),
            BeliefSet::Pair(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_abs_mean(&self) -> f64 {
        match self {
            BeliefSet::Scalar(v) => v.iter().map(|g| g.mean.abs()).fold(0.0, f64::max),
            BeliefSet::Pair(v) => v
                .iter()
                .flat_map(|g| g.mean)
                .map(f64::abs)
                .fold(0.0, f64::max),
        }
    }

    /// Max absolute difference over all belief means and (co)variance entries.
    pub fn param_delta(&self, other: &BeliefSet) -> f64 {
        let mut d: f64 = 0.0;
        match (self, other) {
            (BeliefSet::Scalar(a), BeliefSet::Scalar(b)) => {
                for (x, y) in a.iter().zip(b) {
                    d = d.max((x.mean - y.mean).abs());
                    d = d.max((x.variance - y.variance).abs());
                }
            }
            (BeliefSet::Pair(a), BeliefSet::Pair(b)) => {
                for (x, y) in a.iter().zip(b) {
                    for k in 0..2 {
                        d = d.max((x.mean[k] - y.mean[k]).abs());
                        for l in 0..2 {
                            d = d.max((x.cov[k][l] - y.cov[k][l]).abs());
                        }
                    }
                }
            }
            _ => panic!("belief sets of different graph kinds"),
        }
        d
    }

    fn flat_means(&self) -> Vec<f64> {
        match self {
            BeliefSet::Scalar(v) => v.iter().map(|g| g.mean).collect(),
            BeliefSet::Pair(v) => v.iter().flat_map(|g| g.mean).collect(),
        }
    }
}

/// Marginal of the flow f = coeff * (x_0 - x_1) under a pair belief; the
/// correlation term enters the variance.
pub fn flow_belief_from_pair(b: &Gaussian2, coeff: f64) -> Result<Gaussian1, GaussianError> {
    let mean = coeff * (b.mean[0] - b.mean[1]);
    let variance = coeff * coeff * (b.cov[0][0] + b.cov[1][1] - 2.0 * b.cov[0][1]);
    Gaussian1::new(mean, variance)
}

pub(crate) struct SweepCtx {
    pub damping: Damping,
    pub iter: u64,
}

impl SweepCtx {
    /// Stores a freshly computed scalar message, with the Eq.-12 style
    /// half-way blend on a tails of the per-(slot, iteration) coin.
    pub fn store1(&self, slot: usize, prev: Gaussian1, new: Gaussian1) -> Gaussian1 {
        match self.damping {
            Damping::Off => new,
            Damping::Coin(seed) => {
                if prng::coin(seed, slot as u64, self.iter) {
                    new
                } else {
                    Gaussian1 {
                        mean: 0.5 * (new.mean + prev.mean),
                        variance: 0.5 * (new.variance + prev.variance),
                    }
                }
            }
        }
    }

    /// Pair-message variant: one coin, applied identically to the mean and
    /// every covariance entry.
    pub fn store2(&self, slot: usize, prev: Gaussian2, new: Gaussian2) -> Gaussian2 {
        match self.damping {
            Damping::Off => new,
            Damping::Coin(seed) => {
                if prng::coin(seed, slot as u64, self.iter) {
                    new
                } else {
                    let mut cov = new.cov;
                    for i in 0..2 {
                        for j in 0..2 {
                            cov[i][j] = 0.5 * (new.cov[i][j] + prev.cov[i][j]);
                        }
                    }
                    Gaussian2 {
                        mean: [
                            0.5 * (new.mean[0] + prev.mean[0]),
                            0.5 * (new.mean[1] + prev.mean[1]),
                        ],
                        cov,
                    }
                }
            }
        }
    }
}

/// Uniform initialization: every message gets zero mean and variance 10^6
/// (diag(10^6, 10^6) for the pair messages of `Fc`).
pub fn init_messages(fg: &FactorGraph) -> MessageStore {
    match fg.kind() {
        GraphKind::Fv => MessageStore::Fv(fv::init(fg)),
        GraphKind::Fc => MessageStore::Fc(fc::init(fg)),
        GraphKind::Ff => MessageStore::Ff(ff::init(fg)),
    }
}

/// One full synchronous sweep (see module docs); reads only `store`, returns
/// the next store. `iter` is the 1-based sweep number keying the damping
/// coins. Gaussian validity failures propagate and mark the run diverged.
pub fn sweep(
    fg: &FactorGraph,
    store: &MessageStore,
    opts: &BpOptions,
    iter: u64,
) -> Result<MessageStore, GaussianError> {
    let ctx = SweepCtx {
        damping: opts.damping,
        iter,
    };
    match (fg.kind(), store) {
        (GraphKind::Fv, MessageStore::Fv(s)) => Ok(MessageStore::Fv(fv::sweep(fg, s, &ctx)?)),
        (GraphKind::Fc, MessageStore::Fc(s)) => Ok(MessageStore::Fc(fc::sweep(fg, s, &ctx)?)),
        (GraphKind::Ff, MessageStore::Ff(s)) => Ok(MessageStore::Ff(ff::sweep(fg, s, &ctx)?)),
        _ => panic!("message store does not match factor graph kind"),
    }
}

/// Collects one belief per link in canonical orientation: the variable-node
/// belief for `Fc`/`Ff` (leaf factor included exactly once), and the
/// link-factor belief b_H(ij) for `Fv`.
pub fn collect_link_beliefs(
    fg: &FactorGraph,
    store: &MessageStore,
) -> Result<BeliefSet, GaussianError> {
    match (fg.kind(), store) {
        (GraphKind::Fv, MessageStore::Fv(s)) => Ok(BeliefSet::Pair(fv::collect(fg, s)?)),
        (GraphKind::Fc, MessageStore::Fc(s)) => Ok(BeliefSet::Pair(fc::collect(fg, s)?)),
        (GraphKind::Ff, MessageStore::Ff(s)) => Ok(BeliefSet::Scalar(ff::collect(fg, s)?)),
        _ => panic!("message store does not match factor graph kind"),
    }
}

/// Bookkeeping for the halving criterion. To bound memory, mean snapshots are
/// kept every iteration up to 64 and every 8 iterations after; the T vs T/2
/// comparison runs at every even T up to 64 and every 16th T beyond.
struct HalvingState {
    snapshots: Vec<(usize, Vec<f64>)>,
}

impl HalvingState {
    fn new() -> Self {
        HalvingState { snapshots: Vec::new() }
    }

    fn keep(t: usize) -> bool {
        t <= 64 || t % 8 == 0
    }

    fn check_at(t: usize) -> bool {
        (t <= 64 && t % 2 == 0) || (t > 64 && t % 16 == 0)
    }

    fn push(&mut self, t: usize, beliefs: &BeliefSet) {
        if Self::keep(t) {
            self.snapshots.push((t, beliefs.flat_means()));
        }
    }

    /// Mean squared difference between the means at `t` and at `t / 2`.
    fn compare(&mut self, t: usize, current: &BeliefSet) -> Option<f64> {
        if !Self::check_at(t) {
            return None;
        }
        let half = t / 2;
        let old = &self.snapshots.iter().find(|(s, _)| *s == half)?.1;
        let cur = current.flat_means();
        let mse = cur
            .iter()
            .zip(old.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / cur.len() as f64;
        self.snapshots.retain(|(s, _)| *s >= half);
        Some(mse)
    }
}

/// Runs sweeps until the stop rule fires, the iteration budget is exhausted,
/// or the run diverges. Returns the last collected beliefs and the trace;
/// divergence is a recorded status, not an error.
pub fn run(fg: &FactorGraph, opts: &BpOptions) -> (BeliefSet, ConvergenceTrace) {
    run_observed(fg, opts, |_, _| {})
}

/// [`run`] with a per-iteration observer over the collected beliefs, for
/// callers that track metric traces.
pub fn run_observed(
    fg: &FactorGraph,
    opts: &BpOptions,
    mut observer: impl FnMut(usize, &BeliefSet),
) -> (BeliefSet, ConvergenceTrace) {
    let mut store = init_messages(fg);
    let mut beliefs = match collect_link_beliefs(fg, &store) {
        Ok(b) => b,
        Err(_) => {
            return (
                uniform_beliefs(fg),
                ConvergenceTrace { rows: Vec::new(), status: Status::Diverged(0) },
            )
        }
    };
    let mut rows = Vec::new();
    let mut status = Status::MaxIters;
    let mut halving = HalvingState::new();
    if opts.stop_rule == StopRule::HalvingDelta {
        halving.push(0, &beliefs);
    }

    for t in 1..=opts.max_iters {
        match sweep(fg, &store, opts, t as u64) {
            Ok(next) => store = next,
            Err(_) => {
                status = Status::Diverged(t);
                break;
            }
        }
        let next_beliefs = match collect_link_beliefs(fg, &store) {
            Ok(b) => b,
            Err(_) => {
                status = Status::Diverged(t);
                break;
            }
        };
        let delta = next_beliefs.param_delta(&beliefs);
        beliefs = next_beliefs;
        rows.push(TraceRow { iter: t, belief_delta: delta });
        observer(t, &beliefs);
        if beliefs.max_abs_mean() > DIVERGENCE_MEAN_BOUND {
            status = Status::Diverged(t);
            break;
        }
        match opts.stop_rule {
            StopRule::SweepDelta => {
                if delta < opts.tolerance {
                    status = Status::Converged(t - 1);
                    break;
                }
            }
            StopRule::HalvingDelta => {
                halving.push(t, &beliefs);
                if let Some(mse) = halving.compare(t, &beliefs) {
                    if mse < opts.tolerance {
                        status = Status::Converged(t);
                        break;
                    }
                }
            }
        }
    }
    (beliefs, ConvergenceTrace { rows, status })
}

fn uniform_beliefs(fg: &FactorGraph) -> BeliefSet {
    let m = fg.net().n_links();
    match fg.kind() {
        GraphKind::Ff => BeliefSet::Scalar(vec![
            Gaussian1 { mean: 0.0, variance: INIT_VARIANCE };
            m
        ]),
        _ => BeliefSet::Pair(vec![
            Gaussian2 {
                mean: [0.0, 0.0],
                cov: [[INIT_VARIANCE, 0.0], [0.0, INIT_VARIANCE]],
            };
            m
        ]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian1;

    #[test]
    fn damping_blend_spot_value() {
        // Forced blend branch: cached mean 2, new mean 4 -> stored mean 3.
        let ctx = SweepCtx { damping: Damping::Coin(0), iter: 1 };
        let prev = Gaussian1 { mean: 2.0, variance: 1.0 };
        let new = Gaussian1 { mean: 4.0, variance: 3.0 };
        // Find a slot whose coin is tails for this (seed, iter).
        let slot = (0..64)
            .find(|&s| !crate::prng::coin(0, s as u64, 1))
            .unwrap();
        let got = ctx.store1(slot, prev, new);
        assert_eq!(got.mean, 3.0);
        assert_eq!(got.variance, 2.0);
        // Heads leaves the new message untouched.
        let slot = (0..64).find(|&s| crate::prng::coin(0, s as u64, 1)).unwrap();
        let got = ctx.store1(slot, prev, new);
        assert_eq!(got.mean, 4.0);
        assert_eq!(got.variance, 3.0);
    }

    #[test]
    fn flow_from_pair_spot_value() {
        let b = Gaussian2 {
            mean: [0.2, 0.1],
            cov: [[0.01, 0.0], [0.0, 0.01]],
        };
        let f = flow_belief_from_pair(&b, 5.0).unwrap();
        assert!((f.mean - 0.5).abs() < 1e-12);
        assert!((f.variance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flow_from_pair_degenerate_correlation_errors() {
        // Perfectly correlated pair: the quadratic form collapses to zero and
        // the guard must fire rather than emit a zero-variance Gaussian.
        let b = Gaussian2 {
            mean: [1.0, 1.0],
            cov: [[0.5, 0.5], [0.5, 0.5]],
        };
        assert!(flow_belief_from_pair(&b, 2.0).is_err());
    }
}
