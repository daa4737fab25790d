//! Factor-graph assembly: the three assignments F_v, F_c, F_f.
//!
//! A [`ProblemSpec`] is a linear-Gaussian problem over the vertex variables of
//! a network: one injection factor and one vertex-value factor per vertex,
//! one flow factor per link. The same spec can be lowered onto three factor
//! graphs:
//!
//! * `Fv` — one variable node per vertex; the vertex factor connects to the
//!   vertex and all its neighbors, which adds `2 * links` loops on top of the
//!   network's own.
//! * `Fc` — one variable node per link holding copies of the two endpoint
//!   variables; the per-vertex factor absorbs the copy constraints; the graph
//!   has exactly as many loops as the network.
//! * `Ff` — one scalar flow variable per link (orientation convention
//!   f_ij = -f_ji); conservation factors per vertex, a leaf factor per link;
//!   same topology as `Fc`. Vertex-value factors cannot be expressed over
//!   flows and are dropped with a logged warning.
//!
//! The builders compile the spec into flat per-vertex / per-link coefficient
//! tables that the message-passing kernels consume, and also materialize the
//! bipartite node/edge structure for loop accounting.

use std::sync::Arc;

use thiserror::Error;

use crate::network::Network;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("problem spec: {0}")]
    Spec(String),
    #[error("not expressible over flows: {0}")]
    NotFlowExpressible(String),
}

/// One scalar Gaussian observation `z` with variance `sigma2` over the linear
/// combination given by `coeffs` (variable index -> coefficient).
#[derive(Debug, Clone)]
pub struct LinearGaussianFactor {
    pub z: f64,
    pub sigma2: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl LinearGaussianFactor {
    pub fn new(z: f64, sigma2: f64, coeffs: Vec<(usize, f64)>) -> Self {
        LinearGaussianFactor { z, sigma2, coeffs }
    }

    fn coeff_of(&self, var: usize) -> Option<f64> {
        self.coeffs
            .iter()
            .find_map(|&(v, c)| (v == var).then_some(c))
    }
}

/// The two Gaussian terms a vertex contributes: the injection factor over
/// `{i} ∪ N(i)` and the vertex-value factor over `{i}` alone. Together they
/// form the vertex factor H_i.
#[derive(Debug, Clone)]
pub struct VertexFactors {
    pub injection: LinearGaussianFactor,
    pub value: LinearGaussianFactor,
}

/// A linear-Gaussian inference problem over the vertex variables of `net`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub net: Arc<Network>,
    pub vertex_factors: Vec<VertexFactors>,
    pub link_factors: Vec<LinearGaussianFactor>,
}

impl ProblemSpec {
    /// Validates factor shape against the network: the injection factor of
    /// vertex `i` must carry a nonzero coefficient for `i` and for every
    /// neighbor (and nothing else); the value factor addresses `i` alone (it
    /// is normalized to unit coefficient); a link factor addresses exactly its
    /// two endpoints with nonzero coefficients. All variances must be
    /// strictly positive and finite.
    pub fn new(
        net: Arc<Network>,
        vertex_factors: Vec<VertexFactors>,
        mut link_factors: Vec<LinearGaussianFactor>,
    ) -> Result<Self, GraphError> {
        let fail = |msg: String| Err(GraphError::Spec(msg));
        if vertex_factors.len() != net.n_vertices() {
            return fail("one vertex factor set per vertex required".into());
        }
        if link_factors.len() != net.n_links() {
            return fail("one link factor per link required".into());
        }
        let ok_var = |s2: f64| s2.is_finite() && s2 > 0.0;
        let mut normalized = Vec::with_capacity(vertex_factors.len());
        for (i, vf) in vertex_factors.into_iter().enumerate() {
            let inj = &vf.injection;
            if !ok_var(inj.sigma2) || !inj.z.is_finite() {
                return fail(format!("vertex {i}: bad injection observation"));
            }
            if inj.coeffs.len() != 1 + net.degree(i) {
                return fail(format!(
                    "vertex {i}: injection factor must address the vertex and all its neighbors"
                ));
            }
            match inj.coeff_of(i) {
                Some(c) if c != 0.0 && c.is_finite() => {}
                _ => return fail(format!("vertex {i}: injection factor needs a nonzero self coefficient")),
            }
            for &(j, _) in net.neighbors(i) {
                match inj.coeff_of(j) {
                    Some(c) if c != 0.0 && c.is_finite() => {}
                    _ => {
                        return fail(format!(
                            "vertex {i}: injection factor needs a nonzero coefficient for neighbor {j}"
                        ))
                    }
                }
            }
            let val = &vf.value;
            if !ok_var(val.sigma2) || !val.z.is_finite() {
                return fail(format!("vertex {i}: bad value observation"));
            }
            let norm_value = match val.coeffs.as_slice() {
                [(v, c)] if *v == i && *c != 0.0 && c.is_finite() => LinearGaussianFactor::new(
                    val.z / c,
                    val.sigma2 / (c * c),
                    vec![(i, 1.0)],
                ),
                _ => return fail(format!("vertex {i}: value factor must address the vertex alone")),
            };
            normalized.push(VertexFactors {
                injection: vf.injection,
                value: norm_value,
            });
        }
        for (li, lf) in link_factors.iter_mut().enumerate() {
            let link = net.links()[li];
            if !ok_var(lf.sigma2) || !lf.z.is_finite() {
                return fail(format!("link {li}: bad flow observation"));
            }
            if lf.coeffs.len() != 2 {
                return fail(format!("link {li}: flow factor must address both endpoints"));
            }
            let (clo, chi) = match (lf.coeff_of(link.lo), lf.coeff_of(link.hi)) {
                (Some(a), Some(b)) if a != 0.0 && b != 0.0 && a.is_finite() && b.is_finite() => (a, b),
                _ => {
                    return fail(format!(
                        "link {li}: flow factor needs nonzero coefficients for both endpoints"
                    ))
                }
            };
            lf.coeffs = vec![(link.lo, clo), (link.hi, chi)];
        }
        Ok(ProblemSpec {
            net,
            vertex_factors: normalized,
            link_factors,
        })
    }
}

/// Which of the three factor-graph assignments a graph uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// Naive assignment: variable node per vertex variable.
    Fv,
    /// Clustered assignment: variable node per link, holding copies of both
    /// endpoint variables.
    Fc,
    /// Flow-only assignment: scalar flow variable per link.
    Ff,
}

impl GraphKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphKind::Fv => "fv",
            GraphKind::Fc => "fc",
            GraphKind::Ff => "ff",
        }
    }
}

/// Coefficient tables for the vertex-variable graphs (Fv, Fc), laid out for
/// the closed-form message kernels. Per-link values follow the canonical
/// (lo, hi) orientation; `c_g_nbr` is indexed by directed edge (i -> j) and
/// holds c_{gi|j}, the coefficient of neighbor j inside vertex i's injection
/// factor.
#[derive(Debug, Clone)]
pub(crate) struct VertexTables {
    pub z_g: Vec<f64>,
    pub s2_g: Vec<f64>,
    pub z_v: Vec<f64>,
    pub s2_v: Vec<f64>,
    pub c_g_self: Vec<f64>,
    pub c_g_nbr: Vec<f64>,
    pub z_f: Vec<f64>,
    pub s2_f: Vec<f64>,
    pub c_f_lo: Vec<f64>,
    pub c_f_hi: Vec<f64>,
}

/// Coefficient tables for the flow-only graph: a conservation observation per
/// vertex and a leaf observation per link, both over raw flows.
#[derive(Debug, Clone)]
pub(crate) struct FlowTables {
    pub z_g: Vec<f64>,
    pub s2_g: Vec<f64>,
    pub z_f: Vec<f64>,
    pub s2_f: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Vertex(VertexTables),
    Flow(FlowTables),
}

/// A variable node of the bipartite structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarNode {
    /// Fv: the variable of one vertex.
    Vertex(usize),
    /// Fc: the copy pair (v_ij, v_ji) of one link.
    LinkPair(usize),
    /// Ff: the scalar flow of one link.
    LinkFlow(usize),
}

/// A factor node of the bipartite structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacNode {
    /// The vertex factor H_i (with absorbed copy constraints on Fc).
    Vertex(usize),
    /// The link factor H_(ij).
    Link(usize),
}

/// Structural counts of a factor graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FgStats {
    pub variable_nodes: usize,
    pub factor_nodes: usize,
    pub edges: usize,
    pub loops: usize,
}

/// One of the three factor graphs, compiled and ready for message passing.
/// Immutable after build.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    kind: GraphKind,
    net: Arc<Network>,
    payload: Payload,
    var_nodes: Vec<VarNode>,
    fac_nodes: Vec<FacNode>,
    /// Bipartite edges as (variable node index, factor node index).
    edges: Vec<(usize, usize)>,
}

impl FactorGraph {
    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn net(&self) -> &Arc<Network> {
        &self.net
    }

    pub fn variable_nodes(&self) -> &[VarNode] {
        &self.var_nodes
    }

    pub fn factor_nodes(&self) -> &[FacNode] {
        &self.fac_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub(crate) fn payload(&self) -> &Payload {
        &self.payload
    }

    pub(crate) fn vertex_tables(&self) -> &VertexTables {
        match &self.payload {
            Payload::Vertex(t) => t,
            Payload::Flow(_) => unreachable!("flow graph has no vertex tables"),
        }
    }

    pub(crate) fn flow_tables(&self) -> &FlowTables {
        match &self.payload {
            Payload::Flow(t) => t,
            Payload::Vertex(_) => unreachable!("vertex graph has no flow tables"),
        }
    }

    /// Node/edge/loop counts of the bipartite structure.
    pub fn stats(&self) -> FgStats {
        FgStats {
            variable_nodes: self.var_nodes.len(),
            factor_nodes: self.fac_nodes.len(),
            edges: self.edges.len(),
            loops: fg_loop_count(self),
        }
    }
}

/// Number of independent loops of the bipartite graph:
/// `components + edges - nodes`, computed by union-find over the edge list.
pub fn fg_loop_count(fg: &FactorGraph) -> usize {
    let n = fg.var_nodes.len() + fg.fac_nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for &(v, f) in &fg.edges {
        let a = find(&mut parent, v);
        let b = find(&mut parent, fg.var_nodes.len() + f);
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components + fg.edges.len() - n
}

fn vertex_tables(spec: &ProblemSpec) -> VertexTables {
    let net = &spec.net;
    let (n, m) = (net.n_vertices(), net.n_links());
    let mut t = VertexTables {
        z_g: Vec::with_capacity(n),
        s2_g: Vec::with_capacity(n),
        z_v: Vec::with_capacity(n),
        s2_v: Vec::with_capacity(n),
        c_g_self: Vec::with_capacity(n),
        c_g_nbr: vec![0.0; net.n_directed()],
        z_f: Vec::with_capacity(m),
        s2_f: Vec::with_capacity(m),
        c_f_lo: Vec::with_capacity(m),
        c_f_hi: Vec::with_capacity(m),
    };
    for (i, vf) in spec.vertex_factors.iter().enumerate() {
        t.z_g.push(vf.injection.z);
        t.s2_g.push(vf.injection.sigma2);
        t.z_v.push(vf.value.z);
        t.s2_v.push(vf.value.sigma2);
        t.c_g_self.push(vf.injection.coeff_of(i).expect("validated"));
        for &(j, _) in net.neighbors(i) {
            t.c_g_nbr[net.dir_index(i, j)] = vf.injection.coeff_of(j).expect("validated");
        }
    }
    for (li, lf) in spec.link_factors.iter().enumerate() {
        let link = net.links()[li];
        t.z_f.push(lf.z);
        t.s2_f.push(lf.sigma2);
        t.c_f_lo.push(lf.coeff_of(link.lo).expect("validated"));
        t.c_f_hi.push(lf.coeff_of(link.hi).expect("validated"));
    }
    t
}

/// Naive assignment: a variable node per vertex, a factor node H_i per vertex
/// (connected to the vertex and all its neighbors) and a factor node H_(ij)
/// per link.
pub fn build_fv(spec: &ProblemSpec) -> FactorGraph {
    let net = Arc::clone(&spec.net);
    let (n, m) = (net.n_vertices(), net.n_links());
    let var_nodes: Vec<VarNode> = (0..n).map(VarNode::Vertex).collect();
    let mut fac_nodes: Vec<FacNode> = (0..n).map(FacNode::Vertex).collect();
    fac_nodes.extend((0..m).map(FacNode::Link));
    let mut edges = Vec::with_capacity(n + 4 * m);
    for i in 0..n {
        edges.push((i, i));
        for &(j, _) in net.neighbors(i) {
            edges.push((j, i));
        }
    }
    for (li, l) in net.links().iter().enumerate() {
        edges.push((l.lo, n + li));
        edges.push((l.hi, n + li));
    }
    FactorGraph {
        kind: GraphKind::Fv,
        payload: Payload::Vertex(vertex_tables(spec)),
        net,
        var_nodes,
        fac_nodes,
        edges,
    }
}

/// Clustered assignment: a pair variable node per link, an H_i·δ factor node
/// per vertex connected to all incident pair nodes, and a leaf factor per
/// link. Same loop count as the network.
pub fn build_fc(spec: &ProblemSpec) -> FactorGraph {
    let net = Arc::clone(&spec.net);
    let (n, m) = (net.n_vertices(), net.n_links());
    let var_nodes: Vec<VarNode> = (0..m).map(VarNode::LinkPair).collect();
    let mut fac_nodes: Vec<FacNode> = (0..n).map(FacNode::Vertex).collect();
    fac_nodes.extend((0..m).map(FacNode::Link));
    let mut edges = Vec::with_capacity(3 * m);
    for i in 0..n {
        for &(_, li) in net.neighbors(i) {
            edges.push((li, i));
        }
    }
    for li in 0..m {
        edges.push((li, n + li));
    }
    FactorGraph {
        kind: GraphKind::Fc,
        payload: Payload::Vertex(vertex_tables(spec)),
        net,
        var_nodes,
        fac_nodes,
        edges,
    }
}

/// Flow-only assignment. The spec's factors must be expressible through flows
/// and injections alone: link factors need antisymmetric endpoint
/// coefficients (they observe a multiple of the flow), and injection factors
/// need zero-sum coefficients (they observe the conserved injection).
/// Vertex-value factors cannot be expressed over flows; informative ones are
/// dropped with a logged warning.
pub fn build_ff(spec: &ProblemSpec) -> Result<FactorGraph, GraphError> {
    let net = &spec.net;
    let mut flow = FlowTables {
        z_g: Vec::with_capacity(net.n_vertices()),
        s2_g: Vec::with_capacity(net.n_vertices()),
        z_f: Vec::with_capacity(net.n_links()),
        s2_f: Vec::with_capacity(net.n_links()),
    };
    let mut dropped = 0usize;
    for (i, vf) in spec.vertex_factors.iter().enumerate() {
        // The observation z_gi of c_gi|i θ_i + Σ_j c_gi|j θ_j is a flow-sum
        // observation exactly when the coefficients sum to zero.
        let sum: f64 = vf.injection.coeffs.iter().map(|&(_, c)| c).sum();
        let scale: f64 = vf.injection.coeffs.iter().map(|&(_, c)| c.abs()).sum();
        if sum.abs() > 1e-9 * scale {
            return Err(GraphError::NotFlowExpressible(format!(
                "vertex {i}: injection coefficients do not encode flow conservation"
            )));
        }
        flow.z_g.push(vf.injection.z);
        flow.s2_g.push(vf.injection.sigma2);
        if vf.value.sigma2 < 1e7 {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("flow-only graph drops {dropped} informative vertex-value factor(s)");
    }
    for (li, lf) in spec.link_factors.iter().enumerate() {
        let link = net.links()[li];
        let clo = lf.coeff_of(link.lo).expect("validated");
        let chi = lf.coeff_of(link.hi).expect("validated");
        if (clo + chi).abs() > 1e-9 * (clo.abs() + chi.abs()) {
            return Err(GraphError::NotFlowExpressible(format!(
                "link {li}: flow factor coefficients are not antisymmetric"
            )));
        }
        // z observes clo*(θ_lo - θ_hi) = (clo / B) * f; rescale onto the flow.
        let b = link.coeff;
        flow.z_f.push(lf.z * b / clo);
        flow.s2_f.push(lf.sigma2 * (b / clo) * (b / clo));
    }
    Ok(build_ff_from_flow_tables(Arc::clone(net), flow))
}

/// Builds the flow-only graph directly from flow-space observations (used by
/// the gas initial-guess problem, which has no vertex-variable form).
pub(crate) fn build_ff_from_flow_tables(net: Arc<Network>, flow: FlowTables) -> FactorGraph {
    let (n, m) = (net.n_vertices(), net.n_links());
    let var_nodes: Vec<VarNode> = (0..m).map(VarNode::LinkFlow).collect();
    let mut fac_nodes: Vec<FacNode> = (0..n).map(FacNode::Vertex).collect();
    fac_nodes.extend((0..m).map(FacNode::Link));
    let mut edges = Vec::with_capacity(3 * m);
    for i in 0..n {
        for &(_, li) in net.neighbors(i) {
            edges.push((li, i));
        }
    }
    for li in 0..m {
        edges.push((li, n + li));
    }
    FactorGraph {
        kind: GraphKind::Ff,
        payload: Payload::Flow(flow),
        net,
        var_nodes,
        fac_nodes,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LinkRecord, NetworkKind, VertexRecord};

    pub(crate) fn uniform_spec(net: Arc<Network>) -> ProblemSpec {
        // A structurally complete spec with conservation-shaped coefficients
        // (c_gi|i = Σ B_ij, c_gi|j = -B_ij) and uninformative observations.
        let mut vfs = Vec::new();
        for i in 0..net.n_vertices() {
            let mut coeffs = vec![(i, 0.0)];
            let mut total = 0.0;
            for &(j, li) in net.neighbors(i) {
                let b = net.links()[li].coeff;
                coeffs.push((j, -b));
                total += b;
            }
            coeffs[0].1 = total;
            vfs.push(VertexFactors {
                injection: LinearGaussianFactor::new(0.0, 1e8, coeffs),
                value: LinearGaussianFactor::new(0.0, 1e8, vec![(i, 1.0)]),
            });
        }
        let lfs = net
            .links()
            .iter()
            .map(|l| {
                LinearGaussianFactor::new(0.0, 1e8, vec![(l.lo, l.coeff), (l.hi, -l.coeff)])
            })
            .collect();
        ProblemSpec::new(net, vfs, lfs).unwrap()
    }

    pub(crate) fn path3() -> Arc<Network> {
        Arc::new(
            Network::from_records(
                NetworkKind::PowerDc,
                (1..=3)
                    .map(|i| VertexRecord {
                        id: format!("v{i}"),
                        injection: None,
                        vertex_value: Some(0.1 * i as f64),
                    })
                    .collect(),
                vec![
                    LinkRecord { from: "v1".into(), to: "v2".into(), coeff: 1.0 },
                    LinkRecord { from: "v2".into(), to: "v3".into(), coeff: 2.0 },
                ],
            )
            .unwrap(),
        )
    }

    fn star4() -> Arc<Network> {
        let mut vertices = vec![VertexRecord { id: "hub".into(), injection: None, vertex_value: None }];
        let mut links = Vec::new();
        for i in 1..=4 {
            vertices.push(VertexRecord {
                id: format!("leaf{i}"),
                injection: None,
                vertex_value: None,
            });
            links.push(LinkRecord { from: "hub".into(), to: format!("leaf{i}"), coeff: 1.0 });
        }
        Arc::new(Network::from_records(NetworkKind::PowerDc, vertices, links).unwrap())
    }

    fn single_link() -> Arc<Network> {
        Arc::new(
            Network::from_records(
                NetworkKind::PowerDc,
                vec![
                    VertexRecord { id: "a".into(), injection: None, vertex_value: None },
                    VertexRecord { id: "b".into(), injection: None, vertex_value: None },
                ],
                vec![LinkRecord { from: "a".into(), to: "b".into(), coeff: 1.0 }],
            )
            .unwrap(),
        )
    }

    #[test]
    fn fv_path3_counts() {
        let spec = uniform_spec(path3());
        let fg = build_fv(&spec);
        let s = fg.stats();
        assert_eq!(s.variable_nodes, 3);
        assert_eq!(s.factor_nodes, 5);
        assert_eq!(s.edges, 11);
        assert_eq!(s.loops, 4);
    }

    #[test]
    fn fv_single_link_counts() {
        let spec = uniform_spec(single_link());
        let s = build_fv(&spec).stats();
        assert_eq!(s.variable_nodes, 2);
        assert_eq!(s.factor_nodes, 3);
    }

    #[test]
    fn fc_path3_counts() {
        let spec = uniform_spec(path3());
        let s = build_fc(&spec).stats();
        assert_eq!(s.variable_nodes, 2);
        assert_eq!(s.factor_nodes, 5);
        assert_eq!(s.edges, 6);
        assert_eq!(s.loops, 0);
    }

    #[test]
    fn fc_star_is_tree() {
        let spec = uniform_spec(star4());
        let s = build_fc(&spec).stats();
        assert_eq!(s.variable_nodes, 4);
        assert_eq!(s.loops, 0);
    }

    #[test]
    fn ff_matches_fc_topology() {
        let spec = uniform_spec(path3());
        let fc = build_fc(&spec).stats();
        let ff = build_ff(&spec).unwrap().stats();
        assert_eq!(ff.variable_nodes, fc.variable_nodes);
        assert_eq!(ff.factor_nodes, fc.factor_nodes);
        assert_eq!(ff.edges, fc.edges);
        assert_eq!(ff.loops, fc.loops);
    }

    #[test]
    fn ff_single_link_counts() {
        let spec = uniform_spec(single_link());
        let s = build_ff(&spec).unwrap().stats();
        assert_eq!(s.variable_nodes, 1);
        assert_eq!(s.factor_nodes, 3);
    }

    #[test]
    fn loop_relations_hold() {
        for net in [path3(), star4(), single_link()] {
            let spec = uniform_spec(Arc::clone(&net));
            let fv = build_fv(&spec).stats();
            let fc = build_fc(&spec).stats();
            let ff = build_ff(&spec).unwrap().stats();
            assert_eq!(fv.loops, net.loop_count() + 2 * net.n_links());
            assert_eq!(fc.loops, net.loop_count());
            assert_eq!(ff.loops, net.loop_count());
        }
    }

    #[test]
    fn fc_copy_multiplicity() {
        // One copy pair per link; vertex i owns |N(i)| copies in total.
        let net = star4();
        let spec = uniform_spec(Arc::clone(&net));
        let fg = build_fc(&spec);
        assert_eq!(fg.variable_nodes().len(), net.n_links());
        let hub_edges = fg
            .edges()
            .iter()
            .filter(|&&(_, f)| matches!(fg.factor_nodes()[f], FacNode::Vertex(0)))
            .count();
        assert_eq!(hub_edges, net.degree(0));
    }
}
