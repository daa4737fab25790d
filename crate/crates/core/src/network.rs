//! Supply-network representation, validation, and file ingestion.
//!
//! A network is a connected undirected graph of vertices and links. Each link
//! carries one positive coefficient: the susceptance B_ij of a DC power line,
//! or the flow coefficient a_ij of a gas pipe. Vertices optionally carry a
//! known injection (power in MW / normalized volumetric gas flow) and a known
//! vertex value (phase angle in rad / squared pressure in bar^2).
//!
//! The canonical file format is a single UTF-8 JSON document:
//!
//! ```json
//! {
//!   "kind": "power_dc",
//!   "vertices": [{"id": "bus_1", "injection": 1.5, "vertex_value": 0.1}],
//!   "links": [{"from": "bus_1", "to": "bus_2", "coeff": 10.0}]
//! }
//! ```
//!
//! Unknown keys are rejected. Links are stored in a canonical orientation
//! (lower vertex index first, in file order); all per-link quantities in the
//! rest of the crate follow that orientation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    PowerDc,
    Gas,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkKind::PowerDc => write!(f, "power_dc"),
            NetworkKind::Gas => write!(f, "gas"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexRecord {
    pub id: String,
    pub injection: Option<f64>,
    pub vertex_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub from: String,
    pub to: String,
    pub coeff: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    kind: NetworkKind,
    vertices: Vec<VertexRecord>,
    links: Vec<LinkRecord>,
}

/// A link in canonical orientation: `lo < hi` are vertex indices.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub lo: usize,
    pub hi: usize,
    pub coeff: f64,
}

/// Validated, immutable supply network. Safe to share read-only across
/// threads.
#[derive(Debug, Clone)]
pub struct Network {
    kind: NetworkKind,
    vertices: Vec<VertexRecord>,
    links: Vec<Link>,
    index: HashMap<String, usize>,
    /// Per vertex: (neighbor index, link index), sorted by neighbor.
    adj: Vec<Vec<(usize, usize)>>,
    /// CSR offsets into the directed-edge numbering: directed edge (i -> j)
    /// has index `dir_offset[i] + position of j in adj[i]`.
    dir_offset: Vec<usize>,
}

impl Network {
    /// Loads and validates a network from the canonical JSON file format.
    pub fn load(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses and validates a network from canonical JSON text.
    pub fn from_json(text: &str) -> Result<Network, NetworkError> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        Self::from_records(file.kind, file.vertices, file.links)
    }

    /// Builds and validates a network from in-memory records.
    pub fn from_records(
        kind: NetworkKind,
        vertices: Vec<VertexRecord>,
        links: Vec<LinkRecord>,
    ) -> Result<Network, NetworkError> {
        let invalid = |msg: String| Err(NetworkError::Validation(msg));

        let mut index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.id.clone(), i).is_some() {
                return invalid(format!("duplicate vertex id {:?}", v.id));
            }
            for (name, val) in [("injection", v.injection), ("vertex_value", v.vertex_value)] {
                if let Some(x) = val {
                    if !x.is_finite() {
                        return invalid(format!("vertex {:?}: non-finite {name}", v.id));
                    }
                }
            }
        }
        if vertices.is_empty() {
            return invalid("network has no vertices".into());
        }

        let mut canon = Vec::with_capacity(links.len());
        let mut seen = HashMap::new();
        for l in &links {
            let a = *index
                .get(&l.from)
                .ok_or_else(|| NetworkError::Validation(format!("unknown link endpoint {:?}", l.from)))?;
            let b = *index
                .get(&l.to)
                .ok_or_else(|| NetworkError::Validation(format!("unknown link endpoint {:?}", l.to)))?;
            if a == b {
                return invalid(format!("self-loop at vertex {:?}", l.from));
            }
            if !(l.coeff.is_finite() && l.coeff > 0.0) {
                return invalid(format!(
                    "link ({:?}, {:?}): coefficient must be strictly positive",
                    l.from, l.to
                ));
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if seen.insert((lo, hi), ()).is_some() {
                return invalid(format!("duplicate link ({:?}, {:?})", l.from, l.to));
            }
            canon.push(Link { lo, hi, coeff: l.coeff });
        }

        let mut adj = vec![Vec::new(); vertices.len()];
        for (li, l) in canon.iter().enumerate() {
            adj[l.lo].push((l.hi, li));
            adj[l.hi].push((l.lo, li));
        }
        for list in &mut adj {
            list.sort_unstable();
        }

        // Connectivity: single component required.
        let mut visited = vec![false; vertices.len()];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &(j, _) in &adj[i] {
                if !visited[j] {
                    visited[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        if count != vertices.len() {
            return invalid(format!(
                "network is disconnected ({count} of {} vertices reachable)",
                vertices.len()
            ));
        }

        if kind == NetworkKind::Gas {
            if !vertices.iter().any(|v| v.vertex_value.is_some()) {
                return invalid("gas network needs at least one pressure anchor".into());
            }
            for v in &vertices {
                if v.vertex_value.is_none() && v.injection.is_none() {
                    return invalid(format!(
                        "gas vertex {:?} has neither a known injection nor a known pressure",
                        v.id
                    ));
                }
            }
        }

        let mut dir_offset = Vec::with_capacity(vertices.len() + 1);
        let mut acc = 0;
        for list in &adj {
            dir_offset.push(acc);
            acc += list.len();
        }
        dir_offset.push(acc);

        Ok(Network {
            kind,
            vertices,
            links: canon,
            index,
            adj,
            dir_offset,
        })
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Number of directed edges (2 per link).
    pub fn n_directed(&self) -> usize {
        2 * self.links.len()
    }

    pub fn vertices(&self) -> &[VertexRecord] {
        &self.vertices
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vertex_id(&self, i: usize) -> &str {
        &self.vertices[i].id
    }

    /// Neighbors of `i` as (neighbor index, link index), sorted by neighbor.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Index of the directed edge (i -> j); panics if the link is absent.
    pub fn dir_index(&self, i: usize, j: usize) -> usize {
        let pos = self.adj[i]
            .binary_search_by_key(&j, |&(n, _)| n)
            .expect("directed edge must exist");
        self.dir_offset[i] + pos
    }

    /// Base of the directed-edge range owned by vertex `i`.
    pub fn dir_offset(&self, i: usize) -> usize {
        self.dir_offset[i]
    }

    /// Number of independent loops: components + links - vertices, which for
    /// a validated (connected) network is `1 + links - vertices`.
    pub fn loop_count(&self) -> usize {
        1 + self.links.len() - self.vertices.len()
    }
}

/// Free-function form of [`Network::loop_count`].
pub fn network_loop_count(net: &Network) -> usize {
    net.loop_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path3_json() -> &'static str {
        r#"{
            "kind": "power_dc",
            "vertices": [
                {"id": "v1", "injection": null, "vertex_value": 0.0},
                {"id": "v2", "injection": null, "vertex_value": 0.1},
                {"id": "v3", "injection": null, "vertex_value": 0.2}
            ],
            "links": [
                {"from": "v1", "to": "v2", "coeff": 1.0},
                {"from": "v2", "to": "v3", "coeff": 2.0}
            ]
        }"#
    }

    #[test]
    fn loads_three_vertex_path() {
        let net = Network::from_json(path3_json()).unwrap();
        assert_eq!(net.n_vertices(), 3);
        assert_eq!(net.n_links(), 2);
        assert_eq!(net.loop_count(), 0);
        assert_eq!(net.neighbors(1), &[(0, 0), (2, 1)]);
        assert_eq!(net.dir_index(1, 2), 2);
    }

    #[test]
    fn loading_is_deterministic() {
        let a = Network::from_json(path3_json()).unwrap();
        let b = Network::from_json(path3_json()).unwrap();
        assert_eq!(a.n_vertices(), b.n_vertices());
        for (la, lb) in a.links().iter().zip(b.links()) {
            assert_eq!((la.lo, la.hi), (lb.lo, lb.hi));
            assert_eq!(la.coeff, lb.coeff);
        }
        for i in 0..a.n_vertices() {
            assert_eq!(a.neighbors(i), b.neighbors(i));
        }
    }

    #[test]
    fn duplicate_link_rejected() {
        let text = r#"{
            "kind": "power_dc",
            "vertices": [
                {"id": "1", "injection": null, "vertex_value": null},
                {"id": "2", "injection": null, "vertex_value": null}
            ],
            "links": [
                {"from": "1", "to": "2", "coeff": 1.0},
                {"from": "2", "to": "1", "coeff": 1.0}
            ]
        }"#;
        match Network::from_json(text) {
            Err(NetworkError::Validation(msg)) => assert!(msg.contains("duplicate link")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"kind": "gas", "vertices": [], "links": [], "extra": 1}"#;
        assert!(matches!(Network::from_json(text), Err(NetworkError::Parse(_))));
    }

    #[test]
    fn disconnected_rejected() {
        let text = r#"{
            "kind": "power_dc",
            "vertices": [
                {"id": "1", "injection": null, "vertex_value": null},
                {"id": "2", "injection": null, "vertex_value": null},
                {"id": "3", "injection": null, "vertex_value": null},
                {"id": "4", "injection": null, "vertex_value": null}
            ],
            "links": [
                {"from": "1", "to": "2", "coeff": 1.0},
                {"from": "3", "to": "4", "coeff": 1.0}
            ]
        }"#;
        match Network::from_json(text) {
            Err(NetworkError::Validation(msg)) => assert!(msg.contains("disconnected")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn gas_vertex_needs_injection_or_anchor() {
        let text = r#"{
            "kind": "gas",
            "vertices": [
                {"id": "a", "injection": null, "vertex_value": 2500.0},
                {"id": "b", "injection": null, "vertex_value": null}
            ],
            "links": [{"from": "a", "to": "b", "coeff": 50.0}]
        }"#;
        assert!(matches!(
            Network::from_json(text),
            Err(NetworkError::Validation(_))
        ));
    }

    #[test]
    fn non_positive_coefficient_rejected() {
        let text = r#"{
            "kind": "power_dc",
            "vertices": [
                {"id": "1", "injection": null, "vertex_value": null},
                {"id": "2", "injection": null, "vertex_value": null}
            ],
            "links": [{"from": "1", "to": "2", "coeff": 0.0}]
        }"#;
        assert!(matches!(
            Network::from_json(text),
            Err(NetworkError::Validation(_))
        ));
    }
}
