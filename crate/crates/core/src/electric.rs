//! Weighted networks as electrical circuits.
//!
//! Edges are stored in a fixed orientation (the input order); flows are
//! stored as one value per oriented edge and the reverse value is implied by
//! antisymmetry. Every edge `{u, v}` is a resistor of resistance `1 / w_uv`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod oracle;

pub use oracle::brute_force_min_energy;

/// Kirchhoff residual allowed at internal vertices of a computed flow.
pub const KIRCHHOFF_TOL: f64 = 1e-9;

/// A weighted graph with a chosen orientation of every edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    vertices: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    /// Per vertex: `(edge, neighbour)` pairs in edge order.
    incidence: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    vertices: Vec<String>,
    edges: Vec<EdgeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeEntry {
    from: String,
    to: String,
    weight: f64,
}

impl Network {
    /// Builds a connected network. Edge orientation is taken from the input
    /// order of each pair.
    pub fn new(vertices: Vec<String>, edges: Vec<(String, String, f64)>) -> Result<Self> {
        let net = Self::build(vertices, edges)?;
        if !net.is_connected() {
            return Err(Error::InvalidNetwork("network is not connected".into()));
        }
        Ok(net)
    }

    /// Like [`Network::new`] but accepts several connected components.
    ///
    /// Solvers still require every source to reach the marked set.
    pub fn new_allow_disconnected(
        vertices: Vec<String>,
        edges: Vec<(String, String, f64)>,
    ) -> Result<Self> {
        Self::build(vertices, edges)
    }

    fn build(vertices: Vec<String>, edges: Vec<(String, String, f64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate vertex `{v}`")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut oriented = Vec::with_capacity(edges.len());
        let mut weights = Vec::with_capacity(edges.len());
        let mut incidence = vec![Vec::new(); vertices.len()];
        for (from, to, w) in edges {
            let u = *index
                .get(&from)
                .ok_or_else(|| Error::UnknownVertex(from.clone()))?;
            let v = *index.get(&to).ok_or_else(|| Error::UnknownVertex(to.clone()))?;
            if u == v {
                return Err(Error::InvalidNetwork(format!("self-loop at `{from}`")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidNetwork(format!(
                    "more than one edge between `{from}` and `{to}`"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "edge `{from}`-`{to}` has non-positive weight {w}"
                )));
            }
            let e = oriented.len();
            oriented.push((u, v));
            weights.push(w);
            incidence[u].push((e, v));
            incidence[v].push((e, u));
        }
        Ok(Self {
            vertices,
            index,
            edges: oriented,
            weights,
            incidence,
        })
    }

    /// Parses the generic graph JSON format.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::new(
            file.vertices,
            file.edges
                .into_iter()
                .map(|e| (e.from, e.to, e.weight))
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .zip(&self.weights)
                .map(|(&(u, v), &w)| EdgeEntry {
                    from: self.vertices[u].clone(),
                    to: self.vertices[v].clone(),
                    weight: w,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialises")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn vertex_name(&self, u: usize) -> &str {
        &self.vertices[u]
    }

    pub fn vertex_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    /// Oriented edge `e` as `(tail, head)`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weight(&self, e: usize) -> f64 {
        self.weights[e]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(edge, neighbour)` pairs incident to `u`.
    pub fn incident(&self, u: usize) -> &[(usize, usize)] {
        &self.incidence[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.incidence[u].len()
    }

    /// Weighted degree `w_u`.
    pub fn weighted_degree(&self, u: usize) -> f64 {
        self.incidence[u].iter().map(|&(e, _)| self.weights[e]).sum()
    }

    /// `+1` if `e` leaves `u` in the stored orientation, `-1` if it enters.
    pub fn orientation_sign(&self, e: usize, u: usize) -> f64 {
        if self.edges[e].0 == u {
            1.0
        } else {
            -1.0
        }
    }

    /// Total weight `W`, the sum over oriented edges.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Vertices reachable from any of `starts`.
    pub fn reachable_from(&self, starts: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut seen = vec![false; self.vertex_count()];
        let mut queue = VecDeque::new();
        for s in starts {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &(_, v) in &self.incidence[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        self.vertex_count() == 0 || self.reachable_from([0]).into_iter().all(|x| x)
    }

    /// Weighted Laplacian `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.vertex_count();
        let mut l = DMatrix::zeros(n, n);
        for (&(u, v), &w) in self.edges.iter().zip(&self.weights) {
            l[(u, u)] += w;
            l[(v, v)] += w;
            l[(u, v)] -= w;
            l[(v, u)] -= w;
        }
        l
    }

    /// Same network with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= factor;
        }
        out
    }

    /// Graphviz rendering with weights as edge labels.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{name}\" {{");
        for v in &self.vertices {
            let _ = writeln!(out, "  \"{v}\";");
        }
        for (&(u, v), w) in self.edges.iter().zip(&self.weights) {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{w}\"];",
                self.vertices[u], self.vertices[v]
            );
        }
        out.push_str("}\n");
        out
    }
}

/// A flow: one value per oriented edge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowVector(pub Vec<f64>);

impl FlowVector {
    pub fn zeros(edges: usize) -> Self {
        Self(vec![0.0; edges])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Net flow leaving `u`, `theta_u = sum_v theta_{u,v}`.
    pub fn net_out(&self, net: &Network, u: usize) -> f64 {
        net.incident(u)
            .iter()
            .map(|&(e, _)| net.orientation_sign(e, u) * self.0[e])
            .sum()
    }

    /// Flow value along the ordered pair `(u, v)`, or `None` if not adjacent.
    pub fn along(&self, net: &Network, u: usize, v: usize) -> Option<f64> {
        net.incident(u)
            .iter()
            .find(|&&(_, x)| x == v)
            .map(|&(e, _)| net.orientation_sign(e, u) * self.0[e])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }
}

/// A potential per vertex.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialVector(pub Vec<f64>);

impl PotentialVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Initial distribution over sources and the marked set.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    sigma: Vec<(usize, f64)>,
    marked: Vec<usize>,
}

impl SourceSpec {
    /// `sigma` must be a probability distribution disjoint from `marked`.
    /// An empty `sigma` is allowed only to describe the trivial zero flow.
    pub fn new(
        vertex_count: usize,
        sigma: impl IntoIterator<Item = (usize, f64)>,
        marked: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let marked: BTreeSet<usize> = marked.into_iter().collect();
        let mut seen = BTreeSet::new();
        let mut dist = Vec::new();
        for (u, p) in sigma {
            if u >= vertex_count {
                return Err(Error::SourceSpec(format!("vertex #{u} out of range")));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::SourceSpec(format!(
                    "probability of vertex #{u} must be positive, got {p}"
                )));
            }
            if marked.contains(&u) {
                return Err(Error::SourceSpec(format!("vertex #{u} is both a source and marked")));
            }
            if !seen.insert(u) {
                return Err(Error::SourceSpec(format!("vertex #{u} listed twice")));
            }
            dist.push((u, p));
        }
        if let Some(&m) = marked.iter().find(|&&m| m >= vertex_count) {
            return Err(Error::SourceSpec(format!("marked vertex #{m} out of range")));
        }
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        if !dist.is_empty() && (total - 1.0).abs() > 1e-9 {
            return Err(Error::SourceSpec(format!(
                "source distribution must sum to 1, got {total}"
            )));
        }
        dist.sort_by_key(|&(u, _)| u);
        Ok(Self {
            sigma: dist,
            marked: marked.into_iter().collect(),
        })
    }

    /// Point-mass source at `s`.
    pub fn single(net: &Network, s: usize, marked: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(net.vertex_count(), [(s, 1.0)], marked)
    }

    /// Builds a spec from vertex names.
    pub fn named<'a>(
        net: &Network,
        sigma: impl IntoIterator<Item = (&'a str, f64)>,
        marked: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let sigma = sigma
            .into_iter()
            .map(|(name, p)| Ok((net.vertex_index(name)?, p)))
            .collect::<Result<Vec<_>>>()?;
        let marked = marked
            .into_iter()
            .map(|name| net.vertex_index(name))
            .collect::<Result<Vec<_>>>()?;
        Self::new(net.vertex_count(), sigma, marked)
    }

    pub fn sigma(&self) -> &[(usize, f64)] {
        &self.sigma
    }

    pub fn marked(&self) -> &[usize] {
        &self.marked
    }

    pub fn sigma_of(&self, u: usize) -> f64 {
        self.sigma
            .iter()
            .find(|&&(v, _)| v == u)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn is_source(&self, u: usize) -> bool {
        self.sigma.iter().any(|&(v, _)| v == u)
    }

    pub fn is_marked(&self, u: usize) -> bool {
        self.marked.binary_search(&u).is_ok()
    }

    /// Neither a source nor marked.
    pub fn is_internal(&self, u: usize) -> bool {
        !self.is_source(u) && !self.is_marked(u)
    }

    pub fn single_source(&self) -> Option<usize> {
        match self.sigma.as_slice() {
            [(s, _)] => Some(*s),
            _ => None,
        }
    }

    /// Fails unless `M` is nonempty and every source reaches it.
    pub fn check_reachable(&self, net: &Network) -> Result<()> {
        if self.marked.is_empty() {
            return Err(Error::EmptyMarked);
        }
        if self.sigma.is_empty() {
            return Err(Error::SourceSpec("no source vertex".into()));
        }
        let reach = net.reachable_from(self.marked.iter().copied());
        if let Some(&(s, _)) = self.sigma.iter().find(|&&(s, _)| !reach[s]) {
            return Err(Error::Disconnected(format!(
                "source `{}` cannot reach the marked set",
                net.vertex_name(s)
            )));
        }
        Ok(())
    }
}

/// The electrical flow with its potentials and effective resistance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElectricalFlow {
    pub flow: FlowVector,
    pub potential: PotentialVector,
    pub effective_resistance: f64,
}

/// Unit sigma-M flow of minimal energy, by a grounded Laplacian solve.
///
/// Potentials are zero on `M`; vertices in components without a marked
/// vertex (and hence without a source) get zero potential and carry no flow.
pub fn electrical_flow(net: &Network, spec: &SourceSpec) -> Result<ElectricalFlow> {
    spec.check_reachable(net)?;
    let n = net.vertex_count();
    let reach = net.reachable_from(spec.marked().iter().copied());
    let free: Vec<usize> = (0..n).filter(|&u| reach[u] && !spec.is_marked(u)).collect();
    let mut position = vec![usize::MAX; n];
    for (i, &u) in free.iter().enumerate() {
        position[u] = i;
    }
    let laplacian = net.laplacian();
    let k = free.len();
    let mut reduced = DMatrix::zeros(k, k);
    for (i, &u) in free.iter().enumerate() {
        for (j, &v) in free.iter().enumerate() {
            reduced[(i, j)] = laplacian[(u, v)];
        }
    }
    let rhs = DVector::from_iterator(k, free.iter().map(|&u| spec.sigma_of(u)));
    let solution = reduced
        .cholesky()
        .ok_or_else(|| Error::Singular("grounded Laplacian is not positive definite".into()))?
        .solve(&rhs);
    let mut p = vec![0.0; n];
    for (i, &u) in free.iter().enumerate() {
        p[u] = solution[i];
    }
    let flow = FlowVector(
        net.edges()
            .iter()
            .zip(net.weights())
            .map(|(&(u, v), &w)| w * (p[u] - p[v]))
            .collect(),
    );
    let effective_resistance = flow_energy(net, &flow);
    Ok(ElectricalFlow {
        flow,
        potential: PotentialVector(p),
        effective_resistance,
    })
}

/// Energy `sum theta^2 / w` over oriented edges.
pub fn flow_energy(net: &Network, flow: &FlowVector) -> f64 {
    flow.0
        .iter()
        .zip(net.weights())
        .map(|(t, w)| t * t / w)
        .sum()
}

/// Result of [`verify_kirchhoff`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KirchhoffCheck {
    pub valid: bool,
    pub max_residual: f64,
}

/// Checks that `flow` is a unit sigma-M flow: conserved at internal
/// vertices, `theta_u = sigma(u)` at sources and total `-1` over `M`.
pub fn verify_kirchhoff(net: &Network, flow: &FlowVector, spec: &SourceSpec, tol: f64) -> KirchhoffCheck {
    let mut max_residual = 0.0_f64;
    let mut marked_total = 0.0;
    for u in 0..net.vertex_count() {
        let out = flow.net_out(net, u);
        if spec.is_marked(u) {
            marked_total += out;
        } else {
            max_residual = max_residual.max((out - spec.sigma_of(u)).abs());
        }
    }
    let expected_marked = if spec.sigma().is_empty() { 0.0 } else { -1.0 };
    if !spec.marked().is_empty() || !spec.sigma().is_empty() {
        max_residual = max_residual.max((marked_total - expected_marked).abs());
    }
    KirchhoffCheck {
        valid: max_residual <= tol,
        max_residual,
    }
}

/// Escape time `(1/R) sum_u p_u^2 w_u` for a single source.
pub fn escape_time(net: &Network, s: usize, marked: &[usize]) -> Result<f64> {
    let spec = SourceSpec::single(net, s, marked.iter().copied())?;
    let ef = electrical_flow(net, &spec)?;
    Ok(escape_time_from(net, &ef))
}

/// Escape time from an already computed electrical flow.
pub fn escape_time_from(net: &Network, ef: &ElectricalFlow) -> f64 {
    let sum: f64 = (0..net.vertex_count())
        .map(|u| ef.potential.0[u].powi(2) * net.weighted_degree(u))
        .sum();
    sum / ef.effective_resistance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn single_edge(w: f64) -> Network {
        Network::new(
            vec!["s".into(), "t".into()],
            vec![("s".into(), "t".into(), w)],
        )
        .unwrap()
    }

    #[test]
    fn tailed_triangle_total_weight() {
        assert_eq!(presets::tailed_triangle().total_weight(), 1.75);
        assert_eq!(single_edge(2.5).total_weight(), 2.5);
    }

    #[test]
    fn tailed_triangle_electrical_flow() {
        let net = presets::tailed_triangle();
        let spec = SourceSpec::named(&net, [("s", 1.0)], ["t"]).unwrap();
        let ef = electrical_flow(&net, &spec).unwrap();
        // edges: (s,x), (x,y), (x,t), (y,t)
        let expected = [1.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (got, want) in ef.flow.0.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        let p = [11.0 / 3.0, 8.0 / 3.0, 4.0 / 3.0, 0.0];
        for (got, want) in ef.potential.0.iter().zip(p) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((ef.effective_resistance - 11.0 / 3.0).abs() < 1e-12);
        assert!(verify_kirchhoff(&net, &ef.flow, &spec, 1e-12).valid);
    }

    #[test]
    fn single_edge_flow_and_escape_time() {
        for w in [0.3, 1.0, 7.0] {
            let net = single_edge(w);
            let spec = SourceSpec::single(&net, 0, [1]).unwrap();
            let ef = electrical_flow(&net, &spec).unwrap();
            assert!((ef.flow.0[0] - 1.0).abs() < 1e-12);
            assert!((ef.effective_resistance - 1.0 / w).abs() < 1e-12);
            assert!((escape_time(&net, 0, &[1]).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tailed_triangle_escape_time() {
        // p = (11/3, 8/3, 4/3, 0); weighted degrees (1, 3/2, 1/2, 1/2)
        let by_hand = ((11.0_f64 / 3.0).powi(2) * 1.0
            + (8.0_f64 / 3.0).powi(2) * 1.5
            + (4.0_f64 / 3.0).powi(2) * 0.5)
            / (11.0 / 3.0);
        let net = presets::tailed_triangle();
        let et = escape_time(&net, 0, &[3]).unwrap();
        assert!((et - by_hand).abs() < 1e-12);
        assert!((et - 75.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn kirchhoff_detects_bumped_edge() {
        let net = presets::tailed_triangle();
        let spec = SourceSpec::single(&net, 0, [3]).unwrap();
        let mut flow = electrical_flow(&net, &spec).unwrap().flow;
        flow.0[1] += 1.0;
        let check = verify_kirchhoff(&net, &flow, &spec, 1e-9);
        assert!(!check.valid);
        assert!(check.max_residual >= 1.0 - 1e-12);
    }

    #[test]
    fn zero_flow_has_zero_energy() {
        let net = presets::tailed_triangle();
        assert_eq!(flow_energy(&net, &FlowVector::zeros(4)), 0.0);
    }

    #[test]
    fn energy_of_competing_crn_alt_flows() {
        let net = presets::crn_alt_masg_network();
        let left = FlowVector(vec![0.5, 0.5, -0.5, 0.5, -1.0]);
        let right = FlowVector(vec![0.25, 0.75, -0.25, 0.25, -1.0]);
        assert!((flow_energy(&net, &left) - 0.5).abs() < 1e-15);
        assert!((flow_energy(&net, &right) - 0.34375).abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        let v = || vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let e = |a: &str, b: &str, w: f64| (a.to_string(), b.to_string(), w);
        assert!(Network::new(v(), vec![e("a", "b", 1.0)]).is_err(), "disconnected");
        assert!(Network::new(v(), vec![e("a", "a", 1.0)]).is_err(), "self-loop");
        assert!(Network::new(v(), vec![e("a", "b", 1.0), e("b", "a", 1.0), e("b", "c", 1.0)]).is_err());
        assert!(Network::new(v(), vec![e("a", "b", 0.0), e("b", "c", 1.0)]).is_err());
        assert!(Network::new(v(), vec![e("a", "z", 1.0)]).is_err());
    }

    #[test]
    fn empty_marked_set_is_an_error() {
        let net = presets::tailed_triangle();
        let spec = SourceSpec::single(&net, 0, []).unwrap();
        assert!(matches!(electrical_flow(&net, &spec), Err(Error::EmptyMarked)));
    }

    #[test]
    fn unreachable_marked_set_is_an_error() {
        let net = Network::new_allow_disconnected(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![("a".into(), "b".into(), 1.0), ("c".into(), "d".into(), 1.0)],
        )
        .unwrap();
        let spec = SourceSpec::single(&net, 0, [3]).unwrap();
        assert!(matches!(electrical_flow(&net, &spec), Err(Error::Disconnected(_))));
    }

    #[test]
    fn json_and_dot() {
        let net = presets::tailed_triangle();
        let again = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(net, again);
        let dot = net.to_dot("tailed");
        assert!(dot.contains("\"s\" -> \"x\" [label=\"1\"]"));
        assert!(dot.contains("label=\"0.25\""));
    }
}
