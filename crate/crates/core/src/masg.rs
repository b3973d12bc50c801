//! The mass-action system graph (MASG): a bipartite species/reaction
//! electrical network whose edge `{s, r}` has conductance
//! `nu_r * |nu_{r,s}| * G_r`, and the flow induced by a linearised steady
//! state.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::crn::{NetStoichiometry, Perturbation, ThermoContext, ValidatedSystem};
use crate::electric::{flow_energy, verify_kirchhoff, FlowVector, Network, SourceSpec, KIRCHHOFF_TOL};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Species,
    Reaction,
}

/// A species/reaction pair left out because its net coefficient is zero
/// (the species is a catalyst of the reaction), which would give a
/// zero-weight edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExcludedEdge {
    pub species: String,
    pub reaction: String,
}

/// The MASG of a validated system. Species occupy vertices `0..S`,
/// reactions `S..S+R`; every edge is oriented species -> reaction and edges
/// are listed species-major.
#[derive(Clone, Debug)]
pub struct Masg {
    network: Network,
    species_count: usize,
    reaction_ids: Vec<String>,
    stoich: NetStoichiometry,
    onsager: Vec<f64>,
    /// `(species, reaction)` of each edge.
    edge_pairs: Vec<(usize, usize)>,
    excluded: Vec<ExcludedEdge>,
}

/// Builds the MASG. Catalyst pairs are excluded and reported.
pub fn build_masg(vs: &ValidatedSystem) -> Result<Masg> {
    let stoich = vs.stoichiometry().clone();
    let onsager = vs.compute_onsager();
    let n = vs.species_count();
    let species = vs.species();
    let reaction_ids: Vec<String> = vs.reactions().iter().map(|r| r.id.clone()).collect();
    if let Some(clash) = reaction_ids.iter().find(|id| species.contains(id)) {
        return Err(Error::InvalidNetwork(format!(
            "reaction id `{clash}` collides with a species id"
        )));
    }
    let mut vertices: Vec<String> = species.to_vec();
    vertices.extend(reaction_ids.iter().cloned());

    let mut edges = Vec::new();
    let mut edge_pairs = Vec::new();
    let mut excluded = Vec::new();
    for (s, name) in species.iter().enumerate() {
        for (r, reaction) in vs.reactions().iter().enumerate() {
            let participates = reaction.reactant.get(s) > 0 || reaction.product.get(s) > 0;
            if !participates {
                continue;
            }
            let nu = stoich.nu(r, s);
            if nu == 0 {
                excluded.push(ExcludedEdge {
                    species: name.clone(),
                    reaction: reaction.id.clone(),
                });
                continue;
            }
            let weight = (stoich.nu_total(r) * nu.unsigned_abs()) as f64 * onsager[r];
            edges.push((species[s].clone(), reaction.id.clone(), weight));
            edge_pairs.push((s, r));
        }
    }
    let network = Network::new_allow_disconnected(vertices, edges)?;
    Ok(Masg {
        network,
        species_count: n,
        reaction_ids,
        stoich,
        onsager,
        edge_pairs,
        excluded,
    })
}

impl Masg {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn species_count(&self) -> usize {
        self.species_count
    }

    pub fn reaction_count(&self) -> usize {
        self.reaction_ids.len()
    }

    pub fn reaction_ids(&self) -> &[String] {
        &self.reaction_ids
    }

    pub fn stoichiometry(&self) -> &NetStoichiometry {
        &self.stoich
    }

    pub fn onsager(&self) -> &[f64] {
        &self.onsager
    }

    pub fn excluded_edges(&self) -> &[ExcludedEdge] {
        &self.excluded
    }

    pub fn species_vertex(&self, s: usize) -> usize {
        s
    }

    pub fn reaction_vertex(&self, r: usize) -> usize {
        self.species_count + r
    }

    pub fn vertex_kind(&self, v: usize) -> VertexKind {
        if v < self.species_count {
            VertexKind::Species
        } else {
            VertexKind::Reaction
        }
    }

    /// `(species, reaction)` of edge `e`.
    pub fn edge_pair(&self, e: usize) -> (usize, usize) {
        self.edge_pairs[e]
    }

    pub fn edge_of(&self, species: usize, reaction: usize) -> Option<usize> {
        self.edge_pairs.iter().position(|&p| p == (species, reaction))
    }

    /// Weight of an edge as an integer multiple of its reaction's Onsager
    /// coefficient, `nu_r * |nu_{r,s}|`.
    pub fn weight_multiplier(&self, e: usize) -> u64 {
        let (s, r) = self.edge_pairs[e];
        self.stoich.nu_total(r) * self.stoich.nu(r, s).unsigned_abs()
    }

    /// `sum_r nu_r^2 G_r`, which equals the total weight of the network.
    pub fn total_weight_formula(&self) -> f64 {
        self.onsager
            .iter()
            .enumerate()
            .map(|(r, g)| (self.stoich.nu_total(r) as f64).powi(2) * g)
            .sum()
    }

    /// The sigma-M source specification of a perturbation on this graph.
    pub fn source_spec(&self, pert: &Perturbation) -> Result<SourceSpec> {
        if pert.injections().len() != self.species_count {
            return Err(Error::Perturbation(
                "perturbation was built for a different system".into(),
            ));
        }
        SourceSpec::new(
            self.network.vertex_count(),
            pert.source_distribution()
                .iter()
                .map(|&(s, p)| (self.species_vertex(s), p)),
            pert.targets().iter().map(|&s| self.species_vertex(s)),
        )
    }

    /// Graphviz rendering: species as ellipses, reactions as boxes, weights
    /// as edge labels.
    pub fn to_dot(&self) -> String {
        let net = &self.network;
        let mut out = String::from("digraph masg {\n  rankdir=LR;\n");
        for v in 0..net.vertex_count() {
            let shape = match self.vertex_kind(v) {
                VertexKind::Species => "ellipse",
                VertexKind::Reaction => "box",
            };
            let _ = writeln!(out, "  \"{}\" [shape={shape}];", net.vertex_name(v));
        }
        for (e, &(u, v)) in net.edges().iter().enumerate() {
            let (_, r) = self.edge_pairs[e];
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}G_{} = {}\"];",
                net.vertex_name(u),
                net.vertex_name(v),
                self.weight_multiplier(e),
                self.reaction_ids[r],
                net.weight(e)
            );
        }
        out.push_str("}\n");
        out
    }

    /// JSON description of the graph.
    pub fn to_json(&self) -> Value {
        let net = &self.network;
        let edges: Vec<Value> = (0..net.edge_count())
            .map(|e| {
                let (s, r) = self.edge_pairs[e];
                json!({
                    "species": net.vertex_name(self.species_vertex(s)),
                    "reaction": self.reaction_ids[r],
                    "multiplier": self.weight_multiplier(e),
                    "weight": net.weight(e),
                })
            })
            .collect();
        json!({
            "species": &net.vertices()[..self.species_count],
            "reactions": self.reaction_ids,
            "onsager": self.onsager,
            "edges": edges,
            "excluded_edges": self.excluded,
            "total_weight": net.total_weight(),
        })
    }
}

/// The flow `theta_{s,r} = -nu_{r,s} J_r` on the MASG.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MasgFlow {
    pub flow: FlowVector,
    pub fluxes: Vec<f64>,
}

impl MasgFlow {
    /// `sum_r J_r^2 / G_r`.
    pub fn flux_energy(&self, masg: &Masg) -> f64 {
        self.fluxes
            .iter()
            .zip(masg.onsager())
            .map(|(j, g)| j * j / g)
            .sum()
    }
}

/// Builds the MASG flow from a steady state and checks that it is a unit
/// sigma-M flow for the perturbation.
pub fn masg_flow(masg: &Masg, thermo: &ThermoContext, pert: &Perturbation) -> Result<MasgFlow> {
    if thermo.flux.len() != masg.reaction_count() {
        return Err(Error::Perturbation(
            "steady state was computed for a different system".into(),
        ));
    }
    let values = (0..masg.network.edge_count())
        .map(|e| {
            let (s, r) = masg.edge_pairs[e];
            -(masg.stoich.nu(r, s) as f64) * thermo.flux[r]
        })
        .collect();
    let flow = FlowVector(values);
    let spec = masg.source_spec(pert)?;
    let check = verify_kirchhoff(&masg.network, &flow, &spec, KIRCHHOFF_TOL);
    if !check.valid {
        return Err(Error::Perturbation(format!(
            "steady state does not match the perturbation (Kirchhoff residual {:e})",
            check.max_residual
        )));
    }
    Ok(MasgFlow {
        flow,
        fluxes: thermo.flux.clone(),
    })
}

/// Edge-wise energy of the MASG flow.
pub fn masg_flow_energy(masg: &Masg, mflow: &MasgFlow) -> f64 {
    flow_energy(&masg.network, &mflow.flow)
}

/// One row of the species/reaction to electrical-network correspondence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DictionaryRow {
    pub masg: String,
    pub network: String,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dictionary {
    pub rows: Vec<DictionaryRow>,
    pub notes: Vec<String>,
}

/// Instantiates the correspondence table for this graph. Perturbation and
/// flow are optional; missing rows are reported as `null`.
pub fn export_dictionary(masg: &Masg, pert: Option<&Perturbation>, mflow: Option<&MasgFlow>) -> Dictionary {
    let net = &masg.network;
    let species = &net.vertices()[..masg.species_count];
    let edge_label = |e: usize| {
        let (s, r) = masg.edge_pairs[e];
        format!("{}-{}", species[s], masg.reaction_ids[r])
    };
    let mut notes = Vec::new();
    let (marked, sigma) = match pert {
        Some(p) => {
            if p.targets().is_empty() {
                notes.push("M is empty: detection case, no unit flow exists".to_string());
            }
            let marked: Vec<&str> = p.targets().iter().map(|&s| species[s].as_str()).collect();
            let sigma: serde_json::Map<String, Value> = p
                .source_distribution()
                .iter()
                .map(|&(s, v)| (species[s].clone(), json!(v)))
                .collect();
            (json!(marked), Value::Object(sigma))
        }
        None => (Value::Null, Value::Null),
    };
    for ex in &masg.excluded {
        notes.push(format!(
            "edge {}-{} omitted: zero net stoichiometry (catalyst)",
            ex.species, ex.reaction
        ));
    }
    let edges: Vec<String> = (0..net.edge_count()).map(edge_label).collect();
    let weights: serde_json::Map<String, Value> = (0..net.edge_count())
        .map(|e| (edge_label(e), json!(net.weight(e))))
        .collect();
    let (flow, phi) = match mflow {
        Some(f) => (
            Value::Object(
                (0..net.edge_count())
                    .map(|e| (edge_label(e), json!(f.flow.0[e])))
                    .collect(),
            ),
            json!(masg_flow_energy(masg, f)),
        ),
        None => (Value::Null, Value::Null),
    };
    let row = |m: &str, n: &str, value: Value| DictionaryRow {
        masg: m.to_string(),
        network: n.to_string(),
        value,
    };
    Dictionary {
        rows: vec![
            row("Species S", "Vertices S forming an independent set", json!(species)),
            row(
                "Oriented reactions R",
                "Vertices R forming an independent set",
                json!(masg.reaction_ids),
            ),
            row("Target species in S", "Marked set M of S", marked),
            row(
                "External injection/removal rate eta_s",
                "Initial probability distribution sigma(s)",
                sigma,
            ),
            row(
                "Non-zero stoichiometric coefficient of s in r",
                "Directed edge (s,r)",
                json!(edges),
            ),
            row(
                "Thermodynamical quantity nu_r |nu_{r,s}| G_r",
                "Edge conductance w_{s,r}",
                Value::Object(weights),
            ),
            row(
                "Thermodynamical quantity -nu_{r,s} J_r(c)",
                "Valid unit sigma-M flow theta_{s,r}",
                flow,
            ),
            row(
                "Gibbs free-energy consumption Phi(c)",
                "Energy E(theta) of the MASG flow",
                phi,
            ),
        ],
        notes,
    }
}
