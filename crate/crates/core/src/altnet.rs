//! Alternative neighbourhoods: per-vertex orthonormal families extending the
//! star state, the flows they admit, rigidity of ratio constraints, and the
//! Gibbs free-energy estimators built on the modified walk.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crn::{Perturbation, ValidatedSystem};
use crate::electric::{flow_energy, verify_kirchhoff, FlowVector, Network, SourceSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, null_space, solve_min_norm, RANK_TOL};
use crate::masg::{build_masg, masg_flow, Masg};
use crate::qwalk::{
    antisymmetric_basis, columns, estimate_zero_probability, flow_state, initial_state, invert_zero_frequency,
    pair_index, simulate_phase_estimation, star_state, trace_distance, EdgeSpaceState, Mode, WalkOperator,
    ZeroEstimate,
};

/// Tolerance for the alternative Kirchhoff and Ohm systems.
pub const ALT_TOL: f64 = 1e-9;

/// Orthonormal families per vertex, each starting with the star state.
#[derive(Clone, Debug, PartialEq)]
pub struct AlternativeNeighbourhoods {
    families: BTreeMap<usize, Vec<EdgeSpaceState>>,
}

impl AlternativeNeighbourhoods {
    /// Every non-isolated vertex gets only its star state.
    pub fn stars_only(net: &Network) -> Result<Self> {
        let families = (0..net.vertex_count())
            .filter(|&u| net.degree(u) > 0)
            .map(|u| Ok((u, vec![star_state(net, u)?])))
            .collect::<Result<_>>()?;
        Ok(Self { families })
    }

    /// Families given explicitly. Each must be orthonormal, supported on the
    /// vertex's outgoing ordered pairs and start with its star state.
    pub fn new(net: &Network, families: BTreeMap<usize, Vec<EdgeSpaceState>>) -> Result<Self> {
        for (&u, family) in &families {
            let star = star_state(net, u)?;
            let Some(first) = family.first() else {
                return Err(Error::InvalidArgument(format!(
                    "family of `{}` is empty",
                    net.vertex_name(u)
                )));
            };
            if (first.amplitudes() - star.amplitudes()).norm() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "family of `{}` must start with its star state",
                    net.vertex_name(u)
                )));
            }
            let own: Vec<usize> = net.incident(u).iter().map(|&(e, _)| pair_index(net, e, u)).collect();
            for (i, a) in family.iter().enumerate() {
                let outside: f64 = a
                    .amplitudes()
                    .iter()
                    .enumerate()
                    .filter(|(idx, _)| !own.contains(idx))
                    .map(|(_, x)| x * x)
                    .sum();
                if outside > 1e-18 {
                    return Err(Error::InvalidArgument(format!(
                        "family member of `{}` leaves its neighbourhood",
                        net.vertex_name(u)
                    )));
                }
                for (j, b) in family.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (a.inner(b) - want).abs() > 1e-9 {
                        return Err(Error::InvalidArgument(format!(
                            "family of `{}` is not orthonormal",
                            net.vertex_name(u)
                        )));
                    }
                }
            }
        }
        Ok(Self { families })
    }

    pub fn family(&self, u: usize) -> Option<&[EdgeSpaceState]> {
        self.families.get(&u).map(Vec::as_slice)
    }

    pub fn families(&self) -> &BTreeMap<usize, Vec<EdgeSpaceState>> {
        &self.families
    }

    /// `a_u`, the family size.
    pub fn size(&self, u: usize) -> usize {
        self.families.get(&u).map_or(0, Vec::len)
    }
}

/// Unit state on the pairs `(r, s)` with amplitudes proportional to
/// `-sign(nu_{r,s}) sqrt|nu_{r,s}|`, the direction any MASG flow takes at `r`.
pub fn reaction_direction_state(masg: &Masg, r: usize) -> EdgeSpaceState {
    let net = masg.network();
    let rv = masg.reaction_vertex(r);
    let mut amps = DVector::zeros(2 * net.edge_count());
    for &(e, _) in net.incident(rv) {
        let (s, _) = masg.edge_pair(e);
        let nu = masg.stoichiometry().nu(r, s) as f64;
        amps[pair_index(net, e, rv)] = -nu.signum() * nu.abs().sqrt();
    }
    let state = EdgeSpaceState::from_vector(amps);
    state.normalized().unwrap_or(state)
}

/// Reaction vertices get an orthonormal basis of the complement of their
/// direction state, star state first; species keep their star state.
pub fn build_alternative_neighbourhoods(masg: &Masg) -> Result<AlternativeNeighbourhoods> {
    let net = masg.network();
    let mut families = BTreeMap::new();
    for s in 0..masg.species_count() {
        let v = masg.species_vertex(s);
        if net.degree(v) > 0 {
            families.insert(v, vec![star_state(net, v)?]);
        }
    }
    for r in 0..masg.reaction_count() {
        let rv = masg.reaction_vertex(r);
        if net.degree(rv) == 0 {
            continue;
        }
        let direction = reaction_direction_state(masg, r);
        let mut family = vec![star_state(net, rv)?];
        let target = net.degree(rv).saturating_sub(1);
        for &(e, _) in net.incident(rv) {
            if family.len() >= target {
                break;
            }
            let mut v = DVector::zeros(2 * net.edge_count());
            v[pair_index(net, e, rv)] = 1.0;
            for basis in std::iter::once(&direction).chain(family.iter()) {
                let c = basis.amplitudes().dot(&v);
                v -= basis.amplitudes() * c;
            }
            let norm = v.norm();
            if norm > 1e-9 {
                family.push(EdgeSpaceState::from_vector(v / norm));
            }
        }
        families.insert(rv, family);
    }
    Ok(AlternativeNeighbourhoods { families })
}

/// Inner product of a family member with the unnormalised flow state
/// `theta_e / sqrt(w_e)`.
fn member_constraint(net: &Network, member: &EdgeSpaceState, u: usize) -> Vec<(usize, f64)> {
    net.incident(u)
        .iter()
        .map(|&(e, _)| (e, member.amplitudes()[pair_index(net, e, u)] / net.weight(e).sqrt()))
        .collect()
}

/// True iff `flow` is a unit sigma-M flow whose state is orthogonal to every
/// family member of every internal vertex.
pub fn check_alt_kirchhoff(
    net: &Network,
    alt: &AlternativeNeighbourhoods,
    flow: &FlowVector,
    spec: &SourceSpec,
    tol: f64,
) -> bool {
    if !verify_kirchhoff(net, flow, spec, tol).valid {
        return false;
    }
    alt.families.iter().filter(|(&u, _)| spec.is_internal(u)).all(|(&u, family)| {
        family.iter().all(|member| {
            let dot: f64 = member_constraint(net, member, u)
                .into_iter()
                .map(|(e, c)| c * flow.0[e])
                .sum();
            dot.abs() <= tol
        })
    })
}

/// Linear constraints `C theta = b` of a unit sigma-M flow obeying the
/// alternative Kirchhoff law.
fn alt_constraints(net: &Network, alt: &AlternativeNeighbourhoods, spec: &SourceSpec) -> (DMatrix<f64>, DVector<f64>) {
    let m = net.edge_count();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for u in 0..net.vertex_count() {
        if spec.is_marked(u) || net.degree(u) == 0 {
            continue;
        }
        let mut row = vec![0.0; m];
        for &(e, _) in net.incident(u) {
            row[e] += net.orientation_sign(e, u);
        }
        rows.push((row, spec.sigma_of(u)));
        if spec.is_internal(u) {
            for member in alt.family(u).unwrap_or(&[]) {
                let mut row = vec![0.0; m];
                for (e, c) in member_constraint(net, member, u) {
                    row[e] += c;
                }
                rows.push((row, 0.0));
            }
        }
    }
    let c = DMatrix::from_fn(rows.len(), m, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    (c, b)
}

/// Minimum-energy alternative flow with its potentials and escape time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AltFlowResult {
    pub flow: FlowVector,
    pub alt_resistance: f64,
    /// `p_{u,v}` per ordered pair, indexed like edge-space states.
    pub edge_potentials: Vec<f64>,
    pub alt_escape_time: f64,
}

/// Solves the equality-constrained quadratic program
/// `min sum theta^2/w  s.t.  C theta = b` by a dense KKT system, then the
/// alternative Ohm equations for the potentials.
pub fn alt_electrical_flow(net: &Network, alt: &AlternativeNeighbourhoods, spec: &SourceSpec) -> Result<AltFlowResult> {
    spec.check_reachable(net)?;
    let Some(source) = spec.single_source() else {
        return Err(Error::SourceSpec("alternative flows need a single source".into()));
    };
    let m = net.edge_count();
    let (c, b) = alt_constraints(net, alt, spec);
    let (_, residual) = solve_min_norm(&c, &b, RANK_TOL);
    if residual > ALT_TOL * b.norm().max(1.0) {
        return Err(Error::Infeasible(format!(
            "no unit flow satisfies the alternative Kirchhoff law (residual {residual:e})"
        )));
    }
    // Replace C by an orthonormal basis of its row space.
    let svd = linalg::svd(&c);
    let cutoff = RANK_TOL * svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    let u_mat = svd.u.as_ref().expect("left vectors requested");
    let v_t = svd.v_t.as_ref().expect("right vectors requested");
    let k = keep.len();
    let mut kkt = DMatrix::zeros(m + k, m + k);
    let mut rhs = DVector::zeros(m + k);
    for e in 0..m {
        kkt[(e, e)] = 2.0 / net.weight(e);
    }
    for (row, &i) in keep.iter().enumerate() {
        for e in 0..m {
            kkt[(m + row, e)] = v_t[(i, e)];
            kkt[(e, m + row)] = v_t[(i, e)];
        }
        rhs[m + row] = u_mat.column(i).dot(&b) / svd.singular_values[i];
    }
    let solution = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("KKT system is singular".into()))?;
    let flow = FlowVector(solution.rows(0, m).iter().copied().collect());
    let alt_resistance = flow_energy(net, &flow);

    let edge_potentials = alt_potentials(net, alt, spec, source, &flow, alt_resistance)?;
    let total: f64 = (0..m)
        .map(|e| net.weight(e) * (edge_potentials[2 * e].powi(2) + edge_potentials[2 * e + 1].powi(2)))
        .sum();
    Ok(AltFlowResult {
        flow,
        alt_resistance,
        edge_potentials,
        alt_escape_time: total / alt_resistance,
    })
}

/// Potentials `p_{u,v}`: `R_alt` at the source, 0 on `M`, and at internal
/// vertices a combination of the family scaled by `sign / sqrt(w)`, fitted to
/// `p_{u,v} - p_{v,u} = theta_{u,v} / w_{u,v}`.
fn alt_potentials(
    net: &Network,
    alt: &AlternativeNeighbourhoods,
    spec: &SourceSpec,
    source: usize,
    flow: &FlowVector,
    r_alt: f64,
) -> Result<Vec<f64>> {
    let m = net.edge_count();
    // Column offsets of each internal vertex's coefficients.
    let mut offset = BTreeMap::new();
    let mut k = 0;
    for (&u, family) in alt.families() {
        if spec.is_internal(u) {
            offset.insert(u, k);
            k += family.len();
        }
    }
    let fixed = |u: usize| -> Option<f64> {
        if u == source {
            Some(r_alt)
        } else if spec.is_marked(u) {
            Some(0.0)
        } else {
            None
        }
    };
    // p_{u,v} as (constant, coefficients).
    let pair = |e: usize, u: usize| -> (f64, Vec<(usize, f64)>) {
        if let Some(value) = fixed(u) {
            return (value, Vec::new());
        }
        let Some(&start) = offset.get(&u) else {
            return (0.0, Vec::new());
        };
        let idx = pair_index(net, e, u);
        let scale = net.orientation_sign(e, u) / net.weight(e).sqrt();
        let family = alt.family(u).expect("internal vertex has a family");
        let coeffs = family
            .iter()
            .enumerate()
            .map(|(i, psi)| (start + i, psi.amplitudes()[idx] * scale))
            .collect();
        (0.0, coeffs)
    };
    let mut a = DMatrix::zeros(m, k);
    let mut rhs = DVector::zeros(m);
    let mut parts = Vec::with_capacity(m);
    for (e, &(u, v)) in net.edges().iter().enumerate() {
        let (cu, pu) = pair(e, u);
        let (cv, pv) = pair(e, v);
        for &(j, x) in &pu {
            a[(e, j)] += x;
        }
        for &(j, x) in &pv {
            a[(e, j)] -= x;
        }
        rhs[e] = flow.0[e] / net.weight(e) - cu + cv;
        parts.push(((cu, pu), (cv, pv)));
    }
    let (alpha, residual) = solve_min_norm(&a, &rhs, RANK_TOL);
    if residual > ALT_TOL * rhs.norm().max(1.0) {
        return Err(Error::Infeasible(format!(
            "no alternative potential satisfies the Ohm equations (residual {residual:e})"
        )));
    }
    let eval = |(c, coeffs): &(f64, Vec<(usize, f64)>)| c + coeffs.iter().map(|&(j, x)| x * alpha[j]).sum::<f64>();
    let mut p = vec![0.0; 2 * m];
    for (e, (pu, pv)) in parts.iter().enumerate() {
        p[2 * e] = eval(pu);
        p[2 * e + 1] = eval(pv);
    }
    Ok(p)
}

/// Ratio constraints per vertex of one bipartition side.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RatioVector {
    pub ratios: BTreeMap<usize, BTreeMap<usize, f64>>,
}

impl RatioVector {
    /// `rho_r(s) = nu_{r,s}` at every reaction vertex.
    pub fn from_masg(masg: &Masg) -> Self {
        let net = masg.network();
        let mut ratios = BTreeMap::new();
        for r in 0..masg.reaction_count() {
            let rv = masg.reaction_vertex(r);
            let row: BTreeMap<usize, f64> = net
                .incident(rv)
                .iter()
                .map(|&(e, s)| (s, masg.stoichiometry().nu(r, masg.edge_pair(e).0) as f64))
                .collect();
            if !row.is_empty() {
                ratios.insert(rv, row);
            }
        }
        Self { ratios }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RigidityReport {
    pub rigid: bool,
    pub solution_dimension: usize,
    pub witness_flow: Option<FlowVector>,
}

fn two_colouring(net: &Network) -> Result<Vec<u8>> {
    let n = net.vertex_count();
    let mut colour = vec![u8::MAX; n];
    for start in 0..n {
        if colour[start] != u8::MAX {
            continue;
        }
        colour[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(_, v) in net.incident(u) {
                if colour[v] == u8::MAX {
                    colour[v] = 1 - colour[u];
                    queue.push_back(v);
                } else if colour[v] == colour[u] {
                    return Err(Error::InvalidArgument("network is not bipartite".into()));
                }
            }
        }
    }
    Ok(colour)
}

/// Decides whether conservation, the ratio constraints and the unit source
/// conditions pin down exactly one flow. Unknowns are the edge flows and the
/// source scale `t`; rigid iff the solution space is one-dimensional with
/// `t != 0`.
pub fn check_rigidity(net: &Network, ratios: &RatioVector, spec: &SourceSpec) -> Result<RigidityReport> {
    let colour = two_colouring(net)?;
    if spec.sigma().is_empty() {
        return Err(Error::SourceSpec("no source vertex".into()));
    }
    let source_side = colour[spec.sigma()[0].0];
    if spec.sigma().iter().any(|&(u, _)| colour[u] != source_side) {
        return Err(Error::SourceSpec("sources lie on both sides of the bipartition".into()));
    }
    for (&b, row) in &ratios.ratios {
        if colour[b] == source_side && net.degree(b) > 0 {
            return Err(Error::SourceSpec(format!(
                "ratio vertex `{}` is on the source side",
                net.vertex_name(b)
            )));
        }
        let mut nbrs: Vec<usize> = net.incident(b).iter().map(|&(_, a)| a).collect();
        nbrs.sort_unstable();
        let keys: Vec<usize> = row.keys().copied().collect();
        if nbrs != keys {
            return Err(Error::InvalidArgument(format!(
                "ratio vector at `{}` must cover exactly its neighbours",
                net.vertex_name(b)
            )));
        }
        if row.values().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ratio vector at `{}` has a zero entry",
                net.vertex_name(b)
            )));
        }
    }

    let m = net.edge_count();
    let t = m;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for u in 0..net.vertex_count() {
        if spec.is_marked(u) || net.degree(u) == 0 {
            continue;
        }
        let mut row = vec![0.0; m + 1];
        for &(e, _) in net.incident(u) {
            row[e] += net.orientation_sign(e, u);
        }
        row[t] = -spec.sigma_of(u);
        rows.push(row);
    }
    for (&b, row) in &ratios.ratios {
        let terms: Vec<(usize, f64)> = net
            .incident(b)
            .iter()
            .map(|&(e, a)| (e, net.orientation_sign(e, b) / row[&a]))
            .collect();
        for pair in terms.windows(2) {
            let mut r = vec![0.0; m + 1];
            r[pair[0].0] += pair[0].1;
            r[pair[1].0] -= pair[1].1;
            rows.push(r);
        }
    }
    let a = DMatrix::from_fn(rows.len(), m + 1, |i, j| rows[i][j]);
    let null = null_space(&a, RANK_TOL);
    let solution_dimension = null.ncols();
    let witness_flow = if solution_dimension == 1 && null[(t, 0)].abs() > RANK_TOL {
        let scale = null[(t, 0)];
        Some(FlowVector((0..m).map(|e| null[(e, 0)] / scale).collect()))
    } else {
        None
    };
    Ok(RigidityReport {
        rigid: witness_flow.is_some(),
        solution_dimension,
        witness_flow,
    })
}

/// `U = (2 Pi_{A_alt} - I)(2 Pi_B - I)` with `A_alt` spanned by every
/// family member of the internal vertices.
pub fn build_alt_walk_operator(net: &Network, alt: &AlternativeNeighbourhoods, spec: &SourceSpec) -> Result<WalkOperator> {
    let dim = 2 * net.edge_count();
    let members = alt
        .families()
        .iter()
        .filter(|(&u, _)| spec.is_internal(u))
        .flat_map(|(_, family)| family.iter());
    Ok(WalkOperator::from_generators(&columns(dim, members), &antisymmetric_basis(net)))
}

/// Everything the Gibbs estimators share: the MASG, its rigid s-M flow and
/// the alternative flow forced to match it.
struct RigidInstance {
    masg: Masg,
    spec: SourceSpec,
    source: usize,
    alt: AlternativeNeighbourhoods,
    alt_flow: AltFlowResult,
    gibbs: f64,
    fluxes: Vec<f64>,
    rigidity: RigidityReport,
}

fn rigid_instance(vs: &ValidatedSystem, pert: &Perturbation) -> Result<RigidInstance> {
    let masg = build_masg(vs)?;
    let spec = masg.source_spec(pert)?;
    if spec.sigma().is_empty() {
        return Err(Error::SourceSpec("zero injection: no unit flow exists".into()));
    }
    let Some(source) = spec.single_source() else {
        return Err(Error::SourceSpec("Gibbs estimators need a single source species".into()));
    };
    spec.check_reachable(masg.network())?;
    let rigidity = check_rigidity(masg.network(), &RatioVector::from_masg(&masg), &spec)?;
    if !rigidity.rigid {
        return Err(Error::NotRigid(format!(
            "ratio constraints leave a {}-dimensional solution space",
            rigidity.solution_dimension
        )));
    }
    let thermo = vs.linearized_steady_state(pert)?;
    masg_flow(&masg, &thermo, pert)?;
    let alt = build_alternative_neighbourhoods(&masg)?;
    let alt_flow = alt_electrical_flow(masg.network(), &alt, &spec)?;
    let gibbs = thermo.gibbs_consumption();
    Ok(RigidInstance {
        masg,
        spec,
        source,
        alt,
        alt_flow,
        gibbs,
        fluxes: thermo.flux,
        rigidity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiEstimate {
    pub value: f64,
    /// `R_alt`, the exact target.
    pub alt_resistance: f64,
    /// `sum_r J_r^2 / G_r` from the steady state.
    pub gibbs: f64,
    pub source_degree: f64,
    pub alt_escape_time: f64,
    pub solution_dimension: usize,
    pub calibration: Option<f64>,
    pub sampled: Option<ZeroEstimate>,
}

/// Estimates the Gibbs free-energy consumption of a rigid instance through
/// the alternative walk.
pub fn estimate_phi(vs: &ValidatedSystem, pert: &Perturbation, eps: f64, mode: Mode) -> Result<PhiEstimate> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let inst = rigid_instance(vs, pert)?;
    let net = inst.masg.network();
    let w_s = net.weighted_degree(inst.source);
    let (value, calibration, sampled) = match mode {
        Mode::Exact => (inst.alt_flow.alt_resistance, None, None),
        Mode::Simulate(params) => {
            let u = build_alt_walk_operator(net, &inst.alt, &inst.spec)?;
            let psi0 = initial_state(net, &inst.spec)?;
            let est = estimate_zero_probability(&u, &psi0, &params)?;
            let (r_ws, kappa) = invert_zero_frequency(&est, params.bits)?;
            (r_ws / w_s, Some(kappa), Some(est))
        }
    };
    Ok(PhiEstimate {
        value,
        alt_resistance: inst.alt_flow.alt_resistance,
        gibbs: inst.gibbs,
        source_degree: w_s,
        alt_escape_time: inst.alt_flow.alt_escape_time,
        solution_dimension: inst.rigidity.solution_dimension,
        calibration,
        sampled,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReactionContribution {
    pub id: String,
    pub j: f64,
    pub g: f64,
    pub j2_over_g: f64,
    pub count: u64,
    pub frequency: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxSampling {
    pub per_reaction: Vec<ReactionContribution>,
    pub phi_estimate: f64,
    pub trace_distance: f64,
    pub shots: u64,
    pub seed: u64,
}

impl FluxSampling {
    pub fn total_estimate(&self) -> f64 {
        self.per_reaction.iter().map(|c| c.estimate).sum()
    }
}

/// Prepares the MASG flow state (exactly, or as the zero branch of the
/// alternative walk), measures it `shots` times, and scales each reaction's
/// hit frequency by the estimate of `Phi`.
pub fn sample_flux_contribution(
    vs: &ValidatedSystem,
    pert: &Perturbation,
    eps: f64,
    shots: u64,
    seed: u64,
    mode: Mode,
) -> Result<FluxSampling> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let phi = estimate_phi(vs, pert, eps, mode)?;
    let inst = rigid_instance(vs, pert)?;
    let net = inst.masg.network();
    let target = flow_state(net, &inst.alt_flow.flow)?;
    let state = match mode {
        Mode::Exact => target.clone(),
        Mode::Simulate(params) => {
            let u = build_alt_walk_operator(net, &inst.alt, &inst.spec)?;
            let psi0 = initial_state(net, &inst.spec)?;
            simulate_phase_estimation(&u, &psi0, params.bits)?.zero_branch_state()?
        }
    };
    let probs = state.probabilities();
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| Error::InvalidArgument(format!("bad flow-state distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; inst.masg.reaction_count()];
    for _ in 0..shots {
        let (_, r) = inst.masg.edge_pair(dist.sample(&mut rng) / 2);
        counts[r] += 1;
    }
    let per_reaction = counts
        .iter()
        .enumerate()
        .map(|(r, &count)| {
            let j = inst.fluxes[r];
            let g = inst.masg.onsager()[r];
            let frequency = count as f64 / shots as f64;
            ReactionContribution {
                id: inst.masg.reaction_ids()[r].clone(),
                j,
                g,
                j2_over_g: j * j / g,
                count,
                frequency,
                estimate: frequency * phi.value,
            }
        })
        .collect();
    Ok(FluxSampling {
        per_reaction,
        phi_estimate: phi.value,
        trace_distance: trace_distance(&state, &target),
        shots,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::DETAILED_BALANCE_TOL;
    use crate::electric::electrical_flow;
    use crate::presets;
    use crate::qwalk::{build_walk_operator, SimulationParams};
    use approx::assert_relative_eq;

    fn crn_alt() -> (ValidatedSystem, Masg, Perturbation) {
        let vs = presets::crn_alt().validated(DETAILED_BALANCE_TOL).unwrap();
        let masg = build_masg(&vs).unwrap();
        let pert = Perturbation::new(&vs, [("A", 1.0), ("C", -1.0)], ["C"]).unwrap();
        (vs, masg, pert)
    }

    fn on_reaction(masg: &Masg, state: &EdgeSpaceState, r: usize) -> Vec<f64> {
        let net = masg.network();
        let rv = masg.reaction_vertex(r);
        net.incident(rv)
            .iter()
            .map(|&(_, s)| state.amplitude(net, rv, s).unwrap())
            .collect()
    }

    const MASG_FLOW: [f64; 5] = [0.5, 0.5, -0.5, 0.5, -1.0];
    const CONSERVING_ONLY_FLOW: [f64; 5] = [0.25, 0.75, -0.25, 0.25, -1.0];

    #[test]
    fn direction_states() {
        let (_, masg, _) = crn_alt();
        let d3 = reaction_direction_state(&masg, 1);
        let want = [0.5, 0.5, -0.5 * 2f64.sqrt()];
        for (g, w) in on_reaction(&masg, &d3, 1).iter().zip(want) {
            assert_relative_eq!(*g, w, epsilon = 1e-12);
        }
        let d1 = reaction_direction_state(&masg, 0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (g, w) in on_reaction(&masg, &d1, 0).iter().zip([h, -h]) {
            assert_relative_eq!(*g, w, epsilon = 1e-12);
        }
        for r in 0..2 {
            let star = star_state(masg.network(), masg.reaction_vertex(r)).unwrap();
            assert!(star.inner(&reaction_direction_state(&masg, r)).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_engineered_families() {
        let (_, masg, _) = crn_alt();
        let alt = build_alternative_neighbourhoods(&masg).unwrap();
        let r3 = alt.family(masg.reaction_vertex(1)).unwrap();
        assert_eq!(r3.len(), 2);
        let s2 = 2f64.sqrt();
        let want = [[-0.5, -0.5, -0.5 * s2], [1.0 / s2, -1.0 / s2, 0.0]];
        for (member, w) in r3.iter().zip(want) {
            for (g, x) in on_reaction(&masg, member, 1).iter().zip(w) {
                assert_relative_eq!(*g, x, epsilon = 1e-12);
            }
        }
        assert_eq!(alt.size(masg.reaction_vertex(0)), 1);
        for family in alt.families().values() {
            for (i, a) in family.iter().enumerate() {
                for (j, b) in family.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((a.inner(b) - want).abs() <= 1e-12);
                }
            }
        }
        for s in 0..3 {
            assert_eq!(alt.size(s), 1);
        }
        assert!(AlternativeNeighbourhoods::new(masg.network(), alt.families().clone()).is_ok());
    }

    #[test]
    fn alternative_kirchhoff() {
        let (_, masg, pert) = crn_alt();
        let net = masg.network();
        let spec = masg.source_spec(&pert).unwrap();
        let alt = build_alternative_neighbourhoods(&masg).unwrap();
        assert!(check_alt_kirchhoff(net, &alt, &FlowVector(MASG_FLOW.to_vec()), &spec, 1e-9));
        assert!(!check_alt_kirchhoff(net, &alt, &FlowVector(CONSERVING_ONLY_FLOW.to_vec()), &spec, 1e-9));
        let stars = AlternativeNeighbourhoods::stars_only(net).unwrap();
        assert!(check_alt_kirchhoff(net, &stars, &FlowVector(CONSERVING_ONLY_FLOW.to_vec()), &spec, 1e-9));
        assert!(!check_alt_kirchhoff(net, &stars, &FlowVector(vec![1.0; 5]), &spec, 1e-9));
    }

    #[test]
    fn alt_flow_on_crn_alt() {
        let (_, masg, pert) = crn_alt();
        let net = masg.network();
        let spec = masg.source_spec(&pert).unwrap();
        let alt = build_alternative_neighbourhoods(&masg).unwrap();
        let res = alt_electrical_flow(net, &alt, &spec).unwrap();
        for (g, w) in res.flow.0.iter().zip(MASG_FLOW) {
            assert_relative_eq!(*g, w, epsilon = 1e-9);
        }
        assert_relative_eq!(res.alt_resistance, 0.5, epsilon = 1e-9);
        assert!(res.alt_escape_time >= 0.0);
        // Ohm and boundary clauses
        for (e, &(u, _)) in net.edges().iter().enumerate() {
            let (pu, pv) = (res.edge_potentials[2 * e], res.edge_potentials[2 * e + 1]);
            assert_relative_eq!(pu - pv, res.flow.0[e] / net.weight(e), epsilon = 1e-9);
            if net.vertex_name(u) == "A" {
                assert_relative_eq!(pu, 0.5, epsilon = 1e-12);
            }
            if net.vertex_name(u) == "C" {
                assert_eq!(pu, 0.0);
            }
        }
        let plain = electrical_flow(net, &spec).unwrap();
        assert!(res.alt_resistance > plain.effective_resistance);
        assert!(res.alt_resistance > flow_energy(net, &FlowVector(CONSERVING_ONLY_FLOW.to_vec())));
    }

    #[test]
    fn stars_only_reduces_to_electrical_flow() {
        let net = presets::tailed_triangle();
        let spec = SourceSpec::single(&net, 0, [3]).unwrap();
        let stars = AlternativeNeighbourhoods::stars_only(&net).unwrap();
        let res = alt_electrical_flow(&net, &stars, &spec).unwrap();
        let ef = electrical_flow(&net, &spec).unwrap();
        assert_relative_eq!(res.alt_resistance, ef.effective_resistance, epsilon = 1e-9);
        let et = crate::electric::escape_time_from(&net, &ef);
        assert_relative_eq!(res.alt_escape_time, et, epsilon = 1e-9);
        let u1 = build_alt_walk_operator(&net, &stars, &spec).unwrap();
        let u2 = build_walk_operator(&net, &spec).unwrap();
        assert!((u1.unitary() - u2.unitary()).norm() < 1e-12);
    }

    #[test]
    fn rigidity_cases() {
        let (_, masg, pert) = crn_alt();
        let spec = masg.source_spec(&pert).unwrap();
        let report = check_rigidity(masg.network(), &RatioVector::from_masg(&masg), &spec).unwrap();
        assert!(report.rigid);
        assert_eq!(report.solution_dimension, 1);
        for (g, w) in report.witness_flow.unwrap().0.iter().zip(MASG_FLOW) {
            assert_relative_eq!(*g, w, epsilon = 1e-9);
        }

        let names = ["s", "r", "q", "t"].map(String::from).to_vec();
        let e = |a: &str, b: &str| (a.to_string(), b.to_string(), 1.0);
        let parallel = Network::new(names, vec![e("s", "r"), e("r", "t"), e("s", "q"), e("q", "t")]).unwrap();
        let spec = SourceSpec::single(&parallel, 0, [3]).unwrap();
        let mut ratios = RatioVector::default();
        for b in [1, 2] {
            ratios.ratios.insert(b, BTreeMap::from([(0, -1.0), (3, 1.0)]));
        }
        let report = check_rigidity(&parallel, &ratios, &spec).unwrap();
        assert!(!report.rigid);
        assert!(report.solution_dimension >= 2);

        let path = Network::new(
            ["a", "b", "c"].map(String::from).to_vec(),
            vec![e("a", "b"), e("b", "c")],
        )
        .unwrap();
        let spec = SourceSpec::single(&path, 0, [2]).unwrap();
        assert!(check_rigidity(&path, &RatioVector::default(), &spec).unwrap().rigid);

        let triangle = Network::new(
            ["a", "b", "c"].map(String::from).to_vec(),
            vec![e("a", "b"), e("b", "c"), e("c", "a")],
        )
        .unwrap();
        let spec = SourceSpec::single(&triangle, 0, [2]).unwrap();
        assert!(check_rigidity(&triangle, &RatioVector::default(), &spec).is_err());

        let spec = SourceSpec::single(&path, 1, [2]).unwrap();
        let mut wrong = RatioVector::default();
        wrong.ratios.insert(1, BTreeMap::from([(0, 1.0), (2, 1.0)]));
        assert!(check_rigidity(&path, &wrong, &spec).is_err());
    }

    #[test]
    fn alt_walk_eigenvectors() {
        let (_, masg, pert) = crn_alt();
        let net = masg.network();
        let spec = masg.source_spec(&pert).unwrap();
        let alt = build_alternative_neighbourhoods(&masg).unwrap();
        let u = build_alt_walk_operator(net, &alt, &spec).unwrap();
        assert!(u.unitarity_error() < 1e-9);
        let good = flow_state(net, &FlowVector(MASG_FLOW.to_vec())).unwrap();
        assert!((u.apply(&good).amplitudes() - good.amplitudes()).norm() < 1e-9);
        let bad = flow_state(net, &FlowVector(CONSERVING_ONLY_FLOW.to_vec())).unwrap();
        assert!((u.apply(&bad).amplitudes() - bad.amplitudes()).norm() > 1e-3);
    }

    #[test]
    fn phi_estimates() {
        let (vs, _, pert) = crn_alt();
        let exact = estimate_phi(&vs, &pert, 0.1, Mode::Exact).unwrap();
        assert_relative_eq!(exact.value, 0.5, epsilon = 1e-9);
        assert_relative_eq!(exact.gibbs, 0.5, epsilon = 1e-9);
        let params = SimulationParams { bits: 8, shots: 4096, seed: 1 };
        let sim = estimate_phi(&vs, &pert, 0.1, Mode::Simulate(params)).unwrap();
        assert!((sim.value - 0.5).abs() <= 0.05, "{sim:?}");

        let zero = Perturbation::new(&vs, [], ["C"]).unwrap();
        assert!(estimate_phi(&vs, &zero, 0.1, Mode::Exact).is_err());
    }

    #[test]
    fn flux_sampling() {
        let (vs, _, pert) = crn_alt();
        let out = sample_flux_contribution(&vs, &pert, 0.1, 2000, 4, Mode::Exact).unwrap();
        let sd = (0.25f64 / 2000.0).sqrt();
        for c in &out.per_reaction {
            assert_relative_eq!(c.j2_over_g, 0.25, epsilon = 1e-9);
            assert!((c.frequency - 0.5).abs() <= 3.0 * sd);
        }
        assert!((out.total_estimate() - out.phi_estimate).abs() <= 0.1 * out.phi_estimate);
        let again = sample_flux_contribution(&vs, &pert, 0.1, 2000, 4, Mode::Exact).unwrap();
        assert_eq!(out, again);
    }
}
