//! Edge-space quantum walks on electrical networks, simulated with dense
//! matrices.
//!
//! Ordered pair `(u, v)` of edge `e = (a, b)` lives at index `2e` when
//! `(u, v) = (a, b)` and `2e + 1` otherwise. All states are real.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::electric::{electrical_flow, FlowVector, Network, SourceSpec};
use crate::error::{Error, Result};
use crate::linalg::{null_space, orthonormal_columns, projector, RANK_TOL};

/// Eigenvalue clustering tolerance for the +1 eigenspace.
pub const EIGEN_TOL: f64 = 1e-9;
/// Exact-mode detection threshold on the +1 overlap.
pub const DETECT_TOL: f64 = 1e-9;
pub const MAX_PE_BITS: u32 = 12;
/// Cap on `dimension * 2^bits` for simulated phase estimation.
pub const MAX_PE_ENTRIES: usize = 1 << 21;
pub const DEFAULT_PE_BITS: u32 = 8;
pub const DEFAULT_SHOTS: u64 = 1024;

/// Index of the ordered pair `(from, other endpoint)` of edge `e`.
pub fn pair_index(net: &Network, e: usize, from: usize) -> usize {
    if net.edge(e).0 == from {
        2 * e
    } else {
        2 * e + 1
    }
}

/// A real amplitude vector over the `2|E|` ordered pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSpaceState {
    amplitudes: DVector<f64>,
}

impl EdgeSpaceState {
    pub fn zeros(net: &Network) -> Self {
        Self {
            amplitudes: DVector::zeros(2 * net.edge_count()),
        }
    }

    pub fn from_vector(amplitudes: DVector<f64>) -> Self {
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &DVector<f64> {
        &self.amplitudes
    }

    pub fn dimension(&self) -> usize {
        self.amplitudes.len()
    }

    /// Amplitude on `(u, v)`, if `{u, v}` is an edge.
    pub fn amplitude(&self, net: &Network, u: usize, v: usize) -> Option<f64> {
        net.incident(u)
            .iter()
            .find(|&&(_, w)| w == v)
            .map(|&(e, _)| self.amplitudes[pair_index(net, e, u)])
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.amplitudes.dot(&other.amplitudes)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidArgument("cannot normalize the zero state".into()));
        }
        Ok(Self {
            amplitudes: &self.amplitudes / n,
        })
    }

    /// Born-rule probabilities per ordered pair.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }

    /// Probability of measuring each (unordered) edge.
    pub fn edge_probabilities(&self) -> Vec<f64> {
        self.amplitudes
            .as_slice()
            .chunks(2)
            .map(|c| c[0] * c[0] + c[1] * c[1])
            .collect()
    }

    /// `{"(u,v)": amplitude}` over nonzero amplitudes.
    pub fn to_json(&self, net: &Network) -> Value {
        let mut map = Map::new();
        for (e, &(a, b)) in net.edges().iter().enumerate() {
            for (idx, (u, v)) in [(2 * e, (a, b)), (2 * e + 1, (b, a))] {
                let amp = self.amplitudes[idx];
                if amp != 0.0 {
                    map.insert(
                        format!("({},{})", net.vertex_name(u), net.vertex_name(v)),
                        Value::from(amp),
                    );
                }
            }
        }
        Value::Object(map)
    }
}

/// `1/2 || |a><a| - |b><b| ||_1` for unit vectors.
pub fn trace_distance(a: &EdgeSpaceState, b: &EdgeSpaceState) -> f64 {
    let diff = (a.amplitudes() - b.amplitudes()).norm();
    let sum = (a.amplitudes() + b.amplitudes()).norm();
    (0.5 * diff * sum).min(1.0)
}

/// Signed star state: `+sqrt(w_e/w_u)` on `(u, v)` if `e` leaves `u`,
/// `-sqrt(w_e/w_u)` if it enters.
pub fn star_state(net: &Network, u: usize) -> Result<EdgeSpaceState> {
    if net.degree(u) == 0 {
        return Err(Error::InvalidNetwork(format!(
            "vertex `{}` is isolated and has no star state",
            net.vertex_name(u)
        )));
    }
    let wu = net.weighted_degree(u);
    let mut state = EdgeSpaceState::zeros(net);
    for &(e, _) in net.incident(u) {
        state.amplitudes[pair_index(net, e, u)] = net.orientation_sign(e, u) * (net.weight(e) / wu).sqrt();
    }
    Ok(state)
}

/// `theta_e / sqrt(2 E(theta) w_e)` on both orderings of every edge.
pub fn flow_state(net: &Network, flow: &FlowVector) -> Result<EdgeSpaceState> {
    let energy = crate::electric::flow_energy(net, flow);
    if energy == 0.0 {
        return Err(Error::InvalidArgument("zero flow has no flow state".into()));
    }
    let mut state = EdgeSpaceState::zeros(net);
    for (e, &theta) in flow.0.iter().enumerate() {
        let amp = theta / (2.0 * energy * net.weight(e)).sqrt();
        state.amplitudes[2 * e] = amp;
        state.amplitudes[2 * e + 1] = amp;
    }
    Ok(state)
}

/// Orthonormal basis of the antisymmetric subspace, one column per edge.
pub fn antisymmetric_basis(net: &Network) -> DMatrix<f64> {
    let m = net.edge_count();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut b = DMatrix::zeros(2 * m, m);
    for e in 0..m {
        b[(2 * e, e)] = h;
        b[(2 * e + 1, e)] = -h;
    }
    b
}

fn symmetrize(state: &mut DVector<f64>) {
    for e in 0..state.len() / 2 {
        let avg = 0.5 * (state[2 * e] + state[2 * e + 1]);
        state[2 * e] = avg;
        state[2 * e + 1] = avg;
    }
}

/// Initial state: the normalised symmetric part of
/// `sum_{u in supp sigma} sqrt(w_u) psi_star(u)`. For a single source this is
/// `sqrt(2) (I - Pi_B) psi_star(s)`.
pub fn initial_state(net: &Network, spec: &SourceSpec) -> Result<EdgeSpaceState> {
    if spec.sigma().is_empty() {
        return Err(Error::SourceSpec("no source vertex".into()));
    }
    let mut acc = DVector::zeros(2 * net.edge_count());
    for &(u, _) in spec.sigma() {
        acc += star_state(net, u)?.amplitudes * net.weighted_degree(u).sqrt();
    }
    symmetrize(&mut acc);
    EdgeSpaceState::from_vector(acc).normalized()
}

/// Generators of the two walk subspaces and the initial state.
#[derive(Clone, Debug)]
pub struct WalkSpaces {
    /// Star states of the internal, non-isolated vertices.
    pub star_basis: Vec<(usize, EdgeSpaceState)>,
    pub antisym_basis: Vec<EdgeSpaceState>,
    pub psi0: EdgeSpaceState,
}

impl WalkSpaces {
    pub fn build(net: &Network, spec: &SourceSpec) -> Result<Self> {
        let star_basis = (0..net.vertex_count())
            .filter(|&u| spec.is_internal(u) && net.degree(u) > 0)
            .map(|u| Ok((u, star_state(net, u)?)))
            .collect::<Result<Vec<_>>>()?;
        let b = antisymmetric_basis(net);
        let antisym_basis = b
            .column_iter()
            .map(|c| EdgeSpaceState::from_vector(c.into_owned()))
            .collect();
        Ok(Self {
            star_basis,
            antisym_basis,
            psi0: initial_state(net, spec)?,
        })
    }

    pub fn star_matrix(&self, dim: usize) -> DMatrix<f64> {
        columns(dim, self.star_basis.iter().map(|(_, s)| s))
    }

    pub fn antisym_matrix(&self, dim: usize) -> DMatrix<f64> {
        columns(dim, self.antisym_basis.iter())
    }
}

pub(crate) fn columns<'a>(dim: usize, states: impl Iterator<Item = &'a EdgeSpaceState>) -> DMatrix<f64> {
    let cols: Vec<&EdgeSpaceState> = states.collect();
    DMatrix::from_fn(dim, cols.len(), |i, j| cols[j].amplitudes[i])
}

/// `U = (2 Pi_A - I)(2 Pi_B - I)`, stored with its two reflections.
#[derive(Clone, Debug)]
pub struct WalkOperator {
    reflect_a: DMatrix<f64>,
    reflect_b: DMatrix<f64>,
    unitary: DMatrix<f64>,
}

impl WalkOperator {
    pub fn from_reflections(reflect_a: DMatrix<f64>, reflect_b: DMatrix<f64>) -> Self {
        let unitary = &reflect_a * &reflect_b;
        Self {
            reflect_a,
            reflect_b,
            unitary,
        }
    }

    /// Builds the operator from (not necessarily orthonormal) generators of
    /// the two subspaces, given as columns.
    pub fn from_generators(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Self {
        let dim = a.nrows();
        let reflection = |g: &DMatrix<f64>| {
            let q = orthonormal_columns(g, RANK_TOL);
            projector(&q) * 2.0 - DMatrix::identity(dim, dim)
        };
        Self::from_reflections(reflection(a), reflection(b))
    }

    pub fn unitary(&self) -> &DMatrix<f64> {
        &self.unitary
    }

    pub fn dimension(&self) -> usize {
        self.unitary.nrows()
    }

    /// `|| U^T U - I ||`.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dimension();
        (self.unitary.transpose() * &self.unitary - DMatrix::identity(d, d)).norm()
    }

    /// `|| R^2 - I ||` for both reflections.
    pub fn reflection_errors(&self) -> (f64, f64) {
        let d = self.dimension();
        let err = |r: &DMatrix<f64>| (r * r - DMatrix::identity(d, d)).norm();
        (err(&self.reflect_a), err(&self.reflect_b))
    }

    pub fn apply(&self, state: &EdgeSpaceState) -> EdgeSpaceState {
        EdgeSpaceState::from_vector(&self.unitary * &state.amplitudes)
    }

    /// Orthonormal basis of the +1 eigenspace.
    pub fn plus_one_eigenspace(&self) -> DMatrix<f64> {
        let d = self.dimension();
        null_space(&(&self.unitary - DMatrix::identity(d, d)), EIGEN_TOL)
    }
}

/// The ordinary walk operator: stars of internal vertices against the
/// antisymmetric subspace.
pub fn build_walk_operator(net: &Network, spec: &SourceSpec) -> Result<WalkOperator> {
    let dim = 2 * net.edge_count();
    let stars = (0..net.vertex_count())
        .filter(|&u| spec.is_internal(u) && net.degree(u) > 0)
        .map(|u| star_state(net, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(WalkOperator::from_generators(
        &columns(dim, stars.iter()),
        &antisymmetric_basis(net),
    ))
}

/// Squared norm of the projection of `psi0` onto the +1 eigenspace of `U`.
pub fn plus_one_overlap(u: &WalkOperator, psi0: &EdgeSpaceState) -> f64 {
    let basis = u.plus_one_eigenspace();
    (basis.transpose() * psi0.amplitudes()).norm_squared()
}

/// Exact outcome distribution of textbook phase estimation with `bits`
/// ancilla qubits.
#[derive(Clone, Debug)]
pub struct PhaseEstimation {
    bits: u32,
    probabilities: Vec<f64>,
    zero_branch: DVector<f64>,
}

/// Simulates phase estimation of `u` on `psi0`. The outcome-`k` branch is
/// `(1/N) sum_x e^{-2 pi i x k / N} U^x psi0` with `N = 2^bits`.
pub fn simulate_phase_estimation(u: &WalkOperator, psi0: &EdgeSpaceState, bits: u32) -> Result<PhaseEstimation> {
    if bits == 0 || bits > MAX_PE_BITS {
        return Err(Error::InvalidArgument(format!(
            "phase estimation bits must be in 1..={MAX_PE_BITS}, got {bits}"
        )));
    }
    let dim = u.dimension();
    let n = 1usize << bits;
    if dim.saturating_mul(n) > MAX_PE_ENTRIES {
        return Err(Error::TooLarge(format!(
            "phase estimation needs {dim} x {n} amplitudes, cap is {MAX_PE_ENTRIES}"
        )));
    }
    let mut data = vec![Complex64::new(0.0, 0.0); dim * n];
    let mut v = psi0.amplitudes().clone();
    for x in 0..n {
        for i in 0..dim {
            data[i * n + x] = Complex64::new(v[i], 0.0);
        }
        if x + 1 < n {
            v = u.unitary() * v;
        }
    }
    if dim > 0 {
        FftPlanner::new().plan_fft_forward(n).process(&mut data);
    }
    let scale = 1.0 / (n as f64);
    let mut probabilities = vec![0.0; n];
    for i in 0..dim {
        for (k, p) in probabilities.iter_mut().enumerate() {
            *p += (data[i * n + k] * scale).norm_sqr();
        }
    }
    let zero_branch = DVector::from_iterator(dim, (0..dim).map(|i| data[i * n].re * scale));
    Ok(PhaseEstimation {
        bits,
        probabilities,
        zero_branch,
    })
}

impl PhaseEstimation {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn zero_probability(&self) -> f64 {
        self.probabilities[0]
    }

    /// The normalised state left behind when the register reads 0.
    pub fn zero_branch_state(&self) -> Result<EdgeSpaceState> {
        EdgeSpaceState::from_vector(self.zero_branch.clone()).normalized()
    }

    /// Outcome counts over `shots` measurements.
    pub fn sample(&self, shots: u64, seed: u64) -> Result<Vec<u64>> {
        let mut counts = vec![0; self.probabilities.len()];
        let dist = WeightedIndex::new(&self.probabilities)
            .map_err(|e| Error::InvalidArgument(format!("bad outcome distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..shots {
            counts[dist.sample(&mut rng)] += 1;
        }
        Ok(counts)
    }
}

/// Knobs of simulate mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SimulationParams {
    pub bits: u32,
    pub shots: u64,
    pub seed: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            bits: DEFAULT_PE_BITS,
            shots: DEFAULT_SHOTS,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    /// Spectral computation, no sampling.
    Exact,
    /// Phase estimation followed by shot sampling.
    Simulate(SimulationParams),
}

/// Sampled estimate of the probability that phase estimation reads 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZeroEstimate {
    pub probability: f64,
    pub zero_count: u64,
    pub shots: u64,
    pub frequency: f64,
}

pub fn estimate_zero_probability(
    u: &WalkOperator,
    psi0: &EdgeSpaceState,
    params: &SimulationParams,
) -> Result<ZeroEstimate> {
    if params.shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let pe = simulate_phase_estimation(u, psi0, params.bits)?;
    let counts = pe.sample(params.shots, params.seed)?;
    Ok(ZeroEstimate {
        probability: pe.zero_probability(),
        zero_count: counts[0],
        shots: params.shots,
        frequency: counts[0] as f64 / params.shots as f64,
    })
}

/// Probability of reading 0 on a single edge, the instance with `R w_s = 1`.
pub fn calibration_constant(bits: u32) -> Result<f64> {
    let net = Network::new(
        vec!["s".into(), "t".into()],
        vec![("s".into(), "t".into(), 1.0)],
    )?;
    let spec = SourceSpec::single(&net, 0, [1])?;
    let u = build_walk_operator(&net, &spec)?;
    let psi0 = initial_state(&net, &spec)?;
    Ok(simulate_phase_estimation(&u, &psi0, bits)?.zero_probability())
}

/// Simulate-mode detection threshold `1 / (4 R_ub W)`, with
/// `R_ub = sum_e 1/w_e` bounding every effective resistance.
pub fn detection_threshold(net: &Network) -> f64 {
    let r_ub: f64 = net.weights().iter().map(|w| 1.0 / w).sum();
    1.0 / (4.0 * r_ub * net.total_weight())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectOutcome {
    pub answer: bool,
    pub overlap: f64,
    pub threshold: f64,
    pub sampled: Option<ZeroEstimate>,
}

/// Decides whether `M` is nonempty, under the promise that it is either
/// empty or reachable from the sources.
pub fn detect(net: &Network, spec: &SourceSpec, mode: Mode) -> Result<DetectOutcome> {
    if spec.sigma().is_empty() {
        return Err(Error::SourceSpec("no source vertex".into()));
    }
    if !spec.marked().is_empty() {
        spec.check_reachable(net)?;
    }
    let u = build_walk_operator(net, spec)?;
    let psi0 = initial_state(net, spec)?;
    let overlap = plus_one_overlap(&u, &psi0);
    match mode {
        Mode::Exact => Ok(DetectOutcome {
            answer: overlap > DETECT_TOL,
            overlap,
            threshold: DETECT_TOL,
            sampled: None,
        }),
        Mode::Simulate(params) => {
            let threshold = detection_threshold(net);
            let est = estimate_zero_probability(&u, &psi0, &params)?;
            Ok(DetectOutcome {
                answer: est.frequency > threshold,
                overlap,
                threshold,
                sampled: Some(est),
            })
        }
    }
}

/// Probability of `find` returning each marked vertex.
pub fn find_distribution(net: &Network, spec: &SourceSpec) -> Result<Vec<(usize, f64)>> {
    let state = find_state(net, spec)?;
    let probs = state.probabilities();
    let total: f64 = hits(net, spec, &probs).iter().map(|(_, p)| p).sum();
    Ok(hits(net, spec, &probs)
        .into_iter()
        .map(|(m, p)| (m, p / total))
        .collect())
}

fn find_state(net: &Network, spec: &SourceSpec) -> Result<EdgeSpaceState> {
    spec.check_reachable(net)?;
    if let Some(&m) = spec.marked().iter().find(|&&m| net.degree(m) == 0) {
        return Err(Error::Disconnected(format!(
            "marked vertex `{}` is isolated",
            net.vertex_name(m)
        )));
    }
    let ef = electrical_flow(net, spec)?;
    flow_state(net, &ef.flow)
}

/// The marked endpoint of ordered pair `idx`, preferring its head.
fn marked_endpoint(net: &Network, spec: &SourceSpec, idx: usize) -> Option<usize> {
    let (a, b) = net.edge(idx / 2);
    let (u, v) = if idx.is_multiple_of(2) { (a, b) } else { (b, a) };
    [v, u].into_iter().find(|&x| spec.is_marked(x))
}

fn hits(net: &Network, spec: &SourceSpec, probs: &[f64]) -> Vec<(usize, f64)> {
    let mut per: BTreeMap<usize, f64> = spec.marked().iter().map(|&m| (m, 0.0)).collect();
    for (idx, &p) in probs.iter().enumerate() {
        if let Some(m) = marked_endpoint(net, spec, idx) {
            *per.get_mut(&m).expect("marked vertex") += p;
        }
    }
    per.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FindOutcome {
    pub vertex: usize,
    pub attempts: u64,
    pub marked_probability: f64,
}

/// Returns a marked vertex by repeatedly measuring the electrical flow state
/// until an ordered pair touching `M` is observed, giving up after
/// `10 * ceil(1/p)` attempts.
pub fn find(net: &Network, spec: &SourceSpec, seed: u64) -> Result<FindOutcome> {
    let state = find_state(net, spec)?;
    let probs = state.probabilities();
    let p: f64 = hits(net, spec, &probs).iter().map(|(_, q)| q).sum();
    if p <= 0.0 {
        return Err(Error::Infeasible("flow state has no weight next to M".into()));
    }
    let cap = 10 * (1.0 / p).ceil() as u64;
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| Error::InvalidArgument(format!("bad flow-state distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=cap {
        if let Some(vertex) = marked_endpoint(net, spec, dist.sample(&mut rng)) {
            return Ok(FindOutcome {
                vertex,
                attempts: attempt,
                marked_probability: p,
            });
        }
    }
    Err(Error::Infeasible(format!("no marked vertex observed in {cap} attempts")))
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {eps}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResistanceEstimate {
    pub value: f64,
    pub exact: f64,
    pub calibration: Option<f64>,
    pub sampled: Option<ZeroEstimate>,
}

/// Inverts a sampled zero frequency through the single-edge calibration.
pub fn invert_zero_frequency(est: &ZeroEstimate, bits: u32) -> Result<(f64, f64)> {
    if est.zero_count == 0 {
        return Err(Error::Infeasible(format!(
            "phase estimation never read 0 in {} shots",
            est.shots
        )));
    }
    let kappa = calibration_constant(bits)?;
    Ok((kappa / est.frequency, kappa))
}

/// Estimates `R_{s,M} w_s`.
pub fn estimate_r_ws(net: &Network, s: usize, marked: &[usize], eps: f64, mode: Mode) -> Result<ResistanceEstimate> {
    check_epsilon(eps)?;
    let spec = SourceSpec::single(net, s, marked.iter().copied())?;
    spec.check_reachable(net)?;
    let exact = electrical_flow(net, &spec)?.effective_resistance * net.weighted_degree(s);
    match mode {
        Mode::Exact => Ok(ResistanceEstimate {
            value: exact,
            exact,
            calibration: None,
            sampled: None,
        }),
        Mode::Simulate(params) => {
            let u = build_walk_operator(net, &spec)?;
            let psi0 = initial_state(net, &spec)?;
            let est = estimate_zero_probability(&u, &psi0, &params)?;
            let (value, kappa) = invert_zero_frequency(&est, params.bits)?;
            Ok(ResistanceEstimate {
                value,
                exact,
                calibration: Some(kappa),
                sampled: Some(est),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedFlowState {
    pub state: EdgeSpaceState,
    pub target: EdgeSpaceState,
    pub trace_distance: f64,
    pub within_tolerance: bool,
    /// Probability that the register read 0 (simulate mode).
    pub success_probability: Option<f64>,
}

/// Prepares the electrical flow state, exactly or as the post-selected
/// zero branch of simulated phase estimation.
pub fn prepare_flow_state(net: &Network, s: usize, marked: &[usize], eps: f64, mode: Mode) -> Result<PreparedFlowState> {
    check_epsilon(eps)?;
    let spec = SourceSpec::single(net, s, marked.iter().copied())?;
    spec.check_reachable(net)?;
    let target = flow_state(net, &electrical_flow(net, &spec)?.flow)?;
    let (state, success_probability) = match mode {
        Mode::Exact => (target.clone(), None),
        Mode::Simulate(params) => {
            let u = build_walk_operator(net, &spec)?;
            let psi0 = initial_state(net, &spec)?;
            let pe = simulate_phase_estimation(&u, &psi0, params.bits)?;
            let mut state = pe.zero_branch_state()?;
            if state.inner(&target) < 0.0 {
                state = EdgeSpaceState::from_vector(-state.amplitudes);
            }
            (state, Some(pe.zero_probability()))
        }
    };
    let trace_distance = trace_distance(&state, &target);
    Ok(PreparedFlowState {
        state,
        target,
        trace_distance,
        within_tolerance: trace_distance <= eps,
        success_probability,
    })
}

/// Measures `state` `shots` times and returns per-edge counts.
pub fn measure_edges(state: &EdgeSpaceState, shots: u64, seed: u64) -> Result<Vec<u64>> {
    let probs = state.edge_probabilities();
    let mut counts = vec![0; probs.len()];
    let dist = WeightedIndex::new(&probs)
        .map_err(|e| Error::InvalidArgument(format!("bad state distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..shots {
        counts[dist.sample(&mut rng)] += 1;
    }
    Ok(counts)
}

/// The algorithm whose cost expression is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `S + sqrt(R W) U*`
    Detect,
    /// `S + sqrt(R W) log^3|M| U*`
    Find,
    /// `(1/eps)(S + (1/eps)(ET + log(R w_s)) U*)`
    EstimateResistance,
    /// `S + (1/eps^2)(sqrt(ET) + log(R w_s)) U*`
    PrepareFlowState,
    /// `S + sqrt(Phi W)` with `W = sum_r nu_r^2 G_r`
    DetectSpecies,
    /// `S + sqrt(Phi W) log^3|M|`
    FindSpecies,
    /// `(1/eps)(S + (1/eps)(ET_alt + log(R_alt w_s)) U*)`
    EstimateAltResistance,
    /// `S + (1/eps^2)(sqrt(ET_alt) + log(R_alt w_s)) U*`
    PrepareAltFlowState,
    /// `(1/eps)(S + (1/eps)(ET_alt + log(Phi w_s)) U*)`
    EstimatePhi,
    /// `S + (1/eps^2)(sqrt(ET_alt) + log(Phi w_s)) U*`
    PrepareMasgFlowState,
    /// `(1/eps)(S + (1/eps^2)(sqrt(ET_alt) + log(Phi w_s)) U*)`
    SampleFlux,
}

impl CostKind {
    pub const ALL: [CostKind; 11] = [
        CostKind::Detect,
        CostKind::Find,
        CostKind::EstimateResistance,
        CostKind::PrepareFlowState,
        CostKind::DetectSpecies,
        CostKind::FindSpecies,
        CostKind::EstimateAltResistance,
        CostKind::PrepareAltFlowState,
        CostKind::EstimatePhi,
        CostKind::PrepareMasgFlowState,
        CostKind::SampleFlux,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Detect => "detect",
            CostKind::Find => "find",
            CostKind::EstimateResistance => "estimate_resistance",
            CostKind::PrepareFlowState => "prepare_flow_state",
            CostKind::DetectSpecies => "detect_species",
            CostKind::FindSpecies => "find_species",
            CostKind::EstimateAltResistance => "estimate_alt_resistance",
            CostKind::PrepareAltFlowState => "prepare_alt_flow_state",
            CostKind::EstimatePhi => "estimate_phi",
            CostKind::PrepareMasgFlowState => "prepare_masg_flow_state",
            CostKind::SampleFlux => "sample_flux",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cost formula `{name}`")))
    }

    /// Parameter names the expression reads.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            CostKind::Detect => &["S", "U_star", "R", "W"],
            CostKind::Find => &["S", "U_star", "R", "W", "M"],
            CostKind::EstimateResistance | CostKind::PrepareFlowState => {
                &["S", "U_star", "epsilon", "ET", "R", "w_s"]
            }
            CostKind::DetectSpecies => &["S", "Phi", "W"],
            CostKind::FindSpecies => &["S", "Phi", "W", "M"],
            CostKind::EstimateAltResistance | CostKind::PrepareAltFlowState => {
                &["S", "U_star", "epsilon", "ET_alt", "R_alt", "w_s"]
            }
            CostKind::EstimatePhi | CostKind::PrepareMasgFlowState | CostKind::SampleFlux => {
                &["S", "U_star", "epsilon", "ET_alt", "Phi", "w_s"]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub formula_name: &'static str,
    pub value: f64,
    pub parameters: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// `log^3 |M|`, floored at 1.
pub fn polylog_factor(marked: f64) -> f64 {
    marked.ln().powi(3).max(1.0)
}

/// Evaluates a cost expression with all constants set to 1. Extra
/// parameters are carried through; `ET > R W` is reported as a warning.
pub fn cost_estimate(kind: CostKind, parameters: &BTreeMap<String, f64>) -> Result<CostEstimate> {
    let get = |name: &str| {
        parameters
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    };
    for name in kind.parameters() {
        let v = get(name)?;
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter `{name}` is not finite")));
        }
    }
    let s = get("S").unwrap_or(0.0);
    let u = get("U_star").unwrap_or(0.0);
    let eps = get("epsilon").unwrap_or(1.0);
    let walk = |r: f64, w: f64| (r * w).sqrt();
    let estimate = |et: f64, rw: f64| (s + (et + rw.ln()) * u / eps) / eps;
    let prepare = |et: f64, rw: f64| s + (et.sqrt() + rw.ln()) * u / (eps * eps);
    let value = match kind {
        CostKind::Detect => s + walk(get("R")?, get("W")?) * u,
        CostKind::Find => s + walk(get("R")?, get("W")?) * polylog_factor(get("M")?) * u,
        CostKind::EstimateResistance => estimate(get("ET")?, get("R")? * get("w_s")?),
        CostKind::PrepareFlowState => prepare(get("ET")?, get("R")? * get("w_s")?),
        CostKind::DetectSpecies => s + walk(get("Phi")?, get("W")?),
        CostKind::FindSpecies => s + walk(get("Phi")?, get("W")?) * polylog_factor(get("M")?),
        CostKind::EstimateAltResistance => estimate(get("ET_alt")?, get("R_alt")? * get("w_s")?),
        CostKind::PrepareAltFlowState => prepare(get("ET_alt")?, get("R_alt")? * get("w_s")?),
        CostKind::EstimatePhi => estimate(get("ET_alt")?, get("Phi")? * get("w_s")?),
        CostKind::PrepareMasgFlowState => prepare(get("ET_alt")?, get("Phi")? * get("w_s")?),
        CostKind::SampleFlux => prepare(get("ET_alt")?, get("Phi")? * get("w_s")?) / eps,
    };
    let mut warnings = Vec::new();
    if let (Ok(et), Ok(r), Ok(w)) = (get("ET"), get("R"), get("W")) {
        if et > r * w {
            warnings.push(format!("escape time {et} exceeds R*W = {}", r * w));
        }
    }
    if matches!(kind, CostKind::Find | CostKind::FindSpecies) && get("M")? < 3.0 {
        warnings.push("log^3|M| < 1, polylog factor floored at 1".into());
    }
    Ok(CostEstimate {
        formula_name: kind.name(),
        value,
        parameters: parameters.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electric::verify_kirchhoff;
    use crate::presets;
    use approx::assert_relative_eq;

    fn crn_alt_spec(net: &Network, marked: &[&str]) -> SourceSpec {
        SourceSpec::named(net, [("A", 1.0)], marked.iter().copied()).unwrap()
    }

    #[test]
    fn star_state_of_r3() {
        let net = presets::crn_alt_masg_network();
        let r3 = net.vertex_index("r3").unwrap();
        let star = star_state(&net, r3).unwrap();
        let a = net.vertex_index("A").unwrap();
        let b = net.vertex_index("B").unwrap();
        let c = net.vertex_index("C").unwrap();
        assert_relative_eq!(star.amplitude(&net, r3, a).unwrap(), -0.5, epsilon = 1e-15);
        assert_relative_eq!(star.amplitude(&net, r3, b).unwrap(), -0.5, epsilon = 1e-15);
        assert_relative_eq!(star.amplitude(&net, r3, c).unwrap(), -0.5 * 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(star.norm(), 1.0, epsilon = 1e-15);
        for s in [a, b, c] {
            assert!(star_state(&net, s).unwrap().amplitudes().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn degree_one_and_isolated_vertices() {
        let net = presets::tailed_triangle();
        let star = star_state(&net, 0).unwrap();
        assert_eq!(star.amplitudes().iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(star.amplitude(&net, 0, 1), Some(1.0));
        let lonely = Network::new_allow_disconnected(vec!["a".into(), "b".into(), "c".into()], vec![("a".into(), "b".into(), 1.0)]).unwrap();
        assert!(star_state(&lonely, 2).is_err());
    }

    #[test]
    fn tailed_triangle_flow_state() {
        let net = presets::tailed_triangle();
        let spec = SourceSpec::single(&net, 0, [3]).unwrap();
        let ef = electrical_flow(&net, &spec).unwrap();
        let state = flow_state(&net, &ef.flow).unwrap();
        let norm = (2.0 * 11.0 / 3.0f64).sqrt();
        // theta/sqrt(w) = (1, (1/3)/(1/2), (2/3)/(1/2), (1/3)/(1/2))
        let expected = [1.0, 2.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0].map(|x| x / norm);
        for e in 0..4 {
            assert_relative_eq!(state.amplitudes()[2 * e], state.amplitudes()[2 * e + 1]);
            assert_relative_eq!(state.amplitudes()[2 * e], expected[e], epsilon = 1e-12);
        }
        assert_relative_eq!(state.norm(), 1.0, epsilon = 1e-12);
        let scaled = flow_state(&net, &ef.flow.scaled(3.5)).unwrap();
        assert_relative_eq!((scaled.amplitudes() - state.amplitudes()).norm(), 0.0, epsilon = 1e-12);
        assert!(flow_state(&net, &FlowVector::zeros(4)).is_err());
    }

    #[test]
    fn masg_flow_state_is_orthogonal_to_reaction_stars() {
        let net = presets::crn_alt_masg_network();
        let flow = FlowVector(vec![0.5, 0.5, -0.5, 0.5, -1.0]);
        let spec = crn_alt_spec(&net, &["C"]);
        assert!(verify_kirchhoff(&net, &flow, &spec, 1e-12).valid);
        let state = flow_state(&net, &flow).unwrap();
        for r in ["r1", "r3", "B"] {
            let star = star_state(&net, net.vertex_index(r).unwrap()).unwrap();
            assert!(star.inner(&state).abs() < 1e-12);
        }
        let b = antisymmetric_basis(&net);
        assert!((b.transpose() * state.amplitudes()).norm() < 1e-12);
    }

    #[test]
    fn walk_operator_structure() {
        let net = presets::crn_alt_masg_network();
        let spec = crn_alt_spec(&net, &["C"]);
        let u = build_walk_operator(&net, &spec).unwrap();
        assert_eq!(u.dimension(), 10);
        assert!(u.unitarity_error() < 1e-9);
        let (ea, eb) = u.reflection_errors();
        assert!(ea < 1e-9 && eb < 1e-9);
        let spaces = WalkSpaces::build(&net, &spec).unwrap();
        let starred: Vec<&str> = spaces.star_basis.iter().map(|(v, _)| net.vertex_name(*v)).collect();
        assert_eq!(starred, vec!["B", "r1", "r3"]);
        assert!((spaces.antisym_matrix(10).transpose() * spaces.psi0.amplitudes()).norm() < 1e-12);
        assert_relative_eq!(spaces.psi0.norm(), 1.0, epsilon = 1e-12);

        let ef = electrical_flow(&net, &spec).unwrap();
        let state = flow_state(&net, &ef.flow).unwrap();
        assert!((u.apply(&state).amplitudes() - state.amplitudes()).norm() < 1e-9);
    }

    #[test]
    fn two_vertex_graph_has_empty_star_space() {
        let net = Network::new(vec!["s".into(), "t".into()], vec![("s".into(), "t".into(), 2.0)]).unwrap();
        let spec = SourceSpec::single(&net, 0, [1]).unwrap();
        let u = build_walk_operator(&net, &spec).unwrap();
        assert!(u.unitarity_error() < 1e-12);
        let psi0 = initial_state(&net, &spec).unwrap();
        assert_relative_eq!(plus_one_overlap(&u, &psi0), 1.0, epsilon = 1e-9);
        assert_relative_eq!(calibration_constant(5).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_matches_inverse_resistance_times_degree() {
        let net = presets::crn_alt_masg_network();
        let spec = crn_alt_spec(&net, &["C"]);
        let u = build_walk_operator(&net, &spec).unwrap();
        let psi0 = initial_state(&net, &spec).unwrap();
        let r = electrical_flow(&net, &spec).unwrap().effective_resistance;
        assert_relative_eq!(r, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(plus_one_overlap(&u, &psi0), 1.0 / (r * 6.0), epsilon = 1e-9);

        let empty = crn_alt_spec(&net, &[]);
        let u0 = build_walk_operator(&net, &empty).unwrap();
        let psi = initial_state(&net, &empty).unwrap();
        assert!(plus_one_overlap(&u0, &psi) < 1e-9);
    }

    #[test]
    fn identity_operator_reads_zero() {
        let id = DMatrix::identity(4, 4);
        let u = WalkOperator::from_generators(&id, &id);
        let psi = EdgeSpaceState::from_vector(DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]));
        assert_relative_eq!(plus_one_overlap(&u, &psi), 1.0, epsilon = 1e-12);
        let pe = simulate_phase_estimation(&u, &psi, 4).unwrap();
        assert_relative_eq!(pe.zero_probability(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn phase_estimation_approaches_overlap() {
        let net = presets::crn_alt_masg_network();
        let spec = crn_alt_spec(&net, &["C"]);
        let u = build_walk_operator(&net, &spec).unwrap();
        let psi0 = initial_state(&net, &spec).unwrap();
        let overlap = plus_one_overlap(&u, &psi0);
        let pe = simulate_phase_estimation(&u, &psi0, 8).unwrap();
        assert!((pe.zero_probability() - overlap).abs() < 0.05);
        assert_relative_eq!(pe.probabilities().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let a = pe.sample(500, 3).unwrap();
        let b = pe.sample(500, 3).unwrap();
        assert_eq!(a, b);
        assert!(simulate_phase_estimation(&u, &psi0, 13).is_err());
    }

    #[test]
    fn detect_cases() {
        let net = presets::crn_alt_masg_network();
        let yes = detect(&net, &crn_alt_spec(&net, &["C"]), Mode::Exact).unwrap();
        assert!(yes.answer);
        let no = detect(&net, &crn_alt_spec(&net, &[]), Mode::Exact).unwrap();
        assert!(!no.answer);
        let sim = Mode::Simulate(SimulationParams::default());
        assert!(detect(&net, &crn_alt_spec(&net, &["C"]), sim).unwrap().answer);
        assert!(!detect(&net, &crn_alt_spec(&net, &[]), sim).unwrap().answer);

        let split = Network::new_allow_disconnected(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![("a".into(), "b".into(), 1.0), ("c".into(), "d".into(), 1.0)],
        )
        .unwrap();
        let spec = SourceSpec::new(4, [(0, 1.0)], [3]).unwrap();
        assert!(matches!(detect(&split, &spec, Mode::Exact), Err(Error::Disconnected(_))));
    }

    #[test]
    fn find_returns_marked_vertex() {
        let net = presets::crn_alt_masg_network();
        let spec = crn_alt_spec(&net, &["C"]);
        let c = net.vertex_index("C").unwrap();
        for seed in 0..20 {
            assert_eq!(find(&net, &spec, seed).unwrap().vertex, c);
        }
        let dist = find_distribution(&net, &spec).unwrap();
        assert_eq!(dist, vec![(c, 1.0)]);
        let lonely = Network::new_allow_disconnected(
            vec!["a".into(), "b".into(), "x".into()],
            vec![("a".into(), "b".into(), 1.0)],
        )
        .unwrap();
        let spec = SourceSpec::new(3, [(0, 1.0)], [1, 2]).unwrap();
        assert!(find(&lonely, &spec, 0).is_err());
    }

    #[test]
    fn resistance_estimates() {
        let edge = Network::new(vec!["s".into(), "t".into()], vec![("s".into(), "t".into(), 7.0)]).unwrap();
        assert_relative_eq!(estimate_r_ws(&edge, 0, &[1], 0.1, Mode::Exact).unwrap().value, 1.0, epsilon = 1e-12);
        let tailed = presets::tailed_triangle();
        assert_relative_eq!(estimate_r_ws(&tailed, 0, &[3], 0.1, Mode::Exact).unwrap().value, 11.0 / 3.0, epsilon = 1e-9);

        let net = presets::crn_alt_masg_network();
        let params = SimulationParams { bits: 8, shots: 4096, seed: 5 };
        let est = estimate_r_ws(&net, 0, &[2], 0.1, Mode::Simulate(params)).unwrap();
        assert_relative_eq!(est.exact, 2.0, epsilon = 1e-9);
        assert!((est.value - est.exact).abs() / est.exact < 0.1, "{est:?}");
        assert!(estimate_r_ws(&net, 0, &[2], 1.5, Mode::Exact).is_err());
    }

    #[test]
    fn prepared_flow_state_is_close() {
        let tailed = presets::tailed_triangle();
        let exact = prepare_flow_state(&tailed, 0, &[3], 0.1, Mode::Exact).unwrap();
        assert_eq!(exact.trace_distance, 0.0);
        let sim = prepare_flow_state(&tailed, 0, &[3], 0.1, Mode::Simulate(SimulationParams::default())).unwrap();
        assert!(sim.within_tolerance, "{}", sim.trace_distance);
        let counts = measure_edges(&sim.state, 1000, 9).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), 1000);
    }

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn cost_formulas() {
        let p = params(&[("S", 1.0), ("U_star", 1.0), ("Phi", 0.5), ("W", 20.0)]);
        let c = cost_estimate(CostKind::DetectSpecies, &p).unwrap();
        assert_relative_eq!(c.value, 1.0 + 10f64.sqrt(), epsilon = 1e-12);

        let p = params(&[("S", 1.0), ("U_star", 1.0), ("Phi", 0.5), ("W", 20.0), ("M", 1.0)]);
        let f = cost_estimate(CostKind::FindSpecies, &p).unwrap();
        assert_eq!(f.value, c.value);
        assert!(!f.warnings.is_empty());

        let p = params(&[("S", 2.0), ("U_star", 3.0), ("R", 4.0), ("W", 9.0)]);
        assert_relative_eq!(cost_estimate(CostKind::Detect, &p).unwrap().value, 2.0 + 18.0);
        assert!(matches!(
            cost_estimate(CostKind::Find, &p),
            Err(Error::MissingParameter(name)) if name == "M"
        ));

        let p = params(&[("S", 1.0), ("U_star", 1.0), ("epsilon", 0.5), ("ET", 3.0), ("R", 2.0), ("w_s", 1.0), ("W", 1.0)]);
        let e = cost_estimate(CostKind::EstimateResistance, &p).unwrap();
        assert_relative_eq!(e.value, 2.0 * (1.0 + 2.0 * (3.0 + 2f64.ln())), epsilon = 1e-12);
        assert!(e.warnings.iter().any(|w| w.contains("escape time")));
        let t = cost_estimate(CostKind::PrepareFlowState, &p).unwrap();
        assert_relative_eq!(t.value, 1.0 + 4.0 * (3f64.sqrt() + 2f64.ln()), epsilon = 1e-12);
        for kind in CostKind::ALL {
            assert_eq!(CostKind::from_name(kind.name()).unwrap(), kind);
        }
    }
}
