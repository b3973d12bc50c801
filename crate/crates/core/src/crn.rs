//! Mass-action systems near a detailed-balance equilibrium.
//!
//! A [`MassActionSystem`] stores every reversible reaction once, in a chosen
//! orientation, together with both rate constants. Downstream analysis
//! (Onsager coefficients, the linearised steady state, the MASG) requires a
//! [`ValidatedSystem`], which can only be obtained once the system is
//! reversible, particle conserving and detailed balanced at its stated
//! equilibrium.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative tolerance for the detailed-balance check.
pub const DETAILED_BALANCE_TOL: f64 = 1e-9;

/// Relative residual allowed for the linearised steady-state solve.
pub const STEADY_STATE_TOL: f64 = 1e-9;

/// A complex: non-negative integer stoichiometric coefficients per species.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Complex {
    coefficients: BTreeMap<usize, u32>,
}

impl Complex {
    /// Builds a complex, dropping zero entries. At least one coefficient must
    /// be nonzero.
    pub fn new(coefficients: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let coefficients: BTreeMap<usize, u32> =
            coefficients.into_iter().filter(|&(_, c)| c > 0).collect();
        if coefficients.is_empty() {
            return Err(Error::Parse("complex has no nonzero coefficient".into()));
        }
        Ok(Self { coefficients })
    }

    /// Coefficient of species `s` (zero when absent).
    pub fn get(&self, s: usize) -> u32 {
        self.coefficients.get(&s).copied().unwrap_or(0)
    }

    /// Total number of particles, `sum_s y_s`.
    pub fn total(&self) -> u32 {
        self.coefficients.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.coefficients.iter().map(|(&s, &c)| (s, c))
    }

    /// `prod_s c_s^{y_s}` with the convention `0^0 = 1`.
    pub fn monomial(&self, c: &[f64]) -> f64 {
        self.iter().map(|(s, y)| c[s].powi(y as i32)).product()
    }
}

/// A reversible reaction stored in one orientation, `reactant -> product`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reaction {
    pub id: String,
    pub reactant: Complex,
    pub product: Complex,
    pub k_forward: f64,
    pub k_backward: f64,
}

impl Reaction {
    /// The same reaction with its orientation reversed.
    pub fn flipped(&self) -> Self {
        Self {
            id: self.id.clone(),
            reactant: self.product.clone(),
            product: self.reactant.clone(),
            k_forward: self.k_backward,
            k_backward: self.k_forward,
        }
    }
}

/// Which member of a reversible pair is meant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Net stoichiometric coefficients `nu[r][s] = y'_s - y_s` and their
/// absolute row sums.
#[derive(Clone, Debug, PartialEq)]
pub struct NetStoichiometry {
    nu: Vec<Vec<i64>>,
    nu_total: Vec<u64>,
}

impl NetStoichiometry {
    fn compute(species_count: usize, reactions: &[Reaction]) -> Self {
        let nu: Vec<Vec<i64>> = reactions
            .iter()
            .map(|r| {
                (0..species_count)
                    .map(|s| r.product.get(s) as i64 - r.reactant.get(s) as i64)
                    .collect()
            })
            .collect();
        let nu_total = nu
            .iter()
            .map(|row| row.iter().map(|v| v.unsigned_abs()).sum())
            .collect();
        Self { nu, nu_total }
    }

    pub fn nu(&self, reaction: usize, species: usize) -> i64 {
        self.nu[reaction][species]
    }

    pub fn nu_total(&self, reaction: usize) -> u64 {
        self.nu_total[reaction]
    }

    /// The net-stoichiometry vector of one reaction over all species.
    pub fn column(&self, reaction: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.nu[reaction].len(),
            self.nu[reaction].iter().map(|&v| v as f64),
        )
    }

    pub fn reaction_count(&self) -> usize {
        self.nu.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrnFile {
    species: Vec<String>,
    reactions: Vec<ReactionEntry>,
    equilibrium: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rt: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionEntry {
    id: String,
    reactants: BTreeMap<String, f64>,
    products: BTreeMap<String, f64>,
    k_forward: f64,
    k_backward: f64,
}

/// Species, oriented reversible reactions, equilibrium concentrations and RT.
#[derive(Clone, Debug, PartialEq)]
pub struct MassActionSystem {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    equilibrium: Vec<f64>,
    rt: f64,
    stoich: NetStoichiometry,
}

impl MassActionSystem {
    /// Builds a system and checks its structural invariants. Assumptions such
    /// as detailed balance are not checked here; see
    /// [`MassActionSystem::validate_assumptions`].
    pub fn new(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        equilibrium: Vec<f64>,
        rt: f64,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &species {
            if !seen.insert(s.as_str()) {
                return Err(Error::Parse(format!("duplicate species `{s}`")));
            }
        }
        if equilibrium.len() != species.len() {
            return Err(Error::Parse(
                "equilibrium vector length differs from species count".into(),
            ));
        }
        for (s, &c) in species.iter().zip(&equilibrium) {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Parse(format!(
                    "equilibrium concentration of `{s}` must be positive, got {c}"
                )));
            }
        }
        if !(rt.is_finite() && rt > 0.0) {
            return Err(Error::Parse(format!("rt must be positive, got {rt}")));
        }
        let mut ids = BTreeSet::new();
        let mut used = vec![false; species.len()];
        for r in &reactions {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Parse(format!("duplicate reaction id `{}`", r.id)));
            }
            for (label, k) in [("k_forward", r.k_forward), ("k_backward", r.k_backward)] {
                if !(k.is_finite() && k > 0.0) {
                    return Err(Error::Parse(format!(
                        "reaction `{}`: {label} must be positive, got {k}",
                        r.id
                    )));
                }
            }
            if r.reactant == r.product {
                return Err(Error::Parse(format!(
                    "reaction `{}` is trivial (reactant equals product)",
                    r.id
                )));
            }
            for (s, _) in r.reactant.iter().chain(r.product.iter()) {
                if s >= species.len() {
                    return Err(Error::UnknownSpecies(format!("#{s}")));
                }
                used[s] = true;
            }
        }
        if let Some(s) = used.iter().position(|&u| !u) {
            return Err(Error::Parse(format!(
                "species `{}` does not take part in any reaction",
                species[s]
            )));
        }
        let stoich = NetStoichiometry::compute(species.len(), &reactions);
        Ok(Self {
            species,
            reactions,
            equilibrium,
            rt,
            stoich,
        })
    }

    /// Parses the CRN JSON format.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CrnFile = serde_json::from_str(text)?;
        let index: HashMap<&str, usize> = file
            .species
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
        };
        let complex = |entries: &BTreeMap<String, f64>, rid: &str| -> Result<Complex> {
            let mut coefficients = Vec::with_capacity(entries.len());
            for (name, &value) in entries {
                let s = lookup(name)?;
                if !(value.is_finite() && value >= 0.0 && value.fract() == 0.0) {
                    return Err(Error::Parse(format!(
                        "reaction `{rid}`: coefficient of `{name}` must be a non-negative integer, got {value}"
                    )));
                }
                coefficients.push((s, value as u32));
            }
            Complex::new(coefficients)
                .map_err(|_| Error::Parse(format!("reaction `{rid}` has an empty complex")))
        };
        let mut reactions = Vec::with_capacity(file.reactions.len());
        for entry in &file.reactions {
            reactions.push(Reaction {
                id: entry.id.clone(),
                reactant: complex(&entry.reactants, &entry.id)?,
                product: complex(&entry.products, &entry.id)?,
                k_forward: entry.k_forward,
                k_backward: entry.k_backward,
            });
        }
        for name in file.equilibrium.keys() {
            lookup(name)?;
        }
        let equilibrium = file
            .species
            .iter()
            .map(|s| {
                file.equilibrium
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("missing equilibrium concentration for `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.species, reactions, equilibrium, file.rt.unwrap_or(1.0))
    }

    /// Serialises back to the CRN JSON format.
    pub fn to_json(&self) -> String {
        let complex = |c: &Complex| {
            c.iter()
                .map(|(s, y)| (self.species[s].clone(), y as f64))
                .collect::<BTreeMap<_, _>>()
        };
        let file = CrnFile {
            species: self.species.clone(),
            reactions: self
                .reactions
                .iter()
                .map(|r| ReactionEntry {
                    id: r.id.clone(),
                    reactants: complex(&r.reactant),
                    products: complex(&r.product),
                    k_forward: r.k_forward,
                    k_backward: r.k_backward,
                })
                .collect(),
            equilibrium: self
                .species
                .iter()
                .cloned()
                .zip(self.equilibrium.iter().copied())
                .collect(),
            rt: Some(self.rt),
        };
        serde_json::to_string_pretty(&file).expect("CRN file serialises")
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    pub fn rt(&self) -> f64 {
        self.rt
    }

    pub fn stoichiometry(&self) -> &NetStoichiometry {
        &self.stoich
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn species_index(&self, id: &str) -> Result<usize> {
        self.species
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSpecies(id.to_string()))
    }

    pub fn reaction_index(&self, id: &str) -> Result<usize> {
        self.reactions
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::UnknownReaction(id.to_string()))
    }

    /// The same system with reaction `reaction` stored in the opposite
    /// orientation.
    pub fn with_flipped(&self, reaction: usize) -> Self {
        let mut reactions = self.reactions.clone();
        reactions[reaction] = reactions[reaction].flipped();
        Self::new(
            self.species.clone(),
            reactions,
            self.equilibrium.clone(),
            self.rt,
        )
        .expect("flipping a reaction preserves structural invariants")
    }

    /// The same system with a different RT.
    pub fn with_rt(&self, rt: f64) -> Result<Self> {
        Self::new(
            self.species.clone(),
            self.reactions.clone(),
            self.equilibrium.clone(),
            rt,
        )
    }

    fn check_concentrations(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.species.len() {
            return Err(Error::InvalidArgument(format!(
                "concentration vector has length {}, expected {}",
                c.len(),
                self.species.len()
            )));
        }
        if c.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::InvalidArgument(
                "concentrations must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn rate_at(&self, reaction: usize, direction: Direction, c: &[f64]) -> f64 {
        let r = &self.reactions[reaction];
        match direction {
            Direction::Forward => r.k_forward * r.reactant.monomial(c),
            Direction::Backward => r.k_backward * r.product.monomial(c),
        }
    }

    /// Mass-action rate `k c^y` of one direction of a reaction.
    pub fn mass_action_rate(&self, reaction: &str, direction: Direction, c: &[f64]) -> Result<f64> {
        let r = self.reaction_index(reaction)?;
        self.check_concentrations(c)?;
        Ok(self.rate_at(r, direction, c))
    }

    /// Net flux `K_r(c) - K_rbar(c)` in the stored orientation.
    pub fn net_flux_exact(&self, reaction: &str, c: &[f64]) -> Result<f64> {
        let r = self.reaction_index(reaction)?;
        self.check_concentrations(c)?;
        Ok(self.rate_at(r, Direction::Forward, c) - self.rate_at(r, Direction::Backward, c))
    }

    /// Checks reversibility, particle conservation and detailed balance.
    pub fn validate_assumptions(&self, tol: f64) -> ValidationReport {
        let mut issues = Vec::new();
        let mut reversible = true;
        let mut particle_conserving = true;
        let mut detailed_balanced = true;
        for (i, r) in self.reactions.iter().enumerate() {
            if !(r.k_forward > 0.0 && r.k_backward > 0.0) {
                reversible = false;
                issues.push(format!("reaction `{}` lacks a positive reverse rate", r.id));
            }
            if r.reactant.total() != r.product.total() {
                particle_conserving = false;
                issues.push(format!(
                    "reaction `{}` is not particle conserving ({} vs {})",
                    r.id,
                    r.reactant.total(),
                    r.product.total()
                ));
            }
            let fwd = self.rate_at(i, Direction::Forward, &self.equilibrium);
            let bwd = self.rate_at(i, Direction::Backward, &self.equilibrium);
            if (fwd - bwd).abs() > tol * fwd.max(bwd) {
                detailed_balanced = false;
                issues.push(format!(
                    "reaction `{}` is not detailed balanced at equilibrium ({fwd} vs {bwd})",
                    r.id
                ));
            }
        }
        ValidationReport {
            reversible,
            particle_conserving,
            detailed_balanced,
            tolerance: tol,
            issues,
        }
    }

    /// Validates the assumptions and wraps the system for downstream use.
    pub fn validated(self, tol: f64) -> Result<ValidatedSystem> {
        let report = self.validate_assumptions(tol);
        if !report.all_pass() {
            return Err(Error::Assumption(report.issues.join("; ")));
        }
        Ok(ValidatedSystem {
            system: self,
            report,
        })
    }

    /// Connected components of the species interaction graph (species that
    /// share a reaction with nonzero net stoichiometry).
    fn species_components(&self) -> Vec<Vec<usize>> {
        let n = self.species.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for r in 0..self.reactions.len() {
            let involved: Vec<usize> = (0..n).filter(|&s| self.stoich.nu(r, s) != 0).collect();
            for w in involved.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in 0..n {
            let root = find(&mut parent, s);
            groups.entry(root).or_default().push(s);
        }
        groups.into_values().collect()
    }
}

/// Outcome of [`MassActionSystem::validate_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub reversible: bool,
    pub particle_conserving: bool,
    pub detailed_balanced: bool,
    pub tolerance: f64,
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.reversible && self.particle_conserving && self.detailed_balanced
    }
}

/// A system whose assumptions have been checked.
#[derive(Clone, Debug)]
pub struct ValidatedSystem {
    system: MassActionSystem,
    report: ValidationReport,
}

impl std::ops::Deref for ValidatedSystem {
    type Target = MassActionSystem;

    fn deref(&self) -> &MassActionSystem {
        &self.system
    }
}

impl ValidatedSystem {
    pub fn system(&self) -> &MassActionSystem {
        &self.system
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    /// Onsager coefficients `G_r = K_r(c*) / RT`.
    pub fn compute_onsager(&self) -> Vec<f64> {
        (0..self.reaction_count())
            .map(|r| self.rate_at(r, Direction::Forward, &self.equilibrium) / self.rt)
            .collect()
    }

    /// Onsager coefficients computed from the backward rates; agrees with
    /// [`ValidatedSystem::compute_onsager`] up to the detailed-balance tolerance.
    pub fn compute_onsager_backward(&self) -> Vec<f64> {
        (0..self.reaction_count())
            .map(|r| self.rate_at(r, Direction::Backward, &self.equilibrium) / self.rt)
            .collect()
    }

    /// Weighted stoichiometric Laplacian `sum_r G_r nu_r nu_r^T`.
    pub fn response_matrix(&self) -> DMatrix<f64> {
        let n = self.species_count();
        let onsager = self.compute_onsager();
        let mut l = DMatrix::zeros(n, n);
        for (r, g) in onsager.iter().enumerate() {
            let nu = self.stoich.column(r);
            l += *g * &nu * nu.transpose();
        }
        l
    }

    /// Linearised steady state for a well-formed perturbation.
    pub fn linearized_steady_state(&self, pert: &Perturbation) -> Result<ThermoContext> {
        if pert.injections.len() != self.species_count() {
            return Err(Error::Perturbation(
                "perturbation was built for a different system".into(),
            ));
        }
        self.steady_state_for_injections(&pert.injections)
    }

    /// Linearised steady state for an arbitrary balanced injection vector.
    ///
    /// Solves `L dmu = eta` and sets `J_r = -G_r (nu_r . dmu)`, so that
    /// `sum_r nu_{r,s} J_r = -eta_s`.
    pub fn steady_state_for_injections(&self, eta: &[f64]) -> Result<ThermoContext> {
        let n = self.species_count();
        if eta.len() != n {
            return Err(Error::Perturbation(format!(
                "injection vector has length {}, expected {n}",
                eta.len()
            )));
        }
        let scale: f64 = eta.iter().map(|x| x.abs()).sum();
        let total: f64 = eta.iter().sum();
        if total.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::Perturbation(format!(
                "injections must sum to zero, got {total}"
            )));
        }
        let onsager = self.compute_onsager();
        let l = self.response_matrix();
        let eta_v = DVector::from_column_slice(eta);
        let (mut dmu, _) = linalg::solve_min_norm(&l, &eta_v, linalg::RANK_TOL);

        let components = self.species_components();
        let gauge_species: Vec<usize> = components.iter().map(|c| c[0]).collect();
        for comp in &components {
            let reference = dmu[comp[0]];
            for &s in comp {
                dmu[s] -= reference;
            }
        }

        let residual = (&l * &dmu - &eta_v).norm();
        if residual > STEADY_STATE_TOL * eta_v.norm().max(f64::MIN_POSITIVE) && residual > 1e-14 {
            return Err(Error::Infeasible(format!(
                "injection pattern is not reachable through the network (residual {residual:e})"
            )));
        }

        let affinity: Vec<f64> = (0..self.reaction_count())
            .map(|r| -self.stoich.column(r).dot(&dmu))
            .collect();
        let flux = affinity.iter().zip(&onsager).map(|(a, g)| g * a).collect();
        Ok(ThermoContext {
            onsager,
            delta_mu: dmu.iter().copied().collect(),
            affinity,
            flux,
            gauge_species,
            residual,
        })
    }
}

/// An external injection/removal pattern with its target set.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    injections: Vec<f64>,
    targets: BTreeSet<usize>,
    source_distribution: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationFile {
    injections: BTreeMap<String, f64>,
    #[serde(default)]
    targets: Vec<String>,
}

impl Perturbation {
    /// Builds a perturbation; the source distribution is the positive part
    /// of the injections.
    pub fn new<'a>(
        sys: &MassActionSystem,
        injections: impl IntoIterator<Item = (&'a str, f64)>,
        targets: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let n = sys.species_count();
        let mut eta = vec![0.0; n];
        for (name, value) in injections {
            if !value.is_finite() {
                return Err(Error::Perturbation(format!("injection of `{name}` is not finite")));
            }
            eta[sys.species_index(name)?] += value;
        }
        let targets = targets
            .into_iter()
            .map(|t| sys.species_index(t))
            .collect::<Result<BTreeSet<_>>>()?;
        Self::from_vector(eta, targets)
    }

    fn from_vector(eta: Vec<f64>, targets: BTreeSet<usize>) -> Result<Self> {
        const TOL: f64 = 1e-9;
        let mut source_distribution = Vec::new();
        for (s, &v) in eta.iter().enumerate() {
            if v > 0.0 {
                if targets.contains(&s) {
                    return Err(Error::Perturbation(format!(
                        "species #{s} is both injected and a target"
                    )));
                }
                source_distribution.push((s, v));
            } else if v < 0.0 && !targets.contains(&s) {
                return Err(Error::Perturbation(format!(
                    "species #{s} is removed but is not a target"
                )));
            }
        }
        let injected: f64 = source_distribution.iter().map(|(_, v)| v).sum();
        if !source_distribution.is_empty() && (injected - 1.0).abs() > TOL {
            return Err(Error::Perturbation(format!(
                "injections must form a probability distribution, total is {injected}"
            )));
        }
        let removed: f64 = targets.iter().map(|&t| eta[t]).sum();
        let any_nonzero = eta.iter().any(|&v| v != 0.0);
        if !targets.is_empty() && any_nonzero && (removed + 1.0).abs() > TOL {
            return Err(Error::Perturbation(format!(
                "removal over the targets must total -1, got {removed}"
            )));
        }
        Ok(Self {
            injections: eta,
            targets,
            source_distribution,
        })
    }

    /// Parses the perturbation JSON format against a system.
    pub fn from_json(sys: &MassActionSystem, text: &str) -> Result<Self> {
        let file: PerturbationFile = serde_json::from_str(text)?;
        Self::new(
            sys,
            file.injections.iter().map(|(k, &v)| (k.as_str(), v)),
            file.targets.iter().map(String::as_str),
        )
    }

    pub fn injections(&self) -> &[f64] {
        &self.injections
    }

    pub fn targets(&self) -> &BTreeSet<usize> {
        &self.targets
    }

    /// `(species, sigma(s))` pairs over the support of the source distribution.
    pub fn source_distribution(&self) -> &[(usize, f64)] {
        &self.source_distribution
    }

    /// The single injected species, if the source distribution is a point mass.
    pub fn single_source(&self) -> Option<usize> {
        match self.source_distribution.as_slice() {
            [(s, _)] => Some(*s),
            _ => None,
        }
    }
}

/// Thermodynamic quantities of the linearised steady state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThermoContext {
    pub onsager: Vec<f64>,
    pub delta_mu: Vec<f64>,
    pub affinity: Vec<f64>,
    pub flux: Vec<f64>,
    /// Species pinned to `delta_mu = 0`, one per connected component.
    pub gauge_species: Vec<usize>,
    pub residual: f64,
}

impl ThermoContext {
    /// Gibbs free-energy consumption rate `sum_r J_r^2 / G_r`.
    pub fn gibbs_consumption(&self) -> f64 {
        gibbs_consumption(self)
    }
}

pub fn gibbs_consumption(thermo: &ThermoContext) -> f64 {
    thermo
        .flux
        .iter()
        .zip(&thermo.onsager)
        .map(|(j, g)| j * j / g)
        .sum()
}

impl fmt::Display for MassActionSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |c: &Complex| {
            c.iter()
                .map(|(s, y)| {
                    if y == 1 {
                        self.species[s].clone()
                    } else {
                        format!("{y}{}", self.species[s])
                    }
                })
                .collect::<Vec<_>>()
                .join(" + ")
        };
        for r in &self.reactions {
            writeln!(f, "{}: {} <=> {}", r.id, side(&r.reactant), side(&r.product))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn alt() -> MassActionSystem {
        presets::crn_alt()
    }

    #[test]
    fn parse_crn_alt_counts() {
        let sys = alt();
        assert_eq!(sys.species_count(), 3);
        assert_eq!(sys.reaction_count(), 2);
    }

    #[test]
    fn parse_five_species_counts() {
        let sys = presets::five_species();
        assert_eq!(sys.species_count(), 5);
        assert_eq!(sys.reaction_count(), 3);
    }

    #[test]
    fn parse_rejects_trivial_reaction() {
        let text = r#"{"species":["A"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"A":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0}}"#;
        let err = MassActionSystem::from_json(text).unwrap_err();
        assert!(err.to_string().contains("trivial"), "{err}");
    }

    #[test]
    fn parse_rejects_bad_inputs() {
        let bad = [
            // unknown species
            r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"Z":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#,
            // zero rate
            r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":1},"k_forward":0.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#,
            // negative equilibrium
            r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":-1.0,"B":1.0}}"#,
            // duplicate id
            r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":1},"k_forward":1.0,"k_backward":1.0},{"id":"r1","reactants":{"B":1},"products":{"A":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#,
            // fractional stoichiometry
            r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1.5},"products":{"B":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#,
            // malformed
            r#"{"species":["A","B"],"reactions":"#,
        ];
        for text in bad {
            assert!(MassActionSystem::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn json_round_trip() {
        let sys = presets::five_species();
        let again = MassActionSystem::from_json(&sys.to_json()).unwrap();
        assert_eq!(sys, again);
    }

    #[test]
    fn rt_defaults_to_one() {
        let text = r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#;
        assert_eq!(MassActionSystem::from_json(text).unwrap().rt(), 1.0);
    }

    #[test]
    fn validation_passes_on_crn_alt() {
        let report = alt().validate_assumptions(DETAILED_BALANCE_TOL);
        assert!(report.reversible && report.particle_conserving && report.detailed_balanced);
    }

    #[test]
    fn validation_flags_particle_count_change() {
        let text = r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":2},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#;
        let report = MassActionSystem::from_json(text)
            .unwrap()
            .validate_assumptions(DETAILED_BALANCE_TOL);
        assert!(!report.particle_conserving);
        assert!(report.detailed_balanced);
    }

    #[test]
    fn validation_flags_detailed_balance_violation() {
        let text = r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":1},"k_forward":2.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#;
        let sys = MassActionSystem::from_json(text).unwrap();
        assert!(!sys.validate_assumptions(DETAILED_BALANCE_TOL).detailed_balanced);
        assert!(matches!(sys.validated(DETAILED_BALANCE_TOL), Err(Error::Assumption(_))));
    }

    #[test]
    fn mass_action_rates() {
        let sys = presets::five_species();
        let c = [2.0, 3.0, 5.0, 7.0, 11.0];
        // r3: A + C -> 2D, k = 1
        assert_eq!(sys.mass_action_rate("r3", Direction::Forward, &c).unwrap(), 2.0 * 5.0);
        // r5 backward: 3E -> D + 2B
        assert_eq!(sys.mass_action_rate("r5", Direction::Backward, &c).unwrap(), 11.0_f64.powi(3));
        // r5 forward: D + 2B, squares c_B
        assert_eq!(sys.mass_action_rate("r5", Direction::Forward, &c).unwrap(), 7.0 * 9.0);
        // species absent from the complex contribute 0^0 = 1
        let zero_c = [0.0, 3.0, 0.0, 7.0, 11.0];
        assert_eq!(sys.mass_action_rate("r5", Direction::Forward, &zero_c).unwrap(), 63.0);
        assert!(matches!(
            sys.mass_action_rate("nope", Direction::Forward, &c),
            Err(Error::UnknownReaction(_))
        ));
    }

    #[test]
    fn net_flux_sign_and_equilibrium() {
        let text = r#"{"species":["A","B"],"reactions":[{"id":"r1","reactants":{"A":1},"products":{"B":1},"k_forward":1.0,"k_backward":1.0}],"equilibrium":{"A":1.0,"B":1.0}}"#;
        let sys = MassActionSystem::from_json(text).unwrap();
        assert_eq!(sys.net_flux_exact("r1", &[2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(sys.with_flipped(0).net_flux_exact("r1", &[2.0, 1.0]).unwrap(), -1.0);
        let five = presets::five_species();
        for r in five.reactions() {
            assert_eq!(five.net_flux_exact(&r.id, five.equilibrium()).unwrap(), 0.0);
        }
    }

    #[test]
    fn onsager_values_and_rt_scaling() {
        let vs = alt().validated(DETAILED_BALANCE_TOL).unwrap();
        assert_eq!(vs.compute_onsager(), vec![1.0, 1.0]);
        assert_eq!(vs.compute_onsager(), vs.compute_onsager_backward());
        let doubled = alt().with_rt(2.0).unwrap().validated(DETAILED_BALANCE_TOL).unwrap();
        assert_eq!(doubled.compute_onsager(), vec![0.5, 0.5]);
    }

    #[test]
    fn steady_state_crn_alt_gives_half_fluxes() {
        let vs = alt().validated(DETAILED_BALANCE_TOL).unwrap();
        let pert = Perturbation::new(&vs, [("A", 1.0), ("C", -1.0)], ["C"]).unwrap();
        let thermo = vs.linearized_steady_state(&pert).unwrap();
        assert!((thermo.flux[0] - 0.5).abs() < 1e-12);
        assert!((thermo.flux[1] - 0.5).abs() < 1e-12);
        assert!((thermo.gibbs_consumption() - 0.5).abs() < 1e-12);
        assert_eq!(thermo.delta_mu[thermo.gauge_species[0]], 0.0);
    }

    #[test]
    fn zero_injection_is_equilibrium() {
        let vs = alt().validated(DETAILED_BALANCE_TOL).unwrap();
        let pert = Perturbation::new(&vs, [], ["C"]).unwrap();
        let thermo = vs.linearized_steady_state(&pert).unwrap();
        assert!(thermo.delta_mu.iter().all(|&x| x == 0.0));
        assert!(thermo.flux.iter().all(|&x| x == 0.0));
        assert_eq!(thermo.gibbs_consumption(), 0.0);
    }

    #[test]
    fn unreachable_injection_is_infeasible() {
        // Two conserved moieties: total particles and the A+B pool.
        let sys = presets::five_species().validated(DETAILED_BALANCE_TOL).unwrap();
        let pert = Perturbation::new(&sys, [("A", 1.0), ("E", -1.0)], ["E"]).unwrap();
        assert!(matches!(
            sys.linearized_steady_state(&pert),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn gibbs_consumption_invariant_under_flip() {
        let vs = alt().validated(DETAILED_BALANCE_TOL).unwrap();
        let flipped = alt().with_flipped(0).validated(DETAILED_BALANCE_TOL).unwrap();
        let pert = Perturbation::new(&vs, [("A", 1.0), ("C", -1.0)], ["C"]).unwrap();
        let a = vs.linearized_steady_state(&pert).unwrap();
        let b = flipped.linearized_steady_state(&pert).unwrap();
        assert!((a.gibbs_consumption() - b.gibbs_consumption()).abs() < 1e-12);
        assert!((a.flux[0] + b.flux[0]).abs() < 1e-12);
    }

    #[test]
    fn perturbation_shape_errors() {
        let sys = alt();
        // removal from a non-target
        assert!(Perturbation::new(&sys, [("A", 1.0), ("C", -1.0)], ["B"]).is_err());
        // injection not normalised
        assert!(Perturbation::new(&sys, [("A", 2.0), ("C", -2.0)], ["C"]).is_err());
        // injected target
        assert!(Perturbation::new(&sys, [("C", 1.0)], ["C"]).is_err());
        let p = Perturbation::from_json(&sys, r#"{"injections":{"A":1.0,"C":-1.0},"targets":["C"]}"#)
            .unwrap();
        assert_eq!(p.source_distribution(), &[(0, 1.0)]);
        assert_eq!(p.single_source(), Some(0));
    }
}
