//! Worked examples and random instance generators.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::crn::{Complex, MassActionSystem, Perturbation, Reaction};
use crate::electric::Network;

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn unit_reaction(id: &str, reactant: &[(usize, u32)], product: &[(usize, u32)]) -> Reaction {
    Reaction {
        id: id.to_string(),
        reactant: Complex::new(reactant.iter().copied()).expect("nonempty complex"),
        product: Complex::new(product.iter().copied()).expect("nonempty complex"),
        k_forward: 1.0,
        k_backward: 1.0,
    }
}

/// `A <=> B` (r1), `A + B <=> 2C` (r3); all rate constants and equilibrium
/// concentrations 1, so every Onsager coefficient is 1.
pub fn crn_alt() -> MassActionSystem {
    MassActionSystem::new(
        vec!["A".into(), "B".into(), "C".into()],
        vec![
            unit_reaction("r1", &[(0, 1)], &[(1, 1)]),
            unit_reaction("r3", &[(0, 1), (1, 1)], &[(2, 2)]),
        ],
        vec![1.0; 3],
        1.0,
    )
    .expect("preset is well formed")
}

/// `A <=> B` (r1), `A + C <=> 2D` (r3), `D + 2B <=> 3E` (r5); unit rates and
/// unit equilibrium.
pub fn five_species() -> MassActionSystem {
    MassActionSystem::new(
        vec!["A".into(), "B".into(), "C".into(), "D".into(), "E".into()],
        vec![
            unit_reaction("r1", &[(0, 1)], &[(1, 1)]),
            unit_reaction("r3", &[(0, 1), (2, 1)], &[(3, 2)]),
            unit_reaction("r5", &[(3, 1), (1, 2)], &[(4, 3)]),
        ],
        vec![1.0; 5],
        1.0,
    )
    .expect("preset is well formed")
}

/// `A + X <=> B + X` and `B <=> C`: X only acts as a catalyst.
pub fn catalysed() -> MassActionSystem {
    MassActionSystem::new(
        vec!["A".into(), "B".into(), "C".into(), "X".into()],
        vec![
            unit_reaction("r1", &[(0, 1), (3, 1)], &[(1, 1), (3, 1)]),
            unit_reaction("r2", &[(1, 1)], &[(2, 1)]),
        ],
        vec![1.0; 4],
        1.0,
    )
    .expect("preset is well formed")
}

/// Four-vertex example network: `(s,x)` weight 1 and `(x,y)`, `(x,t)`,
/// `(y,t)` weight 1/4.
pub fn tailed_triangle() -> Network {
    let e = |a: &str, b: &str, w: f64| (a.to_string(), b.to_string(), w);
    Network::new(
        vec!["s".into(), "x".into(), "y".into(), "t".into()],
        vec![
            e("s", "x", 1.0),
            e("x", "y", 0.25),
            e("x", "t", 0.25),
            e("y", "t", 0.25),
        ],
    )
    .expect("preset is well formed")
}

/// The MASG of [`crn_alt`] as a plain network, edges species-major:
/// A-r1, A-r3, B-r1, B-r3, C-r3 with weights 2, 4, 2, 4, 8.
pub fn crn_alt_masg_network() -> Network {
    let e = |a: &str, b: &str, w: f64| (a.to_string(), b.to_string(), w);
    Network::new(
        vec!["A".into(), "B".into(), "C".into(), "r1".into(), "r3".into()],
        vec![
            e("A", "r1", 2.0),
            e("A", "r3", 4.0),
            e("B", "r1", 2.0),
            e("B", "r3", 4.0),
            e("C", "r3", 8.0),
        ],
    )
    .expect("preset is well formed")
}

/// Random connected graph with at most `max_edges` edges and weights in
/// `[0.1, 10]`. Returns the network with a random source and sink.
pub fn random_connected_graph<R: Rng>(rng: &mut R, max_edges: usize) -> (Network, usize, usize) {
    let max_edges = max_edges.max(1);
    let n = rng.random_range(2..=(max_edges + 1).min(6));
    let vertices = names("v", n);
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .filter(|p| !pairs.iter().any(|q| q.0.min(q.1) == p.0 && q.0.max(q.1) == p.1))
        .collect();
    candidates.shuffle(rng);
    let extra = rng.random_range(0..=max_edges.saturating_sub(pairs.len()));
    pairs.extend(candidates.into_iter().take(extra));
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            (vertices[a].clone(), vertices[b].clone(), rng.random_range(0.1..10.0))
        })
        .collect();
    let net = Network::new(vertices, edges).expect("spanning tree keeps the graph connected");
    let s = rng.random_range(0..n);
    let mut t = rng.random_range(0..n - 1);
    if t >= s {
        t += 1;
    }
    (net, s, t)
}

/// Random reversible, particle-conserving, detailed-balanced system.
///
/// A chain of isomerisations `S_i <=> S_{i+1}` keeps the stoichiometric
/// matrix at full rank (only total particle number is conserved), so every
/// balanced injection pattern is feasible. Up to two bimolecular reactions
/// add cycles. Onsager coefficients are drawn from `[0.1, 10]`.
pub fn random_validated_system<R: Rng>(rng: &mut R) -> MassActionSystem {
    let n = rng.random_range(3..=6);
    let species = names("S", n);
    let equilibrium: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let rt = rng.random_range(0.5..2.0);

    type Side = Vec<(usize, u32)>;
    let mut complexes: Vec<(Side, Side)> =
        (0..n - 1).map(|i| (vec![(i, 1)], vec![(i + 1, 1)])).collect();
    let extra = rng.random_range(0..=2);
    let pair = |rng: &mut R| {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            vec![(a, 2)]
        } else {
            vec![(a.min(b), 1), (a.max(b), 1)]
        }
    };
    let mut added = 0;
    while added < extra {
        let lhs = pair(rng);
        let rhs = pair(rng);
        if lhs != rhs {
            complexes.push((lhs, rhs));
            added += 1;
        }
    }

    let reactions = complexes
        .into_iter()
        .enumerate()
        .map(|(i, (lhs, rhs))| {
            let reactant = Complex::new(lhs).expect("nonempty");
            let product = Complex::new(rhs).expect("nonempty");
            let g: f64 = rng.random_range(0.1..10.0);
            let k_forward = g * rt / reactant.monomial(&equilibrium);
            let k_backward = g * rt / product.monomial(&equilibrium);
            Reaction {
                id: format!("r{}", i + 1),
                reactant,
                product,
                k_forward,
                k_backward,
            }
        })
        .collect();
    MassActionSystem::new(species, reactions, equilibrium, rt).expect("generator is well formed")
}

/// Random perturbation with one or two sources and one or two targets.
pub fn random_perturbation<R: Rng>(
    rng: &mut R,
    sys: &MassActionSystem,
    single_source: bool,
) -> Perturbation {
    let mut order: Vec<usize> = (0..sys.species_count()).collect();
    order.shuffle(rng);
    let sources = if single_source || sys.species_count() < 4 { 1 } else { rng.random_range(1..=2) };
    let targets = rng.random_range(1..=2).min(sys.species_count() - sources);
    let split = |rng: &mut R, k: usize| -> Vec<f64> {
        if k == 1 {
            vec![1.0]
        } else {
            let a = rng.random_range(0.2..0.8);
            vec![a, 1.0 - a]
        }
    };
    let sigma = split(rng, sources);
    let removal = split(rng, targets);
    let mut injections: Vec<(&str, f64)> = Vec::new();
    for (i, &p) in sigma.iter().enumerate() {
        injections.push((sys.species()[order[i]].as_str(), p));
    }
    let mut target_names = Vec::new();
    for (j, &p) in removal.iter().enumerate() {
        let name = sys.species()[order[sources + j]].as_str();
        injections.push((name, -p));
        target_names.push(name);
    }
    Perturbation::new(sys, injections, target_names).expect("generator is well formed")
}
