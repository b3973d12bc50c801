//! Brute-force energy minimiser used to cross-check [`super::electrical_flow`].
//!
//! Works directly in flow space: a particular unit flow is routed along a
//! BFS forest rooted at the marked set, and every non-forest edge closes one
//! basis direction that leaves all vertex balances (and the total over `M`)
//! unchanged. The energy is then minimised over that affine space by normal
//! equations. No potentials or Laplacians are involved.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::{FlowVector, Network, SourceSpec};
use crate::error::{Error, Result};

/// Largest instance the oracle accepts.
pub const MAX_ORACLE_EDGES: usize = 12;

pub fn brute_force_min_energy(net: &Network, spec: &SourceSpec) -> Result<FlowVector> {
    if net.edge_count() > MAX_ORACLE_EDGES {
        return Err(Error::TooLarge(format!(
            "oracle accepts at most {MAX_ORACLE_EDGES} edges, got {}",
            net.edge_count()
        )));
    }
    spec.check_reachable(net)?;

    let n = net.vertex_count();
    // parent[u] = (edge, parent vertex) in a BFS forest rooted at M.
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut in_forest = vec![false; n];
    let mut tree_edge = vec![false; net.edge_count()];
    let mut queue = VecDeque::new();
    for &m in spec.marked() {
        in_forest[m] = true;
        queue.push_back(m);
    }
    while let Some(u) = queue.pop_front() {
        for &(e, v) in net.incident(u) {
            if !in_forest[v] {
                in_forest[v] = true;
                parent[v] = Some((e, u));
                tree_edge[e] = true;
                queue.push_back(v);
            }
        }
    }

    // Adds `amount` along the ordered pair (from, to) of edge e.
    let push = |flow: &mut [f64], e: usize, from: usize, amount: f64| {
        flow[e] += net.orientation_sign(e, from) * amount;
    };
    // Sends `amount` from u up to its root.
    let to_root = |flow: &mut [f64], mut u: usize, amount: f64| {
        while let Some((e, p)) = parent[u] {
            push(flow, e, u, amount);
            u = p;
        }
    };

    let mut particular = vec![0.0; net.edge_count()];
    for &(u, p) in spec.sigma() {
        to_root(&mut particular, u, p);
    }

    let mut directions: Vec<Vec<f64>> = Vec::new();
    for (e, &(a, b)) in net.edges().iter().enumerate() {
        if tree_edge[e] || !in_forest[a] {
            continue;
        }
        let mut d = vec![0.0; net.edge_count()];
        push(&mut d, e, a, 1.0);
        to_root(&mut d, b, 1.0);
        to_root(&mut d, a, -1.0);
        directions.push(d);
    }

    let m = net.edge_count();
    let k = directions.len();
    if k == 0 {
        return Ok(FlowVector(particular));
    }
    let basis = DMatrix::from_fn(m, k, |i, j| directions[j][i]);
    let inv_w = DVector::from_iterator(m, net.weights().iter().map(|w| 1.0 / w));
    let weighted = DMatrix::from_fn(m, k, |i, j| basis[(i, j)] * inv_w[i]);
    let gram = basis.transpose() * &weighted;
    let theta_p = DVector::from_column_slice(&particular);
    let rhs = -(weighted.transpose() * &theta_p);
    let z = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("cycle-space Gram matrix is singular".into()))?;
    let theta = theta_p + basis * z;
    Ok(FlowVector(theta.iter().copied().collect()))
}
