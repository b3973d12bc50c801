//! Dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on small dense matrices and decides rank with an
//! explicit cutoff relative to the largest singular value.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

/// Default relative cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

fn max_singular(values: &DVector<f64>) -> f64 {
    values.iter().copied().fold(0.0_f64, f64::max)
}

/// Singular value decomposition with both singular bases, sorted in
/// decreasing order. The bidiagonal solver sometimes returns a decomposition
/// that does not recompose to its input when a singular value is exactly
/// zero; that case falls back to one-sided Jacobi.
pub fn svd(a: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let direct = a.clone().svd(true, true);
    let error = match direct.clone().recompose() {
        Ok(r) => (r - a).norm() / a.norm().max(f64::MIN_POSITIVE),
        Err(_) => f64::INFINITY,
    };
    if error <= 1e-12 {
        return direct;
    }
    if a.nrows() >= a.ncols() {
        jacobi_svd(a)
    } else {
        let t = jacobi_svd(&a.transpose());
        SVD {
            u: t.v_t.map(|v| v.transpose()),
            v_t: t.u.map(|u| u.transpose()),
            singular_values: t.singular_values,
        }
    }
}

/// One-sided Jacobi SVD of a matrix with at least as many rows as columns.
/// Left vectors of zero singular values are left as zero columns.
fn jacobi_svd(a: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut u, &mut v] {
                    for k in 0..mat.nrows() {
                        let (xp, xq) = (mat[(k, p)], mat[(k, q)]);
                        mat[(k, p)] = c * xp - s * xq;
                        mat[(k, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, u.column(j).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut left = DMatrix::zeros(m, n);
    let mut v_t = DMatrix::zeros(n, n);
    for (i, &(j, sigma)) in order.iter().enumerate() {
        if sigma > 0.0 {
            left.set_column(i, &(u.column(j) / sigma));
        }
        v_t.set_row(i, &v.column(j).transpose());
    }
    SVD {
        u: Some(left),
        v_t: Some(v_t),
        singular_values: DVector::from_iterator(n, order.iter().map(|&(_, s)| s)),
    }
}

/// Orthonormal basis (as columns) of the span of the columns of `generators`.
pub fn orthonormal_columns(generators: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let m = generators.nrows();
    if generators.ncols() == 0 || m == 0 {
        return DMatrix::zeros(m, 0);
    }
    let svd = svd(generators);
    let u = svd.u.expect("left singular vectors requested");
    let cutoff = rel_tol * max_singular(&svd.singular_values);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cutoff && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(m, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    basis
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to at least n rows so that the SVD returns a full right basis.
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = svd(&padded);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let cutoff = rel_tol * max_singular(&svd.singular_values);
    let null: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(n, null.len());
    for (j, &i) in null.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    basis
}

/// Numerical rank of `a`.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let values = svd(a).singular_values;
    let cutoff = rel_tol * max_singular(&values);
    values.iter().filter(|&&s| s > cutoff && s > 0.0).count()
}

/// Minimum-norm least-squares solution of `a x = b` and the residual norm.
pub fn solve_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, f64) {
    if a.nrows() == 0 || a.ncols() == 0 {
        return (DVector::zeros(a.ncols()), b.norm());
    }
    let svd = svd(a);
    let eps = (rel_tol * max_singular(&svd.singular_values)).max(f64::MIN_POSITIVE);
    let x = svd
        .solve(b, eps)
        .expect("both singular vector sets were requested");
    let residual = (a * &x - b).norm();
    (x, residual)
}

/// Orthogonal projector onto the span of orthonormal columns.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let n = null_space(&a, RANK_TOL);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn orthonormal_columns_drops_dependent_generators() {
        let g = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let q = orthonormal_columns(&g, RANK_TOL);
        assert_eq!(q.ncols(), 2);
        let p = projector(&q);
        assert!((&p * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn min_norm_solution_of_consistent_singular_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let (x, res) = solve_min_norm(&a, &b, RANK_TOL);
        assert!(res < 1e-12);
        assert!((x[0] + x[1]).abs() < 1e-12);
        assert_eq!(rank(&a, RANK_TOL), 1);
    }

    #[test]
    fn svd_recomposes_tall_rank_deficient_input() {
        use crate::presets::random_connected_graph;
        use rand::SeedableRng;
        let (net, _, _) = random_connected_graph(&mut rand_chacha::ChaCha8Rng::seed_from_u64(9626043308192463527), 8);
        let net = net.scaled(15.6);
        let m = net.edge_count();
        let mut rows = Vec::new();
        for u in 0..net.vertex_count() {
            let mut row = vec![0.0; m];
            for &(e, _) in net.incident(u) {
                row[e] += net.orientation_sign(e, u);
            }
            let w = net.weighted_degree(u).sqrt();
            rows.push(row.iter().map(|x| x / w).collect::<Vec<_>>());
            rows.push(row);
        }
        let a = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        let d = svd(&a);
        assert!((d.recompose().unwrap() - &a).norm() < 1e-10);
        let b = &a * DVector::from_fn(m, |i, _| i as f64 - 2.0);
        assert!(solve_min_norm(&a, &b, RANK_TOL).1 < 1e-10);
    }

    #[test]
    fn jacobi_matches_on_singular_laplacian() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 3.0, -2.0, -1.0, -2.0, 3.0]);
        let d = jacobi_svd(&a);
        assert!((d.clone().recompose().unwrap() - &a).norm() < 1e-13);
        assert!(d.singular_values[2].abs() < 1e-14);
        assert!(d.singular_values[0] >= d.singular_values[1]);
        let v_t = d.v_t.unwrap();
        assert!((&v_t * v_t.transpose() - DMatrix::identity(3, 3)).norm() < 1e-13);
        let wide = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let d = svd(&wide);
        assert!((d.recompose().unwrap() - &wide).norm() < 1e-12);
        assert_eq!(null_space(&wide, RANK_TOL).ncols(), 2);
    }
}
