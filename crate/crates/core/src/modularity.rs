//! Newman modularity of the module graph: `Q = tr(G) − Σ(G²)` for the
//! tridiagonal group-fraction matrix of `M` modules and `T` tasks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Edge fractions between module groups; `edges` is the total edge count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMatrix {
    pub fractions: Matrix,
    pub edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModularityReport {
    pub modalities: usize,
    pub tasks: usize,
    pub edges: usize,
    pub trace: f64,
    pub square_sum: f64,
    pub q: f64,
}

/// `m = M(T+2) − 1`.
pub fn edge_count(n_modalities: usize, n_tasks: usize) -> usize {
    n_modalities * (n_tasks + 2) - 1
}

fn check_counts(n_modalities: usize, n_tasks: usize) -> Result<()> {
    if n_modalities == 0 || n_tasks == 0 {
        return Err(Error::contract(format!(
            "modularity needs at least one module and one task, got {n_modalities} and {n_tasks}"
        )));
    }
    Ok(())
}

/// Diagonal `(T+1)/m`, off-diagonals `1/m`; a single group is `[1]`.
pub fn build_group_matrix(n_modalities: usize, n_tasks: usize) -> Result<GroupMatrix> {
    check_counts(n_modalities, n_tasks)?;
    let edges = edge_count(n_modalities, n_tasks);
    if n_modalities == 1 {
        return Ok(GroupMatrix {
            fractions: Matrix::identity(1),
            edges,
        });
    }
    let m = edges as f64;
    let mut g = Matrix::zeros(n_modalities, n_modalities);
    for i in 0..n_modalities {
        g.set(i, i, (n_tasks + 1) as f64 / m);
        if i + 1 < n_modalities {
            g.set(i, i + 1, 1.0 / m);
            g.set(i + 1, i, 1.0 / m);
        }
    }
    Ok(GroupMatrix { fractions: g, edges })
}

/// Trace minus the sum of all entries of `G²`, by explicit multiplication.
pub fn modularity_from_matrix(group: &GroupMatrix) -> Result<ModularityReport> {
    let g = &group.fractions;
    let square = g.matmul(g)?;
    let trace = g.trace();
    let square_sum = square.sum();
    let n_modalities = g.rows();
    let n_tasks = (group.edges + 1) / n_modalities - 2;
    Ok(ModularityReport {
        modalities: n_modalities,
        tasks: n_tasks,
        edges: group.edges,
        trace,
        square_sum,
        q: trace - square_sum,
    })
}

/// Rational closed form, valid for `M ≥ 2`.
pub fn modularity_closed_form(n_modalities: usize, n_tasks: usize) -> Result<ModularityReport> {
    check_counts(n_modalities, n_tasks)?;
    if n_modalities < 2 {
        return Err(Error::contract(
            "closed-form modularity needs at least two modules; use the explicit matrix path",
        ));
    }
    let (mm, t) = (n_modalities as f64, n_tasks as f64);
    let edges = edge_count(n_modalities, n_tasks);
    let m = edges as f64;
    let trace = mm * (t + 1.0) / m;
    let square_sum = (mm * t * t + 6.0 * mm * t + 9.0 * mm - 4.0 * t - 10.0) / (m * m);
    Ok(ModularityReport {
        modalities: n_modalities,
        tasks: n_tasks,
        edges,
        trace,
        square_sum,
        q: trace - square_sum,
    })
}

/// Closed form where valid, explicit matrix otherwise.
pub fn modularity(n_modalities: usize, n_tasks: usize) -> Result<ModularityReport> {
    if n_modalities >= 2 {
        modularity_closed_form(n_modalities, n_tasks)
    } else {
        modularity_from_matrix(&build_group_matrix(n_modalities, n_tasks)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn explicit(m: usize, t: usize) -> f64 {
        modularity_from_matrix(&build_group_matrix(m, t).unwrap()).unwrap().q
    }

    #[test]
    fn two_modules_one_task() {
        let g = build_group_matrix(2, 1).unwrap();
        assert_eq!(g.edges, 5);
        assert_eq!(g.fractions.values(), &[0.4, 0.2, 0.2, 0.4]);
        let r = modularity_from_matrix(&g).unwrap();
        assert!((r.trace - 0.8).abs() < 1e-14);
        assert!((r.square_sum - 18.0 / 25.0).abs() < 1e-14);
        assert!((r.q - 0.08).abs() < 1e-14);
        assert!((modularity_closed_form(2, 1).unwrap().q - 0.08).abs() < 1e-14);
    }

    #[test]
    fn four_modules_two_tasks() {
        let expected = 98.0 / 225.0;
        assert!((explicit(4, 2) - expected).abs() < 1e-14);
        let c = modularity_closed_form(4, 2).unwrap();
        assert!((c.square_sum - 82.0 / 225.0).abs() < 1e-14);
        assert!((c.q - expected).abs() < 1e-14);
    }

    #[test]
    fn single_module_is_zero() {
        for t in 1..10 {
            assert_eq!(build_group_matrix(1, t).unwrap().fractions.values(), &[1.0]);
            assert_eq!(explicit(1, t), 0.0);
            assert_eq!(modularity(1, t).unwrap().q, 0.0);
        }
        assert!(modularity_closed_form(1, 3).is_err());
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(build_group_matrix(0, 2).is_err());
        assert!(build_group_matrix(3, 0).is_err());
    }

    #[test]
    fn closed_form_matches_explicit_on_grid() {
        for m in 2..=50 {
            for t in 1..=20 {
                let diff = (explicit(m, t) - modularity_closed_form(m, t).unwrap().q).abs();
                assert!(diff < 1e-12, "M={m} T={t} diff {diff}");
            }
        }
    }

    #[test]
    fn large_network_approaches_task_limit() {
        let q = modularity_closed_form(1000, 10).unwrap().q;
        assert!((q - 11.0 / 12.0).abs() < 0.01);
        assert!(q < 1.0);
    }

    #[test]
    fn square_sum_is_the_squared_row_sums() {
        let g = build_group_matrix(7, 3).unwrap();
        let ones = vec![1.0; 7];
        let row_sums = g.fractions.matvec(&ones).unwrap();
        let alt: f64 = row_sums.iter().map(|x| x * x).sum();
        let r = modularity_from_matrix(&g).unwrap();
        assert!((alt - r.square_sum).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn increasing_in_modules(m in 1usize..49, t in 1usize..20) {
            prop_assert!(explicit(m + 1, t) > explicit(m, t));
        }

        #[test]
        fn matrix_is_symmetric_and_non_negative(m in 1usize..30, t in 1usize..10) {
            let g = build_group_matrix(m, t).unwrap().fractions;
            for i in 0..m {
                for j in 0..m {
                    prop_assert!(g.get(i, j) >= 0.0);
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
        }
    }
}
