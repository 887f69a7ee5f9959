//! Minimum-cost perfect matching on square cost matrices.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[row]` is the column matched to `row`.
    pub perm: Vec<usize>,
    pub cost: f64,
}

/// Shortest augmenting path with row/column potentials, `O(K³)`.
///
/// Rows are inserted in index order and, among equal reduced costs, the
/// lowest column index is chosen, so the result is deterministic.
pub fn solve_assignment(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cost.ncols(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            perm: vec![],
            cost: 0.0,
        });
    }
    // 1-based arrays with a virtual column 0, following the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[col_owner[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum();
    Ok(Assignment { perm, cost: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn go(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for c in 0..n {
                if !used[c] {
                    used[c] = true;
                    go(cost, row + 1, used, acc + cost[[row, c]], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn diagonal_and_antidiagonal() {
        let a = solve_assignment(array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
        let b = solve_assignment(array![[1.0, 0.0], [0.0, 1.0]].view()).unwrap();
        assert_eq!(b.perm, vec![1, 0]);
        assert_eq!(b.cost, 0.0);
    }

    #[test]
    fn ties_resolve_to_identity() {
        let a = solve_assignment(Array2::<f64>::zeros((4, 4)).view()).unwrap();
        assert_eq!(a.perm, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = task_rng(11, 0);
        for k in 1..=6 {
            for _ in 0..100 {
                let c = Array2::from_shape_fn((k, k), |_| rng.random_range(-10.0..10.0));
                let a = solve_assignment(c.view()).unwrap();
                let mut seen = a.perm.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..k).collect::<Vec<_>>());
                assert!((a.cost - brute_force(&c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_nan() {
        assert!(solve_assignment(array![[f64::NAN]].view()).is_err());
        assert!(solve_assignment(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }
}
