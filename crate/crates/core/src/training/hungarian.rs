//! Minimum-cost bipartite assignment.

use crate::{Error, Matrix, Result};

/// Minimum-cost one-to-one matching of `min(P, G)` pairs for a `P×G` cost
/// matrix, returned as `(row, col)` sorted by row.
///
/// Among optimal matchings, pairwise swaps that keep the cost unchanged are
/// applied until no row can take a lower column index, so ties resolve to
/// the lowest row index first and then the lowest column index.
pub fn hungarian_match(cost: &Matrix) -> Result<Vec<(usize, usize)>> {
    if !cost.is_finite() {
        return Err(Error::Contract("assignment costs must be finite".into()));
    }
    let (p, g) = (cost.rows(), cost.cols());
    if p == 0 || g == 0 {
        return Ok(Vec::new());
    }
    let mut pairs = if p <= g {
        solve(cost)
    } else {
        let mut t: Vec<(usize, usize)> = solve(&cost.transpose()).into_iter().map(|(c, r)| (r, c)).collect();
        t.sort_unstable();
        t
    };
    settle_ties(cost, &mut pairs);
    Ok(pairs)
}

/// Shortest augmenting path solver for `n ≤ m`, rows added one at a time.
fn solve(cost: &Matrix) -> Vec<(usize, usize)> {
    let (n, m) = (cost.rows(), cost.cols());
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // `owner[j]` is the 1-based row assigned to 1-based column `j`.
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

fn settle_ties(cost: &Matrix, pairs: &mut Vec<(usize, usize)>) {
    let total = |ps: &[(usize, usize)]| ps.iter().map(|&(r, c)| cost.get(r, c)).sum::<f64>();
    let tol = 1e-12 * (1.0 + total(pairs).abs());
    loop {
        let mut changed = false;
        // Swap columns between two matched rows.
        for a in 0..pairs.len() {
            for b in a + 1..pairs.len() {
                let ((ra, ca), (rb, cb)) = (pairs[a], pairs[b]);
                if cb < ca {
                    let before = cost.get(ra, ca) + cost.get(rb, cb);
                    let after = cost.get(ra, cb) + cost.get(rb, ca);
                    if after <= before + tol {
                        pairs[a].1 = cb;
                        pairs[b].1 = ca;
                        changed = true;
                    }
                }
            }
        }
        // Move a row onto a lower unused column, or hand a column to a
        // lower unmatched row.
        let used_cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let used_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        for k in 0..pairs.len() {
            let (r, c) = pairs[k];
            if let Some(nc) = (0..c).find(|nc| !used_cols.contains(nc) && cost.get(r, *nc) <= cost.get(r, c) + tol) {
                pairs[k].1 = nc;
                changed = true;
                break;
            }
            if let Some(nr) = (0..r).find(|nr| !used_rows.contains(nr) && cost.get(*nr, c) <= cost.get(r, c) + tol) {
                pairs[k].0 = nr;
                changed = true;
                break;
            }
        }
        pairs.sort_unstable();
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_cost_matches_diagonal() {
        let c = m(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        assert_eq!(hungarian_match(&c).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn anti_diagonal() {
        let c = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(hungarian_match(&c).unwrap(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_cardinality() {
        let c = m(&[&[3.0, 1.0], &[0.5, 2.0], &[0.0, 0.0]]);
        let r = hungarian_match(&c).unwrap();
        assert_eq!(r.len(), 2);
        let total: f64 = r.iter().map(|&(a, b)| c.get(a, b)).sum();
        assert_eq!(total, 0.5);
    }

    #[test]
    fn all_ties_pick_lowest_indices() {
        assert_eq!(hungarian_match(&Matrix::zeros(3, 3)).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(hungarian_match(&Matrix::zeros(2, 4)).unwrap(), vec![(0, 0), (1, 1)]);
        assert_eq!(hungarian_match(&Matrix::zeros(4, 2)).unwrap(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(hungarian_match(&m(&[&[f64::NAN]])).is_err());
        assert!(hungarian_match(&Matrix::zeros(0, 3)).unwrap().is_empty());
    }
}
