//! Rectangular linear assignment (Kuhn-Munkres with row/column potentials).

use nalgebra::DMatrix;

/// One-to-one assignment maximizing the summed weight. Every row is
/// assigned when `rows <= cols` (every column otherwise). Pairs are returned
/// sorted by row.
///
/// Runs in `O(n^2 m)` for an `n x m` matrix with `n <= m`. Among equal
/// reduced costs the lowest column index wins, so results are deterministic.
pub fn max_weight_assignment(weights: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = weights.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let mut pairs = if rows <= cols {
        min_cost_rows(rows, cols, |i, j| -weights[(i, j)])
    } else {
        min_cost_rows(cols, rows, |i, j| -weights[(j, i)])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    pairs
}

/// Shortest augmenting path Hungarian method for `n <= m`. Indices inside
/// are 1-based with slot 0 acting as the virtual source column.
fn min_cost_rows(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    debug_assert!(n <= m);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row currently assigned to column j (0 = none)
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect()
}
