//! Minimum-cost bipartite assignment (Kuhn–Munkres with potentials).

use nalgebra::DMatrix;

/// Optimal assignment of rows to columns minimizing the total cost.
///
/// Rectangular matrices are allowed; as many rows as possible are matched.
/// `+∞` entries are never selected: a row whose only options are infinite is
/// left unassigned (`None`). Among assignments with the most finite pairs the
/// total cost is minimal. Costs may be negative.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    // Infinite entries become a penalty larger than any finite assignment.
    let finite_span: f64 = cost
        .iter()
        .filter(|c| c.is_finite())
        .map(|c| c.abs())
        .sum();
    let big = 2.0 * finite_span + 1.0;
    let work = |i: usize, j: usize| {
        let c = cost[(i, j)];
        if c.is_finite() {
            c
        } else {
            big
        }
    };
    let row_to_col = if n <= m {
        solve(n, m, work)
    } else {
        let col_to_row = solve(m, n, |i, j| work(j, i));
        let mut out = vec![None; n];
        for (j, r) in col_to_row.into_iter().enumerate() {
            if let Some(i) = r {
                out[i] = Some(j);
            }
        }
        out
    };
    row_to_col
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.filter(|&j| cost[(i, j)].is_finite()))
        .collect()
}

/// Square-or-wide case `n <= m`: every row is matched.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Total cost of an assignment (unassigned rows contribute nothing).
pub fn assignment_cost(cost: &DMatrix<f64>, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| cost[(i, j)]))
        .sum()
}
