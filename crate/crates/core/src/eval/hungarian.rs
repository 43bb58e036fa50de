//! Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^2 m)).

use alloc::vec;
use alloc::vec::Vec;

use crate::embed::Matrix;

/// Optimal one-to-one assignment of a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `rows[i]` is the column assigned to row `i`.
    pub rows: Vec<Option<usize>>,
    pub cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i, c)))
    }
}

/// Assigns `min(N, M)` pairs so that the summed cost is minimal. Costs must
/// be finite; use a large sentinel for forbidden pairs.
pub fn hungarian(cost: &Matrix) -> Assignment {
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Assignment {
            rows: vec![None; n],
            cost: 0.0,
        };
    }
    let transposed = n > m;
    let (r, c) = if transposed { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| if transposed { cost.get(j, i) } else { cost.get(i, j) };

    // 1-based potentials; column 0 is the virtual start
    let mut u = vec![0.0f64; r + 1];
    let mut v = vec![0.0f64; c + 1];
    let mut owner = vec![0usize; c + 1];
    let mut way = vec![0usize; c + 1];
    for i in 1..=r {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; c + 1];
        let mut used = vec![false; c + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=c {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=c {
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

    let mut rows = vec![None; n];
    for j in 1..=c {
        if owner[j] != 0 {
            let (i, col) = if transposed { (j - 1, owner[j] - 1) } else { (owner[j] - 1, j - 1) };
            rows[i] = Some(col);
        }
    }
    let total = rows
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost.get(i, c)))
        .sum();
    Assignment { rows, cost: total }
}
