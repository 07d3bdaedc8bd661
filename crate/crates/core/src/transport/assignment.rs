//! Dense linear assignment by shortest augmenting paths with potentials.

use nalgebra::DMatrix;

/// Optimal assignment of rows to columns of a square cost matrix.
/// Returns the column of each row and the total cost.
pub fn hungarian(cost: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; index 0 is a virtual row/column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    (assign, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(cost: &DMatrix<f64>) -> f64 {
        fn rec(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            let n = cost.nrows();
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[(row, j)] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.nrows()])
    }

    #[test]
    fn matches_brute_force() {
        let mut seed = 7u64;
        for n in 1..=6 {
            let cost = DMatrix::from_fn(n, n, |_, _| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 33) % 1000) as f64 / 37.0
            });
            let (assign, total) = hungarian(&cost);
            let mut seen = assign.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert!((total - brute(&cost)).abs() < 1e-9);
        }
    }
}
