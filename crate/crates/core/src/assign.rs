//! Optimal one-to-one matching of topic labels.

/// Row-to-column assignment maximizing the summed weights of a square
/// matrix (Hungarian method, O(n^3)). `out[r]` is the column given to row `r`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(weights.iter().all(|r| r.len() == n), "assignment needs a square matrix");
    // minimize cost = max - w, 1-based potentials
    let big = weights
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let cost = |r: usize, c: usize| big - weights[r][c];
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
                if !used[j] {
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
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (a, &b) in perm.iter().enumerate() {
        inv[b] = a;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn total(w: &[Vec<f64>], a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(r, &c)| w[r][c]).sum()
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = RngStream::new(9);
        for n in 1..=6 {
            let perms = permutations(n);
            for _ in 0..30 {
                let w: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| (rng.below(20) as f64) - 5.0).collect())
                    .collect();
                let a = max_weight_assignment(&w);
                let mut seen = a.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let best = perms.iter().map(|p| total(&w, p)).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(total(&w, &a), best);
            }
        }
    }

    #[test]
    fn identity_for_diagonal_dominance() {
        let w = vec![vec![5.0, 1.0, 0.0], vec![0.0, 7.0, 2.0], vec![1.0, 1.0, 3.0]];
        assert_eq!(max_weight_assignment(&w), vec![0, 1, 2]);
        assert_eq!(invert(&[2, 0, 1]), vec![1, 2, 0]);
    }
}
