//! Fill-reducing ordering for symmetric patterns.
//!
//! Plain minimum degree on an explicit elimination graph. Ties are broken by
//! the lowest index, so the permutation is a deterministic function of the
//! pattern.

use std::collections::BTreeSet;

/// Returns `perm` such that row/column `perm[k]` of the input is eliminated at
/// step `k`. `adjacency[i]` lists the off-diagonal neighbours of node `i`; the
/// relation must be symmetric.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<Vec<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut v: Vec<usize> = a.iter().copied().filter(|&j| j != i).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let mut eliminated = vec![false; n];
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();

    while let Some((_, v)) = queue.pop_first() {
        eliminated[v] = true;
        perm.push(v);
        let clique: Vec<usize> = std::mem::take(&mut adj[v])
            .into_iter()
            .filter(|&u| !eliminated[u])
            .collect();
        for &u in &clique {
            queue.remove(&(adj[u].len(), u));
            // adj[u] <- (adj[u] ∪ clique) \ {u, v, eliminated}
            merged.clear();
            let (a, b) = (&adj[u], &clique);
            let (mut p, mut q) = (0, 0);
            while p < a.len() || q < b.len() {
                let next = match (a.get(p), b.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        q += 1;
                        y
                    }
                    (Some(&x), None) => {
                        p += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        q += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && !eliminated[next] {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            queue.insert((adj[u].len(), u));
        }
    }
    perm
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}
