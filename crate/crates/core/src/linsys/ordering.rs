//! Minimum-degree fill-reducing ordering on an explicit elimination graph.
//!
//! Ties are broken by the smallest node index so the ordering is a pure
//! function of the sparsity pattern.

use std::collections::{BTreeSet, HashSet};

use crate::sparse::CscMatrix;

/// Returns `perm` with `perm[new] = old` for the symmetric matrix whose upper
/// triangle is `upper`.
pub fn minimum_degree(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols();
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for (i, j, _) in upper.triplets() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut perm = Vec::with_capacity(n);
    let mut nbrs: Vec<usize> = Vec::new();

    while let Some((_, v)) = queue.pop_first() {
        perm.push(v);
        nbrs.clear();
        nbrs.extend(adj[v].iter().copied());
        nbrs.sort_unstable();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        // eliminated node's neighbours become a clique
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                if adj[u].insert(w) {
                    adj[w].insert(u);
                }
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    perm
}

pub fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrow_matrix_puts_hub_last() {
        // node 0 coupled to everything: eliminating it first would fill the matrix
        let n = 6;
        let mut t = vec![];
        for j in 0..n {
            t.push((j, j, 1.0));
            if j > 0 {
                t.push((0, j, 1.0));
            }
        }
        let upper = CscMatrix::from_triplets(n, n, &t).unwrap();
        let perm = minimum_degree(&upper);
        // the last two nodes tie at degree one, so the hub lands in one of them
        assert!(perm[n - 2..].contains(&0));
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }
}
