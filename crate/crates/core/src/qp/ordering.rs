//! Minimum-degree fill-reducing ordering for symmetric sparse matrices.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::csc::CscMatrix;

/// Minimum-degree elimination order of a symmetric pattern given by its upper
/// (or full) triangle. Returns `perm` with `perm[k]` the original index
/// eliminated at position `k`. Ties go to the lowest index, so the result is
/// deterministic.
pub fn minimum_degree(pattern: &CscMatrix) -> Vec<usize> {
    let n = pattern.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in pattern.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }

    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut eliminated = vec![false; n];
    let mut stamp = vec![0usize; n];
    let mut tag = 0usize;
    let mut perm = Vec::with_capacity(n);
    let mut merged: Vec<usize> = Vec::new();

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // Neighbors of u after eliminating v: old neighbors except v,
            // plus the clique formed by v's other neighbors.
            merged.clear();
            tag += 1;
            stamp[u] = tag;
            stamp[v] = tag;
            for &w in &adj[u] {
                if stamp[w] != tag {
                    stamp[w] = tag;
                    merged.push(w);
                }
            }
            for &w in &nbrs {
                if stamp[w] != tag {
                    stamp[w] = tag;
                    merged.push(w);
                }
            }
            adj[u].clear();
            adj[u].extend_from_slice(&merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    debug_assert_eq!(perm.len(), n);
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn is_a_permutation() {
        let trips: Vec<_> = (0..20).flat_map(|i| [(i, i, 1.0), (i / 2, i, 1.0)]).collect();
        let m = CscMatrix::from_triplets(20, 20, &trips);
        let mut p = minimum_degree(&m);
        p.sort();
        assert_eq!(p, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn arrow_matrix_hub_last() {
        // Node 0 is connected to everybody; eliminating it first would fill
        // the whole matrix.
        let mut trips: Vec<_> = (0..10).map(|i| (i, i, 1.0)).collect();
        trips.extend((1..10).map(|j| (0, j, 1.0)));
        let m = CscMatrix::from_triplets(10, 10, &trips);
        let p = minimum_degree(&m);
        assert!(p[..8].iter().all(|&v| v != 0));
    }
}
