use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId};
use crate::error::{Error, Result};

/// Average degree the planar generator thins down to (24,000 edges on
/// 10,000 nodes).
pub const PLANAR_AVG_DEGREE: f64 = 4.8;

const REGULAR_MAX_ATTEMPTS: usize = 200;

/// Random `d`-regular graph on `n` nodes from the pairing model.
///
/// Stubs are shuffled and paired; pairs that would form a self-loop or a
/// parallel edge go back into the pool and are re-paired. When the leftover
/// stubs cannot form any valid pair the attempt restarts.
pub fn generate_random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if (n * d) % 2 != 0 {
        return Err(Error::InvalidGraph(format!(
            "n*d must be even for a {d}-regular graph on {n} nodes"
        )));
    }
    if d >= n && !(n == 0 && d == 0) {
        return Err(Error::InvalidGraph(format!("degree {d} must be below node count {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..REGULAR_MAX_ATTEMPTS {
        if let Some(edges) = try_pairing(n, d, &mut rng) {
            return Graph::from_edges(n, edges);
        }
    }
    Err(Error::RetryBudgetExhausted {
        n,
        d,
        attempts: REGULAR_MAX_ATTEMPTS,
    })
}

fn try_pairing(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<HashSet<(NodeId, NodeId)>> {
    let mut edges = HashSet::with_capacity(n * d / 2);
    let mut stubs: Vec<NodeId> = (0..n as NodeId).flat_map(|v| std::iter::repeat(v).take(d)).collect();
    while !stubs.is_empty() {
        stubs.shuffle(rng);
        let mut leftover: BTreeMap<NodeId, usize> = BTreeMap::new();
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && edges.insert((a, b)) {
                continue;
            }
            *leftover.entry(pair[0]).or_default() += 1;
            *leftover.entry(pair[1]).or_default() += 1;
        }
        if leftover.is_empty() {
            break;
        }
        // Some remaining pair must still be connectable, otherwise restart.
        let nodes: Vec<NodeId> = leftover.keys().copied().collect();
        let suitable = nodes
            .iter()
            .enumerate()
            .any(|(i, &a)| nodes[i + 1..].iter().any(|&b| !edges.contains(&(a, b))));
        if !suitable {
            return None;
        }
        stubs = leftover
            .into_iter()
            .flat_map(|(v, k)| std::iter::repeat(v).take(k))
            .collect();
    }
    Some(edges)
}

/// Barabási–Albert preferential attachment: an `m`-clique seeds the graph
/// and each later node attaches to `m` distinct existing nodes chosen with
/// probability proportional to degree.
pub fn generate_power_law(n: usize, m: usize, seed: u64) -> Result<Graph> {
    if m < 1 || n <= m {
        return Err(Error::InvalidGraph(format!(
            "power-law generation needs n > m >= 1 (n={n}, m={m})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m * (n - m) + m * (m - 1) / 2);
    // one entry per edge endpoint, so sampling it is degree-proportional
    let mut endpoints: Vec<NodeId> = Vec::with_capacity(2 * edges.capacity());
    for u in 0..m as NodeId {
        for v in u + 1..m as NodeId {
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for new in m as NodeId..n as NodeId {
        targets.clear();
        while targets.len() < m {
            let t = if endpoints.is_empty() {
                rng.gen_range(0..new)
            } else {
                endpoints[rng.gen_range(0..endpoints.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, new));
            endpoints.push(t);
            endpoints.push(new);
        }
    }
    Graph::from_edges(n, edges)
}

/// Planar graph by incremental (stacked) triangulation followed by random
/// edge deletion down to an average degree of [`PLANAR_AVG_DEGREE`].
///
/// Deletion never drops a node below degree 1.
pub fn generate_planar(n: usize, seed: u64) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidGraph(format!("planar generation needs n >= 3, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faces: Vec<[NodeId; 3]> = vec![[0, 1, 2]];
    let mut edges: Vec<(NodeId, NodeId)> = vec![(0, 1), (0, 2), (1, 2)];
    for v in 3..n as NodeId {
        let f = rng.gen_range(0..faces.len());
        let [a, b, c] = faces[f];
        faces[f] = [a, b, v];
        faces.push([b, c, v]);
        faces.push([a, c, v]);
        edges.extend([(a, v), (b, v), (c, v)]);
    }
    let target = (PLANAR_AVG_DEGREE * n as f64 / 2.0).round() as usize;
    if edges.len() > target {
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        edges.shuffle(&mut rng);
        let mut kept = Vec::with_capacity(target);
        let mut excess = edges.len() - target;
        for (u, v) in edges {
            if excess > 0 && degree[u as usize] > 1 && degree[v as usize] > 1 {
                degree[u as usize] -= 1;
                degree[v as usize] -= 1;
                excess -= 1;
            } else {
                kept.push((u, v));
            }
        }
        edges = kept;
    }
    Graph::from_edges(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degree_sum(g: &Graph) -> usize {
        g.nodes().map(|v| g.degree(v)).sum()
    }

    #[test]
    fn regular_one_on_four_is_perfect_matching() {
        let g = generate_random_regular(4, 1, 7).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!(g.nodes().all(|v| g.degree(v) == 1));
    }

    #[test]
    fn regular_two_on_three_is_triangle() {
        let g = generate_random_regular(3, 2, 1).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn regular_large_is_exactly_regular() {
        let g = generate_random_regular(1000, 6, 42).unwrap();
        assert!(g.nodes().all(|v| g.degree(v) == 6));
        assert_eq!(degree_sum(&g), 2 * g.edge_count());
    }

    #[test]
    fn regular_rejects_odd_stub_count() {
        let err = generate_random_regular(5, 3, 0).unwrap_err();
        assert!(err.to_string().contains("even"));
        assert!(generate_random_regular(4, 4, 0).is_err());
    }

    #[test]
    fn regular_is_deterministic_per_seed() {
        assert_eq!(
            generate_random_regular(100, 4, 9).unwrap(),
            generate_random_regular(100, 4, 9).unwrap()
        );
    }

    #[test]
    fn power_law_small_cases() {
        let g = generate_power_law(3, 1, 5).unwrap();
        assert_eq!(g.edge_count(), 2);
        let g = generate_power_law(10, 2, 5).unwrap();
        assert_eq!(g.edge_count(), 17);
        assert!(g.is_edge(0, 1));
    }

    #[test]
    fn power_law_is_skewed() {
        let g = generate_power_law(1000, 3, 11).unwrap();
        let mut degrees: Vec<usize> = g.nodes().map(|v| g.degree(v)).collect();
        degrees.sort_unstable();
        let median = degrees[degrees.len() / 2];
        assert!(g.max_degree() >= 3 * median, "max {} median {median}", g.max_degree());
        assert_eq!(g.edge_count(), 3 * 997 + 3);
    }

    #[test]
    fn power_law_rejects_small_n() {
        assert!(generate_power_law(3, 3, 0).is_err());
        assert!(generate_power_law(3, 0, 0).is_err());
    }

    #[test]
    fn planar_base_and_bounds() {
        assert_eq!(generate_planar(3, 0).unwrap().edge_count(), 3);
        let g = generate_planar(500, 3).unwrap();
        assert!(g.edge_count() <= 3 * 500 - 6);
        assert_eq!(degree_sum(&g), 2 * g.edge_count());
        let g = generate_planar(10_000, 3).unwrap();
        assert!((22_000..=26_000).contains(&g.edge_count()), "{}", g.edge_count());
        assert!(generate_planar(2, 0).is_err());
    }
}
