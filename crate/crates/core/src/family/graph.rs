//! Rank-ordered latent graph and repeated shortest-path extraction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Directed acyclic graph over near-curve records in ascending controlled
/// value, plus a source and a sink.
///
/// Record `i` links to its `k` latent-nearest records of strictly higher
/// controlled value. The source links to the lowest `n_terminal` records and the
/// highest `n_terminal` link to the sink, both with weight zero, where
/// `n_terminal = min(N, |H| / 2)` keeps the two groups disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyGraph {
    /// Outgoing `(target, weight)` lists; nodes `0..n` are records, then source and sink.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub source: usize,
    pub sink: usize,
    pub k: usize,
    pub n_terminal: usize,
}

impl FamilyGraph {
    pub fn n_records(&self) -> usize {
        self.source
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, out)| out.iter().map(move |&(b, w)| (a, b, w)))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Builds the graph from records sorted by controlled value (`values`
/// non-decreasing) and their latent vectors.
pub fn build_family_graph(values: &[f64], latents: &[Vec<f64>], k: usize, n: usize) -> FamilyGraph {
    let m = values.len();
    let (source, sink) = (m, m + 1);
    let mut adjacency = vec![Vec::new(); m + 2];
    for a in 0..m {
        let mut cands: Vec<(f64, usize)> =
            (a + 1..m).filter(|&b| values[b] > values[a]).map(|b| (dist(&latents[a], &latents[b]), b)).collect();
        cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        adjacency[a] = cands.into_iter().take(k).map(|(w, b)| (b, w)).collect();
    }
    let n_terminal = n.min(m / 2);
    adjacency[source] = (0..n_terminal).map(|b| (b, 0.0)).collect();
    for a in m - n_terminal..m {
        adjacency[a].push((sink, 0.0));
    }
    FamilyGraph { adjacency, source, sink, k, n_terminal }
}

#[derive(PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on node index for determinism
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `s` to `d` over non-negative weights, skipping removed nodes.
/// Returns the cost and the node sequence including both ends.
pub fn shortest_path(adjacency: &[Vec<(usize, f64)>], s: usize, d: usize, removed: &[bool]) -> Option<(f64, Vec<usize>)> {
    let n = adjacency.len();
    let mut best = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    best[s] = 0.0;
    heap.push(State { cost: 0.0, node: s });
    while let Some(State { cost, node }) = heap.pop() {
        if node == d {
            let mut path = vec![d];
            let mut cur = d;
            while cur != s {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            return Some((cost, path));
        }
        if cost > best[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            if removed[next] {
                continue;
            }
            let c = cost + w;
            if c < best[next] {
                best[next] = c;
                prev[next] = node;
                heap.push(State { cost: c, node: next });
            }
        }
    }
    None
}

/// Up to `count` source-to-sink paths; each extraction removes the interior
/// nodes of the previous ones. Returns `(cost, record indices)` per path.
pub fn extract_paths(g: &FamilyGraph, count: usize) -> Vec<(f64, Vec<usize>)> {
    let mut removed = vec![false; g.adjacency.len()];
    let mut out = Vec::new();
    while out.len() < count {
        let Some((cost, path)) = shortest_path(&g.adjacency, g.source, g.sink, &removed) else {
            log::warn!("graph disconnected after {} of {count} families", out.len());
            break;
        };
        let interior: Vec<usize> = path[1..path.len() - 1].to_vec();
        for &v in &interior {
            removed[v] = true;
        }
        out.push((cost, interior));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(adj: &[Vec<(usize, f64)>], s: usize, d: usize, removed: &[bool]) -> Option<f64> {
        fn walk(adj: &[Vec<(usize, f64)>], v: usize, d: usize, removed: &[bool], acc: f64, best: &mut Option<f64>) {
            if v == d {
                *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
                return;
            }
            for &(n, w) in &adj[v] {
                if !removed[n] {
                    walk(adj, n, d, removed, acc + w, best);
                }
            }
        }
        let mut best = None;
        walk(adj, s, d, removed, 0.0, &mut best);
        best
    }

    fn path_cost(adj: &[Vec<(usize, f64)>], path: &[usize]) -> f64 {
        path.windows(2).map(|w| adj[w[0]].iter().find(|e| e.0 == w[1]).expect("edge exists").1).sum()
    }

    fn random_graph(rng: &mut ChaCha8Rng) -> FamilyGraph {
        let m = rng.random_range(2..=10);
        let mut values: Vec<f64> = (0..m).map(|_| rng.random_range(0..6) as f64).collect();
        values.sort_by(f64::total_cmp);
        let latents: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        build_family_graph(&values, &latents, rng.random_range(1..=5), rng.random_range(1..=4))
    }

    #[test]
    fn dijkstra_matches_exhaustive_search_on_random_dags() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let g = random_graph(&mut rng);
            assert!(g.adjacency.len() <= 12);
            let removed = vec![false; g.adjacency.len()];
            let got = shortest_path(&g.adjacency, g.source, g.sink, &removed);
            let want = brute_force(&g.adjacency, g.source, g.sink, &removed);
            match (got, want) {
                (Some((c, p)), Some(w)) => {
                    assert!((c - w).abs() < 1e-12);
                    assert!((path_cost(&g.adjacency, &p) - c).abs() < 1e-12);
                }
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn hand_built_graph_has_the_known_optimum() {
        // s=6, d=7; two routes 0→2→4 (1+1) and 1→3→5 (0.5+0.5) plus a shortcut 0→5 (3)
        let mut adj = vec![Vec::new(); 8];
        adj[6] = vec![(0, 0.0), (1, 0.0)];
        adj[0] = vec![(2, 1.0), (5, 3.0)];
        adj[1] = vec![(3, 0.5)];
        adj[2] = vec![(4, 1.0)];
        adj[3] = vec![(5, 0.5)];
        adj[4] = vec![(7, 0.0)];
        adj[5] = vec![(7, 0.0)];
        let removed = vec![false; 8];
        let (c, p) = shortest_path(&adj, 6, 7, &removed).unwrap();
        assert_eq!(p, vec![6, 1, 3, 5, 7]);
        assert_eq!(c, 1.0);
        assert_eq!(brute_force(&adj, 6, 7, &removed), Some(1.0));
    }

    #[test]
    fn graph_respects_rank_degree_and_terminal_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..40).map(|i| (i / 2) as f64).collect();
        let latents: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let g = build_family_graph(&values, &latents, 5, 50);
        assert_eq!(g.n_terminal, 20);
        assert_eq!(g.adjacency[g.source].len(), 20);
        for (a, b, w) in g.edges() {
            assert!(w >= 0.0);
            if a < 40 && b < 40 {
                assert!(values[b] > values[a]);
            }
        }
        for a in 0..40 {
            assert!(g.adjacency[a].iter().filter(|e| e.0 < 40).count() <= 5);
        }
        let into_sink = (0..40).filter(|&a| g.adjacency[a].iter().any(|e| e.0 == g.sink)).count();
        assert_eq!(into_sink, 20);
    }

    #[test]
    fn two_records_give_a_single_edge() {
        let g = build_family_graph(&[0.1, 0.2], &[vec![0.0], vec![1.0]], 5, 50);
        assert_eq!(g.adjacency[0], vec![(1, 1.0)]);
        assert_eq!(g.adjacency[2], vec![(0, 0.0)]);
        assert_eq!(g.adjacency[1], vec![(3, 0.0)]);
        let paths = extract_paths(&g, 5);
        assert_eq!(paths, vec![(1.0, vec![0, 1])]);
    }

    #[test]
    fn extractions_are_disjoint_and_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let m = 60;
            let mut values: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            values.sort_by(f64::total_cmp);
            let latents: Vec<Vec<f64>> = (0..m).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let g = build_family_graph(&values, &latents, 5, 10);
            let paths = extract_paths(&g, 5);
            assert!(!paths.is_empty());
            let mut seen = std::collections::HashSet::new();
            for (_, p) in &paths {
                for v in p {
                    assert!(seen.insert(*v), "node {v} reused");
                }
                assert!(p.windows(2).all(|w| values[w[1]] > values[w[0]]));
            }
            assert!(paths.windows(2).all(|w| w[1].0 >= w[0].0));
        }
    }
}
