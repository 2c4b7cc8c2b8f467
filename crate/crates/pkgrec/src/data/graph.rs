use rand::Rng;

/// Directed adjacency with sorted, deduplicated neighbor lists.
/// Self-loops are dropped at construction; self-attention is handled by the
/// model, not the graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<u32>>,
}

impl Graph {
    pub fn from_edges(num_nodes: usize, edges: &[(u32, u32)]) -> Self {
        let mut adj = vec![Vec::new(); num_nodes];
        for &(from, to) in edges {
            if from != to {
                adj[from as usize].push(to);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Graph { adj }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(|l| l.len()).sum()
    }

    pub fn has_edges(&self) -> bool {
        self.adj.iter().any(|l| !l.is_empty())
    }

    pub fn neighbors(&self, node: u32) -> &[u32] {
        &self.adj[node as usize]
    }

    pub fn out_degree(&self, node: u32) -> usize {
        self.adj[node as usize].len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut indeg = vec![0; self.adj.len()];
        for list in &self.adj {
            for &to in list {
                indeg[to as usize] += 1;
            }
        }
        indeg
    }

    /// Edge list in (from, to) sorted order, for serialization.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (from, list) in self.adj.iter().enumerate() {
            for &to in list {
                out.push((from as u32, to));
            }
        }
        out
    }
}

/// A sampled multi-hop neighborhood rooted at one node. `children` holds the
/// sampled neighbors at the next hop; leaves sit at the hop limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleTree {
    pub node: u32,
    pub children: Vec<SampleTree>,
}

impl SampleTree {
    /// Node ids at each depth ≥ 1, for budget/membership checks.
    pub fn per_layer(&self) -> Vec<Vec<u32>> {
        let mut layers: Vec<Vec<u32>> = Vec::new();
        fn walk(t: &SampleTree, depth: usize, layers: &mut Vec<Vec<u32>>) {
            for c in &t.children {
                if layers.len() <= depth {
                    layers.resize(depth + 1, Vec::new());
                }
                layers[depth].push(c.node);
                walk(c, depth + 1, layers);
            }
        }
        walk(self, 0, &mut layers);
        layers
    }
}

/// Uniform sample of `budget` distinct elements (all of them when the list is
/// short). Selection order is the draw order.
fn sample_without_replacement(pool: &[u32], budget: usize, rng: &mut impl Rng) -> Vec<u32> {
    if pool.len() <= budget {
        return pool.to_vec();
    }
    // Partial Fisher-Yates over an index vector.
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut out = Vec::with_capacity(budget);
    for i in 0..budget {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
        out.push(pool[idx[i]]);
    }
    out
}

/// Layered neighborhood sampling: `budgets[0]` neighbors of the root, then
/// `budgets[1]` neighbors of each of those, and so on. Empty budgets produce
/// a bare root (the graph side contributes self-attention only).
pub fn sample_tree(graph: &Graph, node: u32, budgets: &[usize], rng: &mut impl Rng) -> SampleTree {
    let children = if budgets.is_empty() {
        Vec::new()
    } else {
        sample_without_replacement(graph.neighbors(node), budgets[0], rng)
            .into_iter()
            .map(|n| sample_tree(graph, n, &budgets[1..], rng))
            .collect()
    };
    SampleTree { node, children }
}
