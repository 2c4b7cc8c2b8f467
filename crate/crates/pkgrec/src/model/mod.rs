//! The scoring model: a recurrent session encoder whose output is refined by
//! attention over sampled neighborhoods of the social graph, scored against
//! package representations refined the same way over the dependency graph.

pub mod forward;
pub mod params;

pub use forward::{
    draw_dependency_samples, draw_social_sample, AttentionEntry, AttentionRecord, BatchForward,
    InstanceOutput,
};
pub use params::{CellParams, Checkpoint, ParameterSet};

use crate::data::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrentCell {
    Lstm,
    /// Single tanh layer; mostly for analytic fixtures.
    Tanh,
}

impl RecurrentCell {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecurrentCell::Lstm => "lstm",
            RecurrentCell::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lstm" => RecurrentCell::Lstm,
            "tanh" => RecurrentCell::Tanh,
            _ => return None,
        })
    }
}

/// Which information pathways are wired in. `Full` uses everything; the
/// others disable one pathway each (both-graphs-off is expressed by zeroing
/// the sample budgets instead).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Social propagation only; package representations stay at layer 0.
    SocialOnly,
    /// Dependency propagation only; the developer representation is a plain
    /// transform of the session encoding.
    DependencyOnly,
    /// Friends contribute dynamic interests only (static embedding zeroed).
    DynamicOnly,
    /// Friends contribute static interests only (dynamic encoding zeroed).
    StaticOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::SocialOnly,
        Variant::DependencyOnly,
        Variant::DynamicOnly,
        Variant::StaticOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SocialOnly => "social-only",
            Variant::DependencyOnly => "dependency-only",
            Variant::DynamicOnly => "dynamic-only",
            Variant::StaticOnly => "static-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn allows_social(&self) -> bool {
        !matches!(self, Variant::DependencyOnly)
    }

    pub fn allows_dependency(&self) -> bool {
        !matches!(self, Variant::SocialOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Package-embedding (and final representation) dimension E.
    pub embed_dim: usize,
    /// Recurrent hidden dimension H.
    pub hidden_dim: usize,
    /// Propagation layers L.
    pub layers: usize,
    /// First-layer social sample budget (β); deeper layers halve it.
    pub social_budget: usize,
    /// First-layer dependency sample budget (γ); deeper layers halve it.
    pub dependency_budget: usize,
    pub dropout: f64,
    pub cell: RecurrentCell,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 100,
            hidden_dim: 100,
            layers: 2,
            social_budget: 10,
            dependency_budget: 10,
            dropout: 0.2,
            cell: RecurrentCell::Lstm,
        }
    }
}

impl ModelConfig {
    /// Per-layer sample budgets: the first-layer budget, then halved per
    /// additional hop (never below 1). Budget 0 disables the graph side.
    pub fn layer_budgets(first: usize, layers: usize) -> Vec<usize> {
        if first == 0 {
            return Vec::new();
        }
        (0..layers).map(|l| (first >> l).max(1)).collect()
    }

    pub fn social_budgets(&self) -> Vec<usize> {
        Self::layer_budgets(self.social_budget, self.layers)
    }

    pub fn dependency_budgets(&self) -> Vec<usize> {
        Self::layer_budgets(self.dependency_budget, self.layers)
    }
}

/// The pathway switches actually in effect for one run.
///
/// A graph side is live only when the variant allows it, its budget is
/// nonzero, and the graph has at least one edge. A dead social side routes
/// the developer representation through the plain `w_t` transform; a dead
/// dependency side scores against raw package embeddings. This collapses
/// "variant masked", "budget 0", and "empty graph" into one code path, which
/// is what makes the masking-equivalence guarantees exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveWiring {
    pub social: bool,
    pub dependency: bool,
    /// Zero the friends' static embeddings (dynamic-only variant).
    pub zero_static: bool,
    /// Zero the friends' dynamic encodings (static-only variant).
    pub zero_dynamic: bool,
}

impl EffectiveWiring {
    pub fn resolve(variant: Variant, config: &ModelConfig, corpus: &Corpus) -> Self {
        EffectiveWiring {
            social: variant.allows_social()
                && config.social_budget > 0
                && corpus.social.has_edges(),
            dependency: variant.allows_dependency()
                && config.dependency_budget > 0
                && corpus.dependency.has_edges(),
            zero_static: variant == Variant::DynamicOnly,
            zero_dynamic: variant == Variant::StaticOnly,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Graph, Interner, Session};

    fn corpus(social_edges: &[(u32, u32)], dep_edges: &[(u32, u32)]) -> Corpus {
        let mut developers = Interner::new();
        developers.intern("a");
        developers.intern("b");
        let mut packages = Interner::new();
        packages.intern("x");
        packages.intern("y");
        Corpus {
            developers,
            packages,
            sessions: vec![Session {
                developer: 0,
                time_step: 0,
                items: vec![0, 1],
            }],
            social: Graph::from_edges(2, social_edges),
            dependency: Graph::from_edges(2, dep_edges),
        }
    }

    #[test]
    fn variants_round_trip_through_names() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()), Some(v));
        }
        assert_eq!(Variant::parse("both"), None);
    }

    #[test]
    fn budgets_halve_per_layer() {
        assert_eq!(ModelConfig::layer_budgets(10, 2), vec![10, 5]);
        assert_eq!(ModelConfig::layer_budgets(10, 4), vec![10, 5, 2, 1]);
        assert_eq!(ModelConfig::layer_budgets(1, 3), vec![1, 1, 1]);
        assert!(ModelConfig::layer_budgets(0, 2).is_empty());
    }

    #[test]
    fn wiring_collapses_variant_budget_and_graph_masks() {
        let full_graphs = corpus(&[(0, 1)], &[(0, 1)]);
        let cfg = ModelConfig::default();

        let w = EffectiveWiring::resolve(Variant::Full, &cfg, &full_graphs);
        assert!(w.social && w.dependency);

        let w = EffectiveWiring::resolve(Variant::SocialOnly, &cfg, &full_graphs);
        assert!(w.social && !w.dependency);

        let w = EffectiveWiring::resolve(Variant::DependencyOnly, &cfg, &full_graphs);
        assert!(!w.social && w.dependency);

        // Budget 0 masks like the matching variant.
        let beta0 = ModelConfig {
            social_budget: 0,
            ..cfg.clone()
        };
        assert_eq!(
            EffectiveWiring::resolve(Variant::Full, &beta0, &full_graphs),
            EffectiveWiring::resolve(Variant::DependencyOnly, &cfg, &full_graphs)
        );

        // An empty graph masks the same way.
        let no_dep_edges = corpus(&[(0, 1)], &[]);
        assert_eq!(
            EffectiveWiring::resolve(Variant::Full, &cfg, &no_dep_edges),
            EffectiveWiring::resolve(Variant::SocialOnly, &cfg, &no_dep_edges)
        );

        let w = EffectiveWiring::resolve(Variant::StaticOnly, &cfg, &full_graphs);
        assert!(w.zero_dynamic && !w.zero_static);
        let w = EffectiveWiring::resolve(Variant::DynamicOnly, &cfg, &full_graphs);
        assert!(w.zero_static && !w.zero_dynamic);
    }
}
