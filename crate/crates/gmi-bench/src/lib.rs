//! Shared fixtures for the criterion benchmarks: a mid-sized synthetic
//! community graph and a matching encoder initialization, so every bench
//! measures the same workload.

use gmi_core::encoder::EncoderParams;
use gmi_core::graph::{row_normalize_features, Graph};
use gmi_core::seeding::stream_rng;
use gmi_core::synth::{community_graph, CommunityConfig};

/// Synthetic benchmark graph: `classes * nodes_per_class` nodes with
/// community structure and row-normalized binary-ish features.
pub fn bench_graph(nodes_per_class: usize) -> Graph {
    let config = CommunityConfig {
        classes: 4,
        nodes_per_class,
        feature_dim: 64,
        p_in: 0.1,
        p_out: 0.01,
        p_feat_on: 0.4,
        p_feat_off: 0.05,
        seed: 17,
    };
    row_normalize_features(&community_graph(&config))
}

/// Two-layer encoder parameters sized for [`bench_graph`].
pub fn bench_params(graph: &Graph, hidden: usize) -> EncoderParams {
    let mut rng = stream_rng(17, "bench-init");
    EncoderParams::init(graph.n_features(), hidden, 2, false, false, &mut rng)
        .expect("bench dimensions are valid")
}
