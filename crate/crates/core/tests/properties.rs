//! Property-based invariants: symmetry and bounds of the kernel and edge
//! probabilities, classification arithmetic, component decomposition versus
//! a BFS oracle, monotone structure of the hub machinery, the exact oracle's
//! normalization, and serialization round trips.

use irg_ldp::branching::{build_pool, estimate_no_connection, pbar, TreePool};
use irg_ldp::experiments::{exact_small_oracle, ExperimentConfig};
use irg_ldp::graph::{
    build_delta_irg, classify_component, components, kernel_delta, Graph,
};
use irg_ldp::ldp::{hubs, y_membership, HubWeights};
use irg_ldp::model::{edge_probability, kernel, ModelParams};
use proptest::prelude::*;
use std::sync::OnceLock;

fn pool() -> &'static TreePool {
    static POOL: OnceLock<TreePool> = OnceLock::new();
    POOL.get_or_init(|| {
        let p = ModelParams::new(2.5, 1.0, 0.5, 1.0).unwrap();
        build_pool(&p, 4_000, 500, 500, 99).unwrap()
    })
}

fn valid_params() -> impl Strategy<Value = ModelParams> {
    (1.05f64..5.0, 0.05f64..=1.0, 0.3f64..2.0).prop_flat_map(|(alpha, q, w_min)| {
        (-1.5f64..(2.0 * alpha - 1.0 - 1e-6).min(3.0))
            .prop_map(move |sigma| ModelParams::new(alpha, sigma, q, w_min).unwrap())
    })
}

/// Reference component sizes by breadth-first search.
fn bfs_sizes(n: usize, edges: &[(u32, u32)]) -> Vec<u32> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u as usize].push(v as usize);
        adj[v as usize].push(u as usize);
    }
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0u32;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable();
    sizes
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_positive(
        params in valid_params(),
        u1 in 0.0f64..6.0,
        u2 in 0.0f64..6.0,
    ) {
        let (w1, w2) = (params.w_min + u1, params.w_min + u2);
        let k12 = kernel(w1, w2, params.sigma);
        prop_assert!(k12 > 0.0 && k12.is_finite());
        prop_assert_eq!(k12, kernel(w2, w1, params.sigma));
    }

    #[test]
    fn edge_probability_is_bounded_symmetric_and_monotone(
        params in valid_params(),
        u1 in 0.0f64..4.0,
        u2 in 0.0f64..4.0,
        bump in 0.0f64..3.0,
        n in 1usize..10_000,
    ) {
        let (w1, w2) = (params.w_min + u1, params.w_min + u2);
        let p = edge_probability(w1, w2, &params, n);
        prop_assert!(p >= 0.0 && p <= params.q + 1e-15);
        prop_assert_eq!(p, edge_probability(w2, w1, &params, n));
        if params.sigma >= 0.0 {
            prop_assert!(edge_probability(w1 + bump, w2, &params, n) + 1e-15 >= p);
        }
    }

    #[test]
    fn truncated_kernel_never_exceeds_the_kernel(
        params in valid_params(),
        u1 in 0.0f64..5.0,
        u2 in 0.0f64..5.0,
        k in 1usize..10,
    ) {
        let delta = 0.25;
        let r = params.w_min + k as f64 * delta;
        let model = build_delta_irg(&params, 1_000, delta, r).unwrap();
        let (w1, w2) = (params.w_min + u1, params.w_min + u2);
        let lower = kernel_delta(w1, w2, &model, params.sigma);
        prop_assert!(lower >= 0.0);
        prop_assert!(lower <= kernel(w1, w2, params.sigma) + 1e-12);
    }

    #[test]
    fn tail_inverts_the_quantile(params in valid_params(), u in 1e-9f64..=1.0) {
        let dist = params.weight_dist();
        let w = params.w_min * u.powf(-1.0 / params.alpha);
        prop_assert!((dist.tail(w) - u).abs() <= 1e-9 * u);
    }

    #[test]
    fn classification_matches_bucket_arithmetic(
        w_min in 0.5f64..1.5,
        k in 1u32..8,
        raw in prop::collection::vec(0.0f64..6.0, 1..6),
        eps in prop::sample::select(vec![0.25f64, 0.5, 1.0]),
    ) {
        let r = w_min + k as f64 * eps;
        let weights: Vec<f64> = raw.iter().map(|x| w_min + x).collect();
        let ty = classify_component(&weights, w_min, eps, r).unwrap();
        if weights.iter().any(|&w| w >= r) {
            prop_assert!(ty.is_none());
        } else {
            let ty = ty.unwrap();
            prop_assert_eq!(ty.ell as usize, weights.len());
            let mut expect: Vec<u32> =
                weights.iter().map(|&w| ((w - w_min) / eps).floor() as u32).collect();
            expect.sort_unstable();
            prop_assert_eq!(ty.buckets, expect);
        }
    }

    #[test]
    fn component_decomposition_matches_bfs(
        n in 1usize..12,
        raw_edges in prop::collection::vec((0usize..12, 0usize..12), 0..30),
    ) {
        let mut edges: Vec<(u32, u32)> = raw_edges
            .into_iter()
            .filter(|&(a, b)| a != b && a < n && b < n)
            .map(|(a, b)| (a.min(b) as u32, a.max(b) as u32))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let g = Graph { n_model: n, weights: vec![1.0; n], edges: edges.clone(), seed: 0 };
        let stats = components(&g);
        let mut sizes = stats.sizes.clone();
        sizes.sort_unstable();
        let expect = bfs_sizes(n, &edges);
        prop_assert_eq!(&sizes, &expect);
        prop_assert_eq!(stats.largest_size, *expect.last().unwrap());
        prop_assert_eq!(
            stats.count_by_size.values().map(|&c| c as u64).sum::<u64>(),
            expect.len() as u64
        );
        prop_assert_eq!(
            stats.vertices_by_size.values().map(|&c| c as u64).sum::<u64>(),
            n as u64
        );
        for (&s, &c) in &stats.vertices_by_size {
            // vertex counts per size are multiples of the size
            prop_assert_eq!(c % s, 0);
        }
    }

    #[test]
    fn no_connection_probability_is_a_probability_and_shrinks_with_hubs(
        params in valid_params(),
        tree in prop::collection::vec(0.0f64..5.0, 1..6),
        y in prop::collection::vec(1e-3f64..10.0, 1..4),
        extra in 1e-3f64..10.0,
    ) {
        let tree: Vec<f64> = tree.iter().map(|x| params.w_min + x).collect();
        let p = pbar(&tree, &y, &params);
        prop_assert!((0.0..=1.0).contains(&p));
        let mut bigger = y.clone();
        bigger.push(extra);
        prop_assert!(pbar(&tree, &bigger, &params) <= p + 1e-15);
    }

    #[test]
    fn serialized_configs_round_trip_canonically(
        params in valid_params(),
        n in 1usize..100_000,
        reps in 1usize..500,
        rho in 0.0f64..0.999,
        seed in any::<u64>(),
    ) {
        let text = serde_json::to_string(&params).unwrap();
        let back: ModelParams = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, params);
        let cfg = ExperimentConfig {
            params,
            n,
            replications: reps,
            rho,
            margin: 0.01,
            seed,
            eps: 0.5,
            r: 4.0,
            ell_max: 5,
            grid_points: 8,
            draws: 100,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}

proptest! {
    // properties below share one simulated pool; fewer, heavier cases
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_law_is_normalized(
        params in valid_params(),
        raw in prop::collection::vec(0.0f64..6.0, 1..6),
        extra_scale in 0usize..20,
    ) {
        let weights: Vec<f64> = raw.iter().map(|x| params.w_min + x).collect();
        let n_model = weights.len() + extra_scale;
        let law = exact_small_oracle(&weights, &params, n_model).unwrap();
        prop_assert_eq!(law.len(), weights.len());
        prop_assert!(law.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        prop_assert!((law.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn membership_levels_are_nested(
        coords in prop::collection::vec(1e-3f64..5.0, 1..4),
        rho1 in 0.01f64..0.97,
        gap in 0.001f64..0.02,
    ) {
        let y = HubWeights::new(coords).unwrap();
        let rho2 = rho1 + gap;
        let at_hi = y_membership(&y, rho2, pool()).unwrap();
        let at_lo = y_membership(&y, rho1, pool()).unwrap();
        prop_assert!(!at_hi || at_lo, "member at {rho2} but not at {rho1}");
    }

    #[test]
    fn no_connection_value_decreases_coordinatewise(
        coords in prop::collection::vec(1e-2f64..5.0, 1..4),
        idx in 0usize..4,
        bump in 0.0f64..2.0,
    ) {
        let base = estimate_no_connection(pool(), &coords).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&base));
        let mut up = coords.clone();
        let i = idx % up.len();
        up[i] += bump;
        let bumped = estimate_no_connection(pool(), &up).unwrap().value;
        prop_assert!(bumped <= base + 1e-15);
    }

    #[test]
    fn hub_count_is_monotone_in_rho_and_q(
        rho1 in 0.01f64..0.97,
        gap in 0.001f64..0.03,
        q1 in 0.05f64..0.95,
        qgap in 0.001f64..0.05,
    ) {
        let p = pool();
        let h1 = hubs(rho1, q1, p).unwrap();
        let h2 = hubs(rho1 + gap, q1, p).unwrap();
        prop_assert!(h1.value <= h2.value + 1e-7, "{} > {}", h1.value, h2.value);
        prop_assert!(h1.ceil <= h2.ceil);
        let hq = hubs(rho1, q1 + qgap, p).unwrap();
        prop_assert!(hq.value <= h1.value + 1e-7, "{} > {}", hq.value, h1.value);
        prop_assert!(hq.ceil <= h1.ceil);
    }
}
