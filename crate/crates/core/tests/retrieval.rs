mod common;

use common::{brute_force_top_k, gen_graph, gen_query, indexes, scoring_gateway};
use nbi_core::graph::{coarse_retrieve, fine_order, RetrievalConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(seed: u64, top_k: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gen_graph(&mut rng, 200);
    let gw = scoring_gateway();
    let idx = indexes(&g, &gw);
    let cfg = RetrievalConfig { top_k, ..Default::default() };
    for _ in 0..5 {
        let q = gen_query(&mut rng);
        let cands = coarse_retrieve(&q, &g, &idx, &cfg, &gw).map_err(|e| e.to_string())?;
        let got: Vec<String> = fine_order(&q, &cands, &g, &idx, &cfg, &gw).map_err(|e| e.to_string())?.ranked.into_iter().map(|s| s.node_id).collect();
        let want = brute_force_top_k(&q, &cands, &g, &idx, &gw, &cfg);
        if got != want {
            return Err(format!("query `{q}`: got {got:?}, oracle {want:?}"));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fine_order_matches_exhaustive_scoring(seed in any::<u64>(), top_k in 1usize..30) {
        prop_assert_eq!(check(seed, top_k), Ok(()));
    }
}

#[test]
fn graphs_stay_within_size_bound() {
    for seed in 0..20 {
        let g = gen_graph(&mut ChaCha8Rng::seed_from_u64(seed), 200);
        assert!(g.len() <= 200 && !g.is_empty());
        g.validate().unwrap();
    }
}

#[test]
fn coarse_candidates_are_primary_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = gen_graph(&mut rng, 200);
    let gw = scoring_gateway();
    let idx = indexes(&g, &gw);
    let cands = coarse_retrieve("revenue by region", &g, &idx, &RetrievalConfig::default(), &gw).unwrap();
    assert!(!cands.is_empty());
    assert!(cands.windows(2).all(|w| w[0] < w[1]));
    assert!(cands.iter().all(|id| g.backtrack(id).map(|n| &n.id) == Some(id)));
}
