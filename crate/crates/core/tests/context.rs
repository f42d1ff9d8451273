mod common;

use common::{check_bundle, corpus};
use nbi_core::agent::SharedBuffer;
use nbi_core::context::{full_context, retrieve_context, ContextConfig};
use nbi_core::CellDag;

#[test]
fn corpus_bundles_are_closed_minimal_and_small() {
    let items = corpus();
    assert_eq!(items.len(), 30);
    let cfg = ContextConfig::default();
    let buffer = SharedBuffer::default();
    let mut ratios = Vec::new();
    for (name, item) in &items {
        let dag = CellDag::build(&item.notebook);
        let b = retrieve_context(&dag, &item.notebook, &item.scope, &item.query, &buffer, None, &cfg).unwrap();
        check_bundle(item, &b, cfg.markdown_threshold).unwrap_or_else(|e| panic!("{name}: {e}"));
        let base = full_context(&item.notebook, &buffer).token_estimate;
        ratios.push(b.token_estimate as f64 / base as f64);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean <= 0.5, "mean ratio {mean}");
}
