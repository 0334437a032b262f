//! Analytic gradients against central finite differences, through the full
//! forward pass: graph → layers → last pooling → scores → cross-entropy
//! (+ L2).

mod support;

use mmsr_core::base::{BaseModel, FusionOrder};
use mmsr_core::dataset::{Channel, ItemId};
use mmsr_core::model::ModelConfig;
use mmsr_core::propagation::Aggregator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

const MAX_REL: f64 = 1e-4;

fn assert_small(label: &str, errs: &[(String, f64)]) {
    for (name, e) in errs {
        assert!(*e < MAX_REL, "{label}: {name} relative error {e:e}");
    }
}

#[test]
fn han_two_layers_every_parameter_group() {
    for seed in 0..3 {
        let mut f = fixture(Aggregator::Han, seed, 20, 4, 4, 2);
        f.model.cfg.l2 = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, t) = fd_batch(&mut rng, 20);
        for q in &p {
            assert!(f.model.graph(q).unwrap().nodes.len() <= 12);
        }
        let errs = fd_errors(&mut f.model, &p, &t);
        for group in ["item_table", "image_code_table", "text_code_table", "type_table", "position_table", "merge_weight"] {
            assert!(errs.iter().any(|(n, _)| n == group), "missing {group}");
        }
        for part in ["wq", "wk", "wv", "rel_a", "gate"] {
            assert!(errs.iter().any(|(n, _)| n.contains(part)), "missing {part}");
        }
        assert_small("HAN", &errs);
    }
}

#[test]
fn every_aggregator_differentiates() {
    for agg in [
        Aggregator::Gcn,
        Aggregator::Gat,
        Aggregator::Sync,
        Aggregator::Ho,
        Aggregator::He,
        Aggregator::Hohe,
        Aggregator::Heho,
        Aggregator::NiHohe,
        Aggregator::NiHeho,
    ] {
        let mut f = fixture(agg, 31, 20, 4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, t) = fd_batch(&mut rng, 20);
        assert_small(&format!("{agg:?}"), &fd_errors(&mut f.model, &p, &t));
    }
}

#[test]
fn base_models_differentiate() {
    for order in [FusionOrder::Early, FusionOrder::Late] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let catalog: Vec<ItemId> = (0..12).map(ItemId).collect();
        let image = random_codebook(&mut rng, Channel::Image, &catalog, 3, 2, 3, 0.3);
        let text = random_codebook(&mut rng, Channel::Text, &catalog, 3, 1, 3, 0.3);
        let cfg = ModelConfig {
            d: 3,
            l2: 1e-3,
            m_max: 10,
            ..ModelConfig::default()
        };
        let mut m = BaseModel::new(cfg, order, catalog, Some(image), Some(text)).unwrap();
        let p = vec![
            vec![ItemId(1), ItemId(5), ItemId(7)],
            vec![ItemId(2), ItemId(2), ItemId(9), ItemId(0), ItemId(4)],
        ];
        assert_small(&format!("{order:?}"), &fd_errors(&mut m, &p, &[3, 8]));
    }
}
