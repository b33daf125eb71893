//! DCI from L1 probes on a disentangled code and on a randomly mixed copy of it.
//!
//! cargo run --release --example dci_disentanglement

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sglab::analysis::{dci, EmbeddingMeta, EmbeddingSet, ProbeConfig};
use sglab::latent::Attribute;
use sglab::scenegen::Subset;

fn main() -> sglab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut set = EmbeddingSet::new(4);
    for i in 0..400 {
        let attrs = [rng.gen_range(0..3), rng.gen_range(0..8), rng.gen_range(0..2), rng.gen_range(0..2)];
        // one dimension per factor, plus a little noise
        let v = attrs.iter().map(|&a| a as f32 + 0.1 * rng.sample::<f32, _>(StandardNormal)).collect();
        let meta = EmbeddingMeta { subset: Subset::TestId, sample_id: i, entity_index: 0, attributes: attrs, masked: Attribute::Shape };
        set.push(v, meta)?;
    }
    let mix: Vec<Vec<f32>> = (0..4).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mixed = set.map_vectors(|v| mix.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect());

    let cfg = ProbeConfig::default();
    for (name, s) in [("aligned", &set), ("mixed", &mixed)] {
        let r = dci(s, &Attribute::ALL, &cfg)?;
        println!("{name:8} D = {:.3}  C = {:.3}", r.disentanglement, r.completeness);
    }
    Ok(())
}
