//! Parallelism score on synthetic embeddings: additive codes score 1, entangled ones less.
//!
//! cargo run --release --example pscore_geometry

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sglab::analysis::{pscore, EmbeddingMeta, EmbeddingSet, PScoreOptions};
use sglab::latent::Attribute;
use sglab::scenegen::Subset;

fn embeddings(entangle: f64, rng: &mut ChaCha8Rng) -> sglab::Result<EmbeddingSet> {
    let d = 16;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
    let shapes: Vec<Vec<f64>> = (0..3).map(|_| draw(rng)).collect();
    let colors: Vec<Vec<f64>> = (0..8).map(|_| draw(rng)).collect();
    let mut set = EmbeddingSet::new(d);
    for s in 0..3 {
        for c in 0..8 {
            // a term unique to each (shape, color) cell breaks additivity
            let cell = draw(rng);
            let v = (0..d).map(|i| (shapes[s][i] + colors[c][i] + entangle * cell[i]) as f32).collect();
            let meta = EmbeddingMeta { subset: Subset::TestId, sample_id: s * 8 + c, entity_index: 0, attributes: [s, c, 0, 0], masked: Attribute::Shape };
            set.push(v, meta)?;
        }
    }
    Ok(set)
}

fn main() -> sglab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = PScoreOptions { n_pairs: 1_000, ..PScoreOptions::default() };
    for entangle in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let p = pscore(&embeddings(entangle, &mut rng)?, Attribute::Shape, Attribute::Color, &opts)?;
        println!("entanglement {entangle:3.1}  p-score {:.3} ± {:.3}", p.mean, p.stderr);
    }
    Ok(())
}
