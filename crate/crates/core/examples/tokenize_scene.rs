//! Serializes a scene to tokens, masks one attribute and decodes it back.
//!
//! cargo run --release --example tokenize_scene

use sglab::latent::Attribute;
use sglab::scenegen::{build_dataset, DatasetConfig};
use sglab::textgen::{deserialize, mask_for_eval, serialize};

fn main() -> sglab::Result<()> {
    let dataset = build_dataset(&DatasetConfig { train_size: 2, test_size: 1, ..DatasetConfig::desk() })?;
    let vocab = dataset.vocabulary();
    println!("vocabulary: {} tokens", vocab.len());

    let seq = serialize(&dataset.train[0].scene, vocab)?;
    println!("text:   {}", vocab.surface(&seq.ids));
    let masked = mask_for_eval(&seq, 1, Attribute::Shape)?;
    println!("query:  {}", vocab.surface(&masked.ids));
    for &(pos, id) in &masked.mask_positions {
        println!("target at {pos}: {}", vocab.token(id).unwrap_or("?"));
    }
    let attrs = deserialize(&seq, vocab)?;
    println!("decoded {} entities, first {:?}", attrs.len(), attrs[0]);
    Ok(())
}
