//! Shows how palette size and shared colors change the color-shape NMI of the training set.
//!
//! cargo run --release --example measure_nmi

use sglab::analysis::{nmi, Normalization};
use sglab::scenegen::{build_dataset, dataset_attribute_table, DatasetConfig, Subset};

fn main() -> sglab::Result<()> {
    println!("colors  common_ratio  nmi");
    for n in [2, 3, 4, 5, 6] {
        for ratio in [0.0, 0.5] {
            let cfg = DatasetConfig { color_divisions: n, common_ratio: ratio, train_size: 2_000, test_size: 10, ..DatasetConfig::desk() };
            let table = dataset_attribute_table(&build_dataset(&cfg)?, Subset::Train).color_shape();
            println!("{:6}  {ratio:12.2}  {:.4}", n * n * n, nmi(&table, Normalization::Arithmetic)?);
        }
    }
    Ok(())
}
