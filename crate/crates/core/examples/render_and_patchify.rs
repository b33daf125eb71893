//! Renders one scene, applies a hue shift and cuts the image into patches.
//!
//! cargo run --release --example render_and_patchify -- [out_dir]

use std::path::PathBuf;

use sglab::render::{patchify, rasterize, shift_hue};
use sglab::scenegen::{build_dataset, DatasetConfig};

fn main() -> sglab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-render".into()));
    std::fs::create_dir_all(&out).map_err(|e| sglab::Error::io(&out, e))?;
    let dataset = build_dataset(&DatasetConfig { train_size: 4, test_size: 1, ..DatasetConfig::desk() })?;
    let scene = &dataset.train[0].scene;

    let image = rasterize(scene, &dataset.palette, 128)?;
    image.save_png(&out.join("scene.png"))?;
    shift_hue(&image, 0.25).save_png(&out.join("scene_hue_shifted.png"))?;
    for e in &scene.entities {
        println!("{} {} {} {} at ({:.2}, {:.2})", e.size.label(), dataset.palette.hex(e.color).unwrap_or_default(), e.material.label(), e.shape, e.position[0], e.position[1]);
    }

    let patches = patchify(&image, 16)?;
    println!("{} patches of {} values", patches.len(), patches.patch_dim());
    assert_eq!(patches.reassemble(), image);
    println!("images in {}", out.display());
    Ok(())
}
