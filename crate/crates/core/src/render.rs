//! 2D glyph rasterizer, hue intervention and patch slicing.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::{Material, Palette, Shape};
use crate::scenegen::Scene;

pub const MIN_SIDE: usize = 32;

/// Background fill. Chosen off every channel grid with 2..=6 divisions so no
/// palette color of the standard experiments coincides with it.
pub const BACKGROUND: [u8; 3] = [112, 112, 112];

pub const SPECULAR: [u8; 3] = [255, 255, 255];

/// Metal glyphs get a white pixel on every diagonal with `(x + y) % STRIPE_PERIOD == 0`.
pub const STRIPE_PERIOD: usize = 4;

/// Square RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    side: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn filled(side: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(side * side * 3).collect();
        Self { side, pixels }
    }

    pub fn from_pixels(side: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != side * side * 3 {
            return Err(Error::Render(format!("{} bytes for a {side}×{side} RGB image", pixels.len())));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.side + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.side + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.side as u32, self.side as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = png::Decoder::new(file)
            .read_info()
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight || info.width != info.height {
            return Err(Error::Integrity(format!("{}: expected square 8-bit RGB", path.display())));
        }
        buf.truncate(info.buffer_size());
        Self::from_pixels(info.width as usize, buf)
    }
}

/// Whether the pixel center `(u, v)` (normalized) lies inside a glyph.
fn covers(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Sphere => dx * dx + dy * dy <= r * r,
        Shape::Cube => dx.abs() <= r && dy.abs() <= r,
        Shape::Cylinder => dx.abs() <= 0.5 * r && dy.abs() <= r,
    }
}

/// Draws every entity as a flat glyph on a uniform background: spheres as
/// discs, cubes as squares, cylinders as upright 1:2 rectangles. Metal glyphs
/// carry a diagonal white stripe pattern. Later entities paint over earlier
/// ones, though scenes from the generator never overlap.
pub fn rasterize(scene: &Scene, palette: &Palette, side: usize) -> Result<Image> {
    if side < MIN_SIDE {
        return Err(Error::Render(format!("image side {side} below minimum {MIN_SIDE}")));
    }
    if scene.entities.is_empty() {
        return Err(Error::Render("scene has no entities".into()));
    }
    let mut image = Image::filled(side, BACKGROUND);
    let s = side as f64;
    for (i, e) in scene.entities.iter().enumerate() {
        let [x0, y0, x1, y1] = e.bounding_box();
        if x0 < 0.0 || y0 < 0.0 || x1 > 1.0 || y1 > 1.0 {
            return Err(Error::Render(format!("entity {i} extends outside the image")));
        }
        let rgb = palette
            .rgb(e.color)
            .ok_or_else(|| Error::Render(format!("entity {i} color {} outside palette", e.color)))?;
        let px0 = (x0 * s).floor().max(0.0) as usize;
        let py0 = (y0 * s).floor().max(0.0) as usize;
        let px1 = ((x1 * s).ceil() as usize).min(side);
        let py1 = ((y1 * s).ceil() as usize).min(side);
        for py in py0..py1 {
            for px in px0..px1 {
                let dx = (px as f64 + 0.5) / s - e.position[0];
                let dy = (py as f64 + 0.5) / s - e.position[1];
                if !covers(e.shape, dx, dy, e.radius) {
                    continue;
                }
                let stripe = e.material == Material::Metal && (px + py) % STRIPE_PERIOD == 0;
                image.set(px, py, if stripe { SPECULAR } else { rgb });
            }
        }
    }
    Ok(image)
}

/// Hexcone RGB→HSV; all components in [0, 1].
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [u8; 3] {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Rotates the hue of every pixel by `delta` (fraction of the hue circle).
pub fn shift_hue(image: &Image, delta: f64) -> Image {
    if delta == 0.0 {
        return image.clone();
    }
    let mut out = image.clone();
    for px in out.pixels.chunks_exact_mut(3) {
        let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
        if s == 0.0 {
            continue;
        }
        px.copy_from_slice(&hsv_to_rgb([(h + delta).rem_euclid(1.0), s, v]));
    }
    out
}

pub fn validate_jitter(j: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&j) {
        return Err(Error::param("jitter", format!("{j} is outside [0, 0.5]")));
    }
    Ok(())
}

/// Draws one shift `δ ~ U[−j, j]` and applies it to the whole image.
pub fn hue_jitter<R: Rng + ?Sized>(image: &Image, j: f64, rng: &mut R) -> Result<Image> {
    Ok(hue_jitter_with_delta(image, j, rng)?.0)
}

/// Like [`hue_jitter`], also returning the drawn shift.
pub fn hue_jitter_with_delta<R: Rng + ?Sized>(image: &Image, j: f64, rng: &mut R) -> Result<(Image, f64)> {
    validate_jitter(j)?;
    if j == 0.0 {
        return Ok((image.clone(), 0.0));
    }
    let delta = rng.gen_range(-j..=j);
    Ok((shift_hue(image, delta), delta))
}

/// Non-overlapping square patches in row-major order, each flattened
/// row-major with interleaved RGB and scaled to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub patch_side: usize,
    pub grid: usize,
    pub data: Vec<f32>,
}

impl PatchSequence {
    pub fn empty(patch_side: usize) -> Self {
        Self { patch_side, grid: 0, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.grid * self.grid
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * 3
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let d = self.patch_dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// `(row, col)` of patch `i` in the grid.
    pub fn grid_coords(&self, i: usize) -> (usize, usize) {
        (i / self.grid, i % self.grid)
    }

    /// Inverse of [`patchify`].
    pub fn reassemble(&self) -> Image {
        let side = self.grid * self.patch_side;
        let mut pixels = vec![0u8; side * side * 3];
        let p = self.patch_side;
        for i in 0..self.len() {
            let (row, col) = self.grid_coords(i);
            let patch = self.patch(i);
            for y in 0..p {
                for x in 0..p {
                    let dst = ((row * p + y) * side + col * p + x) * 3;
                    let src = (y * p + x) * 3;
                    for c in 0..3 {
                        pixels[dst + c] = (patch[src + c] * 255.0).round() as u8;
                    }
                }
            }
        }
        Image { side, pixels }
    }
}

pub fn patchify(image: &Image, patch_side: usize) -> Result<PatchSequence> {
    if patch_side == 0 || !image.side.is_multiple_of(patch_side) {
        return Err(Error::Config(format!("image side {} is not divisible by patch side {patch_side}", image.side)));
    }
    let grid = image.side / patch_side;
    let p = patch_side;
    let mut data = Vec::with_capacity(image.pixels.len());
    for row in 0..grid {
        for col in 0..grid {
            for y in 0..p {
                let start = ((row * p + y) * image.side + col * p) * 3;
                data.extend(image.pixels[start..start + p * 3].iter().map(|&b| b as f32 / 255.0));
            }
        }
    }
    Ok(PatchSequence { patch_side, grid, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{build_palette, Size};
    use crate::scenegen::{radius_for, Entity};
    use rand::SeedableRng;

    fn one(shape: Shape, color: usize, material: Material, size: Size, position: [f64; 2]) -> Scene {
        Scene {
            entities: vec![Entity { shape, color, material, size, position, radius: radius_for(size) }],
            bursty: false,
            burst_subset: None,
            seed: 0,
        }
    }

    fn fnv(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
    }

    #[test]
    fn metal_cube_is_striped_and_stable() {
        let p = build_palette(2).unwrap();
        let scene = one(Shape::Cube, 4, Material::Metal, Size::Large, [0.5, 0.5]);
        let a = rasterize(&scene, &p, 64).unwrap();
        let b = rasterize(&scene, &p, 64).unwrap();
        assert_eq!(fnv(a.pixels()), fnv(b.pixels()));
        assert_eq!(a.get(32, 32), SPECULAR);
        assert_eq!(a.get(33, 32), p.rgb(4).unwrap());
        assert_eq!(a.get(0, 0), BACKGROUND);
        // the square spans 2·0.11·64 ≈ 14 pixels
        let covered = (0..64).filter(|&x| a.get(x, 32) != BACKGROUND).count();
        assert_eq!(covered, 14);
    }

    #[test]
    fn empty_scene_is_rejected() {
        let p = build_palette(2).unwrap();
        let scene = Scene { entities: vec![], bursty: false, burst_subset: None, seed: 0 };
        assert!(matches!(rasterize(&scene, &p, 64), Err(Error::Render(_))));
    }

    #[test]
    fn out_of_bounds_entity_is_rejected() {
        let p = build_palette(2).unwrap();
        let scene = one(Shape::Sphere, 1, Material::Rubber, Size::Large, [0.02, 0.5]);
        assert!(matches!(rasterize(&scene, &p, 64), Err(Error::Render(_))));
    }

    #[test]
    fn red_sphere_matches_brute_force_reference() {
        let p = build_palette(2).unwrap();
        let red = p.colors().iter().position(|&c| c == [255, 0, 0]).unwrap();
        let scene = one(Shape::Sphere, red, Material::Rubber, Size::Large, [0.4, 0.55]);
        let img = rasterize(&scene, &p, 32).unwrap();

        // reference: test every pixel center against the disc
        let mut reference = vec![false; 32 * 32];
        for y in 0..32 {
            for x in 0..32 {
                let u = (x as f64 + 0.5) / 32.0 - 0.4;
                let v = (y as f64 + 0.5) / 32.0 - 0.55;
                reference[y * 32 + x] = u * u + v * v <= 0.11 * 0.11;
            }
        }
        let mut fg = 0;
        let mut red_px = 0;
        for y in 0..32 {
            for x in 0..32 {
                let px = img.get(x, y);
                assert_eq!(px != BACKGROUND, reference[y * 32 + x]);
                if px != BACKGROUND {
                    fg += 1;
                    red_px += (px == [255, 0, 0]) as usize;
                }
            }
        }
        assert!(fg > 0);
        assert!(red_px as f64 >= 0.95 * fg as f64);
    }

    #[test]
    fn hue_shift_examples() {
        let red = Image::filled(4, [255, 0, 0]);
        assert_eq!(shift_hue(&red, 1.0 / 3.0).get(0, 0), [0, 255, 0]);
        let gray = Image::filled(4, [77, 77, 77]);
        assert_eq!(shift_hue(&gray, 0.21), gray);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(hue_jitter(&red, 0.0, &mut rng).unwrap(), red);
        assert!(hue_jitter(&red, 0.6, &mut rng).is_err());
        assert!(hue_jitter(&red, -0.1, &mut rng).is_err());
    }

    #[test]
    fn hsv_roundtrip_on_grid_colors() {
        for c in build_palette(6).unwrap().colors() {
            assert_eq!(hsv_to_rgb(rgb_to_hsv(*c)), *c);
        }
    }

    #[test]
    fn patch_counts() {
        let img = Image::filled(64, [1, 2, 3]);
        let ps = patchify(&img, 8).unwrap();
        assert_eq!(ps.len(), 64);
        assert_eq!(ps.patch_dim(), 192);
        let big = Image::filled(224, [0, 0, 0]);
        assert_eq!(patchify(&big, 16).unwrap().len(), 196);
        assert!(matches!(patchify(&img, 7), Err(Error::Config(_))));
    }

    #[test]
    fn patch_layout_is_row_major() {
        let mut img = Image::filled(32, [0, 0, 0]);
        img.set(9, 1, [255, 0, 0]);
        let ps = patchify(&img, 8).unwrap();
        assert_eq!(ps.grid_coords(1), (0, 1));
        let patch = ps.patch(1);
        assert_eq!(patch[(8 + 1) * 3], 1.0);
        assert_eq!(ps.reassemble(), img);
    }

    #[test]
    fn png_roundtrip() {
        let p = build_palette(3).unwrap();
        let scene = one(Shape::Cylinder, 5, Material::Metal, Size::Small, [0.3, 0.3]);
        let img = rasterize(&scene, &p, 48).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }
}
