//! The latent factor universe: shapes, colors, materials and sizes, plus the
//! Split A / Split B partition of the shape-color grid.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Rubber,
    Metal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Sphere, Shape::Cube, Shape::Cylinder];

    pub fn label(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
        }
    }

    /// Cubes and cylinders carry the systematic holdout; spheres are the control.
    pub fn is_systematic(self) -> bool {
        !matches!(self, Shape::Sphere)
    }
}

impl Material {
    pub const ALL: [Material; 2] = [Material::Rubber, Material::Metal];

    pub fn label(self) -> &'static str {
        match self {
            Material::Rubber => "rubber",
            Material::Metal => "metal",
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Large];

    pub fn label(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.label())
    }
}

/// One of the four generative factors of an entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Shape,
    Color,
    Material,
    Size,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Shape, Attribute::Color, Attribute::Material, Attribute::Size];

    pub fn label(self) -> &'static str {
        match self {
            Attribute::Shape => "shape",
            Attribute::Color => "color",
            Attribute::Material => "material",
            Attribute::Size => "size",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::param("attribute", format!("unknown attribute `{s}`")))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    A,
    B,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::A => "A",
            Split::B => "B",
        })
    }
}

/// A discrete RGB color set built from an n-point grid per channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    channel_divisions: usize,
    colors: Vec<[u8; 3]>,
}

pub const MAX_CHANNEL_DIVISIONS: usize = 16;

/// Builds the n³-color palette. Grid values are `round(255·k/(n−1))`, so both
/// 0 and 255 are included; colors are ordered lexicographically by grid index.
pub fn build_palette(n: usize) -> Result<Palette> {
    if !(2..=MAX_CHANNEL_DIVISIONS).contains(&n) {
        return Err(Error::InvalidCardinality(n));
    }
    let grid: Vec<u8> = (0..n)
        .map(|k| (255.0 * k as f64 / (n - 1) as f64).round() as u8)
        .collect();
    let mut colors = Vec::with_capacity(n * n * n);
    for &r in &grid {
        for &g in &grid {
            for &b in &grid {
                colors.push([r, g, b]);
            }
        }
    }
    Ok(Palette { channel_divisions: n, colors })
}

impl Palette {
    pub fn channel_divisions(&self) -> usize {
        self.channel_divisions
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn rgb(&self, index: usize) -> Option<[u8; 3]> {
        self.colors.get(index).copied()
    }

    /// Lowercase `#rrggbb`.
    pub fn hex(&self, index: usize) -> Option<String> {
        self.rgb(index).map(hex_color)
    }
}

pub fn hex_color(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpace {
    pub palette: Palette,
}

impl AttributeSpace {
    pub fn new(channel_divisions: usize) -> Result<Self> {
        Ok(Self { palette: build_palette(channel_divisions)? })
    }

    /// Number of values each attribute can take.
    pub fn cardinality(&self, attribute: Attribute) -> usize {
        match attribute {
            Attribute::Shape => Shape::ALL.len(),
            Attribute::Color => self.palette.len(),
            Attribute::Material => Material::ALL.len(),
            Attribute::Size => Size::ALL.len(),
        }
    }
}

/// Partition of palette indices into colors shared by cubes and cylinders in
/// Split A and colors exclusive to one of them. Split B swaps the exclusive
/// sets, so no cube/cylinder shape-color pair occurs in both splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub channel_divisions: usize,
    pub n_colors: usize,
    pub common_ratio: f64,
    pub seed: u64,
    pub common_colors: Vec<usize>,
    pub cube_exclusive: Vec<usize>,
    pub cylinder_exclusive: Vec<usize>,
}

pub fn build_split_spec(palette: &Palette, common_ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0..=1.0).contains(&common_ratio) || common_ratio.is_nan() {
        return Err(Error::param("common_ratio", format!("{common_ratio} is outside [0, 1]")));
    }
    let n_colors = palette.len();
    if common_ratio < 1.0 && n_colors < 2 {
        return Err(Error::param("palette", "need at least 2 colors for exclusive sets"));
    }
    let n_common = (common_ratio * n_colors as f64).round() as usize;

    let mut order: Vec<usize> = (0..n_colors).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::TAG_SPLIT, n_colors as u64]));

    let mut common_colors = order[..n_common].to_vec();
    let mut cube_exclusive = Vec::new();
    let mut cylinder_exclusive = Vec::new();
    // Alternate starting with cubes: on odd counts the cube set gets the extra color.
    for (i, &c) in order[n_common..].iter().enumerate() {
        if i % 2 == 0 {
            cube_exclusive.push(c);
        } else {
            cylinder_exclusive.push(c);
        }
    }
    common_colors.sort_unstable();
    cube_exclusive.sort_unstable();
    cylinder_exclusive.sort_unstable();

    Ok(SplitSpec {
        channel_divisions: palette.channel_divisions(),
        n_colors,
        common_ratio,
        seed,
        common_colors,
        cube_exclusive,
        cylinder_exclusive,
    })
}

impl SplitSpec {
    /// Palette indices a shape may take in the given split.
    pub fn legal_colors(&self, shape: Shape, split: Split) -> Result<Vec<usize>> {
        let colors: Vec<usize> = match (shape, split) {
            (Shape::Sphere, _) => (0..self.n_colors).collect(),
            (Shape::Cube, Split::A) => merge(&self.common_colors, &self.cube_exclusive),
            (Shape::Cylinder, Split::A) => merge(&self.common_colors, &self.cylinder_exclusive),
            (Shape::Cube, Split::B) => self.cylinder_exclusive.clone(),
            (Shape::Cylinder, Split::B) => self.cube_exclusive.clone(),
        };
        if colors.is_empty() {
            return Err(Error::EmptySplit { split: split.to_string(), shape: shape.to_string() });
        }
        Ok(colors)
    }

    pub fn is_legal(&self, shape: Shape, color: usize, split: Split) -> bool {
        if color >= self.n_colors {
            return false;
        }
        match (shape, split) {
            (Shape::Sphere, _) => true,
            (Shape::Cube, Split::A) => !self.cylinder_exclusive.contains(&color),
            (Shape::Cylinder, Split::A) => !self.cube_exclusive.contains(&color),
            (Shape::Cube, Split::B) => self.cylinder_exclusive.contains(&color),
            (Shape::Cylinder, Split::B) => self.cube_exclusive.contains(&color),
        }
    }

    /// Split B is empty when every color is common.
    pub fn has_ood_split(&self) -> bool {
        !self.cube_exclusive.is_empty() && !self.cylinder_exclusive.is_empty()
    }

    /// Union of the legal color sets of every shape in a split.
    pub fn union_colors(&self, split: Split) -> Vec<usize> {
        let set: BTreeSet<usize> = Shape::ALL
            .iter()
            .filter_map(|&s| self.legal_colors(s, split).ok())
            .flatten()
            .collect();
        set.into_iter().collect()
    }
}

fn merge(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out
}
