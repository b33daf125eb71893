//! Scene sampling under split, burstiness and resolvability constraints, and
//! assembly of the train / test-ID / test-OOD datasets.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::nmi::JointTable;
use crate::error::{Error, Result};
use crate::latent::{build_palette, build_split_spec, Attribute, Material, Palette, Shape, Size, Split, SplitSpec};
use crate::render;
use crate::rng;
use crate::textgen::{self, Vocabulary};

pub const MIN_ENTITIES: usize = 3;
pub const MAX_ENTITIES: usize = 10;

/// Glyph half-extent as a fraction of the image side.
pub const SMALL_RADIUS: f64 = 0.06;
pub const LARGE_RADIUS: f64 = 0.11;

/// Minimum gap between bounding boxes, as a fraction of the image side.
const BOX_GAP: f64 = 0.01;

const MAX_SUBSET_DRAWS: usize = 200;
const MAX_ATTRIBUTE_RESTARTS: usize = 50;
const MAX_ENTITY_DRAWS: usize = 100;
const MAX_LAYOUT_RESTARTS: usize = 50;
const MAX_POSITION_DRAWS: usize = 500;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub shape: Shape,
    pub color: usize,
    pub material: Material,
    pub size: Size,
    /// Center in normalized image coordinates.
    pub position: [f64; 2],
    /// Half-extent of the glyph's bounding box, normalized.
    pub radius: f64,
}

impl Entity {
    /// Index of this entity's value for `attribute`, in the order of
    /// `Shape::ALL`, palette order, `Material::ALL`, `Size::ALL`.
    pub fn value(&self, attribute: Attribute) -> usize {
        match attribute {
            Attribute::Shape => self.shape as usize,
            Attribute::Color => self.color,
            Attribute::Material => self.material as usize,
            Attribute::Size => self.size as usize,
        }
    }

    /// Number of attributes on which two entities differ.
    pub fn attribute_distance(&self, other: &Entity) -> usize {
        Attribute::ALL.iter().filter(|&&a| self.value(a) != other.value(a)).count()
    }

    pub fn bounding_box(&self) -> [f64; 4] {
        let [x, y] = self.position;
        [x - self.radius, y - self.radius, x + self.radius, y + self.radius]
    }

    fn boxes_overlap(&self, other: &Entity) -> bool {
        let reach = self.radius + other.radius + BOX_GAP;
        (self.position[0] - other.position[0]).abs() < reach && (self.position[1] - other.position[1]).abs() < reach
    }
}

pub fn radius_for(size: Size) -> f64 {
    match size {
        Size::Small => SMALL_RADIUS,
        Size::Large => LARGE_RADIUS,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub entities: Vec<Entity>,
    pub bursty: bool,
    pub burst_subset: Option<Vec<usize>>,
    pub seed: u64,
}

impl Scene {
    pub fn distinct_colors(&self) -> BTreeSet<usize> {
        self.entities.iter().map(|e| e.color).collect()
    }

    /// Every pair of entities differs in at least two attributes.
    pub fn is_resolvable(&self) -> bool {
        self.entities
            .iter()
            .enumerate()
            .all(|(i, a)| self.entities[i + 1..].iter().all(|b| a.attribute_distance(b) >= 2))
    }

    pub fn is_non_overlapping(&self) -> bool {
        self.entities
            .iter()
            .enumerate()
            .all(|(i, a)| self.entities[i + 1..].iter().all(|b| !a.boxes_overlap(b)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Grid points per RGB channel; the palette has `color_divisions³` colors.
    pub color_divisions: usize,
    pub common_ratio: f64,
    pub p_burst: f64,
    pub burst_cap: usize,
    /// Hue shift half-range as a fraction of the hue circle.
    pub jitter: f64,
    /// Redraw the hue shift every epoch rather than once per image.
    pub jitter_redraw: bool,
    pub train_size: usize,
    pub test_size: usize,
    pub train_fraction: f64,
    pub image_side: usize,
    pub patch_side: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DatasetConfig {
    /// 64×64 images, 8×8 patches, 8,000 / 2,000 samples.
    pub fn desk() -> Self {
        Self {
            color_divisions: 2,
            common_ratio: 0.0,
            p_burst: 0.0,
            burst_cap: 3,
            jitter: 0.0,
            jitter_redraw: true,
            train_size: 8_000,
            test_size: 2_000,
            train_fraction: 1.0,
            image_side: 64,
            patch_side: 8,
            seed: 0,
        }
    }

    /// 224×224 images, 16×16 patches, 75,000 / 15,000 samples.
    pub fn full_scale() -> Self {
        Self { train_size: 75_000, test_size: 15_000, image_side: 224, patch_side: 16, ..Self::desk() }
    }

    pub fn n_colors(&self) -> usize {
        self.color_divisions.pow(3)
    }

    pub fn train_count(&self) -> usize {
        (self.train_size as f64 * self.train_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=crate::latent::MAX_CHANNEL_DIVISIONS).contains(&self.color_divisions) {
            return Err(Error::InvalidCardinality(self.color_divisions));
        }
        if !(0.0..=1.0).contains(&self.common_ratio) {
            return Err(Error::param("common_ratio", format!("{} is outside [0, 1]", self.common_ratio)));
        }
        if !(0.0..=1.0).contains(&self.p_burst) {
            return Err(Error::param("p_burst", format!("{} is outside [0, 1]", self.p_burst)));
        }
        if self.burst_cap < 1 {
            return Err(Error::param("burst_cap", "must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(Error::param("jitter", format!("{} is outside [0, 0.5]", self.jitter)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::param("train_fraction", format!("{} is outside (0, 1]", self.train_fraction)));
        }
        if self.train_size as f64 * self.train_fraction < 1.0 {
            return Err(Error::param("train_fraction", "train_size · train_fraction must be at least 1"));
        }
        if self.patch_side == 0 || !self.image_side.is_multiple_of(self.patch_side) {
            return Err(Error::Config(format!(
                "image side {} is not divisible by patch side {}",
                self.image_side, self.patch_side
            )));
        }
        if self.image_side < render::MIN_SIDE {
            return Err(Error::Config(format!("image side {} below minimum {}", self.image_side, render::MIN_SIDE)));
        }
        Ok(())
    }

    /// The configuration used for held-out sets: never bursty.
    pub fn without_burstiness(&self) -> Self {
        Self { p_burst: 0.0, ..self.clone() }
    }
}

/// Samples one scene from `split`. The whole scene is a function of `seed`.
pub fn sample_scene(spec: &SplitSpec, split: Split, config: &DatasetConfig, seed: u64) -> Result<Scene> {
    let mut rng = rng::stream(seed, &[]);
    let legal: Vec<Vec<usize>> =
        Shape::ALL.iter().map(|&s| spec.legal_colors(s, split)).collect::<Result<_>>()?;

    let bursty = config.p_burst > 0.0 && rng.gen_bool(config.p_burst.min(1.0));
    let n_entities = rng.gen_range(MIN_ENTITIES..=MAX_ENTITIES);

    let mut last_failure = "resolvability";
    let mut attributes = None;
    let mut burst_subset = None;
    let subset_draws = if bursty { MAX_SUBSET_DRAWS } else { 1 };
    'subsets: for _ in 0..subset_draws {
        let allowed: Vec<Vec<usize>> = if bursty {
            let union = spec.union_colors(split);
            let k = config.burst_cap.min(union.len());
            let mut subset: Vec<usize> = index::sample(&mut rng, union.len(), k).into_iter().map(|i| union[i]).collect();
            subset.sort_unstable();
            let per_shape: Vec<Vec<usize>> =
                legal.iter().map(|l| l.iter().copied().filter(|c| subset.contains(c)).collect()).collect();
            if per_shape.iter().any(Vec::is_empty) {
                last_failure = "burst subset legality";
                continue;
            }
            burst_subset = Some(subset);
            per_shape
        } else {
            legal.clone()
        };
        for _ in 0..MAX_ATTRIBUTE_RESTARTS {
            if let Some(ents) = draw_attributes(&mut rng, n_entities, &allowed) {
                attributes = Some(ents);
                break 'subsets;
            }
            last_failure = "resolvability";
        }
    }
    let Some(mut entities) = attributes else {
        return Err(Error::Generation(format!("retry budget exhausted on {last_failure} ({n_entities} entities, split {split})")));
    };
    place_entities(&mut rng, &mut entities)?;

    Ok(Scene { entities, bursty, burst_subset: if bursty { burst_subset } else { None }, seed })
}

fn draw_attributes<R: Rng>(rng: &mut R, n: usize, allowed: &[Vec<usize>]) -> Option<Vec<Entity>> {
    let mut out: Vec<Entity> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..MAX_ENTITY_DRAWS {
            let shape = *Shape::ALL.choose(rng).expect("non-empty");
            let color = *allowed[shape as usize].choose(rng).expect("checked non-empty");
            let material = *Material::ALL.choose(rng).expect("non-empty");
            let size = *Size::ALL.choose(rng).expect("non-empty");
            let e = Entity { shape, color, material, size, position: [0.0; 2], radius: radius_for(size) };
            if out.iter().all(|o| o.attribute_distance(&e) >= 2) {
                out.push(e);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(out)
}

fn place_entities<R: Rng>(rng: &mut R, entities: &mut [Entity]) -> Result<()> {
    'layout: for _ in 0..MAX_LAYOUT_RESTARTS {
        for i in 0..entities.len() {
            let r = entities[i].radius;
            let mut ok = false;
            for _ in 0..MAX_POSITION_DRAWS {
                entities[i].position = [rng.gen_range(r..=1.0 - r), rng.gen_range(r..=1.0 - r)];
                if entities[..i].iter().all(|o| !o.boxes_overlap(&entities[i])) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'layout;
            }
        }
        return Ok(());
    }
    Err(Error::Generation(format!("retry budget exhausted on non-overlap ({} entities)", entities.len())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    TestId,
    TestOod,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::TestId, Subset::TestOod];

    pub fn dir_name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::TestId => "test_id",
            Subset::TestOod => "test_ood",
        }
    }

    pub fn split(self) -> Split {
        match self {
            Subset::Train | Subset::TestId => Split::A,
            Subset::TestOod => Split::B,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "test_id" | "test-id" | "id" => Ok(Subset::TestId),
            "test_ood" | "test-ood" | "ood" => Ok(Subset::TestOod),
            _ => Err(Error::param("subset", format!("unknown subset `{s}`"))),
        }
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.dir_name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSeeds {
    pub train: Vec<u64>,
    pub test_id: Vec<u64>,
    pub test_ood: Vec<u64>,
}

impl SubsetSeeds {
    pub fn get(&self, subset: Subset) -> &[u64] {
        match subset {
            Subset::Train => &self.train,
            Subset::TestId => &self.test_id,
            Subset::TestOod => &self.test_ood,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub split_spec: SplitSpec,
    pub vocabulary: Vocabulary,
    pub sizes: SubsetSizes,
    pub sample_seeds: SubsetSeeds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSizes {
    pub train: usize,
    pub test_id: usize,
    pub test_ood: usize,
}

impl DatasetManifest {
    pub fn palette(&self) -> Result<Palette> {
        build_palette(self.config.color_divisions)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 of the canonical manifest JSON. The manifest fixes every sample,
    /// so this identifies the dataset.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub scene: Scene,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub palette: Palette,
    pub train: Vec<Sample>,
    pub test_id: Vec<Sample>,
    pub test_ood: Vec<Sample>,
}

impl Dataset {
    pub fn subset(&self, subset: Subset) -> &[Sample] {
        match subset {
            Subset::Train => &self.train,
            Subset::TestId => &self.test_id,
            Subset::TestOod => &self.test_ood,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.manifest.vocabulary
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.manifest.config
    }
}

/// Per-sample seed for the `global_index`-th scene of a dataset. The train pool
/// occupies indices `0..train_size`, test-ID the next `test_size`, test-OOD
/// the next `test_size`, so the three sets never share a seed.
pub fn sample_seed(config: &DatasetConfig, global_index: usize) -> u64 {
    rng::derive_seed(config.seed, &[rng::TAG_SAMPLE, global_index as u64])
}

pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let palette = build_palette(config.color_divisions)?;
    let spec = build_split_spec(&palette, config.common_ratio, config.seed)?;
    if !spec.has_ood_split() {
        return Err(Error::EmptySplit { split: "B".into(), shape: "cube/cylinder".into() });
    }
    let vocabulary = Vocabulary::new(&palette);

    // Fractional training sets are prefixes of the full pool.
    let train_seeds: Vec<u64> = (0..config.train_count()).map(|i| sample_seed(config, i)).collect();
    let id_seeds: Vec<u64> = (0..config.test_size).map(|i| sample_seed(config, config.train_size + i)).collect();
    let ood_seeds: Vec<u64> =
        (0..config.test_size).map(|i| sample_seed(config, config.train_size + config.test_size + i)).collect();

    let held_out = config.without_burstiness();
    let make = |seeds: &[u64], split: Split, cfg: &DatasetConfig| -> Result<Vec<Sample>> {
        seeds
            .iter()
            .enumerate()
            .map(|(id, &s)| Ok(Sample { id, scene: sample_scene(&spec, split, cfg, s)? }))
            .collect()
    };
    let train = make(&train_seeds, Split::A, config)?;
    let test_id = make(&id_seeds, Split::A, &held_out)?;
    let test_ood = make(&ood_seeds, Split::B, &held_out)?;

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        split_spec: spec,
        vocabulary,
        sizes: SubsetSizes { train: train.len(), test_id: test_id.len(), test_ood: test_ood.len() },
        sample_seeds: SubsetSeeds { train: train_seeds, test_id: id_seeds, test_ood: ood_seeds },
    };
    Ok(Dataset { manifest, palette, train, test_id, test_ood })
}

#[derive(Serialize, Deserialize)]
struct EntityRecord {
    shape: Shape,
    color: usize,
    hex: String,
    material: Material,
    size: Size,
    position: [f64; 2],
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: usize,
    seed: u64,
    image: String,
    bursty: bool,
    burst_subset: Option<Vec<usize>>,
    entities: Vec<EntityRecord>,
    text: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

pub fn image_file_name(id: usize) -> String {
    format!("{id:06}.png")
}

/// Writes `manifest.json` plus per-subset PNGs and `records.jsonl`.
///
/// The tree is assembled in a sibling temporary directory and renamed into
/// place. An existing dataset with the same manifest is left untouched; one
/// with a different manifest is an error.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = read_manifest(dir)?;
        if existing.hash() == dataset.manifest.hash() {
            return Ok(manifest_path);
        }
        return Err(Error::Integrity(format!(
            "{} already holds a different dataset; refusing to overwrite",
            dir.display()
        )));
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        dir.file_name().and_then(|n| n.to_str()).unwrap_or("dataset"),
        std::process::id()
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    let vocab = dataset.vocabulary();
    let side = dataset.config().image_side;
    for subset in Subset::ALL {
        let sub = tmp.join(subset.dir_name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let records_path = sub.join(RECORDS_FILE);
        let file = fs::File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let mut out = BufWriter::new(file);
        for sample in dataset.subset(subset) {
            let image = render::rasterize(&sample.scene, &dataset.palette, side)?;
            let name = image_file_name(sample.id);
            image.save_png(&sub.join(&name))?;
            let record = SampleRecord {
                id: sample.id,
                seed: sample.scene.seed,
                image: name,
                bursty: sample.scene.bursty,
                burst_subset: sample.scene.burst_subset.clone(),
                entities: sample
                    .scene
                    .entities
                    .iter()
                    .map(|e| EntityRecord {
                        shape: e.shape,
                        color: e.color,
                        hex: dataset.palette.hex(e.color).unwrap_or_default(),
                        material: e.material,
                        size: e.size,
                        position: e.position,
                        radius: e.radius,
                    })
                    .collect(),
                text: vocab.surface(&textgen::serialize(&sample.scene, vocab)?.ids),
            };
            let line = serde_json::to_string(&record).map_err(|e| Error::json("record", e))?;
            writeln!(out, "{line}").map_err(|e| Error::io(&records_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&records_path, e))?;
    }
    let tmp_manifest = tmp.join(MANIFEST_FILE);
    fs::write(&tmp_manifest, dataset.manifest.to_json()).map_err(|e| Error::io(&tmp_manifest, e))?;
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(manifest_path)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Compatibility(format!(
            "dataset format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Loads a dataset written by [`write_dataset`], validating every record
/// against the manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let palette = manifest.palette()?;
    let mut subsets = Vec::with_capacity(3);
    for subset in Subset::ALL {
        subsets.push(load_records(dir, subset, &manifest, &palette)?);
    }
    let test_ood = subsets.pop().expect("three subsets");
    let test_id = subsets.pop().expect("three subsets");
    let train = subsets.pop().expect("three subsets");
    Ok(Dataset { manifest, palette, train, test_id, test_ood })
}

fn load_records(dir: &Path, subset: Subset, manifest: &DatasetManifest, palette: &Palette) -> Result<Vec<Sample>> {
    let path = dir.join(subset.dir_name()).join(RECORDS_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let seeds = manifest.sample_seeds.get(subset);
    let mut out = Vec::with_capacity(seeds.len());
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |why: String| Error::Integrity(format!("{subset} sample at line {}: {why}", line_no + 1));
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        let id = record.id;
        let bad = |why: String| Error::Integrity(format!("{subset} sample {id}: {why}"));
        if seeds.get(id) != Some(&record.seed) {
            return Err(bad("seed does not match manifest".into()));
        }
        if !(MIN_ENTITIES..=MAX_ENTITIES).contains(&record.entities.len()) {
            return Err(bad(format!("{} entities", record.entities.len())));
        }
        let mut entities = Vec::with_capacity(record.entities.len());
        for e in record.entities {
            if palette.hex(e.color).as_deref() != Some(e.hex.as_str()) {
                return Err(bad(format!("color index {} does not match {}", e.color, e.hex)));
            }
            if !manifest.split_spec.is_legal(e.shape, e.color, subset.split()) {
                return Err(bad(format!("{} with color {} is illegal in split {}", e.shape, e.hex, subset.split())));
            }
            entities.push(Entity {
                shape: e.shape,
                color: e.color,
                material: e.material,
                size: e.size,
                position: e.position,
                radius: e.radius,
            });
        }
        let scene = Scene { entities, bursty: record.bursty, burst_subset: record.burst_subset, seed: record.seed };
        let text = manifest.vocabulary.surface(&textgen::serialize(&scene, &manifest.vocabulary)?.ids);
        if text != record.text {
            return Err(bad("description text does not match entities".into()));
        }
        out.push(Sample { id, scene });
    }
    if out.len() != seeds.len() {
        return Err(Error::Integrity(format!("{subset}: {} records, manifest lists {}", out.len(), seeds.len())));
    }
    Ok(out)
}

/// Joint count tables over attribute pairs, counted over every object of a subset.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTables {
    pub tables: Vec<JointTable>,
}

impl AttributeTables {
    /// Table with `x` on rows and `y` on columns.
    pub fn get(&self, x: Attribute, y: Attribute) -> Option<JointTable> {
        self.tables.iter().find_map(|t| {
            if t.row_var == x.label() && t.col_var == y.label() {
                Some(t.clone())
            } else if t.row_var == y.label() && t.col_var == x.label() {
                Some(t.transposed())
            } else {
                None
            }
        })
    }

    pub fn color_shape(&self) -> JointTable {
        self.get(Attribute::Color, Attribute::Shape).expect("color-shape table is always built")
    }
}

/// Counts over `(x, y)` value pairs for all entities of the given scenes.
pub fn joint_table<'a>(
    scenes: impl IntoIterator<Item = &'a Scene>,
    x: Attribute,
    y: Attribute,
    n_colors: usize,
) -> JointTable {
    let card = |a: Attribute| match a {
        Attribute::Shape => Shape::ALL.len(),
        Attribute::Color => n_colors,
        Attribute::Material => Material::ALL.len(),
        Attribute::Size => Size::ALL.len(),
    };
    let mut table = JointTable::zeros(x.label(), y.label(), card(x), card(y));
    for scene in scenes {
        for e in &scene.entities {
            table.counts[e.value(x)][e.value(y)] += 1;
        }
    }
    table
}

pub fn dataset_attribute_table(dataset: &Dataset, subset: Subset) -> AttributeTables {
    let n_colors = dataset.palette.len();
    let scenes: Vec<&Scene> = dataset.subset(subset).iter().map(|s| &s.scene).collect();
    let mut tables = Vec::new();
    let order = [Attribute::Color, Attribute::Shape, Attribute::Material, Attribute::Size];
    for (i, &x) in order.iter().enumerate() {
        for &y in &order[i + 1..] {
            tables.push(joint_table(scenes.iter().copied(), x, y, n_colors));
        }
    }
    AttributeTables { tables }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DatasetConfig {
        DatasetConfig { train_size: 200, test_size: 60, image_side: 32, patch_side: 8, ..DatasetConfig::desk() }
    }

    fn spec(n: usize, ratio: f64) -> SplitSpec {
        build_split_spec(&build_palette(n).unwrap(), ratio, 7).unwrap()
    }

    #[test]
    fn scenes_respect_structure() {
        let cfg = small_config();
        let s = spec(2, 0.0);
        for seed in 0..300 {
            let scene = sample_scene(&s, Split::A, &cfg, seed).unwrap();
            assert!((MIN_ENTITIES..=MAX_ENTITIES).contains(&scene.entities.len()));
            assert!(scene.is_resolvable());
            assert!(scene.is_non_overlapping());
            assert!(!scene.bursty && scene.burst_subset.is_none());
            for e in &scene.entities {
                assert!(s.is_legal(e.shape, e.color, Split::A));
                let [x0, y0, x1, y1] = e.bounding_box();
                assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 && y1 <= 1.0);
            }
        }
    }

    #[test]
    fn fully_bursty_scenes_use_at_most_three_colors() {
        let cfg = DatasetConfig { p_burst: 1.0, ..small_config() };
        for n in [2, 4, 6] {
            let s = spec(n, 0.0);
            for seed in 0..200 {
                let scene = sample_scene(&s, Split::A, &cfg, seed).unwrap();
                assert!(scene.bursty);
                let subset = scene.burst_subset.clone().unwrap();
                assert!(subset.len() <= 3);
                assert!(scene.distinct_colors().iter().all(|c| subset.contains(c)));
                assert!(scene.is_resolvable());
            }
        }
    }

    #[test]
    fn scene_sampling_is_deterministic() {
        let cfg = DatasetConfig { p_burst: 0.5, ..small_config() };
        let s = spec(3, 0.2);
        assert_eq!(sample_scene(&s, Split::B, &cfg, 99).unwrap(), sample_scene(&s, Split::B, &cfg, 99).unwrap());
    }

    #[test]
    fn ood_scenes_use_split_b_colors() {
        let cfg = small_config();
        let s = spec(3, 0.3);
        for seed in 0..100 {
            let scene = sample_scene(&s, Split::B, &cfg, seed).unwrap();
            for e in &scene.entities {
                assert!(s.is_legal(e.shape, e.color, Split::B));
            }
        }
    }

    #[test]
    fn empty_split_b_is_rejected() {
        let cfg = DatasetConfig { common_ratio: 1.0, ..small_config() };
        assert!(matches!(build_dataset(&cfg), Err(Error::EmptySplit { .. })));
        let s = spec(2, 1.0);
        assert!(sample_scene(&s, Split::B, &cfg, 0).is_err());
    }

    #[test]
    fn dataset_sizes_and_fraction() {
        let cfg = DatasetConfig { train_fraction: 0.25, ..small_config() };
        let d = build_dataset(&cfg).unwrap();
        assert_eq!(d.train.len(), 50);
        assert_eq!(d.test_id.len(), 60);
        assert_eq!(d.test_ood.len(), 60);
        let full = build_dataset(&small_config()).unwrap();
        assert_eq!(full.train[..50], d.train[..]);
        let all: BTreeSet<u64> = full
            .manifest
            .sample_seeds
            .train
            .iter()
            .chain(&full.manifest.sample_seeds.test_id)
            .chain(&full.manifest.sample_seeds.test_ood)
            .copied()
            .collect();
        assert_eq!(all.len(), 200 + 60 + 60);
    }

    #[test]
    fn full_scale_manifest_sizes() {
        let cfg = DatasetConfig::full_scale();
        let d = build_dataset(&cfg).unwrap();
        assert_eq!(d.manifest.sizes, SubsetSizes { train: 75_000, test_id: 15_000, test_ood: 15_000 });
        let quarter = DatasetConfig { train_fraction: 0.25, ..cfg };
        assert_eq!(quarter.train_count(), 18_750);
    }

    #[test]
    fn held_out_sets_are_never_bursty() {
        let cfg = DatasetConfig { p_burst: 1.0, ..small_config() };
        let d = build_dataset(&cfg).unwrap();
        assert!(d.train.iter().all(|s| s.scene.bursty));
        assert!(d.test_id.iter().chain(&d.test_ood).all(|s| !s.scene.bursty));
    }

    #[test]
    fn ood_pairs_never_seen_in_training() {
        let d = build_dataset(&small_config()).unwrap();
        let seen: BTreeSet<(Shape, usize)> =
            d.train.iter().flat_map(|s| s.scene.entities.iter().map(|e| (e.shape, e.color))).collect();
        for s in &d.test_ood {
            for e in s.scene.entities.iter().filter(|e| e.shape.is_systematic()) {
                assert!(!seen.contains(&(e.shape, e.color)));
            }
        }
    }

    #[test]
    fn attribute_table_counts() {
        let d = build_dataset(&small_config()).unwrap();
        let tables = dataset_attribute_table(&d, Subset::Train);
        let total: usize = d.train.iter().map(|s| s.scene.entities.len()).sum();
        for t in &tables.tables {
            assert_eq!(t.total() as usize, total);
        }
        let cs = tables.color_shape();
        for &c in &d.manifest.split_spec.cylinder_exclusive {
            assert_eq!(cs.counts[c][Shape::Cube as usize], 0);
        }
        assert_eq!(tables.get(Attribute::Shape, Attribute::Color).unwrap(), cs.transposed());
    }

    #[test]
    fn attribute_table_matches_hand_count() {
        let e = |shape, color, material, size| Entity { shape, color, material, size, position: [0.5; 2], radius: 0.06 };
        let scenes = [
            Scene {
                entities: vec![
                    e(Shape::Cube, 0, Material::Rubber, Size::Small),
                    e(Shape::Sphere, 1, Material::Metal, Size::Large),
                    e(Shape::Cylinder, 2, Material::Rubber, Size::Large),
                ],
                bursty: false,
                burst_subset: None,
                seed: 0,
            },
            Scene {
                entities: vec![
                    e(Shape::Cube, 0, Material::Metal, Size::Large),
                    e(Shape::Cube, 3, Material::Rubber, Size::Small),
                    e(Shape::Sphere, 0, Material::Rubber, Size::Small),
                ],
                bursty: false,
                burst_subset: None,
                seed: 1,
            },
            Scene {
                entities: vec![
                    e(Shape::Cylinder, 2, Material::Metal, Size::Small),
                    e(Shape::Sphere, 2, Material::Rubber, Size::Large),
                    e(Shape::Cylinder, 1, Material::Rubber, Size::Large),
                ],
                bursty: false,
                burst_subset: None,
                seed: 2,
            },
        ];
        let t = joint_table(scenes.iter(), Attribute::Color, Attribute::Shape, 4);
        // rows: colors 0..4; columns: sphere, cube, cylinder
        assert_eq!(t.counts, vec![vec![1, 2, 0], vec![1, 0, 1], vec![1, 0, 2], vec![0, 1, 0]]);
        let m = joint_table(scenes.iter(), Attribute::Material, Attribute::Size, 4);
        assert_eq!(m.counts, vec![vec![3, 3], vec![1, 2]]);
    }

    #[test]
    fn write_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { train_size: 12, test_size: 5, p_burst: 0.5, ..small_config() };
        let d = build_dataset(&cfg).unwrap();
        let path = dir.path().join("ds");
        write_dataset(&d, &path).unwrap();
        assert!(path.join("train").join("000000.png").exists());
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.manifest, d.manifest);
        assert_eq!(loaded.train, d.train);
        assert_eq!(loaded.test_ood, d.test_ood);
        // idempotent for the same dataset, refuses a different one
        write_dataset(&d, &path).unwrap();
        let other = build_dataset(&DatasetConfig { seed: 1, ..cfg }).unwrap();
        assert!(matches!(write_dataset(&other, &path), Err(Error::Integrity(_))));
    }

    #[test]
    fn corrupted_record_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { train_size: 4, test_size: 2, ..small_config() };
        let d = build_dataset(&cfg).unwrap();
        let path = dir.path().join("ds");
        write_dataset(&d, &path).unwrap();
        let rec = path.join("train").join(RECORDS_FILE);
        let text = fs::read_to_string(&rec).unwrap();
        let corrupted = text.replacen("\"hex\":\"#", "\"hex\":\"#f", 1);
        fs::write(&rec, corrupted).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m.contains("sample 0")), "{err}");
    }
}
