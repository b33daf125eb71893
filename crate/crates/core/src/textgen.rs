//! Scene descriptions as token sequences, with training and evaluation masking.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{hex_color, Attribute, Material, Palette, Shape, Size};
use crate::scenegen::{Entity, Scene};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const SEP: TokenId = 2;

pub const PAD_TOKEN: &str = "[PAD]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Tokens per entity: size, color, material, shape.
pub const FIELDS_PER_ENTITY: usize = 4;

/// Position of each attribute within an entity block.
pub fn field_offset(attribute: Attribute) -> usize {
    match attribute {
        Attribute::Size => 0,
        Attribute::Color => 1,
        Attribute::Material => 2,
        Attribute::Shape => 3,
    }
}

pub const FIELD_ORDER: [Attribute; 4] = [Attribute::Size, Attribute::Color, Attribute::Material, Attribute::Shape];

/// Number of tokens in the description of `n_entities` entities.
pub fn sequence_len(n_entities: usize) -> usize {
    if n_entities == 0 {
        0
    } else {
        FIELDS_PER_ENTITY * n_entities + n_entities - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Special,
    Value(Attribute),
}

/// `[PAD] [MASK] [SEP]`, sizes, one atomic token per palette color, materials, shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    n_colors: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    n_colors: usize,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        Vocabulary::from_tokens(f.tokens, f.n_colors)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile { tokens: v.tokens, n_colors: v.n_colors }
    }
}

impl Vocabulary {
    pub fn new(palette: &Palette) -> Self {
        let mut tokens: Vec<String> = [PAD_TOKEN, MASK_TOKEN, SEP_TOKEN].map(String::from).to_vec();
        tokens.extend(Size::ALL.iter().map(|s| s.label().to_string()));
        tokens.extend(palette.colors().iter().map(|&c| hex_color(c)));
        tokens.extend(Material::ALL.iter().map(|m| m.label().to_string()));
        tokens.extend(Shape::ALL.iter().map(|s| s.label().to_string()));
        Self::from_tokens(tokens, palette.len())
    }

    fn from_tokens(tokens: Vec<String>, n_colors: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Self { tokens, index, n_colors }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_colors(&self) -> usize {
        self.n_colors
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn size_base(&self) -> TokenId {
        3
    }

    fn color_base(&self) -> TokenId {
        3 + Size::ALL.len() as TokenId
    }

    fn material_base(&self) -> TokenId {
        self.color_base() + self.n_colors as TokenId
    }

    fn shape_base(&self) -> TokenId {
        self.material_base() + Material::ALL.len() as TokenId
    }

    pub fn class(&self, id: TokenId) -> Option<TokenClass> {
        if id as usize >= self.len() {
            None
        } else if id < self.size_base() {
            Some(TokenClass::Special)
        } else if id < self.color_base() {
            Some(TokenClass::Value(Attribute::Size))
        } else if id < self.material_base() {
            Some(TokenClass::Value(Attribute::Color))
        } else if id < self.shape_base() {
            Some(TokenClass::Value(Attribute::Material))
        } else {
            Some(TokenClass::Value(Attribute::Shape))
        }
    }

    /// Token id for the `value`-th value of an attribute (value indices as in
    /// [`Entity::value`]).
    pub fn value_id(&self, attribute: Attribute, value: usize) -> Result<TokenId> {
        let (base, card) = match attribute {
            Attribute::Size => (self.size_base(), Size::ALL.len()),
            Attribute::Color => (self.color_base(), self.n_colors),
            Attribute::Material => (self.material_base(), Material::ALL.len()),
            Attribute::Shape => (self.shape_base(), Shape::ALL.len()),
        };
        if value >= card {
            return Err(Error::Vocabulary(format!("{attribute} value {value} outside vocabulary (cardinality {card})")));
        }
        Ok(base + value as TokenId)
    }

    /// Inverse of [`Vocabulary::value_id`].
    pub fn value_of(&self, id: TokenId) -> Option<(Attribute, usize)> {
        match self.class(id)? {
            TokenClass::Special => None,
            TokenClass::Value(a) => {
                let base = match a {
                    Attribute::Size => self.size_base(),
                    Attribute::Color => self.color_base(),
                    Attribute::Material => self.material_base(),
                    Attribute::Shape => self.shape_base(),
                };
                Some((a, (id - base) as usize))
            }
        }
    }

    pub fn surface(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| Error::Vocabulary(format!("unknown token `{t}`"))))
            .collect()
    }
}

/// A tokenized scene description, possibly with masked positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuerySequence {
    pub ids: Vec<TokenId>,
    /// `(position, true token id)` for every masked position, in position order.
    pub mask_positions: Vec<(usize, TokenId)>,
    /// Entity index of each position; `None` for `[SEP]`.
    pub entity_index: Vec<Option<usize>>,
}

impl QuerySequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_index.iter().flatten().max().map_or(0, |m| m + 1)
    }

    /// Restores every masked position to its true token.
    pub fn unmasked(&self) -> QuerySequence {
        let mut ids = self.ids.clone();
        for &(p, t) in &self.mask_positions {
            ids[p] = t;
        }
        QuerySequence { ids, mask_positions: Vec::new(), entity_index: self.entity_index.clone() }
    }

    pub fn position_of(entity: usize, attribute: Attribute) -> usize {
        entity * (FIELDS_PER_ENTITY + 1) + field_offset(attribute)
    }
}

/// Unmasked token sequence in `(size, color, material, shape)` order with
/// `[SEP]` between entities.
pub fn serialize(scene: &Scene, vocab: &Vocabulary) -> Result<QuerySequence> {
    serialize_entities(&scene.entities, vocab)
}

pub fn serialize_entities(entities: &[Entity], vocab: &Vocabulary) -> Result<QuerySequence> {
    let n = entities.len();
    let mut ids = Vec::with_capacity(sequence_len(n));
    let mut entity_index = Vec::with_capacity(sequence_len(n));
    for (i, e) in entities.iter().enumerate() {
        if i > 0 {
            ids.push(SEP);
            entity_index.push(None);
        }
        for attribute in FIELD_ORDER {
            ids.push(vocab.value_id(attribute, e.value(attribute))?);
            entity_index.push(Some(i));
        }
    }
    Ok(QuerySequence { ids, mask_positions: Vec::new(), entity_index })
}

/// Recovers the `(size, color, material, shape)` value tuples of an unmasked sequence.
pub fn deserialize(seq: &QuerySequence, vocab: &Vocabulary) -> Result<Vec<[usize; 4]>> {
    let n = seq.n_entities();
    let mut out = vec![[0usize; 4]; n];
    for (pos, &id) in seq.ids.iter().enumerate() {
        let Some(e) = seq.entity_index[pos] else { continue };
        let (attribute, value) =
            vocab.value_of(id).ok_or_else(|| Error::Vocabulary(format!("special token at attribute position {pos}")))?;
        if FIELD_ORDER[pos - e * (FIELDS_PER_ENTITY + 1)] != attribute {
            return Err(Error::Vocabulary(format!("{attribute} token at position {pos} is out of field order")));
        }
        out[e][field_offset(attribute)] = value;
    }
    Ok(out)
}

/// Independently masks every non-`[SEP]` token with probability `p_mask`.
/// A draw with no masked token is repeated once; a second empty draw is kept.
pub fn mask_for_training<R: Rng + ?Sized>(seq: &QuerySequence, p_mask: f64, rng: &mut R) -> QuerySequence {
    let base = seq.unmasked();
    for _ in 0..2 {
        let mut out = base.clone();
        for pos in 0..out.ids.len() {
            if out.entity_index[pos].is_some() && rng.gen_bool(p_mask) {
                out.mask_positions.push((pos, out.ids[pos]));
                out.ids[pos] = MASK;
            }
        }
        if !out.mask_positions.is_empty() {
            return out;
        }
    }
    base
}

/// Masks exactly one attribute of one entity.
pub fn mask_for_eval(seq: &QuerySequence, entity: usize, attribute: Attribute) -> Result<QuerySequence> {
    let n = seq.n_entities();
    if entity >= n {
        return Err(Error::param("entity_index", format!("entity {entity} not in a {n}-entity sequence")));
    }
    let mut out = seq.unmasked();
    let pos = QuerySequence::position_of(entity, attribute);
    out.mask_positions.push((pos, out.ids[pos]));
    out.ids[pos] = MASK;
    Ok(out)
}

/// String form of [`mask_for_eval`] taking an attribute label.
pub fn mask_for_eval_label(seq: &QuerySequence, entity: usize, attribute: &str) -> Result<QuerySequence> {
    mask_for_eval(seq, entity, Attribute::parse(attribute)?)
}
