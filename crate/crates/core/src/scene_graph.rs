//! Scene-graph data model, box geometry features and the triplet hard mask.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::{Scalar, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("image size must be positive, got {w}x{h}")]
    ImageSize { w: f64, h: f64 },
}

/// Axis-aligned box `(x1, y1, x2, y2)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub feature: Vec<f64>,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRelation {
    pub id: usize,
    pub label_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triplet {
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Triplet { subject, relation, object }
    }
}

/// Objects, relation nodes (one per triplet instance) and their triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
    pub relations: Vec<SceneRelation>,
    pub triplets: Vec<Triplet>,
    pub image_size: (f64, f64),
}

/// `(x1/w, y1/h, x2/w, y2/h, area/(w h))`.
pub fn geometry_features(bbox: &BoundingBox, image_size: (f64, f64)) -> Result<[f64; 5], GraphError> {
    let (w, h) = image_size;
    if !(w > 0.0 && h > 0.0) {
        return Err(GraphError::ImageSize { w, h });
    }
    let BoundingBox { x1, y1, x2, y2 } = *bbox;
    Ok([x1 / w, y1 / h, x2 / w, y2 / h, (y2 - y1) * (x2 - x1) / (w * h)])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Object row `i`, relation column `j` is open iff `(o_i, r_j, *)` is a triplet.
    #[default]
    Literal,
    /// Object/relation entries (both directions) are open iff the object is the
    /// subject or the object of a triplet through that relation.
    Symmetric,
}

/// Additive `{0, -inf}` attention mask over `(themes, objects, relations)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    num_themes: usize,
    num_objects: usize,
    num_relations: usize,
    blocked: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.num_themes + self.num_objects + self.num_relations
    }

    pub fn blocks(&self) -> (usize, usize, usize) {
        (self.num_themes, self.num_objects, self.num_relations)
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.size() + j]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        if self.is_blocked(i, j) {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        let n = self.size();
        Tensor::from_fn(&[n, n], |k| if self.blocked[k] { F::neg_infinity() } else { F::zero() })
    }

    /// The same layout with nothing blocked.
    pub fn open(num_themes: usize, num_objects: usize, num_relations: usize) -> Self {
        let n = num_themes + num_objects + num_relations;
        AttentionMask { num_themes, num_objects, num_relations, blocked: vec![false; n * n] }
    }
}

/// Builds the hard mask with `num_theme_nodes` leading unmasked rows/columns.
pub fn build_mask(sg: &SceneGraph, num_theme_nodes: usize, mode: MaskMode) -> AttentionMask {
    let (no, nr) = (sg.objects.len(), sg.relations.len());
    let mut mask = AttentionMask::open(num_theme_nodes, no, nr);
    let n = mask.size();
    let mut linked: HashSet<(usize, usize)> = HashSet::new();
    for t in &sg.triplets {
        linked.insert((t.subject, t.relation));
        if mode == MaskMode::Symmetric {
            linked.insert((t.object, t.relation));
        }
    }
    for o in 0..no {
        for r in 0..nr {
            if linked.contains(&(o, r)) {
                continue;
            }
            let (row, col) = (num_theme_nodes + o, num_theme_nodes + no + r);
            mask.blocked[row * n + col] = true;
            if mode == MaskMode::Symmetric {
                mask.blocked[col * n + row] = true;
            }
        }
    }
    mask
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ImageSize { w: f64, h: f64 },
    InvertedBox { object: usize },
    FeatureLength { object: usize, expected: usize, got: usize },
    ObjectId { position: usize, id: usize },
    RelationId { position: usize, id: usize },
    RelationLabel { relation: usize, label_id: usize, vocab: usize },
    TripletOutOfRange { triplet: usize, field: &'static str, index: usize, len: usize },
    OrphanRelation { relation: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ImageSize { w, h } => write!(f, "image size {w}x{h} is not positive"),
            Violation::InvertedBox { object } => write!(f, "object {object} has an inverted box"),
            Violation::FeatureLength { object, expected, got } => {
                write!(f, "object {object} feature has length {got}, expected {expected}")
            }
            Violation::ObjectId { position, id } => write!(f, "object at position {position} has id {id}"),
            Violation::RelationId { position, id } => write!(f, "relation at position {position} has id {id}"),
            Violation::RelationLabel { relation, label_id, vocab } => {
                write!(f, "relation {relation} label {label_id} outside vocabulary of {vocab}")
            }
            Violation::TripletOutOfRange { triplet, field, index, len } => {
                write!(f, "triplet {triplet} {field} index {index} out of range ({len})")
            }
            Violation::OrphanRelation { relation } => write!(f, "relation {relation} appears in no triplet"),
        }
    }
}

/// Optional dataset-level expectations checked alongside the structural invariants.
#[derive(Clone, Copy, Debug, Default)]
pub struct GraphSchema {
    pub feature_dim: Option<usize>,
    pub relation_vocab: Option<usize>,
}

pub fn validate_scene_graph(sg: &SceneGraph, schema: &GraphSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let (w, h) = sg.image_size;
    if !(w > 0.0 && h > 0.0) {
        out.push(Violation::ImageSize { w, h });
    }
    for (pos, o) in sg.objects.iter().enumerate() {
        if o.id != pos {
            out.push(Violation::ObjectId { position: pos, id: o.id });
        }
        if o.bbox.x1 > o.bbox.x2 || o.bbox.y1 > o.bbox.y2 {
            out.push(Violation::InvertedBox { object: pos });
        }
        if let Some(d) = schema.feature_dim {
            if o.feature.len() != d {
                out.push(Violation::FeatureLength { object: pos, expected: d, got: o.feature.len() });
            }
        }
    }
    for (pos, r) in sg.relations.iter().enumerate() {
        if r.id != pos {
            out.push(Violation::RelationId { position: pos, id: r.id });
        }
        if let Some(v) = schema.relation_vocab {
            if r.label_id >= v {
                out.push(Violation::RelationLabel { relation: pos, label_id: r.label_id, vocab: v });
            }
        }
    }
    let (no, nr) = (sg.objects.len(), sg.relations.len());
    let mut used = vec![false; nr];
    for (k, t) in sg.triplets.iter().enumerate() {
        for (field, index, len) in [("subject", t.subject, no), ("relation", t.relation, nr), ("object", t.object, no)] {
            if index >= len {
                out.push(Violation::TripletOutOfRange { triplet: k, field, index, len });
            }
        }
        if t.relation < nr {
            used[t.relation] = true;
        }
    }
    for (r, u) in used.iter().enumerate() {
        if !u {
            out.push(Violation::OrphanRelation { relation: r });
        }
    }
    out
}

impl SceneGraph {
    /// Reorders objects so new position `k` holds old object `perm[k]`, remapping triplets.
    pub fn permute_objects(&self, perm: &[usize]) -> SceneGraph {
        assert_eq!(perm.len(), self.objects.len());
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let objects = perm
            .iter()
            .enumerate()
            .map(|(new, &old)| SceneObject { id: new, ..self.objects[old].clone() })
            .collect();
        let triplets = self
            .triplets
            .iter()
            .map(|t| Triplet::new(inverse[t.subject], t.relation, inverse[t.object]))
            .collect();
        SceneGraph { objects, relations: self.relations.clone(), triplets, image_size: self.image_size }
    }

    /// Geometry features of every object, in order.
    pub fn geometry(&self) -> Result<Vec<[f64; 5]>, GraphError> {
        self.objects.iter().map(|o| geometry_features(&o.bbox, self.image_size)).collect()
    }
}
