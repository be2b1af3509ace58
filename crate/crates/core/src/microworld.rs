//! Synthetic micro-world: scene graphs whose captions carry theme words that
//! only a co-occurrence of several facts reveals, plus the dataset JSON format.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::scene_graph::{BoundingBox, GraphSchema, SceneGraph, SceneObject, SceneRelation, Triplet};
use crate::vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid world spec: {0}")]
    Spec(String),
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::Schema { pointer: pointer.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactPattern {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl FactPattern {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        FactPattern { subject: subject.into(), relation: relation.into(), object: object.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThemeSpec {
    pub word: String,
    pub triggers: Vec<FactPattern>,
    pub min_triggers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub themes: Vec<ThemeSpec>,
    pub object_vocab: Vec<String>,
    pub relation_vocab: Vec<String>,
    /// Region feature size `d_o`.
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise around each label prototype.
    pub feature_noise: f64,
    pub objects_per_image: (usize, usize),
    pub triplets_per_image: (usize, usize),
    pub captions_per_image: usize,
    /// Probability that an image carries enough triggers for some theme.
    pub theme_rate: f64,
    /// Probability that a theme-free image still holds a lone trigger fact.
    pub distractor_rate: f64,
    pub image_size: (f64, f64),
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let f = FactPattern::new;
        WorldSpec {
            themes: vec![
                ThemeSpec {
                    word: "party".into(),
                    triggers: vec![f("candle", "on", "cake"), f("balloon", "above", "table"), f("man", "wears", "hat")],
                    min_triggers: 2,
                },
                ThemeSpec {
                    word: "traffic".into(),
                    triggers: vec![f("car", "on", "road"), f("bus", "near", "light"), f("sign", "beside", "road")],
                    min_triggers: 2,
                },
                ThemeSpec {
                    word: "meal".into(),
                    triggers: vec![f("pizza", "on", "plate"), f("woman", "holds", "fork"), f("cup", "beside", "bread")],
                    min_triggers: 2,
                },
            ],
            object_vocab: words(
                "cake candle balloon hat table car bus road light sign pizza plate fork cup bread man woman dog tree chair",
            ),
            relation_vocab: words("on near wears holds behind under beside above"),
            feature_dim: 32,
            feature_noise: 0.3,
            objects_per_image: (4, 8),
            triplets_per_image: (2, 5),
            captions_per_image: 2,
            theme_rate: 0.5,
            distractor_rate: 0.8,
            image_size: (640.0, 480.0),
            seed: 0,
            n_train: 500,
            n_dev: 100,
            n_test: 100,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Spec(m));
        if self.themes.is_empty() {
            return err("no themes".into());
        }
        for t in &self.themes {
            if t.triggers.len() < 2 || t.min_triggers < 2 || t.min_triggers > t.triggers.len() {
                return err(format!("theme {:?} needs >= 2 triggers and 2 <= min_triggers <= triggers", t.word));
            }
            for p in &t.triggers {
                for label in [&p.subject, &p.object] {
                    if !self.object_vocab.contains(label) {
                        return err(format!("theme {:?} trigger uses unknown object {label:?}", t.word));
                    }
                }
                if !self.relation_vocab.contains(&p.relation) {
                    return err(format!("theme {:?} trigger uses unknown relation {:?}", t.word, p.relation));
                }
            }
        }
        let (omin, omax) = self.objects_per_image;
        let (tmin, tmax) = self.triplets_per_image;
        if omin < 2 || omin > omax || tmin < 1 || tmin > tmax {
            return err("object/triplet ranges must satisfy 2 <= min <= max".into());
        }
        let max_triggers = self.themes.iter().map(|t| t.triggers.len()).max().unwrap_or(0) + 1;
        if tmax < max_triggers || omax < 2 * max_triggers {
            return err(format!("ranges too small for {max_triggers} trigger facts"));
        }
        if self.captions_per_image == 0 || self.feature_dim == 0 {
            return err("captions_per_image and feature_dim must be positive".into());
        }
        if !(self.image_size.0 > 0.0 && self.image_size.1 > 0.0) {
            return err("image size must be positive".into());
        }
        Ok(())
    }

    fn theme_of(&self, word: &str) -> Option<&ThemeSpec> {
        self.themes.iter().find(|t| t.word == word)
    }
}

/// One image with its captions. `themes` is generator metadata, never a model input.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub scene_graph: SceneGraph,
    pub captions: Vec<Vec<String>>,
    pub themes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub relation_vocab: Vec<String>,
    pub examples: Vec<Example>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

fn label_of(sg: &SceneGraph, obj: usize) -> &str {
    sg.objects[obj].label.as_deref().unwrap_or("")
}

/// Themes whose trigger facts co-occur at least `min_triggers` times in `sg`.
pub fn active_themes(spec: &WorldSpec, sg: &SceneGraph, relation_vocab: &[String]) -> Vec<String> {
    let facts: BTreeSet<FactPattern> = sg
        .triplets
        .iter()
        .map(|t| FactPattern {
            subject: label_of(sg, t.subject).to_string(),
            relation: relation_vocab[sg.relations[t.relation].label_id].clone(),
            object: label_of(sg, t.object).to_string(),
        })
        .collect();
    spec.themes
        .iter()
        .filter(|t| t.triggers.iter().filter(|p| facts.contains(*p)).count() >= t.min_triggers)
        .map(|t| t.word.clone())
        .collect()
}

struct Generator<'a> {
    spec: &'a WorldSpec,
    prototypes: HashMap<&'a str, Vec<f64>>,
    trigger_set: BTreeSet<&'a FactPattern>,
    noise: Normal<f64>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a WorldSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_f00d);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let prototypes = spec
            .object_vocab
            .iter()
            .map(|l| (l.as_str(), (0..spec.feature_dim).map(|_| unit.sample(&mut rng)).collect()))
            .collect();
        let trigger_set = spec.themes.iter().flat_map(|t| t.triggers.iter()).collect();
        let noise = Normal::new(0.0, spec.feature_noise.max(0.0)).expect("valid noise scale");
        Generator { spec, prototypes, trigger_set, noise }
    }

    fn relation_id(&self, rel: &str) -> usize {
        self.spec.relation_vocab.iter().position(|r| r == rel).expect("validated relation")
    }

    fn new_object(&self, rng: &mut ChaCha8Rng, objects: &mut Vec<SceneObject>, label: &str) -> usize {
        let (w, h) = self.spec.image_size;
        let feature = self.prototypes[label].iter().map(|m| m + self.noise.sample(rng)).collect();
        let (x1, y1) = (rng.random_range(0.0..w * 0.8), rng.random_range(0.0..h * 0.8));
        let x2 = rng.random_range(x1 + 1.0..=w);
        let y2 = rng.random_range(y1 + 1.0..=h);
        let id = objects.len();
        objects.push(SceneObject {
            id,
            feature,
            bbox: BoundingBox::new(round2(x1), round2(y1), round2(x2), round2(y2)),
            label: Some(label.to_string()),
        });
        id
    }

    fn object_with_label(&self, rng: &mut ChaCha8Rng, objects: &mut Vec<SceneObject>, label: &str) -> usize {
        match objects.iter().position(|o| o.label.as_deref() == Some(label)) {
            Some(i) => i,
            None => self.new_object(rng, objects, label),
        }
    }

    fn example(&self, rng: &mut ChaCha8Rng) -> Example {
        let spec = self.spec;
        let mut facts: Vec<&FactPattern> = Vec::new();
        let themes: Vec<&ThemeSpec> = spec.themes.iter().collect();
        if rng.random_bool(spec.theme_rate) {
            let theme = *themes.choose(rng).expect("themes validated");
            let k = rng.random_range(theme.min_triggers..=theme.triggers.len());
            facts.extend(theme.triggers.choose_multiple(rng, k));
            if rng.random_bool(0.3) {
                self.add_lone_trigger(rng, &themes, Some(theme.word.as_str()), &mut facts);
            }
        } else if rng.random_bool(spec.distractor_rate) {
            self.add_lone_trigger(rng, &themes, None, &mut facts);
            if rng.random_bool(0.3) {
                let used = self.theme_of_fact(facts[0]).map(|t| t.word.as_str());
                self.add_lone_trigger(rng, &themes, used, &mut facts);
            }
        }

        let mut objects = Vec::new();
        let mut triplets = Vec::new();
        let mut relations = Vec::new();
        for p in &facts {
            let s = self.object_with_label(rng, &mut objects, &p.subject);
            let o = self.object_with_label(rng, &mut objects, &p.object);
            let r = relations.len();
            relations.push(SceneRelation { id: r, label_id: self.relation_id(&p.relation) });
            triplets.push(Triplet::new(s, r, o));
        }

        let (omin, omax) = spec.objects_per_image;
        let target = rng.random_range(omin.max(objects.len())..=omax.max(objects.len()));
        while objects.len() < target {
            let label = spec.object_vocab.choose(rng).expect("non-empty vocab").clone();
            self.new_object(rng, &mut objects, &label);
        }

        let (tmin, tmax) = spec.triplets_per_image;
        let n_triplets = rng.random_range(tmin.max(triplets.len())..=tmax.max(triplets.len()));
        let mut guard = 0;
        while triplets.len() < n_triplets && guard < 1000 {
            guard += 1;
            let s = rng.random_range(0..objects.len());
            let o = rng.random_range(0..objects.len());
            if s == o {
                continue;
            }
            let rel = spec.relation_vocab.choose(rng).expect("non-empty relations");
            let pattern = FactPattern {
                subject: objects[s].label.clone().unwrap_or_default(),
                relation: rel.clone(),
                object: objects[o].label.clone().unwrap_or_default(),
            };
            if self.trigger_set.contains(&pattern) || triplets.iter().any(|t: &Triplet| t.subject == s && t.object == o) {
                continue;
            }
            let r = relations.len();
            relations.push(SceneRelation { id: r, label_id: self.relation_id(rel) });
            triplets.push(Triplet::new(s, r, o));
        }

        // Shuffle node order so position carries no signal.
        let mut perm: Vec<usize> = (0..objects.len()).collect();
        perm.shuffle(rng);
        let sg = SceneGraph { objects, relations, triplets, image_size: spec.image_size }.permute_objects(&perm);
        let sg = shuffle_relations(sg, rng);

        let active = active_themes(spec, &sg, &spec.relation_vocab);
        let captions = (0..spec.captions_per_image).map(|i| self.caption(rng, &sg, &active, i)).collect();
        Example { scene_graph: sg, captions, themes: active }
    }

    fn theme_of_fact(&self, p: &FactPattern) -> Option<&ThemeSpec> {
        self.spec.themes.iter().find(|t| t.triggers.contains(p))
    }

    /// Adds one trigger fact from a theme other than `exclude`.
    fn add_lone_trigger<'b>(
        &self,
        rng: &mut ChaCha8Rng,
        themes: &[&'b ThemeSpec],
        exclude: Option<&str>,
        facts: &mut Vec<&'b FactPattern>,
    ) {
        let pool: Vec<&&ThemeSpec> = themes.iter().filter(|t| Some(t.word.as_str()) != exclude).collect();
        if let Some(theme) = pool.choose(rng) {
            facts.push(theme.triggers.choose(rng).expect("validated triggers"));
        }
    }

    fn verbalize(&self, sg: &SceneGraph, t: &Triplet) -> Vec<String> {
        vec![
            "a".into(),
            label_of(sg, t.subject).to_string(),
            self.spec.relation_vocab[sg.relations[t.relation].label_id].clone(),
            "a".into(),
            label_of(sg, t.object).to_string(),
        ]
    }

    /// Theme clause first (when active), then two fact clauses joined by "and".
    fn caption(&self, rng: &mut ChaCha8Rng, sg: &SceneGraph, active: &[String], variant: usize) -> Vec<String> {
        let mut order: Vec<usize> = (0..sg.triplets.len()).collect();
        order.shuffle(rng);
        let mut out: Vec<String> = Vec::new();
        match active.first() {
            Some(theme) => {
                out.extend(["a".to_string(), theme.clone()]);
                if variant % 2 == 1 {
                    out.push("scene".into());
                }
                out.push("with".into());
            }
            None if variant % 2 == 1 => out.extend(["a", "scene", "with"].map(String::from)),
            None => {}
        }
        for (k, &ti) in order.iter().take(2).enumerate() {
            if k > 0 {
                out.push("and".into());
            }
            out.extend(self.verbalize(sg, &sg.triplets[ti]));
        }
        out
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn shuffle_relations(mut sg: SceneGraph, rng: &mut ChaCha8Rng) -> SceneGraph {
    let n = sg.relations.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut inverse = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    sg.relations = perm.iter().enumerate().map(|(new, &old)| SceneRelation { id: new, label_id: sg.relations[old].label_id }).collect();
    for t in &mut sg.triplets {
        t.relation = inverse[t.relation];
    }
    sg.triplets.sort_by_key(|t| t.relation);
    sg
}

fn split(spec: &WorldSpec, gen: &Generator<'_>, salt: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt));
    Dataset {
        feature_dim: spec.feature_dim,
        relation_vocab: spec.relation_vocab.clone(),
        examples: (0..n).map(|_| gen.example(&mut rng)).collect(),
    }
}

/// Generates train/dev/test splits; a pure function of `spec`.
pub fn generate(spec: &WorldSpec) -> Result<Splits, DataError> {
    spec.validate()?;
    let gen = Generator::new(spec);
    Ok(Splits { train: split(spec, &gen, 1, spec.n_train), dev: split(spec, &gen, 2, spec.n_dev), test: split(spec, &gen, 3, spec.n_test) })
}

/// Themes a caption mentions, per the world's theme words.
pub fn mentioned_themes(spec: &WorldSpec, caption: &[String]) -> Vec<String> {
    spec.themes.iter().filter(|t| caption.contains(&t.word)).map(|t| t.word.clone()).collect()
}

impl Dataset {
    pub fn to_json(&self) -> Value {
        let examples: Vec<Value> = self
            .examples
            .iter()
            .map(|ex| {
                let sg = &ex.scene_graph;
                json!({
                    "image_size": [sg.image_size.0, sg.image_size.1],
                    "objects": sg.objects.iter().map(|o| json!({
                        "feature": o.feature,
                        "box": [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2],
                        "label": o.label.clone().unwrap_or_default(),
                    })).collect::<Vec<_>>(),
                    "relations": sg.relations.iter().map(|r| json!({"label": self.relation_vocab[r.label_id]})).collect::<Vec<_>>(),
                    "triplets": sg.triplets.iter().map(|t| json!([t.subject, t.relation, t.object])).collect::<Vec<_>>(),
                    "captions": ex.captions,
                    "themes": ex.themes,
                })
            })
            .collect();
        json!({ "d_o": self.feature_dim, "relation_vocab": self.relation_vocab, "examples": examples })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, serde_json::to_string(&self.to_json())?)?;
        Ok(())
    }

    pub fn from_json(value: &Value) -> Result<Self, DataError> {
        parse_dataset(value)
    }

    /// Per-image reference captions.
    pub fn references(&self) -> Vec<Vec<Vec<String>>> {
        self.examples.iter().map(|e| e.captions.clone()).collect()
    }

    pub fn graph_schema(&self) -> GraphSchema {
        GraphSchema { feature_dim: Some(self.feature_dim), relation_vocab: Some(self.relation_vocab.len()) }
    }
}

/// Reads and validates one split.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)?;
    parse_dataset(&value)
}

/// Default minimum word frequency for the caption vocabulary.
pub const MIN_WORD_FREQ: usize = 5;

/// Caption vocabulary over `data`, always keeping relation labels so relation
/// nodes can share the word embedding table.
pub fn build_vocab(data: &Dataset, min_freq: usize) -> Vocab {
    let sentences = data.examples.iter().flat_map(|e| e.captions.iter().map(Vec::as_slice));
    Vocab::build(sentences, min_freq, &data.relation_vocab)
}

fn as_obj<'v>(v: &'v Value, ptr: &str) -> Result<&'v serde_json::Map<String, Value>, DataError> {
    v.as_object().ok_or_else(|| schema(ptr, "expected an object"))
}

fn as_arr<'v>(v: &'v Value, ptr: &str) -> Result<&'v Vec<Value>, DataError> {
    v.as_array().ok_or_else(|| schema(ptr, "expected an array"))
}

fn field<'v>(m: &'v serde_json::Map<String, Value>, key: &str, ptr: &str) -> Result<&'v Value, DataError> {
    m.get(key).ok_or_else(|| schema(format!("{ptr}/{key}"), "missing field"))
}

fn as_f64(v: &Value, ptr: &str) -> Result<f64, DataError> {
    v.as_f64().ok_or_else(|| schema(ptr, "expected a number"))
}

fn as_usize(v: &Value, ptr: &str) -> Result<usize, DataError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| schema(ptr, "expected a non-negative integer"))
}

fn as_str<'v>(v: &'v Value, ptr: &str) -> Result<&'v str, DataError> {
    v.as_str().ok_or_else(|| schema(ptr, "expected a string"))
}

fn strings(v: &Value, ptr: &str) -> Result<Vec<String>, DataError> {
    as_arr(v, ptr)?.iter().enumerate().map(|(i, s)| as_str(s, &format!("{ptr}/{i}")).map(str::to_string)).collect()
}

fn parse_dataset(root: &Value) -> Result<Dataset, DataError> {
    let top = as_obj(root, "")?;
    for key in top.keys() {
        if !["d_o", "relation_vocab", "examples"].contains(&key.as_str()) {
            return Err(schema(format!("/{key}"), "unknown field"));
        }
    }
    let feature_dim = as_usize(field(top, "d_o", "")?, "/d_o")?;
    let relation_vocab = strings(field(top, "relation_vocab", "")?, "/relation_vocab")?;
    let rel_index: HashMap<&str, usize> = relation_vocab.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let mut examples = Vec::new();
    for (i, ex) in as_arr(field(top, "examples", "")?, "/examples")?.iter().enumerate() {
        let p = format!("/examples/{i}");
        let m = as_obj(ex, &p)?;
        let size = as_arr(field(m, "image_size", &p)?, &format!("{p}/image_size"))?;
        if size.len() != 2 {
            return Err(schema(format!("{p}/image_size"), "expected [w, h]"));
        }
        let image_size = (as_f64(&size[0], &format!("{p}/image_size/0"))?, as_f64(&size[1], &format!("{p}/image_size/1"))?);
        let mut objects = Vec::new();
        for (j, o) in as_arr(field(m, "objects", &p)?, &format!("{p}/objects"))?.iter().enumerate() {
            let op = format!("{p}/objects/{j}");
            let om = as_obj(o, &op)?;
            let feature = as_arr(field(om, "feature", &op)?, &format!("{op}/feature"))?
                .iter()
                .enumerate()
                .map(|(k, v)| as_f64(v, &format!("{op}/feature/{k}")))
                .collect::<Result<Vec<_>, _>>()?;
            if feature.len() != feature_dim {
                return Err(schema(format!("{op}/feature"), format!("length {} != d_o {feature_dim}", feature.len())));
            }
            let bx = as_arr(field(om, "box", &op)?, &format!("{op}/box"))?;
            if bx.len() != 4 {
                return Err(schema(format!("{op}/box"), "expected [x1, y1, x2, y2]"));
            }
            let c: Vec<f64> = bx.iter().enumerate().map(|(k, v)| as_f64(v, &format!("{op}/box/{k}"))).collect::<Result<_, _>>()?;
            let label = match om.get("label") {
                Some(l) => Some(as_str(l, &format!("{op}/label"))?.to_string()),
                None => None,
            };
            objects.push(SceneObject { id: j, feature, bbox: BoundingBox::new(c[0], c[1], c[2], c[3]), label });
        }
        let mut relations = Vec::new();
        for (j, r) in as_arr(field(m, "relations", &p)?, &format!("{p}/relations"))?.iter().enumerate() {
            let rp = format!("{p}/relations/{j}");
            let label = as_str(field(as_obj(r, &rp)?, "label", &rp)?, &format!("{rp}/label"))?;
            let label_id =
                *rel_index.get(label).ok_or_else(|| schema(format!("{rp}/label"), format!("{label:?} not in relation_vocab")))?;
            relations.push(SceneRelation { id: j, label_id });
        }
        let mut triplets = Vec::new();
        for (j, t) in as_arr(field(m, "triplets", &p)?, &format!("{p}/triplets"))?.iter().enumerate() {
            let tp = format!("{p}/triplets/{j}");
            let idx = as_arr(t, &tp)?;
            if idx.len() != 3 {
                return Err(schema(tp, "expected [subject, relation, object]"));
            }
            let v: Vec<usize> = idx.iter().enumerate().map(|(k, x)| as_usize(x, &format!("{tp}/{k}"))).collect::<Result<_, _>>()?;
            triplets.push(Triplet::new(v[0], v[1], v[2]));
        }
        let captions_val = as_arr(field(m, "captions", &p)?, &format!("{p}/captions"))?;
        if captions_val.is_empty() {
            return Err(schema(format!("{p}/captions"), "at least one caption required"));
        }
        let captions = captions_val
            .iter()
            .enumerate()
            .map(|(k, c)| strings(c, &format!("{p}/captions/{k}")))
            .collect::<Result<Vec<_>, _>>()?;
        let themes = match m.get("themes") {
            Some(t) => strings(t, &format!("{p}/themes"))?,
            None => Vec::new(),
        };
        let sg = SceneGraph { objects, relations, triplets, image_size };
        let violations = crate::scene_graph::validate_scene_graph(&sg, &GraphSchema { feature_dim: Some(feature_dim), relation_vocab: None });
        if let Some(v) = violations.first() {
            return Err(schema(p, v.to_string()));
        }
        examples.push(Example { scene_graph: sg, captions, themes });
    }
    Ok(Dataset { feature_dim, relation_vocab, examples })
}

/// Looks up the theme spec for `word` (used by reporting code).
pub fn theme_triggers<'a>(spec: &'a WorldSpec, word: &str) -> Option<&'a [FactPattern]> {
    spec.theme_of(word).map(|t| t.triggers.as_slice())
}
