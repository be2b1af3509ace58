//! Attention-based closeness between theme nodes and the objects or words they attend with.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, Scalar};
use crate::scene_graph::SceneGraph;
use crate::ttn::{EncoderOutput, Model, TtnError};
use crate::vocab::Vocab;

pub const DEFAULT_POOL: usize = 20;
pub const DEFAULT_PICK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Object,
    Word,
}

/// Per theme node, how often each label ranked the node in its top 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessTable {
    pub kind: ItemKind,
    pub num_themes: usize,
    /// `counts[label][node]`.
    pub counts: BTreeMap<String, Vec<u64>>,
    pub items: u64,
}

impl ClosenessTable {
    pub fn new(kind: ItemKind, num_themes: usize) -> Self {
        ClosenessTable { kind, num_themes, counts: BTreeMap::new(), items: 0 }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flatten().sum()
    }

    pub fn count(&self, node: usize, label: &str) -> u64 {
        self.counts.get(label).map_or(0, |c| c[node])
    }

    /// Adds another table's counts.
    pub fn merge(&mut self, other: &ClosenessTable) {
        for (label, row) in &other.counts {
            let mine = self.counts.entry(label.clone()).or_insert_with(|| vec![0; self.num_themes]);
            mine.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        self.items += other.items;
    }

    /// Fraction of the labels' combined mass held by the two nodes that hold most of it.
    pub fn top2_share<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> f64 {
        let mut per_node = vec![0u64; self.num_themes];
        for l in labels {
            if let Some(row) = self.counts.get(l) {
                per_node.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        let total: u64 = per_node.iter().sum();
        if total == 0 {
            return 0.0;
        }
        per_node.sort_unstable_by(|a, b| b.cmp(a));
        per_node.iter().take(2).sum::<u64>() as f64 / total as f64
    }
}

/// Indices of the two largest scores; ties go to the lower index.
fn top2(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(2);
    idx
}

/// For each item row of `scores` (item x theme), adds 1 to its label under each of its top-2 themes.
pub fn accumulate_closeness(table: &mut ClosenessTable, scores: &[Vec<f64>], labels: &[String]) {
    assert_eq!(scores.len(), labels.len(), "one label per score row");
    for (row, label) in scores.iter().zip(labels) {
        assert_eq!(row.len(), table.num_themes, "score row width must equal the theme count");
        let entry = table.counts.entry(label.clone()).or_insert_with(|| vec![0; table.num_themes]);
        for node in top2(row) {
            entry[node] += 1;
        }
        table.items += 1;
    }
}

/// Per node, the `pick` most counted labels among its `pool` most counted, count descending.
pub fn top_related(table: &ClosenessTable, pool: usize, pick: usize) -> Vec<Vec<(String, u64)>> {
    (0..table.num_themes)
        .map(|node| {
            let mut ranked: Vec<(String, u64)> = table
                .counts
                .iter()
                .filter(|(_, c)| c[node] > 0)
                .map(|(l, c)| (l.clone(), c[node]))
                .collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            ranked.truncate(pool.min(pick));
            ranked
        })
        .collect()
}

/// Which encoder layer and how heads are reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    /// `None` means the last layer.
    pub layer: Option<usize>,
    /// `None` means the mean over heads.
    pub head: Option<usize>,
}

impl Default for Probe {
    fn default() -> Self {
        Probe { layer: None, head: None }
    }
}

/// `rows x theme` attention weights from the encoder rows `start..start+len` to the theme rows.
pub fn item_to_theme<F: Scalar>(g: &Graph<F>, enc: &EncoderOutput, start: usize, len: usize, probe: Probe) -> Vec<Vec<f64>> {
    let layer = probe.layer.unwrap_or(enc.attention.len() - 1);
    let heads: Vec<_> = match probe.head {
        Some(h) => vec![enc.attention[layer][h]],
        None => enc.attention[layer].clone(),
    };
    let n = enc.rows();
    let t = enc.num_themes;
    (start..start + len)
        .map(|i| {
            (0..t)
                .map(|j| {
                    heads.iter().map(|&h| g.value(h).data()[i * n + j].to_f64().unwrap_or(0.0)).sum::<f64>()
                        / heads.len() as f64
                })
                .collect()
        })
        .collect()
}

/// Closeness tables over objects (image view) and words (caption view).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub objects: ClosenessTable,
    pub words: ClosenessTable,
}

impl Interpretation {
    pub fn new(num_themes: usize) -> Self {
        Interpretation {
            objects: ClosenessTable::new(ItemKind::Object, num_themes),
            words: ClosenessTable::new(ItemKind::Word, num_themes),
        }
    }

    /// One report row per theme node.
    pub fn report(&self, pool: usize, pick: usize) -> Vec<NodeReport> {
        let objects = top_related(&self.objects, pool, pick);
        let words = top_related(&self.words, pool, pick);
        objects
            .into_iter()
            .zip(words)
            .enumerate()
            .map(|(i, (o, w))| NodeReport {
                theme_node: i,
                objects: o.into_iter().map(|(l, _)| l).collect(),
                words: w.into_iter().map(|(l, _)| l).collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub theme_node: usize,
    pub objects: Vec<String>,
    pub words: Vec<String>,
}

/// Runs both encoder views over each example and accumulates closeness counts.
///
/// Objects without a label are skipped. Special tokens are skipped on the word side.
pub fn interpret<'a, F: Scalar>(
    model: &Model<F>,
    vocab: &Vocab,
    examples: impl IntoIterator<Item = (&'a SceneGraph, &'a [usize])>,
    probe: Probe,
) -> Result<Interpretation, TtnError> {
    let t = model.config.num_theme_nodes;
    let mut out = Interpretation::new(t);
    if t == 0 {
        return Ok(out);
    }
    for (sg, tokens) in examples {
        let mut g = Graph::new();
        let net = model.bind(&mut g, false);
        let enc = net.encode_image(&mut g, sg)?;
        let scores = item_to_theme(&g, &enc, t, enc.num_objects, probe);
        let (rows, labels): (Vec<_>, Vec<_>) = scores
            .into_iter()
            .zip(&sg.objects)
            .filter_map(|(s, o)| o.label.clone().map(|l| (s, l)))
            .unzip();
        accumulate_closeness(&mut out.objects, &rows, &labels);

        let enc = net.encode_caption(&mut g, tokens)?;
        let scores = item_to_theme(&g, &enc, t, enc.num_tokens, probe);
        let (rows, labels): (Vec<_>, Vec<_>) = scores
            .into_iter()
            .zip(tokens)
            .filter(|(_, &tok)| !Vocab::is_special(tok))
            .map(|(s, &tok)| (s, vocab.word(tok).to_string()))
            .unzip();
        accumulate_closeness(&mut out.words, &rows, &labels);
    }
    Ok(out)
}
