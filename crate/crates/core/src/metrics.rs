//! Caption metrics over pre-tokenized sentences: corpus BLEU-1..4, ROUGE-L and CIDEr-D.
//!
//! Metrics never re-tokenize; callers pass the dataset's lowercased tokens.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub type Sentence = Vec<String>;
type NGram = Vec<String>;

const ROUGE_BETA: f64 = 1.2;
const CIDER_SIGMA: f64 = 6.0;
const CIDER_MAX_N: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{candidates} candidates but {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("candidate {0} has no references")]
    NoReferences(usize),
}

fn check_inputs(candidates: usize, references: &[Vec<Sentence>]) -> Result<(), MetricError> {
    if candidates != references.len() {
        return Err(MetricError::LengthMismatch { candidates, references: references.len() });
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(MetricError::NoReferences(i));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<NGram, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.to_vec()).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-1..`max_n` with modified precision and brevity penalty
/// (closest reference length, ties to the shorter). No smoothing: any zero
/// precision up to order `n` makes BLEU-n exactly 0.
pub fn bleu(candidates: &[Sentence], references: &[Vec<Sentence>], max_n: usize) -> Result<Vec<f64>, MetricError> {
    check_inputs(candidates.len(), references)?;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("checked non-empty");
        for n in 1..=max_n {
            let counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<&NGram, usize> = HashMap::new();
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for rc in &ref_counts {
                for (g, &c) in rc {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, &c) in &counts {
                matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            zero = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        scores.push(if zero { 0.0 } else { bp * (log_sum / (n + 1) as f64).exp() });
    }
    Ok(scores)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure (β = 1.2), maximized over references.
pub fn rouge_l(candidate: &[String], references: &[Sentence]) -> f64 {
    references
        .iter()
        .map(|r| {
            let l = lcs_len(candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / candidate.len() as f64;
            let rec = l / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Document frequencies of 1..4-grams over per-image reference sets.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    doc_freq: HashMap<NGram, f64>,
    num_docs: usize,
}

impl CorpusStats {
    pub fn from_references(references: &[Vec<Sentence>]) -> Self {
        let mut doc_freq: HashMap<NGram, f64> = HashMap::new();
        for refs in references {
            let mut seen: HashSet<NGram> = HashSet::new();
            for r in refs {
                for n in 1..=CIDER_MAX_N {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *doc_freq.entry(g).or_insert(0.0) += 1.0;
            }
        }
        CorpusStats { doc_freq, num_docs: references.len() }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn doc_freq(&self, ngram: &[String]) -> f64 {
        self.doc_freq.get(ngram).copied().unwrap_or(0.0)
    }
}

struct TfIdf {
    vecs: Vec<HashMap<NGram, f64>>,
    norms: Vec<f64>,
    length: usize,
}

impl CorpusStats {
    fn tfidf(&self, sentence: &[String]) -> TfIdf {
        let log_docs = (self.num_docs.max(1) as f64).ln();
        let mut vecs = Vec::with_capacity(CIDER_MAX_N);
        let mut norms = Vec::with_capacity(CIDER_MAX_N);
        for n in 1..=CIDER_MAX_N {
            let mut v = HashMap::new();
            let mut norm = 0.0;
            for (g, tf) in ngram_counts(sentence, n) {
                let df = self.doc_freq(&g).max(1.0).ln();
                let w = tf as f64 * (log_docs - df);
                norm += w * w;
                v.insert(g, w);
            }
            vecs.push(v);
            norms.push(norm.sqrt());
        }
        // Length as counted by the reference toolkit: number of bigrams.
        TfIdf { vecs, norms, length: sentence.len().saturating_sub(1) }
    }
}

fn cider_sim(hyp: &TfIdf, reference: &TfIdf) -> f64 {
    let delta = hyp.length as f64 - reference.length as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mut val = 0.0;
        for (g, &h) in &hyp.vecs[n] {
            if let Some(&r) = reference.vecs[n].get(g) {
                val += h.min(r) * r;
            }
        }
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            val /= hyp.norms[n] * reference.norms[n];
        }
        total += val * penalty;
    }
    total / CIDER_MAX_N as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiderScores {
    pub per_candidate: Vec<f64>,
    pub mean: f64,
}

/// CIDEr-D: clipped TF-IDF n-gram cosine with a Gaussian length penalty,
/// averaged over n = 1..4 and references, scaled by 10.
pub fn cider_d(candidates: &[Sentence], references: &[Vec<Sentence>], stats: &CorpusStats) -> Result<CiderScores, MetricError> {
    check_inputs(candidates.len(), references)?;
    if stats.num_docs() <= 1 {
        log::warn!("CIDEr-D over a corpus of {} image(s): every idf is 0", stats.num_docs());
    }
    let per_candidate: Vec<f64> = candidates
        .iter()
        .zip(references)
        .map(|(cand, refs)| cider_single(cand, refs, stats))
        .collect();
    let mean = if per_candidate.is_empty() { 0.0 } else { per_candidate.iter().sum::<f64>() / per_candidate.len() as f64 };
    Ok(CiderScores { per_candidate, mean })
}

/// CIDEr-D of one candidate against its references.
pub fn cider_single(candidate: &[String], references: &[Sentence], stats: &CorpusStats) -> f64 {
    if references.is_empty() {
        return 0.0;
    }
    let hyp = stats.tfidf(candidate);
    let sum: f64 = references.iter().map(|r| cider_sim(&hyp, &stats.tfidf(r))).sum();
    10.0 * sum / references.len() as f64
}

/// Evaluation summary as written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider_d: f64,
    pub n: usize,
    pub meteor: String,
    pub spice: String,
}

pub fn evaluate(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<EvalReport, MetricError> {
    let b = bleu(candidates, references, 4)?;
    let stats = CorpusStats::from_references(references);
    let cider = cider_d(candidates, references, &stats)?;
    let rouge = if candidates.is_empty() {
        0.0
    } else {
        candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / candidates.len() as f64
    };
    Ok(EvalReport {
        bleu: [b[0], b[1], b[2], b[3]],
        rouge_l: rouge,
        cider_d: cider.mean,
        n: candidates.len(),
        meteor: "not implemented".into(),
        spice: "not implemented".into(),
    })
}
