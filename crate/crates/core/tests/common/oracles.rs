//! Brute-force metric references built from the textbook definitions.
//! N-grams are keyed by space-joined strings and counted with sorted maps.

use std::collections::{BTreeMap, BTreeSet};

use super::Sentence;

fn grams(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for start in 0..=tokens.len() - n {
            *out.entry(tokens[start..start + n].join(" ")).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-1..=max_n. Brevity uses the closest reference length with
/// ties to the shorter one; no smoothing.
pub fn bleu(candidates: &[Sentence], references: &[Vec<Sentence>], max_n: usize) -> Vec<f64> {
    let mut clipped = vec![0f64; max_n + 1];
    let mut counted = vec![0f64; max_n + 1];
    let mut c = 0f64;
    let mut r = 0f64;
    for (cand, refs) in candidates.iter().zip(references) {
        c += cand.len() as f64;
        let mut best: Option<usize> = None;
        for len in refs.iter().map(|x| x.len()) {
            let d = |l: usize| (l as i64 - cand.len() as i64).abs();
            best = match best {
                Some(b) if d(b) < d(len) || (d(b) == d(len) && b <= len) => Some(b),
                _ => Some(len),
            };
        }
        r += best.unwrap() as f64;
        for n in 1..=max_n {
            for (g, count) in grams(cand, n) {
                let allowed = refs.iter().map(|x| grams(x, n).get(&g).copied().unwrap_or(0)).max().unwrap_or(0);
                clipped[n] += count.min(allowed) as f64;
                counted[n] += count as f64;
            }
        }
    }
    let bp = if c == 0.0 { 0.0 } else if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (1..=max_n)
        .map(|n| {
            let precisions: Vec<f64> = (1..=n).map(|k| if counted[k] == 0.0 { 0.0 } else { clipped[k] / counted[k] }).collect();
            if precisions.iter().any(|&p| p == 0.0) {
                0.0
            } else {
                bp * precisions.iter().product::<f64>().powf(1.0 / n as f64)
            }
        })
        .collect()
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|w| it.any(|h| h == *w))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 20, "brute force LCS is exponential");
    let mut best = 0;
    for bits in 0u32..(1 << a.len()) {
        let k = bits.count_ones() as usize;
        if k <= best {
            continue;
        }
        let pick: Vec<&String> = (0..a.len()).filter(|i| bits >> i & 1 == 1).map(|i| &a[i]).collect();
        if is_subsequence(&pick, b) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(candidate: &[String], references: &[Sentence]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut best = 0.0f64;
    for reference in references {
        let l = lcs(candidate, reference) as f64;
        if l > 0.0 {
            let p = l / candidate.len() as f64;
            let r = l / reference.len() as f64;
            best = best.max((1.0 + beta2) * p * r / (r + beta2 * p));
        }
    }
    best
}

/// CIDEr-D per candidate. Document frequency counts images whose reference
/// set contains the n-gram; weights are `tf * (ln N - ln max(1, df))`.
pub fn cider_d(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Vec<f64> {
    let num_images = references.len() as f64;
    let mut df: BTreeMap<String, f64> = BTreeMap::new();
    for refs in references {
        let mut present = BTreeSet::new();
        for reference in refs {
            for n in 1..=4 {
                present.extend(grams(reference, n).into_keys());
            }
        }
        for g in present {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let weights = |tokens: &[String], n: usize| -> BTreeMap<String, f64> {
        grams(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                let w = tf as f64 * (num_images.max(1.0).ln() - d.ln());
                (g, w)
            })
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    candidates
        .iter()
        .zip(references)
        .map(|(cand, refs)| {
            let mut total = 0.0;
            for reference in refs {
                // Lengths are compared in bigram counts.
                let delta = cand.len().saturating_sub(1) as f64 - reference.len().saturating_sub(1) as f64;
                let gauss = (-delta * delta / 72.0).exp();
                let mut per_n = 0.0;
                for n in 1..=4 {
                    let (h, r) = (weights(cand, n), weights(reference, n));
                    let mut dot = 0.0;
                    for (g, hv) in &h {
                        if let Some(rv) = r.get(g) {
                            dot += hv.min(*rv) * rv;
                        }
                    }
                    let (nh, nr) = (norm(&h), norm(&r));
                    if nh > 0.0 && nr > 0.0 {
                        dot /= nh * nr;
                    }
                    per_n += dot * gauss;
                }
                total += per_n / 4.0;
            }
            10.0 * total / refs.len() as f64
        })
        .collect()
}
