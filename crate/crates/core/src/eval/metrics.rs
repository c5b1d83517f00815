//! Threshold classification, AUC and rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub threshold: f64,
    pub accuracy: f64,
}

fn check_binary(sims: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if sims.len() != labels.len() {
        return Err(Error::shape("metric", format!("{} scores, {} labels", sims.len(), labels.len())));
    }
    if sims.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "metric" });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Fraction of instances where `sim >= threshold` agrees with the label.
pub fn binary_eval(sims: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_binary(sims, labels)?;
    if sims.is_empty() {
        return Err(Error::Data("no instances to evaluate".into()));
    }
    let hits = sims.iter().zip(labels).filter(|(&s, &l)| (s >= threshold) == l).count();
    Ok(hits as f64 / sims.len() as f64)
}

/// Candidate thresholds: `-inf`, midpoints between adjacent distinct values, `+inf`.
pub fn candidate_thresholds(sims: &[f64]) -> Vec<f64> {
    let mut v = sims.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(f64::NEG_INFINITY);
    for w in v.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // adjacent floats have no midpoint strictly above the lower one
        out.push(if mid > w[0] { mid } else { w[1] });
    }
    out.push(f64::INFINITY);
    out
}

/// Accuracy-maximising threshold; ties go to the smaller threshold.
pub fn threshold_search(sims: &[f64], labels: &[bool]) -> Result<Threshold> {
    let (pos, neg) = check_binary(sims, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("threshold search needs both labels".into()));
    }
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]));
    let n = sims.len();
    // threshold below everything: all predicted true
    let mut correct = pos;
    let mut best = Threshold {
        threshold: f64::NEG_INFINITY,
        accuracy: correct as f64 / n as f64,
    };
    let cands = candidate_thresholds(sims);
    let mut k = 0;
    for &thr in &cands[1..] {
        while k < n && sims[order[k]] < thr {
            if labels[order[k]] {
                correct -= 1;
            } else {
                correct += 1;
            }
            k += 1;
        }
        let acc = correct as f64 / n as f64;
        if acc > best.accuracy {
            best = Threshold { threshold: thr, accuracy: acc };
        }
    }
    Ok(best)
}

/// Average 1-based ranks, ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a positive outranks a negative, ties counting one half.
pub fn auc(sims: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(sims, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("AUC needs both labels".into()));
    }
    let ranks = average_ranks(sims);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::shape("spearman", format!("lengths {} and {} (need equal, >= 3)", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "spearman" });
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("correlation of a constant sequence".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
