//! The contrastive objective over a batch of paired views.

use crate::error::{Error, Result};
use crate::numeric::{Graph, Scalar, Var};
use crate::repr::cosine;

/// Positive index for every view when pairs sit next to each other.
pub fn adjacent_positives(n: usize) -> Vec<usize> {
    (0..n).map(|i| i ^ 1).collect()
}

/// Summed InfoNCE over all anchors, computed directly from cosines.
///
/// Per anchor `i` with positive `p`: `-log(exp(cos(i,p)/tau) / sum_j exp(cos(i,j)/tau))`
/// where `j` runs over every other view except `p`, unless `include_positive`.
pub fn infonce_loss<T: Scalar>(embeddings: &[Vec<T>], positives: &[usize], tau: f64, include_positive: bool) -> Result<f64> {
    let n = embeddings.len();
    if n < 4 || positives.len() != n {
        return Err(Error::shape("infonce_loss", format!("{n} views, {} positives", positives.len())));
    }
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sims[i * n + j] = cosine(&embeddings[i], &embeddings[j])?;
        }
    }
    infonce_from_similarities(&sims, positives, tau, include_positive)
}

/// As [`infonce_loss`] given a row-major `n x n` similarity matrix.
pub fn infonce_from_similarities(sims: &[f64], positives: &[usize], tau: f64, include_positive: bool) -> Result<f64> {
    let n = positives.len();
    if sims.len() != n * n {
        return Err(Error::shape("infonce_loss", "similarity matrix is not n x n"));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let p = positives[i];
        if p >= n || p == i {
            return Err(Error::shape("infonce_loss", format!("anchor {i} has positive {p}")));
        }
        let logits: Vec<f64> = (0..n)
            .filter(|&j| j != i && (j != p || include_positive))
            .map(|j| sims[i * n + j] / tau)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - sims[i * n + p] / tau;
    }
    Ok(total)
}

/// Graph form: cosine similarities of the feature rows fed to the contrastive node.
pub fn contrastive_loss<T: Scalar>(
    g: &mut Graph<T>,
    features: Var,
    positives: &[usize],
    tau: f64,
    include_positive: bool,
) -> Result<Var> {
    let z = g.normalize_rows(features)?;
    let sims = g.matmul_t(z, z, true)?;
    g.contrastive(sims, positives, tau, include_positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    #[test]
    fn hand_example() {
        // two pairs, positives identical, pairs orthogonal
        let e = vec![vec![1.0f64, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let l = infonce_loss(&e, &adjacent_positives(4), 1.0, false).unwrap();
        assert!((l - 4.0 * (2f64.ln() - 1.0)).abs() < 1e-12);
        assert!((l + 1.22741).abs() < 1e-4);
    }

    #[test]
    fn equal_similarities_give_log_count() {
        for (p, s, tau) in [(2usize, 0.3, 0.04), (3, -0.5, 1.0), (5, 0.9, 0.2)] {
            let n = 2 * p;
            let sims: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { s }).collect();
            let l = infonce_from_similarities(&sims, &adjacent_positives(n), tau, false).unwrap();
            let expected = n as f64 * ((n - 2) as f64).ln();
            assert!((l - expected).abs() < 1e-9, "{l} vs {expected}");
        }
    }

    #[test]
    fn monotone_in_positive_similarity() {
        let n = 4;
        let mut sims = vec![0.2; n * n];
        let base = infonce_from_similarities(&sims, &adjacent_positives(n), 0.1, false).unwrap();
        sims[1] = 0.5;
        let raised = infonce_from_similarities(&sims, &adjacent_positives(n), 0.1, false).unwrap();
        assert!(raised < base);
    }

    #[test]
    fn graph_matches_direct() {
        let data = vec![0.3, -0.2, 0.9, 0.1, 0.4, 0.7, -0.5, 0.2, 0.8, 0.6, 0.1, -0.3, 0.2, 0.2, -0.9, 0.5, 0.3, 0.3];
        let rows: Vec<Vec<f64>> = data.chunks(3).map(|c| c.to_vec()).collect();
        let pos = adjacent_positives(6);
        for include in [false, true] {
            let direct = infonce_loss(&rows, &pos, 0.04, include).unwrap();
            let mut g = Graph::<f64>::new();
            let x = g.param(Tensor::matrix(6, 3, data.clone()).unwrap());
            let l = contrastive_loss(&mut g, x, &pos, 0.04, include).unwrap();
            assert!((g.scalar(l) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_batch_is_finite() {
        let e = vec![vec![1.0f64, 1.0]; 6];
        let l = infonce_loss(&e, &adjacent_positives(6), 0.04, false).unwrap();
        assert!((l - 6.0 * 4f64.ln()).abs() < 1e-9);
        assert!(infonce_loss(&[vec![0.0f64, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]], &adjacent_positives(4), 1.0, false).is_err());
    }
}
