//! The contrastive loss on hand-checkable batches.

use wic_contrast::trainer::{adjacent_positives, infonce_from_similarities, infonce_loss};

fn main() -> wic_contrast::Result<()> {
    // two pairs: each view identical to its positive, pairs orthogonal
    let views = vec![vec![1.0f64, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let pos = adjacent_positives(4);
    let l = infonce_loss(&views, &pos, 1.0, false)?;
    println!("hand batch: {l:.5} (4 * (ln 2 - 1) = {:.5})", 4.0 * (2f64.ln() - 1.0));
    let with_pos = infonce_loss(&views, &pos, 1.0, true)?;
    println!("positive in denominator: {with_pos:.5}");

    // all off-diagonal similarities equal: each anchor pays log(2P - 2)
    for p in [2usize, 4, 8] {
        let n = 2 * p;
        let sims: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.3 }).collect();
        let l = infonce_from_similarities(&sims, &adjacent_positives(n), 0.05, false)?;
        println!("P={p}: per anchor {:.6}, log(2P-2) = {:.6}", l / n as f64, ((n - 2) as f64).ln());
    }

    for tau in [1.0, 0.3, 0.05] {
        let views = vec![vec![1.0f64, 0.2], vec![0.9, 0.3], vec![0.1, 1.0], vec![0.3, 0.8]];
        println!("tau {tau}: {:.4}", infonce_loss(&views, &pos, tau, false)?);
    }
    Ok(())
}
