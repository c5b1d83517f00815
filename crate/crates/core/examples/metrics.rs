//! Threshold search, ROC AUC and Spearman on small inputs.

use wic_contrast::eval::{auc, binary_eval, spearman, threshold_search};

fn main() -> wic_contrast::Result<()> {
    let sims = [0.91, 0.75, 0.75, 0.62, 0.40, 0.33, 0.10];
    let labels = [true, true, false, true, false, false, false];
    let t = threshold_search(&sims, &labels)?;
    println!("threshold {:.3} -> dev accuracy {:.3}", t.threshold, t.accuracy);
    println!("applied to new scores: {:.3}", binary_eval(&[0.8, 0.5, 0.2], &[true, true, false], t.threshold)?);
    // the tie at 0.75 counts one half
    println!("auc {:.4}", auc(&sims, &labels)?);

    let gold = [4.5, 1.0, 3.2, 2.2, 5.0];
    let pred = [0.8, 0.1, 0.5, 0.6, 0.9];
    println!("spearman {:.4}", spearman(&gold, &pred)?);
    Ok(())
}
