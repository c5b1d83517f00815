//! Isotropy score on hand-made point sets and on random clouds.

use wic_contrast::analysis::isotropy_score;
use wic_contrast::numeric::Rng;

fn main() -> wic_contrast::Result<()> {
    let sym = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    println!("symmetric cross: {}", isotropy_score(&sym)?);
    let skew = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    println!("two of three on one axis: {:.4}", isotropy_score(&skew)?);

    // a shared offset makes a cloud anisotropic
    let mut rng = Rng::new(1);
    for shift in [0.0, 0.5, 2.0, 8.0] {
        let cloud: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..16).map(|j| rng.uniform() - 0.5 + if j == 0 { shift } else { 0.0 }).collect())
            .collect();
        println!("offset {shift:>3}: IS {:.3}", isotropy_score(&cloud)?);
    }
    Ok(())
}
