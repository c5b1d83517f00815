//! Reverse-mode gradients of the contrastive loss against central differences.

use wic_contrast::numeric::{gradient, Rng, Tensor};
use wic_contrast::trainer::{adjacent_positives, contrastive_loss};

fn main() -> wic_contrast::Result<()> {
    let (n, d) = (6, 5);
    let mut rng = Rng::new(3);
    let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
    let pos = adjacent_positives(n);
    let loss = |t: &Tensor<f64>| -> wic_contrast::Result<(f64, Vec<Tensor<f64>>)> {
        gradient(std::slice::from_ref(t), |g, v| contrastive_loss(g, v[0], &pos, 0.1, false))
    };

    let (value, grads) = loss(&x)?;
    println!("loss {value:.6}");
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..n * d {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let up = loss(&p)?.0;
        p.data_mut()[i] -= 2.0 * h;
        let down = loss(&p)?.0;
        let fd = (up - down) / (2.0 * h);
        let an = grads[0].data()[i];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
    }
    println!("max relative error over {} coordinates: {worst:.2e}", n * d);
    Ok(())
}
