//! AdamW on a quadratic bowl, with and without decoupled weight decay.

use wic_contrast::numeric::{gradient, Tensor};
use wic_contrast::trainer::AdamW;

fn run(weight_decay: f64) -> wic_contrast::Result<Vec<f32>> {
    let target = Tensor::new(vec![3], vec![3.0f32, -1.0, 0.5])?;
    let mut params = vec![Tensor::zeros(&[3])];
    let mut opt = AdamW::new(&params, weight_decay);
    for _ in 0..2000 {
        let (_, grads) = gradient(&params, |g, v| {
            let t = g.constant(target.clone());
            let neg = g.scale(t, -1.0)?;
            let diff = g.add(v[0], neg)?;
            let sq = g.mul(diff, diff)?;
            g.sum(sq)
        })?;
        let grads: Vec<Option<Tensor>> = grads.into_iter().map(Some).collect();
        opt.step(&mut params, &grads, 1e-2)?;
    }
    Ok(params[0].data().to_vec())
}

fn main() -> wic_contrast::Result<()> {
    println!("no decay:   {:?}", run(0.0)?);
    // decay pulls the solution toward zero
    println!("decay 0.5:  {:?}", run(0.5)?);
    Ok(())
}
