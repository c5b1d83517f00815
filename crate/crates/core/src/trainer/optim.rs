//! AdamW with decoupled weight decay and a linear learning-rate schedule.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &[Tensor], weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("adamw", "parameter and gradient counts differ"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.shape() != p.shape() {
                return Err(Error::shape("adamw", format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adamw" });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gr), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gr = gr as f64;
                let mm = self.beta1 * *m as f64 + (1.0 - self.beta1) * gr;
                let vv = self.beta2 * *v as f64 + (1.0 - self.beta2) * gr * gr;
                *m = mm as f32;
                *v = vv as f32;
                let mut x = *w as f64;
                x -= lr * self.weight_decay * x;
                x -= lr * (mm / c1) / ((vv / c2).sqrt() + self.eps);
                *w = x as f32;
            }
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at `total`.
pub fn linear_schedule(peak: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let remaining = total.saturating_sub(step) as f64;
    let span = total.saturating_sub(warmup).max(1) as f64;
    peak * (remaining / span).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first step is lr * sign(g)
        let mut p = vec![Tensor::vector(vec![1.0f32, -2.0])];
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[Some(Tensor::vector(vec![0.5, -3.0]))], 0.1).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![Tensor::vector(vec![2.0f32])];
        let mut opt = AdamW::new(&p, 0.5);
        opt.step(&mut p, &[Some(Tensor::vector(vec![0.0]))], 0.1).unwrap();
        assert!((p[0].data()[0] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Tensor::vector(vec![3.0f32, -4.0])];
        let mut opt = AdamW::new(&p, 0.0);
        for _ in 0..2000 {
            let g = p[0].map(|x| 2.0 * x);
            opt.step(&mut p, &[Some(g)], 0.01).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(linear_schedule(1.0, 0, 0, 10), 1.0);
        assert_eq!(linear_schedule(1.0, 5, 0, 10), 0.5);
        assert_eq!(linear_schedule(1.0, 0, 4, 12), 0.25);
        assert_eq!(linear_schedule(1.0, 3, 4, 12), 1.0);
        assert_eq!(linear_schedule(1.0, 12, 4, 12), 0.0);
    }
}
