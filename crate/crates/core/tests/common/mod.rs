//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use wic_contrast::encoder::{EncoderConfig, EncoderModel, Mode};
use wic_contrast::numeric::{gradient, Graph, Rng, Tensor};
use wic_contrast::repr::LayerSpec;
use wic_contrast::tokenizer::{TokenizedInstance, Vocab};
use wic_contrast::trainer::{apply_span_mask, batch_loss, TrainBatch, TrainConfig};

// ---- gradients ------------------------------------------------------------

pub struct FdOutcome {
    pub max_rel: f64,
    pub checked: usize,
    pub description: String,
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

/// Central differences against the analytic gradient for `loss` over a
/// spread of entries of every parameter tensor.
pub fn fd_compare<F>(params: &mut [Tensor<f64>], per_tensor: usize, loss: F) -> (f64, usize)
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    const H: f64 = 1e-4;
    let (_, grads) = loss(params);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for pi in 0..params.len() {
        let n = params[pi].len();
        let step = (n / per_tensor).max(1);
        for idx in (0..n).step_by(step).take(per_tensor) {
            let orig = params[pi].data()[idx];
            let mut at = |d: f64| {
                params[pi].data_mut()[idx] = orig + d;
                loss(params).0
            };
            // five-point stencil, truncation error O(h^4)
            let fd = (-at(2.0 * H) + 8.0 * at(H) - 8.0 * at(-H) + at(-2.0 * H)) / (12.0 * H);
            params[pi].data_mut()[idx] = orig;
            worst = worst.max(rel_err(fd, grads[pi].data()[idx]));
            checked += 1;
        }
    }
    (worst, checked)
}

const WORDS: [&str; 12] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"];

/// One random small encoder + contrastive batch, checked in f64.
pub fn infonce_fd_case(seed: u64) -> FdOutcome {
    let mut rng = Rng::new(seed);
    let vocab = Vocab::build(&[WORDS.join(" ")], 40, 1).unwrap();
    let layers = 1 + rng.below(2);
    let heads = 1 + rng.below(2);
    // width 2 makes layer norm output constant, leaving nothing to check
    let dim = heads * (4 + 2 * rng.below(2));
    let dropout = if rng.below(2) == 0 { 0.0 } else { 0.2 };
    let cfg = EncoderConfig {
        layers,
        heads,
        dim,
        ffn_dim: 4 + rng.below(8),
        dropout,
        vocab_size: vocab.len(),
        max_positions: 16,
    };
    let model = EncoderModel::<f64>::init(cfg.clone(), seed).unwrap();
    let mut params: Vec<Tensor<f64>> = model.params().to_vec();
    // move away from the near-linear regime of the small init
    for p in params.iter_mut() {
        for x in p.data_mut() {
            *x += 0.3 * (rng.uniform() - 0.5);
        }
    }
    let n_pairs = 2 + rng.below(2);
    let instances: Vec<TokenizedInstance> = (0..n_pairs)
        .map(|_| {
            let len = 3 + rng.below(5);
            let words: Vec<&str> = (0..len).map(|_| WORDS[rng.below(WORDS.len())]).collect();
            let t = rng.below(len);
            let text = words.join(" ");
            let start: usize = words[..t].iter().map(|w| w.len() + 1).sum();
            vocab.encode_with_target(&text, (start, start + words[t].len())).unwrap()
        })
        .collect();
    let refs: Vec<&TokenizedInstance> = instances.iter().collect();
    let k = rng.below(3);
    let batch = TrainBatch::new(&refs, k, &mut rng.derive(1)).unwrap();
    let tc = TrainConfig {
        tau: 0.1 + 0.9 * rng.uniform(),
        include_positive_in_denominator: rng.below(2) == 1,
        layer_spec: LayerSpec {
            n: 1 + rng.below(layers + 1),
            include_embedding: true,
            layer: None,
        },
        ..TrainConfig::default()
    };
    let loss = |ps: &[Tensor<f64>]| {
        let m = EncoderModel::from_params(cfg.clone(), ps.to_vec()).unwrap();
        // same dropout masks on every evaluation
        gradient(ps, |g: &mut Graph<f64>, vars| batch_loss(&m, g, vars, &batch, &tc, &mut Rng::new(seed ^ 7))).unwrap()
    };
    let (max_rel, checked) = fd_compare(&mut params, 5, loss);
    FdOutcome {
        max_rel,
        checked,
        description: format!(
            "L={layers} h={heads} d={dim} dropout={dropout} pairs={n_pairs} K={k} tau={:.2} n={} incl_pos={}",
            tc.tau, tc.layer_spec.n, tc.include_positive_in_denominator
        ),
    }
}

/// Masked-token cross-entropy through the encoder and tied head.
pub fn mlm_fd_case(seed: u64) -> FdOutcome {
    let vocab = Vocab::build(&[WORDS.join(" ")], 40, 1).unwrap();
    let cfg = EncoderConfig {
        layers: 2,
        heads: 2,
        dim: 8,
        ffn_dim: 12,
        dropout: 0.1,
        vocab_size: vocab.len(),
        max_positions: 12,
    };
    let model = EncoderModel::<f64>::init(cfg.clone(), seed).unwrap();
    let mut params: Vec<Tensor<f64>> = model.params().to_vec();
    let mut rng = Rng::new(seed);
    for p in params.iter_mut() {
        for x in p.data_mut() {
            *x += 0.3 * (rng.uniform() - 0.5);
        }
    }
    let loss = |ps: &[Tensor<f64>]| {
        let m = EncoderModel::from_params(cfg.clone(), ps.to_vec()).unwrap();
        gradient(ps, |g: &mut Graph<f64>, vars| {
            let ids: Vec<&[u32]> = vec![&[3, 5, 2, 7, 4], &[3, 2, 8, 9, 10, 4]];
            let fwd = m.forward(g, vars, &ids, Mode::Train, &mut Rng::new(1))?;
            let top = *fwd.layers.last().unwrap();
            let logits = m.mlm_logits(g, vars, top, &[2, 6])?;
            g.cross_entropy(logits, &[6, 11])
        })
        .unwrap()
    };
    let (max_rel, checked) = fd_compare(&mut params, 5, loss);
    FdOutcome {
        max_rel,
        checked,
        description: "mlm".into(),
    }
}

// ---- metrics --------------------------------------------------------------

/// Best accuracy over every threshold that splits the sorted scores
/// differently, found by trying each score and +inf as the cut.
pub fn exhaustive_best_accuracy(sims: &[f64], labels: &[bool]) -> f64 {
    let mut cuts: Vec<f64> = sims.to_vec();
    cuts.push(f64::INFINITY);
    cuts.iter()
        .map(|&t| {
            let correct = sims.iter().zip(labels).filter(|(&s, &l)| (s >= t) == l).count();
            correct as f64 / sims.len() as f64
        })
        .fold(0.0, f64::max)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties count half.
pub fn brute_auc(sims: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if sims[i] > sims[j] {
                    1.0
                } else if sims[i] == sims[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// `1 - 6 sum d^2 / (n (n^2 - 1))`, valid without ties.
pub fn rank_formula_spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |x: &[f64]| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap());
        let mut r = vec![0.0; x.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

// ---- isotropy --------------------------------------------------------------

/// Random orthogonal matrix by Gram-Schmidt on Gaussian-ish columns.
pub fn random_rotation(d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= dot * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

pub fn rotate(r: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    r.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn random_vectors(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let shift = rng.uniform();
    (0..n).map(|_| (0..d).map(|_| rng.uniform() * 2.0 - 1.0 + shift).collect()).collect()
}

// ---- masking ---------------------------------------------------------------

pub struct MaskStats {
    pub calls: usize,
    pub target_masked: usize,
    pub run_too_long: usize,
    pub identity_broken: usize,
    pub framing_touched: usize,
}

/// Longest run of `[MASK]` in `ids[range]`.
pub fn longest_mask_run(ids: &[u32]) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &id in ids {
        if id == Vocab::MASK_ID {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Randomized calls of the span masker on synthetic id sequences.
pub fn masking_trials(calls: usize, seed: u64) -> MaskStats {
    let mut rng = Rng::new(seed);
    let mut s = MaskStats {
        calls,
        target_masked: 0,
        run_too_long: 0,
        identity_broken: 0,
        framing_touched: 0,
    };
    for _ in 0..calls {
        let words = 1 + rng.below(20);
        let mut ids = vec![Vocab::CLS_ID];
        ids.extend((0..words).map(|_| 5 + rng.below(50) as u32));
        ids.push(Vocab::SEP_ID);
        let a = 1 + rng.below(words);
        let b = a + rng.below(words + 1 - a);
        let inst = TokenizedInstance {
            ids: ids.clone(),
            target: (a, b),
            text: String::new(),
            char_span: (0, 0),
        };
        let k = rng.below(8);
        let out = apply_span_mask(&inst, k, &mut rng);
        if out.ids[a..=b] != ids[a..=b] {
            s.target_masked += 1;
        }
        if out.ids[0] != Vocab::CLS_ID || *out.ids.last().unwrap() != Vocab::SEP_ID {
            s.framing_touched += 1;
        }
        if longest_mask_run(&out.ids[..a]) > k || longest_mask_run(&out.ids[b + 1..]) > k {
            s.run_too_long += 1;
        }
        if k == 0 && out.ids != ids {
            s.identity_broken += 1;
        }
    }
    s
}

/// Batches of random pairs; counts pairs where other than exactly one view
/// carries a mask.
pub fn batch_mask_violations(batches: usize, seed: u64) -> (usize, usize) {
    let mut rng = Rng::new(seed);
    let mut pairs = 0;
    let mut bad = 0;
    for _ in 0..batches {
        let n = 2 + rng.below(6);
        let k = 1 + rng.below(4);
        let insts: Vec<TokenizedInstance> = (0..n)
            .map(|_| {
                let words = 2 + rng.below(10);
                let mut ids = vec![Vocab::CLS_ID];
                ids.extend((0..words).map(|_| 5 + rng.below(50) as u32));
                ids.push(Vocab::SEP_ID);
                let a = 1 + rng.below(words);
                TokenizedInstance {
                    ids,
                    target: (a, a),
                    text: String::new(),
                    char_span: (0, 0),
                }
            })
            .collect();
        let refs: Vec<&TokenizedInstance> = insts.iter().collect();
        let batch = TrainBatch::new(&refs, k, &mut rng).unwrap();
        for p in 0..batch.num_pairs() {
            let has = |v: &TokenizedInstance| v.ids.contains(&Vocab::MASK_ID);
            let (x, xbar) = (&batch.views[2 * p], &batch.views[2 * p + 1]);
            let flags_ok = !batch.masked[2 * p] && batch.masked[2 * p + 1];
            if has(x) || !has(xbar) || !flags_ok || batch.positives[2 * p] != 2 * p + 1 {
                bad += 1;
            }
            pairs += 1;
        }
    }
    (pairs, bad)
}
