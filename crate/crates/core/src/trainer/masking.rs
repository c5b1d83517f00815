//! Target-preserving random span masking.

use std::ops::Range;

use crate::numeric::Rng;
use crate::tokenizer::{TokenizedInstance, Vocab};

/// Start positions of the masked span on each side of the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanPlacement {
    pub left: Option<usize>,
    pub right: Option<usize>,
}

/// Valid start positions for the left and right spans of length
/// `min(k, side length)` inside `region`, the target `(a, b)` excluded.
/// A side with nothing to mask yields an empty range.
pub fn span_starts(region: Range<usize>, (a, b): (usize, usize), k: usize) -> (Range<usize>, Range<usize>) {
    let left_len = a.saturating_sub(region.start).min(k);
    let right_len = region.end.saturating_sub(b + 1).min(k);
    let left = if left_len == 0 { 0..0 } else { region.start..a - left_len + 1 };
    let right = if right_len == 0 { 0..0 } else { b + 1..region.end - right_len + 1 };
    (left, right)
}

/// Draw a placement uniformly over the valid starts of each side.
pub fn sample_placement(region: Range<usize>, target: (usize, usize), k: usize, rng: &mut Rng) -> SpanPlacement {
    let (left, right) = span_starts(region, target, k);
    let mut pick = |r: Range<usize>| (!r.is_empty()).then(|| r.start + rng.below(r.len()));
    let left = pick(left);
    let right = pick(right);
    SpanPlacement { left, right }
}

/// Overwrite the spans chosen by `placement` with `[MASK]`.
///
/// # Panics
/// If a start lies outside the ranges given by [`span_starts`].
pub fn mask_with_placement(
    ids: &mut [u32],
    region: Range<usize>,
    target: (usize, usize),
    k: usize,
    placement: SpanPlacement,
) {
    let (left, right) = span_starts(region.clone(), target, k);
    for (start, valid, side_len) in [
        (placement.left, left, target.0.saturating_sub(region.start)),
        (placement.right, right, region.end.saturating_sub(target.1 + 1)),
    ] {
        if let Some(s) = start {
            assert!(valid.contains(&s), "span start {s} outside {valid:?}");
            for id in &mut ids[s..s + k.min(side_len)] {
                *id = Vocab::MASK_ID;
            }
        }
    }
}

/// Mask up to `k` tokens on each side of the target. `[CLS]`, `[SEP]` and the
/// target itself are never touched; `k = 0` is the identity.
pub fn apply_span_mask(instance: &TokenizedInstance, k: usize, rng: &mut Rng) -> TokenizedInstance {
    let mut out = instance.clone();
    if k == 0 {
        return out;
    }
    let region = 1..instance.ids.len() - 1;
    let placement = sample_placement(region.clone(), instance.target, k, rng);
    mask_with_placement(&mut out.ids, region, instance.target, k, placement);
    out
}
