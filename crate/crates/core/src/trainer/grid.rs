//! Exhaustive search over loss-weight candidates.

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Scores every `(w1, w2, w3, w4)` candidate with `score` (lower is better) and
/// returns the winner together with all scores in candidate order.
/// Winning weights and the score of every candidate.
pub type GridResult = (LossWeights, Vec<([f64; 4], f64)>);

pub fn grid_search_weights(
    base: &LossWeights,
    candidates: &[[f64; 4]],
    mut score: impl FnMut(&LossWeights) -> Result<f64>,
) -> Result<GridResult> {
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(LossWeights, f64)> = None;
    for &w in candidates {
        let weights = LossWeights {
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
            ..*base
        };
        weights.validate()?;
        let s = score(&weights)?;
        scores.push((w, s));
        if s.is_finite() && best.is_none_or(|(_, b)| s < b) {
            best = Some((weights, s));
        }
    }
    let (weights, _) = best.ok_or_else(|| Error::InvalidArgument("no candidate produced a finite score".into()))?;
    Ok((weights, scores))
}

/// Cartesian product of per-weight value lists.
pub fn weight_grid(values: [&[f64]; 4]) -> Vec<[f64; 4]> {
    let mut out = Vec::new();
    for &a in values[0] {
        for &b in values[1] {
            for &c in values[2] {
                for &d in values[3] {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_minimum() {
        let grid = weight_grid([&[0.1, 0.2], &[0.15], &[0.6], &[0.2, 0.3]]);
        assert_eq!(grid.len(), 4);
        let (w, scores) = grid_search_weights(&LossWeights::default(), &grid, |w| Ok((w.w1 - 0.2).abs() + w.w4)).unwrap();
        assert_eq!((w.w1, w.w4), (0.2, 0.2));
        assert_eq!(scores.len(), 4);
    }
}
