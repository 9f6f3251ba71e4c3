use super::{check_pair, LossResult};
use crate::error::Result;
use crate::volume::{BinaryMask, ProbVolume};

/// Soft Dice loss `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`.
pub fn dice_loss(p: &ProbVolume, g: &BinaryMask, eps: f64) -> Result<LossResult> {
    check_pair(p, g)?;
    Ok(dice_slices(p.data(), g.data(), eps))
}

pub(super) fn dice_slices(p: &[f64], g: &[u8], eps: f64) -> LossResult {
    let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&pv, &gv) in p.iter().zip(g) {
        let gv = f64::from(gv);
        inter += pv * gv;
        sum_p += pv;
        sum_g += gv;
    }
    let num = 2.0 * inter + eps;
    let den = sum_p + sum_g + eps;
    let den2 = den * den;
    let gradient = g
        .iter()
        .map(|&gv| -(2.0 * f64::from(gv) * den - num) / den2)
        .collect();
    LossResult::new(1.0 - num / den, gradient)
}

/// Soft Tversky loss with false-positive weight `alpha` and false-negative
/// weight `beta`:
///
/// `1 - (TP + eps/2) / (TP + alpha FP + beta FN + eps/2)`
///
/// Halving the smoothing keeps `alpha = beta = 0.5` identical to
/// [`dice_loss`] at the same `eps`.
pub fn tversky_loss(
    p: &ProbVolume,
    g: &BinaryMask,
    alpha: f64,
    beta: f64,
    eps: f64,
) -> Result<LossResult> {
    check_pair(p, g)?;
    Ok(tversky_slices(p.data(), g.data(), alpha, beta, eps))
}

pub(super) fn tversky_slices(p: &[f64], g: &[u8], alpha: f64, beta: f64, eps: f64) -> LossResult {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&pv, &gv) in p.iter().zip(g) {
        let gv = f64::from(gv);
        tp += pv * gv;
        fp += pv * (1.0 - gv);
        fn_ += (1.0 - pv) * gv;
    }
    let smooth = 0.5 * eps;
    let num = tp + smooth;
    let den = tp + alpha * fp + beta * fn_ + smooth;
    let den2 = den * den;
    let gradient = g
        .iter()
        .map(|&gv| {
            let gv = f64::from(gv);
            // d(num)/dp = g, d(den)/dp = g + alpha (1 - g) - beta g
            let d_den = gv + alpha * (1.0 - gv) - beta * gv;
            -(gv * den - num * d_den) / den2
        })
        .collect();
    LossResult::new(1.0 - num / den, gradient)
}
