use super::{check_pair, LossResult};
use crate::error::Result;
use crate::volume::{BinaryMask, ProbVolume};

/// `p_t` is clamped to `[FOCAL_CLAMP, 1 - FOCAL_CLAMP]` before the log.
pub const FOCAL_CLAMP: f64 = 1e-7;

/// Voxel mean of `-lambda_c (1 - p_t)^gamma ln(p_t)`, where `p_t = p` on the
/// foreground and `1 - p` on the background, and `lambda_t = [bg, fg]`.
///
/// The gradient is zero wherever the clamp is active.
pub fn focal_loss(
    p: &ProbVolume,
    g: &BinaryMask,
    gamma: f64,
    lambda_t: [f64; 2],
) -> Result<LossResult> {
    check_pair(p, g)?;
    Ok(focal_slices(p.data(), g.data(), gamma, lambda_t))
}

pub(super) fn focal_slices(p: &[f64], g: &[u8], gamma: f64, lambda_t: [f64; 2]) -> LossResult {
    let n = p.len() as f64;
    let mut total = 0.0;
    let gradient = p
        .iter()
        .zip(g)
        .map(|(&pv, &gv)| {
            let fg = gv == 1;
            let lambda = lambda_t[usize::from(gv)];
            let raw = if fg { pv } else { 1.0 - pv };
            let pt = raw.clamp(FOCAL_CLAMP, 1.0 - FOCAL_CLAMP);
            let q = 1.0 - pt;
            let log_pt = pt.ln();
            total += -lambda * q.powf(gamma) * log_pt;
            if raw != pt {
                return 0.0;
            }
            // d/dpt of -(1 - pt)^gamma ln(pt)
            let modulating = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * log_pt
            };
            let d_pt = lambda * (modulating - q.powf(gamma) / pt);
            let sign = if fg { 1.0 } else { -1.0 };
            sign * d_pt / n
        })
        .collect();
    LossResult::new(total / n, gradient)
}
