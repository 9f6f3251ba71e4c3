use super::{check_pair, LossResult};
use crate::edt::signed_edt;
use crate::error::{Error, Result};
use crate::metrics::{extract_surface, surface_distances};
use crate::volume::{BinaryMask, Geometry, ProbVolume};

/// Binarization threshold for the prediction's distance field.
pub const PREDICTION_THRESHOLD: f64 = 0.5;

/// Per-voxel `d_g^alpha + d_p^alpha`, the fixed weights of the boundary loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWeights {
    weights: Vec<f64>,
}

impl BoundaryWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// `|signed_edt(mask)|`, with the infinite side of an empty or full mask
/// replaced by the grid diameter.
fn boundary_distance(mask: &BinaryMask, fallback: f64) -> Vec<f64> {
    signed_edt(mask)
        .data()
        .iter()
        .map(|d| if d.is_finite() { d.abs() } else { fallback })
        .collect()
}

fn weights_from(geometry: &Geometry, d_g: &[f64], d_p: &[f64], alpha_h: f64) -> Vec<f64> {
    debug_assert_eq!(d_g.len(), geometry.len());
    d_g.iter()
        .zip(d_p)
        .map(|(a, b)| a.powf(alpha_h) + b.powf(alpha_h))
        .collect()
}

/// Distance weights for the prediction `p` (thresholded at 0.5) and target `g`.
pub fn boundary_weights(p: &ProbVolume, g: &BinaryMask, alpha_h: f64) -> Result<BoundaryWeights> {
    check_pair(p, g)?;
    let diameter = g.geometry().diameter_mm();
    let d_g = boundary_distance(g, diameter);
    let d_p = boundary_distance(&p.binarize(PREDICTION_THRESHOLD), diameter);
    Ok(BoundaryWeights {
        weights: weights_from(g.geometry(), &d_g, &d_p, alpha_h),
    })
}

/// Distance-transform boundary loss:
/// `mean((p - g)^2 (d_g^alpha + d_p^alpha))`.
///
/// The gradient treats both distance fields as constants.
pub fn hausdorff_dt_loss(p: &ProbVolume, g: &BinaryMask, alpha_h: f64) -> Result<LossResult> {
    let weights = boundary_weights(p, g, alpha_h)?;
    hausdorff_dt_slices(p.data(), g.data(), &weights)
}

pub(super) fn hausdorff_dt_slices(
    p: &[f64],
    g: &[u8],
    weights: &BoundaryWeights,
) -> Result<LossResult> {
    if weights.weights.len() != p.len() {
        return Err(Error::GeometryMismatch { field: "dims" });
    }
    let n = p.len() as f64;
    let mut total = 0.0;
    let gradient = p
        .iter()
        .zip(g)
        .zip(&weights.weights)
        .map(|((&pv, &gv), &w)| {
            let diff = pv - f64::from(gv);
            total += diff * diff * w;
            2.0 * diff * w / n
        })
        .collect();
    Ok(LossResult::new(total / n, gradient))
}

/// `1 / (1 + HD)` for the symmetric surface Hausdorff distance in mm.
///
/// Both masks empty gives 1; exactly one empty gives 0.
pub fn hausdorff_reciprocal(p_mask: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    p_mask.geometry().check_compatible(g.geometry())?;
    let sp = extract_surface(p_mask);
    let sg = extract_surface(g);
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let hd = surface_distances(&sp, &sg)
        .into_iter()
        .chain(surface_distances(&sg, &sp))
        .fold(0.0, f64::max);
    Ok(1.0 / (1.0 + hd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_zero() {
        let geom = Geometry::with_dims([5, 5, 5]).unwrap();
        let g = BinaryMask::from_fn(geom, |x, y, z| x + y + z < 6);
        let r = hausdorff_dt_loss(&ProbVolume::from_mask(&g), &g, 2.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn inverted_two_voxel_domain() {
        // g = [1, 0], p = [0, 1], unit spacing. Inside each foreground voxel the
        // distance to the other class is 1, outside it is 1, so d_g = d_p = 1
        // everywhere and each voxel contributes 1 * (1 + 1).
        let geom = Geometry::with_dims([2, 1, 1]).unwrap();
        let g = BinaryMask::new(geom, vec![1, 0]).unwrap();
        let p = ProbVolume::new(geom, vec![0.0, 1.0]).unwrap();
        let r = hausdorff_dt_loss(&p, &g, 2.0).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.gradient[0] < 0.0 && r.gradient[1] > 0.0);
    }

    #[test]
    fn empty_prediction_uses_diameter() {
        let geom = Geometry::new([3, 1, 1], [2.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let g = BinaryMask::new(geom, vec![0, 1, 0]).unwrap();
        let p = ProbVolume::new(geom, vec![0.1, 0.2, 0.1]).unwrap();
        let w = boundary_weights(&p, &g, 1.0).unwrap();
        let diameter = geom.diameter_mm();
        // d_g = [2, 2, 2] (inside: nearest background 2 mm away)
        for &v in w.as_slice() {
            assert!((v - (2.0 + diameter)).abs() < 1e-12);
        }
        let r = hausdorff_dt_loss(&p, &g, 1.0).unwrap();
        assert!(r.value.is_finite() && r.gradient.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reciprocal_conventions() {
        let geom = Geometry::with_dims([6, 1, 1]).unwrap();
        let a = BinaryMask::new(geom, vec![1, 0, 0, 0, 0, 0]).unwrap();
        let b = BinaryMask::new(geom, vec![0, 0, 0, 1, 0, 0]).unwrap();
        let empty = BinaryMask::zeros(geom);
        assert_eq!(hausdorff_reciprocal(&a, &a).unwrap(), 1.0);
        assert_eq!(hausdorff_reciprocal(&a, &empty).unwrap(), 0.0);
        assert_eq!(hausdorff_reciprocal(&empty, &empty).unwrap(), 1.0);
        assert!((hausdorff_reciprocal(&a, &b).unwrap() - 0.25).abs() < 1e-12);
    }
}
