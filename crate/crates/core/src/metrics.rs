//! Dice coefficient, mean surface distance and normalized surface Dice on
//! binary masks.
//!
//! The surface of a mask is the set of foreground voxels with at least one
//! 6-connected neighbor that is background or outside the grid. Distances are
//! measured between voxel centers in millimeters using the exact EDT.

use serde::{Deserialize, Serialize};

use crate::edt::edt;
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry};

pub const DEFAULT_TAU_MM: f64 = 1.0;

/// Absolute slack on the `distance <= tau` test.
pub const NSD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    geometry: Geometry,
    /// Linear indices, ascending.
    voxels: Vec<usize>,
}

impl SurfaceSet {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn indices(&self) -> &[usize] {
        &self.voxels
    }

    pub fn coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.voxels.iter().map(|&i| self.geometry.coords(i))
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut data = vec![0u8; self.geometry.len()];
        for &i in &self.voxels {
            data[i] = 1;
        }
        BinaryMask::new(self.geometry, data).expect("surface indices lie in the grid")
    }
}

pub fn extract_surface(m: &BinaryMask) -> SurfaceSet {
    let g = *m.geometry();
    let [nx, ny, nz] = g.dims();
    let mut voxels = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                if !m.is_set(i) {
                    continue;
                }
                let on_border =
                    x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                let exposed = on_border
                    || !m.is_set(i - 1)
                    || !m.is_set(i + 1)
                    || !m.is_set(i - nx)
                    || !m.is_set(i + nx)
                    || !m.is_set(i - nx * ny)
                    || !m.is_set(i + nx * ny);
                if exposed {
                    voxels.push(i);
                }
            }
        }
    }
    SurfaceSet {
        geometry: g,
        voxels,
    }
}

/// Distance from each voxel of `from` to the nearest voxel of `to`, in the
/// order of `from`. All `+inf` when `to` is empty.
pub fn surface_distances(from: &SurfaceSet, to: &SurfaceSet) -> Vec<f64> {
    let field = edt(&to.to_mask());
    from.voxels.iter().map(|&i| field.data()[i]).collect()
}

/// `2 |p ∩ q| / (|p| + |q|)`; 1 when both are empty.
pub fn dice_coefficient(p: &BinaryMask, q: &BinaryMask) -> Result<f64> {
    p.geometry().check_compatible(q.geometry())?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&a, &b) in p.data().iter().zip(q.data()) {
        inter += usize::from(a & b);
        total += usize::from(a) + usize::from(b);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Symmetric mean surface distance in mm. `+inf` when exactly one surface is
/// empty, 0 when both are.
pub fn mean_surface_distance(p: &BinaryMask, q: &BinaryMask) -> Result<f64> {
    p.geometry().check_compatible(q.geometry())?;
    let (sp, sq) = (extract_surface(p), extract_surface(q));
    Ok(msd_from_surfaces(&sp, &sq))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn msd_from_surfaces(sp: &SurfaceSet, sq: &SurfaceSet) -> f64 {
    match (sp.is_empty(), sq.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => 0.5 * (mean(&surface_distances(sq, sp)) + mean(&surface_distances(sp, sq))),
    }
}

/// Fraction of both surfaces lying within `tau_mm` of the other surface.
pub fn normalized_surface_dice(p: &BinaryMask, q: &BinaryMask, tau_mm: f64) -> Result<f64> {
    check_tau(tau_mm)?;
    p.geometry().check_compatible(q.geometry())?;
    let (sp, sq) = (extract_surface(p), extract_surface(q));
    Ok(nsd_from_surfaces(&sp, &sq, tau_mm))
}

fn check_tau(tau_mm: f64) -> Result<()> {
    if !(tau_mm > 0.0 && tau_mm.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "tolerance tau must be > 0 mm, got {tau_mm}"
        )));
    }
    Ok(())
}

fn nsd_from_surfaces(sp: &SurfaceSet, sq: &SurfaceSet, tau_mm: f64) -> f64 {
    match (sp.is_empty(), sq.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let within = |d: &f64| *d <= tau_mm + NSD_SLACK;
    let hits = surface_distances(sq, sp)
        .iter()
        .filter(|d| within(d))
        .count()
        + surface_distances(sp, sq)
            .iter()
            .filter(|d| within(d))
            .count();
    hits as f64 / (sp.len() + sq.len()) as f64
}

/// Per-case metric bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_id: String,
    pub dice: f64,
    #[serde(with = "crate::io::json_float")]
    pub msd_mm: f64,
    pub nsd: f64,
    pub tau_mm: f64,
}

/// Dice, MSD and NSD for one prediction/truth pair on a shared grid.
pub fn evaluate_case(
    case_id: &str,
    pred: &BinaryMask,
    truth: &BinaryMask,
    tau_mm: f64,
) -> Result<MetricReport> {
    check_tau(tau_mm)?;
    pred.geometry().check_compatible(truth.geometry())?;
    let (sp, sq) = (extract_surface(pred), extract_surface(truth));
    Ok(MetricReport {
        case_id: case_id.to_string(),
        dice: dice_coefficient(pred, truth)?,
        msd_mm: msd_from_surfaces(&sp, &sq),
        nsd: nsd_from_surfaces(&sp, &sq, tau_mm),
        tau_mm,
    })
}
