//! Resampling to a fixed grid, per-channel z-normalization and channel stacking.
//!
//! Both resamplers use the half-pixel (area) convention: target index `t` maps
//! to source coordinate `s = (t + 0.5) * (n_src / n_dst) - 0.5`, clamped to
//! `[0, n_src - 1]`. Spacing is rescaled so the physical extent is preserved and
//! the origin is kept as-is.

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, MultiChannelVolume, ScalarVolume};

/// Fixed training grid for preprocessed cases.
pub const DEFAULT_TARGET_DIMS: [usize; 3] = [192, 192, 32];

/// Floor on the standard deviation used by [`znormalize`].
pub const STD_FLOOR: f64 = 1e-8;

pub const DEFAULT_CHANNEL_NAMES: [&str; 2] = ["adc", "zadc"];

fn resampled_geometry(source: &Geometry, target_dims: [usize; 3]) -> Result<Geometry> {
    if let Some(axis) = target_dims.iter().position(|&d| d == 0) {
        return Err(Error::geometry(
            "dims",
            format!("target axis {axis} has zero voxels"),
        ));
    }
    let dims = source.dims();
    let spacing = source.spacing();
    let new_spacing = std::array::from_fn(|i| spacing[i] * dims[i] as f64 / target_dims[i] as f64);
    Geometry::new(target_dims, new_spacing, source.origin())
}

/// Continuous source coordinate for target index `t`.
#[inline]
pub fn source_coordinate(t: usize, n_src: usize, n_dst: usize) -> f64 {
    let s = (t as f64 + 0.5) * (n_src as f64 / n_dst as f64) - 0.5;
    s.clamp(0.0, (n_src - 1) as f64)
}

/// Linear-interpolation taps along one axis: `(lower, upper, weight_of_upper)`.
fn linear_taps(n_src: usize, n_dst: usize) -> Vec<(usize, usize, f64)> {
    (0..n_dst)
        .map(|t| {
            let s = source_coordinate(t, n_src, n_dst);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(n_src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    let v = a * (1.0 - w) + b * w;
    v.clamp(a.min(b), a.max(b))
}

/// Separable linear resampling of an x-fastest f64 buffer.
pub(crate) fn resample_linear_buffer(
    data: &[f64],
    src_dims: [usize; 3],
    dst_dims: [usize; 3],
) -> Vec<f64> {
    let [sx, sy, sz] = src_dims;
    let [dx, dy, dz] = dst_dims;

    // x pass: (sx, sy, sz) -> (dx, sy, sz)
    let taps = linear_taps(sx, dx);
    let mut a = Vec::with_capacity(dx * sy * sz);
    for row in data.chunks_exact(sx) {
        a.extend(taps.iter().map(|&(lo, hi, w)| lerp(row[lo], row[hi], w)));
    }

    // y pass: -> (dx, dy, sz)
    let taps = linear_taps(sy, dy);
    let mut b = vec![0.0; dx * dy * sz];
    for z in 0..sz {
        for (ty, &(lo, hi, w)) in taps.iter().enumerate() {
            let src_lo = &a[dx * (lo + sy * z)..][..dx];
            let src_hi = &a[dx * (hi + sy * z)..][..dx];
            let dst = &mut b[dx * (ty + dy * z)..][..dx];
            for x in 0..dx {
                dst[x] = lerp(src_lo[x], src_hi[x], w);
            }
        }
    }

    // z pass: -> (dx, dy, dz)
    let taps = linear_taps(sz, dz);
    let plane = dx * dy;
    let mut c = vec![0.0; plane * dz];
    for (tz, &(lo, hi, w)) in taps.iter().enumerate() {
        let src_lo = &b[plane * lo..][..plane];
        let src_hi = &b[plane * hi..][..plane];
        let dst = &mut c[plane * tz..][..plane];
        for i in 0..plane {
            dst[i] = lerp(src_lo[i], src_hi[i], w);
        }
    }
    c
}

/// Trilinear resampling of an intensity map to `target_dims`.
pub fn resample_trilinear(v: &ScalarVolume, target_dims: [usize; 3]) -> Result<ScalarVolume> {
    let geometry = resampled_geometry(v.geometry(), target_dims)?;
    let src: Vec<f64> = v.data().iter().map(|&x| f64::from(x)).collect();
    let out = resample_linear_buffer(&src, v.dims(), target_dims);
    ScalarVolume::new(geometry, out.into_iter().map(|x| x as f32).collect())
}

/// Nearest-neighbor resampling of a label map. Ties round away from zero.
///
/// Calling this with a case's original dims reverses a previous resampling.
pub fn resample_nearest(m: &BinaryMask, target_dims: [usize; 3]) -> Result<BinaryMask> {
    let geometry = resampled_geometry(m.geometry(), target_dims)?;
    let src_dims = m.dims();
    let index: [Vec<usize>; 3] = std::array::from_fn(|axis| {
        (0..target_dims[axis])
            .map(|t| source_coordinate(t, src_dims[axis], target_dims[axis]).round() as usize)
            .collect()
    });
    let mut data = Vec::with_capacity(geometry.len());
    for &z in &index[2] {
        for &y in &index[1] {
            for &x in &index[0] {
                data.push(m.get(x, y, z));
            }
        }
    }
    BinaryMask::new(geometry, data)
}

/// `(x - mean) / max(std, 1e-8)` with population statistics over every voxel.
pub fn znormalize(v: &ScalarVolume) -> ScalarVolume {
    let n = v.len() as f64;
    let mean = v.data().iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = v
        .data()
        .iter()
        .map(|&x| (f64::from(x) - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(STD_FLOOR);
    let data = v
        .data()
        .iter()
        .map(|&x| ((f64::from(x) - mean) / std) as f32)
        .collect();
    v.with_data(data).expect("normalized values are finite")
}

/// Stacks two maps into a two-channel volume, in argument order.
pub fn concat_channels(
    a: &ScalarVolume,
    b: &ScalarVolume,
    names: [&str; 2],
) -> Result<MultiChannelVolume> {
    a.geometry().check_compatible(b.geometry())?;
    MultiChannelVolume::new(
        vec![a.clone(), b.clone()],
        names.iter().map(|s| s.to_string()).collect(),
    )
}

/// Resample both maps trilinearly, normalize each, stack them; resample the
/// label by nearest neighbor onto the same grid.
pub fn preprocess_case(
    adc: &ScalarVolume,
    zadc: &ScalarVolume,
    label: &BinaryMask,
    target_dims: [usize; 3],
) -> Result<(MultiChannelVolume, BinaryMask)> {
    adc.geometry().check_compatible(zadc.geometry())?;
    adc.geometry().check_compatible(label.geometry())?;
    let adc = znormalize(&resample_trilinear(adc, target_dims)?);
    let zadc = znormalize(&resample_trilinear(zadc, target_dims)?);
    let input = concat_channels(&adc, &zadc, DEFAULT_CHANNEL_NAMES)?;
    let label = resample_nearest(label, target_dims)?;
    Ok((input, label))
}
