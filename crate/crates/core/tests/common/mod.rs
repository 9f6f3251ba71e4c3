//! Brute-force oracles and random fixtures shared by the integration tests.
//! Nothing here calls into the distance transform or the metric code.

#![allow(dead_code)]

use rand::Rng;
use segloss::volume::{BinaryMask, Geometry};

pub fn random_geometry(rng: &mut impl Rng, max_side: usize) -> Geometry {
    let dims = std::array::from_fn(|_| rng.random_range(1..=max_side));
    let spacing = std::array::from_fn(|_| rng.random_range(0.5..=3.0));
    Geometry::new(dims, spacing, [0.0; 3]).unwrap()
}

/// Union of a few random boxes and balls plus sparse salt, occasionally
/// empty or full.
pub fn random_mask(rng: &mut impl Rng, geometry: Geometry) -> BinaryMask {
    let dims = geometry.dims();
    match rng.random_range(0..20) {
        0 => return BinaryMask::zeros(geometry),
        1 => return BinaryMask::from_fn(geometry, |_, _, _| true),
        2 => {
            let density = rng.random_range(0.001..0.05);
            let bits: Vec<bool> = (0..geometry.len())
                .map(|_| rng.random_bool(density))
                .collect();
            return BinaryMask::from_bools(geometry, bits).unwrap();
        }
        _ => {}
    }
    let blobs: Vec<([f64; 3], [f64; 3], bool)> = (0..rng.random_range(1..4))
        .map(|_| {
            let c = std::array::from_fn(|a| rng.random_range(0.0..dims[a] as f64));
            let r = std::array::from_fn(|a| rng.random_range(0.5..(dims[a] as f64 / 2.0).max(1.0)));
            (c, r, rng.random_bool(0.5))
        })
        .collect();
    let salt = rng.random_range(0.0..0.02);
    let noise: Vec<bool> = (0..geometry.len()).map(|_| rng.random_bool(salt)).collect();
    BinaryMask::from_fn(geometry, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let inside = blobs.iter().any(|(c, r, is_ball)| {
            if *is_ball {
                (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
            } else {
                (0..3).all(|a| (p[a] - c[a]).abs() <= r[a])
            }
        });
        inside ^ noise[geometry.index(x, y, z)]
    })
}

pub fn coords_of(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let g = mask.geometry();
    (0..g.len())
        .filter(|&i| mask.is_set(i))
        .map(|i| g.coords(i))
        .collect()
}

pub fn distance_mm(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| ((a[k] as f64 - b[k] as f64) * spacing[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// O(N·|F|) distance from every voxel to the nearest foreground voxel.
pub fn brute_edt(mask: &BinaryMask) -> Vec<f64> {
    let g = mask.geometry();
    let fg = coords_of(mask);
    (0..g.len())
        .map(|i| {
            let c = g.coords(i);
            fg.iter()
                .map(|&f| distance_mm(c, f, g.spacing()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Foreground voxels with a background or out-of-grid face neighbor.
pub fn brute_surface(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let g = mask.geometry();
    let dims = g.dims();
    let is_fg = |c: [i64; 3]| {
        (0..3).all(|k| c[k] >= 0 && (c[k] as usize) < dims[k])
            && mask.get(c[0] as usize, c[1] as usize, c[2] as usize) == 1
    };
    coords_of(mask)
        .into_iter()
        .filter(|&c| {
            let c = c.map(|v| v as i64);
            let faces = [
                [1, 0, 0],
                [-1, 0, 0],
                [0, 1, 0],
                [0, -1, 0],
                [0, 0, 1],
                [0, 0, -1],
            ];
            faces
                .iter()
                .any(|d| !is_fg([c[0] + d[0], c[1] + d[1], c[2] + d[2]]))
        })
        .collect()
}

fn directed(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|&a| {
            to.iter()
                .map(|&b| distance_mm(a, b, spacing))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn oracle_dice(p: &BinaryMask, q: &BinaryMask) -> f64 {
    let inter = p
        .data()
        .iter()
        .zip(q.data())
        .filter(|(a, b)| **a == 1 && **b == 1)
        .count();
    let total = p.foreground_count() + q.foreground_count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

pub fn oracle_msd(p: &BinaryMask, q: &BinaryMask) -> f64 {
    let s = p.geometry().spacing();
    let (sp, sq) = (brute_surface(p), brute_surface(q));
    match (sp.is_empty(), sq.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => {
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            0.5 * (mean(directed(&sq, &sp, s)) + mean(directed(&sp, &sq, s)))
        }
    }
}

pub fn oracle_nsd(p: &BinaryMask, q: &BinaryMask, tau: f64) -> f64 {
    let s = p.geometry().spacing();
    let (sp, sq) = (brute_surface(p), brute_surface(q));
    match (sp.is_empty(), sq.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let hits = directed(&sq, &sp, s)
                .into_iter()
                .chain(directed(&sp, &sq, s))
                .filter(|&d| d <= tau + segloss::metrics::NSD_SLACK)
                .count();
            hits as f64 / (sp.len() + sq.len()) as f64
        }
    }
}
