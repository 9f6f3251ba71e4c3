//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Squared distances are computed with three separable passes of the
//! lower-envelope-of-parabolas algorithm (Felzenszwalb & Huttenlocher), one per
//! axis, each weighted by that axis' spacing. The result is exact: every value
//! equals the true center-to-center distance to the nearest foreground voxel.

use crate::volume::{BinaryMask, Geometry};

/// Per-voxel distances in millimeters. All `+inf` when the source set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    geometry: Geometry,
    data: Vec<f64>,
}

impl DistanceField {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// True when the source set was empty.
    pub fn is_unbounded(&self) -> bool {
        self.data.first().is_some_and(|d| d.is_infinite())
    }
}

/// Negative inside the foreground, positive outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    geometry: Geometry,
    data: Vec<f64>,
}

impl SignedDistanceField {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Unsigned distance to the opposite region for every voxel.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|d| d.abs()).collect()
    }
}

/// Distance from every voxel to the nearest foreground voxel of `mask`.
pub fn edt(mask: &BinaryMask) -> DistanceField {
    let mut data = squared_edt(mask.geometry(), mask.data().iter().map(|&v| v == 1));
    for d in &mut data {
        *d = d.sqrt();
    }
    DistanceField {
        geometry: *mask.geometry(),
        data,
    }
}

/// Squared distances to the nearest voxel whose flag in `sources` is set.
pub fn squared_edt(geometry: &Geometry, sources: impl IntoIterator<Item = bool>) -> Vec<f64> {
    let mut field: Vec<f64> = sources
        .into_iter()
        .map(|s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    assert_eq!(
        field.len(),
        geometry.len(),
        "source flags do not match geometry"
    );

    let [nx, ny, nz] = geometry.dims();
    let spacing = geometry.spacing();
    let longest = nx.max(ny).max(nz);
    let mut scratch = Envelope::with_capacity(longest);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];

    // x: contiguous rows
    for row in field.chunks_exact_mut(nx) {
        line[..nx].copy_from_slice(row);
        scratch.transform(&line[..nx], spacing[0], &mut out[..nx]);
        row.copy_from_slice(&out[..nx]);
    }
    // y: stride nx
    for z in 0..nz {
        for x in 0..nx {
            let base = x + nx * ny * z;
            for y in 0..ny {
                line[y] = field[base + nx * y];
            }
            scratch.transform(&line[..ny], spacing[1], &mut out[..ny]);
            for y in 0..ny {
                field[base + nx * y] = out[y];
            }
        }
    }
    // z: stride nx*ny
    let plane = nx * ny;
    for base in 0..plane {
        for z in 0..nz {
            line[z] = field[base + plane * z];
        }
        scratch.transform(&line[..nz], spacing[2], &mut out[..nz]);
        for z in 0..nz {
            field[base + plane * z] = out[z];
        }
    }
    field
}

/// Signed distance: `-edt(complement)` inside the foreground, `edt(mask)` outside.
///
/// An empty mask yields `+inf` everywhere and a full mask `-inf` everywhere.
pub fn signed_edt(mask: &BinaryMask) -> SignedDistanceField {
    let outside = edt(mask);
    let inside = edt(&mask.complement());
    let data = mask
        .data()
        .iter()
        .zip(outside.data.iter().zip(&inside.data))
        .map(|(&m, (&out, &inn))| if m == 1 { -inn } else { out })
        .collect();
    SignedDistanceField {
        geometry: *mask.geometry(),
        data,
    }
}

/// Scratch buffers for the 1D lower-envelope transform.
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// `out[q] = min_v f[v] + ((q - v) * spacing)^2`. Sites with `f = inf`
    /// are skipped; if every site is infinite the output is all infinite.
    fn transform(&mut self, f: &[f64], spacing: f64, out: &mut [f64]) {
        let n = f.len();
        self.vertices.clear();
        self.bounds.clear();

        let pos = |i: usize| i as f64 * spacing;
        for q in 0..n {
            if f[q].is_infinite() {
                continue;
            }
            let fq = f[q] + pos(q) * pos(q);
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let fv = f[v] + pos(v) * pos(v);
                let s = (fq - fv) / (2.0 * (pos(q) - pos(v)));
                if s <= *self.bounds.last().unwrap() {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    self.vertices.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }

        if self.vertices.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }

        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let x = pos(q);
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let v = self.vertices[k];
            let d = (q as f64 - v as f64) * spacing;
            *o = d * d + f[v];
        }
    }
}
