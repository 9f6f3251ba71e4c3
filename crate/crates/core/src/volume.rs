//! Voxel grids with physical geometry.
//!
//! Every grid stores its samples in x-fastest linear order, so voxel `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`. This is the MetaImage raw ordering, which
//! makes file I/O a straight copy. Grids are immutable once built; every
//! transform in the crate returns a new grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance, in millimeters, for comparing spacing and origin components.
pub const GEOMETRY_TOLERANCE_MM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::geometry(
                "dims",
                format!("axis {axis} has zero voxels"),
            ));
        }
        if let Some(axis) = spacing.iter().position(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::geometry(
                "spacing",
                format!(
                    "axis {axis} spacing {} is not a positive finite value",
                    spacing[axis]
                ),
            ));
        }
        if let Some(axis) = origin.iter().position(|o| !o.is_finite()) {
            return Err(Error::geometry(
                "origin",
                format!("axis {axis} origin is not finite"),
            ));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::geometry("dims", "voxel count overflows"))?;
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit spacing, zero origin.
    pub fn with_dims(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Physical extent along each axis, `dims[i] * spacing[i]`.
    pub fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.dims[i] as f64 * self.spacing[i])
    }

    /// Length of the bounding-box diagonal in millimeters. Strictly larger than
    /// any center-to-center distance inside the grid.
    pub fn diameter_mm(&self) -> f64 {
        self.extent_mm().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn is_compatible(&self, other: &Geometry) -> bool {
        self.check_compatible(other).is_ok()
    }

    /// Errors with the first differing field (dims, spacing, origin).
    pub fn check_compatible(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GeometryMismatch { field: "dims" });
        }
        let close = |a: &[f64; 3], b: &[f64; 3]| {
            a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= GEOMETRY_TOLERANCE_MM)
        };
        if !close(&self.spacing, &other.spacing) {
            return Err(Error::GeometryMismatch { field: "spacing" });
        }
        if !close(&self.origin, &other.origin) {
            return Err(Error::GeometryMismatch { field: "origin" });
        }
        Ok(())
    }
}

pub fn voxel_volume_mm3(geometry: &Geometry) -> f64 {
    geometry.spacing.iter().product()
}

fn check_len(geometry: &Geometry, len: usize) -> Result<()> {
    if geometry.len() != len {
        return Err(Error::InvalidData(format!(
            "expected {} voxels for dims {:?}, got {}",
            geometry.len(),
            geometry.dims,
            len
        )));
    }
    Ok(())
}

macro_rules! grid_accessors {
    ($ty:ty, $elem:ty) => {
        impl $ty {
            pub fn geometry(&self) -> &Geometry {
                &self.geometry
            }

            pub fn dims(&self) -> [usize; 3] {
                self.geometry.dims
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            #[inline]
            pub fn get(&self, x: usize, y: usize, z: usize) -> $elem {
                self.data[self.geometry.index(x, y, z)]
            }
        }
    };
}

/// Real-valued intensity map (ADC, ZADC, preprocessed channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    geometry: Geometry,
    data: Vec<f32>,
}

grid_accessors!(ScalarVolume, f32);

impl ScalarVolume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        check_len(&geometry, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite intensity at voxel {i}"
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.len()])
    }

    pub fn from_fn(
        geometry: Geometry,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let data = (0..geometry.len())
            .map(|i| {
                let [x, y, z] = geometry.coords(i);
                f(x, y, z)
            })
            .collect();
        Self::new(geometry, data)
    }

    /// Same geometry, new samples. Used by transforms that preserve the grid.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.geometry, data)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Builds a constant-valued volume.
pub fn make_volume(
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    fill: f32,
) -> Result<ScalarVolume> {
    let geometry = Geometry::new(dims, spacing, origin)?;
    ScalarVolume::filled(geometry, fill)
}

/// Binary label map; every sample is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    data: Vec<u8>,
}

grid_accessors!(BinaryMask, u8);

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        check_len(&geometry, data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidData(format!(
                "mask value {} at voxel {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Self {
            geometry,
            data: vec![0; geometry.len()],
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let data = (0..geometry.len())
            .map(|i| {
                let [x, y, z] = geometry.coords(i);
                u8::from(f(x, y, z))
            })
            .collect();
        Self { geometry, data }
    }

    pub fn from_bools(geometry: Geometry, values: impl IntoIterator<Item = bool>) -> Result<Self> {
        let data: Vec<u8> = values.into_iter().map(u8::from).collect();
        check_len(&geometry, data.len())?;
        Ok(Self { geometry, data })
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.data[index] == 1
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

pub fn foreground_count(mask: &BinaryMask) -> usize {
    mask.foreground_count()
}

/// Per-voxel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    geometry: Geometry,
    data: Vec<f64>,
}

grid_accessors!(ProbVolume, f64);

impl ProbVolume {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        check_len(&geometry, data.len())?;
        if let Some(i) = data.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidData(format!(
                "probability {} at voxel {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            geometry: mask.geometry,
            data: mask.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Foreground where `p >= threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry,
            data: self
                .data
                .iter()
                .map(|&p| u8::from(p >= threshold))
                .collect(),
        }
    }
}

/// Stack of co-registered intensity channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelVolume {
    channels: Vec<ScalarVolume>,
    names: Vec<String>,
}

impl MultiChannelVolume {
    pub fn new(channels: Vec<ScalarVolume>, names: Vec<String>) -> Result<Self> {
        let first = channels.first().ok_or_else(|| {
            Error::InvalidData("a multi-channel volume needs at least one channel".into())
        })?;
        for ch in &channels[1..] {
            first.geometry().check_compatible(ch.geometry())?;
        }
        if names.len() != channels.len() {
            return Err(Error::InvalidData(format!(
                "{} channel names given for {} channels",
                names.len(),
                channels.len()
            )));
        }
        Ok(Self { channels, names })
    }

    pub fn geometry(&self) -> &Geometry {
        self.channels[0].geometry()
    }

    pub fn channels(&self) -> &[ScalarVolume] {
        &self.channels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Option<&ScalarVolume> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.channels[i])
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn into_parts(self) -> (Vec<ScalarVolume>, Vec<String>) {
        (self.channels, self.names)
    }
}
