//! Stochastic training-time augmentation.
//!
//! Five transforms are drawn and applied in a fixed order: noise, anisotropy,
//! blur, gamma, elastic. Each fires independently with `apply_probability`.
//! Intensity transforms touch only the maps; the elastic warp moves maps
//! (trilinear) and label (nearest) with one shared displacement field.
//! Parameters drawn for a transform are shared by every channel. Everything is
//! a pure function of the inputs and `seed`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::resample_linear_buffer;
use crate::volume::{BinaryMask, Geometry, MultiChannelVolume, ScalarVolume};

pub const TRANSFORM_ORDER: [&str; 5] = ["noise", "anisotropy", "blur", "gamma", "elastic"];

/// Offset added to the intensity range in [`random_gamma`].
const GAMMA_RANGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnabledTransforms {
    pub noise: bool,
    pub anisotropy: bool,
    pub blur: bool,
    pub gamma: bool,
    pub elastic: bool,
}

impl Default for EnabledTransforms {
    fn default() -> Self {
        Self::all(true)
    }
}

impl EnabledTransforms {
    pub fn all(on: bool) -> Self {
        Self {
            noise: on,
            anisotropy: on,
            blur: on,
            gamma: on,
            elastic: on,
        }
    }

    pub fn only(name: &str) -> Result<Self> {
        let mut e = Self::all(false);
        match name {
            "noise" => e.noise = true,
            "anisotropy" => e.anisotropy = true,
            "blur" => e.blur = true,
            "gamma" => e.gamma = true,
            "elastic" => e.elastic = true,
            other => return Err(Error::InvalidConfig(format!("unknown transform `{other}`"))),
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticConfig {
    /// Control points per axis.
    pub grid_dims: [usize; 3],
    pub max_displacement_mm: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        Self {
            grid_dims: [7, 7, 7],
            max_displacement_mm: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub seed: u64,
    pub enabled: EnabledTransforms,
    pub noise_std: f64,
    /// Downsampling factor range for the anisotropy transform.
    pub aniso_range: (f64, f64),
    /// Gaussian blur sigma range, in voxels.
    pub blur_std_range: (f64, f64),
    pub log_gamma_range: (f64, f64),
    pub elastic: ElasticConfig,
    pub apply_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            enabled: EnabledTransforms::default(),
            noise_std: 0.01,
            aniso_range: (1.2, 2.0),
            blur_std_range: (0.0, 0.5),
            log_gamma_range: (-0.1, 0.1),
            elastic: ElasticConfig::default(),
            apply_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must satisfy low <= high, got ({lo}, {hi})"
                )))
            }
        };
        ordered("aniso_range", self.aniso_range)?;
        ordered("blur_std_range", self.blur_std_range)?;
        ordered("log_gamma_range", self.log_gamma_range)?;
        if self.aniso_range.0 < 1.0 {
            return Err(Error::InvalidConfig(
                "aniso_range factors must be >= 1".into(),
            ));
        }
        if self.blur_std_range.0 < 0.0 {
            return Err(Error::InvalidConfig(
                "blur_std_range must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::InvalidConfig(
                "apply_probability must lie in [0, 1]".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise_std must be nonnegative".into()));
        }
        if self.elastic.grid_dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidConfig(
                "elastic grid needs at least 2 control points per axis".into(),
            ));
        }
        if !(self.elastic.max_displacement_mm >= 0.0
            && self.elastic.max_displacement_mm.is_finite())
        {
            return Err(Error::InvalidConfig(
                "max_displacement_mm must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters realized for one transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TransformParams {
    Noise {
        std: f64,
    },
    Anisotropy {
        factor: f64,
        axis: usize,
    },
    Blur {
        std_voxels: [f64; 3],
    },
    Gamma {
        log_gamma: f64,
    },
    Elastic {
        grid_dims: [usize; 3],
        max_displacement_mm: f64,
        realized_max_mm: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub name: String,
    pub enabled: bool,
    pub applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<TransformParams>,
}

/// Provenance record of one [`augment_case`] call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedLog {
    pub seed: u64,
    pub apply_probability: f64,
    pub blur_units: String,
    pub entries: Vec<LogEntry>,
}

impl AppliedLog {
    pub fn applied(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.applied)
    }
}

fn draw_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn map_channels(
    x: &MultiChannelVolume,
    mut f: impl FnMut(&ScalarVolume) -> Result<ScalarVolume>,
) -> Result<MultiChannelVolume> {
    let channels = x
        .channels()
        .iter()
        .map(&mut f)
        .collect::<Result<Vec<_>>>()?;
    MultiChannelVolume::new(channels, x.names().to_vec())
}

/// Applies the configured transforms in fixed order.
pub fn augment_case(
    x: &MultiChannelVolume,
    label: &BinaryMask,
    cfg: &AugmentConfig,
) -> Result<(MultiChannelVolume, BinaryMask, AppliedLog)> {
    cfg.validate()?;
    x.geometry().check_compatible(label.geometry())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x.clone();
    let mut label = label.clone();
    let mut entries = Vec::with_capacity(TRANSFORM_ORDER.len());
    let enabled = [
        cfg.enabled.noise,
        cfg.enabled.anisotropy,
        cfg.enabled.blur,
        cfg.enabled.gamma,
        cfg.enabled.elastic,
    ];

    for (name, on) in TRANSFORM_ORDER.into_iter().zip(enabled) {
        // The coin is always tossed so that toggling one transform leaves the
        // draws of the others unchanged.
        let coin = rng.random::<f64>() < cfg.apply_probability;
        let applied = on && coin;
        let params = if applied {
            Some(match name {
                "noise" => {
                    let std = cfg.noise_std;
                    x = map_channels(&x, |c| random_noise(c, std, &mut rng))?;
                    TransformParams::Noise { std }
                }
                "anisotropy" => {
                    let factor = draw_in(&mut rng, cfg.aniso_range);
                    let axis = rng.random_range(0..3);
                    x = map_channels(&x, |c| random_anisotropy(c, factor, axis))?;
                    TransformParams::Anisotropy { factor, axis }
                }
                "blur" => {
                    let std_voxels = std::array::from_fn(|_| draw_in(&mut rng, cfg.blur_std_range));
                    x = map_channels(&x, |c| random_blur(c, std_voxels))?;
                    TransformParams::Blur { std_voxels }
                }
                "gamma" => {
                    let log_gamma = draw_in(&mut rng, cfg.log_gamma_range);
                    x = map_channels(&x, |c| random_gamma(c, log_gamma))?;
                    TransformParams::Gamma { log_gamma }
                }
                "elastic" => {
                    let field = DisplacementField::random(x.geometry(), &cfg.elastic, &mut rng);
                    let realized_max_mm = field.max_magnitude_mm();
                    (x, label) = warp(&x, &label, &field)?;
                    TransformParams::Elastic {
                        grid_dims: cfg.elastic.grid_dims,
                        max_displacement_mm: cfg.elastic.max_displacement_mm,
                        realized_max_mm,
                    }
                }
                _ => unreachable!(),
            })
        } else {
            None
        };
        entries.push(LogEntry {
            name: name.to_string(),
            enabled: on,
            applied,
            params,
        });
    }

    let log = AppliedLog {
        seed: cfg.seed,
        apply_probability: cfg.apply_probability,
        blur_units: "voxels".into(),
        entries,
    };
    Ok((x, label, log))
}

/// Adds iid Gaussian noise with standard deviation `std`.
pub fn random_noise<R: Rng + ?Sized>(
    v: &ScalarVolume,
    std: f64,
    rng: &mut R,
) -> Result<ScalarVolume> {
    if std == 0.0 {
        return Ok(v.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let data = v
        .data()
        .iter()
        .map(|&x| (f64::from(x) + normal.sample(rng)) as f32)
        .collect();
    v.with_data(data)
}

/// Downsamples along `axis` by `factor` and resamples back to the original grid.
pub fn random_anisotropy(v: &ScalarVolume, factor: f64, axis: usize) -> Result<ScalarVolume> {
    if axis > 2 {
        return Err(Error::InvalidConfig(format!("axis {axis} out of range")));
    }
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "anisotropy factor {factor} must be >= 1"
        )));
    }
    let dims = v.dims();
    let mut low = dims;
    low[axis] = ((dims[axis] as f64 / factor).round() as usize).max(1);
    if low == dims {
        return Ok(v.clone());
    }
    let src: Vec<f64> = v.data().iter().map(|&x| f64::from(x)).collect();
    let down = resample_linear_buffer(&src, dims, low);
    let up = resample_linear_buffer(&down, low, dims);
    v.with_data(up.into_iter().map(|x| x as f32).collect())
}

/// Normalized 1D Gaussian taps for sigma, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur, sigma per axis in voxels, edge-replicated borders.
pub fn random_blur(v: &ScalarVolume, std_voxels: [f64; 3]) -> Result<ScalarVolume> {
    if std_voxels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidConfig(
            "blur sigma must be nonnegative".into(),
        ));
    }
    let dims = v.dims();
    let mut data: Vec<f64> = v.data().iter().map(|&x| f64::from(x)).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        if std_voxels[axis] == 0.0 {
            continue;
        }
        let kernel = gaussian_kernel(std_voxels[axis]);
        let radius = (kernel.len() / 2) as i64;
        let n = dims[axis] as i64;
        let stride = strides[axis];
        let src = data.clone();
        for (i, out) in data.iter_mut().enumerate() {
            let pos = ((i / stride) % dims[axis]) as i64;
            let line_start = i - pos as usize * stride;
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let j = (pos + k as i64 - radius).clamp(0, n - 1) as usize;
                    w * src[line_start + j * stride]
                })
                .sum();
        }
    }
    v.with_data(data.into_iter().map(|x| x as f32).collect())
}

/// Power-law intensity transform on the min-max normalized volume.
pub fn random_gamma(v: &ScalarVolume, log_gamma: f64) -> Result<ScalarVolume> {
    if !log_gamma.is_finite() {
        return Err(Error::InvalidConfig("log_gamma must be finite".into()));
    }
    let (lo, hi) = v.min_max();
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    let range = hi - lo + GAMMA_RANGE_EPS;
    let gamma = log_gamma.exp();
    let data = v
        .data()
        .iter()
        .map(|&x| {
            let unit = (f64::from(x) - lo) / range;
            (lo + unit.powf(gamma) * range) as f32
        })
        .collect();
    v.with_data(data)
}

/// Dense per-voxel displacement in millimeters, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    geometry: Geometry,
    data: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(geometry: Geometry, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidData(
                "displacement field length does not match grid".into(),
            ));
        }
        Ok(Self { geometry, data })
    }

    pub fn uniform(geometry: Geometry, displacement_mm: [f64; 3]) -> Self {
        Self {
            geometry,
            data: vec![displacement_mm; geometry.len()],
        }
    }

    /// Gaussian control-point displacements, rescaled so the largest has
    /// magnitude `max_displacement_mm`, then upsampled trilinearly with the
    /// control grid spanning the volume corner to corner.
    pub fn random<R: Rng + ?Sized>(geometry: &Geometry, cfg: &ElasticConfig, rng: &mut R) -> Self {
        let [gx, gy, gz] = cfg.grid_dims;
        let mut control: Vec<[f64; 3]> = (0..gx * gy * gz)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(rng)))
            .collect();
        let peak = control.iter().map(norm3).fold(0.0, f64::max);
        let scale = if peak > 0.0 {
            cfg.max_displacement_mm / peak
        } else {
            0.0
        };
        for d in &mut control {
            for c in d.iter_mut() {
                *c *= scale;
            }
        }

        let dims = geometry.dims();
        let axes: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| {
            let (n, g) = (dims[a], cfg.grid_dims[a]);
            (0..n)
                .map(|i| {
                    let u = if n > 1 {
                        i as f64 * (g - 1) as f64 / (n - 1) as f64
                    } else {
                        0.0
                    };
                    let lo = (u.floor() as usize).min(g - 1);
                    let hi = (lo + 1).min(g - 1);
                    (lo, hi, u - lo as f64)
                })
                .collect()
        });
        let cidx = |x: usize, y: usize, z: usize| x + gx * (y + gy * z);
        let mut data = Vec::with_capacity(geometry.len());
        for &(z0, z1, wz) in &axes[2] {
            for &(y0, y1, wy) in &axes[1] {
                for &(x0, x1, wx) in &axes[0] {
                    let mut d = [0.0; 3];
                    for (zi, fz) in [(z0, 1.0 - wz), (z1, wz)] {
                        for (yi, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                            for (xi, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                                let w = fx * fy * fz;
                                let c = control[cidx(xi, yi, zi)];
                                for k in 0..3 {
                                    d[k] += w * c[k];
                                }
                            }
                        }
                    }
                    data.push(d);
                }
            }
        }
        Self {
            geometry: *geometry,
            data,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn max_magnitude_mm(&self) -> f64 {
        self.data.iter().map(norm3).fold(0.0, f64::max)
    }

    /// Continuous source position, in voxels, sampled for output voxel `i`.
    fn source_position(&self, i: usize) -> [f64; 3] {
        let c = self.geometry.coords(i);
        let s = self.geometry.spacing();
        let n = self.geometry.dims();
        std::array::from_fn(|a| {
            (c[a] as f64 - self.data[i][a] / s[a]).clamp(0.0, (n[a] - 1) as f64)
        })
    }
}

fn norm3(d: &[f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn sample_trilinear(v: &ScalarVolume, p: [f64; 3]) -> f64 {
    let n = v.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut w = [0.0; 3];
    for a in 0..3 {
        lo[a] = p[a].floor() as usize;
        hi[a] = (lo[a] + 1).min(n[a] - 1);
        w[a] = p[a] - lo[a] as f64;
    }
    let f = |x, y, z| f64::from(v.get(x, y, z));
    let c00 = f(lo[0], lo[1], lo[2]) * (1.0 - w[0]) + f(hi[0], lo[1], lo[2]) * w[0];
    let c10 = f(lo[0], hi[1], lo[2]) * (1.0 - w[0]) + f(hi[0], hi[1], lo[2]) * w[0];
    let c01 = f(lo[0], lo[1], hi[2]) * (1.0 - w[0]) + f(hi[0], lo[1], hi[2]) * w[0];
    let c11 = f(lo[0], hi[1], hi[2]) * (1.0 - w[0]) + f(hi[0], hi[1], hi[2]) * w[0];
    let c0 = c00 * (1.0 - w[1]) + c10 * w[1];
    let c1 = c01 * (1.0 - w[1]) + c11 * w[1];
    c0 * (1.0 - w[2]) + c1 * w[2]
}

/// Backward-maps maps and label through `field`: output at `x` samples the
/// input at `x - displacement(x)`, clamped to the grid.
pub fn warp(
    x: &MultiChannelVolume,
    label: &BinaryMask,
    field: &DisplacementField,
) -> Result<(MultiChannelVolume, BinaryMask)> {
    x.geometry().check_compatible(field.geometry())?;
    label.geometry().check_compatible(field.geometry())?;
    let positions: Vec<[f64; 3]> = (0..field.geometry.len())
        .map(|i| field.source_position(i))
        .collect();
    let maps = map_channels(x, |c| {
        c.with_data(
            positions
                .iter()
                .map(|&p| sample_trilinear(c, p) as f32)
                .collect(),
        )
    })?;
    let labels = positions
        .iter()
        .map(|p| {
            label.get(
                p[0].round() as usize,
                p[1].round() as usize,
                p[2].round() as usize,
            )
        })
        .collect();
    Ok((maps, BinaryMask::new(*label.geometry(), labels)?))
}

/// Draws a random elastic field and warps maps and label with it.
pub fn random_elastic<R: Rng + ?Sized>(
    x: &MultiChannelVolume,
    label: &BinaryMask,
    cfg: &ElasticConfig,
    rng: &mut R,
) -> Result<(MultiChannelVolume, BinaryMask)> {
    let field = DisplacementField::random(x.geometry(), cfg, rng);
    warp(x, label, &field)
}
