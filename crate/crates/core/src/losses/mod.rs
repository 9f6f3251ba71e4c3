//! The loss family: Dice, Dice-Focal, Tversky, the distance-transform boundary
//! loss, and the two compound losses that add a log-damped boundary term to a
//! region loss.
//!
//! Every loss takes a probability volume `p` and a binary target `g` and
//! returns its value together with the analytic gradient `dL/dp`. Reductions
//! accumulate in `f64`.

mod boundary;
mod focal;
mod region;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, ProbVolume};

pub use boundary::{boundary_weights, hausdorff_dt_loss, hausdorff_reciprocal, BoundaryWeights};
pub use focal::{focal_loss, FOCAL_CLAMP};
pub use region::{dice_loss, tversky_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(alias = "dice")]
    Dice,
    #[serde(alias = "dicefocal")]
    DiceFocal,
    #[serde(alias = "tversky")]
    Tversky,
    #[serde(alias = "hausdorffdt")]
    HausdorffDT,
    #[serde(alias = "dicefocal-hausdorffdt")]
    DiceFocalHausdorffDT,
    #[serde(alias = "tversky-hausdorffdt")]
    TverskyHausdorffDT,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Dice,
        LossKind::DiceFocal,
        LossKind::Tversky,
        LossKind::HausdorffDT,
        LossKind::DiceFocalHausdorffDT,
        LossKind::TverskyHausdorffDT,
    ];

    /// Command-line spelling.
    pub fn cli_name(self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::DiceFocal => "dicefocal",
            LossKind::Tversky => "tversky",
            LossKind::HausdorffDT => "hausdorffdt",
            LossKind::DiceFocalHausdorffDT => "dicefocal-hausdorffdt",
            LossKind::TverskyHausdorffDT => "tversky-hausdorffdt",
        }
    }

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Dice => "Dice Loss",
            LossKind::DiceFocal => "Dice Focal Loss",
            LossKind::Tversky => "Tversky Loss",
            LossKind::HausdorffDT => "HausdorffDT Loss",
            LossKind::DiceFocalHausdorffDT => "DiceFocal-HausdorffDT Loss",
            LossKind::TverskyHausdorffDT => "Tversky-HausdorffDT Loss",
        }
    }

    pub fn uses_boundary(self) -> bool {
        matches!(
            self,
            LossKind::HausdorffDT | LossKind::DiceFocalHausdorffDT | LossKind::TverskyHausdorffDT
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        LossKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == lower || format!("{k:?}").to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    /// Focusing exponent on `(1 - p_t)`.
    pub gamma: f64,
    /// Class weights `[background, foreground]`.
    pub lambda_t: [f64; 2],
    /// Weight of the focal term against the Dice term.
    pub alpha_df: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            lambda_t: [1.0, 1.0],
            alpha_df: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TverskyParams {
    /// False-positive weight.
    pub alpha_t: f64,
    /// False-negative weight.
    pub beta_t: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        Self {
            alpha_t: 0.3,
            beta_t: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HausdorffParams {
    /// Exponent applied to both distance fields.
    pub alpha_h: f64,
}

impl Default for HausdorffParams {
    fn default() -> Self {
        Self { alpha_h: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompoundParams {
    pub alpha_c: f64,
    pub beta_c: f64,
}

impl Default for CompoundParams {
    fn default() -> Self {
        Self {
            alpha_c: 0.9,
            beta_c: 0.1,
        }
    }
}

/// Selects a loss and carries every hyperparameter. Fields missing from a
/// JSON config take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    pub epsilon: f64,
    pub focal: FocalParams,
    pub tversky: TverskyParams,
    pub hausdorff: HausdorffParams,
    pub compound: CompoundParams,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::new(LossKind::Dice)
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            epsilon: 1e-5,
            focal: FocalParams::default(),
            tversky: TverskyParams::default(),
            hausdorff: HausdorffParams::default(),
            compound: CompoundParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_string()))
            }
        };
        check(
            self.epsilon > 0.0 && self.epsilon.is_finite(),
            "epsilon must be > 0",
        )?;
        check(
            self.focal.gamma >= 0.0 && self.focal.gamma.is_finite(),
            "gamma must be >= 0",
        )?;
        check(
            self.focal
                .lambda_t
                .iter()
                .all(|l| *l >= 0.0 && l.is_finite()),
            "lambda_t weights must be >= 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.focal.alpha_df),
            "alpha_df must lie in [0, 1]",
        )?;
        check(
            self.tversky.alpha_t >= 0.0 && self.tversky.beta_t >= 0.0,
            "alpha_t and beta_t must be >= 0",
        )?;
        check(
            self.hausdorff.alpha_h > 0.0 && self.hausdorff.alpha_h.is_finite(),
            "alpha_h must be > 0",
        )?;
        check(
            self.compound.alpha_c >= 0.0
                && self.compound.beta_c >= 0.0
                && self.compound.alpha_c.is_finite()
                && self.compound.beta_c.is_finite(),
            "alpha_c and beta_c must be >= 0",
        )
    }
}

/// Loss value, `dL/dp` per voxel, and named component values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossResult {
    pub value: f64,
    #[serde(skip)]
    pub gradient: Vec<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl LossResult {
    fn new(value: f64, gradient: Vec<f64>) -> Self {
        Self {
            value,
            gradient,
            diagnostics: BTreeMap::new(),
        }
    }

    fn with(mut self, name: &str, value: f64) -> Self {
        self.diagnostics.insert(name.to_string(), value);
        self
    }

    pub fn diagnostic(&self, name: &str) -> Option<f64> {
        self.diagnostics.get(name).copied()
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn check_pair(p: &ProbVolume, g: &BinaryMask) -> Result<()> {
    p.geometry().check_compatible(g.geometry())
}

/// `(1 - alpha_df) * Dice + alpha_df * Focal`.
pub fn dice_focal_loss(p: &ProbVolume, g: &BinaryMask, spec: &LossSpec) -> Result<LossResult> {
    check_pair(p, g)?;
    Ok(dice_focal_slices(p.data(), g.data(), spec))
}

/// `alpha_c * base + beta_c * ln(1 + HDT)` with the base picked by `spec.kind`
/// (Dice-Focal or Tversky).
pub fn compound_loss(p: &ProbVolume, g: &BinaryMask, spec: &LossSpec) -> Result<LossResult> {
    check_pair(p, g)?;
    let weights = boundary_weights(p, g, spec.hausdorff.alpha_h)?;
    compound_slices(p.data(), g.data(), spec, &weights)
}

/// Dispatches on `spec.kind`.
pub fn evaluate_loss(spec: &LossSpec, p: &ProbVolume, g: &BinaryMask) -> Result<LossResult> {
    spec.validate()?;
    check_pair(p, g)?;
    if spec.kind.uses_boundary() {
        let weights = boundary_weights(p, g, spec.hausdorff.alpha_h)?;
        evaluate_with_weights(spec, p.data(), g.data(), Some(&weights))
    } else {
        evaluate_with_weights(spec, p.data(), g.data(), None)
    }
}

/// Evaluates on raw x-fastest buffers with the boundary distance weights held
/// fixed. `weights` is required for the boundary-aware kinds and ignored
/// otherwise.
pub fn evaluate_with_weights(
    spec: &LossSpec,
    p: &[f64],
    g: &[u8],
    weights: Option<&BoundaryWeights>,
) -> Result<LossResult> {
    if p.len() != g.len() {
        return Err(Error::GeometryMismatch { field: "dims" });
    }
    let need_weights = || {
        weights.ok_or_else(|| Error::InvalidConfig(format!("{} needs boundary weights", spec.kind)))
    };
    Ok(match spec.kind {
        LossKind::Dice => region::dice_slices(p, g, spec.epsilon),
        LossKind::DiceFocal => dice_focal_slices(p, g, spec),
        LossKind::Tversky => region::tversky_slices(
            p,
            g,
            spec.tversky.alpha_t,
            spec.tversky.beta_t,
            spec.epsilon,
        ),
        LossKind::HausdorffDT => boundary::hausdorff_dt_slices(p, g, need_weights()?)?,
        LossKind::DiceFocalHausdorffDT | LossKind::TverskyHausdorffDT => {
            compound_slices(p, g, spec, need_weights()?)?
        }
    })
}

fn dice_focal_slices(p: &[f64], g: &[u8], spec: &LossSpec) -> LossResult {
    let a = spec.focal.alpha_df;
    let dice = region::dice_slices(p, g, spec.epsilon);
    let focal = focal::focal_slices(p, g, spec.focal.gamma, spec.focal.lambda_t);
    let gradient = dice
        .gradient
        .iter()
        .zip(&focal.gradient)
        .map(|(d, f)| (1.0 - a) * d + a * f)
        .collect();
    LossResult::new((1.0 - a) * dice.value + a * focal.value, gradient)
        .with("dice", dice.value)
        .with("focal", focal.value)
}

/// Reassembles a compound loss value from its components.
pub fn compound_value(spec: &LossSpec, base: f64, hausdorff_dt: f64) -> f64 {
    spec.compound.alpha_c * base + spec.compound.beta_c * hausdorff_dt.ln_1p()
}

fn compound_slices(
    p: &[f64],
    g: &[u8],
    spec: &LossSpec,
    weights: &BoundaryWeights,
) -> Result<LossResult> {
    let base = match spec.kind {
        LossKind::DiceFocalHausdorffDT => dice_focal_slices(p, g, spec),
        LossKind::TverskyHausdorffDT => region::tversky_slices(
            p,
            g,
            spec.tversky.alpha_t,
            spec.tversky.beta_t,
            spec.epsilon,
        ),
        other => {
            return Err(Error::InvalidConfig(format!(
                "{other} is not a compound loss"
            )));
        }
    };
    let hdt = boundary::hausdorff_dt_slices(p, g, weights)?;
    let CompoundParams { alpha_c, beta_c } = spec.compound;
    let log_slope = beta_c / (1.0 + hdt.value);
    let gradient = base
        .gradient
        .iter()
        .zip(&hdt.gradient)
        .map(|(b, h)| alpha_c * b + log_slope * h)
        .collect();
    let mut result = LossResult::new(compound_value(spec, base.value, hdt.value), gradient);
    for (k, v) in &base.diagnostics {
        result.diagnostics.insert(k.clone(), *v);
    }
    Ok(result
        .with("base", base.value)
        .with("hausdorff_dt", hdt.value))
}
