//! Central finite-difference check of the analytic loss gradients.
//!
//! For the boundary-aware losses the distance weights are computed once at the
//! unperturbed prediction and held fixed, matching how the analytic gradient
//! is defined.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{boundary_weights, evaluate_loss, evaluate_with_weights, LossSpec};
use crate::volume::{BinaryMask, Geometry, ProbVolume};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-3;

/// Components smaller than this are compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

/// Random predictions are drawn from this interval so that `p ± h` stays
/// clear of the focal clamp.
const P_RANGE: (f64, f64) = (0.02, 0.98);

/// `(L(p + h e_v) - L(p - h e_v)) / 2h` for every voxel `v`.
pub fn finite_diff_gradient(
    spec: &LossSpec,
    p: &ProbVolume,
    g: &BinaryMask,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be in (0, 0.5), got {h}"
        )));
    }
    spec.validate()?;
    p.geometry().check_compatible(g.geometry())?;
    if let Some(i) = p.data().iter().position(|&v| v < h || v > 1.0 - h) {
        return Err(Error::InvalidData(format!(
            "p[{i}] = {} lies within {h} of the [0, 1] bounds",
            p.data()[i]
        )));
    }
    let weights = if spec.kind.uses_boundary() {
        Some(boundary_weights(p, g, spec.hausdorff.alpha_h)?)
    } else {
        None
    };
    let mut work = p.data().to_vec();
    let mut out = Vec::with_capacity(work.len());
    for v in 0..work.len() {
        let orig = work[v];
        work[v] = orig + h;
        let plus = evaluate_with_weights(spec, &work, g.data(), weights.as_ref())?.value;
        work[v] = orig - h;
        let minus = evaluate_with_weights(spec, &work, g.data(), weights.as_ref())?.value;
        work[v] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GradientError {
    pub max_abs: f64,
    pub max_rel: f64,
}

impl GradientError {
    fn merge(self, other: GradientError) -> GradientError {
        GradientError {
            max_abs: self.max_abs.max(other.max_abs),
            max_rel: self.max_rel.max(other.max_rel),
        }
    }
}

/// Largest per-component absolute error and relative error
/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> GradientError {
    analytic
        .iter()
        .zip(numeric)
        .fold(GradientError::default(), |acc, (&a, &n)| {
            let abs = (a - n).abs();
            let scale = a.abs().max(n.abs()).max(ABS_FLOOR);
            acc.merge(GradientError {
                max_abs: abs,
                max_rel: abs / scale,
            })
        })
}

/// Analytic vs numeric error for one `(p, g)` pair.
pub fn check_pair(
    spec: &LossSpec,
    p: &ProbVolume,
    g: &BinaryMask,
    h: f64,
) -> Result<GradientError> {
    let analytic = evaluate_loss(spec, p, g)?.gradient;
    let numeric = finite_diff_gradient(spec, p, g, h)?;
    Ok(compare_gradients(&analytic, &numeric))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub loss: String,
    pub dims: [usize; 3],
    pub cases: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<32} {:>10} {:>6} {:>12} {:>12}  result\n",
            "loss", "dims", "cases", "max_abs", "max_rel"
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{:<32} {:>10} {:>6} {:>12.3e} {:>12.3e}  {}\n",
                e.loss,
                format!("{}x{}x{}", e.dims[0], e.dims[1], e.dims[2]),
                e.cases,
                e.max_abs_error,
                e.max_rel_error,
                if e.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Random prediction in the interior of (0, 1) and a random target with
/// roughly `fg_fraction` foreground.
pub fn random_pair(
    rng: &mut impl Rng,
    dims: [usize; 3],
    fg_fraction: f64,
) -> Result<(ProbVolume, BinaryMask)> {
    let geometry = Geometry::with_dims(dims)?;
    let n = geometry.len();
    let p = (0..n)
        .map(|_| rng.random_range(P_RANGE.0..P_RANGE.1))
        .collect();
    let g = (0..n)
        .map(|_| rng.random_bool(fg_fraction))
        .collect::<Vec<_>>();
    Ok((
        ProbVolume::new(geometry, p)?,
        BinaryMask::from_bools(geometry, g)?,
    ))
}

/// Runs every spec on `cases` random pairs per grid size.
pub fn gradcheck_suite(
    seed: u64,
    sizes: &[[usize; 3]],
    specs: &[LossSpec],
    cases: usize,
    h: f64,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for &dims in sizes {
        let pairs = (0..cases)
            .map(|_| {
                let fg = rng.random_range(0.1..0.5);
                random_pair(&mut rng, dims, fg)
            })
            .collect::<Result<Vec<_>>>()?;
        for spec in specs {
            let mut err = GradientError::default();
            for (p, g) in &pairs {
                err = err.merge(check_pair(spec, p, g, h)?);
            }
            entries.push(GradcheckEntry {
                loss: spec.kind.label().to_string(),
                dims,
                cases,
                max_abs_error: err.max_abs,
                max_rel_error: err.max_rel,
                passed: err.max_rel < REL_TOLERANCE,
            });
        }
    }
    Ok(GradcheckReport {
        seed,
        step: h,
        tolerance: REL_TOLERANCE,
        entries,
    })
}
