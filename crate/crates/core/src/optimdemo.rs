//! Direct gradient descent on a logit volume toward a synthetic target.
//!
//! No network is involved: the prediction is `p = logistic(z)` and `z` is
//! updated with the clipped loss gradient, which isolates how each loss shapes
//! the segmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::json_float;
use crate::losses::{evaluate_loss, LossKind, LossSpec};
use crate::metrics::{evaluate_case, DEFAULT_TAU_MM};
use crate::volume::{BinaryMask, Geometry, ProbVolume};

pub const INIT_LOGIT_STD: f64 = 0.1;
pub const DEMO_DIMS: [usize; 3] = [32, 32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Ball of `radius` voxels around the grid center.
    Sphere { radius: f64 },
    /// Two disjoint balls on the x axis, each of radius `n_x / 8`.
    TwoSpheres,
    /// Hollow ball with a wall one voxel thick at radius `min(n) / 3`.
    ThinShell,
    /// Ball of radius 2 voxels off-center; well under 1% of a 32³ grid.
    TinyLesion,
}

impl PhantomKind {
    pub const DEMO_SPHERE: PhantomKind = PhantomKind::Sphere { radius: 8.0 };

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "sphere" => Self::DEMO_SPHERE,
            "two-spheres" => PhantomKind::TwoSpheres,
            "thin-shell" => PhantomKind::ThinShell,
            "tiny-lesion" => PhantomKind::TinyLesion,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown phantom `{other}` (sphere, two-spheres, thin-shell, tiny-lesion)"
                )))
            }
        })
    }
}

fn center(dims: [usize; 3]) -> [f64; 3] {
    dims.map(|n| (n / 2) as f64)
}

fn ball(geometry: Geometry, c: [f64; 3], r: f64) -> Result<BinaryMask> {
    let dims = geometry.dims();
    for axis in 0..3 {
        if c[axis] - r < 0.0 || c[axis] + r > (dims[axis] - 1) as f64 {
            return Err(Error::geometry(
                "dims",
                format!("ball of radius {r} at {c:?} does not fit in {dims:?}"),
            ));
        }
    }
    Ok(BinaryMask::from_fn(geometry, |x, y, z| {
        let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
        d.iter().map(|v| v * v).sum::<f64>() <= r * r
    }))
}

/// Deterministic analytic target. Radii and centers are in voxel units.
pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], spacing: [f64; 3]) -> Result<BinaryMask> {
    let geometry = Geometry::new(dims, spacing, [0.0; 3])?;
    let c = center(dims);
    match kind {
        PhantomKind::Sphere { radius } => {
            if !(radius >= 0.0 && radius.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "sphere radius must be >= 0, got {radius}"
                )));
            }
            ball(geometry, c, radius)
        }
        PhantomKind::TwoSpheres => {
            let r = (dims[0] / 8) as f64;
            let a = ball(geometry, [dims[0] as f64 * 0.25, c[1], c[2]], r)?;
            let b = ball(geometry, [dims[0] as f64 * 0.75, c[1], c[2]], r)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x | y).collect();
            BinaryMask::new(geometry, data)
        }
        PhantomKind::ThinShell => {
            let r = (dims.iter().min().copied().unwrap_or(0) / 3) as f64;
            let outer = ball(geometry, c, r)?;
            let inner = ball(geometry, c, (r - 1.0).max(0.0))?;
            let data = outer
                .data()
                .iter()
                .zip(inner.data())
                .map(|(o, i)| o & !i & 1)
                .collect();
            BinaryMask::new(geometry, data)
        }
        PhantomKind::TinyLesion => {
            let lesion_center = [
                c[0] + (dims[0] / 8) as f64,
                c[1] - (dims[1] / 8) as f64,
                c[2],
            ];
            let mask = ball(geometry, lesion_center, 2.0)?;
            if mask.foreground_count() * 100 >= geometry.len() {
                return Err(Error::geometry(
                    "dims",
                    format!("{dims:?} is too small for a tiny lesion"),
                ));
            }
            Ok(mask)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    pub loss: LossSpec,
    pub steps: usize,
    pub step_size: f64,
    pub clip_max_norm: f64,
    pub seed: u64,
    /// Metrics are recorded at step 0, every `log_every` steps, and the last step.
    pub log_every: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::new(LossKind::Dice),
            steps: 300,
            step_size: 500.0,
            clip_max_norm: 1.0,
            seed: 1,
            log_every: 1,
        }
    }
}

impl DescentConfig {
    pub fn new(kind: LossKind, seed: u64) -> Self {
        Self {
            loss: LossSpec::new(kind),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(self.clip_max_norm > 0.0 && self.clip_max_norm.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "clip_max_norm must be > 0, got {}",
                self.clip_max_norm
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss and metrics of `binarize(p, 0.5)` before the update at `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub loss: f64,
    pub dice: f64,
    #[serde(with = "json_float")]
    pub msd_mm: f64,
    pub nsd: f64,
    pub false_negatives: usize,
    pub false_positives: usize,
    /// Norm of the logit gradient after clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    pub trajectory: Vec<TrajectoryPoint>,
    pub probabilities: ProbVolume,
    pub prediction: BinaryMask,
}

impl DescentOutcome {
    pub fn first(&self) -> &TrajectoryPoint {
        &self.trajectory[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.trajectory
            .last()
            .expect("at least one step is recorded")
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn confusion(pred: &BinaryMask, target: &BinaryMask) -> (usize, usize) {
    pred.data()
        .iter()
        .zip(target.data())
        .fold((0, 0), |(fn_, fp), (&p, &t)| {
            (
                fn_ + usize::from(t == 1 && p == 0),
                fp + usize::from(t == 0 && p == 1),
            )
        })
}

/// Evaluates the loss `cfg.steps` times with an update between consecutive
/// evaluations, so the last recorded point describes the returned prediction.
pub fn run_descent(target: &BinaryMask, cfg: &DescentConfig) -> Result<DescentOutcome> {
    cfg.validate()?;
    let geometry = *target.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_LOGIT_STD).expect("valid std");
    let mut logits: Vec<f64> = (0..geometry.len())
        .map(|_| normal.sample(&mut rng))
        .collect();
    let mut trajectory = Vec::new();

    let mut step = 0;
    loop {
        let p = ProbVolume::new(geometry, logits.iter().map(|&z| logistic(z)).collect())?;
        let result = evaluate_loss(&cfg.loss, &p, target)?;
        if !result.value.is_finite() || result.gradient.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        let mut grad: Vec<f64> = result
            .gradient
            .iter()
            .zip(p.data())
            .map(|(d, pv)| d * pv * (1.0 - pv))
            .collect();
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let applied = if norm > cfg.clip_max_norm {
            let s = cfg.clip_max_norm / norm;
            grad.iter_mut().for_each(|v| *v *= s);
            cfg.clip_max_norm
        } else {
            norm
        };

        let done = step + 1 == cfg.steps;
        if step % cfg.log_every == 0 || done {
            let pred = p.binarize(0.5);
            let m = evaluate_case("demo", &pred, target, DEFAULT_TAU_MM)?;
            let (false_negatives, false_positives) = confusion(&pred, target);
            trajectory.push(TrajectoryPoint {
                step,
                loss: result.value,
                dice: m.dice,
                msd_mm: m.msd_mm,
                nsd: m.nsd,
                false_negatives,
                false_positives,
                grad_norm: if done { 0.0 } else { applied },
            });
        }
        if done {
            let prediction = p.binarize(0.5);
            return Ok(DescentOutcome {
                trajectory,
                probabilities: p,
                prediction,
            });
        }
        for (z, d) in logits.iter_mut().zip(&grad) {
            *z -= cfg.step_size * d;
        }
        step += 1;
    }
}

/// Trajectory as CSV text with a header row.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "step",
        "loss",
        "dice",
        "msd_mm",
        "nsd",
        "false_negatives",
        "false_positives",
        "grad_norm",
    ])?;
    for t in points {
        let msd = if t.msd_mm.is_infinite() {
            "Inf".to_string()
        } else {
            t.msd_mm.to_string()
        };
        w.write_record([
            t.step.to_string(),
            t.loss.to_string(),
            t.dice.to_string(),
            msd,
            t.nsd.to_string(),
            t.false_negatives.to_string(),
            t.false_positives.to_string(),
            t.grad_norm.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_count(r: i64) -> usize {
        let mut n = 0;
        for x in -r..=r {
            for y in -r..=r {
                for z in -r..=r {
                    n += usize::from(x * x + y * y + z * z <= r * r);
                }
            }
        }
        n
    }

    #[test]
    fn phantom_shapes() {
        let s = [1.0; 3];
        let dot = make_phantom(PhantomKind::Sphere { radius: 0.0 }, [9, 9, 9], s).unwrap();
        assert_eq!(dot.foreground_count(), 1);
        assert!(dot.is_set(dot.geometry().index(4, 4, 4)));

        let ball5 = make_phantom(PhantomKind::Sphere { radius: 5.0 }, DEMO_DIMS, s).unwrap();
        assert_eq!(ball5.foreground_count(), ball_count(5));

        let tiny = make_phantom(PhantomKind::TinyLesion, DEMO_DIMS, s).unwrap();
        assert!((tiny.foreground_count() as f64) < 0.01 * 32768.0);
        assert_eq!(tiny.foreground_count(), ball_count(2));

        let two = make_phantom(PhantomKind::TwoSpheres, DEMO_DIMS, s).unwrap();
        assert_eq!(two.foreground_count(), 2 * ball_count(4));

        let shell = make_phantom(PhantomKind::ThinShell, DEMO_DIMS, s).unwrap();
        assert_eq!(shell.foreground_count(), ball_count(10) - ball_count(9));

        assert!(make_phantom(PhantomKind::Sphere { radius: 20.0 }, DEMO_DIMS, s).is_err());
        assert!(make_phantom(PhantomKind::TinyLesion, [8, 8, 8], s).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = DescentConfig::default();
        assert_eq!((cfg.steps, cfg.clip_max_norm), (300, 1.0));
        cfg.validate().unwrap();
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        let cfg = DescentConfig {
            step_size: -1.0,
            ..DescentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg: DescentConfig =
            serde_json::from_str(r#"{"loss": {"kind": "tversky"}, "steps": 5}"#).unwrap();
        assert_eq!(cfg.loss.kind, LossKind::Tversky);
        assert!(serde_json::from_str::<DescentConfig>(r#"{"stepz": 5}"#).is_err());
    }

    #[test]
    fn empty_target_never_grows_the_prediction() {
        // With an empty target the smoothed Dice loss is 1 - eps / (sum p + eps),
        // whose gradient is of order eps / N^2: the descent barely moves, but it
        // must not move the wrong way.
        let target = BinaryMask::zeros(Geometry::with_dims([12, 12, 12]).unwrap());
        let cfg = DescentConfig {
            steps: 50,
            ..DescentConfig::new(LossKind::Dice, 1)
        };
        let out = run_descent(&target, &cfg).unwrap();
        for w in out.trajectory.windows(2) {
            assert!(w[1].loss <= w[0].loss);
            assert!(w[1].false_positives <= w[0].false_positives);
        }
    }

    #[test]
    fn deterministic_and_clipped() {
        let target =
            make_phantom(PhantomKind::Sphere { radius: 3.0 }, [12, 12, 12], [1.0; 3]).unwrap();
        let cfg = DescentConfig {
            steps: 20,
            ..DescentConfig::new(LossKind::TverskyHausdorffDT, 4)
        };
        let a = run_descent(&target, &cfg).unwrap();
        let b = run_descent(&target, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.trajectory.len(), 20);
        assert!(a
            .trajectory
            .iter()
            .all(|t| t.grad_norm <= cfg.clip_max_norm + 1e-9));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let target =
            make_phantom(PhantomKind::Sphere { radius: 2.0 }, [8, 8, 8], [1.0; 3]).unwrap();
        let cfg = DescentConfig {
            steps: 4,
            log_every: 2,
            ..DescentConfig::default()
        };
        let out = run_descent(&target, &cfg).unwrap();
        let text = trajectory_csv(&out.trajectory).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with("step,loss,dice"));
        assert_eq!(lines.len(), 4);
    }
}
