//! Metric report emission.
//!
//! JSON layout:
//!
//! ```json
//! {
//!   "groups": [
//!     { "label": "...", "cases": [MetricReport, ...], "aggregate": Aggregate }
//!   ],
//!   "conventions": { ... }
//! }
//! ```
//!
//! Non-finite numbers are written as the strings `"Infinity"` / `"NaN"`.
//! CSV has the header `label,dice,msd_mm,nsd` and one aggregate row per group,
//! four decimals, with `Inf` for infinite distances.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown report format `{other}`"
            ))),
        }
    }
}

/// Cases evaluated under one label (e.g. one loss function).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGroup {
    pub label: String,
    pub cases: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_cases: usize,
    #[serde(with = "super::json_float")]
    pub dice: f64,
    /// Mean over all cases; infinite if any case is.
    #[serde(with = "super::json_float")]
    pub msd_mm: f64,
    #[serde(with = "super::json_float")]
    pub nsd: f64,
    /// Mean over the cases with a finite distance.
    #[serde(with = "super::json_float")]
    pub msd_finite_mean: f64,
    pub msd_finite_count: usize,
}

/// Empty-mask scoring rules, spelled out in every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub surface: String,
    pub dice_both_empty: f64,
    pub nsd_both_empty: f64,
    pub nsd_one_empty: f64,
    #[serde(with = "super::json_float")]
    pub msd_one_empty: f64,
    pub msd_both_empty: f64,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            surface: "foreground voxels with a 6-connected background or out-of-grid neighbor; voxel-center distances in mm".into(),
            dice_both_empty: 1.0,
            nsd_both_empty: 1.0,
            nsd_one_empty: 0.0,
            msd_one_empty: f64::INFINITY,
            msd_both_empty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDocument {
    pub label: String,
    pub cases: Vec<MetricReport>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub groups: Vec<GroupDocument>,
    pub conventions: Conventions,
}

pub fn aggregate(cases: &[MetricReport]) -> Aggregate {
    let n = cases.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| cases.iter().map(f).sum::<f64>() / n;
    let finite: Vec<f64> = cases
        .iter()
        .map(|c| c.msd_mm)
        .filter(|d| d.is_finite())
        .collect();
    Aggregate {
        n_cases: cases.len(),
        dice: mean(|c| c.dice),
        msd_mm: mean(|c| c.msd_mm),
        nsd: mean(|c| c.nsd),
        msd_finite_mean: finite.iter().sum::<f64>() / finite.len() as f64,
        msd_finite_count: finite.len(),
    }
}

pub fn render_json(groups: &[ReportGroup]) -> Result<String> {
    let doc = ReportDocument {
        groups: groups
            .iter()
            .map(|g| GroupDocument {
                label: g.label.clone(),
                cases: g.cases.clone(),
                aggregate: aggregate(&g.cases),
            })
            .collect(),
        conventions: Conventions::default(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn fixed4(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == f64::INFINITY {
        "Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn render_csv(groups: &[ReportGroup]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "dice", "msd_mm", "nsd"])?;
    for g in groups {
        let a = aggregate(&g.cases);
        w.write_record([
            g.label.clone(),
            fixed4(a.dice),
            fixed4(a.msd_mm),
            fixed4(a.nsd),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn emit_report(
    groups: &[ReportGroup],
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = match format {
        ReportFormat::Json => render_json(groups)?,
        ReportFormat::Csv => render_csv(groups)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, dice: f64, msd: f64, nsd: f64) -> MetricReport {
        MetricReport {
            case_id: id.into(),
            dice,
            msd_mm: msd,
            nsd,
            tau_mm: 1.0,
        }
    }

    #[test]
    fn single_case_aggregate_is_the_case() {
        let a = aggregate(&[case("a", 1.0, 0.0, 1.0)]);
        assert_eq!((a.dice, a.msd_mm, a.nsd, a.n_cases), (1.0, 0.0, 1.0, 1));
    }

    #[test]
    fn table_row_literal() {
        let groups = [ReportGroup {
            label: "Tversky-HausdorffDT Loss".into(),
            cases: vec![case("val", 0.5, 1.625, 0.5325)],
        }];
        let csv = render_csv(&groups).unwrap();
        assert_eq!(
            csv,
            "label,dice,msd_mm,nsd\nTversky-HausdorffDT Loss,0.5000,1.6250,0.5325\n"
        );
    }

    #[test]
    fn infinite_distance_handling() {
        let cases = vec![case("a", 0.5, 1.0, 0.5), case("b", 0.0, f64::INFINITY, 0.0)];
        let a = aggregate(&cases);
        assert_eq!(a.msd_mm, f64::INFINITY);
        assert_eq!(a.msd_finite_mean, 1.0);
        assert_eq!(a.msd_finite_count, 1);
        let groups = [ReportGroup {
            label: "HausdorffDT Loss".into(),
            cases,
        }];
        assert!(render_csv(&groups)
            .unwrap()
            .contains("HausdorffDT Loss,0.2500,Inf,0.2500"));

        let json = render_json(&groups).unwrap();
        assert!(json.contains("\"msd_mm\": \"Infinity\""));
        let back: ReportDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.groups[0].cases, groups[0].cases);
        assert_eq!(back.groups[0].aggregate, a);
        assert_eq!(back.conventions, Conventions::default());
    }
}
