use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::recall::RecallAt;
use super::IouType;
use crate::taxonomy::CategoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Base,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEval {
    pub id: CategoryId,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    /// Non-ignored ground-truth instances.
    pub n_gt: usize,
    /// AP at each IoU threshold; empty when `n_gt == 0`.
    pub ap_per_iou: Vec<f64>,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
}

/// Means over the categories of one split that have ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub categories: usize,
    pub map: Option<f64>,
    pub map50: Option<f64>,
    pub map75: Option<f64>,
}

impl Aggregate {
    pub(crate) fn over<'a>(cats: impl Iterator<Item = &'a CategoryEval>) -> Self {
        let scored: Vec<&CategoryEval> = cats.filter(|c| c.ap.is_some()).collect();
        let mean = |f: fn(&CategoryEval) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = scored.iter().filter_map(|c| f(c)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Aggregate {
            categories: scored.len(),
            map: mean(|c| c.ap),
            map50: mean(|c| c.ap50),
            map75: mean(|c| c.ap75),
        }
    }
}

/// Full evaluation result. Values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: IouType,
    pub iou_thresholds: Vec<f64>,
    pub categories: Vec<CategoryEval>,
    pub all: Aggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub novel: Option<Aggregate>,
    pub recall: Vec<RecallAt>,
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.1}", x * 100.0),
        None => "-".into(),
    }
}

type Metric = fn(&Aggregate) -> Option<f64>;

impl EvalReport {
    /// Fixed-width text table with All / Base / Novel columns, values x100.
    pub fn to_table(&self) -> String {
        let cols = [Some(self.all), self.base, self.novel];
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>8}{:>8}{:>8}", format!("[{}]", self.mode), "All", "Base", "Novel");
        let rows: [(&str, Metric); 3] =
            [("mAP", |a| a.map), ("AP50", |a| a.map50), ("AP75", |a| a.map75)];
        for (name, f) in rows {
            let _ = write!(out, "{name:<10}");
            for c in &cols {
                let _ = write!(out, "{:>8}", cell(c.as_ref().and_then(f)));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<10}", "#cats");
        for c in &cols {
            let _ = write!(out, "{:>8}", c.map_or("-".to_string(), |a| a.categories.to_string()));
        }
        out.push('\n');
        for r in &self.recall {
            let _ = writeln!(out, "{:<10}{:>8}{:>8}{:>8}", format!("AR@{}", r.k), cell(Some(r.recall)), "-", "-");
        }
        out
    }
}
