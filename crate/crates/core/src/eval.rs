//! Binary building-vs-rest metrics and the false-positive category breakdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::backproject::PredictionSet;
use crate::cloud::{normalize_name, CategoryId, LabeledCloud};

/// Metric columns in report order.
pub const METRIC_COLUMNS: [&str; 5] = ["Accuracy", "IoU", "Precision", "Recall", "F-1"];

/// Non-building categories in report order; other categories of a cloud are
/// appended after these.
pub const FP_CATEGORIES: [&str; 7] = [
    "Car",
    "Natural Ground",
    "Ground",
    "Road",
    "Street Furniture",
    "Tree",
    "Pavement",
];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("building label {0} is not a category of the cloud")]
    UnknownLabel(CategoryId),
    #[error("prediction covers {found} points but the cloud has {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("cannot aggregate an empty list of reports")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

/// Metrics are `None` where their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    /// Values in [`METRIC_COLUMNS`] order.
    pub fn columns(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.iou, self.precision, self.recall, self.f1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub area: String,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

/// Share of false positives per non-building category name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FpBreakdown {
    pub ratios: BTreeMap<String, f64>,
}

impl FpBreakdown {
    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    /// Ratio for a category, matched ignoring case and separators.
    pub fn ratio(&self, category: &str) -> f64 {
        let key = normalize_name(category);
        self.ratios
            .iter()
            .filter(|(name, _)| normalize_name(name) == key)
            .fold(0.0, |acc, (_, r)| acc + r)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check(
    pred: &PredictionSet,
    cloud: &LabeledCloud,
    building_label: CategoryId,
) -> Result<(), EvalError> {
    if cloud.category_name(building_label).is_none() {
        return Err(EvalError::UnknownLabel(building_label));
    }
    if pred.n_points() != cloud.len() {
        return Err(EvalError::SizeMismatch {
            expected: cloud.len(),
            found: pred.n_points(),
        });
    }
    Ok(())
}

pub fn confusion_counts(
    pred: &PredictionSet,
    cloud: &LabeledCloud,
    building_label: CategoryId,
) -> Result<Confusion, EvalError> {
    confusion_counts_within(pred, cloud, building_label, 0..cloud.len())
}

/// Confusion restricted to the given subset of point indices (each counted once
/// per occurrence; callers pass distinct indices).
pub fn confusion_counts_within(
    pred: &PredictionSet,
    cloud: &LabeledCloud,
    building_label: CategoryId,
    subset: impl IntoIterator<Item = usize>,
) -> Result<Confusion, EvalError> {
    check(pred, cloud, building_label)?;
    let predicted = pred.membership();
    let labels = cloud.labels();
    let mut c = Confusion::default();
    for i in subset {
        match (predicted[i], labels[i] == building_label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn compute_metrics(c: &Confusion, area: &str) -> MetricsReport {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricsReport {
        area: area.to_string(),
        confusion: *c,
        metrics: Metrics {
            accuracy: ratio(c.tp + c.tn, c.total()),
            iou: ratio(c.tp, c.tp + c.fp + c.fn_),
            precision,
            recall,
            f1,
        },
    }
}

pub fn fp_breakdown(
    pred: &PredictionSet,
    cloud: &LabeledCloud,
    building_label: CategoryId,
) -> Result<FpBreakdown, EvalError> {
    check(pred, cloud, building_label)?;
    breakdown_of(pred.indices().iter().copied(), cloud, building_label)
}

/// [`fp_breakdown`] over the predicted points of a subset of the cloud.
pub fn fp_breakdown_within(
    pred: &PredictionSet,
    cloud: &LabeledCloud,
    building_label: CategoryId,
    subset: impl IntoIterator<Item = usize>,
) -> Result<FpBreakdown, EvalError> {
    check(pred, cloud, building_label)?;
    let predicted = pred.membership();
    breakdown_of(
        subset.into_iter().filter(|&i| predicted[i]),
        cloud,
        building_label,
    )
}

fn breakdown_of(
    predicted: impl Iterator<Item = usize>,
    cloud: &LabeledCloud,
    building_label: CategoryId,
) -> Result<FpBreakdown, EvalError> {
    let labels = cloud.labels();
    let mut counts: BTreeMap<CategoryId, u64> = BTreeMap::new();
    for i in predicted {
        if labels[i] != building_label {
            *counts.entry(labels[i]).or_default() += 1;
        }
    }
    let fp: u64 = counts.values().sum();
    let ratios = counts
        .into_iter()
        .map(|(id, n)| {
            let name = cloud
                .category_name(id)
                .map_or_else(|| format!("label_{id}"), str::to_string);
            (name, n as f64 / fp as f64)
        })
        .collect();
    Ok(FpBreakdown { ratios })
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub area: String,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub fp_breakdown: FpBreakdown,
}

impl AreaReport {
    pub fn new(metrics: MetricsReport, fp_breakdown: FpBreakdown) -> Self {
        Self {
            area: metrics.area,
            confusion: metrics.confusion,
            metrics: metrics.metrics,
            fp_breakdown,
        }
    }

    pub fn metrics_report(&self) -> MetricsReport {
        MetricsReport {
            area: self.area.clone(),
            confusion: self.confusion,
            metrics: self.metrics.clone(),
        }
    }
}

/// Pools raw counts over areas (micro-average) under the name `Total`.
pub fn aggregate(reports: &[(Confusion, String)]) -> Result<MetricsReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum = reports
        .iter()
        .fold(Confusion::default(), |acc, (c, _)| acc + *c);
    Ok(compute_metrics(&sum, "Total"))
}

pub fn format_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Plain-text table with one row per report, metric columns in report order.
pub fn render_metrics_table(rows: &[MetricsReport]) -> String {
    let name_w = rows
        .iter()
        .map(|r| r.area.len())
        .chain(["Area".len()])
        .max()
        .unwrap_or(4);
    let mut out = format!("{:<name_w$}", "Area");
    for col in METRIC_COLUMNS {
        let _ = write!(out, " | {col:>9}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + METRIC_COLUMNS.len() * 12));
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<name_w$}", r.area);
        for v in r.metrics.columns() {
            let _ = write!(out, " | {:>9}", format_metric(v));
        }
        out.push('\n');
    }
    out
}

/// Column order for a false-positive table: the standard categories first,
/// then any other non-building categories of the evaluated clouds.
pub fn fp_columns<'a>(extra: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut cols: Vec<String> = FP_CATEGORIES.iter().map(|s| s.to_string()).collect();
    for name in extra {
        let key = normalize_name(name);
        if !cols.iter().any(|c| normalize_name(c) == key) {
            cols.push(name.to_string());
        }
    }
    cols
}

pub fn render_fp_table(columns: &[String], rows: &[(String, FpBreakdown)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(["Area".len()])
        .max()
        .unwrap_or(4);
    let widths: Vec<usize> = columns.iter().map(|c| c.len().max(6)).collect();
    let mut out = format!("{:<name_w$}", "Area");
    for (c, w) in columns.iter().zip(&widths) {
        let _ = write!(out, " | {c:>w$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + widths.iter().map(|w| w + 3).sum::<usize>()));
    out.push('\n');
    for (name, fp) in rows {
        let _ = write!(out, "{name:<name_w$}");
        for (c, w) in columns.iter().zip(&widths) {
            let _ = write!(out, " | {:>w$.3}", fp.ratio(c));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUILDING: CategoryId = 0;

    fn cloud(labels: Vec<CategoryId>) -> LabeledCloud {
        let names = BTreeMap::from([
            (0, "Building".to_string()),
            (1, "Road".to_string()),
            (2, "Tree".to_string()),
            (3, "Ground".to_string()),
            (4, "Pavement".to_string()),
        ]);
        let n = labels.len();
        LabeledCloud::new(vec![[0.0; 3]; n], None, labels, names).unwrap()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let c = cloud(vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
        let gt = PredictionSet::new(10, [0, 1, 2]).unwrap();
        assert_eq!(confusion_counts(&gt, &c, BUILDING).unwrap(), Confusion::new(3, 0, 0, 7));
        let none = PredictionSet::empty(10);
        assert_eq!(
            confusion_counts(&none, &c, BUILDING).unwrap(),
            Confusion::new(0, 0, 3, 7)
        );
    }

    #[test]
    fn mixed_prediction_counts() {
        // GT = {0,1,2,3}, pred = {0,1,2,9}: tp {0,1,2}, fp {9}, fn {3}.
        let c = cloud(vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        let p = PredictionSet::new(10, [0, 1, 2, 9]).unwrap();
        assert_eq!(confusion_counts(&p, &c, BUILDING).unwrap(), Confusion::new(3, 1, 1, 5));
    }

    #[test]
    fn confusion_errors() {
        let c = cloud(vec![0, 1]);
        assert!(matches!(
            confusion_counts(&PredictionSet::empty(2), &c, 9),
            Err(EvalError::UnknownLabel(9))
        ));
        assert!(matches!(
            confusion_counts(&PredictionSet::empty(3), &c, BUILDING),
            Err(EvalError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn metric_formulas() {
        let m = compute_metrics(&Confusion::new(3, 1, 1, 5), "a").metrics;
        assert_eq!(m.accuracy, Some(0.8));
        assert_eq!(m.iou, Some(0.6));
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.recall, Some(0.75));
        assert_eq!(m.f1, Some(0.75));

        let perfect = compute_metrics(&Confusion::new(4, 0, 0, 6), "a").metrics;
        assert!(perfect.columns().iter().all(|v| *v == Some(1.0)));

        let none = compute_metrics(&Confusion::new(0, 0, 0, 10), "a").metrics;
        assert_eq!(none.accuracy, Some(1.0));
        assert_eq!((none.iou, none.precision, none.recall, none.f1), (None, None, None, None));
    }

    #[test]
    fn breakdown_ratios() {
        let c = cloud(vec![0, 1, 1, 2, 2, 3, 3, 3, 4]);
        let p = PredictionSet::new(9, [0, 1, 2, 3, 4]).unwrap();
        let fp = fp_breakdown(&p, &c, BUILDING).unwrap();
        assert_eq!(fp.ratios.len(), 2);
        assert_eq!(fp.ratio("road"), 0.5);
        assert_eq!(fp.ratio("Tree"), 0.5);

        let p = PredictionSet::new(9, [5, 6, 7, 8]).unwrap();
        let fp = fp_breakdown(&p, &c, BUILDING).unwrap();
        assert_eq!(fp.ratio("Ground"), 0.75);
        assert_eq!(fp.ratio("Pavement"), 0.25);

        let p = PredictionSet::new(9, [0]).unwrap();
        let fp = fp_breakdown(&p, &c, BUILDING).unwrap();
        assert!(fp.is_empty());
        assert!(fp.ratio("Car").is_sign_positive());
        let table = render_fp_table(&fp_columns([]), &[("a".into(), fp)]);
        assert!(!table.contains("-0"), "{table}");
    }

    #[test]
    fn aggregation_pools_counts() {
        let a = Confusion::new(1, 1, 0, 0);
        let b = Confusion::new(9, 0, 0, 1);
        let total = aggregate(&[(a, "a".into()), (b, "b".into())]).unwrap();
        assert_eq!(total.confusion, Confusion::new(10, 1, 0, 1));
        assert_eq!(total.metrics.precision, Some(10.0 / 11.0));
        assert_eq!(total.area, "Total");

        let single = aggregate(&[(a, "a".into())]).unwrap();
        assert_eq!(single.metrics, compute_metrics(&a, "a").metrics);
        let twice = aggregate(&[(b, "b".into()), (b, "b".into())]).unwrap();
        assert_eq!(twice.metrics, compute_metrics(&b, "b").metrics);
        assert!(matches!(aggregate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn tables_use_standard_column_order() {
        let r = compute_metrics(&Confusion::new(0, 0, 0, 3), "Area 1");
        let t = render_metrics_table(&[r]);
        let header = t.lines().next().unwrap();
        let positions: Vec<usize> = METRIC_COLUMNS.iter().map(|c| header.find(c).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(t.contains("n/a"));

        let cols = fp_columns(["Pole Like", "road"]);
        assert_eq!(cols.len(), 8);
        assert_eq!(cols[7], "Pole Like");
        let fp = FpBreakdown {
            ratios: BTreeMap::from([("Road".to_string(), 1.0)]),
        };
        let t = render_fp_table(&cols, &[("Total".into(), fp)]);
        for c in FP_CATEGORIES {
            assert!(t.lines().next().unwrap().contains(c));
        }
        assert!(t.contains("1.000"));
    }

    #[test]
    fn confusion_json_uses_fn_key() {
        let json = serde_json::to_string(&Confusion::new(1, 2, 3, 4)).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }
}
