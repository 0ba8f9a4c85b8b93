//! Confusion matrix and intersection-over-union scores.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("class {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("cannot merge matrices of {0} and {1} classes")]
    ClassCountMismatch(usize, usize),
    #[error("{0} labels but {1} predictions")]
    LengthMismatch(usize, usize),
}

/// Rows are ground truth, columns are predictions. Points whose ground truth
/// is the ignore class are never counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    ignore: Option<usize>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, ignore: Option<usize>) -> Self {
        Self {
            classes,
            ignore,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>], ignore: Option<usize>) -> Self {
        let classes = rows.len();
        assert!(rows.iter().all(|r| r.len() == classes), "square matrix");
        Self {
            classes,
            ignore,
            counts: rows.concat(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignore(&self) -> Option<usize> {
        self.ignore
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(MetricsError::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        if Some(truth) != self.ignore {
            self.counts[truth * self.classes + pred] += 1;
        }
        Ok(())
    }

    pub fn accumulate(&mut self, truth: &[usize], pred: &[usize]) -> Result<(), MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::LengthMismatch(truth.len(), pred.len()));
        }
        truth
            .iter()
            .zip(pred)
            .try_for_each(|(&t, &p)| self.add(t, p))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::ClassCountMismatch(
                self.classes,
                other.classes,
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for the ignore class and for classes with an empty union.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `IoU_c = TP / (TP + FP + FN)`; the mean skips zero-union classes and the
/// ignore class.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let n = cm.classes;
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|c| {
            if Some(c) == cm.ignore {
                return None;
            }
            let tp = cm.get(c, c);
            let row: u64 = (0..n).map(|p| cm.get(c, p)).sum();
            let col: u64 = (0..n)
                .filter(|&t| Some(t) != cm.ignore)
                .map(|t| cm.get(t, c))
                .sum();
            let union = row + col - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let mean = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(IouReport { per_class, mean })
}

fn class_name(names: &[String], c: usize) -> String {
    names.get(c).cloned().unwrap_or_else(|| format!("class{c}"))
}

/// Aligned text table, one row per class in id order, then the mean.
pub fn iou_table_text(report: &IouReport, names: &[String]) -> String {
    let labels: Vec<String> = (0..report.per_class.len())
        .map(|c| class_name(names, c))
        .collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:>3}  {:<width$}  {:>8}", "id", "class", "IoU");
    for (c, (label, iou)) in labels.iter().zip(&report.per_class).enumerate() {
        let cell = iou.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let _ = writeln!(out, "{c:>3}  {label:<width$}  {cell:>8}");
    }
    let _ = writeln!(out, "{:>3}  {:<width$}  {:>8.4}", "", "mIoU", report.mean);
    out
}

/// `class_id,class_name,iou` rows (empty IoU for unscored classes) and a
/// final `mean` row.
pub fn iou_table_csv(report: &IouReport, names: &[String]) -> String {
    let mut out = String::from("class_id,class_name,iou\n");
    for (c, iou) in report.per_class.iter().enumerate() {
        let cell = iou.map(|v| format!("{v}")).unwrap_or_default();
        let _ = writeln!(out, "{c},{},{cell}", class_name(names, c));
    }
    let _ = writeln!(out, ",mean,{}", report.mean);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]], None);
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0); 3]);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn hand_case() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![0, 1]], None);
        let r = miou(&cm).unwrap();
        assert!((r.per_class[0].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].unwrap() - 0.5).abs() < 1e-12);
        assert!((r.mean - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_excluded() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![0, 0, 0], vec![0, 0, 4]], None);
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class[1], None);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn ignore_rows_not_counted() {
        let mut cm = ConfusionMatrix::new(3, Some(0));
        cm.accumulate(&[0, 1, 2, 1], &[1, 1, 2, 0]).unwrap();
        assert_eq!(cm.total(), 3);
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class[0], None);
        assert_eq!(r.per_class[1], Some(0.5));
        assert_eq!(r.mean, 0.75);
    }

    #[test]
    fn empty_and_bad_labels() {
        let cm = ConfusionMatrix::new(2, None);
        assert_eq!(miou(&cm), Err(MetricsError::EmptyMatrix));
        let mut cm = ConfusionMatrix::new(2, None);
        assert!(cm.add(2, 0).is_err());
        assert!(cm.accumulate(&[0], &[]).is_err());
    }

    #[test]
    fn tables_list_classes_in_order() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![0, 1]], None);
        let r = miou(&cm).unwrap();
        let names = vec!["road".to_string(), "car".to_string()];
        let text = iou_table_text(&r, &names);
        assert!(text.find("road").unwrap() < text.find("car").unwrap());
        let csv = iou_table_csv(&r, &names);
        assert!(csv.starts_with("class_id,class_name,iou\n0,road,0.666"));
        assert!(csv.contains("1,car,0.5\n"));
    }
}
