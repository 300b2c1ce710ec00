use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of true (row) against predicted (column) classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_predictions(labels: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion matrix",
                left: vec![truth.len()],
                right: vec![predicted.len()],
            });
        }
        let mut cm = ConfusionMatrix::new(labels);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.classes();
        if let Some(&bad) = [truth, predicted].iter().find(|&&c| c >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Samples per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Recall of every class; `None` for classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.row_sums()
            .iter()
            .enumerate()
            .map(|(i, &n)| (n > 0).then(|| self.counts[i][i] as f64 / n as f64))
            .collect()
    }

    /// Header `true\predicted,<labels…>`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(label);
            for c in row {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            path: "<confusion csv>".into(),
            message: m,
        };
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("true\\predicted") {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let labels: Vec<String> = cols.map(str::to_string).collect();
        let mut counts = Vec::with_capacity(labels.len());
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let name = cells.next().unwrap_or_default();
            if labels.get(i).map(String::as_str) != Some(name) {
                return Err(bad(format!("row {} is `{name}`", i + 1)));
            }
            let row = cells
                .map(|c| c.parse::<u64>().map_err(|e| bad(format!("row {}: {e}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != labels.len() {
                return Err(bad(format!("row {} has {} cells", i + 1, row.len())));
            }
            counts.push(row);
        }
        if counts.len() != labels.len() {
            return Err(bad(format!("{} rows for {} classes", counts.len(), labels.len())));
        }
        Ok(ConfusionMatrix { labels, counts })
    }
}

pub fn emit_confusion_csv(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cm.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_confusion_csv(path: impl AsRef<Path>) -> Result<ConfusionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConfusionMatrix::from_csv(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn two_by_two_csv() {
        let cm = ConfusionMatrix::from_predictions(labels(2), &[0, 1], &[0, 1]).unwrap();
        assert_eq!(cm.to_csv(), "true\\predicted,w0,w1\nw0,1,0\nw1,0,1\n");
    }

    #[test]
    fn perfect_predictor() {
        let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let cm = ConfusionMatrix::from_predictions(labels(3), &truth, &truth).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.counts[i][j], if i == j { 10 } else { 0 });
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let cm = ConfusionMatrix::from_predictions(labels(3), &[0, 1, 2, 2], &[1, 1, 2, 0]).unwrap();
        assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
    }

    #[test]
    fn out_of_range_prediction() {
        assert!(ConfusionMatrix::from_predictions(labels(2), &[0], &[2]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn rows_count_true_classes(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let cm = ConfusionMatrix::from_predictions(labels(4), &truth, &pred).unwrap();
            for (c, &n) in cm.row_sums().iter().enumerate() {
                proptest::prop_assert_eq!(n as usize, truth.iter().filter(|&&t| t == c).count());
            }
            let hits = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
            proptest::prop_assert!((cm.accuracy() - hits as f64 / truth.len() as f64).abs() <= 1e-12);
            proptest::prop_assert_eq!(cm.total() as usize, truth.len());
        }
    }
}
