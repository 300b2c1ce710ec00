use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Manifest, Stage};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::models::{argmax, load_features, FeatureDataset, LstmModel, WordReader};
use crate::tensor::{read_tensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub word: String,
    /// `None` when the split has no sample of this word.
    pub accuracy: Option<f64>,
}

/// Accuracy and confusion matrix of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub samples: usize,
    pub accuracy: f64,
    /// Accuracy in percent with two decimals, as printed in results tables.
    pub accuracy_percent: String,
    pub per_class: Vec<ClassAccuracy>,
    pub confusion: ConfusionMatrix,
}

impl SplitResult {
    pub fn from_predictions(vocabulary: &[String], truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let confusion = ConfusionMatrix::from_predictions(vocabulary.to_vec(), truth, predicted)?;
        let accuracy = confusion.accuracy();
        Ok(SplitResult {
            samples: truth.len(),
            accuracy,
            accuracy_percent: format!("{:.2}", 100.0 * accuracy),
            per_class: vocabulary
                .iter()
                .zip(confusion.per_class_accuracy())
                .map(|(w, a)| ClassAccuracy {
                    word: w.clone(),
                    accuracy: a,
                })
                .collect(),
            confusion,
        })
    }
}

/// Reproducibility stamp of the run that produced a report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train: SplitResult,
    pub val: SplitResult,
    pub test: SplitResult,
    pub metadata: RunMetadata,
}

impl EvalReport {
    /// `train / val / test` accuracies in percent.
    pub fn summary(&self) -> String {
        format!(
            "train {}% / val {}% / test {}%",
            self.train.accuracy_percent, self.val.accuracy_percent, self.test.accuracy_percent
        )
    }
}

/// Argmax word of every feature sequence.
pub fn predict_features(model: &LstmModel, data: &FeatureDataset) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let probs = model.predict(&data.features)?;
    Ok(probs.data().chunks_exact(model.classifier.classes).map(argmax).collect())
}

/// Argmax word of every record of a frames or features manifest.
pub fn predict_manifest(reader: &WordReader, manifest: &Manifest) -> Result<Vec<usize>> {
    if manifest.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    match manifest.header.stage {
        Stage::Features => predict_features(&reader.classifier, &load_features(manifest)?),
        Stage::Frames => manifest
            .records
            .par_iter()
            .map(|r| {
                let video: Tensor<f32> = read_tensor(manifest.resolve(r))?;
                Ok(reader.predict(&video)?.0)
            })
            .collect(),
        Stage::Raw => Err(Error::Config("raw manifests must be preprocessed before evaluation".into())),
    }
}

/// Report over precomputed `[train, val, test]` feature sets.
pub fn evaluate_features(
    model: &LstmModel,
    splits: [&FeatureDataset; 3],
    vocabulary: &[String],
    metadata: RunMetadata,
) -> Result<EvalReport> {
    let [train, val, test] = splits.map(|d| {
        predict_features(model, d).and_then(|p| SplitResult::from_predictions(vocabulary, &d.labels, &p))
    });
    Ok(EvalReport {
        train: train?,
        val: val?,
        test: test?,
        metadata,
    })
}

/// Full-pipeline report over `[train, val, test]` manifests.
pub fn evaluate(reader: &WordReader, splits: [&Manifest; 3], metadata: RunMetadata) -> Result<EvalReport> {
    let vocabulary = splits[2].vocabulary().to_vec();
    if let Some(m) = splits.iter().find(|m| m.vocabulary() != vocabulary) {
        return Err(Error::Config(format!(
            "split vocabularies differ: {:?} vs {:?}",
            m.vocabulary(),
            vocabulary
        )));
    }
    if reader.classifier.classifier.classes != vocabulary.len() {
        return Err(Error::ProfileMismatch {
            expected: format!("{} classes", vocabulary.len()),
            found: format!("{} classes in the classifier", reader.classifier.classifier.classes),
        });
    }
    let [train, val, test] = splits.map(|m| {
        let truth: Vec<usize> = m.records.iter().map(|r| r.label).collect();
        predict_manifest(reader, m).and_then(|p| SplitResult::from_predictions(&vocabulary, &truth, &p))
    });
    Ok(EvalReport {
        train: train?,
        val: val?,
        test: test?,
        metadata,
    })
}

/// Unweighted mean test accuracy over held-out-speaker folds.
pub fn msi_average(reports: &[EvalReport]) -> Option<f64> {
    if reports.is_empty() {
        return None;
    }
    Some(reports.iter().map(|r| r.test.accuracy).sum::<f64>() / reports.len() as f64)
}

/// Pretty JSON with the struct's field order.
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
